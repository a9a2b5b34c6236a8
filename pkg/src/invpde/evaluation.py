"""Relative field error, equation residuals, coefficient reports and boost checks."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import FieldDataset
from .engine import DiscoveredPde, grid_jets
from .surrogate import Surrogate
from .terms import Library, LibraryMode, Target, Term, VarKind, evaluate_term, pinned_terms_for, term_to_string

log = logging.getLogger(__name__)


# --- relative error -------------------------------------------------------

def relative_error(predicted: FieldDataset, truth: FieldDataset, names: Sequence[str] | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Per-snapshot ``sum ||pred - u||^2 / sum ||u - mean(u)||^2`` over variables.

    Returns ``(eps, flagged)``; snapshots with a constant truth slice have a
    zero denominator, get ``eps = nan`` and ``flagged = True``.
    """
    names = list(names) if names is not None else truth.var_names
    if predicted.grid.shape != truth.grid.shape or len(predicted.times) != len(truth.times):
        raise ValueError("predicted and truth datasets are not aligned")
    if not np.allclose(predicted.times, truth.times, rtol=0, atol=1e-9 * max(1.0, abs(truth.times[-1]))):
        raise ValueError("predicted and truth snapshot times differ")
    nt = len(truth.times)
    num = np.zeros(nt)
    den = np.zeros(nt)
    for n in names:
        u = truth.fields[n].reshape(nt, -1)
        p = predicted.fields[n].reshape(nt, -1)
        num += np.sum((p - u) ** 2, axis=1)
        den += np.sum((u - u.mean(axis=1, keepdims=True)) ** 2, axis=1)
    flagged = den == 0.0
    eps = np.full(nt, np.nan)
    eps[~flagged] = num[~flagged] / den[~flagged]
    return eps, flagged


def surrogate_dataset(model: Surrogate, like: FieldDataset, chunk: int = 16384) -> FieldDataset:
    """Evaluate a surrogate on the grid and times of ``like``."""
    mesh = [m.ravel() for m in like.grid.mesh()]
    npts = mesh[0].size
    out = {n: np.empty((len(like.times), npts)) for n in model.out_names}
    for i, t in enumerate(like.times):
        coords = np.column_stack([np.full(npts, t)] + mesh)
        for a in range(0, npts, chunk):
            jets = model.jets_with_cache(coords[a : a + chunk], [], None)[0]
            for n in model.out_names:
                out[n][i, a : a + chunk] = jets[n]
    shape = (len(like.times),) + like.grid.shape
    return FieldDataset(like.grid, like.times.copy(), {n: v.reshape(shape) for n, v in out.items()},
                        {"source": "surrogate"})


# --- residuals ------------------------------------------------------------

def _pde_keys(pde: DiscoveredPde) -> set[str]:
    keys = {f"{eq}_{pde.target.suffix}" for eq in pde.equations}
    for terms in pde.equations.values():
        for t, _ in terms:
            keys |= {f.key for f in t.factors}
    return keys


def residual_from_jets(jets: Mapping[str, np.ndarray], pde: DiscoveredPde) -> dict[str, float]:
    out = {}
    for eq, terms in pde.equations.items():
        r = np.array(jets[f"{eq}_{pde.target.suffix}"], dtype=float)
        for t, c in terms:
            if c != 0.0:
                r = r - c * evaluate_term(t, jets)
        out[eq] = float(np.sqrt(np.mean(r * r)))
    return out


def equation_residual(source: FieldDataset | Surrogate, pde: DiscoveredPde, points=None,
                      deriv_window: int = 3) -> dict[str, float]:
    """RMS of ``target - sum(coef * term)`` per equation.

    ``source`` is a gridded dataset (spectral space derivatives, local
    polynomial time derivatives; ``points`` are snapshot indices) or a trained
    surrogate (``points`` is an ``(N, 1 + dim)`` coordinate array).
    """
    keys = _pde_keys(pde)
    if isinstance(source, FieldDataset):
        jets, _ = grid_jets(source, keys | set(source.var_names), "spectral", window=deriv_window,
                            time_index=points)
    else:
        if points is None:
            raise ValueError("a surrogate source needs explicit coordinates")
        jets = source.jets_with_cache(np.asarray(points, dtype=float), sorted(keys))[0]
    return residual_from_jets(jets, pde)


# --- coefficient reports ----------------------------------------------------

@dataclass
class CoefficientRow:
    equation: str
    term: str
    learned: float
    truth: float
    rel_error: float


@dataclass
class EvalReport:
    rows: list[CoefficientRow]
    precision: dict[str, float]
    recall: dict[str, float]
    eps_t: list[float] = field(default_factory=list)
    residual_train: dict[str, float] = field(default_factory=dict)
    residual_test: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        errs = [r.rel_error for r in self.rows if np.isfinite(r.rel_error) and r.truth != 0.0]
        return max(errs) if errs else 0.0

    def exact_support(self) -> bool:
        return all(p == 1.0 for p in self.precision.values()) and all(r == 1.0 for r in self.recall.values())

    def to_dict(self) -> dict:
        return {
            "coefficients": [r.__dict__ for r in self.rows],
            "precision": self.precision, "recall": self.recall,
            "max_rel_error": self.max_rel_error,
            "eps_t": self.eps_t, "residual_train": self.residual_train, "residual_test": self.residual_test,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=lambda o: None if o is None else float(o))

    def to_markdown(self) -> str:
        lines = ["| equation | term | learned | truth | rel. error |", "|---|---|---|---|---|"]
        for r in self.rows:
            err = "n/a" if not np.isfinite(r.rel_error) else f"{r.rel_error:.2%}"
            lines.append(f"| {r.equation} | {r.term} | {r.learned:.4g} | {r.truth:.4g} | {err} |")
        lines.append("")
        for eq in self.precision:
            lines.append(f"- {eq}: precision {self.precision[eq]:.3f}, recall {self.recall[eq]:.3f}")
        return "\n".join(lines)


def coefficient_report(pde: DiscoveredPde, truth: DiscoveredPde) -> EvalReport:
    """Term-by-term comparison; spurious terms get ``truth = 0`` and ``rel_error = inf``."""
    rows, prec, rec = [], {}, {}
    for eq in truth.equations:
        found = {k: v for k, v in (pde.coefficients(eq) if eq in pde.equations else {}).items() if v != 0.0}
        true = {k: v for k, v in truth.coefficients(eq).items() if v != 0.0}
        for term in list(true) + [k for k in found if k not in true]:
            lv, tv = found.get(term, 0.0), true.get(term, 0.0)
            err = abs(lv - tv) / abs(tv) if tv != 0.0 else np.inf
            rows.append(CoefficientRow(eq, term, lv, tv, err))
        hit = len(set(found) & set(true))
        prec[eq] = hit / len(found) if found else 0.0
        rec[eq] = hit / len(true) if true else 1.0
    return EvalReport(rows, prec, rec)


# --- boost invariance -------------------------------------------------------

@dataclass(frozen=True)
class BoostSpec:
    """Constant-velocity frame change: ``galilean`` or ``lorentz`` (speed of light ``c0``)."""

    c: tuple[float, ...]
    kind: str = "galilean"
    c0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("galilean", "lorentz"):
            raise ValueError(f"unknown boost kind {self.kind!r}")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("boost velocity must be finite")
        if self.kind == "lorentz" and self.speed >= self.c0:
            raise ValueError(f"Lorentz boost needs |c| < c0, got {self.speed}")

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.c))

    @property
    def gamma(self) -> float:
        if self.kind == "galilean":
            return 1.0
        return 1.0 / np.sqrt(1.0 - (self.speed / self.c0) ** 2)

    def matrix(self) -> np.ndarray:
        """Map ``(t, x, ...)`` to the boosted ``(t', x', ...)``."""
        d = len(self.c)
        c = np.asarray(self.c, dtype=float)
        L = np.eye(d + 1)
        if self.kind == "galilean":
            L[1:, 0] = -c
            return L
        g, v2 = self.gamma, self.speed ** 2
        L[0, 0] = g
        L[0, 1:] = -g * c / self.c0 ** 2
        L[1:, 0] = -g * c
        if v2 > 0:
            L[1:, 1:] += (g - 1.0) * np.outer(c, c) / v2
        return L


def _full_keys(name: str, dim: int) -> list[tuple[str, tuple[int, ...]]]:
    axes = "t" + "xyz"[:dim]
    out = [(name, ())] + [(f"{name}_{a}", (i,)) for i, a in enumerate(axes)]
    for i in range(dim + 1):
        for j in range(i, dim + 1):
            out.append((f"{name}_{axes[i]}{axes[j]}", (i, j)))
    return out


def boost_jets(jets: Mapping[str, np.ndarray], names: Sequence[str], kinds: Mapping[str, VarKind],
               boost: BoostSpec) -> dict[str, np.ndarray]:
    """Jets of the boosted fields at the same physical events.

    Derivatives transform by the chain rule with the constant Jacobian
    ``J = L^-1``; Galilean boosts also shift velocity component ``i`` by ``-c_i``.
    """
    dim = len(boost.c)
    J = np.linalg.inv(boost.matrix())
    axes = "t" + "xyz"[:dim]
    out = {}
    vel = [n for n in names if kinds[n] is VarKind.VELOCITY]
    for n in names:
        val = np.asarray(jets[n], dtype=float)
        g = np.stack([np.asarray(jets[f"{n}_{a}"], dtype=float) * np.ones_like(val) for a in axes])
        H = np.empty((dim + 1, dim + 1) + val.shape)
        for i in range(dim + 1):
            for j in range(i, dim + 1):
                key = f"{n}_{axes[i]}{axes[j]}"
                H[i, j] = H[j, i] = np.asarray(jets[key], dtype=float) * np.ones_like(val)
        gb = np.einsum("ia,i...->a...", J, g)
        Hb = np.einsum("ia,jb,ij...->ab...", J, J, H)
        shift = 0.0
        if boost.kind == "galilean" and n in vel:
            shift = boost.c[vel.index(n)]
        out[n] = val - shift
        for a, ax in enumerate(axes):
            out[f"{n}_{ax}"] = gb[a]
        for a in range(dim + 1):
            for b in range(a, dim + 1):
                out[f"{n}_{axes[a]}{axes[b]}"] = Hb[a, b]
    return out


@dataclass
class InvarianceReport:
    boost: BoostSpec
    deviation: dict[str, float]
    invariant: dict[str, bool]
    combination_deviation: dict[str, float]
    controls: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        terms_ok = all(self.invariant.values())
        combo_ok = all(d < self.tol for d in self.combination_deviation.values())
        control_fails = any(d >= self.tol for d in self.controls.values()) if self.controls else True
        return terms_ok and combo_ok and control_fails


def certify_invariance(library: Library, boost: BoostSpec,
                       analytic_fields: Callable[[np.ndarray, np.ndarray], Mapping[str, np.ndarray]],
                       n_points: int = 64, seed: int = 0, tol: float = 1e-8,
                       controls: Sequence[Term] | None = None) -> InvarianceReport:
    """Check each library term and each equation's pinned combination under ``boost``.

    ``analytic_fields(t, X)`` returns exact jets (value, all first and second
    derivatives in ``t`` and space, keys like ``u_tx``) at times ``t`` and
    spatial points ``X`` of shape ``(N, dim)``.  Controls default to the
    underived velocity components (Galilean) or first spatial derivatives
    (Lorentz), which are not invariant.
    """
    dim = library.dim
    if len(boost.c) != dim:
        raise ValueError(f"boost has {len(boost.c)} components for a {dim}-D library")
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, n_points)
    X = rng.uniform(-np.pi, np.pi, (n_points, dim))
    jets = dict(analytic_fields(t, X))
    names = [v.name for v in library.variables]
    kinds = {v.name: v.kind for v in library.variables}
    bj = boost_jets(jets, names, kinds, boost)

    def dev(expr):
        return float(np.max(np.abs(np.asarray(expr(bj)) - np.asarray(expr(jets)))))

    deviation, invariant = {}, {}
    for t_ in library.terms:
        d = dev(lambda J, t_=t_: evaluate_term(t_, J) * np.ones(n_points))
        deviation[term_to_string(t_)] = d
        invariant[term_to_string(t_)] = d < tol
    combos = {}
    if library.mode is not LibraryMode.OVERCOMPLETE:
        pinned = pinned_terms_for(library)
        for eq, terms in pinned.items():
            if library.target is Target.FIRST:
                # material derivative: u_t + u . grad u
                combos[eq] = dev(lambda J, eq=eq, terms=terms: J[f"{eq}_t"] + sum(evaluate_term(p, J) for p in terms))
            else:
                # d'Alembertian: u_tt - c0^2 * laplacian
                combos[eq] = dev(lambda J, eq=eq, terms=terms: J[f"{eq}_tt"]
                                 - boost.c0 ** 2 * sum(evaluate_term(p, J) for p in terms))
    if controls is None:
        from .terms import Factor, canonicalize
        if boost.kind == "galilean":
            controls = [canonicalize([Factor(v, (0,) * dim)]) for v in library.variables
                        if v.kind is VarKind.VELOCITY]
        else:
            controls = [canonicalize([Factor(v, tuple(int(a == 0) for a in range(dim)))])
                        for v in library.variables if v.kind is not VarKind.PRESSURE]
    ctrl = {term_to_string(c): dev(lambda J, c=c: evaluate_term(c, J) * np.ones(n_points)) for c in controls}
    return InvarianceReport(boost, deviation, invariant, combos, ctrl, tol)


def plane_wave_fields(names: Sequence[str], dim: int, n_waves: int = 3, seed: int = 0
                      ) -> Callable[[np.ndarray, np.ndarray], dict[str, np.ndarray]]:
    """Exact jets of random sums of plane waves ``sum a sin(k . x - w t + p)``, one per field.

    A generic smooth test field for :func:`certify_invariance`; keys cover the
    value and all first and second derivatives in ``t`` and space.
    """
    rng = np.random.default_rng(seed)
    waves = {n: (rng.uniform(0.5, 1.5, n_waves), rng.integers(-2, 3, (n_waves, dim)).astype(float),
                 rng.uniform(-1, 1, n_waves), rng.uniform(0, 2 * np.pi, n_waves)) for n in names}
    axes = "t" + "xyz"[:dim]

    def fields(t, X):
        t = np.asarray(t, dtype=float)
        X = np.asarray(X, dtype=float).reshape(t.size, dim)
        out = {}
        for n, (a, k, w, p) in waves.items():
            kk = np.column_stack([-w, k])  # gradient of the phase in (t, x, ...)
            phase = X @ k.T - t[:, None] * w + p
            s, c = np.sin(phase), np.cos(phase)
            out[n] = s @ a
            for i, ai in enumerate(axes):
                out[f"{n}_{ai}"] = c @ (a * kk[:, i])
                for j in range(i, dim + 1):
                    out[f"{n}_{ai}{axes[j]}"] = -s @ (a * kk[:, i] * kk[:, j])
        return out

    return fields


# --- CSV helpers ------------------------------------------------------------

def write_series_csv(path, times: Sequence[float], series: Mapping[str, Sequence[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + list(series))
        for i, t in enumerate(times):
            w.writerow([repr(float(t))] + [repr(float(series[k][i])) for k in series])
