"""Fully connected tanh surrogate with exact input-derivative jets.

The network maps normalized ``(t, x, y[, z])`` to normalized field values.
Jets are propagated forward through every layer (value, first derivatives
along a set of input directions, second derivatives for a set of direction
pairs), and a hand-written reverse pass through that propagation gives exact
parameter gradients of any loss built from the jets.

Jet keys follow the term grammar with time allowed: ``u``, ``u_t``, ``u_x``,
``u_tt``, ``u_tx``, ``u_xy`` ...  Keys are in physical units; the affine input
and output normalizations are undone by the chain rule.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .terms import Library, Term

IN_AXES = "txyz"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_layers: int
    width: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.hidden_layers < 1 or self.width < 1:
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh activations are supported")

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [self.width] * self.hidden_layers + [self.output_dim]

    @property
    def n_params(self) -> int:
        s = self.sizes
        return sum((a + 1) * b for a, b in zip(s[:-1], s[1:]))


def param_layout(spec: MlpSpec) -> list[tuple[slice, tuple[int, int], slice]]:
    """(weight slice, weight shape (fan_out, fan_in), bias slice) per layer."""
    out, off = [], 0
    s = spec.sizes
    for fan_in, fan_out in zip(s[:-1], s[1:]):
        w = slice(off, off + fan_in * fan_out)
        off += fan_in * fan_out
        b = slice(off, off + fan_out)
        off += fan_out
        out.append((w, (fan_out, fan_in), b))
    return out


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.n_params)
    for w, (fo, fi), _ in param_layout(spec):
        lim = np.sqrt(6.0 / (fi + fo))
        theta[w] = rng.uniform(-lim, lim, size=fo * fi)
    return theta


def unpack(theta: np.ndarray, spec: MlpSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(theta[w].reshape(shape), theta[b]) for w, shape, b in param_layout(spec)]


@dataclass(frozen=True)
class JetPlan:
    """Input directions (indices into ``t, x, y, z``) and pairs to propagate."""

    firsts: tuple[int, ...]
    pairs: tuple[tuple[int, int], ...]

    @property
    def pair_index(self) -> np.ndarray:
        pos = {d: i for i, d in enumerate(self.firsts)}
        return np.array([(pos[a], pos[b]) for a, b in self.pairs], dtype=np.int64).reshape(-1, 2)

    @classmethod
    def full(cls, input_dim: int) -> "JetPlan":
        firsts = tuple(range(input_dim))
        pairs = tuple((a, b) for a in range(input_dim) for b in range(a, input_dim))
        return cls(firsts, pairs)

    @classmethod
    def from_keys(cls, keys: Sequence[str], input_dim: int) -> "JetPlan":
        firsts, pairs = set(), set()
        for k in keys:
            _, _, axes = k.partition("_")
            dirs = sorted(IN_AXES.index(a) for a in axes)
            if any(d >= input_dim for d in dirs):
                raise ValueError(f"jet key {k!r} needs more than {input_dim} inputs")
            if len(dirs) > 2:
                raise ValueError(f"jet key {k!r}: only derivatives up to second order are supported")
            firsts.update(dirs)
            if len(dirs) == 2:
                pairs.add(tuple(dirs))
        return cls(tuple(sorted(firsts)), tuple(sorted(pairs)))


def jet_key(name: str, dirs: Sequence[int]) -> str:
    axes = "".join(IN_AXES[d] for d in sorted(dirs))
    return f"{name}_{axes}" if axes else name


def network_jets(theta: np.ndarray, spec: MlpSpec, X: np.ndarray, plan: JetPlan):
    """Propagate jets through the raw network (normalized units).

    Returns ``(Y, cache)`` with ``Y`` of shape ``(N, 1 + A + P, m)``.
    """
    layers = unpack(theta, spec)
    N = X.shape[0]
    A, P = len(plan.firsts), len(plan.pairs)
    pidx = plan.pair_index
    W, b = layers[0]
    C = 1 + A + P
    Z = np.zeros((N, C, W.shape[0]))
    Z[:, 0] = X @ W.T + b
    Z[:, 1 : 1 + A] = W.T[list(plan.firsts)][None]
    cache = []
    for W, b in layers[1:]:
        H = _kernels.tanh_jet_forward(Z, A, pidx)
        cache.append((Z, H))
        Z = (H.reshape(N * C, -1) @ W.T).reshape(N, C, -1)
        Z[:, 0] += b
    return Z, (X, cache, plan)


def network_jets_backward(theta: np.ndarray, spec: MlpSpec, cache, G: np.ndarray) -> np.ndarray:
    """Exact gradient of ``sum(G * Y)`` w.r.t. theta, ``Y`` from :func:`network_jets`."""
    X, layer_cache, plan = cache
    layers = unpack(theta, spec)
    layout = param_layout(spec)
    grad = np.zeros_like(theta)
    pidx = plan.pair_index
    A = len(plan.firsts)
    N = X.shape[0]
    C = G.shape[1]
    for li in range(len(layers) - 1, 0, -1):
        W, _ = layers[li]
        Z, H = layer_cache[li - 1]
        wsl, _, bsl = layout[li]
        G2d = G.reshape(N * C, -1)
        grad[wsl] = (G2d.T @ H.reshape(N * C, -1)).ravel()
        grad[bsl] = G[:, 0].sum(axis=0)
        G = _kernels.tanh_jet_backward((G2d @ W).reshape(N, C, -1), Z, H, A, pidx)
    wsl, _, bsl = layout[0]
    gW = G[:, 0].T @ X
    if A:
        # first-layer derivative channels are the weight columns, for every point
        gW[:, list(plan.firsts)] += G[:, 1 : 1 + A].sum(axis=0).T
    grad[wsl] = gW.ravel()
    grad[bsl] = G[:, 0].sum(axis=0)
    return grad


@dataclass
class Normalization:
    """``x_norm = (x - in_center) / in_half``, ``u = out_mean + out_scale * net``."""

    in_center: np.ndarray
    in_half: np.ndarray
    out_mean: np.ndarray
    out_scale: np.ndarray

    @classmethod
    def identity(cls, input_dim: int, output_dim: int) -> "Normalization":
        return cls(np.zeros(input_dim), np.ones(input_dim), np.zeros(output_dim), np.ones(output_dim))

    @classmethod
    def from_data(cls, coords: np.ndarray, values: np.ndarray) -> "Normalization":
        lo, hi = coords.min(axis=0), coords.max(axis=0)
        half = np.where(hi > lo, (hi - lo) / 2.0, 1.0)
        scale = values.std(axis=0)
        return cls((hi + lo) / 2.0, half, values.mean(axis=0), np.where(scale > 0, scale, 1.0))

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Normalization":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("in_center", "in_half", "out_mean", "out_scale")))


@dataclass
class Surrogate:
    spec: MlpSpec
    params: np.ndarray
    norm: Normalization
    out_names: list[str]
    seed: int = 0
    step: int = 0

    @classmethod
    def create(cls, spec: MlpSpec, out_names: Sequence[str], seed: int, coords=None, values=None) -> "Surrogate":
        if coords is not None:
            norm = Normalization.from_data(coords, values)
        else:
            norm = Normalization.identity(spec.input_dim, spec.output_dim)
        return cls(spec, init_params(spec, seed), norm, list(out_names), seed)

    def normalize(self, coords: np.ndarray) -> np.ndarray:
        return (coords - self.norm.in_center) / self.norm.in_half

    def _channel_scales(self, plan: JetPlan):
        ih = self.norm.in_half
        s1 = np.array([1.0 / ih[d] for d in plan.firsts])
        s2 = np.array([1.0 / (ih[a] * ih[b]) for a, b in plan.pairs])
        return s1, s2

    def jets_with_cache(self, coords: np.ndarray, keys: Sequence[str], params=None):
        """Physical-unit jets for ``keys`` plus the cache for :meth:`backward`."""
        params = self.params if params is None else params
        plan = JetPlan.from_keys(keys, self.spec.input_dim)
        Y, cache = network_jets(params, self.spec, self.normalize(coords), plan)
        s1, s2 = self._channel_scales(plan)
        A = len(plan.firsts)
        sc = self.norm.out_scale
        out = {}
        for k, name in enumerate(self.out_names):
            out[name] = self.norm.out_mean[k] + sc[k] * Y[:, 0, k]
            for a, d in enumerate(plan.firsts):
                out[jet_key(name, (d,))] = sc[k] * s1[a] * Y[:, 1 + a, k]
            for p, pr in enumerate(plan.pairs):
                out[jet_key(name, pr)] = sc[k] * s2[p] * Y[:, 1 + A + p, k]
        return out, (cache, plan, params)

    def jets(self, coords: np.ndarray, keys: Sequence[str] | None = None, params=None) -> dict[str, np.ndarray]:
        if keys is None:
            plan = JetPlan.full(self.spec.input_dim)
            keys = [jet_key(n, (d,)) for n in self.out_names for d in plan.firsts]
            keys += [jet_key(n, pr) for n in self.out_names for pr in plan.pairs]
        return self.jets_with_cache(coords, list(keys), params)[0]

    def backward(self, ctx, grads: Mapping[str, np.ndarray]) -> np.ndarray:
        """Parameter gradient given d(loss)/d(jet entry) for physical-unit keys."""
        cache, plan, params = ctx
        N = cache[0].shape[0]
        m = self.spec.output_dim
        A, P = len(plan.firsts), len(plan.pairs)
        G = np.zeros((N, 1 + A + P, m))
        s1, s2 = self._channel_scales(plan)
        sc = self.norm.out_scale
        fpos = {d: i for i, d in enumerate(plan.firsts)}
        ppos = {pr: i for i, pr in enumerate(plan.pairs)}
        index = {n: k for k, n in enumerate(self.out_names)}
        for key, g in grads.items():
            name, _, axes = key.partition("_")
            k = index[name]
            dirs = tuple(sorted(IN_AXES.index(a) for a in axes))
            if not dirs:
                G[:, 0, k] += sc[k] * g
            elif len(dirs) == 1:
                a = fpos[dirs[0]]
                G[:, 1 + a, k] += sc[k] * s1[a] * g
            else:
                p = ppos[dirs]
                G[:, 1 + A + p, k] += sc[k] * s2[p] * g
        return network_jets_backward(params, self.spec, cache, G)

    def save(self, path) -> Path:
        """Checkpoint: ``<path>/surrogate.json`` plus raw little-endian ``params.f64``."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        meta = {"spec": asdict(self.spec), "normalization": self.norm.to_dict(), "seed": self.seed,
                "step": self.step, "out_names": self.out_names, "n_params": int(self.params.size)}
        (path / "surrogate.json").write_text(json.dumps(meta, indent=2))
        np.ascontiguousarray(self.params, dtype="<f8").tofile(path / "params.f64")
        return path

    @classmethod
    def load(cls, path) -> "Surrogate":
        path = Path(path)
        meta = json.loads((path / "surrogate.json").read_text())
        spec = MlpSpec(**meta["spec"])
        params = np.fromfile(path / "params.f64", dtype="<f8").astype(np.float64)
        if params.size != spec.n_params:
            raise ValueError(f"checkpoint has {params.size} parameters, spec needs {spec.n_params}")
        return cls(spec, params, Normalization.from_dict(meta["normalization"]), meta["out_names"],
                   meta["seed"], meta["step"])


def forward_jet(params: np.ndarray, spec: MlpSpec, coords: np.ndarray, out_names: Sequence[str] | None = None
                ) -> dict[str, np.ndarray]:
    """Full jet (value, all first and second input derivatives) of a raw network."""
    names = list(out_names) if out_names is not None else [f"f{k}" for k in range(spec.output_dim)]
    model = Surrogate(spec, params, Normalization.identity(spec.input_dim, spec.output_dim), names)
    return model.jets(coords)


# --- composite loss -------------------------------------------------------

def term_partials(t: Term, jets: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """d(term)/d(jet entry) for each factor key of ``t``."""
    out = {}
    for i, f in enumerate(t.factors):
        g = f.power * jets[f.key] ** (f.power - 1) if f.power > 1 else None
        for j, h in enumerate(t.factors):
            if j == i:
                continue
            val = jets[h.key] ** h.power if h.power > 1 else jets[h.key]
            g = val if g is None else g * val
        if g is None:
            g = np.ones_like(jets[f.key])
        out[f.key] = out.get(f.key, 0.0) + g
    return out


@dataclass
class CoefficientState:
    """Per-equation unpinned coefficients (with support mask) and pinned ones."""

    equations: list[str]
    unpinned: dict[str, np.ndarray]
    pinned: dict[str, np.ndarray]
    mask: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, library: Library, pinned_by_eq: Mapping[str, Sequence[Term]]) -> "CoefficientState":
        eqs = [v.name for v in library.equation_vars]
        M = len(library.terms)
        return cls(eqs, {e: np.zeros(M) for e in eqs}, {e: np.zeros(len(pinned_by_eq.get(e, ()))) for e in eqs},
                   {e: np.ones(M, dtype=bool) for e in eqs})

    def flat(self) -> np.ndarray:
        parts = [self.pinned[e] for e in self.equations] + [self.unpinned[e] for e in self.equations]
        return np.concatenate(parts) if parts else np.zeros(0)

    def flat_mask(self) -> np.ndarray:
        parts = [np.ones_like(self.pinned[e], dtype=bool) for e in self.equations]
        parts += [self.mask[e] for e in self.equations]
        return np.concatenate(parts)

    def set_flat(self, x: np.ndarray) -> None:
        off = 0
        for e in self.equations:
            n = self.pinned[e].size
            self.pinned[e] = x[off : off + n].copy()
            off += n
        for e in self.equations:
            n = self.unpinned[e].size
            self.unpinned[e] = np.where(self.mask[e], x[off : off + n], 0.0)
            off += n

    @property
    def size(self) -> int:
        return sum(self.pinned[e].size + self.unpinned[e].size for e in self.equations)

    def copy(self) -> "CoefficientState":
        return CoefficientState(list(self.equations), {k: v.copy() for k, v in self.unpinned.items()},
                                {k: v.copy() for k, v in self.pinned.items()},
                                {k: v.copy() for k, v in self.mask.items()})


@dataclass
class LossParts:
    total: float
    data: float
    physics: float
    l1: float


class PhysicsLoss:
    """``L = L_d + alpha * L_I + beta * ||Lambda||_1`` with exact gradients.

    The residual per equation is ``target + sum(lam_i * pinned_i) - Theta @ Lambda``
    where ``target`` is ``u_t`` (first-order) or ``u_tt`` (second-order).
    """

    def __init__(self, model: Surrogate, library: Library, pinned_by_eq: Mapping[str, Sequence[Term]],
                 alpha: float = 1.0, beta: float = 0.0):
        self.model = model
        self.library = library
        self.pinned_by_eq = {e: list(pinned_by_eq.get(e, ())) for e in (v.name for v in library.equation_vars)}
        self.alpha = alpha
        self.beta = beta
        self.keys = sorted(library.jet_keys() | set(model.out_names))
        self.n_theta = model.spec.n_params

    def split(self, x: np.ndarray, coeffs: CoefficientState):
        coeffs.set_flat(x[self.n_theta :])
        return x[: self.n_theta]

    def features(self, jets: Mapping[str, np.ndarray], eq: str):
        """(target, pinned matrix, Theta) for one equation."""
        tgt = jets[f"{eq}_{self.library.target.suffix}"]
        N = tgt.shape[0]
        from .terms import evaluate_term

        def mat(terms):
            cols = [np.broadcast_to(evaluate_term(t, jets), (N,)) for t in terms]
            return np.column_stack(cols) if cols else np.zeros((N, 0))

        return tgt, mat(self.pinned_by_eq[eq]), mat(self.library.terms)

    def __call__(self, theta: np.ndarray, coeffs: CoefficientState, coords: np.ndarray,
                 values: Mapping[str, np.ndarray], want_grad: bool = True):
        jets, ctx = self.model.jets_with_cache(coords, self.keys, theta)
        N = coords.shape[0]
        gj: dict[str, np.ndarray] = {}
        data = 0.0
        for name in self.model.out_names:
            if name in values:
                diff = jets[name] - values[name]
                data += float(diff @ diff) / N
                gj[name] = gj.get(name, 0.0) + 2.0 * diff / N
        phys = 0.0
        l1 = 0.0
        g_pin, g_lib = {}, {}
        for eq in coeffs.equations:
            tgt, Pm, Th = self.features(jets, eq)
            lam = coeffs.pinned[eq]
            Lam = coeffs.unpinned[eq] * coeffs.mask[eq]
            r = tgt + Pm @ lam - Th @ Lam
            phys += float(r @ r) / N
            l1 += float(np.abs(Lam).sum())
            if not want_grad:
                continue
            gr = 2.0 * self.alpha * r / N
            g_pin[eq] = Pm.T @ gr
            g_lib[eq] = np.where(coeffs.mask[eq], -(Th.T @ gr) + self.beta * np.sign(Lam), 0.0)
            key = f"{eq}_{self.library.target.suffix}"
            gj[key] = gj.get(key, 0.0) + gr
            for t, c in zip(self.pinned_by_eq[eq], lam):
                if c != 0.0:
                    for k, d in term_partials(t, jets).items():
                        gj[k] = gj.get(k, 0.0) + c * gr * d
            for t, c in zip(self.library.terms, Lam):
                if c != 0.0:
                    for k, d in term_partials(t, jets).items():
                        gj[k] = gj.get(k, 0.0) - c * gr * d
        total = data + self.alpha * phys + self.beta * l1
        if not np.isfinite(total):
            raise FloatingPointError(
                f"non-finite loss (data={data}, physics={phys}, l1={l1}) on batch of {N} points; "
                f"coords range {coords.min(axis=0)}..{coords.max(axis=0)}")
        parts = LossParts(total, data, phys, l1)
        if not want_grad:
            return parts, None
        g_theta = self.model.backward(ctx, {k: np.broadcast_to(v, (N,)) for k, v in gj.items()})
        g_coef = np.concatenate([g_pin[e] for e in coeffs.equations] + [g_lib[e] for e in coeffs.equations])
        return parts, np.concatenate([g_theta, g_coef])

    def objective(self, coeffs: CoefficientState, coords, values):
        """Closure ``x -> (loss, grad)`` over the packed vector ``[theta, coefficients]``."""

        def f(x):
            theta = self.split(x, coeffs)
            parts, g = self(theta, coeffs, coords, values)
            return parts.total, g

        return f


def loss_and_grad(model: Surrogate, coeffs: CoefficientState, coords, values, library: Library,
                  pinned_by_eq, alpha: float = 1.0, beta: float = 0.0, params=None):
    """One-shot composite loss and gradient over ``[params, pinned, unpinned]``."""
    loss = PhysicsLoss(model, library, pinned_by_eq, alpha, beta)
    theta = model.params if params is None else params
    return loss(theta, coeffs, coords, values)
