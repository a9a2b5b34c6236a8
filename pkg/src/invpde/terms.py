"""Candidate terms as canonical monomials of fields and their spatial derivatives.

A term is a product of factors ``var_deriv^power``.  Terms render to a small
string grammar::

    term   := "1" | factor ("*" factor)*
    factor := name ["_" axes] ["^" power]
    name   := letter (letter | digit)*
    axes   := ("x" | "y" | "z")+        (sorted, e.g. "xy", never "yx")

so ``u*u_x``, ``phi^3`` and ``phi1^2*phi2_yy`` are all valid.  The same
``name[_axes]`` key addresses a value inside a jet mapping (see
:func:`evaluate_term`); time derivatives use ``t`` in the key (``u_t``,
``phi_tt``) but never appear inside library terms.
"""
from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

AXES = "xyz"


class VarKind(str, Enum):
    VELOCITY = "velocity"
    PRESSURE = "pressure"
    SCALAR = "scalar"


class LibraryMode(str, Enum):
    GALILEAN = "galilean"
    LORENTZ = "lorentz"
    OVERCOMPLETE = "overcomplete"


class Target(str, Enum):
    FIRST = "first-time-derivative"
    SECOND = "second-time-derivative"

    @property
    def suffix(self) -> str:
        return "t" if self is Target.FIRST else "tt"


@dataclass(frozen=True)
class FieldVar:
    id: int
    name: str
    kind: VarKind = VarKind.SCALAR

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", self.name):
            raise ValueError(f"invalid variable name {self.name!r}")


def make_vars(names: Sequence[str], kinds: Sequence[VarKind | str]) -> list[FieldVar]:
    if not names:
        raise ValueError("at least one field variable is required")
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate variable names in {names}")
    return [FieldVar(i, n, VarKind(k)) for i, (n, k) in enumerate(zip(names, kinds))]


def velocity_vars(names: Sequence[str] = ("u", "v"), pressure: str | None = None) -> list[FieldVar]:
    kinds = [VarKind.VELOCITY] * len(names)
    names = list(names)
    if pressure is not None:
        names.append(pressure)
        kinds.append(VarKind.PRESSURE)
    return make_vars(names, kinds)


def scalar_vars(names: Sequence[str] = ("phi",)) -> list[FieldVar]:
    return make_vars(list(names), [VarKind.SCALAR] * len(names))


def _axes_string(deriv: tuple[int, ...]) -> str:
    return "".join(AXES[i] * k for i, k in enumerate(deriv))


def _deriv_key(deriv: tuple[int, ...]) -> tuple[int, str]:
    return sum(deriv), _axes_string(deriv)


@dataclass(frozen=True)
class Factor:
    var: FieldVar
    deriv: tuple[int, ...]
    power: int = 1

    def __post_init__(self):
        if self.power < 1:
            raise ValueError("factor power must be >= 1")
        if any(k < 0 for k in self.deriv):
            raise ValueError("derivative orders must be non-negative")

    @property
    def order(self) -> int:
        return sum(self.deriv)

    @property
    def key(self) -> str:
        """Jet key of the (un-powered) factor, e.g. ``u_xy``."""
        axes = _axes_string(self.deriv)
        return f"{self.var.name}_{axes}" if axes else self.var.name

    def sort_key(self):
        return (self.var.id, _deriv_key(self.deriv))

    def __str__(self) -> str:
        return self.key if self.power == 1 else f"{self.key}^{self.power}"


@dataclass(frozen=True)
class Term:
    factors: tuple[Factor, ...] = ()
    canonical: bool = field(default=False, compare=False)

    @property
    def degree(self) -> int:
        return sum(f.power for f in self.factors)

    @property
    def deriv_order(self) -> int:
        return max((f.order for f in self.factors), default=0)

    @property
    def is_constant(self) -> bool:
        return not self.factors

    def sort_key(self):
        return (self.degree, self.deriv_order, str(self))

    def __str__(self) -> str:
        return term_to_string(self)

    def __repr__(self) -> str:
        return f"Term({term_to_string(self)!r})"


CONSTANT = Term((), canonical=True)


def canonicalize(term: Term | Iterable[Factor]) -> Term:
    """Sort factors by (var id, derivative) and merge repeated (var, derivative) pairs."""
    factors = term.factors if isinstance(term, Term) else tuple(term)
    merged: dict[tuple, Factor] = {}
    for f in factors:
        k = (f.var, f.deriv)
        if k in merged:
            merged[k] = Factor(f.var, f.deriv, merged[k].power + f.power)
        else:
            merged[k] = f
    out = tuple(sorted(merged.values(), key=Factor.sort_key))
    return Term(out, canonical=True)


def term(*factors: Factor) -> Term:
    return canonicalize(factors)


def term_to_string(t: Term) -> str:
    if not t.factors:
        return "1"
    # underived factors lead, matching the usual "v*u_y" reading order
    plain = [f for f in t.factors if f.order == 0]
    derived = [f for f in t.factors if f.order > 0]
    return "*".join(str(f) for f in plain + derived)


_FACTOR_RE = re.compile(r"([A-Za-z][A-Za-z0-9]*)(?:_([xyz]+))?(?:\^(\d+))?")


def string_to_term(s: str, variables: Sequence[FieldVar], dim: int) -> Term:
    s = s.strip().replace(" ", "")
    if s == "1":
        return CONSTANT
    by_name = {v.name: v for v in variables}
    factors = []
    for part in s.split("*"):
        m = _FACTOR_RE.fullmatch(part)
        if m is None:
            raise ValueError(f"cannot parse factor {part!r} in {s!r}")
        name, axes, power = m.groups()
        if name not in by_name:
            raise ValueError(f"unknown variable {name!r} in {s!r}")
        deriv = [0] * dim
        for a in axes or "":
            i = AXES.index(a)
            if i >= dim:
                raise ValueError(f"axis {a!r} out of range for dim={dim}")
            deriv[i] += 1
        factors.append(Factor(by_name[name], tuple(deriv), int(power or 1)))
    return canonicalize(factors)


def evaluate_term(t: Term, jet: Mapping[str, np.ndarray | float]):
    """Product of jet entries over the factors; constant term gives 1.

    ``jet`` maps factor keys (``u``, ``u_x``, ``phi_yy`` ...) to scalars or
    equally shaped arrays.
    """
    if not t.factors:
        ref = next(iter(jet.values()), 1.0) if jet else 1.0
        return np.ones_like(ref, dtype=float) if np.ndim(ref) else 1.0
    out = None
    for f in t.factors:
        try:
            val = jet[f.key]
        except KeyError:
            raise KeyError(f"jet lacks derivative {f.key!r} required by factor {f} of term {t}") from None
        val = val ** f.power if f.power > 1 else val
        out = val if out is None else out * val
    return out


def deriv_indices(dim: int, order: int) -> list[tuple[int, ...]]:
    """All spatial multi-indices of exactly ``order``, in rendering order."""
    out = []
    for combo in itertools.combinations_with_replacement(range(dim), order):
        d = [0] * dim
        for a in combo:
            d[a] += 1
        out.append(tuple(d))
    return sorted(out, key=_deriv_key)


def enumerate_candidates(
    variables: Sequence[FieldVar], dim: int, max_degree: int = 3, max_deriv_order: int = 2
) -> list[Term]:
    """Overcomplete library: underived monomial (degree <= max_degree) times at
    most one derivative factor of order <= max_deriv_order."""
    if dim not in (1, 2, 3):
        raise ValueError(f"spatial dimension must be 1, 2 or 3, got {dim}")
    if not variables:
        raise ValueError("at least one field variable is required")
    if max_degree < 1 or max_deriv_order < 1:
        raise ValueError("max_degree and max_deriv_order must be >= 1")
    zero = (0,) * dim
    monomials: list[tuple[Factor, ...]] = [()]
    for deg in range(1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(variables, deg):
            monomials.append(tuple(Factor(v, zero) for v in combo))
    derived = [
        Factor(v, d)
        for v in variables
        for order in range(1, max_deriv_order + 1)
        for d in deriv_indices(dim, order)
    ]
    out = set()
    for mono in monomials:
        out.add(canonicalize(mono))
        for f in derived:
            out.add(canonicalize(mono + (f,)))
    return sorted(out, key=Term.sort_key)


@dataclass
class Library:
    terms: list[Term]
    pinned: list[Term]
    mode: LibraryMode
    target: Target
    variables: list[FieldVar]
    dim: int

    def __post_init__(self):
        seen = set(self.terms) | set(self.pinned)
        if len(seen) != len(self.terms) + len(self.pinned):
            raise ValueError("duplicate terms in library")
        if (self.mode is LibraryMode.OVERCOMPLETE) != (not self.pinned):
            raise ValueError("pinned terms must be empty exactly for overcomplete libraries")

    def __len__(self) -> int:
        return len(self.terms) + len(self.pinned)

    @property
    def equation_vars(self) -> list[FieldVar]:
        if self.mode is LibraryMode.GALILEAN:
            return [v for v in self.variables if v.kind is VarKind.VELOCITY]
        return [v for v in self.variables if v.kind is not VarKind.PRESSURE]

    def all_terms(self) -> list[Term]:
        return list(self.pinned) + list(self.terms)

    def jet_keys(self) -> set[str]:
        keys = {f.key for t in self.all_terms() for f in t.factors}
        keys |= {f"{v.name}_{self.target.suffix}" for v in self.equation_vars}
        return keys

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "target": self.target.value,
            "dim": self.dim,
            "variables": [{"name": v.name, "kind": v.kind.value} for v in self.variables],
            "terms": [str(t) for t in self.terms],
            "pinned": [str(t) for t in self.pinned],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Library":
        variables = make_vars([v["name"] for v in d["variables"]], [v["kind"] for v in d["variables"]])
        dim = int(d["dim"])
        return cls(
            terms=[string_to_term(s, variables, dim) for s in d["terms"]],
            pinned=[string_to_term(s, variables, dim) for s in d["pinned"]],
            mode=LibraryMode(d["mode"]),
            target=Target(d["target"]),
            variables=variables,
            dim=dim,
        )

    @classmethod
    def from_json(cls, s: str) -> "Library":
        return cls.from_dict(json.loads(s))


def _dim_of(candidates: Sequence[Term], default: int) -> int:
    for t in candidates:
        for f in t.factors:
            return len(f.deriv)
    return default


def galilean_filter(
    candidates: Sequence[Term], variables: Sequence[FieldVar], pressure_orders: Sequence[int] = (1,)
) -> Library:
    """Keep boost-invariant candidates and pin the convective products.

    Kept: the constant, single derivative factors (power 1) of velocity
    components and derivatives of pressure whose order is in
    ``pressure_orders``.  Pinned: ``u_j * d_j u_i`` for every component pair,
    grouped by equation component ``i``.
    """
    vel = [v for v in variables if v.kind is VarKind.VELOCITY]
    if not vel:
        raise ValueError("galilean filter needs velocity components")
    if any(v.kind is VarKind.SCALAR for v in variables):
        raise ValueError("galilean filter accepts only velocity and pressure variables")
    dim = _dim_of(candidates, len(vel))
    if len(vel) != dim:
        raise ValueError(f"expected {dim} velocity components, got {len(vel)}")
    zero = (0,) * dim
    cand = set(candidates)
    convective = []
    for ui in vel:
        for j, uj in enumerate(vel):
            unit = tuple(int(k == j) for k in range(dim))
            convective.append(term(Factor(uj, zero), Factor(ui, unit)))
    pinned = [t for t in convective if t in cand]
    kept = []
    for t in candidates:
        if t.is_constant:
            kept.append(t)
        elif len(t.factors) == 1 and t.factors[0].power == 1:
            f = t.factors[0]
            if f.var.kind is VarKind.VELOCITY and f.order >= 1:
                kept.append(t)
            elif f.var.kind is VarKind.PRESSURE and f.order in pressure_orders:
                kept.append(t)
    return Library(kept, pinned, LibraryMode.GALILEAN, Target.FIRST, list(variables), dim)


def lorentz_filter(candidates: Sequence[Term], variables: Sequence[FieldVar]) -> Library:
    """Keep underived monomials and pin the unmixed second spatial derivatives."""
    if any(v.kind is not VarKind.SCALAR for v in variables):
        raise ValueError("lorentz filter accepts only scalar fields")
    dim = _dim_of(candidates, 2)
    cand = set(candidates)
    laplacian = []
    for v in variables:
        for a in range(dim):
            d = tuple(2 * int(k == a) for k in range(dim))
            laplacian.append(term(Factor(v, d)))
    pinned = [t for t in laplacian if t in cand]
    kept = [t for t in candidates if t.deriv_order == 0]
    return Library(kept, pinned, LibraryMode.LORENTZ, Target.SECOND, list(variables), dim)


def overcomplete_library(
    variables: Sequence[FieldVar], dim: int, max_degree: int = 3, max_deriv_order: int = 2,
    target: Target = Target.FIRST,
) -> Library:
    cands = enumerate_candidates(variables, dim, max_degree, max_deriv_order)
    return Library(cands, [], LibraryMode.OVERCOMPLETE, target, list(variables), dim)


def build_library(
    mode: LibraryMode | str, variables: Sequence[FieldVar], dim: int,
    max_degree: int = 3, max_deriv_order: int = 2, target: Target | None = None,
) -> Library:
    mode = LibraryMode(mode)
    cands = enumerate_candidates(variables, dim, max_degree, max_deriv_order)
    if mode is LibraryMode.GALILEAN:
        return galilean_filter(cands, variables)
    if mode is LibraryMode.LORENTZ:
        return lorentz_filter(cands, variables)
    if target is None:
        target = Target.SECOND if all(v.kind is VarKind.SCALAR for v in variables) else Target.FIRST
    return Library(cands, [], LibraryMode.OVERCOMPLETE, Target(target), list(variables), dim)


def pinned_terms_for(library: Library) -> dict[str, list[Term]]:
    """Pinned terms grouped by the equation (field component) they belong to."""
    if library.mode is LibraryMode.OVERCOMPLETE:
        raise ValueError("overcomplete libraries have no pinned terms")
    out: dict[str, list[Term]] = {v.name: [] for v in library.equation_vars}
    for t in library.pinned:
        if library.mode is LibraryMode.GALILEAN:
            owner = next(f.var for f in t.factors if f.order > 0)
        else:
            owner = t.factors[0].var
        out[owner.name].append(t)
    return out
