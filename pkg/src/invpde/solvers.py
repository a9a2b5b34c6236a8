"""Periodic pseudo-spectral generators for the benchmark equations.

All integrators advance the 2/3-dealiased Fourier coefficients with classic
RK4; ``substeps`` internal steps are taken per output interval.  The same
term-driven right-hand side powers :func:`simulate_discovered`, so a
discovered equation with exact coefficients reproduces the generator.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import FieldDataset, Grid
from .terms import AXES, Term, Target, evaluate_term

log = logging.getLogger(__name__)

BLOWUP = 1e6


class SolverBlowup(RuntimeError):
    pass


@dataclass
class SolverConfig:
    pde: str = "burgers2d"
    n: int = 256
    domain: tuple[float, float] = (-np.pi, np.pi)
    dt_output: float = 0.01
    t_end: float = 4.0
    substeps: int = 10
    # Burgers
    nu: float = 0.1
    A1: float = 0.0
    B1: float = 8.0
    C1: float = 4.0
    D1: float = 1.0
    burgers_signs: tuple[float, float, float, float] = (1.0, -1.0, 1.0, -1.0)
    # single Klein-Gordon: phi_tt = a1 phi + b1 phi^3 + d1 lap(phi)
    a1: float = 1.0
    b1: float = -1.0
    d1: float = 0.1
    A2: float = 4.0
    B2: float = 10.0
    x0: float = 0.0
    y0: float = 0.0
    # coupled Klein-Gordon
    a2: float = 1.0
    b2: float = -1.0
    c2: float = 0.1
    A3: float = 4.0
    B3: float = 3.0
    x0c: float = 0.4
    y0c: float = 0.4
    # Navier-Stokes
    Re: float = 5.0
    ns_perturb: float = 0.0
    ns_seed: int = 0

    def __post_init__(self):
        if self.dt_output <= 0 or self.t_end < 0:
            raise ValueError("dt_output must be > 0 and t_end >= 0")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.n < 8:
            raise ValueError("grid size must be >= 8")
        vals = [v for v in asdict(self).values() if isinstance(v, float)]
        if not np.all(np.isfinite(vals)):
            raise ValueError("solver parameters must be finite")

    @property
    def n_out(self) -> int:
        return int(round(self.t_end / self.dt_output)) + 1

    def grid(self) -> Grid:
        return Grid.square(self.n, *self.domain)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain"] = list(self.domain)
        d["burgers_signs"] = list(self.burgers_signs)
        return d


class Spectral:
    """rfftn-based differentiation on a periodic grid with a 2/3 mask."""

    def __init__(self, grid: Grid, dealias: bool = True):
        self.grid = grid
        ks = []
        for i, (n, L) in enumerate(zip(grid.shape, grid.lengths)):
            k = (np.fft.rfftfreq(n) if i == grid.dim - 1 else np.fft.fftfreq(n)) * n * 2 * np.pi / L
            ks.append(k)
        self.k = np.meshgrid(*ks, indexing="ij")
        self.k2 = sum(k ** 2 for k in self.k)
        self.mask = np.ones(self.k2.shape, dtype=bool)
        if dealias:
            for i, (n, L) in enumerate(zip(grid.shape, grid.lengths)):
                kmax = n // 2 * 2 * np.pi / L
                self.mask &= np.abs(self.k[i]) < (2.0 / 3.0) * kmax
        self.axes = tuple(range(-grid.dim, 0))

    def fwd(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(f, axes=self.axes) * self.mask

    def inv(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(fh, s=self.grid.shape, axes=self.axes)

    def deriv_hat(self, fh: np.ndarray, orders: Sequence[int]) -> np.ndarray:
        out = fh
        for k, o in zip(self.k, orders):
            if o:
                out = out * (1j * k) ** o
        return out

    def deriv(self, fh: np.ndarray, orders: Sequence[int]) -> np.ndarray:
        return self.inv(self.deriv_hat(fh, orders))

    def jets(self, hats: Mapping[str, np.ndarray], keys: set[str]) -> dict[str, np.ndarray]:
        """Physical-space values for jet keys such as ``u``, ``u_x``, ``phi_yy``."""
        out = {}
        for key in keys:
            name, _, axes = key.partition("_")
            if "t" in axes or name not in hats:
                continue
            orders = [axes.count(a) for a in AXES[: self.grid.dim]]
            out[key] = self.deriv(hats[name], orders)
        return out


def _rk4(rhs: Callable, y0: list, dt: float, n_out: int, substeps: int, emit: Callable, t0: float = 0.0):
    y = y0
    h = dt / substeps
    emit(0, y)
    for i in range(1, n_out):
        for s in range(substeps):
            k1 = rhs(y)
            k2 = rhs([a + 0.5 * h * b for a, b in zip(y, k1)])
            k3 = rhs([a + 0.5 * h * b for a, b in zip(y, k2)])
            k4 = rhs([a + h * b for a, b in zip(y, k3)])
            y = [a + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]
        emit(i, y)


class _Recorder:
    def __init__(self, sp: Spectral, names: Sequence[str], n_out: int, dt: float, t0: float = 0.0):
        self.sp = sp
        self.names = list(names)
        self.dt = dt
        self.t0 = t0
        self.out = {n: np.empty((n_out,) + sp.grid.shape) for n in names}

    def __call__(self, i, y):
        for name, yh in zip(self.names, y):
            f = self.sp.inv(yh)
            m = np.max(np.abs(f))
            if not np.isfinite(m) or m > BLOWUP:
                raise SolverBlowup(f"field {name!r} blew up (max |value| = {m:.3g}) at t = {self.t0 + i * self.dt:.4g}")
            self.out[name][i] = f


def burgers_ic(cfg: SolverConfig, grid: Grid) -> dict[str, np.ndarray]:
    """``A1 + su*B1*sech(C1*((x+sx*D1)^2 + (y+sx*D1)^2))`` per component."""
    x, y = grid.mesh()
    su, sv, dxu, dxv = cfg.burgers_signs
    sech = lambda z: 1.0 / np.cosh(z)
    u = cfg.A1 + su * cfg.B1 * sech(cfg.C1 * ((x + dxu * cfg.D1) ** 2 + (y + dxu * cfg.D1) ** 2))
    v = cfg.A1 + sv * cfg.B1 * sech(cfg.C1 * ((x + dxv * cfg.D1) ** 2 + (y + dxv * cfg.D1) ** 2))
    return {"u": u, "v": v}


def kg_ic(cfg: SolverConfig, grid: Grid) -> dict[str, np.ndarray]:
    x, y = grid.mesh()
    return {"phi": cfg.A2 * np.exp(-cfg.B2 * ((x - cfg.x0) ** 2 + (y - cfg.y0) ** 2))}


def coupled_kg_ic(cfg: SolverConfig, grid: Grid) -> dict[str, np.ndarray]:
    x, y = grid.mesh()
    A, B, x0, y0 = cfg.A3, cfg.B3, cfg.x0c, cfg.y0c
    g = lambda sx, sy: np.exp(-B * ((x + sx * x0) ** 2 + (y + sy * y0) ** 2))
    return {"phi1": A * g(-1, 1) - A * g(1, -1), "phi2": A * g(-1, -1) - A * g(1, 1)}


def _dataset(cfg: SolverConfig, rec: _Recorder, extra: dict | None = None) -> FieldDataset:
    times = cfg.dt_output * np.arange(cfg.n_out)
    meta = {"solver": cfg.pde, "config": cfg.to_dict()}
    if extra:
        meta.update(extra)
    return FieldDataset(cfg.grid(), times, rec.out, meta)


def burgers_rhs(sp: Spectral, nu: float):
    def rhs(y):
        uh, vh = y
        u, v = sp.inv(uh), sp.inv(vh)
        ux, uy = sp.deriv(uh, (1, 0)), sp.deriv(uh, (0, 1))
        vx, vy = sp.deriv(vh, (1, 0)), sp.deriv(vh, (0, 1))
        return [sp.fwd(-(u * ux + v * uy)) - nu * sp.k2 * uh,
                sp.fwd(-(u * vx + v * vy)) - nu * sp.k2 * vh]
    return rhs


def solve_burgers2d(cfg: SolverConfig) -> FieldDataset:
    if cfg.nu <= 0:
        raise ValueError("viscosity must be positive")
    grid = cfg.grid()
    sp = Spectral(grid)
    ic = burgers_ic(cfg, grid)
    rec = _Recorder(sp, ["u", "v"], cfg.n_out, cfg.dt_output)
    y0 = [sp.fwd(ic["u"]), sp.fwd(ic["v"])]
    rec.out["u"][0], rec.out["v"][0] = ic["u"], ic["v"]
    _rk4(burgers_rhs(sp, cfg.nu), y0, cfg.dt_output, cfg.n_out, cfg.substeps,
         lambda i, y: rec(i, y) if i else None)
    return _dataset(cfg, rec)


def _second_order(sp, names, ic, accel, cfg) -> _Recorder:
    """Integrate phi_tt = accel(phi...) as the first-order system (phi, phi_t)."""
    m = len(names)
    rec = _Recorder(sp, names, cfg.n_out, cfg.dt_output)
    for n in names:
        rec.out[n][0] = ic[n]

    def rhs(y):
        return list(y[m:]) + accel(y[:m])

    y0 = [sp.fwd(ic[n]) for n in names] + [np.zeros_like(sp.fwd(ic[n])) for n in names]
    _rk4(rhs, y0, cfg.dt_output, cfg.n_out, cfg.substeps, lambda i, y: rec(i, y[:m]) if i else None)
    return rec


def solve_klein_gordon(cfg: SolverConfig) -> FieldDataset:
    grid = cfg.grid()
    sp = Spectral(grid)

    def accel(y):
        (ph,) = y
        p = sp.inv(ph)
        return [sp.fwd(cfg.a1 * p + cfg.b1 * p ** 3) - cfg.d1 * sp.k2 * ph]

    return _dataset(cfg, _second_order(sp, ["phi"], kg_ic(cfg, grid), accel, cfg))


def solve_coupled_kg(cfg: SolverConfig) -> FieldDataset:
    grid = cfg.grid()
    sp = Spectral(grid)

    def accel(y):
        h1, h2 = y
        p1, p2 = sp.inv(h1), sp.inv(h2)
        r2 = p1 ** 2 + p2 ** 2
        return [sp.fwd(cfg.a2 * p1 + cfg.b2 * r2 * p1) - cfg.c2 * sp.k2 * h1,
                sp.fwd(cfg.a2 * p2 + cfg.b2 * r2 * p2) - cfg.c2 * sp.k2 * h2]

    return _dataset(cfg, _second_order(sp, ["phi1", "phi2"], coupled_kg_ic(cfg, grid), accel, cfg))


def taylor_green_fields(x, y, t, Re: float) -> dict[str, np.ndarray]:
    e = np.exp(-2.0 * t / Re)
    return {
        "u": -np.cos(x) * np.sin(y) * e,
        "v": np.sin(x) * np.cos(y) * e,
        "p": -(np.cos(2 * x) + np.cos(2 * y)) * e * e / 4.0,
    }


def taylor_green_jets(x, y, t, Re: float) -> dict[str, np.ndarray]:
    """Closed-form values and derivatives of the Taylor-Green vortex."""
    e = np.exp(-2.0 * t / Re)
    cx, sx, cy, sy = np.cos(x), np.sin(x), np.cos(y), np.sin(y)
    u = -cx * sy * e
    v = sx * cy * e
    return {
        "u": u, "u_t": -2.0 / Re * u, "u_x": sx * sy * e, "u_y": -cx * cy * e,
        "u_xx": -u, "u_xy": sx * cy * e, "u_yy": -u,
        "v": v, "v_t": -2.0 / Re * v, "v_x": cx * cy * e, "v_y": -sx * sy * e,
        "v_xx": -v, "v_xy": -cx * sy * e, "v_yy": -v,
        "p": -(np.cos(2 * x) + np.cos(2 * y)) * e * e / 4.0,
        "p_x": np.sin(2 * x) * e * e / 2.0, "p_y": np.sin(2 * y) * e * e / 2.0,
    }


def taylor_green_ns(cfg: SolverConfig) -> FieldDataset:
    if cfg.Re <= 0:
        raise ValueError("Re must be positive")
    grid = cfg.grid()
    x, y = grid.mesh()
    times = cfg.dt_output * np.arange(cfg.n_out)
    fields = {k: np.stack([taylor_green_fields(x, y, t, cfg.Re)[k] for t in times]) for k in ("u", "v", "p")}
    return FieldDataset(grid, times, fields, {"solver": "taylor_green_ns", "config": cfg.to_dict()})


def ns_pressure_hat(sp: Spectral, uh, vh):
    """Pressure from lap(p) = -div(u . grad u), zero-mean."""
    u, v = sp.inv(uh), sp.inv(vh)
    nu_ = sp.fwd(u * sp.deriv(uh, (1, 0)) + v * sp.deriv(uh, (0, 1)))
    nv_ = sp.fwd(u * sp.deriv(vh, (1, 0)) + v * sp.deriv(vh, (0, 1)))
    div = 1j * sp.k[0] * nu_ + 1j * sp.k[1] * nv_
    k2 = np.where(sp.k2 == 0, 1.0, sp.k2)
    ph = div / k2
    ph.flat[0] = 0.0
    return ph


def solve_ns2d(cfg: SolverConfig) -> FieldDataset:
    """Vorticity-form periodic Navier-Stokes started from a Taylor-Green vortex.

    ``ns_perturb`` adds a seeded random low-mode vorticity perturbation so the
    flow leaves the single-shell Taylor-Green family, where convection and the
    pressure gradient cancel identically.
    """
    grid = cfg.grid()
    sp = Spectral(grid)
    x, y = grid.mesh()
    nu = 1.0 / cfg.Re
    w0 = 2.0 * np.cos(x) * np.cos(y)
    if cfg.ns_perturb:
        rng = np.random.default_rng(cfg.ns_seed)
        for kx in range(0, 4):
            for ky in range(-3, 4):
                if (kx, ky) == (0, 0) or (kx == 0 and ky < 0) or kx * kx + ky * ky > 10:
                    continue
                a, phase = rng.standard_normal(), rng.uniform(0, 2 * np.pi)
                w0 = w0 + cfg.ns_perturb * a * np.cos(kx * x + ky * y + phase)
    k2 = np.where(sp.k2 == 0, 1.0, sp.k2)

    def velocity(wh):
        ph = wh / k2
        ph = ph * (sp.k2 != 0)
        return sp.deriv_hat(ph, (0, 1)), -sp.deriv_hat(ph, (1, 0))

    def rhs(y_):
        (wh,) = y_
        uh, vh = velocity(wh)
        u, v = sp.inv(uh), sp.inv(vh)
        adv = u * sp.deriv(wh, (1, 0)) + v * sp.deriv(wh, (0, 1))
        return [-sp.fwd(adv) - nu * sp.k2 * wh]

    names = ["u", "v", "p"]
    rec = _Recorder(sp, names, cfg.n_out, cfg.dt_output)

    def emit(i, y_):
        (wh,) = y_
        uh, vh = velocity(wh)
        rec(i, [uh, vh, ns_pressure_hat(sp, uh, vh)])

    _rk4(rhs, [sp.fwd(w0)], cfg.dt_output, cfg.n_out, cfg.substeps, emit)
    return _dataset(cfg, rec, {"solver": "ns2d"})


SOLVERS = {
    "burgers2d": solve_burgers2d,
    "klein_gordon": solve_klein_gordon,
    "coupled_kg": solve_coupled_kg,
    "taylor_green_ns": taylor_green_ns,
    "ns2d": solve_ns2d,
}


def solve(cfg: SolverConfig) -> FieldDataset:
    try:
        return SOLVERS[cfg.pde](cfg)
    except KeyError:
        raise ValueError(f"unknown pde {cfg.pde!r}; choose from {sorted(SOLVERS)}") from None


def simulate_discovered(pde, ic: FieldDataset, cfg: SolverConfig, velocity: Mapping[str, np.ndarray] | None = None
                        ) -> FieldDataset:
    """Integrate a discovered right-hand side from the first slice of ``ic``.

    ``pde`` is a :class:`~invpde.engine.DiscoveredPde` (anything with
    ``equations`` mapping var -> [(Term, coef)] and a ``target``).  For
    second-order targets the initial time derivative is ``velocity`` or zero.
    """
    grid = ic.grid
    sp = Spectral(grid)
    names = list(pde.equations)
    missing = [n for n in names if n not in ic.fields]
    if missing:
        raise ValueError(f"initial condition lacks fields {missing}")
    keys = set()
    for eq in pde.equations.values():
        for t, _ in eq:
            for f in t.factors:
                if f.var.name not in names:
                    raise ValueError(f"term {t} references {f.var.name!r}, which is not integrated")
                keys.add(f.key)

    def accel(y):
        hats = dict(zip(names, y))
        jets = sp.jets(hats, keys | set(names))
        out = []
        for n in names:
            acc = np.zeros(grid.shape)
            for t, c in pde.equations[n]:
                if c != 0.0:
                    acc = acc + c * evaluate_term(t, jets)
            out.append(sp.fwd(acc))
        return out

    ic0 = {n: ic.fields[n][0] for n in names}
    t0 = float(ic.times[0])
    rec = _Recorder(sp, names, cfg.n_out, cfg.dt_output, t0)
    for n in names:
        rec.out[n][0] = ic0[n]
    y0 = [sp.fwd(ic0[n]) for n in names]
    if pde.target is Target.FIRST:
        _rk4(accel, y0, cfg.dt_output, cfg.n_out, cfg.substeps, lambda i, y: rec(i, y) if i else None)
    else:
        m = len(names)
        vel = [sp.fwd(velocity[n]) if velocity is not None else np.zeros_like(y0[0]) for n in names]
        _rk4(lambda y: list(y[m:]) + accel(y[:m]), y0 + vel, cfg.dt_output, cfg.n_out, cfg.substeps,
             lambda i, y: rec(i, y[:m]) if i else None)
    times = t0 + cfg.dt_output * np.arange(cfg.n_out)
    return FieldDataset(grid, times, rec.out, {"solver": "simulate_discovered", "config": cfg.to_dict()})
