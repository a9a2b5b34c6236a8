"""Gridded spacetime datasets: degradation, training-point sampling, persistence.

On-disk layout of a dataset directory::

    meta.json       format_version, vars, shape [nt, nx, ny(, nz)], domain
                    {mins, maxs}, dt, t0, ordering, provenance
    <var>.f64       little-endian float64, row-major, t slowest
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FORMAT_VERSION = 1
ORDERING = {2: "row-major, t slowest, then x, then y", 3: "row-major, t slowest, then x, then y, then z"}


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid; ``x_i = min + i * (max - min) / n`` (endpoint excluded)."""

    shape: tuple[int, ...]
    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    periodic: bool = True

    def __post_init__(self):
        if not (len(self.shape) == len(self.mins) == len(self.maxs)):
            raise ValueError("grid shape/mins/maxs length mismatch")
        if any(hi <= lo for lo, hi in zip(self.mins, self.maxs)):
            raise ValueError("grid domain widths must be positive")
        if any(n < 1 for n in self.shape):
            raise ValueError("grid sizes must be positive")

    @classmethod
    def square(cls, n: int, lo: float = -np.pi, hi: float = np.pi, dim: int = 2) -> "Grid":
        return cls((n,) * dim, (lo,) * dim, (hi,) * dim)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in zip(self.mins, self.maxs))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    def axes(self) -> list[np.ndarray]:
        return [lo + np.arange(n) * h for lo, n, h in zip(self.mins, self.shape, self.spacing)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")


@dataclass
class FieldDataset:
    grid: Grid
    times: np.ndarray
    fields: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        shape = (len(self.times),) + tuple(self.grid.shape)
        if not self.fields:
            raise ValueError("dataset needs at least one field")
        for name, arr in self.fields.items():
            if arr.shape != shape:
                raise ValueError(f"field {name!r} has shape {arr.shape}, expected {shape}")
        if len(self.times) > 1:
            dts = np.diff(self.times)
            if np.any(dts <= 0):
                raise ValueError("times must be strictly increasing")
            if np.max(np.abs(dts - dts[0])) > 1e-12 * max(1.0, float(np.abs(self.times).max())):
                raise ValueError("times must be uniformly spaced")

    @property
    def var_names(self) -> list[str]:
        return list(self.fields)

    @property
    def shape(self) -> tuple[int, ...]:
        return (len(self.times),) + tuple(self.grid.shape)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def select_times(self, idx) -> "FieldDataset":
        idx = np.asarray(idx)
        return FieldDataset(self.grid, self.times[idx], {k: v[idx] for k, v in self.fields.items()},
                            dict(self.meta))

    def slice_time(self, start: int, stop: int) -> "FieldDataset":
        return self.select_times(np.arange(start, stop))

    def equals(self, other: "FieldDataset") -> bool:
        """Bitwise equality of grid, times and fields."""
        return (
            self.grid == other.grid
            and self.times.tobytes() == other.times.tobytes()
            and list(self.fields) == list(other.fields)
            and all(self.fields[k].tobytes() == other.fields[k].tobytes() for k in self.fields)
        )


@dataclass(frozen=True)
class NoiseSpec:
    level: float
    seed: int = 0
    convention: str = "per-var-global-std"

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be >= 0")
        if self.convention != "per-var-global-std":
            raise ValueError(f"unsupported noise convention {self.convention!r}")


@dataclass(frozen=True)
class SampleSpec:
    n_snapshots: int
    snapshot_mode: str = "random-from-range"
    n_spatial_points: int | None = None
    seed: int = 0
    time_range: tuple[int, int] | None = None


@dataclass
class TrainingSet:
    """Scattered training points: ``coords[:, 0]`` is time, then spatial axes."""

    coords: np.ndarray
    values: dict[str, np.ndarray]
    time_index: np.ndarray
    spatial_index: np.ndarray

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def subset(self, idx) -> "TrainingSet":
        return TrainingSet(self.coords[idx], {k: v[idx] for k, v in self.values.items()},
                           self.time_index[idx], self.spatial_index[idx])


def downsample(ds: FieldDataset, *factors: int) -> FieldDataset:
    """Strided spatial subsampling keeping index 0 along every axis."""
    if len(factors) == 1:
        factors = factors * ds.grid.dim
    if len(factors) != ds.grid.dim:
        raise ValueError(f"need {ds.grid.dim} factors, got {len(factors)}")
    for n, f in zip(ds.grid.shape, factors):
        if f < 1 or n % f:
            raise ValueError(f"grid size {n} not divisible by factor {f}")
    if all(f == 1 for f in factors):
        return FieldDataset(ds.grid, ds.times.copy(), {k: v.copy() for k, v in ds.fields.items()}, dict(ds.meta))
    sl = (slice(None),) + tuple(slice(None, None, f) for f in factors)
    grid = Grid(tuple(n // f for n, f in zip(ds.grid.shape, factors)), ds.grid.mins, ds.grid.maxs, ds.grid.periodic)
    meta = dict(ds.meta)
    meta["downsample"] = list(factors) if "downsample" not in meta else [
        a * b for a, b in zip(meta["downsample"], factors)]
    return FieldDataset(grid, ds.times.copy(), {k: np.ascontiguousarray(v[sl]) for k, v in ds.fields.items()}, meta)


def _var_key(name: str) -> int:
    # stable across processes, unlike hash()
    return int.from_bytes(name.encode()[:8].ljust(8, b"\0"), "little")


def keyed_normals(seed: int, name: str, n: int) -> np.ndarray:
    """Standard normals keyed by (seed, variable); entry i depends only on i.

    Philox is counter based, so the stream is a pure function of the key.
    """
    bitgen = np.random.Philox(key=[seed & (2**64 - 1), _var_key(name)])
    return np.random.Generator(bitgen).standard_normal(n)


def add_noise(ds: FieldDataset, spec: NoiseSpec) -> FieldDataset:
    if spec.level == 0:
        return FieldDataset(ds.grid, ds.times.copy(), {k: v.copy() for k, v in ds.fields.items()},
                            dict(ds.meta))
    fields = {}
    for name, arr in ds.fields.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"field {name!r} has non-finite values")
        xi = keyed_normals(spec.seed, name, arr.size).reshape(arr.shape)
        fields[name] = arr + spec.level * arr.std() * xi
    meta = dict(ds.meta)
    meta["noise"] = {"level": spec.level, "seed": spec.seed, "convention": spec.convention}
    return FieldDataset(ds.grid, ds.times.copy(), fields, meta)


def sample_points(ds: FieldDataset, spec: SampleSpec) -> TrainingSet:
    nt = len(ds.times)
    lo, hi = spec.time_range if spec.time_range is not None else (0, nt)
    if not (0 <= lo < hi <= nt):
        raise ValueError(f"invalid time range {(lo, hi)} for {nt} snapshots")
    if spec.n_snapshots > hi - lo or spec.n_snapshots < 1:
        raise ValueError(f"cannot draw {spec.n_snapshots} snapshots from {hi - lo}")
    npts = int(np.prod(ds.grid.shape))
    if spec.n_spatial_points is not None and not (1 <= spec.n_spatial_points <= npts):
        raise ValueError(f"cannot draw {spec.n_spatial_points} spatial points from {npts}")
    rng = np.random.default_rng(spec.seed)
    if spec.snapshot_mode == "contiguous" or spec.n_snapshots == hi - lo:
        tidx = np.arange(lo, lo + spec.n_snapshots)
    elif spec.snapshot_mode == "random-from-range":
        tidx = np.sort(rng.choice(np.arange(lo, hi), size=spec.n_snapshots, replace=False))
    else:
        raise ValueError(f"unknown snapshot mode {spec.snapshot_mode!r}")
    if spec.n_spatial_points is None:
        sidx = np.arange(npts)
    else:
        sidx = np.sort(rng.choice(npts, size=spec.n_spatial_points, replace=False))
    mesh = [m.ravel()[sidx] for m in ds.grid.mesh()]
    T = np.repeat(tidx, len(sidx))
    S = np.tile(sidx, len(tidx))
    coords = np.column_stack([ds.times[T]] + [np.tile(m, len(tidx)) for m in mesh])
    values = {k: v.reshape(nt, npts)[T, S] for k, v in ds.fields.items()}
    return TrainingSet(coords, values, T, S)


def dataset_points(ds: FieldDataset) -> TrainingSet:
    return sample_points(ds, SampleSpec(len(ds.times)))


def save_dataset(ds: FieldDataset, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, arr in ds.fields.items():
        np.ascontiguousarray(arr, dtype="<f8").tofile(path / f"{name}.f64")
    meta = {
        "format_version": FORMAT_VERSION,
        "vars": ds.var_names,
        "shape": list(ds.shape),
        "domain": {"mins": list(ds.grid.mins), "maxs": list(ds.grid.maxs)},
        "dt": ds.dt,
        "t0": float(ds.times[0]),
        # exact times so the round trip is bitwise
        "times_hex": [float(t).hex() for t in ds.times],
        "ordering": ORDERING.get(ds.grid.dim, "row-major, t slowest"),
        "provenance": ds.meta,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, default=_json_default))
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def load_dataset(path: str | os.PathLike) -> FieldDataset:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format_version {meta.get('format_version')!r}")
    shape = tuple(int(s) for s in meta["shape"])
    present = sorted(p.stem for p in path.glob("*.f64"))
    if sorted(meta["vars"]) != present:
        raise DatasetFormatError(f"meta lists vars {meta['vars']} but directory has {present}")
    nbytes = int(np.prod(shape)) * 8
    fields = {}
    for name in meta["vars"]:
        f = path / f"{name}.f64"
        actual = f.stat().st_size
        if actual != nbytes:
            raise DatasetFormatError(
                f"{f.name}: expected {nbytes} bytes for shape {list(shape)}, found {actual}")
        arr = np.fromfile(f, dtype="<f8").astype(np.float64, copy=False).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise DatasetFormatError(f"{f.name}: non-finite values")
        fields[name] = arr
    if "times_hex" in meta:
        times = np.array([float.fromhex(h) for h in meta["times_hex"]])
    else:
        times = meta["t0"] + meta["dt"] * np.arange(shape[0])
    grid = Grid(shape[1:], tuple(meta["domain"]["mins"]), tuple(meta["domain"]["maxs"]))
    return FieldDataset(grid, times, fields, meta.get("provenance", {}))
