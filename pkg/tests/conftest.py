"""Shared fixtures; expensive datasets are cached under pytest's cache directory."""
import hashlib
import json
from pathlib import Path

import pytest
from hypothesis import settings

import invpde
from invpde.data import load_dataset, save_dataset
from invpde.solvers import SolverConfig, solve

# fixed example sequence so property tests are reproducible run to run
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

SRC = Path(invpde.__file__).parent


def _source_digest(*modules):
    h = hashlib.sha256()
    for m in modules:
        h.update((SRC / m).read_bytes())
    return h.hexdigest()[:12]


def cached_solve(cache, cfg: SolverConfig):
    """Solve once per (config, solver source) and reuse the dataset from disk."""
    key = hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()[:12]
    path = Path(cache.mkdir("invpde-datasets")) / f"{cfg.pde}-{key}-{_source_digest('solvers.py', 'data.py')}"
    if (path / "meta.json").exists():
        return load_dataset(path)
    ds = solve(cfg)
    save_dataset(ds, path)
    return ds


@pytest.fixture(scope="session")
def dataset_cache(request):
    return lambda cfg: cached_solve(request.config.cache, cfg)


@pytest.fixture(scope="session")
def burgers_256(dataset_cache):
    """Reference Burgers run at 256^2 on t in [0, 2.2]."""
    return dataset_cache(SolverConfig(n=256, t_end=2.2))


@pytest.fixture(scope="session")
def kg_256(dataset_cache):
    """Reference single Klein-Gordon run at 256^2 on t in [0, 2]."""
    return dataset_cache(SolverConfig(pde="klein_gordon", n=256, t_end=2.0))


# --- acceptance reporting ---------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Append one PASS/FAIL line to the acceptance summary printed at the end of the session."""
    def _record(ok: bool, label: str, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def source_digest() -> str:
    """Digest of every package module; cached discovery runs are invalidated by any code change."""
    return _source_digest(*sorted(p.name for p in SRC.glob("*.py")))
