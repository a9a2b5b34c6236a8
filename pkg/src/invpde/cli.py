"""Batch front end: gen -> degrade -> discover -> simulate -> eval -> report.

Every command writes a ``run.json`` echoing its full configuration.  Exit
codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import NoiseSpec, SampleSpec, add_noise, downsample, load_dataset, sample_points, save_dataset
from .engine import DiscoveredPde, DiscoveryDiverged, discover, discover_baseline, preset_schedule
from .evaluation import coefficient_report, equation_residual, relative_error, write_series_csv
from .solvers import SolverBlowup, SolverConfig, simulate_discovered, solve
from .surrogate import MlpSpec
from .terms import LibraryMode, Target, build_library, make_vars, scalar_vars, velocity_vars

log = logging.getLogger("invpde")

PDE_ALIASES = {"burgers2d": "burgers2d", "burgers": "burgers2d", "kg": "klein_gordon",
               "klein-gordon": "klein_gordon", "coupled-kg": "coupled_kg", "taylor-green": "taylor_green_ns",
               "ns2d": "ns2d"}

# per pde: variables, default library, target, truth coefficients from the solver config
PROBLEMS = {
    "burgers2d": dict(vars=lambda: velocity_vars(), library="galilean", target=Target.FIRST,
                      truth=lambda c: {"u": {"u*u_x": -1, "v*u_y": -1, "u_xx": c["nu"], "u_yy": c["nu"]},
                                       "v": {"u*v_x": -1, "v*v_y": -1, "v_xx": c["nu"], "v_yy": c["nu"]}}),
    "klein_gordon": dict(vars=lambda: scalar_vars(["phi"]), library="lorentz", target=Target.SECOND,
                         truth=lambda c: {"phi": {"phi": c["a1"], "phi^3": c["b1"], "phi_xx": c["d1"],
                                                  "phi_yy": c["d1"]}}),
    "coupled_kg": dict(vars=lambda: scalar_vars(["phi1", "phi2"]), library="lorentz", target=Target.SECOND,
                       truth=lambda c: {
                           "phi1": {"phi1": c["a2"], "phi1^3": c["b2"], "phi1*phi2^2": c["b2"],
                                    "phi1_xx": c["c2"], "phi1_yy": c["c2"]},
                           "phi2": {"phi2": c["a2"], "phi2^3": c["b2"], "phi1^2*phi2": c["b2"],
                                    "phi2_xx": c["c2"], "phi2_yy": c["c2"]}}),
    "taylor_green_ns": dict(vars=lambda: velocity_vars(pressure="p"), library="galilean", target=Target.FIRST,
                            truth=lambda c: _ns_truth(c)),
    "ns2d": dict(vars=lambda: velocity_vars(pressure="p"), library="galilean", target=Target.FIRST,
                 truth=lambda c: _ns_truth(c)),
}

PRESET_FOR = {"burgers2d": "burgers", "klein_gordon": "kg", "coupled_kg": "coupled-kg",
              "taylor_green_ns": "ns-taylor-green", "ns2d": "ns-taylor-green"}


def _ns_truth(c):
    nu = 1.0 / c["Re"]
    return {"u": {"u*u_x": -1, "v*u_y": -1, "p_x": -1, "u_xx": nu, "u_yy": nu},
            "v": {"u*v_x": -1, "v*v_y": -1, "p_y": -1, "v_xx": nu, "v_yy": nu}}


def truth_pde(solver: str, config: dict) -> DiscoveredPde:
    prob = PROBLEMS[solver]
    return DiscoveredPde.from_strings(prob["truth"](config), prob["vars"](), 2, prob["target"])


def _dataset_solver(ds) -> str:
    name = ds.meta.get("solver") or ds.meta.get("config", {}).get("pde")
    if name not in PROBLEMS:
        raise ValueError(f"dataset does not record a known generator (found {name!r})")
    return name


def _write_run(out: Path, command: str, args: argparse.Namespace, extra: dict | None = None) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "command", "verbose")}
    rec = {"command": command, "version": __version__, "args": cfg}
    if extra:
        rec.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(json.dumps(rec, indent=2, default=_jsonable))


def _jsonable(o):
    if isinstance(o, (np.generic,)):
        return o.item()
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


# --- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    pde = PDE_ALIASES[args.pde]
    overrides = {f.name: getattr(args, f.name) for f in fields(SolverConfig)
                 if getattr(args, f.name, None) is not None and f.name not in ("pde",)}
    cfg = SolverConfig(pde=pde, n=args.nx, dt_output=args.dt_out, t_end=args.t_end, substeps=args.substeps,
                       **{k: v for k, v in overrides.items() if k not in ("n", "dt_output", "t_end", "substeps")})
    t0 = time.perf_counter()
    ds = solve(cfg)
    save_dataset(ds, args.out)
    _write_run(Path(args.out), "gen", args, {"solver_config": cfg.to_dict(), "elapsed_s": time.perf_counter() - t0})
    print(f"wrote {args.out}: {ds.shape} {ds.var_names}")
    return 0


def cmd_degrade(args) -> int:
    ds = load_dataset(args.input)
    if args.downsample > 1:
        ds = downsample(ds, args.downsample)
    if args.noise > 0:
        ds = add_noise(ds, NoiseSpec(args.noise, args.seed))
    save_dataset(ds, args.out)
    _write_run(Path(args.out), "degrade", args)
    print(f"wrote {args.out}: {ds.shape}")
    return 0


def _library_for(solver: str, mode: str | None):
    prob = PROBLEMS[solver]
    mode = LibraryMode(mode or prob["library"])
    return build_library(mode, prob["vars"](), 2, target=prob["target"])


def cmd_discover(args) -> int:
    if args.workers != 1:
        log.warning("--workers %d: runs are single-threaded and deterministic; extra workers are unused",
                    args.workers)
    ds = load_dataset(args.input)
    solver = _dataset_solver(ds)
    library = _library_for(solver, args.library)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    lo, hi = args.time_range if args.time_range else (0, len(ds.times))
    if args.method == "stridge-only":
        win = args.deriv_window
        tidx = np.arange(max(lo, win), min(hi, len(ds.times) - win))
        if args.snapshots and args.snapshots < tidx.size:
            tidx = np.sort(np.random.default_rng(args.sample_seed).choice(tidx, args.snapshots, replace=False))
        pde = discover_baseline(ds, library, args.deriv_method, window=win, degree=args.deriv_degree,
                                time_index=tidx, seed=args.seed)
        run = None
        extra = {}
    else:
        schedule = preset_schedule(args.preset or PRESET_FOR[solver])
        if args.no_prune:
            schedule.prune = False
        if args.adam_iters is not None:
            for s in schedule.stages:
                if s.optimizer == "adam":
                    s.iters = args.adam_iters
        if args.lbfgs_iters is not None:
            for s in schedule.stages:
                if s.optimizer == "lbfgs":
                    s.iters = args.lbfgs_iters
        sample = SampleSpec(args.snapshots or (hi - lo), n_spatial_points=args.points, seed=args.sample_seed,
                            time_range=(lo, hi))
        train = sample_points(ds, sample)
        spec = MlpSpec(1 + ds.grid.dim, len(library.variables), args.hidden_layers, args.width)
        try:
            pde, run, model = discover(train, library, spec, schedule, seed=args.seed, return_model=True)
        except DiscoveryDiverged as exc:
            if exc.checkpoint is not None:
                (out / "pde_checkpoint.json").write_text(exc.checkpoint.to_json())
            raise
        run.to_csv(out / "history.csv")
        (out / "prunes.json").write_text(json.dumps(run.prunes, indent=2, default=_jsonable))
        model.save(out / "surrogate")
        extra = {"schedule": schedule.to_dict(), "sample": asdict(sample), "network": asdict(spec),
                 "train_snapshots": sorted({int(i) for i in train.time_index})}
    pde.provenance["dataset"] = str(args.input)
    # wall-clock time goes to run.json only, so pde.json is reproducible bit for bit
    pde.provenance.pop("elapsed_s", None)
    (out / "pde.json").write_text(pde.to_json())
    (out / "pde.txt").write_text(pde.render() + "\n")
    (out / "library.json").write_text(library.to_json())
    extra["elapsed_s"] = time.perf_counter() - t0
    extra["status"] = pde.status
    _write_run(out, "discover", args, extra)
    print(pde.render())
    return 0


def _load_pde(path: Path) -> DiscoveredPde:
    d = json.loads(Path(path).read_text())
    lib_path = Path(path).parent / "library.json"
    from .terms import Library
    lib = Library.from_json(lib_path.read_text())
    return DiscoveredPde.from_dict(d, lib.variables, lib.dim)


def cmd_simulate(args) -> int:
    pde = _load_pde(Path(args.pde))
    ds = load_dataset(args.data)
    start = args.start
    ic = ds.slice_time(start, start + 1)
    n_out = args.steps if args.steps else len(ds.times) - start
    cfg = SolverConfig(pde=ds.meta.get("solver", "burgers2d"), n=ds.grid.shape[0],
                       dt_output=ds.dt, t_end=ds.dt * (n_out - 1), substeps=args.substeps)
    velocity = None
    if pde.target is Target.SECOND:
        if start == 0:
            velocity = {n: np.zeros(ds.grid.shape) for n in pde.equations}
        else:
            velocity = {n: (ds.fields[n][start + 1] - ds.fields[n][start - 1]) / (2 * ds.dt) for n in pde.equations}
    sim = simulate_discovered(pde, ic, cfg, velocity)
    save_dataset(sim, args.out)
    _write_run(Path(args.out), "simulate", args)
    print(f"wrote {args.out}: {sim.shape}")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = {}
    truth_ds = load_dataset(args.truth)
    if args.pred:
        pred = load_dataset(args.pred)
        truth = truth_ds.slice_time(args.truth_start, args.truth_start + len(pred.times))
        truth.times[:] = pred.times
        eps, flagged = relative_error(pred, truth)
        write_series_csv(out / "eps_t.csv", pred.times, {"eps_t": eps, "flagged": flagged.astype(float)})
        result["eps_t_mean"] = float(np.nanmean(eps))
        result["eps_t_max"] = float(np.nanmax(eps))
    if args.pde:
        pde = _load_pde(Path(args.pde))
        solver = _dataset_solver(truth_ds)
        truth = truth_pde(solver, truth_ds.meta["config"])
        rep = coefficient_report(pde, truth)
        test_idx = _held_out(args, truth_ds)
        rep.residual_test = equation_residual(truth_ds, pde, test_idx)
        result.update(rep.to_dict())
        (out / "report.md").write_text(rep.to_markdown() + "\n")
    (out / "eval.json").write_text(json.dumps(result, indent=2, default=_jsonable))
    _write_run(out, "eval", args)
    print(json.dumps({k: v for k, v in result.items() if not isinstance(v, list)}, indent=2, default=_jsonable))
    return 0


def _held_out(args, ds) -> np.ndarray:
    """Snapshot indices not used for training (falls back to every 10th)."""
    nt = len(ds.times)
    win = 3
    cand = np.arange(win, nt - win)
    used = set()
    run_json = Path(args.pde).parent / "run.json"
    if run_json.exists():
        used = set(json.loads(run_json.read_text()).get("train_snapshots", []))
    free = np.array([i for i in cand if i not in used])
    if args.test_snapshots and free.size > args.test_snapshots:
        free = free[np.linspace(0, free.size - 1, args.test_snapshots).astype(int)]
    return free


def cmd_report(args) -> int:
    rows = []
    for d in args.runs:
        d = Path(d)
        run = json.loads((d / "run.json").read_text())
        pde = json.loads((d / "pde.json").read_text())
        ev = json.loads((d / "eval.json").read_text()) if (d / "eval.json").exists() else {}
        label = run["args"].get("label") or d.name
        eqs = "<br>".join(_render_row(e, terms) for e, terms in pde["equations"].items())
        res = ev.get("residual_test", {})
        rows.append((label, eqs, ev.get("max_rel_error"), res))
    lines = ["| run | discovered equations | max rel. coef. error | held-out residual RMS |",
             "|---|---|---|---|"]
    for label, eqs, err, res in rows:
        e = "n/a" if err is None else f"{err:.2%}"
        r = ", ".join(f"{k}: {v:.3e}" for k, v in res.items()) or "n/a"
        lines.append(f"| {label} | {eqs} | {e} | {r} |")
    text = "\n".join(lines) + "\n"
    Path(args.out).write_text(text)
    print(text)
    return 0


def _render_row(eq, terms):
    parts = [f"{c:+.4g}·{t}" if t != "1" else f"{c:+.4g}" for t, c in terms if c != 0.0]
    return f"{eq}: " + " ".join(parts)


COMMANDS = {"gen": cmd_gen, "degrade": cmd_degrade, "discover": cmd_discover, "simulate": cmd_simulate,
            "eval": cmd_eval, "report": cmd_report}


def cmd_rerun(args) -> int:
    """Repeat the command recorded in a ``run.json``, optionally into another directory."""
    rec = json.loads(Path(args.run_json).read_text())
    if rec.get("command") not in COMMANDS:
        raise ValueError(f"{args.run_json}: unknown recorded command {rec.get('command')!r}")
    ns = argparse.Namespace(**rec["args"])
    for k, v in vars(ns).items():
        if isinstance(v, list) and k in ("time_range",):
            setattr(ns, k, tuple(v))
    if args.out:
        ns.out = args.out
    return COMMANDS[rec["command"]](ns)


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invpde", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="simulate a reference dataset")
    g.add_argument("pde", choices=sorted(PDE_ALIASES))
    g.add_argument("--out", required=True)
    g.add_argument("--nx", type=int, default=256)
    g.add_argument("--dt-out", type=float, default=0.01)
    g.add_argument("--t-end", type=float, default=4.0)
    g.add_argument("--substeps", type=int, default=10)
    for name in ("nu", "a1", "b1", "d1", "a2", "b2", "c2", "A1", "B1", "C1", "D1", "A2", "B2", "A3", "B3",
                 "Re", "ns_perturb"):
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    g.add_argument("--ns-seed", dest="ns_seed", type=int)
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("degrade", help="downsample and add noise")
    d.add_argument("input")
    d.add_argument("--out", required=True)
    d.add_argument("--downsample", type=int, default=1)
    d.add_argument("--noise", type=float, default=0.0)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_degrade)

    s = sub.add_parser("discover", help="discover the governing equation")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--library", choices=[m.value for m in LibraryMode])
    s.add_argument("--method", choices=["icnet", "stridge-only"], default="icnet")
    s.add_argument("--no-prune", action="store_true")
    s.add_argument("--preset", choices=["burgers", "burgers-noisy", "kg", "coupled-kg", "ns-taylor-green"])
    s.add_argument("--snapshots", type=int)
    s.add_argument("--points", type=int, help="spatial points per snapshot (default: all)")
    s.add_argument("--time-range", type=int, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--sample-seed", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--hidden-layers", type=int, default=4)
    s.add_argument("--width", type=int, default=40)
    s.add_argument("--adam-iters", type=int)
    s.add_argument("--lbfgs-iters", type=int)
    s.add_argument("--deriv-method", choices=["spectral", "poly"], default="spectral")
    s.add_argument("--deriv-window", type=int, default=3)
    s.add_argument("--deriv-degree", type=int, default=4)
    s.add_argument("--label")
    s.add_argument("--workers", type=int, default=int(os.environ.get("INVPDE_WORKERS", "1")))
    s.set_defaults(func=cmd_discover)

    m = sub.add_parser("simulate", help="integrate a discovered equation from the data's initial slice")
    m.add_argument("pde", help="pde.json written by discover")
    m.add_argument("--data", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--start", type=int, default=0)
    m.add_argument("--steps", type=int)
    m.add_argument("--substeps", type=int, default=10)
    m.set_defaults(func=cmd_simulate)

    e = sub.add_parser("eval", help="relative error, coefficient report and residuals")
    e.add_argument("--truth", required=True, help="reference dataset")
    e.add_argument("--pred", help="simulated dataset to compare")
    e.add_argument("--truth-start", type=int, default=0)
    e.add_argument("--pde", help="pde.json to score against the generator's equation")
    e.add_argument("--test-snapshots", type=int, default=20)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="merge runs into a Markdown table")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    rr = sub.add_parser("rerun", help="repeat the command recorded in a run.json")
    rr.add_argument("run_json")
    rr.add_argument("--out", help="write to this directory instead of the recorded one")
    rr.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    env_out = os.environ.get("INVPDE_OUTPUT_DIR")
    if env_out and getattr(args, "out", None) and not os.path.isabs(args.out):
        args.out = os.path.join(env_out, args.out)
    try:
        return args.func(args)
    except (DiscoveryDiverged, SolverBlowup, FloatingPointError) as exc:
        print(f"error: computation failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
