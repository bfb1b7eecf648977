"""Command-line interface: ``hybrid-skm <command> ...``.

Every command writes CSV files and a ``<file>.manifest.json`` sidecar
recording the exact command line, configuration and seed; ``replay``
re-runs a manifest. Exit codes: 0 success, 2 bad input or configuration,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shlex
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import _common as cm
from .cle import CleConfig
from .engines import ENGINE_CODES, Engine
from .gillespie import sample_at_grid
from .inference import (Dataset, ObservationModel, ParticleDegeneracyError, Prior, pmmh,
                        synthesize_dataset, tune_particle_count, tune_scaling)
from .lna_hybrid import HybridConfig
from .manifest import RunManifest, sidecar_path
from .modelfile import ModelFile, ModelParseError, bundled_model_path, load_model_file
from .ode import OdeConfig, StiffnessError, integrate_lna
from .rng import RngStream

THREADS_ENV = "HYBRID_SKM_THREADS"
QUANTILES = (2.5, 25.0, 50.0, 75.0, 97.5)


class ConfigError(ValueError):
    pass


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be at least 1")
    return n


# -- argument groups -----------------------------------------------------------

def _add_model(p):
    p.add_argument("--model", default=None,
                   help="model file (default: the bundled autoregulatory network)")
    p.add_argument("--sc", type=float, default=None, help="value bound to 'sc' in the model")
    p.add_argument("--set", action="append", default=[], metavar="NAME=VALUE",
                   help="bind a model parameter (repeatable)")
    p.add_argument("--init", default=None, help="initial state, comma separated")


def _add_engine(p, default="hybrid-lna"):
    p.add_argument("--engine", choices=sorted(ENGINE_CODES), default=default)
    p.add_argument("--dt-hybrid", type=float, default=0.1)
    p.add_argument("--dt-integrate", type=float, default=None,
                   help="LNA integration window (default: dt-hybrid)")
    p.add_argument("--n-star", type=float, default=15.0)
    p.add_argument("--eps-star", type=float, default=0.25)
    p.add_argument("--eps-hybrid", type=float, default=0.25)
    p.add_argument("--bound-eps", type=float, default=1e-6)
    p.add_argument("--rtol", type=float, default=1e-4)
    p.add_argument("--atol", type=float, default=1e-4)
    p.add_argument("--dense-grid", type=int, default=32)
    p.add_argument("--dt-euler", type=float, default=0.005)
    p.add_argument("--rewind-shrink", type=float, default=0.5)
    p.add_argument("--min-dt-hybrid", type=float, default=None)
    p.add_argument("--max-events", type=int, default=10**8)


def _add_threads(p):
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybrid-skm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample paths and quantile bands")
    _add_model(p)
    _add_engine(p)
    _add_threads(p)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--t-end", type=float, default=50.0)
    p.add_argument("--grid", type=float, default=1.0, help="output grid spacing")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("synth-data", help="noisy observations of an exact path")
    _add_model(p)
    p.add_argument("--t-end", type=float, default=50.0)
    p.add_argument("--grid", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="data.csv")

    p = sub.add_parser("benchmark", help="mean wall-clock seconds per trajectory")
    _add_model(p)
    _add_engine(p)
    p.add_argument("--engines", default="gillespie,hybrid-lna,hybrid-sde",
                   help="comma-separated engines to time")
    p.add_argument("--sc-list", required=True, help="comma-separated sc values")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--t-end", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="benchmark.csv")

    p = sub.add_parser("tune", help="pilot run, particle count and proposal scaling")
    _add_model(p)
    _add_engine(p)
    _add_inference(p)
    p.add_argument("--pilot-particles", type=int, default=50)
    p.add_argument("--pilot-iters", type=int, default=2000)
    p.add_argument("--pilot-sd", type=float, default=0.05,
                   help="proposal sd of the pilot chain on each free log c")
    p.add_argument("--start", default=None, help="pilot start c, comma separated "
                   "(default: the model's rates)")
    p.add_argument("--window", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=25)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("infer", help="particle-marginal Metropolis-Hastings")
    _add_model(p)
    _add_engine(p)
    _add_inference(p)
    p.add_argument("--particles", type=int, required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--proposal-cov", default=None, help="CSV proposal covariance (from tune)")
    p.add_argument("--proposal-sd", type=float, default=0.05)
    p.add_argument("--start", default=None, help="initial c, comma separated")
    p.add_argument("--out", default="chain.csv")

    p = sub.add_parser("lna-trace", help="dense LNA solution from one state")
    _add_model(p)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--rtol", type=float, default=1e-4)
    p.add_argument("--atol", type=float, default=1e-4)
    p.add_argument("--dense-grid", type=int, default=32)
    p.add_argument("--out", default="lna_trace.csv")

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    return ap


def _add_inference(p):
    p.add_argument("--data", required=True)
    p.add_argument("--fix", default="", help="comma-separated rate names held fixed")
    p.add_argument("--obs", default=None, help="observation model (default: from the model)")
    p.add_argument("--seed", type=int, default=1)


# -- helpers -------------------------------------------------------------------

def _load_model(args) -> tuple[ModelFile, dict]:
    path = args.model or str(bundled_model_path())
    mf = load_model_file(path)
    bindings = {}
    if args.sc is not None:
        bindings["sc"] = args.sc
    for item in args.set:
        name, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects NAME=VALUE, got {item!r}")
        try:
            bindings[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--set {name}: {value!r} is not a number") from None
    return mf, bindings


def _network(args, bindings_extra=None):
    mf, bindings = _load_model(args)
    bindings.update(bindings_extra or {})
    net = mf.to_network(bindings)
    x0 = _floats(args.init, net.n_species, "--init") if args.init else mf.initial_state()
    return mf, net, x0


def _floats(text, n, what):
    try:
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers") from None
    if vals.size != n:
        raise ConfigError(f"{what}: expected {n} values, got {vals.size}")
    return vals


def _engine(args, name=None) -> Engine:
    dti = args.dt_integrate if args.dt_integrate is not None else args.dt_hybrid
    ode = OdeConfig(rel_tol=args.rtol, abs_tol=args.atol, dense_grid=args.dense_grid)
    hcfg = HybridConfig(dt_hybrid=args.dt_hybrid, dt_integrate=dti, N_star=args.n_star,
                        eps_star=args.eps_star, eps_hybrid=args.eps_hybrid,
                        bound_eps=args.bound_eps, ode=ode)
    ccfg = CleConfig(dt_euler=args.dt_euler, dt_hybrid=args.dt_hybrid,
                     rewind_shrink=args.rewind_shrink, min_dt_hybrid=args.min_dt_hybrid)
    return Engine(name or args.engine, hcfg, ccfg, args.max_events)


def _obs_model(mf: ModelFile, override) -> ObservationModel:
    spec = override.split() if override else list(mf.obs)
    if not spec:
        return ObservationModel()
    kind = spec[0]
    if len(spec) > 1:
        return ObservationModel(kind, float(spec[1]))
    return ObservationModel(kind)


def _threads(args) -> int:
    n = args.threads if args.threads is not None else default_threads()
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    return n


def _manifest(args, argv, outputs, **extra) -> RunManifest:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    return RunManifest(command=list(argv), config=cfg, seed=getattr(args, "seed", None),
                       outputs=[str(o) for o in outputs], **extra)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def _rate_names(mf: ModelFile) -> list[str]:
    return [rx.rate for rx in mf.reactions]


def _fixed_mask(mf: ModelFile, fix: str) -> np.ndarray:
    names = _rate_names(mf)
    mask = np.ones(len(names), dtype=bool)
    for token in filter(None, (t.strip() for t in fix.split(","))):
        if token in names:
            mask[names.index(token)] = False
        elif token.startswith("c") and token[1:].isdigit() and 1 <= int(token[1:]) <= len(names):
            mask[int(token[1:]) - 1] = False
        else:
            raise ConfigError(f"--fix: unknown rate {token!r}; known: {', '.join(names)}")
    if not mask.any():
        raise ConfigError("--fix leaves no free parameters")
    return mask


# -- commands ------------------------------------------------------------------

def cmd_simulate(args, argv):
    mf, net, x0 = _network(args)
    eng = _engine(args)
    if args.reps < 1 or not args.t_end > 0 or not args.grid > 0:
        raise ConfigError("--reps, --t-end and --grid must be positive")
    grid = args.grid * np.arange(int(np.floor(args.t_end / args.grid + 1e-9)) + 1)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = net.n_species

    def one(i):
        tr = eng.simulate(net, None, x0, args.t_end, RngStream(args.seed, i))
        if tr.metadata.get("truncated"):
            raise RuntimeError(f"replicate {i} hit the event limit ({args.max_events}) "
                               f"before t = {args.t_end}")
        return sample_at_grid(tr, grid), tr.metadata

    t0 = time.perf_counter()
    with ThreadPoolExecutor(_threads(args)) as pool:
        results = list(pool.map(one, range(args.reps)))
    elapsed = time.perf_counter() - t0
    paths = np.stack([r[0] for r in results])  # reps x times x k
    counters = {}
    for _, meta in results:
        for name in cm.COUNTER_NAMES:
            counters[name] = counters.get(name, 0) + int(meta.get(name, 0))

    traj_path = out / "trajectories.csv"
    _write_rows(traj_path, ["rep", "t", *net.species_names],
                ([i, float(t), *(float(v) for v in paths[i, j])]
                 for i in range(args.reps) for j, t in enumerate(grid)))
    outputs = [traj_path]
    for s, name in enumerate(net.species_names):
        q = np.percentile(paths[:, :, s], QUANTILES, axis=0)
        qp = out / f"quantiles_{name}.csv"
        _write_rows(qp, ["t", "q2.5", "q25", "q50", "q75", "q97.5"],
                    ([float(t), *(float(v) for v in q[:, j])] for j, t in enumerate(grid)))
        outputs.append(qp)
    man = _manifest(args, argv, outputs, counters=counters, timing={"seconds": elapsed})
    for o in outputs:
        man.write(sidecar_path(o))
    print(f"wrote {len(outputs)} files to {out} ({args.reps} paths, {elapsed:.2f} s)")
    return 0


def cmd_synth(args, argv):
    mf, net, x0 = _network(args)
    model = _obs_model(mf, None)
    ds, truth = synthesize_dataset(net, None, x0, args.t_end, args.grid, model,
                                   RngStream(args.seed, 0))
    ds.to_csv(args.out)
    truth_path = Path(args.out).with_suffix(".truth.csv")
    _write_rows(truth_path, ["t", *net.species_names],
                ([float(t), *(float(v) for v in x)] for t, x in zip(ds.times, truth)))
    man = _manifest(args, argv, [args.out, truth_path])
    man.write(sidecar_path(args.out))
    man.write(sidecar_path(truth_path))
    print(f"wrote {args.out} ({ds.times.size} observations)")
    return 0


def benchmark(net_for_sc, engines, sc_list, reps, t_end, seed, x0):
    """Mean wall-clock seconds per trajectory for each (sc, engine).

    One untimed warm-up run per engine keeps compilation out of the mean.
    """
    rows = []
    for sc in sc_list:
        net = net_for_sc(sc)
        for eng in engines:
            eng.propagate(net, x0, 0.0, min(t_end, 1.0), None, RngStream(seed, 10**9))
            counters = cm.new_counters()
            total = 0.0
            for i in range(reps):
                rng = RngStream(seed, i)
                t0 = time.perf_counter()
                eng.propagate(net, x0, 0.0, t_end, None, rng, counters)
                total += time.perf_counter() - t0
            rows.append((sc, eng.name, total / reps, reps, cm.counters_dict(counters)))
    return rows


def cmd_benchmark(args, argv):
    mf, bindings = _load_model(args)
    try:
        sc_list = [float(s) for s in args.sc_list.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("--sc-list must be comma-separated numbers") from None
    names = [e.strip() for e in args.engines.split(",") if e.strip()]
    engines = [_engine(args, n) for n in names]
    x0 = (_floats(args.init, len(mf.species), "--init") if args.init else mf.initial_state())
    rows = benchmark(lambda sc: mf.to_network({**bindings, "sc": sc}), engines, sc_list,
                     args.reps, args.t_end, args.seed, x0)
    _write_rows(args.out, ["sc", "engine", "mean_seconds", "reps"], [r[:4] for r in rows])
    counters = {f"{r[1]}@sc={r[0]:g}": r[4] for r in rows}
    _manifest(args, argv, [args.out], counters=counters).write(sidecar_path(args.out))
    for r in rows:
        print(f"sc={r[0]:g} {r[1]:<11} {r[2] * 1e3:.3f} ms")
    return 0


def _inference_setup(args):
    mf, net, x0 = _network(args)
    ds = Dataset.from_csv(args.data)
    if ds.n_species != net.n_species:
        raise ConfigError(f"dataset has {ds.n_species} species, model has {net.n_species}")
    model = _obs_model(mf, args.obs)
    mask = _fixed_mask(mf, args.fix)
    c0 = net.rate_constants.copy()
    if args.start:
        c0 = _floats(args.start, net.n_reactions, "--start")
    return mf, net, x0, ds, model, mask, c0


def cmd_tune(args, argv):
    mf, net, x0, ds, model, mask, c0 = _inference_setup(args)
    eng = _engine(args)
    prior = Prior()
    d = int(mask.sum())
    rng = RngStream(args.seed, 0)
    t0 = time.perf_counter()
    pilot = pmmh(net, eng, ds, model, prior, c0, args.pilot_iters, args.pilot_particles,
                 args.pilot_sd**2 * np.eye(d), mask, rng, x0=x0)
    c_hat = np.exp(np.median(pilot.log_c, axis=0))
    report = []
    n_sel = tune_particle_count(net, eng, ds, model, c_hat, RngStream(args.seed, 1),
                                repeats=args.repeats, x0=x0, report=report)
    state = {"theta": pilot.log_c[-1].copy()}

    def run_window(cov, n):
        ch = pmmh(net, eng, ds, model, prior, np.exp(state["theta"]), n, n_sel, cov, mask,
                  RngStream(args.seed, 2 + run_window.calls), x0=x0)
        run_window.calls += 1
        state["theta"] = ch.log_c[-1].copy()
        return ch

    run_window.calls = 0
    scal = tune_scaling(pilot, run_window, window=args.window)
    elapsed = time.perf_counter() - t0
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cov_path = out / "proposal_cov.csv"
    np.savetxt(cov_path, scal.proposal_cov, delimiter=",", fmt="%.17g")
    rep_path = out / "tune_report.txt"
    free = [n for n, m in zip(_rate_names(mf), mask) if m]
    lines = [f"engine: {eng.name}", f"pilot_particles: {args.pilot_particles}",
             f"pilot_iterations: {args.pilot_iters}",
             f"pilot_acceptance: {pilot.acceptance_rate:.4f}",
             "c_hat: " + ", ".join(f"{n}={v:.6g}" for n, v in zip(_rate_names(mf), c_hat)),
             "var_log_c_free (" + ", ".join(free) + "):"]
    lines += ["  " + ", ".join(f"{v:.6g}" for v in row) for row in scal.var_c]
    lines.append("particle_count_search:")
    lines += [f"  N={n} var_loglik={v:.4g}" for n, v in report]
    lines.append(f"particles: {n_sel}")
    lines.append("scaling_windows:")
    lines += [f"  gamma={g:.5g} acceptance={a:.4f}" for g, a in scal.window_rates]
    lines.append(f"gamma: {scal.gamma:.6g}")
    rep_path.write_text("\n".join(lines) + "\n")
    man = _manifest(args, argv, [cov_path, rep_path], timing={"seconds": elapsed})
    man.write(sidecar_path(cov_path))
    man.write(sidecar_path(rep_path))
    print("\n".join(lines))
    return 0


def cmd_infer(args, argv):
    mf, net, x0, ds, model, mask, c0 = _inference_setup(args)
    eng = _engine(args)
    d = int(mask.sum())
    if args.proposal_cov:
        cov = np.atleast_2d(np.loadtxt(args.proposal_cov, delimiter=","))
        if cov.shape != (d, d):
            raise ConfigError(f"proposal covariance must be {d} x {d}, got {cov.shape}")
    else:
        cov = args.proposal_sd**2 * np.eye(d)
    chain = pmmh(net, eng, ds, model, Prior(), c0, args.iters, args.particles, cov, mask,
                 RngStream(args.seed, 0), x0=x0)
    chain.to_csv(args.out)
    summary = chain.summary()
    names = _rate_names(mf)
    summary["parameters"] = {names[int(k.rsplit("_", 1)[1]) - 1]: v
                             for k, v in summary["parameters"].items()}
    sum_path = Path(args.out).with_suffix(".summary.json")
    sum_path.write_text(json.dumps(summary, indent=2) + "\n")
    man = _manifest(args, argv, [args.out, sum_path], timing={"seconds": chain.elapsed})
    man.write(sidecar_path(args.out))
    man.write(sidecar_path(sum_path))
    print(f"acceptance {summary['acceptance_rate']:.3f}, min ESS/s "
          f"{summary['min_ess_per_sec']:.3g}")
    for name, s in summary["parameters"].items():
        print(f"log {name}: median {s['median']:.4f} 95% [{s['lo95']:.4f}, {s['hi95']:.4f}]")
    return 0


def cmd_lna_trace(args, argv):
    mf, net, x0 = _network(args)
    ode = OdeConfig(rel_tol=args.rtol, abs_tol=args.atol, dense_grid=args.dense_grid)
    _, dense, _ = integrate_lna(net, None, None, x0, args.dt, ode)
    _write_rows(args.out, dense.header(), dense.rows())
    _manifest(args, argv, [args.out]).write(sidecar_path(args.out))
    print(f"wrote {args.out} ({dense.times.size} points)")
    return 0


def cmd_replay(args, argv):
    man = RunManifest.read(args.manifest)
    if not man.command or man.command[0] == "replay":
        raise ConfigError("manifest does not record a replayable command")
    print("replaying: hybrid-skm " + " ".join(shlex.quote(a) for a in man.command))
    return main(man.command)


COMMANDS = {"simulate": cmd_simulate, "synth-data": cmd_synth, "benchmark": cmd_benchmark,
            "tune": cmd_tune, "infer": cmd_infer, "lna-trace": cmd_lna_trace,
            "replay": cmd_replay}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        return COMMANDS[args.command](args, argv)
    except (StiffnessError, ParticleDegeneracyError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ModelParseError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
