"""Command-line entry point: ``lrssb {generate,recover,refine,experiment,ktight,params}``.

Capital ``--Delta`` is the regressor margin; ``--event-delta`` is the
localization parameter. Exit code 2 signals a structural error.
"""

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .harness import ExperimentConfig, k_tight_experiment, param_report, run_experiment, write_k_tight_csv
from .model import ProblemParams, RegimeWarning, StructuralError, generate, load_batch, save_batch
from .moments import save_stats_csv
from .net import NetTooLarge
from .recovery import RecoveryConfig, RecoveryError, TheoryConstants, recover
from .refine import refine, save_trace_csv
from .subspace import save_basis_csv


def _floats(text):
    return [float(v) for v in text.split(",")]


def _add_problem(p, need_nk=True):
    if need_nk:
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--k", type=int, required=True)
    p.add_argument("--Delta", type=float, default=1.0)
    p.add_argument("--B", type=float, default=2.0)
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--lam", type=float, default=0.01)


def _add_constants(p):
    for name, default in (("C", 4.0), ("c1", 1.0), ("c2", 1.0), ("c3", 1.0)):
        p.add_argument(f"--{name}", type=float, default=default)


def _constants(args):
    return TheoryConstants(args.C, args.c1, args.c2, args.c3)


def _problem(args, n=None, k=None):
    return ProblemParams(n or args.n, k or args.k, args.Delta, args.B, args.epsilon, args.lam)


def _parser():
    ap = argparse.ArgumentParser(prog="lrssb", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a sample batch")
    g.add_argument("--config", help="experiment config JSON supplying regressors and noise")
    _add_problem(g, need_nk=False)
    g.add_argument("--n", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--generator", default="orthogonal",
                   choices=["orthogonal", "k_tight_construction", "random_valid"])
    g.add_argument("--regressors", help="CSV with one regressor per row (overrides --generator)")
    g.add_argument("--norm", type=float, default=1.5)
    g.add_argument("--noise", default="independent_gaussian",
                   choices=["independent_gaussian", "independent_uniform", "independent_scaled_rademacher",
                            "shared_scalar"])
    g.add_argument("--scale", type=float, default=0.3)
    g.add_argument("--law", default="gaussian")
    g.add_argument("--m", type=int, default=100000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--allow-invalid", action="store_true")
    g.add_argument("--out", required=True, help=".csv or .npz")

    r = sub.add_parser("recover", help="estimate the regressors from a batch")
    r.add_argument("--batch", required=True)
    r.add_argument("--k", type=int)
    _add_problem(r, need_nk=False)
    r.add_argument("--mode", choices=["theory", "practical"], default="practical")
    r.add_argument("--t", type=float)
    r.add_argument("--gamma", type=float)
    r.add_argument("--event-delta", type=float)
    r.add_argument("--resolution", type=float)
    r.add_argument("--count-floor", type=int, default=50)
    r.add_argument("--max-net-points", type=int, default=10**7)
    _add_constants(r)
    r.add_argument("--out", help="report JSON (stdout if omitted)")
    r.add_argument("--stats-csv")
    r.add_argument("--basis-csv")

    f = sub.add_parser("refine", help="alternating minimization from a warm start")
    f.add_argument("--batch", required=True)
    f.add_argument("--warm-start", required=True, help="recover report JSON or CSV of vectors")
    f.add_argument("--max-iters", type=int, default=50)
    f.add_argument("--tol", type=float, default=1e-3)
    f.add_argument("--force", action="store_true")
    f.add_argument("--trace-csv")
    f.add_argument("--out")

    e = sub.add_parser("experiment", help="run a JSON-configured experiment over its seeds")
    e.add_argument("--config", required=True)
    e.add_argument("--output-dir")

    kt = sub.add_parser("ktight", help="observation frequency on the tight construction")
    kt.add_argument("--B", type=float, default=2.0)
    kt.add_argument("--Delta", type=float, default=1.0)
    kt.add_argument("--k-list", default="4,16,64")
    kt.add_argument("--m", type=int, default=10**6)
    kt.add_argument("--seed", type=int, default=0)
    kt.add_argument("--out")

    pr = sub.add_parser("params", help="theory-mode parameter derivation table")
    _add_problem(pr)
    _add_constants(pr)
    pr.add_argument("--json", action="store_true")
    return ap


def _cmd_generate(args):
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        ws, noise, m = cfg.build_regressors(), cfg.build_noise(), cfg.m
    else:
        if args.regressors:
            vecs = np.loadtxt(args.regressors, delimiter=",", ndmin=2)
            k, n = vecs.shape
            spec = {"vectors": vecs.tolist()}
        else:
            if args.n is None or args.k is None:
                raise StructuralError("--n and --k are required without --regressors or --config")
            n, k = args.n, args.k
            spec = {"generator": args.generator, "norm": args.norm}
        cfg = ExperimentConfig(_problem(args, n, k), spec,
                               {"kind": args.noise, "scales": [args.scale] * (1 if args.noise == "shared_scalar" else k),
                                "law": args.law if args.noise == "shared_scalar" else None},
                               args.m, mode="theory", require_valid=not args.allow_invalid)
        ws, noise, m = cfg.build_regressors(), cfg.build_noise(), args.m
    path = save_batch(generate(ws, noise, m, args.seed), args.out)
    np.savetxt(Path(path).with_suffix(".regressors.csv"), ws.vectors, delimiter=",", fmt="%.17g")
    print(f"wrote {m} samples to {path}")
    return 0


def _cmd_recover(args):
    batch = load_batch(args.batch)
    k = args.k or batch.k
    if not k:
        raise StructuralError("batch header has no k; pass --k")
    problem = _problem(args, batch.n, k)
    cfg = RecoveryConfig(mode=args.mode, t=args.t, gamma=args.gamma, delta=args.event_delta,
                         net_resolution=args.resolution, constants=_constants(args),
                         count_floor=args.count_floor, max_net_points=args.max_net_points)
    rep = recover(batch, problem, config=cfg)
    text = json.dumps({**rep.to_dict(), "timings_ms": rep.timings_ms}, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    if args.stats_csv:
        save_stats_csv(rep.stats, args.stats_csv)
    if args.basis_csv:
        from .subspace import SubspaceEstimate
        save_basis_csv(SubspaceEstimate(rep.basis, rep.eigenvalues, rep.bulk_level), args.basis_csv)
    return 0


def _load_warm_start(path):
    if str(path).endswith(".json"):
        return np.array(json.loads(Path(path).read_text())["estimates"], dtype=float)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _cmd_refine(args):
    batch = load_batch(args.batch)
    trace = []
    state = refine(batch, _load_warm_start(args.warm_start), args.max_iters, args.tol, args.force, trace=trace)
    out = {"estimates": state.estimates.tolist(), "iteration": state.iteration, "converged": state.converged,
           "residual_rms": state.residual_rms, "flags": list(state.flags)}
    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    if args.trace_csv:
        save_trace_csv(trace, args.trace_csv)
    return 0


def _cmd_experiment(args):
    cfg = ExperimentConfig.load(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    res = run_experiment(cfg)
    for r in res.seeds:
        status = "ok" if r.success else f"fail ({r.error_stage or 'accuracy'})"
        print(f"seed {r.seed}: max_error={r.max_error:.4g} {status}")
    print(f"success rate {res.success_rate:.2f} [{res.config_hash}]")
    return 0


def _cmd_ktight(args):
    rows = k_tight_experiment(args.B, args.Delta, [int(v) for v in args.k_list.split(",")], args.m, args.seed)
    if args.out:
        write_k_tight_csv(rows, args.out)
    print("k,frequency,std_error")
    for k, freq, se in rows:
        print(f"{k},{freq:.6g},{se:.3g}")
    return 0


def _cmd_params(args):
    text, data = param_report(_problem(args), _constants(args))
    print(json.dumps(data, indent=1) if args.json else text)
    return 0


COMMANDS = {"generate": _cmd_generate, "recover": _cmd_recover, "refine": _cmd_refine,
            "experiment": _cmd_experiment, "ktight": _cmd_ktight, "params": _cmd_params}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    warnings.simplefilter("always", RegimeWarning)
    try:
        return COMMANDS[args.command](args)
    except (StructuralError, RecoveryError, NetTooLarge, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
