"""``clf-forge`` command line.

Subcommands: ``synthesize``, ``simulate``, ``compare``, ``report``, ``demos``.
A synthesis run writes everything into one output directory; the other
subcommands read from such a directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import benchmarks
from .benchmarks import UnknownBenchmark
from .clf_learner import CandidateCLF
from .config import SynthesisConfig
from .synthesis import (ACCEPTED, BUDGET_EXHAUSTED, DEMONSTRATION_FAILED, LEARNER_INFEASIBLE, CheckpointError,
                        build_controller, load_checkpoint, resume, synthesize)

log = logging.getLogger("clf_forge")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CODES = {ACCEPTED: 0, LEARNER_INFEASIBLE: 2, DEMONSTRATION_FAILED: 3, BUDGET_EXHAUSTED: 4}

CHECKPOINT = "checkpoint.json"
LIBRARY = "demos.json"
CLF_JSON = "clf.json"
CLF_TEXT = "clf.txt"
REPORT = "report.json"
TIMINGS = "timings.json"
CONFIG = "config.json"
FALSIFIER_LOG = "falsifier.jsonl"


class UsageError(Exception):
    """Bad input that maps to exit code 1."""


def _read_mapping(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path} does not hold a mapping")
    return data


def _floats(text, name):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of numbers") from None


def config_from_args(args):
    """Benchmark defaults, overridden by the config file, overridden by flags."""
    values = _read_mapping(args.config) if args.config else {}
    name = args.benchmark or values.pop("benchmark", None) or "pendulum"
    values.pop("benchmark", None)
    flags = {"rng_seed": args.seed, "accept_n": args.accept_n, "gamma": args.gamma, "t_min": args.t_min,
             "eps0": args.eps0, "basis_degree": args.basis_degree, "even_only": args.even_only,
             "workers": args.workers}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.mode is not None:
        values["mode"] = args.mode.replace("-", "_")
    if args.clf_file:
        try:
            values["known_clf"] = CandidateCLF.load(args.clf_file).to_dict()
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise UsageError(f"cannot load CLF from {args.clf_file}: {exc}") from None
    try:
        return benchmarks.default_config(name, **values)
    except UnknownBenchmark:
        raise UsageError(f"UnknownBenchmark: {name!r} (choose from {', '.join(benchmarks.BENCHMARKS)})") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def cmd_synthesize(args):
    out = _out_dir(args.out)
    try:
        if args.resume and not (args.config or args.benchmark):
            checkpoint = load_checkpoint(args.resume)
            cfg = SynthesisConfig.from_dict(checkpoint["config"])
        else:
            cfg = config_from_args(args)
            checkpoint = load_checkpoint(args.resume) if args.resume else None
        with open(out / FALSIFIER_LOG, "w") as flog:
            if checkpoint is not None:
                result = resume(checkpoint, cfg, checkpoint_path=out / CHECKPOINT, log_file=flog)
            else:
                result = synthesize(cfg, checkpoint_path=out / CHECKPOINT, log_file=flog)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None
    except (KeyError, TypeError) as exc:
        raise UsageError(f"malformed checkpoint: {exc}") from None
    st = result.state
    _write_json(out / CONFIG, cfg.to_dict())
    _write_json(out / LIBRARY, st.db.to_dict())
    if result.candidate is not None:
        _write_json(out / CLF_JSON, result.candidate.to_dict())
        (out / CLF_TEXT).write_text(result.candidate.to_text() + "\n")
    (out / REPORT).write_text(result.report.to_json())
    _write_json(out / TIMINGS, result.timings)
    rep = result.report
    print(f"{rep.outcome}: {rep.message}")
    print(f"demonstrations {rep.demonstrations}, decrease samples {rep.decrease_simulations}, "
          f"inequalities {rep.inequalities}")
    if result.candidate is not None:
        print(result.candidate.to_text())
    return EXIT_CODES[rep.outcome]


def load_run(run_dir):
    """``(config, controller)`` from a synthesis output directory."""
    run = Path(run_dir)
    try:
        cfg = SynthesisConfig.from_dict(_read_mapping(run / CONFIG))
        library = _read_mapping(run / LIBRARY)
        candidate = _read_mapping(run / CLF_JSON)
        return cfg, build_controller(cfg, library, candidate)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{run} is not a usable synthesis output: {exc}") from None


def cmd_simulate(args):
    cfg, ctl = load_run(args.run)
    x0 = np.array(_floats(args.x0, "--x0"))
    if x0.shape != (ctl.sys.state_dim,):
        raise UsageError(f"--x0 needs {ctl.sys.state_dim} components, got {len(x0)}")
    if not ctl.region.in_D(x0):
        raise UsageError(f"--x0 {x0.tolist()} lies outside D")
    tr = ctl.run(x0, max_switches=args.max_switches, handoff_steps=args.steps)
    path = Path(args.csv) if args.csv else Path(args.run) / "trace.csv"
    tr.to_csv(path, targets=ctl.db)
    print(f"{tr.status}: {len(tr.states)} samples, {tr.switch_count} switches -> {path}")
    return EXIT_OK


def cmd_compare(args):
    from .eval import (SontagController, StaticController, baseline_region, compare, learn_sontag_clf)

    cfg, ctl = load_run(args.run)
    sys_, cost, region = benchmarks.build(cfg)
    if args.box:
        b = _floats(args.box, "--box")
        n = sys_.state_dim
        if len(b) != 2 * n:
            raise UsageError(f"--box needs {2 * n} numbers (lows then highs)")
        box = (b[:n], b[n:])
    elif cfg.benchmark in benchmarks.COMPARE_BOX:
        box = benchmarks.COMPARE_BOX[cfg.benchmark]
    else:
        raise UsageError(f"no default comparison box for {cfg.benchmark}; pass --box")
    if args.baseline_clf:
        try:
            L = CandidateCLF.load(args.baseline_clf)
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise UsageError(f"cannot load CLF from {args.baseline_clf}: {exc}") from None
    else:
        big = benchmarks.SONTAG_CLF_BOX.get(cfg.benchmark, (region.D_low, region.D_high))
        L = learn_sontag_clf(sys_, cost, baseline_region(region, big), cfg, ctl.db.weights, seed=args.seed)
    baseline = StaticController(sys_, SontagController(sys_, L), region, ctl.eq_lqr, cfg.h, cfg.eps0,
                                substeps=args.substeps)
    rep = compare(ctl, baseline, sys_, cost, region, box, args.n, args.seed, cfg.h, step_cap=args.steps)
    out = _out_dir(args.out or args.run)
    rep.to_csv(out / "compare.csv")
    rep.to_json(out / "compare.json")
    _write_json(out / "baseline_clf.json", L.to_dict())
    s = rep.summary()
    print(f"baseline CLF: {L.to_text()}")
    print(f"switching mean {s['mean_a']} ({s['failures_a']} failures), "
          f"Sontag mean {s['mean_b']} ({s['failures_b']} failures)")
    return EXIT_OK


def cmd_report(args):
    run = Path(args.run)
    rep = _read_mapping(run / REPORT)
    for key in sorted(rep):
        if key != "candidate":
            print(f"{key}: {rep[key]}")
    if rep.get("candidate"):
        print(rep["candidate"]["text"])
    if (run / TIMINGS).exists():
        for key, v in sorted(_read_mapping(run / TIMINGS).items()):
            print(f"time {key}: {v:.2f} s")
    return EXIT_OK


def cmd_demos(args):
    lib = _read_mapping(Path(args.run) / LIBRARY)
    demos = lib.get("demonstrations", [])
    print(f"{len(demos)} demonstrations, h = {lib.get('h')}")
    for i, d in enumerate(demos):
        X = np.asarray(d["states"])
        print(f"{i:4d}  {len(X):5d} samples  x0 = {np.round(X[0], 4).tolist()}  "
              f"end |x| = {np.linalg.norm(X[-1]):.4g}")
    return EXIT_OK


def _add_config_flags(p):
    p.add_argument("--benchmark", help=f"one of {', '.join(benchmarks.BENCHMARKS)}")
    p.add_argument("--config", help="YAML or JSON file with SynthesisConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--accept-n", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--t-min", type=float)
    p.add_argument("--eps0", type=float)
    p.add_argument("--basis-degree", type=int)
    p.add_argument("--even-only", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--workers", type=int)
    p.add_argument("--mode", choices=["learn-clf", "known-clf"])
    p.add_argument("--clf-file", help="CLF JSON for --mode known-clf")


def make_parser():
    parser = argparse.ArgumentParser(prog="clf-forge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="learn a CLF and a switching controller")
    _add_config_flags(p)
    p.add_argument("--out", default="clf_forge_run")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="closed-loop trace from one initial state")
    p.add_argument("--run", required=True, help="synthesis output directory")
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--steps", type=int, default=2000, help="handoff step cap")
    p.add_argument("--max-switches", type=int, default=1000)
    p.add_argument("--csv", help="trace path (default RUN/trace.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="cost comparison against the Sontag-formula baseline")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.add_argument("--box", help="lows then highs, comma-separated")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--substeps", type=int, default=10, help="RK4 substeps per sample for the baseline")
    p.add_argument("--baseline-clf", help="CLF JSON for the baseline instead of learning one")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="print a run's report")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demos", help="list a run's demonstrations")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_demos)
    return parser


def _setup_logging(verbose):
    level = os.environ.get("CLF_FORGE_LOG", "WARNING").upper()
    if verbose:
        level = "INFO" if verbose == 1 else "DEBUG"
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None):
    args = make_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
