"""Command-line entry point: ``logbo <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import oracles
from .acq_analytic import ANALYTIC_NAMES, SIGMA_FLOOR, AnalyticAcquisition, IncumbentState
from .acq_mc import MCAcquisition
from .harness import ACQUISITIONS, RunConfig, grad_vanish_experiment, read_results, run_bo, summarize
from .surrogate import models_from_json
from .testbed import get_problem, problem_names


class UsageError(Exception):
    pass


def _registry_text() -> str:
    return ("problems: " + ", ".join(problem_names()) + "\n"
            "acquisitions: " + ", ".join(ACQUISITIONS))


# flag -> RunConfig path; nested paths go into temperatures / optim
_RUN_FLAGS = {
    "problem": ("problem",), "acquisition": ("acquisition",), "q": ("q",), "iterations": ("iterations",),
    "n_init": ("n_init",), "replicates": ("replicates",), "seed": ("seed",),
    "noise_fraction": ("noise_fraction",), "num_samples": ("num_samples",), "output": ("output",),
    "timing": ("timing",), "canonical": ("fat",),
    "tau_0": ("temperatures", "tau_0"), "tau_max": ("temperatures", "tau_max"),
    "tau_cons": ("temperatures", "tau_cons"),
    "n_restarts": ("optim", "n_restarts"), "raw_candidates": ("optim", "raw_candidates"),
    "init_strategy": ("optim", "init_strategy"), "max_iters": ("optim", "max_iters"),
    "grad_tol": ("optim", "grad_tol"), "mode": ("optim", "mode"),
}


def _add_bench(sub):
    p = sub.add_parser("bench", help="run the BO loop and write a CSV", epilog=_registry_text(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="JSON RunConfig; flags override its fields")
    p.add_argument("--problem")
    p.add_argument("--acquisition", "--acq", dest="acquisition")
    p.add_argument("--q", type=int)
    p.add_argument("--iterations", "--iters", dest="iterations", type=int)
    p.add_argument("--n-init", dest="n_init", type=int)
    p.add_argument("--replicates", "--reps", dest="replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-fraction", dest="noise_fraction", type=float)
    p.add_argument("--num-samples", dest="num_samples", type=int)
    p.add_argument("--tau-0", "--tau0", dest="tau_0", type=float)
    p.add_argument("--tau-max", dest="tau_max", type=float)
    p.add_argument("--tau-cons", dest="tau_cons", type=float)
    p.add_argument("--n-restarts", "--restarts", dest="n_restarts", type=int)
    p.add_argument("--raw-candidates", dest="raw_candidates", type=int)
    p.add_argument("--init-strategy", "--init", dest="init_strategy", choices=["uniform", "boltzmann"])
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--grad-tol", dest="grad_tol", type=float)
    p.add_argument("--mode", choices=["joint", "sequential_greedy"])
    p.add_argument("--canonical", action="store_const", const=False, default=None,
                   help="use canonical softplus/logsumexp instead of the fat-tailed defaults")
    p.add_argument("--timing", action="store_const", const=True, default=None,
                   help="record wall-clock ms (output no longer byte-reproducible)")
    p.add_argument("--output", "--out", dest="output")
    p.add_argument("--jobs", type=int, default=1, help="parallel replicate workers")
    p.set_defaults(func=cmd_bench)


def resolve_run_config(args) -> RunConfig:
    base: dict = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot load config {args.config}: {err}") from err
    base.setdefault("temperatures", {})
    base.setdefault("optim", {})
    for flag, path in _RUN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if len(path) == 1:
            base[path[0]] = v
        else:
            base[path[0]][path[1]] = v
    for key in ("problem", "acquisition"):
        if key not in base:
            raise UsageError(f"--{key} is required (or give it in --config)")
    try:
        get_problem(base["problem"])
        return RunConfig.from_dict(base)
    except (KeyError, ValueError, TypeError) as err:
        msg = err.args[0] if err.args else str(err)
        raise UsageError(f"{msg}\n{_registry_text()}") from err


def cmd_bench(args) -> int:
    cfg = resolve_run_config(args)
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    print(cfg.to_json())
    records = run_bo(cfg, jobs=args.jobs)
    final = {}
    for r in records:
        final[r.replicate] = r.best
    for rep in sorted(final):
        print(f"replicate {rep}: final best {final[rep]!r}")
    if any(r.phase == "failed" for r in records):
        print("warning: some replicates failed; see rows with phase=failed", file=sys.stderr)
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from err


def _add_gradfrac(sub):
    p = sub.add_parser("gradfrac", help="fraction of points with vanishing EI / LogEI gradients")
    p.add_argument("--dims", "--d", dest="dims", type=_int_list, default=[2, 8, 16])
    p.add_argument("--ns", "--n", dest="ns", type=_int_list, default=[10, 20, 40, 80])
    p.add_argument("--replicates", "--reps", dest="replicates", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-test", dest="n_test", type=int, default=2000)
    p.add_argument("--threshold", type=float, default=1e-10)
    p.add_argument("--output", "--out", dest="output")
    p.set_defaults(func=cmd_gradfrac)


def cmd_gradfrac(args) -> int:
    if args.replicates < 1 or args.n_test < 1 or not args.threshold > 0:
        raise UsageError("replicates and n-test must be positive, threshold > 0")
    print(json.dumps({k: getattr(args, k) for k in ("dims", "ns", "replicates", "seed", "n_test", "threshold")}))
    rows = grad_vanish_experiment(args.dims, args.ns, args.replicates, args.seed, args.n_test, args.threshold)
    cols = ["d", "n", "acq", "fraction", "threshold", "replicates", "clamped_points"]
    fh = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if args.output:
            fh.close()
    return 0


def _add_acq_eval(sub):
    p = sub.add_parser("acq-eval", help="value and gradient of an acquisition for a saved model")
    p.add_argument("--model", required=True, help="JSON written by surrogate.models_to_json")
    p.add_argument("--acquisition", "--acq", dest="acquisition", required=True,
                   choices=list(ANALYTIC_NAMES) + ["qei", "qlogei"])
    p.add_argument("--x", required=True, help="comma-separated coordinates; q*d values for MC")
    p.add_argument("--y-star", dest="y_star", type=float, help="incumbent (default: max training output)")
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_acq_eval)


def cmd_acq_eval(args) -> int:
    try:
        models, _ = models_from_json(Path(args.model).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, KeyError) as err:
        raise UsageError(f"cannot load model {args.model}: {err}") from err
    model = models[0]
    try:
        x = np.array([float(v) for v in args.x.split(",")]).reshape(args.q, model.dim)
    except ValueError as err:
        raise UsageError(f"--x must hold q*d = {args.q * model.dim} numbers") from err
    y_star = args.y_star if args.y_star is not None else float(model.y.max()) if model.n else 0.0
    _, var = model.marginals(x)
    sigma = np.sqrt(np.maximum(var, 0.0) + SIGMA_FLOOR**2)
    if np.any(var <= SIGMA_FLOOR**2):
        print(f"warning: posterior variance below floor; sigma floored to {sigma.min()!r}", file=sys.stderr)
    if args.acquisition in ANALYTIC_NAMES:
        if args.q != 1:
            raise UsageError("analytic acquisitions take q = 1")
        acq = AnalyticAcquisition(args.acquisition, model, IncumbentState(y_star))
    else:
        acq = MCAcquisition(args.acquisition, model, y_star, q=args.q, seed=args.seed)
    res = acq(x)
    print(json.dumps({"acquisition": args.acquisition, "x": x.tolist(), "sigma": sigma.tolist(),
                      "value": res.value, "grad": np.asarray(res.grad).tolist()}))
    return 0


def _add_verify(sub):
    p = sub.add_parser("verify-oracles", help="re-check the special-function reference table")
    p.add_argument("--fixture", help="path to the table (default: the shipped one)")
    p.set_defaults(func=cmd_verify)


def cmd_verify(args) -> int:
    path = Path(args.fixture) if args.fixture else oracles.default_fixture_path()
    if not path.is_file():
        raise UsageError(f"fixture not found: {path}")
    try:
        rows = oracles.load_fixture(path)
    except ValueError as err:
        raise UsageError(f"malformed fixture {path}: {err}") from err
    report = oracles.verify(rows)
    for name, err in report.max_rel_error.items():
        print(f"{name:12s} max_rel_error={err:.3e}")
    for row, val, err, tol in report.offending:
        print(f"MISMATCH line {row.line}: {row.function}({row.x!r}) = {val!r}, "
              f"reference {row.reference!r}, rel err {err:.3e} > {tol:.0e}")
    print(f"{report.n_rows} rows, {len(report.offending)} offending")
    return 0 if report.ok else 1


def _add_summarize(sub):
    p = sub.add_parser("summarize", help="mean, median and 2-SE band of best-so-far per iteration")
    p.add_argument("csv", nargs="+")
    p.add_argument("--last", type=int, default=0, help="only the last N iterations")
    p.set_defaults(func=cmd_summarize)


def cmd_summarize(args) -> int:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["file", "iteration", "n", "mean", "median", "lo", "hi"])
    for path in args.csv:
        if not Path(path).is_file():
            raise UsageError(f"no such file: {path}")
        rows = summarize(read_results(path))
        if args.last:
            rows = rows[-args.last:]
        for r in rows:
            w.writerow([path, r["iteration"], r["n"]] + [repr(r[k]) for k in ("mean", "median", "lo", "hi")])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logbo", description="log-space Bayesian optimization toolkit",
                                     epilog=_registry_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_bench(sub)
    _add_gradfrac(sub)
    _add_acq_eval(sub)
    _add_verify(sub)
    _add_summarize(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - top-level boundary
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
