"""Command-line interface: ``appex {simulate,estimate,experiment,graph}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input-format error.
Errors are reported on stderr as one JSON object.
"""

import argparse
from importlib import resources
import json
import logging
from pathlib import Path
import sys

import numpy as np

from .causal import CausalGraph, extract_graph, shd_confounders, shd_drift
from .errors import AppexError, DataFormatError
from .experiments import EXAMPLES, KINDS, ExperimentSpec, draw_system, run_experiment
from .io import read_dataset, write_dataset, write_trajectories
from .loop import AppexConfig, run_appex
from .sde import MAX_REJECTIONS, InitialDistribution, SdeParams, gen_default_initial
from .simulate import euler_maruyama, subsample_marginals

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def builtin_specs():
    """Names of the experiment specs shipped with the package."""
    root = resources.files("appex") / "specs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_spec(name_or_path):
    path = Path(name_or_path)
    if path.exists():
        return ExperimentSpec.load(path)
    root = resources.files("appex") / "specs"
    candidate = root / f"{name_or_path}.json"
    if candidate.is_file():
        return ExperimentSpec.from_dict(json.loads(candidate.read_text()))
    raise UsageError(
        f"no spec file {name_or_path!r}; built-in specs: {', '.join(builtin_specs())}"
    )


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc


def _dump(obj):
    print(json.dumps(obj, indent=2))


def cmd_simulate(args):
    if args.params:
        params = SdeParams.from_dict(_read_json(args.params))
        if args.initial:
            p0 = InitialDistribution(np.asarray(_read_json(args.initial), dtype=float))
        else:
            p0 = gen_default_initial(params.d, args.seed)
    else:
        spec = ExperimentSpec(name="simulate", kind=args.kind, d=args.d,
                              edge_prob=args.edge_prob, n_replicates=1,
                              max_rejections=args.max_rejections)
        seeds = {"params": args.seed, "initial": args.seed + 1}
        params, p0 = draw_system(spec, seeds)
    traj = euler_maruyama(params, p0, args.dt_em, args.n_steps, args.M, seed=args.seed)
    data = subsample_marginals(traj, args.dt_obs, args.n_marginals, shuffle_seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(data, out)
    params_path = out.with_name(out.stem + "_params.json")
    params_path.write_text(params.to_json() + "\n")
    report = {"dataset": str(out), "params": str(params_path), "times": len(data), "d": data.d}
    if args.trajectories:
        write_trajectories(traj, args.trajectories)
        report["trajectories"] = args.trajectories
    _dump(report)
    return EXIT_OK


def cmd_estimate(args):
    data = read_dataset(args.dataset)
    config = AppexConfig(
        sigma0_sq=args.sigma0_sq,
        n_iters=args.iters,
        kernel_scheme=args.scheme,
        estimation_source=args.source,
        seed=args.seed,
        stop_tol=args.stop_tol,
        workers=args.workers,
    )
    result = run_appex(data, config)
    history = Path(args.out) if args.out else Path(args.dataset).with_name(
        Path(args.dataset).stem + "_history.jsonl")
    result.write_history(history)
    _dump({"A_hat": result.A_hat.tolist(), "H_hat": result.H_hat.tolist(),
           "iterations": len(result.history), "history": str(history)})
    return EXIT_OK


def cmd_experiment(args):
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    if args.replicates is not None:
        spec.n_replicates = args.replicates
    bundle = run_experiment(spec, workers=args.workers)
    bundle_path, curve_path = bundle.write(args.out)
    _dump({
        "bundle": str(bundle_path),
        "curves": str(curve_path),
        "n_failed": bundle.n_failed,
        "se_warning": bundle.se_warning,
        "appex": {k: v["mean"] for k, v in bundle.aggregates["appex"].items()},
        "wot": {k: v["mean"] for k, v in bundle.aggregates["wot"].items()},
    })
    return EXIT_OK if bundle.n_failed < spec.n_replicates else EXIT_RUNTIME


def _matrices(obj, path):
    for keys in (("A_hat", "H_hat"), ("A", "H")):
        if all(k in obj for k in keys):
            return np.asarray(obj[keys[0]], dtype=float), np.asarray(obj[keys[1]], dtype=float)
    raise DataFormatError(f"{path}: expected keys A_hat/H_hat or A/H", column="A_hat")


def cmd_graph(args):
    if not args.eps > 0:
        raise UsageError("eps must be positive")
    A, H = _matrices(_read_json(args.estimate), args.estimate)
    graph = extract_graph(A, H, args.eps)
    report = {"graph": graph.to_dict()}
    if args.truth:
        obj = _read_json(args.truth)
        if "edges" in obj:
            truth = CausalGraph.from_dict(obj)
        else:
            truth = extract_graph(*_matrices(obj, args.truth), args.eps)
        report["shd_drift"] = shd_drift(truth, graph)
        report["shd_confounders"] = shd_confounders(truth, graph)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".json").write_text(graph.to_json() + "\n")
        out.with_suffix(".dot").write_text(graph.to_dot())
        report["files"] = [str(out.with_suffix(".json")), str(out.with_suffix(".dot"))]
    _dump(report)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="appex", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help, out_required=False):
        sp.add_argument("--seed", type=int, default=None if sp.prog.endswith("experiment") else 0)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", required=out_required, help=out_help)

    s = sub.add_parser("simulate", help="simulate snapshot data to CSV")
    common(s, "dataset CSV path (a JSON sidecar and _params.json go next to it)", True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--kind", choices=KINDS)
    src.add_argument("--params", help="JSON with d, A, H and optionally G")
    s.add_argument("--initial", help="JSON list of support points (with --params)")
    s.add_argument("--d", type=int, help="dimension for random kinds")
    s.add_argument("--edge-prob", type=float, default=0.25)
    s.add_argument("--max-rejections", type=int, default=MAX_REJECTIONS)
    s.add_argument("--M", type=int, default=500)
    s.add_argument("--dt-em", type=float, default=0.01)
    s.add_argument("--n-steps", type=int, default=100)
    s.add_argument("--dt-obs", type=float, default=0.05)
    s.add_argument("--n-marginals", type=int, default=20)
    s.add_argument("--trajectories", help="also write the unshuffled paths here")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run APPEX on a dataset")
    common(e, "history JSONL path (default: <dataset>_history.jsonl)")
    e.add_argument("dataset")
    e.add_argument("--sigma0-sq", type=float, required=True,
                   help="initial isotropic diffusion guess")
    e.add_argument("--iters", type=int, default=30)
    e.add_argument("--stop-tol", type=float, default=None)
    e.add_argument("--scheme", choices=("exact", "linearized", "hybrid"), default=None)
    e.add_argument("--source", choices=("coupling_moments", "sampled_paths"),
                   default="coupling_moments")
    e.set_defaults(func=cmd_estimate)

    x = sub.add_parser("experiment", help="run a replicated experiment spec")
    common(x, "output directory", False)
    x.set_defaults(out="results")
    x.add_argument("spec", help="spec JSON path or built-in name")
    x.add_argument("--replicates", type=int, default=None)
    x.set_defaults(func=cmd_experiment)

    g = sub.add_parser("graph", help="extract the causal graph from estimates")
    common(g, "output prefix for .json and .dot files")
    g.add_argument("estimate", help="JSON with A_hat/H_hat (estimate output) or A/H")
    g.add_argument("--eps", type=float, default=0.5)
    g.add_argument("--truth", help="true params (A/H) or graph JSON")
    g.set_defaults(func=cmd_graph)
    return p


def _error(code, exc):
    obj = {"error": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "column", None):
        obj["column"] = exc.column
    for key in ("iteration", "pair"):
        if getattr(exc, key, None) is not None:
            obj[key] = getattr(exc, key)
    print(json.dumps(obj, ensure_ascii=False), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _error(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "simulate" and args.kind and args.kind not in EXAMPLES and args.d is None:
        return _error(EXIT_USAGE, UsageError(f"--d is required for kind {args.kind}"))
    try:
        return args.func(args)
    except (UsageError, DataFormatError) as exc:
        return _error(EXIT_USAGE, exc)
    except (AppexError, ArithmeticError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, ValueError):
            return _error(EXIT_USAGE, exc)
        return _error(EXIT_RUNTIME, exc)
    except ValueError as exc:
        return _error(EXIT_USAGE, exc)
    except OSError as exc:
        return _error(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
