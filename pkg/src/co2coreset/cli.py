"""Command-line entry point: ``co2 compress | bench | diag | sinkhorn``.

Exit status is 0 on success, 1 on a numerical failure and 2 on bad usage
or unreadable input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments, sinkhorn
from .co2 import Co2Config, compress
from .data import DataError, PointCloud, load_csv, standardize, uniform
from .kernels import GaussianKernel, NumericalDegeneracyError, gram
from .lowrank import NystromError, tail_sum
from .recombination import Coreset, RecombinationError

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2

NUMERIC_ERRORS = (sinkhorn.SinkhornConvergenceError, NystromError, RecombinationError,
                  NumericalDegeneracyError, np.linalg.LinAlgError, FloatingPointError)


class UsageError(Exception):
    pass


def _dump(doc: dict, timestamp: bool) -> str:
    if timestamp:
        doc = dict(doc, timestamp=time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    return json.dumps(doc, indent=2, sort_keys=True, default=_plain) + "\n"


def _plain(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _finite(x):
    return x if x is None or math.isfinite(x) else str(x)


def _read(path, header: bool, scale: bool) -> PointCloud:
    cloud = load_csv(path, has_header=header)
    if scale:
        cloud, _ = standardize(cloud)
    return cloud


def _write(prefix: str, suffix: str, text: str) -> Path:
    path = Path(prefix + suffix)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


# coreset files -----------------------------------------------------------------


def coreset_document(cs: Coreset, config: Co2Config) -> dict:
    cfg = {k: _finite(v) if isinstance(v, float) else v for k, v in config.as_dict().items()}
    return {
        "version": 1,
        "method": cs.method,
        "indices": [int(i) for i in cs.indices],
        "weights": [float(w) for w in cs.weights],
        "config": cfg,
        "seed": int(config.seed),
        "diagnostics": {
            "n": cs.parent.n,
            "size": cs.size,
            "quad_error": _finite(cs.quad_error),
            "tau": _finite(cs.tau),
            "sinkhorn_iterations": cs.info.get("sinkhorn_iterations"),
        },
    }


def coreset_csv(cs: Coreset) -> str:
    lines = ["index,weight"]
    lines += [f"{int(i)},{float(w)!r}" for i, w in zip(cs.indices, cs.weights)]
    return "\n".join(lines) + "\n"


def load_coreset(path, parent: PointCloud) -> Coreset:
    """Re-validate a written coreset JSON against its parent cloud."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != 1:
        raise DataError(f"{path}: unsupported coreset version {doc.get('version')!r}")
    return Coreset(parent, doc["indices"], doc["weights"], method=doc["method"],
                   m_target=doc["config"].get("m") or len(doc["indices"]), seed=doc["seed"])


# subcommands -------------------------------------------------------------------


def cmd_compress(args) -> int:
    if args.m is not None and (args.tau is not None or args.beta is not None):
        raise UsageError("--m cannot be combined with --tau or --beta")
    cloud = _read(args.input, args.header, args.standardize)
    try:
        config = Co2Config(epsilon=args.epsilon, m=args.m, tau=args.tau, beta=args.beta,
                           m_max=args.m_max, theta=args.theta, seed=args.seed, tol=args.tol,
                           max_iter=args.max_iter, use_exact_G=args.exact_g)
    except ValueError as e:
        raise UsageError(str(e)) from None
    cs = compress(uniform(cloud), config)
    doc = coreset_document(cs, config)
    j = _write(args.out, ".json", _dump(doc, not args.no_timestamp))
    c = _write(args.out, ".csv", coreset_csv(cs))
    print(f"{cs.method}: {cs.size} of {cloud.n} points, quad error {cs.quad_error:.6g}")
    print(f"wrote {j} and {c}")
    return EXIT_OK


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_bench(args) -> int:
    kw = {"trials": args.trials, "seed": args.seed}
    for name in ("n", "d", "eps"):
        val = getattr(args, name)
        if val is not None:
            kw[name] = val
    exp = args.experiment
    if exp == "mixture":
        if "d" in kw:
            raise UsageError("the mixture experiment is two-dimensional; --d does not apply")
        if args.m is not None:
            if len(args.m) != 1:
                raise UsageError("mixture takes a single --m")
            kw["m"] = args.m[0]
        kw["random_reps"] = args.random_reps
        report = experiments.run_mixture(**kw)
    else:
        if args.m is not None:
            kw["ms"] = args.m
        if exp == "recovery":
            kw["random_reps"] = max(1, args.random_reps)
            report = experiments.run_recovery(**kw)
        elif exp == "quadapprox":
            report = experiments.run_quadapprox(**kw)
        else:
            kw["methods"] = tuple(args.methods.split(","))
            bad = set(kw["methods"]) - set(experiments.METHODS)
            if bad:
                raise UsageError(f"unknown methods: {', '.join(sorted(bad))}")
            report = experiments.run_baselines(**kw)
    j = _write(args.out, ".json", report.to_json(timestamp=not args.no_timestamp))
    c = _write(args.out, ".csv", report.to_csv())
    for row in report.summary():
        extra = f"  rel_error {row['rel_error_median']:.4g}" if "rel_error_median" in row else ""
        print(f"{row['method']:>8} m={row['m']:<4} median divergence {row['divergence_median']:.6g}{extra}")
    print(f"wrote {j} and {c}")
    return EXIT_OK


def diagnostics(cloud: PointCloud, eps: float, tol: float = sinkhorn.DEFAULT_TOL,
                max_iter: int = sinkhorn.DEFAULT_MAX_ITER) -> dict:
    """Spectra of n*pi and K/n, tail sums of K/n and the suggested coreset size."""
    n = cloud.n
    mu = uniform(cloud)
    plan = sinkhorn.self_plan(mu, eps, tol, max_iter)
    plan_eig = np.clip(np.linalg.eigvalsh(plan.scaled())[::-1], 0.0, None)
    K = np.asarray(gram(GaussianKernel(eps), cloud)) / n
    tails = tail_sum(K)
    return {
        "n": n,
        "epsilon": eps,
        "plan_spectrum": plan_eig.tolist(),
        "gram_spectrum": tails.eigenvalues.tolist(),
        "tail_sums": tails.values.tolist(),
        "suggested_m": tails.first_below(1.0 / n**2),
    }


def cmd_diag(args) -> int:
    cloud = _read(args.input, args.header, args.standardize)
    doc = diagnostics(cloud, args.epsilon, args.tol, args.max_iter)
    if args.out:
        p = _write(args.out, ".json", _dump(doc, not args.no_timestamp))
        print(f"wrote {p}")
    print(f"n = {doc['n']}, suggested m = {doc['suggested_m']}")
    return EXIT_OK


def cmd_sinkhorn(args) -> int:
    a = _read(args.source, args.header, False)
    b = _read(args.target, args.header, False)
    if a.d != b.d:
        raise UsageError(f"dimension mismatch: {a.d} vs {b.d}")
    s = sinkhorn.divergence(uniform(a), uniform(b), args.epsilon, args.tol, args.max_iter)
    print(repr(s))
    return EXIT_OK


# parser --------------------------------------------------------------------------


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="co2", description="Sinkhorn-divergence coresets.")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--tol", type=_positive, default=sinkhorn.DEFAULT_TOL)
        sp.add_argument("--max-iter", type=int, default=sinkhorn.DEFAULT_MAX_ITER)

    def input_flags(sp):
        sp.add_argument("--header", action="store_true", help="skip the first CSV row")
        sp.add_argument("--standardize", action="store_true",
                        help="center and scale columns before compressing")

    c = sub.add_parser("compress", help="compress a CSV point cloud")
    c.add_argument("input")
    c.add_argument("--epsilon", type=_positive, required=True)
    c.add_argument("--m", type=int, help="target coreset size")
    c.add_argument("--tau", type=float, help="error threshold for the sweep")
    c.add_argument("--beta", type=float, help="quantile level for the automatic threshold")
    c.add_argument("--m-max", type=int, help="largest size considered by the sweep")
    c.add_argument("--theta", type=int, default=3, help="sketch oversampling factor")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--exact-g", action="store_true", help="use the (I - A^2)^-1 form")
    c.add_argument("--out", required=True, help="output prefix for .json and .csv")
    c.add_argument("--no-timestamp", action="store_true")
    input_flags(c)
    solver_flags(c)
    c.set_defaults(func=cmd_compress)

    b = sub.add_parser("bench", help="run a desk-scale experiment")
    b.add_argument("experiment", choices=experiments.EXPERIMENTS)
    b.add_argument("--trials", type=int, default=8)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--n", type=int)
    b.add_argument("--d", type=int)
    b.add_argument("--eps", type=_positive)
    b.add_argument("--m", type=_int_list, help="coreset size(s), comma separated")
    b.add_argument("--methods", default="co2,co2-refined,herding,random",
                   help="baselines experiment only")
    b.add_argument("--random-reps", type=int, default=0,
                   help="random coresets per trial and size (mixture: 0 skips them)")
    b.add_argument("--out", required=True, help="output prefix for .json and .csv")
    b.add_argument("--no-timestamp", action="store_true")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("diag", help="spectral diagnostics of the plan and Gram operators")
    d.add_argument("input")
    d.add_argument("--epsilon", type=_positive, required=True)
    d.add_argument("--out", help="output prefix for .json")
    d.add_argument("--no-timestamp", action="store_true")
    input_flags(d)
    solver_flags(d)
    d.set_defaults(func=cmd_diag)

    s = sub.add_parser("sinkhorn", help="divergence between two CSV point clouds")
    s.add_argument("source")
    s.add_argument("target")
    s.add_argument("--epsilon", type=_positive, required=True)
    s.add_argument("--header", action="store_true")
    solver_flags(s)
    s.set_defaults(func=cmd_sinkhorn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "trials", 1) < 1:
        parser.error("--trials must be >= 1")
    try:
        return args.func(args)
    except UsageError as e:
        parser.error(str(e))
    except (DataError, OSError) as e:
        print(f"co2: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as e:
        print(f"co2: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
