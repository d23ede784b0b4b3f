"""Command-line surface: generate instances, cluster, verify, and benchmark.

Exit codes: 0 ok, 1 stability check failed, 2 usage or malformed input,
3 step cap exceeded (the clustering is still written).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

from .clustering import Clustering, verify_stability
from .fast import fast_ls
from .local_search import CAP_EXCEEDED, LsConfig, max_ip_local_search, natural_local_search
from .median_ip import MedianConfig, median_ip_cluster
from .merge_split import merge_split_ls
from .metric import (
    GenSpec,
    MetricSpace,
    generate,
    load_matrix_csv,
    load_points_csv,
    save_matrix_csv,
    save_points_csv,
)
from .stable_opt import beta_clustering, stable_cluster

EXIT_OK = 0
EXIT_UNSTABLE = 1
EXIT_USAGE = 2
EXIT_CAP = 3

ALGORITHMS = ("natural", "mergesplit", "fast", "dp", "median", "max")
_SEEDED = ("mergesplit", "fast")


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _load_instance(path: str, fmt: str, norm: str) -> MetricSpace:
    p = Path(path)
    if not p.exists():
        raise CliError(f"instance file not found: {path}")
    if fmt == "auto":
        with open(p) as fh:
            first = fh.readline()
        fmt = "points" if first.startswith("x0") else "matrix"
    try:
        if fmt == "points":
            return load_points_csv(p, norm=norm)
        return load_matrix_csv(p)
    except ValueError as exc:
        raise CliError(f"malformed instance file: {exc}") from exc


def cmd_gen(args) -> int:
    try:
        spec = GenSpec(
            kind=args.kind, n=args.n, k=args.k, dim=args.dim,
            separation=args.separation, seed=args.seed,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = generate(spec)
    space = result.space
    if space.coords is not None:
        save_points_csv(out / "points.csv", space.coords)
        written = [str(out / "points.csv")]
    else:
        save_matrix_csv(out / "matrix.csv", space)
        written = [str(out / "matrix.csv")]
    if result.planted is not None:
        (out / "planted.json").write_text(result.planted.to_json())
        written.append(str(out / "planted.json"))
    print("\n".join(written))
    return EXIT_OK


_OBJECTIVE_OF_ALG = {
    "natural": "avg", "mergesplit": "avg", "fast": "avg", "dp": "avg",
    "median": "median", "max": "max",
}


def _run_algorithm(space: MetricSpace, args):
    n = space.n
    alg = args.alg
    if alg != "natural" and args.alpha is not None:
        raise CliError("--alpha applies to --alg natural only")
    if alg in _SEEDED and args.seed is None:
        raise CliError(f"--alg {alg} is randomized and requires --seed")
    seed = args.seed if args.seed is not None else 0
    counts: dict = {}
    status = "converged"
    alpha_target = None

    if alg == "natural":
        alpha_target = args.alpha if args.alpha is not None else 2.0 * math.log2(n)
        cfg = LsConfig(alpha=alpha_target, max_steps=args.max_steps, seed=seed)
        clustering, trace = natural_local_search(space, args.k, cfg)
        counts, status = trace.counts, trace.status
    elif alg == "mergesplit":
        alpha_target = 4.0 * math.log2(n)
        clustering, trace = merge_split_ls(space, args.k, seed, max_rounds=args.max_steps)
        counts, status = trace.counts, trace.status
    elif alg == "fast":
        alpha_target = 16.0 * math.log2(n)
        clustering, trace = fast_ls(space, args.k, seed)
        counts, status = trace.counts, trace.status
    elif alg == "dp":
        clustering = stable_cluster(space, args.k)
        counts = {}
    elif alg == "median":
        cfg = MedianConfig(max_steps=args.max_steps, seed=seed)
        alpha_target = cfg.median_alpha
        clustering, trace = median_ip_cluster(space, args.k, cfg)
        counts, status = trace.counts, trace.status
    elif alg == "max":
        alpha_target = 1.0
        cfg = LsConfig(max_steps=args.max_steps, seed=seed)
        clustering, trace = max_ip_local_search(space, args.k, cfg)
        counts, status = trace.counts, trace.status
    else:
        raise CliError(f"unknown algorithm {alg!r}")
    return clustering, counts, status, alpha_target


def cmd_cluster(args) -> int:
    space = _load_instance(args.instance, args.format, args.norm)
    if not 2 <= args.k <= space.n:
        raise CliError(f"need 2 <= k <= n, got k={args.k}, n={space.n}")
    queries_before = space.query_counter
    t0 = time.perf_counter()
    clustering, counts, status, alpha_target = _run_algorithm(space, args)
    elapsed = time.perf_counter() - t0
    queries = space.query_counter - queries_before

    objective = _OBJECTIVE_OF_ALG[args.alg]
    report_check = verify_stability(space, clustering, objective, alpha_target)
    run_report = {
        "algorithm": args.alg,
        "k": args.k,
        "n": space.n,
        "seed": args.seed,
        "objective": objective,
        "alpha_target": alpha_target,
        "alpha_achieved": report_check.alpha_achieved,
        "steps": counts,
        "queries": queries,
        "wall_time_s": 0.0 if args.no_time else elapsed,
        "status": status,
    }
    if args.alg == "dp":
        run_report["beta_achieved"] = beta_clustering(space, clustering)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "clustering.json").write_text(clustering.to_json())
    (out / "report.json").write_text(json.dumps(run_report, indent=2))
    print(json.dumps(run_report, indent=2))
    return EXIT_CAP if status == CAP_EXCEEDED else EXIT_OK


def cmd_verify(args) -> int:
    space = _load_instance(args.instance, args.format, args.norm)
    try:
        clustering = Clustering.from_json(Path(args.clustering).read_text())
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"malformed clustering file: {exc}") from exc
    if clustering.n != space.n:
        raise CliError(f"assignment length {clustering.n} does not match instance n={space.n}")
    report = verify_stability(space, clustering, args.objective, args.alpha)
    print(report.to_json())
    if args.alpha is not None and not report.passed:
        return EXIT_UNSTABLE
    return EXIT_OK


def cmd_bench(args) -> int:
    rows = ["n,k,alg,seed,queries,steps,time_s"]
    for alg in args.alg:
        if alg not in ("fast", "mergesplit", "natural", "median", "max", "dp"):
            raise CliError(f"unknown algorithm {alg!r}")
        for n in args.n:
            for k in args.k:
                for seed in args.seeds:
                    spec = GenSpec(kind="euclidean_mixture", n=n, k=max(k, 1), dim=4, seed=seed)
                    space = generate(spec).space
                    before = space.query_counter
                    t0 = time.perf_counter()
                    ns = argparse.Namespace(
                        alg=alg, k=k, seed=seed, alpha=None, max_steps=10**6, no_time=args.no_time
                    )
                    _, counts, _, _ = _run_algorithm(space, ns)
                    elapsed = 0.0 if args.no_time else time.perf_counter() - t0
                    queries = space.query_counter - before
                    steps = sum(v for v in counts.values() if isinstance(v, int))
                    rows.append(f"{n},{k},{alg},{seed},{queries},{steps},{elapsed:.6f}")
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipstable", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic instance")
    g.add_argument("--kind", required=True,
                   choices=("euclidean_mixture", "random_shortest_path", "planted_separated"))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, default=1)
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--separation", type=float, default=0.1)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("cluster", help="run a clustering algorithm")
    c.add_argument("--in", dest="instance", required=True)
    c.add_argument("--format", choices=("auto", "matrix", "points"), default="auto")
    c.add_argument("--norm", choices=("l2", "l1"), default="l2")
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--alg", required=True, choices=ALGORITHMS)
    c.add_argument("--alpha", type=float, default=None, help="natural only; default 2*log2(n)")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--max-steps", type=int, default=10**6)
    c.add_argument("--out", required=True)
    c.add_argument("--no-time", action="store_true", help="zero the wall-time field for byte-stable output")
    c.set_defaults(func=cmd_cluster)

    v = sub.add_parser("verify", help="verify a clustering's stability")
    v.add_argument("--in", dest="instance", required=True)
    v.add_argument("--format", choices=("auto", "matrix", "points"), default="auto")
    v.add_argument("--norm", choices=("l2", "l1"), default="l2")
    v.add_argument("--clustering", required=True)
    v.add_argument("--objective", choices=("avg", "median", "max"), default="avg")
    v.add_argument("--alpha", type=float, default=None)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="query-count benchmark grid")
    b.add_argument("--alg", nargs="+", required=True)
    b.add_argument("--n", type=int, nargs="*", default=[])
    b.add_argument("--k", type=int, nargs="+", default=[10])
    b.add_argument("--seeds", type=int, nargs="+", default=[0])
    b.add_argument("--out", default=None)
    b.add_argument("--no-time", action="store_true", help="zero the time column for byte-stable output")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
