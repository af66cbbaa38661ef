"""Command-line entry point: ``repsel <command> ...``.

Every command writes deterministic CSV for a fixed seed. Failures print a
single line ``error: <Kind>: <message>`` on stderr and exit nonzero
(2 for usage errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from repsel import classifier as clf
from repsel.config import load_config
from repsel.data import LabeledDictionary, concat, load_dataset, save_dataset
from repsel.embed import EmbeddingConfig, embed
from repsel.errors import RepselError
from repsel.features import extract_from_manifest
from repsel.pipeline import (
    SyntheticSpec,
    aggregate_curves,
    bench_complexity,
    bench_instance,
    default_grid,
    gen_synthetic,
    grad_digest,
    run_experiment,
)
from repsel.selector import SelectionProblem, lambda0, select_representatives
from repsel.solver import SolverConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sizes(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _solver(args) -> SolverConfig:
    return SolverConfig(
        max_iter=args.max_iter,
        rel_tol=args.rel_tol,
        momentum=args.momentum,
        lipschitz_mode=args.lipschitz,
    )


def _add_solver_args(p):
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--momentum", choices=("standard", "paper"), default="standard")
    p.add_argument("--lipschitz", choices=("spectral", "paper"), default="spectral")


# --------------------------------------------------------------------------
# commands

def cmd_gen_synth(args):
    spec = SyntheticSpec(
        identities=args.identities,
        cameras=args.cameras,
        images_per_camera=args.images,
        dim=args.dim,
        cluster_std=args.std,
        camera_shift=args.shift,
        seed=args.seed,
    )
    save_dataset(gen_synthetic(spec), args.out, args.format)


def cmd_select(args):
    pool = load_dataset(args.pool)
    labeled = load_dataset(args.labeled) if args.labeled else None
    if args.embed != "none":
        cfg = EmbeddingConfig(method=args.embed, target_dim=args.target_dim, seed=args.seed)
        both = pool if labeled is None else concat([pool, labeled])
        emb = embed(both, cfg).data
        z, z0 = emb[:, : pool.n], emb[:, pool.n:]
    else:
        z = pool.data
        z0 = labeled.data if labeled is not None else np.zeros((pool.d, 0))
    prob = SelectionProblem.centered(z, z0, args.lambda1)
    lam2 = args.lambda2 if args.lambda2 is not None else lambda0(prob) / args.gamma
    prob = prob.with_lambda2(lam2)
    k = args.k if args.k is not None else pool.n
    picked, report = select_representatives(prob, k, _solver(args))
    norms = np.linalg.norm(report.solution, axis=1)
    _write_csv(
        args.out,
        ["rank", "index", "id", "row_norm"],
        [(r, i, pool.image_ids[i], repr(float(norms[i]))) for r, i in enumerate(picked)],
    )
    logging.info("lambda2=%r iterations=%d terminated_by=%s", lam2, report.iterations, report.terminated_by)


def cmd_classify(args):
    ref = load_dataset(args.dict)
    test = load_dataset(args.test)
    dictionary = clf.add_labeled(
        LabeledDictionary.empty(ref.d), ref, ref.true_labels, image_ids=ref.image_ids, normalize=True
    )
    probs = clf.classify(dictionary, test, args.alpha, args.beta, args.knn, _solver(args))
    header = ["id", "predicted"] + [f"p_{c}" for c in probs.classes]
    rows = [
        [test.image_ids[j], int(probs.predicted[j])] + [repr(float(v)) for v in probs.probs[j]]
        for j in range(test.n)
    ]
    _write_csv(args.out, header, rows)


def _curve_rows(curve):
    return [(q, t, repr(float(a))) for q, t, a in curve.points]


def _plot(path, series, axis):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "repsel", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, (grid, mean, std) in series.items():
            ax.plot(grid, mean, label=name)
            ax.fill_between(grid, mean - std, mean + std, alpha=0.25)
        ax.set_xlabel("queries" if axis == "queries" else "images labeled")
        ax.set_ylabel("test accuracy")
        ax.set_ylim(0.0, 1.0)
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def cmd_run_experiment(args):
    run = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = run.method_list
    results = run_experiment(run.experiment, methods)
    series = {}
    for method in methods:
        target = out if len(methods) == 1 else out / method
        target.mkdir(parents=True, exist_ok=True)
        curves = [t.curve for t in results[method]]
        for i, trial in enumerate(results[method]):
            _write_csv(target / f"trial_{i}.csv", ["queries", "total_labeled", "accuracy"], _curve_rows(trial.curve))
            for msg in trial.curve.warnings:
                logging.warning("%s trial %d: %s", method, i, msg)
        grid = default_grid(curves, run.axis, run.grid_points)
        mean, std = aggregate_curves(curves, grid, run.axis)
        _write_csv(
            target / "aggregate.csv",
            ["grid", "mean", "std"],
            [(repr(float(g)), repr(float(m)), repr(float(s))) for g, m, s in zip(grid, mean, std)],
        )
        series[method] = (grid, mean, std)
    _plot(out / "curves.svg", series, run.axis)


def cmd_extract_features(args):
    m = extract_from_manifest(args.manifest, args.input)
    save_dataset(m, args.out, args.format)


def cmd_bench(args):
    sizes = args.sizes
    res = bench_complexity(sizes, d=args.d, n0=args.n0, repeats=args.repeats, seed=args.seed)
    rows = []
    for n, _, digest in res.rows:
        prob, x = bench_instance(n, args.d, args.n0, args.seed)
        rows.append((n, args.d, args.n0, digest, grad_digest(prob, x)))
    _write_csv(args.out, ["n", "d", "n0", "instance_digest", "gradient_digest"], rows)
    if args.timings:
        _write_csv(
            args.timings,
            ["n", "mean_seconds"],
            [(n, repr(t)) for n, t, _ in res.rows],
        )
    print(f"slope {res.slope:.3f}")
    for n, t, _ in res.rows:
        print(f"n={n} mean_seconds={t:.6g}")


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="repsel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="write a synthetic identity dataset")
    p.add_argument("--identities", type=int, default=50)
    p.add_argument("--cameras", type=int, default=3)
    p.add_argument("--images", type=int, default=6, help="images per identity and camera")
    p.add_argument("--dim", type=int, default=30)
    p.add_argument("--std", type=float, default=0.3)
    p.add_argument("--shift", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "binary"), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("select", help="pick representatives from a pool")
    p.add_argument("--pool", required=True)
    p.add_argument("--labeled", default=None, help="already-labeled columns")
    p.add_argument("--k", type=int, default=None, help="batch cap (default: all nonzero rows)")
    p.add_argument("--lambda1", type=float, default=2.0)
    p.add_argument("--gamma", type=float, default=2.5)
    p.add_argument("--lambda2", type=float, default=None, help="overrides lambda0 / gamma")
    p.add_argument("--embed", choices=("none", "tsne", "pca"), default="none")
    p.add_argument("--target-dim", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    _add_solver_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("classify", help="sparse-code a test set over a labeled dictionary")
    p.add_argument("--dict", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--alpha", type=float, default=clf.DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=clf.DEFAULT_BETA)
    p.add_argument("--knn", type=int, default=clf.DEFAULT_KNN)
    _add_solver_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("run-experiment", help="run all trials of a configured experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_experiment)

    p = sub.add_parser("extract-features", help="HSV block features from PPM images")
    p.add_argument("--in", dest="input", default=None, help="image root (default: manifest folder)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--format", choices=("csv", "binary"), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("bench", help="time the selection gradient against pool size")
    p.add_argument("--sizes", type=_sizes, default=[100, 200, 400, 800])
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--n0", type=int, default=20)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timings", default=None, help="also write measured times here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def _fail(kind, message, code):
    text = " ".join(str(message).split())
    print(f"error: {kind}: {text}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", exc, 2)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (RepselError, ValueError, KeyError, OSError) as exc:
        return _fail(type(exc).__name__, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
