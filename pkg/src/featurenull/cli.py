"""Command line interface.

Exit codes are a stable contract: 0 success, 2 usage/argument error,
3 data error, 4 corrupt model file.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import fields
from itertools import combinations
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:             # Python 3.10
    import tomli as tomllib

from . import corpus, orb, probmap, reduce, stats
from .density import load_model, save_model
from .errors import (
    DataError,
    FeatureNullError,
    InvalidArgumentError,
    ModelFormatError,
)
from .pipeline import RunConfig, train_null_model

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4

ENV_THREADS = "FEATURENULL_THREADS"

log = logging.getLogger("featurenull")


def _resolve_threads(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get(ENV_THREADS)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _load_config(args) -> RunConfig:
    """Defaults, then TOML config file, then explicit flags."""
    values = {f.name: f.default for f in fields(RunConfig)}
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "rb") as fh:
            doc = tomllib.load(fh)
        unknown = set(doc) - set(values)
        if unknown:
            raise InvalidArgumentError(
                f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(doc)
    for name in values:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return RunConfig(**values)


def _add_pyramid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--levels", dest="n_levels", type=int, default=None,
                   help="pyramid levels (default 8)")
    p.add_argument("--scale-factor", dest="scale_factor", type=float, default=None,
                   help="pyramid decimation factor (default 1.2)")


def _scoring_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "n_levels", None) is not None:
        cfg.n_levels = args.n_levels
    if getattr(args, "scale_factor", None) is not None:
        cfg.scale_factor = args.scale_factor
    if getattr(args, "stride", None) is not None:
        cfg.stride = args.stride
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featurenull",
        description="Estimate and apply a null model of scientific-image features.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a null model on an image corpus")
    p.add_argument("corpus_dir")
    p.add_argument("model_out")
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--sample-fraction", dest="sample_fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-keypoints", dest="max_keypoints", type=int, default=None)
    p.add_argument("--fast-threshold", dest="fast_threshold", type=int, default=None)
    _add_pyramid_flags(p)
    p.add_argument("--config", default=None, help="TOML file pre-populating the flags")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--weights-csv", default=None,
                   help="cluster weight CSV (default: <model_out>.weights.csv)")
    p.add_argument("--manifest-out", default=None, help="also write the JSONL manifest")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("score", help="mean ln p of one image under a model")
    p.add_argument("model_file")
    p.add_argument("image")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--auto-mask", action="store_true")
    p.add_argument("--per-point", default=None, help="write the grid CSV here")
    _add_pyramid_flags(p)
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("heatmap", help="render the probability map as a PNG")
    p.add_argument("model_file")
    p.add_argument("image")
    p.add_argument("out_png")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--range", dest="value_range", default=None, metavar="LO:HI")
    p.add_argument("--auto-mask", action="store_true")
    p.add_argument("--overlay", action="store_true",
                   help="blend the map over the source image")
    _add_pyramid_flags(p)
    p.set_defaults(handler=cmd_heatmap)

    p = sub.add_parser("compare", help="group means and pairwise Welch tests")
    p.add_argument("model_file")
    p.add_argument("group_dirs", nargs="+")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--auto-mask", action="store_true")
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    p.add_argument("--threads", type=int, default=None)
    _add_pyramid_flags(p)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("validate-reduction",
                       help="correlation of hamming vs reduced squared-Euclidean")
    p.add_argument("--pairs", type=int, default=20_000)
    p.add_argument("--dmax", type=int, default=30)
    p.add_argument("--seed", type=int, default=20190601)
    p.add_argument("--csv", default="reduction_correlation.csv",
                   help="per-distance CSV output path")
    p.set_defaults(handler=cmd_validate_reduction)

    p = sub.add_parser("inspect", help="summarize a model; dump cluster weights")
    p.add_argument("model_file")
    p.add_argument("--out", default=None, help="weights CSV path (default: stdout)")
    p.set_defaults(handler=cmd_inspect)

    p = sub.add_parser("keypoints", help="debug dump of detected keypoints")
    p.add_argument("image")
    p.add_argument("--max-keypoints", dest="max_keypoints", type=int, default=500)
    p.add_argument("--fast-threshold", dest="fast_threshold", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    _add_pyramid_flags(p)
    p.set_defaults(handler=cmd_keypoints)

    return parser


def _write_weights_csv(model, out) -> None:
    writer = csv.writer(out)
    writer.writerow(["cluster", "weight"])
    for j, lw in enumerate(model.log_weights_):
        writer.writerow([j, repr(float(np.exp(lw)))])


def cmd_train(args) -> int:
    cfg = _load_config(args)
    threads = _resolve_threads(args.threads)
    result = train_null_model(args.corpus_dir, cfg, threads=threads)
    save_model(result.model, args.model_out)
    weights_path = args.weights_csv or str(args.model_out) + ".weights.csv"
    with open(weights_path, "w", newline="", encoding="utf-8") as fh:
        _write_weights_csv(result.model, fh)
    if args.manifest_out:
        corpus.write_manifest(result.manifest, args.manifest_out)
    print(f"images={result.manifest.total_images}")
    print(f"N={result.sampled}")
    print(f"K={result.model.n_clusters_}")
    print(f"inertia={result.inertia!r}")
    print(f"model={args.model_out}")
    return EXIT_OK


def _scored_map(args, model, image_path):
    cfg = _scoring_config(args)
    img = corpus.load_grayscale(image_path)
    mask = probmap.auto_mask(img) if getattr(args, "auto_mask", False) else None
    return img, probmap.score_grid(
        model, img, cfg.stride, mask=mask,
        n_levels=cfg.n_levels, scale_factor=cfg.scale_factor)


def cmd_score(args) -> int:
    model = load_model(args.model_file)
    _, pmap = _scored_map(args, model, args.image)
    if args.per_point:
        probmap.write_grid_csv(pmap, args.per_point)
    print(f"mean_ln_p={probmap.mean_log_prob(pmap)!r}")
    return EXIT_OK


def _parse_range(text: str):
    try:
        lo_s, hi_s = text.split(":", 1)
        lo, hi = float(lo_s), float(hi_s)
    except ValueError as exc:
        raise InvalidArgumentError(f"--range must be LO:HI, got {text!r}") from exc
    if lo >= hi:
        raise InvalidArgumentError(f"--range needs LO < HI, got {text!r}")
    return lo, hi


def cmd_heatmap(args) -> int:
    lo = hi = None
    if args.value_range is not None:
        lo, hi = _parse_range(args.value_range)
    model = load_model(args.model_file)
    img, pmap = _scored_map(args, model, args.image)
    dense = probmap.interpolate(pmap)
    rgb = probmap.render_heatmap(dense, lo, hi, overlay=img if args.overlay else None)
    probmap.write_png(rgb, args.out_png)
    print(f"heatmap={args.out_png}")
    return EXIT_OK


def _score_group(args, model, group_dir, threads: int):
    root = Path(group_dir)
    if not root.is_dir():
        raise InvalidArgumentError(f"group is not a directory: {group_dir}")
    paths = sorted((p for p in root.rglob("*") if p.is_file()),
                   key=lambda p: p.as_posix())

    def one(path):
        try:
            _, pmap = _scored_map(args, model, path)
            return probmap.mean_log_prob(pmap)
        except DataError as exc:
            log.warning("skipping %s: %s", path, exc)
            return None

    means = [m for m in corpus.run_ordered(one, paths, threads) if m is not None]
    if len(means) < 2:
        raise InvalidArgumentError(
            f"group {group_dir} has {len(means)} scorable images; need >= 2")
    return means


def cmd_compare(args) -> int:
    if len(args.group_dirs) < 2:
        raise InvalidArgumentError("compare needs at least 2 group directories")
    model = load_model(args.model_file)
    threads = _resolve_threads(args.threads)
    names = [Path(d).name or str(d) for d in args.group_dirs]
    groups = [_score_group(args, model, d, threads) for d in args.group_dirs]

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["group_a", "group_b", "n_a", "n_b", "mean_a", "mean_b",
                     "t_statistic", "dof", "p_value"])
    pair_lines = []
    for ia, ib in combinations(range(len(groups)), 2):
        res = stats.welch_t_test(groups[ia], groups[ib])
        writer.writerow([
            names[ia], names[ib], res.n1, res.n2,
            repr(float(np.mean(groups[ia]))), repr(float(np.mean(groups[ib]))),
            repr(res.statistic), repr(res.dof), repr(res.p_value)])
        pair_lines.append(f"{names[ia]} vs {names[ib]}: p={res.p_value:.6g}")

    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write(buf.getvalue())
        for name, means in zip(names, groups):
            print(f"group {name}: n={len(means)} mean_ln_p={np.mean(means)!r}")
        for line in pair_lines:
            print(line)
        print(f"csv={args.out}")
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_validate_reduction(args) -> int:
    rho, p = reduce.correlation_experiment(
        args.pairs, args.dmax, args.seed, csv_path=args.csv)
    print(f"rho={rho!r}")
    print(f"p={p!r}")
    print(f"csv={args.csv}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    model = load_model(args.model_file)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            _write_weights_csv(model, fh)
        meta = model.meta_
        print(f"K={model.n_clusters_}")
        print(f"n_features={model.n_features_in_}")
        print(f"n_categories={model.n_categories}")
        print(f"N={meta['n_samples']}")
        print(f"created={meta['created']}")
        print(f"version={meta['version']}")
        print(f"csv={args.out}")
    else:
        _write_weights_csv(model, sys.stdout)
    return EXIT_OK


def cmd_keypoints(args) -> int:
    cfg = _scoring_config(args)
    if args.fast_threshold is not None:
        cfg.fast_threshold = args.fast_threshold
    img = corpus.load_grayscale(args.image)
    pattern = orb.make_brief_pattern()
    pairs = orb.top_keypoints(
        img, args.max_keypoints, pattern, n_levels=cfg.n_levels,
        scale_factor=cfg.scale_factor, fast_threshold=cfg.fast_threshold)

    def dump(out):
        writer = csv.writer(out)
        writer.writerow(["x", "y", "angle", "response", "level", "descriptor"])
        for kp, desc in pairs:
            writer.writerow([repr(kp.x), repr(kp.y), repr(kp.angle),
                             repr(kp.response), kp.level, bytes(desc).hex()])

    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            dump(fh)
        print(f"keypoints={len(pairs)}")
        print(f"csv={args.out}")
    else:
        dump(sys.stdout)
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DataError, FeatureNullError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
