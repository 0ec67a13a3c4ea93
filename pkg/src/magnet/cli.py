"""Command-line entry point: ``magnet <subcommand> ...``.

Exit codes: 0 success, 1 failed check, 2 bad arguments or configuration,
3 invalid input data, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from .data import (
    build_samples, read_slide, sample_units, select_top_genes, split_folds, write_slide,
    write_table,
)
from .errors import (
    ConfigurationError, InvalidArgumentError, InvalidDataError, MagnetError, NumericError, StateError,
)
from .graph import build_knn_graph, write_graph_csv
from .model import load_checkpoint, save_checkpoint
from .synthetic import SynthConfig, config_dict, generate_slide
from .training import (
    FoldOutcome, MetricsReport, TrainConfig, aggregate_reports, composite_loss_fn, evaluate, gradient_check,
    run_fold, run_holdout,
)

log = logging.getLogger("magnet")

CHECKPOINT_NAME = "checkpoint.magnet"
EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("MAGNET_SEED")
    if env is None or not env.strip():
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigurationError(f"MAGNET_SEED must be an integer, got {env!r}") from None


def run_dir(out: str | None, seed: int) -> Path:
    if out:
        return Path(out)
    return Path("runs") / f"{time.strftime('%Y%m%dT%H%M%S')}_seed{seed}"


def hash_inputs(paths: Sequence[Path]) -> dict[str, str]:
    # keyed by input position and relative path, so moving the data keeps the manifest
    hashes = {}
    for i, root in enumerate(paths):
        root = Path(root)
        files = sorted(p for p in root.rglob("*") if p.is_file()) if root.is_dir() else [root]
        for f in files:
            if f.exists():
                key = f"<input{i}>" if f == root else f"<input{i}>/{f.relative_to(root).as_posix()}"
                hashes[key] = hashlib.sha256(f.read_bytes()).hexdigest()
    return hashes


def _mask_paths(arg: str, out: Path, inputs: Sequence[Path]) -> str:
    # locations are not part of a run's identity; inputs are identified by their hashes
    names = {str(out): "<out>", **{str(p): f"<input{i}>" for i, p in enumerate(inputs)}}
    def lookup(value: str) -> str | None:
        return names.get(value) or (names.get(str(Path(value))) if value else None)

    if lookup(arg):
        return lookup(arg)
    flag, eq, value = arg.partition("=")
    if eq and lookup(value):
        return f"{flag}={lookup(value)}"
    return arg


def write_run_manifest(out: Path, command: str, argv: Sequence[str], config: dict, inputs: Sequence[Path],
                       seed: int) -> None:
    outputs = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "run_manifest.json")
    manifest = {
        "command": command,
        "argv": [_mask_paths(a, out, inputs) for a in argv],
        "config": config,
        "inputs": hash_inputs(inputs),
        "outputs": outputs,
        "seed": seed,
        "tool_version": __version__,
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise InvalidDataError(f"config file {p} not found")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise InvalidDataError(f"{p}: cannot parse config ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidDataError(f"{p}: config must be a mapping")
    return data


def write_history(path: Path, history: Sequence[dict]) -> None:
    extra = sorted({k for r in history for k in r} - {"step", "lr", "L_p", "L_c", "L"})
    cols = ["step", "lr", "L_p", "L_c", "L", *extra]
    write_table(path, cols, ([r.get(c, float("nan")) for c in cols] for r in history))


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def format_metrics_table(reports: dict[str, MetricsReport]) -> str:
    lines = [f"{'Resolution':<12}{'MSE':>18}{'MAE':>18}{'PCC':>18}"]
    for level, r in reports.items():
        cells = []
        for k in ("mse", "mae", "pcc"):
            mean = getattr(r, k)
            std = r.std.get(k, 0.0)
            cells.append(f"{mean:.3f}±{std:.3f}")
        lines.append(f"{level:<12}" + "".join(f"{c:>18}" for c in cells))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_synth_gen(args, argv) -> int:
    seed = resolve_seed(args.seed)
    cfg = SynthConfig(
        n_bins=args.n_bins, n_spots=args.n_spots, n_regions=args.n_regions, n_genes=args.n_genes,
        feature_dim=args.feature_dim, latent_dim=args.latent_dim, noise_sigma=args.noise_sigma,
        seed=seed, slide_id=args.slide_id,
    )
    out = run_dir(args.out, seed)
    write_slide(generate_slide(cfg), out)
    write_run_manifest(out, "synth-gen", argv, config_dict(cfg), [], seed)
    print(f"wrote synthetic slide to {out}")
    return EXIT_OK


def cmd_preprocess(args, argv) -> int:
    seed = resolve_seed(args.seed)
    src = Path(args.data)
    slide = read_slide(src)
    genes = list(range(slide.n_genes))
    if args.top_genes is not None:
        genes = select_top_genes(slide.raw_counts, args.top_genes)
    sampled_bins = slide.sampled_bins
    if args.sample_bins is not None:
        sampled_bins = sample_units(slide.n_bins, args.sample_bins, seed)
    sampled_spots = slide.sampled_spots
    if args.sample_spots is not None:
        sampled_spots = sample_units(len(slide.spot_coords), args.sample_spots, seed + 1)
    out_slide = replace(
        slide,
        raw_counts=slide.raw_counts.select(genes),
        gene_names=tuple(slide.gene_names[g] for g in genes),
        sampled_bins=sampled_bins,
        sampled_spots=sampled_spots,
        normalization_scale=args.scale if args.scale is not None else slide.normalization_scale,
        seeds={**slide.seeds, "preprocess": seed},
    )
    out = run_dir(args.out, seed)
    if out.resolve() == src.resolve():
        raise InvalidArgumentError("--out must differ from --data (inputs are never modified)")
    write_slide(out_slide, out)
    cfg = {"top_genes": args.top_genes, "scale": out_slide.normalization_scale,
           "sample_bins": args.sample_bins, "sample_spots": args.sample_spots}
    write_run_manifest(out, "preprocess", argv, cfg, [src], seed)
    print(f"kept {len(genes)} genes; wrote {out}")
    return EXIT_OK


def cmd_build_graph(args, argv) -> int:
    seed = resolve_seed(args.seed)
    src = Path(args.data)
    samples = build_samples(read_slide(src))
    graph = build_knn_graph(samples.coords, args.k, symmetrize=args.symmetrize)
    out = run_dir(args.out, seed)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"graph_k{args.k}.csv"
    write_graph_csv(graph, path, node_ids=samples.bin_index)
    write_run_manifest(out, "build-graph", argv, {"k": args.k, "symmetrize": args.symmetrize}, [src], seed)
    print(f"wrote {path} ({graph.n_nodes} nodes)")
    return EXIT_OK


TRAIN_FLAG_MAP = {
    "steps": "total_steps", "lr": "lr0", "batch_size": "batch_size", "momentum": "momentum",
    "weight_decay": "weight_decay", "k": "top_k", "rounds": "rounds", "heads": "heads",
    "head_dim": "head_dim", "d": "d", "target_level": "target_level", "aggregate": "aggregate",
    "pcc_axis": "pcc_axis", "holdout": "holdout_fraction", "dtype": "dtype", "patience": "patience",
}


def build_train_config(args) -> TrainConfig:
    values = load_config_file(args.config)
    for flag, key in TRAIN_FLAG_MAP.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    values["seed"] = resolve_seed(args.seed if args.seed is not None else values.get("seed"))
    for flag, key in (("no_gat", "use_gat"), ("no_multires", "multires"),
                      ("no_consistency", "consistency"), ("no_residual", "residual")):
        if getattr(args, flag):
            values[key] = False
    if args.symmetrize:
        values["symmetrize"] = True
    if args.encoder:
        kinds = args.encoder.split(",")
        values["encoders"] = tuple(kinds * 3 if len(kinds) == 1 else kinds)
    if args.patch_shape:
        values["patch_shape"] = tuple(int(x) for x in args.patch_shape.split(","))
    try:
        return TrainConfig.from_dict(values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def _save_outcome(outcome: FoldOutcome, config: TrainConfig, out: Path, figures: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "train_config": config.to_dict(),
        "gene_names": list(outcome.reports["bin"].gene_names),
        "train_slides": outcome.train_slides,
        "test_slides": outcome.test_slides,
        "eval_nodes": {k: [int(i) for i in v] for k, v in outcome.eval_nodes.items()},
    }
    save_checkpoint(outcome.result.model, out / CHECKPOINT_NAME, meta)
    write_history(out / "history.csv", outcome.result.history)
    write_json(out / "metrics.json", {lvl: r.to_dict() for lvl, r in outcome.reports.items()})
    if figures and outcome.result.history:
        from .plotting import plot_loss_curve

        plot_loss_curve(outcome.result.history, out / "loss.png")


def _fold_job(job):
    samples, train_ids, test_ids, config, fold, levels = job
    return run_fold(samples, train_ids, test_ids, config, fold, levels)


def cmd_train(args, argv) -> int:
    config = build_train_config(args)
    slides = [read_slide(Path(d)) for d in args.data]
    ids = [s.slide_id for s in slides]
    if len(set(ids)) != len(ids):
        raise InvalidDataError(f"duplicate slide ids among inputs: {ids}")
    samples = [build_samples(s) for s in slides]
    levels = ("bin", "spot", "region") if config.multires else ("bin",)
    out = run_dir(args.out, config.seed)
    out.mkdir(parents=True, exist_ok=True)

    if len(samples) == 1 or args.folds is None:
        if len(samples) == 1:
            outcome = run_holdout(samples[0], config, levels)
        else:
            outcome = run_fold(samples, ids, ids, config, 0, levels)
        _save_outcome(outcome, config, out, args.figures)
        print(format_metrics_table(outcome.reports))
    else:
        split = split_folds(ids, args.folds, config.seed)
        wanted = range(len(split)) if args.fold in (None, "all") else [int(args.fold)]
        jobs = []
        for i in wanted:
            if not 0 <= i < len(split):
                raise InvalidArgumentError(f"fold {i} outside [0, {len(split)})")
            train_ids, test_ids = split.train_test(i)
            jobs.append((samples, train_ids, test_ids, config, i, levels))
        if args.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                outcomes = list(pool.map(_fold_job, jobs))
        else:
            outcomes = [_fold_job(j) for j in jobs]
        for o in outcomes:
            _save_outcome(o, config, out / f"fold_{o.fold}", args.figures)
        agg = {lvl: aggregate_reports([o.reports[lvl] for o in outcomes]) for lvl in levels}
        write_json(out / "metrics.json", {lvl: r.to_dict() for lvl, r in agg.items()})
        write_json(out / "folds.json", {"folds": [list(f) for f in split.folds], "seed": config.seed})
        print(format_metrics_table(agg))
    write_run_manifest(out, "train", argv, config.to_dict(), [Path(d) for d in args.data], config.seed)
    return EXIT_OK


def _load_for_eval(args):
    model, meta = load_checkpoint(Path(args.checkpoint))
    tc = meta.get("train_config", {})
    return model, meta, tc.get("top_k", 8), tc.get("symmetrize", False)


def _eval_nodes(meta: dict, samples, subset: str):
    if subset == "heldout":
        nodes = meta.get("eval_nodes", {}).get(samples.slide_id)
        if nodes is not None:
            return np.asarray(nodes, dtype=np.int64)
    return np.arange(len(samples))


def cmd_eval(args, argv) -> int:
    model, meta, k, sym = _load_for_eval(args)
    levels = ("bin", "spot", "region") if args.level == "all" else (args.level,)
    if not model.config.multires:
        levels = tuple(lvl for lvl in levels if lvl == "bin")
        if not levels:
            raise ConfigurationError("checkpoint has no spot/region heads")
    per_level: dict[str, list[MetricsReport]] = {lvl: [] for lvl in levels}
    for d in args.data:
        samples = build_samples(read_slide(Path(d)))
        graph = build_knn_graph(samples.coords, k, sym)
        nodes = _eval_nodes(meta, samples, args.subset)
        for lvl in levels:
            per_level[lvl].append(evaluate(model, samples, lvl, nodes, graph))
    reports = {lvl: aggregate_reports(rs) for lvl, rs in per_level.items()}
    print(format_metrics_table(reports))
    seed = resolve_seed(args.seed)
    out = run_dir(args.out, seed)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "metrics.json", {lvl: r.to_dict() for lvl, r in reports.items()})
    if args.figures:
        from .plotting import plot_gene_metrics

        for lvl, r in reports.items():
            plot_gene_metrics(r.gene_names, r.per_gene["pcc"], out / f"pcc_{lvl}.png", title=f"{lvl}-level PCC")
    write_run_manifest(out, "eval", argv, {"level": args.level, "subset": args.subset}, [Path(args.checkpoint),
                       *[Path(d) for d in args.data]], seed)
    return EXIT_OK


def cmd_predict(args, argv) -> int:
    model, meta, k, sym = _load_for_eval(args)
    samples = build_samples(read_slide(Path(args.data)))
    graph = build_knn_graph(samples.coords, k, sym)
    pred = model.predict(samples, graph, level=args.level)
    seed = resolve_seed(args.seed)
    out = run_dir(args.out, seed)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"predictions_{args.level}.csv"
    write_table(path, ["bin_index", "x", "y", *samples.gene_names],
                ([int(b), float(c[0]), float(c[1]), *map(float, row)]
                 for b, c, row in zip(samples.bin_index, samples.coords, pred)))
    write_run_manifest(out, "predict", argv, {"level": args.level}, [Path(args.checkpoint), Path(args.data)], seed)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_export_heatmap(args, argv) -> int:
    model, meta, k, sym = _load_for_eval(args)
    samples = build_samples(read_slide(Path(args.data)))
    if args.gene not in samples.gene_names:
        raise InvalidArgumentError(f"gene {args.gene!r} is not in the dataset's gene panel")
    g = samples.gene_names.index(args.gene)
    graph = build_knn_graph(samples.coords, k, sym)
    values = model.predict(samples, graph, level=args.level)[:, g]
    seed = resolve_seed(args.seed)
    out = run_dir(args.out, seed)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"heatmap_{args.gene}_{args.level}.csv"
    write_table(path, ["x", "y", "predicted_value"],
                ([float(c[0]), float(c[1]), float(v)] for c, v in zip(samples.coords, values)))
    if args.figures:
        from .plotting import plot_heatmap

        plot_heatmap(samples.coords, values, path.with_suffix(".png"), title=f"{args.gene} ({args.level})")
    write_run_manifest(out, "export-heatmap", argv, {"gene": args.gene, "level": args.level},
                       [Path(args.checkpoint), Path(args.data)], seed)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args, argv) -> int:
    from .graph import build_knn_graph as knn
    from .model import MagNet, ModelInputs

    seed = resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    config = TrainConfig(d=args.d, heads=args.heads, head_dim=args.head_dim, rounds=args.rounds, seed=seed)
    mcfg = config.model_config(args.genes, (args.input_dim,) * 3)
    model = MagNet.initialize(mcfg, seed=seed)
    n = args.bins
    inputs = ModelInputs(rng.normal(size=(n, args.input_dim)), rng.normal(size=(n, 1, args.input_dim)),
                         rng.normal(size=(n, 1, args.input_dim)))
    graph = knn(rng.uniform(0, 256, size=(n, 2)), min(config.top_k, n - 1))
    targets = {lvl: rng.normal(size=(n, args.genes)) for lvl in ("bin", "spot", "region")}
    result = gradient_check(model, composite_loss_fn(model, inputs, graph, targets, config),
                            tolerance=args.tolerance, max_per_tensor=args.max_per_tensor, seed=seed)
    status = "PASS" if result.passed else "FAIL"
    print(f"{status} max relative error {result.max_rel_error:.3e} over {result.n_checked} entries "
          f"(worst {result.worst[0]}{list(result.worst[1])}, tolerance {result.tolerance:g})")
    return EXIT_OK if result.passed else EXIT_FAILED


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory (default: runs/<timestamp>_seed<seed>)"):
        sp.add_argument("--seed", type=int, default=None, help="random seed (fallback: $MAGNET_SEED, then 0)")
        sp.add_argument("--out", default=None, help=out_help)

    sp = sub.add_parser("synth-gen", help="generate a synthetic slide directory")
    common(sp)
    sp.add_argument("--n-bins", type=int, default=64)
    sp.add_argument("--n-spots", type=int, default=16)
    sp.add_argument("--n-regions", type=int, default=4)
    sp.add_argument("--n-genes", type=int, default=16)
    sp.add_argument("--feature-dim", type=int, default=16)
    sp.add_argument("--latent-dim", type=int, default=3)
    sp.add_argument("--noise-sigma", type=float, default=1.0)
    sp.add_argument("--slide-id", default=None)
    sp.set_defaults(func=cmd_synth_gen)

    sp = sub.add_parser("preprocess", help="select top genes and sample bins/spots")
    common(sp)
    sp.add_argument("--data", required=True, help="input slide directory")
    sp.add_argument("--top-genes", type=int, default=None, help="keep the N highest-mean genes (full scale: 250)")
    sp.add_argument("--scale", type=float, default=None, help="normalization scale (default 1e4)")
    sp.add_argument("--sample-bins", type=int, default=None, help="bins per slide (full scale: 6000)")
    sp.add_argument("--sample-spots", type=int, default=None, help="spots per slide (full scale: 2500)")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("build-graph", help="write the k-NN graph cache")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--k", type=int, default=8, help="neighbours per bin (full scale: 8)")
    sp.add_argument("--symmetrize", action="store_true", help="add reverse edges")
    sp.set_defaults(func=cmd_build_graph)

    sp = sub.add_parser("train", help="train (with bin holdout or WSI-level cross-validation)")
    common(sp)
    sp.add_argument("--data", required=True, nargs="+", help="one or more slide directories")
    sp.add_argument("--config", default=None, help="YAML/JSON file of training options")
    sp.add_argument("--steps", type=int, default=None, help="total optimizer steps (desk default 2000)")
    sp.add_argument("--lr", type=float, default=None, help="initial learning rate (desk default 1e-3; full scale 1e-4)")
    sp.add_argument("--batch-size", type=int, default=None, help="desk default 32; full scale 256")
    sp.add_argument("--momentum", type=float, default=None, help="full scale: 0.9")
    sp.add_argument("--weight-decay", type=float, default=None, help="full scale: 1e-4")
    sp.add_argument("--k", type=int, default=None, help="graph top-k (full scale: 8)")
    sp.add_argument("--symmetrize", action="store_true")
    sp.add_argument("--rounds", type=int, default=None, help="GAT rounds (default 2)")
    sp.add_argument("--heads", type=int, default=None)
    sp.add_argument("--head-dim", type=int, default=None)
    sp.add_argument("--d", type=int, default=None, help="encoder feature width (desk default 16)")
    sp.add_argument("--encoder", default=None,
                    help="precomputed|builtin-mlp|builtin-smallconv, or three comma-separated kinds")
    sp.add_argument("--patch-shape", default=None, help="C,H,W for builtin-smallconv")
    sp.add_argument("--target-level", choices=["bin", "spot"], default=None)
    sp.add_argument("--aggregate", choices=["rounds", "neighbors"], default=None)
    sp.add_argument("--pcc-axis", choices=["gene", "sample"], default=None)
    sp.add_argument("--holdout", type=float, default=None, help="held-out bin fraction for single-slide runs")
    sp.add_argument("--patience", type=int, default=None, help="early-stop epochs (off by default)")
    sp.add_argument("--dtype", choices=["float64", "float32"], default=None)
    sp.add_argument("--no-gat", action="store_true")
    sp.add_argument("--no-multires", action="store_true")
    sp.add_argument("--no-consistency", action="store_true")
    sp.add_argument("--no-residual", action="store_true")
    sp.add_argument("--folds", type=int, default=None, help="WSI-level folds (full scale: 4)")
    sp.add_argument("--fold", default="all", help="fold index or 'all'")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--no-figures", dest="figures", action="store_false")
    sp.set_defaults(func=cmd_train)

    def ckpt(sp):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--no-figures", dest="figures", action="store_false")

    sp = sub.add_parser("eval", help="metrics table for a checkpoint")
    common(sp)
    ckpt(sp)
    sp.add_argument("--data", required=True, nargs="+")
    sp.add_argument("--level", choices=["bin", "spot", "region", "all"], default="bin")
    sp.add_argument("--subset", choices=["heldout", "all"], default="heldout")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="write per-bin predictions")
    common(sp)
    ckpt(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--level", choices=["bin", "spot", "region"], default="bin")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("export-heatmap", help="write (x, y, predicted_value) for one gene")
    common(sp)
    ckpt(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--gene", required=True)
    sp.add_argument("--level", choices=["bin", "spot", "region"], default="bin")
    sp.set_defaults(func=cmd_export_heatmap)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    common(sp)
    sp.add_argument("--bins", type=int, default=6)
    sp.add_argument("--d", type=int, default=8)
    sp.add_argument("--heads", type=int, default=2)
    sp.add_argument("--head-dim", type=int, default=4)
    sp.add_argument("--rounds", type=int, default=2)
    sp.add_argument("--genes", type=int, default=3)
    sp.add_argument("--input-dim", type=int, default=5)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--max-per-tensor", type=int, default=None)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except InvalidDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidArgumentError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StateError, MagnetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


def main() -> None:
    sys.exit(run())
