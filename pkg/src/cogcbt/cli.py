"""Command line entry point: ``cogcbt <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data or format error,
4 numerical failure (divergence, degenerate reservoir).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio
from .config import RunConfig, UPDATE_RULE_ALIASES, dump_config, load_config
from .coopt import CooptConfig, ExperimentBundle, co_train, load_bundle, median_of_views, refine_cbt, save_bundle
from .errors import CogCbtError, ConfigError, DataError, LagError, NumericalError, SchemaError
from .evaluation import centeredness, evaluate_experiment
from .graphdata import FoldSplit, generate_synthetic_population, kfold_split, load_population, save_population
from .reservoir import check_lags, harvest_states, lag_correlation, predict, recall_protocol, usable_lags

log = logging.getLogger("cogcbt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RECALL_COLUMNS = ("lag", "r2")


def _resolve_config(args) -> RunConfig:
    cfg, warnings = load_config(args.config)
    for w in warnings:
        log.warning("config: %s", w)
    if getattr(args, "seed", None) is not None:
        cfg.run.seed = cfg.dgn.seed = cfg.esn.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.run.workers = args.workers
    if getattr(args, "folds", None) is not None:
        cfg.run.folds = args.folds
    if getattr(args, "update_rule", None) is not None:
        cfg.esn = dataclasses.replace(cfg.esn, update_rule=UPDATE_RULE_ALIASES[args.update_rule])
    if cfg.run.folds < 1 or cfg.run.workers < 1:
        raise ConfigError("run.folds", "folds and workers must be >= 1")
    return cfg


def load_frames(path, cfg: RunConfig) -> np.ndarray:
    """Read and downsample the recall sequence: train frames then test frames."""
    rc = cfg.recall
    need = rc.n_train_frames + rc.n_test_frames
    if not Path(path).is_file():
        raise DataError(f"image file not found: {path}")
    frames = dataio.read_idx_images(path, limit=rc.image_offset + need)[rc.image_offset:]
    if frames.shape[0] < need:
        raise DataError(f"{path}: need {need} frames after offset {rc.image_offset}, found {frames.shape[0]}")
    return dataio.downsample_sequence(frames, *rc.image_size)


def coopt_config(cfg: RunConfig, plain_dgn: bool = False) -> CooptConfig:
    if plain_dgn:
        return CooptConfig(cfg.dgn, cfg.esn, cfg.dgn.epochs + 1, "gnn_loss", cfg.recall.lags, cfg.recall.n_train_frames)
    return CooptConfig(cfg.dgn, cfg.esn, cfg.coopt.readout_refit_every, cfg.coopt.selection,
                       cfg.recall.lags, cfg.recall.n_train_frames)


def make_folds(ids, k: int, seed: int) -> list:
    if k == 1:
        return [FoldSplit(0, tuple(ids), ())]
    return kfold_split(ids, k, seed)


def _fit_fold(job):
    pop, fold, frames, ccfg, method = job
    bundle = co_train(pop.select(fold.train_ids), frames, ccfg)
    bundle.fold = fold
    bundle.method = method
    return bundle


def _fold_summary(bundle: ExperimentBundle, pop) -> dict:
    row = {
        "fold": bundle.fold.fold_index,
        "selected_epoch": bundle.selected_epoch,
        "epochs_run": bundle.traces[-1]["epoch"],
        "n_train": len(bundle.fold.train_ids),
        "n_test": len(bundle.fold.test_ids),
        "train_centeredness": centeredness(bundle.refined_cbt, pop.select(bundle.fold.train_ids).subjects),
        "test_centeredness": None,
    }
    chosen = next(r for r in bundle.traces if r["epoch"] == bundle.selected_epoch)
    for key in ("gnn_loss", "cog_loss", "vis_mc"):
        row[key] = None if np.isnan(chosen[key]) else chosen[key]
    if bundle.fold.test_ids:
        row["test_centeredness"] = centeredness(bundle.refined_cbt, pop.select(bundle.fold.test_ids).subjects)
    return row


def _train_folds(args, plain_dgn: bool) -> None:
    cfg = _resolve_config(args)
    pop = load_population(args.population)
    frames = load_frames(args.images, cfg)
    ccfg = coopt_config(cfg, plain_dgn)
    folds = make_folds(pop.ids, cfg.run.folds, cfg.run.seed)
    method = "dgn" if plain_dgn else "coggnn"
    jobs = [(pop, f, frames, ccfg, method) for f in folds]
    if cfg.run.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.workers) as pool:
            bundles = list(pool.map(_fit_fold, jobs))
    else:
        bundles = [_fit_fold(j) for j in jobs]
    with dataio.atomic_directory(args.out) as tmp:
        for b in bundles:
            save_bundle(b, tmp / f"fold_{b.fold.fold_index}")
        (tmp / "run_config.ini").write_text(dump_config(cfg))
        dataio.write_json(tmp / "summary.json", {
            "method": method,
            "seed": cfg.run.seed,
            "update_rule": cfg.esn.update_rule,
            "folds": [_fold_summary(b, pop) for b in bundles],
        })
    log.info("wrote %d fold bundles to %s", len(bundles), args.out)


def cmd_synth(args) -> None:
    cfg = _resolve_config(args)
    s = cfg.synth
    pop = generate_synthetic_population(
        s.n_subjects, s.n_regions, s.n_views, s.classes, s.noise_sigma,
        s.view_scales or None, cfg.run.seed,
    )
    with dataio.atomic_directory(args.out) as tmp:
        save_population(pop, tmp)
        (tmp / "synth_config.ini").write_text(dump_config(cfg))


def cmd_train(args) -> None:
    _train_folds(args, plain_dgn=True)


def cmd_cotrain(args) -> None:
    _train_folds(args, plain_dgn=False)


def cmd_refine(args) -> None:
    stack = []
    for p in map(Path, args.inputs):
        if p.is_dir():
            per_subject = load_bundle(p).per_subject_cbts
            stack.extend(per_subject[k] for k in sorted(per_subject))
        else:
            stack.append(dataio.read_matrix_csv(p))
    if not stack:
        raise DataError("no templates given")
    try:
        refined = refine_cbt(stack)
    except DataError as exc:
        raise SchemaError(args.inputs[0], str(exc)) from exc
    with dataio.atomic_directory(args.out) as tmp:
        dataio.write_matrix_csv(tmp / "cbt.csv", refined)


def _load_run(root) -> list:
    root = Path(root)
    if not root.is_dir():
        raise SchemaError(root, "run directory not found")
    dirs = sorted((d for d in root.iterdir() if d.is_dir() and d.name.startswith("fold_")),
                  key=lambda d: int(d.name.split("_")[1]))
    if not dirs:
        raise SchemaError(root, "no fold_<k> bundles found")
    return [load_bundle(d) for d in dirs]


def median_baselines(bundles, pop) -> list:
    out = []
    for b in bundles:
        if b.fold is None:
            raise SchemaError("bundle", "bundle carries no fold split")
        cbt = median_of_views(pop.select(b.fold.train_ids))
        out.append(ExperimentBundle(cbt, {}, None, None, [], {}, b.seed, 0, b.fold, "median_views"))
    return out


def cmd_eval(args) -> None:
    cfg = _resolve_config(args)
    pop = load_population(args.population)
    frames = load_frames(args.images, cfg)
    bundles = _load_run(args.run)
    if args.baseline == "median":
        baselines = median_baselines(bundles, pop)
    else:
        baselines = _load_run(args.baseline)
    test_sets = [pop.select(b.fold.test_ids).subjects for b in bundles]
    reference = pop.stacked().mean(axis=(0, 1))
    names = (bundles[0].method, baselines[0].method)
    if names[0] == names[1]:
        names = (names[0], names[1] + "_baseline")
    report = evaluate_experiment(bundles, baselines, test_sets, frames, cfg.recall.lags, cfg.esn,
                                 cfg.recall.n_train_frames, reference=reference, names=names)
    with dataio.atomic_directory(args.out) as tmp:
        report.write(tmp)


def cmd_recall_demo(args) -> None:
    cfg = _resolve_config(args)
    frames = load_frames(args.images, cfg)
    n_train = cfg.recall.n_train_frames
    lags = usable_lags(cfg.recall.lags, n_train)
    if not lags:
        raise LagError(f"no lag in {cfg.recall.lags} fits {n_train} training frames")
    check_lags(lags, frames.shape[0])
    flat = frames.reshape(frames.shape[0], -1)
    summary = {"mode": args.mode, "update_rule": cfg.esn.update_rule, "lags": lags,
               "n_train_frames": n_train, "n_test_frames": frames.shape[0] - n_train}
    if args.mode == "identity-oracle":
        T = flat.shape[0]
        profile = {tau: lag_correlation(flat[n_train - tau:T - tau], flat[n_train - tau:T - tau]) ** 2 for tau in lags}
        summary["cog_loss"] = 0.0
    else:
        if args.cbt is None:
            raise ConfigError("--cbt", "a template is required unless --mode identity-oracle")
        cbt = dataio.read_matrix_csv(args.cbt)
        if args.mode == "shuffled":
            # drive the reservoir with an independent permutation, score against the true order
            perm = np.random.default_rng(cfg.run.seed).permutation(frames.shape[0])
            res = recall_protocol(cbt, frames[perm], cfg.esn, lags, n_train)
            states = harvest_states(res["esn"], frames[perm])
            profile = {}
            for tau in lags:
                pred = predict(res["esn"], states[n_train:], tau)
                profile[tau] = lag_correlation(flat[n_train - tau:frames.shape[0] - tau], pred) ** 2
        else:
            res = recall_protocol(cbt, frames, cfg.esn, lags, n_train)
            profile = res["profile"]
        summary["cog_loss"] = res["cog_loss"]
    summary["vis_mc"] = float(sum(profile.values()))
    with dataio.atomic_directory(args.out) as tmp:
        lines = [",".join(RECALL_COLUMNS)] + [f"{tau},{format(profile[tau], '.17g')}" for tau in lags]
        (tmp / "recall.csv").write_text("\n".join(lines) + "\n")
        dataio.write_json(tmp / "recall.json", summary)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cogcbt", description="Cognitively enhanced brain template learning.")
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    add = sub.add_parser

    def sub_add_parser(name, **kw):
        return add(name, parents=[verbose], **kw)

    sub.add_parser = sub_add_parser

    def common(p, out_help):
        p.add_argument("--config", help="INI configuration file (defaults when omitted)")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--seed", type=int)
        p.add_argument("--update-rule", choices=sorted(UPDATE_RULE_ALIASES))
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic population"), "population directory")
    p.set_defaults(func=cmd_synth)

    for name, func, text in (("train", cmd_train, "plain DGN training per fold"),
                             ("cotrain", cmd_cotrain, "co-optimised training per fold")):
        p = common(sub.add_parser(name, help=text), "run directory (one bundle per fold)")
        p.add_argument("--population", required=True)
        p.add_argument("--images", required=True, help="uncompressed IDX image file")
        p.add_argument("--folds", type=int)
        p.add_argument("--workers", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("refine", help="element-wise median of templates")
    p.add_argument("inputs", nargs="+", help="CSV templates or bundle directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = common(sub.add_parser("eval", help="compare a run against a baseline"), "report directory")
    p.add_argument("--run", required=True, help="run directory from train/cotrain")
    p.add_argument("--baseline", default="median", help="'median' or another run directory")
    p.add_argument("--population", required=True)
    p.add_argument("--images", required=True)
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("recall-demo", help="delayed visual recall with one template"), "output directory")
    p.add_argument("--cbt", help="template CSV")
    p.add_argument("--images", required=True)
    p.add_argument("--mode", choices=("reservoir", "identity-oracle", "shuffled"), default="reservoir")
    p.set_defaults(func=cmd_recall_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CogCbtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
