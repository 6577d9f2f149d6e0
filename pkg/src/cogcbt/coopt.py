"""Alternating co-optimisation of the template and the cognitive reservoir.

Each epoch takes one DGN pass on the centeredness loss. Every
``readout_refit_every`` epochs the per-subject templates are median-refined,
turned into a reservoir and the delayed-recall readouts are refitted, which
yields the cognitive loss. The cognitive branch reaches the graph network
only through checkpoint selection on the summed objective; no gradient flows
back through the reservoir.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .dgn import DgnTrainer, EccNetwork, TrainConfig, network_from_dict, network_to_dict
from .errors import DimensionError, SchemaError
from .graphdata import FoldSplit, Population
from .linalg import elementwise_median
from .reservoir import EchoStateNetwork, EsnConfig, esn_from_dict, esn_to_dict, recall_protocol

log = logging.getLogger(__name__)

SELECTIONS = ("combined_loss", "gnn_loss")
TRACE_COLUMNS = ("epoch", "train_loss", "gnn_loss", "cog_loss", "combined_loss", "vis_mc")
BUNDLE_FILES = ("cbt.csv", "dgn.json", "esn.json", "traces.csv", "config.json", "subject_cbts.json")
BUNDLE_VERSION = 1


@dataclass
class CooptConfig:
    dgn: TrainConfig = field(default_factory=TrainConfig)
    esn: EsnConfig = field(default_factory=EsnConfig)
    readout_refit_every: int = 10
    selection: str = "combined_loss"
    lags: tuple = tuple(range(5, 41))
    n_train_frames: int = 15

    def __post_init__(self):
        self.lags = tuple(int(t) for t in self.lags)
        if self.readout_refit_every < 1:
            raise ValueError("readout_refit_every must be >= 1")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")


@dataclass
class ExperimentBundle:
    refined_cbt: np.ndarray
    per_subject_cbts: dict
    network: EccNetwork | None
    esn: EchoStateNetwork | None
    traces: list
    config: dict
    seed: int
    selected_epoch: int = 0
    fold: FoldSplit | None = None
    method: str = "coggnn"


def refine_cbt(per_subject_cbts) -> np.ndarray:
    """Element-wise median of the per-subject templates."""
    if isinstance(per_subject_cbts, dict):
        per_subject_cbts = list(per_subject_cbts.values())
    if len(per_subject_cbts) == 0:
        raise DimensionError("no templates to refine")
    return elementwise_median(per_subject_cbts)


def median_of_views(pop: Population) -> np.ndarray:
    """Baseline template: entry-wise median over every view of every subject."""
    stack = pop.stacked()
    return elementwise_median(list(stack.reshape(-1, pop.n_r, pop.n_r)))


def co_train(pop_train: Population, images, cfg: CooptConfig) -> ExperimentBundle:
    frames = np.asarray(images, dtype=np.float64)
    trainer = DgnTrainer(pop_train, cfg.dgn)
    trace = []
    best = None
    best_gnn, best_gnn_epoch = np.inf, 0

    def refit():
        cbts = trainer.subject_cbts()
        refined = refine_cbt(cbts)
        res = recall_protocol(refined, frames, cfg.esn, cfg.lags, cfg.n_train_frames)
        return cbts, refined, res

    def consider(epoch, gnn, fitted):
        nonlocal best
        if cfg.selection == "combined_loss":
            if fitted is None:
                return
            score = gnn + fitted[2]["cog_loss"]
        else:
            score = gnn
        if best is None or score < best["score"]:
            best = {"score": score, "epoch": epoch, "net": trainer.net.copy(), "fitted": fitted}

    def record(epoch, train_loss, gnn, fitted):
        row = {"epoch": epoch, "train_loss": train_loss, "gnn_loss": gnn,
               "cog_loss": np.nan, "combined_loss": np.nan, "vis_mc": np.nan}
        if fitted is not None:
            res = fitted[2]
            row.update(cog_loss=res["cog_loss"], combined_loss=gnn + res["cog_loss"], vis_mc=res["vis_mc"])
        trace.append(row)

    gnn = trainer.evaluation_loss()
    fitted = refit()
    record(0, np.nan, gnn, fitted)
    consider(0, gnn, fitted)
    best_gnn = gnn
    epoch = 0
    for epoch in range(1, cfg.dgn.epochs + 1):
        train_loss = trainer.run_epoch(epoch)
        gnn = trainer.evaluation_loss()
        stop = False
        if gnn < best_gnn:
            best_gnn, best_gnn_epoch = gnn, epoch
        elif epoch - best_gnn_epoch >= cfg.dgn.early_stop_patience:
            stop = True
        last = stop or epoch == cfg.dgn.epochs
        fitted = refit() if (epoch % cfg.readout_refit_every == 0 or last) else None
        record(epoch, train_loss, gnn, fitted)
        consider(epoch, gnn, fitted)
        if stop:
            log.info("early stop at epoch %d", epoch)
            break

    net = best["net"]
    cbts = trainer.subject_cbts(net)
    fitted = best["fitted"]
    if fitted is None:
        refined = refine_cbt(cbts)
        res = recall_protocol(refined, frames, cfg.esn, cfg.lags, cfg.n_train_frames)
    else:
        refined, res = fitted[1], fitted[2]
    return ExperimentBundle(
        refined_cbt=refined,
        per_subject_cbts=cbts,
        network=net,
        esn=res["esn"],
        traces=trace,
        config=config_snapshot(cfg),
        seed=cfg.dgn.seed,
        selected_epoch=best["epoch"],
    )


def config_snapshot(cfg: CooptConfig) -> dict:
    d = asdict(cfg)
    d["dgn"]["layer_dims"] = list(cfg.dgn.layer_dims)
    d["lags"] = list(cfg.lags)
    return d


def _format_float(x) -> str:
    return format(float(x), ".17g")


def save_bundle(bundle: ExperimentBundle, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_matrix_csv(out / "cbt.csv", bundle.refined_cbt)
    net = {"format_version": BUNDLE_VERSION, "kind": "none"} if bundle.network is None else network_to_dict(bundle.network)
    dataio.write_json(out / "dgn.json", net)
    esn = {"format_version": BUNDLE_VERSION, "kind": "none"} if bundle.esn is None else esn_to_dict(bundle.esn)
    dataio.write_json(out / "esn.json", esn)
    lines = [",".join(TRACE_COLUMNS)]
    for row in bundle.traces:
        lines.append(",".join(str(row["epoch"]) if c == "epoch" else _format_float(row[c]) for c in TRACE_COLUMNS))
    (out / "traces.csv").write_text("\n".join(lines) + "\n")
    fold = None if bundle.fold is None else {
        "fold_index": bundle.fold.fold_index,
        "train_ids": list(bundle.fold.train_ids),
        "test_ids": list(bundle.fold.test_ids),
    }
    dataio.write_json(out / "config.json", {
        "format_version": BUNDLE_VERSION,
        "method": bundle.method,
        "seed": bundle.seed,
        "selected_epoch": bundle.selected_epoch,
        "fold": fold,
        "config": bundle.config,
    })
    dataio.write_json(out / "subject_cbts.json", {k: v for k, v in sorted(bundle.per_subject_cbts.items())})


def load_bundle(in_dir) -> ExperimentBundle:
    d = Path(in_dir)
    for name in BUNDLE_FILES:
        if not (d / name).is_file():
            raise SchemaError(d / name, "missing bundle file")
    cbt = dataio.read_matrix_csv(d / "cbt.csv")
    if cbt.shape[0] != cbt.shape[1]:
        raise SchemaError(d / "cbt.csv", "template is not square")
    net_d = dataio.read_json(d / "dgn.json")
    network = None if net_d.get("kind") == "none" else network_from_dict(net_d, d / "dgn.json")
    esn_d = dataio.read_json(d / "esn.json")
    esn = None if esn_d.get("kind") == "none" else esn_from_dict(esn_d, d / "esn.json")
    meta = dataio.read_json(d / "config.json")
    try:
        fold = meta["fold"]
        fold = None if fold is None else FoldSplit(int(fold["fold_index"]), tuple(fold["train_ids"]), tuple(fold["test_ids"]))
        method, seed, selected, config = meta["method"], int(meta["seed"]), int(meta["selected_epoch"]), meta["config"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(d / "config.json", f"malformed bundle metadata ({exc})") from exc
    traces = []
    lines = (d / "traces.csv").read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != TRACE_COLUMNS:
        raise SchemaError(d / "traces.csv", "unexpected header")
    try:
        for line in lines[1:]:
            vals = line.split(",")
            row = {c: float(v) for c, v in zip(TRACE_COLUMNS, vals)}
            row["epoch"] = int(vals[0])
            traces.append(row)
    except (ValueError, IndexError) as exc:
        raise SchemaError(d / "traces.csv", f"malformed row ({exc})") from exc
    subj = dataio.read_json(d / "subject_cbts.json")
    try:
        per_subject = {k: np.array(v, dtype=np.float64) for k, v in subj.items()}
    except (TypeError, ValueError) as exc:
        raise SchemaError(d / "subject_cbts.json", f"malformed templates ({exc})") from exc
    return ExperimentBundle(cbt, per_subject, network, esn, traces, config, seed, selected, fold, method)
