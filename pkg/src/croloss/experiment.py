"""Build datasets, losses and training runs from a :class:`RunConfig`."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from croloss.config import ConfigError, RunConfig
from croloss.data import BehaviorLog, Splits, ingest, prepare_splits
from croloss.evaluation import EvalReport, recall_at_n
from croloss.kernels import Kernel
from croloss.losses import LossFamily, LossSpec
from croloss.model import TwoTowerModel
from croloss.synthetic import clustered_log
from croloss.trainer import TrainConfig, TrainResult, train
from croloss.weighting import make_weighting

BASELINES = ("softmax_ce", "triplet", "bpr")


def load_log(cfg: RunConfig) -> BehaviorLog:
    d = cfg["data"]
    if d["source"] == "synthetic":
        return clustered_log(n_users=d["synthetic_users"], n_items=d["synthetic_items"],
                             n_clusters=d["synthetic_clusters"], seed=d["synthetic_seed"])
    if d["source"] != "file":
        raise ConfigError(f"data.source must be 'file' or 'synthetic', got {d['source']!r}")
    if not d["path"]:
        raise ConfigError("data.path is empty")
    return ingest(d["path"], cfg.delimiter)


def build_splits(cfg: RunConfig, log: Optional[BehaviorLog] = None) -> Splits:
    d = cfg["data"]
    if d["eval_targets"] not in ("all", "last"):
        raise ConfigError(f"data.eval_targets must be 'all' or 'last', got {d['eval_targets']!r}")
    if log is None:
        log = load_log(cfg)
    return prepare_splits(log, d["max_len"], d["seed"], d["eval_targets"], d["split"])


def build_loss(cfg: RunConfig, catalog_size: int) -> LossSpec:
    lc = cfg["loss"]
    try:
        family = LossFamily(lc["family"])
    except ValueError:
        raise ConfigError(f"unknown loss.family {lc['family']!r}") from None
    try:
        if family is LossFamily.CROLOSS:
            return LossSpec(family, kernel=Kernel.parse(lc["kernel"], lc["margin"]),
                            weighting=make_weighting(lc["alpha"], catalog_size))
        if family is LossFamily.CROLOSS_LAMBDA:
            return LossSpec(family, kernel1=Kernel.parse(lc["kernel1"], lc["margin"]),
                            kernel2=Kernel.parse(lc["kernel2"], lc["margin"]),
                            weighting=make_weighting(lc["alpha"], catalog_size))
        return LossSpec(family, margin=lc["margin"])
    except ValueError as exc:
        raise ConfigError(f"invalid loss section: {exc}") from None


def build_train_config(cfg: RunConfig, loss: LossSpec) -> TrainConfig:
    t, d, e = cfg["train"], cfg["data"], cfg["eval"]
    try:
        return TrainConfig(
            loss=loss, lr=t["lr"], adam_beta1=t["adam_beta1"], adam_beta2=t["adam_beta2"],
            adam_eps=t["adam_eps"], epochs=t["epochs"], max_steps=t["max_steps"],
            eval_every=t["eval_every"], patience=t["patience"], seed=t["seed"],
            n_bs=d["n_bs"], n_rn=d["n_rn"], eval_ns=tuple(e["ns"]), pivot_n=e["pivot_n"],
            average_loss=t["average_loss"], exclude_history=e["exclude_history"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_model(cfg: RunConfig, catalog_size: int) -> TwoTowerModel:
    m = cfg["model"]
    return TwoTowerModel.init(catalog_size, m["dim"], m["hidden"], m["out"], m["tau"],
                              seed=cfg["train"]["seed"], dtype=np.dtype(m["dtype"]))


def eval_ns(cfg: RunConfig, catalog_size: int) -> list[int]:
    ns = sorted(set(cfg["eval"]["ns"]))
    bad = [n for n in ns if not 1 <= n <= catalog_size]
    if bad:
        raise ConfigError(f"eval.ns {bad} outside [1, {catalog_size}]")
    return ns


@dataclass
class RunOutcome:
    result: TrainResult
    report: EvalReport
    label: str
    history_lines: list[str] = field(default_factory=list)


def run_training(cfg: RunConfig, splits: Splits, on_record=None) -> RunOutcome:
    """Train on ``splits`` and evaluate the best snapshot on the test split."""
    loss = build_loss(cfg, splits.catalog_size)
    tcfg = build_train_config(cfg, loss)
    ns = eval_ns(cfg, splits.catalog_size)
    model = build_model(cfg, splits.catalog_size)
    lines: list[str] = []

    def record(rec):
        lines.append(json.dumps(rec, sort_keys=True))
        if on_record is not None:
            on_record(rec)

    result = train(model, splits, tcfg, record)
    report = recall_at_n(result.model, splits.test, ns, cfg["eval"]["exclude_history"])
    return RunOutcome(result, report, loss.label, lines)


def cell_overrides(kernel: str, alpha: Optional[float]) -> list[str]:
    """``--set`` style overrides for one sweep cell.

    ``kernel`` is a kernel name, ``lambda:k1/k2`` or a baseline family name.
    """
    if kernel in BASELINES:
        return [f"loss.family={kernel}"]
    if kernel.startswith("lambda:"):
        k1, _, k2 = kernel[len("lambda:"):].partition("/")
        if not k1 or not k2:
            raise ConfigError(f"lambda cell {kernel!r} must look like lambda:kernel1/kernel2")
        out = ["loss.family=croloss_lambda", f"loss.kernel1={k1}", f"loss.kernel2={k2}"]
    else:
        out = ["loss.family=croloss", f"loss.kernel={kernel}"]
    return out + [f"loss.alpha={alpha!r}"]
