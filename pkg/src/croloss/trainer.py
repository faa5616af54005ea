"""Mini-batch training: shared-negative batches, loss dispatch, Adam, early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from croloss.data import Batch, SampleSet, Splits, make_batches
from croloss.evaluation import recall_at_n
from croloss.losses import LossSpec, compute_loss
from croloss.model import TwoTowerModel
from croloss.ranking import GapBatch

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss: LossSpec
    lr: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    max_steps: int = 0
    eval_every: int = 0
    patience: int = 3
    seed: int = 0
    n_bs: int = 256
    n_rn: int = 10
    eval_ns: Sequence[int] = (50, 100, 200, 500)
    pivot_n: int = 50
    average_loss: bool = True
    exclude_history: bool = False

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              rows: Optional[dict[str, np.ndarray]] = None) -> None:
    """One bias-corrected Adam update, applied in place to ``params`` and ``state``.

    ``rows[name]`` restricts the update of that parameter (moments included) to
    the given leading-axis rows, for sparse embedding updates.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        p, m, v = params[name], state.m[name], state.v[name]
        idx = None if rows is None else rows.get(name)
        if idx is not None:
            g = g[idx]
            m_new = beta1 * m[idx] + (1 - beta1) * g
            v_new = beta2 * v[idx] + (1 - beta2) * g * g
            m[idx], v[idx] = m_new, v_new
            p[idx] -= lr * (m_new / c1) / (np.sqrt(v_new / c2) + eps)
        else:
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def batch_loss(model: TwoTowerModel, samples: SampleSet, batch: Batch, spec: LossSpec):
    """Forward one batch: returns ``(LossOutput, cache, gap batch)``."""
    idx = batch.index
    targets = samples.target[idx]
    pos, neg, cache = model.forward_batch(samples.history[idx], samples.length[idx],
                                          targets, batch.negatives)
    mask = batch.collision_mask(targets)
    gaps = GapBatch.from_scores(pos, neg, mask, batch.sample_scale(mask))
    return compute_loss(spec, gaps), cache, gaps


def touched_rows(samples: SampleSet, batch: Batch) -> np.ndarray:
    idx = batch.index
    hist_mask = np.arange(samples.history.shape[1])[None, :] < samples.length[idx][:, None]
    return np.unique(np.concatenate([samples.target[idx], batch.negatives,
                                     samples.history[idx][hist_mask]]))


@dataclass
class TrainResult:
    model: TwoTowerModel
    history: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_step: int = 0
    best_recall: float = float("nan")
    steps: int = 0


def train(model: TwoTowerModel, splits: Splits, cfg: TrainConfig,
          on_record: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train ``model`` in place; return the best-on-validation snapshot and the history.

    Validation runs every ``cfg.eval_every`` steps (every epoch when 0).  Training
    stops after ``cfg.patience`` evaluations without improvement of Recall@pivot,
    after ``cfg.epochs`` epochs, or after ``cfg.max_steps`` steps when positive.
    """
    if model.catalog_size != splits.catalog_size:
        raise ValueError(f"model catalog {model.catalog_size} != data catalog {splits.catalog_size}")
    samples = splits.train
    steps_per_epoch = max(1, -(-len(samples) // cfg.n_bs))
    eval_every = cfg.eval_every or steps_per_epoch
    ns = sorted(set(cfg.eval_ns) | {cfg.pivot_n})
    ns = [n for n in ns if n <= model.catalog_size]
    state = AdamState.zeros(model.params)
    result = TrainResult(model.copy())
    best = -np.inf
    bad_evals = 0
    window: list[float] = []

    def evaluate(step: int, epoch: int) -> bool:
        nonlocal best, bad_evals
        record = {"step": step, "epoch": epoch,
                  "loss": float(np.mean(window)) if window else float("nan")}
        window.clear()
        if len(splits.valid):
            report = recall_at_n(model, splits.valid, ns, cfg.exclude_history)
            record.update({f"recall@{n}": report.recall_at[n] for n in ns})
            score = report.recall_at.get(cfg.pivot_n, report.recall_at[ns[-1]])
        else:
            score = -float(record["loss"])
        result.history.append(record)
        if on_record is not None:
            on_record(record)
        if score > best:
            best = score
            bad_evals = 0
            result.model = model.copy()
            result.best_step = step
            result.best_recall = float(score)
        else:
            bad_evals += 1
        return bad_evals >= cfg.patience

    step = 0
    epoch = 0
    for batch in make_batches(samples, cfg.n_bs, cfg.n_rn, model.catalog_size, cfg.seed, cfg.epochs):
        epoch = batch.epoch
        out, cache, _ = batch_loss(model, samples, batch, cfg.loss)
        if not np.isfinite(out.value):
            raise TrainingError(f"non-finite loss at batch {batch.batch_id} (epoch {epoch})")
        n_pos = len(batch.index)
        scale = 1.0 / n_pos if cfg.average_loss else 1.0
        grads = model.backward(cache, out.grad_pos * scale, out.grad_neg * scale)
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in {name!r} at batch {batch.batch_id}")
        adam_step(model.params, grads, state, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                  rows={"item_emb": touched_rows(samples, batch)})
        loss = out.value / n_pos
        result.step_losses.append(loss)
        window.append(loss)
        step += 1
        if step % eval_every == 0 and evaluate(step, epoch):
            logger.info("early stop at step %d", step)
            break
        if cfg.max_steps and step >= cfg.max_steps:
            break
    if window or not result.history:
        evaluate(step, epoch)
    result.steps = step
    return result
