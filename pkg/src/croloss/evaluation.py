"""Full-catalog Recall@N and the numerical oracles used to check the rest of the package."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from croloss.model import TwoTowerModel, normalize

TIE_POLICY = "positive loses ties: rank = 1 + #{i != pos : s_i >= s_pos}"


@dataclass
class EvalReport:
    recall_at: dict[int, float]
    num_pairs: int
    mode: str = "all"
    tie_policy: str = TIE_POLICY
    exclude_history: bool = False

    def to_json(self) -> str:
        d = asdict(self)
        d["recall_at"] = {str(k): v for k, v in sorted(self.recall_at.items())}
        return json.dumps(d, sort_keys=True)

    def table(self) -> str:
        ns = sorted(self.recall_at)
        head = " ".join(f"{'R@' + str(n):>8}" for n in ns)
        row = " ".join(f"{100 * self.recall_at[n]:8.2f}" for n in ns)
        return (f"{head}\n{row}\n({self.num_pairs} pairs, targets={self.mode}, "
                f"exclude_history={self.exclude_history})")


def brute_force_rank(scores: np.ndarray, pos: int) -> int:
    """Rank of ``scores[pos]`` among all scores; ties go against the positive."""
    scores = np.asarray(scores)
    others = np.delete(scores, pos)
    return 1 + int(np.count_nonzero(others >= scores[pos]))


def ranks_by_counting(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Vectorised :func:`brute_force_rank` for a (B, |I|) score matrix."""
    pos = scores[np.arange(len(targets)), targets]
    # the positive itself satisfies >=, which supplies the leading 1
    return np.count_nonzero(scores >= pos[:, None], axis=1)


def recall_from_ranks(ranks: np.ndarray, ns: Iterable[int]) -> dict[int, float]:
    """Indicator form: fraction of pairs with ``rank <= N``."""
    ranks = np.asarray(ranks)
    if len(ranks) == 0:
        return {int(n): 0.0 for n in ns}
    return {int(n): float(np.count_nonzero(ranks <= n)) / len(ranks) for n in ns}


def recall_by_top_n(scores: np.ndarray, targets: np.ndarray, ns: Iterable[int]) -> dict[int, float]:
    """Set-membership form: is the positive among the N largest scores?

    Among equal scores the positive is ordered last, matching the tie policy.
    """
    scores = np.asarray(scores)
    hits = {int(n): 0 for n in ns}
    for row, t in zip(scores, targets):
        is_pos = np.zeros(len(row), dtype=np.int8)
        is_pos[t] = 1
        order = np.lexsort((is_pos, -row))
        for n in hits:
            hits[n] += int(t in set(order[:n].tolist()))
    m = max(len(targets), 1)
    return {n: h / m for n, h in hits.items()}


def score_matrix(model: TwoTowerModel, history, lengths, item_hat=None) -> np.ndarray:
    """``tau * cos`` scores of a batch of users against the whole catalog."""
    if item_hat is None:
        item_hat, _ = normalize(model.all_item_vectors())
    u_hat, _ = normalize(model.user_forward(history, lengths))
    return model.tau * (u_hat @ item_hat.T)


def recall_at_n(model: TwoTowerModel, samples, ns: Sequence[int], exclude_history: bool = False,
                chunk: int = 1024) -> EvalReport:
    """Exact Recall@N for every N in ``ns`` over full-catalog scores.

    With ``exclude_history`` the user's history items (other than the target)
    are removed from the candidate set.
    """
    catalog = model.catalog_size
    ns = sorted({int(n) for n in ns})
    for n in ns:
        if not 1 <= n <= catalog:
            raise ValueError(f"N={n} outside [1, {catalog}]")
    item_hat, _ = normalize(model.all_item_vectors())
    ranks = np.empty(len(samples), dtype=np.int64)
    for start in range(0, len(samples), chunk):
        sl = slice(start, start + chunk)
        hist, lens, tgt = samples.history[sl], samples.length[sl], samples.target[sl]
        scores = score_matrix(model, hist, lens, item_hat)
        if exclude_history:
            rows = np.arange(len(tgt))
            mask = np.arange(hist.shape[1])[None, :] < lens[:, None]
            r_idx = np.broadcast_to(rows[:, None], hist.shape)[mask]
            c_idx = hist[mask]
            keep = c_idx != tgt[r_idx]
            scores[r_idx[keep], c_idx[keep]] = -np.inf
        ranks[sl] = ranks_by_counting(scores, tgt)
    return EvalReport(recall_from_ranks(ranks, ns), len(samples), getattr(samples, "mode", "all"),
                      exclude_history=exclude_history)


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: int
    numeric: np.ndarray = field(repr=False)

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol


def finite_diff_check(f: Callable[[np.ndarray], float], x: np.ndarray, analytic: np.ndarray,
                      h: float = 1e-5, floor: float = 1e-8) -> GradCheckResult:
    """Compare ``analytic`` against central differences of ``f`` at ``x``.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    flat = x.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        numeric[i] = (fp - fm) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else -1
    return GradCheckResult(float(rel.max()) if rel.size else 0.0, worst, numeric)
