"""Behaviour-log ingestion, user splits, next-item samples and shared-negative batches."""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class BehaviorLog:
    """Parsed click log.

    ``sequences[u]`` holds user ``u``'s item indices in timestamp order.
    ``user_ids`` / ``item_ids`` map contiguous indices back to raw ids.
    """

    sequences: list[np.ndarray]
    user_ids: list[str]
    item_ids: list[str]
    num_events: int = 0

    @property
    def catalog_size(self) -> int:
        return len(self.item_ids)

    @property
    def num_users(self) -> int:
        return len(self.user_ids)


def _open_text(path: Path):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def ingest(path, delimiter: str = "\t") -> BehaviorLog:
    """Read ``user <delim> item <delim> timestamp`` lines (optionally gzipped).

    A first line whose timestamp field is not an integer is treated as a header.
    Events of a user are sorted by timestamp; ties keep file order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    events: list[list[tuple[int, int]]] = []
    n = 0
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(delimiter)
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            user, item, ts = (p.strip() for p in parts)
            try:
                stamp = int(ts)
            except ValueError:
                if lineno == 1 and n == 0:
                    continue
                raise DataError(f"{path}:{lineno}: timestamp {ts!r} is not an integer") from None
            if not user or not item:
                raise DataError(f"{path}:{lineno}: empty user or item id")
            uidx = users.setdefault(user, len(users))
            if uidx == len(events):
                events.append([])
            events[uidx].append((stamp, items.setdefault(item, len(items))))
            n += 1
    if n == 0:
        raise DataError(f"{path}: no events")
    # sorted() is stable, so equal timestamps keep file order
    sequences = [np.array([it for _, it in sorted(ev, key=lambda e: e[0])], dtype=np.int64)
                 for ev in events]
    return BehaviorLog(sequences, list(users), list(items), n)


def write_log(log: BehaviorLog, path, delimiter: str = "\t") -> None:
    """Inverse of :func:`ingest` (timestamps are the within-user positions)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt", encoding="utf-8") as fh:
        for u, seq in enumerate(log.sequences):
            for t, item in enumerate(seq):
                fh.write(f"{log.user_ids[u]}{delimiter}{log.item_ids[item]}{delimiter}{t}\n")


def split_users(num_users: int, ratios: Sequence[float] = (8, 1, 1), seed: int = 0) -> list[np.ndarray]:
    """Seeded shuffle of ``range(num_users)`` cut into disjoint parts by ``ratios``."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios <= 0):
        raise ValueError("split ratios must be positive")
    if num_users < len(ratios):
        raise ValueError(f"cannot split {num_users} users into {len(ratios)} parts")
    share = ratios / ratios.sum() * num_users
    sizes = np.maximum(np.floor(share).astype(int), 1)
    # hand out (or take back) the rounding remainder by largest fractional part
    order = np.argsort(-(share - np.floor(share)), kind="stable")
    i = 0
    while sizes.sum() < num_users:
        sizes[order[i % len(sizes)]] += 1
        i += 1
    while sizes.sum() > num_users:
        j = int(np.argmax(sizes))
        sizes[j] -= 1
    perm = np.random.default_rng(seed).permutation(num_users)
    return np.split(perm, np.cumsum(sizes)[:-1])


@dataclass
class TrainingSample:
    history: np.ndarray
    target: int


@dataclass
class SampleSet:
    """Next-item samples as padded arrays.

    ``history[j, :length[j]]`` are the (up to ``max_len``) most recent items
    before ``target[j]``, oldest first.
    """

    history: np.ndarray
    length: np.ndarray
    target: np.ndarray
    user: np.ndarray
    mode: str = "all"

    def __len__(self) -> int:
        return len(self.target)

    def __getitem__(self, j: int) -> TrainingSample:
        return TrainingSample(self.history[j, : self.length[j]].copy(), int(self.target[j]))

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.history[idx], self.length[idx], self.target[idx], self.user[idx], self.mode)


def make_samples(log: BehaviorLog, users, max_len: int, mode: str = "all") -> SampleSet:
    """Predict event ``k+1`` from the events before it, for every user in ``users``.

    ``mode="last"`` keeps only each user's final event as target.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if mode not in ("all", "last"):
        raise ValueError(f"mode must be 'all' or 'last', got {mode!r}")
    hist_rows, lengths, targets, owners = [], [], [], []
    for u in users:
        seq = log.sequences[int(u)]
        if len(seq) < 2:
            continue
        positions = range(1, len(seq)) if mode == "all" else [len(seq) - 1]
        for k in positions:
            h = seq[max(0, k - max_len):k]
            row = np.zeros(max_len, dtype=np.int64)
            row[: len(h)] = h
            hist_rows.append(row)
            lengths.append(len(h))
            targets.append(seq[k])
            owners.append(int(u))
    if not hist_rows:
        return SampleSet(np.zeros((0, max_len), np.int64), np.zeros(0, np.int64),
                         np.zeros(0, np.int64), np.zeros(0, np.int64), mode)
    return SampleSet(np.stack(hist_rows), np.array(lengths, dtype=np.int64),
                     np.array(targets, dtype=np.int64), np.array(owners, dtype=np.int64), mode)


@dataclass(frozen=True)
class Batch:
    """One mini-batch: sample indices into a :class:`SampleSet` and a shared negative pool."""

    index: np.ndarray
    negatives: np.ndarray
    catalog_size: int
    batch_id: int = 0
    epoch: int = 0

    def collision_mask(self, targets: np.ndarray) -> np.ndarray:
        """(P, K) mask, False where a shared negative equals that sample's target."""
        return self.negatives[None, :] != np.asarray(targets)[:, None]

    def sample_scale(self, mask: np.ndarray) -> np.ndarray:
        """``|I| / |I'|`` per positive, ``|I'|`` = the positive plus its kept negatives."""
        return self.catalog_size / (1.0 + mask.sum(axis=1))


def make_batches(samples: SampleSet, n_bs: int, n_rn: int, catalog_size: int,
                 seed: int = 0, epochs: Optional[int] = 1) -> Iterator[Batch]:
    """Seeded stream of batches; ``n_rn * len(batch)`` uniform negatives per batch.

    Negatives are drawn with replacement and shared by every sample in the batch.
    ``epochs=None`` streams forever.
    """
    if n_bs < 1 or n_rn < 1:
        raise ValueError("n_bs and n_rn must be >= 1")
    if n_rn * n_bs + 1 > catalog_size:
        raise ValueError(
            f"n_rn * n_bs = {n_rn * n_bs} negatives would exceed the catalog of {catalog_size} "
            "items (sample scale < 1)")
    rng = np.random.default_rng(seed)
    n = len(samples)
    epoch = 0
    batch_id = 0
    while epochs is None or epoch < epochs:
        perm = rng.permutation(n)
        for start in range(0, n, n_bs):
            idx = perm[start:start + n_bs]
            negs = rng.integers(0, catalog_size, size=n_rn * len(idx))
            yield Batch(idx, negs, catalog_size, batch_id, epoch)
            batch_id += 1
        epoch += 1


@dataclass
class Splits:
    train: SampleSet
    valid: SampleSet
    test: SampleSet
    users: list[np.ndarray]
    catalog_size: int


def prepare_splits(log: BehaviorLog, max_len: int, seed: int = 0, eval_mode: str = "all",
                   ratios: Sequence[float] = (8, 1, 1)) -> Splits:
    """User-level split and sample generation; training always uses every position."""
    train_u, valid_u, test_u = split_users(log.num_users, ratios, seed)
    return Splits(
        train=make_samples(log, train_u, max_len, "all"),
        valid=make_samples(log, valid_u, max_len, eval_mode),
        test=make_samples(log, test_u, max_len, eval_mode),
        users=[train_u, valid_u, test_u],
        catalog_size=log.catalog_size,
    )
