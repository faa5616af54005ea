"""Two-tower retrieval model in plain numpy with a hand-written backward pass.

User tower: mean of the behaviour-item embeddings -> Linear -> ReLU -> Linear.
Item tower: item embedding -> Linear -> ReLU -> Linear.
Both towers read the same embedding table.  Scores are ``tau * cos(u, v)``.
"""

from __future__ import annotations

import io
import logging
import zipfile
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-12
CHECKPOINT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)

PARAM_NAMES = (
    "item_emb",
    "user_w1", "user_b1", "user_w2", "user_b2",
    "item_w1", "item_b1", "item_w2", "item_b2",
)


class TwoTowerModel:
    def __init__(self, params: dict[str, np.ndarray], tau: float = 10.0):
        if tau <= 0:
            raise ValueError(f"tau must be > 0, got {tau}")
        missing = set(PARAM_NAMES) - set(params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        self.params = {name: params[name] for name in PARAM_NAMES}
        self.tau = float(tau)

    @classmethod
    def init(cls, catalog_size: int, dim: int = 32, hidden: int = 32, out: int = 32,
             tau: float = 10.0, seed: int = 0, dtype=np.float64) -> "TwoTowerModel":
        rng = np.random.default_rng(seed)
        params = {"item_emb": rng.normal(0.0, 0.01, size=(catalog_size, dim))}
        for tower in ("user", "item"):
            for layer, (fan_in, fan_out) in (("1", (dim, hidden)), ("2", (hidden, out))):
                bound = 1.0 / np.sqrt(fan_in)
                params[f"{tower}_w{layer}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                params[f"{tower}_b{layer}"] = rng.uniform(-bound, bound, size=fan_out)
        params = {k: v.astype(dtype) for k, v in params.items()}
        return cls(params, tau)

    @property
    def catalog_size(self) -> int:
        return self.params["item_emb"].shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        """(embedding, hidden, output) widths."""
        return (self.params["item_emb"].shape[1], self.params["user_w1"].shape[1],
                self.params["user_w2"].shape[1])

    def copy(self) -> "TwoTowerModel":
        return TwoTowerModel({k: v.copy() for k, v in self.params.items()}, self.tau)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- towers -----------------------------------------------------------

    def _mlp(self, tower: str, x: np.ndarray, cache: Optional[dict]):
        p = self.params
        pre = x @ p[f"{tower}_w1"] + p[f"{tower}_b1"]
        hid = np.maximum(pre, 0.0)
        out = hid @ p[f"{tower}_w2"] + p[f"{tower}_b2"]
        if cache is not None:
            cache.update(x=x, pre=pre, hid=hid)
        return out

    def user_forward(self, history: np.ndarray, lengths: Optional[np.ndarray] = None,
                     cache: Optional[dict] = None):
        """User vectors for padded histories (B, L) with valid prefix ``lengths`` (B,).

        A 1-D ``history`` is a single unpadded sequence.
        """
        history = np.asarray(history)
        if history.ndim == 1:
            history, lengths = history[None, :], np.array([len(history)])
        lengths = np.asarray(lengths)
        if np.any(lengths < 1):
            raise ValueError("behavior sequence must be non-empty")
        mask = np.arange(history.shape[1])[None, :] < lengths[:, None]
        if np.any(history[mask] >= self.catalog_size) or np.any(history[mask] < 0):
            raise IndexError("behavior item index out of range")
        emb = self.params["item_emb"][np.where(mask, history, 0)]
        pooled = np.sum(emb * mask[..., None], axis=1) / lengths[:, None]
        if cache is not None:
            cache.update(history=history, mask=mask, lengths=lengths)
        return self._mlp("user", pooled, cache)

    def item_forward(self, item_ids, cache: Optional[dict] = None):
        """Item vectors for an array of item indices."""
        ids = np.asarray(item_ids)
        if np.any(ids >= self.catalog_size) or np.any(ids < 0):
            raise IndexError("item index out of range")
        if cache is not None:
            cache["ids"] = ids
        return self._mlp("item", self.params["item_emb"][ids], cache)

    def all_item_vectors(self) -> np.ndarray:
        return self.item_forward(np.arange(self.catalog_size))

    # -- scoring ----------------------------------------------------------

    def score(self, u: np.ndarray, v: np.ndarray) -> float:
        """``tau * cos(u, v)`` for two single vectors."""
        uu, _ = normalize(u)
        vv, _ = normalize(v)
        return float(self.tau * np.dot(uu, vv))

    def forward_batch(self, history, lengths, targets, negatives):
        """Scores of each sample's target (P,) and of the shared negatives (P, K).

        Returns ``(pos_scores, neg_scores, cache)``; the cache feeds :meth:`backward`.
        """
        targets = np.asarray(targets)
        negatives = np.asarray(negatives)
        ucache, icache = {}, {}
        u = self.user_forward(history, lengths, ucache)
        v = self.item_forward(np.concatenate([targets, negatives]), icache)
        u_hat, u_norm = normalize(u)
        v_hat, v_norm = normalize(v)
        n_pos = len(targets)
        pos_scores = self.tau * np.sum(u_hat * v_hat[:n_pos], axis=1)
        neg_scores = self.tau * (u_hat @ v_hat[n_pos:].T)
        cache = dict(user=ucache, item=icache, u_hat=u_hat, u_norm=u_norm,
                     v_hat=v_hat, v_norm=v_norm, n_pos=n_pos)
        return pos_scores, neg_scores, cache

    # -- backward ---------------------------------------------------------

    def _mlp_backward(self, tower: str, cache: dict, grad_out: np.ndarray, grads: dict) -> np.ndarray:
        p = self.params
        grads[f"{tower}_w2"] += cache["hid"].T @ grad_out
        grads[f"{tower}_b2"] += grad_out.sum(axis=0)
        grad_hid = (grad_out @ p[f"{tower}_w2"].T) * (cache["pre"] > 0)
        grads[f"{tower}_w1"] += cache["x"].T @ grad_hid
        grads[f"{tower}_b1"] += grad_hid.sum(axis=0)
        return grad_hid @ p[f"{tower}_w1"].T

    def backward(self, cache: dict, grad_pos: np.ndarray, grad_neg: np.ndarray,
                 grads: Optional[dict] = None) -> dict[str, np.ndarray]:
        """Accumulate parameter gradients from score gradients.

        ``grad_pos`` is (P,) and ``grad_neg`` is (P, K), matching the outputs of
        :meth:`forward_batch`.  Embedding rows not touched by the batch stay 0.
        """
        n_pos = cache["n_pos"]
        u_hat, v_hat = cache["u_hat"], cache["v_hat"]
        grad_pos = np.asarray(grad_pos, dtype=u_hat.dtype)
        grad_neg = np.asarray(grad_neg, dtype=u_hat.dtype)
        if grad_pos.shape != (n_pos,) or grad_neg.shape != (n_pos, len(v_hat) - n_pos):
            raise ValueError(
                f"score gradient shapes {grad_pos.shape}, {grad_neg.shape} do not match the "
                f"cached batch ({n_pos} positives, {len(v_hat) - n_pos} negatives)")
        if grads is None:
            grads = self.zeros_like()
        tau = self.tau
        v_pos, v_neg = v_hat[:n_pos], v_hat[n_pos:]
        g_uhat = tau * (grad_pos[:, None] * v_pos + grad_neg @ v_neg)
        g_vhat = np.concatenate([tau * grad_pos[:, None] * u_hat, tau * (grad_neg.T @ u_hat)])
        g_u = normalize_backward(u_hat, cache["u_norm"], g_uhat)
        g_v = normalize_backward(v_hat, cache["v_norm"], g_vhat)

        g_item_emb = self._mlp_backward("item", cache["item"], g_v, grads)
        uc = cache["user"]
        g_pooled = self._mlp_backward("user", uc, g_u, grads)
        mask = uc["mask"]
        # each history slot receives its sample's pooled gradient / length
        rows = np.broadcast_to(np.arange(len(g_pooled))[:, None], mask.shape)[mask]
        weights = (1.0 / uc["lengths"])[rows]
        ids = np.concatenate([cache["item"]["ids"], uc["history"][mask]])
        coeff = np.concatenate([np.ones(len(g_item_emb)), weights])
        cols = np.concatenate([np.arange(len(g_item_emb)), len(g_item_emb) + rows])
        scatter = sparse.csr_matrix((coeff, (ids, cols)),
                                    shape=(self.catalog_size, len(g_item_emb) + len(g_pooled)))
        grads["item_emb"] += scatter @ np.concatenate([g_item_emb, g_pooled])
        return grads

    def min_abs_preactivation(self, cache: dict) -> float:
        """Distance of the nearest hidden unit to its ReLU kink (for gradient checks)."""
        return float(min(np.min(np.abs(cache["user"]["pre"])), np.min(np.abs(cache["item"]["pre"]))))

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        """Write an ``.npz`` checkpoint: ``version``, ``tau`` and one array per parameter.

        Archive entries carry a fixed timestamp, so equal models give equal files.
        """
        arrays = {"version": np.array(CHECKPOINT_VERSION), "tau": np.array(self.tau), **self.params}
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH), buf.getvalue())

    @classmethod
    def load(cls, path) -> "TwoTowerModel":
        with np.load(path) as data:
            version = int(data["version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            params = {name: data[name].copy() for name in PARAM_NAMES}
            tau = float(data["tau"])
        return cls(params, tau)


def normalize(x: np.ndarray):
    """Row-wise unit vectors and the (floored) norms used to get them."""
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm < NORM_FLOOR):
        logger.warning("degenerate zero-norm vector in cosine score; norm floored at %g", NORM_FLOOR)
    norm = np.maximum(norm, NORM_FLOOR)
    return x / norm, norm


def normalize_backward(x_hat: np.ndarray, norm: np.ndarray, grad_hat: np.ndarray) -> np.ndarray:
    """Chain rule through ``x -> x / |x|``."""
    radial = np.sum(x_hat * grad_hat, axis=-1, keepdims=True)
    return (grad_hat - x_hat * radial) / norm
