"""Seeded synthetic click logs with latent cluster structure."""

from __future__ import annotations

import numpy as np

from croloss.data import BehaviorLog


def clustered_log(n_users: int = 5000, n_items: int = 2000, n_clusters: int = 20,
                  latent_dim: int = 16, min_len: int = 8, max_len: int = 20,
                  spread: float = 0.5, user_noise: float = 0.5, temperature: float = 4.0,
                  seed: int = 0) -> BehaviorLog:
    """Generate users that click items close to them in a latent space.

    Cluster centres are random unit vectors; items and users sit around the
    centre of their cluster.  Each click is drawn from a softmax over
    ``temperature * <user, item>``, so a user's clicks concentrate on their own
    cluster and, within it, on the items nearest to them.
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(n_clusters, latent_dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    item_cluster = rng.integers(0, n_clusters, size=n_items)
    items = centres[item_cluster] + spread * rng.normal(size=(n_items, latent_dim)) / np.sqrt(latent_dim)
    user_cluster = rng.integers(0, n_clusters, size=n_users)
    users = centres[user_cluster] + user_noise * rng.normal(size=(n_users, latent_dim)) / np.sqrt(latent_dim)

    sequences = []
    for u in range(n_users):
        logits = temperature * (items @ users[u])
        p = np.exp(logits - logits.max())
        p /= p.sum()
        length = int(rng.integers(min_len, max_len + 1))
        sequences.append(rng.choice(n_items, size=length, p=p).astype(np.int64))
    return BehaviorLog(sequences, [f"u{u}" for u in range(n_users)],
                       [f"i{i}" for i in range(n_items)],
                       int(sum(len(s) for s in sequences)))
