"""Server-side parameter aggregation strategies.

The server sees only (params, sample count) pairs; raw data never crosses
this boundary. FedProx shares fed_avg on the server side -- its proximal
term lives in client training.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

STRATEGIES = ("fedavg", "fedavgm", "fedmedian", "fedprox", "fedcda")


@dataclass
class ClientUpdate:
    client_id: int
    params: np.ndarray
    n_samples: int


@dataclass
class ServerState:
    global_params: np.ndarray
    momentum_buffer: np.ndarray | None = None
    model_cache: dict[int, deque] = field(default_factory=dict)
    round: int = 0


def _stack(updates: list[ClientUpdate]) -> np.ndarray:
    if not updates:
        raise ValueError("no client updates")
    mat = np.stack([u.params for u in updates])
    if len({u.params.shape[0] for u in updates}) != 1:
        raise ValueError("inconsistent parameter lengths")
    return mat


def fed_avg(updates: list[ClientUpdate]) -> np.ndarray:
    """Sample-size-weighted mean of client parameters."""
    mat = _stack(updates)
    w = np.array([u.n_samples for u in updates], dtype=np.float64)
    w /= w.sum()
    return (w[:, None] * mat).sum(axis=0)


def fed_avg_m(
    updates: list[ClientUpdate], state: ServerState, beta: float, server_lr: float
) -> np.ndarray:
    """Server momentum on the pseudo-gradient global - fed_avg(updates)."""
    delta = state.global_params - fed_avg(updates)
    if state.momentum_buffer is None:
        state.momentum_buffer = np.zeros_like(state.global_params)
    state.momentum_buffer = beta * state.momentum_buffer + delta
    return state.global_params - server_lr * state.momentum_buffer


def fed_median(updates: list[ClientUpdate]) -> np.ndarray:
    """Coordinate-wise median; even counts take the mean of the middle two."""
    return np.median(_stack(updates), axis=0)


def fed_cda_lite(updates: list[ClientUpdate], state: ServerState, m: int) -> np.ndarray:
    """Divergence-minimizing aggregation over each client's recent models.

    For every client, pick whichever of its <= m cached models or current
    update is closest (L2) to the current global, then fed_avg the picks.
    """
    _stack(updates)
    chosen = []
    for u in updates:
        cache = state.model_cache.setdefault(u.client_id, deque(maxlen=m))
        candidates = list(cache) + [u.params]
        dists = [np.linalg.norm(p - state.global_params) for p in candidates]
        chosen.append(ClientUpdate(u.client_id, candidates[int(np.argmin(dists))], u.n_samples))
        cache.append(u.params.copy())
    return fed_avg(chosen)


def aggregate(
    strategy: str,
    updates: list[ClientUpdate],
    state: ServerState,
    *,
    beta: float = 0.9,
    server_lr: float = 1.0,
    cda_depth: int = 3,
) -> np.ndarray:
    """Apply the named strategy and advance the server state."""
    updates = sorted(updates, key=lambda u: u.client_id)
    if strategy in ("fedavg", "fedprox"):
        new = fed_avg(updates)
    elif strategy == "fedavgm":
        new = fed_avg_m(updates, state, beta, server_lr)
    elif strategy == "fedmedian":
        new = fed_median(updates)
    elif strategy == "fedcda":
        new = fed_cda_lite(updates, state, cda_depth)
    else:
        raise ValueError(f"unknown aggregation strategy {strategy!r}")
    state.global_params = new
    state.round += 1
    return new
