"""Federated round loop, client training, post-FL fine-tuning, and the
performance-bound calculator.

One client ("optimized") chooses per-class training-data fractions through
a DDPG agent each round; every other ("naive") client trains on its full
local train split. All randomness flows from named seed streams so equal
configs replay bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import agent as agent_mod
from . import data as data_mod
from .aggregation import ClientUpdate, ServerState, STRATEGIES, aggregate
from .agent import ACTION_STRATEGIES, ActorCritic, AgentConfig, ReplayBuffer, Transition
from .metrics import StateVector, accuracy, class_prf1, compute_state, evaluate
from .nn import Mlp, backward, cross_entropy_loss, forward, sgd_step
from .reward import ExpFit, LossHistory, RewardConfig, compute_reward, estimate_loss, fit_exponential


@dataclass
class ExperimentConfig:
    n_clients: int = 8
    c_ratio: float = 1.0
    rounds: int = 100
    local_epochs: int = 1
    batch_size: int = 32
    lr: float = 0.05
    optimized_client: int | None = 0  # None -> naive-all ablation
    aggregation: str = "fedavg"
    action_strategy: str = "normalized"
    agent: AgentConfig = field(default_factory=AgentConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    dirichlet_alpha: float = 0.5
    split_ratio: float = 0.8
    seed_data: int = 0
    seed_init: int = 1
    seed_agent: int = 2
    seed_sampling: int = 3
    hidden_dims: list[int] = field(default_factory=lambda: [32])
    n_classes: int = 4
    n_per_class: int = 400
    feature_dim: int = 16
    spread: float = 5.0
    dataset_csv: str | None = None
    finetune_patience: int = 10
    finetune_max_epochs: int = 200
    prox_mu: float = 0.01
    fedavgm_beta: float = 0.9
    fedavgm_server_lr: float = 1.0
    cda_depth: int = 3

    def validate(self) -> None:
        if not (0.0 < self.c_ratio <= 1.0):
            raise ValueError("c_ratio outside (0, 1]")
        if self.n_clients < 1 or self.rounds < 1 or self.local_epochs < 1:
            raise ValueError("need n_clients, rounds, local_epochs >= 1")
        if not (0.0 < self.split_ratio < 1.0):
            raise ValueError("split_ratio outside (0, 1)")
        if self.aggregation not in STRATEGIES:
            raise ValueError(f"aggregation must be one of {STRATEGIES}")
        if self.action_strategy not in ACTION_STRATEGIES:
            raise ValueError(f"action_strategy must be one of {ACTION_STRATEGIES}")
        if self.optimized_client is not None and not (
            0 <= self.optimized_client < self.n_clients
        ):
            raise ValueError("optimized_client out of range")


@dataclass
class RoundRecord:
    round: int
    sampled: list[int]
    client_metrics: list[dict]
    optimized: dict | None
    aggregation: str

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "sampled": self.sampled,
            "client_metrics": self.client_metrics,
            "optimized": self.optimized,
            "aggregation": self.aggregation,
        }


@dataclass
class RunResult:
    final_global: np.ndarray
    client_params: dict[int, np.ndarray]
    rounds: list[RoundRecord]
    finetune_trace: list[dict]
    finetuned_params: np.ndarray | None
    arch: list[int]


def sample_clients(n_clients: int, c_ratio: float, rng: np.random.Generator) -> list[int]:
    size = math.ceil(c_ratio * n_clients)
    return sorted(rng.choice(n_clients, size=size, replace=False).tolist())


def compute_performance_bound(
    z_full: np.ndarray, z_selected: np.ndarray
) -> tuple[float, float, float]:
    """Circle-area performance totals and their gap.

    Returns (full-data total, selected total, gap Omega).
    """
    big = np.asarray(z_full, dtype=np.float64)
    small = np.asarray(z_selected, dtype=np.float64)
    if big.shape != small.shape:
        raise ValueError("radius vector length mismatch")
    if np.any(small > big) or np.any(small < 0) or np.any(big > 1):
        raise ValueError("need 0 <= z_c <= Z_c <= 1")
    p_full = math.pi * float(np.sum(big**2))
    p_sel = math.pi * float(np.sum(small**2))
    return p_full, p_sel, math.pi * float(np.sum(big**2 - small**2))


def _derived_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def client_local_train(
    arch: list[int],
    w_init: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    batch_size: int,
    lr: float,
    rng: np.random.Generator,
    prox_mu: float = 0.0,
    w_global: np.ndarray | None = None,
) -> np.ndarray:
    """Mini-batch SGD from w_init; optional proximal pull toward w_global."""
    if len(y) == 0:
        raise ValueError("empty training subset")
    model = Mlp(list(arch))
    model.set_params(w_init)
    for _ in range(epochs):
        for batch in _batches(len(y), batch_size, rng):
            cache: dict = {}
            logits = forward(model, x[batch], cache)
            _, d_logits = cross_entropy_loss(logits, y[batch])
            grads, _ = backward(model, cache, d_logits)
            if prox_mu > 0.0 and w_global is not None:
                grads = grads + prox_mu * (model.get_params() - w_global)
            model.set_params(sgd_step(model.get_params(), grads, lr))
    return model.get_params()


def dataset_loss(arch: list[int], params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    model = Mlp(list(arch))
    model.set_params(params)
    loss, _ = cross_entropy_loss(forward(model, x), y)
    return loss


def post_fl_finetune(
    arch: list[int],
    w_start: np.ndarray,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    batch_size: int,
    lr: float,
    patience: int,
    max_epochs: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[dict]]:
    """Full-dataset epochs until validation accuracy stops improving.

    Returns the best-validation parameters and a per-epoch trace.
    """
    if len(y_train) == 0 or len(y_val) == 0:
        raise ValueError("empty fine-tune split")
    model = Mlp(list(arch))
    params = w_start.copy()
    best_params, best_acc = params, -1.0
    stale = 0
    trace = []
    for epoch in range(1, max_epochs + 1):
        params = client_local_train(arch, params, x_train, y_train, 1, batch_size, lr, rng)
        model.set_params(params)
        acc = accuracy(evaluate(model, x_val, y_val))
        trace.append({"epoch": epoch, "val_accuracy": acc})
        if acc > best_acc + 1e-4:
            best_acc, best_params, stale = acc, params.copy(), 0
        else:
            stale += 1
        if stale >= patience:
            break
    return best_params, trace


class _OptimizedClient:
    """Per-round RL pipeline owned by the optimized client."""

    def __init__(self, cfg: ExperimentConfig, n_classes: int):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed_agent)
        self.ac = ActorCritic(n_classes, cfg.agent, rng)
        self.buffer = ReplayBuffer(cfg.agent.buffer_capacity, _derived_seed(cfg.seed_agent, 1))
        self.rng = np.random.default_rng(_derived_seed(cfg.seed_agent, 2))
        self.history = LossHistory()
        self.state_log: dict[int, StateVector] = {}
        self.pending: tuple[np.ndarray, np.ndarray, float] | None = None
        self.fit: ExpFit | None = None

    def _complete_pending(self, next_state: StateVector, terminal: bool = False) -> None:
        if self.pending is None:
            return
        s, a, r = self.pending
        self.buffer.push(Transition(s, a, r, next_state.as_array(), terminal))
        self.pending = None
        self._learn()

    def _learn(self) -> None:
        cfg = self.cfg.agent
        if len(self.buffer) < cfg.batch_size:
            return
        if cfg.n_step > 1:
            slices = self.buffer.sample_slices(cfg.batch_size, cfg.n_step, cfg.gamma)
            agent_mod.critic_update_nstep(self.ac, slices, cfg)
            batch = [Transition(s, a, g, ns, term) for s, a, g, ns, term, _ in slices]
        else:
            batch = self.buffer.sample(cfg.batch_size)
            agent_mod.critic_update(self.ac, batch, cfg)
        agent_mod.actor_update(self.ac, batch, cfg)
        agent_mod.soft_update(self.ac, cfg.soft_update_tau)

    def _explore_action(self, raw: np.ndarray, state: StateVector, part, t: int) -> np.ndarray:
        if self.cfg.action_strategy == "normalized":
            return agent_mod.normalized_action(raw, part.class_counts, part.train_size)
        lookback_t = max(0, t - self.cfg.agent.eta)
        candidates = [r for r in self.state_log if r <= lookback_t]
        back = self.state_log[max(candidates)] if candidates else state
        return agent_mod.weighted_metric_action(raw, state, back)

    def round(self, w_global, part, x, y, t: int):
        """Full optimized-client round; returns (params, record fragment)."""
        cfg = self.cfg
        arch = self.arch
        xt, yt = x[part.all_train_indices()], y[part.all_train_indices()]
        state = compute_state(w_global, arch, xt, yt, t)
        self._complete_pending(state)
        self.state_log[t] = state

        if cfg.action_strategy == "full":
            fractions = np.ones(part.n_classes)
        else:
            raw = agent_mod.policy_action(self.ac, state)
            explore = self._explore_action(raw, state, part, t)
            eps = cfg.agent.epsilon_at(t, cfg.rounds)
            fractions = agent_mod.epsilon_greedy_select(explore, self.ac, state, eps, self.rng)

        sub = data_mod.action_partition(part, fractions, _derived_seed(cfg.seed_data, 41, t))
        sel = sub.all_indices()
        l_agg = dataset_loss(arch, w_global, xt, yt)
        train_rng = np.random.default_rng(_derived_seed(cfg.seed_data, 29, t, part.client_id))
        prox = cfg.prox_mu if cfg.aggregation == "fedprox" else 0.0
        w_new = client_local_train(
            arch, w_global, x[sel], y[sel], cfg.local_epochs, cfg.batch_size,
            cfg.lr, train_rng, prox, w_global,
        )
        l_local = dataset_loss(arch, w_new, xt, yt)

        l_est = None
        l_ref = max(l_local, 1e-12)
        if t >= cfg.reward.tau and len(self.history) >= 3:
            self.fit = fit_exponential(self.history)
            if self.fit.fit_valid:
                est = estimate_loss(self.fit, t)
                if est > 0:
                    l_est = est
                    l_ref = est
        mu_a = float(np.mean(fractions))
        r = compute_reward(l_agg, l_ref, mu_a, cfg.reward, t)
        self.history.append(t, l_local)
        self.pending = (state.as_array(), fractions, r)

        fragment = {
            "client": int(part.client_id),
            "state": state.as_array().tolist(),
            "fractions": fractions.tolist(),
            "samples_used": int(len(sel)),
            "train_size": int(part.train_size),
            "reward": r,
            "l_agg": l_agg,
            "l_local": l_local,
            "l_est": l_est,
        }
        return w_new, fragment

    def finish(self, w_global, part, x, y, t: int) -> None:
        idx = part.all_train_indices()
        self._complete_pending(compute_state(w_global, self.arch, x[idx], y[idx], t), terminal=True)


def run_federated(cfg: ExperimentConfig) -> RunResult:
    """Execute the full FL simulation plus post-FL fine-tuning."""
    cfg.validate()
    if cfg.dataset_csv:
        ds = data_mod.load_csv(cfg.dataset_csv)
    else:
        ds = data_mod.generate_synthetic(
            cfg.n_classes, cfg.n_per_class, cfg.feature_dim, cfg.spread, cfg.seed_data
        )
    raw_parts = data_mod.dirichlet_partition(ds, cfg.n_clients, cfg.dirichlet_alpha, cfg.seed_data)
    parts = [
        data_mod.train_val_split(p, cfg.split_ratio, _derived_seed(cfg.seed_data, 17, p.client_id))
        for p in raw_parts
    ]
    arch = [ds.features.shape[1], *cfg.hidden_dims, ds.n_classes]
    init_rng = np.random.default_rng(cfg.seed_init)
    global_params = Mlp.init_glorot(arch, init_rng).get_params()
    server = ServerState(global_params)
    rng_sampling = np.random.default_rng(cfg.seed_sampling)

    opt = None
    if cfg.optimized_client is not None:
        opt = _OptimizedClient(cfg, ds.n_classes)
        opt.arch = arch

    x, y = ds.features, ds.labels
    eval_model = Mlp(list(arch))
    records: list[RoundRecord] = []
    client_params: dict[int, np.ndarray] = {}

    for t in range(cfg.rounds):
        sampled = sample_clients(cfg.n_clients, cfg.c_ratio, rng_sampling)
        updates = []
        opt_fragment = None
        for k in sampled:
            part = parts[k]
            if part.train_size == 0:
                continue
            if opt is not None and k == cfg.optimized_client:
                w_k, opt_fragment = opt.round(server.global_params, part, x, y, t)
                n_used = opt_fragment["samples_used"]
            else:
                idx = part.all_train_indices()
                train_rng = np.random.default_rng(_derived_seed(cfg.seed_data, 29, t, k))
                prox = cfg.prox_mu if cfg.aggregation == "fedprox" else 0.0
                w_k = client_local_train(
                    arch, server.global_params, x[idx], y[idx], cfg.local_epochs,
                    cfg.batch_size, cfg.lr, train_rng, prox, server.global_params,
                )
                n_used = len(idx)
            client_params[k] = w_k
            updates.append(ClientUpdate(k, w_k, n_used))
        aggregate(
            cfg.aggregation, updates, server,
            beta=cfg.fedavgm_beta, server_lr=cfg.fedavgm_server_lr, cda_depth=cfg.cda_depth,
        )

        eval_model.set_params(server.global_params)
        client_metrics = []
        for part in parts:
            if len(part.val_indices) == 0:
                continue
            cm = evaluate(eval_model, x[part.val_indices], y[part.val_indices])
            p, r, f1 = class_prf1(cm)
            client_metrics.append({
                "client": part.client_id,
                "accuracy": accuracy(cm),
                "precision": float(np.mean(p)),
                "recall": float(np.mean(r)),
                "f1": float(np.mean(f1)),
            })
        records.append(RoundRecord(t, sampled, client_metrics, opt_fragment, cfg.aggregation))

    finetune_trace: list[dict] = []
    finetuned = None
    if opt is not None:
        part = parts[cfg.optimized_client]
        opt.finish(server.global_params, part, x, y, cfg.rounds)
        idx = part.all_train_indices()
        ft_rng = np.random.default_rng(_derived_seed(cfg.seed_data, 53))
        finetuned, finetune_trace = post_fl_finetune(
            arch, server.global_params, x[idx], y[idx],
            x[part.val_indices], y[part.val_indices],
            cfg.batch_size, cfg.lr, cfg.finetune_patience, cfg.finetune_max_epochs, ft_rng,
        )
    return RunResult(server.global_params, client_params, records, finetune_trace, finetuned, arch)
