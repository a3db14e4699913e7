"""Clipped-surrogate policy optimization over routing episodes.

Collection windows are frozen: parameters and the history snapshot taken at
the start of a window are used for every rollout in it, and the update that
follows recomputes log-probabilities through the same code path, so the
importance ratio is exactly one on the first epoch. Per-episode RNG streams
are keyed by (seed, update, episode index), never by worker, so any worker
count yields identical trajectories.
"""

from __future__ import annotations

import copy
import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .backend import Benchmark
from .encoder import (EncoderDims, RoutingPolicy, entropy_of, history_hub_rows,
                      init_params, step_outputs)
from .env import Episode, EnvConfig, RoutingEnv, absorb_episode
from .memory import HeteroGraph, serialize
from .streams import det_rng
from .tensor import Adam, Tensor, clip_global_norm, save_params

CURVE_COLUMNS = ("update", "episodes_seen", "mean_return", "mean_utility",
                 "mean_cost", "entropy", "policy_loss", "value_loss")


@dataclass
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    policy_lr: float = 3e-4
    value_lr: float = 6e-4
    grad_clip: float = 0.5
    episodes_per_update: int = 8
    max_episodes: int = 1000
    entropy_stop: float = 0.05
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    seed: int = 0
    workers: int = 1
    history_capacity: int = 256
    use_history: bool = True
    hub_decay: float = 0.9
    beta: float = 1.0
    hidden: int = 64
    variant: str = "full"
    running_decay: float = 0.95
    init_scale: float = 1.0

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.episodes_per_update < 1 or self.max_episodes < 1:
            raise ValueError("episode counts must be positive")


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    best_params: dict[str, Tensor]
    curve: list[dict] = field(default_factory=list)
    episodes_seen: int = 0
    stopped_early: bool = False
    history: HeteroGraph | None = None
    meta: dict = field(default_factory=dict)


def compute_gae(episodes: list[Episode], gamma: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantages and value targets, flattened in episode order.

    Every episode ends in a terminal state (done or truncation), so the
    bootstrap value past the last step is zero. Returns are advantages plus
    the collected value estimates, computed before any normalization.
    """
    advantages: list[float] = []
    returns: list[float] = []
    for ep in episodes:
        adv = 0.0
        ep_adv = [0.0] * len(ep.records)
        for t in range(len(ep.records) - 1, -1, -1):
            rec = ep.records[t]
            next_value = 0.0 if t == len(ep.records) - 1 else ep.records[t + 1].value
            delta = rec.reward + gamma * next_value - rec.value
            adv = delta + gamma * lam * adv
            ep_adv[t] = adv
        advantages.extend(ep_adv)
        returns.extend(a + r.value for a, r in zip(ep_adv, ep.records))
    return np.asarray(advantages), np.asarray(returns)


def normalize(values: np.ndarray) -> np.ndarray:
    return (values - values.mean()) / (values.std() + 1e-8)


def _policy_group(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: p for k, p in sorted(params.items()) if not k.startswith("value.")}


def _value_group(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: p for k, p in sorted(params.items()) if k.startswith("value.")}


def collect_window(benchmark: Benchmark, env_cfg: EnvConfig, hubs,
                   policy: RoutingPolicy, update: int, first_episode: int,
                   count: int, seed: int, workers: int) -> list[Episode]:
    """Roll out `count` episodes with frozen policy and history.

    Episode i uses the stream (seed, "rollout", update, first_episode + i)
    and the training query at that global index; results are ordered by
    episode index regardless of which worker ran them.
    """

    def one(i: int) -> Episode:
        idx = first_episode + i
        env = RoutingEnv(env_cfg, benchmark, hubs)
        root = benchmark.train_query(idx)
        rng = det_rng(seed, "rollout", update, idx)
        return env.run_episode(root, policy, mode="sample", rng=rng)

    if workers == 1:
        return [one(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(count)))


def ppo_update(params: dict[str, Tensor], policy_opt: Adam, value_opt: Adam,
               episodes: list[Episode], advantages: np.ndarray,
               returns: np.ndarray, hist_input, cfg: TrainConfig,
               update: int) -> dict[str, float]:
    """Run cfg.epochs whole-buffer epochs; returns the last epoch's losses."""
    records = [rec for ep in episodes for rec in ep.records]
    n = len(records)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
    for epoch in range(cfg.epochs):
        # one shared history encoding per epoch; gradients still reach it
        his_hubs = history_hub_rows(params, cfg.variant, cfg.beta, hist_input)
        surr_sum = None
        vloss_sum = None
        ent_sum = None
        for rec, adv, ret in zip(records, advantages, returns):
            probs, value = step_outputs(params, cfg.variant, cfg.beta,
                                        rec.wf_input, rec.query_embedding,
                                        rec.mask, his_hubs, hist_input)
            logp = T.log(T.pick(probs, rec.action_index))
            ratio = T.exp(T.add(logp, Tensor(np.asarray(-rec.logp))))
            clipped = T.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
            surr = T.minimum(T.scale(ratio, adv), T.scale(clipped, adv))
            err = T.sub(value, Tensor(np.asarray(ret)))
            vloss = T.mul(err, err)
            ent = entropy_of(probs)
            surr_sum = surr if surr_sum is None else T.add(surr_sum, surr)
            vloss_sum = vloss if vloss_sum is None else T.add(vloss_sum, vloss)
            ent_sum = ent if ent_sum is None else T.add(ent_sum, ent)
        policy_loss = T.scale(surr_sum, -1.0 / n)
        value_loss = T.scale(vloss_sum, 1.0 / n)
        entropy = T.scale(ent_sum, 1.0 / n)
        loss = T.add(T.add(policy_loss, T.scale(value_loss, cfg.value_coef)),
                     T.scale(entropy, -cfg.entropy_coef))
        if not np.isfinite(loss.data):
            raise RuntimeError(
                f"non-finite loss at update {update} epoch {epoch}: "
                f"policy={policy_loss.data!r} value={value_loss.data!r} "
                f"entropy={entropy.data!r} steps={n}")
        policy_opt.zero_grad()
        value_opt.zero_grad()
        T.backward(loss)
        clip_global_norm(list(params.values()), cfg.grad_clip)
        policy_opt.step()
        value_opt.step()
        stats = {"policy_loss": float(policy_loss.data),
                 "value_loss": float(value_loss.data),
                 "entropy": float(entropy.data)}
    return stats


def _snapshot(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(p.data.copy(), requires_grad=True) for k, p in params.items()}


def build_meta(benchmark: Benchmark, env_cfg: EnvConfig, cfg: TrainConfig,
               dims: EncoderDims) -> dict:
    train_fields = asdict(cfg)
    # pure execution detail; outputs are worker-count invariant by contract
    train_fields.pop("workers")
    return {
        "variant": cfg.variant,
        "beta": cfg.beta,
        "dims": asdict(dims),
        "n_models": len(benchmark.profiles),
        "n_roles": env_cfg.n_roles,
        "roles": [r.name for r in benchmark.roles[:env_cfg.n_roles]],
        "models": [p.name for p in benchmark.profiles],
        "env": asdict(env_cfg),
        "benchmark": asdict(benchmark.spec),
        "train": train_fields,
    }


def train(benchmark: Benchmark, env_cfg: EnvConfig, cfg: TrainConfig,
          out_dir: str | Path | None = None, log=None) -> TrainResult:
    """Full training loop; optionally writes artifacts under out_dir."""
    if env_cfg.n_models != len(benchmark.profiles):
        raise ValueError("environment and benchmark disagree on the pool size")
    dims = EncoderDims(d_q=benchmark.d_q, d_r=benchmark.d_q,
                       d_hub=benchmark.d_hub, hidden=cfg.hidden)
    params = init_params(dims, cfg.variant, seed=cfg.seed,
                         init_scale=cfg.init_scale)
    policy_opt = Adam(_policy_group(params), lr=cfg.policy_lr)
    value_opt = Adam(_value_group(params), lr=cfg.value_lr)
    hubs = benchmark.build_hubs(env_cfg.n_roles)
    history = HeteroGraph("history", hubs, capacity=cfg.history_capacity)

    result = TrainResult(params=params, best_params=_snapshot(params),
                         history=history,
                         meta=build_meta(benchmark, env_cfg, cfg, dims))
    reward_ema: float | None = None
    best_ema = -np.inf
    update = 0
    while result.episodes_seen < cfg.max_episodes:
        count = min(cfg.episodes_per_update,
                    cfg.max_episodes - result.episodes_seen)
        hist_input = history.freeze()
        policy = RoutingPolicy(params, cfg.variant, cfg.beta)
        policy.prepare(hist_input)
        episodes = collect_window(benchmark, env_cfg, hubs, policy, update,
                                  result.episodes_seen, count, cfg.seed,
                                  cfg.workers)
        mean_return = float(np.mean([ep.total_reward for ep in episodes]))
        mean_utility = float(np.mean([ep.utility for ep in episodes]))
        mean_cost = float(np.mean([ep.dollars for ep in episodes]))

        reward_ema = (mean_return if reward_ema is None
                      else cfg.running_decay * reward_ema
                      + (1.0 - cfg.running_decay) * mean_return)
        if reward_ema >= best_ema:
            best_ema = reward_ema
            result.best_params = _snapshot(params)

        advantages, returns = compute_gae(episodes, cfg.gamma, cfg.gae_lambda)
        advantages = normalize(advantages)
        stats = ppo_update(params, policy_opt, value_opt, episodes,
                           advantages, returns, hist_input, cfg, update)

        # history absorbs the window only after the update that used it
        if cfg.use_history:
            for ep in episodes:
                absorb_episode(history, ep, decay=cfg.hub_decay)

        result.episodes_seen += count
        row = {"update": update, "episodes_seen": result.episodes_seen,
               "mean_return": mean_return, "mean_utility": mean_utility,
               "mean_cost": mean_cost, "entropy": stats["entropy"],
               "policy_loss": stats["policy_loss"],
               "value_loss": stats["value_loss"]}
        result.curve.append(row)
        if log is not None:
            log(f"update {update}: episodes={result.episodes_seen} "
                f"return={mean_return:.4f} entropy={stats['entropy']:.4f}")
        update += 1
        if stats["entropy"] < cfg.entropy_stop:
            result.stopped_early = True
            break

    if out_dir is not None:
        write_artifacts(Path(out_dir), result)
    return result


def write_curve_csv(path: Path, rows: list[dict]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float)
                             else row[c] for c in CURVE_COLUMNS])
    os.replace(tmp, path)


def write_artifacts(out_dir: Path, result: TrainResult) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_params(out_dir / "params.json", result.params, meta=result.meta)
    save_params(out_dir / "best_params.json", result.best_params,
                meta=result.meta)
    write_curve_csv(out_dir / "curve.csv", result.curve)
    if result.history is not None:
        blob = serialize(result.history)
        tmp = out_dir / "history.json.tmp"
        tmp.write_bytes(blob)
        os.replace(tmp, out_dir / "history.json")


def load_policy(checkpoint: str | Path) -> tuple[RoutingPolicy, dict]:
    from .tensor import load_params
    params, meta = load_params(checkpoint)
    variant = meta.get("variant", "full")
    beta = float(meta.get("beta", 1.0))
    return RoutingPolicy(params, variant, beta), meta
