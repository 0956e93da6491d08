"""Proximal policy optimization with analytic gradients for the small MLP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .policy import LOG_2PI, PolicyNetwork, forward_batch


@dataclass
class PPOConfig:
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    epochs: int = 4
    minibatch: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    rollout_steps: int = 2048
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True
    scale_rewards: bool = True


@dataclass
class Rollout:
    """On-policy transitions.  ``seg_end`` marks where a trajectory stops:
    ``next_value`` then holds the bootstrap (0 if terminal)."""

    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logps: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    seg_end: list = field(default_factory=list)
    bootstrap: list = field(default_factory=list)

    def __len__(self):
        return len(self.actions)

    def add(self, obs, action, logp, value):
        self.obs.append(obs)
        self.actions.append(action)
        self.logps.append(logp)
        self.values.append(value)
        self.rewards.append(0.0)
        self.seg_end.append(False)
        self.bootstrap.append(0.0)

    def set_reward(self, idx: int, r: float) -> None:
        self.rewards[idx] = r

    def end_segment(self, idx: int, bootstrap_value: float) -> None:
        self.seg_end[idx] = True
        self.bootstrap[idx] = bootstrap_value

    def clear(self) -> None:
        for lst in (self.obs, self.actions, self.logps, self.rewards, self.values, self.seg_end, self.bootstrap):
            lst.clear()


def compute_gae(rewards, values, seg_end, bootstrap, gamma: float, lam: float):
    """Generalized advantage estimates and value targets."""
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        if seg_end[t]:
            next_v = bootstrap[t]
            last = 0.0
        else:
            next_v = values[t + 1]
        delta = rewards[t] + gamma * next_v - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    returns = adv + np.asarray(values, dtype=float)
    return adv, returns


def ppo_loss_and_grad(params: dict[str, np.ndarray], obs: np.ndarray, actions: np.ndarray,
                      old_logp: np.ndarray, adv: np.ndarray, returns: np.ndarray,
                      cfg: PPOConfig) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Clipped surrogate + value + entropy loss and its exact gradient."""
    B = len(actions)
    mu, v, (h1, h2) = forward_batch(params, obs)
    log_std = float(params["log_std"][0])
    std = math.exp(log_std)
    z = (actions - mu) / std
    logp = -0.5 * z * z - log_std - 0.5 * LOG_2PI
    ratio = np.exp(logp - old_logp)
    lo, hi = 1.0 - cfg.clip, 1.0 + cfg.clip
    clipped = np.clip(ratio, lo, hi)
    surr1 = ratio * adv
    surr2 = clipped * adv
    pg_loss = -np.mean(np.minimum(surr1, surr2))
    v_err = v - returns
    v_loss = 0.5 * np.mean(v_err * v_err)
    entropy = log_std + 0.5 * (LOG_2PI + 1.0)
    loss = pg_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy

    # d(pg_loss)/d(ratio): the unclipped branch is active when it is the minimum
    inside = (ratio > lo) & (ratio < hi)
    active = (surr1 <= surr2) | inside
    d_ratio = np.where(active, -adv / B, 0.0)
    d_logp = d_ratio * ratio
    d_mu = d_logp * z / std
    d_log_std = float(np.sum(d_logp * (z * z - 1.0))) - cfg.entropy_coef
    d_v = cfg.value_coef * v_err / B

    d_zmu = d_mu * (1.0 - mu * mu)
    g = {
        "w_mu": h2.T @ d_zmu,
        "b_mu": np.array([d_zmu.sum()]),
        "w_v": h2.T @ d_v,
        "b_v": np.array([d_v.sum()]),
        "log_std": np.array([d_log_std]),
    }
    d_h2 = np.outer(d_zmu, params["w_mu"]) + np.outer(d_v, params["w_v"])
    d_a2 = d_h2 * (1.0 - h2 * h2)
    g["W2"] = d_a2.T @ h1
    g["b2"] = d_a2.sum(axis=0)
    d_h1 = d_a2 @ params["W2"]
    d_a1 = d_h1 * (1.0 - h1 * h1)
    g["W1"] = d_a1.T @ obs
    g["b1"] = d_a1.sum(axis=0)

    info = {
        "loss": float(loss), "policy_loss": float(pg_loss), "value_loss": float(v_loss),
        "entropy": float(entropy), "clip_frac": float(np.mean(~inside)),
        "approx_kl": float(np.mean(old_logp - logp)),
    }
    return float(loss), g, info


class Adam:
    def __init__(self, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] = params[k] - self.lr * corr * self.m[k] / (np.sqrt(self.v[k]) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.tolist() for k, v in self.m.items()},
                "v": {k: v.tolist() for k, v in self.v.items()}}

    def load_state_dict(self, d: dict) -> None:
        self.t = d["t"]
        self.m = {k: np.asarray(v, dtype=float) for k, v in d["m"].items()}
        self.v = {k: np.asarray(v, dtype=float) for k, v in d["v"].items()}


class RewardScaler:
    """Divides rewards by the running std of the discounted return."""

    def __init__(self, gamma: float = 0.99):
        self.gamma = gamma
        self.ret = 0.0
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def __call__(self, r: float, reset: bool = False) -> float:
        self.ret = self.ret * self.gamma + r
        self.count += 1
        d = self.ret - self.mean
        self.mean += d / self.count
        self.m2 += d * (self.ret - self.mean)
        if reset:
            self.ret = 0.0
        var = self.m2 / self.count if self.count > 1 else 0.0
        return r / math.sqrt(var + 1e-8) if var > 0 else r

    def state_dict(self) -> dict:
        return {"gamma": self.gamma, "ret": self.ret, "count": self.count, "mean": self.mean, "m2": self.m2}

    def load_state_dict(self, d: dict) -> None:
        self.__dict__.update(d)


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def ppo_update(buffer: Rollout, net: PolicyNetwork, cfg: PPOConfig, optimizer: Adam,
               rng: np.random.Generator) -> dict[str, float]:
    """Run ``epochs`` passes of minibatch gradient steps over one rollout, in place."""
    if len(buffer) == 0:
        raise ValueError("empty rollout buffer")
    obs = np.asarray(buffer.obs, dtype=float)
    actions = np.asarray(buffer.actions, dtype=float)
    old_logp = np.asarray(buffer.logps, dtype=float)
    adv, returns = compute_gae(buffer.rewards, buffer.values, buffer.seg_end, buffer.bootstrap,
                               cfg.gamma, cfg.gae_lambda)
    if cfg.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(actions)
    stats: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            _, grads, info = ppo_loss_and_grad(net.params, obs[idx], actions[idx], old_logp[idx],
                                               adv[idx], returns[idx], cfg)
            info["grad_norm"] = _clip_grads(grads, cfg.max_grad_norm)
            optimizer.step(net.params, grads)
            for k, val in info.items():
                stats[k] = stats.get(k, 0.0) + val
            count += 1
    return {k: v / count for k, v in stats.items()}
