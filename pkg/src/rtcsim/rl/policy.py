"""Actor-critic MLP: 30 -> 32 -> 16 (tanh) with a squashed mean head and a value head."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import OBS_DIM

HIDDEN = (32, 16)
PARAM_NAMES = ("W1", "b1", "W2", "b2", "w_mu", "b_mu", "w_v", "b_v", "log_std")
CHECKPOINT_FORMAT = "rtcsim-policy"
CHECKPOINT_VERSION = 1
LOG_2PI = math.log(2 * math.pi)
INIT_LOG_STD = -1.6  # exploration std of about 0.2


@dataclass
class PolicyNetwork:
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, rng: np.random.Generator, init_log_std: float = INIT_LOG_STD) -> "PolicyNetwork":
        h1, h2 = HIDDEN

        def dense(fan_in, fan_out, gain):
            return rng.normal(0.0, gain / math.sqrt(fan_in), size=(fan_out, fan_in))

        p = {
            "W1": dense(OBS_DIM, h1, 1.0),
            "b1": np.zeros(h1),
            "W2": dense(h1, h2, 1.0),
            "b2": np.zeros(h2),
            "w_mu": dense(h2, 1, 0.01)[0],
            "b_mu": np.zeros(1),
            "w_v": dense(h2, 1, 1.0)[0],
            "b_v": np.zeros(1),
            "log_std": np.array([init_log_std]),
        }
        return cls(p)

    @classmethod
    def zeros(cls) -> "PolicyNetwork":
        net = cls.init(np.random.default_rng(0))
        return cls({k: np.zeros_like(v) for k, v in net.params.items()})

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork({k: v.copy() for k, v in self.params.items()})

    @property
    def std(self) -> float:
        return float(np.exp(self.params["log_std"][0]))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for k in PARAM_NAMES:
            n = self.params[k].size
            self.params[k] = vec[i:i + n].reshape(self.params[k].shape).copy()
            i += n

    # persistence
    def to_json(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "architecture": {"input": OBS_DIM, "hidden": list(HIDDEN), "activation": "tanh",
                             "heads": ["mean(tanh)", "value"]},
            "params": {k: self.params[k].tolist() for k in PARAM_NAMES},
        }

    @classmethod
    def from_json(cls, d: dict) -> "PolicyNetwork":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a policy checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        arch = d["architecture"]
        if arch["input"] != OBS_DIM or tuple(arch["hidden"]) != HIDDEN:
            raise ValueError(f"architecture mismatch: {arch}")
        return cls({k: np.asarray(d["params"][k], dtype=float) for k in PARAM_NAMES})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "PolicyNetwork":
        return cls.from_json(json.loads(Path(path).read_text()))


def policy_forward(net: PolicyNetwork, s: np.ndarray) -> tuple[float, float, float]:
    """(mean, std, value) for one observation."""
    s = np.asarray(s, dtype=float)
    if s.shape != (OBS_DIM,):
        raise ValueError(f"observation must have shape ({OBS_DIM},), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite observation")
    p = net.params
    h1 = np.tanh(p["W1"] @ s + p["b1"])
    h2 = np.tanh(p["W2"] @ h1 + p["b2"])
    mean = math.tanh(float(p["w_mu"] @ h2) + p["b_mu"][0])
    value = float(p["w_v"] @ h2) + p["b_v"][0]
    return mean, math.exp(p["log_std"][0]), value


def forward_batch(params: dict[str, np.ndarray], S: np.ndarray):
    h1 = np.tanh(S @ params["W1"].T + params["b1"])
    h2 = np.tanh(h1 @ params["W2"].T + params["b2"])
    mu = np.tanh(h2 @ params["w_mu"] + params["b_mu"][0])
    v = h2 @ params["w_v"] + params["b_v"][0]
    return mu, v, (h1, h2)


def gaussian_logp(a: np.ndarray, mu: np.ndarray, log_std: float) -> np.ndarray:
    z = (a - mu) / math.exp(log_std)
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI
