import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rtcsim.codec import profile_family
from rtcsim.controllers import RATE_MAX_KBPS, RATE_MIN_KBPS, SafeguardConfig
from rtcsim.rl.agent import RateState, map_action
from rtcsim.rl.features import NEUTRAL, OBS_DIM, WindowStats, WindowTracker, extract_observation
from rtcsim.rl.policy import PARAM_NAMES, PolicyNetwork, forward_batch, gaussian_logp, policy_forward
from rtcsim.rl.ppo import Adam, PPOConfig, Rollout, compute_gae, ppo_loss_and_grad, ppo_update
from rtcsim.rl.rewards import NetworkSample, RewardConfig, reward_network, reward_nvc
from rtcsim.rl.train import (
    TrainConfig, Trainer, check_convergence, load_policy, read_curve_csv, train, trainer_from_state,
    write_curve_csv,
)
from rtcsim.simcore import FeedbackReport
from rtcsim.traces import TraceGenParams, generate_traces


# -- features ------------------------------------------------------------------

def _report(k, rtt=60.0, sent=10, acked=10):
    return FeedbackReport(50.0 * k, 50.0 * k + 50, acked_packet_ids=list(range(acked)),
                          rtt_samples_ms=[rtt] * acked, send_times_ms=[50.0 * k + i for i in range(acked)],
                          bytes_acked=1200 * acked, packets_sent=sent)


def test_steady_network_features():
    tr = WindowTracker(60.0)
    for k in range(12):
        tr.update(_report(k))
    obs = tr.observation()
    assert obs.shape == (OBS_DIM,)
    assert np.allclose(obs.reshape(10, 3), [0.0, 1.0, 1.0])


def test_latency_and_sending_ratio():
    tr = WindowTracker(60.0)
    tr.update(_report(0, rtt=80.0))
    st = tr.update(_report(1, rtt=40.0, sent=20, acked=10))
    slope, ratio, sending = st.features()
    assert ratio == 1.0
    assert sending == 2.0
    assert slope == 0.0


def test_short_history_is_padded():
    w = WindowStats(90.0, 60.0, 0.01, 10, 10, 12000, 0)
    obs = extract_observation([w]).reshape(10, 3)
    assert obs[0] == pytest.approx([0.01, 1.5, 1.0])
    assert np.all(obs[1:] == NEUTRAL)


# -- action mapping and rewards --------------------------------------------------

def test_map_action_examples():
    assert map_action(0.0, RateState(1234.0, 500.0)) == 1234.0
    assert map_action(0.5, RateState(1000.0, 700.0)) == 1500.0
    assert map_action(-1.0, RateState(1000.0, 700.0)) == 100.0
    assert map_action(-0.5, RateState(1000.0, 700.0)) == 350.0
    assert map_action(-0.5, RateState(600.0, 900.0)) == 300.0
    assert map_action(1.0, RateState(6000.0, 0.0)) == 8000.0
    with pytest.raises(ValueError):
        map_action(float("nan"), RateState(1.0, 1.0))


def test_network_reward_examples():
    cfg = RewardConfig(kind="network")
    assert reward_network([NetworkSample(0, 0, 0)], cfg) == 0.0
    assert abs(reward_network([NetworkSample(1000.0, 0.1, 0.01)], cfg) - 119880.0) <= 1e-9


def test_nvc_reward_examples():
    assert reward_nvc([(1.0, 0.0)]) == 1.0
    assert abs(reward_nvc([(0.8, 0.1)]) - 0.79) <= 1e-9
    assert reward_nvc([(1.0, 0.0), (0.0, 0.0)]) == 0.5
    assert reward_nvc([(1.3, 0.0)]) == 1.0


# -- policy --------------------------------------------------------------------

def test_zero_network():
    mean, std, value = policy_forward(PolicyNetwork.zeros(), np.ones(OBS_DIM))
    assert (mean, value) == (0.0, 0.0)
    assert std == 1.0


def test_forward_matches_hand_evaluation(rng):
    net = PolicyNetwork.init(rng)
    net.params["w_mu"] = rng.normal(0, 1, 16)
    s = rng.normal(0, 1, OBS_DIM)
    p = net.params
    h1 = [math.tanh(sum(p["W1"][i, j] * s[j] for j in range(OBS_DIM)) + p["b1"][i]) for i in range(32)]
    h2 = [math.tanh(sum(p["W2"][i, j] * h1[j] for j in range(32)) + p["b2"][i]) for i in range(16)]
    mean = math.tanh(sum(p["w_mu"][i] * h2[i] for i in range(16)) + p["b_mu"][0])
    value = sum(p["w_v"][i] * h2[i] for i in range(16)) + p["b_v"][0]
    m, std, v = policy_forward(net, s)
    assert m == pytest.approx(mean, abs=1e-12)
    assert v == pytest.approx(value, abs=1e-12)
    assert std == pytest.approx(math.exp(p["log_std"][0]))
    mb, vb, _ = forward_batch(p, s[None, :])
    assert mb[0] == pytest.approx(m) and vb[0] == pytest.approx(v)


def test_mean_is_bounded(rng):
    net = PolicyNetwork.init(rng)
    net.params["w_mu"] = rng.normal(0, 50, 16)
    for _ in range(200):
        m, _, _ = policy_forward(net, rng.normal(0, 10, OBS_DIM))
        assert -1.0 <= m <= 1.0


def test_policy_rejects_bad_observations():
    net = PolicyNetwork.zeros()
    with pytest.raises(ValueError):
        policy_forward(net, np.zeros(5))
    with pytest.raises(ValueError):
        policy_forward(net, np.full(OBS_DIM, np.nan))


def test_policy_json_roundtrip(tmp_path, rng):
    net = PolicyNetwork.init(rng)
    net.save(tmp_path / "p.json")
    back = PolicyNetwork.load(tmp_path / "p.json")
    assert all(np.array_equal(net.params[k], back.params[k]) for k in PARAM_NAMES)
    bad = json.loads((tmp_path / "p.json").read_text())
    bad["architecture"]["hidden"] = [64, 64]
    with pytest.raises(ValueError):
        PolicyNetwork.from_json(bad)


# -- PPO -----------------------------------------------------------------------

def _random_batch(rng, n=5):
    net = PolicyNetwork.init(rng, init_log_std=float(rng.uniform(-1.5, 0.0)))
    net.params["w_mu"] = rng.normal(0, 0.5, 16)
    obs = rng.normal(0, 1, (n, OBS_DIM))
    mu, _, _ = forward_batch(net.params, obs)
    a = mu + rng.normal(0, 0.5, n)
    logp = gaussian_logp(a, mu, net.params["log_std"][0])
    # ratios straddle the clip range but keep clear of its kinks
    ratio = np.exp(rng.uniform(-0.4, 0.4, n))
    ratio = np.where(np.minimum(abs(ratio - 0.8), abs(ratio - 1.2)) < 1e-3, 1.0, ratio)
    old = logp - np.log(ratio)
    return net, obs, a, old, rng.normal(0, 1, n), rng.normal(0, 1, n)


def _numeric_grad(net, args, cfg, h=1e-5):
    flat = net.flat()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        vals = []
        for s in (1.0, -1.0):
            f = flat.copy()
            f[i] += s * h
            probe = net.copy()
            probe.set_flat(f)
            vals.append(ppo_loss_and_grad(probe.params, *args, cfg)[0])
        out[i] = (vals[0] - vals[1]) / (2 * h)
    return out


def test_gradient_check_on_random_buffers():
    rng = np.random.default_rng(42)
    cfg = PPOConfig()
    worst = 0.0
    for _ in range(20):
        net, *args = _random_batch(rng)
        _, g, _ = ppo_loss_and_grad(net.params, *args, cfg)
        analytic = np.concatenate([g[k].ravel() for k in PARAM_NAMES])
        numeric = _numeric_grad(net, args, cfg)
        rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        worst = max(worst, float(rel.max()))
    assert worst < 1e-4


def test_zero_advantages_leave_policy_loss_flat(rng):
    net, obs, a, old, _, ret = _random_batch(rng, 8)
    cfg = PPOConfig(value_coef=0.0, entropy_coef=0.0)
    loss, g, _ = ppo_loss_and_grad(net.params, obs, a, old, np.zeros(8), ret, cfg)
    assert loss == 0.0
    assert all(np.all(v == 0) for v in g.values())


def test_ratio_one_makes_clip_irrelevant(rng):
    net, obs, a, _, adv, ret = _random_batch(rng, 8)
    mu, _, _ = forward_batch(net.params, obs)
    old = gaussian_logp(a, mu, net.params["log_std"][0])
    l1, g1, info = ppo_loss_and_grad(net.params, obs, a, old, adv, ret, PPOConfig(clip=0.2))
    l2, g2, _ = ppo_loss_and_grad(net.params, obs, a, old, adv, ret, PPOConfig(clip=1e6))
    assert l1 == pytest.approx(l2)
    assert info["policy_loss"] == pytest.approx(-adv.mean())
    assert all(np.allclose(g1[k], g2[k]) for k in g1)


def test_gae_hand_example():
    adv, ret = compute_gae([1.0, 1.0], [0.5, 0.5], [False, True], [0.0, 0.0], gamma=0.9, lam=0.8)
    assert adv == pytest.approx([0.95 + 0.72 * 0.5, 0.5])
    assert ret == pytest.approx([1.81, 1.0])
    # a bootstrapped segment end uses the supplied value
    adv, _ = compute_gae([0.0], [0.0], [True], [2.0], gamma=0.5, lam=1.0)
    assert adv == pytest.approx([1.0])


def test_ppo_update_moves_policy_toward_good_actions(rng):
    net = PolicyNetwork.init(rng)
    buf = Rollout()
    obs = np.zeros(OBS_DIM)
    mean, std, v = policy_forward(net, obs)
    for _ in range(256):
        a = mean + std * rng.standard_normal()
        buf.add(obs, a, float(gaussian_logp(np.array([a]), np.array([mean]), math.log(std))[0]), v)
        buf.set_reward(len(buf) - 1, a)
        buf.end_segment(len(buf) - 1, 0.0)
    before = policy_forward(net, obs)[0]
    ppo_update(buf, net, PPOConfig(lr=1e-2), Adam(1e-2), rng)
    assert policy_forward(net, obs)[0] > before
    with pytest.raises(ValueError):
        ppo_update(Rollout(), net, PPOConfig(), Adam(), rng)


# -- convergence ---------------------------------------------------------------

def test_check_convergence_examples():
    assert check_convergence([3.0, 3.0, 3.0]) == 0
    assert check_convergence([1, 2, 2.05, 1.95, 2.0]) == 1
    assert check_convergence([2.0 ** k for k in range(10)]) is None
    assert check_convergence([5.0]) is None
    assert check_convergence([1, 10, 1, 10, 1, 10], horizon=1) is None
    with pytest.raises(ValueError):
        check_convergence([])


# -- training loop ---------------------------------------------------------------

PROFILES = profile_family(2)


def _small_cfg(**kw):
    ppo = PPOConfig(rollout_steps=1, minibatch=32, epochs=2)
    base = dict(total_steps=240, eval_every=60, episode_s=3.0, seed=5, ppo=ppo)
    base.update(kw)
    return TrainConfig(**base)


def _small_env():
    traces = generate_traces(TraceGenParams(duration_s=3.0), 2, seed=1)
    return traces, [(traces[0], PROFILES[0])]


def test_zero_steps_returns_initial_policy():
    traces, val = _small_env()
    res = train(_small_cfg(total_steps=0), PROFILES, traces, validation=val)
    init = PolicyNetwork.init(np.random.default_rng(5))
    assert res.curve == []
    assert res.env_steps == 0
    assert all(np.array_equal(res.net.params[k], init.params[k]) for k in PARAM_NAMES)


def test_training_produces_curve_and_actions():
    traces, val = _small_env()
    res = train(_small_cfg(), PROFILES, traces, validation=val)
    assert res.env_steps >= 240
    assert [c.steps for c in res.curve][0] == 0
    assert len(res.curve) >= 4
    assert all(-1 <= a <= 1 for a in res.actions)
    assert 0 <= res.increase_share <= 1


def test_checkpoint_resume_matches_uninterrupted_run(tmp_path):
    traces, val = _small_env()
    whole = Trainer(_small_cfg(), PROFILES, traces, validation=val)
    whole.run()

    part = Trainer(_small_cfg(), PROFILES, traces, validation=val)
    part.run(until_steps=100)
    part.save(tmp_path / "ckpt.json")
    resumed = trainer_from_state(json.loads((tmp_path / "ckpt.json").read_text()))
    resumed.run()

    assert resumed.steps == whole.steps
    assert all(np.array_equal(resumed.net.params[k], whole.net.params[k]) for k in PARAM_NAMES)
    assert [c.validation_reward for c in resumed.curve] == [c.validation_reward for c in whole.curve]
    assert np.array_equal(resumed.action_hist, whole.action_hist)
    assert all(np.array_equal(load_policy(tmp_path / "ckpt.json").params[k], part.net.params[k])
               for k in PARAM_NAMES)


def test_safeguarded_training_counts_switches():
    traces, val = _small_env()
    res = train(_small_cfg(reward_kind="network", safeguard=SafeguardConfig(sensitivity=4.0)),
                PROFILES, traces, validation=val)
    assert res.switches > 0
    assert res.fallback_windows >= res.switches
    assert res.rl_steps < res.env_steps


def test_curve_csv_roundtrip(tmp_path):
    traces, val = _small_env()
    res = train(_small_cfg(total_steps=60), PROFILES, traces, validation=val)
    write_curve_csv(res.curve, tmp_path / "c.csv")
    back = read_curve_csv(tmp_path / "c.csv")
    assert [c.steps for c in back] == [c.steps for c in res.curve]
    assert [c.validation_reward for c in back] == pytest.approx([c.validation_reward for c in res.curve], abs=1e-6)


@settings(max_examples=300, deadline=None)
@given(x=st.floats(10, 9000), g=st.floats(0, 9000), a=st.floats(-1, 1), b=st.floats(-1, 1))
def test_map_action_clamped_and_monotone(x, g, a, b):
    rs = RateState(x, g)
    lo, hi = sorted((a, b))
    assert RATE_MIN_KBPS <= map_action(lo, rs) <= map_action(hi, rs) <= RATE_MAX_KBPS


def test_smoke_training_budget():
    traces = generate_traces(TraceGenParams(), 3, seed=2)
    t0 = time.perf_counter()
    res = train(TrainConfig(total_steps=1000, eval_every=500, seed=0), PROFILES, traces,
                validation=[(traces[0], PROFILES[0])])
    assert res.env_steps >= 1000
    assert time.perf_counter() - t0 < 60


def test_resumed_curve_steps_increase(tmp_path):
    traces, val = _small_env()
    part = Trainer(_small_cfg(), PROFILES, traces, validation=val)
    part.run(until_steps=130)
    part.save(tmp_path / "ckpt.json")
    resumed = trainer_from_state(json.loads((tmp_path / "ckpt.json").read_text()))
    resumed.run()
    steps = [c.steps for c in resumed.curve]
    assert steps[0] == 0 and steps[-1] >= 240
    assert all(b > a for a, b in zip(steps, steps[1:]))
