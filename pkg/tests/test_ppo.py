"""Trainer oracles: GAE against the brute-force nested sum, clipped
surrogate semantics, full-loss gradients against central finite
differences, seeded determinism, and curriculum wiring."""

import math

import numpy as np
import pytest

from quadtta.nets import NetDims, NetSet, gaussian_logp
from quadtta.ppo import (
    Adam,
    PpoConfig,
    Trainer,
    TrainSettings,
    clip_global_norm,
    compute_gae,
    lr_schedule,
    normalize_advantages,
    ppo_loss_and_grads,
    ppo_update,
)
from quadtta.simcore import DR_PRESETS

RNG = np.random.default_rng(314)

TINY_DIMS = NetDims(
    state_dim=3,
    action_dim=2,
    subgoal_dim=2,
    latent_dim=3,
    obs_dim=4,
    n_tasks=3,
    embed_dim=4,
    policy_hidden=(8, 8),
    value_hidden=(8,),
    enc_hidden=(8,),
    tta_hidden=(9,),
)


# ---------------------------------------------------------------------- GAE


def gae_nested_sum(rewards, values, dones, bootstrap, gamma, lam):
    """Independent brute-force expansion A_t = sum_l (gamma*lam)^l delta_{t+l}
    with the product of (1 - done) factors cutting episode boundaries."""
    T = len(rewards)
    v_next = np.append(values[1:], bootstrap)
    deltas = rewards + gamma * v_next * (1.0 - dones) - values
    adv = np.zeros(T)
    for t in range(T):
        acc = 0.0
        mask = 1.0
        for l in range(T - t):
            acc += (gamma * lam) ** l * mask * deltas[t + l]
            mask *= 1.0 - dones[t + l]
            if mask == 0.0:
                break
        adv[t] = acc
    return adv, adv + values


def test_gae_matches_nested_sum_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        T = int(rng.integers(1, 33))
        rewards = rng.normal(size=T)
        values = rng.normal(size=T)
        dones = (rng.random(T) < 0.2).astype(float)
        bootstrap = float(rng.normal())
        gamma = float(rng.uniform(0.8, 1.0))
        lam = float(rng.uniform(0.8, 1.0))
        adv, ret = compute_gae(rewards, values, dones, bootstrap, gamma, lam)
        adv_ref, ret_ref = gae_nested_sum(rewards, values, dones, bootstrap, gamma, lam)
        assert np.abs(adv - adv_ref).max() < 1e-6
        assert np.abs(ret - ret_ref).max() < 1e-6


def test_gae_single_terminal_step():
    adv, ret = compute_gae([1.0], [0.5], [1.0], 9.9, 0.99, 0.95)
    assert adv[0] == pytest.approx(0.5)  # bootstrap masked by the done flag
    assert ret[0] == pytest.approx(1.0)


def test_gae_gamma_zero_is_td0():
    rewards = np.array([1.0, 2.0, 3.0])
    values = np.array([0.5, 0.5, 0.5])
    dones = np.zeros(3)
    adv, _ = compute_gae(rewards, values, dones, 0.7, 0.0, 0.95)
    assert np.allclose(adv, rewards - values)


def test_gae_batched_matches_per_env():
    rng = np.random.default_rng(1)
    T, N = 16, 5
    rewards = rng.normal(size=(T, N))
    values = rng.normal(size=(T, N))
    dones = (rng.random((T, N)) < 0.15).astype(float)
    bootstrap = rng.normal(size=N)
    adv, ret = compute_gae(rewards, values, dones, bootstrap, 0.99, 0.95)
    for i in range(N):
        a, r = compute_gae(rewards[:, i], values[:, i], dones[:, i], bootstrap[i], 0.99, 0.95)
        assert np.allclose(adv[:, i], a) and np.allclose(ret[:, i], r)


def test_gae_length_mismatch_rejected():
    with pytest.raises(ValueError):
        compute_gae([1.0, 2.0], [0.5], [0.0, 0.0], 0.0, 0.99, 0.95)


def test_advantage_normalization_moments():
    adv = RNG.normal(size=4096) * 37 + 11
    norm = normalize_advantages(adv)
    assert abs(norm.mean()) < 1e-6
    assert abs(norm.std() - 1.0) < 1e-4


# ---------------------------------------------------------------- schedule


def test_lr_schedule_endpoints():
    total = 250
    assert lr_schedule(3e-4, 0, total) == pytest.approx(3e-4)
    assert lr_schedule(3e-4, total - 1, total) == pytest.approx(0.0, abs=1e-18)
    mid = lr_schedule(3e-4, (total - 1) // 2, total)
    # Linear in the iteration index.
    expected = 3e-4 * (1 - ((total - 1) // 2) / (total - 1))
    assert mid == pytest.approx(expected)


def test_lr_schedule_monotone_decreasing():
    vals = [lr_schedule(3e-4, k, 100) for k in range(100)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


# ------------------------------------------------------------ loss mechanics


def synthetic_batch(nets, B=24, rng=None, dtype=np.float64, ratio_noise=0.1):
    rng = rng or np.random.default_rng(5)
    d = nets.dims
    obs = rng.normal(size=(B, d.obs_dim)).astype(dtype)
    x = rng.normal(size=(B, d.state_dim)).astype(dtype)
    task = rng.integers(0, d.n_tasks, size=B)
    z_base = rng.normal(size=(B, d.latent_dim)).astype(dtype) * 0.3
    # A couple of rows deep in the clamp region exercise the gradient mask.
    z_base[0] = 10.4
    trans = rng.normal(size=(B, d.tta_in)).astype(dtype)
    has = (rng.random(B) < 0.8).astype(dtype)
    action_raw = rng.uniform(-1, 1, size=(B, d.action_dim)).astype(dtype)
    g = nets.encoder.encode(task, obs)
    delta = nets.tta.forward(trans)
    z = np.clip(z_base + 0.1 * delta * has[:, None], -10, 10)
    mean = nets.policy.forward(np.concatenate([x, g, z], axis=1))
    logp = gaussian_logp(action_raw, mean, nets.policy.log_std)
    logp_old = logp + rng.normal(size=B) * ratio_noise
    return {
        "obs": obs,
        "x": x,
        "task": task,
        "z_base": z_base,
        "trans": trans,
        "has_trans": has,
        "action_raw": action_raw,
        "logp": logp_old.astype(dtype),
        "adv": rng.normal(size=B).astype(dtype),
        "ret": rng.normal(size=B).astype(dtype),
    }


def test_identical_policies_give_unit_ratio():
    nets = NetSet.initialize(np.random.default_rng(2), TINY_DIMS, dtype=np.float64)
    batch = synthetic_batch(nets, ratio_noise=0.0)
    stats, _ = ppo_loss_and_grads(nets, batch, 0.2, 1e-3, 0.5, 0.1)
    assert abs(stats["approx_kl"]) < 1e-12
    assert stats["clip_frac"] == 0.0
    # With ratio == 1 the surrogate reduces to -mean(adv).
    assert stats["loss_pi"] == pytest.approx(-batch["adv"].mean(), abs=1e-12)


def test_clipped_branch_engages_beyond_epsilon():
    nets = NetSet.initialize(np.random.default_rng(3), TINY_DIMS, dtype=np.float64)
    eps = 0.2
    batch = synthetic_batch(nets, B=4, ratio_noise=0.0)
    # Force ratio = 1 + 2*eps on every row with positive advantage.
    batch["logp"] = batch["logp"] - math.log(1 + 2 * eps)
    batch["adv"] = np.abs(batch["adv"]) + 0.5
    stats, grads = ppo_loss_and_grads(nets, batch, eps, 0.0, 0.0, 0.1)
    expected = -np.mean((1 + eps) * batch["adv"])
    assert stats["loss_pi"] == pytest.approx(expected, abs=1e-12)
    # Clipped and flat: no gradient reaches the policy trunk.
    for name, g in grads.items():
        if name.startswith(("policy", "encoder", "tta")):
            assert np.all(g == 0.0), name


def test_gradients_match_finite_differences_all_nets():
    nets = NetSet.initialize(np.random.default_rng(4), TINY_DIMS, dtype=np.float64)
    batch = synthetic_batch(nets, B=16)
    clip_eps, ent, vc, alpha = 0.2, 1e-3, 0.5, 0.1

    def total_loss():
        stats, _ = ppo_loss_and_grads(nets, batch, clip_eps, ent, vc, alpha)
        return stats["total"]

    _, grads = ppo_loss_and_grads(nets, batch, clip_eps, ent, vc, alpha)
    h = 1e-4
    rng = np.random.default_rng(9)
    for name, arr in nets.named_params().items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        picks = rng.choice(flat.size, size=min(flat.size, 12), replace=False)
        for idx in picks:
            old = flat[idx]
            flat[idx] = old + h
            hi = total_loss()
            flat[idx] = old - h
            lo = total_loss()
            flat[idx] = old
            fd = (hi - lo) / (2 * h)
            denom = max(abs(fd), abs(gflat[idx]), 1e-8)
            assert abs(fd - gflat[idx]) / denom < 1e-3, (name, idx, fd, gflat[idx])


def test_update_direction_matches_vanilla_policy_gradient():
    # entropy 0, effectively infinite clip, ratio == 1: the surrogate
    # gradient must equal the score-function estimator -mean(A * dlogpi).
    nets = NetSet.initialize(np.random.default_rng(6), TINY_DIMS, dtype=np.float64)
    batch = synthetic_batch(nets, B=16, ratio_noise=0.0)
    _, grads = ppo_loss_and_grads(nets, batch, 1e9, 0.0, 0.0, 0.1)

    d = nets.dims
    g_enc = nets.encoder.encode(batch["task"], batch["obs"])
    delta = nets.tta.forward(batch["trans"])
    z = np.clip(batch["z_base"] + 0.1 * delta * batch["has_trans"][:, None], -10, 10)
    inp = np.concatenate([batch["x"], g_enc, z], axis=1)

    B = inp.shape[0]
    mean, cache = nets.policy.mlp.forward_cached(inp)
    std = np.exp(nets.policy.log_std)
    zscore = (batch["action_raw"] - mean) / std
    # d(-mean(A * logpi))/dmean, per sample.
    dmean = (-batch["adv"][:, None] / B) * zscore / std
    _, pol_raw = nets.policy.mlp.backward(cache, dmean)
    ref = nets.policy.mlp.named_grads("policy", pol_raw)
    for name, g in ref.items():
        assert np.abs(g - grads[name]).max() < 1e-10, name


def test_clip_global_norm():
    grads = {"a": np.full(4, 3.0), "b": np.full(9, 4.0)}
    total = math.sqrt(4 * 9 + 9 * 16)
    returned = clip_global_norm(grads, 0.5)
    assert returned == pytest.approx(total)
    new_total = math.sqrt(sum((g**2).sum() for g in grads.values()))
    assert new_total == pytest.approx(0.5, rel=1e-6)
    small = {"a": np.full(2, 0.01)}
    clip_global_norm(small, 0.5)
    assert np.allclose(small["a"], 0.01)  # untouched below the cap


def test_adam_bias_corrected_first_step():
    p = {"w": np.array([1.0, 2.0], dtype=np.float64)}
    g = {"w": np.array([0.1, -0.2], dtype=np.float64)}
    opt = Adam(p)
    opt.step(p, g, lr=0.01)
    # First step moves each weight by ~lr * sign(g) (bias correction).
    assert np.allclose(p["w"], [1.0 - 0.01, 2.0 + 0.01], atol=1e-6)


# ------------------------------------------------------------- integration


def tiny_trainer(seed=0, iterations=2, dr="narrow", task_ids=(0,), fixed=None):
    cfg = PpoConfig(n_envs=4, rollout_steps_total=256, total_iterations=iterations, minibatches=4)
    st = TrainSettings(
        task_ids=task_ids,
        dr=DR_PRESETS[dr],
        seed=seed,
        out_dir=None,
        fixed_distance=fixed,
        config_digest="test",
    )
    return Trainer(cfg, st), cfg, st


def test_collect_rollout_deterministic_across_runs():
    t1, cfg, st = tiny_trainer(seed=11)
    t2, _, _ = tiny_trainer(seed=11)
    b1, s1 = t1.collect_rollout()
    b2, s2 = t2.collect_rollout()
    for name in ("obs", "x", "z", "action_raw", "logp", "reward", "done"):
        assert np.array_equal(getattr(b1, name), getattr(b2, name)), name
    assert s1["sr"] == s2["sr"]


def test_seeded_training_reproduces_parameters_exactly():
    t1, cfg, _ = tiny_trainer(seed=3)
    t2, _, _ = tiny_trainer(seed=3)
    for t in (t1, t2):
        for it in range(2):
            buf, _ = t.collect_rollout()
            ppo_update(buf, t.nets, t.cfg, it, t.adam, t.shuffle_rng, 0.1)
    p1, p2 = t1.nets.named_params(), t2.nets.named_params()
    for name in p1:
        assert np.array_equal(p1[name], p2[name]), name


def test_different_seeds_diverge():
    t1, _, _ = tiny_trainer(seed=3)
    t2, _, _ = tiny_trainer(seed=4)
    b1, _ = t1.collect_rollout()
    b2, _ = t2.collect_rollout()
    assert not np.array_equal(b1.action_raw, b2.action_raw)


def test_multitask_env_assignment_round_robin():
    cfg = PpoConfig(n_envs=10, rollout_steps_total=320, total_iterations=1, minibatches=4)
    st = TrainSettings(task_ids=(0, 1, 2, 3, 4), dr=DR_PRESETS["off"], seed=0, config_digest="t")
    tr = Trainer(cfg, st)
    tasks_assigned = [env.task_id for env in tr.envs]
    assert tasks_assigned == [0, 1, 2, 3, 4, 0, 1, 2, 3, 4]
    assert all(tasks_assigned.count(t) == 2 for t in range(5))


def test_train_run_writes_log_and_checkpoint(tmp_path):
    cfg = PpoConfig(n_envs=4, rollout_steps_total=256, total_iterations=3, minibatches=4)
    st = TrainSettings(
        task_ids=(0,),
        dr=DR_PRESETS["off"],
        seed=1,
        out_dir=tmp_path,
        checkpoint_every=2,
        config_digest="smoke",
    )
    tr = Trainer(cfg, st)
    final = tr.run()
    assert final.exists()
    log = (tmp_path / "train_log.csv").read_text().splitlines()
    assert log[0].startswith("# config_digest=smoke")
    assert log[1].split(",")[:4] == ["iteration", "steps", "sr", "sr_ema"]
    assert len(log) == 2 + 3  # comment + header + one row per iteration
    # Curriculum distances never decrease across iterations.
    dists = [float(r.split(",")[4]) for r in log[2:]]
    assert all(a <= b + 1e-9 for a, b in zip(dists, dists[1:]))

    from quadtta.nets import load_netset

    loaded, meta = load_netset(final)
    assert meta["config_digest"] == "smoke"
    assert loaded.weights_digest() == tr.nets.weights_digest()


def test_rollout_buffer_latent_replay_consistency():
    # The replayed latent (z_base + alpha * f(trans)) must reproduce the
    # latent the policy actually consumed during collection.
    tr, _, _ = tiny_trainer(seed=9)
    buf, _ = tr.collect_rollout()
    flat = buf.flat()
    delta = tr.nets.tta.forward(flat["trans"])
    z_replay = np.clip(
        flat["z_base"] + 0.1 * delta * flat["has_trans"][:, None], -10, 10
    )
    assert np.abs(z_replay - flat["z"]).max() < 1e-6


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(n_envs=5, rollout_steps_total=256).validate()
    with pytest.raises(ValueError):
        PpoConfig(rollout_steps_total=100, minibatches=8).validate()
    PpoConfig().validate()
