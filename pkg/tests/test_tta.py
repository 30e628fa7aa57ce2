"""Latent-state semantics: zero reset, bounded drift, step-size arithmetic."""

import numpy as np
import pytest

from quadtta.nets import NetDims, NetSet
from quadtta.tta import CLAMP_BOUND, LatentState, latent_update, reset_latent

RNG = np.random.default_rng(77)


def fresh_nets(seed=0):
    return NetSet.initialize(np.random.default_rng(seed))


def random_transition():
    x = RNG.normal(size=12).astype(np.float32)
    u = RNG.uniform(-1, 1, 4).astype(np.float32)
    x2 = RNG.normal(size=12).astype(np.float32)
    return x, u, x2


def test_reset_latent_is_zero():
    ls = reset_latent(alpha=0.1)
    assert ls.z.shape == (32,)
    assert np.all(ls.z == 0.0)
    assert ls.clamp_bound == CLAMP_BOUND


def test_two_resets_identical():
    a, b = reset_latent(0.1), reset_latent(0.1)
    assert np.array_equal(a.z, b.z) and a.alpha == b.alpha


def test_fresh_latent_matches_no_adaptation_policy_output():
    nets = fresh_nets()
    ls = reset_latent(alpha=0.1, dim=nets.dims.latent_dim)
    xg = RNG.normal(size=(1, 15)).astype(np.float32)
    with_fresh = nets.policy.forward(np.concatenate([xg, ls.z[None, :]], axis=1))
    with_zero = nets.policy.forward(np.concatenate([xg, np.zeros((1, 32), np.float32)], axis=1))
    assert np.array_equal(with_fresh, with_zero)


def test_alpha_zero_never_moves_latent():
    nets = fresh_nets()
    ls = reset_latent(alpha=0.0)
    for _ in range(20):
        ls = latent_update(ls, *random_transition(), nets.tta)
        assert np.all(ls.z == 0.0)


def test_zero_head_output_keeps_latent():
    nets = fresh_nets()
    nets.tta.mlp.weights[-1][...] = 0.0
    nets.tta.mlp.biases[-1][...] = 0.0
    ls = reset_latent(alpha=0.1)
    ls = latent_update(ls, *random_transition(), nets.tta)
    assert np.all(ls.z == 0.0)


def test_update_arithmetic_matches_alpha_times_delta():
    nets = fresh_nets()
    ls = reset_latent(alpha=0.1)
    x, u, x2 = random_transition()
    delta = nets.tta.forward(np.concatenate([x, u, x2])[None, :])[0]
    ls2 = latent_update(ls, x, u, x2, nets.tta)
    assert np.allclose(ls2.z - ls.z, 0.1 * delta, atol=1e-7)


def test_per_step_drift_bounded_by_alpha():
    nets = fresh_nets(3)
    # Give the head non-trivial output magnitude.
    nets.tta.mlp.weights[-1][...] = RNG.normal(size=nets.tta.mlp.weights[-1].shape).astype(np.float32)
    ls = reset_latent(alpha=0.1)
    for _ in range(100):
        prev = ls.z.copy()
        ls = latent_update(ls, *random_transition(), nets.tta)
        assert np.abs(ls.z - prev).max() <= 0.1 + 1e-7


def test_clamp_bound_holds():
    nets = fresh_nets(4)
    ls = LatentState(z=np.full(32, CLAMP_BOUND - 0.01, dtype=np.float32), alpha=5000.0)
    for _ in range(5):
        ls = latent_update(ls, *random_transition(), nets.tta)
        assert np.abs(ls.z).max() <= CLAMP_BOUND


def test_latent_update_deterministic():
    nets = fresh_nets(5)
    x, u, x2 = random_transition()
    a = latent_update(reset_latent(0.1), x, u, x2, nets.tta)
    b = latent_update(reset_latent(0.1), x, u, x2, nets.tta)
    assert np.array_equal(a.z, b.z)


def test_reset_latent_rejects_negative_alpha():
    with pytest.raises(ValueError):
        reset_latent(alpha=-0.1)
