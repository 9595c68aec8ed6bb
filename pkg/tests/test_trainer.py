import math

import numpy as np
import pytest

from noisyrec.corpus import InteractionTable, split
from noisyrec.model import PreferenceParams
from noisyrec.objective import sigmoid
from noisyrec.trainer import (
    Batch,
    Optimizer,
    TrainConfig,
    bpo_step,
    bpr_step,
    nbpo_step_ss,
    pairwise_step,
    point_step,
    sample_negatives,
    sample_negatives_wbpr,
    train,
)

from conftest import random_params


def make_train_table():
    # 4 users x 6 items with varied degrees
    pairs = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 3), (2, 4), (3, 5)]
    return InteractionTable(4, 6, pairs)


# --------------------------------------------------------------------------
# negative sampling


def test_sample_negatives_single_candidate():
    table = InteractionTable(1, 5, [(0, 0), (0, 1), (0, 2), (0, 3)])
    rng = np.random.default_rng(0)
    assert sample_negatives(table, 0, 3, rng) == [4, 4, 4]


def test_sample_negatives_no_positives_never_errors():
    table = InteractionTable(2, 4, [(1, 0)])
    rng = np.random.default_rng(1)
    out = sample_negatives(table, 0, 2, rng)
    assert len(out) == 2 and all(0 <= j < 4 for j in out)


def test_sample_negatives_degenerate_user():
    table = InteractionTable(1, 3, [(0, 0), (0, 1), (0, 2)])
    with pytest.raises(ValueError):
        sample_negatives(table, 0, 1, np.random.default_rng(0))


def test_sample_negatives_uniformity():
    table = InteractionTable(1, 100, [(0, j) for j in range(10)])
    rng = np.random.default_rng(2)
    draws = sample_negatives(table, 0, 100_000, rng)
    counts = np.bincount(draws, minlength=100)
    assert counts[:10].sum() == 0
    n, p = 100_000, 1 / 90
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts[10:] - n * p) < 3.5 * sigma)


def test_wbpr_popularity_ratio():
    table = InteractionTable(1, 3, [(0, 0)])
    popularity = np.array([5.0, 1.0, 3.0])
    rng = np.random.default_rng(3)
    draws = np.array(sample_negatives_wbpr(table, 0, 100_000, popularity, rng))
    counts = np.bincount(draws, minlength=3)
    assert counts[0] == 0
    assert counts[1] / counts[2] == pytest.approx(1 / 3, rel=0.05)


def test_wbpr_zero_popularity_fallback():
    table = InteractionTable(1, 4, [(0, 0)])
    popularity = np.array([9.0, 0.0, 0.0, 0.0])
    rng = np.random.default_rng(4)
    draws = sample_negatives_wbpr(table, 0, 3000, popularity, rng)
    counts = np.bincount(draws, minlength=4)
    assert counts[0] == 0 and all(c > 0 for c in counts[1:])


def test_wbpr_single_candidate():
    table = InteractionTable(1, 2, [(0, 0)])
    popularity = np.array([1.0, 1.0])
    assert sample_negatives_wbpr(table, 0, 4, popularity, np.random.default_rng(5)) == [1, 1, 1, 1]


# --------------------------------------------------------------------------
# steps


def config(**kw):
    defaults = dict(optimizer=Optimizer.NBPO_SS, eta=1.0, rho=1, batch_size=10, K=1, L=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_bpr_step_hand_example():
    theta = PreferenceParams(U=np.array([[1.0]]), V=np.array([[1.0], [0.0]]))
    batch = Batch(
        pos_u=np.array([0]), pos_i=np.array([0]),
        neg_u=np.array([0]), neg_j=np.array([1]),
    )
    bpr_step(theta, batch, config(optimizer=Optimizer.BPR, eta=1.0))
    c = sigmoid(-1.0)  # 0.26894...
    assert theta.U[0, 0] == pytest.approx(1.0 + c, abs=1e-12)
    assert theta.V[0, 0] == pytest.approx(1.0 + c, abs=1e-12)
    assert theta.V[1, 0] == pytest.approx(0.0 - c, abs=1e-12)


def test_bpo_step_coefficients():
    # positive with score 0 adds 0.5 * V_i to U_u
    theta = PreferenceParams(U=np.array([[0.0, 0.0]]), V=np.array([[1.0, 2.0], [3.0, 4.0]]))
    batch = Batch(
        pos_u=np.array([0]), pos_i=np.array([0]),
        neg_u=np.array([0]), neg_j=np.array([1]),
    )
    cfg = config(optimizer=Optimizer.BPO, eta=1.0, K=2)
    bpo_step(theta, batch, cfg)
    # pos coeff +0.5, neg coeff -0.5 at score 0
    assert np.allclose(theta.U[0], 0.5 * np.array([1.0, 2.0]) - 0.5 * np.array([3.0, 4.0]))


def test_bpo_step_saturated_negative():
    theta = PreferenceParams(U=np.array([[1.0]]), V=np.array([[-30.0]]))
    batch = Batch(
        pos_u=np.array([], dtype=int), pos_i=np.array([], dtype=int),
        neg_u=np.array([0]), neg_j=np.array([0]),
    )
    before = theta.U.copy()
    bpo_step(theta, batch, config(optimizer=Optimizer.BPO, eta=1.0))
    # score is -30: sigma(score) ~ 0, negative already settled
    assert np.allclose(theta.U, before, atol=1e-10)


def test_nbpo_ss_step_coefficients():
    rng = np.random.default_rng(6)
    theta, phi = random_params(rng, 3, 3, 2, 2)
    U0, V0, P0, Q0 = theta.U.copy(), theta.V.copy(), phi.P.copy(), phi.Q.copy()
    batch = Batch(
        pos_u=np.array([0]), pos_i=np.array([1]),
        neg_u=np.array([0]), neg_j=np.array([2]),
    )
    eta = 0.1
    cfg = config(optimizer=Optimizer.NBPO_SS, eta=eta, K=2, L=2)
    nbpo_step_ss(theta, phi, batch, cfg)

    def expected_coeffs(label, r, g):
        if label == 1:
            return sigmoid(-g) * sigmoid(-r), -sigmoid(g) * sigmoid(r)
        return -sigmoid(r) + sigmoid(g) * sigmoid(-r), sigmoid(-g) * sigmoid(r)

    r1, g1 = U0[0] @ V0[1], P0[0] @ Q0[1]
    r2, g2 = U0[0] @ V0[2], P0[0] @ Q0[2]
    ct1, cp1 = expected_coeffs(1, r1, g1)
    ct2, cp2 = expected_coeffs(0, r2, g2)
    assert np.allclose(theta.U[0], U0[0] + eta * (ct1 * V0[1] + ct2 * V0[2]), atol=1e-12)
    assert np.allclose(theta.V[1], V0[1] + eta * ct1 * U0[0], atol=1e-12)
    assert np.allclose(phi.P[0], P0[0] + eta * (cp1 * Q0[1] + cp2 * Q0[2]), atol=1e-12)
    assert np.allclose(phi.Q[2], Q0[2] + eta * cp2 * P0[0], atol=1e-12)


def test_nbpo_ss_l0_matches_degenerate_closed_form():
    # with no noise embeddings the update uses 0.5*sigma(-r) / 0.5*(1-3*sigma(r))
    rng = np.random.default_rng(7)
    for _ in range(20):
        theta, phi = random_params(rng, 5, 5, 3, 0)
        U0, V0 = theta.U.copy(), theta.V.copy()
        pos_u = rng.integers(0, 5, size=4)
        pos_i = rng.integers(0, 5, size=4)
        neg_j = rng.integers(0, 5, size=4)
        batch = Batch(pos_u=pos_u, pos_i=pos_i, neg_u=pos_u, neg_j=neg_j)
        eta = 0.05
        nbpo_step_ss(theta, phi, batch, config(eta=eta, K=3, L=0))

        dU = np.zeros_like(U0)
        dV = np.zeros_like(V0)
        for u, i in zip(pos_u, pos_i):
            r = U0[u] @ V0[i]
            c = 0.5 * sigmoid(-r)
            dU[u] += c * V0[i]
            dV[i] += c * U0[u]
        for u, j in zip(pos_u, neg_j):
            r = U0[u] @ V0[j]
            c = 0.5 * (1 - 3 * sigmoid(r))
            dU[u] += c * V0[j]
            dV[j] += c * U0[u]
        assert np.allclose(theta.U, U0 + eta * dU, atol=1e-12)
        assert np.allclose(theta.V, V0 + eta * dV, atol=1e-12)


def test_vanishing_gradient_contrast():
    # at a badly-scored positive the true surrogate gradient dies, the
    # log-derivative form does not
    r, g = -30.0, 0.0
    true_coeff = sigmoid(-g) * sigmoid(r) * sigmoid(-r)
    ss_coeff = sigmoid(-g) * sigmoid(-r)
    assert true_coeff < 1e-12
    assert ss_coeff == pytest.approx(0.5, abs=1e-10)


def test_step_touches_only_batch_rows():
    rng = np.random.default_rng(8)
    for optimizer in Optimizer:
        theta, phi = random_params(rng, 8, 9, 3, 2)
        U0, V0, P0, Q0 = theta.U.copy(), theta.V.copy(), phi.P.copy(), phi.Q.copy()
        batch = Batch(
            pos_u=np.array([1, 2]), pos_i=np.array([3, 4]),
            neg_u=np.array([1, 2]), neg_j=np.array([5, 6]),
        )
        cfg = config(optimizer=optimizer, eta=0.1, K=3, L=2,
                     lambda_theta=0.2, lambda_phi=0.2)
        if optimizer in (Optimizer.BPR, Optimizer.WBPR):
            pairwise_step(theta, batch, cfg)
        else:
            point_step(theta, phi, batch, cfg)
        touched_u = {1, 2}
        touched_i = {3, 4, 5, 6}
        for u in range(8):
            if u not in touched_u:
                assert np.array_equal(theta.U[u], U0[u])
                assert np.array_equal(phi.P[u], P0[u])
        for i in range(9):
            if i not in touched_i:
                assert np.array_equal(theta.V[i], V0[i])
                assert np.array_equal(phi.Q[i], Q0[i])


def test_balance_positives_scales_positive_update():
    rng = np.random.default_rng(9)
    theta1, _ = random_params(rng, 3, 3, 2, 0)
    theta2 = theta1.copy()
    U0, V0 = theta1.U.copy(), theta1.V.copy()
    batch = Batch(
        pos_u=np.array([0]), pos_i=np.array([0]),
        neg_u=np.array([0, 0]), neg_j=np.array([1, 2]),
    )
    eta = 0.1
    cfg1 = config(optimizer=Optimizer.BPO, eta=eta, rho=2, K=2)
    cfg2 = config(optimizer=Optimizer.BPO, eta=eta, rho=2, K=2, balance_positives=True)
    bpo_step(theta1, batch, cfg1)
    bpo_step(theta2, batch, cfg2)
    # rho=2 doubles the positive-term contribution, negatives are unchanged
    ct_pos = sigmoid(-(U0[0] @ V0[0]))
    assert np.allclose(theta2.U[0] - theta1.U[0], eta * ct_pos * V0[0], atol=1e-12)
    assert np.allclose(theta2.V[1], theta1.V[1], atol=1e-15)


# --------------------------------------------------------------------------
# training loop


def make_split():
    pairs = [(u, i) for u in range(6) for i in range(6) if (u + i) % 2 == 0]
    table = InteractionTable(6, 6, pairs)
    return split(table, seed=5)


def test_train_epoch_count_and_history():
    ds = make_split()
    cfg = TrainConfig(optimizer=Optimizer.BPO, eta=0.1, rho=1, batch_size=1000,
                      K=4, max_epochs=3, seed=0)
    hist = train(ds, cfg)
    assert len(hist.epochs) == 3
    assert [rec.epoch for rec in hist.epochs] == [0, 1, 2]
    assert 0 <= hist.best_epoch < 3
    assert hist.best_theta is not None


def test_train_determinism():
    ds = make_split()
    cfg = TrainConfig(optimizer=Optimizer.NBPO_SS, eta=0.1, rho=2, batch_size=7,
                      K=3, L=2, max_epochs=4, seed=11)
    h1 = train(ds, cfg)
    h2 = train(ds, cfg)
    assert h1.to_csv_lines() == h2.to_csv_lines()
    assert np.array_equal(h1.best_theta.U, h2.best_theta.U)
    assert np.array_equal(h1.best_phi.P, h2.best_phi.P)


def test_train_all_optimizers_run():
    ds = make_split()
    for optimizer in Optimizer:
        cfg = TrainConfig(optimizer=optimizer, eta=0.1, rho=1, batch_size=16,
                          K=3, L=2, max_epochs=2, seed=1)
        hist = train(ds, cfg)
        assert len(hist.epochs) == 2
        assert np.isfinite(hist.epochs[-1].objective)


def test_train_patience_stops_early():
    ds = make_split()
    cfg = TrainConfig(optimizer=Optimizer.BPO, eta=1e-6, rho=1, batch_size=1000,
                      K=2, max_epochs=50, seed=0, patience=2)
    hist = train(ds, cfg)
    assert len(hist.epochs) < 50


def test_train_learns_block_structure(blocky_split):
    cfg = TrainConfig(optimizer=Optimizer.NBPO_SS, eta=0.05, rho=2, batch_size=200,
                      K=8, L=4, max_epochs=15, seed=0, lambda_theta=0.01, lambda_phi=0.01)
    hist = train(blocky_split, cfg)
    first = hist.epochs[0].report.f1[2]
    assert hist.best_f1_at_2() > max(first, 0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(eta=0.0)
    with pytest.raises(ValueError):
        TrainConfig(rho=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="NOPE")


def test_effective_l_ignored_for_point_baselines():
    cfg = TrainConfig(optimizer=Optimizer.BPO, L=16)
    assert cfg.effective_L == 0
    cfg = TrainConfig(optimizer=Optimizer.NBPO_SS, L=16)
    assert cfg.effective_L == 16
