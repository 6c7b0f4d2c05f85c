import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grasp.encode import EncodedBatch
from grasp.neural import (
    Adam, ModelShape, ReduceLROnPlateau, decode, gat_forward, init_params,
    loss_and_gradients, softmax,
)
from grasp.errors import TrainingError

from oracles import central_difference_grad, dense_gat, loop_gat_layer, unordered_pairs

SMALL = ModelShape(d_in=6, n_ops=3, K=3, heads=2, hidden=4, mlp_hidden=4)


def random_batch(rng, n, d_in, n_ops, n_seeds=2, p_edge=0.3, multi=False, K=3):
    pairs = [pr for pr in unordered_pairs(n) if rng.random() < p_edge]
    edges = [(u, v, int(rng.integers(n_ops))) for u, v in pairs]
    if multi:
        edges += [(u, v, int(rng.integers(n_ops))) for u, v, _ in edges if rng.random() < 0.5]
    src = np.array([u for u, _, _ in edges] + [v for _, v, _ in edges], dtype=np.int64)
    dst = np.array([v for _, v, _ in edges] + [u for u, _, _ in edges], dtype=np.int64)
    ops = [op for _, _, op in edges] * 2
    attr = np.zeros((len(ops), n_ops))
    attr[np.arange(len(ops)), ops] = 1.0
    x = rng.normal(size=(n, d_in))
    labels = rng.integers(0, K, size=n_seeds)
    batch = EncodedBatch(x, np.stack([src, dst]) if len(src) else np.zeros((2, 0), np.int64),
                         attr, np.arange(n_seeds), labels, [f"n{i}" for i in range(n)])
    return batch, edges


def dense_inputs(n, edges, n_ops):
    adj = np.zeros((n, n), dtype=bool)
    feat = np.zeros((n, n, n_ops))
    for u, v, op in edges:
        adj[u, v] = adj[v, u] = True
        feat[u, v, op] = feat[v, u, op] = 1.0
    return adj, feat


def max_rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def test_single_node_attention_is_identity_over_self_loop():
    shape = ModelShape(d_in=5, n_ops=2, K=2, heads=3, hidden=4, mlp_hidden=4)
    p = init_params(shape, seed=1, dtype=np.float64)
    x = np.random.default_rng(0).normal(size=(1, 5))
    batch = EncodedBatch(x, np.zeros((2, 0), np.int64), np.zeros((0, 2)), np.array([0]),
                         np.array([0]), ["a"])
    out = gat_forward(batch, p, heads=3)
    h1 = np.maximum(x @ p["gat0.weight"] + p["gat0.bias"], 0)
    h2 = np.maximum(h1 @ p["gat1.weight"] + p["gat1.bias"], 0)
    np.testing.assert_allclose(out, h2, rtol=1e-12)


def test_forward_deterministic_without_dropout():
    rng = np.random.default_rng(3)
    batch, _ = random_batch(rng, 10, 6, 3)
    p = init_params(SMALL, seed=2, dtype=np.float64)
    a = gat_forward(batch, p, heads=2)
    b = gat_forward(batch, p, heads=2)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("seed", range(20))
def test_sparse_forward_matches_dense_reference(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 21))
    batch, edges = random_batch(rng, n, 6, 3, n_seeds=min(3, n))
    p = init_params(SMALL, seed=seed, dtype=np.float64)
    for k in p:
        p[k] = p[k] + 0.1 * rng.normal(size=p[k].shape)
    adj, feat = dense_inputs(n, edges, 3)
    ref = dense_gat(batch.x, adj, feat, p, heads=2)[batch.seed_index]
    got = gat_forward(batch, p, heads=2)
    assert max_rel_err(got, ref) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_parallel_edges_match_loop_reference(seed):
    rng = np.random.default_rng(100 + seed)
    n = 9
    batch, edges = random_batch(rng, n, 6, 3, n_seeds=n, p_edge=0.4, multi=True)
    p = init_params(SMALL, seed=seed, dtype=np.float64)
    h = loop_gat_layer(batch.x, edges, 3, p, "gat0", 2)
    ref = loop_gat_layer(h, edges, 3, p, "gat1", 2)
    got = gat_forward(batch, p, heads=2)
    assert max_rel_err(got, ref) <= 1e-9


def test_shape_mismatch_names_layer():
    rng = np.random.default_rng(0)
    batch, _ = random_batch(rng, 4, 7, 3)
    p = init_params(SMALL, dtype=np.float64)
    with pytest.raises(ValueError, match="gat0.*6.*7"):
        gat_forward(batch, p, heads=2)


def test_decode_zero_weights_uniform():
    shape = ModelShape(d_in=3, n_ops=1, K=4, heads=2, hidden=4, mlp_hidden=5)
    p = {k: np.zeros_like(v) for k, v in init_params(shape).items()}
    probs = decode(np.ones((2, 8)), p)
    np.testing.assert_allclose(probs, 0.25)


def test_cross_entropy_of_equal_logits_is_ln2():
    shape = ModelShape(d_in=3, n_ops=1, K=2, heads=1, hidden=2, mlp_hidden=2)
    p = {k: np.zeros_like(v, dtype=np.float64) for k, v in init_params(shape).items()}
    batch = EncodedBatch(np.ones((1, 3)), np.zeros((2, 0), np.int64), np.zeros((0, 1)),
                         np.array([0]), np.array([0]), ["a"])
    loss, _, _ = loss_and_gradients(batch, p, heads=1, training=False)
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert loss == pytest.approx(0.693147, abs=1e-6)


def test_softmax_matches_direct_formula():
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(6, 5)) * 3
    ref = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    np.testing.assert_allclose(softmax(logits), ref, rtol=1e-12, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_probability_rows_sum_to_one(seed, k):
    rng = np.random.default_rng(seed)
    shape = ModelShape(d_in=3, n_ops=1, K=k, heads=2, hidden=3, mlp_hidden=4)
    p = init_params(shape, seed=seed)
    z = rng.normal(size=(4, 6)).astype(np.float32) * 10
    probs = decode(z, p)
    assert np.all(np.abs(probs.sum(1) - 1.0) <= 1e-9)


def test_saturated_correct_logits_give_zero_loss_and_bias_gradient():
    shape = ModelShape(d_in=3, n_ops=1, K=3, heads=1, hidden=2, mlp_hidden=2)
    p = {k: np.zeros_like(v, dtype=np.float64) for k, v in init_params(shape).items()}
    p["mlp1.bias"][:] = [200.0, 0.0, 0.0]
    batch = EncodedBatch(np.ones((1, 3)), np.zeros((2, 0), np.int64), np.zeros((0, 1)),
                         np.array([0]), np.array([0]), ["a"])
    loss, grads, _ = loss_and_gradients(batch, p, heads=1, training=False)
    assert loss < 1e-80
    assert abs(grads["mlp1.bias"][0]) < 1e-80


def test_unknown_labels_excluded_from_loss():
    rng = np.random.default_rng(11)
    batch, _ = random_batch(rng, 6, 6, 3, n_seeds=2)
    p = init_params(SMALL, seed=4, dtype=np.float64)
    both = batch.labels.copy()
    one = both.copy()
    one[1] = -1
    loss_one, _, probs = loss_and_gradients(batch, p, one, heads=2, training=False)
    assert loss_one == pytest.approx(-math.log(probs[0, both[0]]), rel=1e-12)
    none = np.array([-1, -1])
    assert loss_and_gradients(batch, p, none, heads=2, training=False) is None


def test_mask_causality_label_does_not_change_forward():
    rng = np.random.default_rng(5)
    batch, _ = random_batch(rng, 8, 6, 3, n_seeds=2)
    p = init_params(SMALL, seed=5, dtype=np.float64)
    a = loss_and_gradients(batch, p, np.array([0, 1]), heads=2, training=False)
    b = loss_and_gradients(batch, p, np.array([2, 1]), heads=2, training=False)
    assert np.array_equal(a[2], b[2])
    assert a[0] != b[0]


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    batch, _ = random_batch(rng, 10, 6, 3, n_seeds=4, p_edge=0.35)
    p = init_params(SMALL, seed=seed, dtype=np.float64)

    def f(params):
        return loss_and_gradients(batch, params, heads=2, training=False)[0]

    _, grads, _ = loss_and_gradients(batch, p, heads=2, training=False)
    numeric = central_difference_grad(f, p, h=1e-5)
    for name in p:
        assert max_rel_err(grads[name], numeric[name]) <= 1e-4, name


def test_dropout_gradients_match_finite_differences_at_fixed_mask():
    rng = np.random.default_rng(9)
    batch, _ = random_batch(rng, 8, 6, 3, n_seeds=3, p_edge=0.4)
    p = init_params(SMALL, seed=9, dtype=np.float64)

    def f(params):
        return loss_and_gradients(batch, params, rng=np.random.default_rng(42), heads=2,
                                  dropout=0.3)[0]

    _, grads, _ = loss_and_gradients(batch, p, rng=np.random.default_rng(42), heads=2, dropout=0.3)
    numeric = central_difference_grad(f, p)
    for name in p:
        assert max_rel_err(grads[name], numeric[name]) <= 1e-4, name


def test_adam_first_step():
    p = {"w": np.array([0.0])}
    Adam(lr=0.01, weight_decay=0.0).step(p, {"w": np.array([1.0])})
    assert p["w"][0] == pytest.approx(-0.01, rel=1e-6)


def test_adam_zero_gradient_is_fixed_point():
    p = {"w": np.array([0.5, -2.0])}
    opt = Adam(weight_decay=0.0)
    for _ in range(3):
        opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [0.5, -2.0])


def test_adam_rejects_nan():
    with pytest.raises(TrainingError):
        Adam().step({"w": np.zeros(1)}, {"w": np.array([np.nan])})


def test_adam_trajectories_reproducible():
    def run():
        rng = np.random.default_rng(0)
        p = {"w": rng.normal(size=5)}
        opt = Adam()
        for _ in range(20):
            opt.step(p, {"w": rng.normal(size=5)})
        return p["w"]

    assert np.array_equal(run(), run())


def test_adam_keeps_params_finite_on_finite_data():
    rng = np.random.default_rng(1)
    batch, _ = random_batch(rng, 10, 6, 3, n_seeds=4)
    p = init_params(SMALL, seed=1)
    opt = Adam(lr=0.05)
    for step in range(30):
        _, grads, _ = loss_and_gradients(batch, p, rng=np.random.default_rng(step), heads=2)
        opt.step(p, grads)
    assert all(np.all(np.isfinite(v)) for v in p.values())


def _run_scheduler(losses):
    opt = Adam(lr=0.01)
    sched = ReduceLROnPlateau(opt, factor=0.5, patience=5)
    return [sched.step(l) for l in losses]


def test_scheduler_improving_keeps_lr():
    assert _run_scheduler([1.0, 0.9, 0.8]) == [0.01] * 3


def test_scheduler_halves_after_sixth_stale_epoch():
    lrs = _run_scheduler([1.0] * 7)
    assert lrs[:6] == [0.01] * 6
    assert lrs[6] == 0.005


def test_scheduler_never_fires_in_four_epochs():
    assert _run_scheduler([1.0, 1.0, 1.0, 1.0]) == [0.01] * 4
