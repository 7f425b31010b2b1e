"""Reverse-mode engine: primitive gradients, graph laws, ParamStore."""

import numpy as np
import pytest

import pmu.autodiff as ad
from pmu.errors import ContractViolation


def _check_grads(build, arrays, eps=1e-4, tol=1e-5):
    """Backward grads of build(arrays...) vs central finite differences."""
    nodes = [ad.Node(a) for a in arrays]
    out = build(*nodes)
    loss = ad.sum_(ad.mul(out, out))  # smooth scalarizer
    ad.backward(loss)

    def f():
        ns = [ad.Node(a) for a in arrays]
        o = build(*ns)
        return float(ad.sum_(ad.mul(o, o)).value)

    fd = ad.finite_diff_grad(f, arrays, eps=eps)
    for node, est in zip(nodes, fd):
        err = np.max(np.abs(node.grad - est)) / max(1.0, np.max(np.abs(est)))
        assert err <= tol, f"grad mismatch {err:.3e}"


def test_primitive_gradients():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    v = rng.normal(size=(4,))
    m = rng.normal(size=(4, 5))
    cases = [
        (lambda x, y: ad.add(x, y), [a.copy(), b.copy()]),
        (lambda x, y: ad.sub(x, y), [a.copy(), b.copy()]),
        (lambda x, y: ad.mul(x, y), [a.copy(), b.copy()]),
        (lambda x: ad.neg(x), [a.copy()]),
        (lambda x: ad.scale(x, 1.7), [a.copy()]),
        (lambda x: ad.exp(ad.scale(x, 0.3)), [a.copy()]),
        (lambda x: ad.log(ad.add(ad.mul(x, x), ad.Node(np.full_like(a, 1.5)))),
         [a.copy()]),
        (lambda x: ad.tanh(x), [a.copy()]),
        (lambda x: ad.sigmoid(x), [a.copy()]),
        (lambda x: ad.swish(x), [a.copy()]),
        (lambda x: ad.sum_(x, axis=0, keepdims=True), [a.copy()]),
        (lambda x: ad.mean(x, axis=1, keepdims=True), [a.copy()]),
        (lambda x: ad.softmax(x, axis=-1), [a.copy()]),
        (lambda x: ad.log_softmax(x, axis=-1), [a.copy()]),
        (lambda x, y: ad.matmul(x, y), [a[:, :4].copy(), m.copy()]),
        (lambda x: ad.reshape(x, (4, 3)), [a.copy()]),
        (lambda x: ad.transpose(x, (1, 0)), [a.copy()]),
        (lambda x: ad.take_slice(x, 1), [a.copy()]),
        (lambda x, y: ad.concat([x, y], axis=0), [a.copy(), b.copy()]),
        (lambda x: ad.gather_rows(x, [2, 0, 2]), [m.copy()]),
    ]
    for build, arrays in cases:
        _check_grads(build, arrays)
    del v


def test_broadcast_gradients_unbroadcast():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 4))
    row = rng.normal(size=(1, 4))
    col = rng.normal(size=(3, 1))
    scalar = rng.normal(size=())
    _check_grads(lambda x, y: ad.add(x, y), [a.copy(), row.copy()])
    _check_grads(lambda x, y: ad.mul(x, y), [a.copy(), col.copy()])
    _check_grads(lambda x, y: ad.add(x, y), [a.copy(), scalar.copy()])


def test_two_consumer_graph_sums_path_gradients():
    x = ad.Node(np.array(3.0))
    y = ad.add(ad.mul(x, x), ad.scale(x, 5.0))  # x^2 + 5x
    ad.backward(y)
    assert y.value == pytest.approx(24.0)
    assert x.grad == pytest.approx(2 * 3.0 + 5.0)


def test_grad_accumulates_across_shared_subgraph():
    x = ad.Node(np.array([1.0, 2.0]))
    s = ad.sum_(x)
    out = ad.add(s, s)
    ad.backward(out)
    assert np.allclose(x.grad, [2.0, 2.0])


def test_backward_handles_deep_chains():
    x = ad.Node(np.array(0.5))
    node = x
    for _ in range(5000):
        node = ad.add(node, ad.Node(np.array(0.0)))
    ad.backward(node)
    assert x.grad == pytest.approx(1.0)


def test_softmax_rows_are_simplex_points():
    rng = np.random.default_rng(2)
    for _ in range(20):
        z = rng.normal(scale=rng.uniform(0.1, 50), size=(4, 7))
        p = ad.softmax(ad.Node(z)).value
        assert np.all(p >= 0)
        assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_log_softmax_normalized_in_log_domain():
    z = np.array([[1e3, -1e3, 0.0]])
    lp = ad.log_softmax(ad.Node(z)).value
    assert np.isfinite(lp).all()
    assert np.exp(lp).sum() == pytest.approx(1.0, abs=1e-12)


def test_shape_mismatch_raises_contract_violation():
    with pytest.raises(ContractViolation):
        ad.matmul(ad.Node(np.zeros((2, 3))), ad.Node(np.zeros((4, 5))))
    with pytest.raises(ContractViolation):
        ad.add(ad.Node(np.zeros((2, 3))), ad.Node(np.zeros((2, 4))))


def test_finite_diff_quadratic():
    w = np.array(3.0)
    est = ad.finite_diff_grad(lambda: float(w * w), [w], eps=1e-4)[0]
    assert est == pytest.approx(6.0, abs=1e-7)


def test_finite_diff_constant_function():
    w = np.random.default_rng(3).normal(size=(4,))
    est = ad.finite_diff_grad(lambda: 1.25, [w])[0]
    assert np.max(np.abs(est)) <= 1e-8


def test_finite_diff_sample_hits_requested_count():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(6, 6))
    picks = ad.finite_diff_sample(lambda: float((w * w).sum()), [w],
                                  per_array=5, rng=rng)
    idx, est = picks[0]
    assert len(idx) == 5
    assert np.allclose(est, 2 * w.reshape(-1)[idx], atol=1e-6)


class TestParamStore:
    def test_init_depends_on_path_and_seed_only(self):
        a = ad.ParamStore(rng_seed=7)
        b = ad.ParamStore(rng_seed=7)
        a.create("x/w", (3, 3))
        a.create("y/w", (3, 3))
        # opposite creation order must not change values
        b.create("y/w", (3, 3))
        b.create("x/w", (3, 3))
        assert np.array_equal(a.get("x/w").value, b.get("x/w").value)
        assert np.array_equal(a.get("y/w").value, b.get("y/w").value)
        assert not np.array_equal(a.get("x/w").value, a.get("y/w").value)

    def test_different_seed_different_values(self):
        a = ad.ParamStore(rng_seed=0)
        b = ad.ParamStore(rng_seed=1)
        a.create("w", (4,))
        b.create("w", (4,))
        assert not np.array_equal(a.get("w").value, b.get("w").value)

    def test_alias_shares_the_node(self):
        ps = ad.ParamStore()
        ps.create("a/w", (2, 2))
        ps.alias("b/w", "a/w")
        assert ps.get("b/w") is ps.get("a/w")

    def test_alias_to_missing_target_rejected(self):
        ps = ad.ParamStore()
        with pytest.raises(ContractViolation):
            ps.alias("b/w", "nope/w")

    def test_duplicate_create_rejected(self):
        ps = ad.ParamStore()
        ps.create("w", (2,))
        with pytest.raises(ContractViolation):
            ps.create("w", (2,))

    def test_zeros_init(self):
        ps = ad.ParamStore()
        node = ps.create("sc/w", (3, 4), init="zeros")
        assert np.array_equal(node.value, np.zeros((3, 4)))
