import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from captionkit.errors import DimensionError, NumericError, UsageError
from captionkit.tensor import Tape, Tensor, causal_mask, grad_check

PRIM_TOL = 1e-6
dims = st.integers(1, 4)
seeds = st.integers(0, 2**16)


def _readout(tape, out, rng):
    """Scalar u^T out w with fixed random u, w so every output entry gets a distinct weight."""
    m, n = out.shape
    u = Tensor(rng.normal(size=(1, m)))
    w = Tensor(rng.normal(size=(n, 1)))
    return tape.sum(tape.matmul(tape.matmul(u, out), w))


def _numeric(f, t, idx, h):
    orig = t.data[idx]
    t.data[idx] = orig + h
    fp = f(Tape(record=False)).item()
    t.data[idx] = orig - h
    fm = f(Tape(record=False)).item()
    t.data[idx] = orig
    return (fp - fm) / (2 * h)


def _check(build, theta, seed):
    """Every coordinate: relative error < 1e-6 at h=1e-3, or, where the gradient is
    near-stationary and that ratio is ill-conditioned, second-order convergence."""

    def f(tape):
        return _readout(tape, build(tape), np.random.default_rng(seed + 1))

    _check_scalar(f, theta)


def _check_scalar(f, theta):
    for t in theta.values():
        t.zero_grad()
    tape = Tape()
    tape.backward(f(tape))
    for name, t in theta.items():
        for idx in np.ndindex(t.shape):
            a = t.grad[idx]
            n3 = _numeric(f, t, idx, 1e-3)
            rel = abs(a - n3) / max(1e-8, abs(a) + abs(n3))
            if rel < PRIM_TOL:
                continue
            n4 = _numeric(f, t, idx, 1e-4)
            assert abs(a - n4) < abs(a - n3) / 30 + 1e-10, (name, idx, a, n3, n4)


# ---- forward examples -----------------------------------------------------------


def test_matmul_values():
    t = Tape(record=False)
    out = t.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5], [6]]))
    assert out.data.tolist() == [[17.0], [39.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        Tape().matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_zero_extent_matmul():
    out = Tape().matmul(Tensor(np.ones((0, 3))), Tensor(np.ones((3, 2))))
    assert out.shape == (0, 2)


def test_softmax_rows_uniform():
    out = Tape().softmax_rows(Tensor(np.zeros((2, 4))))
    np.testing.assert_array_equal(out.data, np.full((2, 4), 0.25))


def test_softmax_large_inputs_stay_finite():
    out = Tape().softmax_rows(Tensor([[1000.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-12)


def test_layer_norm_example():
    out = Tape().layer_norm(Tensor([[1.0, 3.0]]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), eps=1e-12)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-6)


def test_layer_norm_zero_gamma_gives_beta():
    out = Tape().layer_norm(Tensor([[1.0, 5.0, -2.0]]), Tensor(np.zeros(3)), Tensor([0.1, 0.2, 0.3]))
    np.testing.assert_array_equal(out.data, [[0.1, 0.2, 0.3]])


@pytest.mark.parametrize("x, want, tol", [(0.0, 0.0, 0.0), (10.0, 10.0, 1e-6), (1.0, 0.841192, 1e-6)])
def test_gelu_examples(x, want, tol):
    assert abs(Tape().gelu(Tensor([[x]])).item() - want) <= tol


def test_embedding_gathers_rows():
    table = Tensor(np.arange(12.0).reshape(4, 3))
    out = Tape().embedding(table, [0])
    np.testing.assert_array_equal(out.data, table.data[:1])


def test_embedding_repeated_id_accumulates():
    table = Tensor(np.zeros((5, 2)))
    tape = Tape()
    tape.backward(tape.sum(tape.embedding(table, [3, 3])))
    np.testing.assert_array_equal(table.grad[3], [2.0, 2.0])
    assert not table.grad[[0, 1, 2, 4]].any()


def test_embedding_empty_ids():
    assert Tape().embedding(Tensor(np.ones((4, 3))), []).shape == (0, 3)


def test_embedding_out_of_range():
    with pytest.raises(IndexError):
        Tape().embedding(Tensor(np.ones((4, 3))), [4])


def test_attention_single_key_returns_value(rng):
    q = Tensor(rng.normal(size=(3, 4)))
    k = Tensor(rng.normal(size=(1, 4)))
    v = Tensor(rng.normal(size=(1, 4)))
    out = Tape().attention(q, k, v)
    np.testing.assert_allclose(out.data, np.repeat(v.data, 3, axis=0), atol=1e-15)


def test_causal_attention_first_row_is_first_value(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    out = Tape().attention(x, x, x, causal=True)
    np.testing.assert_allclose(out.data[0], x.data[0], atol=1e-15)


def test_attention_matches_naive_loop(rng):
    x = rng.normal(size=(3, 4))
    out = Tape().attention(Tensor(x), Tensor(x), Tensor(x)).data
    for i in range(3):
        s = np.array([x[i] @ x[j] / 2.0 for j in range(3)])
        w = np.exp(s - s.max())
        w /= w.sum()
        np.testing.assert_allclose(out[i], sum(w[j] * x[j] for j in range(3)), atol=1e-12)


def test_attention_shape_errors():
    t = Tape()
    with pytest.raises(DimensionError):
        t.attention(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 5))), Tensor(np.ones((3, 5))))
    with pytest.raises(DimensionError):
        t.attention(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 4))), Tensor(np.ones((3, 4))), causal=True)


def test_causal_mask_values():
    m = causal_mask(3)
    assert m[0, 1] == -1e9 and m[1, 0] == 0.0 and np.all(np.diag(m) == 0.0)


def test_cross_entropy_all_pad_rejected():
    with pytest.raises(UsageError):
        Tape().cross_entropy(Tensor(np.zeros((2, 5))), [0, 0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_forward_raises():
    with pytest.raises(NumericError):
        Tape().scale(Tensor([[1e308]]), 10.0)


# ---- tape mechanics ---------------------------------------------------------


def test_second_backward_raises():
    a = Tensor([[1.0, 2.0]])
    tape = Tape()
    loss = tape.sum(a)
    tape.backward(loss)
    with pytest.raises(UsageError):
        tape.backward(loss)


def test_forward_only_tape_records_nothing():
    tape = Tape(record=False)
    tape.sum(Tensor([[1.0]]))
    assert len(tape) == 0


def test_gradients_accumulate(rng):
    a = Tensor(rng.normal(size=(2, 3)))
    w1 = Tensor(rng.normal(size=(3, 1)))
    w2 = Tensor(rng.normal(size=(3, 1)))

    def grad_of(ws):
        a.zero_grad()
        tape = Tape()
        total = tape.sum(tape.matmul(a, ws[0]))
        for w in ws[1:]:
            total = tape.add(total, tape.sum(tape.matmul(a, w)))
        tape.backward(total)
        return a.grad.copy()

    np.testing.assert_allclose(grad_of([w1, w2]), grad_of([w1]) + grad_of([w2]), atol=1e-14)


# ---- invariants (property-based) ---------------------------------------------


@settings(max_examples=50, deadline=None)
@given(dims, dims, seeds, st.floats(-50, 50))
def test_softmax_rows_sum_and_shift(m, n, seed, c):
    x = np.random.default_rng(seed).normal(size=(m, n))
    t = Tape(record=False)
    p = t.softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(t.softmax_rows(Tensor(x + c)).data, p, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(dims, dims, dims, seeds)
def test_matmul_transpose_identity(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = Tensor(rng.normal(size=(m, k))), Tensor(rng.normal(size=(k, n)))
    t = Tape(record=False)
    lhs = t.transpose(t.matmul(a, b)).data
    rhs = t.matmul(t.transpose(b), t.transpose(a)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# ---- primitive gradient checks ----------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(dims, dims, dims, seeds)
def test_grad_matmul(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = Tensor(rng.normal(size=(m, k))), Tensor(rng.normal(size=(k, n)))
    _check(lambda t: t.matmul(a, b), {"a": a, "b": b}, seed)


@settings(max_examples=25, deadline=None)
@given(dims, dims, seeds)
def test_grad_transpose_add_scale(m, n, seed):
    rng = np.random.default_rng(seed)
    a, b = Tensor(rng.normal(size=(m, n))), Tensor(rng.normal(size=(n, m)))
    _check(lambda t: t.scale(t.add(t.transpose(a), b), -1.7), {"a": a, "b": b}, seed)


@settings(max_examples=25, deadline=None)
@given(dims, dims, seeds)
def test_grad_add_row_mean_rows(m, n, seed):
    rng = np.random.default_rng(seed)
    a, b = Tensor(rng.normal(size=(m, n))), Tensor(rng.normal(size=n))
    _check(lambda t: t.mean_rows(t.add_row(a, b)), {"a": a, "b": b}, seed)


@settings(max_examples=25, deadline=None)
@given(dims, dims, seeds)
def test_grad_gelu(m, n, seed):
    a = Tensor(np.random.default_rng(seed).normal(size=(m, n)) * 2)
    _check(lambda t: t.gelu(a), {"a": a}, seed)


@settings(max_examples=25, deadline=None)
@given(dims, st.integers(2, 4), seeds)
def test_grad_softmax_rows(m, n, seed):
    a = Tensor(np.random.default_rng(seed).normal(size=(m, n)))
    _check(lambda t: t.softmax_rows(a), {"a": a}, seed)


@settings(max_examples=25, deadline=None)
@given(dims, st.integers(2, 4), seeds)
def test_grad_layer_norm(m, n, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(m, n)))
    g, b = Tensor(rng.normal(size=n)), Tensor(rng.normal(size=n))
    _check(lambda t: t.layer_norm(x, g, b), {"x": x, "g": g, "b": b}, seed)


@settings(max_examples=25, deadline=None)
@given(dims, st.lists(st.integers(0, 3), min_size=1, max_size=4), seeds)
def test_grad_embedding(d, ids, seed):
    table = Tensor(np.random.default_rng(seed).normal(size=(4, d)))
    _check(lambda t: t.embedding(table, ids), {"table": table}, seed)


@settings(max_examples=25, deadline=None)
@given(dims, dims, st.sampled_from([(1, 1), (2, 2), (4, 1), (4, 2)]), st.booleans(), seeds)
def test_grad_attention(lq, lk, shape, causal, seed):
    d, heads = shape
    lk = lq if causal else lk
    rng = np.random.default_rng(seed)
    q, k, v = (Tensor(rng.normal(size=s)) for s in [(lq, d), (lk, d), (lk, d)])
    _check(lambda t: t.attention(q, k, v, n_heads=heads, causal=causal), {"q": q, "k": k, "v": v}, seed)


@settings(max_examples=25, deadline=None)
@given(dims, st.integers(2, 4), seeds)
def test_grad_cross_entropy(m, n, seed):
    rng = np.random.default_rng(seed)
    logits = Tensor(rng.normal(size=(m, n)))
    targets = [int(x) for x in rng.integers(1, n, size=m)]

    _check_scalar(lambda t: t.cross_entropy(logits, targets), {"z": logits})


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.1, 5.0), min_size=1, max_size=4), seeds)
def test_grad_weighted_sum(weights, seed):
    rng = np.random.default_rng(seed)
    xs = [Tensor(rng.normal(size=(2, 2))) for _ in weights]

    def f(t):
        return t.weighted_sum([t.sum(t.gelu(x)) for x in xs], weights)

    _check_scalar(f, {f"x{i}": x for i, x in enumerate(xs)})


# ---- grad_check examples ------------------------------------------------------------


def test_grad_check_quadratic():
    theta = Tensor([1.0, 2.0])

    def g(t):
        row = t.add_row(Tensor(np.zeros((1, 2))), theta)
        return t.matmul(row, t.transpose(row))

    res = grad_check(g, {"theta": theta}, h=1e-3)
    assert res.max_rel_error < 1e-9
    tape = Tape()
    tape.backward(g(tape))
    np.testing.assert_allclose(theta.grad, [2.0, 4.0])


def test_grad_check_matmul_sum(rng):
    a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 2)))
    res = grad_check(lambda t: t.sum(t.matmul(a, b)), {"a": a, "b": b}, h=1e-3)
    assert res.max_rel_error < 1e-7


def test_grad_check_covers_every_tensor(rng):
    theta = {f"t{i}": Tensor(rng.normal(size=(5, 5))) for i in range(6)}

    def f(t):
        acc = t.sum(theta["t0"])
        for k in list(theta)[1:]:
            acc = t.add(acc, t.sum(t.gelu(theta[k])))
        return acc

    res = grad_check(f, theta, n_coords=20, min_per_tensor=2)
    assert res.n_coords == 20
    assert res.max_rel_error < 1e-6


@pytest.mark.parametrize("h", [0.0, -1e-3, 0.02])
def test_grad_check_rejects_step(h):
    with pytest.raises(UsageError):
        grad_check(lambda t: t.sum(Tensor([[1.0]])), {}, h=h)


def test_grad_check_detects_wrong_backward(monkeypatch, rng):
    import captionkit.tensor as tensor_mod

    real = tensor_mod.Tape.gelu

    def broken(self, x):
        out = real(self, x)
        if self.record:
            self._ops[-1] = lambda: tensor_mod._accum(x, out.grad * 0.5)
        return out

    monkeypatch.setattr(tensor_mod.Tape, "gelu", broken)
    a = Tensor(rng.normal(size=(2, 2)))
    res = grad_check(lambda t: t.sum(t.gelu(a)), {"a": a})
    assert res.max_rel_error > 0.1
    assert math.isfinite(res.max_rel_error)
