import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cortexprint import autodiff as ad
from cortexprint.autodiff import ParamSet, ShapeError, Tensor
from cortexprint.gradchecks import CASES


def naive_conv2d(x, w, b, stride, pad):
    c, h, wd = x.shape
    co, ci, k, _ = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = b[o]
                for cc in range(ci):
                    for di in range(k):
                        for dj in range(k):
                            acc += w[o, cc, di, dj] * xp[cc, i * stride + di, j * stride + dj]
                out[o, i, j] = acc
    return out


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 2, 5)])
def test_conv2d_matches_naive_loop(rng, stride, pad, k):
    x = rng.normal(size=(3, 8, 8))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
    assert got.shape == (4, (8 + 2 * pad - k) // stride + 1, (8 + 2 * pad - k) // stride + 1)
    assert np.abs(got - naive_conv2d(x, w, b, stride, pad)).max() < 1e-12


def test_conv2d_batched_equals_per_item(rng):
    x = rng.normal(size=(3, 2, 6, 6))
    w, b = Tensor(rng.normal(size=(5, 2, 3, 3))), Tensor(rng.normal(size=5))
    full = ad.conv2d(Tensor(x), w, b, pad=1).data
    for n in range(3):
        assert np.array_equal(full[n], ad.conv2d(Tensor(x[n]), w, b, pad=1).data)


def test_conv2d_identity_kernel(rng):
    x = rng.normal(size=(3, 5, 5))
    w = np.eye(3).reshape(3, 3, 1, 1)
    assert np.array_equal(ad.conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv2d_shape_errors(rng):
    with pytest.raises(ShapeError, match="conv2d.*channels"):
        ad.conv2d(Tensor(rng.normal(size=(2, 4, 4))), Tensor(rng.normal(size=(1, 3, 3, 3))))
    with pytest.raises(ShapeError, match="conv2d.*too small"):
        ad.conv2d(Tensor(rng.normal(size=(1, 2, 2))), Tensor(rng.normal(size=(1, 1, 3, 3))))


def test_relu_and_distance_examples():
    assert ad.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
    assert ad.euclidean_distance(Tensor([3.0, 4.0]), Tensor([0.0, 0.0])).item() == 5.0


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([0.0, 1.0], requires_grad=True)
    ad.backward(ad.sum(ad.relu(x)))
    assert x.grad.tolist() == [0.0, 1.0]


def test_sum_grad_is_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ad.backward(ad.sum(x))
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_distance_grad_is_unit_vector():
    x = Tensor([3.0, 4.0], requires_grad=True)
    ad.backward(ad.euclidean_distance(x, Tensor([0.0, 0.0])))
    assert np.allclose(x.grad, [0.6, 0.8], atol=1e-15)


def test_backward_twice_raises():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = ad.sum(ad.square(x))
    ad.backward(loss)
    with pytest.raises(RuntimeError, match="twice"):
        ad.backward(loss)
    with pytest.raises(RuntimeError, match="zero_grad"):
        ad.backward(ad.sum(x))
    x.grad = None
    ad.backward(ad.sum(x))
    assert x.grad.tolist() == [1.0, 1.0]


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        ad.backward(ad.square(x))


def test_unreachable_param_gets_zero_grad():
    p = ParamSet({"a": np.ones(2), "b": np.ones(3)})
    loss = ad.sum(ad.add(p["a"], p["a"]))
    ad.backward(loss)
    assert p.grads()["b"].tolist() == [0.0, 0.0, 0.0]
    assert p["a"].grad.tolist() == [2.0, 2.0]


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = ad.square(x)
    assert y._parents == () or not y._parents
    assert not y.requires_grad


def test_shape_mismatch_names_operator():
    with pytest.raises(ShapeError, match=r"add: shapes \(2,\) and \(3,\)"):
        ad.add(Tensor(np.ones(2)), Tensor(np.ones(3)))
    with pytest.raises(ShapeError, match="linear"):
        ad.linear(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 4))))


def test_logsumexp_mask_matches_numpy(rng):
    a = rng.normal(size=(4, 4)) * 30
    mask = ~np.eye(4, dtype=bool)
    got = ad.logsumexp(Tensor(a), axis=1, mask=mask).data
    ref = np.array([np.logaddexp.reduce(a[i][mask[i]]) for i in range(4)])
    assert np.allclose(got, ref, rtol=1e-14, atol=1e-12)


def test_normalize_mean_exact(rng):
    w = Tensor(rng.uniform(0.1, 0.9, size=(3, 16)))
    out = ad.normalize_mean(w, 1.5).data
    assert np.allclose(out.mean(axis=-1), 1.5, rtol=0, atol=1e-15)


def test_forward_is_deterministic(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    w, b = rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    a = ad.max_pool(ad.relu(ad.conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1))).data
    c = ad.max_pool(ad.relu(ad.conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1))).data
    assert a.tobytes() == c.tobytes()


@pytest.mark.parametrize("name", sorted(CASES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_cases(name, seed):
    f, params = CASES[name](seed)
    assert ad.grad_check(f, params, 1e-6) < 1e-6


def test_grad_check_linear_sum(rng):
    p = ParamSet({"w": rng.normal(size=(3, 4)), "b": rng.normal(size=3), "x": rng.normal(size=(2, 4))})
    assert ad.grad_check(lambda q: ad.sum(ad.linear(q["x"], q["w"], q["b"])), p) < 1e-8


def test_grad_check_sigmoid_chain(rng):
    p = ParamSet({"x": rng.normal(size=5)})
    assert ad.grad_check(lambda q: ad.sum(ad.sigmoid(ad.sigmoid(ad.sigmoid(q["x"])))), p) < 1e-7


def test_grad_check_small_network(rng):
    x = Tensor(rng.normal(size=(2, 8, 8)))
    p = ParamSet({"w": rng.normal(size=(3, 2, 3, 3)), "b": rng.normal(size=3) + 0.37,
                  "lw": rng.normal(size=(2, 48)), "lb": rng.normal(size=2)})

    def f(q):
        h = ad.max_pool(ad.relu(ad.conv2d(x, q["w"], q["b"], pad=1)))
        return ad.sum(ad.linear(ad.reshape(h, (1, 48)), q["lw"], q["lb"]))

    assert ad.grad_check(f, p) < 1e-5


def test_grad_check_eps_range():
    p = ParamSet({"x": np.ones(1)})
    with pytest.raises(ValueError, match="eps"):
        ad.grad_check(lambda q: ad.sum(q["x"]), p, eps=1e-2)


def test_sgd_examples():
    p = ParamSet({"p": np.array([1.0])})
    ad.sgd_step(p, {"p": np.array([2.0])}, lr=0.1, momentum=0.0, weight_decay=0.0)
    assert p["p"].data[0] == pytest.approx(0.8, abs=1e-15)

    p = ParamSet({"p": np.array([1.0])})
    state = {}
    for _ in range(2):
        ad.sgd_step(p, {"p": np.array([1.0])}, lr=0.1, momentum=0.9, weight_decay=0.0, state=state)
    assert p["p"].data[0] == pytest.approx(0.71, abs=1e-15)

    p = ParamSet({"p": np.array([2.0])})
    ad.sgd_step(p, {"p": np.array([0.0])}, lr=0.1, momentum=0.0, weight_decay=0.5)
    assert p["p"].data[0] == pytest.approx(1.9, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(1e-4, 1.0))
def test_sgd_without_momentum_is_plain_descent(values, lr):
    p0 = np.array(values)
    g = np.sin(p0)
    p = ParamSet({"p": p0.copy()})
    ad.sgd_step(p, {"p": g}, lr=lr, momentum=0.0, weight_decay=0.0)
    assert np.array_equal(p["p"].data, p0 - lr * g)


def test_sgd_shape_mismatch():
    p = ParamSet({"p": np.ones(2)})
    with pytest.raises(ShapeError, match="sgd_step"):
        ad.sgd_step(p, {"p": np.ones(3)})


def test_pset_roundtrip(tmp_path, rng):
    p = ParamSet({"enc.0.w": rng.normal(size=(2, 3, 3, 3)), "b": rng.normal(size=4), "s": np.array(2.5)})
    ad.save_params(p, tmp_path / "p.pset")
    q = ad.load_params(tmp_path / "p.pset")
    assert q.names() == p.names()
    assert q.checksum() == p.checksum()
    raw = (tmp_path / "p.pset").read_bytes()
    (tmp_path / "x.pset").write_bytes(raw + b"\0")
    with pytest.raises(ValueError, match="trailing"):
        ad.load_params(tmp_path / "x.pset")
    (tmp_path / "y.pset").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ValueError, match="not a PSET"):
        ad.load_params(tmp_path / "y.pset")
