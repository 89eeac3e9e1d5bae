import numpy as np
import pytest

from fd import central_difference, relative_error
from wsplat import autodiff as ad

UNARY = {
    "exp": (ad.exp, lambda r: r.normal(size=(3, 4))),
    "log": (ad.log, lambda r: r.uniform(0.5, 2.0, size=(3, 4))),
    "sqrt": (ad.sqrt, lambda r: r.uniform(0.5, 2.0, size=(3, 4))),
    "tanh": (ad.tanh, lambda r: r.normal(size=(3, 4))),
    "sigmoid": (ad.sigmoid, lambda r: r.normal(size=(3, 4))),
    "softplus": (ad.softplus, lambda r: r.normal(size=(3, 4))),
    "relu": (ad.relu, lambda r: r.normal(size=(3, 4)) + 0.05),
    "abs": (ad.tabs, lambda r: r.normal(size=(3, 4))),
    "square": (lambda t: t**2, lambda r: r.normal(size=(3, 4))),
    "min0": (lambda t: ad.minimum(t, 0.0), lambda r: r.normal(size=(3, 4))),
    "max0": (lambda t: ad.maximum(t, 0.0), lambda r: r.normal(size=(3, 4))),
    "moveaxis": (lambda t: ad.moveaxis(t, 0, 1) * ad.Tensor(np.arange(12.0).reshape(4, 3)), lambda r: r.normal(size=(3, 4))),
    "getitem": (lambda t: t[:, 1:3] * 2.0 + t[0, 0], lambda r: r.normal(size=(3, 4))),
    "fancy": (lambda t: t[np.array([0, 0, 2])], lambda r: r.normal(size=(3, 4))),
    "axis_matmul": (lambda t: ad.axis_matmul(t, np.arange(9.0).reshape(3, 3) - 4, 0), lambda r: r.normal(size=(3, 4))),
    "sum_axis": (lambda t: ad.tsum(t * t, axis=1, keepdims=True) * t, lambda r: r.normal(size=(3, 4))),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, rng):
    op, sample = UNARY[name]
    x0 = sample(rng)
    weights = rng.normal(size=np.shape(op(ad.Tensor(x0)).value))

    def f(x):
        return float(np.sum(op(ad.Tensor(x)).value * weights))

    x = ad.Tensor(x0, True, "x")
    ad.backward(ad.tsum(op(x) * ad.Tensor(weights)))
    num = central_difference(f, x0, 1e-6)
    assert relative_error(x.grad, num, 1e-4) < 1e-4


def test_binary_broadcast_gradients(rng):
    a0, b0 = rng.normal(size=(3, 4)), rng.uniform(0.5, 2, size=(1, 4))
    for op in (ad.add, ad.sub, ad.mul, ad.div):
        a, b = ad.Tensor(a0, True), ad.Tensor(b0, True)
        ad.backward(ad.tsum(op(a, b) ** 2))
        na = central_difference(lambda x: float(np.sum(op(ad.Tensor(x), ad.Tensor(b0)).value ** 2)), a0, 1e-6)
        nb = central_difference(lambda x: float(np.sum(op(ad.Tensor(a0), ad.Tensor(x)).value ** 2)), b0, 1e-6)
        assert relative_error(a.grad, na, 1e-4) < 1e-4
        assert relative_error(b.grad, nb, 1e-4) < 1e-4


def test_concat_stack_where_matmul(rng):
    a0, b0 = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))

    def build(a, b):
        c = ad.concat([a, ad.moveaxis(b, 0, 1)], axis=0)
        s = ad.stack([a[:, 0], a[:, 1]], axis=1)
        w = ad.where(a.value > 0, a, b.reshape(2, 3))
        return ad.tsum((c @ b) ** 2) + ad.tsum(s * s) + ad.tsum(w * w)

    a, b = ad.Tensor(a0, True), ad.Tensor(b0, True)
    ad.backward(build(a, b))
    na = central_difference(lambda x: build(ad.Tensor(x), ad.Tensor(b0)).item(), a0, 1e-6)
    nb = central_difference(lambda x: build(ad.Tensor(a0), ad.Tensor(x)).item(), b0, 1e-6)
    assert relative_error(a.grad, na, 1e-4) < 1e-4
    assert relative_error(b.grad, nb, 1e-4) < 1e-4


def test_linear_and_unreachable():
    w = ad.Tensor([1.0, 2.0, 3.0], True, "w")
    x = np.array([4.0, 5.0, 6.0])
    u = ad.Tensor([1.0], True, "u")
    ad.backward(ad.tsum(w * x), [u])
    assert np.array_equal(w.grad, x)
    assert np.array_equal(u.grad, [0.0])


def test_non_scalar_loss_rejected():
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.Tensor(np.ones(3), True))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_is_an_error():
    with pytest.raises(ad.NonFiniteError):
        ad.log(ad.Tensor([-1.0]))


def test_custom_op_chains(rng):
    x0 = rng.normal(size=4)
    x = ad.Tensor(x0, True)
    y = ad.custom([x], x0**3, lambda g: (3 * x0**2 * g,))
    ad.backward(ad.tsum(y * 2.0))
    assert np.allclose(x.grad, 6 * x0**2)


def test_mlp_examples():
    mlp = ad.Mlp([2, 2], activation="none")
    mlp.weights[0].value = np.eye(2)
    assert np.array_equal(mlp(np.array([[1.0, 2.0]])).value, [[1.0, 2.0]])

    mlp = ad.Mlp([5, 7, 3], rng=np.random.default_rng(0))
    for w in mlp.weights:
        w.value = np.zeros_like(w.value)
    mlp.biases[-1].value = np.array([0.1, -0.2, 0.3])
    out = mlp(np.random.default_rng(1).normal(size=(4, 5))).value
    assert np.allclose(out, [[0.1, -0.2, 0.3]] * 4)

    mlp = ad.Mlp([3, 8, 4], output_activation="sigmoid", rng=np.random.default_rng(2))
    out = mlp(np.random.default_rng(3).normal(size=(50, 3)) * 10).value
    assert np.all((out > 0) & (out < 1))


def test_mlp_width_mismatch_names_both():
    mlp = ad.Mlp([3, 4], name="head")
    with pytest.raises(ValueError, match="5.*3"):
        mlp(np.ones((1, 5)))


def test_mlp_init_bounds():
    mlp = ad.Mlp([10, 30, 2], rng=np.random.default_rng(0))
    assert np.abs(mlp.weights[0].value).max() <= np.sqrt(6 / 40)
    assert all(np.all(b.value == 0) for b in mlp.biases)


def test_mlp_gradients_match_fd(rng):
    mlp = ad.Mlp([4, 6, 3], activation="tanh", rng=rng)
    x = rng.normal(size=(5, 4))
    target = rng.normal(size=(5, 3))

    def loss():
        return ad.mean((mlp(x) - target) ** 2)

    ad.backward(loss(), mlp.parameters())
    for p in mlp.parameters():
        analytic = p.grad.copy()
        orig = p.value.copy()

        def f(v, p=p):
            p.value = v
            return loss().item()

        num = central_difference(f, orig, 1e-4)
        p.value = orig
        assert relative_error(analytic, num, 1e-6) < 1e-4, p.name


def test_determinism(rng):
    a = ad.Mlp([3, 5, 2], rng=np.random.default_rng(7))
    b = ad.Mlp([3, 5, 2], rng=np.random.default_rng(7))
    x = rng.normal(size=(4, 3))
    assert np.array_equal(a(x).value, b(x).value)


def test_adam_examples():
    p = np.array([1.0, -2.0])
    same, m, v = ad.adam_step(p, np.zeros(2), np.zeros(2), np.zeros(2), 1, 0.1)
    assert np.array_equal(same, p)
    stepped, _, _ = ad.adam_step(p, np.array([0.3, -5.0]), np.zeros(2), np.zeros(2), 1, 0.01)
    assert np.allclose(p - stepped, [0.01, -0.01])
    with pytest.raises(ValueError):
        ad.adam_step(p, p, p, p, 0, 0.1)
    with pytest.raises(ad.NonFiniteError, match="weights"):
        ad.adam_step(p, np.array([np.nan, 0]), p, p, 1, 0.1, name="weights")


def test_adam_converges_on_quadratic():
    w, m, v = np.array([1.0]), np.zeros(1), np.zeros(1)
    trace = []
    for t in range(1, 3001):
        w, m, v = ad.adam_step(w, 2 * w, m, v, t, 0.01)
        trace.append(abs(w[0]))
    assert trace[-1] < 1e-2
    burn = trace[200:]
    assert max(burn[i + 100] - burn[i] for i in range(0, len(burn) - 100, 100)) <= 0


def test_adam_reindex_keeps_moments():
    opt = ad.Adam()
    p = ad.Tensor(np.ones((3, 2)), True, "feat")
    p.grad = np.ones((3, 2))
    opt.step([p], 0.1)
    opt.reindex("feat", np.array([0, 2]), 1)
    assert opt.state["feat"]["m"].shape == (3, 2)
    assert list(opt.state["feat"]["t"]) == [1, 1, 0]
