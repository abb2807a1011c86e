import numpy as np
import pytest

from relaxsum.control_variate import ControlVariate

V, M = 4, 5


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        up = f()
        x.flat[i] = old - h
        down = f()
        x.flat[i] = old
        g.flat[i] = (up - down) / (2 * h)
    return g


@pytest.fixture
def cv():
    return ControlVariate(V, 6, M, rng=np.random.default_rng(0))


def batch(seed=1, n=3, L=4):
    rng = np.random.default_rng(seed)
    z = rng.dirichlet(np.ones(V), size=(n, L))
    return z, (0, 2, 1), np.array([4, 2, 3])


def test_zero_network_outputs_half():
    value, _ = ControlVariate(V, 6, M).cv_forward(np.full((3, V), 0.25), (1, 2))
    assert value == 0.5


def test_range(cv):
    rng = np.random.default_rng(2)
    X = rng.normal(0, 3, (10_000, M, 2 * V))
    w = np.full((10_000, M), 1 / M)
    vals, _ = cv.forward(X, w)
    assert np.all((vals >= 0) & (vals <= 1))


def test_padding_is_ignored(cv):
    z, ref, lengths = batch()
    X, w = cv.build_inputs(z, ref, lengths)
    base, _ = cv.forward(X, w)
    X2 = X.copy()
    X2[1, 2:] = np.random.default_rng(3).permutation(X2[1, 2:].ravel()).reshape(X2[1, 2:].shape) + 1
    np.testing.assert_allclose(cv.forward(X2, w)[0], base)


def test_truncates_to_max_len(cv):
    z = np.random.default_rng(4).dirichlet(np.ones(V), size=(1, M + 3))
    X, w = cv.build_inputs(z, (1,), np.array([M + 3]))
    assert X.shape == (1, M, 2 * V) and w.sum() == pytest.approx(1.0)


def test_phi_gradient_matches_fd(cv):
    z, ref, lengths = batch()
    X, w = cv.build_inputs(z, ref, lengths)
    up = np.array([0.7, -1.2, 2.0])
    _, cache = cv.forward(X, w)
    g, gX = cv.backward(cache, up)
    assert rel_err(g, fd(lambda: up @ cv.forward(X, w)[0], cv.params.data)) < 1e-4
    assert rel_err(gX, fd(lambda: up @ cv.forward(X, w)[0], X)) < 1e-4


def test_single_sequence_gradients(cv):
    z = list(np.random.default_rng(5).dirichlet(np.ones(V), size=3))
    value, cache = cv.cv_forward(z, (3, 1))
    g, gz = cv.cv_backward(cache, 1.0)
    arr = np.array(z)
    assert rel_err(np.array(gz), fd(lambda: cv.cv_forward(list(arr), (3, 1))[0], arr)) < 1e-4
    assert rel_err(g, fd(lambda: cv.cv_forward(z, (3, 1))[0], cv.params.data)) < 1e-4


def test_zero_upstream(cv):
    z, ref, lengths = batch()
    _, cache = cv.forward(*cv.build_inputs(z, ref, lengths))
    g, gX = cv.backward(cache, np.zeros(3))
    assert not g.any() and not gX.any()


def test_directional_matches_fd(cv):
    z, ref, lengths = batch()
    X, w = cv.build_inputs(z, ref, lengths)
    Xd = np.random.default_rng(6).standard_normal(X.shape)
    # padded positions carry no weight (their all-zero inputs sit on a ReLU kink)
    pw = np.random.default_rng(7).random(w.shape) * (w > 0)

    def D():
        return cv.directional(cv.forward(X, w)[1], Xd, pw)[0]

    def per_position(Xin):
        _, c = cv.forward(Xin, w)
        return (pw * c.s).sum(axis=1)

    h = 1e-6
    fd_dir = (per_position(X + h * Xd) - per_position(X - h * Xd)) / (2 * h)
    assert rel_err(D(), fd_dir) < 1e-4
    _, grad = cv.directional(cv.forward(X, w)[1], Xd, pw)
    assert rel_err(grad, fd(lambda: D().sum(), cv.params.data)) < 1e-4


def test_stale_cache_rejected(cv):
    z, ref, lengths = batch()
    _, cache = cv.forward(*cv.build_inputs(z, ref, lengths))
    cv.params.data[0] += 1.0
    with pytest.raises(ValueError, match="stale"):
        cv.backward(cache, np.ones(3))


def test_zero_output_switch(cv):
    z, ref, lengths = batch()
    cv.zero_output = True
    vals, cache = cv.forward(*cv.build_inputs(z, ref, lengths))
    assert not vals.any()
    assert not cv.backward(cache, np.ones(3))[0].any()


def test_rejects_wrong_vocab(cv):
    with pytest.raises(ValueError):
        cv.build_inputs(np.ones((1, 2, V + 1)), (0,), np.array([2]))
    with pytest.raises(ValueError):
        cv.cv_forward([], (0,))
