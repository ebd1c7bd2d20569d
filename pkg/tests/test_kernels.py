"""Backend equivalence: the compiled kernels must match the numpy reference."""

import numpy as np
import pytest

from decoupled_tpp import kernels

BACKENDS = kernels.available_backends()


def _random_net(rng, widths):
    ws = [rng.normal(size=(a, b)) for a, b in zip(widths[:-1], widths[1:])]
    bs = [rng.normal(size=(b,)) for b in widths[1:]]
    return ws, bs


@pytest.mark.parametrize("activation", ["tanh", "softplus"])
@pytest.mark.parametrize("widths", [[3, 8, 2], [5, 16, 16, 4], [2, 1]])
def test_backends_agree(widths, activation):
    rng = np.random.default_rng(42)
    ws, bs = _random_net(rng, widths)
    x = rng.normal(size=(11, widths[0]))
    g = rng.normal(size=(11, widths[-1]))
    results = {}
    for name in BACKENDS:
        with kernels.backend(name):
            y, acts = kernels.mlp_forward(x, ws, bs, activation)
            dx, dws, dbs = kernels.mlp_backward(g, acts, ws, activation)
        results[name] = (y, dx, dws, dbs)
    ref = results["python"]
    for name, (y, dx, dws, dbs) in results.items():
        np.testing.assert_allclose(y, ref[0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(dx, ref[1], rtol=0, atol=1e-12)
        for a, b in zip(dws, ref[2]):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
        for a, b in zip(dbs, ref[3]):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
def test_softplus_matches_reference_everywhere(name):
    x = np.concatenate([np.linspace(-50, 50, 1001), [-1e4, 1e4]])
    g = np.linspace(-2, 2, x.size)
    with kernels.backend(name):
        y = kernels.softplus(x)
        dy = kernels.softplus_grad(x, g)
    from decoupled_tpp.kernels import _pure

    np.testing.assert_allclose(y, _pure.softplus(x), rtol=0, atol=1e-14)
    np.testing.assert_allclose(dy, _pure.softplus_grad(x, g), rtol=0, atol=1e-14)


@pytest.mark.parametrize("name", BACKENDS)
def test_backward_matches_finite_differences(name):
    rng = np.random.default_rng(3)
    ws, bs = _random_net(rng, [4, 6, 3])
    x = rng.normal(size=(5, 4))

    def value():
        with kernels.backend(name):
            y, _ = kernels.mlp_forward(x, ws, bs)
        return float((y * y).sum())

    with kernels.backend(name):
        y, acts = kernels.mlp_forward(x, ws, bs)
        dx, dws, dbs = kernels.mlp_backward(2.0 * y, acts, ws)
    eps = 1e-6
    for arr, grad in [(x, dx), (ws[0], dws[0]), (bs[1], dbs[1])]:
        flat, gflat = arr.ravel(), np.asarray(grad).ravel()
        idx = np.linspace(0, flat.size - 1, min(10, flat.size)).astype(int)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            up = value()
            flat[i] = keep - eps
            down = value()
            flat[i] = keep
            fd = (up - down) / (2 * eps)
            assert abs(fd - gflat[i]) < 1e-4 * max(1.0, abs(fd))
