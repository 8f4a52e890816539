import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import gradcheck
from saner import autodiff as ad
from saner.errors import ShapeError
from saner.gate import fuse, init_gate, init_projection, no_gate_fuse, project


def gate_store(d, seed=0, scale=1.0):
    store = ad.ParameterStore()
    init_gate(store, d, np.random.default_rng(seed))
    for _, p in store.items():
        p.data *= scale
    return store


class TestFuse:
    def test_forced_open(self, rng):
        h, v = rng.normal(size=4), rng.normal(size=4)
        u = fuse(h, v, None, force_gate=1.0).u.data
        np.testing.assert_array_equal(u, np.concatenate([h, np.zeros(4)]))

    def test_forced_half(self):
        np.testing.assert_array_equal(fuse([2.0, 4.0], [0.0, 0.0], None, force_gate=0.5).u.data, [1, 2, 0, 0])

    def test_zero_params(self, rng):
        store = gate_store(3, scale=0.0)
        g = fuse(rng.normal(size=3), rng.normal(size=3), store).g.data
        np.testing.assert_array_equal(g, [0.5, 0.5, 0.5])

    def test_formula(self, rng):
        d = 3
        store = gate_store(d, seed=4)
        store["gate.b"].data[:] = rng.normal(size=d)
        h, v = rng.normal(size=d), rng.normal(size=d)
        W1, W2, b = (store[k].data for k in ("gate.W1", "gate.W2", "gate.b"))
        z = [sum(W1[r, c] * h[c] + W2[r, c] * v[c] for c in range(d)) + b[r] for r in range(d)]
        g = 1 / (1 + np.exp(-np.array(z)))
        out = fuse(h, v, store)
        np.testing.assert_allclose(out.g.data, g, atol=1e-15)
        np.testing.assert_allclose(out.u.data, np.concatenate([g * h, (1 - g) * v]), atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fuse(np.ones(3), np.ones(2), gate_store(3))

    @given(st.integers(0, 10**6))
    def test_gate_strictly_inside(self, seed):
        rng = np.random.default_rng(seed)
        g = fuse(rng.normal(size=(5, 6)), rng.normal(size=(5, 6)), gate_store(6, seed)).g.data
        assert np.all(g > 0) and np.all(g < 1)

    @given(st.integers(0, 10**6), st.floats(1e-6, 1e-2))
    def test_lipschitz(self, seed, eps):
        rng = np.random.default_rng(seed)
        d = 5
        store = gate_store(d, seed)
        h, v = rng.normal(size=d), rng.normal(size=d)
        dh, dv = rng.normal(size=d), rng.normal(size=d)
        dh *= eps / np.linalg.norm(dh)
        dv *= eps / np.linalg.norm(dv)
        base = fuse(h, v, store).u.data
        moved = fuse(h + dh, v + dv, store).u.data
        W = max(np.linalg.norm(store["gate.W1"].data, 2), np.linalg.norm(store["gate.W2"].data, 2))
        # sigmoid' <= 1/4 gives |dg| <= W * 2eps / 4; then |du| <= |dg| (|h| + |v|)_inf + |dh| + |dv|
        size = np.abs(np.concatenate([h, v])).max() + eps
        bound = 0.5 * W * eps * 2 * size + 2 * eps
        assert np.linalg.norm(moved - base) <= bound * (1 + 1e-6)

    @given(st.integers(0, 10**6))
    def test_forced_gate_insensitivity(self, seed):
        rng = np.random.default_rng(seed)
        d = 4
        W_u = rng.normal(size=(3, 2 * d))
        h, v, dv, dh = rng.normal(size=(4, d)) * rng.uniform(0.1, 100)
        open_ = project(fuse(h, v, None, force_gate=1.0).u, W_u).data
        assert np.max(np.abs(project(fuse(h, v + dv, None, force_gate=1.0).u, W_u).data - open_)) == 0.0
        shut = project(fuse(h, v, None, force_gate=0.0).u, W_u).data
        assert np.max(np.abs(project(fuse(h + dh, v, None, force_gate=0.0).u, W_u).data - shut)) == 0.0

    def test_gradient(self, rng):
        d = 3
        store = gate_store(d)
        h = ad.Tensor(rng.normal(size=(2, d)), requires_grad=True)
        v = ad.Tensor(rng.normal(size=(2, d)), requires_grad=True)
        r = ad.Tensor(rng.normal(size=(2, 2 * d)))
        leaves = [h, v] + [p for _, p in store.items()]
        assert gradcheck(lambda: (fuse(h, v, store).u * r).sum(), leaves) < 1e-4


class TestNoGate:
    def test_concat(self):
        assert no_gate_fuse([1.0], [2.0]).u.data.tolist() == [1.0, 2.0]

    def test_zero_v(self, rng):
        h = rng.normal(size=3)
        np.testing.assert_array_equal(no_gate_fuse(h, np.zeros(3)).u.data, np.concatenate([h, np.zeros(3)]))

    def test_width(self):
        out = no_gate_fuse(np.ones(3), np.ones(3))
        assert out.u.shape == (6,) and np.all(out.g.data == 1.0)


class TestProject:
    def test_prefix_selector(self, rng):
        u = rng.normal(size=6)
        np.testing.assert_array_equal(project(u, np.eye(3, 6)).data, u[:3])

    def test_zero_input(self, rng):
        np.testing.assert_array_equal(project(np.zeros(6), rng.normal(size=(4, 6))).data, np.zeros(4))

    def test_naive_multiply(self, rng):
        u = rng.integers(-9, 9, 6).astype(float)
        W = rng.integers(-9, 9, (4, 6)).astype(float)
        want = [sum(W[r, c] * u[c] for c in range(6)) for r in range(4)]
        np.testing.assert_array_equal(project(u, W).data, want)

    def test_shape_checked(self):
        with pytest.raises(ShapeError):
            project(np.ones(5), np.ones((4, 6)))

    def test_init_shape(self, rng):
        store = ad.ParameterStore()
        init_projection(store, 8, 5, rng)
        assert store["output.Wu"].shape == (5, 16)
