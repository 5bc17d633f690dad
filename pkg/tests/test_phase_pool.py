import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linvid import tensor as T
from linvid.phase_pool import (
    Code,
    ContractError,
    PoolSpec,
    coordinate_grid,
    phase_pool,
    soft_argmax_pool,
    soft_max_pool,
    softmax_weights,
    unpool,
)
from linvid.tensor import ShapeError, Tensor


def line(values):
    return Tensor(np.asarray(values, dtype=float).reshape(1, 1, -1))


def line_spec(n, beta):
    return PoolSpec((1, 1, n), beta=beta)


class TestSoftMaxPool:
    def test_beta_zero_is_average(self):
        assert soft_max_pool(line([1, 2, 3, 4]), line_spec(4, 0)).data.item() == 2.5

    def test_large_beta_is_max(self):
        assert soft_max_pool(line([1, 2, 3, 4]), line_spec(4, 50)).data.item() == pytest.approx(4, abs=1e-3)

    def test_direct_evaluation(self):
        z = [0.5, 1.0, 1.5, 2.0]
        num = sum(v * math.exp(5 * v) for v in z)
        den = sum(math.exp(5 * v) for v in z)
        assert soft_max_pool(line(z), line_spec(4, 5)).data.item() == pytest.approx(num / den, rel=1e-14)

    def test_negative_input_rejected(self):
        with pytest.raises(ContractError):
            soft_max_pool(line([1, -0.1, 2, 3]), line_spec(4, 1))

    def test_partial_group_rejected(self):
        with pytest.raises(ShapeError, match="axis 2"):
            soft_max_pool(line([1, 2, 3, 4, 5]), line_spec(4, 1))

    def test_overlapping_groups(self):
        z = np.arange(1.0, 7.0).reshape(1, 1, 6)
        m = soft_max_pool(Tensor(z), PoolSpec((1, 1, 4), (1, 1, 2), beta=0))
        np.testing.assert_allclose(m.data.ravel(), [2.5, 4.5])


class TestSoftArgmaxPool:
    def test_uniform_gives_zero(self):
        z = Tensor(np.full((4, 3, 5), 0.7))
        p = soft_argmax_pool(z, PoolSpec((4, 3, 5), beta=5))
        np.testing.assert_allclose(p.data, 0, atol=1e-15)

    def test_corner_one_hot(self):
        z = np.zeros((3, 3, 3))
        z[-1, -1, -1] = 1.0
        p = soft_argmax_pool(Tensor(z), PoolSpec((3, 3, 3), beta=50))
        np.testing.assert_allclose(p.data.ravel(), [1, 1, 1], atol=1e-3)

    def test_beta_zero_gives_zero(self):
        z = np.random.default_rng(0).uniform(0, 2, (2, 4, 4))
        p = soft_argmax_pool(Tensor(z), PoolSpec((2, 4, 4), beta=0))
        np.testing.assert_allclose(p.data, 0, atol=1e-15)

    def test_single_element_axes_have_no_phase(self):
        p = soft_argmax_pool(Tensor(np.ones((1, 8, 8))), PoolSpec((1, 4, 4)))
        assert p.shape == (2, 1, 2, 2)


class TestPhasePool:
    def test_composition(self):
        code = phase_pool(line([1, 2, 3, 4]), line_spec(4, 0))
        assert code.m.data.item() == 2.5
        assert abs(code.p.data.item()) < 1e-15

    def test_translating_one_hot(self):
        ms, ps = [], []
        for i in range(6):
            z = np.zeros(6)
            z[i] = 1.0
            code = phase_pool(line(z), line_spec(6, 20))
            ms.append(code.m.data.item())
            ps.append(code.p.data.item())
        np.testing.assert_allclose(ms, ms[0], rtol=1e-14)
        assert all(b > a for a, b in zip(ps, ps[1:]))

    def test_shapes(self):
        code = phase_pool(Tensor(np.ones((1, 8, 8))), PoolSpec((1, 4, 4)))
        assert code.m.shape == (1, 2, 2)
        assert code.p.shape == (2, 1, 2, 2)
        assert code.flat_dim == 12


class TestUnpool:
    def _code(self, m, p, group):
        spec = PoolSpec(group)
        return Code(Tensor(np.reshape(m, (1, 1, 1))), Tensor(np.reshape(p, (-1, 1, 1, 1))), spec, tuple(group))

    def test_grid_point_is_one_hot(self):
        out = unpool(self._code(1.0, [coordinate_grid(5)[3]], (1, 1, 5)))
        np.testing.assert_allclose(out.data.ravel(), [0, 0, 0, 1, 0], atol=1e-15)

    def test_midpoint_splits(self):
        mid = 0.5 * (coordinate_grid(5)[1] + coordinate_grid(5)[2])
        out = unpool(self._code(1.0, [mid], (1, 1, 5)))
        np.testing.assert_allclose(out.data.ravel(), [0, 0.5, 0.5, 0, 0], atol=1e-15)

    def test_bilinear_weights(self):
        out = unpool(self._code(2.0, [0.0, 0.0], (1, 3, 3)))
        expected = np.zeros((1, 3, 3))
        expected[0, 1, 1] = 2.0
        np.testing.assert_allclose(out.data, expected, atol=1e-15)

    def test_round_trip(self):
        z = np.zeros((2, 4, 4))
        z[1, 2, 0] = 1.0
        code = phase_pool(Tensor(z), PoolSpec((2, 4, 4), beta=50))
        np.testing.assert_allclose(unpool(code).data, z, atol=1e-2)

    def test_phase_out_of_range(self):
        with pytest.raises(ContractError):
            unpool(self._code(1.0, [1.2], (1, 1, 4)))

    def test_overlap_deposits_sum(self):
        spec = PoolSpec((1, 1, 3), (1, 1, 1))
        m = Tensor(np.ones((1, 1, 2)))
        p = Tensor(np.array([0.0, -1.0]).reshape(1, 1, 1, 2))
        out = unpool(Code(m, p, spec, (1, 1, 4)))
        np.testing.assert_allclose(out.data.ravel(), [0, 2, 0, 0])


# --- properties -----------------------------------------------------------------

activations = arrays(np.float64, (2, 4, 6), elements=st.floats(0, 3, allow_nan=False))
specs = st.sampled_from([
    PoolSpec((2, 2, 3)), PoolSpec((2, 4, 6)), PoolSpec((2, 2, 2), (1, 2, 2)), PoolSpec((1, 4, 3), (1, 2, 3)),
])


@given(activations, specs, st.floats(0, 20))
@settings(max_examples=60, deadline=None)
def test_softmax_weights_sum_to_one(z, spec, beta):
    spec = PoolSpec(spec.group, spec.stride, beta)
    w = softmax_weights(Tensor(z), spec)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12, rtol=0)


@given(activations, specs)
@settings(max_examples=60, deadline=None)
def test_beta_zero_is_average_pooling(z, spec):
    spec = PoolSpec(spec.group, spec.stride, 0.0)
    m = soft_max_pool(Tensor(z), spec).data
    F, X, Y = z.shape
    gf, gx, gy = spec.group
    sf, sx, sy = spec.stride
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            for k in range(m.shape[2]):
                block = z[i * sf : i * sf + gf, j * sx : j * sx + gx, k * sy : k * sy + gy]
                assert m[i, j, k] == pytest.approx(block.mean(), rel=1e-14, abs=1e-15)


@given(activations, specs, st.floats(0, 50))
@settings(max_examples=60, deadline=None)
def test_phases_in_range(z, spec, beta):
    p = soft_argmax_pool(Tensor(z), PoolSpec(spec.group, spec.stride, beta)).data
    assert np.all(np.abs(p) <= 1.0)


@given(arrays(np.float64, 6, elements=st.floats(0, 3)), st.floats(0, 20), st.floats(0, 20))
@settings(max_examples=80, deadline=None)
def test_monotone_approach_to_max(z, b1, b2):
    b1, b2 = sorted((b1, b2))
    top = np.sort(z)
    if top[-1] - top[-2] < 1e-6:
        return
    m1 = soft_max_pool(line(z), line_spec(6, b1)).data.item()
    m2 = soft_max_pool(line(z), line_spec(6, b2)).data.item()
    assert abs(m2 - z.max()) <= abs(m1 - z.max()) + 1e-12


def test_large_beta_matches_hard_pooling_with_gaps():
    rng = np.random.default_rng(2)
    for _ in range(50):
        vals = rng.permutation(np.arange(16) * 0.5)
        z = vals.reshape(1, 4, 4)
        spec = PoolSpec((1, 4, 4), beta=50)
        code = phase_pool(Tensor(z), spec)
        assert code.m.data.item() == pytest.approx(z.max(), abs=1e-3)
        i, j = np.unravel_index(np.argmax(z[0]), (4, 4))
        np.testing.assert_allclose(code.p.data.ravel(), [coordinate_grid(4)[i], coordinate_grid(4)[j]], atol=1e-3)


@given(st.floats(-0.99, 0.99), st.floats(0.1, 3))
@settings(max_examples=50, deadline=None)
def test_unpool_phase_gradient_nonzero(p0, m0):
    spec = PoolSpec((1, 1, 5))
    m = Tensor(np.full((1, 1, 1), m0), requires_grad=True)
    p = Tensor(np.full((1, 1, 1, 1), p0), requires_grad=True)
    out = unpool(Code(m, p, spec, (1, 1, 5)))
    # weight each cell by its index: the deposit's centre of mass moves with p
    loss = T.sum(out * Tensor(np.arange(5.0).reshape(1, 1, 5)))
    (gp,) = T.grad(loss, [p])
    assert abs(gp.item()) > 0
