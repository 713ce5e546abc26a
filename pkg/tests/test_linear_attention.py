"""Tests for kernels, cosine re-weighting, and the linearized LBLA path."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbla.attention import lbla_oracle, lbla_proximity_matrix
from lbla.errors import ConfigError, ShapeError
from lbla.linear_attention import (
    DENOM_EPS,
    KernelKind,
    LblaDiagnostics,
    apply_kernel,
    build_reweight,
    cosine_weight,
    decompose,
    kernel_grad,
    lbla_backward,
    lbla_forward,
)
from lbla.memtrack import trace_peak_allocations

ALL_KERNELS = list(KernelKind)
NONNEG_KERNELS = [KernelKind.RELU, KernelKind.EXPONENTIAL, KernelKind.SIGMOID]


def random_qkv(rng, t, d_k, scale=1.0, d_v=None):
    d_v = d_k if d_v is None else d_v
    return (rng.uniform(-scale, scale, (t, d_k)),
            rng.uniform(-scale, scale, (t, d_k)),
            rng.uniform(-scale, scale, (t, d_v)))


def max_rel_err(a, b):
    """Elementwise |a-b| relative to magnitude, floored at 1 to stay meaningful near 0."""
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


class TestKernels:
    def test_relu(self):
        npt.assert_array_equal(
            apply_kernel(np.array([[-1.0, 0.0, 2.0]]), KernelKind.RELU),
            [[0.0, 0.0, 2.0]])

    def test_sigmoid_symmetry_point(self):
        npt.assert_allclose(
            apply_kernel(np.array([[0.0]]), KernelKind.SIGMOID), [[0.5]])

    def test_exponential(self):
        npt.assert_allclose(
            apply_kernel(np.array([[0.0, 1.0]]), KernelKind.EXPONENTIAL),
            [[1.0, 2.71828]], atol=1e-5)

    def test_identity_passthrough(self):
        x = np.array([[-3.0, 4.0]])
        npt.assert_array_equal(apply_kernel(x, KernelKind.IDENTITY), x)

    @given(st.integers(0, 2**32))
    @settings(max_examples=50, deadline=None)
    def test_non_negative_range(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-20, 20, (4, 6))
        for kernel in NONNEG_KERNELS:
            assert np.all(apply_kernel(x, kernel) >= 0)

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-3, 3, (5, 4))
        h = 1e-6
        for kernel in ALL_KERNELS:
            numeric = (apply_kernel(x + h, kernel)
                       - apply_kernel(x - h, kernel)) / (2 * h)
            npt.assert_allclose(kernel_grad(x, kernel), numeric, atol=1e-6)

    def test_relu_subgradient_zero_at_zero(self):
        assert kernel_grad(np.array([[0.0]]), KernelKind.RELU)[0, 0] == 0.0


class TestCosineWeight:
    def test_zero_distance(self):
        assert cosine_weight(5, 5, 8) == 1.0

    def test_horizon_distance(self):
        assert abs(cosine_weight(8, 0, 8)) < 1e-12
        assert abs(cosine_weight(0, 8, 8)) < 1e-12

    def test_direct_evaluation(self):
        assert abs(cosine_weight(3, 1, 4) - 0.70711) < 1e-5

    def test_symmetry_and_monotonic_decay(self):
        m = 16
        for delta in range(m):
            assert cosine_weight(delta, 0, m) == cosine_weight(0, delta, m)
            assert cosine_weight(delta + 1, 0, m) < cosine_weight(delta, 0, m)


class TestBuildReweight:
    def test_length_one(self):
        rw = build_reweight(1, 1)
        npt.assert_array_equal(rw.cos_factors, [1.0])
        npt.assert_array_equal(rw.sin_factors, [0.0])

    def test_reconstructs_direct_weight(self):
        rw = build_reweight(4, 4)
        recon = (rw.cos_factors[3] * rw.cos_factors[1]
                 + rw.sin_factors[3] * rw.sin_factors[1])
        assert abs(recon - cosine_weight(3, 1, 4)) < 1e-12
        assert abs(recon - 0.70711) < 1e-5

    @pytest.mark.parametrize("t", [1, 2, 7, 16, 64])
    def test_exhaustive_reconstruction(self, t):
        rw = build_reweight(t, t)
        worst = 0.0
        for i in range(t):
            for j in range(t):
                recon = (rw.cos_factors[i] * rw.cos_factors[j]
                         + rw.sin_factors[i] * rw.sin_factors[j])
                worst = max(worst, abs(recon - cosine_weight(i, j, t)))
        assert worst < 1e-12

    def test_factors_in_unit_interval(self):
        rw = build_reweight(50, 64)
        assert np.all(rw.cos_factors >= 0) and np.all(rw.cos_factors <= 1)
        assert np.all(rw.sin_factors >= 0) and np.all(rw.sin_factors <= 1)

    def test_horizon_below_length_rejected(self):
        with pytest.raises(ConfigError):
            build_reweight(8, 7)

    def test_decompose_row_scaling(self):
        rng = np.random.default_rng(11)
        qf = rng.uniform(0, 1, (6, 3))
        kf = rng.uniform(0, 1, (6, 3))
        rw = build_reweight(6, 6)
        dec = decompose(qf, kf, rw)
        for i in range(6):
            npt.assert_allclose(dec.q_cos[i], qf[i] * rw.cos_factors[i])
            npt.assert_allclose(dec.q_sin[i], qf[i] * rw.sin_factors[i])
            npt.assert_allclose(dec.k_cos[i], kf[i] * rw.cos_factors[i])
            npt.assert_allclose(dec.k_sin[i], kf[i] * rw.sin_factors[i])


class TestLblaForward:
    def test_single_step_returns_value_row(self):
        rng = np.random.default_rng(0)
        q, k, v = random_qkv(rng, 1, 4)
        out = lbla_forward(q, k, v, KernelKind.SIGMOID, build_reweight(1, 1))
        # Self-weight cancels in the normalization up to the epsilon guard.
        npt.assert_allclose(out, v, rtol=1e-8)

    @pytest.mark.parametrize("kernel", ALL_KERNELS)
    @pytest.mark.parametrize("use_rw", [False, True])
    def test_matches_oracle(self, kernel, use_rw):
        rng = np.random.default_rng(42)
        for _ in range(60):
            t = int(rng.integers(1, 65))
            d_k = int(rng.integers(1, 17))
            q, k, v = random_qkv(rng, t, d_k, scale=2.0)
            rw = build_reweight(t, t) if use_rw else None
            got = lbla_forward(q, k, v, kernel, rw)
            want = lbla_oracle(q, k, v, kernel, rw)
            assert max_rel_err(got, want) < 1e-10

    def test_zeroed_row_hits_epsilon_and_counts(self):
        rng = np.random.default_rng(1)
        q, k, v = random_qkv(rng, 5, 3, scale=1.0)
        q[2] = [-1.0, -2.0, -0.5]  # ReLU zeroes this query row
        diag = LblaDiagnostics()
        out = lbla_forward(q, k, v, KernelKind.RELU, None, diag)
        assert diag.zero_denominator_rows == 1
        npt.assert_allclose(out[2], 0.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            lbla_forward(np.ones((3, 2)), np.ones((3, 4)), np.ones((3, 2)),
                         KernelKind.SIGMOID)
        with pytest.raises(ShapeError):
            lbla_forward(np.ones((3, 2)), np.ones((4, 2)), np.ones((4, 2)),
                         KernelKind.SIGMOID)

    def test_reweight_length_mismatch(self):
        with pytest.raises(ShapeError):
            lbla_forward(np.ones((3, 2)), np.ones((3, 2)), np.ones((3, 2)),
                         KernelKind.SIGMOID, build_reweight(4, 4))

    @given(st.integers(0, 2**32), st.integers(1, 24), st.integers(1, 6),
           st.sampled_from(ALL_KERNELS), st.booleans())
    @settings(max_examples=120, deadline=None)
    def test_oracle_equivalence_property(self, seed, t, d_k, kernel, use_rw):
        rng = np.random.default_rng(seed)
        q, k, v = random_qkv(rng, t, d_k, scale=3.0)
        rw = build_reweight(t, t) if use_rw else None
        got = lbla_forward(q, k, v, kernel, rw)
        want = lbla_oracle(q, k, v, kernel, rw)
        assert max_rel_err(got, want) < 1e-10

    def test_never_allocates_quadratic_buffer(self):
        t, d_k = 4096, 8
        rng = np.random.default_rng(2)
        q, k, v = random_qkv(rng, t, d_k)
        rw = build_reweight(t, t)
        with trace_peak_allocations() as linear_report:
            lbla_forward(q, k, v, KernelKind.SIGMOID, rw)
        quadratic_bytes = t * t * 8
        # Budget: a handful of (T, d_k) temporaries plus (d_k, d_k) blocks.
        linear_budget = 16 * t * d_k * 8 + 64 * d_k * d_k * 8 + (1 << 20)
        assert linear_report.peak_bytes < linear_budget
        assert linear_report.peak_bytes < quadratic_bytes / 16
        # Sanity check on the hook itself: the oracle DOES go quadratic.
        with trace_peak_allocations() as oracle_report:
            lbla_oracle(q, k, v, KernelKind.SIGMOID, rw)
        assert oracle_report.peak_bytes > quadratic_bytes


class TestProximityMatrixProperties:
    @pytest.mark.parametrize("kernel", NONNEG_KERNELS)
    def test_non_negative_entries_with_reweight(self, kernel):
        rng = np.random.default_rng(8)
        for _ in range(20):
            t = int(rng.integers(1, 33))
            q, k, _ = random_qkv(rng, t, 4, scale=3.0)
            p = lbla_proximity_matrix(q, k, kernel, build_reweight(t, t))
            assert np.all(p >= 0)

    def test_identity_kernel_goes_negative_for_generic_input(self):
        rng = np.random.default_rng(9)
        q, k, _ = random_qkv(rng, 16, 4, scale=3.0)
        p = lbla_proximity_matrix(q, k, KernelKind.IDENTITY,
                                  build_reweight(16, 16))
        assert np.min(p) < 0

    def test_weight_rows_sum_to_one_pre_epsilon(self):
        rng = np.random.default_rng(10)
        q, k, _ = random_qkv(rng, 6, 4, scale=3.0)
        p = lbla_proximity_matrix(q, k, KernelKind.SIGMOID,
                                  build_reweight(6, 6))
        weights = p / p.sum(axis=1, keepdims=True)
        assert np.all(weights >= 0)
        npt.assert_allclose(weights.sum(axis=1), 1.0, rtol=0, atol=1e-12)


class TestLblaBackward:
    def finite_difference_grads(self, q, k, v, kernel, rw, g, h=1e-5):
        def loss(q_, k_, v_):
            return float(np.sum(g * lbla_forward(q_, k_, v_, kernel, rw)))

        grads = []
        for idx, arr in enumerate((q, k, v)):
            grad = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                mi = it.multi_index
                bumped = [a.copy() for a in (q, k, v)]
                bumped[idx][mi] += h
                up = loss(*bumped)
                bumped[idx][mi] -= 2 * h
                down = loss(*bumped)
                grad[mi] = (up - down) / (2 * h)
                it.iternext()
            grads.append(grad)
        return tuple(grads)

    @pytest.mark.parametrize("kernel",
                             [KernelKind.SIGMOID, KernelKind.EXPONENTIAL])
    @pytest.mark.parametrize("use_rw", [False, True])
    def test_against_finite_differences(self, kernel, use_rw):
        rng = np.random.default_rng(3)
        q, k, v = random_qkv(rng, 6, 4, scale=1.5)
        rw = build_reweight(6, 6) if use_rw else None
        g = rng.uniform(-1, 1, v.shape)
        analytic = lbla_backward(q, k, v, kernel, rw, g)
        numeric = self.finite_difference_grads(q, k, v, kernel, rw, g)
        for a, n in zip(analytic, numeric):
            assert max_rel_err(a, n) < 1e-4

    def test_grad_v_equals_transposed_weight_matrix_product(self):
        rng = np.random.default_rng(4)
        q, k, v = random_qkv(rng, 7, 3, scale=2.0)
        rw = build_reweight(7, 7)
        g = rng.uniform(-1, 1, v.shape)
        _, _, grad_v = lbla_backward(q, k, v, KernelKind.SIGMOID, rw, g)
        p = lbla_proximity_matrix(q, k, KernelKind.SIGMOID, rw)
        weights = p / (p.sum(axis=1, keepdims=True) + DENOM_EPS)
        npt.assert_allclose(grad_v, weights.T @ g, atol=1e-9)

    def test_zero_upstream_gives_exact_zero_grads(self):
        rng = np.random.default_rng(6)
        q, k, v = random_qkv(rng, 5, 3)
        grads = lbla_backward(q, k, v, KernelKind.EXPONENTIAL,
                              build_reweight(5, 5), np.zeros_like(v))
        for grad in grads:
            npt.assert_array_equal(grad, 0.0)

    def test_identity_kernel_zero_denominator_rejected(self):
        q = np.array([[1.0, -1.0]])
        k = np.array([[1.0, 1.0]])  # psi(q).psi(k) = 0 exactly
        v = np.array([[1.0, 2.0]])
        with pytest.raises(ValueError, match="denominator"):
            lbla_backward(q, k, v, KernelKind.IDENTITY, None, np.ones((1, 2)))

    def test_upstream_shape_checked(self):
        rng = np.random.default_rng(12)
        q, k, v = random_qkv(rng, 4, 2)
        with pytest.raises(ShapeError):
            lbla_backward(q, k, v, KernelKind.SIGMOID, None, np.ones((3, 2)))
