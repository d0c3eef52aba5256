from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synadapt.errors import DegenerateRowError, DimensionError
from synadapt.tensor import (NEG_INF, Parameter, checksum, gelu, gelu_grad,
                             l2_normalize_rows, layer_norm, matmul,
                             softmax_rows)

from conftest import naive_matmul


class TestMatmul:
    def test_identity(self, rng):
        a = rng.standard_normal((3, 3))
        assert np.array_equal(matmul(np.eye(3), a), a)

    def test_hand_example_single_column(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]),
                     np.array([[0.0], [1.0]]))
        assert np.array_equal(out, np.array([[2.0], [4.0]]))

    def test_matches_triple_loop_oracle_exactly(self, rng):
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) == 0.0

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            matmul(rng.standard_normal((2, 3)), rng.standard_normal((4, 2)))

    @given(st.integers(1, 12), st.integers(1, 50), st.integers(1, 12),
           st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_bit_equal_to_oracle_any_shape(self, m, k, n, seed):
        gen = np.random.default_rng(seed)
        a = gen.standard_normal((m, k))
        b = gen.standard_normal((k, n))
        assert np.array_equal(matmul(a, b), naive_matmul(a, b))

    def test_non_contiguous_inputs(self, rng):
        a = rng.standard_normal((6, 9)).T  # transposed view
        b = rng.standard_normal((6, 4))
        assert np.array_equal(matmul(a, b), naive_matmul(np.ascontiguousarray(a), b))


class TestSoftmaxRows:
    def test_masked_entry_is_exactly_zero(self):
        out = softmax_rows(np.array([[2.0, NEG_INF]]))
        assert out[0, 0] == 1.0
        assert out[0, 1] == 0.0

    def test_symmetry(self):
        out = softmax_rows(np.full((1, 3), 7.25))
        assert np.allclose(out, 1.0 / 3.0, atol=1e-15)

    def test_matches_scalar_oracle(self):
        row = np.array([[1.0, 2.0, 3.0]])
        exps = [math.exp(v) for v in [1.0, 2.0, 3.0]]
        oracle = np.array([[e / sum(exps) for e in exps]])
        assert np.max(np.abs(softmax_rows(row) - oracle)) <= 1e-15

    def test_rows_sum_to_one(self, rng):
        x = rng.standard_normal((20, 11)) * 5
        sums = softmax_rows(x).sum(axis=1)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12

    def test_all_masked_row_raises(self):
        with pytest.raises(DegenerateRowError):
            softmax_rows(np.array([[NEG_INF, NEG_INF]]))


class TestLayerNorm:
    def _ones_bias(self, cols):
        return np.ones((1, cols)), np.zeros((1, cols))

    def test_constant_row_maps_to_zero(self):
        gain, bias = self._ones_bias(4)
        out = layer_norm(np.full((1, 4), 3.3), gain, bias)
        assert np.allclose(out, 0.0, atol=1e-6)

    def test_normalized_row_unchanged(self):
        row = np.array([[-1.0, 1.0]])  # zero mean, unit variance
        gain, bias = self._ones_bias(2)
        assert np.allclose(layer_norm(row, gain, bias), row, atol=1e-6)

    def test_matches_two_pass_scalar_oracle(self, rng):
        x = rng.standard_normal((3, 9)) * 4 + 1
        gain = rng.standard_normal((1, 9))
        bias = rng.standard_normal((1, 9))
        eps = 1e-12
        oracle = np.zeros_like(x)
        for i in range(x.shape[0]):
            mean = sum(x[i]) / 9
            var = sum((v - mean) ** 2 for v in x[i]) / 9
            for j in range(9):
                oracle[i, j] = (x[i, j] - mean) / math.sqrt(var + eps) \
                    * gain[0, j] + bias[0, j]
        assert np.max(np.abs(layer_norm(x, gain, bias, eps) - oracle)) <= 1e-12

    def test_standardization_invariant(self, rng):
        x = rng.standard_normal((6, 16)) * 3
        gain, bias = self._ones_bias(16)
        out = layer_norm(x, gain, bias)
        assert np.max(np.abs(out.mean(axis=1))) <= 1e-10
        assert np.max(np.abs(out.var(axis=1) - 1.0)) <= 1e-10


class TestL2NormalizeRows:
    def test_three_four_five(self):
        out = l2_normalize_rows(np.array([[3.0, 4.0]]))
        assert np.allclose(out, [[0.6, 0.8]], atol=1e-15)

    def test_unit_row_idempotent(self, rng):
        row = rng.standard_normal((1, 8))
        unit = l2_normalize_rows(row)
        assert np.max(np.abs(l2_normalize_rows(unit) - unit)) <= 1e-15

    def test_zero_row_stays_zero(self):
        x = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        out = l2_normalize_rows(x)
        assert np.array_equal(out[0], np.zeros(3))
        assert np.array_equal(out[1], x[1])

    def test_matches_scalar_oracle(self, rng):
        x = rng.standard_normal((5, 7))
        out = l2_normalize_rows(x)
        for i in range(5):
            norm = math.sqrt(sum(v * v for v in x[i]))
            assert np.max(np.abs(out[i] - x[i] / norm)) <= 1e-15
        norms = np.linalg.norm(out, axis=1)
        assert np.max(np.abs(norms - 1.0)) <= 1e-12


class TestGelu:
    def test_known_points(self):
        out = gelu(np.array([[0.0, 100.0, -100.0]]))
        assert out[0, 0] == 0.0
        assert np.isclose(out[0, 1], 100.0)
        assert np.isclose(out[0, 2], 0.0, atol=1e-12)

    def test_grad_matches_finite_difference(self, rng):
        x = rng.standard_normal((2, 5))
        h = 1e-6
        fd = (gelu(x + h) - gelu(x - h)) / (2 * h)
        assert np.max(np.abs(gelu_grad(x) - fd)) <= 1e-9


class TestParameter:
    def test_frozen_value_is_write_protected(self, rng):
        p = Parameter("w", rng.standard_normal((2, 2)), frozen=True)
        assert not p.trainable
        with pytest.raises(ValueError):
            p.value[0, 0] = 5.0

    def test_trainable_value_is_writable(self, rng):
        p = Parameter("w", rng.standard_normal((2, 2)))
        p.value[0, 0] = 5.0
        assert p.value[0, 0] == 5.0

    def test_gradient_shape_matches(self, rng):
        p = Parameter("w", rng.standard_normal((3, 4)))
        assert p.grad.shape == (3, 4)
        p.grad += 1.0
        p.zero_grad()
        assert np.array_equal(p.grad, np.zeros((3, 4)))

    def test_checksum_sensitive_to_values(self, rng):
        a = Parameter("w", rng.standard_normal((2, 2)))
        before = checksum([a])
        a.value[0, 0] += 1.0
        assert checksum([a]) != before
