import itertools
import math

import numpy as np
import pytest

from conftest import complex_array
from gtms import (Evaluator, GtmsWeights, NetworkShape, ParamLayout, ScaledAmplitude, TiedWeights,
                  amplitude, tie, log_amplitude_ratio, log_derivatives)
from gtms.amplitude import transfer_matrix
from gtms.errors import AmplitudeTooSmall, ZeroDenominator
from gtms.model import deep_table
from gtms.oracle import basis_configs, brute_force_amplitude, rbm_amplitude


def frozen_case(case):
    shape = NetworkShape(**case["shape"], boundary=case["boundary"])
    weights = GtmsWeights(**{k: complex_array(v) for k, v in case["weights"].items()})
    return shape, weights, np.array(case["configs"]), complex_array(case["amplitudes"])


def test_matches_frozen_partition_sums(frozen):
    for case in frozen["networks"]:
        shape, weights, configs, expected = frozen_case(case)
        for sigma, ref in zip(configs, expected):
            got = amplitude(weights, shape, sigma).value()
            assert abs(got - ref) <= 1e-10 * abs(ref), case["boundary"]


def test_brute_force_oracle_matches_frozen_sums(frozen):
    for case in frozen["networks"]:
        shape, weights, configs, expected = frozen_case(case)
        got = np.array([brute_force_amplitude(weights, shape, s) for s in configs])
        np.testing.assert_allclose(got, expected, rtol=1e-10)


def test_zero_weights_count_auxiliary_configurations():
    shape = NetworkShape(4, 1, 2)
    amp = amplitude(GtmsWeights.zeros(shape), shape, [1, -1, 1, 1])
    assert amp.value() == pytest.approx(4096, rel=1e-14)


def test_rbm_only_weights_reduce_to_closed_form(rng):
    shape = NetworkShape(5, 2, 3)
    weights = GtmsWeights.random(shape, rng, 0.6, 2.0).rbm_only()
    for sigma in rng.choice([-1, 1], size=(6, 5)):
        expected = 2 ** (2 * 5) * rbm_amplitude(weights, sigma)
        assert amplitude(weights, shape, sigma).value() == pytest.approx(expected, rel=1e-12)


def test_zero_weight_transfer_matrix_is_constant():
    shape = NetworkShape(3, 1, 2)
    T = transfer_matrix(GtmsWeights.zeros(shape), shape, 1, [1, 1, -1])
    np.testing.assert_allclose(T, np.full((2, 2), 4.0))


def test_transfer_matrix_entries_match_scalar_formula(rng):
    shape = NetworkShape(4, 2, 3, n_blocks=3)
    weights = GtmsWeights.random(shape, rng, 1.0, 3.0)
    sigma = np.array([1, -1, -1, 1])
    D = deep_table(2)
    for j in range(3):
        T = transfer_matrix(weights, shape, j, sigma)
        for al, be in itertools.product(range(4), repeat=2):
            entry = np.exp(sum(weights.a[j, v] * D[al, v] for v in range(2)))
            for mu in range(3):
                phi = weights.b[j, mu] + sum(sigma[i] * weights.w[i, j, mu] for i in range(4))
                phi += sum(weights.w_tilde[j, mu, v] * D[al, v] + weights.w_hat[j, mu, v] * D[be, v]
                           for v in range(2))
                entry *= 2 * np.cosh(phi)
            assert T[al, be] == pytest.approx(entry, rel=1e-12)


@pytest.mark.parametrize("boundary", ["periodic", "open"])
def test_batched_evaluator_matches_single_amplitudes(rng, boundary):
    shape = NetworkShape(7, 2, 3, n_blocks=5, boundary=boundary)
    weights = GtmsWeights.random(shape, rng, 0.8, 4.0)
    configs = basis_configs(7)[::9]
    logs = Evaluator(weights, shape).log_psi(configs)
    for sigma, lg in zip(configs, logs):
        ref = amplitude(weights, shape, sigma).log()
        assert abs(np.exp(lg - ref) - 1) < 1e-11


def test_spin_one_network_matches_brute_force(rng):
    shape = NetworkShape(3, 1, 2, local_dim=3)
    weights = GtmsWeights.random(shape, rng, 0.6, 2.0)
    for sigma in basis_configs(3, 3)[::4]:
        ref = brute_force_amplitude(weights, shape, sigma)
        assert amplitude(weights, shape, sigma).value() == pytest.approx(ref, rel=1e-10)


def test_tied_weights_evaluate_like_their_expansion(rng):
    shape = NetworkShape(6, 1, 2)
    tied = TiedWeights.random(shape, rng, real_width=0.5, imag_width=3.0)
    sigma = [1, -1, -1, 1, 1, -1]
    assert amplitude(tied, shape, sigma) == amplitude(tie(tied, shape), shape, sigma)


def test_large_weights_stay_finite_in_log_space(rng):
    shape = NetworkShape(16, 2, 6)
    weights = GtmsWeights.random(shape, rng, 60.0, 6.0)
    configs = rng.choice([-1, 1], size=(20, 16))
    logs = Evaluator(weights, shape).log_psi(configs)
    assert np.all(np.isfinite(logs))
    assert np.max(np.abs(logs.real)) > 800  # far outside the double range
    for sigma, lg in zip(configs[:5], logs[:5]):
        ref = amplitude(weights, shape, sigma).log()
        assert abs(lg.real - ref.real) < 1e-9 * abs(ref.real)
        assert abs(np.exp(1j * (lg.imag - ref.imag)) - 1) < 1e-8


def test_visible_bias_shift_is_exact_under_overflow(rng):
    shape = NetworkShape(10, 1, 4)
    weights = GtmsWeights.random(shape, rng, 80.0, 1.0)
    shift = 0.37 - 0.2j
    shifted = weights.replace(c=weights.c + shift)
    configs = rng.choice([-1, 1], size=(8, 10))
    diff = Evaluator(shifted, shape).log_psi(configs) - Evaluator(weights, shape).log_psi(configs)
    np.testing.assert_allclose(np.exp(diff), np.exp(shift * configs.sum(axis=1)), rtol=1e-9)


def test_ratio_of_equal_configurations_is_zero(rng):
    shape = NetworkShape(4, 1, 2)
    weights = GtmsWeights.random(shape, rng)
    assert log_amplitude_ratio(weights, shape, [1, 1, -1, 1], [1, 1, -1, 1]) == 0


def test_ratio_with_zero_weights_is_zero():
    shape = NetworkShape(4, 1, 2)
    assert log_amplitude_ratio(GtmsWeights.zeros(shape), shape, [1, 1, 1, 1], [-1, 1, -1, 1]) == 0


def test_ratio_matches_direct_quotient(rng):
    shape = NetworkShape(6, 1, 2)
    weights = GtmsWeights.random(shape, rng, 0.6, 2.0)
    a, b = [1, -1, 1, 1, -1, -1], [-1, -1, 1, -1, 1, 1]
    direct = brute_force_amplitude(weights, shape, a) / brute_force_amplitude(weights, shape, b)
    assert np.exp(log_amplitude_ratio(weights, shape, a, b)) == pytest.approx(direct, rel=1e-10)


def test_division_by_zero_amplitude_raises():
    with pytest.raises(ZeroDenominator):
        ScaledAmplitude.from_parts(1.0) / ScaledAmplitude.from_parts(0.0)


def test_scaled_amplitude_mantissa_range():
    for value in (1e-200, 3.0, -7.5e150, 2.718281828459045):
        amp = ScaledAmplitude.from_parts(value * (0.6 + 0.8j), 12.0)
        assert 1 <= abs(amp.mantissa) < math.e
        assert amp.log_abs() == pytest.approx(math.log(abs(value)) + 12.0, rel=1e-14, abs=1e-14)


def test_visible_bias_derivative_is_magnetization(rng):
    shape = NetworkShape(5, 1, 2)
    layout = ParamLayout(shape)
    sigma = np.array([1, 1, -1, 1, -1])
    O = log_derivatives(GtmsWeights.random(shape, rng), shape, sigma, layout)
    sl = layout.slices()["c"]
    np.testing.assert_allclose(O[2 * sl.start:2 * sl.stop:2], sigma, atol=1e-14)
    np.testing.assert_allclose(O[2 * sl.start + 1:2 * sl.stop:2], 1j * sigma, atol=1e-14)


def test_tied_visible_bias_derivative_is_total_magnetization(rng):
    shape = NetworkShape(6, 1, 2)
    layout = ParamLayout(shape, tied=True)
    sigma = np.array([1, 1, -1, 1, 1, 1])
    O = log_derivatives(TiedWeights.random(shape, rng), shape, sigma, layout)
    assert O[0] == pytest.approx(4)
    assert O[1] == pytest.approx(4j)


def test_hidden_bias_derivative_vanishes_at_zero_weights():
    shape = NetworkShape(4, 1, 2)
    layout = ParamLayout(shape)
    O = log_derivatives(GtmsWeights.zeros(shape), shape, [1, -1, 1, 1], layout)
    sl = layout.slices()["b"]
    np.testing.assert_allclose(O[2 * sl.start:2 * sl.stop], 0, atol=1e-15)


def test_derivatives_refuse_amplitudes_below_the_floor():
    shape = NetworkShape(4, 1, 2)
    with pytest.raises(AmplitudeTooSmall):
        log_derivatives(GtmsWeights.zeros(shape), shape, [1, -1, 1, 1], ParamLayout(shape),
                        floor=1e300)
