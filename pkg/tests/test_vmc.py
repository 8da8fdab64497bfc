import csv
import json

import numpy as np
import pytest

from gtms import Evaluator, GtmsWeights, NetworkShape, ParamLayout, TiedWeights
from gtms.errors import AmplitudeTooSmall, ConfigError, InsufficientSamples
from gtms.oracle import basis_configs, full_state_vector, variational_energy
from gtms.vmc import (TRACE_HEADER, SrConfig, XxzModel, blocked_stderr, local_energies,
                      local_energy, run_vmc, sr_accumulate, sr_step, write_trace_csv)

SX = np.array([[0, 1], [1, 0]]) / 2
SY = np.array([[0, -1j], [1j, 0]]) / 2
SZ = np.array([[1, 0], [0, -1]]) / 2


def dense_xxz(n_sites, J, Delta):
    def op(o, i):
        mats = [np.eye(2)] * n_sites
        mats[n_sites - 1 - i] = o  # site 1 is the least significant bit
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    H = 0
    for i in range(n_sites):
        k = (i + 1) % n_sites
        H = H - J * (op(SX, i) @ op(SX, k) + op(SY, i) @ op(SY, k)) + Delta * op(SZ, i) @ op(SZ, k)
    return H


def test_uniform_state_on_neel_configuration():
    shape = NetworkShape(4, 1, 1)
    e = local_energy(GtmsWeights.zeros(shape), shape, XxzModel(4), [1, -1, 1, -1])
    assert e == pytest.approx(-3)


def test_polarized_configuration_is_diagonal(rng):
    shape = NetworkShape(4, 1, 2)
    e = local_energy(GtmsWeights.random(shape, rng), shape, XxzModel(4, 1.0, 1.0), [1, 1, 1, 1])
    assert e == pytest.approx(1)


def test_local_energy_matches_dense_hamiltonian(rng):
    shape = NetworkShape(8, 1, 2)
    model = XxzModel(8, 0.7, 1.3)
    weights = GtmsWeights.random(shape, rng, 0.6, 2.0)
    psi = full_state_vector(weights, shape).amplitudes
    h_psi = dense_xxz(8, 0.7, 1.3) @ psi
    configs = basis_configs(8)
    got = local_energies(Evaluator(weights, shape).log_psi, model, configs)
    np.testing.assert_allclose(got, h_psi / psi, rtol=1e-10)


def test_local_energy_floor(rng):
    shape = NetworkShape(4, 1, 1)
    with pytest.raises(AmplitudeTooSmall):
        local_energy(GtmsWeights.zeros(shape), shape, XxzModel(4), [1, -1, 1, -1], floor=1e10)


def test_two_site_ring_counts_both_bonds():
    assert XxzModel(2).bonds().tolist() == [[0, 1], [1, 0]]


def test_constant_derivatives_have_no_covariance():
    S, F, e = sr_accumulate(np.ones((5, 3), complex), np.arange(5.0) + 0j)
    assert not np.any(S) and not np.any(F)
    assert e == 2


def test_hand_covariance():
    O = np.array([[1.0], [-1.0]], complex)
    S, F, _ = sr_accumulate(O, np.array([1.0, -1.0], complex))
    assert S[0, 0] == pytest.approx(1) and F[0] == pytest.approx(1)


def test_accumulate_needs_two_samples():
    with pytest.raises(InsufficientSamples):
        sr_accumulate(np.ones((1, 2), complex), np.ones(1, complex))


def test_metric_is_symmetric_positive_semidefinite(rng):
    O = rng.standard_normal((50, 6)) + 1j * rng.standard_normal((50, 6))
    S, _, _ = sr_accumulate(O, rng.standard_normal(50) + 0j)
    np.testing.assert_array_equal(S, S.T)
    assert np.min(np.linalg.eigvalsh(S)) > -1e-12


def test_identity_metric_step():
    F = np.array([1.0, 0, 0])
    np.testing.assert_allclose(sr_step(np.eye(3), F, 0.1, 1e-12, 0.0), [-0.1, 0, 0], atol=1e-12)


def test_stationary_point_does_not_move():
    assert not np.any(sr_step(np.eye(4), np.zeros(4), 0.02, 1.0))


def test_regularized_solve_residual(rng):
    A = rng.standard_normal((12, 12))
    S = A @ A.T
    F = rng.standard_normal(12)
    lam, lam_abs = 0.3, 1e-6
    dw = sr_step(S, F, 0.05, lam, lam_abs)
    reg = S + lam * np.diag(np.diag(S)) + lam_abs * np.eye(12)
    assert np.linalg.norm(reg @ (dw / -0.05) - F) <= 1e-8 * np.linalg.norm(F)


def test_singular_metric_falls_back():
    S = np.zeros((3, 3))
    dw = sr_step(S, np.array([1.0, 0, 0]), 0.1, 1e-3, 0.0)
    assert np.all(np.isfinite(dw))


def test_non_positive_regularization_is_rejected():
    with pytest.raises(ValueError):
        sr_step(np.eye(2), np.ones(2), 0.1, 0.0)


def test_regularization_schedule():
    cfg = SrConfig()
    assert cfg.regularization(0) == 100
    assert cfg.regularization(1) == pytest.approx(90)
    assert cfg.regularization(10_000) == 1e-4


@pytest.mark.parametrize("bad", [dict(learning_rate=0), dict(samples_per_iter=1),
                                 dict(lambda_decay=1.5), dict(thinning=0)])
def test_invalid_sr_config(bad):
    with pytest.raises(ConfigError):
        SrConfig(**bad)


def test_blocked_stderr_uses_chain_means():
    values = np.repeat([1.0, 3.0], 10)
    assert blocked_stderr(values, 2) == pytest.approx(1.0)
    assert np.isnan(blocked_stderr(values, 1))


def small_run(tmp_path=None, **kw):
    shape = NetworkShape(6, 1, 2)
    cfg = SrConfig(**dict(dict(iterations=40, samples_per_iter=400, n_chains=20, burn_in=20,
                               seed=3), **kw))
    return run_vmc(shape, True, XxzModel(6), cfg, checkpoint_dir=tmp_path), shape


def test_short_run_lowers_the_energy(tmp_path):
    result, shape = small_run(tmp_path, checkpoint_every=20)
    energies = [row["energy_re"] for row in result.trace]
    assert np.mean(energies[-5:]) < np.mean(energies[:5]) - 0.3
    assert len(result.trace) == 40
    assert sorted(p.name for p in tmp_path.iterdir()) == ["checkpoint_000020.json",
                                                          "checkpoint_000040.json"]
    doc = json.loads((tmp_path / "checkpoint_000040.json").read_text())
    assert doc["iteration"] == 40
    assert isinstance(result.best_weights, TiedWeights)
    assert variational_energy(result.best_weights, shape, XxzModel(6)) < -2.4


def test_runs_are_reproducible():
    a, _ = small_run(iterations=5)
    b, _ = small_run(iterations=5)
    assert a.trace == b.trace
    assert a.final_weights == b.final_weights


def test_trace_csv(tmp_path):
    result, _ = small_run(iterations=3)
    write_trace_csv(result.trace, tmp_path / "trace.csv")
    rows = list(csv.reader(open(tmp_path / "trace.csv")))
    assert tuple(rows[0]) == TRACE_HEADER
    assert float(rows[1][1]) == result.trace[0]["energy_re"]


def test_untied_range_limited_run_keeps_distant_couplings_zero():
    shape = NetworkShape(6, 1, 2)
    cfg = SrConfig(iterations=4, samples_per_iter=200, n_chains=10, burn_in=5)
    result = run_vmc(shape, False, XxzModel(6), cfg, rbm_range=1)
    w = result.final_weights.w
    dist = (np.arange(6)[None, :] - np.arange(6)[:, None]) % 6
    assert not np.any(w[dist > 1])
    assert np.all(w[dist <= 1] != 0)


def test_mps_only_tied_run_has_fewer_parameters():
    shape = NetworkShape(6, 1, 2)
    cfg = SrConfig(iterations=2, samples_per_iter=100, n_chains=10, burn_in=5)
    result = run_vmc(shape, True, XxzModel(6), cfg, rbm_range=0)
    assert result.final_weights.rbm_range == 0
    assert ParamLayout(shape, True, 0).n_complex < ParamLayout(shape, True).n_complex


@pytest.mark.parametrize("shape, tied", [(NetworkShape(5, 1, 1), True),
                                         (NetworkShape(6, 1, 1, boundary="open"), True),
                                         (NetworkShape(6, 1, 1, local_dim=3), False)])
def test_run_vmc_rejects_unsupported_setups(shape, tied):
    with pytest.raises(ConfigError):
        run_vmc(shape, tied, XxzModel(shape.n_sites), SrConfig(iterations=1))
