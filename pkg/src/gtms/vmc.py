"""Ground-state search for the periodic spin-1/2 XXZ chain by stochastic reconfiguration."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from .amplitude import DEFAULT_PSI_FLOOR, Evaluator, amplitude, as_config
from .errors import (AmplitudeTooSmall, ConfigError, Diverged, InsufficientSamples,
                     SingularSystem)
from .model import Boundary, GtmsWeights, NetworkShape, ParamLayout, TiedWeights, weights_to_json
from .sampling import MetropolisSampler, Move

TRACE_HEADER = ("iteration", "energy_re", "energy_im", "stderr", "lambda", "acceptance_rate")


@dataclass(frozen=True)
class XxzModel:
    """H = -J sum_j (Sx Sx + Sy Sy) + Delta sum_j Sz Sz on a ring."""

    n_sites: int
    J: float = 1.0
    Delta: float = 1.0

    def __post_init__(self):
        if self.n_sites < 2:
            raise ValueError(f"n_sites must be >= 2, got {self.n_sites}")

    def bonds(self) -> np.ndarray:
        """Nearest-neighbour pairs ``(j, j+1 mod N)``; a two-site ring has both."""
        j = np.arange(self.n_sites)
        return np.stack([j, (j + 1) % self.n_sites], axis=1)


def local_energies(log_psi: Callable[[np.ndarray], np.ndarray], model: XxzModel,
                   sigmas: np.ndarray, logpsi: np.ndarray | None = None) -> np.ndarray:
    """E_loc for a batch of ``(B, N)`` configurations given a batched ``log_psi``."""
    sig = np.atleast_2d(np.asarray(sigmas))
    if logpsi is None:
        logpsi = log_psi(sig)
    bonds = model.bonds()
    left, right = sig[:, bonds[:, 0]], sig[:, bonds[:, 1]]
    e = model.Delta * (left * right).sum(axis=1).astype(complex) / 4.0
    rows, which = np.nonzero(left != right)
    if len(rows):
        flipped = sig[rows].copy()
        i, k = bonds[which, 0], bonds[which, 1]
        flipped[np.arange(len(rows)), i] = sig[rows, k]
        flipped[np.arange(len(rows)), k] = sig[rows, i]
        ratio = np.exp(log_psi(flipped) - logpsi[rows])
        np.add.at(e, rows, -model.J / 2.0 * ratio)
    return e


def local_energy(weights, shape: NetworkShape, model: XxzModel, sigma,
                 floor: float = DEFAULT_PSI_FLOOR) -> complex:
    """<sigma|H|psi> / <sigma|psi> for a single configuration."""
    sig = as_config(sigma, shape)
    den = amplitude(weights, shape, sig)
    if den.is_zero or den.log_abs() < math.log(floor):
        raise AmplitudeTooSmall(floor, den.log_abs())

    def log_psi(batch):
        return np.array([amplitude(weights, shape, s).log() for s in batch])

    return complex(local_energies(log_psi, model, sig[None], np.array([den.log()]))[0])


# Stochastic reconfiguration ----------------------------------------------


def sr_accumulate(O: np.ndarray, e_loc: np.ndarray,
                  weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, complex]:
    """Real metric ``S``, force ``F`` and mean energy from log-derivative rows.

    ``S = Re <O* O^T>_c`` and ``F = Re <O* E_loc>_c`` over the sample set, or
    over basis states with probabilities ``weights`` when given.
    """
    O = np.asarray(O)
    e_loc = np.asarray(e_loc)
    if len(O) < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {len(O)}")
    p = np.full(len(O), 1.0 / len(O)) if weights is None else np.asarray(weights, float) / np.sum(weights)
    e_mean = complex(p @ e_loc)
    dO = O - p @ O
    dE = e_loc - e_mean
    S = (dO.conj().T * p) @ dO
    S = S.real
    S = 0.5 * (S + S.T)
    F = ((dO.conj().T * p) @ dE).real
    return S, F, e_mean


def sr_step(S: np.ndarray, F: np.ndarray, gamma: float, lam: float,
            lam_abs: float = 1e-6) -> np.ndarray:
    """dw = -gamma (S + lam diag(S) + lam_abs I)^-1 F."""
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    A = S + np.diag(lam * np.diag(S) + lam_abs)
    try:
        x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), F)
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError("non-finite solution")
    except (np.linalg.LinAlgError, ValueError):
        try:
            x = np.linalg.pinv(A, rcond=1e-10, hermitian=True) @ F
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        if not np.all(np.isfinite(x)):
            raise SingularSystem("pseudo-inverse produced non-finite update")
    return -gamma * x


@dataclass(frozen=True)
class SrConfig:
    learning_rate: float = 0.02
    iterations: int = 2000
    samples_per_iter: int = 2000
    n_chains: int = 100
    burn_in: int = 200
    sweeps_between: int = 1
    thinning: int = 1
    lambda0: float = 100.0
    lambda_decay: float = 0.9
    lambda_min: float = 1e-4
    lambda_abs: float = 1e-6
    init_width: float = 0.2
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.iterations < 1 or self.samples_per_iter < 2 or self.n_chains < 1:
            raise ConfigError("iterations >= 1, samples_per_iter >= 2 and n_chains >= 1 required")
        if self.lambda0 <= 0 or self.lambda_min <= 0 or not 0 < self.lambda_decay <= 1:
            raise ConfigError("lambda schedule must stay positive")
        if self.burn_in < 0 or self.sweeps_between < 0 or self.thinning < 1:
            raise ConfigError("invalid sweep counts")

    def regularization(self, iteration: int) -> float:
        return max(self.lambda0 * self.lambda_decay ** iteration, self.lambda_min)


@dataclass(frozen=True)
class SrIterate:
    energy_mean: complex
    energy_stderr: float
    s_matrix: np.ndarray
    f_vector: np.ndarray
    dw: np.ndarray


@dataclass
class VmcResult:
    best_weights: GtmsWeights | TiedWeights
    final_weights: GtmsWeights | TiedWeights
    best_score: float
    trace: list[dict] = field(default_factory=list)
    wall_time: float = 0.0


def blocked_stderr(values: np.ndarray, n_chains: int) -> float:
    """Standard error of the mean treating each chain's samples as one block."""
    values = np.asarray(values, dtype=float)
    blocks = np.array([b.mean() for b in np.array_split(values, min(n_chains, len(values)))])
    if len(blocks) < 2:
        return float("nan")
    return float(blocks.std(ddof=1) / math.sqrt(len(blocks)))


def sr_iteration(ev: Evaluator, layout: ParamLayout, model: XxzModel, samples: np.ndarray,
                 logs: np.ndarray, gamma: float, lam: float, lam_abs: float,
                 n_chains: int = 1) -> SrIterate:
    _, O = ev.log_derivatives(samples, layout)
    e_loc = local_energies(ev.log_psi, model, samples, logs)
    S, F, e_mean = sr_accumulate(O, e_loc)
    if not np.isfinite(e_mean):
        raise Diverged(f"energy estimate became non-finite: {e_mean}")
    dw = sr_step(S, F, gamma, lam, lam_abs)
    return SrIterate(e_mean, blocked_stderr(e_loc.real, n_chains), S, F, dw)


def initial_weights(shape: NetworkShape, tied: bool, rbm_range: int | None,
                    rng: np.random.Generator, width: float):
    if tied:
        return TiedWeights.random(shape, rng, rbm_range=rbm_range,
                                  real_width=width, imag_width=width)
    w = GtmsWeights.random(shape, rng, real_width=width, imag_width=width)
    return w.mps_only() if rbm_range == 0 else w


def run_vmc(shape: NetworkShape, tied: bool, model: XxzModel, config: SrConfig,
            rbm_range: int | None = None, initial=None,
            callback: Callable[[int, SrIterate], None] | None = None,
            checkpoint_dir: str | Path | None = None) -> VmcResult:
    """SR optimization in the zero-magnetization sector; returns best-energy weights.

    ``rbm_range`` limits the physical-hidden couplings to distances
    ``0..rbm_range`` (``0`` gives the MPS-only ansatz).
    """
    if model.n_sites % 2 or model.n_sites != shape.n_sites:
        raise ConfigError("model and shape need the same even number of sites")
    if shape.local_dim != 2:
        raise ConfigError("the XXZ chain needs local_dim = 2")
    if tied and shape.boundary is not Boundary.PERIODIC:
        raise ConfigError("tied weights require a periodic network")
    t0 = time.perf_counter()
    layout = ParamLayout(shape, tied=tied, rbm_range=rbm_range if tied else None)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 0]))
    weights = initial if initial is not None else initial_weights(shape, tied, rbm_range, rng,
                                                                  config.init_width)
    x = layout.flatten(weights)
    mask = None
    if not tied and rbm_range is not None:
        # untied runs keep couplings beyond rbm_range frozen at zero
        mask = layout.flatten(_range_mask(shape, rbm_range)) != 0
        x = np.where(mask, x, 0.0)
    ev = Evaluator(layout.to_gtms(layout.unflatten(x)), shape)
    sampler = MetropolisSampler(ev.log_psi, model.n_sites, 2, Move.PAIR_EXCHANGE,
                                config.n_chains, int(np.random.SeedSequence(
                                    [int(config.seed), 1]).generate_state(1)[0]))
    sampler.sweep(config.burn_in)
    best = (math.inf, x)
    trace = []
    for p in range(config.iterations):
        if p:
            ev = Evaluator(layout.to_gtms(layout.unflatten(x)), shape)
            sampler.set_log_psi(ev.log_psi)
            sampler.sweep(config.sweeps_between)
        sampler.reset_counters()
        samples, logs = sampler.sample(config.samples_per_iter, config.thinning)
        lam = config.regularization(p)
        it = sr_iteration(ev, layout, model, samples, logs, config.learning_rate, lam,
                          config.lambda_abs, config.n_chains)
        # rank by an upper confidence bound so a lucky low estimate does not win
        score = it.energy_mean.real + 2.0 * it.energy_stderr
        if score < best[0]:
            best = (score, x)
        trace.append({
            "iteration": p,
            "energy_re": it.energy_mean.real,
            "energy_im": it.energy_mean.imag,
            "stderr": it.energy_stderr,
            "lambda": lam,
            "acceptance_rate": sampler.acceptance_rate,
        })
        if callback is not None:
            callback(p, it)
        dw = it.dw if mask is None else np.where(mask, it.dw, 0.0)
        x = x + dw
        if not np.all(np.isfinite(x)):
            raise Diverged(f"non-finite weights after iteration {p}")
        if checkpoint_dir is not None and config.checkpoint_every and (p + 1) % config.checkpoint_every == 0:
            _checkpoint(Path(checkpoint_dir), p + 1, shape, layout, x)
    return VmcResult(
        best_weights=layout.unflatten(best[1]),
        final_weights=layout.unflatten(x),
        best_score=best[0],
        trace=trace,
        wall_time=time.perf_counter() - t0,
    )


def _range_mask(shape: NetworkShape, rbm_range: int) -> GtmsWeights:
    ones = GtmsWeights.zeros(shape)
    fields = {name: np.ones_like(getattr(ones, name)) for name in ("c", "b", "a", "w_tilde", "w_hat")}
    N, NT = shape.n_sites, shape.n_blocks
    dist = (np.arange(NT)[None, :] - np.arange(N)[:, None]) % N
    near = dist <= rbm_range
    fields["w"] = np.broadcast_to(near[:, :, None], ones.w.shape).astype(complex)
    if shape.boundary is Boundary.OPEN:
        fields["w_hat"][-1] = 0.0
    return ones.replace(**fields)


def _checkpoint(directory: Path, iteration: int, shape: NetworkShape, layout: ParamLayout,
                x: np.ndarray) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    doc = weights_to_json(shape, layout.to_gtms(layout.unflatten(x)))
    doc["iteration"] = iteration
    (directory / f"checkpoint_{iteration:06d}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def write_trace_csv(trace: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in TRACE_HEADER})
