"""Metropolis sampling of |psi|^2 and the two-replica swap estimator of S_2."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .amplitude import Evaluator
from .errors import InsufficientSamples, NegativeMean, NoValidStart
from .model import NetworkShape, local_values

LogPsiFn = Callable[[np.ndarray], np.ndarray]

JACKKNIFE_BLOCKS = 32
_RNG_BLOCK = 512


class Move(str, enum.Enum):
    SINGLE_FLIP = "single_flip"
    PAIR_EXCHANGE = "pair_exchange"


@dataclass(frozen=True)
class ChainConfig:
    """Chain lengths are counted in sweeps of ``n_sites`` proposals."""

    n_samples: int = 1000
    burn_in: int = 1000
    thinning: int = 1
    move: Move = Move.SINGLE_FLIP
    seed: int = 0
    n_chains: int = 1
    max_start_retries: int = 100

    def __post_init__(self):
        object.__setattr__(self, "move", Move(self.move))
        if self.n_samples < 0 or self.burn_in < 0:
            raise ValueError("n_samples and burn_in must be non-negative")
        if self.thinning < 1 or self.n_chains < 1:
            raise ValueError("thinning and n_chains must be >= 1")


def chain_rng(seed: int, chain_id: int) -> np.random.Generator:
    """RNG stream fully determined by ``(seed, chain_id)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain_id)]))


class MetropolisSampler:
    """``n_chains`` independent Markov chains advanced in lockstep.

    Each chain owns its RNG stream; configurations of all chains are scored
    with one batched ``log_psi`` call per step.
    """

    def __init__(self, log_psi: LogPsiFn, n_sites: int, local_dim: int = 2,
                 move: Move = Move.SINGLE_FLIP, n_chains: int = 1, seed: int = 0,
                 initial: np.ndarray | None = None, max_start_retries: int = 100):
        self.n_sites = n_sites
        self.local_dim = local_dim
        self.move = Move(move)
        self.n_chains = n_chains
        self.max_start_retries = max_start_retries
        self._values = local_values(local_dim)
        self._rngs = [chain_rng(seed, k) for k in range(n_chains)]
        self._buffer = np.empty((0, n_chains, 3))
        self._cursor = 0
        self.n_proposed = 0
        self.n_accepted = 0
        self._rows = np.arange(n_chains)
        if initial is None:
            self.state = np.stack([self._initial_config(rng) for rng in self._rngs])
        else:
            self.state = np.broadcast_to(np.asarray(initial, dtype=np.int8),
                                         (n_chains, n_sites)).copy()
        self.log_psi = log_psi
        self.logpsi = np.empty(n_chains, complex)
        self.set_log_psi(log_psi)

    def _initial_config(self, rng: np.random.Generator) -> np.ndarray:
        N = self.n_sites
        if self.move is Move.PAIR_EXCHANGE:
            # Neel-like start: magnetization as close to zero as the size allows
            return np.where(np.arange(N) % 2 == 0, 1, -1).astype(np.int8)
        return rng.choice(self._values, size=N).astype(np.int8)

    def _resample_start(self, rng: np.random.Generator, current: np.ndarray) -> np.ndarray:
        if self.move is Move.PAIR_EXCHANGE:
            return rng.permutation(current)
        return rng.choice(self._values, size=self.n_sites).astype(np.int8)

    def set_log_psi(self, log_psi: LogPsiFn) -> None:
        """Switch to a new wave function, rescoring (and if needed re-seeding) the chains."""
        self.log_psi = log_psi
        self.logpsi = np.asarray(log_psi(self.state), dtype=complex)
        for _ in range(self.max_start_retries):
            dead = np.nonzero(self.logpsi.real == -np.inf)[0]
            if len(dead) == 0:
                return
            for k in dead:
                self.state[k] = self._resample_start(self._rngs[k], self.state[k])
            self.logpsi[dead] = log_psi(self.state[dead])
        if np.any(self.logpsi.real == -np.inf):
            raise NoValidStart(f"no configuration with nonzero amplitude after "
                               f"{self.max_start_retries} attempts")

    def _uniforms(self) -> np.ndarray:
        if self._cursor >= len(self._buffer):
            self._buffer = np.stack([rng.random((_RNG_BLOCK, 3)) for rng in self._rngs], axis=1)
            self._cursor = 0
        u = self._buffer[self._cursor]
        self._cursor += 1
        return u

    def _propose(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        N = self.n_sites
        new = self.state.copy()
        site = np.minimum((u[:, 0] * N).astype(np.int64), N - 1)
        current = self.state[self._rows, site]
        if self.move is Move.SINGLE_FLIP:
            if self.local_dim == 2:
                new[self._rows, site] = -current
            else:
                digit = 1 - current  # +1, 0, -1 -> 0, 1, 2
                shift = 1 + (u[:, 1] * 2).astype(np.int64).clip(0, 1)
                new[self._rows, site] = 1 - (digit + shift) % 3
            return new, np.ones(self.n_chains, bool)
        differs = self.state != current[:, None]
        count = differs.sum(axis=1)
        valid = count > 0
        pick = np.minimum((u[:, 1] * count).astype(np.int64), np.maximum(count - 1, 0))
        partner = np.argmax(np.cumsum(differs, axis=1) > pick[:, None], axis=1)
        new[self._rows, site] = self.state[self._rows, partner]
        new[self._rows, partner] = current
        return new, valid

    def step(self) -> None:
        u = self._uniforms()
        proposal, valid = self._propose(u)
        log_new = np.full(self.n_chains, complex(-np.inf, 0))
        if np.any(valid):
            log_new[valid] = self.log_psi(proposal[valid])
        with np.errstate(invalid="ignore"):
            log_accept = 2.0 * (log_new.real - self.logpsi.real)
        accept = valid & (np.log(u[:, 2] + 1e-300) < np.minimum(log_accept, 0.0))
        self.state[accept] = proposal[accept]
        self.logpsi[accept] = log_new[accept]
        self.n_proposed += self.n_chains
        self.n_accepted += int(accept.sum())

    def sweep(self, n_sweeps: int = 1) -> None:
        for _ in range(n_sweeps * self.n_sites):
            self.step()

    def sample(self, n_samples: int, thinning: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n_samples`` configurations (chain-major order) and their ln psi."""
        per_chain = math.ceil(n_samples / self.n_chains) if n_samples else 0
        confs = np.empty((per_chain, self.n_chains, self.n_sites), dtype=np.int8)
        logs = np.empty((per_chain, self.n_chains), dtype=complex)
        for t in range(per_chain):
            self.sweep(thinning)
            confs[t] = self.state
            logs[t] = self.logpsi
        confs = confs.transpose(1, 0, 2).reshape(-1, self.n_sites)[:n_samples]
        logs = logs.T.reshape(-1)[:n_samples]
        return confs, logs

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else float("nan")

    def reset_counters(self) -> None:
        self.n_proposed = 0
        self.n_accepted = 0


def sampler_for(weights, shape: NetworkShape, config: ChainConfig, seed: int | None = None,
                initial: np.ndarray | None = None) -> MetropolisSampler:
    ev = Evaluator(weights, shape)
    return MetropolisSampler(
        ev.log_psi, shape.n_sites, shape.local_dim, config.move, config.n_chains,
        config.seed if seed is None else seed, initial, config.max_start_retries,
    )


def run_chain(weights, shape: NetworkShape, config: ChainConfig,
              initial: np.ndarray | None = None) -> np.ndarray:
    """Samples of |psi|^2 after ``burn_in`` sweeps, one every ``thinning`` sweeps."""
    sampler = sampler_for(weights, shape, config, initial=initial)
    sampler.sweep(config.burn_in)
    samples, _ = sampler.sample(config.n_samples, config.thinning)
    return samples


# Renyi-2 ---------------------------------------------------------------


@dataclass(frozen=True)
class Renyi2Estimate:
    s2: float
    swap_mean: complex
    std_error: float
    n_pairs: int


def replica_seeds(seed: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence([int(seed), 0x5A]).generate_state(2, dtype=np.uint64)
    return int(a), int(b)


def swap_values(log_psi: LogPsiFn, sigma: np.ndarray, sigma_p: np.ndarray,
                log_sigma: np.ndarray, log_sigma_p: np.ndarray, ell: int) -> np.ndarray:
    """psi(s'_A s_B) psi(s_A s'_B) / (psi(s) psi(s')) for paired samples; A = first ``ell`` sites."""
    mixed_1 = np.concatenate([sigma_p[:, :ell], sigma[:, ell:]], axis=1)
    mixed_2 = np.concatenate([sigma[:, :ell], sigma_p[:, ell:]], axis=1)
    both = log_psi(np.concatenate([mixed_1, mixed_2]))
    n = len(sigma)
    log_ratio = both[:n] + both[n:] - log_sigma - log_sigma_p
    return np.exp(log_ratio)


def jackknife_s2(values: np.ndarray, n_blocks: int = JACKKNIFE_BLOCKS) -> Renyi2Estimate:
    n = len(values)
    if n < n_blocks:
        raise InsufficientSamples(f"need at least {n_blocks} pairs for the jackknife, got {n}")
    mean = values.mean()
    block_sums = np.array([b.sum() for b in np.array_split(values, n_blocks)])
    block_sizes = np.array([len(b) for b in np.array_split(values, n_blocks)])
    loo = (values.sum() - block_sums) / (n - block_sizes)
    if mean.real <= 0 or np.any(loo.real <= 0):
        spread = np.sqrt((n_blocks - 1) / n_blocks * np.sum(np.abs(loo - loo.mean()) ** 2))
        raise NegativeMean(complex(mean), float(spread))
    theta = -np.log(loo.real)
    err = math.sqrt((n_blocks - 1) / n_blocks * np.sum((theta - theta.mean()) ** 2))
    return Renyi2Estimate(float(-math.log(mean.real)), complex(mean), err, n)


def renyi2_swap(weights, shape: NetworkShape, ell: int, config: ChainConfig,
                seeds: tuple[int, int] | None = None) -> Renyi2Estimate:
    """Second Renyi entropy of sites ``1..ell`` from two independent replicas.

    Replica ``r`` runs ``config`` with seed ``seeds[r]`` (derived from
    ``config.seed`` when not given).
    """
    N = shape.n_sites
    if not 0 <= ell <= N:
        raise ValueError(f"ell must lie in [0, {N}], got {ell}")
    if ell in (0, N):
        return Renyi2Estimate(0.0, 1 + 0j, 0.0, config.n_samples)
    seeds = replica_seeds(config.seed) if seeds is None else seeds
    ev = Evaluator(weights, shape)
    draws = []
    for s in seeds:
        sampler = MetropolisSampler(ev.log_psi, N, shape.local_dim, config.move, config.n_chains,
                                    s, None, config.max_start_retries)
        sampler.sweep(config.burn_in)
        draws.append(sampler.sample(config.n_samples, config.thinning))
    (s1, l1), (s2, l2) = draws
    values = swap_values(ev.log_psi, s1, s2, l1, l2, ell)
    return jackknife_s2(values)
