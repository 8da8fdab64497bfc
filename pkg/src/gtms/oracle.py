"""Ground-truth engines used to check the fast paths.

Basis convention (shared by every module): basis index ``k`` has site 1 as
its least significant digit, and digit ``q`` of a site stands for the spin
value ``local_values(local_dim)[q]``, i.e. ``+1 -> 0``, ``-1 -> 1`` for
spin-1/2.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse

from .amplitude import Evaluator, as_config
from .errors import NoConvergence, TooLarge, ZeroState
from .model import GtmsWeights, NetworkShape, TiedWeights, local_values, tie, validate
from .vmc import XxzModel

MAX_BRUTE_FORCE_BITS = 22
MAX_STATE_SITES = 20
MAX_DENSE_SITES = 14


# basis -----------------------------------------------------------------


def index_to_config(index, n_sites: int, local_dim: int = 2) -> np.ndarray:
    idx = np.asarray(index)
    digits = (idx[..., None] // local_dim ** np.arange(n_sites)) % local_dim
    return local_values(local_dim)[digits]


def config_to_index(sigma, local_dim: int = 2) -> np.ndarray:
    sig = np.asarray(sigma)
    vals = local_values(local_dim)
    digits = np.argmax(sig[..., None] == vals, axis=-1)
    return digits @ (local_dim ** np.arange(sig.shape[-1]))


def basis_configs(n_sites: int, local_dim: int = 2) -> np.ndarray:
    """Every configuration, row ``k`` being basis state ``k``."""
    return index_to_config(np.arange(local_dim**n_sites), n_sites, local_dim)


# amplitudes --------------------------------------------------------------


def brute_force_amplitude(weights, shape: NetworkShape, sigma) -> complex:
    """Literal sum of exp(-E_nw(sigma, h, d)) over every hidden and deep configuration."""
    if isinstance(weights, TiedWeights):
        weights = tie(weights, shape)
    validate(shape, weights)
    sig = as_config(sigma, shape)
    N, NT, n, m = shape.n_sites, shape.n_blocks, shape.deep_per_block, shape.hidden_per_block
    n_hidden, n_deep = m * NT, n * NT
    if n_hidden + n_deep > MAX_BRUTE_FORCE_BITS:
        raise TooLarge(f"{n_hidden + n_deep} auxiliary spins exceed {MAX_BRUTE_FORCE_BITS}")
    d_all = index_to_config(np.arange(2**n_deep), n_deep).astype(float).reshape(-1, NT, n)
    h_all = index_to_config(np.arange(2**n_hidden), n_hidden).astype(float).reshape(-1, NT, m)
    d_next = np.roll(d_all, -1, axis=1)
    # field on hidden unit (j, mu) for every deep configuration
    field = (
        weights.b[None]
        + (sig @ weights.w.reshape(N, -1)).reshape(NT, m)[None]
        + np.einsum("jmn,Djn->Djm", weights.w_tilde, d_all)
        + np.einsum("jmn,Djn->Djm", weights.w_hat, d_next)
    ).reshape(len(d_all), -1)
    deep_bias = np.einsum("jn,Djn->D", weights.a, d_all)
    energy = (
        -(sig @ weights.c)
        - deep_bias[None, :]
        + h_all.reshape(len(h_all), -1) @ field.T
    )
    return complex(np.exp(-energy).sum())


def rbm_amplitude(weights: GtmsWeights, sigma) -> complex:
    """Closed-form RBM amplitude e^{c.sigma} prod_{j,mu} 2 cosh(b + sum_i sigma_i w_ij)."""
    sig = np.asarray(sigma, dtype=float)
    N = len(sig)
    theta = weights.b + (sig @ weights.w.reshape(N, -1)).reshape(weights.b.shape)
    return complex(np.exp(sig @ weights.c) * np.prod(2 * np.cosh(theta)))


@dataclass(frozen=True)
class StateVector:
    """Amplitudes in the shared basis order, rescaled so that max |amplitude| = 1.

    The true amplitudes are ``amplitudes * exp(log_offset)``.
    """

    amplitudes: np.ndarray
    n_sites: int
    local_dim: int = 2
    log_offset: float = 0.0

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> np.ndarray:
        nrm = self.norm
        if nrm == 0:
            raise ZeroState("state vector is identically zero")
        return self.amplitudes / nrm


def full_state_vector(weights, shape: NetworkShape) -> StateVector:
    if shape.n_sites > MAX_STATE_SITES:
        raise TooLarge(f"n_sites = {shape.n_sites} exceeds {MAX_STATE_SITES}")
    configs = basis_configs(shape.n_sites, shape.local_dim)
    logs = Evaluator(weights, shape).log_psi(configs)
    return state_from_logs(logs, shape.n_sites, shape.local_dim)


def state_from_logs(logs: np.ndarray, n_sites: int, local_dim: int = 2) -> StateVector:
    top = np.max(logs.real)
    if top == -np.inf:
        return StateVector(np.zeros(len(logs), complex), n_sites, local_dim, 0.0)
    return StateVector(np.exp(logs - top), n_sites, local_dim, float(top))


def exact_renyi2(state: StateVector, ell: int) -> float:
    """-ln tr(rho_A^2) for A = sites 1..ell, from the Schmidt values."""
    N, q = state.n_sites, state.local_dim
    if not 1 <= ell <= N - 1:
        raise ValueError(f"ell must lie in [1, {N - 1}], got {ell}")
    psi = state.normalized()
    # site 1 is the fastest index, so A occupies the trailing (column) axis
    mat = psi.reshape(q ** (N - ell), q**ell)
    s = np.linalg.svd(mat, compute_uv=False)
    p = s**2
    return float(-math.log(np.sum(p**2) / np.sum(p) ** 2))


# exact diagonalization ---------------------------------------------------


def sector_basis(n_sites: int, magnetization: int | None) -> np.ndarray:
    """Basis indices (ascending) with sum(sigma) == magnetization (all if None)."""
    if n_sites > MAX_STATE_SITES:
        raise TooLarge(f"n_sites = {n_sites} exceeds {MAX_STATE_SITES}")
    if magnetization is None:
        return np.arange(2**n_sites)
    n_down = (n_sites - magnetization) // 2
    if (n_sites - magnetization) % 2 or not 0 <= n_down <= n_sites:
        raise ValueError(f"no configurations with magnetization {magnetization}")
    idx = [sum(1 << i for i in combo) for combo in itertools.combinations(range(n_sites), n_down)]
    return np.array(sorted(idx), dtype=np.int64)


def xxz_hamiltonian(model: XxzModel, magnetization: int | None = 0) -> tuple[scipy.sparse.csr_matrix, np.ndarray]:
    """Sparse H restricted to a magnetization sector, and the sector's basis indices."""
    N = model.n_sites
    basis = sector_basis(N, magnetization)
    configs = index_to_config(basis, N).astype(np.int64)
    pos = {int(k): r for r, k in enumerate(basis)}
    rows, cols, vals = [], [], []
    right = np.roll(configs, -1, axis=1)
    diag = model.Delta * (configs * right).sum(axis=1) / 4.0
    rows.extend(range(len(basis)))
    cols.extend(range(len(basis)))
    vals.extend(diag.tolist())
    for j in range(N):
        k = (j + 1) % N
        anti = configs[:, j] != configs[:, k]
        flipped = basis[anti] ^ ((1 << j) | (1 << k))
        src = np.nonzero(anti)[0]
        rows.extend(src.tolist())
        cols.extend(pos[int(f)] for f in flipped)
        vals.extend([-model.J / 2.0] * len(src))
    H = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(len(basis), len(basis)))
    H.sum_duplicates()
    return H, basis


def lanczos_ground_state(matvec, dim: int, rng: np.random.Generator, krylov_max: int = 300,
                         tol: float = 1e-10, max_restarts: int = 20) -> tuple[float, np.ndarray, float]:
    """Lowest eigenpair of a real symmetric operator by restarted Lanczos with
    full reorthogonalization.  Returns (energy, vector, residual norm)."""
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    kmax = min(krylov_max, dim)
    best = None
    for _ in range(max_restarts + 1):
        V = np.zeros((kmax, dim))
        alpha = np.zeros(kmax)
        beta = np.zeros(kmax)
        V[0] = v
        k_used = kmax
        for k in range(kmax):
            w = matvec(V[k])
            alpha[k] = V[k] @ w
            w -= alpha[k] * V[k]
            if k > 0:
                w -= beta[k - 1] * V[k - 1]
            for _pass in range(2):
                w -= V[: k + 1].T @ (V[: k + 1] @ w)
            b = np.linalg.norm(w)
            if k + 1 == kmax or b < 1e-13:
                k_used = k + 1
                break
            beta[k] = b
            V[k + 1] = w / b
            if k >= 4 and k % 5 == 0:
                evals, evecs = scipy.linalg.eigh_tridiagonal(alpha[: k + 1], beta[:k])
                if abs(b * evecs[-1, 0]) < tol * 1e-2:
                    k_used = k + 1
                    break
        evals, evecs = scipy.linalg.eigh_tridiagonal(alpha[:k_used], beta[: k_used - 1])
        vec = V[:k_used].T @ evecs[:, 0]
        vec /= np.linalg.norm(vec)
        energy = float(evals[0])
        resid = float(np.linalg.norm(matvec(vec) - energy * vec))
        if best is None or resid < best[2]:
            best = (energy, vec, resid)
        if resid <= tol:
            return energy, vec, resid
        v = vec
    raise NoConvergence(f"Lanczos residual {best[2]:.2e} above {tol:.0e}")


def ed_ground_state(model: XxzModel, magnetization: int | None = 0, method: str = "auto",
                    seed: int = 0) -> tuple[float, np.ndarray, float]:
    """Ground state of the XXZ chain in a magnetization sector.

    Returns ``(energy, vector, residual)``; the vector is indexed by
    ``sector_basis(n_sites, magnetization)``.  ``method`` is ``"dense"``,
    ``"lanczos"`` or ``"auto"`` (Lanczos).
    """
    H, basis = xxz_hamiltonian(model, magnetization)
    if method == "dense":
        if model.n_sites > MAX_DENSE_SITES:
            raise TooLarge(f"dense ED limited to n_sites <= {MAX_DENSE_SITES}")
        evals, evecs = np.linalg.eigh(H.toarray())
        vec = evecs[:, 0]
        energy = float(evals[0])
        resid = float(np.linalg.norm(H @ vec - energy * vec))
        return energy, vec, resid
    if method not in ("auto", "lanczos"):
        raise ValueError(f"unknown method {method!r}")
    if len(basis) == 1:
        energy = float(H[0, 0])
        return energy, np.ones(1), 0.0
    return lanczos_ground_state(lambda x: H @ x, len(basis), np.random.default_rng(seed))


def ed_cache_record(model: XxzModel, magnetization: int | None = 0, seed: int = 0) -> dict:
    energy, _, resid = ed_ground_state(model, magnetization, "lanczos", seed)
    return {
        "n_sites": model.n_sites,
        "J": model.J,
        "Delta": model.Delta,
        "sector": magnetization,
        "energy": energy,
        "residual": resid,
        "method": "lanczos",
        "seed": seed,
    }


def cached_ground_energy(model: XxzModel, magnetization: int | None = 0,
                         cache_dir: str | Path | None = None, seed: int = 0) -> float:
    """Ground energy, read from / written to ``cache_dir`` as JSON when given."""
    if cache_dir is None:
        return ed_ground_state(model, magnetization, seed=seed)[0]
    path = Path(cache_dir) / ed_cache_name(model, magnetization)
    if path.exists():
        return json.loads(path.read_text())["energy"]
    record = ed_cache_record(model, magnetization, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record["energy"]


def ed_cache_name(model: XxzModel, magnetization: int | None) -> str:
    sector = "all" if magnetization is None else str(magnetization)
    return f"ed_N{model.n_sites}_J{model.J:g}_D{model.Delta:g}_M{sector}.json"


def exact_energy(logs: np.ndarray, model: XxzModel, magnetization: int | None = None) -> float:
    """<psi|H|psi>/<psi|psi> from log amplitudes indexed by ``sector_basis(N, magnetization)``."""
    psi = state_from_logs(np.asarray(logs), model.n_sites).normalized()
    H, _ = xxz_hamiltonian(model, magnetization)
    return float(np.real(np.vdot(psi, H @ psi)))


def variational_energy(weights, shape: NetworkShape, model: XxzModel,
                       magnetization: int | None = 0) -> float:
    """Exact energy of the network state projected onto a magnetization sector."""
    basis = sector_basis(model.n_sites, magnetization)
    logs = Evaluator(weights, shape).log_psi(index_to_config(basis, model.n_sites))
    return exact_energy(logs, model, magnetization)
