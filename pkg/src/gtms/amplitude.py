"""Exact GTMS amplitudes from products of transfer matrices.

Two evaluation routes are provided.  ``transfer_matrix`` / ``amplitude``
follow the closed-form expressions literally with numpy and are meant for
single configurations and as a reference.  ``Evaluator`` precomputes the
configuration-independent parts of every block and contracts whole batches
of configurations in compiled code; the samplers and the optimizer use it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import AmplitudeTooSmall, DimensionMismatch, NonFinite, ZeroDenominator
from .model import (
    Boundary,
    GtmsWeights,
    NetworkShape,
    ParamLayout,
    TiedWeights,
    deep_table,
    tie,
    validate,
)

DEFAULT_PSI_FLOOR = 1e-280


@dataclass(frozen=True)
class ScaledAmplitude:
    """``value = mantissa * exp(log_scale)`` with ``1 <= |mantissa| < e``.

    Zero is stored canonically as ``(0, 0)``.
    """

    mantissa: complex
    log_scale: float

    @classmethod
    def from_parts(cls, value: complex, log_scale: float = 0.0) -> "ScaledAmplitude":
        value = complex(value)
        if value == 0:
            return cls(0j, 0.0)
        if not (np.isfinite(value.real) and np.isfinite(value.imag) and np.isfinite(log_scale)):
            raise NonFinite(f"non-finite amplitude ({value}, {log_scale})")
        k = math.floor(math.log(abs(value)))
        mantissa = value * math.exp(-k)
        # guard the half-open interval against rounding at the edges
        if abs(mantissa) >= math.e:
            mantissa /= math.e
            k += 1
        elif abs(mantissa) < 1.0:
            mantissa *= math.e
            k -= 1
        return cls(mantissa, float(log_scale) + k)

    @classmethod
    def from_log(cls, log_value: complex) -> "ScaledAmplitude":
        log_value = complex(log_value)
        if log_value.real == -np.inf:
            return cls(0j, 0.0)
        return cls.from_parts(np.exp(1j * log_value.imag), log_value.real)

    @property
    def is_zero(self) -> bool:
        return self.mantissa == 0

    def log(self) -> complex:
        """Natural log; the imaginary part lies in (-pi, pi]."""
        if self.is_zero:
            return complex(-np.inf, 0.0)
        return self.log_scale + complex(np.log(self.mantissa))

    def log_abs(self) -> float:
        return -np.inf if self.is_zero else self.log_scale + math.log(abs(self.mantissa))

    def value(self) -> complex:
        return self.mantissa * math.exp(self.log_scale)

    def __truediv__(self, other: "ScaledAmplitude") -> complex:
        if other.is_zero:
            raise ZeroDenominator("division by a zero amplitude")
        return (self.mantissa / other.mantissa) * math.exp(self.log_scale - other.log_scale)


def as_config(sigma, shape: NetworkShape) -> np.ndarray:
    sig = np.asarray(sigma)
    if sig.shape != (shape.n_sites,):
        raise DimensionMismatch("sigma", (shape.n_sites,), sig.shape)
    if not np.all(np.isin(sig, shape.values)):
        raise ValueError(f"sigma entries must be in {shape.values.tolist()}")
    return sig.astype(np.float64)


def _as_gtms(weights, shape: NetworkShape) -> GtmsWeights:
    if isinstance(weights, TiedWeights):
        return tie(weights, shape)
    return weights


def block_angles(weights: GtmsWeights, shape: NetworkShape, j: int, sigma: np.ndarray,
                 include_next: bool = True) -> np.ndarray:
    """Angles ``phi[mu, alpha, beta]`` of block ``j`` (row: own deep label)."""
    D = deep_table(shape.deep_per_block)
    local = weights.b[j] + sigma @ weights.w[:, j, :]
    own = weights.w_tilde[j] @ D.T  # (m, chi)
    phi = local[:, None, None] + own[:, :, None]
    if include_next:
        nxt = weights.w_hat[j] @ D.T
        phi = phi + nxt[:, None, :]
    else:
        phi = np.broadcast_to(phi, phi.shape[:2] + (shape.chi,))
    return phi


def transfer_matrix(weights, shape: NetworkShape, j: int, sigma) -> np.ndarray:
    """Unscaled ``T_j(sigma)[alpha, beta] = e^{a_j.d_alpha} prod_mu 2 cosh(phi)``."""
    weights = _as_gtms(weights, shape)
    validate(shape, weights)
    sig = as_config(sigma, shape)
    D = deep_table(shape.deep_per_block)
    phi = block_angles(weights, shape, j, sig)
    bias = np.exp(D @ weights.a[j])
    return bias[:, None] * np.prod(2 * np.cosh(phi), axis=0)


def _log2cosh(z: np.ndarray) -> np.ndarray:
    s = np.where(z.real >= 0, 1.0, -1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return s * z + np.log1p(np.exp(-2 * s * z))


def _scaled_block(phi: np.ndarray, log_bias: np.ndarray) -> tuple[np.ndarray, float]:
    """Return ``(T_hat, log_scale)`` with ``T = T_hat e^{log_scale}`` and max|T_hat| = 1.

    The product over hidden units is summed in log space, so large angles
    cannot overflow; branch choices of the complex logs cancel on
    exponentiation.
    """
    logs = log_bias[:, None] + _log2cosh(phi).sum(axis=0)
    top = np.max(logs.real)
    if top == -np.inf:
        return np.zeros(logs.shape, complex), -np.inf
    if not np.isfinite(top):
        raise NonFinite("non-finite transfer matrix entry")
    return np.exp(logs - top), float(top)


def _rescale(M: np.ndarray) -> tuple[np.ndarray, float]:
    top = np.max(np.abs(M))
    if top == 0:
        return M, -np.inf
    if not np.isfinite(top):
        raise NonFinite("non-finite running product")
    return M / top, math.log(top)


def amplitude(weights, shape: NetworkShape, sigma) -> ScaledAmplitude:
    """psi_w(sigma) as a trace (periodic) or boundary-vector product (open)."""
    weights = _as_gtms(weights, shape)
    validate(shape, weights)
    sig = as_config(sigma, shape)
    D = deep_table(shape.deep_per_block)
    NT = shape.n_blocks
    log_total = float(np.real(sig @ weights.c))
    phase = np.exp(1j * np.imag(sig @ weights.c))

    def block(j, include_next=True):
        return _scaled_block(block_angles(weights, shape, j, sig, include_next), D @ weights.a[j])

    if shape.boundary is Boundary.PERIODIC:
        M = np.eye(shape.chi, dtype=complex)
        for j in range(NT):
            T, s = block(j)
            M, r = _rescale(M @ T)
            log_total += s + r
        value = np.trace(M)
    else:
        # row vector 1^T T_1, bulk T_2..T_{NT-1}, column vector from angles without w_hat
        v = np.ones(shape.chi, dtype=complex)
        for j in range(NT - 1):
            T, s = block(j)
            v, r = _rescale(v @ T)
            log_total += s + r
        last, s = block(NT - 1, include_next=False)
        log_total += s
        value = v @ last[:, 0]
    if value == 0 or log_total == -np.inf:
        return ScaledAmplitude(0j, 0.0)
    return ScaledAmplitude.from_parts(phase * value, log_total)


def log_amplitude_ratio(weights, shape: NetworkShape, sigma_num, sigma_den) -> complex:
    """ln psi(sigma_num) - ln psi(sigma_den); imaginary part in (-pi, pi]."""
    den = amplitude(weights, shape, sigma_den)
    if den.is_zero:
        raise ZeroDenominator("psi(sigma_den) == 0")
    num = amplitude(weights, shape, sigma_num)
    if num.is_zero:
        return complex(-np.inf, 0.0)
    ratio = num.mantissa / den.mantissa
    return (num.log_scale - den.log_scale) + complex(np.log(ratio))


class Evaluator:
    """Batched evaluation of ln psi and its parameter derivatives.

    Configuration-independent block data is computed once per weight set, so
    build a new evaluator after every parameter update.
    """

    def __init__(self, weights, shape: NetworkShape):
        weights = _as_gtms(weights, shape)
        validate(shape, weights)
        self.shape = shape
        self.weights = weights
        D = deep_table(shape.deep_per_block)
        self._D = np.ascontiguousarray(D)
        X = (
            weights.b[:, :, None, None]
            + np.einsum("jmn,an->jma", weights.w_tilde, D)[:, :, :, None]
            + np.einsum("jmn,bn->jmb", weights.w_hat, D)[:, :, None, :]
        )
        self._X = np.ascontiguousarray(X)
        with np.errstate(over="ignore"):
            self._Ep = np.exp(X)
            self._Em = np.exp(-X)
        self._logA = np.ascontiguousarray((weights.a @ D.T).astype(complex))
        with np.errstate(over="ignore"):
            self._A = np.exp(self._logA)
        chi = shape.chi
        if shape.boundary is Boundary.PERIODIC:
            closure = np.eye(chi, dtype=complex)
        else:
            closure = np.zeros((chi, chi), complex)
            closure[0, :] = 1.0
        self._closure = closure
        self._w2 = weights.w.reshape(shape.n_sites, -1)
        self._c = weights.c

    def _theta(self, sig: np.ndarray) -> np.ndarray:
        s = self.shape
        return np.ascontiguousarray((sig @ self._w2).reshape(len(sig), s.n_blocks, s.hidden_per_block))

    @staticmethod
    def _configs(sigmas) -> np.ndarray:
        sig = np.asarray(sigmas, dtype=np.float64)
        return sig[None, :] if sig.ndim == 1 else sig

    def log_psi(self, sigmas) -> np.ndarray:
        """ln psi for a ``(B, N)`` batch; zero amplitudes give ``-inf``."""
        sig = self._configs(sigmas)
        out = np.empty(len(sig), dtype=np.complex128)
        if len(sig):
            _kernels.log_psi_kernel(self._theta(sig), self._X, self._Ep, self._Em,
                                    self._logA, self._A, self._closure, out)
        out += sig @ self._c
        bad = np.isnan(out) | (np.isinf(out.real) & (out.real > 0))
        if np.any(bad):
            raise NonFinite("non-finite log amplitude")
        return out

    def log_psi_and_grads(self, sigmas) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """ln psi and holomorphic derivatives w.r.t. the untied ``b, a, w_tilde, w_hat``.

        Derivatives for ``c`` and ``w`` follow from ``sigma`` and ``d/db``; see
        ``ParamLayout.reduce``.
        """
        sig = self._configs(sigmas)
        s = self.shape
        B, NT, m, n = len(sig), s.n_blocks, s.hidden_per_block, s.deep_per_block
        out = np.empty(B, dtype=np.complex128)
        db = np.empty((B, NT, m), dtype=np.complex128)
        da = np.empty((B, NT, n), dtype=np.complex128)
        dwt = np.empty((B, NT, m, n), dtype=np.complex128)
        dwh = np.empty((B, NT, m, n), dtype=np.complex128)
        if B:
            _kernels.log_psi_grad_kernel(self._theta(sig), self._X, self._Ep, self._Em,
                                         self._logA, self._A, self._closure, self._D,
                                         out, db, da, dwt, dwh)
        out += sig @ self._c
        return out, {"b": db, "a": da, "w_tilde": dwt, "w_hat": dwh}

    def log_derivatives(self, sigmas, layout: ParamLayout,
                        floor: float = DEFAULT_PSI_FLOOR) -> tuple[np.ndarray, np.ndarray]:
        """``(ln psi, O)`` where ``O[k, 2p]``/``O[k, 2p+1]`` are d ln psi / d Re, Im of
        layout coordinate ``p`` for configuration ``k``."""
        sig = self._configs(sigmas)
        logpsi, grads = self.log_psi_and_grads(sig)
        small = logpsi.real < math.log(floor)
        if np.any(small):
            raise AmplitudeTooSmall(floor, float(np.min(logpsi.real)))
        g = layout.reduce(sig, grads)
        if not np.all(np.isfinite(g)):
            raise NonFinite("non-finite log-derivative")
        return logpsi, layout.real_derivatives(g)


def log_derivatives(weights, shape: NetworkShape, sigma, layout: ParamLayout,
                    floor: float = DEFAULT_PSI_FLOOR) -> np.ndarray:
    """O_j(sigma) = d ln psi / d x_j for every real coordinate of ``layout``.

    Entries are complex: the derivative with respect to an imaginary part is
    ``1j`` times the one with respect to the matching real part.
    """
    sig = as_config(sigma, shape)
    _, O = Evaluator(layout.to_gtms(weights), shape).log_derivatives(sig[None], layout, floor)
    return O[0]
