"""Matrix product states as GTMS blocks.

A single block with one physical spin, ``n`` deep and ``m`` hidden units
defines a tensor ``A[s, alpha, beta]`` with ``chi = 2**n`` bond states.  This
module builds such tensors, the AKLT embedding, and fits block weights to a
target tensor by full-batch gradient descent on the relative Frobenius
distance.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .amplitude import ScaledAmplitude, _rescale
from .errors import DimensionMismatch, NonFinite, ShapeMismatch
from .model import Boundary, GtmsWeights, NetworkShape, deep_table, local_values

BLOCK_FIELDS = ("c", "b", "a", "w", "w_tilde", "w_hat")


@dataclass(frozen=True)
class MpsTensor:
    """``data[q, a, a']`` is the matrix of local state ``local_values[q]``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.complex128, copy=True)
        if arr.ndim != 3:
            raise ShapeMismatch(f"MPS tensor must be 3-dimensional, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFinite("MPS tensor has non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def local_dim(self) -> int:
        return self.data.shape[0]

    @property
    def chi(self) -> int:
        return self.data.shape[1]

    @property
    def n_elements(self) -> int:
        return self.data.size


@dataclass(frozen=True, eq=False)
class BlockWeights:
    c: complex
    b: np.ndarray
    a: np.ndarray
    w: np.ndarray
    w_tilde: np.ndarray
    w_hat: np.ndarray
    local_dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "c", complex(self.c))
        for name in BLOCK_FIELDS[1:]:
            arr = np.array(getattr(self, name), dtype=np.complex128, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        m, n = self.m, self.n
        expect = {"b": (m,), "a": (n,), "w": (m,), "w_tilde": (m, n), "w_hat": (m, n)}
        for name, s in expect.items():
            if getattr(self, name).shape != s:
                raise DimensionMismatch(name, s, getattr(self, name).shape)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def chi(self) -> int:
        return 2**self.n

    @property
    def n_params(self) -> int:
        return block_param_count(self.n, self.m)

    @classmethod
    def zeros(cls, n: int, m: int, local_dim: int = 2) -> "BlockWeights":
        return cls(0, np.zeros(m), np.zeros(n), np.zeros(m), np.zeros((m, n)),
                   np.zeros((m, n)), local_dim)

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator, local_dim: int = 2,
               width: float = 0.2) -> "BlockWeights":
        """Real and imaginary parts uniform on ``[-width/2, width/2]``."""
        size = block_param_count(n, m)
        z = rng.uniform(-width / 2, width / 2, size) + 1j * rng.uniform(-width / 2, width / 2, size)
        return cls.from_vector(z, n, m, local_dim)

    def to_vector(self) -> np.ndarray:
        """Complex coordinates in the order c, b, a, w, w_tilde, w_hat."""
        return np.concatenate([[self.c], self.b, self.a, self.w,
                               self.w_tilde.ravel(), self.w_hat.ravel()])

    @classmethod
    def from_vector(cls, z, n: int, m: int, local_dim: int = 2) -> "BlockWeights":
        z = np.asarray(z, dtype=np.complex128)
        if z.shape != (block_param_count(n, m),):
            raise DimensionMismatch("vector", (block_param_count(n, m),), z.shape)
        i = np.cumsum([1, m, n, m, m * n])
        return cls(z[0], z[1:i[1]], z[i[1]:i[2]], z[i[2]:i[3]],
                   z[i[3]:i[4]].reshape(m, n), z[i[4]:].reshape(m, n), local_dim)

    def to_real(self) -> np.ndarray:
        z = self.to_vector()
        return np.column_stack([z.real, z.imag]).ravel()

    @classmethod
    def from_real(cls, x, n: int, m: int, local_dim: int = 2) -> "BlockWeights":
        x = np.asarray(x, dtype=np.float64)
        return cls.from_vector(x[0::2] + 1j * x[1::2], n, m, local_dim)

    def replace(self, **changes) -> "BlockWeights":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        def pairs(v):
            v = np.asarray(v)
            return np.stack([v.real, v.imag], axis=-1).tolist()

        doc = {name: pairs(getattr(self, name)) for name in BLOCK_FIELDS}
        doc["local_dim"] = self.local_dim
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "BlockWeights":
        def unpairs(v):
            arr = np.asarray(v, dtype=float)
            return arr[..., 0] + 1j * arr[..., 1]

        return cls(**{name: unpairs(doc[name]) for name in BLOCK_FIELDS},
                   local_dim=int(doc.get("local_dim", 2)))


def block_param_count(n: int, m: int) -> int:
    """Complex parameters of one block: 1 + 2m + n + 2mn."""
    return 1 + 2 * m + n + 2 * m * n


def hidden_units_for(n: int, local_dim: int = 2) -> int:
    """Smallest ``m`` with at least as many parameters as tensor elements."""
    n_el = local_dim * 4**n
    return max(1, math.ceil((n_el - 1 - n) / (2 * (n + 1))))


# block tensors -----------------------------------------------------------


def _angles(block: BlockWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """phi[s, mu, al, be], the local values and the deep-state table."""
    vals = local_values(block.local_dim).astype(float)
    D = deep_table(block.n)
    phi = (
        block.b[None, :, None, None]
        + vals[:, None, None, None] * block.w[None, :, None, None]
        + (block.w_tilde @ D.T)[None, :, :, None]
        + (block.w_hat @ D.T)[None, :, None, :]
    )
    return phi, vals, D


def block_tensors(block: BlockWeights) -> np.ndarray:
    """``e^{c s} T(s)`` for every local value, shape ``(local_dim, chi, chi)``."""
    phi, vals, D = _angles(block)
    prefactor = np.exp(block.c * vals[:, None] + (D @ block.a)[None, :])
    return prefactor[:, :, None] * np.prod(2 * np.cosh(phi), axis=1)


def block_tensor(block: BlockWeights, sigma) -> np.ndarray:
    """``e^{c sigma} T(sigma)`` for a single local value."""
    vals = local_values(block.local_dim)
    hit = np.nonzero(vals == sigma)[0]
    if len(hit) != 1:
        raise ValueError(f"{sigma!r} is not a local value for local_dim={block.local_dim}")
    return block_tensors(block)[hit[0]]


# AKLT --------------------------------------------------------------------

AKLT_PREFACTOR = math.sqrt(2.0 / 3.0) * 2.0**-2
_S = 2.0 / math.sqrt(3.0)
AKLT_MATRICES = {
    1: _S * np.array([[0.0, 1.0 / math.sqrt(2.0)], [0.0, 0.0]]),
    0: _S * np.array([[-0.5, 0.0], [0.0, 0.5]]),
    -1: _S * np.array([[0.0, 0.0], [-1.0 / math.sqrt(2.0), 0.0]]),
}


def aklt_weights() -> BlockWeights:
    """Spin-1 block with n = 1, m = 2 whose scaled tensor is the AKLT tensor."""
    q = math.pi / 4
    return BlockWeights(
        c=0,
        b=[0, -2j * q],
        a=[0],
        w=[1j * q, 2j * q],
        w_tilde=[[-1j * q], [3j * q]],
        w_hat=[[0], [3j * q]],
        local_dim=3,
    )


def aklt_tensor() -> MpsTensor:
    vals = local_values(3)
    return MpsTensor(np.stack([AKLT_MATRICES[int(v)] for v in vals]))


# random targets ------------------------------------------------------------


def random_mps_tensor(chi: int, local_dim: int, rng: np.random.Generator) -> MpsTensor:
    """I.i.d. complex standard normal entries, scaled to unit Frobenius norm."""
    if chi < 1 or local_dim < 1:
        raise ValueError("chi and local_dim must be >= 1")
    shape = (local_dim, chi, chi)
    data = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
    return MpsTensor(data / np.linalg.norm(data))


# cost ----------------------------------------------------------------------


def _check_target(block: BlockWeights, target: MpsTensor) -> None:
    expect = (block.local_dim, block.chi, block.chi)
    if target.data.shape != expect:
        raise ShapeMismatch(f"target shape {target.data.shape} does not match block {expect}")


def d_rel(block: BlockWeights, target: MpsTensor) -> float:
    """||T - A||^2 / ||A||^2 over all local values and bond indices."""
    _check_target(block, target)
    A = target.data
    return float(np.sum(np.abs(block_tensors(block) - A) ** 2) / np.sum(np.abs(A) ** 2))


def d_rel_and_gradient(block: BlockWeights, target: MpsTensor) -> tuple[float, np.ndarray]:
    """D_rel and its gradient over the interleaved (Re, Im) parameter vector."""
    _check_target(block, target)
    A = target.data
    norm_a = np.sum(np.abs(A) ** 2)
    phi, vals, D = _angles(block)
    cosh2 = 2 * np.cosh(phi)
    sinh2 = 2 * np.sinh(phi)
    prefactor = np.exp(block.c * vals[:, None] + (D @ block.a)[None, :])[:, None, :, None]
    m = block.m
    # leave-one-out products over the hidden axis
    ones = np.ones_like(cosh2[:, :1])
    before = np.cumprod(np.concatenate([ones, cosh2[:, :-1]], axis=1), axis=1)
    after = np.cumprod(np.concatenate([ones, cosh2[:, :0:-1]], axis=1), axis=1)[:, ::-1]
    T = prefactor[:, 0] * before[:, -1] * cosh2[:, -1]
    dT_dphi = prefactor * before * after * sinh2
    R = T - A
    G = np.conj(R)
    GT = G * T
    U = G[:, None] * dT_dphi
    g = np.concatenate([
        [np.sum(GT * vals[:, None, None])],
        U.sum(axis=(0, 2, 3)),
        np.einsum("sab,an->n", GT, D),
        np.einsum("smab,s->m", U, vals),
        np.einsum("smab,an->mn", U, D).ravel(),
        np.einsum("smab,bn->mn", U, D).ravel(),
    ])
    assert len(g) == block_param_count(block.n, m)
    grad = np.empty(2 * len(g))
    grad[0::2] = 2 * g.real / norm_a
    grad[1::2] = -2 * g.imag / norm_a
    return float(np.sum(np.abs(R) ** 2) / norm_a), grad


def d_rel_gradient(block: BlockWeights, target: MpsTensor) -> np.ndarray:
    return d_rel_and_gradient(block, target)[1]


# optimizers ----------------------------------------------------------------


class OptimizerKind(str, enum.Enum):
    SGD = "sgd"
    ADAGRAD = "adagrad"
    ADAM = "adam"


_DEFAULT_RATES = {OptimizerKind.SGD: 1e-2, OptimizerKind.ADAGRAD: 0.1, OptimizerKind.ADAM: 1e-2}


@dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if self.learning_rate is None:
            object.__setattr__(self, "learning_rate", _DEFAULT_RATES[self.kind])
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def build(self, size: int) -> "Optimizer":
        if self.kind is OptimizerKind.SGD:
            return Sgd(self)
        if self.kind is OptimizerKind.ADAGRAD:
            return AdaGrad(self, size)
        return Adam(self, size)


class Optimizer:
    def __init__(self, config: OptimizerConfig):
        self.config = config

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Sgd(Optimizer):
    def step(self, x, grad):
        return x - self.config.learning_rate * grad


class AdaGrad(Optimizer):
    def __init__(self, config, size):
        super().__init__(config)
        self.accum = np.zeros(size)

    def step(self, x, grad):
        self.accum += grad**2
        return x - self.config.learning_rate * grad / (np.sqrt(self.accum) + self.config.eps)


class Adam(Optimizer):
    def __init__(self, config, size):
        super().__init__(config)
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x, grad):
        c = self.config
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad**2
        m_hat = self.m / (1 - c.beta1**self.t)
        v_hat = self.v / (1 - c.beta2**self.t)
        return x - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


# training ------------------------------------------------------------------


@dataclass
class TrainReport:
    iterations: int
    d_rel_history: list[float]
    grad_norm_history: list[float]
    elapsed_history: list[float]
    final_d_rel: float
    wall_time: float
    optimizer: OptimizerConfig
    stop_reason: str
    n_params: int = 0
    n_elements: int = 0

    @property
    def param_ratio(self) -> float:
        return self.n_params / self.n_elements

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "d_rel", "grad_norm", "elapsed_seconds"])
            for i, row in enumerate(zip(self.d_rel_history, self.grad_norm_history,
                                        self.elapsed_history)):
                writer.writerow([i, *(repr(float(v)) for v in row)])


def train_tensor(target: MpsTensor, n: int, m: int,
                 optimizer: OptimizerConfig = OptimizerConfig(),
                 rng: np.random.Generator | None = None, max_iterations: int = 50_000,
                 tolerance: float = 0.0, grad_tolerance: float = 1e-10,
                 init_width: float = 0.2) -> tuple[BlockWeights, TrainReport]:
    """Fit block weights to ``target`` by full-batch gradient descent on D_rel.

    Stops after ``max_iterations`` updates, or once D_rel <= ``tolerance`` or
    the gradient norm drops below ``grad_tolerance``.  Histories hold the
    value before each update plus the final value.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if target.chi != 2**n:
        raise ShapeMismatch(f"target bond dimension {target.chi} != 2**{n}")
    rng = np.random.default_rng() if rng is None else rng
    q = target.local_dim
    x = BlockWeights.random(n, m, rng, q, init_width).to_real()
    opt = optimizer.build(len(x))
    hist_d, hist_g, hist_t = [], [], []
    t0 = time.perf_counter()
    reason = "max_iterations"
    it = 0
    while True:
        value, grad = d_rel_and_gradient(BlockWeights.from_real(x, n, m, q), target)
        gnorm = float(np.linalg.norm(grad))
        if not (math.isfinite(value) and math.isfinite(gnorm)):
            raise NonFinite(f"optimizer diverged at iteration {it}")
        hist_d.append(value)
        hist_g.append(gnorm)
        hist_t.append(time.perf_counter() - t0)
        if value <= tolerance:
            reason = "tolerance"
            break
        if gnorm < grad_tolerance:
            reason = "gradient"
            break
        if it >= max_iterations:
            break
        x = opt.step(x, grad)
        it += 1
    block = BlockWeights.from_real(x, n, m, q)
    return block, TrainReport(
        iterations=it,
        d_rel_history=hist_d,
        grad_norm_history=hist_g,
        elapsed_history=hist_t,
        final_d_rel=hist_d[-1],
        wall_time=time.perf_counter() - t0,
        optimizer=optimizer,
        stop_reason=reason,
        n_params=block_param_count(n, m),
        n_elements=target.n_elements,
    )


# many-site MPS -------------------------------------------------------------


def mps_amplitude(tensors: Sequence[MpsTensor], sigma,
                  boundary: Boundary = Boundary.PERIODIC) -> ScaledAmplitude:
    """tr(prod_i A_i[sigma_i]).

    Open chains use a ``(q, 1, chi)`` first and ``(q, chi, 1)`` last tensor.
    """
    boundary = Boundary(boundary)
    sig = np.asarray(sigma)
    if len(tensors) != len(sig):
        raise DimensionMismatch("tensors", (len(sig),), (len(tensors),))
    for k in range(len(tensors)):
        left = tensors[k].data.shape[2]
        right = tensors[(k + 1) % len(tensors)].data.shape[1]
        if k + 1 < len(tensors) and left != right:
            raise DimensionMismatch(f"bond {k}", (left,), (right,))
    first, last = tensors[0].data.shape[1], tensors[-1].data.shape[2]
    if boundary is Boundary.PERIODIC and first != last:
        raise DimensionMismatch("closing bond", (first,), (last,))
    if boundary is Boundary.OPEN and (first, last) != (1, 1):
        raise DimensionMismatch("open ends", (1, 1), (first, last))
    log_scale = 0.0
    M = None
    for A, s in zip(tensors, sig):
        vals = local_values(A.local_dim)
        hit = np.nonzero(vals == s)[0]
        if len(hit) != 1:
            raise ValueError(f"{s!r} is not a local value for local_dim={A.local_dim}")
        mat = A.data[hit[0]]
        M = mat if M is None else M @ mat
        M, ls = _rescale(M)
        log_scale += ls
    return ScaledAmplitude.from_parts(np.trace(M), log_scale)


def extract_mps_tensors(weights: GtmsWeights, shape: NetworkShape) -> list[MpsTensor]:
    """Per-site tensors of an MPS-only network (one block per site)."""
    if shape.n_blocks != shape.n_sites:
        raise ShapeMismatch("MPS extraction needs one block per site")
    if not weights.is_mps_only():
        raise ValueError("weights couple sites to other blocks; not an MPS")
    N = shape.n_sites
    tensors = []
    for i in range(N):
        w_hat = weights.w_hat[i]
        block = BlockWeights(weights.c[i], weights.b[i], weights.a[i], weights.w[i, i],
                             weights.w_tilde[i], w_hat, shape.local_dim)
        data = block_tensors(block)
        if shape.boundary is Boundary.OPEN:
            if i == 0:
                data = data.sum(axis=1, keepdims=True)
            if i == N - 1:
                data = data[:, :, :1]
        tensors.append(MpsTensor(data))
    return tensors
