"""Network geometry, weight containers, translation-invariant tying and the
flat real parameter layout used by the optimizers.

Deep-spin configurations of one block are labelled by an integer ``alpha`` in
``[0, 2**n)``: bit ``nu`` of ``alpha`` is 0 for ``d^nu = +1`` and 1 for
``d^nu = -1`` (``nu = 0`` is the least significant bit).  Transfer matrices
use the deep configuration of block ``j`` as row index and that of block
``j + 1`` as column index.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    DimensionMismatch,
    LengthMismatch,
    OpenBoundaryViolation,
    ShapeMismatch,
)

WEIGHT_FIELDS = ("c", "b", "a", "w", "w_tilde", "w_hat")
JSON_VERSION = 1


class Boundary(str, enum.Enum):
    PERIODIC = "periodic"
    OPEN = "open"


def local_values(local_dim: int) -> np.ndarray:
    """Physical spin values in basis order: (+1, -1) or (+1, 0, -1)."""
    if local_dim == 2:
        return np.array([1, -1], dtype=np.int8)
    if local_dim == 3:
        return np.array([1, 0, -1], dtype=np.int8)
    raise ValueError(f"local_dim must be 2 or 3, got {local_dim}")


def deep_table(n: int) -> np.ndarray:
    """``(2**n, n)`` array with the Ising values ``d^nu`` of every deep label."""
    labels = np.arange(2**n)[:, None]
    bits = (labels >> np.arange(n)[None, :]) & 1
    return (1 - 2 * bits).astype(np.float64)


@dataclass(frozen=True)
class NetworkShape:
    n_sites: int
    deep_per_block: int = 1
    hidden_per_block: int = 1
    n_blocks: int | None = None
    local_dim: int = 2
    boundary: Boundary = Boundary.PERIODIC

    def __post_init__(self):
        if self.n_blocks is None:
            object.__setattr__(self, "n_blocks", self.n_sites)
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        for name in ("n_sites", "n_blocks", "deep_per_block", "hidden_per_block"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.local_dim not in (2, 3):
            raise ValueError(f"local_dim must be 2 or 3, got {self.local_dim!r}")

    @property
    def chi(self) -> int:
        return 2**self.deep_per_block

    @property
    def values(self) -> np.ndarray:
        return local_values(self.local_dim)

    def field_shapes(self) -> dict[str, tuple[int, ...]]:
        N, NT, n, m = self.n_sites, self.n_blocks, self.deep_per_block, self.hidden_per_block
        return {
            "c": (N,),
            "b": (NT, m),
            "a": (NT, n),
            "w": (N, NT, m),
            "w_tilde": (NT, m, n),
            "w_hat": (NT, m, n),
        }

    def to_dict(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "n_blocks": self.n_blocks,
            "deep_per_block": self.deep_per_block,
            "hidden_per_block": self.hidden_per_block,
            "local_dim": self.local_dim,
            "boundary": self.boundary.value,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkShape":
        return cls(**doc)


def _frozen_complex(x) -> np.ndarray:
    arr = np.array(x, dtype=np.complex128, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GtmsWeights:
    """All couplings and biases of a GTMS network (see ``NetworkShape.field_shapes``)."""

    c: np.ndarray
    b: np.ndarray
    a: np.ndarray
    w: np.ndarray
    w_tilde: np.ndarray
    w_hat: np.ndarray

    def __post_init__(self):
        for name in WEIGHT_FIELDS:
            object.__setattr__(self, name, _frozen_complex(getattr(self, name)))

    @classmethod
    def zeros(cls, shape: NetworkShape) -> "GtmsWeights":
        return cls(**{k: np.zeros(s, complex) for k, s in shape.field_shapes().items()})

    @classmethod
    def random(cls, shape: NetworkShape, rng: np.random.Generator,
               real_width: float = 0.2, imag_width: float = 0.2) -> "GtmsWeights":
        """Real and imaginary parts uniform on intervals of the given total widths,
        centred on zero.  Under open boundaries the wrapping ``w_hat`` is zeroed."""
        arrays = {}
        for name, s in shape.field_shapes().items():
            re = rng.uniform(-real_width / 2, real_width / 2, size=s)
            im = rng.uniform(-imag_width / 2, imag_width / 2, size=s)
            arrays[name] = re + 1j * im
        if shape.boundary is Boundary.OPEN:
            arrays["w_hat"][-1] = 0
        return cls(**arrays)

    def replace(self, **changes) -> "GtmsWeights":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in WEIGHT_FIELDS}

    def allclose(self, other: "GtmsWeights", **kw) -> bool:
        return all(
            getattr(self, k).shape == getattr(other, k).shape
            and np.allclose(getattr(self, k), getattr(other, k), **kw)
            for k in WEIGHT_FIELDS
        )

    def __eq__(self, other):
        if not isinstance(other, GtmsWeights):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in WEIGHT_FIELDS)

    # MPS / RBM limits --------------------------------------------------

    def _off_site_mask(self) -> np.ndarray:
        N, NT = self.w.shape[:2]
        return ~np.eye(N, NT, dtype=bool)

    def is_mps_only(self) -> bool:
        return not np.any(self.w[self._off_site_mask()])

    def is_rbm_only(self) -> bool:
        return not (np.any(self.w_tilde) or np.any(self.w_hat) or np.any(self.a))

    def mps_only(self) -> "GtmsWeights":
        """Copy with all physical-hidden couplings ``w_{i,j}``, ``i != j``, removed."""
        w = np.array(self.w)
        w[self._off_site_mask()] = 0
        return self.replace(w=w)

    def rbm_only(self) -> "GtmsWeights":
        """Copy with the hidden-deep couplings and deep biases removed."""
        return self.replace(
            a=np.zeros_like(self.a),
            w_tilde=np.zeros_like(self.w_tilde),
            w_hat=np.zeros_like(self.w_hat),
        )


def validate(shape: NetworkShape, weights: GtmsWeights) -> None:
    for name, expected in shape.field_shapes().items():
        got = getattr(weights, name).shape
        if got != expected:
            raise DimensionMismatch(name, expected, got)
    if shape.boundary is Boundary.OPEN and np.any(weights.w_hat[-1]):
        raise OpenBoundaryViolation(
            "open boundary requires w_hat of the last block (coupling to block 1) to vanish"
        )


# Translation invariance ------------------------------------------------


@dataclass(frozen=True, eq=False)
class TiedWeights:
    """Translation-invariant weights.

    ``w_by_distance[d, mu]`` couples physical site ``i`` to the hidden unit
    ``mu`` of block ``(i + d) mod N``.  Distances above ``rbm_range`` must be
    zero; ``rbm_range = 0`` is the translation-invariant MPS.
    """

    c: complex
    b: np.ndarray
    a: np.ndarray
    w_by_distance: np.ndarray
    w_tilde: np.ndarray
    w_hat: np.ndarray
    rbm_range: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "c", complex(self.c))
        for name in ("b", "a", "w_by_distance", "w_tilde", "w_hat"):
            object.__setattr__(self, name, _frozen_complex(getattr(self, name)))
        N = self.w_by_distance.shape[0]
        if self.rbm_range is None:
            object.__setattr__(self, "rbm_range", N - 1)
        if not 0 <= self.rbm_range < N:
            raise ValueError(f"rbm_range must lie in [0, {N - 1}], got {self.rbm_range}")
        if np.any(self.w_by_distance[self.rbm_range + 1:]):
            raise ValueError("w_by_distance has nonzero entries beyond rbm_range")

    @property
    def n_sites(self) -> int:
        return self.w_by_distance.shape[0]

    @classmethod
    def zeros(cls, shape: NetworkShape, rbm_range: int | None = None) -> "TiedWeights":
        n, m, N = shape.deep_per_block, shape.hidden_per_block, shape.n_sites
        return cls(0, np.zeros(m), np.zeros(n), np.zeros((N, m)),
                   np.zeros((m, n)), np.zeros((m, n)), rbm_range)

    @classmethod
    def random(cls, shape: NetworkShape, rng: np.random.Generator,
               rbm_range: int | None = None,
               real_width: float = 0.2, imag_width: float = 0.2) -> "TiedWeights":
        n, m, N = shape.deep_per_block, shape.hidden_per_block, shape.n_sites
        r = N - 1 if rbm_range is None else rbm_range

        def draw(*s):
            return (rng.uniform(-real_width / 2, real_width / 2, size=s)
                    + 1j * rng.uniform(-imag_width / 2, imag_width / 2, size=s))

        w = np.zeros((N, m), complex)
        c = draw(1)[0]
        b, a = draw(m), draw(n)
        wt, wh = draw(m, n), draw(m, n)
        w[: r + 1] = draw(r + 1, m)
        return cls(c, b, a, w, wt, wh, r)

    def replace(self, **changes) -> "TiedWeights":
        return dataclasses.replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, TiedWeights):
            return NotImplemented
        return (
            self.c == other.c
            and self.rbm_range == other.rbm_range
            and all(np.array_equal(getattr(self, k), getattr(other, k))
                    for k in ("b", "a", "w_by_distance", "w_tilde", "w_hat"))
        )


def add_rbm_couplings(tied: TiedWeights, rng: np.random.Generator, rbm_range: int | None = None,
                      real_width: float = 0.2, imag_width: float = 0.2) -> TiedWeights:
    """Draw fresh couplings for distances ``tied.rbm_range + 1 .. rbm_range``,
    keeping every existing weight unchanged."""
    N, m = tied.w_by_distance.shape
    new_range = N - 1 if rbm_range is None else rbm_range
    if new_range < tied.rbm_range:
        raise ValueError("rbm_range can only grow")
    rows = new_range - tied.rbm_range
    w = np.array(tied.w_by_distance)
    w[tied.rbm_range + 1: new_range + 1] = (
        rng.uniform(-real_width / 2, real_width / 2, size=(rows, m))
        + 1j * rng.uniform(-imag_width / 2, imag_width / 2, size=(rows, m))
    )
    return tied.replace(w_by_distance=w, rbm_range=new_range)


def _check_tieable(shape: NetworkShape):
    if shape.n_blocks != shape.n_sites or shape.boundary is not Boundary.PERIODIC:
        raise ShapeMismatch("tying requires n_blocks == n_sites and periodic boundary")


def tie(tied: TiedWeights, shape: NetworkShape) -> GtmsWeights:
    """Expand translation-invariant weights onto every site and block."""
    _check_tieable(shape)
    N, n, m = shape.n_sites, shape.deep_per_block, shape.hidden_per_block
    expect = {"b": (m,), "a": (n,), "w_by_distance": (N, m), "w_tilde": (m, n), "w_hat": (m, n)}
    for name, s in expect.items():
        if getattr(tied, name).shape != s:
            raise DimensionMismatch(name, s, getattr(tied, name).shape)
    sites = np.arange(N)
    # block j receives site i at distance (j - i) mod N
    dist = (sites[None, :] - sites[:, None]) % N
    return GtmsWeights(
        c=np.full(N, tied.c),
        b=np.tile(tied.b, (N, 1)),
        a=np.tile(tied.a, (N, 1)),
        w=tied.w_by_distance[dist],
        w_tilde=np.tile(tied.w_tilde, (N, 1, 1)),
        w_hat=np.tile(tied.w_hat, (N, 1, 1)),
    )


def untie(weights: GtmsWeights, shape: NetworkShape, rbm_range: int | None = None) -> TiedWeights:
    """Read translation-invariant weights back; raises if ``weights`` are not tied."""
    _check_tieable(shape)
    tied = TiedWeights(
        weights.c[0], weights.b[0], weights.a[0], weights.w[0],
        weights.w_tilde[0], weights.w_hat[0],
        rbm_range if rbm_range is not None else shape.n_sites - 1,
    )
    if tie(tied, shape) != weights:
        raise ValueError("weights are not translation invariant")
    return tied


# Flat real layout ------------------------------------------------------


@dataclass(frozen=True)
class ParamLayout:
    """Ordered map between complex weights and a flat real vector.

    Coordinates are ordered c, b, a, w, w_tilde, w_hat, each row-major; the
    real vector interleaves (Re, Im) of every complex coordinate.  For tied
    layouts ``w`` is ``w_by_distance`` truncated to ``rbm_range``.  Under open
    boundaries the (identically zero) wrapping ``w_hat`` block is not a
    parameter.
    """

    shape: NetworkShape
    tied: bool = False
    rbm_range: int | None = None

    def __post_init__(self):
        if self.tied:
            _check_tieable(self.shape)
            if self.rbm_range is None:
                object.__setattr__(self, "rbm_range", self.shape.n_sites - 1)
        elif self.rbm_range is not None:
            raise ValueError("rbm_range only applies to tied layouts")

    @cached_property
    def field_shapes(self) -> dict[str, tuple[int, ...]]:
        s = self.shape
        n, m = s.deep_per_block, s.hidden_per_block
        if self.tied:
            return {"c": (1,), "b": (m,), "a": (n,), "w": (self.rbm_range + 1, m),
                    "w_tilde": (m, n), "w_hat": (m, n)}
        shapes = dict(s.field_shapes())
        if s.boundary is Boundary.OPEN:
            shapes["w_hat"] = (s.n_blocks - 1, m, n)
        return shapes

    @cached_property
    def entries(self) -> list[tuple[str, tuple[int, ...]]]:
        """``entries[k]`` is the complex coordinate stored at reals ``2k, 2k + 1``."""
        return [(name, idx) for name, s in self.field_shapes.items() for idx in np.ndindex(*s)]

    @property
    def n_complex(self) -> int:
        return sum(int(np.prod(s)) for s in self.field_shapes.values())

    @property
    def size(self) -> int:
        return 2 * self.n_complex

    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, s in self.field_shapes.items():
            stop = start + int(np.prod(s))
            out[name] = slice(start, stop)
            start = stop
        return out

    # complex <-> weights

    def complex_vector(self, weights) -> np.ndarray:
        if self.tied:
            if isinstance(weights, GtmsWeights):
                weights = untie(weights, self.shape, self.rbm_range)
            parts = [np.atleast_1d(weights.c), weights.b, weights.a,
                     weights.w_by_distance[: self.rbm_range + 1],
                     weights.w_tilde, weights.w_hat]
        else:
            validate(self.shape, weights)
            w_hat = weights.w_hat
            if self.shape.boundary is Boundary.OPEN:
                w_hat = w_hat[:-1]
            parts = [weights.c, weights.b, weights.a, weights.w, weights.w_tilde, w_hat]
        return np.concatenate([np.ravel(p) for p in parts]).astype(np.complex128)

    def from_complex(self, z: np.ndarray):
        z = np.asarray(z, dtype=np.complex128)
        if z.shape != (self.n_complex,):
            raise LengthMismatch(f"expected {self.n_complex} complex coordinates, got {z.shape}")
        sl = self.slices()
        parts = {k: z[sl[k]].reshape(s) for k, s in self.field_shapes.items()}
        if self.tied:
            w = np.zeros((self.shape.n_sites, self.shape.hidden_per_block), complex)
            w[: self.rbm_range + 1] = parts["w"]
            return TiedWeights(parts["c"][0], parts["b"], parts["a"], w,
                               parts["w_tilde"], parts["w_hat"], self.rbm_range)
        if self.shape.boundary is Boundary.OPEN:
            w_hat = np.zeros(self.shape.field_shapes()["w_hat"], complex)
            w_hat[:-1] = parts["w_hat"]
            parts["w_hat"] = w_hat
        return GtmsWeights(**parts)

    # real vector

    def flatten(self, weights) -> np.ndarray:
        z = self.complex_vector(weights)
        return np.column_stack([z.real, z.imag]).ravel()

    def unflatten(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.size,):
            raise LengthMismatch(f"expected real vector of length {self.size}, got {x.shape}")
        return self.from_complex(x[0::2] + 1j * x[1::2])

    def to_gtms(self, weights) -> GtmsWeights:
        """Untied weights for any object this layout produces."""
        if isinstance(weights, TiedWeights):
            return tie(weights, self.shape)
        return weights

    # derivatives

    def reduce(self, sigmas: np.ndarray, grads: dict[str, np.ndarray]) -> np.ndarray:
        """Complex derivatives of ln psi per layout coordinate, shape ``(B, N_w)``.

        ``grads`` holds per-sample derivatives with respect to the untied
        ``b, a, w_tilde, w_hat`` arrays; ``c`` and ``w`` derivatives follow
        from ``sigmas`` (``d/dw_{i,j} = sigma_i d/db_j``).
        """
        sig = np.asarray(sigmas, dtype=np.float64)
        B = sig.shape[0]
        db, da, dwt, dwh = grads["b"], grads["a"], grads["w_tilde"], grads["w_hat"]
        if self.tied:
            N = self.shape.n_sites
            j = np.arange(N)
            # w_d couples block j to site (j - d) mod N
            dw = np.stack(
                [np.einsum("bj,bjm->bm", sig[:, (j - d) % N], db) for d in range(self.rbm_range + 1)],
                axis=1,
            )
            parts = [sig.sum(axis=1)[:, None], db.sum(axis=1), da.sum(axis=1), dw,
                     dwt.sum(axis=1), dwh.sum(axis=1)]
        else:
            dw = sig[:, :, None, None] * db[:, None, :, :]
            if self.shape.boundary is Boundary.OPEN:
                dwh = dwh[:, :-1]
            parts = [sig, db, da, dw, dwt, dwh]
        return np.concatenate([p.reshape(B, -1) for p in parts], axis=1).astype(np.complex128)

    @staticmethod
    def real_derivatives(g: np.ndarray) -> np.ndarray:
        """Interleave holomorphic derivatives into (Re, Im) coordinate derivatives."""
        g = np.asarray(g)
        out = np.empty(g.shape[:-1] + (2 * g.shape[-1],), dtype=np.complex128)
        out[..., 0::2] = g
        out[..., 1::2] = 1j * g
        return out


# JSON ------------------------------------------------------------------


def _pairs(arr: np.ndarray):
    arr = np.asarray(arr)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _unpairs(nested) -> np.ndarray:
    arr = np.asarray(nested, dtype=np.float64)
    if arr.shape[-1:] != (2,):
        raise ValueError("complex values must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def weights_to_json(shape: NetworkShape, weights: GtmsWeights) -> dict:
    return {
        "format": "gtms-weights",
        "version": JSON_VERSION,
        "shape": shape.to_dict(),
        "weights": {k: _pairs(getattr(weights, k)) for k in WEIGHT_FIELDS},
    }


def weights_from_json(doc: dict) -> tuple[NetworkShape, GtmsWeights]:
    if doc.get("version") != JSON_VERSION:
        raise ValueError(f"unsupported weights document version {doc.get('version')!r}")
    shape = NetworkShape.from_dict(doc["shape"])
    raw = doc["weights"]
    unknown = set(raw) - set(WEIGHT_FIELDS)
    if unknown:
        raise ValueError(f"unknown weight fields {sorted(unknown)}")
    weights = GtmsWeights(**{name: _unpairs(raw[name]) for name in WEIGHT_FIELDS})
    validate(shape, weights)
    return shape, weights
