"""Bounded symmetric source distributions and orthonormal mixing.

Samples are drawn in blocks of shape ``(n, d)`` so that simulators can pull a
whole chunk of online data from one generator in a single call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from tensorsgd.moments import MomentTable

KINDS = ("rademacher", "uniform", "threepoint")

_ALIASES = {
    "rademacher": "rademacher",
    "uniform": "uniform",
    "scaled-uniform": "uniform",
    "threepoint": "threepoint",
    "three-point": "threepoint",
}

SQRT3 = float(np.sqrt(3.0))


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    # str() keeps decimal literals such as 1.5 exact
    return Fraction(str(x))


@dataclass(frozen=True)
class SourceSpec:
    """One source coordinate law, replicated independently over ``dim`` coordinates.

    ``kind`` is one of ``rademacher``, ``uniform`` (on [-sqrt3, sqrt3]) or
    ``threepoint`` (on {-a, 0, a} with P(+-a) = 1/(2a^2)).
    """

    kind: str
    dim: int
    a: Optional[Fraction] = None
    moments: MomentTable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        kind = _ALIASES.get(self.kind)
        if kind is None:
            raise ValueError(f"unknown source kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "dim", int(self.dim))
        if kind == "threepoint":
            if self.a is None:
                raise ValueError("threepoint source needs a support parameter a")
            a = _as_fraction(self.a)
            if a < 1:
                raise ValueError(f"threepoint support parameter must satisfy a >= 1, got {a}")
            object.__setattr__(self, "a", a)
        elif self.a is not None:
            raise ValueError(f"support parameter a only applies to threepoint, not {kind}")
        object.__setattr__(self, "moments", source_moments(self))

    @property
    def name(self) -> str:
        if self.kind == "threepoint":
            return f"threepoint(a={self.a})"
        return self.kind

    @property
    def max_abs(self) -> float:
        if self.kind == "rademacher":
            return 1.0
        if self.kind == "uniform":
            return SQRT3
        return float(self.a)

    @property
    def bound(self) -> float:
        """Almost-sure bound B on ||Y||^2, taken as d * (largest support value)^2."""
        if self.kind == "uniform":
            return 3.0 * self.dim
        return float(self.dim * self.max_abs**2)

    @property
    def finite_support(self) -> Optional[list[tuple[Fraction, Fraction]]]:
        """Exact (value, probability) pairs, or None for continuous sources."""
        if self.kind == "rademacher":
            half = Fraction(1, 2)
            return [(Fraction(-1), half), (Fraction(1), half)]
        if self.kind == "threepoint":
            a = self.a
            p = 1 / (2 * a * a)
            return [(-a, p), (Fraction(0), 1 - 2 * p), (a, p)]
        return None


def make_spec(kind: str, dim: int, a=None) -> SourceSpec:
    return SourceSpec(kind, dim, a)


def source_moments(spec: SourceSpec) -> MomentTable:
    """Exact moments psi_1..psi_8 of a single source coordinate."""
    if spec.kind == "rademacher":
        even = {2: 1, 4: 1, 6: 1, 8: 1}
    elif spec.kind == "uniform":
        # int_{-s}^{s} y^{2m} dy / (2s) with s^2 = 3
        even = {2 * m: Fraction(3**m, 2 * m + 1) for m in range(1, 5)}
    elif spec.kind == "threepoint":
        a2 = spec.a * spec.a
        even = {2 * m: a2 ** (m - 1) for m in range(1, 5)}
    else:  # pragma: no cover - guarded in SourceSpec
        raise ValueError(spec.kind)
    return MomentTable.from_even(even[4], even[6], even[8], psi2=even[2])


def sample_block(spec: SourceSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` independent source vectors, shape ``(n, d)``."""
    shape = (n, spec.dim)
    if spec.kind == "rademacher":
        return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    if spec.kind == "uniform":
        return rng.uniform(-SQRT3, SQRT3, size=shape)
    a = float(spec.a)
    p = float(1 / (2 * spec.a * spec.a))
    u = rng.random(size=shape)
    out = np.zeros(shape)
    out[u < p] = -a
    out[(u >= p) & (u < 2 * p)] = a
    return out


def sample_source(spec: SourceSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw a single source vector Y of length d."""
    return sample_block(spec, rng, 1)[0]


@dataclass(frozen=True)
class MixingModel:
    matrix: np.ndarray
    provenance: str = "identity"

    def __post_init__(self):
        A = np.array(self.matrix, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"mixing matrix must be square, got shape {A.shape}")
        err = np.abs(A.T @ A - np.eye(A.shape[0])).max()
        if err > 1e-12:
            raise ValueError(f"mixing matrix is not orthonormal (max |A^T A - I| = {err:.3g})")
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_identity(self) -> bool:
        return self.provenance == "identity"

    @classmethod
    def identity(cls, d: int) -> "MixingModel":
        return cls(np.eye(d), "identity")


def random_orthogonal(d: int, rng: np.random.Generator, provenance: str = "haar") -> MixingModel:
    """Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix.

    The signs of R's diagonal are folded into Q, otherwise the law is not Haar.
    """
    if d < 2:
        raise ValueError(f"need d >= 2, got {d}")
    Z = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(Z)
    Q = Q * np.sign(np.diag(R))
    return MixingModel(Q, provenance)


def observe(model: MixingModel, Y: Sequence[float] | np.ndarray) -> np.ndarray:
    """Mixed observation X = A Y; also accepts a block of shape (n, d)."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[-1] != model.dim:
        raise ValueError(f"dimension mismatch: model has d={model.dim}, sample has {Y.shape[-1]}")
    return Y @ model.matrix.T
