"""Exact moment calculus for sums of independent symmetric sources.

Everything here works in rational arithmetic whenever the inputs are
rational (``int`` or ``Fraction``); float inputs simply propagate.  The
brute-force :func:`enumeration_expectation` is kept deliberately naive so it
can serve as an independent oracle for the expansion-based routines.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

# Even-part partitions of p with multinomial coefficients p! / prod(part!).
# Odd-exponent monomials vanish in expectation for symmetric sources.
EVEN_PARTITIONS: dict[int, list[tuple[tuple[int, ...], int]]] = {
    0: [((), 1)],
    2: [((2,), 1)],
    4: [((4,), 1), ((2, 2), 6)],
    6: [((6,), 1), ((4, 2), 15), ((2, 2, 2), 90)],
    8: [((8,), 1), ((6, 2), 28), ((4, 4), 70), ((4, 2, 2), 420), ((2, 2, 2, 2), 2520)],
}


@dataclass(frozen=True)
class MomentTable:
    """Moments psi_0..psi_8 of one source coordinate (``psi[m] = E Y^m``)."""

    psi: tuple

    def __post_init__(self):
        psi = tuple(self.psi)
        if len(psi) != 9:
            raise ValueError("moment table needs psi_0 .. psi_8")
        if psi[0] != 1 or psi[2] != 1:
            raise ValueError(f"need psi_0 = psi_2 = 1, got {psi[0]}, {psi[2]}")
        if any(psi[m] != 0 for m in (1, 3, 5, 7)):
            raise ValueError("odd moments of a symmetric source must vanish")
        if psi[4] < 1:
            raise ValueError(f"psi_4 = {psi[4]} < psi_2^2 = 1 is impossible")
        if psi[6] * psi[2] < psi[4] ** 2:
            raise ValueError(f"psi_6 = {psi[6]} violates Cauchy-Schwarz psi_6 >= psi_4^2")
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_even(cls, psi4, psi6, psi8, psi2=1) -> "MomentTable":
        return cls((1, 0, psi2, 0, psi4, 0, psi6, 0, psi8))

    def __getitem__(self, m: int):
        return self.psi[m]

    @property
    def psi4(self):
        return self.psi[4]

    @property
    def psi6(self):
        return self.psi[6]

    @property
    def psi8(self):
        return self.psi[8]

    @property
    def gap(self) -> float:
        """Tensor gap |psi_4 - 3|."""
        return abs(float(self.psi[4]) - 3.0)

    @property
    def sign(self) -> int:
        """sign(psi_4 - 3); zero when the tensor structure is unidentifiable."""
        return (self.psi[4] > 3) - (self.psi[4] < 3)


@dataclass(frozen=True)
class CrossMoments:
    """Sixth/eighth-order expectations at the all-equal point.

    q1 = E (sum Y)^6 Y_k^2, q2 = E (sum Y)^6 Y_k Y_k' (k != k'),
    eighth = E (sum Y)^8 and lambda_sq = 8 (q1 - q2) / d^2.
    """

    d: int
    q1: object
    q2: object
    eighth: object
    lambda_sq: object


@dataclass(frozen=True)
class PrintedFormulas:
    q1_printed: object
    eighth_printed: object
    eighth_printed_appendix: object
    lambda_sq_printed: object


def _partition_sum(parts: tuple[int, ...], weights: Sequence, moments: MomentTable):
    """Sum over assignments of ``parts`` to distinct coordinates of prod psi_q w_i^q.

    Equal parts are interchangeable, so each unordered assignment is counted once.
    """
    table = {tuple(sorted(parts)): 1}
    for w in weights:
        nxt = dict(table)
        for remaining, acc in table.items():
            for q in set(remaining):
                rest = list(remaining)
                rest.remove(q)
                key = tuple(rest)
                nxt[key] = nxt.get(key, 0) + acc * moments[q] * w**q
        table = nxt
    return table.get((), 0)


def expect_weighted_power(weights: Iterable, p: int, moments: MomentTable):
    """E (sum_i w_i Y_i)^p for even p <= 8 by multinomial expansion."""
    if p % 2:
        raise ValueError(f"odd power {p}: only even p in {{2, 4, 6, 8}} is supported")
    if p not in EVEN_PARTITIONS:
        raise ValueError(f"power {p} outside the supported range 2..8")
    w = list(weights)
    return sum(coef * _partition_sum(parts, w, moments) for parts, coef in EVEN_PARTITIONS[p])


def fourth_moment_objective(u, model, moments: MomentTable) -> float:
    """Population objective E(u^T X)^4 = 3 + (psi_4 - 3) sum_i (a_i^T u)^4."""
    u = np.asarray(u, dtype=np.float64)
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise ValueError(f"u must be a unit vector, ||u|| = {np.linalg.norm(u)!r}")
    s = model.matrix.T @ u
    return 3.0 + (float(moments.psi4) - 3.0) * float(np.sum(s**4))


def objective_in_source_coords(v: np.ndarray, moments: MomentTable) -> np.ndarray:
    """Vectorized 3 + (psi_4 - 3) sum_k v_k^4 over the last axis."""
    v = np.asarray(v, dtype=np.float64)
    return 3.0 + (float(moments.psi4) - 3.0) * np.sum(v**4, axis=-1)


def _ones_power(n: int, p: int, moments: MomentTable):
    """E (Y_1 + ... + Y_n)^p, with the empty sum equal to zero."""
    if n == 0:
        return 1 if p == 0 else 0
    return expect_weighted_power([1] * n, p, moments)


def cross_moments(d: int, moments: MomentTable) -> CrossMoments:
    """Q1, Q2, E(sum Y)^8 and Lambda^2 from the binomial split of the sum."""
    if d < 2:
        raise ValueError(f"need d >= 2, got {d}")
    # Q1: split sum Y = Y_k + S', S' over the other d-1 coordinates
    q1 = sum(
        math.comb(6, j) * moments[j + 2] * _ones_power(d - 1, 6 - j, moments)
        for j in (0, 2, 4, 6)
    )
    # Q2: split sum Y = Y_k + Y_k' + S''; needs odd powers of Y_k and Y_k'
    q2 = 0
    for a in (1, 3, 5):
        for b in (1, 3, 5):
            c = 6 - a - b
            if c < 0:
                continue
            coef = math.factorial(6) // (math.factorial(a) * math.factorial(b) * math.factorial(c))
            q2 += coef * moments[a + 1] * moments[b + 1] * _ones_power(d - 2, c, moments)
    eighth = _ones_power(d, 8, moments)
    lambda_sq = Fraction(8, d * d) * (q1 - q2) if _is_exact(q1, q2) else 8.0 * (q1 - q2) / d**2
    return CrossMoments(d=d, q1=q1, q2=q2, eighth=eighth, lambda_sq=lambda_sq)


def _is_exact(*xs) -> bool:
    return all(isinstance(x, (int, Fraction)) for x in xs)


def printed_formulas(d: int, moments: MomentTable) -> PrintedFormulas:
    """Literal evaluation of the published closed forms (report only)."""
    p4, p6, p8 = moments.psi4, moments.psi6, moments.psi8
    q1 = p8 + 16 * (d - 1) * p6 + 15 * (d - 1) * p4**2 + 60 * (d - 1) * (d - 2) * p4 \
        + 30 * (d - 1) * (d - 2) * (d - 3)
    head = d * p8 + 28 * d * (d - 1) * p6 + 35 * d * (d - 1) * (1 + 12 * (d - 1) * (d - 2)) * p4
    eighth = head + 105 * d * (d - 1) * (d - 2) * (d - 3)
    eighth_appendix = head + 105 * (d - 1) * (d - 2) * (d - 3)
    bracket = p8 + (16 * d - 28) * p6 + 15 * d * p4**2 \
        - 5 * (72 * d * d - 228 * d + 175) * p4 + 15 * (2 * d - 7) * (d - 2) * (d - 3)
    lam = Fraction(8, d * d) * bracket if _is_exact(bracket) else 8.0 * bracket / d**2
    return PrintedFormulas(q1, eighth, eighth_appendix, lam)


def enumeration_expectation(
    support: Sequence[tuple],
    d: int,
    f: Callable[[tuple], object],
    budget: int = 10**7,
):
    """Exact E f(Y_1, ..., Y_d) by summing over every outcome in support^d.

    ``support`` is a list of (value, probability) pairs, or any object with a
    ``finite_support`` attribute (a :class:`~tensorsgd.sources.SourceSpec`).
    Probabilities are scaled to integers over a common denominator so the
    inner loop is integer arithmetic; integer-valued supports are passed to
    ``f`` as ``int``.
    """
    if hasattr(support, "finite_support"):
        support = support.finite_support
        if support is None:
            raise ValueError("enumeration needs a finite-support source")
    pairs = [(Fraction(v), Fraction(p)) for v, p in support]
    size = len(pairs) ** d
    if size > budget:
        raise ValueError(f"state space {len(pairs)}^{d} = {size} exceeds budget {budget}")
    denom = math.lcm(*(p.denominator for _, p in pairs))
    weights = [int(p * denom) for _, p in pairs]
    values = [int(v) if v.denominator == 1 else v for v, _ in pairs]
    entries = list(zip(values, weights))

    total = 0
    for outcome in itertools.product(entries, repeat=d):
        w = 1
        for _, wi in outcome:
            w *= wi
        total += w * f(tuple(v for v, _ in outcome))
    scale = denom**d
    if isinstance(total, (int, Fraction)):
        return Fraction(total, 1) / scale
    return total / scale
