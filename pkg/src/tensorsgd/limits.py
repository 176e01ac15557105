"""Deterministic and diffusion limits of the online tensor iteration.

Time is measured in units of ``t = n * beta``.  The deterministic flow lives on
the unit sphere; the two Ornstein-Uhlenbeck processes describe fluctuations
near a stable component and near the all-equal saddle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from tensorsgd._kernel import rk4_flow

UNIT_TOL = 1e-8


def _check_unit(V, tol: float = UNIT_TOL) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    norm = np.linalg.norm(V)
    if abs(norm - 1.0) > tol:
        raise ValueError(f"initial state must be a unit vector, ||V|| = {norm!r}")
    return V


def _check_gap(gap: float) -> float:
    gap = float(gap)
    if not gap > 0:
        raise ValueError(f"tensor gap must be positive, got {gap}")
    return gap


def ode_rhs(V, gap: float) -> np.ndarray:
    """gap * V_k (V_k^2 - sum_i V_i^4); works row-wise on a stack of states."""
    V = np.asarray(V, dtype=np.float64)
    quartic = np.sum(V**4, axis=-1, keepdims=True)
    return gap * V * (V**2 - quartic)


@dataclass(frozen=True)
class OdeSolution:
    grid: np.ndarray
    values: np.ndarray
    gap: float
    step: float
    converged: Optional[bool] = None

    @property
    def squares(self) -> np.ndarray:
        return self.values**2

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation of V at time t."""
        return np.array([np.interp(t, self.grid, self.values[:, k]) for k in range(self.values.shape[1])])


def _rk4(V0: np.ndarray, gap: float, horizon: float, h: float):
    n = int(math.ceil(horizon / h - 1e-9))
    n = max(n, 1)
    h = horizon / n
    out = rk4_flow(np.ascontiguousarray(V0, dtype=np.float64), float(gap), float(h), n)
    return np.linspace(0.0, horizon, n + 1), out, h


def ode_solve(V0, gap: float, horizon: float, step: Optional[float] = None, check: bool = False) -> OdeSolution:
    """Classical fixed-step RK4 for the sphere flow.

    The default step is ``1e-3 / gap``.  With ``check=True`` the run is repeated
    at half the step and ``converged`` reports whether the two agree to 1e-8
    on the shared grid.
    """
    V0 = _check_unit(V0)
    gap = _check_gap(gap)
    if horizon < 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    h = 1e-3 / gap if step is None else float(step)
    if horizon == 0:
        return OdeSolution(np.zeros(1), V0[None, :].copy(), gap, h, True if check else None)
    grid, values, h = _rk4(V0, gap, horizon, h)
    converged = None
    if check:
        _, fine, _ = _rk4(V0, gap, horizon, h / 2)
        converged = bool(np.abs(fine[::2] - values).max() < 1e-8)
    return OdeSolution(grid, values, gap, h, converged)


def closed_form_d2(v1sq0: float, gap: float, t) -> np.ndarray | float:
    """V_1^2(t) for the two-dimensional flow.

    (2 V_1^2 - 1)^2 follows a logistic curve with rate 2 gap, which gives
    0.5 +- 0.5 (1 + C e^{-2 gap t})^{-1/2} with C fixed by the start.
    """
    if not 0.0 <= v1sq0 <= 1.0:
        raise ValueError(f"v1sq0 must lie in [0, 1], got {v1sq0}")
    t = np.asarray(t, dtype=np.float64)
    if v1sq0 == 0.5 or v1sq0 in (0.0, 1.0):
        res = np.full_like(t, v1sq0)
        return float(res) if res.ndim == 0 else res
    sign = 1.0 if v1sq0 > 0.5 else -1.0
    C = 1.0 / (2.0 * v1sq0 - 1.0) ** 2 - 1.0
    res = 0.5 + sign * 0.5 / np.sqrt(1.0 + C * np.exp(-2.0 * gap * t))
    return float(res) if res.ndim == 0 else res


def satisfies_gap_condition(V, factor: float = 2.0) -> bool:
    sq = np.sort(np.asarray(V, dtype=np.float64) ** 2)
    return bool(sq[-1] >= factor * sq[-2] * (1 - 1e-12)) if sq.size > 1 else True


def traverse_time(V0, gap: float, delta: float, step: Optional[float] = None, horizon: Optional[float] = None) -> float:
    """Time for the dominant squared coordinate to reach 1 - delta.

    The crossing is located by linear interpolation between RK4 grid points.
    """
    V0 = _check_unit(V0)
    gap = _check_gap(gap)
    if not 0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 1/2), got {delta}")
    if not satisfies_gap_condition(V0):
        raise ValueError("start violates the gap condition: top squared coordinate < 2x every other")
    k0 = int(np.argmax(V0**2))
    target = 1.0 - delta
    if V0[k0] ** 2 >= target:
        return 0.0
    if horizon is None:
        # the aux-ODE bound scaled by 1/gap, with slack
        horizon = 2.0 * aux_ode_bound(V0.size, delta) / gap + 1.0
    while True:
        sol = ode_solve(V0, gap, horizon, step)
        y = sol.values[:, k0] ** 2
        hit = np.flatnonzero(y >= target)
        if hit.size:
            i = hit[0]
            t0, t1, y0, y1 = sol.grid[i - 1], sol.grid[i], y[i - 1], y[i]
            return float(t0 + (target - y0) * (t1 - t0) / (y1 - y0))
        horizon *= 2


def aux_ode_bound(d: int, delta: float) -> float:
    """d - 3 + 4 log(1 / (2 delta))."""
    return d - 3 + 4.0 * math.log(1.0 / (2.0 * delta))


def aux_ode_exact(y0: float, y1: float) -> float:
    """Closed-form integral of dy / (y^2 (1 - y)) from y0 to y1."""
    return (1.0 / y0 - 1.0 / y1) + math.log(y1 / y0) + math.log((1.0 - y0) / (1.0 - y1))


def aux_ode_time(d: int, delta: float, y0: Optional[float] = None, step: float = 1e-4) -> float:
    """Time for dy/dt = y^2 (1 - y) to carry y from ``y0`` to 1 - delta.

    ``y0`` defaults to 2/(d+1).  Integrated with RK4; the crossing is located
    by linear interpolation within the last step.
    """
    if d < 2:
        raise ValueError(f"need d >= 2, got {d}")
    if not 0 < delta <= 0.5:
        raise ValueError(f"delta must lie in (0, 1/2], got {delta}")
    y = 2.0 / (d + 1.0) if y0 is None else float(y0)
    if not 0 < y < 1:
        raise ValueError(f"y0 must lie in (0, 1), got {y}")
    target = 1.0 - delta
    if y >= target:
        return 0.0

    def f(z):
        return z * z * (1.0 - z)

    t, h = 0.0, step
    while True:
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y_next = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if y_next >= target:
            return t + h * (target - y) / (y_next - y)
        t, y = t + h, y_next


@dataclass(frozen=True)
class OuParams:
    """One scalar OU coordinate; ``kind`` is ``stable`` or ``unstable``."""

    kind: str
    gap: float
    dim: int
    diffusion: float
    initial: float = 0.0

    def __post_init__(self):
        if self.kind not in ("stable", "unstable"):
            raise ValueError(f"kind must be 'stable' or 'unstable', got {self.kind!r}")
        if not self.gap > 0:
            raise ValueError(f"gap must be positive, got {self.gap}")
        if self.diffusion < 0:
            raise ValueError(f"diffusion must be nonnegative, got {self.diffusion}")
        if self.dim < 2:
            raise ValueError(f"need d >= 2, got {self.dim}")

    @property
    def rate(self) -> float:
        """Linear drift coefficient: -gap (stable) or +2 gap / d (unstable)."""
        return -self.gap if self.kind == "stable" else 2.0 * self.gap / self.dim


@dataclass(frozen=True)
class StableMoments:
    mean: float
    second_moment: float


@dataclass(frozen=True)
class UnstableStats:
    mean: float
    variance: float
    c_variance: float


def ou_stable_moments(U0: float, gap: float, psi6: float, t: float) -> StableMoments:
    gap = _check_gap(gap)
    level = float(psi6) / (2.0 * gap)
    return StableMoments(
        mean=U0 * math.exp(-gap * t),
        second_moment=level + (U0 * U0 - level) * math.exp(-2.0 * gap * t),
    )


def ou_unstable_stats(W0: float, gap: float, d: int, lambda_sq: float, t: float) -> UnstableStats:
    """Moments of the saddle OU process; ``lambda_sq`` is the squared diffusion."""
    gap = _check_gap(gap)
    if lambda_sq < 0:
        raise ValueError(f"lambda_sq must be nonnegative, got {lambda_sq}")
    lam = float(lambda_sq)
    c_var = d * lam / (4.0 * gap)
    return UnstableStats(
        mean=W0 * math.exp(2.0 * gap * t / d),
        variance=c_var * math.expm1(4.0 * gap * t / d),
        c_variance=c_var,
    )


def simulate_sde(params: OuParams, horizon: float, step: float, rng: np.random.Generator, n_paths: int = 1):
    """Euler-Maruyama paths, shape ``(n_steps + 1, n_paths)``, plus the time grid."""
    if params.gap * step >= 0.1:
        raise ValueError(f"step too large: gap * step = {params.gap * step} >= 0.1")
    n = int(math.ceil(horizon / step - 1e-9))
    grid = np.arange(n + 1) * step
    out = np.empty((n + 1, n_paths))
    x = np.full(n_paths, float(params.initial))
    out[0] = x
    a = params.rate
    sd = params.diffusion * math.sqrt(step)
    for i in range(n):
        x = x + a * x * step + sd * rng.standard_normal(n_paths)
        out[i + 1] = x
    return grid, out
