"""Phase boundaries of runs started at the saddle, and their predicted scaling.

Phase I ends when the leading squared coordinate is ``gap_factor`` times the
runner-up, Phase II when it reaches ``1 - delta``, and Phase III when the
ensemble-mean sin^2 (aligned at each replicate's own Phase-II exit) falls to
``(c0 + 1)`` times its stationary level.  All boundaries are read off the
recorded grid, so they carry an uncertainty of one record stride.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from tensorsgd.moments import cross_moments
from tensorsgd.sgd import Ensemble, Trajectory
from tensorsgd.sources import SourceSpec

NOT_FOUND = -1


class PhaseNotReached(ValueError):
    """A phase boundary was not crossed within the recorded trajectory."""


@dataclass(frozen=True)
class PhaseConfig:
    delta: float = 0.1
    c0: float = 1.0
    gap_factor: float = 2.0

    def __post_init__(self):
        if not 0 < self.delta < 0.5:
            raise ValueError(f"delta must lie in (0, 1/2), got {self.delta}")
        if not self.c0 > 0:
            raise ValueError(f"c0 must be positive, got {self.c0}")
        if not self.gap_factor > 1:
            raise ValueError(f"gap_factor must exceed 1, got {self.gap_factor}")


@dataclass(frozen=True)
class PredictedIterations:
    """Asymptotic phase lengths plus a finite-step refinement of Phase III."""

    n1: float
    n2_bound: float
    n3: float
    n3_refined: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.n1, self.n2_bound, self.n3)


def stationary_sin2(d: int, beta: float, gap: float, psi6: float) -> float:
    """Long-run mean of sin^2 to the found component, beta (d-1) psi_6 / (2 gap)."""
    return beta * (d - 1) * float(psi6) / (2.0 * gap)


def predicted_iterations(d: int, beta: float, gap: float, psi6: float, delta: float = 0.1, c0: float = 1.0) -> PredictedIterations:
    if d < 2 or not (beta > 0 and gap > 0 and psi6 > 0 and c0 > 0):
        raise ValueError("predicted_iterations needs d >= 2 and positive beta, gap, psi6, c0")
    if not 0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 1/2), got {delta}")
    log_inv = math.log(1.0 / beta)
    n1 = 0.25 * d * log_inv / (gap * beta)
    n2 = (d - 3 + 4.0 * math.log(1.0 / (2.0 * delta))) / (gap * beta)
    n3 = 0.5 * log_inv / (gap * beta)
    # sin^2 relaxes as level + (delta - level) e^{-2 gap t}
    level = stationary_sin2(d, beta, gap, psi6)
    excess = delta - level
    n3_refined = math.log(excess / (c0 * level)) / (2.0 * gap * beta) if excess > c0 * level else 0.0
    return PredictedIterations(n1, n2, n3, n3_refined)


def w_statistic(v, beta: float, k: int, kp: int) -> float:
    """beta^{-1/2} (log v_k^2 - log v_k'^2)."""
    v = np.asarray(v, dtype=np.float64)
    if v[k] == 0 or v[kp] == 0:
        raise ValueError(f"w statistic undefined: coordinate {k if v[k] == 0 else kp} is zero")
    return float((math.log(v[k] ** 2) - math.log(v[kp] ** 2)) / math.sqrt(beta))


def _first_true(mask: np.ndarray, start: Optional[np.ndarray] = None) -> np.ndarray:
    """Index of the first True along axis 1 at or after ``start``; -1 if none."""
    if start is not None:
        cols = np.arange(mask.shape[1])[None, :]
        mask = mask & (cols >= start[:, None])
    idx = np.argmax(mask, axis=1)
    return np.where(mask.any(axis=1), idx, NOT_FOUND)


def phase1_indices(states: np.ndarray, gap_factor: float = 2.0) -> np.ndarray:
    """Record index of the Phase-I exit per replicate, for states of shape (R, m, d)."""
    sq = np.sort(states**2, axis=2)
    return _first_true(sq[:, :, -1] >= gap_factor * sq[:, :, -2])


def phase2_indices(states: np.ndarray, start: np.ndarray, delta: float) -> np.ndarray:
    top = np.max(states**2, axis=2)
    res = _first_true(top >= 1.0 - delta, np.where(start < 0, states.shape[1], start))
    return np.where(start < 0, NOT_FOUND, res)


def detect_phase1_end(traj: Trajectory, gap_factor: float = 2.0) -> int:
    i = phase1_indices(traj.states[None], gap_factor)[0]
    if i == NOT_FOUND:
        raise PhaseNotReached(f"leading coordinate never reached {gap_factor}x the runner-up in {traj.n[-1]} iterations")
    return int(traj.n[i])


def detect_phase2_end(traj: Trajectory, delta: float = 0.1, gap_factor: float = 2.0) -> int:
    """Iterations from the Phase-I exit until max_k v_k^2 >= 1 - delta."""
    i1 = phase1_indices(traj.states[None], gap_factor)
    if i1[0] == NOT_FOUND:
        raise PhaseNotReached("Phase I never ended")
    i2 = phase2_indices(traj.states[None], i1, delta)[0]
    if i2 == NOT_FOUND:
        raise PhaseNotReached(f"max v_k^2 never reached 1 - {delta}")
    return int(traj.n[i2] - traj.n[i1[0]])


@dataclass(frozen=True)
class Phase3Result:
    n3: int
    level: float
    replicates_used: int
    offsets: np.ndarray
    mean_sin2: np.ndarray


def detect_phase3_end(
    ensemble: Ensemble,
    spec: SourceSpec,
    end2_index: np.ndarray,
    c0: float = 1.0,
    window: Optional[int] = None,
) -> Phase3Result:
    """Ensemble-level Phase-III length, counted from each replicate's Phase-II exit.

    ``end2_index`` holds the record index of every replicate's Phase-II exit
    (-1 when not reached).  Only replicates with ``window`` iterations of
    data after their exit take part, so the averaged population is fixed.
    """
    m = spec.moments
    beta = ensemble.config.beta
    stride = ensemble.config.stride
    level = stationary_sin2(ensemble.d, beta, m.gap, m.psi6)
    threshold = (c0 + 1.0) * level
    if window is None:
        window = int(math.ceil(4 * predicted_iterations(ensemble.d, beta, m.gap, m.psi6).n3))
    steps = int(math.ceil(window / stride))
    # the final record may sit off the stride grid; drop it from the regular part
    regular = int(np.searchsorted(ensemble.n, ensemble.n[-1] - ensemble.n[-1] % stride, side="right"))
    end2_index = np.asarray(end2_index)
    use = (end2_index >= 0) & (end2_index + steps < regular)
    if not use.any():
        raise PhaseNotReached(f"no replicate has {window} iterations of data after its Phase-II exit")
    rows = np.flatnonzero(use)
    idx = end2_index[rows][:, None] + np.arange(steps + 1)[None, :]
    block = ensemble.states[rows[:, None], idx, :]
    winner = np.argmax(block[:, 0, :] ** 2, axis=1)
    vk = block[np.arange(rows.size), :, winner]
    mean_sin2 = np.mean(np.clip(1.0 - vk**2, 0.0, 1.0), axis=0)
    offsets = np.arange(steps + 1) * stride
    below = np.flatnonzero(mean_sin2 <= threshold)
    if below.size == 0:
        raise PhaseNotReached(f"ensemble-mean sin^2 stayed above {threshold:.3g} for {window} iterations")
    return Phase3Result(int(offsets[below[0]]), level, int(rows.size), offsets, mean_sin2)


def _quartiles(x: np.ndarray) -> tuple[float, float, float]:
    if x.size == 0:
        return (math.nan, math.nan, math.nan)
    q = np.percentile(x, [25, 50, 75])
    return (float(q[0]), float(q[1]), float(q[2]))


@dataclass
class PhaseReport:
    beta: float
    d: int
    gap: float
    psi6: float
    lambda_sq: float
    predicted: PredictedIterations
    n1: np.ndarray
    n2: np.ndarray
    n3: Optional[int]
    phase3_replicates: int = 0
    source: str = ""

    @property
    def found1(self) -> np.ndarray:
        return self.n1 >= 0

    @property
    def found2(self) -> np.ndarray:
        return self.n2 >= 0

    @property
    def median_n1(self) -> float:
        return float(np.median(self.n1[self.found1])) if self.found1.any() else math.nan

    @property
    def median_n2(self) -> float:
        return float(np.median(self.n2[self.found2])) if self.found2.any() else math.nan

    @property
    def median_n2_over_n1(self) -> float:
        ok = self.found2 & (self.n1 > 0)
        return float(np.median(self.n2[ok] / self.n1[ok])) if ok.any() else math.nan

    @property
    def measured(self) -> tuple[float, float, Optional[int]]:
        return (self.median_n1, self.median_n2, self.n3)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "d": self.d,
            "beta": self.beta,
            "gap": self.gap,
            "psi6": self.psi6,
            "lambda_sq": self.lambda_sq,
            "replicates": int(self.n1.size),
            "found_phase1": int(self.found1.sum()),
            "found_phase2": int(self.found2.sum()),
            "N1": self.median_n1,
            "N2": self.median_n2,
            "N3": self.n3,
            "N1_quartiles": _quartiles(self.n1[self.found1]),
            "N2_quartiles": _quartiles(self.n2[self.found2]),
            "phase3_replicates": self.phase3_replicates,
            "predicted": {
                "N1": self.predicted.n1,
                "N2_bound": self.predicted.n2_bound,
                "N3": self.predicted.n3,
                "N3_refined": self.predicted.n3_refined,
            },
        }


def analyze_ensemble(ensemble: Ensemble, spec: SourceSpec, config: PhaseConfig = PhaseConfig(), window: Optional[int] = None) -> PhaseReport:
    """Per-replicate N1, N2 and the ensemble N3 for runs started at the saddle."""
    m = spec.moments
    d, beta = ensemble.d, ensemble.config.beta
    i1 = phase1_indices(ensemble.states, config.gap_factor)
    i2 = phase2_indices(ensemble.states, i1, config.delta)
    n = ensemble.n
    n1 = np.where(i1 >= 0, n[np.maximum(i1, 0)], NOT_FOUND)
    n2 = np.where(i2 >= 0, n[np.maximum(i2, 0)] - n1, NOT_FOUND)
    try:
        p3 = detect_phase3_end(ensemble, spec, i2, config.c0, window)
        n3, used = p3.n3, p3.replicates_used
    except PhaseNotReached:
        n3, used = None, 0
    return PhaseReport(
        beta=beta,
        d=d,
        gap=m.gap,
        psi6=float(m.psi6),
        lambda_sq=float(cross_moments(d, m).lambda_sq),
        predicted=predicted_iterations(d, beta, m.gap, float(m.psi6), config.delta, config.c0),
        n1=n1.astype(np.int64),
        n2=n2.astype(np.int64),
        n3=n3,
        phase3_replicates=used,
        source=spec.name,
    )


@dataclass(frozen=True)
class EscapeCheck:
    t: float
    pair: tuple[int, int]
    sample_mean: float
    sample_variance: float
    predicted_variance: float
    mean_z: float
    z_scores: np.ndarray = field(repr=False)
    survivors: int = 0
    count: int = 0

    @property
    def variance_ratio(self) -> float:
        return self.sample_variance / self.predicted_variance


def escape_statistic(ensemble: Ensemble, index: int, pair: tuple[int, int] = (0, 1)) -> np.ndarray:
    """beta^{-1/2} (log v_k^2 - log v_k'^2) across replicates at record ``index``."""
    k, kp = pair
    v = ensemble.states[:, index, :]
    return (np.log(v[:, k] ** 2) - np.log(v[:, kp] ** 2)) / math.sqrt(ensemble.config.beta)


def escape_distribution_check(
    ensemble: Ensemble,
    spec: SourceSpec,
    t_check: float,
    pair: tuple[int, int] = (0, 1),
    gap_factor: float = 2.0,
    min_survivors: int = 100,
) -> EscapeCheck:
    """Compare the rescaled saddle statistic with its Gaussian limit N(0, d Lambda^2 / (4 gap)).

    The statistic is taken over every replicate at the record nearest ``t_check``;
    ``survivors`` counts replicates still inside Phase I at that time.
    """
    m = spec.moments
    d, beta = ensemble.d, ensemble.config.beta
    j = int(np.argmin(np.abs(ensemble.t - t_check)))
    t = float(ensemble.t[j])
    i1 = phase1_indices(ensemble.states[:, : j + 1, :], gap_factor)
    survivors = int(np.sum(i1 == NOT_FOUND))
    if survivors < min_survivors:
        raise PhaseNotReached(f"only {survivors} replicates still in Phase I at t = {t:.4g} (need {min_survivors})")
    stat = math.exp(-2.0 * m.gap * t / d) * escape_statistic(ensemble, j, pair)
    pred = d * float(cross_moments(d, m).lambda_sq) / (4.0 * m.gap)
    mean = float(stat.mean())
    var = float(stat.var(ddof=1))
    if var > 0:
        mean_z = mean / math.sqrt(var / stat.size)
    else:
        mean_z = 0.0 if mean == 0 else math.copysign(math.inf, mean)
    z = stat / math.sqrt(pred) if pred > 0 else np.full_like(stat, math.nan)
    return EscapeCheck(t, tuple(pair), mean, var, pred, float(mean_z), z, survivors, int(stat.size))


@dataclass(frozen=True)
class CutoffRatios:
    betas: tuple
    n2_over_n1: tuple
    n1_over_n3: tuple
    predicted_n2_over_n1: tuple
    d: int

    def n2_ratio_decreasing(self) -> bool:
        """True when the measured N2/N1 falls strictly as beta shrinks."""
        order = np.argsort(self.betas)[::-1]
        r = np.asarray(self.n2_over_n1)[order]
        return bool(np.all(np.diff(r) < 0))


def cutoff_ratio(reports: Sequence[PhaseReport]) -> CutoffRatios:
    if len(reports) < 3:
        raise ValueError(f"need at least 3 beta values, got {len(reports)}")
    if len({(r.d, r.source) for r in reports}) != 1:
        raise ValueError("all reports must share dimension and source")
    betas = tuple(r.beta for r in reports)
    if len(set(betas)) != len(betas):
        raise ValueError("beta values must be distinct")
    n2n1 = tuple(r.median_n2_over_n1 for r in reports)
    n1n3 = tuple(r.median_n1 / r.n3 if r.n3 else math.nan for r in reports)
    pred = tuple(r.predicted.n2_bound / r.predicted.n1 for r in reports)
    return CutoffRatios(betas, n2n1, n1n3, pred, reports[0].d)


def phase_labels(n: np.ndarray, boundaries: Sequence[Optional[float]]) -> list[str]:
    """Label each iteration count with the phase it falls in given cumulative boundaries."""
    names = ["escape", "traverse", "convergence", "stationary"]
    out = []
    for x in n:
        label = names[-1]
        for b, name in zip(boundaries, names):
            if b is None or math.isnan(b) or x < b:
                label = name
                break
        out.append(label)
    return out
