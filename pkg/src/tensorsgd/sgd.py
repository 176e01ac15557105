"""Projected online SGD on the unit sphere and seeded Monte-Carlo ensembles.

The recursion is

    v <- Pi{ v + sign(psi_4 - 3) * beta * (v^T Y)^3 * Y },   Pi(w) = w / ||w||,

run in source coordinates v = A^T u.  When a non-identity mixing model is
given the update is applied to u with X = A Y and converted back, which is
the same recursion up to round-off.

Every replicate owns its generator, derived from ``(master_seed, *key)``, and
draws its samples in fixed-size chunks, so a replicate's path never depends
on how replicates are batched or distributed over workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from tensorsgd._kernel import advance
from tensorsgd.moments import enumeration_expectation, objective_in_source_coords
from tensorsgd.sources import MixingModel, SourceSpec, sample_block

log = logging.getLogger(__name__)

CHUNK = 4096


class StepSizeError(ValueError):
    """The step size violates B^2 beta <= 2/3."""


class NotConvergedError(RuntimeError):
    def __init__(self, message: str, run_index: Optional[int] = None):
        super().__init__(message)
        self.run_index = run_index


def replicate_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for replicate ``key`` under ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, key)]))


def default_stride(beta: float) -> int:
    return max(1, int(np.floor(1.0 / beta / 100.0)))


def check_step_size(beta: float, bound: float) -> None:
    if beta < 0:
        raise StepSizeError(f"step size must be nonnegative, got {beta}")
    if bound**2 * beta > 2.0 / 3.0 * (1 + 1e-12):
        raise StepSizeError(
            f"step size guard violated: B^2 beta = {bound**2 * beta:.6g} > 2/3 "
            f"(B = {bound:g}, beta = {beta:g}); use beta <= {2 / (3 * bound**2):.6g}"
        )


def vstar(d: int) -> np.ndarray:
    """The all-tied unstable equilibrium d^{-1/2} (1, ..., 1)."""
    return np.full(d, d**-0.5)


def gapped_start(d: int) -> np.ndarray:
    """Unit vector with v_1^2 = 2/(d+1) and every other v_k^2 = 1/(d+1)."""
    v = np.full(d, (d + 1.0) ** -0.5)
    v[0] = np.sqrt(2.0 / (d + 1.0))
    return v


@dataclass(frozen=True)
class SgdConfig:
    """Run parameters.  ``init`` is ``"vstar"``, ``"gapped"`` or an explicit unit vector.

    With ``random_signs`` each replicate flips the signs of its start vector
    using its own generator; the update commutes with coordinate sign flips,
    so this only relabels which signed component is reached.
    """

    beta: float
    max_iters: int
    record_stride: Optional[int] = None
    init: Union[str, Sequence[float], np.ndarray] = "vstar"
    master_seed: int = 0
    random_signs: bool = False

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ValueError(f"max_iters must be a nonnegative integer, got {self.max_iters}")
        object.__setattr__(self, "max_iters", int(self.max_iters))
        if self.record_stride is not None and self.record_stride < 1:
            raise ValueError(f"record_stride must be positive, got {self.record_stride}")
        if isinstance(self.init, str):
            if self.init not in ("vstar", "gapped"):
                raise ValueError(f"unknown init {self.init!r}")
        else:
            v = np.asarray(self.init, dtype=np.float64)
            if abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise ValueError(f"explicit init must have unit norm, got {np.linalg.norm(v)!r}")
            object.__setattr__(self, "init", tuple(float(x) for x in v))

    @property
    def stride(self) -> int:
        if self.record_stride is not None:
            return int(self.record_stride)
        return default_stride(self.beta) if self.beta > 0 else 1

    def start_vector(self, d: int) -> np.ndarray:
        if self.init == "vstar":
            return vstar(d)
        if self.init == "gapped":
            return gapped_start(d)
        v = np.array(self.init)
        if v.shape != (d,):
            raise ValueError(f"explicit init has length {v.size}, expected {d}")
        return v

    def check(self, spec: SourceSpec) -> int:
        """Validate against a source; returns the update sign."""
        check_step_size(self.beta, spec.bound)
        sign = spec.moments.sign
        if sign == 0:
            raise ValueError("psi_4 = 3: the tensor gap is zero and the update sign is undefined")
        return sign


def sgd_step(v, Y, beta: float, sign: int, bound: Optional[float] = None) -> np.ndarray:
    """One projected update v -> Pi{v + sign beta (v^T Y)^3 Y}."""
    v = np.asarray(v, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError(f"v must be a unit vector, ||v|| = {np.linalg.norm(v)!r}")
    if bound is not None:
        check_step_size(beta, bound)
    s = float(v @ Y)
    w = v + sign * beta * s**3 * Y
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise ZeroDivisionError("pre-projection vector vanished; the step size guard is violated")
    return w / norm


@dataclass(frozen=True)
class StepDecomposition:
    increment: np.ndarray
    main: np.ndarray
    residual: np.ndarray


def one_step_decomposition(v, Y, beta: float, sign: int = 1) -> StepDecomposition:
    """Split the realized increment into beta((v^T Y)^3 Y_k - v_k (v^T Y)^4) and a remainder.

    The remainder is obtained by subtraction, so main + residual reproduces
    the increment of :func:`sgd_step` up to one rounding.
    """
    v = np.asarray(v, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    increment = sgd_step(v, Y, beta, sign) - v
    s = float(v @ Y)
    main = sign * beta * (s**3 * Y - v * s**4)
    return StepDecomposition(increment, main, increment - main)


def step_decomposition_rows(v: np.ndarray, Y: np.ndarray, beta: float, sign: int = 1) -> StepDecomposition:
    """Vectorized :func:`one_step_decomposition` over the rows of (n, d) arrays."""
    s = np.sum(v * Y, axis=1)
    w = v + (sign * beta * s**3)[:, None] * Y
    new = w / np.linalg.norm(w, axis=1)[:, None]
    increment = new - v
    main = sign * beta * ((s**3)[:, None] * Y - v * (s**4)[:, None])
    return StepDecomposition(increment, main, increment - main)


@dataclass(frozen=True)
class DriftCheck:
    drift: np.ndarray
    leading: np.ndarray
    bound: float

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.drift - self.leading)))

    @property
    def ok(self) -> bool:
        return self.max_deviation <= self.bound


def conditional_drift_check(v, spec: SourceSpec, beta: float, sign: Optional[int] = None) -> DriftCheck:
    """Exact E[increment | v] by enumeration, against beta sign (psi-3) v_k (v_k^2 - sum v^4).

    With the default sign(psi_4 - 3) the leading term is beta |psi - 3| v_k (...).
    """
    v = np.asarray(v, dtype=np.float64)
    sign = spec.moments.sign if sign is None else sign
    check_step_size(beta, spec.bound)
    support = [(float(y), p) for y, p in spec.finite_support]
    drift = enumeration_expectation(
        support, v.size, lambda y: sgd_step(v, np.array(y, dtype=np.float64), beta, sign) - v,
        budget=10**6,
    )
    leading = beta * sign * (float(spec.moments.psi4) - 3.0) * v * (v**2 - np.sum(v**4))
    B = spec.bound
    return DriftCheck(np.asarray(drift, dtype=np.float64), leading, 9 * B**4 * beta**2)


def align_to_component(v) -> tuple[int, int]:
    """(k, s) with k = argmax v_k^2 (0-based) and s = sign(v_k); needs v_k^2 > 1/2."""
    v = np.asarray(v, dtype=np.float64)
    k = int(np.argmax(v * v))
    if v[k] ** 2 <= 0.5:
        raise NotConvergedError(f"no dominant coordinate: max v_k^2 = {v[k] ** 2:.4g} <= 1/2")
    return k, 1 if v[k] > 0 else -1


def sin2_angle(v, k: int) -> float:
    """sin^2 of the angle between unit v and e_k, i.e. 1 - v_k^2."""
    v = np.asarray(v, dtype=np.float64)
    return float(min(1.0, max(0.0, 1.0 - v[k] ** 2)))


@dataclass
class Trajectory:
    """Recorded iterates of one replicate; ``states[i]`` is v at iteration ``n[i]``."""

    n: np.ndarray
    states: np.ndarray
    config: SgdConfig
    replicate: tuple = (0,)
    source: str = ""

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def t(self) -> np.ndarray:
        return self.n * self.config.beta

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def winner(self) -> int:
        return int(np.argmax(self.final**2))

    def sin2(self, k: Optional[int] = None) -> np.ndarray:
        k = self.winner() if k is None else k
        return np.clip(1.0 - self.states[:, k] ** 2, 0.0, 1.0)

    def u_states(self, model: MixingModel) -> np.ndarray:
        """Iterates in observation coordinates, u = A v."""
        return self.states @ model.matrix.T


@dataclass
class Ensemble:
    """Replicates recorded on a common grid; ``states`` has shape (R, m, d)."""

    n: np.ndarray
    states: np.ndarray
    config: SgdConfig
    keys: list = field(default_factory=list)
    source: str = ""

    @property
    def replicates(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @property
    def t(self) -> np.ndarray:
        return self.n * self.config.beta

    def trajectory(self, r: int) -> Trajectory:
        return Trajectory(self.n.copy(), self.states[r].copy(), self.config, self.keys[r], self.source)

    def winners(self) -> np.ndarray:
        return np.argmax(self.states[:, -1, :] ** 2, axis=1)

    def sin2(self) -> np.ndarray:
        """Per-replicate sin^2 to its own final dominant coordinate, shape (R, m)."""
        w = self.winners()
        vk = self.states[np.arange(self.replicates), :, w]
        return np.clip(1.0 - vk**2, 0.0, 1.0)

    def summary(self, moments=None) -> "EnsembleSummary":
        return EnsembleSummary.from_arrays(self.sin2(), self.states, moments)


@dataclass
class EnsembleSummary:
    """Additive per-record sums; ``merge`` adds counts and sums."""

    count: int
    sum_sin2: np.ndarray
    sumsq_sin2: np.ndarray
    sum_v: np.ndarray
    sum_objective: Optional[np.ndarray] = None

    @classmethod
    def from_arrays(cls, sin2: np.ndarray, states: np.ndarray, moments=None) -> "EnsembleSummary":
        obj = None if moments is None else objective_in_source_coords(states, moments).sum(axis=0)
        return cls(sin2.shape[0], sin2.sum(axis=0), (sin2**2).sum(axis=0), states.sum(axis=0), obj)

    def merge(self, other: "EnsembleSummary") -> "EnsembleSummary":
        obj = None
        if self.sum_objective is not None and other.sum_objective is not None:
            obj = self.sum_objective + other.sum_objective
        return EnsembleSummary(
            self.count + other.count,
            self.sum_sin2 + other.sum_sin2,
            self.sumsq_sin2 + other.sumsq_sin2,
            self.sum_v + other.sum_v,
            obj,
        )

    @property
    def mean_sin2(self) -> np.ndarray:
        return self.sum_sin2 / self.count

    @property
    def mean_v(self) -> np.ndarray:
        return self.sum_v / self.count

    @property
    def mean_objective(self) -> Optional[np.ndarray]:
        return None if self.sum_objective is None else self.sum_objective / self.count


def simulate_batch(
    starts: np.ndarray,
    rngs: Sequence[np.random.Generator],
    spec: SourceSpec,
    beta: float,
    sign: int,
    max_iters: int,
    stride: int,
    model: Optional[MixingModel] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance R replicates; returns (recorded n, states of shape (R, m, d)).

    Records every ``stride`` iterations and always the final iterate.
    """
    v = np.array(starts, dtype=np.float64)
    R, d = v.shape
    mixed = model is not None and not model.is_identity
    A = model.matrix if mixed else None
    x = np.ascontiguousarray(v @ A.T) if mixed else v

    record_n = np.arange(0, max_iters + 1, stride, dtype=np.int64)
    if record_n[-1] != max_iters:
        record_n = np.append(record_n, max_iters)
    out = np.empty((R, record_n.size, d))
    out[:, 0] = x
    coef = float(sign * beta)

    n = 0
    while n < max_iters:
        k = min(CHUNK, max_iters - n)
        Y = np.stack([sample_block(spec, g, CHUNK)[:k] for g in rngs])
        if mixed:
            Y = Y @ A.T
        lo = int(np.searchsorted(record_n, n + 1))
        hi = int(np.searchsorted(record_n, n + k, side="right"))
        advance(x, np.ascontiguousarray(Y), coef, record_n[lo:hi] - n, out, lo)
        n += k
    if mixed:
        out = out @ A
    return record_n, out


def _start_for(config: SgdConfig, d: int, rng: np.random.Generator) -> np.ndarray:
    v = config.start_vector(d)
    if config.random_signs:
        v = v * rng.choice(np.array([-1.0, 1.0]), size=d)
    return v


def _run_keys(config: SgdConfig, spec: SourceSpec, model, keys, sign: int):
    rngs = [replicate_rng(config.master_seed, *key) for key in keys]
    starts = np.stack([_start_for(config, spec.dim, g) for g in rngs])
    return simulate_batch(starts, rngs, spec, config.beta, sign, config.max_iters, config.stride, model)


def run_trajectory(
    config: SgdConfig,
    spec: SourceSpec,
    model: Optional[MixingModel] = None,
    replicate: int = 0,
) -> Trajectory:
    """One seeded SGD path, identical to replicate ``replicate`` of :func:`monte_carlo`."""
    sign = config.check(spec)
    n, states = _run_keys(config, spec, model, [(replicate,)], sign)
    return Trajectory(n, states[0], config, (replicate,), spec.name)


def _worker(args):
    config, spec, model, keys, sign = args
    return _run_keys(config, spec, model, keys, sign)


def run_keys(
    config: SgdConfig,
    spec: SourceSpec,
    model: Optional[MixingModel],
    keys: Sequence[tuple],
    workers: int = 1,
    batch: int = 4096,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the replicates named by ``keys`` and stack them in key order."""
    sign = config.check(spec)
    keys = [tuple(k) for k in keys]
    size = max(1, min(batch, -(-len(keys) // max(1, workers))))
    parts = [keys[i : i + size] for i in range(0, len(keys), size)]
    jobs = [(config, spec, model, part, sign) for part in parts]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(job) for job in jobs]
    return results[0][0], np.concatenate([r[1] for r in results], axis=0)


def monte_carlo(
    config: SgdConfig,
    spec: SourceSpec,
    model: Optional[MixingModel] = None,
    replicates: int = 1,
    workers: int = 1,
) -> Ensemble:
    """R independent replicates; replicate r uses the stream (master_seed, r)."""
    if replicates < 1:
        raise ValueError(f"need at least one replicate, got {replicates}")
    keys = [(r,) for r in range(replicates)]
    n, states = run_keys(config, spec, model, keys, workers=workers)
    return Ensemble(n, states, config, keys, spec.name)


@dataclass
class CollectionResult:
    runs_used: int
    components_found: list
    outcomes: list


def collect_many(
    config: SgdConfig,
    spec: SourceSpec,
    model: Optional[MixingModel] = None,
    collections: Union[int, Sequence[int]] = 1,
    max_runs: int = 1000,
    delta: float = 0.1,
    workers: int = 1,
) -> list[CollectionResult]:
    """Run independent component-collection experiments (a count or a list of ids).

    Run r of collection c uses the stream (master_seed, c, r).  Runs are
    simulated in rounds across all unfinished collections, which does not
    change any result.  A run counts as converged when its largest squared
    coordinate reached 1 - delta at some recorded iterate (100 records per
    run) and still exceeds 1/2 at ``max_iters``; the final state names the
    component.
    """
    ids = list(range(collections)) if isinstance(collections, int) else list(collections)
    d = spec.dim
    if d == 1:
        return [CollectionResult(1, [0], [(0, 1)]) for _ in ids]
    cfg = SgdConfig(
        config.beta, config.max_iters, max(1, config.max_iters // 100), config.init,
        config.master_seed, config.random_signs,
    )
    outcomes: dict = {c: [] for c in ids}
    found: dict = {c: set() for c in ids}
    done: dict = {c: None for c in ids}
    per_round = max(2, int(np.ceil(1.3 * d * sum(1.0 / k for k in range(1, d + 1)))))
    while True:
        active = [c for c in ids if done[c] is None and len(outcomes[c]) < max_runs]
        if not active:
            break
        keys = []
        for c in active:
            start = len(outcomes[c])
            keys += [(c, r) for r in range(start, min(start + per_round, max_runs))]
        _, states = run_keys(cfg, spec, model, keys, workers=workers)
        finals = states[:, -1, :]
        reached = np.max(states**2, axis=(1, 2)) >= 1.0 - delta
        good = reached & (np.max(finals**2, axis=1) > 0.5)
        for (c, r), v, ok in zip(keys, finals, good):
            if done[c] is not None:
                continue
            if not ok:
                raise NotConvergedError(
                    f"collection {c}: run {r} did not converge within {config.max_iters} iterations",
                    run_index=r,
                )
            k, s = align_to_component(v)
            outcomes[c].append((k, s))
            found[c].add(k)
            if len(found[c]) == d:
                done[c] = r + 1
    results = []
    for c in ids:
        order: list = []
        for k, _ in outcomes[c]:
            if k not in order:
                order.append(k)
        runs = done[c] if done[c] is not None else len(outcomes[c])
        results.append(CollectionResult(runs, order, outcomes[c]))
    return results


def collect_all_components(
    config: SgdConfig,
    spec: SourceSpec,
    model: Optional[MixingModel] = None,
    max_runs: int = 1000,
    delta: float = 0.1,
    collection: int = 0,
) -> CollectionResult:
    """Repeat independent runs until every component index has been recovered."""
    return collect_many(config, spec, model, [collection], max_runs, delta)[0]


def replay(v0, samples: np.ndarray, beta: float, sign: int) -> np.ndarray:
    """Iterate from ``v0`` over an explicit sample stream; returns every state, shape (n+1, d)."""
    samples = np.ascontiguousarray(np.asarray(samples, dtype=np.float64)[None])
    k, d = samples.shape[1:]
    x = np.array(v0, dtype=np.float64, ndmin=2)
    out = np.empty((1, k + 1, d))
    out[0, 0] = x[0]
    advance(x, samples, float(sign * beta), np.arange(1, k + 1, dtype=np.int64), out, 1)
    return out[0]


def sample_stream(spec: SourceSpec, master_seed: int, key: tuple, n: int) -> np.ndarray:
    """The first ``n`` samples drawn by replicate ``key`` when no sign flip is drawn."""
    g = replicate_rng(master_seed, *key)
    chunks: list = []
    while sum(c.shape[0] for c in chunks) < n:
        chunks.append(sample_block(spec, g, CHUNK))
    return np.concatenate(chunks)[:n] if chunks else np.empty((0, spec.dim))
