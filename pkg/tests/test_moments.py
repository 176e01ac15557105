import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tensorsgd import (
    MixingModel,
    cross_moments,
    enumeration_expectation,
    expect_weighted_power,
    fourth_moment_objective,
    make_spec,
    printed_formulas,
    random_orthogonal,
)
from tensorsgd.moments import MomentTable, objective_in_source_coords

RAD = make_spec("rademacher", 2).moments
TP2 = make_spec("threepoint", 2, 2).moments


def test_known_cross_moments():
    c = cross_moments(3, RAD)
    assert (c.q1, c.q2, c.eighth, c.lambda_sq) == (183, 182, 1641, Fraction(8, 9))
    c = cross_moments(2, RAD)
    assert (c.q1, c.q2, c.lambda_sq) == (32, 32, 0)
    c = cross_moments(4, RAD)
    assert (c.q1, c.q2, c.eighth, c.lambda_sq) == (544, 512, 8320, 16)
    c = cross_moments(3, TP2)
    assert (c.q1, c.q2, c.eighth, c.lambda_sq) == (1536, 1112, 11280, Fraction(3392, 9))


def test_cross_moments_need_two_coordinates():
    with pytest.raises(ValueError):
        cross_moments(1, RAD)


def test_eighth_moment_weighted_example():
    # v = (1, 1)/sqrt2 on Rademacher: (Y1 + Y2)/sqrt2 is 0 or +-sqrt2, so E(.)^8 = 16/2
    w = [1 / math.sqrt(2)] * 2
    assert expect_weighted_power(w, 8, RAD) == pytest.approx(8.0)
    assert expect_weighted_power([1, 1], 8, RAD) == 128


def test_expect_weighted_power_rejects():
    with pytest.raises(ValueError):
        expect_weighted_power([1, 2], 3, RAD)
    with pytest.raises(ValueError):
        expect_weighted_power([1, 2], 10, RAD)


@given(
    st.lists(st.integers(-3, 3), min_size=1, max_size=4),
    st.sampled_from([2, 4, 6, 8]),
    st.sampled_from(["rademacher", "threepoint"]),
)
def test_expansion_matches_enumeration(weights, p, kind):
    spec = make_spec(kind, len(weights), 2 if kind == "threepoint" else None)
    exact = enumeration_expectation(spec, len(weights), lambda y: sum(w * x for w, x in zip(weights, y)) ** p)
    assert expect_weighted_power(weights, p, spec.moments) == exact


@given(st.integers(2, 7), st.sampled_from(["rademacher", "threepoint", "uniform"]))
def test_consistency_identity(d, kind):
    m = make_spec(kind, d, 2 if kind == "threepoint" else None).moments
    c = cross_moments(d, m)
    assert d * c.q1 + d * (d - 1) * c.q2 == c.eighth


@given(st.integers(2, 60), st.sampled_from(["rademacher", "threepoint", "uniform"]))
def test_lambda_sq_nonnegative(d, kind):
    m = make_spec(kind, d, 3 if kind == "threepoint" else None).moments
    assert cross_moments(d, m).lambda_sq >= 0


def test_uniform_eighth_moment_against_sample():
    # no finite support to enumerate, so compare against a large sample
    m = make_spec("uniform", 2).moments
    rng = np.random.default_rng(0)
    Y = rng.uniform(-math.sqrt(3), math.sqrt(3), size=(2_000_000, 2))
    mc = np.mean(Y.sum(axis=1) ** 8)
    assert float(cross_moments(2, m).eighth) == pytest.approx(mc, rel=0.02)


def test_printed_formulas_differ_from_oracle():
    pf = printed_formulas(4, RAD)
    assert pf.q1_printed == 634 and pf.eighth_printed == 33520 and pf.eighth_printed_appendix == 31630
    pf3 = printed_formulas(3, RAD)
    assert pf3.lambda_sq_printed == Fraction(-5032, 9)
    # with the last Q1 coefficient at 15 the printed form recovers the oracle
    for d in range(2, 9):
        for m in (RAD, TP2):
            c = cross_moments(d, m)
            q1 = m.psi8 + 16 * (d - 1) * m.psi6 + 15 * (d - 1) * m.psi4**2 + 60 * (d - 1) * (d - 2) * m.psi4 \
                + 15 * (d - 1) * (d - 2) * (d - 3)
            assert q1 == c.q1


def test_enumeration_budget_and_continuous():
    with pytest.raises(ValueError):
        enumeration_expectation(make_spec("threepoint", 20, 2), 20, lambda y: 1, budget=1000)
    with pytest.raises(ValueError):
        enumeration_expectation(make_spec("uniform", 2), 2, lambda y: 1)


def test_enumeration_float_results():
    spec = make_spec("rademacher", 2)
    val = enumeration_expectation(spec, 2, lambda y: 0.5 * y[0] ** 2)
    assert isinstance(val, float) and val == 0.5


def test_fourth_moment_objective_identity_and_vstar():
    d = 3
    model = MixingModel.identity(d)
    u = np.full(d, d**-0.5)
    assert fourth_moment_objective(u, model, TP2) == pytest.approx(3 + 1 / d)
    assert fourth_moment_objective(np.eye(d)[0], model, TP2) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        fourth_moment_objective(np.ones(d), model, TP2)


@given(st.integers(0, 10**6))
def test_fourth_moment_objective_enumeration(seed):
    rng = np.random.default_rng(seed)
    spec = make_spec("threepoint", 3, 2)
    model = random_orthogonal(3, rng)
    u = rng.standard_normal(3)
    u /= np.linalg.norm(u)
    w = model.matrix.T @ u
    exact = enumeration_expectation(spec, 3, lambda y: float(np.dot(w, np.array(y, dtype=float))) ** 4)
    assert abs(fourth_moment_objective(u, model, spec.moments) - exact) < 1e-10


def test_objective_vectorized():
    v = np.array([[1.0, 0.0], [2**-0.5, 2**-0.5]])
    assert np.allclose(objective_in_source_coords(v, RAD), [1.0, 2.0])


def test_moment_table_indexing():
    m = MomentTable.from_even(2, 5, 20)
    assert m[4] == 2 and m.psi6 == 5 and m.psi8 == 20 and m.sign == -1
