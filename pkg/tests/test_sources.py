from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tensorsgd import MixingModel, make_spec, observe, random_orthogonal, sample_block, sample_source
from tensorsgd.moments import MomentTable


def test_rademacher_moments():
    m = make_spec("rademacher", 3).moments
    assert m.psi == (1, 0, 1, 0, 1, 0, 1, 0, 1)
    assert m.gap == 2.0 and m.sign == -1


def test_uniform_moments_exact():
    m = make_spec("uniform", 2).moments
    assert (m.psi4, m.psi6, m.psi8) == (Fraction(9, 5), Fraction(27, 7), Fraction(9))
    assert m.sign == -1
    assert m.gap == pytest.approx(1.2)


def test_threepoint_moments():
    m = make_spec("threepoint", 3, 2).moments
    assert (m.psi4, m.psi6, m.psi8) == (4, 16, 64)
    assert m.gap == 1.0 and m.sign == 1


def test_threepoint_a1_is_rademacher():
    assert make_spec("three-point", 2, 1).moments.psi == make_spec("rademacher", 2).moments.psi


@pytest.mark.parametrize("kind, a", [("threepoint", 0.5), ("threepoint", None), ("rademacher", 2), ("gaussian", None)])
def test_invalid_specs(kind, a):
    with pytest.raises(ValueError):
        make_spec(kind, 3, a)


def test_invalid_dimension():
    with pytest.raises(ValueError):
        make_spec("rademacher", 0)


def test_moment_table_rejects_impossible():
    with pytest.raises(ValueError):
        MomentTable.from_even(Fraction(1, 2), 1, 1)
    with pytest.raises(ValueError):
        MomentTable.from_even(4, 10, 64)  # psi6 < psi4^2
    with pytest.raises(ValueError):
        MomentTable((1, 1, 1, 0, 1, 0, 1, 0, 1))


@pytest.mark.parametrize("kind, a, B", [("rademacher", None, 5.0), ("uniform", None, 15.0), ("threepoint", 2, 20.0)])
def test_bound(kind, a, B):
    spec = make_spec(kind, 5, a)
    assert spec.bound == B
    Y = sample_block(spec, np.random.default_rng(0), 5000)
    assert np.max(np.sum(Y**2, axis=1)) <= B + 1e-12


@pytest.mark.parametrize("kind, a", [("rademacher", None), ("uniform", None), ("threepoint", 2), ("threepoint", 1.5)])
def test_sample_moments_match(kind, a):
    spec = make_spec(kind, 4, a)
    Y = sample_block(spec, np.random.default_rng(1), 200_000).ravel()
    for p in (2, 4):
        assert np.mean(Y**p) == pytest.approx(float(spec.moments[p]), rel=0.03)
    assert abs(np.mean(Y**3)) < 0.05


def test_finite_support_sums_to_one():
    for spec in (make_spec("rademacher", 2), make_spec("threepoint", 2, 3)):
        assert sum(p for _, p in spec.finite_support) == 1
    assert make_spec("uniform", 2).finite_support is None


def test_sampling_deterministic():
    spec = make_spec("threepoint", 3, 2)
    a = sample_block(spec, np.random.default_rng(7), 10)
    b = sample_block(spec, np.random.default_rng(7), 10)
    assert np.array_equal(a, b)
    assert sample_source(spec, np.random.default_rng(7)).shape == (3,)


@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_random_orthogonal_is_orthonormal(d, seed):
    A = random_orthogonal(d, np.random.default_rng(seed)).matrix
    assert np.abs(A.T @ A - np.eye(d)).max() < 1e-12


def test_haar_first_column_uniform_on_sphere():
    # E a_11^2 = 1/d and E a_11^4 = 3/(d(d+2)) under Haar measure
    rng = np.random.default_rng(3)
    d = 4
    x = np.array([random_orthogonal(d, rng).matrix[0, 0] for _ in range(20000)])
    assert np.mean(x**2) == pytest.approx(1 / d, rel=0.03)
    assert np.mean(x**4) == pytest.approx(3 / (d * (d + 2)), rel=0.06)
    assert abs(np.mean(np.sign(x))) < 0.03


def test_mixing_model_validation_and_copy():
    M = np.eye(3)
    model = MixingModel(M)
    M[0, 0] = 5.0
    assert model.matrix[0, 0] == 1.0
    with pytest.raises(ValueError):
        model.matrix[0, 0] = 2.0
    with pytest.raises(ValueError):
        MixingModel(np.ones((3, 3)))
    with pytest.raises(ValueError):
        MixingModel(np.eye(3)[:2])
    with pytest.raises(ValueError):
        random_orthogonal(1, np.random.default_rng(0))


def test_observe():
    rng = np.random.default_rng(4)
    model = random_orthogonal(3, rng)
    Y = rng.standard_normal((5, 3))
    assert np.allclose(observe(model, Y), (model.matrix @ Y.T).T)
    assert np.allclose(observe(model, Y[0]), model.matrix @ Y[0])
    with pytest.raises(ValueError):
        observe(model, np.ones(4))
