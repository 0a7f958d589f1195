from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from lupi_affect.errors import UndefinedCorrelationError
from lupi_affect.evaluation.metrics import (
    accuracy, ccc, confidence_halfwidth, majority_baseline, pcc, safe_metric,
)
from lupi_affect.windowing import HIGH, LOW

mpmath.mp.dps = 50


def exact_moments(x, y):
    xs = [Fraction(v) for v in x]
    ys = [Fraction(v) for v in y]
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    vx = sum((a - mx) ** 2 for a in xs) / n
    vy = sum((b - my) ** 2 for b in ys) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(xs, ys)) / n
    return mx, my, vx, vy, cov


def exact_ccc(x, y):
    mx, my, vx, vy, cov = exact_moments(x, y)
    return 2 * cov / (vx + vy + (mx - my) ** 2)


def exact_pcc(x, y):
    _, _, vx, vy, cov = exact_moments(x, y)
    return mpmath.mpf(cov.numerator) / cov.denominator / mpmath.sqrt(
        mpmath.mpf(vx.numerator) / vx.denominator * mpmath.mpf(vy.numerator) / vy.denominator
    )


def test_ccc_textbook_example():
    assert exact_ccc([1, 2, 3], [2, 4, 6]) == Fraction(4, 11)
    assert ccc([1, 2, 3], [2, 4, 6]) == pytest.approx(4 / 11, abs=1e-15)
    assert pcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)


def test_against_exact_rationals_on_200_series():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(2, 12))
        x = np.round(rng.normal(size=n), 3)
        y = np.round(0.5 * x + rng.normal(size=n), 3)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        c, p = ccc(x, y), pcc(x, y)
        assert abs(c - float(exact_ccc(x, y))) < 1e-9
        assert abs(p - float(exact_pcc(x, y))) < 1e-9
        assert abs(c) <= abs(p) + 1e-12


def test_sign_and_identity_cases():
    x = np.array([0.1, -0.4, 0.9, 0.3])
    assert pcc(x, x) == pytest.approx(1.0) and ccc(x, x) == pytest.approx(1.0)
    assert pcc(x, -x) == pytest.approx(-1.0)
    shifted = ccc(x, x + 0.5)
    assert shifted < pcc(x, x + 0.5) == pytest.approx(1.0)


def test_constant_series():
    with pytest.raises(UndefinedCorrelationError):
        pcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError):
        ccc([1, 1, 1], [1, 2, 3])
    assert ccc([2, 2, 2], [2, 2, 2]) == 1.0
    assert np.isnan(safe_metric(pcc, [1, 1], [0, 1]))


series = st.lists(st.floats(-100, 100, allow_subnormal=False), min_size=3, max_size=30)


@given(series, st.floats(0.1, 10), st.floats(-50, 50), st.integers(0, 2**31))
def test_affine_invariances(x, a, b, seed):
    x = np.array(x)
    y = x * 0.3 + np.random.default_rng(seed).normal(size=x.size)
    assume(np.std(x) > 1e-3 and np.std(y) > 1e-3)
    assert pcc(a * x + b, y) == pytest.approx(pcc(x, y), abs=1e-7)
    assert ccc(a * x + b, a * y + b) == pytest.approx(ccc(x, y), abs=1e-7)
    assert abs(ccc(x, y)) <= abs(pcc(x, y)) + 1e-12
    assert -1 <= ccc(x, y) <= 1 and -1 <= pcc(x, y) <= 1


def test_accuracy():
    assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert accuracy([1, 1], [0, 0]) == 0.0
    assert accuracy([1, 0, 1, 1], [1, 0, 1, 0]) == 0.75
    with pytest.raises(ValueError):
        accuracy([], [])


def test_majority_baseline():
    clf = majority_baseline([HIGH] * 6 + [LOW] * 4)
    assert np.all(clf.predict(5) == HIGH)
    test = np.array([HIGH, LOW, LOW, HIGH, HIGH])
    assert accuracy(clf.predict(5), test) == np.mean(test == HIGH)
    assert majority_baseline([HIGH, LOW]).prediction == LOW


def test_confidence_halfwidth():
    v = np.array([0.6, 0.7, 0.8, 0.7])
    assert confidence_halfwidth(v) == pytest.approx(1.959963984540054 * v.std(ddof=1) / 2)
    assert np.isnan(confidence_halfwidth([0.5]))
