import math
from fractions import Fraction

import numpy as np
import pytest

from ncpopt.errors import HypothesisError
from ncpopt.phenomena import (
    Q_NORM2,
    CounterexampleMarket,
    band_gap_certificate,
    closedness_probe,
    g_n,
    law_distance,
    metric_grid,
    moment_residuals,
    nonexistence_sweep,
    q_k,
    rectangle_mass,
    weak_convergence_ladder,
)
from ncpopt.preferences import make_builtin_utility

BB = make_builtin_utility("bounded_below", {"a": 0.5})


class TestSweep:
    def test_hand_values(self):
        sweep = nonexistence_sweep(BB, [0.0, 1.0, 2.0])
        expected = [0.0, 0.5 * ((1 - math.exp(-1)) + 0.5 * (math.exp(-1) - 1)),
                    0.5 * ((1 - math.exp(-2)) + 0.5 * (math.exp(-2) - 1))]
        assert np.allclose(sweep.values, expected, atol=1e-15)
        assert sweep.values[1] == pytest.approx(0.15803, abs=1e-5)
        assert sweep.increasing

    def test_limit_not_attained(self):
        sweep = nonexistence_sweep(BB, np.linspace(0, 20, 81))
        assert sweep.limit == pytest.approx(0.25, abs=1e-15)
        assert np.all(sweep.gaps > 0)

    def test_symmetric_utility_is_flat(self):
        sweep = nonexistence_sweep(make_builtin_utility("tanh"), [0.0, 1.0, 2.0])
        assert not sweep.increasing
        assert np.allclose(sweep.values, 0.0, atol=1e-15)

    def test_refuses_divergent_utility(self):
        with pytest.raises(HypothesisError):
            nonexistence_sweep(make_builtin_utility("cara_capped"), [0.0, 1.0])

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            nonexistence_sweep(BB, [0.0, 2.0, 1.0])


class TestLadder:
    def test_sawtooth(self):
        x = np.linspace(0, 1, 1001)
        for n in (1, 3, 8):
            y = g_n(x, n)
            assert y.min() >= 0 and y.max() <= 1
            inner = (np.floor(n * x[:-1]) == np.floor(n * x[1:])) & (x[1:] < 1)
            slopes = np.diff(y)[inner] / np.diff(x)[inner]
            assert np.allclose(slopes, n)

    def test_example(self):
        assert rectangle_mass(2, 0.3, 0.5) == pytest.approx(0.25, abs=1e-15)
        assert abs(rectangle_mass(2, 0.3, 0.5) - 0.15) == pytest.approx(0.10, abs=1e-15)

    def test_multiples_of_one_over_n(self):
        for n in (1, 4, 7):
            for l in range(n + 1):
                for b in (0.0, 0.3, 0.77, 1.0):
                    assert rectangle_mass(n, l / n, b) == pytest.approx(b * l / n, abs=1e-14)

    def test_exact_against_rational_arithmetic(self):
        """Closed form vs measure of {u <= a : frac(n u) <= b} in exact fractions."""
        for n in (1, 2, 5):
            for a in (Fraction(3, 10), Fraction(7, 9), Fraction(1, 1)):
                for b in (Fraction(1, 2), Fraction(1, 7)):
                    total = Fraction(0)
                    for k in range(n):
                        lo = Fraction(k, n)
                        hi = min(lo + b / n, a)
                        total += max(Fraction(0), hi - lo)
                    assert rectangle_mass(n, float(a), float(b)) == pytest.approx(float(total), abs=1e-15)

    def test_bound(self):
        for n, d in weak_convergence_ladder(range(1, 65)):
            assert d <= 1.0 / n + 1e-12


class TestCounterexample:
    def test_probabilities(self):
        m = CounterexampleMarket(4)
        assert sum(m.probs.values()) == pytest.approx(1.0, abs=1e-15)
        assert m.probs[-1] == 0.5 and m.probs[1] == 0.25 and m.probs[4] == 2.0 ** -4

    def test_q_bounded_and_orthogonal(self):
        u = (np.arange(4096) + 0.5) / 4096
        for k in range(1, 6):
            assert np.max(np.abs(q_k(u, k))) <= 0.5
            assert abs(np.mean(q_k(u, k))) < 1e-12
            assert np.mean(q_k(u, k) ** 2) == pytest.approx(Q_NORM2, abs=1e-12)
            for j in range(1, k):
                assert abs(np.mean(q_k(u, k) * q_k(u, j))) < 1e-12

    def test_bands(self):
        m = CounterexampleMarket(6)
        u = np.linspace(0, 1, 1001)
        for k in range(1, 7):
            assert np.all(m.f(k, u) >= 3 ** k)
            lo, hi = m.band(k)
            assert np.all(1.0 * m.f(k, u) >= lo) and np.all(2.0 * m.f(k, u) <= hi)
        assert m.bands_disjoint() and band_gap_certificate(40)

    def test_ladder_distance_decreases(self):
        rep = closedness_probe(4, n_values=(1, 2, 4, 8, 16, 32, 64))
        d = [x for _, x in rep.ladder]
        assert all(b < a for a, b in zip(d, d[1:]))

    def test_constant_three_halves(self):
        m = CounterexampleMarket(4)
        res = moment_residuals(m, lambda u: np.full_like(u, 1.5))
        assert np.max(np.abs(res)) < 1e-14
        assert law_distance(m, lambda u: np.full_like(u, 1.5), metric_grid(m)) > 0.1

    def test_single_mode_perturbation(self):
        m = CounterexampleMarket(4)
        res = moment_residuals(m, lambda u: 1.5 + 0.1 * q_k(u, 1))
        assert res[0] == pytest.approx(0.1 * Q_NORM2, abs=1e-14)
        assert np.max(np.abs(res[1:])) < 1e-14

    def test_probe_best_is_constant(self):
        rep = closedness_probe(4, n_values=(1,))
        assert rep.best == "const 1.5" and rep.best_max_residual < 1e-14 and rep.best_distance > 0.1
