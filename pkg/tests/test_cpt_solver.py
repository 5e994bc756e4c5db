import math

import numpy as np
import pytest

import oracles
from conftest import fixture_pref, fixture_tree
from ncpopt.cpt_solver import (
    StrategySpace,
    batch_value,
    choquet_minus,
    choquet_plus,
    cpt_value,
    loss_probability_bound,
    optimize_cpt,
    region_radius,
    search_region,
)
from ncpopt.dp_solver import solve
from ncpopt.errors import HypothesisError
from ncpopt.no_arbitrage import analyze
from ncpopt.preferences import CPTPreference, EUPreference, make_builtin_distortion, make_builtin_utility
from ncpopt.tree import DiscreteLaw, random_tree

LIN = make_builtin_utility("linear")
ID = make_builtin_distortion("identity")
SQ = make_builtin_distortion("power", {"gamma": 2.0})


def pref(u_plus="cara_capped", u_minus="linear", w_plus=ID, w_minus=ID, pp=None, pm=None):
    return CPTPreference(make_builtin_utility(u_plus, pp), make_builtin_utility(u_minus, pm), w_plus, w_minus)


class TestChoquet:
    def test_gain_example(self):
        law = DiscreteLaw.from_atoms([1.0, -1.0], [0.5, 0.5])
        assert choquet_plus(law, make_builtin_utility("capped_linear", {"cap": 1.0}), SQ) == pytest.approx(0.25)

    def test_loss_example(self):
        law = DiscreteLaw.from_atoms([-1.0, 0.0], [0.3, 0.7])
        assert choquet_minus(law, LIN, SQ) == pytest.approx(0.09, abs=1e-15)

    def test_no_gains(self):
        law = DiscreteLaw.from_atoms([-1.0, -2.0, 0.0], [0.2, 0.3, 0.5])
        assert choquet_plus(law, make_builtin_utility("cara_capped"), SQ) == 0.0

    def test_identity_is_expectation(self, rng):
        for _ in range(20):
            x = rng.normal(size=7)
            p = rng.dirichlet(np.ones(7))
            law = DiscreteLaw.from_atoms(x, p)
            u = make_builtin_utility("cara_capped")
            assert choquet_plus(law, u, ID) == pytest.approx(float(np.dot(p, u(np.maximum(x, 0)))), abs=1e-12)

    def test_drifted_coin_values(self):
        tree, _ = fixture_tree("drifted_coin.json")
        v = cpt_value(tree, pref(w_plus=SQ, w_minus=SQ), None, {tree.root: np.array([1.0])}, 0.0)
        assert v.v_plus == pytest.approx((1 - math.exp(-1)) * 0.5625, abs=1e-12)
        assert v.v_minus == pytest.approx(0.0625, abs=1e-15)
        assert v.v == pytest.approx(0.29307, abs=1e-5)

    def test_zero_strategy(self):
        tree, _ = fixture_tree("coin_flip.json")
        v = cpt_value(tree, pref(w_plus=SQ), None, {n: 0.0 for n in tree.non_leaves}, 0.0)
        assert (v.v_plus, v.v_minus) == (0.0, 0.0)

    def test_riemann_agreement(self, rng):
        """Random 10-atom laws, several distortions."""
        dists = [ID, SQ, make_builtin_distortion("kt_inverse_s"), make_builtin_distortion("power", {"gamma": 0.5})]
        for i in range(12):
            x = rng.normal(scale=1.5, size=10)
            p = rng.dirichlet(np.ones(10))
            w_plus, w_minus = dists[i % 4], dists[(i + 1) % 4]
            pr = CPTPreference(make_builtin_utility("cara_capped"), make_builtin_utility("log1p"), w_plus, w_minus)
            law = DiscreteLaw.from_atoms(x, p)
            rp, rm = oracles.riemann_cpt(x, p, pr, cells=1_000_000)
            assert choquet_plus(law, pr.u_plus, w_plus) == pytest.approx(rp, abs=1e-6)
            assert choquet_minus(law, pr.u_minus, w_minus) == pytest.approx(rm, abs=1e-6)

    def test_comonotonic_shift(self, rng):
        w = make_builtin_distortion("kt_inverse_s")
        for _ in range(20):
            x = rng.uniform(0, 3, size=6)
            p = rng.dirichlet(np.ones(6))
            s = float(rng.uniform(0.1, 2))
            base = choquet_plus(DiscreteLaw.from_atoms(x, p), LIN, w)
            shifted = choquet_plus(DiscreteLaw.from_atoms(x + s, p), LIN, w)
            assert shifted == pytest.approx(base + s, abs=1e-12)

    def test_heavier_loss_weighting_lowers_value(self, rng):
        tree, _ = fixture_tree("trinomial_claim.json")
        strat = {n: np.array([rng.normal()]) for n in tree.non_leaves}
        values = [cpt_value(tree, pref(w_minus=make_builtin_distortion("power", {"gamma": g})), None, strat, 0.0)
                  for g in (2.0, 1.0, 0.5)]
        assert values[0].v >= values[1].v - 1e-12 >= values[2].v - 2e-12


class TestReduction:
    def test_identity_cpt_equals_expected_utility(self):
        rng = np.random.default_rng(99)
        pr = pref("cara_capped", "exp_loss")
        u = make_builtin_utility("cara_capped")
        for _ in range(100):
            tree = random_tree(rng, int(rng.integers(1, 4)))
            strat = {n: np.array([rng.normal(scale=2)]) for n in tree.non_leaves}
            claim = {l: float(rng.normal(scale=0.5)) for l in tree.leaves}
            z = float(rng.normal())
            v = cpt_value(tree, pr, claim, strat, z).v
            assert v == pytest.approx(oracles.eu_of_strategy(tree, u, strat, z, claim), abs=1e-9)


class TestRegion:
    def test_linear_example(self):
        assert region_radius(0.25, 1.0, LIN, ID, 1.0, 0.0, 1.0) == pytest.approx(9.0, abs=1e-9)

    def test_steeper_loss_shrinks(self):
        r1 = region_radius(0.25, 1.0, LIN, ID, 1.0, 0.0, 1.0)
        r2 = region_radius(0.25, 1.0, make_builtin_utility("linear", {"slope": 2.0}), ID, 1.0, 0.0, 1.0)
        assert (r2 - 1.0) == pytest.approx((r1 - 1.0) / 2.0, abs=1e-9)

    def test_more_mass_shrinks(self):
        assert region_radius(0.9, 1.0, LIN, ID, 1.0, 0.0, 1.0) < region_radius(0.25, 1.0, LIN, ID, 1.0, 0.0, 1.0)

    def test_bounded_loss_refused(self):
        tree, _ = fixture_tree("coin_flip.json")
        pr = pref(u_minus="capped_linear")
        with pytest.raises(HypothesisError):
            search_region(tree, pr, None, 0.0, analyze(tree), 0.0)

    @pytest.mark.parametrize("name", ["coin_flip.json", "drifted_coin_t2.json", "trinomial_claim.json"])
    def test_violators_score_below_zero_strategy(self, name):
        tree, claim = fixture_tree(name)
        pr = fixture_pref("pref_cpt_distorted.json")
        na = analyze(tree)
        space = StrategySpace(tree, claim)
        vp0, vm0 = batch_value(space, pr, np.zeros(space.dim), 0.0)
        c = float(vp0[0] - vm0[0])
        region = search_region(tree, pr, claim, 0.0, na, c)
        rng = np.random.default_rng(8)
        rad = np.array([region.radius[n] for n, _ in space.blocks])
        count = 0
        while count < 100:
            theta = rng.uniform(-1.5, 1.5, size=space.dim) * rad
            if not region.violated(space, theta[None, :])[0]:
                continue
            vp, vm = batch_value(space, pr, theta, 0.0)
            assert vp[0] - vm[0] < c
            count += 1

    def test_loss_probability_bound(self):
        pr = pref(w_minus=SQ)
        assert loss_probability_bound(pr, 1.0, 0.0, 4.0) == pytest.approx(0.5, abs=1e-10)


class TestOptimize:
    def test_identity_matches_dp(self):
        tree, _ = fixture_tree("drifted_coin_t2.json")
        cpt = optimize_cpt(tree, fixture_pref("pref_cpt_identity.json"), None, 0.0)
        dp = solve(tree, fixture_pref("pref_eu_cara.json"), None, 0.0)
        assert cpt.value.v == pytest.approx(dp.value, abs=1e-3)
        assert cpt.converged

    def test_symmetric_coin_stays_flat(self):
        tree, _ = fixture_tree("coin_flip.json")
        w = make_builtin_distortion("kt_inverse_s")
        pr = CPTPreference(make_builtin_utility("capped_linear", {"cap": 10.0}),
                           make_builtin_utility("linear", {"slope": 2.0}), w, w)
        res = optimize_cpt(tree, pr, None, 0.0)
        assert res.value.v == pytest.approx(0.0, abs=1e-12)
        assert all(np.all(v == 0.0) for v in res.strategy.values())
        # grid enumeration confirms nothing beats zero
        assert oracles.cpt_grid_value(tree, pr, 0.0, radius=3.0, points=13) <= 1e-12

    def test_one_period_against_fine_grid(self):
        tree, _ = fixture_tree("drifted_coin.json")
        pr = fixture_pref("pref_cpt_distorted.json")
        res = optimize_cpt(tree, pr, None, 0.0)
        grid = oracles.cpt_grid_value(tree, pr, 0.0, radius=5.0, points=10_001)
        assert res.value.v == pytest.approx(grid, abs=1e-3)
        assert res.value.v >= grid - 1e-9

    def test_two_period_not_worse_than_grid(self):
        tree, _ = fixture_tree("coin_flip.json")
        pr = fixture_pref("pref_cpt_distorted.json")
        res = optimize_cpt(tree, pr, None, 0.0)
        assert res.value.v >= oracles.cpt_grid_value(tree, pr, 0.0, radius=3.0, points=25) - 1e-9
        assert res.value.v >= res.baseline

    def test_budget_exhaustion_flagged(self):
        from ncpopt.config import DEFAULT_CONFIG
        tree, _ = fixture_tree("coin_flip.json")
        cfg = DEFAULT_CONFIG.with_overrides({"cpt_max_evals": 50})
        res = optimize_cpt(tree, fixture_pref("pref_cpt_distorted.json"), None, 0.0, cfg)
        assert res.converged is False
        assert res.value.v >= res.baseline

    def test_report_fields(self):
        tree, _ = fixture_tree("drifted_coin.json")
        report = optimize_cpt(tree, fixture_pref("pref_cpt_distorted.json"), None, 0.0).to_dict()
        assert set(report) == {"v_plus", "v_minus", "v", "strategy", "region", "converged"}
