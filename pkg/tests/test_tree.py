import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES, fixture_tree
from ncpopt.errors import InvalidTreeError, MissingStrategyError, TreeFormatError
from ncpopt.tree import (
    DiscreteLaw,
    Node,
    ScenarioTree,
    iid_tree,
    random_tree,
    terminal_law,
    tree_from_dict,
    validate_tree,
    wealth_process,
    zero_strategy,
)


def one_period(p_up=0.5, p_down=0.5):
    return ScenarioTree(1, 1, [
        Node("r", 0, None, 1.0, (0.0,)),
        Node("u", 1, "r", p_up, (1.0,)),
        Node("d", 1, "r", p_down, (-1.0,)),
    ])


class TestValidation:
    def test_well_formed_one_period(self):
        assert validate_tree(one_period()).ok

    def test_probabilities_not_summing_to_one(self):
        report = validate_tree(one_period(0.6, 0.6))
        assert not report.ok
        assert any("probabilities sum to 1.2" in p for p in report.problems)

    def test_time_gap(self):
        tree = ScenarioTree(2, 1, [
            Node("r", 0, None, 1.0, (0.0,)),
            Node("a", 2, "r", 1.0, (1.0,)),
        ])
        report = validate_tree(tree)
        assert any("time gap" in p for p in report.problems)

    def test_orphan(self):
        tree = ScenarioTree(1, 1, [
            Node("r", 0, None, 1.0, (0.0,)),
            Node("a", 1, "r", 1.0, (1.0,)),
            Node("b", 1, "ghost", 1.0, (1.0,)),
        ])
        assert any("orphan" in p for p in validate_tree(tree).problems)

    def test_require_valid_raises_with_problem_list(self):
        with pytest.raises(InvalidTreeError) as err:
            one_period(0.6, 0.6).require_valid()
        assert err.value.problems

    def test_leaf_before_horizon(self):
        tree = ScenarioTree(2, 1, [
            Node("r", 0, None, 1.0, (0.0,)),
            Node("a", 1, "r", 1.0, (1.0,)),
        ])
        assert any("leaves must sit" in p for p in validate_tree(tree).problems)


class TestWealth:
    def test_zero_strategy_keeps_capital(self):
        tree, _ = fixture_tree("trinomial_claim.json")
        wealth = wealth_process(tree, zero_strategy(tree), 1.5)
        assert all(v == 1.5 for v in wealth.values())

    def test_one_period_hand_values(self):
        wealth = wealth_process(one_period(), {"r": 2.0}, 0.0)
        assert wealth["u"] == 2.0 and wealth["d"] == -2.0

    def test_telescoping_two_periods(self):
        tree = ScenarioTree(2, 1, [
            Node("r", 0, None, 1.0, (0.0,)),
            Node("a", 1, "r", 1.0, (1.0,)),
            Node("b", 2, "a", 1.0, (2.0,)),
        ])
        assert wealth_process(tree, {"r": 1.0, "a": -1.0}, 0.7)["b"] == pytest.approx(0.7, abs=1e-15)

    def test_missing_entry_names_node(self):
        tree, _ = fixture_tree("coin_flip.json")
        with pytest.raises(MissingStrategyError) as err:
            wealth_process(tree, {"r": 1.0}, 0.0)
        assert err.value.node in tree.non_leaves

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-5, 5), st.floats(-5, 5))
    def test_linearity(self, seed, alpha, z1, z2):
        rng = np.random.default_rng(seed)
        tree = random_tree(rng, 2, assets=2, arbitrage_free=False)
        phi = {n: rng.normal(size=2) for n in tree.non_leaves}
        psi = {n: rng.normal(size=2) for n in tree.non_leaves}
        mix = {n: alpha * phi[n] + psi[n] for n in tree.non_leaves}
        left = wealth_process(tree, mix, alpha * z1 + z2)
        a = wealth_process(tree, phi, z1)
        b = wealth_process(tree, psi, z2)
        for n in (m.id for m in tree.nodes):
            assert left[n] == pytest.approx(alpha * a[n] + b[n], abs=1e-9)


class TestTerminalLaw:
    def test_point_mass(self):
        tree, _ = fixture_tree("coin_flip.json")
        assert terminal_law(tree, zero_strategy(tree), 0.0).atoms() == [(0.0, 1.0)]

    def test_coin_flip(self):
        assert terminal_law(one_period(), {"r": 1.0}, 0.0).atoms() == [(-1.0, 0.5), (1.0, 0.5)]

    def test_claim_shift(self):
        law = terminal_law(one_period(), {"r": 1.0}, 0.0, {"u": 1.0, "d": 1.0})
        assert law.atoms() == [(-2.0, 0.5), (0.0, 0.5)]

    def test_atoms_merge(self):
        law = DiscreteLaw.from_atoms([1.0, 1.0 + 1e-13, 2.0], [0.2, 0.3, 0.5])
        assert len(law.values) == 2 and law.probs[0] == pytest.approx(0.5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_masses_match_leaf_probabilities(self, seed):
        rng = np.random.default_rng(seed)
        tree = random_tree(rng, 3)
        strat = {n: rng.integers(-2, 3, size=1).astype(float) for n in tree.non_leaves}
        law = terminal_law(tree, strat, 0.0)
        assert law.probs.sum() == pytest.approx(1.0, abs=1e-12)
        wealth = wealth_process(tree, strat, 0.0)
        for v, p in law.atoms():
            mass = sum(tree.probability(l) for l in tree.leaves if abs(wealth[l] - v) <= 1e-12)
            assert p == pytest.approx(mass, abs=1e-12)


class TestJson:
    def test_round_trip(self):
        tree, claim = fixture_tree("trinomial_claim.json")
        again, claim2 = tree_from_dict(json.loads(json.dumps(tree.to_dict(claim))))
        assert again.to_dict(claim2) == tree.to_dict(claim)

    def test_unknown_field_rejected(self):
        data = json.loads((FIXTURES / "coin_flip.json").read_text())
        data["extra"] = 1
        with pytest.raises(TreeFormatError):
            tree_from_dict(data)

    def test_unknown_node_field_rejected(self):
        data = json.loads((FIXTURES / "coin_flip.json").read_text())
        data["nodes"][0]["label"] = "root"
        with pytest.raises(TreeFormatError):
            tree_from_dict(data)

    def test_claim_on_inner_node_rejected(self):
        tree = iid_tree([[1.0], [-1.0]], [0.5, 0.5], 2)
        with pytest.raises(TreeFormatError):
            terminal_law(tree, zero_strategy(tree), 0.0, {tree.root: 1.0})


def test_unconditional_probability_is_path_product():
    tree = iid_tree([[1.0], [-1.0]], [0.75, 0.25], 3)
    for leaf in tree.leaves:
        expected = np.prod([tree.node(n).prob for n in tree.path(leaf)])
        assert tree.probability(leaf) == pytest.approx(expected, abs=1e-15)
