"""Finite filtered markets represented as event trees.

Nodes at time ``t`` are the atoms of the information available at ``t``.
Every node stores the conditional probability of the branch leading to it
and the price vector of the ``d`` risky assets; the riskless asset has unit
price throughout, so wealth is ``z`` plus accumulated trading gains.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import InvalidTreeError, MissingStrategyError, TreeFormatError

PROB_TOL = 1e-12
MERGE_TOL = 1e-12

Strategy = dict  # node id -> position vector (asset units) held over the next step
Claim = dict  # leaf id -> payoff


@dataclass(frozen=True)
class Node:
    id: str
    time: int
    parent: str | None
    prob: float
    price: tuple[float, ...]


@dataclass
class ValidationReport:
    ok: bool
    problems: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


class ScenarioTree:
    """Immutable event tree, stored in time-level order.

    Construction never fails on structural defects so that
    :func:`validate_tree` can report them; solvers call
    :meth:`require_valid` first.
    """

    def __init__(self, horizon: int, assets: int, nodes):
        self.horizon = int(horizon)
        self.assets = int(assets)
        self.nodes: tuple[Node, ...] = tuple(sorted(nodes, key=lambda n: n.time))
        self._by_id = {n.id: n for n in self.nodes}
        children: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            if n.parent is not None and n.parent in children:
                children[n.parent].append(n.id)
        self._children = {k: tuple(v) for k, v in children.items()}
        self._validation: ValidationReport | None = None

    # -- structure -------------------------------------------------------
    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id) -> bool:
        return node_id in self._by_id

    def node(self, node_id: str) -> Node:
        return self._by_id[node_id]

    @cached_property
    def root(self) -> str:
        roots = [n.id for n in self.nodes if n.parent is None]
        if not roots:
            raise InvalidTreeError(["no root node"])
        return roots[0]

    def children(self, node_id: str) -> tuple[str, ...]:
        return self._children[node_id]

    def is_leaf(self, node_id: str) -> bool:
        return not self._children[node_id]

    @cached_property
    def levels(self) -> list[list[str]]:
        out: list[list[str]] = [[] for _ in range(self.horizon + 1)]
        for n in self.nodes:
            if 0 <= n.time <= self.horizon:
                out[n.time].append(n.id)
        return out

    @cached_property
    def leaves(self) -> list[str]:
        return [n.id for n in self.nodes if not self._children[n.id]]

    @cached_property
    def non_leaves(self) -> list[str]:
        return [n.id for n in self.nodes if self._children[n.id]]

    def price(self, node_id: str) -> np.ndarray:
        return np.asarray(self._by_id[node_id].price, dtype=float)

    def increment(self, node_id: str) -> np.ndarray:
        """Price change on the branch into ``node_id``."""
        n = self._by_id[node_id]
        if n.parent is None:
            return np.zeros(self.assets)
        return self.price(node_id) - self.price(n.parent)

    def child_increments(self, node_id: str) -> tuple[np.ndarray, np.ndarray]:
        """Increments (k x d) and conditional probabilities of the children."""
        kids = self._children[node_id]
        incs = np.array([self.increment(c) for c in kids], dtype=float).reshape(len(kids), self.assets)
        probs = np.array([self._by_id[c].prob for c in kids], dtype=float)
        return incs, probs

    @cached_property
    def _uncond(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for n in self.nodes:
            out[n.id] = 1.0 if n.parent is None else out.get(n.parent, 0.0) * n.prob
        return out

    def probability(self, node_id: str) -> float:
        """Unconditional probability of reaching the node."""
        return self._uncond[node_id]

    def leaves_under(self, node_id: str) -> list[str]:
        stack, out = [node_id], []
        while stack:
            cur = stack.pop()
            kids = self._children[cur]
            if kids:
                stack.extend(reversed(kids))
            else:
                out.append(cur)
        return out

    def conditional_leaf_probs(self, node_id: str) -> tuple[list[str], np.ndarray]:
        leaves = self.leaves_under(node_id)
        base = self._uncond[node_id]
        return leaves, np.array([self._uncond[l] / base for l in leaves])

    def descendants_at(self, node_id: str, time: int) -> list[str]:
        frontier = [node_id]
        for _ in range(time - self._by_id[node_id].time):
            frontier = [c for f in frontier for c in self._children[f]]
        return frontier

    def path(self, node_id: str) -> list[str]:
        """Root-to-node path, inclusive."""
        out = [node_id]
        while self._by_id[out[-1]].parent is not None:
            out.append(self._by_id[out[-1]].parent)
        return out[::-1]

    # -- validation ------------------------------------------------------
    def require_valid(self) -> "ScenarioTree":
        if self._validation is None:
            self._validation = validate_tree(self)
        if not self._validation.ok:
            raise InvalidTreeError(self._validation.problems)
        return self

    # -- serialisation ---------------------------------------------------
    def to_dict(self, claim: Mapping[str, float] | None = None) -> dict:
        out = {
            "horizon": self.horizon,
            "assets": self.assets,
            "nodes": [
                {"id": n.id, "time": n.time, "parent": n.parent, "prob": n.prob, "price": list(n.price)}
                for n in self.nodes
            ],
        }
        if claim:
            out["claim"] = {str(k): float(v) for k, v in claim.items()}
        return out


def validate_tree(tree: ScenarioTree) -> ValidationReport:
    """Diagnose structural problems without raising."""
    problems: list[str] = []
    if tree.horizon < 1:
        problems.append(f"horizon must be >= 1, got {tree.horizon}")
    if tree.assets < 1:
        problems.append(f"asset count must be >= 1, got {tree.assets}")
    seen: set[str] = set()
    for n in tree.nodes:
        if n.id in seen:
            problems.append(f"duplicate node id {n.id!r}")
        seen.add(n.id)
    roots = [n for n in tree.nodes if n.parent is None]
    if len(roots) != 1:
        problems.append(f"expected exactly one root, found {len(roots)}")
    for r in roots:
        if r.time != 0:
            problems.append(f"root {r.id!r} has time {r.time}, expected 0")
        if abs(r.prob - 1.0) > PROB_TOL:
            problems.append(f"root {r.id!r} probability {r.prob:g} != 1")
    for n in tree.nodes:
        if len(n.price) != tree.assets:
            problems.append(f"node {n.id!r} price has {len(n.price)} entries, expected {tree.assets}")
        elif not all(math.isfinite(p) for p in n.price):
            problems.append(f"node {n.id!r} has non-finite price")
        if n.parent is None:
            continue
        parent = tree._by_id.get(n.parent)
        if parent is None:
            problems.append(f"orphan node {n.id!r}: parent {n.parent!r} missing")
            continue
        if n.time != parent.time + 1:
            problems.append(f"time gap: node {n.id!r} at t={n.time} under parent {parent.id!r} at t={parent.time}")
        if not (0.0 < n.prob <= 1.0):
            problems.append(f"node {n.id!r} branch probability {n.prob:g} outside (0, 1]")
    for n in tree.nodes:
        kids = tree.children(n.id)
        if kids:
            total = sum(tree.node(c).prob for c in kids)
            if abs(total - 1.0) > PROB_TOL:
                problems.append(f"children of {n.id!r}: probabilities sum to {total:.12g}")
            if n.time >= tree.horizon:
                problems.append(f"node {n.id!r} at t={n.time} has children beyond the horizon")
        elif n.time != tree.horizon:
            problems.append(f"leaf {n.id!r} at t={n.time}, leaves must sit at t={tree.horizon}")
    return ValidationReport(ok=not problems, problems=problems)


def check_claim(tree: ScenarioTree, claim: Mapping[str, float] | None) -> np.ndarray:
    """Claim payoffs as an array aligned with ``tree.leaves`` (zero if absent)."""
    claim = claim or {}
    leaves = set(tree.leaves)
    for k, v in claim.items():
        if k not in leaves:
            raise TreeFormatError(f"claim refers to non-leaf node {k!r}")
        if not math.isfinite(float(v)):
            raise TreeFormatError(f"claim at {k!r} is not finite")
    return np.array([float(claim.get(l, 0.0)) for l in tree.leaves])


def _position(tree: ScenarioTree, strategy: Mapping, node_id: str) -> np.ndarray:
    try:
        pos = strategy[node_id]
    except KeyError:
        raise MissingStrategyError(node_id) from None
    return np.broadcast_to(np.asarray(pos, dtype=float), (tree.assets,))


def wealth_process(tree: ScenarioTree, strategy: Mapping, z: float) -> dict[str, float]:
    """Wealth at every node: ``X_child = X_parent + phi . dS``."""
    out: dict[str, float] = {tree.root: float(z)}
    for level in tree.levels[:-1]:
        for nid in level:
            kids = tree.children(nid)
            if not kids:
                continue
            phi = _position(tree, strategy, nid)
            for c in kids:
                out[c] = out[nid] + float(phi @ tree.increment(c))
    return out


def zero_strategy(tree: ScenarioTree) -> dict[str, np.ndarray]:
    return {nid: np.zeros(tree.assets) for nid in tree.non_leaves}


@dataclass(frozen=True)
class DiscreteLaw:
    """Finitely supported distribution with sorted, merged atoms."""

    values: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_atoms(cls, values, probs, tol: float = MERGE_TOL) -> "DiscreteLaw":
        values = np.asarray(values, dtype=float).ravel()
        probs = np.asarray(probs, dtype=float).ravel()
        order = np.argsort(values, kind="stable")
        values, probs = values[order], probs[order]
        vals: list[float] = []
        ps: list[float] = []
        anchor = None
        for v, p in zip(values, probs):
            if anchor is not None and v - anchor <= tol:
                ps[-1] += p
            else:
                anchor = v
                vals.append(v)
                ps.append(p)
        return cls(np.array(vals), np.array(ps))

    def atoms(self) -> list[tuple[float, float]]:
        return [(float(v), float(p)) for v, p in zip(self.values, self.probs)]

    def cdf(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.values, t, side="right")
        cum = np.concatenate([[0.0], np.cumsum(self.probs)])
        return cum[idx]

    def expect(self, f) -> float:
        return float(np.dot(self.probs, f(self.values)))


def terminal_law(tree: ScenarioTree, strategy: Mapping, z: float, claim=None) -> DiscreteLaw:
    """Law of ``X_T - B`` under ``strategy`` from capital ``z``."""
    b = check_claim(tree, claim)
    wealth = wealth_process(tree, strategy, z)
    x = np.array([wealth[l] for l in tree.leaves]) - b
    p = np.array([tree.probability(l) for l in tree.leaves])
    return DiscreteLaw.from_atoms(x, p)


# -- JSON ------------------------------------------------------------------
_TOP_FIELDS = {"horizon", "assets", "nodes", "claim"}
_NODE_FIELDS = {"id", "time", "parent", "prob", "price"}


def tree_from_dict(data: dict) -> tuple[ScenarioTree, dict[str, float]]:
    if not isinstance(data, dict):
        raise TreeFormatError("tree document must be a JSON object")
    unknown = set(data) - _TOP_FIELDS
    if unknown:
        raise TreeFormatError(f"unknown tree fields: {sorted(unknown)}")
    for key in ("horizon", "assets", "nodes"):
        if key not in data:
            raise TreeFormatError(f"missing tree field {key!r}")
    nodes = []
    for i, raw in enumerate(data["nodes"]):
        if not isinstance(raw, dict):
            raise TreeFormatError(f"node #{i} is not an object")
        unknown = set(raw) - _NODE_FIELDS
        if unknown:
            raise TreeFormatError(f"node #{i}: unknown fields {sorted(unknown)}")
        missing = _NODE_FIELDS - set(raw)
        if missing:
            raise TreeFormatError(f"node #{i}: missing fields {sorted(missing)}")
        price = raw["price"]
        if not isinstance(price, list):
            price = [price]
        try:
            nodes.append(
                Node(
                    id=str(raw["id"]),
                    time=int(raw["time"]),
                    parent=None if raw["parent"] is None else str(raw["parent"]),
                    prob=float(raw["prob"]),
                    price=tuple(float(p) for p in price),
                )
            )
        except (TypeError, ValueError) as exc:
            raise TreeFormatError(f"node #{i}: {exc}") from None
    tree = ScenarioTree(int(data["horizon"]), int(data["assets"]), nodes)
    claim = {str(k): float(v) for k, v in (data.get("claim") or {}).items()}
    return tree, claim


def load_tree(path: str | Path) -> tuple[ScenarioTree, dict[str, float]]:
    with open(path) as fh:
        return tree_from_dict(json.load(fh))


# -- builders --------------------------------------------------------------
def iid_tree(increments, probs, horizon: int, s0=0.0) -> ScenarioTree:
    """Recombination-free tree with identical one-step increment law."""
    incs = np.atleast_2d(np.asarray(increments, dtype=float))
    if incs.shape[0] == 1 and len(probs) > 1:
        incs = incs.T
    d = incs.shape[1]
    s0 = np.broadcast_to(np.asarray(s0, dtype=float), (d,))
    nodes = [Node("r", 0, None, 1.0, tuple(s0))]
    frontier = [("r", s0)]
    for t in range(1, horizon + 1):
        nxt = []
        for pid, price in frontier:
            for j, (inc, p) in enumerate(zip(incs, probs)):
                cid = f"{pid}.{j}"
                new_price = price + inc
                nodes.append(Node(cid, t, pid, float(p), tuple(new_price)))
                nxt.append((cid, new_price))
        frontier = nxt
    return ScenarioTree(horizon, d, nodes)


def random_tree(rng: np.random.Generator, horizon: int, max_children: int = 3, assets: int = 1,
                min_step: float = 0.5, max_step: float = 2.0, arbitrage_free: bool = True) -> ScenarioTree:
    """Random tree with 2..max_children branches per node.

    With ``arbitrage_free`` each step has increments of both signs in every
    coordinate direction (for d = 1), magnitudes in ``[min_step, max_step]``.
    """
    nodes = [Node("r", 0, None, 1.0, tuple(np.zeros(assets)))]
    frontier = [("r", np.zeros(assets))]
    for t in range(1, horizon + 1):
        nxt = []
        for pid, price in frontier:
            k = int(rng.integers(2, max_children + 1))
            mags = rng.uniform(min_step, max_step, size=(k, assets))
            signs = rng.choice([-1.0, 1.0], size=(k, assets))
            if arbitrage_free and assets == 1:
                signs[0, 0], signs[1, 0] = 1.0, -1.0
            incs = mags * signs
            w = rng.uniform(0.2, 1.0, size=k)
            p = w / w.sum()
            p[-1] = 1.0 - p[:-1].sum()
            for j in range(k):
                cid = f"{pid}.{j}"
                new_price = price + incs[j]
                nodes.append(Node(cid, t, pid, float(p[j]), tuple(new_price)))
                nxt.append((cid, new_price))
        frontier = nxt
    return ScenarioTree(horizon, assets, nodes)
