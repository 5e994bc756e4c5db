"""Cumulative prospect theory objective and its global optimisation.

Distorted probabilities make the objective law-dependent, so there is no
dynamic programming principle: the search runs over the full vector of
positions (one block per non-leaf node, expressed in coordinates of the
node's increment span).  Terminal wealth is affine in that vector, which
keeps batched evaluation cheap on small trees.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, SolverConfig
from .errors import ArbitrageError, HypothesisError
from .no_arbitrage import NAReport, analyze, support_geometry
from .preferences import CPTPreference, DistortionFunction, UtilityFunction, inverse_distortion
from .tree import DiscreteLaw, ScenarioTree, check_claim, terminal_law


@dataclass(frozen=True)
class ChoquetValue:
    v_plus: float
    v_minus: float

    @property
    def v(self) -> float:
        return self.v_plus - self.v_minus


def _choquet_rows(util: np.ndarray, probs: np.ndarray, w: DistortionFunction) -> np.ndarray:
    """Row-wise ``int_0^inf w(P(U >= y)) dy`` for non-negative step laws.

    ``util``: (batch, k) utilities; ``probs``: (k,) or (batch, k).
    """
    util = np.atleast_2d(util)
    probs = np.broadcast_to(probs, util.shape)
    order = np.argsort(-util, axis=1, kind="stable")
    y = np.take_along_axis(util, order, axis=1)
    q = np.cumsum(np.take_along_axis(probs, order, axis=1), axis=1)
    # dividing by the row total makes the last tail mass exactly 1; distortions
    # with infinite slope at 1 would otherwise amplify the summation roundoff
    q = q / q[:, -1:]
    y_next = np.concatenate([y[:, 1:], np.zeros((y.shape[0], 1))], axis=1)
    return np.sum((y - y_next) * w(np.minimum(q, 1.0)), axis=1)


def choquet_plus(law: DiscreteLaw, u_plus: UtilityFunction, w_plus: DistortionFunction) -> float:
    util = u_plus(np.maximum(law.values, 0.0))
    return float(_choquet_rows(util[None, :], law.probs, w_plus)[0])


def choquet_minus(law: DiscreteLaw, u_minus: UtilityFunction, w_minus: DistortionFunction) -> float:
    util = u_minus(np.maximum(-law.values, 0.0))
    return float(_choquet_rows(util[None, :], law.probs, w_minus)[0])


def cpt_value(tree: ScenarioTree, pref: CPTPreference, claim, strategy, z: float) -> ChoquetValue:
    law = terminal_law(tree, strategy, z, claim)
    return ChoquetValue(choquet_plus(law, pref.u_plus, pref.w_plus), choquet_minus(law, pref.u_minus, pref.w_minus))


# -- parametrisation of projected strategies -------------------------------
class StrategySpace:
    """Affine map from stacked D-coordinates to terminal outcomes ``X_T - B``."""

    def __init__(self, tree: ScenarioTree, claim=None, rank_tol: float = DEFAULT_CONFIG.rank_tol):
        self.tree = tree
        self.geom = {n: support_geometry(tree, n, rank_tol) for n in tree.non_leaves}
        self.blocks: list[tuple[str, slice]] = []
        pos = 0
        for n in tree.non_leaves:
            r = self.geom[n].rank
            if r:
                self.blocks.append((n, slice(pos, pos + r)))
                pos += r
        self.dim = pos
        leaves = tree.leaves
        self.probs = np.array([tree.probability(l) for l in leaves])
        self.claim = check_claim(tree, claim)
        col = {l: i for i, l in enumerate(leaves)}
        A = np.zeros((len(leaves), pos))
        for n, sl in self.blocks:
            basis = self.geom[n].basis
            for c in tree.children(n):
                gain = tree.increment(c) @ basis
                for leaf in tree.leaves_under(c):
                    A[col[leaf], sl] += gain
        self.A = A

    def outcomes(self, theta: np.ndarray, z: float) -> np.ndarray:
        theta = np.atleast_2d(theta)
        return z + theta @ self.A.T - self.claim[None, :]

    def to_strategy(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        out = {n: np.zeros(self.tree.assets) for n in self.tree.non_leaves}
        for n, sl in self.blocks:
            out[n] = self.geom[n].basis @ theta[sl]
        return out

    def block_norms(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        return np.column_stack([np.linalg.norm(theta[:, sl], axis=1) for _, sl in self.blocks]) \
            if self.blocks else np.zeros((theta.shape[0], 0))


def batch_value(space: StrategySpace, pref: CPTPreference, theta: np.ndarray, z: float) -> tuple[np.ndarray, np.ndarray]:
    x = space.outcomes(theta, z)
    vp = _choquet_rows(pref.u_plus(np.maximum(x, 0.0)), space.probs, pref.w_plus)
    vm = _choquet_rows(pref.u_minus(np.maximum(-x, 0.0)), space.probs, pref.w_minus)
    return vp, vm


# -- search region ---------------------------------------------------------
def region_radius(mass: float, loss_rate: float, u_minus: UtilityFunction, w_minus: DistortionFunction,
                  C: float, c: float, offset: float, margin: float = 1.0, r_max: float = 1e12) -> float:
    """Smallest ``R`` with ``w_-(mass) * u_-(loss_rate * R - offset) >= C - c + margin``."""
    target = C - c + margin
    weight = float(w_minus(mass))
    if weight <= 0.0:
        raise HypothesisError("distorted loss mass vanishes; no finite search radius")

    def gap(R):
        return weight * float(u_minus(max(loss_rate * R - offset, 0.0))) - target

    if gap(0.0) >= 0.0:
        return 0.0
    hi = max(1.0, offset / loss_rate)
    while gap(hi) < 0.0:
        hi *= 2.0
        if hi > r_max:
            raise HypothesisError("u_minus does not grow enough to bound the search region")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gap(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-13 * hi:
            break
    return hi


@dataclass
class SearchRegion:
    radius: dict[str, float]

    def violated(self, space: StrategySpace, theta: np.ndarray) -> np.ndarray:
        norms = space.block_norms(theta)
        rad = np.array([self.radius[n] for n, _ in space.blocks])
        return np.any(norms > rad[None, :], axis=1)


def search_region(tree: ScenarioTree, pref: CPTPreference, claim, z: float, na: NAReport, c: float,
                  margin: float = DEFAULT_CONFIG.region_margin) -> SearchRegion:
    """Per-node radii beyond which a position is provably worse than ``c``.

    Take an earliest node ``n`` (time t) where ``|theta_n| > R(n)``; all
    ancestors respect their radii, so wealth at ``n`` is at most
    ``z + sum_ancestors R(a) |dS|``.  With probability at least
    ``P(n) * pi(n)`` the next step loses ``beta(n) |theta_n|`` and no later
    step gains, so ``V^- >= w_-(P(n) pi(n)) u_-(beta R - offset)`` while
    ``V^+ <= C``.  ``R`` is chosen to push ``V`` below ``c - margin``.
    """
    if pref.u_plus.upper_bound is None:
        raise HypothesisError("u_plus must be bounded above")
    if not pref.u_minus.diverges:
        raise HypothesisError("u_minus must diverge to +inf for a finite search region")
    C = float(pref.u_plus.upper_bound)
    b = check_claim(tree, claim)
    bmax = float(np.max(np.abs(b))) if b.size else 0.0
    slack: dict[str, float] = {tree.root: 0.0}
    radius: dict[str, float] = {}
    for level in tree.levels[:-1]:
        for n in level:
            consts = na.nodes[n]
            if consts.kappa is None:
                radius[n] = 0.0
            else:
                offset = abs(z) + bmax + slack[n]
                mass = tree.probability(n) * consts.pi
                radius[n] = region_radius(mass, consts.beta, pref.u_minus, pref.w_minus, C, c, offset, margin)
            for ch in tree.children(n):
                slack[ch] = slack[n] + radius[n] * float(np.linalg.norm(tree.increment(ch)))
    return SearchRegion(radius)


# -- optimisation ----------------------------------------------------------
@dataclass
class CPTResult:
    value: ChoquetValue
    theta: np.ndarray
    strategy: dict[str, np.ndarray]
    region: SearchRegion
    converged: bool
    baseline: float
    evaluations: int

    def to_dict(self) -> dict:
        return {
            "v_plus": self.value.v_plus,
            "v_minus": self.value.v_minus,
            "v": self.value.v,
            "strategy": {k: [float(x) for x in v] for k, v in self.strategy.items()},
            "region": dict(self.region.radius),
            "converged": self.converged,
        }


def _better(v_new, n_new, v_old, n_old, tie):
    return v_new > v_old + tie or (abs(v_new - v_old) <= tie and n_new < n_old - 1e-15)


def optimize_cpt(tree: ScenarioTree, pref: CPTPreference, claim=None, z: float = 0.0,
                 config: SolverConfig = DEFAULT_CONFIG, na: NAReport | None = None) -> CPTResult:
    """Global search for the best CPT strategy inside the certified region.

    A tensor grid over the per-node balls seeds a compass (pattern) search
    with step halving; the incumbent never drops below ``V(0, z)``.
    """
    tree.require_valid()
    problems = pref.problems()
    if problems:
        raise HypothesisError("; ".join(problems))
    na = na if na is not None else analyze(tree, config)
    if not na.na:
        raise ArbitrageError(f"arbitrage at node {na.arbitrage_node!r}", na.witness)
    space = StrategySpace(tree, claim, config.rank_tol)
    zero = np.zeros(space.dim)
    vp0, vm0 = batch_value(space, pref, zero, z)
    baseline = float(vp0[0] - vm0[0])
    region = search_region(tree, pref, claim, z, na, baseline, config.region_margin)
    evals = 1
    if space.dim == 0:
        return CPTResult(ChoquetValue(float(vp0[0]), float(vm0[0])), zero, space.to_strategy(zero),
                         region, True, baseline, evals)

    rad = np.concatenate([np.full(sl.stop - sl.start, region.radius[n]) for n, sl in space.blocks])
    per_axis = config.cpt_grid
    while per_axis > 3 and per_axis ** space.dim > config.cpt_grid_budget:
        per_axis -= 2
    axis = np.linspace(-1.0, 1.0, per_axis)

    def value(theta):
        vp, vm = batch_value(space, pref, theta, z)
        return vp - vm

    def feasible(theta):
        return ~region.violated(space, theta)

    # coarse tensor grid, streamed in chunks
    keep = max(1, config.cpt_starts)
    seeds_v = np.array([baseline])
    seeds_t = zero[None, :]
    total = per_axis ** space.dim
    chunk = 50_000
    it = itertools.product(range(per_axis), repeat=space.dim)
    done = 0
    while done < total:
        idx = np.array(list(itertools.islice(it, chunk)))
        done += len(idx)
        pts = axis[idx] * rad[None, :]
        pts = pts[feasible(pts)]
        if not len(pts):
            continue
        vals = value(pts)
        evals += len(pts)
        seeds_v = np.concatenate([seeds_v, vals])
        seeds_t = np.vstack([seeds_t, pts])
        norms = np.linalg.norm(seeds_t, axis=1)
        order = np.lexsort((norms, -seeds_v))[: keep * 4]
        seeds_v, seeds_t = seeds_v[order], seeds_t[order]

    # distinct starting points, best first
    starts = []
    for v, t in zip(seeds_v, seeds_t):
        if all(np.linalg.norm(t - s) > 1e-12 for _, s in starts):
            starts.append((v, t))
        if len(starts) >= keep:
            break

    step0 = float(np.max(rad)) * (axis[1] - axis[0]) if per_axis > 1 else float(np.max(rad))
    best_v, best_t = baseline, zero
    converged_all = True
    eye = np.eye(space.dim)
    for v, t in starts:
        cur_v, cur_t, step = float(v), t.copy(), step0
        while step >= config.cpt_step_tol:
            if evals >= config.cpt_max_evals:
                converged_all = False
                break
            polls = np.vstack([cur_t + step * eye, cur_t - step * eye])
            ok = feasible(polls)
            if not np.any(ok):
                step *= 0.5
                continue
            pv = value(polls[ok])
            evals += int(ok.sum())
            j = int(np.argmax(pv))
            if pv[j] > cur_v + config.tie_tol:
                cur_v, cur_t = float(pv[j]), polls[ok][j]
            else:
                step *= 0.5
        if _better(cur_v, np.linalg.norm(cur_t), best_v, np.linalg.norm(best_t), config.tie_tol):
            best_v, best_t = cur_v, cur_t
    vp, vm = batch_value(space, pref, best_t, z)
    return CPTResult(ChoquetValue(float(vp[0]), float(vm[0])), best_t, space.to_strategy(best_t), region,
                     converged_all, baseline, evals)


def loss_probability_bound(pref: CPTPreference, C: float, c: float, y: float) -> float:
    """``P(u_-(loss) >= y) <= w_-^{-1}((c + C) / y)`` for strategies with ``V >= -c``."""
    q = min(1.0, (c + C) / y) if y > 0 else 1.0
    return inverse_distortion(pref.w_minus, q)
