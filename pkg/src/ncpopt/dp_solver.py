"""Backward induction for expected utility with bounded-above, non-concave u.

Value functions ``U_t(node, x)`` are tabulated on per-node uniform wealth
grids and interpolated linearly.  Queries outside a node's grid fall back
to an exact one-step optimisation against the children, so the grid is a
cache, never a truncation.  The inner maximisation over positions is
restricted to the ball ``|xi| <= K([x])`` built from the children's value
functions and the no-arbitrage constants, which is what makes a bounded
search complete.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_CONFIG, SolverConfig
from .errors import ArbitrageError, GridTooNarrowError, HypothesisError
from .no_arbitrage import NAReport, analyze, support_geometry
from .preferences import CPTPreference, EUPreference, UtilityFunction
from .tree import ScenarioTree, check_claim

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_CHUNK = 2_000_000


@dataclass
class ValueFunction:
    """Piecewise-linear ``x -> U_t(node, x)`` with an exact fallback."""

    node: str
    grid: np.ndarray
    values: np.ndarray
    upper_bound: float
    exact: object = field(repr=False)
    tabulated: bool = True

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if not self.tabulated or self.grid.size == 0:
            return self.exact(x)
        out = np.interp(x, self.grid, self.values)
        outside = (x < self.grid[0]) | (x > self.grid[-1])
        if np.any(outside):
            out = np.array(out, dtype=float, copy=True)
            out[outside] = self.exact(x[outside])
        return out

    def problems(self, tol: float = 1e-9) -> list[str]:
        out = []
        if np.any(np.diff(self.values) < -tol):
            out.append(f"{self.node}: values decrease along the grid")
        if np.any(self.values > self.upper_bound + tol):
            out.append(f"{self.node}: values exceed the upper bound")
        return out


def golden_max(f, lo, hi, tol):
    """Vectorised golden-section search for a maximum on ``[lo, hi]``."""
    a = np.asarray(lo, dtype=float).copy()
    b = np.asarray(hi, dtype=float).copy()
    width = float(np.max(b - a)) if a.size else 0.0
    if width <= tol:
        x = 0.5 * (a + b)
        return x, f(x)
    n = int(math.ceil(math.log(tol / width) / math.log(GOLDEN)))
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(n):
        left = fc >= fd
        # left: keep [a, d], old c becomes new d
        # right: keep [c, b], old d becomes new c
        a_new = np.where(left, a, c)
        b_new = np.where(left, d, b)
        c_new = np.where(left, b_new - GOLDEN * (b_new - a_new), d)
        d_new = np.where(left, c, a_new + GOLDEN * (b_new - a_new))
        probe = np.where(left, c_new, d_new)
        fp = f(probe)
        fc_new = np.where(left, fp, fd)
        fd_new = np.where(left, fc, fp)
        a, b, c, d, fc, fd = a_new, b_new, c_new, d_new, fc_new, fd_new
    x = 0.5 * (a + b)
    return x, f(x)


def _unit_grid(points: int, r: int) -> np.ndarray:
    """Cube grid points inside the unit ball, ordered by norm then lexicographically."""
    axis = np.linspace(-1.0, 1.0, points)
    mesh = np.stack(np.meshgrid(*([axis] * r), indexing="ij"), axis=-1).reshape(-1, r)
    norms = np.linalg.norm(mesh, axis=1)
    mesh, norms = mesh[norms <= 1.0 + 1e-12], norms[norms <= 1.0 + 1e-12]
    keys = [mesh[:, j] for j in range(r - 1, -1, -1)] + [np.round(norms, 12)]
    return mesh[np.lexsort(keys)]


@dataclass
class SolveResult:
    value: float
    z: float
    strategy: dict[str, np.ndarray]
    wealth: dict[str, float]
    attained: float
    certified: bool
    value_functions: dict[str, ValueFunction]
    bounds: dict[str, dict[int, float]]
    path_values: dict[str, float]
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "z": self.z,
            "strategy": {k: [float(x) for x in v] for k, v in self.strategy.items()},
            "K": {k: {str(n): float(v) for n, v in sorted(d.items())} for k, d in self.bounds.items()},
            "diagnostics": self.diagnostics,
        }


class BackwardInduction:
    """Dynamic-programming engine bound to one market, utility and claim."""

    def __init__(self, tree: ScenarioTree, preference, claim=None,
                 config: SolverConfig = DEFAULT_CONFIG, na: NAReport | None = None):
        tree.require_valid()
        self.tree = tree
        self.config = config
        self.u = _eu_utility(preference)
        if self.u.upper_bound is None:
            raise HypothesisError("utility must be bounded above")
        if not self.u.limma:
            raise HypothesisError(
                f"utility {self.u.family!r} stays bounded below as wealth -> -inf; "
                "an optimal strategy may fail to exist (see the nonexistence demo)"
            )
        self.C = float(self.u.upper_bound)
        self.na = na if na is not None else analyze(tree, config)
        if not self.na.na:
            raise ArbitrageError(f"arbitrage at node {self.na.arbitrage_node!r}", self.na.witness)
        b = check_claim(tree, claim)
        self.claim = dict(zip(tree.leaves, b))
        self.geom = {n: support_geometry(tree, n, config.rank_tol) for n in tree.non_leaves}
        self.coords = {n: g.coords() for n, g in self.geom.items()}
        self._leaf_probs = {n: tree.conditional_leaf_probs(n) for n in tree.non_leaves}
        self.values: dict[str, ValueFunction] = {}
        self._bounds: dict[str, dict[int, float]] = {n: {} for n in tree.non_leaves}
        self._env_bounds: dict[str, dict[int, float]] = {n: {} for n in tree.non_leaves}
        self.intervals: dict[str, tuple[float, float]] = {}
        self.diagnostics: dict = {}
        for leaf in tree.leaves:
            self.values[leaf] = self.terminal_value(leaf)

    # -- building blocks -------------------------------------------------
    def terminal_value(self, leaf: str) -> ValueFunction:
        """``U_T(x) = u(x - B(leaf))``; evaluated exactly everywhere."""
        shift = self.claim[leaf]
        exact = lambda x, s=shift: self.u(np.asarray(x, dtype=float) - s)  # noqa: E731
        return ValueFunction(leaf, np.empty(0), np.empty(0), self.C, exact, tabulated=False)

    def floor_expectation(self, node: str, n) -> np.ndarray:
        """``m(n) = E[u(n - B) | node]``: the no-trade lower envelope."""
        leaves, probs = self._leaf_probs[node]
        n = np.atleast_1d(np.asarray(n, dtype=float))
        b = np.array([self.claim[l] for l in leaves])
        return self.u(n[:, None] - b[None, :]) @ probs

    def envelope(self, node: str, x) -> np.ndarray:
        """Cheap upper bound of ``U_t(node, .)``.

        At a node with non-trivial ``D`` any position loses on a set of
        conditional mass at least kappa, hence
        ``U_t(x) <= C - kappa (C - max_c U_{t+1}(c, x))``.
        """
        x = np.asarray(x, dtype=float)
        if self.tree.is_leaf(node):
            return self.u(x - self.claim[node])
        kids = self.tree.children(node)
        vals = np.array([self.envelope(c, x) for c in kids])
        probs = self.geom[node].probs
        kappa = self.na.nodes[node].kappa
        if kappa is None:
            return np.tensordot(probs, vals, axes=1)
        return self.C - kappa * (self.C - vals.max(axis=0))

    def _children_fns(self, node: str, kind: str):
        kids = self.tree.children(node)
        if kind == "envelope":
            return [lambda x, c=c: self.envelope(c, x) for c in kids]
        return [self.values[c] for c in kids]

    def strategy_bound(self, node: str, n: int, kind: str = "value", kappa: float | None = None,
                       beta: float | None = None) -> float:
        """``K(n) = (G_L + n + 1) / beta`` with ``L = 2 (C - m(n)) / kappa``.

        ``G_L`` is the smallest ``g >= 0`` such that the children with
        ``V_c(-g) <= -L`` carry conditional mass at least ``1 - kappa / 2``.
        ``kind='envelope'`` uses the upper envelope in place of the
        children's value functions (for grid planning).
        """
        consts = self.na.nodes[node]
        kappa = consts.kappa if kappa is None else kappa
        beta = consts.beta if beta is None else beta
        if consts.kappa is None:
            return 0.0
        cache = self._env_bounds[node] if kind == "envelope" else self._bounds[node]
        default = kappa == consts.kappa and beta == consts.beta
        if default and n in cache:
            return cache[n]
        m = float(self.floor_expectation(node, n)[0])
        L = 2.0 * (self.C - m) / kappa
        fns = self._children_fns(node, kind)
        probs = self.geom[node].probs
        need = 1.0 - kappa / 2.0 - 1e-14

        def enough(g: float) -> bool:
            mass = sum(p for p, f in zip(probs, fns) if float(np.asarray(f(np.array([-g])))[0]) <= -L)
            return mass >= need

        if enough(0.0):
            g = 0.0
        else:
            lo, hi = 0.0, 1.0
            while not enough(hi):
                lo, hi = hi, 2.0 * hi
                if hi > self.config.g_max:
                    raise GridTooNarrowError(
                        f"node {node!r}, n={n}: no wealth level below -{self.config.g_max:g} "
                        f"reaches utility -{L:g}; extend g_max"
                    )
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if enough(mid):
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 1e-12 * max(1.0, hi):
                    break
            g = hi
        k = max(0.0, (g + n + 1.0) / beta)
        if default:
            cache[n] = k
        return k

    def _radii(self, node: str, x: np.ndarray, kind: str = "value") -> tuple[np.ndarray, np.ndarray]:
        fl = np.floor(x).astype(np.int64)
        ks = {int(n): self.strategy_bound(node, int(n), kind) for n in np.unique(np.concatenate([fl, fl + 1]))}
        k0 = np.array([ks[int(n)] for n in fl])
        k1 = np.array([ks[int(n) + 1] for n in fl])
        s = self.config.k_scale
        return s * k0, s * (k0 + k1)

    def objective(self, node: str, x, c) -> np.ndarray:
        """``sum_c p_c V_c(x + xi . dS_c)`` with ``xi`` given in D-coordinates."""
        x = np.asarray(x, dtype=float)
        c = np.asarray(c, dtype=float)
        a = self.coords[node]
        probs = self.geom[node].probs
        gains = c @ a.T if a.shape[1] else np.zeros(x.shape + (len(probs),))
        wealth = x[..., None] + gains
        total = np.zeros(wealth.shape[:-1])
        for j, vf in enumerate(self._children_fns(node, "value")):
            total = total + probs[j] * vf(wealth[..., j])
        return total

    def one_step(self, node: str, x) -> tuple[np.ndarray, np.ndarray]:
        """Maximise the one-step objective at each wealth in ``x``.

        Returns values and maximisers in D-coordinates (m x r).  Multi-start:
        a cube grid inside the K-ball, then golden-section (coordinate-wise
        for r > 1) around the best grid point.  Ties go to the smallest
        norm, then lexicographic order.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        r = self.geom[node].rank
        m = x.size
        if r == 0:
            zeros = np.zeros((m, 0))
            return self.objective(node, x, zeros), zeros
        cfg = self.config
        rc, rr = self._radii(node, x)
        unit = _unit_grid(cfg.coarse_points, r)
        kids = len(self.geom[node].probs)
        best_v = np.empty(m)
        best_c = np.empty((m, r))
        step = max(1, _CHUNK // max(1, unit.shape[0] * kids))
        for s in range(0, m, step):
            sl = slice(s, s + step)
            cand = rc[sl, None, None] * unit[None, :, :]
            vals = self.objective(node, np.broadcast_to(x[sl, None], cand.shape[:2]), cand)
            top = vals.max(axis=1)
            idx = np.argmax(vals >= top[:, None] - cfg.tie_tol, axis=1)
            best_v[sl] = vals[np.arange(vals.shape[0]), idx]
            best_c[sl] = cand[np.arange(vals.shape[0]), idx]
        h = 2.0 * rc / (cfg.coarse_points - 1)
        ref_c = best_c.copy()
        ref_v = best_v.copy()
        for _ in range(1 if r == 1 else 6):
            before = ref_v.copy()
            for j in range(r):
                others = np.sum(ref_c ** 2, axis=1) - ref_c[:, j] ** 2
                lim = np.sqrt(np.maximum(rr ** 2 - others, 0.0))
                lo = np.maximum(ref_c[:, j] - h, -lim)
                hi = np.minimum(ref_c[:, j] + h, lim)

                def f(t, j=j):
                    cc = ref_c.copy()
                    cc[:, j] = t
                    return self.objective(node, x, cc)

                t, v = golden_max(f, lo, hi, cfg.xi_tol)
                better = v > ref_v + cfg.tie_tol
                ref_c[better, j] = t[better]
                ref_v[better] = v[better]
            if np.all(ref_v - before <= cfg.tie_tol):
                break
        self.diagnostics["max_refinement_gain"] = max(
            self.diagnostics.get("max_refinement_gain", 0.0), float(np.max(ref_v - best_v, initial=0.0))
        )
        return ref_v, ref_c

    # -- grids -----------------------------------------------------------
    def plan_intervals(self, z_lo: float, z_hi: float) -> dict[str, tuple[float, float]]:
        """Wealth intervals per node reachable under the envelope-based bounds."""
        pad = self.config.root_pad
        iv = {self.tree.root: (z_lo - pad, z_hi + pad)}
        for level in self.tree.levels[:-1]:
            for nid in level:
                lo, hi = iv[nid]
                ns = range(math.floor(lo), math.floor(hi) + 1)
                rho = self.config.k_scale * max(
                    self.strategy_bound(nid, n, "envelope") + self.strategy_bound(nid, n + 1, "envelope")
                    for n in ns
                ) if self.na.nodes[nid].kappa is not None else 0.0
                for c in self.tree.children(nid):
                    reach = rho * float(np.linalg.norm(self.tree.increment(c)))
                    iv[c] = (lo - reach, hi + reach)
        return iv

    def _grid(self, lo: float, hi: float) -> np.ndarray:
        """Points of the lattice ``h Z`` covering ``[lo, hi]``, ``h = max_grid_step``.

        Anchoring every node to one lattice means that widening an interval
        only adds points: values at shared points, and hence the interpolant
        between them, do not move.
        """
        h = self.config.max_grid_step
        return np.arange(math.floor(lo / h), math.ceil(hi / h) + 1) * h

    def _monotone_repair(self, node: str, grid, vals, cs):
        """Carry the left neighbour's position right where it does better.

        The true value function is non-decreasing, so any local dip is a
        search miss; reusing the neighbour's position fixes it exactly.
        """
        for _ in range(self.config.monotone_passes):
            if grid.size < 2:
                break
            cand = self.objective(node, grid[1:], cs[:-1])
            better = cand > vals[1:] + self.config.tie_tol
            if not np.any(better):
                break
            idx = np.nonzero(better)[0] + 1
            vals[idx] = cand[better]
            cs[idx] = cs[idx - 1]
        return vals, cs

    def build(self, z_lo: float, z_hi: float | None = None) -> "BackwardInduction":
        """Backward sweep: tabulate ``U_t`` at every non-leaf node."""
        z_hi = z_lo if z_hi is None else z_hi
        self.intervals = self.plan_intervals(z_lo, z_hi)
        sizes = {}
        for level in reversed(self.tree.levels[:-1]):
            for nid in level:
                grid = self._grid(*self.intervals[nid])
                vals, cs = self.one_step(nid, grid)
                vals, cs = self._monotone_repair(nid, grid, vals, cs)
                exact = lambda x, n=nid: self.one_step(n, x)[0]  # noqa: E731
                self.values[nid] = ValueFunction(nid, grid, vals, self.C, exact)
                sizes[nid] = int(grid.size)
        self.diagnostics["grid_sizes"] = sizes
        return self

    def position(self, node: str, x: float) -> tuple[float, np.ndarray]:
        """Value and optimal position (asset units) at the exact wealth ``x``."""
        v, c = self.one_step(node, np.array([x]))
        return float(v[0]), self.geom[node].basis @ c[0]

    def forward(self, z: float) -> tuple[dict, dict, dict]:
        wealth = {self.tree.root: float(z)}
        strategy, path_values = {}, {}
        for level in self.tree.levels[:-1]:
            for nid in level:
                v, phi = self.position(nid, wealth[nid])
                strategy[nid] = phi
                path_values[nid] = v
                for c in self.tree.children(nid):
                    wealth[c] = wealth[nid] + float(phi @ self.tree.increment(c))
        for leaf in self.tree.leaves:
            path_values[leaf] = float(self.u(wealth[leaf] - self.claim[leaf]))
        return strategy, wealth, path_values

    def bounds(self) -> dict[str, dict[int, float]]:
        return {k: dict(v) for k, v in self._bounds.items()}


def _eu_utility(preference) -> UtilityFunction:
    if isinstance(preference, UtilityFunction):
        return preference
    if isinstance(preference, EUPreference):
        return preference.utility
    if isinstance(preference, CPTPreference):
        if not (preference.w_plus.is_identity and preference.w_minus.is_identity):
            raise HypothesisError("distorted CPT preferences are not dynamically consistent; use optimize_cpt")
        return preference.composite_utility()
    raise TypeError(f"unsupported preference {preference!r}")


def terminal_value(tree: ScenarioTree, preference, claim=None, config: SolverConfig = DEFAULT_CONFIG):
    """Terminal value functions ``U_T`` keyed by leaf."""
    engine = BackwardInduction(tree, preference, claim, config)
    return {leaf: engine.values[leaf] for leaf in tree.leaves}


def solve(tree: ScenarioTree, preference, claim=None, z: float = 0.0,
          config: SolverConfig = DEFAULT_CONFIG, na: NAReport | None = None) -> SolveResult:
    """Optimal expected utility from capital ``z`` and an optimal strategy."""
    engine = BackwardInduction(tree, preference, claim, config, na).build(z)
    root = tree.root
    value, _ = engine.position(root, z)
    strategy, wealth, path_values = engine.forward(z)
    attained = sum(tree.probability(l) * path_values[l] for l in tree.leaves)
    engine.diagnostics["attained_gap"] = attained - value
    engine.diagnostics["value_function_problems"] = [
        p for vf in engine.values.values() if vf.tabulated for p in vf.problems()
    ]
    return SolveResult(
        value=value,
        z=float(z),
        strategy=strategy,
        wealth=wealth,
        attained=float(attained),
        certified=bool(attained >= value - config.tol_solve),
        value_functions=engine.values,
        bounds=engine.bounds(),
        path_values=path_values,
        diagnostics=engine.diagnostics,
    )


@dataclass
class CurveResult:
    z: np.ndarray
    values: np.ndarray
    monotone: bool
    max_jump: float

    def to_dict(self) -> dict:
        return {
            "z": [float(v) for v in self.z],
            "value": [float(v) for v in self.values],
            "monotone": self.monotone,
            "max_jump": self.max_jump,
        }


def indirect_utility_curve(tree: ScenarioTree, preference, claim=None, z_values=(0.0,),
                           config: SolverConfig = DEFAULT_CONFIG) -> CurveResult:
    """``z -> u_bar(z)`` sampled at ``z_values`` from one backward sweep."""
    z = np.sort(np.asarray(z_values, dtype=float))
    engine = BackwardInduction(tree, preference, claim, config).build(float(z[0]), float(z[-1]))
    vals, _ = engine.one_step(tree.root, z)
    diffs = np.diff(vals)
    return CurveResult(
        z=z,
        values=vals,
        monotone=bool(np.all(diffs >= -config.tol_solve)),
        max_jump=float(np.max(np.abs(diffs), initial=0.0)),
    )
