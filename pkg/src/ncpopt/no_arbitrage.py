"""Conditional support geometry and quantitative no-arbitrage constants.

For a non-leaf node the one-step increments ``v_i`` (one per child) carry
all the relevant information.  No-arbitrage on a finite tree holds iff at
every node the origin lies in the relative interior of ``conv{v_i}``; in that
case the affine hull of the support is the linear span of the ``v_i``.

Constants reported per node (with ``D`` the span of the increments):

* ``beta``:  min over unit ``xi`` in ``D`` of ``max_i(-xi . v_i)``,
* ``kappa``: the smallest child probability,

so that every unit direction in ``D`` loses at least ``beta`` with
conditional probability at least ``kappa``.  ``pi`` bounds from below the
probability of losing ``beta |theta|`` on the next step and never gaining
afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize, minimize_scalar

from .config import DEFAULT_CONFIG, SolverConfig
from .errors import ArbitrageError
from .tree import ScenarioTree


@dataclass(frozen=True)
class SupportGeometry:
    node: str
    increments: np.ndarray  # (k, d)
    probs: np.ndarray  # (k,)
    basis: np.ndarray  # (d, r), orthonormal columns

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def is_trivial(self) -> bool:
        return self.rank == 0

    def coords(self) -> np.ndarray:
        """Increments expressed in the basis of ``D`` (k x r)."""
        return self.increments @ self.basis


def support_geometry(tree: ScenarioTree, node: str, rank_tol: float = DEFAULT_CONFIG.rank_tol) -> SupportGeometry:
    incs, probs = tree.child_increments(node)
    d = tree.assets
    scale = float(np.max(np.linalg.norm(incs, axis=1))) if len(incs) else 0.0
    if scale == 0.0:
        return SupportGeometry(node, incs, probs, np.zeros((d, 0)))
    _, s, vt = np.linalg.svd(incs, full_matrices=False)
    r = int(np.sum(s > rank_tol * scale))
    return SupportGeometry(node, incs, probs, vt[:r].T.copy())


def project_to_D(geom: SupportGeometry, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return geom.basis @ (geom.basis.T @ xi)


# -- NA verdict ------------------------------------------------------------
def one_step_arbitrage(incs: np.ndarray, tol: float = 1e-9) -> np.ndarray | None:
    """Direction ``xi`` with ``xi . v_i >= 0`` for all i and > 0 for some i.

    Solves ``max sum_i xi . v_i`` subject to ``xi . v_i >= 0`` and the box
    ``|xi_j| <= 1``; returns ``None`` when the optimum is zero.
    """
    k, d = incs.shape
    scale = float(np.max(np.abs(incs))) if incs.size else 0.0
    if scale == 0.0:
        return None
    res = linprog(
        c=-incs.sum(axis=0) / scale,
        A_ub=-incs / scale,
        b_ub=np.zeros(k),
        bounds=[(-1.0, 1.0)] * d,
        method="highs",
    )
    if res.status != 0 or -res.fun <= tol:
        return None
    xi = np.asarray(res.x, dtype=float)
    xi[np.abs(xi) < 1e-12] = 0.0
    gains = incs @ xi
    if gains.min() < -tol * scale or gains.max() <= tol * scale:
        return None
    return xi


@dataclass
class NodeConstants:
    r: int
    beta: float | None = None
    kappa: float | None = None
    pi: float | None = None


@dataclass
class NAReport:
    na: bool
    nodes: dict[str, NodeConstants] = field(default_factory=dict)
    witness: dict[str, list[float]] | None = None
    arbitrage_node: str | None = None

    def to_dict(self) -> dict:
        return {
            "na": self.na,
            "witness": self.witness,
            "arbitrage_node": self.arbitrage_node,
            "nodes": [
                {"node": k, "r": c.r, "beta": c.beta, "kappa": c.kappa, "pi": c.pi}
                for k, c in self.nodes.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NAReport":
        nodes = {
            row["node"]: NodeConstants(row["r"], row["beta"], row["kappa"], row["pi"]) for row in data["nodes"]
        }
        return cls(data["na"], nodes, data.get("witness"), data.get("arbitrage_node"))


def check_na(tree: ScenarioTree, config: SolverConfig = DEFAULT_CONFIG) -> NAReport:
    """NA verdict with a global witness strategy when it fails."""
    tree.require_valid()
    nodes = {}
    for nid in tree.non_leaves:
        incs, _ = tree.child_increments(nid)
        xi = one_step_arbitrage(incs)
        if xi is not None:
            witness = {k: [0.0] * tree.assets for k in tree.non_leaves}
            witness[nid] = [float(v) for v in xi]
            return NAReport(False, {}, witness, nid)
        nodes[nid] = NodeConstants(support_geometry(tree, nid, config.rank_tol).rank)
    return NAReport(True, nodes)


# -- beta ------------------------------------------------------------------
def _worst_loss(a: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """``max_i(-u . a_i)`` for each unit direction ``u`` (rows of dirs)."""
    return np.max(-(dirs @ a.T), axis=1)


def _sphere_points(r: int, n: int, seed: int) -> np.ndarray:
    if r == 2:
        ang = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if r == 3:
        i = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * i / n)
        theta = np.pi * (1 + 5 ** 0.5) * i
        return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    pts = np.random.default_rng(seed).standard_normal((n, r))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def beta_constant(geom: SupportGeometry, config: SolverConfig = DEFAULT_CONFIG) -> float:
    """Worst-direction loss level; exact for r = 1, scanned and shrunk otherwise."""
    a = geom.coords()
    r = geom.rank
    if r == 0:
        raise ValueError("beta is undefined on a trivial support")
    if r == 1:
        return float(min(-a[:, 0].min(), a[:, 0].max()))
    dirs = _sphere_points(r, config.beta_directions, config.seed)
    vals = _worst_loss(a, dirs)
    best = int(np.argmin(vals))
    scanned = float(vals[best])
    if r == 2:
        ang0 = np.arctan2(dirs[best, 1], dirs[best, 0])
        h = 2 * np.pi / config.beta_directions
        res = minimize_scalar(
            lambda t: _worst_loss(a, np.array([[np.cos(t), np.sin(t)]]))[0],
            bounds=(ang0 - h, ang0 + h),
            method="bounded",
            options={"xatol": 1e-12},
        )
        refined = float(res.fun)
    else:
        res = minimize(
            lambda v: _worst_loss(a, (v / np.linalg.norm(v))[None, :])[0],
            dirs[best],
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000},
        )
        refined = float(res.fun)
    return config.beta_shrink * min(scanned, refined)


def quantitative_na(tree: ScenarioTree, config: SolverConfig = DEFAULT_CONFIG) -> NAReport:
    """Fill ``beta`` and ``kappa`` at every node with non-trivial ``D``."""
    report = check_na(tree, config)
    if not report.na:
        raise ArbitrageError(f"arbitrage at node {report.arbitrage_node!r}", report.witness)
    for nid in tree.non_leaves:
        geom = support_geometry(tree, nid, config.rank_tol)
        if geom.is_trivial:
            continue
        c = report.nodes[nid]
        c.kappa = float(geom.probs.min())
        c.beta = beta_constant(geom, config)
    return report


def pi_bounds(tree: ScenarioTree, report: NAReport) -> NAReport:
    """Product lower bound for the loss-then-no-gain event.

    ``pi(n) = kappa(n) * prod_{s>t} min_{m at time s below n} kappa(m)``
    with ``kappa := 1`` where ``D`` is trivial.  Each later factor bounds
    the chance of a non-positive gain, whatever the (projected) position.
    """
    T = tree.horizon
    for nid in tree.non_leaves:
        c = report.nodes[nid]
        if c.kappa is None:
            continue
        t = tree.node(nid).time
        pi = c.kappa
        for s in range(t + 1, T):
            ks = [report.nodes[m].kappa for m in tree.descendants_at(nid, s)]
            pi *= min((k if k is not None else 1.0) for k in ks)
        c.pi = pi
    return report


def analyze(tree: ScenarioTree, config: SolverConfig = DEFAULT_CONFIG) -> NAReport:
    """Verdict plus beta, kappa, pi; witness-only report when NA fails."""
    report = check_na(tree, config)
    if not report.na:
        return report
    return pi_bounds(tree, quantitative_na(tree, config))
