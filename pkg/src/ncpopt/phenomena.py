"""Desk-scale reproductions of the negative results.

* ``nonexistence_sweep``: with a utility bounded below, expected utility in
  a symmetric one-step market keeps increasing in the position size.
* ``weak_convergence_ladder``: exact distance between ``Law(U, g_n(U))``
  and the independent uniform product law on rectangles.
* ``closedness_probe``: truncated version of the one-step market whose set
  of terminal laws is not weakly closed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HypothesisError
from .preferences import UtilityFunction

# -- non-existence ------------------------------------------------------------


@dataclass
class DivergenceSweep:
    phi: np.ndarray
    values: np.ndarray
    increasing: bool
    limit: float
    gaps: np.ndarray

    @property
    def best_gap(self) -> float:
        return float(self.gaps.min())

    def rows(self):
        return [(float(p), float(v), float(g)) for p, v, g in zip(self.phi, self.values, self.gaps)]


def nonexistence_sweep(u: UtilityFunction, phi_grid, p_up: float = 0.5) -> DivergenceSweep:
    """``phi -> E u(phi dS)`` for ``dS = +1`` w.p. ``p_up``, ``-1`` otherwise."""
    if u.limma:
        raise HypothesisError("the sweep illustrates utilities bounded below; this one diverges at -inf")
    phi = np.asarray(phi_grid, dtype=float)
    if np.any(np.diff(phi) <= 0):
        raise ValueError("phi grid must be strictly increasing")
    vals = p_up * u(phi) + (1.0 - p_up) * u(-phi)
    far = 1e8
    limit = float(p_up * u(far) + (1.0 - p_up) * u(-far))
    return DivergenceSweep(phi, vals, bool(np.all(np.diff(vals) > 0)), limit, limit - vals)


# -- weak convergence ladder ------------------------------------------------


def g_n(x, n: int):
    """Sawtooth ``n (x - k/n)`` on ``[k/n, (k+1)/n)``, with ``g_n(1) = 1``."""
    x = np.asarray(x, dtype=float)
    out = n * x - np.floor(n * x)
    return np.where(x >= 1.0, 1.0, out)


def rectangle_mass(n: int, a, b):
    """Exact ``P(U <= a, g_n(U) <= b)`` for ``U`` uniform on [0, 1]."""
    a = np.clip(np.asarray(a, dtype=float), 0.0, 1.0)
    b = np.clip(np.asarray(b, dtype=float), 0.0, 1.0)
    full = np.floor(n * a)
    rest = np.minimum(a - full / n, b / n)
    return full * b / n + rest


def ladder_distance(n: int, a_grid, b_grid) -> float:
    A, B = np.meshgrid(np.asarray(a_grid, dtype=float), np.asarray(b_grid, dtype=float), indexing="ij")
    return float(np.max(np.abs(rectangle_mass(n, A, B) - A * B)))


def weak_convergence_ladder(n_values, a_grid=None, b_grid=None) -> list[tuple[int, float]]:
    grid = np.linspace(0.0, 1.0, 201)
    a_grid = grid if a_grid is None else a_grid
    b_grid = grid if b_grid is None else b_grid
    return [(int(n), ladder_distance(int(n), a_grid, b_grid)) for n in n_values]


# -- closedness probe --------------------------------------------------------


def q_k(x, k: int):
    """Bounded orthogonal system on [0, 1]: ``cos(2 pi k x) / 2``; ``||q_k||^2 = 1/8``."""
    return 0.5 * np.cos(2.0 * np.pi * k * np.asarray(x, dtype=float))


Q_NORM2 = 0.125


@dataclass
class CounterexampleMarket:
    """One-step market with increment ``-1`` or ``f_k(U) = 3^k + 1/2 + q_k(U)``.

    ``P(Y = k) = 2^-(k+1)`` for ``k < K``; the mass of all ``k >= K`` is
    folded into band ``K`` so the truncated law still sums to one.
    """

    K: int = 4
    probs: dict[int, float] = field(init=False)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("truncation K must be >= 1")
        self.probs = {-1: 0.5}
        for k in range(1, self.K):
            self.probs[k] = 2.0 ** -(k + 1)
        self.probs[self.K] = 2.0 ** -self.K

    def f(self, k: int, x):
        return 3.0 ** k + 0.5 + q_k(x, k)

    def band(self, k: int) -> tuple[int, int]:
        """Integer band ``[3^k, 2 3^k + 2]`` holding ``phi f_k`` for ``phi`` in [1, 2]."""
        return 3 ** k, 2 * 3 ** k + 2

    def bands_disjoint(self) -> bool:
        bands = [self.band(k) for k in range(1, self.K + 1)]
        return all(hi < nxt_lo for (_, hi), (nxt_lo, _) in zip(bands, bands[1:]))


def _midpoints(m: int) -> np.ndarray:
    return (np.arange(m) + 0.5) / m


def law_cdf(market: CounterexampleMarket, position, t, m: int = 20_000) -> np.ndarray:
    """CDF of ``phi(U) dS`` where ``position(u)`` gives the position.

    The pushforward is taken on an ``m``-cell midpoint partition of U.
    """
    u = _midpoints(m)
    phi = np.asarray(position(u), dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for k, p in market.probs.items():
        x = -phi if k == -1 else phi * market.f(k, u)
        xs = np.sort(x)
        out += p * np.searchsorted(xs, t, side="right") / m
    return out


def limit_cdf(market: CounterexampleMarket, t, m: int = 8192) -> np.ndarray:
    """CDF of ``V dS`` with ``V`` uniform on [1, 2] independent of everything.

    The inner integral over U has a periodic, Lipschitz integrand, so a
    midpoint rule with a few thousand cells is already accurate to ~1e-7.
    """
    u = _midpoints(m)
    t = np.asarray(t, dtype=float)
    out = 0.5 * np.clip(t + 2.0, 0.0, 1.0)  # band k = -1: -V uniform on [-2, -1]
    for k, p in market.probs.items():
        if k == -1:
            continue
        f = market.f(k, u)
        out = out + p * np.mean(np.clip(t[..., None] / f - 1.0, 0.0, 1.0), axis=-1)
    return out


def metric_grid(market: CounterexampleMarket, points: int = 201) -> np.ndarray:
    """Per-band evaluation points: the band's range split evenly."""
    pts = [np.linspace(-2.0, -1.0, points)]
    for k in range(1, market.K + 1):
        lo, hi = market.band(k)
        pts.append(np.linspace(lo, hi, points))
    return np.concatenate(pts)


def law_distance(market, position, grid=None, m: int = 64_000, limit=None) -> float:
    """Kolmogorov-style distance on the band grid.

    ``m`` should be a multiple of every ladder ``n`` so that the U-partition
    is aligned with the teeth of ``g_n``.
    """
    grid = metric_grid(market) if grid is None else grid
    limit = limit_cdf(market, grid) if limit is None else limit
    return float(np.max(np.abs(law_cdf(market, position, grid, m) - limit)))


def moment_table(market: CounterexampleMarket, g, m: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """``c_k = int g q_k`` and the target ``(3/2 - E g(U)) (3^k + 1/2)`` for k = 1..K.

    A strategy ``g(U)`` whose law matches the limit would need ``c_k`` equal
    to the target for every k.  Midpoint sums are exact for trigonometric
    polynomials of degree below ``m``.
    """
    u = _midpoints(m)
    gu = np.asarray(g(u), dtype=float) * np.ones_like(u)
    ks = np.arange(1, market.K + 1)
    ck = np.array([np.mean(gu * q_k(u, k)) for k in ks])
    return ck, (1.5 - gu.mean()) * (3.0 ** ks + 0.5)


def moment_residuals(market: CounterexampleMarket, g, m: int = 4096) -> np.ndarray:
    ck, target = moment_table(market, g, m)
    return ck - target


def default_dictionary(K: int) -> dict[str, object]:
    out: dict[str, object] = {}
    for c in (1.0, 1.25, 1.5, 1.75, 2.0):
        out[f"const {c:g}"] = (lambda u, c=c: np.full_like(u, c))
    for j in range(1, K + 1):
        for a in (-0.2, -0.1, 0.1, 0.2):
            out[f"1.5 {a:+g} q_{j}"] = (lambda u, a=a, j=j: 1.5 + a * q_k(u, j))
    out["1 + u"] = lambda u: 1.0 + u
    return out


@dataclass
class ClosednessReport:
    K: int
    ladder: list[tuple[int, float]]
    residuals: dict[str, np.ndarray]
    moments: dict[str, tuple[np.ndarray, np.ndarray]]
    best: str
    best_max_residual: float
    best_distance: float

    def residual_rows(self):
        rows = []
        for name, (ck, target) in self.moments.items():
            for k, (c, t) in enumerate(zip(ck, target), start=1):
                rows.append((name, k, float(c), float(t), float(c - t)))
        return rows


def closedness_probe(K: int = 4, n_values=(1, 2, 4, 8, 16, 32, 64), dictionary=None,
                     m: int = 64_000) -> ClosednessReport:
    market = CounterexampleMarket(K)
    grid = metric_grid(market)
    limit = limit_cdf(market, grid)
    ladder = [
        (int(n), law_distance(market, lambda u, n=n: g_n(u, n) + 1.0, grid, m, limit)) for n in n_values
    ]
    dictionary = default_dictionary(K) if dictionary is None else dictionary
    moments = {name: moment_table(market, g) for name, g in dictionary.items()}
    residuals = {name: ck - target for name, (ck, target) in moments.items()}
    best = min(residuals, key=lambda k: float(np.max(np.abs(residuals[k]))))
    return ClosednessReport(
        K=K,
        ladder=ladder,
        residuals=residuals,
        moments=moments,
        best=best,
        best_max_residual=float(np.max(np.abs(residuals[best]))),
        best_distance=law_distance(market, dictionary[best], grid, m, limit),
    )


def band_gap_certificate(K: int) -> bool:
    """``2 * 3**k + 2 < 3**(k+1)`` for all ``1 <= k <= K`` (integer arithmetic)."""
    return all(2 * 3 ** k + 2 < 3 ** (k + 1) for k in range(1, K + 1))
