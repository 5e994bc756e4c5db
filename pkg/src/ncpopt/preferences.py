"""Utility functions, probability distortions and their standing checks.

Utilities are vectorised callables on numpy arrays.  Exponentials are
evaluated with the exponent clipped at ``_EXP_CAP`` so that extreme
wealth levels yield huge finite values instead of ``inf``; monotonicity is
preserved (the clipped region is flat).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PreferenceError, TreeFormatError

_EXP_CAP = 700.0
MONOTONE_TOL = 1e-12


def _exp(x):
    return np.exp(np.minimum(x, _EXP_CAP))


@dataclass(frozen=True)
class UtilityFunction:
    """A non-decreasing utility with its declared properties.

    ``limma`` records whether ``u(x) -> -inf`` as ``x -> -inf`` (certified by
    sampling ``u(-10**k) <= -k`` for ``k = 2..6``); ``diverges`` records
    ``u(x) -> +inf`` as ``x -> +inf`` (used for loss utilities).
    """

    family: str
    params: dict
    fn: Callable = field(repr=False, compare=False)
    upper_bound: float | None
    limma: bool = False
    diverges: bool = False

    def __call__(self, x):
        with np.errstate(over="ignore", invalid="ignore"):
            out = self.fn(np.asarray(x, dtype=float))
        return out if np.ndim(out) else float(out)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}


def _sampled_limma(fn) -> bool:
    ks = np.arange(2, 7)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = fn(-(10.0 ** ks))
    return bool(np.all(vals <= -ks))


def _sampled_divergence(fn) -> bool:
    ks = np.arange(2, 7)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = fn(10.0 ** ks)
    return bool(np.all(vals >= ks))


def _positive(params, *names):
    for n in names:
        if not (params[n] > 0 and math.isfinite(params[n])):
            raise PreferenceError(f"parameter {n!r} must be positive and finite, got {params[n]!r}")


def _cara_capped(p):
    lam = p["lam"]
    return (lambda x: 1.0 - _exp(-lam * x)), 1.0


def _s_shaped_capped(p):
    lam, alpha, mu = p["lam"], p["alpha"], p["mu"]

    def f(x):
        gains = 1.0 - _exp(-lam * np.maximum(x, 0.0))
        losses = -alpha * (_exp(-mu * np.minimum(x, 0.0)) - 1.0)
        return np.where(x >= 0, gains, losses)

    return f, 1.0


def _kt_power(p):
    lam, alpha, a = p["lam"], p["alpha"], p["a"]

    def f(x):
        gains = 1.0 - _exp(-lam * np.maximum(x, 0.0))
        losses = -alpha * np.power(np.maximum(-x, 0.0), a)
        return np.where(x >= 0, gains, losses)

    return f, 1.0


def _log_loss(p):
    def f(x):
        gains = 1.0 - _exp(-np.maximum(x, 0.0))
        losses = -np.log1p(np.maximum(-x, 0.0))
        return np.where(x >= 0, gains, losses)

    return f, 1.0


def _bounded_below(p):
    a = p["a"]

    def f(x):
        gains = 1.0 - _exp(-np.maximum(x, 0.0))
        losses = a * (_exp(np.minimum(x, 0.0)) - 1.0)
        return np.where(x >= 0, gains, losses)

    return f, 1.0


def _tanh(p):
    s = p["scale"]
    return (lambda x: np.tanh(x / s)), 1.0


def _capped_linear(p):
    cap = p["cap"]
    return (lambda x: np.minimum(x, cap)), cap


def _linear(p):
    k = p["slope"]
    return (lambda x: k * x), None


def _exp_loss(p):
    alpha, mu = p["alpha"], p["mu"]
    return (lambda x: alpha * (_exp(mu * x) - 1.0)), None


def _power(p):
    alpha, a = p["alpha"], p["a"]
    return (lambda x: alpha * np.sign(x) * np.power(np.abs(x), a)), None


def _log1p(p):
    return (lambda x: np.sign(x) * np.log1p(np.abs(x))), None


# family -> (builder, defaults, names that must be positive)
_FAMILIES: dict[str, tuple[Callable, dict, tuple[str, ...]]] = {
    "cara_capped": (_cara_capped, {"lam": 1.0}, ("lam",)),
    "s_shaped_capped": (_s_shaped_capped, {"lam": 1.0, "alpha": 1.0, "mu": 1.0}, ("lam", "alpha", "mu")),
    "kt_power": (_kt_power, {"lam": 1.0, "alpha": 2.25, "a": 0.88}, ("lam", "alpha", "a")),
    "log_loss": (_log_loss, {}, ()),
    "bounded_below": (_bounded_below, {"a": 0.5}, ("a",)),
    "tanh": (_tanh, {"scale": 1.0}, ("scale",)),
    "capped_linear": (_capped_linear, {"cap": 1.0}, ("cap",)),
    "linear": (_linear, {"slope": 1.0}, ("slope",)),
    "exp_loss": (_exp_loss, {"alpha": 1.0, "mu": 1.0}, ("alpha", "mu")),
    "power": (_power, {"alpha": 1.0, "a": 0.88}, ("alpha", "a")),
    "log1p": (_log1p, {}, ()),
}

UTILITY_FAMILIES = tuple(_FAMILIES)


def make_builtin_utility(family: str, params: dict | None = None) -> UtilityFunction:
    """Build a utility from the registry.

    Families on the whole line: ``cara_capped`` (1 - exp(-lam x)),
    ``s_shaped_capped``, ``kt_power``, ``log_loss``, ``bounded_below``,
    ``tanh``.  Families meant for the CPT gain/loss parts (evaluated on
    x >= 0): ``capped_linear``, ``linear``, ``exp_loss``, ``power``,
    ``log1p``.
    """
    if family not in _FAMILIES:
        raise PreferenceError(f"unknown utility family {family!r}; choose from {sorted(_FAMILIES)}")
    builder, defaults, positive = _FAMILIES[family]
    params = dict(params or {})
    unknown = set(params) - set(defaults)
    if unknown:
        raise PreferenceError(f"{family}: unknown parameters {sorted(unknown)}")
    merged = {**defaults, **{k: float(v) for k, v in params.items()}}
    _positive(merged, *positive)
    fn, bound = builder(merged)
    return UtilityFunction(
        family=family,
        params=merged,
        fn=fn,
        upper_bound=bound,
        limma=_sampled_limma(fn),
        diverges=_sampled_divergence(fn),
    )


def utility_problems(u: UtilityFunction, lo: float = -1e6, hi: float = 1e6, n: int = 10_000) -> list[str]:
    """Grid check of monotonicity and the declared upper bound."""
    x = np.linspace(lo, hi, n)
    x = np.union1d(x, np.linspace(-10, 10, 2001))
    y = u(x)
    problems = []
    if np.any(np.isnan(y)):
        problems.append("utility returns NaN on the grid")
    bad = np.nonzero(y[:-1] > y[1:] + MONOTONE_TOL)[0]
    if bad.size:
        problems.append(f"not non-decreasing near x={x[bad[0]]:g}")
    if u.upper_bound is not None and np.any(y > u.upper_bound + MONOTONE_TOL):
        problems.append(f"exceeds declared bound {u.upper_bound:g}")
    return problems


# -- distortions -----------------------------------------------------------
@dataclass(frozen=True)
class DistortionFunction:
    family: str
    params: dict
    fn: Callable = field(repr=False, compare=False)

    def __call__(self, p):
        p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
        out = self.fn(p)
        return out if np.ndim(out) else float(out)

    @property
    def is_identity(self) -> bool:
        return self.family == "identity" or (self.family == "power" and self.params["gamma"] == 1.0)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}


def _kt_weight(gamma):
    def w(p):
        with np.errstate(divide="ignore", invalid="ignore"):
            num = np.power(p, gamma)
            out = num / np.power(num + np.power(1.0 - p, gamma), 1.0 / gamma)
        return np.where(p <= 0.0, 0.0, np.where(p >= 1.0, 1.0, out))

    return w


DISTORTION_FAMILIES = ("identity", "power", "kt_inverse_s")


def make_builtin_distortion(family: str, params: dict | None = None) -> DistortionFunction:
    params = {k: float(v) for k, v in (params or {}).items()}
    if family == "identity":
        if params:
            raise PreferenceError("identity distortion takes no parameters")
        return DistortionFunction("identity", {}, lambda p: p)
    if family in ("power", "kt_inverse_s"):
        if set(params) - {"gamma"}:
            raise PreferenceError(f"{family}: unknown parameters {sorted(set(params) - {'gamma'})}")
        gamma = params.get("gamma", 1.0 if family == "power" else 0.65)
        if not (gamma > 0 and math.isfinite(gamma)):
            raise PreferenceError(f"{family}: gamma must be positive, got {gamma!r}")
        fn = (lambda p: np.power(p, gamma)) if family == "power" else _kt_weight(gamma)
        w = DistortionFunction(family, {"gamma": gamma}, fn)
        problems = distortion_problems(w)
        if problems:
            raise PreferenceError(f"{family}(gamma={gamma:g}): " + "; ".join(problems))
        return w
    raise PreferenceError(f"unknown distortion family {family!r}; choose from {list(DISTORTION_FAMILIES)}")


def distortion_problems(w: DistortionFunction, n: int = 10_001) -> list[str]:
    p = np.linspace(0.0, 1.0, n)
    y = w(p)
    problems = []
    if abs(y[0]) > 1e-12 or abs(y[-1] - 1.0) > 1e-12:
        problems.append("must satisfy w(0)=0 and w(1)=1")
    if np.any(y[:-1] > y[1:] + MONOTONE_TOL):
        problems.append("not non-decreasing")
    # a crude continuity screen: no jump larger than a tenth on a 1e-4 mesh
    if np.any(np.abs(np.diff(y)) > 0.1):
        problems.append("jump larger than 0.1 between adjacent grid points")
    return problems


def inverse_distortion(w: DistortionFunction, q: float, iterations: int = 60) -> float:
    """Largest ``p`` in [0, 1] with ``w(p) <= q``, by bisection."""
    q = float(q)
    if w(1.0) <= q:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if w(mid) <= q:
            lo = mid
        else:
            hi = mid
    return lo


# -- preference bundles ----------------------------------------------------
@dataclass(frozen=True)
class EUPreference:
    utility: UtilityFunction
    kind: str = "eu"

    def to_dict(self) -> dict:
        return {"kind": "eu", "utility": self.utility.to_dict()}


@dataclass(frozen=True)
class CPTPreference:
    u_plus: UtilityFunction
    u_minus: UtilityFunction
    w_plus: DistortionFunction
    w_minus: DistortionFunction
    kind: str = "cpt"

    @property
    def upper_bound(self) -> float | None:
        return self.u_plus.upper_bound

    def composite(self, x):
        """``u(x) = u_+(x)`` for x >= 0, ``-u_-(-x)`` for x < 0."""
        x = np.asarray(x, dtype=float)
        out = np.where(x >= 0, self.u_plus(np.maximum(x, 0.0)), -self.u_minus(np.maximum(-x, 0.0)))
        return out if np.ndim(out) else float(out)

    def composite_utility(self) -> UtilityFunction:
        fn = lambda x: self.composite(x)  # noqa: E731
        return UtilityFunction("cpt_composite", {}, fn, self.upper_bound,
                               limma=self.u_minus.diverges, diverges=False)

    def problems(self) -> list[str]:
        out = []
        for name, u in (("u_plus", self.u_plus), ("u_minus", self.u_minus)):
            if abs(u(0.0)) > 1e-12:
                out.append(f"{name}(0) must be 0")
            x = np.linspace(0.0, 1e6, 10_000)
            y = u(x)
            if np.any(y < -1e-12):
                out.append(f"{name} must be non-negative on R+")
            if np.any(y[:-1] > y[1:] + MONOTONE_TOL):
                out.append(f"{name} not non-decreasing on R+")
        if self.u_plus.upper_bound is None:
            out.append("u_plus must be bounded above")
        if not self.u_minus.diverges:
            out.append("u_minus must diverge to +inf")
        for name, w in (("w_plus", self.w_plus), ("w_minus", self.w_minus)):
            out.extend(f"{name}: {p}" for p in distortion_problems(w))
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "cpt",
            "u_plus": self.u_plus.to_dict(),
            "u_minus": self.u_minus.to_dict(),
            "w_plus": self.w_plus.to_dict(),
            "w_minus": self.w_minus.to_dict(),
        }


def _leaf(raw, what):
    if not isinstance(raw, dict) or set(raw) - {"family", "params"} or "family" not in raw:
        raise TreeFormatError(f"{what} must be an object with 'family' and optional 'params'")
    return raw["family"], raw.get("params") or {}


def preference_from_dict(data: dict) -> EUPreference | CPTPreference:
    if not isinstance(data, dict) or "kind" not in data:
        raise TreeFormatError("preference document needs a 'kind' field")
    kind = data["kind"]
    if kind == "eu":
        unknown = set(data) - {"kind", "utility"}
        if unknown:
            raise TreeFormatError(f"unknown preference fields: {sorted(unknown)}")
        fam, params = _leaf(data.get("utility"), "utility")
        return EUPreference(make_builtin_utility(fam, params))
    if kind == "cpt":
        allowed = {"kind", "u_plus", "u_minus", "w_plus", "w_minus"}
        unknown = set(data) - allowed
        if unknown:
            raise TreeFormatError(f"unknown preference fields: {sorted(unknown)}")
        parts = {}
        for key in ("u_plus", "u_minus"):
            parts[key] = make_builtin_utility(*_leaf(data.get(key), key))
        for key in ("w_plus", "w_minus"):
            raw = data.get(key, {"family": "identity"})
            parts[key] = make_builtin_distortion(*_leaf(raw, key))
        return CPTPreference(**parts)
    raise TreeFormatError(f"preference kind must be 'eu' or 'cpt', got {kind!r}")
