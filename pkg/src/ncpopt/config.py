"""Numerical tolerances and search budgets, kept in one place."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class SolverConfig:
    # wealth grids
    max_grid_step: float = 0.01  # spacing of the shared wealth lattice
    root_pad: float = 1.0
    # inner one-step search
    coarse_points: int = 41
    xi_tol: float = 1e-8
    tie_tol: float = 1e-12
    k_scale: float = 1.0
    g_max: float = 1e8
    monotone_passes: int = 5
    # certification
    tol_solve: float = 1e-6
    # support geometry / NA
    rank_tol: float = 1e-9
    beta_directions: int = 10_000
    beta_shrink: float = 0.99
    # CPT search
    cpt_grid: int = 21
    cpt_grid_budget: int = 200_000
    cpt_starts: int = 8
    cpt_step_tol: float = 1e-6
    cpt_max_evals: int = 200_000
    region_margin: float = 1.0
    seed: int = 0

    def with_overrides(self, overrides: dict[str, str | float | int]) -> "SolverConfig":
        """Return a copy with ``key=value`` overrides coerced to field types."""
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, raw in overrides.items():
            if key not in known:
                raise KeyError(f"unknown tolerance key {key!r}")
            current = getattr(self, key)
            changes[key] = type(current)(float(raw)) if isinstance(current, int) else float(raw)
        return replace(self, **changes)


DEFAULT_CONFIG = SolverConfig()
