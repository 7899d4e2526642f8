"""Early-exercise premium identity and exercise-region diagnostics.

The identity under test: American value = European value + discounted
expected integral of (Psi^- - L_I u) over the exercise region.  Both PIDE
prices and the Monte Carlo premium are produced here and compared inside a
single machine-checkable report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelRejected
from .model import LevyModel, validate_integrability
from .monte_carlo import Estimate, MCConfig, premium_sweep
from .payoffs import Payoff
from .pide import (Grid, Solution, SolverConfig, assemble, build_grid,
                   solve_american_penalty, solve_european)

SENSITIVITY_TOLS = (1e-5, 1e-6, 1e-7)


@dataclass(frozen=True)
class PremiumReport:
    american_pide: float
    european_pide: float
    premium_mc: Estimate
    identity_gap: float
    tolerance: float
    passed: bool
    sensitivity: dict
    tolerance_sensitive: bool
    exit_fraction: float
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs,
            "american_pide": self.american_pide,
            "european_pide": self.european_pide,
            "premium": self.premium_mc.to_dict(),
            "identity_gap": self.identity_gap,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "tolerance_sensitive": self.tolerance_sensitive,
            "sensitivity": {f"{tol:g}": gap for tol, gap in self.sensitivity.items()},
            "exit_fraction": self.exit_fraction,
        }


def premium_identity(model: LevyModel, payoff: Payoff, spot, T: float,
                     solver_cfg: SolverConfig | None = None,
                     mc_cfg: MCConfig | None = None,
                     solutions: tuple[Solution, Solution] | None = None) -> PremiumReport:
    """Price both sides of the premium identity and assemble the report.

    Refuses models whose integrability report contains a failure.  The
    identity gap is |american - european - premium| at the solver's exercise
    tolerance; the sensitivity map re-evaluates the Monte Carlo premium for
    the band tolerances 1e-5, 1e-6, 1e-7 from the same paths.
    """
    solver_cfg = solver_cfg or SolverConfig()
    mc_cfg = mc_cfg or MCConfig()
    report = validate_integrability(model.jumps, payoff.growth_exponent(),
                                    solver_cfg.beta, epsilon=0.1)
    if not report.ok:
        bad = [c.name for c in report.checks if not c.holds]
        raise ModelRejected(f"integrability failures: {bad}")

    if solutions is None:
        grid = build_grid(model, payoff, spot, T, solver_cfg.n_space, solver_cfg.n_time,
                          solver_cfg.beta, solver_cfg.trunc_tol, solver_cfg.y_max_tail)
        operator = assemble(model, grid, solver_cfg.y_max_tail)
        american = solve_american_penalty(model, payoff, grid, operator,
                                          penalty=solver_cfg.penalty_ladder,
                                          exercise_tol=solver_cfg.exercise_tol)
        european = solve_european(model, payoff, grid, operator)
    else:
        american, european = solutions
        if american.kind != "american" or european.kind != "european":
            raise ValueError("expected (american, european) solutions")

    base_tol = american.exercise_tol
    tols = tuple(sorted(set(SENSITIVITY_TOLS) | {base_tol}, reverse=True))
    sweep = premium_sweep(model, payoff, american, 0.0, spot, T,
                          mc_cfg.n_paths, mc_cfg.seed, exercise_tols=tols,
                          n_threads=mc_cfg.n_threads)
    amer = american.value_at_spot()
    eur = european.value_at_spot()
    premium = sweep[base_tol]
    gap = abs(amer - eur - premium.mean)
    tolerance = max(0.005 * amer, 3.0 * premium.stderr)
    sensitivity = {tol: abs(amer - eur - sweep[tol].mean) for tol in SENSITIVITY_TOLS}
    spread = max(sensitivity.values()) - min(sensitivity.values())
    sensitive = spread >= tolerance
    passed = gap <= tolerance and not sensitive
    inputs = {"spot": np.atleast_1d(np.asarray(spot, dtype=float)).tolist(), "T": T,
              "solver": solver_cfg.to_dict(), "mc": mc_cfg.to_dict(),
              "payoff": payoff.to_dict()}
    return PremiumReport(american_pide=amer, european_pide=eur, premium_mc=premium,
                         identity_gap=gap, tolerance=tolerance, passed=passed,
                         sensitivity=sensitivity, tolerance_sensitive=sensitive,
                         exit_fraction=sweep["exit_fraction"], inputs=inputs)


# --------------------------------------------------------------------------- #
# Exercise-region diagnostics
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class RegionReport:
    t: float
    level: int
    mask: np.ndarray
    included_in_positive_payoff: bool
    boundary_price: float | None  # d = 1 only


def exercise_region_report(solution: Solution, payoff: Payoff, t: float) -> RegionReport:
    """Exercise-set slice nearest to t, its inclusion in {psi > 0}, and the
    free-boundary price (d = 1: largest exercised node for puts, smallest for
    calls)."""
    grid = solution.grid
    level = int(np.clip(round(t / grid.dt), 0, grid.n_time))
    mask = solution.exercise_set[level]
    included = bool(np.all(solution.obstacle[mask] > 0)) if mask.any() else True
    boundary = None
    if grid.dim == 1:
        boundary = _boundary_price(grid, mask, payoff)
    return RegionReport(t=grid.times[level], level=level, mask=mask,
                        included_in_positive_payoff=included, boundary_price=boundary)


def _boundary_price(grid: Grid, mask: np.ndarray, payoff: Payoff) -> float | None:
    if not mask.any():
        return None
    prices = np.exp(grid.axes[0])
    exercised = prices[mask]
    return float(exercised.max()) if payoff.is_put else float(exercised.min())


def boundary_curve(solution: Solution, payoff: Payoff) -> np.ndarray:
    """Rows (t, boundary_price) per time level; NaN where the region is empty."""
    grid = solution.grid
    rows = np.full((grid.n_time + 1, 2), np.nan)
    rows[:, 0] = grid.times
    for k in range(grid.n_time + 1):
        b = _boundary_price(grid, solution.exercise_set[k], payoff)
        if b is not None:
            rows[k, 1] = b
    return rows
