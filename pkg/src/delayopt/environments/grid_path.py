"""Terrain-grid shortest-path decisions with a perturbation-surrogate gradient.

A seeded synthetic terrain assigns each cell one of four base cost levels;
per-cell costs drift around those levels. A linear model over fixed per-cell
features predicts traversal costs; the inner problem is an exact shortest-path
solve between per-round endpoints sampled on the grid border, so inner error
is identically zero.

Because the solver is combinatorial, the smooth adjoint route does not apply.
The outer gradient is the finite-difference-of-paths surrogate: perturb the
predicted costs in the direction of the realized true costs, re-solve, and
read the gradient off the change in the path indicator, scaled back by the
perturbation size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from delayopt.core import ContractError, OutcomeRecord
from delayopt.environments.base import Environment
from delayopt.solvers import InnerSolveReport, dijkstra_grid

TERRAIN_LEVELS = (1.0, 2.0, 5.0, 10.0)


@dataclass
class GridPathConfig:
    height: int = 12
    width: int = 12
    feature_dim: int = 128
    perturbation: float = 1.0  # surrogate perturbation scale
    feature_noise: float = 0.5  # distractor feature magnitude
    drift_rate: float = 0.05
    drift_noise: float = 0.15
    cost_floor: float = 1e-3
    task_seed: int = 0  # terrain and features; run seed drives drift and endpoints

    def __post_init__(self):
        if self.perturbation <= 0:
            raise ContractError("perturbation scale must be positive")


class GridPathProblem(Environment):
    uses_decision_surrogate = True

    def __init__(self, cfg: GridPathConfig, seed: int = 0):
        self.cfg = cfg
        self.n_cells = cfg.height * cfg.width
        self.p = cfg.feature_dim
        self.q = self.n_cells
        rng = np.random.default_rng([int(cfg.task_seed), 6133])
        self.terrain = rng.integers(0, len(TERRAIN_LEVELS), size=self.n_cells)
        self.base_costs = np.array([TERRAIN_LEVELS[i] for i in self.terrain])
        # features: a random embedding of the terrain class plus fixed per-cell
        # distractors; 128 features cannot interpolate 144 cells exactly, so
        # the cost model is deliberately misspecified
        class_embed = rng.standard_normal((len(TERRAIN_LEVELS), cfg.feature_dim))
        noise = cfg.feature_noise * rng.standard_normal((self.n_cells, cfg.feature_dim))
        self.features = class_embed[self.terrain] + noise
        self._drift_rng = np.random.default_rng([int(seed), 6389])
        self._endpoint_rng = np.random.default_rng([int(seed), 6553])
        self.drift = np.zeros(self.n_cells)
        self.start: tuple[int, int] = (0, 0)
        self.goal: tuple[int, int] = (cfg.height - 1, cfg.width - 1)
        self._border = self._border_cells()
        # least-squares fit of the base terrain costs is the comparator predictor
        self.theta_cmp, *_ = np.linalg.lstsq(self.features, self.base_costs, rcond=None)
        self._theta1, *_ = np.linalg.lstsq(
            self.features, np.full(self.n_cells, float(np.mean(self.base_costs))), rcond=None
        )
        self.comparator_note = "fixed comparator: least-squares terrain fit"

    def _border_cells(self) -> list[tuple[int, int]]:
        H, W = self.cfg.height, self.cfg.width
        cells = [(r, c) for r in range(H) for c in range(W)
                 if r in (0, H - 1) or c in (0, W - 1)]
        return cells

    # -- cost models -----------------------------------------------------------

    def predicted_costs(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raw = self.features @ np.asarray(theta)
        mask = (raw > self.cfg.cost_floor).astype(float)
        return np.maximum(raw, self.cfg.cost_floor), mask

    def current_true_costs(self) -> np.ndarray:
        return np.maximum(self.base_costs + self.drift, self.cfg.cost_floor)

    def _shortest(self, costs: np.ndarray, start, goal) -> tuple[np.ndarray, float]:
        grid = costs.reshape(self.cfg.height, self.cfg.width)
        path, total = dijkstra_grid(grid, start, goal)
        indicator = np.zeros(self.n_cells)
        for r, c in path[1:]:  # entered cells; start excluded
            indicator[r * self.cfg.width + c] = 1.0
        return indicator, total

    # -- bilevel contract (linear pieces; no usable curvature) -------------------

    def model_loss(self, w, theta, ctx=None) -> float:
        costs, _ = self.predicted_costs(theta)
        return float(costs @ np.asarray(w))

    def grad_w_model(self, w, theta, ctx=None):
        costs, _ = self.predicted_costs(theta)
        return costs

    def hess_ww_model_vp(self, w, theta, v, ctx=None):
        raise ContractError("shortest-path inner objective is linear; use the surrogate gradient")

    def cross_partial_transpose_vp(self, w, theta, v, ctx=None):
        _, mask = self.predicted_costs(theta)
        return self.features.T @ (np.asarray(v) * mask)

    def true_loss(self, w, theta, z) -> float:
        return float(z["costs_true"] @ np.asarray(w))

    def grad_w_true(self, w, theta, z):
        return z["costs_true"].copy()

    def grad_theta_true_fixed_w(self, w, theta, z):
        return np.zeros(self.p)

    def prediction_target(self, z):
        return z["costs_true"]

    def surrogate_gradient(self, theta: np.ndarray, record: OutcomeRecord) -> np.ndarray:
        """Finite difference of path indicators along the realized-cost direction."""
        z = record.payload
        start, goal = z["start"], z["goal"]
        costs, mask = self.predicted_costs(theta)
        base_path, _ = self._shortest(costs, start, goal)
        bumped = costs + self.cfg.perturbation * z["costs_true"]
        bump_path, _ = self._shortest(bumped, start, goal)
        delta = (bump_path - base_path) * mask
        return self.features.T @ delta / self.cfg.perturbation

    # -- runner hooks -------------------------------------------------------------

    def theta_init(self):
        return self._theta1.copy()

    def initial_decision(self):
        return np.zeros(self.q)

    def begin_round(self, t: int) -> None:
        noise = self._drift_rng.standard_normal(self.n_cells)
        self.drift = (1.0 - self.cfg.drift_rate) * self.drift + self.cfg.drift_noise * noise
        start = self._border[self._endpoint_rng.integers(len(self._border))]
        goal = start
        while goal == start:
            goal = self._border[self._endpoint_rng.integers(len(self._border))]
        self.start, self.goal = start, goal

    def solve_inner(self, theta, w_prev) -> InnerSolveReport:
        costs, _ = self.predicted_costs(theta)
        indicator, _ = self._shortest(costs, self.start, self.goal)
        return InnerSolveReport(solution=indicator, iterations_used=1,
                                residual_norm=0.0, epsilon_estimate=0.0)

    def realize_outcome(self, t, theta, w):
        costs_true = self.current_true_costs()
        z = {"costs_true": costs_true, "start": self.start, "goal": self.goal}
        realized = float(costs_true @ np.asarray(w))
        _, oracle_cost = self._shortest(costs_true, self.start, self.goal)
        gap = max(0.0, realized - oracle_cost)
        return z, realized, gap

    def comparator_round_loss(self, z) -> float:
        costs, _ = self.predicted_costs(self.theta_cmp)
        indicator, _ = self._shortest(costs, z["start"], z["goal"])
        return float(z["costs_true"] @ indicator)

    def two_stage_gradient(self, theta, record):
        z = record.payload
        costs, mask = self.predicted_costs(theta)
        return self.features.T @ ((costs - z["costs_true"]) * mask)
