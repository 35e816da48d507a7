"""Update rules and gradient sources for the delayed online loop.

An algorithm is a (gradient source, base update rule, step schedule) triple.
Gradient sources decide *which* outer gradient a round applies: the
transport-corrected sum, the stale arrival sum evaluated at dispatch
snapshots, or the two-stage regression gradient. Base rules decide *how* a
gradient moves the parameters: plain projected gradient, Adam, or lazy
cumulative-gradient FTRL. Any source composes with any base rule, which is
what makes the transport correction optimizer-agnostic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Any, Optional

import numpy as np

from delayopt.core import BilevelProblem, ContractError, OutcomeRecord
from delayopt.solvers import CGConfig, SolverError
from delayopt.transport import (
    AdjointVector,
    TransportBuffer,
    TransportDiagnostics,
    hypergradient_at,
    solve_adjoint,
    transport_step,
)

log = logging.getLogger(__name__)


@dataclass
class StepSchedule:
    """Queue-envelope-adaptive step size eta_0 / sqrt(1 + beta * envelope)."""

    eta0: float
    beta: float = 1.0
    mode: str = "queue_adaptive"  # or "constant"

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ContractError("eta0 must be positive")
        if self.beta < 0:
            raise ContractError("beta must be nonnegative")
        if self.mode not in ("queue_adaptive", "constant"):
            raise ContractError(f"unknown schedule mode {self.mode!r}")


def adaptive_step(schedule: StepSchedule, envelope: int) -> float:
    if envelope < 0:
        raise ContractError("envelope must be nonnegative")
    if schedule.mode == "constant":
        return schedule.eta0
    return schedule.eta0 / np.sqrt(1.0 + schedule.beta * envelope)


class PlainGD:
    """theta <- theta - eta * g."""

    def update(self, theta: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
        return theta - eta * g


class Adam:
    """Adam with bias correction; the schedule's eta_t is the learning rate."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, floor: float = 1e-8):
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ContractError("Adam moment decays must lie in [0, 1)")
        self.beta1, self.beta2, self.floor = beta1, beta2, floor
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def update(self, theta: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - eta * m_hat / (np.sqrt(v_hat) + self.floor)


class LazyFTRL:
    """theta_{t+1} = theta_1 - eta_t * (cumulative applied gradient)."""

    def __init__(self):
        self.theta1: Optional[np.ndarray] = None
        self.cumulative: Optional[np.ndarray] = None

    def update(self, theta: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
        if self.theta1 is None:
            self.theta1 = theta.copy()
            self.cumulative = np.zeros_like(theta)
        self.cumulative += g
        return self.theta1 - eta * self.cumulative


def make_base_rule(cfg: "AlgorithmConfig"):
    if cfg.base == "plain_gd":
        return PlainGD()
    if cfg.base == "adam":
        return Adam(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, floor=cfg.adam_floor)
    if cfg.base == "dftrl":
        return LazyFTRL()
    raise ContractError(f"unknown base rule {cfg.base!r}")


class TransportEngine:
    """Arrival gradients at the current parameters plus buffer re-evaluation."""

    def __init__(self, problem: BilevelProblem, capacity: int, cg: CGConfig,
                 adjoint_at_dispatch: bool = False):
        self.problem = problem
        self.buffer = TransportBuffer(capacity)
        self.cg = cg
        self.adjoint_at_dispatch = adjoint_at_dispatch
        self._warm: Optional[AdjointVector] = None

    def round_gradient(self, theta_t: np.ndarray, arrivals: list[OutcomeRecord]) -> tuple[np.ndarray, TransportDiagnostics]:
        g, warm, diag = transport_step(
            self.buffer, arrivals, self.problem, theta_t, self.cg,
            warm_adjoint=self._warm, adjoint_at_dispatch=self.adjoint_at_dispatch,
        )
        self._warm = warm
        return g, diag

    def end_round(self) -> int:
        return self.buffer.evict_to_capacity()


class StaleArrivalEngine:
    """Summed arrival gradients at their dispatch snapshots (theta_s, w_s)."""

    def __init__(self, problem: BilevelProblem, cg: CGConfig):
        self.problem = problem
        self.cg = cg
        self._warm: Optional[AdjointVector] = None

    def round_gradient(self, theta_t: np.ndarray, arrivals: list[OutcomeRecord]) -> tuple[np.ndarray, TransportDiagnostics]:
        diag = TransportDiagnostics(arrivals=len(arrivals))
        g = np.zeros_like(theta_t)
        for rec in arrivals:
            if self.problem.uses_decision_surrogate:
                g += self.problem.surrogate_gradient(rec.dispatch_params, rec)
                continue
            try:
                adj = solve_adjoint(self.problem, rec.dispatch_decision, rec.dispatch_params,
                                    rec.payload, self.cg, warm=self._warm)
            except SolverError as exc:
                diag.skipped_arrivals += 1
                log.warning("round %d arrival skipped: %s", rec.round, exc)
                continue
            self._warm = adj
            diag.cg_iterations += adj.solve_iterations
            g += hypergradient_at(self.problem, rec.dispatch_decision, adj, rec.dispatch_params, rec.payload)
        return g, diag

    def end_round(self) -> int:
        return 0


class TwoStageEngine:
    """Regression gradients of the prediction error on arrived targets.

    By default the gradient scores the prediction the model actually made at
    dispatch (evaluated at the stored snapshot parameters); set
    ``at_dispatch=False`` to regress the current parameters on the old data
    instead.
    """

    def __init__(self, problem: BilevelProblem, at_dispatch: bool = True):
        probe = getattr(problem, "two_stage_gradient", None)
        if probe is None or type(problem).prediction_target is BilevelProblem.prediction_target:
            raise ContractError(
                f"{type(problem).__name__} exposes no prediction target; "
                "the two-stage baseline cannot run on it"
            )
        self.problem = problem
        self.at_dispatch = at_dispatch

    def round_gradient(self, theta_t: np.ndarray, arrivals: list[OutcomeRecord]) -> tuple[np.ndarray, TransportDiagnostics]:
        g = np.zeros_like(theta_t)
        for rec in arrivals:
            point = rec.dispatch_params if self.at_dispatch else theta_t
            g += self.problem.two_stage_gradient(point, rec)
        return g, TransportDiagnostics(arrivals=len(arrivals))

    def end_round(self) -> int:
        return 0


@dataclass
class AlgorithmConfig:
    """Everything that defines one optimizer run, minus the environment."""

    name: str
    gradient: str  # "transport" | "stale" | "two_stage"
    base: str  # "plain_gd" | "adam" | "dftrl"
    eta0: float = 0.01
    beta_damping: float = 1.0
    schedule_mode: str = "queue_adaptive"
    clip_norm: Optional[float] = None  # gradient norm clip before the base rule
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_floor: float = 1e-8
    event_driven: bool = False
    adjoint_at_dispatch: bool = False
    two_stage_at_dispatch: bool = True
    # the feasible ball must sit outside the divergence guard, otherwise the
    # projection masks every instability the guard is meant to catch
    theta_radius: float = 1e7
    divergence_norm: float = 1e6
    cg_tolerance: float = 1e-8
    cg_max_iterations: Optional[int] = None

    def schedule(self) -> StepSchedule:
        return StepSchedule(eta0=self.eta0, beta=self.beta_damping, mode=self.schedule_mode)

    def cg_config(self) -> CGConfig:
        return CGConfig(tolerance=self.cg_tolerance, max_iterations=self.cg_max_iterations)


_REGISTRY: dict[str, dict[str, Any]] = {
    # transported hypergradients on the plain mirror-descent update
    "transport_omd": dict(gradient="transport", base="plain_gd", schedule_mode="queue_adaptive"),
    # stale arrival gradients, no correction
    "stale_omd": dict(gradient="stale", base="plain_gd", schedule_mode="queue_adaptive"),
    # stale gradients + mandatory adaptive schedule + norm clipping
    "robust_omd": dict(gradient="stale", base="plain_gd", schedule_mode="queue_adaptive", clip_norm=10.0),
    # lazy cumulative-gradient FTRL over stale arrivals
    "dftrl": dict(gradient="stale", base="dftrl", schedule_mode="queue_adaptive"),
    # predict-then-optimize baseline: regression on arrived targets
    "two_stage": dict(gradient="two_stage", base="plain_gd", schedule_mode="constant"),
    "two_stage_adam": dict(gradient="two_stage", base="adam", schedule_mode="constant", clip_norm=1.0),
    # Adam-based pairs for the controlled comparisons
    "transport_adam": dict(gradient="transport", base="adam", schedule_mode="constant", clip_norm=1.0, beta_damping=0.0),
    "stale_adam": dict(gradient="stale", base="adam", schedule_mode="constant", clip_norm=1.0, beta_damping=0.0),
    "robust_adam": dict(gradient="stale", base="adam", schedule_mode="queue_adaptive", clip_norm=1.0),
    "dftrl_transport": dict(gradient="transport", base="dftrl", schedule_mode="queue_adaptive"),
}


def algorithm_names() -> list[str]:
    return sorted(_REGISTRY)


def make_algorithm(name: str, **overrides) -> AlgorithmConfig:
    if name not in _REGISTRY:
        raise ContractError(f"unknown algorithm {name!r}; known: {', '.join(algorithm_names())}")
    kwargs: dict[str, Any] = dict(_REGISTRY[name])
    kwargs.update(overrides)
    return AlgorithmConfig(name=name, **kwargs)


def attach_transport(cfg: AlgorithmConfig) -> AlgorithmConfig:
    """Swap the stale arrival sum for the transport-corrected gradient,
    leaving the base rule and schedule untouched."""
    if cfg.gradient == "transport":
        return cfg
    if cfg.gradient != "stale":
        raise ContractError("transport attaches to stale-gradient optimizers only")
    return replace(cfg, gradient="transport", name=cfg.name + "+transport")


def make_engine(cfg: AlgorithmConfig, problem: BilevelProblem, buffer_capacity: int):
    if cfg.gradient == "transport":
        return TransportEngine(problem, buffer_capacity, cfg.cg_config(),
                               adjoint_at_dispatch=cfg.adjoint_at_dispatch)
    if cfg.gradient == "stale":
        return StaleArrivalEngine(problem, cfg.cg_config())
    if cfg.gradient == "two_stage":
        return TwoStageEngine(problem, at_dispatch=cfg.two_stage_at_dispatch)
    raise ContractError(f"unknown gradient source {cfg.gradient!r}")
