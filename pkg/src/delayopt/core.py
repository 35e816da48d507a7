"""Shared bilevel-problem contract and decision-quality bookkeeping.

Every environment implements :class:`BilevelProblem`: an inner (model-based)
objective over decisions ``w`` and an outer (realized) decision loss, plus the
analytic derivative products the optimizers consume. All second-order
quantities are exposed as matrix-free actions so the decision dimension can
grow without dense Hessian storage.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np


class ContractError(ValueError):
    """An environment or caller violated the bilevel-problem contract."""


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class OutcomeRecord:
    """Feedback for one dispatched round, revealed after its delay elapses.

    ``payload`` is environment-specific realized data (cost matrix, observed
    next state, ...). The dispatch snapshots are immutable copies of the
    parameters and decision in force when the round was played.
    """

    round: int
    payload: Any
    dispatch_params: np.ndarray
    dispatch_decision: np.ndarray

    def __post_init__(self):
        if self.round < 1:
            raise ContractError("round index must be >= 1")
        object.__setattr__(self, "dispatch_params", np.array(self.dispatch_params, dtype=float, copy=True))
        object.__setattr__(self, "dispatch_decision", np.array(self.dispatch_decision, dtype=float, copy=True))
        self.dispatch_params.setflags(write=False)
        self.dispatch_decision.setflags(write=False)


class BilevelProblem(ABC):
    """Behavioral contract every environment provides to the optimizers.

    ``ctx`` arguments select the round context (features, endpoints, ...)
    under which model-side quantities are evaluated; ``None`` means the
    environment's current round. Buffered re-evaluations pass the stored
    outcome payload so old rounds stay reproducible after the environment
    has drifted.
    """

    p: int  # outer parameter dimension
    q: int  # inner decision dimension
    mu_w_hint: float = 1.0  # strong-convexity lower bound used for error estimates

    # Environments whose inner solver is combinatorial supply a direct outer
    # gradient surrogate instead of the adjoint route.
    uses_decision_surrogate: bool = False

    @abstractmethod
    def model_loss(self, w: np.ndarray, theta: np.ndarray, ctx: Any = None) -> float: ...

    @abstractmethod
    def true_loss(self, w: np.ndarray, theta: np.ndarray, z: Any) -> float: ...

    @abstractmethod
    def grad_w_model(self, w: np.ndarray, theta: np.ndarray, ctx: Any = None) -> np.ndarray: ...

    @abstractmethod
    def grad_w_true(self, w: np.ndarray, theta: np.ndarray, z: Any) -> np.ndarray: ...

    @abstractmethod
    def grad_theta_true_fixed_w(self, w: np.ndarray, theta: np.ndarray, z: Any) -> np.ndarray: ...

    @abstractmethod
    def hess_ww_model_vp(self, w: np.ndarray, theta: np.ndarray, v: np.ndarray, ctx: Any = None) -> np.ndarray: ...

    @abstractmethod
    def cross_partial_transpose_vp(self, w: np.ndarray, theta: np.ndarray, v: np.ndarray, ctx: Any = None) -> np.ndarray: ...

    def prediction_target(self, z: Any) -> Optional[np.ndarray]:
        """Regression target for the two-stage baseline; None if unsupported."""
        return None

    def exact_inner(self, theta: np.ndarray, ctx: Any = None) -> Optional[np.ndarray]:
        """Closed-form inner minimizer, or None when no closed form exists."""
        return None

    def surrogate_gradient(self, theta: np.ndarray, record: OutcomeRecord) -> np.ndarray:
        raise ContractError(f"{type(self).__name__} does not define a decision surrogate gradient")


@dataclass(frozen=True)
class RegretReport:
    """Cumulative decision loss relative to a fixed comparator.

    When the comparator term cannot be evaluated (no exact inner solution),
    ``comparator_available`` is False and ``value`` holds the cumulative loss
    alone, flagged rather than silently mislabeled as regret.
    """

    value: float
    cumulative_loss: float
    comparator_term: float
    comparator_available: bool


def decision_regret(
    trajectory: Sequence[tuple[np.ndarray, np.ndarray, Any]],
    problem: BilevelProblem,
    comparator: np.ndarray,
) -> RegretReport:
    """Cumulative realized loss minus the comparator's loss on the same outcomes.

    ``trajectory`` holds per-round ``(theta_t, w_t, z_t)``. The comparator term
    replays every outcome under the comparator parameters' exact inner
    decision, so both sums run over the realized per-round losses.
    """
    comparator = np.asarray(comparator, dtype=float)
    cumulative = 0.0
    for theta_t, w_t, z_t in trajectory:
        cumulative += problem.true_loss(np.asarray(w_t, float), np.asarray(theta_t, float), z_t)

    w_cmp = problem.exact_inner(comparator)
    if w_cmp is None:
        return RegretReport(
            value=cumulative, cumulative_loss=cumulative, comparator_term=float("nan"),
            comparator_available=False,
        )
    cmp_term = 0.0
    for _, _, z_t in trajectory:
        cmp_term += problem.true_loss(w_cmp, comparator, z_t)
    return RegretReport(
        value=cumulative - cmp_term, cumulative_loss=cumulative,
        comparator_term=cmp_term, comparator_available=True,
    )


class OracleError(ValueError):
    """The supposedly optimal reference cost exceeds the achieved cost."""


def optimality_gap(path_cost: float, oracle_cost: float, tol: float = 1e-9) -> float:
    """Excess realized cost over the oracle optimum, clamped at zero.

    An oracle cost above the achieved cost (beyond ``tol``) signals a broken
    oracle and raises rather than returning a negative gap.
    """
    if oracle_cost > path_cost + tol:
        raise OracleError(
            f"oracle not optimal: oracle_cost={oracle_cost!r} exceeds path_cost={path_cost!r}"
        )
    return max(0.0, float(path_cost) - float(oracle_cost))
