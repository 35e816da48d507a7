"""Adjoint-based hypergradients and the gradient-transport buffer.

A round's hypergradient is assembled from two terms: the explicit derivative
of the realized loss in the outer parameters, and an implicit term routed
through an adjoint solve against the inner Hessian. Once a round's feedback
has arrived, its stored ``(w_s, v_s)`` pair lets the gradient be re-evaluated
at any later parameter point without re-solving the inner problem; the
transport step accumulates those one-step re-evaluation increments, which
telescope exactly for the frozen per-round gradient surrogate.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from delayopt.core import BilevelProblem, ContractError, OutcomeRecord
from delayopt.solvers import CGConfig, SolverError, conjugate_gradient

log = logging.getLogger(__name__)


@dataclass
class AdjointVector:
    values: np.ndarray
    solve_residual: float
    solve_iterations: int


@dataclass
class Hypergradient:
    values: np.ndarray
    source_round: int
    evaluated_at_round: int


class AdjointSolveError(SolverError):
    def __init__(self, round_index: int, cause: Exception):
        super().__init__(f"adjoint solve failed for round {round_index}: {cause}")
        self.round_index = round_index


def solve_adjoint(
    problem: BilevelProblem,
    w_s: np.ndarray,
    theta: np.ndarray,
    z_s: Any,
    cg: CGConfig,
    warm: Optional[AdjointVector] = None,
) -> AdjointVector:
    """Solve H_w v = grad_w of the realized loss at the stored decision.

    The Hessian action is evaluated at ``(w_s, theta)``; a previous adjoint
    may seed the iteration, which pays off while parameters move slowly.
    Environments whose inner problem is constrained expose
    ``adjoint_operator``/``adjoint_rhs`` overrides that restrict the system to
    the feasible set's tangent space; the defaults are the unconstrained
    Hessian action and loss gradient.
    """
    rhs_fn = getattr(problem, "adjoint_rhs", None)
    op_fn = getattr(problem, "adjoint_operator", None)
    if rhs_fn is not None:
        rhs = rhs_fn(w_s, theta, z_s)
    else:
        rhs = problem.grad_w_true(w_s, theta, z_s)
    if op_fn is not None:
        apply_A = op_fn(w_s, theta, z_s)
    else:
        apply_A = lambda v: problem.hess_ww_model_vp(w_s, theta, v, ctx=z_s)
    x0 = warm.values if (warm is not None and cg.warm_start and warm.values.shape == rhs.shape) else None
    x, residual, iters = conjugate_gradient(apply_A, rhs, x0=x0, cfg=cg)
    return AdjointVector(values=x, solve_residual=residual, solve_iterations=iters)


def hypergradient_at(
    problem: BilevelProblem,
    w_s: np.ndarray,
    v_s: AdjointVector | np.ndarray,
    theta_query: np.ndarray,
    z_s: Any,
) -> np.ndarray:
    """Two-term hypergradient at an arbitrary parameter point.

    Holds the stored decision and adjoint frozen; only the explicit
    theta-dependent factors are recomputed, so the cost is a couple of
    matrix-vector products.
    """
    v = v_s.values if isinstance(v_s, AdjointVector) else np.asarray(v_s, dtype=float)
    direct = problem.grad_theta_true_fixed_w(w_s, theta_query, z_s)
    implicit = problem.cross_partial_transpose_vp(w_s, theta_query, v, ctx=z_s)
    if direct.shape != implicit.shape:
        raise ContractError("hypergradient term dimension mismatch")
    return direct - implicit


@dataclass
class TransportBufferEntry:
    round: int
    decision: np.ndarray
    adjoint: Optional[AdjointVector]  # None for surrogate-gradient environments
    record: OutcomeRecord
    cached_gradient: np.ndarray
    cache_round: int


class TransportBuffer:
    """FIFO store of arrived rounds still being transported.

    Capacity is the worst-case queue length; eviction drops the oldest
    arrival. At most one entry per round.
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ContractError("buffer capacity must be >= 0")
        self.capacity = capacity
        self._entries: "OrderedDict[int, TransportBufferEntry]" = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries.values())

    def insert(self, entry: TransportBufferEntry) -> None:
        if entry.round in self._entries:
            raise ContractError(f"round {entry.round} already buffered")
        self._entries[entry.round] = entry

    def evict_to_capacity(self) -> int:
        evicted = 0
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)
            evicted += 1
        return evicted

    def rounds(self) -> list[int]:
        return list(self._entries.keys())


@dataclass
class TransportDiagnostics:
    arrivals: int = 0
    skipped_arrivals: int = 0
    cg_iterations: int = 0
    evicted: int = 0


def _round_gradient(problem: BilevelProblem, entry: TransportBufferEntry, theta: np.ndarray) -> np.ndarray:
    if problem.uses_decision_surrogate:
        return problem.surrogate_gradient(theta, entry.record)
    return hypergradient_at(problem, entry.decision, entry.adjoint, theta, entry.record.payload)


def _round_gradients_batch(problem: BilevelProblem, entries: list[TransportBufferEntry], theta: np.ndarray) -> list[np.ndarray]:
    """Re-evaluate many buffered gradients at once when the environment offers
    a batched path; falls back to the per-entry formula otherwise."""
    batched = getattr(problem, "hypergradients_at_many", None)
    if batched is not None and not problem.uses_decision_surrogate:
        mat = batched(
            theta,
            [e.decision for e in entries],
            [e.adjoint.values for e in entries],
            [e.record.payload for e in entries],
        )
        return [mat[i] for i in range(len(entries))]
    return [_round_gradient(problem, e, theta) for e in entries]


def transport_step(
    buffer: TransportBuffer,
    arrivals: list[OutcomeRecord],
    problem: BilevelProblem,
    theta_t: np.ndarray,
    cg: CGConfig,
    warm_adjoint: Optional[AdjointVector] = None,
    adjoint_at_dispatch: bool = False,
) -> tuple[np.ndarray, Optional[AdjointVector], TransportDiagnostics]:
    """One transport round: arrival gradients plus re-evaluation increments.

    Every pre-existing entry's cache holds its gradient at the previous call's
    parameter point, so the increment ``g_s(theta_t) - cache`` is the one-step
    re-evaluation change. Arrivals are solved, summed at the current
    parameters and cached before the re-evaluation loop runs, so a new entry's
    transport increment on its arrival round is exactly zero. A failed adjoint
    solve skips that round with a warning instead of aborting the run.

    Returns the corrected gradient, the last adjoint (for warm-starting), and
    per-round diagnostics. Eviction to capacity is the caller's final step.
    """
    diag = TransportDiagnostics(arrivals=len(arrivals))
    g_total = np.zeros_like(np.asarray(theta_t, dtype=float))
    preexisting = list(buffer)

    last_adjoint = warm_adjoint
    for rec in arrivals:
        adjoint = None
        if not problem.uses_decision_surrogate:
            theta_solve = rec.dispatch_params if adjoint_at_dispatch else theta_t
            try:
                adjoint = solve_adjoint(problem, rec.dispatch_decision, theta_solve, rec.payload, cg, warm=last_adjoint)
            except SolverError as exc:
                diag.skipped_arrivals += 1
                log.warning("round %d arrival skipped: %s", rec.round, exc)
                continue
            diag.cg_iterations += adjoint.solve_iterations
            last_adjoint = adjoint
        entry = TransportBufferEntry(
            round=rec.round, decision=rec.dispatch_decision, adjoint=adjoint,
            record=rec, cached_gradient=np.zeros(0), cache_round=rec.round,
        )
        g_s = _round_gradient(problem, entry, theta_t)
        entry.cached_gradient = g_s
        g_total += g_s
        buffer.insert(entry)

    if preexisting:
        fresh = _round_gradients_batch(problem, preexisting, theta_t)
        for entry, g_new in zip(preexisting, fresh):
            g_total += g_new - entry.cached_gradient
            entry.cached_gradient = g_new

    return g_total, last_adjoint, diag


def transport_error_surrogates(
    param_history: list[np.ndarray],
    outstanding: set[int],
    t: int,
) -> tuple[float, float]:
    """Per-round transport-error surrogates over the outstanding window.

    ``param_history[s]`` must hold theta_{s} for every s in the window through
    theta_{t+1} (the parameters after round t's update). Returns

      drift_sq  -- squared total parameter drift across the window,
      step_sq_sum -- sum of squared per-step changes over outstanding rounds,

    which coincide when a single round is outstanding and whose accumulated
    ratio approaches the queue length for near-constant step sizes.
    """
    if not outstanding:
        return 0.0, 0.0
    oldest = min(outstanding)
    theta_next = param_history[t + 1]
    drift = theta_next - param_history[oldest]
    drift_sq = float(drift @ drift)
    step_sq = 0.0
    for s in outstanding:
        d = param_history[s + 1] - param_history[s]
        step_sq += float(d @ d)
    return drift_sq, step_sq
