"""The per-round simulation loop tying an environment, an algorithm, and a
delay schedule together, producing one row of diagnostics per round.

Each round: warm-started inner solve, execute the decision, dispatch it into
the delay queue, collect arrivals, refresh the queue envelope and step size,
apply the algorithm's gradient through its base rule, project, evict, log.
Runs are deterministic given (environment seed, delay seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from delayopt.core import ContractError, OutcomeRecord
from delayopt.delays import DelayQueue, DelaySchedule
from delayopt.environments.base import Environment
from delayopt.optimizers import AlgorithmConfig, adaptive_step, make_base_rule, make_engine
from delayopt.transport import transport_error_surrogates

ROW_COLUMNS = (
    "t", "sigma", "envelope", "eta", "true_loss", "regret_inc",
    "step_sq", "drift_sq", "step_sq_sum", "opt_gap", "diverged",
)


@dataclass
class RunResult:
    """Columnar per-round log plus run-level diagnostics."""

    columns: dict[str, np.ndarray]
    diverged: bool
    diverged_round: Optional[int]
    delay_hash: str
    poisson_cap_hits: int
    cg_iterations: int
    skipped_arrivals: int
    comparator_note: str
    final_theta: np.ndarray

    @property
    def rounds_logged(self) -> int:
        return len(self.columns["t"])

    @property
    def cumulative_regret(self) -> float:
        return float(np.sum(self.columns["regret_inc"]))

    @property
    def cumulative_loss(self) -> float:
        return float(np.sum(self.columns["true_loss"]))

    def window_mean(self, column: str, window: int) -> float:
        vals = self.columns[column]
        if len(vals) == 0:
            return float("nan")
        return float(np.mean(vals[-window:]))


def run_online(
    env: Environment,
    algo: AlgorithmConfig,
    delay: DelaySchedule,
    rounds: int,
    check_window_inequality: bool = True,
) -> RunResult:
    if rounds < 1:
        raise ContractError("rounds must be >= 1")
    schedule = algo.schedule()
    base = make_base_rule(algo)
    capacity = max(0, delay.sigma_bound)
    engine = make_engine(algo, env, capacity)
    queue = DelayQueue()

    theta = np.array(env.theta_init(), dtype=float)
    w_prev = np.array(env.initial_decision(), dtype=float)
    history: list[Optional[np.ndarray]] = [None, theta.copy()]  # history[t] = theta_t, 1-indexed

    cols: dict[str, list] = {name: [] for name in ROW_COLUMNS}
    diverged = False
    diverged_round: Optional[int] = None
    cg_total = 0
    skipped = 0
    is_constant_delay = delay.kind == "constant"

    for t in range(1, rounds + 1):
        env.begin_round(t)
        report = env.solve_inner(theta, w_prev)
        w_t = report.solution
        w_prev = w_t
        z_t, true_loss, opt_gap = env.realize_outcome(t, theta, w_t)
        record = OutcomeRecord(round=t, payload=z_t, dispatch_params=theta, dispatch_decision=w_t)

        d_t = delay.sample(t)
        queue.dispatch(t, d_t, record)
        arrivals = queue.advance(t)
        sigma, envelope = queue.sigma, queue.envelope

        if algo.event_driven:
            # event-driven variant: update only when feedback lands, damping by
            # the live queue instead of the monotone envelope
            eta = adaptive_step(schedule, sigma)
            do_update = bool(arrivals)
        else:
            eta = adaptive_step(schedule, envelope)
            do_update = True

        if do_update:
            g, diag = engine.round_gradient(theta, arrivals)
            cg_total += diag.cg_iterations
            skipped += diag.skipped_arrivals
            if algo.clip_norm is not None:
                norm = float(np.linalg.norm(g))
                if norm > algo.clip_norm:
                    g = g * (algo.clip_norm / norm)
            theta_next = base.update(theta, g, eta)
            theta_next = _project_ball(theta_next, algo.theta_radius)
        else:
            theta_next = theta.copy()
        engine.end_round()

        history.append(theta_next)
        step = theta_next - theta
        step_sq = float(step @ step)
        drift_sq, step_sq_sum = transport_error_surrogates(history, queue.outstanding, t)
        if check_window_inequality and is_constant_delay and delay.d >= 1:
            bound = delay.d * step_sq_sum
            if drift_sq > bound * (1 + 1e-9) + 1e-15:
                raise AssertionError(
                    f"window inequality violated at round {t}: {drift_sq} > {bound}"
                )

        regret_inc = true_loss - env.comparator_round_loss(z_t)

        bad_theta = not np.all(np.isfinite(theta_next)) or float(np.linalg.norm(theta_next)) > algo.divergence_norm
        row_diverged = bad_theta or env.unstable
        _append(cols, t, sigma, envelope, eta, true_loss, regret_inc, step_sq,
                drift_sq, step_sq_sum, opt_gap, row_diverged)
        if row_diverged:
            diverged = True
            diverged_round = t
            break
        theta = theta_next

    columns = {k: np.asarray(v, dtype=float) for k, v in cols.items()}
    return RunResult(
        columns=columns,
        diverged=diverged,
        diverged_round=diverged_round,
        delay_hash=delay.realized_hash(),
        poisson_cap_hits=delay.cap_hits,
        cg_iterations=cg_total,
        skipped_arrivals=skipped,
        comparator_note=env.comparator_note,
        final_theta=theta if not diverged else history[-1],
    )


def _append(cols, t, sigma, envelope, eta, true_loss, regret_inc, step_sq,
            drift_sq, step_sq_sum, opt_gap, diverged) -> None:
    cols["t"].append(t)
    cols["sigma"].append(sigma)
    cols["envelope"].append(envelope)
    cols["eta"].append(eta)
    cols["true_loss"].append(true_loss)
    cols["regret_inc"].append(regret_inc)
    cols["step_sq"].append(step_sq)
    cols["drift_sq"].append(drift_sq)
    cols["step_sq_sum"].append(step_sq_sum)
    cols["opt_gap"].append(np.nan if opt_gap is None else opt_gap)
    cols["diverged"].append(1.0 if diverged else 0.0)


def _project_ball(theta: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(theta))
    if np.isfinite(norm) and norm > radius:
        return theta * (radius / norm)
    return theta
