"""Linear-quadratic control with learned dynamics.

The outer parameters stack a learned state matrix and input matrix; the inner
problem picks a static feedback gain minimizing a one-step quadratic proxy
under the learned model, averaged over an isotropic reference state. The
realized loss plays the gain on the true dynamics with persistent state and
process noise, so bad gains feed back into the data the learner sees.

Everything is polynomial in (gain, parameters), so all derivative products
are analytic, the inner Hessian action is a small positive definite matrix
product, and the exact inner gain has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from delayopt.core import ContractError
from delayopt.environments.base import Environment
from delayopt.solvers import InnerSolveReport, InnerSolverConfig, inner_gd


@dataclass
class LQRConfig:
    n_x: int = 10
    n_u: int = 3
    r_weight: float = 0.1  # control cost R = r_weight * I
    noise_std: float = 0.1  # process noise std per coordinate (covariance 0.01 I)
    spectral_radius: float = 0.95
    b_scale: float = 0.5
    init_spread: float = 0.1  # theta_1 = truth + spread * N(0, 1)
    inner_steps: int = 10
    inner_step_size: float = 0.01
    loss_cap: float = 1e8
    state_cap: float = 1e8
    task_seed: int = 0  # dynamics matrices and initial parameters; run seed drives noise


class LQRProblem(Environment):
    def __init__(self, cfg: LQRConfig, seed: int = 0):
        self.cfg = cfg
        n_x, n_u = cfg.n_x, cfg.n_u
        self.p = n_x * (n_x + n_u)
        self.q = n_u * n_x
        rng = np.random.default_rng([int(cfg.task_seed), 2417])
        A = rng.standard_normal((n_x, n_x))
        radius = max(abs(np.linalg.eigvals(A)))
        self.A_true = A * (cfg.spectral_radius / radius)
        self.B_true = cfg.b_scale * rng.standard_normal((n_x, n_u))
        self.Q = np.eye(n_x)
        self.R = cfg.r_weight * np.eye(n_u)
        self.mu_w_hint = 2.0 * cfg.r_weight
        self._theta1 = self._pack(self.A_true, self.B_true) + cfg.init_spread * rng.standard_normal(self.p)
        self._noise_rng = np.random.default_rng([int(seed), 3001])
        self.x = 0.1 * self._noise_rng.standard_normal(n_x)
        self._xi = np.zeros(n_x)
        theta_cmp = self._pack(self.A_true, self.B_true)
        self.W_cmp = self._exact_gain(theta_cmp)
        self.comparator_note = "fixed comparator: true dynamics parameters"
        self._inner_cfg = InnerSolverConfig(steps=cfg.inner_steps, step_size=cfg.inner_step_size)

    # -- packing helpers ----------------------------------------------------

    def _pack(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return np.concatenate([A.ravel(), B.ravel()])

    def _unpack(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n_x, n_u = self.cfg.n_x, self.cfg.n_u
        A = theta[: n_x * n_x].reshape(n_x, n_x)
        B = theta[n_x * n_x:].reshape(n_x, n_u)
        return A, B

    def _gain(self, w: np.ndarray) -> np.ndarray:
        return np.asarray(w).reshape(self.cfg.n_u, self.cfg.n_x)

    def _exact_gain(self, theta: np.ndarray) -> np.ndarray:
        A, B = self._unpack(theta)
        M = self.R + B.T @ self.Q @ B
        return np.linalg.solve(M, B.T @ self.Q @ A)

    # -- bilevel contract ----------------------------------------------------
    # model objective: E_{x ~ N(0, I)} [ u'Ru + (A x + B u)' Q (A x + B u) ], u = -W x

    def model_loss(self, w, theta, ctx=None) -> float:
        A, B = self._unpack(theta)
        W = self._gain(w)
        closed = A - B @ W
        return float(np.trace(W.T @ self.R @ W) + np.trace(closed.T @ self.Q @ closed))

    def grad_w_model(self, w, theta, ctx=None):
        A, B = self._unpack(theta)
        W = self._gain(w)
        G = 2.0 * ((self.R + B.T @ self.Q @ B) @ W - B.T @ self.Q @ A)
        return G.ravel()

    def hess_ww_model_vp(self, w, theta, v, ctx=None):
        _, B = self._unpack(theta)
        V = self._gain(v)
        return (2.0 * (self.R + B.T @ self.Q @ B) @ V).ravel()

    def cross_partial_transpose_vp(self, w, theta, v, ctx=None):
        A, B = self._unpack(theta)
        W = self._gain(w)
        V = self._gain(v)
        QB = self.Q @ B
        dA = -2.0 * QB @ V
        dB = 2.0 * (QB @ (W @ V.T) + QB @ (V @ W.T) - self.Q @ A @ V.T)
        return self._pack(dA, dB)

    def exact_inner(self, theta, ctx=None):
        return self._exact_gain(theta).ravel()

    # realized loss: u'Ru + x_next' Q x_next on the true dynamics, z = (x, xi)

    def true_loss(self, w, theta, z) -> float:
        x, xi = z["x"], z["xi"]
        W = self._gain(w)
        u = -W @ x
        x_next = self.A_true @ x + self.B_true @ u + xi
        return float(u @ (self.R @ u) + x_next @ (self.Q @ x_next))

    def grad_w_true(self, w, theta, z):
        x, xi = z["x"], z["xi"]
        W = self._gain(w)
        u = -W @ x
        x_next = self.A_true @ x + self.B_true @ u + xi
        dLdu = 2.0 * (self.R @ u) + 2.0 * (self.B_true.T @ (self.Q @ x_next))
        return (-np.outer(dLdu, x)).ravel()

    def grad_theta_true_fixed_w(self, w, theta, z):
        return np.zeros(self.p)  # realized loss has no explicit parameter term

    def prediction_target(self, z):
        return z["x_next"]

    # -- runner hooks ---------------------------------------------------------

    def theta_init(self):
        return self._theta1.copy()

    def initial_decision(self):
        return np.zeros(self.q)

    def solve_inner(self, theta, w_prev) -> InnerSolveReport:
        return inner_gd(self, theta, w_prev, self._inner_cfg)

    def realize_outcome(self, t, theta, w):
        xi = self.cfg.noise_std * self._noise_rng.standard_normal(self.cfg.n_x)
        x = self.x.copy()
        z = {"x": x, "xi": xi}
        W = self._gain(w)
        u = -W @ x
        x_next = self.A_true @ x + self.B_true @ u + xi
        z["u"] = u
        z["x_next"] = x_next
        loss = float(u @ (self.R @ u) + x_next @ (self.Q @ x_next))
        if not np.isfinite(loss) or loss > self.cfg.loss_cap:
            loss = self.cfg.loss_cap
            self.unstable = True
        if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > self.cfg.state_cap:
            self.unstable = True
            x_next = np.clip(np.nan_to_num(x_next), -self.cfg.state_cap, self.cfg.state_cap)
        self.x = x_next
        return z, loss, None

    def comparator_round_loss(self, z) -> float:
        x, xi = z["x"], z["xi"]
        u = -self.W_cmp @ x
        x_next = self.A_true @ x + self.B_true @ u + xi
        return float(u @ (self.R @ u) + x_next @ (self.Q @ x_next))

    def two_stage_gradient(self, theta, record):
        z = record.payload
        A, B = self._unpack(theta)
        r = A @ z["x"] + B @ z["u"] - z["x_next"]
        return self._pack(np.outer(r, z["x"]), np.outer(r, z["u"]))
