"""Analytic dynamics models and quadratic tracking costs.

All models are integrated with explicit Euler and expose exact Jacobians of
the discrete step. States and controls may carry leading batch axes, so a
whole trajectory can be stepped or linearized in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81


class DynamicsModel:
    """Continuous dynamics ``xdot = f(x, u)`` discretized with explicit Euler."""

    name = "base"
    n = 0
    m = 0
    # state coordinates that count as "position" for tracking error
    position_indices: tuple = (0,)

    def xdot(self, x, u):
        raise NotImplementedError

    def xdot_jacobians(self, x, u):
        raise NotImplementedError

    def step(self, x, u, h):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return x + h * self.xdot(x, u)

    def jacobians(self, x, u, h):
        """Return ``(A, B)`` with ``A = d step / dx`` and ``B = d step / du``."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        fx, fu = self.xdot_jacobians(x, u)
        A = np.eye(self.n) + h * fx
        B = h * fu
        return A, B

    def rollout(self, x0, U, h):
        X = [np.asarray(x0, dtype=float)]
        for u in U:
            X.append(self.step(X[-1], u, h))
        return np.array(X)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, m={self.m})"


class DoubleIntegrator(DynamicsModel):
    name = "double_integrator"
    n = 2
    m = 1
    position_indices = (0,)

    def xdot(self, x, u):
        return np.stack([x[..., 1], u[..., 0]], axis=-1)

    def xdot_jacobians(self, x, u):
        batch = x.shape[:-1]
        fx = np.zeros(batch + (2, 2))
        fx[..., 0, 1] = 1.0
        fu = np.zeros(batch + (2, 1))
        fu[..., 1, 0] = 1.0
        return fx, fu


@dataclass(repr=False)
class Pendulum(DynamicsModel):
    """Frictionless point-mass pendulum, ``theta = 0`` hanging down."""

    mass: float = 1.0
    length: float = 1.0
    gravity: float = GRAVITY

    name = "pendulum"
    n = 2
    m = 1
    position_indices = (0,)

    def xdot(self, x, u):
        ml2 = self.mass * self.length**2
        thdd = (u[..., 0] - self.mass * self.gravity * self.length * np.sin(x[..., 0])) / ml2
        return np.stack([x[..., 1], thdd], axis=-1)

    def xdot_jacobians(self, x, u):
        batch = x.shape[:-1]
        ml2 = self.mass * self.length**2
        fx = np.zeros(batch + (2, 2))
        fx[..., 0, 1] = 1.0
        fx[..., 1, 0] = -self.gravity * np.cos(x[..., 0]) / self.length
        fu = np.zeros(batch + (2, 1))
        fu[..., 1, 0] = 1.0 / ml2
        return fx, fu


@dataclass(repr=False)
class CartPole(DynamicsModel):
    """Cart with a point-mass pole; state ``(x, theta, xdot, thetadot)``.

    ``theta = 0`` is hanging down, ``theta = pi`` is upright.
    """

    cart_mass: float = 1.0
    pole_mass: float = 0.2
    length: float = 0.5
    gravity: float = GRAVITY

    name = "cartpole"
    n = 4
    m = 1
    position_indices = (0,)

    def _terms(self, x, u):
        mc, mp, l, g = self.cart_mass, self.pole_mass, self.length, self.gravity
        th, thd, f = x[..., 1], x[..., 3], u[..., 0]
        s, c = np.sin(th), np.cos(th)
        d = mc + mp * s**2
        num_x = f + mp * s * (l * thd**2 + g * c)
        num_t = -f * c - mp * l * thd**2 * c * s - (mc + mp) * g * s
        return s, c, d, num_x, num_t

    def xdot(self, x, u):
        l = self.length
        _, _, d, num_x, num_t = self._terms(x, u)
        return np.stack([x[..., 2], x[..., 3], num_x / d, num_t / (l * d)], axis=-1)

    def xdot_jacobians(self, x, u):
        mc, mp, l, g = self.cart_mass, self.pole_mass, self.length, self.gravity
        thd = x[..., 3]
        s, c, d, num_x, num_t = self._terms(x, u)
        f = u[..., 0]
        dd_th = 2.0 * mp * s * c

        nx_th = mp * (c * (l * thd**2 + g * c) - g * s**2)
        nx_thd = 2.0 * mp * s * l * thd
        nt_th = f * s - mp * l * thd**2 * (c**2 - s**2) - (mc + mp) * g * c
        nt_thd = -2.0 * mp * l * thd * c * s

        batch = x.shape[:-1]
        fx = np.zeros(batch + (4, 4))
        fx[..., 0, 2] = 1.0
        fx[..., 1, 3] = 1.0
        fx[..., 2, 1] = (nx_th * d - num_x * dd_th) / d**2
        fx[..., 2, 3] = nx_thd / d
        fx[..., 3, 1] = (nt_th * d - num_t * dd_th) / (l * d**2)
        fx[..., 3, 3] = nt_thd / (l * d)
        fu = np.zeros(batch + (4, 1))
        fu[..., 2, 0] = 1.0 / d
        fu[..., 3, 0] = -c / (l * d)
        return fx, fu


def double_integrator() -> DynamicsModel:
    return DoubleIntegrator()


def pendulum(**params) -> DynamicsModel:
    return Pendulum(**params)


def cartpole(**params) -> DynamicsModel:
    return CartPole(**params)


MODELS = {
    "double_integrator": double_integrator,
    "pendulum": pendulum,
    "cartpole": cartpole,
}


def get_model(name: str) -> DynamicsModel:
    try:
        return MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(MODELS)}") from None


@dataclass
class CostModel:
    """Quadratic tracking cost with a per-knot goal sequence.

    ``goals`` has one row per state knot. Stage cost is
    ``0.5 (x - g)^T W_x (x - g) + 0.5 u^T W_u u`` and the terminal cost is
    ``0.5 (x_N - g_N)^T W_N (x_N - g_N)``.
    """

    W_x: np.ndarray
    W_u: np.ndarray
    W_N: np.ndarray
    goals: np.ndarray = field(default=None)

    def __post_init__(self):
        self.W_x = np.atleast_2d(np.asarray(self.W_x, dtype=float))
        self.W_u = np.atleast_2d(np.asarray(self.W_u, dtype=float))
        self.W_N = np.atleast_2d(np.asarray(self.W_N, dtype=float))
        if self.goals is not None:
            self.goals = np.atleast_2d(np.asarray(self.goals, dtype=float))

    @classmethod
    def tracking(cls, n, m, knots, goal=None, state_weight=1.0, control_weight=1.0, terminal_weight=None):
        """Diagonal weights and a constant goal over ``knots`` state knots."""
        terminal_weight = state_weight if terminal_weight is None else terminal_weight
        W_x = np.diag(np.broadcast_to(np.asarray(state_weight, dtype=float), (n,)))
        W_u = np.diag(np.broadcast_to(np.asarray(control_weight, dtype=float), (m,)))
        W_N = np.diag(np.broadcast_to(np.asarray(terminal_weight, dtype=float), (n,)))
        goal = np.zeros(n) if goal is None else np.asarray(goal, dtype=float)
        return cls(W_x, W_u, W_N, np.tile(goal, (knots, 1)))

    def goal_sequence(self, knots):
        if self.goals is None:
            return np.zeros((knots, self.W_x.shape[0]))
        if self.goals.shape[0] == knots:
            return self.goals
        if self.goals.shape[0] == 1:
            return np.repeat(self.goals, knots, axis=0)
        raise ValueError(f"cost has {self.goals.shape[0]} goals but trajectory has {knots} knots")

    def quadratics(self, X, U):
        """Per-knot ``(Q, R, q, r)``; ``Q`` has N+1 entries, ``R`` N entries."""
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        N = U.shape[0]
        dx = X - self.goal_sequence(N + 1)
        Q = np.empty((N + 1,) + self.W_x.shape)
        Q[:N] = self.W_x
        Q[N] = self.W_N
        q = np.empty_like(X)
        q[:N] = dx[:N] @ self.W_x.T
        q[N] = self.W_N @ dx[N]
        R = np.broadcast_to(self.W_u, (N,) + self.W_u.shape).copy()
        r = U @ self.W_u.T
        return Q, R, q, r


def eval_cost(cost: CostModel, X, U) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.asarray(U, dtype=float).reshape(-1, cost.W_u.shape[0])
    N = U.shape[0]
    if X.shape[0] != N + 1:
        raise ValueError(f"expected {N + 1} states for {N} controls, got {X.shape[0]}")
    dx = X - cost.goal_sequence(N + 1)
    stage = 0.5 * np.einsum("ki,ij,kj->", dx[:N], cost.W_x, dx[:N])
    stage += 0.5 * np.einsum("ki,ij,kj->", U, cost.W_u, U)
    terminal = 0.5 * dx[N] @ cost.W_N @ dx[N]
    return float(stage + terminal)
