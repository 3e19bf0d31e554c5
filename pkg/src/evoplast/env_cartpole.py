"""Cart-pole physics and the spike encoders feeding the network.

The dynamics replicate the classic control benchmark (standard constants,
semi-implicit Euler) with a 15-degree failure angle and no track-position
termination. Only the pole's angular velocity is encoded: one group of
Poisson neurons fires for positive values, another for negative values, with
per-timestep spike probability proportional to the magnitude.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class Action(IntEnum):
    LEFT = 0
    RIGHT = 1


@dataclass(frozen=True)
class CartPoleState:
    x: float = 0.0
    x_dot: float = 0.0
    theta: float = 0.0
    theta_dot: float = 0.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.x_dot, self.theta, self.theta_dot)


@dataclass(frozen=True)
class CartPoleParams:
    gravity: float = 9.8
    masscart: float = 1.0
    masspole: float = 0.1
    half_length: float = 0.5
    force_mag: float = 10.0
    dt: float = 0.02
    angle_limit_deg: float = 15.0
    max_episode_steps: int = 100

    def __post_init__(self):
        if self.masscart <= 0 or self.masspole <= 0 or self.half_length <= 0:
            raise ValueError("masses and pole length must be positive")
        if self.angle_limit_deg <= 0 or self.dt <= 0:
            raise ValueError("angle limit and dt must be positive")

    @property
    def angle_limit_rad(self) -> float:
        return math.radians(self.angle_limit_deg)


def reset(rng: np.random.Generator, low: float = -0.05, high: float = 0.05) -> CartPoleState:
    """Fresh episode state with each component uniform in [low, high]."""
    x, x_dot, theta, theta_dot = rng.uniform(low, high, 4)
    return CartPoleState(float(x), float(x_dot), float(theta), float(theta_dot))


def step(state: CartPoleState, action: Action, params: CartPoleParams) -> tuple[CartPoleState, bool]:
    """One physics step; terminates when the pole angle leaves the limit."""
    from ._kernels import cartpole_step_core

    force = params.force_mag if action == Action.RIGHT else -params.force_mag
    x, x_dot, theta, theta_dot = cartpole_step_core(
        state.x, state.x_dot, state.theta, state.theta_dot, force,
        params.gravity, params.masscart, params.masspole,
        params.half_length, params.dt,
    )
    new_state = CartPoleState(x, x_dot, theta, theta_dot)
    return new_state, abs(theta) > params.angle_limit_rad


@dataclass(frozen=True)
class EncoderConfig:
    """Sign-split rate encoder for one observation value.

    Per network timestep each neuron of the sign-matching group spikes with
    probability clamp(|value| / v_scale, 0, 1); the opposite group is silent.
    v_scale is a calibrated constant (typical angular-velocity magnitudes sit
    well inside it), not a published value.
    """

    neurons_per_group: int = 5
    sim_duration: int = 50
    v_scale: float = 1.0

    def __post_init__(self):
        if self.neurons_per_group < 1 or self.sim_duration < 1 or self.v_scale <= 0:
            raise ValueError("encoder constants must be positive")

    @property
    def n_neurons(self) -> int:
        return 2 * self.neurons_per_group

    def rate_for(self, value: float) -> float:
        return min(abs(value) / self.v_scale, 1.0)


def encode_observation(theta_dot: float, enc: EncoderConfig, rng: np.random.Generator) -> np.ndarray:
    """Spike matrix [2 * neurons_per_group, sim_duration] for one observation.

    Rows 0..g-1 are the positive group, rows g..2g-1 the negative group. The
    same number of random draws is consumed regardless of sign.
    """
    g = enc.neurons_per_group
    p = enc.rate_for(theta_dot)
    draws = rng.random((g, enc.sim_duration))
    spikes = np.zeros((2 * g, enc.sim_duration))
    if theta_dot > 0:
        spikes[:g] = (draws < p).astype(np.float64)
    elif theta_dot < 0:
        spikes[g:] = (draws < p).astype(np.float64)
    return spikes


def write_trajectory_csv(rows, path) -> None:
    """Trajectory export: one row per environment step.

    Each entry of `rows` is (env_step, state, action, reward) with the state
    observed at the start of the step.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["env_step", "x", "x_dot", "theta", "theta_dot", "action", "reward"])
        for env_step, state, action, reward in rows:
            writer.writerow([
                env_step,
                repr(state.x), repr(state.x_dot), repr(state.theta), repr(state.theta_dot),
                int(action),
                repr(float(reward)),
            ])
