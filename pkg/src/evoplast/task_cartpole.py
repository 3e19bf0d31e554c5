"""Cart-pole inner loop: a two-layer agent trained by group-wise rewards.

Per environment step the angular velocity is encoded into spike trains, the
network runs for a fixed number of timesteps with per-step states buffered,
and the output spike counts pick the push direction. The reward only becomes
known after the action, so learning replays the buffered states: synapses
into the acting output neuron receive the positive reward when the pole
moved toward the vertical, the other group receives the opposite one.
Weights update only during a learning window at the start of each episode;
w0 is captured when the window opens (episode start).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env_cartpole import (
    Action,
    CartPoleParams,
    CartPoleState,
    EncoderConfig,
    encode_observation,
    reset,
    step,
)
from .expr_graph import Genome
from .snn import CARTPOLE_TERMINALS, LifConfig, PlasticityRule, evolved_rule


def cartpole_lif_config() -> LifConfig:
    """Neuron constants of the cart-pole experiment."""
    return LifConfig(
        tau_v=10.0,
        threshold=1.0,
        tau_e=100.0,
        tau_plus=2.0,
        tau_minus=2.0,
        a_plus=1.5,
        a_minus=-0.5,
    )


@dataclass(frozen=True)
class CartPoleTaskConfig:
    """Protocol constants plus the calibrated weight initialization.

    The learning window length, the initial-weight range and the improvement
    horizon are calibrated defaults, not published constants. An action
    counts as improving when it moves the pole toward the center in the
    lookahead sense |theta' + h * theta_dot'| < |theta + h * theta_dot| with
    h = improvement_horizon (seconds); h = 0 reduces to a bare comparison of
    |theta|, which is too weak a signal for the baseline rule to learn from.
    Weight bounds default to [0, 2 * w_init_high].
    """

    episodes_per_trial: int = 50
    max_lifespan: int = 100
    learning_window: int = 30
    reward_pos: float = 1.0
    reward_neg: float = -0.5
    learning_rate: float = 1e-5
    trials_per_fitness: int = 3
    sim_duration: int = 50
    layer_sizes: tuple[int, ...] = (10, 2)
    improvement_horizon: float = 0.25
    w_init_low: float = 0.5
    w_init_high: float = 2.0
    w_min: float = 0.0
    w_max: float | None = None

    def __post_init__(self):
        if self.learning_window > self.max_lifespan:
            raise ValueError("learning_window cannot exceed max_lifespan")
        if len(self.layer_sizes) != 2 or self.layer_sizes[-1] != 2:
            raise ValueError("cart-pole agent is two layers with 2 output neurons")
        if not 0 <= self.w_init_low <= self.w_init_high:
            raise ValueError("need 0 <= w_init_low <= w_init_high")
        if self.improvement_horizon < 0:
            raise ValueError("improvement_horizon cannot be negative")
        if self.w_max is None:
            object.__setattr__(self, "w_max", 2.0 * self.w_init_high)

    def rule_from_genome(self, genome: Genome) -> PlasticityRule:
        return evolved_rule(genome, CARTPOLE_TERMINALS, self.learning_rate)


def decode_action(spikes_left: int, spikes_right: int, rng: np.random.Generator) -> Action:
    """Majority vote of the two output neurons; ties flip a fair coin."""
    if spikes_left > spikes_right:
        return Action.LEFT
    if spikes_right > spikes_left:
        return Action.RIGHT
    return Action.LEFT if rng.random() < 0.5 else Action.RIGHT


def assign_rewards(action: Action, improved: bool,
                   reward_pos: float = 1.0, reward_neg: float = -0.5) -> tuple[float, float]:
    """Group rewards (left synapses, right synapses) for one outcome."""
    acting = reward_pos if improved else reward_neg
    other = reward_neg if improved else reward_pos
    if action == Action.LEFT:
        return acting, other
    return other, acting


def pole_improved(before: CartPoleState, after: CartPoleState, horizon: float) -> bool:
    """Did the step move the pole toward the center?

    Compares the angle projected `horizon` seconds ahead; horizon = 0 compares
    the bare angles.
    """
    return (abs(after.theta + horizon * after.theta_dot)
            < abs(before.theta + horizon * before.theta_dot))


@dataclass
class StepOutcome:
    action: Action
    improved: bool
    reward_left: float
    reward_right: float
    spikes_left: int
    spikes_right: int


@dataclass
class EpisodeRecord:
    balance_time: int = 0
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)  # acting-group reward per step


class CartPoleAgent:
    """Network, rule and scratch buffers of one cart-pole trial."""

    def __init__(self, rule: PlasticityRule, cfg: CartPoleTaskConfig,
                 env_params: CartPoleParams, enc: EncoderConfig,
                 lif: LifConfig, weights):
        from . import _kernels as K

        if enc.n_neurons != cfg.layer_sizes[0]:
            raise ValueError(
                f"encoder emits {enc.n_neurons} rows, network expects {cfg.layer_sizes[0]}"
            )
        if enc.sim_duration != cfg.sim_duration:
            raise ValueError("encoder and task sim_duration disagree")
        self.rule = rule
        self.cfg = cfg
        self.env_params = env_params
        self.enc = enc
        self.flat = K.FlatNet(cfg.layer_sizes, weights, lif, cfg.w_min, cfg.w_max)
        self.rule_fn = K.rule_function(rule)
        self._kernels = K
        T = cfg.sim_duration
        self.t_vals = np.arange(T, dtype=np.float64)
        self.out_spikes = np.zeros((cfg.layer_sizes[-1], T))
        self.rec_elig = np.zeros((T, self.flat.n_syn))
        self.rec_s = np.zeros((T, self.flat.total_n))
        self.rec_e1 = np.zeros((T, self.flat.total_n))
        self.rec_e2 = np.zeros((T, self.flat.total_n))
        self.row_map = np.arange(cfg.layer_sizes[0], dtype=np.int64)

    def weights(self) -> np.ndarray:
        return self.flat.weights_of(0)

    def weights_finite(self) -> bool:
        return bool(np.isfinite(self.flat.w).all())


def run_env_step(agent: CartPoleAgent, env_state: CartPoleState, t_env: int,
                 rng: np.random.Generator, learn: bool = True) -> tuple[CartPoleState, bool, StepOutcome]:
    """One environment step: simulate, act, and (inside the window) learn.

    The network starts from zeroed dynamic state, runs sim_duration timesteps
    on the encoded angular velocity while buffering per-step signals, picks
    the action from the output spike counts, and, when t_env is inside the
    learning window, replays the buffer through the rule with the group-wise
    rewards. The `t` terminal of evolved rules is (t_env + 1) / max_lifespan.
    """
    K = agent._kernels
    cfg = agent.cfg
    flat = agent.flat
    inp = encode_observation(env_state.theta_dot, agent.enc, rng)
    flat.reset_dynamic()
    K.simulate_presentation(
        flat.sizes, flat.noff, flat.woff, flat.w, flat.w0, flat.elig,
        flat.u, flat.s, flat.x_plus, flat.x_minus, flat.e1, flat.e2,
        inp, agent.row_map,
        False, K.ZERO_RULE_FN, 0.0, 0, 0.0,
        flat.w_min, flat.w_max, *flat.lif_params(),
        agent.t_vals, agent.out_spikes,
        True, agent.rec_elig, agent.rec_s, agent.rec_e1, agent.rec_e2,
    )
    spikes_left = int(agent.out_spikes[0].sum())
    spikes_right = int(agent.out_spikes[1].sum())
    action = decode_action(spikes_left, spikes_right, rng)
    new_state, done = step(env_state, action, agent.env_params)
    improved = pole_improved(env_state, new_state, cfg.improvement_horizon)
    r_left, r_right = assign_rewards(action, improved, cfg.reward_pos, cfg.reward_neg)
    if learn and t_env < cfg.learning_window:
        rewards = np.array([r_left, r_right])
        t_val = (t_env + 1) / cfg.max_lifespan
        K.replay_pair_updates(
            flat.w, flat.w0,
            flat.woff[0], flat.noff[0], flat.noff[1],
            flat.sizes[0], flat.sizes[1],
            agent.rec_elig, agent.rec_s, agent.rec_e1, agent.rec_e2,
            rewards, agent.rule_fn, agent.rule.learning_rate, t_val,
            flat.w_min, flat.w_max, cfg.sim_duration,
        )
    outcome = StepOutcome(action, improved, r_left, r_right, spikes_left, spikes_right)
    return new_state, done, outcome


def run_episode(agent: CartPoleAgent, rng: np.random.Generator, learn: bool = True,
                keep_trajectory: bool = False) -> EpisodeRecord:
    """One episode up to max_lifespan steps; w0 is captured at episode start."""
    cfg = agent.cfg
    agent.flat.capture_w0()
    env_state = reset(rng)
    record = EpisodeRecord()
    for t_env in range(cfg.max_lifespan):
        if keep_trajectory:
            record.states.append(env_state)
        new_state, done, outcome = run_env_step(agent, env_state, t_env, rng, learn)
        record.actions.append(outcome.action)
        record.rewards.append(
            outcome.reward_left if outcome.action == Action.LEFT else outcome.reward_right
        )
        record.balance_time = t_env + 1
        env_state = new_state
        if done:
            break
    return record


@dataclass
class CartPoleTrialResult:
    balance_times: np.ndarray
    last5_mean: float
    aborted: bool = False
    initial_weights: list = field(default_factory=list)
    final_weights: list = field(default_factory=list)


def initial_weights(cfg: CartPoleTaskConfig, rng: np.random.Generator) -> list[np.ndarray]:
    sizes = cfg.layer_sizes
    return [
        rng.uniform(cfg.w_init_low, cfg.w_init_high, (sizes[p + 1], sizes[p]))
        for p in range(len(sizes) - 1)
    ]


def worst_trial_value() -> float:
    return 1.0  # an episode always survives at least one step


def run_trial(rule: PlasticityRule, cfg: CartPoleTaskConfig,
              env_params: CartPoleParams | None = None,
              enc: EncoderConfig | None = None,
              lif: LifConfig | None = None,
              seed: int = 0) -> CartPoleTrialResult:
    """One learning trial of episodes_per_trial episodes."""
    if env_params is None:
        env_params = CartPoleParams()
    if enc is None:
        enc = EncoderConfig(sim_duration=cfg.sim_duration)
    if lif is None:
        lif = cartpole_lif_config()
    rng = np.random.default_rng(seed)
    weights = initial_weights(cfg, rng)
    agent = CartPoleAgent(rule, cfg, env_params, enc, lif, weights)
    balance = np.zeros(cfg.episodes_per_trial)
    aborted = False
    for ep in range(cfg.episodes_per_trial):
        record = run_episode(agent, rng, learn=True)
        balance[ep] = record.balance_time
        if not agent.weights_finite():
            aborted = True
            break
    if aborted:
        last5 = worst_trial_value()
    else:
        last5 = float(balance[-5:].mean())
    return CartPoleTrialResult(
        balance_times=balance,
        last5_mean=last5,
        aborted=aborted,
        initial_weights=weights,
        final_weights=[agent.weights()],
    )


def fitness(rule: PlasticityRule, cfg: CartPoleTaskConfig, seeds,
            env_params: CartPoleParams | None = None,
            enc: EncoderConfig | None = None,
            lif: LifConfig | None = None) -> float:
    """Mean balance time of the last five episodes, averaged over the trials."""
    if len(seeds) != cfg.trials_per_fitness:
        raise ValueError(
            f"fitness needs exactly {cfg.trials_per_fitness} seeds, got {len(seeds)}"
        )
    total = 0.0
    for seed in seeds:
        total += run_trial(rule, cfg, env_params, enc, lif, seed).last5_mean
    return total / len(seeds)


def genome_fitness(genome: Genome, cfg: CartPoleTaskConfig, seeds,
                   env_params: CartPoleParams | None = None,
                   enc: EncoderConfig | None = None,
                   lif: LifConfig | None = None) -> float:
    return fitness(cfg.rule_from_genome(genome), cfg, seeds, env_params, enc, lif)
