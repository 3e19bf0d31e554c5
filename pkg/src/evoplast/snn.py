"""Layered leaky integrate-and-fire networks with plasticity machinery.

Discrete-time simulation with dt = 1 network timestep. Each neuron carries a
membrane potential, a spike indicator, two STDP activity traces (x_plus for
the presynaptic role, x_minus for the postsynaptic role) and two generic
spike traces with fast/slow decays (e1, e2). Each synapse carries a weight,
the weight captured at the start of the current learning window (w0) and an
eligibility trace that low-pass filters pre/post spike coincidences.

Per timestep the update order is: membranes and spikes layer by layer, then
activity traces, then eligibility traces, then the plasticity rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .expr_graph import Genome, evaluate


class RuleError(ValueError):
    """Raised for misconfigured plasticity rules."""


@dataclass(frozen=True)
class LifConfig:
    """Neuron and trace constants shared by a whole network."""

    tau_v: float = 10.0
    threshold: float = 100.0
    tau_e: float = 100.0
    tau_plus: float = 10.0
    tau_minus: float = 10.0
    a_plus: float = 1.0
    a_minus: float = -1.0

    def __post_init__(self):
        for name in ("tau_v", "tau_e", "tau_plus", "tau_minus"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")

    # exponential decay factors for one timestep
    @property
    def alpha_v(self) -> float:
        return math.exp(-1.0 / self.tau_v)

    @property
    def decay_plus(self) -> float:
        return math.exp(-1.0 / self.tau_plus)

    @property
    def decay_minus(self) -> float:
        return math.exp(-1.0 / self.tau_minus)

    @property
    def decay_e(self) -> float:
        return math.exp(-1.0 / self.tau_e)


@dataclass(frozen=True)
class NeuronState:
    u: float = 0.0
    s: int = 0
    x_plus: float = 0.0
    x_minus: float = 0.0
    e1: float = 0.0
    e2: float = 0.0


@dataclass(frozen=True)
class SynapseState:
    w: float = 0.0
    w0: float = 0.0
    elig: float = 0.0
    xi: float = 0.0


@dataclass(frozen=True)
class LocalSignals:
    """Per-synapse values a plasticity rule may consume at one timestep.

    Fields may be floats or broadcastable numpy arrays. `s_post`/`s_pre` are
    the current spike indicators of the post-/presynaptic neuron, e_*_1/2
    their fast and slow spike traces, `w0` the weight at the start of the
    learning window and `t` the timestep signal exposed to evolved rules.
    """

    elig: float = 0.0
    reward: float = 0.0
    s_post: float = 0.0
    s_pre: float = 0.0
    e_post_1: float = 0.0
    e_post_2: float = 0.0
    e_pre_1: float = 0.0
    e_pre_2: float = 0.0
    w0: float = 0.0
    t: float = 0.0


# canonical terminal names -> LocalSignals fields (i = post, j = pre)
TERMINAL_FIELDS = {
    "E": "elig",
    "R": "reward",
    "S_i": "s_post",
    "S_j": "s_pre",
    "e_i1": "e_post_1",
    "e_i2": "e_post_2",
    "e_j1": "e_pre_1",
    "e_j2": "e_pre_2",
    "w0": "w0",
    "t": "t",
}

# fixed signal slot order used by the compiled kernels
SIGNAL_ORDER = ("E", "R", "S_i", "S_j", "e_i1", "e_i2", "e_j1", "e_j2", "w0", "t")

XOR_TERMINALS = ("E", "R", "S_i", "S_j", "e_i1", "e_i2", "e_j1", "e_j2")
CARTPOLE_TERMINALS = ("E", "R", "S_i", "S_j", "e_i1", "e_i2", "e_j1", "e_j2", "w0", "t")

MSTDPET = "mstdpet"
MULT_RSTDP = "mult_rstdp"
NAMED_RULES = ("xor_best", "cartpole_similar", "cartpole_best")


@dataclass(frozen=True)
class PlasticityRule:
    """A weight-update rule: a built-in, a named evolved rule, or a genome.

    For genome-backed rules `terminals` gives the LocalSignals terminal name
    feeding each genome input, in genome input order.
    """

    learning_rate: float
    kind: str  # "mstdpet" | "mult_rstdp" | "named" | "evolved"
    name: str | None = None
    genome: Genome | None = None
    terminals: tuple[str, ...] | None = None


def mstdpet_rule(learning_rate: float) -> PlasticityRule:
    return PlasticityRule(learning_rate, MSTDPET)


def mult_rstdp_rule(learning_rate: float) -> PlasticityRule:
    return PlasticityRule(learning_rate, MULT_RSTDP)


def named_rule(name: str, learning_rate: float) -> PlasticityRule:
    if name not in NAMED_RULES:
        raise RuleError(f"unknown named rule {name!r}; known: {', '.join(NAMED_RULES)}")
    return PlasticityRule(learning_rate, "named", name=name)


def evolved_rule(genome: Genome, terminals: tuple[str, ...], learning_rate: float) -> PlasticityRule:
    if len(terminals) != genome.n_inputs:
        raise RuleError(
            f"genome takes {genome.n_inputs} terminals, map has {len(terminals)}"
        )
    if len(set(terminals)) != len(terminals):
        raise RuleError(f"terminal map has duplicates: {terminals}")
    for term in terminals:
        if term not in TERMINAL_FIELDS:
            raise RuleError(
                f"unmapped terminal {term!r}; known terminals: {', '.join(TERMINAL_FIELDS)}"
            )
    return PlasticityRule(learning_rate, "evolved", genome=genome, terminals=tuple(terminals))


def apply_rule(rule: PlasticityRule, sig: LocalSignals):
    """Weight change for one timestep given the local signals.

    Accepts scalar or broadcastable array signals. The multiplication order
    below is fixed so genome-backed equivalents reproduce it bit-exactly.
    """
    lr = rule.learning_rate
    if rule.kind == MSTDPET:
        return lr * (sig.reward * sig.elig)
    if rule.kind == MULT_RSTDP:
        return lr * ((sig.reward * sig.elig) * sig.w0)
    if rule.kind == "named":
        if rule.name == "xor_best":
            return lr * (sig.elig * (sig.s_pre + sig.reward) + sig.s_pre)
        if rule.name == "cartpole_similar":
            return lr * ((sig.reward * sig.w0) * (sig.elig - 1.0))
        if rule.name == "cartpole_best":
            return lr * ((((sig.t * sig.reward) * sig.elig) * sig.w0) * sig.w0)
        raise RuleError(f"unknown named rule {rule.name!r}")
    if rule.kind == "evolved":
        if rule.genome is None or rule.terminals is None:
            raise RuleError("evolved rule needs a genome and a terminal map")
        inputs = [getattr(sig, TERMINAL_FIELDS[t]) for t in rule.terminals]
        return lr * evaluate(rule.genome, inputs)
    raise RuleError(f"unknown rule kind {rule.kind!r}")


# ---------------------------------------------------------------------------
# Single-neuron / single-synapse steps (reference semantics)

def step_membrane(u_prev: float, s_prev: int, i_in: float, cfg: LifConfig) -> tuple[float, int]:
    """One membrane update; the (1 - s_prev) factor realizes the post-spike reset."""
    alpha = cfg.alpha_v
    u = (1.0 - s_prev) * (alpha * u_prev) + (1.0 - alpha) * i_in
    return u, (1 if u >= cfg.threshold else 0)


def step_traces(neuron: NeuronState, spiked: int, cfg: LifConfig, polarity: str) -> NeuronState:
    """Advance the spike traces of one neuron acting in the given role.

    polarity "pre" updates x_plus (scaled by a_plus), "post" updates x_minus
    (scaled by a_minus); the generic traces e1 (fast, tau_plus) and e2 (slow,
    tau_e) advance either way. The network simulation updates all four traces
    of every neuron in a single fused pass.
    """
    e1 = neuron.e1 * cfg.decay_plus + spiked
    e2 = neuron.e2 * cfg.decay_e + spiked
    if polarity == "pre":
        return replace(neuron, s=spiked, e1=e1, e2=e2,
                       x_plus=neuron.x_plus * cfg.decay_plus + cfg.a_plus * spiked)
    if polarity == "post":
        return replace(neuron, s=spiked, e1=e1, e2=e2,
                       x_minus=neuron.x_minus * cfg.decay_minus + cfg.a_minus * spiked)
    raise ValueError(f"polarity must be 'pre' or 'post', got {polarity!r}")


def step_eligibility(syn: SynapseState, s_pre: int, s_post: int,
                     x_plus_pre: float, x_minus_post: float, cfg: LifConfig) -> SynapseState:
    """Advance one synapse's eligibility trace from the current spikes/traces."""
    xi = x_plus_pre * s_post + x_minus_post * s_pre
    return replace(syn, xi=xi, elig=syn.elig * cfg.decay_e + xi)


# ---------------------------------------------------------------------------
# Networks

@dataclass
class NetworkState:
    """Feed-forward fully connected LIF network, one dense pair per layer gap.

    Weight matrices are [n_post, n_pre]. Owned by a single simulation at a
    time; all arrays are float64.
    """

    cfg: LifConfig
    layer_sizes: tuple[int, ...]
    w_min: float
    w_max: float
    weights: list = field(default_factory=list)
    w0: list = field(default_factory=list)
    elig: list = field(default_factory=list)
    u: list = field(default_factory=list)
    s: list = field(default_factory=list)
    x_plus: list = field(default_factory=list)
    x_minus: list = field(default_factory=list)
    e1: list = field(default_factory=list)
    e2: list = field(default_factory=list)

    @property
    def n_pairs(self) -> int:
        return len(self.layer_sizes) - 1


def make_network(cfg: LifConfig, layer_sizes, weights, w_min: float, w_max: float) -> NetworkState:
    """Build a network around the given initial weight matrices."""
    sizes = tuple(int(n) for n in layer_sizes)
    if len(weights) != len(sizes) - 1:
        raise ValueError(f"{len(sizes)} layers need {len(sizes) - 1} weight matrices")
    net = NetworkState(cfg=cfg, layer_sizes=sizes, w_min=float(w_min), w_max=float(w_max))
    for p, w in enumerate(weights):
        w = np.array(w, dtype=np.float64)
        if w.shape != (sizes[p + 1], sizes[p]):
            raise ValueError(
                f"pair {p} weights must have shape {(sizes[p + 1], sizes[p])}, got {w.shape}"
            )
        net.weights.append(w)
        net.w0.append(w.copy())
        net.elig.append(np.zeros_like(w))
    for n in sizes:
        net.u.append(np.zeros(n))
        net.s.append(np.zeros(n))
        net.x_plus.append(np.zeros(n))
        net.x_minus.append(np.zeros(n))
        net.e1.append(np.zeros(n))
        net.e2.append(np.zeros(n))
    return net


def reset_dynamic_state(net: NetworkState) -> None:
    """Zero membranes, spikes, traces and eligibility; weights and w0 persist."""
    for arr in (*net.u, *net.s, *net.x_plus, *net.x_minus, *net.e1, *net.e2, *net.elig):
        arr.fill(0.0)


def capture_w0(net: NetworkState) -> None:
    """Snapshot current weights as the learning-window initial weights."""
    for p in range(net.n_pairs):
        net.w0[p][:] = net.weights[p]


def network_snapshot(net: NetworkState) -> dict:
    """JSON-ready view of the structural state (layers, weights, config)."""
    return {
        "layers": list(net.layer_sizes),
        "weights": [w.ravel().tolist() for w in net.weights],
        "config": {
            "tau_v": net.cfg.tau_v,
            "threshold": net.cfg.threshold,
            "tau_e": net.cfg.tau_e,
            "tau_plus": net.cfg.tau_plus,
            "tau_minus": net.cfg.tau_minus,
            "a_plus": net.cfg.a_plus,
            "a_minus": net.cfg.a_minus,
            "w_min": net.w_min,
            "w_max": net.w_max,
        },
    }


def network_from_snapshot(obj: dict) -> NetworkState:
    sizes = tuple(int(n) for n in obj["layers"])
    params = dict(obj["config"])
    w_min = params.pop("w_min")
    w_max = params.pop("w_max")
    cfg = LifConfig(**params)
    weights = []
    for p in range(len(sizes) - 1):
        shape = (sizes[p + 1], sizes[p])
        weights.append(np.asarray(obj["weights"][p], dtype=np.float64).reshape(shape))
    return make_network(cfg, sizes, weights, w_min, w_max)


def forward_pass(
    net: NetworkState,
    input_spikes: np.ndarray,
    rule: PlasticityRule | None = None,
    reward_fn: Callable[[int, np.ndarray], float] | None = None,
    learning: bool = False,
) -> tuple[np.ndarray, NetworkState]:
    """Simulate T timesteps; optionally apply the plasticity rule each step.

    `input_spikes` is a binary [n_in, T] matrix. `reward_fn(k, out_spikes)`
    supplies the per-timestep reward (0 when omitted). With learning enabled
    every synapse updates every timestep from its LocalSignals, and weights
    are clamped to [w_min, w_max]. Returns the output spike matrix and the
    (in-place updated) network.

    This is the reference implementation; the task drivers run a compiled
    kernel with bit-identical arithmetic.
    """
    input_spikes = np.asarray(input_spikes, dtype=np.float64)
    if input_spikes.ndim != 2 or input_spikes.shape[0] != net.layer_sizes[0]:
        raise ValueError(
            f"input spikes must be [{net.layer_sizes[0]} x T], got {input_spikes.shape}"
        )
    if learning and rule is None:
        raise ValueError("learning requires a rule")
    cfg = net.cfg
    n_steps = input_spikes.shape[1]
    sizes = net.layer_sizes
    out_spikes = np.zeros((sizes[-1], n_steps))

    for k in range(n_steps):
        s_new = [input_spikes[:, k]]
        # membranes, input to output; layer l sees layer l-1 spikes of this step
        for p in range(net.n_pairs):
            w = net.weights[p]
            i_in = np.zeros(sizes[p + 1])
            s_pre = s_new[p]
            for j in range(sizes[p]):
                i_in += w[:, j] * s_pre[j]
            alpha = cfg.alpha_v
            u = (1.0 - net.s[p + 1]) * (alpha * net.u[p + 1]) + (1.0 - alpha) * i_in
            net.u[p + 1] = u
            s_new.append(np.where(u >= cfg.threshold, 1.0, 0.0))
        for l in range(len(sizes)):
            net.s[l] = s_new[l]
        # all four traces of every neuron
        for l in range(len(sizes)):
            sp = s_new[l]
            net.x_plus[l] = net.x_plus[l] * cfg.decay_plus + cfg.a_plus * sp
            net.x_minus[l] = net.x_minus[l] * cfg.decay_minus + cfg.a_minus * sp
            net.e1[l] = net.e1[l] * cfg.decay_plus + sp
            net.e2[l] = net.e2[l] * cfg.decay_e + sp
        # eligibility traces
        for p in range(net.n_pairs):
            xi = (net.x_plus[p][None, :] * s_new[p + 1][:, None]
                  + net.x_minus[p + 1][:, None] * s_new[p][None, :])
            net.elig[p] = net.elig[p] * cfg.decay_e + xi
        reward = reward_fn(k, s_new[-1]) if reward_fn is not None else 0.0
        if learning:
            for p in range(net.n_pairs):
                sig = LocalSignals(
                    elig=net.elig[p],
                    reward=reward,
                    s_post=s_new[p + 1][:, None],
                    s_pre=s_new[p][None, :],
                    e_post_1=net.e1[p + 1][:, None],
                    e_post_2=net.e2[p + 1][:, None],
                    e_pre_1=net.e1[p][None, :],
                    e_pre_2=net.e2[p][None, :],
                    w0=net.w0[p],
                    t=float(k),
                )
                dw = apply_rule(rule, sig)
                net.weights[p] = np.minimum(
                    np.maximum(net.weights[p] + dw, net.w_min), net.w_max
                )
        out_spikes[:, k] = s_new[-1]
    return out_spikes, net
