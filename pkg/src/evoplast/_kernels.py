"""Compiled inner loops for network simulation and rule application.

The plasticity rule reaches the kernels as a jitted scalar function over the
ten signal slots (E, R, S_i, S_j, e_i1, e_i2, e_j1, e_j2, w0, t), generated
from a rule's active expression graph so that kernel arithmetic matches the
pure-numpy reference path bit for bit. Kernels are compiled once per process
(function-typed arguments defeat numba's disk cache) and the network state
lives in flat float64 arrays.

Importing this module triggers the eager kernel compilation; task modules
import it lazily.
"""

from __future__ import annotations

import numpy as np
from numba import boolean, float64, int64, njit
from numba.core import types

from .expr_graph import DIV_EPS, VALUE_CLAMP, Genome, Op, compile_active
from .snn import (
    MSTDPET,
    MULT_RSTDP,
    SIGNAL_ORDER,
    PlasticityRule,
    RuleError,
)

RULE_SIG = float64(
    float64, float64, float64, float64, float64,
    float64, float64, float64, float64, float64,
)
RULE_FTYPE = types.FunctionType(RULE_SIG)


@njit(float64(float64), cache=True, inline="always")
def _clampf(v):
    return min(max(v, -VALUE_CLAMP), VALUE_CLAMP)


# ---------------------------------------------------------------------------
# Rule compilation

_BUILTIN_SOURCES = {
    MSTDPET: "R * E",
    MULT_RSTDP: "(R * E) * w0",
    "xor_best": "E * (S_j + R) + S_j",
    "cartpole_similar": "(R * w0) * (E - 1.0)",
    "cartpole_best": "(((t * R) * E) * w0) * w0",
    "null": "0.0",
}

_rule_fn_cache: dict[str, object] = {}


def _genome_rule_body(genome: Genome, terminals: tuple[str, ...]) -> str:
    """Emit the active subgraph as straight-line statements over signal names."""
    ops, in_a, in_b, out_ref = compile_active(genome)

    def ref_name(ref: int) -> str:
        if ref < genome.n_inputs:
            return terminals[ref]
        return f"v{ref - genome.n_inputs}"

    lines = []
    for n in range(len(ops)):
        op = Op(ops[n])
        if op == Op.ONE:
            lines.append(f"v{n} = 1.0")
            continue
        a, b = ref_name(in_a[n]), ref_name(in_b[n])
        if op == Op.ADD:
            expr = f"_clampf({a} + {b})"
        elif op == Op.SUB:
            expr = f"_clampf({a} - {b})"
        elif op == Op.MUL:
            expr = f"_clampf({a} * {b})"
        else:
            expr = (
                f"_clampf({a} / {b}) "
                f"if ({b} >= {DIV_EPS!r} or {b} <= -{DIV_EPS!r}) else 1.0"
            )
        lines.append(f"v{n} = {expr}")
    lines.append(f"return {ref_name(out_ref)}")
    return "\n    ".join(lines)


def rule_function(rule: PlasticityRule):
    """Jitted delta-w core of `rule` (without the learning-rate factor)."""
    if rule.kind in (MSTDPET, MULT_RSTDP, "null"):
        body = f"return {_BUILTIN_SOURCES[rule.kind]}"
    elif rule.kind == "named":
        if rule.name not in _BUILTIN_SOURCES:
            raise RuleError(f"unknown named rule {rule.name!r}")
        body = f"return {_BUILTIN_SOURCES[rule.name]}"
    elif rule.kind == "evolved":
        body = _genome_rule_body(rule.genome, rule.terminals)
    else:
        raise RuleError(f"unknown rule kind {rule.kind!r}")
    src = f"def _rule({', '.join(SIGNAL_ORDER)}):\n    {body}\n"
    fn = _rule_fn_cache.get(src)
    if fn is None:
        ns = {"_clampf": _clampf}
        exec(src, ns)  # noqa: S102 - source is generated from validated genes
        fn = njit(RULE_SIG)(ns["_rule"])
        _rule_fn_cache[src] = fn
    return fn


ZERO_RULE_FN = rule_function(PlasticityRule(0.0, "null"))


# ---------------------------------------------------------------------------
# Flat network layout

class FlatNet:
    """NetworkState flattened for the kernels.

    Neuron arrays concatenate layers (offsets in `noff`); synapse arrays
    concatenate row-major [n_post, n_pre] blocks per layer pair (offsets in
    `woff`).
    """

    def __init__(self, layer_sizes, weights, cfg, w_min, w_max):
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.cfg = cfg
        self.w_min = float(w_min)
        self.w_max = float(w_max)
        self.sizes = np.array(self.layer_sizes, dtype=np.int64)
        self.noff = np.concatenate(([0], np.cumsum(self.sizes))).astype(np.int64)
        pair_sizes = [
            self.layer_sizes[p + 1] * self.layer_sizes[p]
            for p in range(len(self.layer_sizes) - 1)
        ]
        self.woff = np.concatenate(([0], np.cumsum(pair_sizes))).astype(np.int64)
        self.total_n = int(self.noff[-1])
        self.n_syn = int(self.woff[-1])
        self.w = np.concatenate([np.asarray(w, dtype=np.float64).ravel() for w in weights])
        if self.w.shape[0] != self.n_syn:
            raise ValueError("weight matrices do not match the layer sizes")
        self.w0 = self.w.copy()
        self.elig = np.zeros(self.n_syn)
        self.u = np.zeros(self.total_n)
        self.s = np.zeros(self.total_n)
        self.x_plus = np.zeros(self.total_n)
        self.x_minus = np.zeros(self.total_n)
        self.e1 = np.zeros(self.total_n)
        self.e2 = np.zeros(self.total_n)

    def reset_dynamic(self):
        for arr in (self.u, self.s, self.x_plus, self.x_minus, self.e1, self.e2, self.elig):
            arr.fill(0.0)

    def capture_w0(self):
        self.w0[:] = self.w

    def weights_of(self, pair: int) -> np.ndarray:
        """Copy of pair `pair` weights as an [n_post, n_pre] matrix."""
        shape = (self.layer_sizes[pair + 1], self.layer_sizes[pair])
        return self.w[self.woff[pair]:self.woff[pair + 1]].reshape(shape).copy()

    def lif_params(self):
        cfg = self.cfg
        return (
            cfg.alpha_v, cfg.threshold, cfg.decay_plus, cfg.decay_minus,
            cfg.decay_e, cfg.a_plus, cfg.a_minus,
        )


# ---------------------------------------------------------------------------
# Simulation kernels

@njit
def _step(sizes, noff, woff, wflat, w0flat, eflat, u, s, xp, xm, e1, e2,
          inp, row_map, k, learning, rule, lr, reward_mode, reward_param,
          w_min, w_max, alpha_v, threshold, dplus, dminus, de, aplus, aminus,
          t_k):
    """One network timestep; returns the timestep reward."""
    n_layers = sizes.shape[0]
    # input layer spikes for this step
    for i in range(sizes[0]):
        s[i] = inp[row_map[i], k]
    # membranes, input to output; spikes of layer p feed layer p+1 within the step
    for p in range(n_layers - 1):
        pre_off = noff[p]
        post_off = noff[p + 1]
        n_pre = sizes[p]
        n_post = sizes[p + 1]
        base = woff[p]
        for i in range(n_post):
            acc = 0.0
            row = base + i * n_pre
            for j in range(n_pre):
                acc += wflat[row + j] * s[pre_off + j]
            idx = post_off + i
            u_new = (1.0 - s[idx]) * (alpha_v * u[idx]) + (1.0 - alpha_v) * acc
            u[idx] = u_new
            s[idx] = 1.0 if u_new >= threshold else 0.0
    # activity and neuron traces
    for n in range(noff[n_layers]):
        sp = s[n]
        xp[n] = xp[n] * dplus + aplus * sp
        xm[n] = xm[n] * dminus + aminus * sp
        e1[n] = e1[n] * dplus + sp
        e2[n] = e2[n] * de + sp
    # per-timestep reward from the fresh output spikes
    r = 0.0
    if reward_mode == 1:
        out_off = noff[n_layers - 1]
        total = 0.0
        for i in range(sizes[n_layers - 1]):
            total += s[out_off + i]
        if total > 0.0:
            r = reward_param
    elif reward_mode == 2:
        r = reward_param
    # eligibility traces, then the rule
    for p in range(n_layers - 1):
        pre_off = noff[p]
        post_off = noff[p + 1]
        n_pre = sizes[p]
        n_post = sizes[p + 1]
        base = woff[p]
        for i in range(n_post):
            idx = post_off + i
            spost = s[idx]
            xmi = xm[idx]
            ei1 = e1[idx]
            ei2 = e2[idx]
            row = base + i * n_pre
            for j in range(n_pre):
                sidx = row + j
                xi = xp[pre_off + j] * spost + xmi * s[pre_off + j]
                e = eflat[sidx] * de + xi
                eflat[sidx] = e
                if learning:
                    dw = lr * rule(e, r, spost, s[pre_off + j], ei1, ei2,
                                   e1[pre_off + j], e2[pre_off + j],
                                   w0flat[sidx], t_k)
                    wv = wflat[sidx] + dw
                    wflat[sidx] = min(max(wv, w_min), w_max)
    return r


_SIM_SIG = types.void(
    int64[::1], int64[::1], int64[::1],
    float64[::1], float64[::1], float64[::1],
    float64[::1], float64[::1], float64[::1], float64[::1], float64[::1], float64[::1],
    float64[:, ::1], int64[::1],
    boolean, RULE_FTYPE, float64,
    int64, float64,
    float64, float64,
    float64, float64, float64, float64, float64, float64, float64,
    float64[::1],
    float64[:, ::1],
    boolean, float64[:, ::1], float64[:, ::1], float64[:, ::1], float64[:, ::1],
)


@njit(_SIM_SIG)
def simulate_presentation(sizes, noff, woff, wflat, w0flat, eflat,
                          u, s, xp, xm, e1, e2,
                          inp, row_map,
                          learning, rule, lr,
                          reward_mode, reward_param,
                          w_min, w_max,
                          alpha_v, threshold, dplus, dminus, de, aplus, aminus,
                          t_vals, out_spikes,
                          record, rec_elig, rec_s, rec_e1, rec_e2):
    """Run T timesteps over one input matrix, in place.

    `inp[row_map[i], k]` is input neuron i's spike at step k. Output spikes
    land in out_spikes [n_out, T]; with `record`, the post-update eligibility
    and the spike / trace vectors of every step are stored for replays.
    """
    n_layers = sizes.shape[0]
    n_steps = t_vals.shape[0]
    out_off = noff[n_layers - 1]
    n_out = sizes[n_layers - 1]
    for k in range(n_steps):
        _step(sizes, noff, woff, wflat, w0flat, eflat, u, s, xp, xm, e1, e2,
              inp, row_map, k, learning, rule, lr, reward_mode, reward_param,
              w_min, w_max, alpha_v, threshold, dplus, dminus, de, aplus, aminus,
              t_vals[k])
        for i in range(n_out):
            out_spikes[i, k] = s[out_off + i]
        if record:
            for y in range(eflat.shape[0]):
                rec_elig[k, y] = eflat[y]
            for n in range(noff[n_layers]):
                rec_s[k, n] = s[n]
                rec_e1[k, n] = e1[n]
                rec_e2[k, n] = e2[n]


_REPLAY_SIG = types.void(
    float64[::1], float64[::1],
    int64, int64, int64, int64, int64,
    float64[:, ::1], float64[:, ::1], float64[:, ::1], float64[:, ::1],
    float64[::1],
    RULE_FTYPE, float64, float64,
    float64, float64,
    int64,
)


@njit(_REPLAY_SIG)
def replay_pair_updates(wflat, w0flat, base, pre_off, post_off, n_pre, n_post,
                        rec_elig, rec_s, rec_e1, rec_e2,
                        rewards_per_post,
                        rule, lr, t_val,
                        w_min, w_max,
                        n_steps):
    """Apply the rule over recorded per-step signals of one layer pair.

    Used for end-of-simulation learning: rewards only become known after the
    action, so the stored states of every timestep are replayed with the
    per-postsynaptic-neuron reward.
    """
    for k in range(n_steps):
        for i in range(n_post):
            r = rewards_per_post[i]
            spost = rec_s[k, post_off + i]
            ei1 = rec_e1[k, post_off + i]
            ei2 = rec_e2[k, post_off + i]
            row = base + i * n_pre
            for j in range(n_pre):
                sidx = row + j
                dw = lr * rule(rec_elig[k, sidx], r, spost, rec_s[k, pre_off + j],
                               ei1, ei2, rec_e1[k, pre_off + j], rec_e2[k, pre_off + j],
                               w0flat[sidx], t_val)
                wv = wflat[sidx] + dw
                wflat[sidx] = min(max(wv, w_min), w_max)


@njit
def _reset_state(u, s, xp, xm, e1, e2, eflat):
    for n in range(u.shape[0]):
        u[n] = 0.0
        s[n] = 0.0
        xp[n] = 0.0
        xm[n] = 0.0
        e1[n] = 0.0
        e2[n] = 0.0
    for y in range(eflat.shape[0]):
        eflat[y] = 0.0


_XOR_SIG = types.void(
    int64[::1], int64[::1], int64[::1],
    float64[::1], float64[::1], float64[::1],
    float64[::1], float64[::1], float64[::1], float64[::1], float64[::1], float64[::1],
    float64[:, :, ::1],
    RULE_FTYPE, float64,
    float64, float64,
    float64, float64,
    float64, float64, float64, float64, float64, float64, float64,
    float64[::1],
    float64[::1], float64[::1], float64[::1], float64[::1],
)


@njit(_XOR_SIG)
def xor_trial_loop(sizes, noff, woff, wflat, w0flat, eflat,
                   u, s, xp, xm, e1, e2,
                   patterns,
                   rule, lr,
                   reward_pos, reward_neg,
                   w_min, w_max,
                   alpha_v, threshold, dplus, dminus, de, aplus, aminus,
                   t_vals,
                   train_acc, test_acc, wdiff, wvar):
    """Full XOR training run: per epoch, learn on the four samples with fresh
    training patterns, then measure test accuracy on fresh test patterns with
    learning off.

    `patterns[e]` holds rows (train0, train1, test0, test1). Classification
    thresholds on the mean training output spike count of the epoch. Per-epoch
    metrics: train_acc / test_acc, wdiff (mean absolute difference between the
    two input neurons' weights) and wvar (mean absolute variation of that
    difference from its initial value; w0flat holds the trial-start weights).
    """
    n_epochs = patterns.shape[0]
    n_steps = t_vals.shape[0]
    n_layers = sizes.shape[0]
    out_off = noff[n_layers - 1]
    bits_a = (0, 0, 1, 1)
    bits_b = (0, 1, 0, 1)
    row_map = np.zeros(2, dtype=np.int64)
    counts = np.zeros(4)
    for e in range(n_epochs):
        inp = patterns[e]
        # learning phase
        for m in range(4):
            a = bits_a[m]
            b = bits_b[m]
            label = a ^ b
            row_map[0] = a
            row_map[1] = b
            rparam = reward_pos if label == 1 else reward_neg
            _reset_state(u, s, xp, xm, e1, e2, eflat)
            c = 0.0
            for k in range(n_steps):
                _step(sizes, noff, woff, wflat, w0flat, eflat, u, s, xp, xm, e1, e2,
                      inp, row_map, k, True, rule, lr, 1, rparam,
                      w_min, w_max, alpha_v, threshold, dplus, dminus, de, aplus, aminus,
                      t_vals[k])
                c += s[out_off]
            counts[m] = c
        mean_count = (counts[0] + counts[1] + counts[2] + counts[3]) / 4.0
        good = 0.0
        for m in range(4):
            label = bits_a[m] ^ bits_b[m]
            pred = 1 if counts[m] > mean_count else 0
            if pred == label:
                good += 1.0
        train_acc[e] = good / 4.0
        # test phase: fresh patterns, learning off, same epoch-mean threshold
        good = 0.0
        for m in range(4):
            a = bits_a[m]
            b = bits_b[m]
            label = a ^ b
            row_map[0] = 2 + a
            row_map[1] = 2 + b
            _reset_state(u, s, xp, xm, e1, e2, eflat)
            c = 0.0
            for k in range(n_steps):
                _step(sizes, noff, woff, wflat, w0flat, eflat, u, s, xp, xm, e1, e2,
                      inp, row_map, k, False, rule, lr, 0, 0.0,
                      w_min, w_max, alpha_v, threshold, dplus, dminus, de, aplus, aminus,
                      t_vals[k])
                c += s[out_off]
            pred = 1 if c > mean_count else 0
            if pred == label:
                good += 1.0
        test_acc[e] = good / 4.0
        # input-weight separation, hidden layer
        n_hidden = sizes[1]
        acc = 0.0
        var = 0.0
        for h in range(n_hidden):
            acc += abs(wflat[2 * h] - wflat[2 * h + 1])
            var += abs((wflat[2 * h] - wflat[2 * h + 1])
                       - (w0flat[2 * h] - w0flat[2 * h + 1]))
        wdiff[e] = acc / n_hidden
        wvar[e] = var / n_hidden


# ---------------------------------------------------------------------------
# Cart-pole physics core (shared by the environment module)

@njit(types.UniTuple(float64, 4)(
    float64, float64, float64, float64,
    float64, float64, float64, float64, float64, float64,
), cache=True)
def cartpole_step_core(x, x_dot, theta, theta_dot, force,
                       gravity, masscart, masspole, half_length, dt):
    """Semi-implicit Euler step of the classic cart-pole dynamics."""
    total_mass = masspole + masscart
    polemass_length = masspole * half_length
    sintheta = np.sin(theta)
    costheta = np.cos(theta)
    temp = (force + polemass_length * theta_dot * theta_dot * sintheta) / total_mass
    thetaacc = (gravity * sintheta - costheta * temp) / (
        half_length * (4.0 / 3.0 - masspole * costheta * costheta / total_mass)
    )
    xacc = temp - polemass_length * thetaacc * costheta / total_mass
    x_dot_new = x_dot + dt * xacc
    x_new = x + dt * x_dot_new
    theta_dot_new = theta_dot + dt * thetaacc
    theta_new = theta + dt * theta_dot_new
    return x_new, x_dot_new, theta_new, theta_dot_new
