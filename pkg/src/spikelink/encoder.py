"""Probabilistic spiking encoder.

Each of the k read-out neurons integrates filtered input spikes through its
feedforward weights, its own past spikes through a self-feedback weight, and
a bias.  Spiking is Bernoulli in the sigmoid of that membrane potential.
The same filtered traces that build the potential are the parameter
gradients of the potential, so they are computed once per step and shared
between the forward pass and the score accumulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .channel import log_prob_clean, noisy_spike_prob
from .numerics import Kernel, SeededRng, exponential_kernel, sigmoid

__all__ = [
    "EncoderParams",
    "EncoderState",
    "EncoderGrads",
    "ScoreAccumulator",
    "UnitPotentialGrads",
    "init_encoder_params",
    "membrane_potentials",
    "sample_spikes",
    "log_prob_clean",
    "grad_u_log_prob_noisy",
    "grad_params_u",
    "accumulate_score",
]


@dataclass
class EncoderParams:
    """Learnable weights plus the fixed causal filters.

    ff_weights has one row per read-out neuron and one column per input
    line; fb_weights and bias hold one scalar per neuron.  The kernels are
    not trained.
    """

    ff_weights: np.ndarray
    fb_weights: np.ndarray
    bias: np.ndarray
    kernel_ff: Kernel
    kernel_fb: Kernel

    def __post_init__(self):
        self.ff_weights = np.asarray(self.ff_weights, dtype=np.float64)
        self.fb_weights = np.asarray(self.fb_weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.ff_weights.ndim != 2:
            raise ValueError("ff_weights must be 2-d (neurons x inputs)")
        k = self.ff_weights.shape[0]
        if self.fb_weights.shape != (k,) or self.bias.shape != (k,):
            raise ValueError("fb_weights and bias must have one entry per neuron")

    @property
    def n_out(self) -> int:
        return self.ff_weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.ff_weights.shape[1]


@dataclass
class EncoderGrads:
    """Gradient container mirroring the learnable fields of EncoderParams."""

    ff_weights: np.ndarray
    fb_weights: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, n_out: int, n_in: int) -> "EncoderGrads":
        return cls(
            ff_weights=np.zeros((n_out, n_in)),
            fb_weights=np.zeros(n_out),
            bias=np.zeros(n_out),
        )


def init_encoder_params(
    n_in: int,
    n_out: int,
    rng: SeededRng,
    kernel_ff: Kernel | None = None,
    kernel_fb: Kernel | None = None,
    init_rate: float = 0.1,
) -> EncoderParams:
    """Fresh encoder weights.

    Feedforward weights are uniform in +-1/sqrt(n_in), the self-feedback
    weight starts at -1 (a soft refractory pull), and the bias is set so a
    silent network spikes at init_rate.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("need at least one input and one neuron")
    if not 0.0 < init_rate < 1.0:
        raise ValueError("init_rate must be in (0, 1)")
    bound = 1.0 / math.sqrt(n_in)
    return EncoderParams(
        ff_weights=rng.uniform_range(-bound, bound, (n_out, n_in)),
        fb_weights=np.full(n_out, -1.0),
        bias=np.full(n_out, math.log(init_rate / (1.0 - init_rate))),
        kernel_ff=kernel_ff or exponential_kernel(),
        kernel_fb=kernel_fb or exponential_kernel(),
    )


class EncoderState:
    """Ring buffers of recent input and output spikes.

    The step protocol is push_input(x_t), read potentials / traces, then
    push_output(bits_t).  Input history therefore reaches the current step
    while output history stops one step earlier, which is exactly the
    asymmetry the membrane potential wants.  Ring depth covers both kernel
    windows, so nothing older than the filters can see is kept.
    """

    def __init__(self, n_in: int, n_out: int, depth: int):
        if depth < 1:
            raise ValueError("ring depth must be positive")
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.depth = int(depth)
        self.reset()

    @classmethod
    def for_params(cls, params: EncoderParams) -> "EncoderState":
        depth = max(params.kernel_ff.window, params.kernel_fb.window)
        return cls(params.n_in, params.n_out, depth)

    def reset(self) -> None:
        self._inputs = np.zeros((self.depth, self.n_in))
        self._outputs = np.zeros((self.depth, self.n_out))
        self.t = 0
        self._input_pushed = False

    def push_input(self, x_t) -> None:
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.shape != (self.n_in,):
            raise ValueError(f"expected input of shape ({self.n_in},)")
        if self._input_pushed:
            raise RuntimeError("push_output must run before the next push_input")
        self._inputs[self.t % self.depth] = x_t
        self._input_pushed = True

    def push_output(self, bits) -> None:
        bits = np.asarray(bits, dtype=np.float64)
        if bits.shape != (self.n_out,):
            raise ValueError(f"expected output of shape ({self.n_out},)")
        if not self._input_pushed:
            raise RuntimeError("push_input must run before push_output")
        self._outputs[self.t % self.depth] = bits
        self.t += 1
        self._input_pushed = False

    def _window(self, buf: np.ndarray, newest: int, length: int) -> np.ndarray:
        # rows ordered newest first; steps before time 0 read as zero
        out = np.zeros((length, buf.shape[1]))
        for d in range(length):
            idx = newest - d
            if idx < 0:
                break
            if newest - idx >= self.depth:
                break
            out[d] = buf[idx % self.depth]
        return out

    def input_trace(self, kernel: Kernel) -> np.ndarray:
        """Filtered input history including the current step, per input line."""
        if not self._input_pushed:
            raise RuntimeError("no input pushed for the current step")
        if kernel.window > self.depth:
            raise ValueError("kernel window exceeds ring depth")
        window = self._window(self._inputs, self.t, kernel.window)
        return kernel.coefficients @ window

    def output_trace(self, kernel: Kernel) -> np.ndarray:
        """Filtered own-spike history, strictly before the current step.

        coefficients[0] would pair with the not-yet-sampled current bit, so
        it never contributes; the window starts at the previous step against
        coefficients[1].
        """
        if kernel.window < 2:
            return np.zeros(self.n_out)
        if kernel.window - 1 > self.depth:
            raise ValueError("kernel window exceeds ring depth")
        window = self._window(self._outputs, self.t - 1, kernel.window - 1)
        return kernel.coefficients[1:] @ window


def membrane_potentials(params: EncoderParams, state: EncoderState) -> np.ndarray:
    """Per-neuron membrane potential for the current step."""
    ff = state.input_trace(params.kernel_ff)
    fb = state.output_trace(params.kernel_fb)
    return params.ff_weights @ ff + params.fb_weights * fb + params.bias


def sample_spikes(u, rng: SeededRng) -> np.ndarray:
    """Bernoulli(sigmoid(u)) draw, one bit per neuron."""
    return rng.bernoulli(sigmoid(np.asarray(u, dtype=np.float64)))


def grad_u_log_prob_noisy(zhat, u, epsilon: float):
    """d/du of the channel-marginalized log-likelihood, element-wise.

    For eps in (0, 0.5) the derivative is
    (1-2*eps) * s * (1-s) * (zhat/q - (1-zhat)/(1-q)) with s = sigmoid(u)
    and q the marginalized spike probability; q is pinned inside
    [eps, 1-eps] so no denominator can vanish.  At eps = 0 the expression
    collapses to zhat - s, which is used directly to dodge the 0/0 that
    saturated potentials would produce.  eps = 0.5 makes the received bit
    independent of u, so the mapping is singular and rejected.
    """
    eps = float(epsilon)
    if not 0.0 <= eps < 0.5:
        raise ValueError(f"gradient undefined outside 0 <= epsilon < 0.5: {eps}")
    zhat = np.asarray(zhat, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    s = sigmoid(u)
    if eps == 0.0:
        out = zhat - s
    else:
        q = noisy_spike_prob(s, eps)
        out = (1.0 - 2.0 * eps) * s * (1.0 - s) * (zhat / q - (1.0 - zhat) / (1.0 - q))
    if out.ndim == 0:
        return float(out)
    return out


class UnitPotentialGrads(NamedTuple):
    """Gradients of one neuron's potential with respect to its own weights."""

    ff_row: np.ndarray
    fb: float
    bias: float


def grad_params_u(
    params: EncoderParams, state: EncoderState, neuron: int
) -> UnitPotentialGrads:
    """Parameter gradients of u for one neuron at the current step.

    These are the filtered traces themselves: the feedforward row gradient
    is the filtered input (shared by every neuron), the feedback gradient is
    that neuron's filtered own-spike history, and the bias gradient is 1.
    """
    if not 0 <= neuron < params.n_out:
        raise IndexError(f"neuron index {neuron} out of range")
    ff = state.input_trace(params.kernel_ff)
    fb = state.output_trace(params.kernel_fb)
    return UnitPotentialGrads(ff_row=ff, fb=float(fb[neuron]), bias=1.0)


@dataclass
class ScoreAccumulator:
    """Running sum of per-step score-function terms over one sequence.

    After a full sequence the fields hold the gradient of the sequence
    log-likelihood with respect to each learnable parameter.  Reset between
    samples.
    """

    ff_weights: np.ndarray
    fb_weights: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, n_out: int, n_in: int) -> "ScoreAccumulator":
        return cls(
            ff_weights=np.zeros((n_out, n_in)),
            fb_weights=np.zeros(n_out),
            bias=np.zeros(n_out),
        )

    def reset(self) -> None:
        self.ff_weights[:] = 0.0
        self.fb_weights[:] = 0.0
        self.bias[:] = 0.0

    def add_step(self, score_u: np.ndarray, ff_trace: np.ndarray, fb_trace: np.ndarray) -> None:
        self.ff_weights += np.outer(score_u, ff_trace)
        self.fb_weights += score_u * fb_trace
        self.bias += score_u


def accumulate_score(
    acc: ScoreAccumulator,
    zhat_t,
    u_t,
    params: EncoderParams,
    state: EncoderState,
    epsilon: float,
) -> ScoreAccumulator:
    """Fold one step's score into the accumulator.

    Call after computing u_t and sampling zhat_t but before push_output, so
    the state's traces still describe the step that produced u_t.
    """
    score_u = grad_u_log_prob_noisy(zhat_t, u_t, epsilon)
    ff = state.input_trace(params.kernel_ff)
    fb = state.output_trace(params.kernel_fb)
    acc.add_step(np.asarray(score_u, dtype=np.float64), ff, fb)
    return acc
