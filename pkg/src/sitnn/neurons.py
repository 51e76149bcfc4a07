"""Discrete-time spiking neuron models.

Four model families share one step contract: charge the membrane, fire on a
threshold crossing, hard-reset, then update the recovery variable.  All
functions here are scalar and pure; the vectorized layer implementations in
:mod:`sitnn.network` are independent so the two can be checked against each
other.

Families
--------
``lif``
    Leaky integrate-and-fire.  Linear drift toward the rest/reset voltage.
``qif``
    Quadratic integrate-and-fire.  Drift ``k (u - u_r)(u - u_c)`` with roots
    at the rest and critical voltages; no recovery variable.
``izhikevich``
    The original two-variable quadratic model in mV scale
    (``0.04 u^2 + 5 u + 140 - v``), threshold 30, reset to ``c``.
``sit``
    Standardized Izhikevich tonic neuron: the quadratic model
    re-parameterized so its stable point and unit threshold live inside a
    [0, 1] operating range.  The bursting variant is the same family with
    different built-in constants.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import IO, Iterable, Sequence

import numpy as np

LIF = "lif"
QIF = "qif"
IZHIKEVICH = "izhikevich"
SIT = "sit"

FAMILIES = (LIF, QIF, IZHIKEVICH, SIT)

#: Fixed linear/constant coefficients of the original mV-scale quadratic.
IZH_LINEAR = 5.0
IZH_CONSTANT = 140.0


@dataclass(frozen=True)
class NeuronParams:
    """Per-neuron constants for one model family.

    ``a`` recovery time scale, ``b`` recovery sensitivity, ``c`` post-spike
    reset voltage, ``d`` post-spike recovery increment, ``k`` quadratic gain,
    ``u_r``/``u_c`` rest and critical voltages, ``tau`` membrane time
    constant.  ``u_threshold`` may be ``inf`` to disable firing (useful for
    sub-threshold phase-plane runs).
    """

    family: str
    tau: float = 2.0
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    k: float = 0.0
    u_r: float = 0.0
    u_c: float = 0.0
    u_threshold: float = 1.0
    u_reset: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown neuron family {self.family!r}")
        if not (self.tau > 0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.family == SIT and not (self.a > 0 and self.b > 0 and self.k > 0):
            raise ValueError("sit neurons require a > 0, b > 0, k > 0")
        for name in ("tau", "a", "b", "c", "d", "k", "u_r", "u_c", "u_reset"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"parameter {name} must be finite")

    @classmethod
    def lif(cls, tau: float = 2.0) -> "NeuronParams":
        return cls(family=LIF, tau=tau, u_threshold=1.0, u_reset=0.0)

    @classmethod
    def qif(cls, tau: float = 2.0, k: float = 1.0, u_r: float = 0.0,
            u_c: float = 1.0) -> "NeuronParams":
        return cls(family=QIF, tau=tau, k=k, u_r=u_r, u_c=u_c,
                   u_threshold=1.0, u_reset=0.0)

    @classmethod
    def sit(cls, tau: float = 2.0) -> "NeuronParams":
        """Built-in tonic constants of the standardized neuron."""
        return cls(family=SIT, tau=tau, a=0.002, b=0.02, c=0.0, d=0.2,
                   k=1.0, u_c=1.0, u_r=-0.05, u_threshold=1.0, u_reset=0.0)

    @classmethod
    def sit_bursting(cls, tau: float = 2.0) -> "NeuronParams":
        """Built-in bursting constants of the standardized neuron."""
        return cls(family=SIT, tau=tau, a=0.35, b=0.6, c=0.0, d=0.5,
                   k=1.0, u_c=1.0, u_r=-0.05, u_threshold=1.0, u_reset=0.0)

    @classmethod
    def izhikevich_tonic(cls, tau: float = 1.0) -> "NeuronParams":
        """Original mV-scale tonic constants (a=0.02, b=0.2, c=-65, d=8)."""
        return cls(family=IZHIKEVICH, tau=tau, a=0.02, b=0.2, c=-65.0, d=8.0,
                   k=0.04, u_threshold=30.0, u_reset=-65.0)

    def with_tau(self, tau: float) -> "NeuronParams":
        return replace(self, tau=tau)

    def without_threshold(self) -> "NeuronParams":
        return replace(self, u_threshold=math.inf)


@dataclass
class NeuronState:
    """Membrane potential and recovery variable."""

    u: float
    v: float = 0.0


@dataclass(frozen=True)
class StepTrace:
    """One step of neuron dynamics.

    ``y`` pre-reset membrane, ``h`` pre-increment recovery, ``s`` spike
    indicator, ``u_post``/``v_post`` the state carried into the next step.
    Families without a recovery variable report ``h = v_post = 0``.
    """

    y: float
    h: float
    s: int
    u_post: float
    v_post: float

    @property
    def state(self) -> NeuronState:
        return NeuronState(self.u_post, self.v_post)


def _check_finite(value: float, what: str) -> None:
    if not math.isfinite(value):
        raise ValueError(f"non-finite {what}: {value!r} "
                         "(numerical blow-up upstream)")


def sit_step(params: NeuronParams, state: NeuronState, current: float) -> StepTrace:
    """Advance a standardized Izhikevich neuron by one step.

    Charge, fire on the pre-reset membrane, hard-reset to ``c``, then update
    the recovery variable from the post-reset membrane and add ``d`` when a
    spike occurred.
    """
    if params.family != SIT:
        raise ValueError(f"sit_step requires a sit neuron, got {params.family}")
    _check_finite(state.u, "membrane potential")
    _check_finite(state.v, "recovery variable")
    _check_finite(current, "input current")

    tau = params.tau
    y = (state.u
         + (params.k / tau) * (state.u - params.u_r) * (state.u - params.u_c)
         - state.v / tau
         + current / tau)
    s = 1 if y >= params.u_threshold else 0
    u_post = params.c if s else y
    h = state.v + (params.a / tau) * (params.b * (u_post - params.u_r) - state.v)
    v_post = h + s * params.d
    return StepTrace(y=y, h=h, s=s, u_post=u_post, v_post=v_post)


def lif_step(params: NeuronParams, u_prev: float, current: float) -> StepTrace:
    """Advance a leaky integrate-and-fire neuron by one step."""
    if params.family != LIF:
        raise ValueError(f"lif_step requires a lif neuron, got {params.family}")
    _check_finite(u_prev, "membrane potential")
    _check_finite(current, "input current")

    y = u_prev + (-(u_prev - params.u_reset) + current) / params.tau
    s = 1 if y >= params.u_threshold else 0
    u_post = params.u_reset if s else y
    return StepTrace(y=y, h=0.0, s=s, u_post=u_post, v_post=0.0)


def qif_step(params: NeuronParams, u_prev: float, current: float) -> StepTrace:
    """Advance a quadratic integrate-and-fire neuron by one step."""
    if params.family != QIF:
        raise ValueError(f"qif_step requires a qif neuron, got {params.family}")
    _check_finite(u_prev, "membrane potential")
    _check_finite(current, "input current")

    tau = params.tau
    y = u_prev + (params.k * (u_prev - params.u_r) * (u_prev - params.u_c)
                  + current) / tau
    s = 1 if y >= params.u_threshold else 0
    u_post = params.u_reset if s else y
    return StepTrace(y=y, h=0.0, s=s, u_post=u_post, v_post=0.0)


def izhikevich_vanilla_step(params: NeuronParams, state: NeuronState,
                            current: float,
                            corrected_quadratic: bool = True) -> StepTrace:
    """Advance an original-scale Izhikevich neuron by one step.

    The threshold test applies to the incoming membrane: a step that starts
    at or above threshold is a pure reset (``u <- c``, ``v <- v + d``) and no
    integration happens.  Otherwise both variables take one Euler step.

    ``corrected_quadratic`` selects the standard membrane drift
    ``k u^2 + 5 u + 140 - v`` (default).  The flag exists because the drift
    is sometimes misprinted with membrane and recovery swapped in the linear
    term (``+5 v ... - u``); passing ``False`` reproduces that variant, under
    which the tonic rest state (-70, -14) is not stationary.
    """
    if params.family != IZHIKEVICH:
        raise ValueError("izhikevich_vanilla_step requires an izhikevich "
                         f"neuron, got {params.family}")
    _check_finite(state.u, "membrane potential")
    _check_finite(state.v, "recovery variable")
    _check_finite(current, "input current")

    if state.u >= params.u_threshold:
        return StepTrace(y=state.u, h=state.v, s=1,
                         u_post=params.c, v_post=state.v + params.d)

    tau = params.tau
    if corrected_quadratic:
        drift = (params.k * state.u * state.u + IZH_LINEAR * state.u
                 + IZH_CONSTANT - state.v + current)
    else:
        drift = (params.k * state.u * state.u + IZH_LINEAR * state.v
                 + IZH_CONSTANT - state.u + current)
    y = state.u + drift / tau
    h = state.v + (params.a / tau) * (params.b * state.u - state.v)
    return StepTrace(y=y, h=h, s=0, u_post=y, v_post=h)


def step(params: NeuronParams, state: NeuronState, current: float) -> StepTrace:
    """Dispatch one step for any family from a (u, v) state."""
    if params.family == SIT:
        return sit_step(params, state, current)
    if params.family == LIF:
        return lif_step(params, state.u, current)
    if params.family == QIF:
        return qif_step(params, state.u, current)
    return izhikevich_vanilla_step(params, state, current)


def surrogate(x: float) -> tuple[float, float]:
    """Smooth spike stand-in ``(1/pi) arctan(pi x) + 1/2`` and its derivative.

    The derivative ``1 / (1 + pi^2 x^2)`` lies in (0, 1] and peaks at 1 for
    ``x = 0``; it is the gradient used in place of the hard threshold during
    backpropagation.
    """
    _check_finite(x, "surrogate input")
    value = math.atan(math.pi * x) / math.pi + 0.5
    derivative = 1.0 / (1.0 + (math.pi * x) ** 2)
    return value, derivative


@dataclass
class SpikeTrain:
    """Result of a constant-input simulation.

    Arrays are indexed by step (0-based).  ``isis`` holds the gaps, in
    steps, between consecutive spikes.
    """

    y: np.ndarray
    u_post: np.ndarray
    v_post: np.ndarray
    s: np.ndarray

    @property
    def steps(self) -> int:
        return int(self.s.size)

    @property
    def spike_steps(self) -> np.ndarray:
        return np.flatnonzero(self.s)

    @property
    def isis(self) -> np.ndarray:
        return np.diff(self.spike_steps)

    @property
    def spike_count(self) -> int:
        return int(self.s.sum())


def simulate_constant_input(params: NeuronParams, current: float, steps: int,
                            initial: NeuronState | None = None) -> SpikeTrain:
    """Step a neuron ``steps`` times under a constant input.

    Starts from ``(u_reset, 0)`` unless ``initial`` is given.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    state = NeuronState(params.u_reset, 0.0) if initial is None else initial

    y = np.empty(steps)
    u_post = np.empty(steps)
    v_post = np.empty(steps)
    s = np.zeros(steps, dtype=np.int64)
    for t in range(steps):
        trace = step(params, state, current)
        y[t] = trace.y
        u_post[t] = trace.u_post
        v_post[t] = trace.v_post
        s[t] = trace.s
        state = trace.state
    return SpikeTrain(y=y, u_post=u_post, v_post=v_post, s=s)


def write_spike_train_csv(train: SpikeTrain, out: IO[str] | str,
                          header_lines: Iterable[str] = ()) -> None:
    """Write a spike train as CSV with columns step,y,u_post,v_post,s."""
    if isinstance(out, str):
        with open(out, "w", newline="") as fh:
            write_spike_train_csv(train, fh, header_lines)
        return
    for line in header_lines:
        out.write(f"# {line}\n")
    writer = csv.writer(out)
    writer.writerow(["step", "y", "u_post", "v_post", "s"])
    for t in range(train.steps):
        writer.writerow([t + 1, repr(float(train.y[t])),
                         repr(float(train.u_post[t])),
                         repr(float(train.v_post[t])), int(train.s[t])])


def read_spike_train_csv(rows: Sequence[str]) -> SpikeTrain:
    """Parse rows previously produced by :func:`write_spike_train_csv`."""
    data = [r for r in rows if r.strip() and not r.startswith("#")]
    reader = csv.reader(data)
    header = next(reader)
    if header != ["step", "y", "u_post", "v_post", "s"]:
        raise ValueError(f"unexpected spike train header: {header}")
    cols = list(zip(*[row for row in reader]))
    return SpikeTrain(y=np.array([float(v) for v in cols[1]]),
                      u_post=np.array([float(v) for v in cols[2]]),
                      v_post=np.array([float(v) for v in cols[3]]),
                      s=np.array([int(v) for v in cols[4]], dtype=np.int64))
