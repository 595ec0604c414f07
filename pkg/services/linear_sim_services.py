# services/linear_sim_services.py
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from schemas.schemas import LoopDoc, QFilterSpec, SignalSpec, SimulateConfig
from services.algebra_services import (
    RationalTransferFunction,
    StateSpace,
    closed_loop_statespace,
    eq_ys_response,
    nominal_loop_response,
)
from services.analysis_services import to_transfer_function
from services.errors import InvalidInputError
from services.qfilter_services import q_transfer

logger = logging.getLogger(__name__)

STIFFNESS_LIMIT = 0.5
STEPS_PER_TAU = 20


def signal_value(spec: SignalSpec, t):
    t = np.asarray(t, dtype=float)
    if spec.kind == "zero":
        return np.zeros_like(t)
    if spec.kind == "step":
        return spec.amplitude * (t >= spec.start_time).astype(float)
    if spec.kind == "sinusoid":
        return spec.amplitude * np.sin(spec.frequency * t)
    return sum(signal_value(component, t) for component in spec.components)


@dataclass
class SimulationTrace:
    """Uniformly sampled time series; ``groups`` names the state blocks."""

    t: np.ndarray
    columns: Dict[str, np.ndarray]
    groups: Dict[str, List[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        for name, values in self.columns.items():
            if len(values) != len(self.t):
                raise InvalidInputError(f"trace column '{name}' does not match the time grid")
        if len(self.t) > 2:
            steps = np.diff(self.t)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise InvalidInputError("trace time grid is not uniform")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def group(self, name: str) -> np.ndarray:
        names = self.groups.get(name, [])
        if not names:
            return np.zeros((len(self.t), 0))
        return np.column_stack([self.columns[c] for c in names])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.t})
        for name, values in self.columns.items():
            frame[name] = values
        return frame


def rk4_step(rhs: Callable, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def check_step(dt: float, tau: Optional[float], eigs: Sequence[complex] = ()) -> None:
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    if tau is not None and dt > tau / STEPS_PER_TAU * (1 + 1e-12):
        raise InvalidInputError(
            f"step too large: dt={dt:.3g} exceeds tau/{STEPS_PER_TAU}={tau / STEPS_PER_TAU:.3g}"
        )
    if len(eigs) and np.max(np.abs(eigs)) * dt > STIFFNESS_LIMIT:
        raise InvalidInputError("step too large for stiff loop")


def simulate_linear(
    loop: StateSpace,
    r: SignalSpec,
    d: SignalSpec,
    n: SignalSpec,
    t_end: float,
    dt: float,
    tau: Optional[float] = None,
    allow_unstable: bool = False,
) -> SimulationTrace:
    """Fixed-step RK4 from zero initial state."""
    if t_end <= 0:
        raise InvalidInputError("t_end must be positive")
    eigs = loop.poles()
    check_step(dt, tau, eigs)
    if len(eigs) and np.max(eigs.real) >= 0 and not allow_unstable:
        raise InvalidInputError("closed loop is unstable; set allow_unstable to simulate it")

    signals = {"r": r, "d": d, "n": n}
    names = loop.input_names or ("r", "d", "n")
    steps = int(round(t_end / dt))
    t = dt * np.arange(steps + 1)

    def inputs(times):
        return np.column_stack([signal_value(signals[name], times) for name in names])

    A, B = loop.A, loop.B
    # RK4 only asks for inputs on the half-step grid
    forcing = inputs(0.5 * dt * np.arange(2 * steps + 1)) @ B.T

    def rhs(time, x):
        return A @ x + forcing[int(round(2 * time / dt))]

    U = inputs(t)
    X = np.zeros((steps + 1, loop.order))
    x = np.zeros(loop.order)
    for k in range(steps):
        x = rk4_step(rhs, t[k], x, dt)
        X[k + 1] = x
    logger.debug("linear run: %d steps of %.3g s, %d states", steps, dt, loop.order)

    Y = X @ loop.C.T + U @ loop.D.T
    columns: Dict[str, np.ndarray] = {}
    for i, name in enumerate(loop.output_names or ("y",)):
        columns[name] = Y[:, i]
    for i, name in enumerate(names):
        columns[name] = U[:, i]
    states = [f"x{i + 1}" for i in range(loop.order)]
    for i, name in enumerate(states):
        columns[name] = X[:, i]
    return SimulationTrace(t, columns, {"x": states})


def measure_amplitude(trace: SimulationTrace, column: str, omega: float, t_from: float = 0.0) -> float:
    """Sinusoid amplitude by least squares over whole periods ending at the last sample."""
    period = 2 * math.pi / omega
    t_last = trace.t[-1]
    periods = math.floor((t_last - t_from) / period)
    if periods < 1:
        raise InvalidInputError("trace too short for one full period after the transient window")
    mask = trace.t >= t_last - periods * period - 0.5 * trace.dt
    t = trace.t[mask]
    basis = np.column_stack([np.sin(omega * t), np.cos(omega * t), np.ones_like(t)])
    coeffs, *_ = np.linalg.lstsq(basis, trace[column][mask], rcond=None)
    return float(math.hypot(coeffs[0], coeffs[1]))


def recovery_report(
    P: RationalTransferFunction,
    Pn: RationalTransferFunction,
    C: RationalTransferFunction,
    qspec: QFilterSpec,
    omegas: Sequence[float],
) -> pd.DataFrame:
    Q = q_transfer(qspec)
    eigs = closed_loop_statespace(P, Pn, C, Q).poles()
    if len(eigs) and np.max(eigs.real) >= 0:
        raise InvalidInputError(f"closed loop is unstable at tau={qspec.tau:.3g}")
    actual = eq_ys_response(P, Pn, C, Q, omegas)
    target = nominal_loop_response(Pn, C, omegas)
    return pd.DataFrame(
        {
            "omega": np.asarray(omegas, dtype=float),
            "r_deviation": np.abs(actual["r"] - target["r"]),
            "nominal_r": np.abs(target["r"]),
            "d_gain": np.abs(actual["d"]),
            "nominal_d": np.abs(target["d"]),
        }
    )


def build_loop(doc: LoopDoc) -> StateSpace:
    return closed_loop_statespace(
        to_transfer_function(doc.plant),
        to_transfer_function(doc.nominal),
        to_transfer_function(doc.controller),
        q_transfer(doc.qfilter),
    )


class SimulationService:

    @staticmethod
    def simulate(payload: SimulateConfig):
        loop = build_loop(payload.loop)
        trace = simulate_linear(
            loop,
            payload.r,
            payload.d,
            payload.n,
            payload.t_end,
            payload.dt,
            tau=payload.loop.qfilter.tau,
            allow_unstable=payload.allow_unstable,
        )
        return {
            "message": f"linear loop simulated for {payload.t_end:g} s",
            "data": trace,
        }
