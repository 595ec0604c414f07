import math

import numpy as np
import pytest

from schemas.schemas import LoopDoc, QFilterSpec, SignalSpec, SimulateConfig, TransferFunctionDoc
from services.algebra_services import Polynomial, RationalTransferFunction, StateSpace, closed_loop_statespace
from services.errors import InvalidInputError
from services.linear_sim_services import (
    SimulationService,
    SimulationTrace,
    build_loop,
    measure_amplitude,
    recovery_report,
    rk4_step,
    signal_value,
    simulate_linear,
)
from services.qfilter_services import q_transfer

ZERO = SignalSpec()


def tf(num, den):
    return RationalTransferFunction(Polynomial(num), Polynomial(den))


def first_order_loop(tau: float = 0.1) -> StateSpace:
    P = tf([1.0], [1.0, 1.0])
    return closed_loop_statespace(P, P, tf([2.0], [1.0]), q_transfer(QFilterSpec(nu=1, a=[1.0], tau=tau)))


def test_signal_value_kinds():
    t = np.array([0.0, 0.5, 1.0, 2.0])
    step = SignalSpec(kind="step", amplitude=2.0, start_time=1.0)
    np.testing.assert_allclose(signal_value(step, t), [0.0, 0.0, 2.0, 2.0])
    sine = SignalSpec(kind="sinusoid", amplitude=0.5, frequency=2.0)
    np.testing.assert_allclose(signal_value(sine, t), 0.5 * np.sin(2.0 * t))
    both = SignalSpec(kind="sum", components=[step, sine])
    np.testing.assert_allclose(signal_value(both, t), signal_value(step, t) + signal_value(sine, t))
    np.testing.assert_allclose(signal_value(ZERO, t), 0.0)


def test_trace_rejects_ragged_or_nonuniform_grids():
    with pytest.raises(InvalidInputError):
        SimulationTrace(np.arange(3.0), {"y": np.zeros(2)})
    with pytest.raises(InvalidInputError):
        SimulationTrace(np.array([0.0, 1.0, 3.0]), {"y": np.zeros(3)})


def test_zero_inputs_give_zero_output():
    trace = simulate_linear(first_order_loop(), ZERO, ZERO, ZERO, t_end=1.0, dt=1e-3)
    assert np.all(trace["y"] == 0.0)
    assert list(trace.to_frame().columns[:6]) == ["t", "y", "u", "r", "d", "n"]
    assert trace.group("x").shape == (1001, 3)


def test_step_guards():
    loop = first_order_loop(tau=0.1)
    with pytest.raises(InvalidInputError, match="step too large"):
        simulate_linear(loop, ZERO, ZERO, ZERO, t_end=1.0, dt=0.01, tau=0.1)
    stiff = first_order_loop(tau=1e-4)
    with pytest.raises(InvalidInputError, match="stiff"):
        simulate_linear(stiff, ZERO, ZERO, ZERO, t_end=1.0, dt=1e-3)


def test_unstable_loop_needs_explicit_permission():
    P = tf([1.0], [-1.0, 1.0])
    loop = closed_loop_statespace(P, P, tf([0.0], [1.0]), tf([0.0], [1.0]))
    with pytest.raises(InvalidInputError, match="unstable"):
        simulate_linear(loop, ZERO, ZERO, ZERO, t_end=1.0, dt=1e-2)
    trace = simulate_linear(loop, ZERO, SignalSpec(kind="step"), ZERO, t_end=1.0, dt=1e-2, allow_unstable=True)
    assert trace["y"][-1] == pytest.approx(math.e - 1, rel=1e-6)


def test_rk4_is_fourth_order():
    def rhs(t, x):
        return np.array([x[1], -x[0]])

    errors = []
    steps = [0.1, 0.05, 0.025, 0.0125]
    for h in steps:
        x = np.array([1.0, 0.0])
        n = int(round(2.0 / h))
        for k in range(n):
            x = rk4_step(rhs, k * h, x, h)
        errors.append(abs(x[0] - math.cos(2.0)))
    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    assert slope >= 3.7


def test_noise_passes_through_when_q_is_slow():
    # tau = 10 leaves Q ~ 0 at omega = 100, so noise reaches y through the plain loop
    P = tf([1.0], [0.0, 1.0])
    C = tf([100.0], [1.0])
    Q = q_transfer(QFilterSpec(nu=1, a=[1.0], tau=10.0))
    loop = closed_loop_statespace(P, P, C, Q)
    noise = SignalSpec(kind="sinusoid", amplitude=1.0, frequency=100.0)
    trace = simulate_linear(loop, ZERO, ZERO, noise, t_end=110.0, dt=1e-3, tau=10.0)
    measured = measure_amplitude(trace, "y", 100.0, t_from=100.0)
    s = 100j
    expected = abs((Q(s) + P(s) * C(s)) / (1 + P(s) * C(s)))
    assert measured == pytest.approx(expected, rel=0.05)
    assert measured == pytest.approx(1 / math.sqrt(2), rel=0.05)


def test_time_response_matches_frequency_response():
    P = tf([1.6, 0.8], [1.0, 4.0, 1.0])
    Pn = tf([1.5375, 1.025], [2.0, 3.0, 1.0])
    C = tf([5.0, 5.0], [10.0, 1.0])
    Q = q_transfer(QFilterSpec(nu=1, a=[1.0], tau=0.01))
    loop = closed_loop_statespace(P, Pn, C, Q)
    omega = 2.0
    d = SignalSpec(kind="sinusoid", amplitude=1.0, frequency=omega)
    trace = simulate_linear(loop, ZERO, d, ZERO, t_end=40.0, dt=5e-4, tau=0.01)
    measured = measure_amplitude(trace, "y", omega, t_from=20.0)
    expected = abs(loop.freq_response([omega])[0, 0, 1])
    assert measured == pytest.approx(expected, rel=0.02)


def test_nominal_recovery_on_b1_vertex():
    P = tf([1.6, 0.8], [1.0, 4.0, 1.0])
    Pn = tf([1.5375, 1.025], [2.0, 3.0, 1.0])
    C = tf([5.0, 5.0], [10.0, 1.0])
    tau = 1e-3
    omegas = np.logspace(-3, math.log10(1 / (100 * tau)), 60)
    report = recovery_report(P, Pn, C, QFilterSpec(nu=1, a=[1.0], tau=tau), omegas)
    assert list(report.columns) == ["omega", "r_deviation", "nominal_r", "d_gain", "nominal_d"]
    assert np.all(report.d_gain <= 0.05 * report.nominal_d)
    assert np.all(report.r_deviation <= 0.05 * report.nominal_r)


def test_recovery_report_refuses_unstable_loops():
    P = tf([1.0], [-1.0, 1.0])
    with pytest.raises(InvalidInputError, match="unstable"):
        recovery_report(P, P, tf([0.0], [1.0]), QFilterSpec(nu=1, a=[1.0], tau=0.1), [1.0])


def test_measure_amplitude_needs_a_full_period():
    t = np.linspace(0.0, 1.0, 101)
    trace = SimulationTrace(t, {"y": np.sin(t)})
    with pytest.raises(InvalidInputError):
        measure_amplitude(trace, "y", 1.0)


def test_simulation_service_returns_trace():
    loop = LoopDoc(
        plant=TransferFunctionDoc(num=[1.0], den=[1.0, 1.0]),
        nominal=TransferFunctionDoc(num=[1.0], den=[1.0, 1.0]),
        controller=TransferFunctionDoc(num=[2.0], den=[1.0]),
        qfilter=QFilterSpec(nu=1, a=[1.0], tau=0.1),
    )
    payload = SimulateConfig(loop=loop, r=SignalSpec(kind="step"), t_end=5.0, dt=1e-3)
    result = SimulationService.simulate(payload)
    trace = result["data"]
    assert build_loop(loop).order == 3
    # P = Pn: the nominal loop 2/(s+3) settles at 2/3
    assert trace["y"][-1] == pytest.approx(2.0 / 3.0, abs=1e-4)


def test_simulate_linear_converges_at_fourth_order():
    # P = Pn leaves the nominal loop 2 / (s + 3) from r to y
    loop = first_order_loop(tau=1.0)
    exact = 2.0 / 3.0 * (1.0 - math.exp(-3.0))
    steps = [0.04, 0.02, 0.01, 0.005]
    errors = []
    for dt in steps:
        trace = simulate_linear(loop, SignalSpec(kind="step"), ZERO, ZERO, t_end=1.0, dt=dt, tau=1.0)
        errors.append(abs(trace["y"][-1] - exact))
    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    assert slope >= 3.7


def test_matching_plant_rejects_a_step_disturbance():
    loop = first_order_loop(tau=0.1)
    trace = simulate_linear(loop, ZERO, SignalSpec(kind="step"), ZERO, t_end=20.0, dt=1e-3, tau=0.1)
    assert abs(trace["y"][-1]) < 1e-6
    assert np.max(np.abs(trace["y"])) > 1e-3


def test_recovery_table_low_frequency_values():
    P = tf([1.6, 0.8], [1.0, 4.0, 1.0])
    Pn = tf([1.5375, 1.025], [2.0, 3.0, 1.0])
    C = tf([5.0, 5.0], [10.0, 1.0])
    report = recovery_report(P, Pn, C, QFilterSpec(nu=1, a=[1.0], tau=1e-3), [1e-3])
    # Pn C = 5.125 (s + 1.5) / ((s + 2) (s + 10)), so Pn C(0) = 0.384375
    assert report.nominal_r[0] == pytest.approx(0.384375 / 1.384375, rel=1e-4)
    assert report.nominal_d[0] == pytest.approx(0.76875 / 1.384375, rel=1e-4)
    assert report.r_deviation[0] < 1e-4
    assert report.d_gain[0] < 1e-4
