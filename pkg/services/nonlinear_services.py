# services/nonlinear_services.py
"""Nonlinear DOB on a plant in normal form.

State layout of the closed loop, in order: plant ``x`` (nu) and ``z`` (n-nu),
baseline controller ``eta`` (m), DOB ``zbar`` (n-nu), ``q`` (nu) and ``p``
(nu), then the co-simulated nominal loop ``xN``, ``zbarN`` and ``etaN``.
"""
import itertools
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from schemas.schemas import (
    BaselineController,
    CompareTransientConfig,
    DobInitialState,
    DobParams,
    Envelope,
    FieldExpr,
    NominalModel,
    NormalFormPlant,
    SignalSpec,
    SimulateNlConfig,
)
from services.algebra_services import StateSpace
from services.errors import DivergenceError, InvalidInputError
from services.linear_sim_services import SimulationTrace, check_step, rk4_step
from services.qfilter_services import nyquist_disk_test
from storage.storage import map_ordered

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e6
LAYER_SETTLING = 10
DEFAULT_SMOOTHING = 0.1
S_PHI_MARGIN = 0.25
S_PHI_PAD = 1e-3
GAIN_CHECK_SAMPLES = 256


def smooth_sat(v: float, lo: float, hi: float, width: float) -> float:
    """Identity on [lo, hi], C1 blend of the given width, then flat at hi + width/2.

    The cubic Hermite blend with slopes 1 and 0 and a rise of width/2 reduces
    to the quadratic s - s^2 / (2 width).
    """
    if not lo < hi or width <= 0:
        raise InvalidInputError("saturation needs lo < hi and a positive width")
    if v > hi:
        s = v - hi
        if s >= width:
            return hi + width / 2
        return hi + s - s * s / (2 * width)
    if v < lo:
        s = lo - v
        if s >= width:
            return lo - width / 2
        return lo - s + s * s / (2 * width)
    return v


def _width(interval: Tuple[float, float], smoothing_width: Optional[float]) -> float:
    return smoothing_width if smoothing_width is not None else DEFAULT_SMOOTHING * (interval[1] - interval[0])


def field_variables(nu: int, k: int) -> List[str]:
    return (
        [f"x{i + 1}" for i in range(nu)]
        + [f"z{i + 1}" for i in range(k)]
        + [f"dz{i + 1}" for i in range(k)]
        + ["t"]
    )


def _catalog_fn(expr: FieldExpr, index: Dict[str, int]) -> Optional[Callable]:
    if expr.catalog in (None, "zero"):
        return None
    params = expr.params
    if expr.catalog == "constant":
        value = params.get("value", 0.0)
        return lambda v: value
    if expr.var not in index:
        raise InvalidInputError(f"unknown variable '{expr.var}' in catalog field")
    i = index[expr.var]
    amplitude = params.get("amplitude", 1.0)
    if expr.catalog == "sine":
        frequency = params.get("frequency", 1.0)
        return lambda v: amplitude * math.sin(frequency * v[i])
    if expr.catalog == "tanh":
        gain = params.get("gain", 1.0)
        return lambda v: amplitude * math.tanh(gain * v[i])
    gain = params.get("gain", 1.0)
    limit = params.get("limit", 1.0)
    return lambda v: min(max(gain * v[i], -limit), limit)


class CompiledField:
    """Catalog entry plus monomials, evaluated on a flat list of variable values."""

    def __init__(self, expr: FieldExpr, variables: Sequence[str]):
        index = {name: i for i, name in enumerate(variables)}
        self.catalog = _catalog_fn(expr, index)
        self.terms = []
        for term in expr.terms:
            factors = []
            for name, power in term.powers.items():
                if name not in index:
                    raise InvalidInputError(f"unknown variable '{name}' in field term")
                if power:
                    factors.append((index[name], power))
            self.terms.append((term.coeff, tuple(factors)))
        self.clip = expr.clip

    def __call__(self, v: Sequence[float]) -> float:
        total = self.catalog(v) if self.catalog else 0.0
        for coeff, factors in self.terms:
            value = coeff
            for i, power in factors:
                value *= v[i] if power == 1 else v[i] ** power
            total += value
        if self.clip is not None:
            total = min(max(total, self.clip[0]), self.clip[1])
        return total


def instantiate(expr: FieldExpr, rng: np.random.Generator) -> FieldExpr:
    """Draw coefficients and catalog parameters uniformly from their bounds."""
    terms = [
        term.model_copy(update={"coeff": float(rng.uniform(*term.bounds))}) if term.bounds else term
        for term in expr.terms
    ]
    params = dict(expr.params)
    for name, bounds in expr.param_bounds.items():
        params[name] = float(rng.uniform(*bounds))
    return expr.model_copy(update={"terms": terms, "params": params})


def _uncertain(expr: FieldExpr) -> bool:
    return bool(expr.param_bounds) or any(term.bounds for term in expr.terms)


def signal_fn(spec: SignalSpec) -> Callable[[float], float]:
    if spec.kind == "zero":
        return lambda t: 0.0
    if spec.kind == "step":
        return lambda t: spec.amplitude if t >= spec.start_time else 0.0
    if spec.kind == "sinusoid":
        return lambda t: spec.amplitude * math.sin(spec.frequency * t)
    parts = [signal_fn(c) for c in spec.components]
    return lambda t: sum(part(t) for part in parts)


class DobController:
    """The DOB D: zbar, q and p dynamics with both saturations and the dead-zone."""

    def __init__(self, params: DobParams, nominal: NominalModel, k: int):
        spec = params.qspec
        if spec.tau <= 0:
            raise InvalidInputError("tau must be positive")
        if params.sat_phi_interval is None:
            raise InvalidInputError("sat_phi_interval is not set; estimate it first")
        self.nu, self.k = spec.nu, k
        self.tau = spec.tau
        self.g_star = params.g_star
        # [a0/tau^nu, a1/tau^(nu-1), ..., a_(nu-1)/tau]
        self.row = [a / spec.tau ** (spec.nu - i) for i, a in enumerate(spec.a)]
        self.b_gain = self.row[0]
        self.sat_x = [(lo, hi, _width((lo, hi), params.smoothing_width)) for lo, hi in params.sat_x_levels]
        lo, hi = params.sat_phi_interval
        self.sat_phi = (lo, hi, _width((lo, hi), params.smoothing_width))
        variables = field_variables(self.nu, k)
        self.f_n = CompiledField(nominal.f_n, variables)
        self.g_n = CompiledField(nominal.g_n, variables)
        if len(nominal.h_n) != k:
            raise InvalidInputError(f"nominal h_n must hold n-nu={k} components")
        self.h_n = [CompiledField(h, variables) for h in nominal.h_n]
        self._no_dz = [0.0] * k

    def _chain(self, state: List[float], drive: float) -> List[float]:
        last = drive - sum(c * s for c, s in zip(self.row, state))
        return state[1:] + [last]

    def step(self, zbar, q, p, y: float, u_bar: float, t: float = 0.0):
        q_sat = [smooth_sat(qi, lo, hi, w) for qi, (lo, hi, w) in zip(q, self.sat_x)]
        env = q_sat + list(zbar) + self._no_dz + [t]
        w = self.f_n(env) + self.g_n(env) * u_bar
        phi = p[0] + (sum(c * s for c, s in zip(self.row, q)) - self.b_gain * y) / self.g_star
        phi_sat = smooth_sat(phi, *self.sat_phi)
        u = phi_sat + w / self.g_star
        drive = phi - (phi - phi_sat) / self.g_star + w / self.g_star
        dq = self._chain(list(q), self.b_gain * y)
        dp = self._chain(list(p), self.b_gain * drive)
        dzbar = [h(env) for h in self.h_n]
        return dzbar, dq, dp, u, phi, w


def dob_derivatives(state, y: float, u_bar: float, params: DobParams, nominal: NominalModel):
    """Derivatives of (zbar, q, p) plus the realized control u, phi and w."""
    zbar, q, p = (list(part) for part in state)
    controller = DobController(params, nominal, len(zbar))
    dzbar, dq, dp, u, phi, w = controller.step(zbar, q, p, y, u_bar)
    return (np.array(dzbar), np.array(dq), np.array(dp)), u, phi, w


def q_subsystem_statespace(params: DobParams) -> StateSpace:
    """q-filter from y to (1/g*)([a0/tau^nu, ..., a_(nu-1)/tau] q - (a0/tau^nu) y)."""
    spec = params.qspec
    nu = spec.nu
    row = np.array([a / spec.tau ** (nu - i) for i, a in enumerate(spec.a)])
    A = np.zeros((nu, nu))
    A[:-1, 1:] = np.eye(nu - 1)
    A[-1, :] = -row
    B = np.zeros((nu, 1))
    B[-1, 0] = row[0]
    return StateSpace(A, B, row.reshape(1, nu) / params.g_star, [[-row[0] / params.g_star]], ("y",), ("w_q",))


class ClosedLoop:
    """Plant, baseline controller, DOB and the nominal loop as one ODE."""

    def __init__(
        self,
        plant: NormalFormPlant,
        nominal: NominalModel,
        controller: BaselineController,
        params: DobParams,
    ):
        if params.qspec.nu != plant.nu:
            raise InvalidInputError("Q-filter relative degree must equal the plant relative degree")
        self.nu, self.k, self.m = plant.nu, plant.n - plant.nu, controller.m
        variables = field_variables(self.nu, self.k)
        self.f = CompiledField(plant.f, variables)
        self.g = CompiledField(plant.g, variables)
        self.h = [CompiledField(h, variables) for h in plant.h]
        self.d = signal_fn(plant.d)
        self.d_z = [signal_fn(s) for s in plant.d_z] or [lambda t: 0.0] * self.k
        self.r = signal_fn(controller.reference)
        self.dob = DobController(params, nominal, self.k)
        m = self.m
        self.Ac = np.array(controller.A, dtype=float).reshape(m, m)
        self.Bc = np.array(controller.B, dtype=float)
        self.Cc = np.array(controller.C, dtype=float)
        self.Dc = float(controller.D)

        self.sizes = [
            ("x", self.nu), ("z", self.k), ("eta", m), ("zbar", self.k), ("q", self.nu),
            ("p", self.nu), ("xN", self.nu), ("zbarN", self.k), ("etaN", m),
        ]
        self.slices: Dict[str, slice] = {}
        offset = 0
        for name, size in self.sizes:
            self.slices[name] = slice(offset, offset + size)
            offset += size
        self.size = offset

    def pack(self, **parts) -> np.ndarray:
        s = np.zeros(self.size)
        for name, values in parts.items():
            s[self.slices[name]] = values
        return s

    def _controller(self, eta: np.ndarray, e: float):
        u_bar = float(self.Cc @ eta) + self.Dc * e if self.m else self.Dc * e
        deta = self.Ac @ eta + self.Bc * e
        return u_bar, deta

    def _nominal_env(self, x, zbar, t):
        return list(x) + list(zbar) + [0.0] * self.k + [t]

    def _u_desired(self, x, z, zbar, u_bar, t, dz) -> float:
        env = list(x) + list(z) + dz + [t]
        g = self.g(env)
        if g <= 0:
            raise InvalidInputError(f"g(x, z) <= 0 at t={t:.6g}: state left the envelope")
        env_n = self._nominal_env(x, zbar, t)
        w = self.dob.f_n(env_n) + self.dob.g_n(env_n) * u_bar
        return -self.d(t) + (-self.f(env) + w) / g

    def rhs(self, t: float, s: np.ndarray) -> np.ndarray:
        sl = self.slices
        x = s[sl["x"]].tolist()
        z = s[sl["z"]].tolist()
        eta = s[sl["eta"]]
        r = self.r(t)
        u_bar, deta = self._controller(eta, r - x[0])
        dzbar, dq, dp, u, _, _ = self.dob.step(
            s[sl["zbar"]].tolist(), s[sl["q"]].tolist(), s[sl["p"]].tolist(), x[0], u_bar, t
        )
        dz_in = [fn(t) for fn in self.d_z]
        env = x + z + dz_in + [t]
        dx = x[1:] + [self.f(env) + self.g(env) * (u + self.d(t))]

        xN = s[sl["xN"]].tolist()
        zbarN = s[sl["zbarN"]].tolist()
        u_barN, detaN = self._controller(s[sl["etaN"]], r - xN[0])
        env_n = self._nominal_env(xN, zbarN, t)
        dxN = xN[1:] + [self.dob.f_n(env_n) + self.dob.g_n(env_n) * u_barN]

        out = np.empty(self.size)
        out[sl["x"]] = dx
        out[sl["z"]] = [h(env) for h in self.h]
        out[sl["eta"]] = deta
        out[sl["zbar"]] = dzbar
        out[sl["q"]] = dq
        out[sl["p"]] = dp
        out[sl["xN"]] = dxN
        out[sl["zbarN"]] = [h(env_n) for h in self.dob.h_n]
        out[sl["etaN"]] = detaN
        return out

    def signals(self, t: float, s: np.ndarray) -> Dict[str, float]:
        sl = self.slices
        x = s[sl["x"]].tolist()
        zbar = s[sl["zbar"]].tolist()
        r = self.r(t)
        u_bar, _ = self._controller(s[sl["eta"]], r - x[0])
        _, _, _, u, phi, w = self.dob.step(zbar, s[sl["q"]].tolist(), s[sl["p"]].tolist(), x[0], u_bar, t)
        dz_in = [fn(t) for fn in self.d_z]
        lo, hi, _ = self.dob.sat_phi
        return {
            "y": x[0],
            "u": u,
            "u_bar": u_bar,
            "phi": phi,
            "w": w,
            "u_desired": self._u_desired(x, s[sl["z"]].tolist(), zbar, u_bar, t, dz_in),
            "d_hat": u_bar - u,
            "d": self.d(t),
            "sat_phi_active": float(not lo <= phi <= hi),
            "yN": float(s[sl["xN"]][0]),
        }


def u_desired_oracle(x, z, zbar, u_bar: float, plant: NormalFormPlant, nominal: NominalModel, t: float) -> float:
    """-d + (f_n(x, zbar) + g_n(x, zbar) u_bar - f(x, z)) / g(x, z) with the true f, g and d."""
    k = plant.n - plant.nu
    variables = field_variables(plant.nu, k)
    dz = [signal_fn(s)(t) for s in plant.d_z] or [0.0] * k
    env = list(x) + list(z) + dz + [t]
    g = CompiledField(plant.g, variables)(env)
    if g <= 0:
        raise InvalidInputError("g(x, z) <= 0: query point is outside the envelope")
    env_n = list(x) + list(zbar) + [0.0] * k + [t]
    w = CompiledField(nominal.f_n, variables)(env_n) + CompiledField(nominal.g_n, variables)(env_n) * u_bar
    return -signal_fn(plant.d)(t) + (-CompiledField(plant.f, variables)(env) + w) / g


def _envelope_box(envelope: Envelope, nu: int, k: int, m: int) -> List[Tuple[float, float]]:
    if envelope.S0 is not None:
        box = list(envelope.S0)
    else:
        box = list(envelope.U_x) + list(envelope.Z) + list(envelope.eta_bounds)
    if len(box) != nu + k + m:
        raise InvalidInputError(f"initial-condition box must hold n+m={nu + k + m} intervals")
    return box


def check_gain_envelope(plant: NormalFormPlant, envelope: Envelope, seed: int = 0) -> None:
    """Sample g on U_x x Z and require it inside [g_lower, g_upper]."""
    k = plant.n - plant.nu
    if len(envelope.U_x) != plant.nu or len(envelope.Z) != k:
        raise InvalidInputError("envelope U_x and Z must match the plant dimensions")
    field = CompiledField(plant.g, field_variables(plant.nu, k))
    rng = np.random.default_rng(seed)
    box = list(envelope.U_x) + list(envelope.Z)
    points = [list(corner) for corner in itertools.product(*box)]
    if box:
        lows, highs = zip(*box)
        points.extend(rng.uniform(lows, highs, size=(GAIN_CHECK_SAMPLES, len(box))).tolist())
    gains = plant.gain
    for point in points:
        value = field(point + [0.0] * k + [0.0])
        if not gains.g_lower - 1e-12 <= value <= gains.g_upper + 1e-12:
            raise InvalidInputError(
                f"g = {value:.4g} leaves [g_lower, g_upper] = [{gains.g_lower}, {gains.g_upper}] on the envelope"
            )


def simulate_nonlinear(
    plant: NormalFormPlant,
    nominal: NominalModel,
    controller: BaselineController,
    params: DobParams,
    envelope: Envelope,
    x0: Sequence[float],
    z0: Sequence[float],
    eta0: Sequence[float],
    dob0: Optional[DobInitialState],
    t_end: float,
    dt: float,
) -> SimulationTrace:
    loop = ClosedLoop(plant, nominal, controller, params)
    nu, k, m = loop.nu, loop.k, loop.m
    if len(x0) != nu or len(z0) != k or len(eta0) != m:
        raise InvalidInputError(f"initial state must hold x({nu}), z({k}) and eta({m}) entries")
    if t_end <= 0:
        raise InvalidInputError("t_end must be positive")
    check_step(dt, params.qspec.tau)
    if not plant.gain.g_lower <= params.g_star <= plant.gain.g_upper:
        raise InvalidInputError("g_star must lie in the plant gain interval")
    if not nyquist_disk_test(params.qspec.nu, params.qspec.a, plant.gain)["pass"]:
        raise InvalidInputError("Q-filter coefficients fail the disk test for the plant gain interval")
    check_gain_envelope(plant, envelope)
    initial = list(x0) + list(z0) + list(eta0)
    for value, (lo, hi) in zip(initial, _envelope_box(envelope, nu, k, m)):
        if not lo <= value <= hi:
            raise InvalidInputError("initial condition lies outside the S0 box")

    dob0 = dob0 or DobInitialState()
    zbar0 = dob0.zbar if dob0.zbar is not None else [0.0] * k
    # q1 reads the measured y(0); derivatives of y are not measured
    q0 = dob0.q if dob0.q is not None else [float(x0[0])] + [0.0] * (nu - 1)
    p0 = dob0.p if dob0.p is not None else [0.0] * nu
    if len(zbar0) != k or len(q0) != nu or len(p0) != nu:
        raise InvalidInputError("DOB initial state has the wrong dimensions")
    s = loop.pack(x=x0, z=z0, eta=eta0, zbar=zbar0, q=q0, p=p0, xN=x0, zbarN=zbar0, etaN=eta0)

    steps = int(round(t_end / dt))
    t = dt * np.arange(steps + 1)
    states = np.empty((steps + 1, loop.size))
    states[0] = s
    derived: Dict[str, List[float]] = {}

    def record(t_k, s_k):
        for name, value in loop.signals(t_k, s_k).items():
            derived.setdefault(name, []).append(value)

    record(0.0, s)
    for i in range(steps):
        s = rk4_step(loop.rhs, t[i], s, dt)
        norm = float(np.linalg.norm(s))
        if not math.isfinite(norm) or norm > DIVERGENCE_NORM:
            raise DivergenceError(float(t[i + 1]), norm)
        states[i + 1] = s
        record(t[i + 1], s)
    logger.debug("nonlinear run: %d steps at tau=%.3g", steps, params.qspec.tau)

    columns: Dict[str, np.ndarray] = {name: np.asarray(values) for name, values in derived.items()}
    groups: Dict[str, List[str]] = {}
    for name, size in loop.sizes:
        sl = loop.slices[name]
        names = [f"{name}{i + 1}" for i in range(size)]
        groups[name] = names
        for j, column in enumerate(names):
            columns[column] = states[:, sl.start + j]
    trace = SimulationTrace(t, columns, groups)
    dev = np.linalg.norm(_stack(trace, ("zbar", "x", "eta")) - _stack(trace, ("zbarN", "xN", "etaN")), axis=1)
    trace.columns["dev"] = dev
    return trace


def _stack(trace: SimulationTrace, names: Sequence[str]) -> np.ndarray:
    return np.hstack([trace.group(name) for name in names])


def nominal_view(trace: SimulationTrace) -> SimulationTrace:
    """The co-simulated nominal loop as a trace with groups x, zbar and eta."""
    groups = {"x": trace.groups["xN"], "zbar": trace.groups["zbarN"], "eta": trace.groups["etaN"]}
    columns = {c: trace[c] for names in groups.values() for c in names}
    return SimulationTrace(trace.t, columns, groups)


def transient_deviation(trace: SimulationTrace, nominal_trace: SimulationTrace) -> dict:
    """sup over t of |(zbar, x, eta) - (zbar_N, x_N, eta_N)|; z is left out."""
    if len(trace.t) != len(nominal_trace.t) or not np.array_equal(trace.t, nominal_trace.t):
        raise InvalidInputError("traces do not share a time grid")
    per_signal = {}
    blocks = []
    for name in ("zbar", "x", "eta"):
        actual, reference = trace.group(name), nominal_trace.group(name)
        if actual.shape != reference.shape:
            raise InvalidInputError(f"traces disagree on the size of '{name}'")
        if actual.size and not np.allclose(actual[0], reference[0], rtol=0, atol=1e-12):
            raise InvalidInputError("traces start from different initial conditions")
        diff = actual - reference
        blocks.append(diff)
        for j, column in enumerate(trace.groups.get(name, [])):
            per_signal[column] = float(np.max(np.abs(diff[:, j]))) if len(diff) else 0.0
    sup_dev = float(np.max(np.linalg.norm(np.hstack(blocks), axis=1))) if blocks else 0.0
    return {"sup_dev": sup_dev, "per_signal": per_signal}


def _reference_bound(spec: SignalSpec) -> float:
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "sum":
        return sum(_reference_bound(c) for c in spec.components)
    return abs(spec.amplitude)


def estimate_s_phi(
    plant: NormalFormPlant,
    nominal: NominalModel,
    controller: BaselineController,
    envelope: Envelope,
    n_samples: int,
    seed: int,
    g_star: Optional[float] = None,
) -> Tuple[float, float]:
    """Monte-Carlo range of (1/g - 1/g*)(f_n + g_n pi) - f/g - d over the envelope."""
    nu, k, m = plant.nu, plant.n - plant.nu, controller.m
    g_star = plant.gain.g_star if g_star is None else g_star
    zbar_box = envelope.zbar_bounds if envelope.zbar_bounds is not None else envelope.Z
    if len(envelope.U_x) != nu or len(envelope.Z) != k or len(zbar_box) != k:
        raise InvalidInputError("envelope U_x, Z and zbar bounds must match the plant dimensions")
    if len(envelope.eta_bounds) != m:
        raise InvalidInputError(f"envelope eta_bounds must hold m={m} intervals")
    box = list(envelope.U_x) + list(envelope.Z) + list(zbar_box) + list(envelope.eta_bounds)
    r_max = _reference_bound(controller.reference)
    box.append((-r_max, r_max))
    for lo, hi in box:
        if lo > hi:
            raise InvalidInputError("envelope boxes must be nonempty")

    variables = field_variables(nu, k)
    f_n = CompiledField(nominal.f_n, variables)
    g_n = CompiledField(nominal.g_n, variables)
    Cc = np.array(controller.C, dtype=float)
    rng = np.random.default_rng(seed)
    lows, highs = zip(*box)
    points = rng.uniform(lows, highs, size=(n_samples, len(box)))
    values = np.empty(n_samples)
    zeros = [0.0] * k
    fixed_f = None if _uncertain(plant.f) else CompiledField(plant.f, variables)
    fixed_g = None if _uncertain(plant.g) else CompiledField(plant.g, variables)
    for i, point in enumerate(points.tolist()):
        f = fixed_f or CompiledField(instantiate(plant.f, rng), variables)
        g = fixed_g or CompiledField(instantiate(plant.g, rng), variables)
        x, z = point[:nu], point[nu : nu + k]
        zbar = point[nu + k : nu + 2 * k]
        eta = np.array(point[nu + 2 * k : nu + 2 * k + m])
        r = point[-1]
        env = x + z + zeros + [0.0]
        env_n = x + zbar + zeros + [0.0]
        g_value = g(env)
        if g_value <= 0:
            raise InvalidInputError("sampled g(x, z) <= 0 on the envelope")
        pi = (float(Cc @ eta) if m else 0.0) + controller.D * (r - x[0])
        w = f_n(env_n) + g_n(env_n) * pi
        values[i] = (1 / g_value - 1 / g_star) * w - f(env) / g_value

    lo = float(np.min(values)) - envelope.M_d
    hi = float(np.max(values)) + envelope.M_d
    margin = S_PHI_MARGIN * max(hi - lo, abs(lo), abs(hi))
    if margin == 0:
        margin = S_PHI_PAD
    logger.info("S_phi sampled range [%.4g, %.4g], widened by %.4g", lo, hi, margin)
    return lo - margin, hi + margin


def widen_saturations(params: DobParams, factor: float) -> DobParams:
    """Scale every saturation level; large factors switch the saturations off."""
    update = {"sat_x_levels": [(lo * factor, hi * factor) for lo, hi in params.sat_x_levels]}
    if params.sat_phi_interval is not None:
        lo, hi = params.sat_phi_interval
        update["sat_phi_interval"] = (lo * factor, hi * factor)
    if params.smoothing_width is not None:
        update["smoothing_width"] = params.smoothing_width * factor
    return params.model_copy(update=update)


def layer_mask(trace: SimulationTrace, tau: float) -> np.ndarray:
    """Samples after the initial boundary layer."""
    return trace.t > LAYER_SETTLING * tau


def spot_check_region(
    plant: NormalFormPlant,
    nominal: NominalModel,
    controller: BaselineController,
    params: DobParams,
    envelope: Envelope,
    t_end: float,
    dt: float,
    tol: float = 1e-2,
    max_corners: int = 16,
    seed: int = 0,
) -> List[dict]:
    """Runs from corners of the S0 box with d = d_z = 0 and reports convergence."""
    nu, k, m = plant.nu, plant.n - plant.nu, controller.m
    box = _envelope_box(envelope, nu, k, m)
    corners = list(itertools.product(*box))
    if len(corners) > max_corners:
        rng = np.random.default_rng(seed)
        picks = sorted(rng.choice(len(corners), size=max_corners, replace=False))
        corners = [corners[i] for i in picks]
    quiet = plant.model_copy(update={"d": SignalSpec(), "d_z": []})

    def run(corner):
        corner = list(corner)
        try:
            trace = simulate_nonlinear(
                quiet, nominal, controller, params, envelope,
                corner[:nu], corner[nu : nu + k], corner[nu + k :], None, t_end, dt,
            )
        except DivergenceError as exc:
            return {"corner": corner, "final_norm": math.inf, "converged": False, "diverged_at": exc.time}
        final = np.hstack([trace.group("x")[-1], trace.group("z")[-1], trace.group("eta")[-1]])
        norm = float(np.linalg.norm(final))
        return {"corner": corner, "final_norm": norm, "converged": norm < tol, "diverged_at": None}

    return map_ordered(run, corners)


def transient_metrics(trace: SimulationTrace, tau: float) -> dict:
    after = layer_mask(trace, tau)
    z = trace.group("z")
    return {
        "tau": tau,
        "sup_dev": transient_deviation(trace, nominal_view(trace))["sup_dev"],
        "sup_u_err": float(np.max(np.abs(trace["u"][after] - trace["u_desired"][after]))) if after.any() else math.nan,
        "max_abs_u": float(np.max(np.abs(trace["u"]))),
        "z_max": float(np.max(np.abs(z))) if z.size else 0.0,
    }


def resolve_params(payload: SimulateNlConfig) -> DobParams:
    params = payload.params
    if params.sat_phi_interval is None:
        interval = estimate_s_phi(
            payload.plant, payload.nominal, payload.controller, payload.envelope,
            payload.s_phi_samples, payload.seed, params.g_star,
        )
        params = params.model_copy(update={"sat_phi_interval": interval})
    return params


def _run(payload: SimulateNlConfig, params: DobParams, dt: float) -> SimulationTrace:
    return simulate_nonlinear(
        payload.plant, payload.nominal, payload.controller, params, payload.envelope,
        payload.x0, payload.z0, payload.eta0, payload.dob0, payload.t_end, dt,
    )


def compare_transient(payload: CompareTransientConfig) -> List[dict]:
    params = resolve_params(payload)

    def run(tau):
        spec = params.qspec.model_copy(update={"tau": tau})
        dt = payload.dt if payload.dt is not None else tau / payload.steps_per_tau
        trace = _run(payload, params.model_copy(update={"qspec": spec}), dt)
        row = transient_metrics(trace, tau)
        logger.info("tau=%.3g sup_dev=%.4g sup_u_err=%.4g", tau, row["sup_dev"], row["sup_u_err"])
        return row

    return map_ordered(run, payload.tau_sweep)


class NonlinearService:

    @staticmethod
    def simulate(payload: SimulateNlConfig):
        params = resolve_params(payload)
        trace = _run(payload, params, payload.dt)
        tau = params.qspec.tau
        late = layer_mask(trace, tau)
        if late.any() and np.any(trace["sat_phi_active"][late] > 0):
            logger.warning("sat_phi active after the initial layer (t > %.3g s)", LAYER_SETTLING * tau)
        return {
            "message": f"nonlinear DOB loop simulated for {payload.t_end:g} s at tau={tau:g}",
            "data": trace,
            "params": params,
        }

    @staticmethod
    def compare_transient(payload: CompareTransientConfig):
        rows = compare_transient(payload)
        return {
            "message": f"transient deviation swept over {len(rows)} values of tau",
            "data": rows,
        }
