# schemas/schemas.py
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Interval = Tuple[float, float]


def _check_intervals(v: List[Interval]) -> List[Interval]:
    for lo, hi in v:
        if lo > hi:
            raise ValueError(f"interval [{lo}, {hi}] has lower bound above upper bound")
    return v


class Document(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TransferFunctionDoc(Document):
    num: List[float] = Field(min_length=1)
    den: List[float] = Field(min_length=1)

    @field_validator("den")
    @classmethod
    def validate_den(cls, v):
        if all(c == 0 for c in v):
            raise ValueError("denominator must not be the zero polynomial")
        return v


class QFilterSpec(Document):
    nu: int = Field(ge=1)
    a: List[float]
    tau: float = Field(gt=0)

    @model_validator(mode="after")
    def validate_coefficients(self):
        if len(self.a) != self.nu:
            raise ValueError(f"a must hold nu={self.nu} coefficients a_0..a_(nu-1)")
        if self.a[0] <= 0:
            raise ValueError("a_0 must be positive")
        return self


class GainInterval(Document):
    g_lower: float = Field(gt=0)
    g_upper: float = Field(gt=0)
    g_star: float = Field(gt=0)

    @model_validator(mode="after")
    def validate_order(self):
        if not self.g_lower <= self.g_star <= self.g_upper:
            raise ValueError("gains must satisfy 0 < g_lower <= g_star <= g_upper")
        return self


class PlantSample(Document):
    alpha: List[float]
    beta: List[float] = []
    g: float = Field(gt=0)
    provenance: Literal["vertex", "random", "nominal"] = "nominal"
    sample_id: int = 0

    @property
    def n(self) -> int:
        return len(self.alpha)

    @property
    def nu(self) -> int:
        return len(self.alpha) - len(self.beta)

    def parameters(self) -> Tuple[float, ...]:
        return tuple(self.alpha) + tuple(self.beta) + (self.g,)


class PlantFamily(Document):
    n: int = Field(ge=1)
    nu: int = Field(ge=1)
    alpha_bounds: List[Interval]
    beta_bounds: List[Interval] = []
    gain: GainInterval

    @field_validator("alpha_bounds", "beta_bounds")
    @classmethod
    def validate_intervals(cls, v):
        return _check_intervals(v)

    @model_validator(mode="after")
    def validate_dimensions(self):
        if self.nu > self.n:
            raise ValueError("relative degree nu cannot exceed plant order n")
        if len(self.alpha_bounds) != self.n:
            raise ValueError(f"alpha_bounds must hold n={self.n} intervals")
        if len(self.beta_bounds) != self.n - self.nu:
            raise ValueError(f"beta_bounds must hold n-nu={self.n - self.nu} intervals")
        return self

    def nominal(self) -> PlantSample:
        return PlantSample(
            alpha=[(lo + hi) / 2 for lo, hi in self.alpha_bounds],
            beta=[(lo + hi) / 2 for lo, hi in self.beta_bounds],
            g=self.gain.g_star,
            provenance="nominal",
        )

    def contains(self, sample: PlantSample, tol: float = 1e-12) -> bool:
        if len(sample.alpha) != self.n or len(sample.beta) != self.n - self.nu:
            return False
        bounds = list(self.alpha_bounds) + list(self.beta_bounds)
        bounds.append((self.gain.g_lower, self.gain.g_upper))
        return all(
            lo - tol <= value <= hi + tol
            for value, (lo, hi) in zip(sample.parameters(), bounds)
        )


class SignalSpec(Document):
    kind: Literal["zero", "step", "sinusoid", "sum"] = "zero"
    amplitude: float = 1.0
    frequency: Optional[float] = None
    start_time: float = 0.0
    components: List["SignalSpec"] = []

    @model_validator(mode="after")
    def validate_kind(self):
        if self.kind == "sinusoid" and (self.frequency is None or self.frequency <= 0):
            raise ValueError("sinusoid frequency must be positive")
        if self.kind == "sum" and not self.components:
            raise ValueError("sum signal needs at least one component")
        return self


SignalSpec.model_rebuild()


class FieldTerm(Document):
    coeff: float
    powers: Dict[str, int] = {}
    bounds: Optional[Interval] = None

    @field_validator("powers")
    @classmethod
    def validate_powers(cls, v):
        if any(p < 0 for p in v.values()):
            raise ValueError("monomial powers must be nonnegative")
        return v

    @field_validator("bounds")
    @classmethod
    def validate_bounds(cls, v):
        if v is not None:
            _check_intervals([v])
        return v


class FieldExpr(Document):
    """Scalar field: optional catalog entry plus a polynomial in named variables."""

    catalog: Optional[Literal["zero", "constant", "sine", "tanh", "saturated_linear"]] = None
    var: str = "x1"
    params: Dict[str, float] = {}
    param_bounds: Dict[str, Interval] = {}
    terms: List[FieldTerm] = []
    clip: Optional[Interval] = None
    metadata: Dict[str, float] = {}

    @field_validator("clip")
    @classmethod
    def validate_clip(cls, v):
        if v is not None and v[0] > v[1]:
            raise ValueError("clip lower bound above upper bound")
        return v


class NormalFormPlant(Document):
    nu: int = Field(ge=1)
    n: int = Field(ge=1)
    f: FieldExpr = FieldExpr()
    g: FieldExpr
    h: List[FieldExpr] = []
    d: SignalSpec = SignalSpec()
    d_z: List[SignalSpec] = []
    gain: GainInterval

    @model_validator(mode="after")
    def validate_dimensions(self):
        if self.nu > self.n:
            raise ValueError("relative degree nu cannot exceed plant order n")
        if len(self.h) != self.n - self.nu:
            raise ValueError(f"h must hold n-nu={self.n - self.nu} components")
        if self.d_z and len(self.d_z) != self.n - self.nu:
            raise ValueError(f"d_z must hold n-nu={self.n - self.nu} components")
        return self


class NominalModel(Document):
    f_n: FieldExpr = FieldExpr()
    g_n: FieldExpr
    h_n: List[FieldExpr] = []


class BaselineController(Document):
    """Linear output feedback on e = r - y: eta' = A eta + B e, u_bar = C eta + D e.

    Only the linear case of the controller vector fields is accepted; nonlinear
    Pi(eta, y) and pi(eta, y) would need the FieldExpr catalog here.
    """

    A: List[List[float]] = []
    B: List[float] = []
    C: List[float] = []
    D: float = 0.0
    reference: SignalSpec = SignalSpec()

    @model_validator(mode="after")
    def validate_dimensions(self):
        m = len(self.A)
        if any(len(row) != m for row in self.A):
            raise ValueError("controller A must be square")
        if len(self.B) != m or len(self.C) != m:
            raise ValueError(f"controller B and C must hold m={m} entries")
        return self

    @property
    def m(self) -> int:
        return len(self.A)


class DobParams(Document):
    qspec: QFilterSpec
    g_star: float = Field(gt=0)
    sat_x_levels: List[Interval]
    sat_phi_interval: Optional[Interval] = None
    smoothing_width: Optional[float] = Field(default=None, gt=0)

    @field_validator("sat_x_levels")
    @classmethod
    def validate_intervals(cls, v):
        return _check_intervals(v)

    @model_validator(mode="after")
    def validate_levels(self):
        if len(self.sat_x_levels) != self.qspec.nu:
            raise ValueError(f"sat_x_levels must hold nu={self.qspec.nu} intervals")
        if any(lo >= hi for lo, hi in self.sat_x_levels):
            raise ValueError("sat_x_levels intervals must be nonempty")
        if self.sat_phi_interval is not None and self.sat_phi_interval[0] >= self.sat_phi_interval[1]:
            raise ValueError("sat_phi_interval must be nonempty")
        return self


class Envelope(Document):
    U_x: List[Interval]
    Z: List[Interval] = []
    M_d: float = Field(default=0.0, ge=0)
    M_dz: float = Field(default=0.0, ge=0)
    eta_bounds: List[Interval] = []
    zbar_bounds: Optional[List[Interval]] = None
    S0: Optional[List[Interval]] = None

    @field_validator("U_x", "Z", "eta_bounds")
    @classmethod
    def validate_intervals(cls, v):
        return _check_intervals(v)


class DobInitialState(Document):
    zbar: Optional[List[float]] = None
    q: Optional[List[float]] = None
    p: Optional[List[float]] = None


class LoopDoc(Document):
    plant: TransferFunctionDoc
    nominal: TransferFunctionDoc
    controller: TransferFunctionDoc
    qfilter: QFilterSpec


class RunConfig(Document):
    benchmark: Optional[str] = None
    seed: int = 0
    out: Optional[str] = None
    log_level: Optional[Literal["DEBUG", "INFO", "WARNING", "ERROR"]] = None


class DesignQConfig(RunConfig):
    nu: int = Field(ge=1)
    a_tail: List[float] = []
    gains: GainInterval
    a0_initial: float = Field(default=1.0, gt=0)
    safety_fraction: float = Field(default=0.05, ge=0)
    omega_grid: Optional[List[float]] = None

    @model_validator(mode="after")
    def validate_tail(self):
        if len(self.a_tail) != self.nu - 1:
            raise ValueError(f"a_tail must hold nu-1={self.nu - 1} coefficients a_1..a_(nu-1)")
        return self


class AnalyzeConfig(RunConfig):
    family: PlantFamily
    nominal: Optional[PlantSample] = None
    controller: TransferFunctionDoc
    qfilter: QFilterSpec
    tau_grid: List[float] = Field(min_length=1)
    samples: int = Field(default=200, ge=0)
    poles_out: Optional[str] = None

    @field_validator("tau_grid")
    @classmethod
    def validate_tau_grid(cls, v):
        if any(t <= 0 for t in v):
            raise ValueError("tau_grid entries must be positive")
        if any(a <= b for a, b in zip(v, v[1:])):
            raise ValueError("tau_grid must be strictly descending")
        return v


class PolesConfig(RunConfig):
    plant: PlantSample
    nominal: PlantSample
    controller: TransferFunctionDoc
    qfilter: QFilterSpec
    tau_seq: List[float] = Field(min_length=3)

    @field_validator("tau_seq")
    @classmethod
    def validate_tau_seq(cls, v):
        if any(t <= 0 for t in v) or any(a <= b for a, b in zip(v, v[1:])):
            raise ValueError("tau_seq must be positive and strictly decreasing")
        return v


class SimulateConfig(RunConfig):
    loop: LoopDoc
    r: SignalSpec = SignalSpec()
    d: SignalSpec = SignalSpec()
    n: SignalSpec = SignalSpec()
    t_end: float = Field(gt=0)
    dt: float = Field(gt=0)
    allow_unstable: bool = False


class SimulateNlConfig(RunConfig):
    plant: NormalFormPlant
    nominal: NominalModel
    controller: BaselineController
    params: DobParams
    envelope: Envelope
    x0: List[float]
    z0: List[float] = []
    eta0: List[float] = []
    dob0: DobInitialState = DobInitialState()
    t_end: float = Field(gt=0)
    dt: float = Field(gt=0)
    s_phi_samples: int = Field(default=20000, ge=1)


class CompareTransientConfig(SimulateNlConfig):
    tau_sweep: List[float] = Field(min_length=1)
    dt: Optional[float] = Field(default=None, gt=0)
    steps_per_tau: float = Field(default=20.0, ge=20.0)

    @field_validator("tau_sweep")
    @classmethod
    def validate_tau_sweep(cls, v):
        if any(t <= 0 for t in v):
            raise ValueError("tau_sweep entries must be positive")
        return v
