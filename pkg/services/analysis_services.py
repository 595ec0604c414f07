# services/analysis_services.py
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from schemas.schemas import (
    AnalyzeConfig,
    PlantFamily,
    PlantSample,
    PolesConfig,
    QFilterSpec,
    TransferFunctionDoc,
)
from services.algebra_services import (
    Polynomial,
    RationalTransferFunction,
    closed_loop_statespace,
    is_hurwitz,
    poly_roots,
)
from services.errors import DobError, InvalidInputError
from services.qfilter_services import (
    fast_char_poly,
    nyquist_disk_test,
    q_transfer,
    reduced_poly,
)
from storage.storage import map_ordered

logger = logging.getLogger(__name__)

STABILITY_MARGIN = 1e-9
MAX_VERTEX_PARAMETERS = 12
RANDOM_VERTICES = 4096
FAST_THRESHOLD = 0.5

ZERO_TF = RationalTransferFunction(Polynomial([0.0]), Polynomial([1.0]))

# Kharitonov corner patterns over ascending coefficients, period 4 (l = lower, u = upper).
KHARITONOV_PATTERNS = ("lluu", "uull", "ullu", "luul")


def to_transfer_function(doc: TransferFunctionDoc) -> RationalTransferFunction:
    return RationalTransferFunction(Polynomial(doc.num), Polynomial(doc.den))


def plant_transfer(sample: PlantSample) -> RationalTransferFunction:
    """g (s^(n-nu) + beta_(n-nu-1) s^(n-nu-1) + ... + beta_0) / (s^n + ... + alpha_0)."""
    num = Polynomial(list(sample.beta) + [1.0]) * sample.g
    den = Polynomial(list(sample.alpha) + [1.0])
    return RationalTransferFunction(num, den)


def max_real_part(eigs: np.ndarray) -> float:
    return float(np.max(eigs.real)) if len(eigs) else -np.inf


def sample_family(family: PlantFamily, n_random: int, seed: int) -> List[PlantSample]:
    """Nominal first, then vertices, then uniform interior draws; duplicates dropped."""
    if n_random < 0:
        raise InvalidInputError("n_random must be nonnegative")
    rng = np.random.default_rng(seed)
    bounds = list(family.alpha_bounds) + list(family.beta_bounds)
    bounds.append((family.gain.g_lower, family.gain.g_upper))
    k = len(bounds)

    candidates: List[Tuple[str, Tuple[float, ...]]] = [("nominal", family.nominal().parameters())]
    if k <= MAX_VERTEX_PARAMETERS:
        corners = itertools.product(*bounds)
    else:
        picks = rng.integers(0, 2, size=(RANDOM_VERTICES, k))
        corners = (tuple(bounds[j][bit] for j, bit in enumerate(row)) for row in picks)
    candidates.extend(("vertex", tuple(float(v) for v in corner)) for corner in corners)
    lows = np.array([lo for lo, _ in bounds])
    highs = np.array([hi for _, hi in bounds])
    for row in rng.uniform(lows, highs, size=(n_random, k)):
        candidates.append(("random", tuple(float(v) for v in row)))

    n, n_beta = family.n, family.n - family.nu
    seen = set()
    samples = []
    for provenance, params in candidates:
        if params in seen:
            continue
        seen.add(params)
        samples.append(
            PlantSample(
                alpha=list(params[:n]),
                beta=list(params[n : n + n_beta]),
                g=params[-1],
                provenance=provenance,
                sample_id=len(samples),
            )
        )
    logger.info("sampled %d distinct plants from the family (%d parameters)", len(samples), k)
    return samples


def kharitonov_polynomials(bounds: Sequence[Tuple[float, float]]) -> List[Polynomial]:
    corners = []
    for pattern in KHARITONOV_PATTERNS:
        coeffs = [lo if pattern[i % 4] == "l" else hi for i, (lo, hi) in enumerate(bounds)]
        corners.append(Polynomial(coeffs))
    return corners


def check_minimum_phase(family: PlantFamily, samples: Sequence[PlantSample]) -> dict:
    if family.n == family.nu:
        return {"pass": True, "kharitonov_pass": None, "worst_zero": None}
    worst: Optional[complex] = None
    passed = True
    for sample in samples:
        numerator = Polynomial(list(sample.beta) + [1.0])
        if not is_hurwitz(numerator):
            passed = False
        zeros = poly_roots(numerator)
        candidate = zeros[np.argmax(zeros.real)]
        if worst is None or candidate.real > worst.real:
            worst = complex(candidate)
    interval_numerator = list(family.beta_bounds) + [(1.0, 1.0)]
    kharitonov_pass = all(is_hurwitz(p) for p in kharitonov_polynomials(interval_numerator))
    return {"pass": passed, "kharitonov_pass": kharitonov_pass, "worst_zero": worst}


def nominal_loop_poles(Pn: RationalTransferFunction, C: RationalTransferFunction) -> np.ndarray:
    return closed_loop_statespace(Pn, Pn, C, ZERO_TF).poles()


def loop_poles(P: PlantSample, Pn: PlantSample, C: RationalTransferFunction, qspec: QFilterSpec) -> np.ndarray:
    loop = closed_loop_statespace(plant_transfer(P), plant_transfer(Pn), C, q_transfer(qspec))
    return loop.poles()


def stability_margin_sweep(
    family: PlantFamily,
    Pn: PlantSample,
    C: RationalTransferFunction,
    qspec: QFilterSpec,
    tau: float,
    samples: Sequence[PlantSample],
) -> List[Tuple[PlantSample, float]]:
    spec = qspec.model_copy(update={"tau": tau})
    ordered = sorted(samples, key=lambda s: s.sample_id)
    margins = map_ordered(lambda s: max_real_part(loop_poles(s, Pn, C, spec)), ordered)
    return list(zip(ordered, margins))


@dataclass
class AsymptoticsTable:
    rows: List[dict] = field(default_factory=list)
    summary: List[dict] = field(default_factory=list)
    targets: Dict[str, list] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        columns = ["sample_id", "tau", "re", "im", "class", "match_target", "match_error"]
        return pd.DataFrame(self.rows, columns=columns)


def _label(group: str, value: complex) -> str:
    return f"{group}:{value.real:+.6g}{value.imag:+.6g}j"


def _assign(points: np.ndarray, targets: np.ndarray):
    if not len(points) or not len(targets):
        return np.array([], dtype=int), np.array([], dtype=int)
    cost = np.abs(points[:, None] - targets[None, :])
    return linear_sum_assignment(cost)


def pole_asymptotics(
    P: PlantSample,
    Pn: PlantSample,
    C: RationalTransferFunction,
    qspec: QFilterSpec,
    tau_seq: Sequence[float],
) -> AsymptoticsTable:
    """Match closed-loop eigenvalues to their tau -> 0 limits.

    Fast eigenvalues (|lambda| > 0.5/tau) are matched after scaling by tau to
    the roots of p_f and to the hidden modes of the separate Q realization;
    slow ones to the zeros of P and the nominal closed-loop poles.
    """
    tau_seq = [float(t) for t in tau_seq]
    if len(tau_seq) < 3 or any(a <= b for a, b in zip(tau_seq, tau_seq[1:])) or tau_seq[-1] <= 0:
        raise InvalidInputError("tau sequence must be positive, strictly decreasing and hold at least 3 points")
    P_tf, Pn_tf = plant_transfer(P), plant_transfer(Pn)
    pf_roots = poly_roots(fast_char_poly(qspec, P.g, Pn.g))
    q_roots = poly_roots(Polynomial(list(qspec.a) + [1.0]))
    zeros = P_tf.zeros()
    nominal = nominal_loop_poles(Pn_tf, C)

    fast_targets = np.concatenate([pf_roots, q_roots])
    fast_groups = ["pf"] * len(pf_roots) + ["q_mode"] * len(q_roots)
    slow_targets = np.concatenate([zeros, nominal]).astype(complex)
    slow_groups = ["zero"] * len(zeros) + ["nominal"] * len(nominal)
    expected = len(fast_targets) + len(slow_targets)

    table = AsymptoticsTable(
        targets={
            "pf": pf_roots.tolist(),
            "q_mode": q_roots.tolist(),
            "zero": zeros.tolist(),
            "nominal": nominal.tolist(),
        }
    )
    for tau in tau_seq:
        eigs = closed_loop_statespace(P_tf, Pn_tf, C, q_transfer(qspec.model_copy(update={"tau": tau}))).poles()
        if len(eigs) != expected:
            raise DobError(f"eigenvalue count {len(eigs)} does not match the {expected} expected limits")
        fast_idx = np.flatnonzero(np.abs(eigs) > FAST_THRESHOLD / tau)
        slow_idx = np.flatnonzero(np.abs(eigs) <= FAST_THRESHOLD / tau)

        matches = []  # (eig index, target group, target value, error, misclassified, class)
        used_fast, used_slow = set(), set()
        r, c = _assign(tau * eigs[fast_idx], fast_targets)
        for i, j in zip(r, c):
            matches.append((fast_idx[i], fast_groups[j], fast_targets[j], abs(tau * eigs[fast_idx[i]] - fast_targets[j]), False, "fast"))
            used_fast.add(j)
        matched_eigs = {fast_idx[i] for i in r}
        r, c = _assign(eigs[slow_idx], slow_targets)
        for i, j in zip(r, c):
            matches.append((slow_idx[i], slow_groups[j], slow_targets[j], abs(eigs[slow_idx[i]] - slow_targets[j]), False, "slow"))
            used_slow.add(j)
        matched_eigs |= {slow_idx[i] for i in r}

        left_eigs = np.array([k for k in range(len(eigs)) if k not in matched_eigs], dtype=int)
        left_fast = [j for j in range(len(fast_targets)) if j not in used_fast]
        left_slow = [j for j in range(len(slow_targets)) if j not in used_slow]
        left_targets = np.concatenate(
            [fast_targets[left_fast] / tau, slow_targets[left_slow]]
        ).astype(complex)
        r, c = _assign(eigs[left_eigs], left_targets)
        for i, j in zip(r, c):
            k = left_eigs[i]
            cls = "fast" if abs(eigs[k]) > FAST_THRESHOLD / tau else "slow"
            if j < len(left_fast):
                t = fast_targets[left_fast[j]]
                matches.append((k, fast_groups[left_fast[j]], t, abs(tau * eigs[k] - t), True, cls))
            else:
                t = slow_targets[left_slow[j - len(left_fast)]]
                matches.append((k, slow_groups[left_slow[j - len(left_fast)]], t, abs(eigs[k] - t), True, cls))

        fast_error = max((m[3] for m in matches if m[1] in ("pf", "q_mode")), default=0.0)
        slow_error = max((m[3] for m in matches if m[1] in ("zero", "nominal")), default=0.0)
        misclassified = sum(1 for m in matches if m[4])
        if misclassified:
            logger.warning("tau=%.3g: %d eigenvalues crossed the fast/slow threshold", tau, misclassified)
        table.summary.append(
            {
                "tau": tau,
                "fast_error": float(fast_error),
                "slow_error": float(slow_error),
                "misclassified": misclassified,
            }
        )
        for k, group, target, error, _, cls in sorted(matches, key=lambda m: m[0]):
            table.rows.append(
                {
                    "sample_id": P.sample_id,
                    "tau": tau,
                    "re": float(eigs[k].real),
                    "im": float(eigs[k].imag),
                    "class": cls,
                    "match_target": _label(group, complex(target)),
                    "match_error": float(error),
                }
            )
    return table


@dataclass
class RobustStabilityReport:
    condition_a: bool
    nominal_poles: List[complex]
    condition_b: bool
    kharitonov_pass: Optional[bool]
    worst_zero: Optional[complex]
    condition_c: bool
    disk: Optional[dict]
    sweep: List[Tuple[int, float, float]]
    tau_star_estimate: Optional[float]
    loci: Optional[AsymptoticsTable] = None

    @property
    def worst_zero_real(self) -> Optional[float]:
        return None if self.worst_zero is None else self.worst_zero.real

    @property
    def disk_margin(self) -> Optional[float]:
        return None if self.disk is None else self.disk["min_distance"]

    @property
    def conditions_hold(self) -> bool:
        return self.condition_a and self.condition_b and self.condition_c

    @property
    def certified_on_grid(self) -> bool:
        return self.tau_star_estimate is not None

    @property
    def unstable_points(self) -> List[Tuple[int, float]]:
        """Every (sample_id, tau) on the grid whose loop misses the stability margin."""
        return [(sid, tau) for sid, tau, value in self.sweep if not value < -STABILITY_MARGIN]

    @property
    def sweep_clean(self) -> bool:
        return self.certified_on_grid and not self.unstable_points


def _complex_pair(z: Optional[complex]):
    return None if z is None else [float(z.real), float(z.imag)]


def serialize_stability_report(report: RobustStabilityReport) -> dict:
    return {
        "conditionA": {
            "pass": report.condition_a,
            "nominalPoles": [_complex_pair(z) for z in report.nominal_poles],
        },
        "conditionB": {
            "pass": report.condition_b,
            "kharitonovPass": report.kharitonov_pass,
            "worstZero": _complex_pair(report.worst_zero),
            "worstZeroRealPart": report.worst_zero_real,
        },
        "conditionC": {
            "pass": report.condition_c,
            "diskMargin": report.disk_margin,
            "disk": report.disk,
        },
        "sweep": [
            {"sampleId": sid, "tau": tau, "maxRealPart": value} for sid, tau, value in report.sweep
        ],
        "tauStarEstimate": report.tau_star_estimate,
        "certifiedOnGrid": report.certified_on_grid,
        "unstablePoints": [{"sampleId": sid, "tau": tau} for sid, tau in report.unstable_points],
        "sweepClean": report.sweep_clean,
    }


def _estimate_tau_star(sweep: Sequence[Tuple[int, float, float]], tau_grid: Sequence[float]) -> Optional[float]:
    stable_at = {tau: True for tau in tau_grid}
    for _, tau, value in sweep:
        if not value < -STABILITY_MARGIN:
            stable_at[tau] = False
    estimate = None
    for tau in sorted(tau_grid):
        if not stable_at[tau]:
            break
        estimate = tau
    return estimate


def verify_robust_stability(
    family: PlantFamily,
    Pn: PlantSample,
    C: RationalTransferFunction,
    qspec: QFilterSpec,
    tau_grid: Sequence[float],
    samples: Sequence[PlantSample],
) -> RobustStabilityReport:
    if not family.contains(Pn):
        raise InvalidInputError("nominal model lies outside the plant family (condition (a))")
    tau_grid = [float(t) for t in tau_grid]
    if not tau_grid:
        raise InvalidInputError("tau grid is empty")
    if any(t <= 0 for t in tau_grid) or any(a <= b for a, b in zip(tau_grid, tau_grid[1:])):
        raise InvalidInputError("tau grid must be positive and strictly descending")
    if qspec.nu != family.nu:
        raise InvalidInputError("Q-filter relative degree must equal the family relative degree")

    nominal = nominal_loop_poles(plant_transfer(Pn), C)
    condition_a = max_real_part(nominal) < -STABILITY_MARGIN

    minimum_phase = check_minimum_phase(family, samples)
    condition_b = minimum_phase["pass"] and minimum_phase["kharitonov_pass"] is not False

    disk = None
    if is_hurwitz(reduced_poly(qspec.a)):
        disk = nyquist_disk_test(qspec.nu, qspec.a, family.gain)
        condition_c = disk["pass"]
    else:
        condition_c = False
    logger.info("conditions: a=%s b=%s c=%s", condition_a, condition_b, condition_c)

    sweep = []
    for tau in tau_grid:
        rows = stability_margin_sweep(family, Pn, C, qspec, tau, samples)
        logger.debug("tau=%.3g swept %d samples", tau, len(rows))
        sweep.extend((sample.sample_id, tau, value) for sample, value in rows)

    tau_star = None
    if condition_a and condition_b and condition_c:
        tau_star = _estimate_tau_star(sweep, tau_grid)
        logger.info("tau* estimate (certified on grid): %s", tau_star)

    loci = None
    if len(tau_grid) >= 3:
        loci = AsymptoticsTable()
        for table in map_ordered(lambda s: pole_asymptotics(s, Pn, C, qspec, tau_grid), list(samples)):
            loci.rows.extend(table.rows)
            loci.summary.extend(dict(row, sample_id=table.rows[0]["sample_id"]) for row in table.summary)
    else:
        logger.warning("pole loci skipped: tau grid holds fewer than 3 points")

    return RobustStabilityReport(
        condition_a=condition_a,
        nominal_poles=[complex(z) for z in nominal],
        condition_b=condition_b,
        kharitonov_pass=minimum_phase["kharitonov_pass"],
        worst_zero=minimum_phase["worst_zero"],
        condition_c=condition_c,
        disk=disk,
        sweep=sweep,
        tau_star_estimate=tau_star,
        loci=loci,
    )


class AnalysisService:

    @staticmethod
    def analyze(payload: AnalyzeConfig):
        family = payload.family
        Pn = payload.nominal or family.nominal()
        C = to_transfer_function(payload.controller)
        samples = sample_family(family, payload.samples, payload.seed)
        report = verify_robust_stability(family, Pn, C, payload.qfilter, payload.tau_grid, samples)
        return {
            "message": "robust-stability verification complete",
            "data": serialize_stability_report(report),
            "report": report,
        }

    @staticmethod
    def poles(payload: PolesConfig):
        table = pole_asymptotics(
            payload.plant,
            payload.nominal,
            to_transfer_function(payload.controller),
            payload.qfilter,
            payload.tau_seq,
        )
        return {
            "message": "pole asymptotics computed",
            "data": table.summary,
            "table": table,
        }
