# services/qfilter_services.py
import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from schemas.schemas import DesignQConfig, GainInterval, QFilterSpec
from services.algebra_services import (
    Polynomial,
    RationalTransferFunction,
    is_hurwitz,
)
from services.errors import DesignError, InvalidInputError

logger = logging.getLogger(__name__)

SAFETY_FRACTION = 0.05
MAX_HALVINGS = 60
POINTS_PER_DECADE = 200
INDENT_POINTS = 181
CLOSING_POINTS = 91
MAX_DECADES = 40


def q_transfer(spec: QFilterSpec) -> RationalTransferFunction:
    """Q(s) = a0 / ((tau s)^nu + a_(nu-1) (tau s)^(nu-1) + ... + a0)."""
    den = [a * spec.tau ** k for k, a in enumerate(spec.a)] + [spec.tau ** spec.nu]
    return RationalTransferFunction(Polynomial([spec.a[0]]), Polynomial(den))


def fast_char_poly(spec: QFilterSpec, g: float, g_star: float) -> Polynomial:
    if g <= 0 or g_star <= 0:
        raise InvalidInputError("plant gain g and nominal gain g_star must be positive")
    return Polynomial([g / g_star * spec.a[0]] + list(spec.a[1:]) + [1.0])


def reduced_poly(a: Sequence[float]) -> Polynomial:
    """s^(nu-1) + a_(nu-1) s^(nu-2) + ... + a_1."""
    return Polynomial(list(a[1:]) + [1.0])


def disk_geometry(gains: GainInterval):
    inv_lo = gains.g_star / gains.g_lower
    inv_hi = gains.g_star / gains.g_upper
    return -(inv_lo + inv_hi) / 2, (inv_lo - inv_hi) / 2


def _g_open(a: Sequence[float], s):
    """G(s) = a0 / (s^nu + a_(nu-1) s^(nu-1) + ... + a_1 s)."""
    return a[0] / (s * reduced_poly(a)(s))


def default_omega_grid(nu: int, a: Sequence[float], gains: GainInterval) -> np.ndarray:
    """Log grid whose ends satisfy the low- and high-frequency span rules."""
    center, radius = disk_geometry(gains)
    scale = abs(center) + radius
    lo = hi = 1.0
    for _ in range(MAX_DECADES):
        if abs(_g_open(a, 1j * lo)) > 10 * scale:
            break
        lo /= 10
    else:
        raise InvalidInputError("could not reach the low-frequency span of G")
    for _ in range(MAX_DECADES):
        if abs(_g_open(a, 1j * hi)) < 0.01 * scale:
            break
        hi *= 10
    else:
        raise InvalidInputError("could not reach the high-frequency span of G")
    decades = int(round(math.log10(hi / lo)))
    return np.logspace(math.log10(lo), math.log10(hi), decades * POINTS_PER_DECADE + 1)


def _check_grid(a, gains, omega_grid) -> np.ndarray:
    omegas = np.asarray(omega_grid, dtype=float)
    if omegas.ndim != 1 or len(omegas) < 2 or np.any(omegas <= 0) or np.any(np.diff(omegas) <= 0):
        raise InvalidInputError("omega grid must be positive and strictly increasing")
    center, radius = disk_geometry(gains)
    scale = abs(center) + radius
    if abs(_g_open(a, 1j * omegas[0])) <= 10 * scale:
        raise InvalidInputError("omega grid does not extend low enough for the disk test")
    if abs(_g_open(a, 1j * omegas[-1])) >= 0.01 * scale:
        raise InvalidInputError("omega grid does not extend high enough for the disk test")
    return omegas


def _nyquist_contour(a: Sequence[float], omegas: np.ndarray) -> np.ndarray:
    """Image of the indented D-contour, traversed clockwise from s = j omega_min."""
    w_lo, w_hi = omegas[0], omegas[-1]
    upper = _g_open(a, 1j * omegas)
    theta = np.linspace(math.pi / 2, -math.pi / 2, CLOSING_POINTS)[1:-1]
    closing = _g_open(a, w_hi * np.exp(1j * theta))
    lower = np.conj(upper[::-1])
    theta = np.linspace(-math.pi / 2, math.pi / 2, INDENT_POINTS)[1:-1]
    indent = _g_open(a, w_lo * np.exp(1j * theta))
    return np.concatenate([upper, closing, lower, indent])


def nyquist_disk_test(
    nu: int,
    a: Sequence[float],
    gains: GainInterval,
    omega_grid: Optional[Sequence[float]] = None,
) -> dict:
    """Closed-disk test on G(s) = a0 / (s^nu + ... + a1 s).

    Passes when the sampled contour stays strictly outside the disk with
    diameter [-g*/g_lower, -g*/g_upper] and winds zero times about its centre.
    For nu <= 2 the fast polynomial has degree <= 2 with positive coefficients,
    so the condition holds structurally; the geometric numbers are still
    reported.
    """
    a = [float(c) for c in a]
    if nu < 1 or len(a) != nu:
        raise InvalidInputError(f"a must hold nu={nu} coefficients")
    if a[0] <= 0:
        raise InvalidInputError("a_0 must be positive")
    if not is_hurwitz(reduced_poly(a)):
        raise InvalidInputError("choose a_1..a_(nu-1) Hurwitz first")

    if omega_grid is None:
        omegas = default_omega_grid(nu, a, gains)
    else:
        omegas = _check_grid(a, gains, omega_grid)

    center, radius = disk_geometry(gains)
    contour = _nyquist_contour(a, omegas) - center
    min_distance = float(np.min(np.abs(contour)) - radius)

    steps = np.angle(np.roll(contour, -1) / contour)
    if np.any(np.abs(steps) > math.pi / 2):
        raise InvalidInputError("omega grid too coarse for the winding count; refine it")
    encirclements = int(round(float(np.sum(steps)) / (2 * math.pi)))

    if nu <= 2:
        passed, certificate = True, "structural"
    else:
        passed, certificate = min_distance > 0 and encirclements == 0, "disk"
    return {
        "pass": bool(passed),
        "min_distance": min_distance,
        "encirclements": encirclements,
        "certificate": certificate,
        "center": center,
        "radius": radius,
    }


def design_a0(
    nu: int,
    a_tail: Sequence[float],
    gains: GainInterval,
    a0_initial: float,
    safety_fraction: float = SAFETY_FRACTION,
    omega_grid: Optional[Sequence[float]] = None,
) -> float:
    """Largest a0 = a0_initial * 2^-k (k <= 60) passing the disk test with margin."""
    if a0_initial <= 0:
        raise InvalidInputError("a0_initial must be positive")
    if len(a_tail) != nu - 1:
        raise InvalidInputError(f"a_tail must hold nu-1={nu - 1} coefficients")
    center, radius = disk_geometry(gains)
    threshold = safety_fraction * (radius + abs(center))
    for k in range(MAX_HALVINGS + 1):
        a0 = a0_initial * 2.0 ** -k
        report = nyquist_disk_test(nu, [a0] + list(a_tail), gains, omega_grid)
        logger.debug(
            "a0=%.6g pass=%s min_distance=%.6g", a0, report["pass"], report["min_distance"]
        )
        if report["pass"] and (
            report["certificate"] == "structural" or report["min_distance"] >= threshold
        ):
            return a0
    raise DesignError("gain interval too wide for this a-tail")


def brute_force_gain_sweep(
    spec: QFilterSpec, gains: GainInterval, points: int = 1000
) -> bool:
    """is_hurwitz(p_f) on a uniform g-grid over [g_lower, g_upper]."""
    return all(
        is_hurwitz(fast_char_poly(spec, g, gains.g_star))
        for g in np.linspace(gains.g_lower, gains.g_upper, points)
    )


def serialize_disk_report(report: dict) -> dict:
    return {
        "pass": report["pass"],
        "minDistance": report["min_distance"],
        "encirclements": report["encirclements"],
        "certificate": report["certificate"],
        "diskCenter": report["center"],
        "diskRadius": report["radius"],
    }


class DesignService:

    @staticmethod
    def design_q(payload: DesignQConfig):
        a0 = design_a0(
            payload.nu,
            payload.a_tail,
            payload.gains,
            payload.a0_initial,
            payload.safety_fraction,
            payload.omega_grid,
        )
        a: List[float] = [a0] + list(payload.a_tail)
        report = nyquist_disk_test(payload.nu, a, payload.gains, payload.omega_grid)
        center, radius = disk_geometry(payload.gains)
        logger.info("designed a0=%.6g after %d halvings", a0, round(math.log2(payload.a0_initial / a0)))
        return {
            "message": "Q-filter designed",
            "data": {
                "nu": payload.nu,
                "a": a,
                "a0": a0,
                "a0Initial": payload.a0_initial,
                "safetyThreshold": payload.safety_fraction * (radius + abs(center)),
                "disk": serialize_disk_report(report),
            },
        }
