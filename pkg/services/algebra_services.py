# services/algebra_services.py
"""Real-coefficient polynomial and transfer-function algebra.

Polynomials are stored ascending in degree (``coeffs[k]`` multiplies ``s**k``).
Nothing in this module cancels common factors: internal stability of an
interconnection must stay visible in its realization.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import linalg

from services.errors import InvalidInputError

logger = logging.getLogger(__name__)

TOL_ROOT = 1e-8

Number = Union[int, float, complex]


def _trim(coeffs: Iterable[float]) -> Tuple[float, ...]:
    values = [float(c) for c in coeffs]
    if not values:
        return (0.0,)
    for c in values:
        if not math.isfinite(c):
            raise InvalidInputError("polynomial coefficients must be finite")
    while len(values) > 1 and values[-1] == 0.0:
        values.pop()
    return tuple(values)


@dataclass(frozen=True)
class Polynomial:
    coeffs: Tuple[float, ...]

    def __init__(self, coeffs: Iterable[float]):
        object.__setattr__(self, "coeffs", _trim(coeffs))

    @classmethod
    def constant(cls, value: float) -> "Polynomial":
        return cls([value])

    @classmethod
    def from_roots(cls, roots: Sequence[Number], leading: float = 1.0) -> "Polynomial":
        coeffs = npoly.polyfromroots(list(roots)) if len(roots) else np.array([1.0])
        return cls(np.real_if_close(coeffs, tol=1e6).real * leading)

    @classmethod
    def from_json(cls, data: Sequence[float]) -> "Polynomial":
        return cls(data)

    def to_json(self) -> List[float]:
        return list(self.coeffs)

    @property
    def is_zero(self) -> bool:
        return self.coeffs == (0.0,)

    @property
    def degree(self) -> Union[int, float]:
        if self.is_zero:
            return -math.inf
        return len(self.coeffs) - 1

    @property
    def leading(self) -> float:
        return self.coeffs[-1]

    def __call__(self, s):
        return npoly.polyval(s, np.asarray(self.coeffs))

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(npoly.polyadd(self.coeffs, other.coeffs))

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(npoly.polysub(self.coeffs, other.coeffs))

    def __mul__(self, other: Union["Polynomial", float]) -> "Polynomial":
        if isinstance(other, Polynomial):
            return Polynomial(npoly.polymul(self.coeffs, other.coeffs))
        return Polynomial(np.asarray(self.coeffs) * float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Polynomial":
        return self * -1.0

    def monic(self) -> "Polynomial":
        if self.is_zero:
            raise InvalidInputError("zero polynomial has no leading coefficient")
        return self * (1.0 / self.leading)

    def derivative(self) -> "Polynomial":
        if len(self.coeffs) == 1:
            return Polynomial([0.0])
        return Polynomial(npoly.polyder(self.coeffs))

    def shifted(self, c: float) -> "Polynomial":
        """Return ``p(s + c)``; roots move by ``-c``."""
        result = Polynomial([0.0])
        step = Polynomial([c, 1.0])
        for coeff in reversed(self.coeffs):
            result = result * step + Polynomial([coeff])
        return result


def poly_roots(p: Polynomial) -> np.ndarray:
    """Roots with multiplicity via companion-matrix eigenvalues plus one guarded Newton step."""
    if p.is_zero or p.degree < 1:
        raise InvalidInputError("no roots defined")
    coeffs = np.asarray(p.coeffs)
    roots = linalg.eigvals(npoly.polycompanion(coeffs)).astype(complex)
    dp = p.derivative()
    polished = []
    for r in roots:
        value = p(r)
        slope = dp(r)
        if slope != 0:
            candidate = r - value / slope
            if abs(p(candidate)) < abs(value):
                r = candidate
        polished.append(r)
    return np.array(polished, dtype=complex)


def routh_array(p: Polynomial) -> List[np.ndarray]:
    """Routh array rows, highest power first. Stops at a zero pivot."""
    if p.is_zero:
        raise InvalidInputError("Routh array of the zero polynomial")
    desc = np.asarray(p.coeffs[::-1], dtype=float)
    n = len(desc) - 1
    width = n // 2 + 1
    first = np.zeros(width)
    second = np.zeros(width)
    first[: len(desc[0::2])] = desc[0::2]
    second[: len(desc[1::2])] = desc[1::2]
    rows = [first, second][: n + 1]
    while len(rows) < n + 1:
        upper, lower = rows[-2], rows[-1]
        if lower[0] == 0.0:
            break
        nxt = np.zeros(width)
        for j in range(width - 1):
            nxt[j] = (lower[0] * upper[j + 1] - upper[0] * lower[j + 1]) / lower[0]
        rows.append(nxt)
    return rows


def is_hurwitz(p: Polynomial, margin: float = 0.0, method: str = "roots") -> bool:
    """True iff every root has real part strictly below ``-margin``.

    A nonzero constant has no roots and is accepted.
    """
    if p.is_zero:
        raise InvalidInputError("stability of the zero polynomial is undefined")
    if margin < 0:
        raise InvalidInputError("margin must be nonnegative")
    if p.degree == 0:
        return True
    if p.leading < 0:
        p = -p
    if method == "roots":
        return bool(np.max(poly_roots(p).real) < -margin)
    if method == "routh":
        q = p.shifted(-margin) if margin else p
        rows = routh_array(q)
        if len(rows) < q.degree + 1:
            return False
        return bool(all(row[0] > 0 for row in rows))
    raise InvalidInputError(f"unknown stability method '{method}'")


@dataclass(frozen=True)
class RationalTransferFunction:
    num: Polynomial
    den: Polynomial

    def __post_init__(self):
        if self.den.is_zero:
            raise InvalidInputError("transfer function denominator is the zero polynomial")

    @classmethod
    def from_json(cls, data: Dict[str, Sequence[float]]) -> "RationalTransferFunction":
        try:
            return cls(Polynomial(data["num"]), Polynomial(data["den"]))
        except KeyError as exc:
            raise InvalidInputError(f"transfer function is missing '{exc.args[0]}'")

    @classmethod
    def gain(cls, value: float) -> "RationalTransferFunction":
        return cls(Polynomial([value]), Polynomial([1.0]))

    def to_json(self) -> Dict[str, List[float]]:
        return {"num": self.num.to_json(), "den": self.den.to_json()}

    @property
    def relative_degree(self) -> Union[int, float]:
        if self.num.is_zero:
            return math.inf
        return self.den.degree - self.num.degree

    @property
    def is_proper(self) -> bool:
        return self.relative_degree >= 0

    @property
    def is_strictly_proper(self) -> bool:
        return self.relative_degree >= 1

    def poles(self) -> np.ndarray:
        return poly_roots(self.den) if self.den.degree >= 1 else np.array([], dtype=complex)

    def zeros(self) -> np.ndarray:
        return poly_roots(self.num) if self.num.degree >= 1 else np.array([], dtype=complex)

    def __call__(self, s):
        return self.num(s) / self.den(s)

    def __add__(self, other):
        return tf_arith(self, other, "add")

    def __mul__(self, other):
        return tf_arith(self, other, "mul")

    def __neg__(self):
        return tf_arith(self, None, "neg")


def tf_arith(a: RationalTransferFunction, b, kind: str) -> RationalTransferFunction:
    """Exact block-diagram arithmetic. Common factors are never cancelled."""
    if kind == "add":
        return RationalTransferFunction(a.num * b.den + b.num * a.den, a.den * b.den)
    if kind == "mul":
        return RationalTransferFunction(a.num * b.num, a.den * b.den)
    if kind == "neg":
        return RationalTransferFunction(-a.num, a.den)
    if kind == "inv":
        if a.num.is_zero:
            raise InvalidInputError("cannot invert a zero transfer function")
        return RationalTransferFunction(a.den, a.num)
    raise InvalidInputError(f"unknown transfer-function operation '{kind}'")


def freq_response(tf: RationalTransferFunction, omegas: Sequence[float]) -> np.ndarray:
    omegas = np.asarray(omegas, dtype=float)
    if np.any(omegas <= 0):
        raise InvalidInputError("frequencies must be positive")
    s = 1j * omegas
    den = tf.den(s)
    scale = npoly.polyval(omegas, np.abs(tf.den.coeffs))
    hits = np.abs(den) <= 1e-13 * scale
    if np.any(hits):
        raise InvalidInputError(
            f"transfer function has a pole at s = j{omegas[np.argmax(hits)]:.6g}"
        )
    return tf.num(s) / den


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    input_names: Tuple[str, ...] = field(default=())
    output_names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float)) if np.size(self.A) else np.zeros((0, 0))
        n = A.shape[0]
        B = np.array(self.B, dtype=float).reshape(n, -1) if n else np.zeros((0, np.shape(self.D)[-1]))
        D = np.atleast_2d(np.array(self.D, dtype=float))
        C = np.array(self.C, dtype=float).reshape(D.shape[0], n)
        if A.shape != (n, n) or B.shape != (n, D.shape[1]):
            raise InvalidInputError("state-space dimensions are inconsistent")
        for name, value in (("A", A), ("B", B), ("C", C), ("D", D)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "input_names", tuple(self.input_names))
        object.__setattr__(self, "output_names", tuple(self.output_names))

    @property
    def order(self) -> int:
        return self.A.shape[0]

    def poles(self) -> np.ndarray:
        if self.order == 0:
            return np.array([], dtype=complex)
        return linalg.eigvals(self.A)

    def freq_response(self, omegas: Sequence[float]) -> np.ndarray:
        """Response array of shape ``(len(omegas), outputs, inputs)``."""
        eye = np.eye(self.order)
        out = []
        for w in np.asarray(omegas, dtype=float):
            if self.order:
                x = np.linalg.solve(1j * w * eye - self.A, self.B)
                out.append(self.C @ x + self.D)
            else:
                out.append(self.D.astype(complex))
        return np.array(out)


def tf_to_statespace(tf: RationalTransferFunction) -> StateSpace:
    """Controllable canonical realization of order ``deg(den)``."""
    if not tf.is_proper:
        raise InvalidInputError("realization requires properness")
    an = tf.den.leading
    n = int(tf.den.degree)
    num = np.zeros(n + 1)
    num[: len(tf.num.coeffs)] = tf.num.coeffs
    d = num[n] / an
    remainder = num - d * np.asarray(tf.den.coeffs)
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[d]])
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -np.asarray(tf.den.coeffs[:n]) / an
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = (remainder[:n] / an).reshape(1, n)
    return StateSpace(A, B, C, [[d]])


def _check_loop_blocks(P, Pn, C, Q):
    if not P.is_strictly_proper:
        raise InvalidInputError("plant P must be strictly proper")
    if not Pn.is_strictly_proper:
        raise InvalidInputError("nominal model Pn must be strictly proper")
    if not C.is_proper:
        raise InvalidInputError("controller C must be proper")
    if Pn.num.is_zero:
        raise InvalidInputError("nominal model Pn has a zero numerator")
    if not Q.num.is_zero:
        if not Q.is_strictly_proper:
            raise InvalidInputError("Q-filter must be strictly proper")
        if Q.relative_degree < Pn.relative_degree:
            raise InvalidInputError(
                "Q-filter relative degree must be at least that of Pn so Pn^-1 Q is proper"
            )


def closed_loop_statespace(
    P: RationalTransferFunction,
    Pn: RationalTransferFunction,
    C: RationalTransferFunction,
    Q: RationalTransferFunction,
) -> StateSpace:
    """Realize the DOB loop from separate realizations of P, C, Pn^-1 Q and Q.

    Inputs are ``(r, d, n)``; outputs are ``(y, u)``. Loop equations:
    ``ym = y + n``, ``u_bar = C (r - ym)``, ``d_hat = Pn^-1 Q ym - Q u``,
    ``u = u_bar - d_hat`` and ``y = P (u + d)``. States are ordered
    ``[x_P, x_C, x_F, x_Q]`` with ``F = Pn^-1 Q``.
    """
    _check_loop_blocks(P, Pn, C, Q)
    if Q.num.is_zero:
        F = RationalTransferFunction.gain(0.0)
    else:
        F = tf_arith(tf_arith(Pn, None, "inv"), Q, "mul")
    sp, sc, sf, sq = (tf_to_statespace(block) for block in (P, C, F, Q))
    k_p, k_c, k_f, k_q = sp.order, sc.order, sf.order, sq.order
    ip = slice(0, k_p)
    ic = slice(k_p, k_p + k_c)
    i_f = slice(k_p + k_c, k_p + k_c + k_f)
    iq = slice(k_p + k_c + k_f, k_p + k_c + k_f + k_q)
    total = k_p + k_c + k_f + k_q

    dc = sc.D[0, 0]
    df = sf.D[0, 0]
    # u = Ku x + Ku_in [r, d, n]
    Ku = np.zeros((1, total))
    Ku[:, ip] = -(dc + df) * sp.C
    Ku[:, ic] = sc.C
    Ku[:, i_f] = -sf.C
    Ku[:, iq] = sq.C
    Ku_in = np.array([[dc, 0.0, -(dc + df)]])

    A = np.zeros((total, total))
    B = np.zeros((total, 3))
    A[ip, ip] = sp.A
    A[ip, :] += sp.B @ Ku
    B[ip, :] += sp.B @ Ku_in
    B[ip, 1:2] += sp.B

    A[ic, ic] = sc.A
    A[ic, ip] = -sc.B @ sp.C
    B[ic, 0:1] = sc.B
    B[ic, 2:3] = -sc.B

    A[i_f, i_f] = sf.A
    A[i_f, ip] = sf.B @ sp.C
    B[i_f, 2:3] = sf.B

    A[iq, iq] = sq.A
    A[iq, :] += sq.B @ Ku
    B[iq, :] += sq.B @ Ku_in

    Cy = np.zeros((1, total))
    Cy[:, ip] = sp.C
    out_C = np.vstack([Cy, Ku])
    out_D = np.vstack([np.zeros((1, 3)), Ku_in])
    logger.debug(
        "closed loop realized: P=%d C=%d F=%d Q=%d states", k_p, k_c, k_f, k_q
    )
    return StateSpace(A, B, out_C, out_D, ("r", "d", "n"), ("y", "u"))


def eq_ys_response(P, Pn, C, Q, omegas: Sequence[float]) -> Dict[str, np.ndarray]:
    """Pointwise evaluation of the r, d and n transfer functions to y."""
    s = 1j * np.asarray(omegas, dtype=float)
    p, pn, c, q = P(s), Pn(s), C(s), Q(s)
    den = pn * (1 + p * c) + q * (p - pn)
    return {
        "r": pn * p * c / den,
        "d": pn * p * (1 - q) / den,
        "n": -p * (q + pn * c) / den,
    }


def nominal_loop_response(Pn, C, omegas: Sequence[float]) -> Dict[str, np.ndarray]:
    s = 1j * np.asarray(omegas, dtype=float)
    pn, c = Pn(s), C(s)
    return {"r": pn * c / (1 + pn * c), "d": pn / (1 + pn * c)}
