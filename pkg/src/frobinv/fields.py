"""
A module with the vector fields of the Frobenius method.

The dynamical field u = d/dt + p d/dq - V_q d/dp acts on scalar fields of
(q, p, t). A compatible field in reduced form is v = d/dq + C d/dp, and the
compatibility condition [u, v] = alpha u + beta v reduces to the basic equation
u(C) + C^2 + V_qq = 0.
"""
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np

from frobinv.errors import ContractError, DomainError, SingularReductionError
from frobinv.funcat import SpaceProfile

DELTA_P = 1e-3
FD_RELATIVE_STEP = 1e-6


def _always(*args: float) -> bool:
    return True


@dataclass(frozen=True)
class PhaseState:
    """A point (q, p, t) of the extended phase space."""

    q: float
    p: float
    t: float

    def __post_init__(self):
        for name in ("q", "p", "t"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"The phase state has a non-finite {name}.")
            object.__setattr__(self, name, value)

    def as_array(self) -> np.ndarray:
        return np.array([self.q, self.p, self.t])


@dataclass(frozen=True)
class PotentialSpec:
    """
    A time-dependent potential V(q, t) with its analytic derivatives.

    Parameters
    ----------
    value
        The potential V(q, t).
    d_q
        The first spatial derivative V_q.
    d_qq
        The second spatial derivative V_qq.
    d_t
        The time derivative V_t.
    guard
        A predicate on (q, t) that is False on the singular set.
    """

    value: Callable[[float, float], float]
    d_q: Callable[[float, float], float]
    d_qq: Callable[[float, float], float]
    d_t: Callable[[float, float], float]
    guard: Callable[[float, float], bool] = _always

    def inside(self, q: float, t: float) -> bool:
        """Returns True when (q, t) lies inside the guard (evaluation errors count as outside)."""
        try:
            return bool(self.guard(q, t))
        except DomainError:
            return False


class SecondPartials(NamedTuple):
    qq: float
    qp: float
    pp: float
    qt: float
    pt: float


@dataclass(frozen=True)
class ScalarField:
    """
    A scalar function of (q, p, t) with its first partial derivatives.

    The optional ``second`` evaluator returns the second partials needed to
    differentiate quotients of first partials (see compatible_from_invariant).
    """

    value: Callable[[float, float, float], float]
    d_q: Callable[[float, float, float], float]
    d_p: Callable[[float, float, float], float]
    d_t: Callable[[float, float, float], float]
    guard: Callable[[float, float, float], bool] = _always
    second: Optional[Callable[[float, float, float], SecondPartials]] = None

    @classmethod
    def from_function(
        cls,
        value: Callable[[float, float, float], float],
        guard: Callable[[float, float, float], bool] = _always,
    ) -> "ScalarField":
        """
        Wraps a plain function, with partials from central finite differences.

        The step is h = max(1e-6, 1e-6*|x|) in each coordinate, so the
        partials are accurate to O(h^2).
        """
        return cls(
            value=value,
            d_q=_central_difference(value, 0),
            d_p=_central_difference(value, 1),
            d_t=_central_difference(value, 2),
            guard=guard,
        )

    def inside(self, x: PhaseState) -> bool:
        """Returns True when x lies inside the guard (evaluation errors count as outside)."""
        try:
            return bool(self.guard(x.q, x.p, x.t))
        except DomainError:
            return False

    def __call__(self, x: PhaseState) -> float:
        return self.value(x.q, x.p, x.t)

    def gradient(self, x: PhaseState) -> np.ndarray:
        """Returns the partials (d_q, d_p, d_t) at x."""
        return np.array(
            [self.d_q(x.q, x.p, x.t), self.d_p(x.q, x.p, x.t), self.d_t(x.q, x.p, x.t)]
        )


def _central_difference(
    fn: Callable[[float, float, float], float], index: int
) -> Callable[[float, float, float], float]:
    def derivative(q: float, p: float, t: float) -> float:
        point = [q, p, t]
        h = max(FD_RELATIVE_STEP, FD_RELATIVE_STEP * abs(point[index]))
        forward, backward = list(point), list(point)
        forward[index] += h
        backward[index] -= h
        return (fn(*forward) - fn(*backward)) / (2.0 * h)

    return derivative


def finite_difference_partials(
    field: ScalarField, x: PhaseState, h: float = 1e-5
) -> np.ndarray:
    """Returns central finite-difference estimates of (d_q, d_p, d_t) of a field at x."""
    estimates = []
    for index in range(3):
        forward = x.as_array()
        backward = x.as_array()
        forward[index] += h
        backward[index] -= h
        estimates.append((field.value(*forward) - field.value(*backward)) / (2.0 * h))
    return np.asarray(estimates)


def _check_guards(V: PotentialSpec, s: ScalarField, x: PhaseState) -> None:
    if not V.inside(x.q, x.t):
        raise DomainError(f"{x} lies outside the guard of the potential.")
    if not s.inside(x):
        raise DomainError(f"{x} lies outside the guard of the field.")


def apply_u(V: PotentialSpec, s: ScalarField, x: PhaseState) -> float:
    """
    Applies the dynamical vector field to a scalar field.

    Parameters
    ----------
    V
        The potential that defines the canonical equations of motion.
    s
        The scalar field to be differentiated.
    x
        The phase-space point.

    Returns
    -------
    float
        s_t + p*s_q - V_q*s_p at x.

    Raises
    ------
    DomainError
        When x lies outside the guards of V or s.
    """
    _check_guards(V, s, x)
    q, p, t = x.q, x.p, x.t
    return s.d_t(q, p, t) + p * s.d_q(q, p, t) - V.d_q(q, t) * s.d_p(q, p, t)


def apply_v(C: ScalarField, s: ScalarField, x: PhaseState) -> float:
    """Applies the reduced compatible field v = d/dq + C d/dp to a scalar field."""
    if not C.inside(x) or not s.inside(x):
        raise DomainError(f"{x} lies outside the guard of the fields.")
    q, p, t = x.q, x.p, x.t
    return s.d_q(q, p, t) + C.value(q, p, t) * s.d_p(q, p, t)


def basic_equation_residual(V: PotentialSpec, C: ScalarField, x: PhaseState) -> float:
    """Returns u(C) + C^2 + V_qq at x (zero iff v = d/dq + C d/dp is compatible there)."""
    u_of_c = apply_u(V, C, x)
    c = C.value(x.q, x.p, x.t)
    return u_of_c + c * c + V.d_qq(x.q, x.t)


@dataclass(frozen=True)
class BracketCoeffs:
    alpha: float
    beta: float


def bracket_coeffs(
    V: PotentialSpec, C: ScalarField, x: PhaseState
) -> Tuple[BracketCoeffs, np.ndarray]:
    """
    Computes the Lie bracket [u, v] for a reduced field and splits it along u and v.

    Returns
    -------
    Tuple[BracketCoeffs, np.ndarray]
        The coefficients (alpha, beta) = (0, -C) and the residual
        [u, v] - alpha*u - beta*v in (d/dt, d/dq, d/dp) components. The d/dp
        component equals the basic equation residual.
    """
    u_of_c = apply_u(V, C, x)
    c = C.value(x.q, x.p, x.t)
    v_qq = V.d_qq(x.q, x.t)

    # [u, v]^i = u(v^i) - v(u^i) with u = (1, p, -V_q) and v = (0, 1, C)
    bracket = np.array([0.0, -c, u_of_c + v_qq])
    coeffs = BracketCoeffs(alpha=0.0, beta=-c)

    u_components = np.array([1.0, x.p, -V.d_q(x.q, x.t)])
    v_components = np.array([0.0, 1.0, c])
    residual = bracket - coeffs.alpha * u_components - coeffs.beta * v_components
    return coeffs, residual


@dataclass(frozen=True)
class GeneralField:
    """A compatible field v = A d/dt + B d/dq + C d/dp in general form."""

    A: ScalarField
    B: ScalarField
    C: ScalarField

    def denominator(self, x: PhaseState) -> float:
        """Returns B - A*p at x."""
        return self.B(x) - self.A(x) * x.p


def reduce_general_field(g: GeneralField, V: PotentialSpec, x: PhaseState) -> float:
    """
    Returns the reduced coefficient C' = (C + A*V_q)/(B - A*p) at x.

    The reduced field v' = d/dq + C' d/dp is compatible whenever g is.

    Raises
    ------
    SingularReductionError
        When B = A*p at x.
    """
    denominator = g.denominator(x)
    scale = max(1.0, abs(g.B(x)), abs(g.A(x) * x.p))
    if denominator == 0.0 or abs(denominator) < 1e-14 * scale:
        raise SingularReductionError(f"B = A*p at {x}; the field cannot be reduced.")
    return (g.C(x) + g.A(x) * V.d_q(x.q, x.t)) / denominator


def reduced_field(g: GeneralField, V: PotentialSpec) -> ScalarField:
    """Returns the whole reduced coefficient C' as a field with finite-difference partials."""

    def value(q: float, p: float, t: float) -> float:
        return reduce_general_field(g, V, PhaseState(q, p, t))

    def guard(q: float, p: float, t: float) -> bool:
        x = PhaseState(q, p, t)
        return g.denominator(x) != 0.0 and V.inside(q, t)

    return ScalarField.from_function(value, guard=guard)


def compatible_from_invariant(J: ScalarField, delta_p: float = DELTA_P) -> ScalarField:
    """
    Builds the compatible field coefficient C = -J_q/J_p of a candidate invariant.

    If u(J) = 0 then C satisfies the basic equation and v(J) = 0. The
    partials of C are exact when J carries second partials and finite
    differences otherwise.

    Parameters
    ----------
    J
        The candidate invariant.
    delta_p
        Points with |J_p| < delta_p are excluded from the guard of C.
    """
    if delta_p <= 0.0:
        raise ContractError("delta_p must be positive.")

    def value(q: float, p: float, t: float) -> float:
        return -J.d_q(q, p, t) / J.d_p(q, p, t)

    def guard(q: float, p: float, t: float) -> bool:
        return bool(J.guard(q, p, t)) and abs(J.d_p(q, p, t)) >= delta_p

    if J.second is None:
        return ScalarField.from_function(value, guard=guard)

    def partials(q: float, p: float, t: float) -> Tuple[float, float, float]:
        j_q, j_p = J.d_q(q, p, t), J.d_p(q, p, t)
        h = J.second(q, p, t)
        j_p2 = j_p * j_p
        return (
            -(h.qq * j_p - j_q * h.qp) / j_p2,
            -(h.qp * j_p - j_q * h.pp) / j_p2,
            -(h.qt * j_p - j_q * h.pt) / j_p2,
        )

    return ScalarField(
        value=value,
        d_q=lambda q, p, t: partials(q, p, t)[0],
        d_p=lambda q, p, t: partials(q, p, t)[1],
        d_t=lambda q, p, t: partials(q, p, t)[2],
        guard=guard,
    )


def autonomous_potential(U: SpaceProfile) -> PotentialSpec:
    """Returns the time-independent potential V(q, t) = U(q)."""
    return PotentialSpec(
        value=lambda q, t: U.eval(q, 0),
        d_q=lambda q, t: U.eval(q, 1),
        d_qq=lambda q, t: U.eval(q, 2),
        d_t=lambda q, t: 0.0,
    )


def energy_invariant(U: SpaceProfile) -> ScalarField:
    """Returns the energy J = p^2/2 + U(q) with exact first and second partials."""
    return ScalarField(
        value=lambda q, p, t: 0.5 * p * p + U.eval(q, 0),
        d_q=lambda q, p, t: U.eval(q, 1),
        d_p=lambda q, p, t: p,
        d_t=lambda q, p, t: 0.0,
        second=lambda q, p, t: SecondPartials(
            qq=U.eval(q, 2), qp=0.0, pp=1.0, qt=0.0, pt=0.0
        ),
    )
