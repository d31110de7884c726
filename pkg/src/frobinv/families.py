"""
A module with the constructors of the potential families that admit a compatible
vector field.

Each constructor returns a FamilyInstance holding the potential V(q, t), the
coefficient C(q, p, t) of the reduced compatible field, the closed-form invariant
when one is known and the guards that exclude the singular sets of the formulas.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import frobinv.datatypes as dt
from frobinv import numerics
from frobinv.errors import BracketError, DomainError, FamilyConstructionError, ShockError
from frobinv.fields import (
    PhaseState,
    PotentialSpec,
    ScalarField,
    SecondPartials,
    autonomous_potential,
    compatible_from_invariant,
    energy_invariant,
)
from frobinv.funcat import RHO_DELTA, SpaceProfile, TimeFunction, check_nonzero

DEFAULT_WINDOW = (0.0, 10.0)
SINGULAR_DELTA = 1e-3
T_QUAD_TOL = 1e-12
GAMMA_QUAD_TOL = 1e-10
ROOT_TOL = 1e-12


@dataclass(frozen=True)
class TransformedState:
    q_bar: float
    p_bar: float


@dataclass(frozen=True)
class CharacteristicReduction:
    """
    A characteristic surface f of the compatible field together with the rate
    Lambda(f, t) such that df/dt = Lambda along every trajectory.
    """

    f: ScalarField
    rate: Callable[[float, float], float]
    name: str = "f"


@dataclass(frozen=True)
class FamilyInstance:
    """
    A fully parameterized potential family.

    Parameters
    ----------
    label
        The family tag.
    potential
        The potential V(q, t).
    compat
        The coefficient C of the reduced compatible field v = d/dq + C d/dp.
    invariant
        The closed-form invariant I(q, p, t), when the family has one.
    characteristic
        A characteristic reduction df/dt = Lambda(f, t), when one is known.
    aux
        Named auxiliary evaluators, all taking (q, p, t).
    aux_odes
        Auxiliaries that can be co-integrated alongside a trajectory.
    transform
        The map (q, p, t) -> (q_bar, p_bar) of the family, when it has one.
    window
        The time window the family was validated on.
    parameters
        The parameter functions and constants the family was built from.
    """

    label: dt.FamilyTag
    potential: PotentialSpec
    compat: ScalarField
    invariant: Optional[ScalarField] = None
    characteristic: Optional[CharacteristicReduction] = None
    aux: Mapping[str, Callable[[float, float, float], float]] = field(
        default_factory=dict
    )
    aux_odes: Tuple[numerics.AuxiliarySpec, ...] = ()
    transform: Optional[Callable[[PhaseState], TransformedState]] = None
    window: Tuple[float, float] = DEFAULT_WINDOW
    parameters: Mapping[str, object] = field(default_factory=dict)

    def inside(self, x: PhaseState) -> bool:
        """Returns True when x lies inside the guards of both the potential and the field."""
        return self.potential.inside(x.q, x.t) and self.compat.inside(x)

    def invariant_inside(self, x: PhaseState) -> bool:
        """Returns True when x lies inside the guards of the potential and the invariant."""
        if self.invariant is None:
            return False
        return self.potential.inside(x.q, x.t) and self.invariant.inside(x)


def _derivatives(fn: TimeFunction, t: float, order: int = 3) -> Tuple[float, ...]:
    return tuple(fn.eval(t, n) for n in range(order + 1))


def _check_window(window: Sequence[float]) -> Tuple[float, float]:
    start, end = float(window[0]), float(window[1])
    if not end > start:
        raise FamilyConstructionError(f"The window [{start}, {end}] is empty.")
    return start, end


def _rho_guard(rho: TimeFunction) -> Callable[[float], bool]:
    return lambda t: abs(rho.eval(t)) >= RHO_DELTA


def inverse_square_integral(rho: TimeFunction) -> Callable[[float], float]:
    """
    Returns T(t), the integral of 1/rho^2 from 0 to t.

    T is exact for a constant rho and an adaptive quadrature with a
    per-instance cache otherwise.
    """
    if rho.is_constant:
        rho0 = rho.eval(0.0)
        return lambda t: t / (rho0 * rho0)

    @lru_cache(maxsize=8192)
    def T(t: float) -> float:
        return numerics.quad(lambda s: rho.eval(s) ** -2, 0.0, t, tol=T_QUAD_TOL)

    return T


def time_auxiliary(rho: TimeFunction) -> numerics.AuxiliarySpec:
    """Returns the co-integrated T' = 1/rho^2 with T(t0) from quadrature."""
    T = inverse_square_integral(rho)
    return numerics.AuxiliarySpec(
        name="T", rate=lambda t, values: rho.eval(t) ** -2, initial=T
    )


def _add_background(
    value: Callable[[float, float], float],
    d_t: Callable[[float, float], float],
    V0: Optional[TimeFunction],
) -> Tuple[Callable[[float, float], float], Callable[[float, float], float]]:
    # V0(t) shifts the potential without changing the equations of motion
    if V0 is None:
        return value, d_t
    return (
        lambda q, t: value(q, t) + V0.eval(t),
        lambda q, t: d_t(q, t) + V0.eval(t, 1),
    )


def forced_oscillator(
    rho: TimeFunction,
    force: TimeFunction,
    window: Sequence[float] = DEFAULT_WINDOW,
    V0: Optional[TimeFunction] = None,
) -> FamilyInstance:
    """
    Builds the forced time-dependent harmonic oscillator with a linear invariant.

    V = -F'q/rho - rho''q^2/(2 rho), C = rho'/rho and I = rho p - rho' q - F.

    Raises
    ------
    FamilyConstructionError
        If rho comes close to zero on the window.
    """
    window = _check_window(window)
    check_nonzero(rho, window)
    inside = _rho_guard(rho)

    def value(q, t):
        r, _, r2 = _derivatives(rho, t, 2)
        return -force.eval(t, 1) * q / r - r2 * q * q / (2.0 * r)

    def d_q(q, t):
        r, _, r2 = _derivatives(rho, t, 2)
        return -force.eval(t, 1) / r - r2 * q / r

    def d_qq(q, t):
        return -rho.eval(t, 2) / rho.eval(t)

    def d_t(q, t):
        r, r1, r2, r3 = _derivatives(rho, t)
        f1, f2 = force.eval(t, 1), force.eval(t, 2)
        return -(f2 / r - f1 * r1 / r**2) * q - (r3 / r - r2 * r1 / r**2) * q * q / 2.0

    value, d_t = _add_background(value, d_t, V0)
    potential = PotentialSpec(value, d_q, d_qq, d_t, guard=lambda q, t: inside(t))

    def c_t(q, p, t):
        r, r1, r2 = _derivatives(rho, t, 2)
        return r2 / r - r1**2 / r**2

    compat = ScalarField(
        value=lambda q, p, t: rho.eval(t, 1) / rho.eval(t),
        d_q=lambda q, p, t: 0.0,
        d_p=lambda q, p, t: 0.0,
        d_t=c_t,
        guard=lambda q, p, t: inside(t),
    )

    def i_second(q, p, t):
        _, r1, r2 = _derivatives(rho, t, 2)
        return SecondPartials(qq=0.0, qp=0.0, pp=0.0, qt=-r2, pt=r1)

    invariant = ScalarField(
        value=lambda q, p, t: rho.eval(t) * p - rho.eval(t, 1) * q - force.eval(t),
        d_q=lambda q, p, t: -rho.eval(t, 1),
        d_p=lambda q, p, t: rho.eval(t),
        d_t=lambda q, p, t: rho.eval(t, 1) * p - rho.eval(t, 2) * q - force.eval(t, 1),
        guard=lambda q, p, t: inside(t),
        second=i_second,
    )

    # f = p - rho' q / rho obeys a linear first-order equation
    characteristic = CharacteristicReduction(
        f=ScalarField(
            value=lambda q, p, t: p - rho.eval(t, 1) * q / rho.eval(t),
            d_q=lambda q, p, t: -rho.eval(t, 1) / rho.eval(t),
            d_p=lambda q, p, t: 1.0,
            d_t=lambda q, p, t: -c_t(q, p, t) * q,
            guard=lambda q, p, t: inside(t),
        ),
        rate=lambda f, t: (-rho.eval(t, 1) * f + force.eval(t, 1)) / rho.eval(t),
    )

    return FamilyInstance(
        label=dt.FamilyTag.FORCED_OSCILLATOR,
        potential=potential,
        compat=compat,
        invariant=invariant,
        characteristic=characteristic,
        window=window,
        parameters={"rho": rho, "force": force},
    )


def sarlet(
    rho: TimeFunction,
    sigma: TimeFunction,
    gamma: TimeFunction,
    window: Sequence[float] = DEFAULT_WINDOW,
    printed_quadratic_term: bool = False,
    V0: Optional[TimeFunction] = None,
) -> FamilyInstance:
    """
    Builds the family with the compatible field C = C0 + C1 p, C1 = 1/(q - sigma).

    With y = q - sigma and w = p - sigma' the potential is

        V = -sigma'' y - rho'' y^2/(2 rho) - gamma^2/(2 y^2) - gamma' log(y)

    and the invariant is I = T(t) - (y/rho)/(rho w - rho' y - gamma rho/y) with
    T the integral of 1/rho^2 from 0. The surface f = w/y - gamma/y^2 obeys the
    Riccati equation df/dt = -f^2 + rho''/rho.

    Parameters
    ----------
    rho, sigma, gamma
        The parameter functions of time.
    window
        The time window on which rho is checked.
    printed_quadratic_term
        Use -rho'' q^2/(2 rho) instead of -rho'' (q - sigma)^2/(2 rho). Both
        agree for sigma = 0; otherwise the compatibility condition fails.
    V0
        An optional background term of the potential.

    Raises
    ------
    FamilyConstructionError
        If rho comes close to zero on the window.
    """
    window = _check_window(window)
    check_nonzero(rho, window)
    inside_t = _rho_guard(rho)
    with_log = not gamma.is_constant
    T = inverse_square_integral(rho)

    if printed_quadratic_term:
        logging.info("Building the sarlet family with the printed quadratic term.")

    def inside(q: float, t: float) -> bool:
        y = q - sigma.eval(t)
        if with_log and y < SINGULAR_DELTA:
            return False
        return abs(y) >= SINGULAR_DELTA and inside_t(t)

    def value(q, t):
        r, _, r2 = _derivatives(rho, t, 2)
        s, _, s2 = _derivatives(sigma, t, 2)
        g, g1 = _derivatives(gamma, t, 1)
        y = q - s
        quadratic = q if printed_quadratic_term else y
        result = -s2 * y - r2 * quadratic**2 / (2.0 * r) - g * g / (2.0 * y * y)
        if with_log:
            result -= g1 * math.log(y)
        return result

    def d_q(q, t):
        r, _, r2 = _derivatives(rho, t, 2)
        s, _, s2 = _derivatives(sigma, t, 2)
        g, g1 = _derivatives(gamma, t, 1)
        y = q - s
        quadratic = q if printed_quadratic_term else y
        return -s2 - r2 * quadratic / r + g * g / y**3 - g1 / y

    def d_qq(q, t):
        y = q - sigma.eval(t)
        g, g1 = _derivatives(gamma, t, 1)
        return -rho.eval(t, 2) / rho.eval(t) - 3.0 * g * g / y**4 + g1 / y**2

    def d_t(q, t):
        r, r1, r2, r3 = _derivatives(rho, t)
        s, s1, s2, s3 = _derivatives(sigma, t)
        g, g1, g2 = _derivatives(gamma, t, 2)
        y = q - s
        curvature = (r3 / r - r2 * r1 / r**2) / 2.0
        if printed_quadratic_term:
            quadratic = -curvature * q * q
        else:
            quadratic = -curvature * y * y + r2 * y * s1 / r
        result = (
            -s3 * y
            + s2 * s1
            + quadratic
            - g * g1 / y**2
            - g * g * s1 / y**3
            + g1 * s1 / y
        )
        if with_log:
            result -= g2 * math.log(y)
        return result

    value, d_t = _add_background(value, d_t, V0)
    potential = PotentialSpec(value, d_q, d_qq, d_t, guard=inside)

    def c_value(q, p, t):
        s, s1 = _derivatives(sigma, t, 1)
        y, w = q - s, p - s1
        return w / y - 2.0 * gamma.eval(t) / y**2

    def c_q(q, p, t):
        s, s1 = _derivatives(sigma, t, 1)
        y, w = q - s, p - s1
        return -w / y**2 + 4.0 * gamma.eval(t) / y**3

    def c_t(q, p, t):
        s, s1, s2 = _derivatives(sigma, t, 2)
        g, g1 = _derivatives(gamma, t, 1)
        y, w = q - s, p - s1
        return -s2 / y + w * s1 / y**2 - 2.0 * g1 / y**2 - 4.0 * g * s1 / y**3

    compat = ScalarField(
        value=c_value,
        d_q=c_q,
        d_p=lambda q, p, t: 1.0 / (q - sigma.eval(t)),
        d_t=c_t,
        guard=lambda q, p, t: inside(q, t),
    )

    def f_value(q, p, t):
        s, s1 = _derivatives(sigma, t, 1)
        y, w = q - s, p - s1
        return w / y - gamma.eval(t) / y**2

    def f_q(q, p, t):
        s, s1 = _derivatives(sigma, t, 1)
        y, w = q - s, p - s1
        return -w / y**2 + 2.0 * gamma.eval(t) / y**3

    def f_t(q, p, t):
        s, s1, s2 = _derivatives(sigma, t, 2)
        g, g1 = _derivatives(gamma, t, 1)
        y, w = q - s, p - s1
        return -s2 / y + w * s1 / y**2 - g1 / y**2 - 2.0 * g * s1 / y**3

    characteristic = CharacteristicReduction(
        f=ScalarField(
            value=f_value,
            d_q=f_q,
            d_p=lambda q, p, t: 1.0 / (q - sigma.eval(t)),
            d_t=f_t,
            guard=lambda q, p, t: inside(q, t),
        ),
        rate=lambda f, t: -f * f + rho.eval(t, 2) / rho.eval(t),
    )

    sigma_vanishes = sigma.is_constant and sigma.eval(0.0) == 0.0
    invariant = None
    if not printed_quadratic_term or sigma_vanishes:
        invariant = _sarlet_invariant(rho, sigma, gamma, T, inside)

    return FamilyInstance(
        label=dt.FamilyTag.SARLET,
        potential=potential,
        compat=compat,
        invariant=invariant,
        characteristic=characteristic,
        aux={"T": lambda q, p, t: T(t), "f": f_value},
        aux_odes=(time_auxiliary(rho),),
        window=window,
        parameters={
            "rho": rho,
            "sigma": sigma,
            "gamma": gamma,
            "printed_quadratic_term": printed_quadratic_term,
        },
    )


def _sarlet_invariant(
    rho: TimeFunction,
    sigma: TimeFunction,
    gamma: TimeFunction,
    T: Callable[[float], float],
    inside: Callable[[float, float], bool],
) -> ScalarField:
    """The invariant T(t) - N/D with N = y/rho and D = rho w - rho' y - gamma rho/y."""

    def parts(q: float, p: float, t: float):
        r, r1, r2 = _derivatives(rho, t, 2)
        s, s1, s2 = _derivatives(sigma, t, 2)
        g, g1 = _derivatives(gamma, t, 1)
        y, w = q - s, p - s1
        a = g1 * r + g * r1

        # partials ordered as (value, q, p, t, qq, qp, pp, qt, pt)
        N = (y / r, 1.0 / r, 0.0, -s1 / r - y * r1 / r**2, 0.0, 0.0, 0.0, -r1 / r**2, 0.0)
        D = (
            r * w - r1 * y - g * r / y,
            -r1 + g * r / y**2,
            r,
            r1 * w - r * s2 - r2 * y + r1 * s1 - a / y - g * r * s1 / y**2,
            -2.0 * g * r / y**3,
            0.0,
            0.0,
            -r2 + a / y**2 + 2.0 * g * r * s1 / y**3,
            r1,
        )
        return N, D

    def ratio_first(N, D, i):
        return (N[i] * D[0] - N[0] * D[i]) / D[0] ** 2

    def ratio_second(N, D, i, j, ij):
        first = (N[ij] * D[0] + N[i] * D[j] - N[j] * D[i] - N[0] * D[ij]) / D[0] ** 2
        return first - 2.0 * (N[i] * D[0] - N[0] * D[i]) * D[j] / D[0] ** 3

    def value(q, p, t):
        N, D = parts(q, p, t)
        return T(t) - N[0] / D[0]

    def d_q(q, p, t):
        return -ratio_first(*parts(q, p, t), 1)

    def d_p(q, p, t):
        return -ratio_first(*parts(q, p, t), 2)

    def d_t(q, p, t):
        return rho.eval(t) ** -2 - ratio_first(*parts(q, p, t), 3)

    def second(q, p, t):
        N, D = parts(q, p, t)
        return SecondPartials(
            qq=-ratio_second(N, D, 1, 1, 4),
            qp=-ratio_second(N, D, 1, 2, 5),
            pp=-ratio_second(N, D, 2, 2, 6),
            qt=-ratio_second(N, D, 1, 3, 7),
            pt=-ratio_second(N, D, 2, 3, 8),
        )

    def guard(q, p, t):
        if not inside(q, t):
            return False
        _, D = parts(q, p, t)
        return abs(D[0]) >= SINGULAR_DELTA

    return ScalarField(value, d_q, d_p, d_t, guard=guard, second=second)


def quadratic(
    rho: TimeFunction,
    sigma: TimeFunction,
    U: SpaceProfile,
    window: Sequence[float] = DEFAULT_WINDOW,
    V0: Optional[TimeFunction] = None,
) -> FamilyInstance:
    """
    Builds the family with an invariant quadratic in the momentum.

    With q_bar = (q - sigma)/rho and p_bar = rho (p - sigma') - rho' (q - sigma),

        V = (sigma rho'' - rho sigma'') q/rho - rho'' q^2/(2 rho) + U(q_bar)/rho^2,
        C = rho'/rho - U'(q_bar)/(rho^2 p_bar),
        I = p_bar^2/2 + U(q_bar).

    The field is guarded by |p_bar| >= 1e-3; the invariant is global.
    """
    window = _check_window(window)
    check_nonzero(rho, window)
    inside_t = _rho_guard(rho)

    def coordinates(q, p, t):
        r, r1, r2 = _derivatives(rho, t, 2)
        s, s1, s2 = _derivatives(sigma, t, 2)
        y = q - s
        q_bar = y / r
        p_bar = r * (p - s1) - r1 * y
        q_bar_t = -s1 / r - y * r1 / r**2
        p_bar_t = r1 * p - r * s2 - r2 * y
        return q_bar, p_bar, q_bar_t, p_bar_t

    def value(q, t):
        r, _, r2 = _derivatives(rho, t, 2)
        s, _, s2 = _derivatives(sigma, t, 2)
        return (
            (s * r2 - r * s2) * q / r
            - r2 * q * q / (2.0 * r)
            + U.eval((q - s) / r) / r**2
        )

    def d_q(q, t):
        r, _, r2 = _derivatives(rho, t, 2)
        s, _, s2 = _derivatives(sigma, t, 2)
        return -s2 - r2 * (q - s) / r + U.eval((q - s) / r, 1) / r**3

    def d_qq(q, t):
        r = rho.eval(t)
        return -rho.eval(t, 2) / r + U.eval((q - sigma.eval(t)) / r, 2) / r**4

    def d_t(q, t):
        r, r1, r2, r3 = _derivatives(rho, t)
        s, s1, _, s3 = _derivatives(sigma, t)
        q_bar, _, q_bar_t, _ = coordinates(q, 0.0, t)
        return (
            (s1 * r2 / r + s * r3 / r - s * r2 * r1 / r**2 - s3) * q
            - (r3 / r - r2 * r1 / r**2) * q * q / 2.0
            + U.eval(q_bar, 1) * q_bar_t / r**2
            - 2.0 * r1 * U.eval(q_bar) / r**3
        )

    value, d_t = _add_background(value, d_t, V0)
    potential = PotentialSpec(value, d_q, d_qq, d_t, guard=lambda q, t: inside_t(t))

    def c_parts(q, p, t):
        r, r1, r2 = _derivatives(rho, t, 2)
        q_bar, p_bar, q_bar_t, p_bar_t = coordinates(q, p, t)
        Z = r * r * p_bar
        Z_q, Z_p = -r * r * r1, r**3
        Z_t = 2.0 * r * r1 * p_bar + r * r * p_bar_t
        u1, u2 = U.eval(q_bar, 1), U.eval(q_bar, 2)
        c = r1 / r - u1 / Z
        c_q = -(u2 * Z / r - u1 * Z_q) / Z**2
        c_p = u1 * Z_p / Z**2
        c_t = r2 / r - r1**2 / r**2 - (u2 * q_bar_t * Z - u1 * Z_t) / Z**2
        return c, c_q, c_p, c_t

    def c_guard(q, p, t):
        return inside_t(t) and abs(coordinates(q, p, t)[1]) >= SINGULAR_DELTA

    compat = ScalarField(
        value=lambda q, p, t: c_parts(q, p, t)[0],
        d_q=lambda q, p, t: c_parts(q, p, t)[1],
        d_p=lambda q, p, t: c_parts(q, p, t)[2],
        d_t=lambda q, p, t: c_parts(q, p, t)[3],
        guard=c_guard,
    )

    def i_value(q, p, t):
        q_bar, p_bar, _, _ = coordinates(q, p, t)
        return 0.5 * p_bar * p_bar + U.eval(q_bar)

    def i_q(q, p, t):
        q_bar, p_bar, _, _ = coordinates(q, p, t)
        return -rho.eval(t, 1) * p_bar + U.eval(q_bar, 1) / rho.eval(t)

    def i_t(q, p, t):
        q_bar, p_bar, q_bar_t, p_bar_t = coordinates(q, p, t)
        return p_bar * p_bar_t + U.eval(q_bar, 1) * q_bar_t

    def i_second(q, p, t):
        r, r1, r2 = _derivatives(rho, t, 2)
        q_bar, p_bar, q_bar_t, p_bar_t = coordinates(q, p, t)
        u1, u2 = U.eval(q_bar, 1), U.eval(q_bar, 2)
        return SecondPartials(
            qq=r1 * r1 + u2 / r**2,
            qp=-r1 * r,
            pp=r * r,
            qt=-r2 * p_bar - r1 * p_bar_t + u2 * q_bar_t / r - u1 * r1 / r**2,
            pt=r1 * p_bar + r * p_bar_t,
        )

    invariant = ScalarField(
        value=i_value,
        d_q=i_q,
        d_p=lambda q, p, t: rho.eval(t) * coordinates(q, p, t)[1],
        d_t=i_t,
        guard=lambda q, p, t: inside_t(t),
        second=i_second,
    )

    def transform(x: PhaseState) -> TransformedState:
        q_bar, p_bar, _, _ = coordinates(x.q, x.p, x.t)
        return TransformedState(q_bar=q_bar, p_bar=p_bar)

    return FamilyInstance(
        label=dt.FamilyTag.QUADRATIC,
        potential=potential,
        compat=compat,
        invariant=invariant,
        characteristic=CharacteristicReduction(f=invariant, rate=lambda f, t: 0.0),
        aux={
            "q_bar": lambda q, p, t: coordinates(q, p, t)[0],
            "p_bar": lambda q, p, t: coordinates(q, p, t)[1],
        },
        transform=transform,
        window=window,
        parameters={"rho": rho, "sigma": sigma, "U": U},
    )


class ImplicitPotential:
    """
    The potential V(q, t) defined implicitly by V = W(q - C2(V) t).

    This is the solution of V_t + C2(V) V_q = 0 with V(q, 0) = W(q) along
    straight characteristics. Roots are searched outwards from W(q); only the
    branch with 1 + t C2'(V) W'(xi) > 0 is accepted, since it continues the
    profile at t = 0.
    """

    def __init__(self, C2: SpaceProfile, W: SpaceProfile, cache_size: int = 65536):
        self.C2 = C2
        self.W = W
        self.solve = lru_cache(maxsize=cache_size)(self._solve)

    def xi(self, V: float, q: float, t: float) -> float:
        return q - self.C2.eval(V) * t

    def implicit_residual(self, V: float, q: float, t: float) -> float:
        return V - self.W.eval(self.xi(V, q, t))

    def slope(self, V: float, q: float, t: float) -> float:
        """Returns 1 + t C2'(V) W'(xi), the derivative of the implicit residual in V."""
        return 1.0 + t * self.C2.eval(V, 1) * self.W.eval(self.xi(V, q, t), 1)

    def _solve(self, q: float, t: float) -> float:
        if t == 0.0:
            return float(self.W.eval(q))
        if self.C2.is_constant:
            return float(self.W.eval(q - self.C2.eval(0.0) * t))

        start = self.W.eval(q)

        def residual(V: float) -> float:
            return self.implicit_residual(V, q, t)

        admissible, rejected, found_level = [], 0, None
        for level, lo, hi in numerics.expand_brackets(
            residual, start, scale=max(1.0, abs(start))
        ):
            if found_level is not None and level != found_level:
                break
            try:
                root = numerics.find_root(residual, (lo, hi), tol=ROOT_TOL)
            except BracketError:
                continue
            if self.slope(root, q, t) > 0.0:
                admissible.append(root)
                found_level = level
            else:
                rejected += 1

        if len(admissible) > 1:
            raise ShockError(
                f"Characteristics cross at (q, t) = ({q}, {t}): roots {admissible}."
            )
        if admissible:
            return admissible[0]
        if rejected:
            raise ShockError(
                f"Only roots beyond a characteristic crossing exist at (q, t) = ({q}, {t})."
            )
        raise DomainError(f"The implicit potential has no root at (q, t) = ({q}, {t}).")

    def derivatives(self, q: float, t: float) -> Dict[str, float]:
        """Returns V and its partials V_q, V_qq, V_t and V_qt at (q, t)."""
        V = self.solve(q, t)
        xi = self.xi(V, q, t)
        c, c1, c2 = (self.C2.eval(V, n) for n in range(3))
        w1, w2 = self.W.eval(xi, 1), self.W.eval(xi, 2)
        denominator = 1.0 + t * c1 * w1
        v_q = w1 / denominator
        # xi_q = 1/denominator
        v_qq = (w2 - w1 * t * (c2 * v_q * w1 + c1 * w2 / denominator)) / denominator**2
        return {
            "V": V,
            "V_q": v_q,
            "V_qq": v_qq,
            "V_t": -c * v_q,
            "V_qt": -c1 * v_q * v_q - c * v_qq,
        }


def giacomini(
    C2: SpaceProfile,
    W: SpaceProfile,
    window: Sequence[float] = DEFAULT_WINDOW,
) -> FamilyInstance:
    """
    Builds the family with rho = 1, sigma = 0 and C = -V_q/(p - C2(V)).

    The potential solves V_t + C2(V) V_q = 0 with V(q, 0) = W(q). For a constant
    C2 = c the invariant I = (p - c)^2/2 + V is known in closed form; otherwise
    the family is only weakly integrable and carries no invariant.
    """
    window = _check_window(window)
    implicit = ImplicitPotential(C2, W)

    def inside(q: float, t: float) -> bool:
        try:
            implicit.solve(q, t)
        except (DomainError, BracketError):
            return False
        return True

    def partial(name: str) -> Callable[[float, float], float]:
        def evaluate(q: float, t: float) -> float:
            return implicit.derivatives(q, t)[name]

        return evaluate

    potential = PotentialSpec(
        value=implicit.solve,
        d_q=partial("V_q"),
        d_qq=partial("V_qq"),
        d_t=partial("V_t"),
        guard=inside,
    )

    def c_parts(q, p, t):
        d = implicit.derivatives(q, t)
        c, c1 = C2.eval(d["V"]), C2.eval(d["V"], 1)
        P = p - c
        return (
            -d["V_q"] / P,
            -d["V_qq"] / P - c1 * d["V_q"] ** 2 / P**2,
            d["V_q"] / P**2,
            -d["V_qt"] / P - d["V_q"] * c1 * d["V_t"] / P**2,
        )

    def c_guard(q, p, t):
        return inside(q, t) and abs(p - C2.eval(implicit.solve(q, t))) >= SINGULAR_DELTA

    compat = ScalarField(
        value=lambda q, p, t: c_parts(q, p, t)[0],
        d_q=lambda q, p, t: c_parts(q, p, t)[1],
        d_p=lambda q, p, t: c_parts(q, p, t)[2],
        d_t=lambda q, p, t: c_parts(q, p, t)[3],
        guard=c_guard,
    )

    invariant, characteristic = None, None
    if C2.is_constant:
        speed = C2.eval(0.0)

        def i_second(q, p, t):
            d = implicit.derivatives(q, t)
            return SecondPartials(qq=d["V_qq"], qp=0.0, pp=1.0, qt=d["V_qt"], pt=0.0)

        invariant = ScalarField(
            value=lambda q, p, t: 0.5 * (p - speed) ** 2 + implicit.solve(q, t),
            d_q=lambda q, p, t: implicit.derivatives(q, t)["V_q"],
            d_p=lambda q, p, t: p - speed,
            d_t=lambda q, p, t: implicit.derivatives(q, t)["V_t"],
            guard=lambda q, p, t: inside(q, t),
            second=i_second,
        )
        characteristic = CharacteristicReduction(f=invariant, rate=lambda f, t: 0.0)
    else:
        logging.info("C2 is not constant: the giacomini family carries no invariant.")

    return FamilyInstance(
        label=dt.FamilyTag.GIACOMINI,
        potential=potential,
        compat=compat,
        invariant=invariant,
        characteristic=characteristic,
        aux={
            "xi": lambda q, p, t: implicit.xi(implicit.solve(q, t), q, t),
            "implicit_residual": lambda q, p, t: implicit.implicit_residual(
                implicit.solve(q, t), q, t
            ),
        },
        window=window,
        parameters={"C2": C2, "W": W, "implicit": implicit},
    )


class AbelCoefficients:
    """
    The time-dependent coefficients of the weakly integrable family with
    F(s) = s/k and sigma = 0.

    T is the integral of 1/rho^2 from 0, E = (T + k)/k the exponential of the
    integral of (1/rho^2)/(T + k), lambda = 1/(rho E) the scale of
    q_bar = lambda q and Gamma = -S/(2 rho^2) with S the integral from 0 of
    rho^4 E^2 K, K = rho'''/rho + 3 rho' rho''/rho^2 + 2 rho''/(rho^3 (T + k)).
    """

    def __init__(self, rho: TimeFunction, k: float, U: SpaceProfile):
        self.rho = rho
        self.k = float(k)
        self.U = U
        self.T = inverse_square_integral(rho)
        if rho.is_constant:
            self.S = lambda t: 0.0
        else:
            self.S = lru_cache(maxsize=8192)(self._accumulated)

    def _accumulated(self, t: float) -> float:
        return numerics.quad(self.gamma_integrand, 0.0, t, tol=GAMMA_QUAD_TOL)

    def shifted(self, t: float) -> float:
        """Returns T(t) + k."""
        return self.T(t) + self.k

    def E(self, t: float) -> float:
        return self.shifted(t) / self.k

    def scale(self, t: float) -> float:
        """Returns lambda(t) = k/(rho (T + k))."""
        return self.k / (self.rho.eval(t) * self.shifted(t))

    def rate(self, t: float) -> float:
        """Returns a(t) = rho'/rho + 1/(rho^2 (T + k)), so that lambda' = -a lambda."""
        r = self.rho.eval(t)
        return self.rho.eval(t, 1) / r + 1.0 / (r * r * self.shifted(t))

    def K(self, t: float, T: Optional[float] = None) -> float:
        r, r1, r2, r3 = _derivatives(self.rho, t)
        shifted = (self.T(t) if T is None else T) + self.k
        return r3 / r + 3.0 * r1 * r2 / r**2 + 2.0 * r2 / (r**3 * shifted)

    def gamma_integrand(self, t: float, T: Optional[float] = None) -> float:
        shifted = (self.T(t) if T is None else T) + self.k
        return self.rho.eval(t) ** 4 * (shifted / self.k) ** 2 * self.K(t, T)

    def Gamma(self, t: float) -> float:
        return -self.S(t) / (2.0 * self.rho.eval(t) ** 2)

    def Gamma_dot(self, t: float) -> float:
        r, r1 = self.rho.eval(t), self.rho.eval(t, 1)
        return -2.0 * r1 / r * self.Gamma(t) - r * r * self.E(t) ** 2 * self.K(t) / 2.0

    def q_bar(self, q: float, t: float) -> float:
        return self.scale(t) * q

    def p_bar(self, q: float, p: float, t: float) -> float:
        """Returns rho p - rho' q - q/(rho (T + k))."""
        r, r1 = self.rho.eval(t), self.rho.eval(t, 1)
        return r * p - r1 * q - q / (r * self.shifted(t))

    def Q(self, q: float, t: float) -> float:
        """The closed-form solution q/(rho (T + k)) of the implicit Q equation."""
        return q / (self.rho.eval(t) * self.shifted(t))

    def to_phase(self, q_bar: float, p_bar: float, t: float) -> Tuple[float, float]:
        """Inverts (q, p) -> (q_bar, p_bar) at fixed t."""
        r, r1 = self.rho.eval(t), self.rho.eval(t, 1)
        q = q_bar / self.scale(t)
        p = (p_bar + r1 * q + q / (r * self.shifted(t))) / r
        return q, p

    def abel_slope(self, q_bar: float, p_bar: float, t: float) -> float:
        """
        Returns dp_bar/dq_bar along the characteristics of the compatible field
        at frozen t, an Abel equation of the second kind:

            -[E p_bar/(T + k) + rho^3 rho'' E^2 q_bar + 2 rho^2 Gamma q_bar + U'(q_bar)]/p_bar
        """
        r, r2 = self.rho.eval(t), self.rho.eval(t, 2)
        E = self.E(t)
        numerator = (
            E * p_bar / self.shifted(t)
            + r**3 * r2 * E * E * q_bar
            + 2.0 * r * r * self.Gamma(t) * q_bar
            + self.U.eval(q_bar, 1)
        )
        return -numerator / p_bar


def abel_family(
    rho: TimeFunction,
    k: float,
    U: SpaceProfile,
    window: Sequence[float] = DEFAULT_WINDOW,
) -> FamilyInstance:
    """
    Builds the weakly integrable family with F(s) = s/k, sigma = 0 and V0 = 0.

    The potential is V = Gamma(t) q_bar^2 + U(q_bar)/rho^2 with q_bar = q/(rho E)
    and the compatible field is

        C = rho'/rho - (rho V_q + rho'' q)/p_bar,  p_bar = rho p - rho' q - q/(rho (T + k)).

    No closed-form invariant is known; the characteristics of the field obey an
    Abel equation at frozen t (see AbelCoefficients.abel_slope).

    Raises
    ------
    FamilyConstructionError
        If k is zero or not finite, rho comes close to zero or T + k changes sign
        on the window.
    """
    if not math.isfinite(k) or k == 0.0:
        raise FamilyConstructionError(f"k must be finite and nonzero (got {k}).")
    window = _check_window(window)
    check_nonzero(rho, window)
    coefficients = AbelCoefficients(rho, k, U)

    # T is increasing, so T + k keeps its sign iff it does at both ends
    ends = [coefficients.shifted(t) for t in window]
    if ends[0] * ends[1] <= 0.0 or min(abs(end) for end in ends) < SINGULAR_DELTA:
        raise FamilyConstructionError(
            f"T + k changes sign or vanishes on the window {window} "
            f"(T + k = {ends[0]:.6g} at the start, {ends[1]:.6g} at the end)."
        )

    inside_t = _rho_guard(rho)

    def inside(q: float, t: float) -> bool:
        return inside_t(t) and abs(coefficients.shifted(t)) >= SINGULAR_DELTA

    def v_parts(q, t):
        r, r1 = rho.eval(t), rho.eval(t, 1)
        lam, a = coefficients.scale(t), coefficients.rate(t)
        gamma, gamma_dot = coefficients.Gamma(t), coefficients.Gamma_dot(t)
        lam_dot = -a * lam
        q_bar = lam * q
        u0, u1, u2 = (U.eval(q_bar, n) for n in range(3))
        return {
            "V": gamma * q_bar**2 + u0 / r**2,
            "V_q": 2.0 * gamma * lam * lam * q + lam * u1 / r**2,
            "V_qq": 2.0 * gamma * lam * lam + lam * lam * u2 / r**2,
            "V_t": (gamma_dot - 2.0 * a * gamma) * q_bar**2
            - a * q_bar * u1 / r**2
            - 2.0 * r1 * u0 / r**3,
            "V_qt": 2.0 * gamma_dot * lam * lam * q
            + 4.0 * gamma * lam * lam_dot * q
            + (lam_dot * u1 + lam * u2 * lam_dot * q) / r**2
            - 2.0 * r1 * lam * u1 / r**3,
        }

    potential = PotentialSpec(
        value=lambda q, t: v_parts(q, t)["V"],
        d_q=lambda q, t: v_parts(q, t)["V_q"],
        d_qq=lambda q, t: v_parts(q, t)["V_qq"],
        d_t=lambda q, t: v_parts(q, t)["V_t"],
        guard=inside,
    )

    def c_parts(q, p, t):
        r, r1, r2, r3 = _derivatives(rho, t)
        shifted = coefficients.shifted(t)
        v = v_parts(q, t)
        numerator = r * v["V_q"] + r2 * q
        numerator_q = r * v["V_qq"] + r2
        numerator_t = r1 * v["V_q"] + r * v["V_qt"] + r3 * q
        p_bar = coefficients.p_bar(q, p, t)
        p_bar_q = -r1 - 1.0 / (r * shifted)
        p_bar_t = r1 * p - r2 * q + q * (r1 * shifted + 1.0 / r) / (r * shifted) ** 2
        return (
            r1 / r - numerator / p_bar,
            -(numerator_q * p_bar - numerator * p_bar_q) / p_bar**2,
            numerator * r / p_bar**2,
            r2 / r - r1**2 / r**2 - (numerator_t * p_bar - numerator * p_bar_t) / p_bar**2,
        )

    def c_guard(q, p, t):
        return inside(q, t) and abs(coefficients.p_bar(q, p, t)) >= SINGULAR_DELTA

    compat = ScalarField(
        value=lambda q, p, t: c_parts(q, p, t)[0],
        d_q=lambda q, p, t: c_parts(q, p, t)[1],
        d_p=lambda q, p, t: c_parts(q, p, t)[2],
        d_t=lambda q, p, t: c_parts(q, p, t)[3],
        guard=c_guard,
    )

    accumulator = numerics.AuxiliarySpec(
        name="S",
        rate=lambda t, values: coefficients.gamma_integrand(t, values["T"]),
        initial=coefficients.S,
    )

    def transform(x: PhaseState) -> TransformedState:
        return TransformedState(
            q_bar=coefficients.q_bar(x.q, x.t), p_bar=coefficients.p_bar(x.q, x.p, x.t)
        )

    return FamilyInstance(
        label=dt.FamilyTag.ABEL,
        potential=potential,
        compat=compat,
        aux={
            "T": lambda q, p, t: coefficients.T(t),
            "E": lambda q, p, t: coefficients.E(t),
            "Gamma": lambda q, p, t: coefficients.Gamma(t),
            "Q": lambda q, p, t: coefficients.Q(q, t),
            "q_bar": lambda q, p, t: coefficients.q_bar(q, t),
            "p_bar": coefficients.p_bar,
        },
        aux_odes=(time_auxiliary(rho), accumulator),
        transform=transform,
        window=window,
        parameters={"rho": rho, "k": float(k), "U": U, "coefficients": coefficients},
    )


def autonomous(U: SpaceProfile, window: Sequence[float] = DEFAULT_WINDOW) -> FamilyInstance:
    """
    Builds an autonomous potential V = U(q) with the energy as invariant and the
    compatible field C = -J_q/J_p obtained from it.
    """
    window = _check_window(window)
    invariant = energy_invariant(U)
    return FamilyInstance(
        label=dt.FamilyTag.INVERSE,
        potential=autonomous_potential(U),
        compat=compatible_from_invariant(invariant),
        invariant=invariant,
        characteristic=CharacteristicReduction(f=invariant, rate=lambda f, t: 0.0),
        window=window,
        parameters={"U": U},
    )


def solve_Q(
    F: SpaceProfile,
    rho: TimeFunction,
    sigma: TimeFunction,
    q: float,
    t: float,
    tol: float = ROOT_TOL,
) -> float:
    """
    Solves Q = F((q - sigma)/rho - Q T(t)) for Q by bracketed root finding.

    The search starts from the t = 0 value F((q - sigma)/rho) and expands
    outwards; the first sign change wins.

    Raises
    ------
    BracketError
        If no sign change is found.
    ConvergenceError
        If the root finder runs out of iterations.
    """
    T = inverse_square_integral(rho)(t)
    s = (q - sigma.eval(t)) / rho.eval(t)

    def residual(Q: float) -> float:
        return Q - F.eval(s - Q * T)

    start = float(F.eval(s))
    scale = max(1.0, abs(start))
    bracket = next(numerics.expand_brackets(residual, start, scale=scale), None)
    if bracket is None:
        raise BracketError(
            f"No sign change of the Q equation was found at (q, t) = ({q}, {t})."
        )
    _, lo, hi = bracket
    return numerics.find_root(residual, (lo, hi), tol=tol * scale)
