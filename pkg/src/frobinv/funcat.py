"""A module with the catalog of parameter functions of one variable (rho, sigma, U, W, ...)."""
from dataclasses import dataclass, field
from typing import Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial

import frobinv.datatypes as dt
from frobinv.errors import ContractError, FamilyConstructionError

Scalar = Union[float, np.ndarray]

RHO_DELTA = 1e-3
GUARD_SAMPLES = 1024


def _as_output(x: Scalar, value: Scalar) -> Scalar:
    """Returns a float for scalar input and an array otherwise."""
    if np.ndim(x) == 0:
        return float(value)
    return np.broadcast_to(value, np.shape(x)).astype(float)


@dataclass(frozen=True)
class CatalogFunction:
    """
    A function of one variable from the closed catalog, with exact derivatives.

    Parameters
    ----------
    kind
        One of constant, polynomial, trigonometric or exponential.
    params
        The coefficients of the function: ``c`` for a constant,
        ``a0, a1, ..., an`` for a polynomial, ``a, b, omega, phi`` for
        ``a + b*cos(omega*x + phi)`` and ``a, lam`` for ``a*exp(lam*x)``.
    """

    kind: dt.FunctionKind
    params: Tuple[float, ...]
    _polys: Tuple[Polynomial, ...] = field(
        init=False, repr=False, compare=False, default=()
    )

    max_order = 3

    def __post_init__(self):
        kind = dt.FunctionKind(self.kind)
        params = tuple(float(value) for value in self.params)
        dt.check_param_count(kind, params)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", params)

        if kind == dt.FunctionKind.POLYNOMIAL:
            poly = Polynomial(params)
            polys = tuple(poly.deriv(m) for m in range(self.max_order + 1))
            object.__setattr__(self, "_polys", polys)

    @classmethod
    def from_spec(cls, spec: dt.FunctionSpec) -> "CatalogFunction":
        """Creates the catalog function described by a validated FunctionSpec."""
        return cls(kind=spec.kind, params=tuple(spec.params))

    @property
    def is_constant(self) -> bool:
        """Whether the function takes the same value everywhere."""
        if self.kind == dt.FunctionKind.CONSTANT:
            return True
        if self.kind == dt.FunctionKind.POLYNOMIAL:
            return all(coefficient == 0.0 for coefficient in self.params[1:])
        if self.kind == dt.FunctionKind.TRIGONOMETRIC:
            _, b, omega, _ = self.params
            return b == 0.0 or omega == 0.0
        a, lam = self.params
        return a == 0.0 or lam == 0.0

    def eval(self, x: Scalar, order: int = 0) -> Scalar:
        """
        Returns the order-th derivative of the function at x.

        Parameters
        ----------
        x
            The point (or array of points) where the function is evaluated.
        order
            The derivative order, from 0 to ``max_order``.

        Raises
        ------
        ContractError
            If the derivative order is not supported by this catalog member.
        """
        if not isinstance(order, (int, np.integer)) or not 0 <= order <= self.max_order:
            raise ContractError(
                f"Derivative order {order} is not supported "
                f"(maximum is {self.max_order})."
            )

        if self.kind == dt.FunctionKind.CONSTANT:
            return _as_output(x, self.params[0] if order == 0 else 0.0)

        if self.kind == dt.FunctionKind.POLYNOMIAL:
            return _as_output(x, self._polys[order](x))

        if self.kind == dt.FunctionKind.TRIGONOMETRIC:
            a, b, omega, phi = self.params
            phase = np.multiply(omega, x) + phi
            # d^n/dx^n cos(theta) cycles through cos, -sin, -cos, sin
            wave = (np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z), np.sin)[
                order % 4
            ]
            value = b * omega**order * wave(phase)
            if order == 0:
                value = a + value
            return _as_output(x, value)

        a, lam = self.params
        return _as_output(x, a * lam**order * np.exp(np.multiply(lam, x)))

    def __call__(self, x: Scalar) -> Scalar:
        return self.eval(x, 0)


class TimeFunction(CatalogFunction):
    """A parameter function of time (rho, sigma, gamma, F, V0) with derivatives up to order 3."""

    max_order = 3


class SpaceProfile(CatalogFunction):
    """A profile of a spatial-like argument (U, W, F(s), C2(V)) with derivatives up to order 2."""

    max_order = 2


def evaluate(fn: CatalogFunction, x: Scalar, order: int = 0) -> Scalar:
    """Returns the order-th derivative of a catalog function at x."""
    return fn.eval(x, order)


def check_nonzero(
    fn: TimeFunction,
    window: Sequence[float],
    delta: float = RHO_DELTA,
    samples: int = GUARD_SAMPLES,
    name: str = "rho",
) -> None:
    """
    Checks that a time function stays away from zero on a time window.

    Parameters
    ----------
    fn
        The function to be checked (usually rho).
    window
        The (start, end) time window of the scenario.
    delta
        The smallest admissible absolute value.
    samples
        The number of uniformly spaced sampling points.
    name
        The name of the function, used in the error message.

    Raises
    ------
    FamilyConstructionError
        When |fn(t)| < delta at any sampling point.
    """
    times = np.linspace(window[0], window[1], samples)
    values = np.abs(fn.eval(times))
    if np.min(values) < delta:
        worst = times[int(np.argmin(values))]
        raise FamilyConstructionError(
            f"{name} comes closer than {delta} to zero at t={worst:.6g} "
            f"on the window [{window[0]}, {window[1]}]."
        )
