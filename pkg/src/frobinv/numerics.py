"""
A module with the numerical substrate of frobinv: adaptive integration of the
canonical equations, adaptive quadrature and bracketed root finding.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate as spi
from scipy import optimize

import frobinv.datatypes as dt
from frobinv.errors import (
    BracketError,
    BudgetError,
    ContractError,
    ConvergenceError,
    DomainError,
    StiffnessError,
)
from frobinv.fields import PhaseState, PotentialSpec

ROOT_RTOL = 4.0 * np.finfo(float).eps
ROOT_MAXITER = 200
BRACKET_LEVELS = 31
BRACKET_FIRST_EXPONENT = -10
GUARD_STEP_FLOOR = 1e-10


@dataclass(frozen=True)
class AuxiliarySpec:
    """
    An auxiliary quantity co-integrated with a trajectory.

    Parameters
    ----------
    name
        The column name of the auxiliary in the trajectory.
    rate
        The derivative of the auxiliary as a function of time and of the current
        values of all auxiliaries (keyed by name).
    initial
        The value of the auxiliary at the initial time of the trajectory.
    """

    name: str
    rate: Callable[[float, Mapping[str, float]], float]
    initial: Callable[[float], float]


@dataclass
class Trajectory:
    """A solution curve of the canonical equations sampled at the accepted steps."""

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    aux: Dict[str, np.ndarray] = field(default_factory=dict)
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    accepted: int = 0
    rejected: int = 0
    guard_exit: bool = False
    evaluations: int = 0
    dense: Optional[spi.OdeSolution] = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def samples(self) -> List[PhaseState]:
        return [PhaseState(q, p, t) for q, p, t in zip(self.q, self.p, self.t)]

    @property
    def final(self) -> PhaseState:
        return PhaseState(self.q[-1], self.p[-1], self.t[-1])

    @property
    def tolerances(self) -> Tuple[float, float]:
        return self.rel_tol, self.abs_tol

    def to_frame(self) -> pd.DataFrame:
        """Returns the samples as a DataFrame with columns t, q, p and one column per auxiliary."""
        data = {"t": self.t, "q": self.q, "p": self.p}
        data.update(self.aux)
        return pd.DataFrame(data)


class _GuardExit(Exception):
    pass


def integrate(
    V: PotentialSpec,
    init: PhaseState,
    t_end: float,
    cfg: dt.IntegratorConfig = dt.IntegratorConfig(),
    aux: Sequence[AuxiliarySpec] = (),
) -> Trajectory:
    """
    Integrates the canonical equations q' = p, p' = -V_q with an adaptive
    Dormand-Prince 8(5,3) pair.

    Parameters
    ----------
    V
        The potential of the system.
    init
        The initial state, which must lie inside the guard of V.
    t_end
        The final time (larger than init.t).
    cfg
        The integrator tolerances and step budget.
    aux
        Auxiliary quantities to co-integrate alongside (q, p).

    Returns
    -------
    Trajectory
        The states at every accepted step. When the solution leaves the guard
        of V the integration stops cleanly and ``guard_exit`` is set.

    Raises
    ------
    DomainError
        If init lies outside the guard of V.
    StiffnessError
        If the step size underflows.
    BudgetError
        If more than ``cfg.max_steps`` steps are needed.
    """
    if not t_end > init.t:
        raise ContractError(f"t_end={t_end} must be larger than the initial time {init.t}.")
    if not V.inside(init.q, init.t):
        raise DomainError(f"The initial state {init} lies outside the guard of the potential.")

    names = [spec.name for spec in aux]

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        if not V.inside(y[0], t):
            raise _GuardExit
        try:
            force = -V.d_q(y[0], t)
        except DomainError:
            raise _GuardExit
        derivative = [y[1], force]
        if aux:
            values = dict(zip(names, y[2:]))
            derivative.extend(spec.rate(t, values) for spec in aux)
        return np.asarray(derivative, dtype=float)

    y0 = np.asarray([init.q, init.p] + [spec.initial(init.t) for spec in aux], dtype=float)
    times, states, interpolants = [init.t], [y0], []
    accepted, guard_exit = 0, False
    try:
        solver = spi.DOP853(
            rhs,
            init.t,
            y0,
            t_bound=t_end,
            rtol=cfg.rel_tol,
            atol=cfg.abs_tol,
            max_step=cfg.max_step,
        )
    except _GuardExit:
        logging.info(f"The trajectory from {init} starts on the edge of the guard.")
        return Trajectory(
            t=np.asarray(times),
            q=y0[:1],
            p=y0[1:2],
            aux={name: y0[2 + i : 3 + i] for i, name in enumerate(names)},
            rel_tol=cfg.rel_tol,
            abs_tol=cfg.abs_tol,
            guard_exit=True,
        )

    rejected = 0
    while solver.status == "running":
        if accepted >= cfg.max_steps:
            raise BudgetError(
                f"The integration needed more than {cfg.max_steps} steps "
                f"(stopped at t={solver.t:.6g})."
            )
        try:
            evaluations, message = _attempt_step(solver)
        except _GuardExit:
            guard_exit = True
            break
        if solver.status == "failed":
            raise StiffnessError(f"The integration failed at t={solver.t:.6g}: {message}")
        # each attempt, accepted or not, evaluates every stage once
        rejected += max(0, evaluations // solver.n_stages - 1)

        if not V.inside(solver.y[0], solver.t):
            guard_exit = True
            break
        accepted += 1
        times.append(solver.t)
        states.append(solver.y.copy())
        if cfg.dense_output:
            interpolants.append(solver.dense_output())

    if guard_exit:
        logging.info(f"The trajectory from {init} left the guard at t={times[-1]:.6g}.")

    values = np.asarray(states)
    return Trajectory(
        t=np.asarray(times),
        q=values[:, 0],
        p=values[:, 1],
        aux={name: values[:, 2 + i] for i, name in enumerate(names)},
        rel_tol=cfg.rel_tol,
        abs_tol=cfg.abs_tol,
        accepted=accepted,
        rejected=rejected,
        guard_exit=guard_exit,
        evaluations=solver.nfev,
        dense=spi.OdeSolution(times, interpolants) if interpolants else None,
    )


def _attempt_step(solver: spi.DOP853) -> Tuple[int, Optional[str]]:
    """
    Advances the solver by one step and returns the number of right-hand side
    evaluations it took.

    A step whose stages leave the guard is retried with half the step size
    until it fits or the step size reaches the floor, so guard exits are
    located to within that floor.
    """
    while True:
        before = solver.nfev
        try:
            message = solver.step()
        except _GuardExit:
            floor = GUARD_STEP_FLOOR * max(1.0, abs(solver.t))
            if solver.h_abs <= floor:
                raise
            solver.h_abs = max(0.5 * solver.h_abs, floor)
            continue
        return solver.nfev - before, message


def quad(fn: Callable[[float], float], a: float, b: float, tol: float = 1e-10) -> float:
    """
    Returns the adaptive Gauss-Kronrod estimate of the integral of fn over [a, b].

    Raises
    ------
    ConvergenceError
        If the quadrature flags a problem and its error estimate exceeds tol.
    """
    if a == b:
        return 0.0
    result = spi.quad(fn, a, b, epsabs=tol, epsrel=tol, full_output=1, limit=200)
    value, error = result[0], result[1]
    if len(result) > 3 and error > tol * max(1.0, abs(value)):
        raise ConvergenceError(
            f"The quadrature over [{a}, {b}] did not converge: {result[3]}"
        )
    return float(value)


def find_root(
    fn: Callable[[float], float], bracket: Tuple[float, float], tol: float = 1e-12
) -> float:
    """
    Finds a root of fn inside a sign-changing bracket with Brent's method.

    Parameters
    ----------
    fn
        The function whose root is sought.
    bracket
        The (lo, hi) interval with fn(lo)*fn(hi) <= 0.
    tol
        The absolute width of the final interval.

    Raises
    ------
    BracketError
        If fn does not change sign over the bracket.
    ConvergenceError
        If Brent's method runs out of iterations.
    """
    lo, hi = sorted(bracket)
    f_lo, f_hi = fn(lo), fn(hi)
    if f_lo == 0.0:
        return float(lo)
    if f_hi == 0.0:
        return float(hi)
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)) or f_lo * f_hi > 0.0:
        raise BracketError(f"The function does not change sign over [{lo}, {hi}].")

    root, status = optimize.brentq(
        fn,
        lo,
        hi,
        xtol=tol,
        rtol=ROOT_RTOL,
        maxiter=ROOT_MAXITER,
        full_output=True,
        disp=False,
    )
    if not status.converged:
        raise ConvergenceError(
            f"The root search over [{lo}, {hi}] stopped after {status.iterations} iterations."
        )
    return float(root)


def expand_brackets(
    fn: Callable[[float], float],
    x0: float,
    scale: float = 1.0,
    levels: int = BRACKET_LEVELS,
    first_exponent: int = BRACKET_FIRST_EXPONENT,
) -> Iterator[Tuple[int, float, float]]:
    """
    Searches outwards from x0 for sign changes of fn.

    The half-width grows geometrically as scale*2**(first_exponent + j) for
    j = 0, ..., levels - 1. Level 0 tests the central interval and every later
    level tests the two newly covered intervals on either side.

    Yields
    ------
    Tuple[int, float, float]
        The level and the (lo, hi) ends of each sign-changing interval, in
        order of increasing distance from x0.
    """
    if scale <= 0.0:
        raise ContractError("The bracket scale must be positive.")

    def value(x: float) -> float:
        try:
            result = fn(x)
        except (DomainError, ArithmeticError):
            return math.nan
        return result

    width = scale * 2.0**first_exponent
    left, right = x0 - width, x0 + width
    f_left, f_right = value(left), value(right)
    if f_left * f_right <= 0.0:
        yield 0, left, right

    for level in range(1, levels):
        width = scale * 2.0 ** (first_exponent + level)
        outer_left, outer_right = x0 - width, x0 + width
        f_outer_left, f_outer_right = value(outer_left), value(outer_right)
        if f_outer_left == 0.0 or f_outer_left * f_left < 0.0:
            yield level, outer_left, left
        if f_outer_right == 0.0 or f_outer_right * f_right < 0.0:
            yield level, right, outer_right
        left, f_left = outer_left, f_outer_left
        right, f_right = outer_right, f_outer_right
