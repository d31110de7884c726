"""
A module that turns family instances into pass/fail evidence: basic equation
residual scans, invariant drift along trajectories, characteristic reductions
and the inverse construction C = -J_q/J_p.
"""
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

import frobinv.datatypes as dt
from frobinv import numerics
from frobinv.errors import (
    ContractError,
    DegenerateScanError,
    DomainError,
    UnsupportedCheckError,
)
from frobinv.families import AbelCoefficients, FamilyInstance
from frobinv.fields import (
    DELTA_P,
    PhaseState,
    PotentialSpec,
    ScalarField,
    apply_v,
    basic_equation_residual,
    compatible_from_invariant,
    finite_difference_partials,
)

FD_STEP = 1e-5
FD_THRESHOLD = 1e-4
DERIVATIVE_STEP = 1e-2
DERIVATIVE_POINTS = 200
EXIT_MARGIN_STEPS = 50
MAX_RETRIES = 100_000
ABEL_POINTS = 50
QUANTILES = (0.5, 0.9, 0.99)

T = TypeVar("T")
R = TypeVar("R")


def _ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
    """
    Maps fn over items, in parallel when threads > 1, keeping the input order.

    The workers are threads. Family fields are Python closures, so most of the
    work holds the GIL and extra threads only overlap the numpy and scipy calls
    that release it. Closures cannot be pickled, which rules out a process pool.
    """
    if threads <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(fn, items))


def _axis(spec: dt.AxisSpec) -> np.ndarray:
    if spec.count == 1:
        return np.array([spec.min])
    return np.linspace(spec.min, spec.max, spec.count)


def grid_states(grid: dt.GridSpec) -> List[PhaseState]:
    """Returns the points of a grid in q-major, then p, then t order."""
    return [
        PhaseState(q, p, t)
        for q, p, t in itertools.product(_axis(grid.q), _axis(grid.p), _axis(grid.t))
    ]


@dataclass
class ResidualReport:
    """
    The basic equation residual on a grid.

    ``table`` holds one row per grid point (q, p, t, residual, included) in grid
    order; excluded points carry a NaN residual.
    """

    grid: dt.GridSpec
    table: pd.DataFrame
    threshold: float

    @property
    def included(self) -> int:
        return int(self.table["included"].sum())

    @property
    def excluded(self) -> int:
        return len(self.table) - self.included

    @property
    def residuals(self) -> pd.Series:
        return self.table.loc[self.table["included"] == 1, "residual"].abs()

    @property
    def max_abs(self) -> float:
        return float(self.residuals.max())

    @property
    def mean_abs(self) -> float:
        return float(self.residuals.mean())

    @property
    def quantiles(self) -> Dict[float, float]:
        return {level: float(self.residuals.quantile(level)) for level in QUANTILES}

    @property
    def passed(self) -> bool:
        return self.max_abs < self.threshold

    def metrics(self) -> Dict[str, float]:
        metrics = {
            "max_abs": self.max_abs,
            "mean_abs": self.mean_abs,
            "included": self.included,
            "excluded": self.excluded,
            "threshold": self.threshold,
        }
        metrics.update({f"q{int(level * 100)}": value for level, value in self.quantiles.items()})
        return metrics


def residual_scan(
    fam: FamilyInstance,
    grid: dt.GridSpec,
    threshold: float,
    threads: int = 1,
) -> ResidualReport:
    """
    Evaluates the basic equation residual u(C) + C^2 + V_qq of a family on a grid.

    Points outside the guards of the potential or the field are excluded.

    Raises
    ------
    DegenerateScanError
        If every grid point is excluded.
    """

    def evaluate(x: PhaseState) -> Tuple[float, int]:
        if not fam.inside(x):
            return math.nan, 0
        try:
            return basic_equation_residual(fam.potential, fam.compat, x), 1
        except DomainError:
            return math.nan, 0

    states = grid_states(grid)
    results = _ordered_map(evaluate, states, threads)
    table = pd.DataFrame(
        {
            "q": [x.q for x in states],
            "p": [x.p for x in states],
            "t": [x.t for x in states],
            "residual": [residual for residual, _ in results],
            "included": [included for _, included in results],
        }
    )
    if table["included"].sum() == 0:
        raise DegenerateScanError(
            f"All {len(table)} grid points lie outside the guards of the {fam.label.value} family."
        )

    report = ResidualReport(grid=grid, table=table, threshold=threshold)
    logging.info(
        f"Residual scan of {fam.label.value}: max {report.max_abs:.3e} over "
        f"{report.included} points ({report.excluded} excluded)."
    )
    return report


def finite_difference_residual(fam: FamilyInstance, x: PhaseState, h: float = FD_STEP) -> float:
    """
    Returns the basic equation residual with every derivative taken by central
    finite differences of the values of V and C.
    """
    V, C = fam.potential, fam.compat
    c_q, c_p, c_t = finite_difference_partials(
        ScalarField.from_function(C.value), x, h
    )
    v_minus, v_zero, v_plus = (V.value(x.q + s * h, x.t) for s in (-1, 0, 1))
    v_q = (v_plus - v_minus) / (2.0 * h)
    v_qq = (v_plus - 2.0 * v_zero + v_minus) / h**2
    c = C.value(x.q, x.p, x.t)
    return c_t + x.p * c_q - v_q * c_p + c * c + v_qq


def sample_states(
    predicate: Callable[[PhaseState], bool],
    bounds: Sequence[Tuple[float, float]],
    count: int,
    seed: int = 42,
    max_retries: int = MAX_RETRIES,
) -> List[PhaseState]:
    """
    Draws uniformly distributed states that satisfy a predicate.

    Parameters
    ----------
    predicate
        The acceptance test (usually a guard).
    bounds
        The (min, max) ranges of q, p and t.
    count
        The number of states to return.
    seed
        The seed of the random generator.
    max_retries
        The number of rejected draws after which sampling gives up.

    Raises
    ------
    DegenerateScanError
        If more than max_retries draws are rejected.
    """
    rng = np.random.default_rng(seed)
    lows = np.array([low for low, _ in bounds], dtype=float)
    highs = np.array([high for _, high in bounds], dtype=float)
    states, rejected = [], 0
    while len(states) < count:
        q, p, t = rng.uniform(lows, highs)
        x = PhaseState(q, p, t)
        if predicate(x):
            states.append(x)
            continue
        rejected += 1
        if rejected > max_retries:
            raise DegenerateScanError(
                f"Only {len(states)} of {count} states were found after {max_retries} rejections."
            )
    return states


@dataclass
class DriftReport:
    """
    The relative drift |I(t) - I(t0)|/max(1, |I(t0)|) of an invariant along
    trajectories. ``table`` has the columns trajectory, t, I and drift_rel.

    Samples where the invariant is undefined carry NaN; a single one makes the
    worst drift NaN and fails the check.
    """

    table: pd.DataFrame
    threshold: float
    guard_exits: int = 0

    @property
    def max_drift(self) -> pd.Series:
        return self.table.groupby("trajectory")["drift_rel"].agg(
            lambda drift: drift.max(skipna=False)
        )

    @property
    def worst(self) -> float:
        return float(self.max_drift.max(skipna=False))

    @property
    def undefined(self) -> int:
        return int(self.table["drift_rel"].isna().sum())

    @property
    def passed(self) -> bool:
        return self.undefined == 0 and self.worst < self.threshold

    def metrics(self) -> Dict[str, float]:
        return {
            "max_drift": self.worst,
            "trajectories": int(self.table["trajectory"].nunique()),
            "guard_exits": self.guard_exits,
            "undefined": self.undefined,
            "threshold": self.threshold,
        }


def _guarded_value(field: ScalarField, x: PhaseState) -> float:
    if not field.inside(x):
        return math.nan
    try:
        return float(field(x))
    except (DomainError, ArithmeticError):
        return math.nan


def invariant_series(
    invariant: ScalarField, traj: numerics.Trajectory
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns I and its relative drift at every sample of a trajectory.

    Both are NaN at samples outside the guard of the invariant, and the whole
    drift is NaN when the invariant is undefined at the first sample.
    """
    values = np.array([_guarded_value(invariant, x) for x in traj.samples])
    drift = np.abs(values - values[0]) / max(1.0, abs(values[0]))
    return values, drift


def drift_check(
    fam: FamilyInstance,
    inits: Sequence[PhaseState],
    t_end: float,
    cfg: dt.IntegratorConfig,
    threshold: float,
    threads: int = 1,
) -> DriftReport:
    """
    Integrates every initial state and records the drift of the family invariant.

    Raises
    ------
    UnsupportedCheckError
        If the family has no closed-form invariant.
    DegenerateScanError
        If there is no initial state to integrate.
    """
    if fam.invariant is None:
        raise UnsupportedCheckError(
            f"The {fam.label.value} family has no closed-form invariant; "
            "use the residual scan instead."
        )
    if not inits:
        raise DegenerateScanError("The drift check has no initial state inside the guards.")

    def run(item: Tuple[int, PhaseState]) -> Tuple[pd.DataFrame, bool]:
        index, init = item
        traj = numerics.integrate(fam.potential, init, t_end, cfg)
        values, drift = invariant_series(fam.invariant, traj)
        frame = pd.DataFrame(
            {"trajectory": index, "t": traj.t, "I": values, "drift_rel": drift}
        )
        return frame, traj.guard_exit

    results = _ordered_map(run, list(enumerate(inits)), threads)
    table = pd.concat([frame for frame, _ in results], ignore_index=True)
    report = DriftReport(
        table=table,
        threshold=threshold,
        guard_exits=sum(exited for _, exited in results),
    )
    logging.info(
        f"Drift check of {fam.label.value}: worst drift {report.worst:.3e} "
        f"over {len(inits)} trajectories."
    )
    if report.undefined:
        logging.warning(
            f"The invariant of {fam.label.value} is undefined at {report.undefined} "
            "trajectory samples."
        )
    return report


@dataclass
class CharacteristicReport:
    """
    The pointwise residual |df/dt - Lambda(f, t)| along a trajectory.

    ``table`` has the columns t, f, dfdt, rate, residual and scaled, where
    scaled is the residual over 1 + f^2 + |Lambda|. The check passes on the
    scaled residual.
    """

    table: pd.DataFrame
    threshold: float
    truncated: bool = False

    @property
    def max_abs(self) -> float:
        return float(self.table["residual"].max(skipna=False))

    @property
    def max_scaled(self) -> float:
        return float(self.table["scaled"].max(skipna=False))

    @property
    def passed(self) -> bool:
        return self.max_scaled < self.threshold

    def metrics(self) -> Dict[str, float]:
        return {
            "max_abs": self.max_abs,
            "max_scaled": self.max_scaled,
            "points": len(self.table),
            "truncated": int(self.truncated),
            "threshold": self.threshold,
        }


def riccati_consistency(
    fam: FamilyInstance,
    traj: numerics.Trajectory,
    threshold: float,
    h: float = DERIVATIVE_STEP,
    points: int = DERIVATIVE_POINTS,
) -> CharacteristicReport:
    """
    Checks that a characteristic surface f obeys df/dt = Lambda(f, t) along a
    trajectory.

    df/dt is estimated with a five-point central difference of step h on the
    dense output of the trajectory, at interior points away from both ends.
    When the trajectory left a guard, stencils closer than EXIT_MARGIN_STEPS*h
    to the exit are dropped, since f is singular there.

    Raises
    ------
    UnsupportedCheckError
        If the family has no characteristic reduction.
    ContractError
        If the trajectory has no dense output or is too short for the stencil.
    """
    reduction = fam.characteristic
    if reduction is None:
        raise UnsupportedCheckError(
            f"The {fam.label.value} family has no characteristic reduction."
        )
    if traj.dense is None:
        raise ContractError("The characteristic check needs a trajectory with dense output.")

    start, end = traj.t[0] + 2.0 * h, traj.t[-1] - 2.0 * h
    if traj.guard_exit:
        end -= EXIT_MARGIN_STEPS * h
    if not end > start:
        raise ContractError(
            f"The trajectory spans [{traj.t[0]}, {traj.t[-1]}], too short for a step of {h}."
        )

    def f_at(t: float) -> float:
        q, p = traj.dense(t)[:2]
        return reduction.f.value(q, p, t)

    times = np.linspace(start, end, points)
    f_values = np.array([f_at(t) for t in times])
    derivative = np.array(
        [
            (f_at(t - 2 * h) - 8.0 * f_at(t - h) + 8.0 * f_at(t + h) - f_at(t + 2 * h))
            / (12.0 * h)
            for t in times
        ]
    )
    rate = np.array([reduction.rate(f, t) for f, t in zip(f_values, times)])
    residual = np.abs(derivative - rate)
    table = pd.DataFrame(
        {
            "t": times,
            reduction.name: f_values,
            "dfdt": derivative,
            "rate": rate,
            "residual": residual,
            "scaled": residual / (1.0 + f_values**2 + np.abs(rate)),
        }
    )
    if traj.guard_exit:
        logging.info(
            f"The characteristic check of {fam.label.value} uses a truncated "
            f"trajectory ending at t={traj.t[-1]:.6g}."
        )
    return CharacteristicReport(table=table, threshold=threshold, truncated=traj.guard_exit)


@dataclass
class AbelReport:
    """
    The agreement between the characteristics of the compatible field and the
    Abel equation at frozen t.

    ``table`` compares pointwise slopes (q_bar, p_bar, traced, closed_form,
    residual) and ``paths`` compares whole characteristic curves (start, q_bar,
    p_bar_field, p_bar_abel, error).
    """

    table: pd.DataFrame
    paths: pd.DataFrame
    threshold: float
    t_fixed: float
    excluded: int = 0

    @property
    def max_slope_error(self) -> float:
        return float(self.table["residual"].max())

    @property
    def max_path_error(self) -> float:
        if self.paths.empty:
            return 0.0
        return float(self.paths["error"].max())

    @property
    def passed(self) -> bool:
        return max(self.max_slope_error, self.max_path_error) < self.threshold

    def metrics(self) -> Dict[str, float]:
        return {
            "max_slope_error": self.max_slope_error,
            "max_path_error": self.max_path_error,
            "excluded": self.excluded,
            "t_fixed": self.t_fixed,
            "threshold": self.threshold,
        }


def field_slope(fam: FamilyInstance, q_bar: float, p_bar: float, t: float) -> float:
    """
    Returns dp_bar/dq_bar traced from the compatible field: with dp/dq = C at
    frozen t, dp_bar/dq_bar = (rho C - rho' - 1/(rho (T + k))) rho E.
    """
    coefficients: AbelCoefficients = fam.parameters["coefficients"]
    rho = coefficients.rho
    r, r1 = rho.eval(t), rho.eval(t, 1)
    q, p = coefficients.to_phase(q_bar, p_bar, t)
    c = fam.compat.value(q, p, t)
    return (r * c - r1 - 1.0 / (r * coefficients.shifted(t))) / coefficients.scale(t)


def _trace_paths(
    fam: FamilyInstance,
    coefficients: AbelCoefficients,
    t: float,
    qbar_range: Tuple[float, float],
    p_bar_start: float,
) -> pd.DataFrame:
    q_bars = np.linspace(qbar_range[0], qbar_range[1], ABEL_POINTS)
    margin = DELTA_P

    def abel(q_bar, y):
        return [coefficients.abel_slope(q_bar, y[0], t)]

    def abel_edge(q_bar, y):
        return abs(y[0]) - margin

    abel_edge.terminal = True

    _, p_start = coefficients.to_phase(q_bars[0], p_bar_start, t)
    qs = q_bars / coefficients.scale(t)

    def characteristic(q, y):
        return [fam.compat.value(q, y[0], t)]

    def field_edge(q, y):
        return abs(coefficients.p_bar(q, y[0], t)) - margin

    field_edge.terminal = True

    options = dict(method="DOP853", rtol=1e-11, atol=1e-12)
    along_abel = solve_ivp(
        abel,
        (q_bars[0], q_bars[-1]),
        [p_bar_start],
        t_eval=q_bars,
        events=abel_edge,
        **options,
    )
    along_field = solve_ivp(
        characteristic,
        (qs[0], qs[-1]),
        [p_start],
        t_eval=qs,
        events=field_edge,
        **options,
    )

    n = min(len(along_abel.t), len(along_field.t))
    p_bar_field = np.array(
        [coefficients.p_bar(q, p, t) for q, p in zip(along_field.t[:n], along_field.y[0, :n])]
    )
    p_bar_abel = along_abel.y[0, :n]
    return pd.DataFrame(
        {
            "start": p_bar_start,
            "q_bar": q_bars[:n],
            "p_bar_field": p_bar_field,
            "p_bar_abel": p_bar_abel,
            "error": np.abs(p_bar_field - p_bar_abel),
        }
    )


def abel_characteristic_check(
    fam: FamilyInstance,
    t_fixed: float,
    qbar_range: Tuple[float, float],
    threshold: float,
    p_bar_starts: Sequence[float] = (1.0, 2.0),
) -> AbelReport:
    """
    Compares the characteristics of the compatible field at frozen t with the
    Abel equation dp_bar/dq_bar = -[E p_bar/(T + k) + rho^3 rho'' E^2 q_bar
    + 2 rho^2 Gamma q_bar + U'(q_bar)]/p_bar.

    Slopes are compared pointwise on a (q_bar, p_bar) grid and whole curves are
    traced from each p_bar start on both sides. Points within the guard margin
    of p_bar = 0 are excluded.

    Raises
    ------
    UnsupportedCheckError
        If the family is not the Abel family.
    """
    if fam.label != dt.FamilyTag.ABEL:
        raise UnsupportedCheckError(
            f"The abel characteristic check does not apply to the {fam.label.value} family."
        )
    coefficients: AbelCoefficients = fam.parameters["coefficients"]

    rows, excluded = [], 0
    for q_bar, p_bar in itertools.product(
        np.linspace(qbar_range[0], qbar_range[1], ABEL_POINTS), p_bar_starts
    ):
        q, p = coefficients.to_phase(q_bar, p_bar, t_fixed)
        if not fam.inside(PhaseState(q, p, t_fixed)):
            excluded += 1
            continue
        traced = field_slope(fam, q_bar, p_bar, t_fixed)
        closed = coefficients.abel_slope(q_bar, p_bar, t_fixed)
        rows.append((q_bar, p_bar, traced, closed, abs(traced - closed)))

    if not rows:
        raise DegenerateScanError("Every abel check point lies within the guard margin.")
    table = pd.DataFrame(rows, columns=["q_bar", "p_bar", "traced", "closed_form", "residual"])
    paths = pd.concat(
        [
            _trace_paths(fam, coefficients, t_fixed, qbar_range, start)
            for start in p_bar_starts
            if abs(start) >= DELTA_P
        ],
        ignore_index=True,
    )
    report = AbelReport(
        table=table, paths=paths, threshold=threshold, t_fixed=t_fixed, excluded=excluded
    )
    logging.info(
        f"Abel check at t={t_fixed}: slope error {report.max_slope_error:.3e}, "
        f"path error {report.max_path_error:.3e}."
    )
    return report


@dataclass
class InverseReport:
    """
    The basic equation residual and the tangency v(J) of a compatible field at
    sampled states. ``table`` has the columns q, p, t, residual, tangency and
    included.
    """

    table: pd.DataFrame
    threshold: float

    @property
    def included(self) -> int:
        return int(self.table["included"].sum())

    @property
    def excluded(self) -> int:
        return len(self.table) - self.included

    def _max(self, column: str) -> float:
        return float(self.table.loc[self.table["included"] == 1, column].abs().max())

    @property
    def max_residual(self) -> float:
        return self._max("residual")

    @property
    def max_tangency(self) -> float:
        return self._max("tangency")

    @property
    def passed(self) -> bool:
        return max(self.max_residual, self.max_tangency) < self.threshold

    def metrics(self) -> Dict[str, float]:
        return {
            "max_residual": self.max_residual,
            "max_tangency": self.max_tangency,
            "included": self.included,
            "excluded": self.excluded,
            "threshold": self.threshold,
        }


def _pair_scan(
    V: PotentialSpec,
    C: ScalarField,
    J: ScalarField,
    sample: Sequence[PhaseState],
    threshold: float,
    threads: int,
) -> InverseReport:
    def evaluate(x: PhaseState) -> Tuple[float, float, int]:
        if not (V.inside(x.q, x.t) and C.inside(x) and J.inside(x)):
            return math.nan, math.nan, 0
        try:
            return basic_equation_residual(V, C, x), apply_v(C, J, x), 1
        except DomainError:
            return math.nan, math.nan, 0

    results = _ordered_map(evaluate, list(sample), threads)
    table = pd.DataFrame(
        {
            "q": [x.q for x in sample],
            "p": [x.p for x in sample],
            "t": [x.t for x in sample],
            "residual": [row[0] for row in results],
            "tangency": [row[1] for row in results],
            "included": [row[2] for row in results],
        }
    )
    if table["included"].sum() == 0:
        raise DegenerateScanError(f"All {len(table)} samples lie outside the guards.")
    return InverseReport(table=table, threshold=threshold)


def inverse_roundtrip(
    V: PotentialSpec,
    J: ScalarField,
    sample: Sequence[PhaseState],
    threshold: float,
    delta_p: float = DELTA_P,
    threads: int = 1,
) -> InverseReport:
    """
    Builds C = -J_q/J_p from an invariant of V and reports the basic equation
    residual and the tangency v(J) at the sampled states.

    Raises
    ------
    DegenerateScanError
        If every sample lies outside the guards.
    """
    C = compatible_from_invariant(J, delta_p)
    report = _pair_scan(V, C, J, sample, threshold, threads)
    logging.info(
        f"Inverse round trip: residual {report.max_residual:.3e}, "
        f"tangency {report.max_tangency:.3e}."
    )
    return report


def tangency_scan(
    fam: FamilyInstance,
    sample: Sequence[PhaseState],
    threshold: float,
    threads: int = 1,
) -> InverseReport:
    """
    Reports the residual of the family's own field and its tangency v(I) to the
    family invariant at the sampled states.

    Raises
    ------
    UnsupportedCheckError
        If the family has no closed-form invariant.
    """
    if fam.invariant is None:
        raise UnsupportedCheckError(
            f"The {fam.label.value} family has no closed-form invariant."
        )
    return _pair_scan(fam.potential, fam.compat, fam.invariant, sample, threshold, threads)


def family_sample(
    fam: FamilyInstance,
    grid: dt.GridSpec,
    count: int,
    seed: int,
    predicate: Optional[Callable[[PhaseState], bool]] = None,
) -> List[PhaseState]:
    """Samples states inside the ranges of a grid that satisfy the guards of a family."""
    bounds = [(axis.min, axis.max) for axis in (grid.q, grid.p, grid.t)]
    return sample_states(predicate or fam.inside, bounds, count, seed)


def initial_states(
    fam: FamilyInstance,
    grid: dt.GridSpec,
    conditions: dt.InitialConditions,
    seed: int,
) -> List[PhaseState]:
    """
    Returns the initial states of a drift check: the explicit states of the
    scenario followed by seeded random states at the start of the window.

    Explicit states outside the domain of the invariant are dropped with a
    warning.
    """
    explicit = []
    for state in conditions.states:
        x = PhaseState(state.q, state.p, state.t)
        if fam.invariant_inside(x):
            explicit.append(x)
        else:
            logging.warning(f"The initial state {x} lies outside the domain of the invariant.")
    if conditions.count == 0:
        return explicit
    t0 = fam.window[0]
    bounds = [(grid.q.min, grid.q.max), (grid.p.min, grid.p.max), (t0, t0)]
    return explicit + sample_states(fam.invariant_inside, bounds, conditions.count, seed)
