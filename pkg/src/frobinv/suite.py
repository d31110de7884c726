"""A module with the pipeline that builds a family from a scenario and runs its checks."""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import frobinv.datatypes as dt
from frobinv import families, numerics, processing, verify
from frobinv.errors import ContractError, DegenerateScanError
from frobinv.families import FamilyInstance
from frobinv.fields import PhaseState
from frobinv.funcat import CatalogFunction, SpaceProfile, TimeFunction

TIME_FUNCTIONS = ("rho", "sigma", "gamma", "force", "V0")
SPACE_FUNCTIONS = ("U", "W", "C2")


def build_functions(scenario: dt.ScenarioConfig) -> Dict[str, CatalogFunction]:
    """
    Creates the catalog functions of a scenario. Time functions (rho, sigma,
    gamma, force and V0) carry derivatives up to order 3, the spatial profiles
    (U, W and C2) up to order 2.
    """
    functions = {}
    for name, spec in scenario.functions.items():
        if name in TIME_FUNCTIONS:
            functions[name] = TimeFunction.from_spec(spec)
        elif name in SPACE_FUNCTIONS:
            functions[name] = SpaceProfile.from_spec(spec)
        else:
            logging.warning(f"The function '{name}' is not used by any family and was skipped.")
    return functions


def build_family(scenario: dt.ScenarioConfig) -> FamilyInstance:
    """
    Builds the family instance described by a scenario on its time window.

    Raises
    ------
    FamilyConstructionError
        If the parameter functions violate the preconditions of the family
        (rho too close to zero, T + k changing sign, ...).
    """
    fns = build_functions(scenario)
    window = (scenario.window.t_start, scenario.window.t_end)
    tag = scenario.family

    if tag == dt.FamilyTag.FORCED_OSCILLATOR:
        return families.forced_oscillator(fns["rho"], fns["force"], window, V0=fns.get("V0"))
    if tag == dt.FamilyTag.SARLET:
        return families.sarlet(
            fns["rho"],
            fns["sigma"],
            fns["gamma"],
            window,
            printed_quadratic_term=scenario.printed_quadratic_term,
            V0=fns.get("V0"),
        )
    if tag == dt.FamilyTag.QUADRATIC:
        return families.quadratic(fns["rho"], fns["sigma"], fns["U"], window, V0=fns.get("V0"))
    if tag == dt.FamilyTag.GIACOMINI:
        return families.giacomini(fns["C2"], fns["W"], window)
    if tag == dt.FamilyTag.ABEL:
        return families.abel_family(fns["rho"], scenario.k, fns["U"], window)
    return families.autonomous(fns["U"], window)


def _failed(name: str, error: Exception) -> dt.CheckResult:
    logging.warning(f"The {name} check could not be completed: {error}")
    return dt.CheckResult(name=name, passed=False, message=str(error))


@dataclass
class VerificationSuite:
    """
    A class to run the checks of a scenario and store their reports.

    The family is built when the suite is created, so construction errors
    surface before any check runs. Every check writes its table to the output
    directory and returns a CheckResult; the run is passed when all the
    enabled checks pass.

    Parameters
    ----------
    scenario
        The validated scenario (with any command-line overrides applied).
    output_dir
        The directory the reports are written to.
    threads
        The number of worker threads used by the scans and drift checks.
    """

    scenario: dt.ScenarioConfig
    output_dir: Path = Path("output")
    threads: int = 1
    family: FamilyInstance = field(init=False)

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        self.family = build_family(self.scenario)
        logging.info(f"Built the {self.family.label.value} family of '{self.scenario.name}'.")

    def _write(self, frame, file_name: str) -> str:
        processing.write_csv(frame, self.output_dir / file_name)
        return file_name

    def check_residual(self) -> dt.CheckResult:
        """Runs the basic equation residual scan on the scenario grid."""
        report = verify.residual_scan(
            self.family, self.scenario.grid, self.scenario.thresholds.residual, self.threads
        )
        return dt.CheckResult(
            name="residual",
            passed=report.passed,
            metrics=report.metrics(),
            artifacts=[self._write(report.table, "residual.csv")],
        )

    def initial_states(self) -> List[PhaseState]:
        """Returns the explicit and seeded random initial states of the scenario."""
        return verify.initial_states(
            self.family,
            self.scenario.grid,
            self.scenario.initial_conditions,
            self.scenario.seed,
        )

    def trajectory_start(self) -> PhaseState:
        """
        Returns the first explicit initial state, or a seeded random state
        inside the guard of the potential at the start of the window.
        """
        states = self.scenario.initial_conditions.states
        if states:
            return PhaseState(states[0].q, states[0].p, states[0].t)

        grid, t0 = self.scenario.grid, self.family.window[0]
        return verify.sample_states(
            lambda x: self.family.potential.inside(x.q, x.t),
            [(grid.q.min, grid.q.max), (grid.p.min, grid.p.max), (t0, t0)],
            count=1,
            seed=self.scenario.seed,
        )[0]

    def check_drift(self, inits: List[PhaseState]) -> dt.CheckResult:
        """Runs the invariant drift check from every initial state."""
        report = verify.drift_check(
            self.family,
            inits,
            self.scenario.window.t_end,
            self.scenario.integrator,
            self.scenario.thresholds.drift,
            self.threads,
        )
        return dt.CheckResult(
            name="drift",
            passed=report.passed,
            metrics=report.metrics(),
            artifacts=[self._write(report.table, "drift.csv")],
        )

    def check_riccati(self, init: PhaseState) -> dt.CheckResult:
        """Checks the characteristic reduction along a dense trajectory from init."""
        cfg = self.scenario.integrator.copy(update={"dense_output": True})
        traj = numerics.integrate(
            self.family.potential, init, self.scenario.window.t_end, cfg
        )
        report = verify.riccati_consistency(
            self.family, traj, self.scenario.thresholds.riccati
        )
        return dt.CheckResult(
            name="riccati",
            passed=report.passed,
            metrics=report.metrics(),
            artifacts=[self._write(report.table, "riccati.csv")],
        )

    def check_abel(self) -> dt.CheckResult:
        """Compares the field characteristics with the Abel equation at frozen t."""
        spec = self.scenario.abel_check
        t_fixed = spec.t_fixed if spec.t_fixed is not None else self.family.window[0]
        report = verify.abel_characteristic_check(
            self.family,
            t_fixed,
            (spec.qbar_min, spec.qbar_max),
            self.scenario.thresholds.abel,
            spec.pbar_starts,
        )
        return dt.CheckResult(
            name="abel",
            passed=report.passed,
            metrics=report.metrics(),
            artifacts=[
                self._write(report.table, "abel.csv"),
                self._write(report.paths, "abel_paths.csv"),
            ],
        )

    def check_inverse(self) -> List[dt.CheckResult]:
        """
        Runs the tangency scan of the family field and the inverse round trip
        C = -I_q/I_p on states sampled inside every guard.
        """
        fam = self.family
        sample = verify.family_sample(
            fam,
            self.scenario.grid,
            self.scenario.checks.inverse_samples,
            self.scenario.seed,
            predicate=lambda x: fam.inside(x) and fam.invariant_inside(x),
        )
        threshold = self.scenario.thresholds.inverse
        tangency = verify.tangency_scan(fam, sample, threshold, self.threads)
        roundtrip = verify.inverse_roundtrip(
            fam.potential, fam.invariant, sample, threshold, threads=self.threads
        )
        return [
            dt.CheckResult(
                name="tangency",
                passed=tangency.passed,
                metrics=tangency.metrics(),
                artifacts=[self._write(tangency.table, "tangency.csv")],
            ),
            dt.CheckResult(
                name="inverse",
                passed=roundtrip.passed,
                metrics=roundtrip.metrics(),
                artifacts=[self._write(roundtrip.table, "inverse.csv")],
            ),
        ]

    def _guarded(self, name: str, check: Callable[[], object]) -> List[dt.CheckResult]:
        try:
            result = check()
        except (DegenerateScanError, ContractError) as error:
            return [_failed(name, error)]
        return result if isinstance(result, list) else [result]

    def run_checks(self) -> List[dt.CheckResult]:
        """
        Runs every check that applies to the family and is enabled in the scenario:
        the residual scan always, the drift check when the family has an
        invariant, the characteristic check when it has a reduction, the Abel
        check for the Abel family and the inverse round trip on request.
        """
        fam, checks = self.family, self.scenario.checks
        results = self._guarded("residual", self.check_residual)

        inits: Optional[List[PhaseState]] = None
        if checks.drift and fam.invariant is not None:
            inits = self.initial_states()
            results += self._guarded("drift", lambda: self.check_drift(inits))
        if checks.riccati and fam.characteristic is not None:
            init = inits[0] if inits else self.trajectory_start()
            results += self._guarded("riccati", lambda: self.check_riccati(init))
        if checks.abel and fam.label == dt.FamilyTag.ABEL:
            results += self._guarded("abel", self.check_abel)
        if checks.inverse and fam.invariant is not None:
            results += self._guarded("inverse", self.check_inverse)
        return results

    def _finish(self, command: str, checks: List[dt.CheckResult], start: float) -> dt.RunResult:
        result = dt.RunResult(
            scenario=self.scenario.name,
            command=command,
            passed=bool(checks) and all(check.passed for check in checks),
            checks=checks,
            artifacts=[artifact for check in checks for artifact in check.artifacts],
            duration_s=time.perf_counter() - start,
        )
        processing.write_reports(result, self.output_dir)
        logging.info(f"{command} of '{self.scenario.name}' finished in {result.duration_s:.2f} s.")
        return result

    def verify(self) -> dt.RunResult:
        """Runs the verify pipeline and writes the reports and summaries."""
        start = time.perf_counter()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self._finish("verify", self.run_checks(), start)

    def scan(self) -> dt.RunResult:
        """Runs the residual scan alone."""
        start = time.perf_counter()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self._finish("scan", self._guarded("residual", self.check_residual), start)

    def trajectory(self) -> dt.RunResult:
        """
        Integrates one trajectory from the scenario start state to the end of
        the window and writes it with the invariant, its drift and the family
        auxiliaries.

        Raises
        ------
        DomainError
            If the start state lies outside the guard of the potential.
        """
        start = time.perf_counter()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        init = self.trajectory_start()
        traj = numerics.integrate(
            self.family.potential,
            init,
            self.scenario.window.t_end,
            self.scenario.integrator,
            aux=self.family.aux_odes,
        )
        frame = processing.trajectory_frame(self.family, traj)
        check = dt.CheckResult(
            name="trajectory",
            passed=True,
            metrics={
                "samples": len(traj),
                "accepted": traj.accepted,
                "rejected": traj.rejected,
                "guard_exit": int(traj.guard_exit),
                "t_final": float(traj.t[-1]),
            },
            artifacts=[self._write(frame, "trajectory.csv")],
        )
        return self._finish("trajectory", [check], start)
