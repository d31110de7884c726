"""A module to turn trajectories and check reports into tables and report files."""
import logging
import math
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

import frobinv.datatypes as dt
from frobinv import numerics, verify
from frobinv.errors import DomainError
from frobinv.families import FamilyInstance

FLOAT_FORMAT = "%.17g"
SUMMARY_FILE = "summary.txt"
RESULT_FILE = "result.json"


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    """
    Writes a table with a header row, comma separators and 17 significant digits,
    so that every double is stored losslessly.
    """
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _evaluate_aux(evaluator, traj: numerics.Trajectory) -> np.ndarray:
    values = []
    for q, p, t in zip(traj.q, traj.p, traj.t):
        try:
            values.append(evaluator(q, p, t))
        except DomainError:
            values.append(math.nan)
    return np.asarray(values, dtype=float)


def trajectory_frame(fam: FamilyInstance, traj: numerics.Trajectory) -> pd.DataFrame:
    """
    Returns a trajectory as a DataFrame.

    The columns are t, q and p, followed by the invariant I, an inside flag
    and the relative drift when the family has an invariant, then the
    co-integrated auxiliaries (T first) and the evaluated auxiliaries of the
    family. The inside flag is 0 at samples outside the domain of the
    invariant, where I is NaN. Auxiliaries that cannot be evaluated at a
    sample are stored as NaN.
    """
    frame = pd.DataFrame({"t": traj.t, "q": traj.q, "p": traj.p})
    if fam.invariant is not None:
        values, drift = verify.invariant_series(fam.invariant, traj)
        frame["I"] = values
        frame["inside"] = [int(fam.invariant_inside(x)) for x in traj.samples]
        frame["drift_rel"] = drift
        outside = int((frame["inside"] == 0).sum())
        if outside:
            logging.warning(
                f"{outside} of {len(frame)} samples lie outside the domain of the invariant."
            )

    for name, values in traj.aux.items():
        frame[name] = values
    for name, evaluator in fam.aux.items():
        if name not in frame.columns:
            frame[name] = _evaluate_aux(evaluator, traj)
    return frame


def _format_metric(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return f"{value:.6e}"


def format_summary(result: dt.RunResult) -> str:
    """Returns the human-readable summary of a run, one line per check."""
    verdict = "PASSED" if result.passed else "FAILED"
    lines = [f"{result.command} '{result.scenario}': {verdict} ({result.duration_s:.2f} s)"]
    for check in result.checks:
        status = "pass" if check.passed else "FAIL"
        metrics = ", ".join(
            f"{name}={_format_metric(value)}" for name, value in check.metrics.items()
        )
        line = f"  [{status}] {check.name}"
        if metrics:
            line += f": {metrics}"
        if check.message:
            line += f" ({check.message})"
        lines.append(line)
    return "\n".join(lines) + "\n"


def write_reports(result: dt.RunResult, output_dir: Union[str, Path]) -> None:
    """Writes the text summary and the JSON result of a run to the output directory."""
    output_dir = Path(output_dir)
    (output_dir / SUMMARY_FILE).write_text(format_summary(result))
    (output_dir / RESULT_FILE).write_text(result.json(indent=2))
