"""A module with updater functions that apply command-line overrides to a scenario."""
from pathlib import Path
from typing import Any, Callable, Dict, Iterable

import frobinv.datatypes as dt

ScenarioUpdaterFunction = Callable[[dt.ScenarioConfig, Dict[str, Any]], None]


def update_initial_state(scenario: dt.ScenarioConfig, new_values: Dict[str, Any]) -> None:
    """
    Replaces the initial conditions by a single explicit state.

    Parameters
    ----------
    scenario:
        The scenario to be modified.
    new_values:
        Any of the keys "q0", "p0" and "t0". Missing coordinates are taken from
        the first explicit state of the scenario, then from q = p = 0 and the
        start of the window.
    """
    keys = ("q0", "p0", "t0")
    if not any(new_values.get(key) is not None for key in keys):
        return

    if scenario.initial_conditions.states:
        base = scenario.initial_conditions.states[0]
    else:
        base = dt.StateSpec(q=0.0, p=0.0, t=scenario.window.t_start)

    state = dt.StateSpec(
        q=new_values["q0"] if new_values.get("q0") is not None else base.q,
        p=new_values["p0"] if new_values.get("p0") is not None else base.p,
        t=new_values["t0"] if new_values.get("t0") is not None else base.t,
    )
    scenario.initial_conditions = dt.InitialConditions(count=0, states=[state])


def update_window_values(scenario: dt.ScenarioConfig, new_values: Dict[str, Any]) -> None:
    """
    Updates the time window of a scenario.

    Parameters
    ----------
    scenario:
        The scenario to be modified.
    new_values:
        The keys "t_start" and/or "t_end". It is not required to include both.
    """
    window = scenario.window.dict()
    for key in ("t_start", "t_end"):
        if new_values.get(key) is not None:
            window[key] = new_values[key]
    scenario.window = dt.Window(**window)


def update_run_values(scenario: dt.ScenarioConfig, new_values: Dict[str, Any]) -> None:
    """Updates the seed and the output directory of a scenario ("seed", "output_dir")."""
    if new_values.get("seed") is not None:
        scenario.seed = new_values["seed"]

    if new_values.get("output_dir") is not None:
        scenario.output_dir = Path(new_values["output_dir"])


DEFAULT_UPDATERS = (update_initial_state, update_window_values, update_run_values)


def apply_overrides(
    scenario: dt.ScenarioConfig,
    new_values: Dict[str, Any],
    updaters: Iterable[ScenarioUpdaterFunction] = DEFAULT_UPDATERS,
) -> dt.ScenarioConfig:
    """
    Returns a copy of the scenario with the overrides applied by every updater.
    Values set to None are left untouched.
    """
    updated = scenario.copy(deep=True)
    for updater in updaters:
        updater(updated, new_values)
    return updated
