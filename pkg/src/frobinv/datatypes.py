# This module offers data objects with the expected data types for frobinv scenarios and runs.
# Type and value validation is performed through Pydantic when writing to these objects.
import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import BaseModel, BaseSettings, Extra, confloat, conint, root_validator, validator


class FunctionKind(str, Enum):
    CONSTANT = "constant"
    POLYNOMIAL = "polynomial"
    TRIGONOMETRIC = "trigonometric"
    EXPONENTIAL = "exponential"


PARAM_COUNTS = {
    FunctionKind.CONSTANT: 1,
    FunctionKind.TRIGONOMETRIC: 4,
    FunctionKind.EXPONENTIAL: 2,
}


def check_param_count(kind: FunctionKind, params: Sequence[float]) -> None:
    """Raises a ValueError when the number of parameters does not match the function kind."""
    if kind == FunctionKind.POLYNOMIAL:
        if len(params) < 1:
            raise ValueError("A polynomial needs at least one coefficient.")
        return

    expected = PARAM_COUNTS[kind]
    if len(params) != expected:
        raise ValueError(
            f"A {kind.value} function takes {expected} parameters, got {len(params)}."
        )


class FamilyTag(str, Enum):
    FORCED_OSCILLATOR = "forced_oscillator"
    SARLET = "sarlet"
    QUADRATIC = "quadratic"
    GIACOMINI = "giacomini"
    ABEL = "abel"
    INVERSE = "inverse"


REQUIRED_FUNCTIONS = {
    FamilyTag.FORCED_OSCILLATOR: ("rho", "force"),
    FamilyTag.SARLET: ("rho", "sigma", "gamma"),
    FamilyTag.QUADRATIC: ("rho", "sigma", "U"),
    FamilyTag.GIACOMINI: ("C2", "W"),
    FamilyTag.ABEL: ("rho", "U"),
    FamilyTag.INVERSE: ("U",),
}


class Section(BaseModel):
    class Config:
        validate_assignment = True
        extra = Extra.forbid


class FunctionSpec(Section):
    kind: FunctionKind
    params: List[float]

    @validator("params")
    def params_match_kind(cls, params, values):
        if "kind" in values:
            check_param_count(values["kind"], params)
        if not all(math.isfinite(value) for value in params):
            raise ValueError("Function parameters must be finite.")
        return params


class Window(Section):
    t_start: float = 0.0
    t_end: float = 10.0

    @validator("t_end")
    def end_after_start(cls, t_end, values):
        if "t_start" in values and t_end <= values["t_start"]:
            raise ValueError("t_end must be larger than t_start.")
        return t_end


class AxisSpec(Section):
    min: float
    max: float
    count: conint(ge=1)

    @validator("max")
    def range_not_empty(cls, maximum, values):
        if "min" in values and maximum < values["min"]:
            raise ValueError("The axis range is empty (max < min).")
        return maximum


class GridSpec(Section):
    q: AxisSpec = AxisSpec(min=-2.0, max=2.0, count=10)
    p: AxisSpec = AxisSpec(min=-2.0, max=2.0, count=10)
    t: AxisSpec = AxisSpec(min=0.0, max=1.0, count=10)

    @property
    def size(self) -> int:
        return self.q.count * self.p.count * self.t.count


class IntegratorConfig(Section):
    rel_tol: confloat(gt=0.0) = 1e-10
    abs_tol: confloat(gt=0.0) = 1e-12
    max_step: confloat(gt=0.0) = math.inf
    max_steps: conint(gt=0) = 100_000
    dense_output: bool = False


class Thresholds(Section):
    residual: confloat(gt=0.0) = 1e-6
    drift: confloat(gt=0.0) = 1e-6
    riccati: confloat(gt=0.0) = 1e-5
    abel: confloat(gt=0.0) = 1e-6
    inverse: confloat(gt=0.0) = 1e-8


class StateSpec(Section):
    q: float
    p: float
    t: float = 0.0


class InitialConditions(Section):
    count: conint(ge=0) = 20
    states: List[StateSpec] = []


class Checks(Section):
    drift: bool = True
    riccati: bool = True
    abel: bool = True
    inverse: bool = False
    inverse_samples: conint(ge=1) = 1000


class AbelCheckSpec(Section):
    t_fixed: Optional[float] = None
    qbar_min: float = 0.2
    qbar_max: float = 1.5
    pbar_starts: List[float] = [1.0, 2.0]

    @validator("qbar_max")
    def qbar_range_not_empty(cls, qbar_max, values):
        if "qbar_min" in values and qbar_max <= values["qbar_min"]:
            raise ValueError("qbar_max must be larger than qbar_min.")
        return qbar_max


class ScenarioConfig(Section):
    name: str
    family: FamilyTag
    functions: Dict[str, FunctionSpec] = {}
    k: Optional[float] = None
    printed_quadratic_term: bool = False
    window: Window = Window()
    grid: GridSpec = GridSpec()
    integrator: IntegratorConfig = IntegratorConfig()
    thresholds: Thresholds = Thresholds()
    initial_conditions: InitialConditions = InitialConditions()
    checks: Checks = Checks()
    abel_check: AbelCheckSpec = AbelCheckSpec()
    seed: conint(ge=0) = 42
    output_dir: Optional[Path] = None

    @root_validator(skip_on_failure=True)
    def family_requirements(cls, values):
        family = values["family"]
        missing = [
            name
            for name in REQUIRED_FUNCTIONS[family]
            if name not in values["functions"]
        ]
        if missing:
            raise ValueError(
                f"functions: the {family.value} family needs {', '.join(missing)}."
            )

        if family == FamilyTag.ABEL:
            k = values.get("k")
            if k is None or k == 0.0 or not math.isfinite(k):
                raise ValueError(
                    "k: the abel family needs a finite, nonzero value for field 'k'."
                )
        return values


class RunSettings(BaseSettings):
    output_dir: Path = Path("output")
    threads: conint(ge=1) = 1

    class Config:
        env_prefix = "FROBINV_"


class CheckResult(BaseModel):
    name: str
    passed: bool
    metrics: Dict[str, float] = {}
    artifacts: List[str] = []
    message: str = ""


class RunResult(BaseModel):
    scenario: str
    command: str
    passed: bool
    checks: List[CheckResult] = []
    artifacts: List[str] = []
    duration_s: float = 0.0
