# This module offers a validated, read-only interface to frobinv XML scenario files
from pathlib import Path
from xml.etree import ElementTree
from typing import Dict, Optional, Union

import frobinv.datatypes as dt
from frobinv import scxml


class ScenarioFileParser:
    """
    A class that acts as an interface between the user and an XML scenario file.

    Every read_* method returns a validated pydantic object; a
    ``pydantic.ValidationError`` names the offending field when a value is
    missing or out of range.

    Parameters
    ----------
    path
        The path to the scenario file to be read by the parser.
    """

    def __init__(self, path: Union[str, Path]) -> None:
        if isinstance(path, str):
            path = Path(path)

        self.scenario_file = path
        self.tree = ElementTree.parse(path)

    def __repr__(self):
        return f"ScenarioFileParser(scenario_file={self.scenario_file})"

    @property
    def function_names(self):
        """Returns a list with the names of the parameter functions in the XML file."""
        node = self.tree.getroot().find("functions")
        if node is None:
            return []
        return [function.attrib.get("name", "") for function in node.findall("function")]

    def read_family(self) -> dt.FamilyTag:
        """Returns the family tag of the scenario."""
        return dt.FamilyTag(scxml.parse_family(self.tree, path="family"))

    def read_window(self) -> dt.Window:
        """Returns the <window> data, or the default window when the node is absent."""
        if self.tree.find("window") is None:
            return dt.Window()
        return dt.Window(**scxml.parse_window(self.tree, path="window"))

    def read_functions(self) -> Dict[str, dt.FunctionSpec]:
        """Returns the parameter functions of the scenario keyed by name."""
        return {
            name: dt.FunctionSpec(**spec)
            for name, spec in scxml.parse_functions(self.tree, path="functions").items()
        }

    def read_grid(self) -> dt.GridSpec:
        """Returns the <grid> data; missing axes take their default range."""
        if self.tree.find("grid") is None:
            return dt.GridSpec()
        return dt.GridSpec(**scxml.parse_grid(self.tree, path="grid"))

    def read_integrator_params(self) -> dt.IntegratorConfig:
        """Returns the <integrator> settings."""
        if self.tree.find("integrator") is None:
            return dt.IntegratorConfig()
        return dt.IntegratorConfig(**scxml.parse_integrator(self.tree, path="integrator"))

    def read_thresholds(self) -> dt.Thresholds:
        """Returns the pass/fail thresholds of the checks."""
        if self.tree.find("thresholds") is None:
            return dt.Thresholds()
        return dt.Thresholds(**scxml.parse_thresholds(self.tree, path="thresholds"))

    def read_initial_conditions(self) -> dt.InitialConditions:
        if self.tree.find("initial_conditions") is None:
            return dt.InitialConditions()
        return dt.InitialConditions(
            **scxml.parse_initial_conditions(self.tree, path="initial_conditions")
        )

    def read_seed(self) -> Optional[int]:
        """Returns the seed of the scenario, or None when the file does not set one."""
        if self.tree.find("seed") is None:
            return None
        return int(scxml.parse_seed(self.tree, path="seed"))

    def read_scenario(self) -> dt.ScenarioConfig:
        """
        Returns the whole scenario as a validated ScenarioConfig.

        The scenario name defaults to the file name when the root node has no
        name attribute.
        """
        data = scxml.parse_scenario(self.tree)
        if not data["name"]:
            data["name"] = self.scenario_file.stem
        return dt.ScenarioConfig(**data)
