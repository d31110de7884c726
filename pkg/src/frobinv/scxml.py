# This module reads the sections of a frobinv XML scenario file as plain
# dictionaries. Values are the raw strings of the file: type and value validation is not
# performed here. To obtain validated objects, use the ScenarioFileParser (from the
# config module) instead.
from xml.etree import ElementTree
from typing import Dict, List, Optional, Union

Raw = Dict[str, Union[str, List[str]]]


def _node(tree: ElementTree.ElementTree, path: str, tag: str) -> ElementTree.Element:
    node = tree.find(path)
    if node is None or node.tag != tag:
        raise ValueError("The passed path does not point to the correct node.")
    return node


def _text(node: ElementTree.Element) -> str:
    return (node.text or "").strip()


def _split(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _parse_leaves(tree: ElementTree.ElementTree, path: str, tag: str) -> Dict[str, str]:
    """Returns the text of every child of a flat section, keyed by the child tag."""
    node = _node(tree, path, tag)
    return {child.tag: _text(child) for child in node}


def parse_name(tree: ElementTree.ElementTree) -> str:
    """Returns the name attribute of the <scenario> root, or an empty string."""
    root = tree.getroot()
    if root.tag != "scenario":
        raise ValueError("The root node of a scenario file must be <scenario>.")
    return root.attrib.get("name", "")


def parse_family(tree: ElementTree.ElementTree, path: str) -> str:
    """
    Reads and returns the <family> tag.

    Parameters
    ----------
    tree:
        A ElementTree object of the scenario file to be read.
    path:
        A string with the path to the family node (e.g., "family").

    Raises
    ------
    ValueError
        When the passed path does not point to the family node.
    """
    return _text(_node(tree, path, "family"))


def parse_window(tree: ElementTree.ElementTree, path: str) -> Dict[str, str]:
    """Reads and returns the <window> data (t_start and t_end)."""
    return _parse_leaves(tree, path, "window")


def parse_functions(tree: ElementTree.ElementTree, path: str) -> Dict[str, Raw]:
    """
    Reads and returns the parameter functions of the <functions> node.

    Each <function name=".." kind=".."> element holds a comma-separated list of
    parameters, e.g. <function name="rho" kind="trigonometric">2, 1, 1, 0</function>.

    Returns
    -------
    Dict[str, Dict[str, Union[str, List[str]]]]
        A dictionary keyed by the function name with the kind and the list of
        parameters of each function.

    Raises
    ------
    ValueError
        When the passed path does not point to the functions node or a
        function has no name.
    """
    node = _node(tree, path, "functions")
    functions = {}
    for function in node.findall("function"):
        if "name" not in function.attrib:
            raise ValueError("Every <function> element needs a name attribute.")
        functions[function.attrib["name"]] = {
            "kind": function.attrib.get("kind", ""),
            "params": _split(_text(function)),
        }
    return functions


def parse_parameters(tree: ElementTree.ElementTree, path: str) -> Dict[str, str]:
    """Reads and returns the scalar family parameters of the <parameters> node (k, ...)."""
    return _parse_leaves(tree, path, "parameters")


def parse_grid(tree: ElementTree.ElementTree, path: str) -> Dict[str, Dict[str, str]]:
    """
    Reads and returns the <grid> data.

    Each of the <q>, <p> and <t> children carries min, max and count attributes.
    Axes that are not present are left out of the dictionary.
    """
    node = _node(tree, path, "grid")
    return {axis.tag: dict(axis.attrib) for axis in node if axis.tag in ("q", "p", "t")}


def parse_integrator(tree: ElementTree.ElementTree, path: str) -> Dict[str, str]:
    """Reads and returns the <integrator> settings (rel_tol, abs_tol, max_step, ...)."""
    return _parse_leaves(tree, path, "integrator")


def parse_thresholds(tree: ElementTree.ElementTree, path: str) -> Dict[str, str]:
    """Reads and returns the pass/fail thresholds of the <thresholds> node."""
    return _parse_leaves(tree, path, "thresholds")


def parse_initial_conditions(tree: ElementTree.ElementTree, path: str) -> Raw:
    """
    Reads and returns the <initial_conditions> data: the number of random
    initial states (count attribute) and the explicit <state q=".." p=".." t=".."/>
    elements.
    """
    node = _node(tree, path, "initial_conditions")
    data = {"states": [dict(state.attrib) for state in node.findall("state")]}
    if "count" in node.attrib:
        data["count"] = node.attrib["count"]
    return data


def parse_checks(tree: ElementTree.ElementTree, path: str) -> Dict[str, str]:
    """Reads and returns the switches of the <checks> node."""
    return _parse_leaves(tree, path, "checks")


def parse_abel_check(tree: ElementTree.ElementTree, path: str) -> Raw:
    """Reads and returns the <abel_check> settings, with pbar_starts as a list."""
    data = _parse_leaves(tree, path, "abel_check")
    if "pbar_starts" in data:
        data["pbar_starts"] = _split(data["pbar_starts"])
    return data


def parse_seed(tree: ElementTree.ElementTree, path: str) -> str:
    return _text(_node(tree, path, "seed"))


def parse_output(tree: ElementTree.ElementTree, path: str) -> str:
    """Reads and returns the output directory of the <output> node."""
    return _text(_node(tree, path, "output"))


SECTIONS = {
    "window": parse_window,
    "functions": parse_functions,
    "grid": parse_grid,
    "integrator": parse_integrator,
    "thresholds": parse_thresholds,
    "initial_conditions": parse_initial_conditions,
    "checks": parse_checks,
    "abel_check": parse_abel_check,
}


def parse_scenario(tree: ElementTree.ElementTree) -> Dict[str, object]:
    """
    Reads every section of a scenario file into a dictionary whose keys match
    the fields of a ScenarioConfig. Sections missing from the file are left out.
    """
    data: Dict[str, object] = {
        "name": parse_name(tree),
        "family": parse_family(tree, "family"),
    }
    for section, parse in SECTIONS.items():
        if tree.find(section) is not None:
            data[section] = parse(tree, section)

    if tree.find("parameters") is not None:
        data.update(parse_parameters(tree, "parameters"))
    if tree.find("seed") is not None:
        data["seed"] = parse_seed(tree, "seed")
    output: Optional[str] = None
    if tree.find("output") is not None:
        output = parse_output(tree, "output")
    if output:
        data["output_dir"] = output
    return data
