"""
Run Configuration
^^^^^^^^^^^^^^^^^

Flat `key = value` files with `[section]` headers describing one benchmark
run. Every key has a default; unknown sections or keys are rejected.
Matrices are written as `;` separated rows of `,` separated numbers, or as
scalar identity shorthands such as `I` and `0.5*I`.
"""

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from d3pi.error import ConfigurationError
from d3pi.spe import EXPLORATION_KINDS, REGRESSOR_KINDS, SpeConfig

VARIANTS = ("d3pi_on", "d3pi_off", "lqr_baseline")
GRAPH_KINDS = ("path", "star", "complete", "edgeless", "edges")
AGENT_SOURCES = ("engine", "matrices")

DEFAULTS: Dict[str, Dict[str, str]] = {
    "run": {
        "seed": "0",
        "variants": ", ".join(VARIANTS),
        "horizon": "3000",
        "normalize": "true",
    },
    "agent": {
        "source": "engine",
        "a": "",
        "b": "",
        "continuous": "true",
        "dt": "0.1",
    },
    "graph": {
        "kind": "path",
        "nodes": "10",
        "file": "",
    },
    "cost": {
        "q1": "I",
        "q2": "I",
        "r": "I",
        "k1": "",
        "k1_r_scale": "10",
    },
    "spe": {
        "beta": "1e12",
        "noise_variance": "1.0",
        "tolerance": "1e-6",
        "window": "10",
        "min_steps": "",
        "max_steps": "",
        "initial_steps": "",
        "projection": "true",
        "regressor": "quadratic",
        "exploration": "gaussian",
    },
    "d3pi": {
        "tolerance": "1e-4",
        "max_iterations": "50",
        "xi_variant": "algorithm",
    },
}


@dataclass(frozen=True)
class RunConfig:
    """
    Effective configuration of a benchmark run. Matrix-valued entries keep
    their textual form until the agent dimensions are known.
    """

    seed: int
    variants: Tuple[str, ...]
    horizon: int
    normalize: bool
    source: str
    a: str
    b: str
    continuous: bool
    dt: float
    graph_kind: str
    nodes: int
    graph_file: str
    q1: str
    q2: str
    r: str
    k1: str
    k1_r_scale: float
    spe: SpeConfig
    tolerance: float
    max_iterations: int
    xi_variant: str
    values: Tuple[Tuple[str, Tuple[Tuple[str, str], ...]], ...]

    def with_nodes(self, nodes: int) -> "RunConfig":
        """
        Copy of the configuration for a network of `nodes` agents.
        """
        return _build(_override(self.values, "graph", "nodes", str(nodes)))

    def with_seed(self, seed: int) -> "RunConfig":
        """
        Copy of the configuration with another seed.
        """
        return _build(_override(self.values, "run", "seed", str(seed)))

    def render(self) -> str:
        """
        The effective configuration in the file format.
        """
        lines = []
        for section, items in self.values:
            lines.append(f"[{section}]")
            lines.extend(f"{key} = {value}" for key, value in items)
            lines.append("")
        return "\n".join(lines)


def _override(
    values: Tuple[Tuple[str, Tuple[Tuple[str, str], ...]], ...],
    section: str,
    key: str,
    value: str,
) -> Dict[str, Dict[str, str]]:
    merged = {name: dict(items) for name, items in values}
    merged[section][key] = value
    return merged


def parse_matrix(text: str, size: Optional[int] = None) -> np.ndarray:
    """
    Parse `1, 0; 0, 2` style matrices, or `I` / `c*I` when `size` is known.

    Parameters
    ----------
    text :
        Matrix in the configuration syntax.
    size :
        Side of identity shorthands.

    Returns
    -------
    matrix : `numpy.ndarray`
        The parsed two dimensional array.
    """
    compact = text.replace(" ", "")
    if compact.endswith("I"):
        if size is None:
            raise ConfigurationError(f"identity {text!r} needs a known size")
        factor = compact[:-1].rstrip("*") or "1"
        return _number(factor) * np.eye(size)
    try:
        rows = [
            [float(entry) for entry in row.split(",")]
            for row in text.split(";")
        ]
    except ValueError as error:
        raise ConfigurationError(f"bad matrix {text!r}") from error
    if len({len(row) for row in rows}) != 1:
        raise ConfigurationError(f"ragged matrix {text!r}")
    return np.array(rows)


def _number(text: str) -> float:
    try:
        return float(text)
    except ValueError as error:
        raise ConfigurationError(f"expected a number, got {text!r}") from error


def _integer(text: str) -> int:
    try:
        return int(text)
    except ValueError as error:
        raise ConfigurationError(
            f"expected an integer, got {text!r}"
        ) from error


def _optional_integer(text: str) -> Optional[int]:
    return None if text == "" else _integer(text)


def _boolean(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def _choice(text: str, choices: Tuple[str, ...], key: str) -> str:
    if text not in choices:
        raise ConfigurationError(
            f"{key} must be one of {', '.join(choices)}, got {text!r}"
        )
    return text


def _build(merged: Dict[str, Dict[str, str]]) -> RunConfig:
    run, agent, graph = merged["run"], merged["agent"], merged["graph"]
    cost, spe, d3pi = merged["cost"], merged["spe"], merged["d3pi"]
    variants = tuple(
        _choice(v.strip(), VARIANTS, "variants")
        for v in run["variants"].split(",")
        if v.strip()
    )
    if not variants:
        raise ConfigurationError("at least one variant is required")
    spe_config = SpeConfig(
        beta=_number(spe["beta"]),
        noise_variance=_number(spe["noise_variance"]),
        tolerance=_number(spe["tolerance"]),
        window=_integer(spe["window"]),
        min_steps=_optional_integer(spe["min_steps"]),
        max_steps=_optional_integer(spe["max_steps"]),
        initial_steps=_optional_integer(spe["initial_steps"]),
        projection=_boolean(spe["projection"]),
        regressor=_choice(spe["regressor"], REGRESSOR_KINDS, "regressor"),
        exploration=_choice(
            spe["exploration"], EXPLORATION_KINDS, "exploration"
        ),
    )
    config = RunConfig(
        seed=_integer(run["seed"]),
        variants=variants,
        horizon=_integer(run["horizon"]),
        normalize=_boolean(run["normalize"]),
        source=_choice(agent["source"], AGENT_SOURCES, "source"),
        a=agent["a"],
        b=agent["b"],
        continuous=_boolean(agent["continuous"]),
        dt=_number(agent["dt"]),
        graph_kind=_choice(graph["kind"], GRAPH_KINDS, "kind"),
        nodes=_integer(graph["nodes"]),
        graph_file=graph["file"],
        q1=cost["q1"],
        q2=cost["q2"],
        r=cost["r"],
        k1=cost["k1"],
        k1_r_scale=_number(cost["k1_r_scale"]),
        spe=spe_config,
        tolerance=_number(d3pi["tolerance"]),
        max_iterations=_integer(d3pi["max_iterations"]),
        xi_variant=_choice(
            d3pi["xi_variant"], ("algorithm", "proof"), "xi_variant"
        ),
        values=tuple(
            (name, tuple(merged[name].items())) for name in DEFAULTS
        ),
    )
    if config.seed < 0 or config.horizon < 0:
        raise ConfigurationError("seed and horizon must be nonnegative")
    if config.nodes < 1:
        raise ConfigurationError("a network needs at least one node")
    if config.source == "matrices" and not (config.a and config.b):
        raise ConfigurationError("matrix agents need both a and b")
    if config.graph_kind == "edges" and not config.graph_file:
        raise ConfigurationError("edge-list graphs need a file")
    return config


def parse_config(text: str) -> RunConfig:
    """
    Parse a configuration file's contents, filling in defaults.

    Raises
    ------
    ConfigurationError
        On syntax errors, unknown sections or keys, or invalid values.
    """
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",)
    )
    try:
        parser.read_string(text)
    except configparser.Error as error:
        raise ConfigurationError(str(error)) from error

    merged = {name: dict(values) for name, values in DEFAULTS.items()}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigurationError(f"unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            merged[section][key] = value.strip()
    try:
        return _build(merged)
    except ConfigurationError:
        raise
    except Exception as error:
        raise ConfigurationError(str(error)) from error


def load_config(path: Optional[str]) -> RunConfig:
    """
    Read and parse the file at `path`; `None` yields the defaults.
    """
    if path is None:
        return parse_config("")
    try:
        text = Path(path).read_text()
    except OSError as error:
        raise ConfigurationError(f"cannot read {path}: {error}") from error
    return parse_config(text)
