"""Scenario files: YAML with flat top-level keys and one ``nodes`` override section."""

import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from estimation.errors import DiffusionError
from estimation.graph import TopologyKind, TopologySpec, read_edge_list
from simulator.scenario import DEFAULT_PIPELINES, Scenario

OUTPUT_DIR_ENV = "DIFFUSION_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "results"

SCENARIO_KEYS = {
    "node_count", "topology", "edges", "edge_file", "radius", "theta_true", "noise_std",
    "steps", "seed", "weight_strategy", "incremental_weights", "spatial_weights",
    "spatial_mode", "incremental_mode", "estimator", "eps", "nu0", "pipelines", "nodes",
}
RUN_KEYS = {"seeds", "sequential", "dump_state", "output_dir"}
NODE_KEYS = {"noise_std"}
REQUIRED_KEYS = ("node_count", "topology", "theta_true", "noise_std", "steps", "seed")


class ConfigError(DiffusionError, ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scenario_path: str
    output_dir: str
    pipelines: tuple
    seeds: int = 1
    sequential: bool = False
    dump_state: bool = False

    def __post_init__(self):
        if self.seeds < 1:
            raise ConfigError(f"seeds: batch size must be >= 1, got {self.seeds}")


def _default_output_dir():
    return os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)


def _require_int(raw, key):
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    return value


def _number(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a single number, got {value!r}")
    return float(value)


def _flag(raw, key):
    value = raw.get(key, False)
    if not isinstance(value, bool):
        raise ConfigError(f"{key}: expected true or false, got {value!r}")
    return value


def _floats(value, key):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)]
    if isinstance(value, list) and value and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        return [float(v) for v in value]
    raise ConfigError(f"{key}: expected a number or a non-empty list of numbers, got {value!r}")


def _topology(raw, node_count, base_dir):
    try:
        kind = TopologyKind(raw["topology"])
    except ValueError:
        raise ConfigError(
            f"topology: unknown kind {raw['topology']!r}, "
            f"choose from {[k.value for k in TopologyKind]}"
        )
    edges = ()
    if kind is TopologyKind.EDGE_LIST:
        if "edges" in raw and "edge_file" in raw:
            raise ConfigError("edges: give either 'edges' or 'edge_file', not both")
        if "edge_file" in raw:
            path = Path(base_dir or ".") / raw["edge_file"]
            try:
                edges = read_edge_list(path.read_text())
            except OSError as exc:
                raise ConfigError(f"edge_file: cannot read {path}: {exc}")
        else:
            pairs = raw.get("edges", [])
            if not isinstance(pairs, list) or any(
                not isinstance(p, list) or len(p) != 2 for p in pairs
            ):
                raise ConfigError("edges: expected a list of [k, l] pairs")
            edges = [tuple(p) for p in pairs]
    for k, l in edges:
        if not (1 <= k <= node_count and 1 <= l <= node_count) or k == l:
            raise ConfigError(f"edges: pair ({k}, {l}) must join two distinct ids in [1, {node_count}]")
    return TopologySpec(kind, node_count, tuple(edges), raw.get("radius"))


def _noise_std(raw, node_count):
    values = _floats(raw["noise_std"], "noise_std")
    if len(values) == 1:
        values = values * node_count
    if len(values) != node_count:
        raise ConfigError(f"noise_std: expected 1 or {node_count} values, got {len(values)}")
    overrides = raw.get("nodes") or {}
    if not isinstance(overrides, dict):
        raise ConfigError("nodes: expected a mapping of node id to overrides")
    for k, section in overrides.items():
        if not isinstance(k, int) or not 1 <= k <= node_count:
            raise ConfigError(f"nodes: node id {k!r} outside [1, {node_count}]")
        unknown = set(section or {}) - NODE_KEYS
        if unknown:
            raise ConfigError(f"nodes.{k}: unknown key {sorted(unknown)[0]!r}")
        if "noise_std" in (section or {}):
            values[k - 1] = _number(section["noise_std"], f"nodes.{k}.noise_std")
    return values


def parse_config(text, scenario_path="<string>", base_dir=None):
    """Parse and validate a scenario file.

    Returns
    -------
    (Scenario, RunConfig)

    Raises
    ------
    ConfigError
        Malformed YAML, unknown keys or any violated constraint; the message
        names the offending field.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping of keys to values")

    unknown = set(raw) - SCENARIO_KEYS - RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")
    missing = [key for key in REQUIRED_KEYS if key not in raw]
    if missing:
        raise ConfigError(f"missing required key {missing[0]!r}")

    node_count = _require_int(raw, "node_count")
    if node_count < 1:
        raise ConfigError(f"node_count: must be >= 1, got {node_count}")
    strategy = raw.get("weight_strategy", "metropolis")
    pipelines = raw.get("pipelines", list(DEFAULT_PIPELINES))
    if not isinstance(pipelines, list):
        raise ConfigError("pipelines: expected a list of pipeline names")

    try:
        scenario = Scenario(
            theta_true=_floats(raw["theta_true"], "theta_true"),
            noise_std=_noise_std(raw, node_count),
            topology=_topology(raw, node_count, base_dir),
            steps=_require_int(raw, "steps"),
            seed=_require_int(raw, "seed"),
            incremental_weights=raw.get("incremental_weights", strategy),
            spatial_weights=raw.get("spatial_weights", strategy),
            spatial_mode=raw.get("spatial_mode", "estimate-combination"),
            incremental_mode=raw.get("incremental_mode", "neighbourhood"),
            estimator=raw.get("estimator", "bayes"),
            eps=float(raw.get("eps", 1e-3)),
            nu0=None if raw.get("nu0") is None else float(raw["nu0"]),
            modes=tuple(pipelines),
        )
        run = RunConfig(
            scenario_path=str(scenario_path),
            output_dir=str(raw.get("output_dir") or _default_output_dir()),
            pipelines=scenario.modes,
            seeds=_require_int(raw, "seeds") if "seeds" in raw else 1,
            sequential=_flag(raw, "sequential"),
            dump_state=_flag(raw, "dump_state"),
        )
    except ConfigError:
        raise
    except (DiffusionError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc))
    return scenario, run


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    return parse_config(text, scenario_path=path, base_dir=path.parent)


def serialize_config(scenario, run):
    """YAML text that :func:`parse_config` reads back to equal objects."""
    topology = scenario.topology
    raw = {
        "node_count": scenario.node_count,
        "topology": topology.kind.value,
        "theta_true": list(scenario.theta_true),
        "noise_std": list(scenario.noise_std),
        "steps": scenario.steps,
        "seed": scenario.seed,
        "incremental_weights": scenario.incremental_weights.value,
        "spatial_weights": scenario.spatial_weights.value,
        "spatial_mode": scenario.spatial_mode.value,
        "incremental_mode": scenario.incremental_mode.value,
        "estimator": scenario.estimator.value,
        "eps": scenario.eps,
        "nu0": scenario.nu0,
        "pipelines": list(scenario.modes),
        "seeds": run.seeds,
        "sequential": run.sequential,
        "dump_state": run.dump_state,
        "output_dir": run.output_dir,
    }
    if topology.kind is TopologyKind.EDGE_LIST:
        raw["edges"] = [list(edge) for edge in topology.edges]
    if topology.radius is not None:
        raw["radius"] = topology.radius
    return yaml.safe_dump(raw, sort_keys=False)
