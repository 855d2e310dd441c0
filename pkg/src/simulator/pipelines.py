import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from estimation.diffusion import (
    DiffusionConfig,
    IncrementalMode,
    NetworkState,
    SpatialMode,
    init_node,
    network_step,
    observation_matrix,
)
from estimation.graph import Network, build_weights, uniform_weights
from estimation.nig import batch_update, nig_init, point_estimates
from simulator.scenario import build_network, generate_data

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsRow:
    """Errors of one pipeline at step ``t``; per-node tuples are indexed by node id minus one."""

    t: int
    pipeline: str
    sq_errors: tuple
    msd: float
    sigma2_hat: tuple


@dataclass
class PipelineRun:
    rows: list = field(default_factory=list)
    # name ("node_<k>" or "center") -> NigVForm after the last step
    final_stats: dict = field(default_factory=dict)


@dataclass
class ScenarioResult:
    scenario: object
    rows: list
    final_stats: dict  # pipeline -> PipelineRun.final_stats

    def final_msd(self):
        """Pipeline label -> MSD at the last step."""
        last = max(row.t for row in self.rows)
        return {row.pipeline: row.msd for row in self.rows if row.t == last}


def compute_msd(states, theta_true):
    """Network mean-square deviation ``(1/M) sum_k ||theta_k - theta||^2``.

    ``states`` is a :class:`NetworkState`, a node id -> NodeState mapping or a
    sequence of estimates.
    """
    if isinstance(states, NetworkState):
        estimates = states.theta_hat
    elif isinstance(states, Mapping):
        estimates = [state.theta_hat for state in states.values()]
    elif isinstance(states, np.ndarray):
        estimates = states
    else:
        estimates = list(states)
    errors = np.asarray(estimates, dtype=float) - np.asarray(theta_true, dtype=float)
    return float(np.mean(np.sum(errors**2, axis=1)))


def metrics_row(t, pipeline, theta_hat, sigma2_hat, theta_true):
    """Build a :class:`MetricsRow` from stacked estimates, row ``k - 1`` for node ``k``."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    sq_errors = np.sum((theta_hat - np.asarray(theta_true, dtype=float)) ** 2, axis=1)
    return MetricsRow(
        t,
        pipeline,
        tuple(sq_errors.tolist()),
        compute_msd(theta_hat, theta_true),
        tuple(np.asarray(sigma2_hat, dtype=float).tolist()),
    )


def _state_row(t, pipeline, states, theta_true):
    return metrics_row(t, pipeline, states.theta_hat, states.sigma2_hat, theta_true)


def diffusion_config(sc, net, **overrides):
    """Weights and modes of ``sc`` for ``net``; keyword overrides replace scenario modes."""
    settings = dict(
        spatial_mode=sc.spatial_mode,
        incremental_mode=sc.incremental_mode,
        estimator=sc.estimator,
    )
    settings.update(overrides)
    return DiffusionConfig(
        incremental_weights=build_weights(net, sc.incremental_weights, sc.noise_vars),
        spatial_weights=build_weights(net, sc.spatial_weights, sc.noise_vars),
        **settings,
    )


def _run_network(sc, net, cfg, data, label, incremental_label=None, executor=None):
    prior = nig_init(sc.order, sc.eps, sc.nu0)
    states = NetworkState.from_nodes(
        {k: init_node(k, prior, cfg.mirrors_cform) for k in net.nodes}, net.node_count
    )
    run = PipelineRun()
    for t, step_data in enumerate(data, start=1):
        after_incremental, states = network_step(states, net, cfg, step_data, executor)
        if incremental_label is not None:
            run.rows.append(_state_row(t, incremental_label, after_incremental, sc.theta_true))
        run.rows.append(_state_row(t, label, states, sc.theta_true))
    run.final_stats = {f"node_{k}": s.stats for k, s in states.items()}
    logger.info("%s: final MSD %.6g", label, run.rows[-1].msd)
    return run


def _noncooperative(sc, net, data, executor):
    isolated = Network(sc.node_count)
    weights = uniform_weights(isolated)
    cfg = DiffusionConfig(weights, weights, SpatialMode.OFF, estimator=sc.estimator)
    return _run_network(sc, isolated, cfg, data, "noncooperative", executor=executor)


def _incremental_only(sc, net, data, executor):
    cfg = diffusion_config(sc, net, spatial_mode=SpatialMode.OFF)
    return _run_network(sc, net, cfg, data, "incremental-only", executor=executor)


def _spatial_only(sc, net, data, executor):
    mode = sc.spatial_mode
    if mode is SpatialMode.OFF:
        mode = SpatialMode.ESTIMATE_COMBINATION
    cfg = diffusion_config(
        sc, net, incremental_mode=IncrementalMode.SELF_ONLY, spatial_mode=mode
    )
    return _run_network(sc, net, cfg, data, "spatial-only", executor=executor)


def _diffusion(sc, net, data, executor):
    cfg = diffusion_config(sc, net)
    return _run_network(
        sc, net, cfg, data, "diffusion", incremental_label="diffusion-incremental",
        executor=executor,
    )


def _centralized(sc, net, data, executor):
    """One estimator absorbing every node's observation with unit weight."""
    stats = nig_init(sc.order, sc.eps, sc.nu0)
    run = PipelineRun()
    M = sc.node_count
    for t, step_data in enumerate(data, start=1):
        stats = batch_update(stats, observation_matrix(step_data, M))
        theta_hat, sigma2_hat = point_estimates(stats)
        estimates = np.tile(theta_hat, (M, 1))
        run.rows.append(metrics_row(t, "centralized", estimates, np.full(M, sigma2_hat), sc.theta_true))
    run.final_stats = {"center": stats}
    logger.info("centralized: final MSD %.6g", run.rows[-1].msd)
    return run


RUNNERS = {
    "noncooperative": _noncooperative,
    "incremental-only": _incremental_only,
    "spatial-only": _spatial_only,
    "diffusion": _diffusion,
    "centralized": _centralized,
}


def _run_one(name, sc, data=None, executor=None):
    if data is None:
        data = generate_data(sc)
    net = build_network(sc)
    return RUNNERS[name](sc, net, data, executor)


def run_noncooperative(sc, data=None, executor=None):
    return _run_one("noncooperative", sc, data, executor).rows


def run_incremental_only(sc, data=None, executor=None):
    return _run_one("incremental-only", sc, data, executor).rows


def run_spatial_only(sc, data=None, executor=None):
    return _run_one("spatial-only", sc, data, executor).rows


def run_diffusion(sc, data=None, executor=None):
    """Full two-phase pipeline; rows for both the incremental and the spatial phase."""
    return _run_one("diffusion", sc, data, executor).rows


def run_centralized(sc, data=None, executor=None):
    return _run_one("centralized", sc, data, executor).rows


def run_scenario(sc, pipelines=None, executor=None):
    """Run ``pipelines`` (default: the scenario's modes) over one shared data set."""
    pipelines = tuple(pipelines or sc.modes)
    logger.info(
        "running %s on %d nodes, %d steps, seed %d",
        ", ".join(pipelines), sc.node_count, sc.steps, sc.seed,
    )
    data = generate_data(sc)
    net = build_network(sc)
    rows, final_stats = [], {}
    for name in pipelines:
        run = RUNNERS[name](sc, net, data, executor)
        rows.extend(run.rows)
        final_stats[name] = run.final_stats
    return ScenarioResult(sc, rows, final_stats)


def run_seed_batch(sc, count, pipelines=None, executor=None):
    """Run ``count`` independent copies of ``sc`` with seeds ``seed, seed + 1, ...``.

    With an executor the seeds run concurrently; nodes inside each run stay sequential.
    """
    seeds = [(sc.seed + b) % 2**64 for b in range(count)]
    scenarios = [sc.with_seed(seed) for seed in seeds]
    if executor is None:
        results = [run_scenario(s, pipelines) for s in scenarios]
    else:
        results = list(executor.map(lambda s: run_scenario(s, pipelines), scenarios))
    return dict(zip(seeds, results))
