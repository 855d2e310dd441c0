import logging
from dataclasses import dataclass, field, replace

import numpy as np

from estimation.errors import InvalidParameterError
from estimation.graph import TopologySpec, WeightStrategy, build_topology
from estimation.diffusion import Estimator, IncrementalMode, SpatialMode, StepObservations

logger = logging.getLogger(__name__)

PIPELINES = ("noncooperative", "incremental-only", "spatial-only", "diffusion", "centralized")
DEFAULT_PIPELINES = ("noncooperative", "diffusion", "centralized")

# purpose word of the Philox counter
PURPOSE_REGRESSOR = 0
PURPOSE_NOISE = 1
PURPOSE_TOPOLOGY = 2


@dataclass(frozen=True)
class Scenario:
    """Seeded synthetic experiment: ``y_k = psi_k^T theta_true + N(0, noise_std[k]^2)``.

    Parameters
    ----------
    theta_true : tuple of float
        True regression coefficients; their count is the model order n.
    noise_std : tuple of float
        Per-node noise standard deviations, index ``k - 1`` for node ``k``.
    topology : TopologySpec
    steps : int
        Number of time steps T.
    seed : int
        Master seed; every random draw is derived from it by a counter.
    incremental_weights, spatial_weights : WeightStrategy
        Strategies for the data weights c and the estimate weights a.
    """

    theta_true: tuple
    noise_std: tuple
    topology: TopologySpec
    steps: int
    seed: int
    incremental_weights: WeightStrategy = WeightStrategy.METROPOLIS
    spatial_weights: WeightStrategy = WeightStrategy.METROPOLIS
    spatial_mode: SpatialMode = SpatialMode.ESTIMATE_COMBINATION
    incremental_mode: IncrementalMode = IncrementalMode.NEIGHBOURHOOD
    estimator: Estimator = Estimator.BAYES
    eps: float = 1e-3
    nu0: float = None
    modes: tuple = field(default=DEFAULT_PIPELINES)

    def __post_init__(self):
        object.__setattr__(self, "theta_true", tuple(float(x) for x in self.theta_true))
        object.__setattr__(self, "noise_std", tuple(float(x) for x in self.noise_std))
        object.__setattr__(self, "modes", tuple(self.modes))
        for name, enum in (
            ("incremental_weights", WeightStrategy),
            ("spatial_weights", WeightStrategy),
            ("spatial_mode", SpatialMode),
            ("incremental_mode", IncrementalMode),
            ("estimator", Estimator),
        ):
            object.__setattr__(self, name, enum(getattr(self, name)))
        if self.nu0 is None:
            object.__setattr__(self, "nu0", float(self.order + 2))

        if self.order < 1:
            raise InvalidParameterError("theta_true: model order n must be >= 1")
        if self.steps < 1:
            raise InvalidParameterError(f"steps: T must be >= 1, got {self.steps}")
        if len(self.noise_std) != self.node_count:
            raise InvalidParameterError(
                f"noise_std: expected {self.node_count} values, got {len(self.noise_std)}"
            )
        if any(s <= 0 for s in self.noise_std):
            raise InvalidParameterError("noise_std: every sigma_k must be > 0")
        if not 0 <= self.seed < 2**64:
            raise InvalidParameterError("seed: must be an unsigned 64-bit integer")
        if self.eps <= 0:
            raise InvalidParameterError(f"eps: must be > 0, got {self.eps}")
        if self.nu0 <= 0:
            raise InvalidParameterError(f"nu0: must be > 0, got {self.nu0}")
        unknown = [m for m in self.modes if m not in PIPELINES]
        if unknown or not self.modes:
            raise InvalidParameterError(
                f"pipelines: unknown {unknown}, choose from {list(PIPELINES)}"
            )

    @property
    def order(self):
        return len(self.theta_true)

    @property
    def node_count(self):
        return self.topology.node_count

    @property
    def noise_vars(self):
        return np.square(self.noise_std)

    def with_seed(self, seed):
        return replace(self, seed=seed)


def stream(seed, t, purpose):
    """Independent generator for one (step, purpose) pair.

    A Philox generator keyed by the master seed, with the pair placed in the
    upper counter words. Node ``k`` takes the ``k``-th block of its draws, so
    changing M or T never shifts the draws of other nodes or steps.
    """
    counter = np.array([0, t, purpose, 0], dtype=np.uint64)
    bit_generator = np.random.Philox(key=seed, counter=counter)
    return np.random.Generator(bit_generator)


def build_network(sc):
    """Network of the scenario; random topologies draw from the topology stream."""
    return build_topology(sc.topology, stream(sc.seed, 0, PURPOSE_TOPOLOGY))


def generate_step_data(sc, t):
    """Observations of every node at step ``t`` (1-based), row ``k - 1`` for node ``k``."""
    if not 1 <= t <= sc.steps:
        raise InvalidParameterError(f"step {t} outside [1, {sc.steps}]")
    psi = stream(sc.seed, t, PURPOSE_REGRESSOR).standard_normal((sc.node_count, sc.order))
    noise = stream(sc.seed, t, PURPOSE_NOISE).standard_normal(sc.node_count)
    noise = noise * np.asarray(sc.noise_std)
    # column by column, so a node's output never depends on M
    y = np.zeros(sc.node_count)
    for i, coefficient in enumerate(sc.theta_true):
        y = y + psi[:, i] * coefficient
    return StepObservations(y + noise, psi)


def generate_data(sc):
    """All steps of the scenario, ``data[t - 1]`` holding step ``t``."""
    logger.debug("generating %d steps for %d nodes (seed %d)", sc.steps, sc.node_count, sc.seed)
    return [generate_step_data(sc, t) for t in range(1, sc.steps + 1)]
