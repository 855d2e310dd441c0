"""Per-node diffusion estimator and the two-phase network step.

A network step runs an incremental phase (every node absorbs the weighted
observations of its closed neighbourhood) followed by a spatial phase (every
node combines what its neighbours produced in the incremental phase). Each
phase reads an immutable snapshot of the previous one, so nodes inside a phase
may run in any order or in parallel.

The sequential step evaluates a phase for all nodes at once on stacked arrays
(:class:`NetworkState`). The per-node operations run the same kernels on a
stack of one, so both paths produce bit-identical results.
"""

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from estimation import nig
from estimation.errors import (
    IncompleteNeighbourhoodError,
    InvalidObservationError,
    InvalidStatisticsError,
    InvalidWeightsError,
    SingularStatisticsError,
    node_step_error,
)
from estimation.graph import NeighbourWeights, closed_neighbourhood

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-9


class SpatialMode(str, Enum):
    ESTIMATE_COMBINATION = "estimate-combination"
    STATISTIC_AVERAGING = "statistic-averaging"
    OFF = "off"


class IncrementalMode(str, Enum):
    NEIGHBOURHOOD = "neighbourhood"
    SELF_ONLY = "self-only"


class Estimator(str, Enum):
    BAYES = "bayes"  # point estimates from the V-form
    RLS = "rls"  # point estimates from the mirrored C-form sweep


@dataclass(frozen=True, eq=False)
class NodeState:
    id: int
    stats: nig.NigVForm
    theta_hat: np.ndarray
    sigma2_hat: float
    cform: Optional[nig.NigCForm] = None


class CFormStack(NamedTuple):
    C: np.ndarray
    theta_hat: np.ndarray
    lambda_: np.ndarray
    nu: np.ndarray


class NetworkState(Mapping):
    """States of nodes ``1..M`` kept as stacked arrays, row ``k - 1`` for node ``k``.

    Read as a mapping it yields :class:`NodeState` values, so it can stand
    wherever a ``{node id: NodeState}`` dict is expected.
    """

    __slots__ = ("V", "nu", "theta_hat", "sigma2_hat", "cform")

    def __init__(self, V, nu, theta_hat, sigma2_hat, cform=None):
        self.V = V
        self.nu = nu
        self.theta_hat = theta_hat
        self.sigma2_hat = sigma2_hat
        self.cform = cform

    @classmethod
    def from_nodes(cls, states, node_count):
        """Stack ``states[1..node_count]``."""
        missing = [k for k in range(1, node_count + 1) if k not in states]
        if missing:
            raise IncompleteNeighbourhoodError(f"no state for nodes {missing}")
        items = [states[k] for k in range(1, node_count + 1)]
        mirrored = [s.cform is not None for s in items]
        if any(mirrored) and not all(mirrored):
            raise InvalidStatisticsError("either every node or no node must mirror a C-form")
        cform = None
        if all(mirrored):
            cform = CFormStack(
                np.stack([s.cform.C for s in items]),
                np.stack([s.cform.theta_hat for s in items]),
                np.array([s.cform.lambda_ for s in items]),
                np.array([s.cform.nu for s in items]),
            )
        return cls(
            np.stack([s.stats.V for s in items]),
            np.array([s.stats.nu for s in items]),
            np.stack([np.asarray(s.theta_hat, dtype=float) for s in items]),
            np.array([float(s.sigma2_hat) for s in items]),
            cform,
        )

    def row(self, i, node_id):
        cform = None
        if self.cform is not None:
            c = self.cform
            cform = nig.NigCForm(c.C[i], c.theta_hat[i], c.lambda_[i], c.nu[i])
        return NodeState(
            node_id,
            nig.NigVForm.from_symmetric(self.V[i], self.nu[i]),
            self.theta_hat[i],
            float(self.sigma2_hat[i]),
            cform,
        )

    def __getitem__(self, k):
        if not 1 <= k <= len(self.nu):
            raise KeyError(k)
        return self.row(k - 1, k)

    def __iter__(self):
        return iter(range(1, len(self.nu) + 1))

    def __len__(self):
        return len(self.nu)


class StepObservations(Mapping):
    """Observations of nodes ``1..M`` at one step, row ``k - 1`` for node ``k``."""

    __slots__ = ("y", "psi", "extended")

    def __init__(self, y, psi):
        self.y = np.asarray(y, dtype=float)
        self.psi = np.asarray(psi, dtype=float)
        if self.psi.ndim != 2 or self.psi.shape[0] != self.y.shape[0]:
            raise InvalidObservationError(
                f"need one regression vector per node, got {self.psi.shape} for {self.y.shape[0]} nodes"
            )
        self.extended = np.column_stack((self.y, self.psi))

    def __getitem__(self, k):
        if not 1 <= k <= len(self.y):
            raise KeyError(k)
        return nig.Observation(self.y[k - 1], self.psi[k - 1])

    def __iter__(self):
        return iter(range(1, len(self.y) + 1))

    def __len__(self):
        return len(self.y)


def observation_matrix(step_data, node_count):
    """Rows ``[y; psi]`` of nodes ``1..node_count`` as a (M, n + 1) array."""
    if isinstance(step_data, StepObservations) and len(step_data) == node_count:
        return step_data.extended
    missing = [k for k in range(1, node_count + 1) if k not in step_data]
    if missing:
        raise IncompleteNeighbourhoodError(f"no observation for nodes {missing}")
    rows = [step_data[k].extended for k in range(1, node_count + 1)]
    width = {len(z) for z in rows}
    if len(width) > 1:
        raise InvalidObservationError(f"regression vectors of mixed dimension {sorted(width)}")
    return np.array(rows)


@dataclass(frozen=True, eq=False)
class _Slots:
    """A weight table laid out for stacked evaluation.

    ``index[i, j]`` is the zero-based position of the ``j``-th neighbour of
    node ``i + 1`` in ascending id order and ``weights[i, j]`` its weight.
    Short rows are padded with the node itself at weight zero.
    """

    index: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_rows(cls, rows):
        width = max(len(row) for row in rows)
        index = np.repeat(np.arange(len(rows))[:, None], width, axis=1)
        weights = np.zeros((len(rows), width))
        for i, row in enumerate(rows):
            for j, (l, w) in enumerate(row):
                index[i, j] = l - 1
                weights[i, j] = w
        return cls(index, weights)


@dataclass(frozen=True, eq=False)
class _StepLayout:
    incremental: _Slots
    spatial: Optional[_Slots]
    spatial_mode: SpatialMode

    @classmethod
    def build(cls, net, cfg):
        if cfg.incremental_mode is IncrementalMode.SELF_ONLY:
            incremental = _Slots.from_rows([((k, 1.0),) for k in net.nodes])
        else:
            incremental = _Slots.from_rows(_checked_table(net, cfg.incremental_weights))
        spatial = None
        if cfg.spatial_mode is not SpatialMode.OFF:
            spatial = _Slots.from_rows(_checked_table(net, cfg.spatial_weights))
        return cls(incremental, spatial, cfg.spatial_mode)


@dataclass(frozen=True, eq=False)
class DiffusionConfig:
    incremental_weights: NeighbourWeights
    spatial_weights: NeighbourWeights
    spatial_mode: SpatialMode = SpatialMode.ESTIMATE_COMBINATION
    incremental_mode: IncrementalMode = IncrementalMode.NEIGHBOURHOOD
    estimator: Estimator = Estimator.BAYES

    def __post_init__(self):
        object.__setattr__(self, "spatial_mode", SpatialMode(self.spatial_mode))
        object.__setattr__(self, "incremental_mode", IncrementalMode(self.incremental_mode))
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        object.__setattr__(self, "_layouts", {})

    @property
    def mirrors_cform(self):
        return self.estimator is Estimator.RLS

    def layout(self, net):
        """Weight tables checked against ``net`` and laid out for stacked evaluation.

        Built once per network; raises ``InvalidWeightsError`` when a table does
        not match the closed neighbourhoods of ``net``.
        """
        layout = self._layouts.get(net)
        if layout is None:
            layout = _StepLayout.build(net, self)
            logger.debug("weight tables checked for %d nodes", net.node_count)
            self._layouts[net] = layout
        return layout


def init_node(k, prior, mirror_cform=False):
    """Node ``k`` holding ``prior``; the estimates are those of the prior."""
    cform = nig.reparameterize(prior) if mirror_cform else None
    theta_hat, sigma2_hat = nig.point_estimates(prior)
    return NodeState(id=k, stats=prior, theta_hat=theta_hat, sigma2_hat=sigma2_hat, cform=cform)


def _check_weights(node_id, row):
    weights = np.array([w for _, w in row])
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise InvalidWeightsError(
            f"node {node_id}: weights must be >= 0 and sum to 1, got sum {weights.sum():.17g}"
        )


def _checked_row(node_id, row, supplied_ids, what):
    """Validate a weight row against the ids of the supplied neighbourhood items."""
    row = tuple(sorted(row))
    expected = {l for l, _ in row}
    missing = expected - set(supplied_ids)
    if missing:
        raise IncompleteNeighbourhoodError(
            f"node {node_id}: missing {what} from neighbours {sorted(missing)}"
        )
    extra = set(supplied_ids) - expected
    if extra:
        raise IncompleteNeighbourhoodError(
            f"node {node_id}: {what} from nodes {sorted(extra)} outside the neighbourhood"
        )
    _check_weights(node_id, row)
    return row


def _checked_table(net, weights):
    """Rows of ``weights`` in node order, each checked against N_k and for convexity."""
    check_neighbourhood_support(net, weights)
    rows = []
    for k in net.nodes:
        row = tuple(sorted(weights.row(k)))
        _check_weights(k, row)
        rows.append(row)
    return rows


def _weighted_sum(values, slots_index, slots_weights, start):
    """``start + sum_j w[:, j] * values[index[:, j]]``, accumulated in slot order."""
    shape = slots_weights.shape + (1,) * (values.ndim - 1)
    terms = slots_weights.reshape(shape) * values[slots_index]
    total = start
    for j in range(slots_index.shape[1]):
        total = total + terms[:, j]
    return total


def _refresh(V, nu, mirror):
    """Estimates of stacked statistics, plus their C-form when mirrored."""
    if mirror:
        C, theta_hat, lambda_ = nig.reparameterize_stack(V)
        return NetworkState(V, nu, theta_hat, lambda_ / nu, CFormStack(C, theta_hat, lambda_, nu))
    theta_hat, lambda_ = nig.estimate_stack(V)
    return NetworkState(V, nu, theta_hat, lambda_ / nu)


def _absorb(state, Z, index, weights):
    """Incremental kernel: every row of ``state`` absorbs its slots of ``Z``."""
    outer = Z[:, :, None] * Z[:, None, :]
    V = _weighted_sum(outer, index, weights, state.V)
    V = (V + V.transpose(0, 2, 1)) / 2.0
    nu = state.nu + 1.0
    if state.cform is None:
        theta_hat, lambda_ = nig.estimate_stack(V)
        return NetworkState(V, nu, theta_hat, lambda_ / nu)

    C, theta_hat, lambda_, c_nu = state.cform
    for j in range(index.shape[1]):
        z = Z[index[:, j]]
        C, theta_hat, lambda_, c_nu = nig.rank_one_stack(
            C, theta_hat, lambda_, c_nu, z[:, 0], z[:, 1:], weights[:, j]
        )
    # sum of c is 1 only to rounding; nu is an exact per-step count
    return NetworkState(V, nu, theta_hat, lambda_ / nu, CFormStack(C, theta_hat, lambda_, nu))


def _average(V, nu, index, weights, mirror):
    """Statistic-averaging kernel over stacked ``(V, nu)``."""
    V = _weighted_sum(V, index, weights, 0.0)
    nu = _weighted_sum(nu, index, weights, 0.0)
    return _refresh((V + V.transpose(0, 2, 1)) / 2.0, nu, mirror)


def _spatial(snapshot, mode, index, weights):
    """Spatial phase for every row of ``snapshot`` at once."""
    if mode is SpatialMode.STATISTIC_AVERAGING:
        return _average(snapshot.V, snapshot.nu, index, weights, snapshot.cform is not None)
    n = snapshot.theta_hat.shape[1]
    values = np.column_stack((snapshot.theta_hat, snapshot.sigma2_hat))
    combined = _weighted_sum(values, index, weights, 0.0)
    return NetworkState(snapshot.V, snapshot.nu, combined[:, :n], combined[:, n], snapshot.cform)


def _one_row(row):
    return np.arange(len(row))[None, :], np.array([[w for _, w in row]])


def incremental_update(node, data, c_row):
    """Absorb the ``c``-weighted observations ``data = [(l, Observation), ...]`` of N_k.

    The V-form receives the weighted outer products in ascending node id and
    ``nu`` grows by one; a mirrored C-form runs the same sweep as rank-one
    updates.
    """
    by_node = dict(data)
    row = _checked_row(node.id, c_row, [l for l, _ in data], "observations")
    Z = np.array([by_node[l].extended for l, _ in row])
    if Z.shape[1] != node.stats.order + 1:
        raise InvalidObservationError(
            f"regression vector has dimension {Z.shape[1] - 1}, model order is {node.stats.order}"
        )
    state = NetworkState.from_nodes({1: node}, 1)
    return _absorb(state, Z, *_one_row(row)).row(0, node.id)


def spatial_update(node, estimates, a_row, noise_estimates=None):
    """Replace ``theta_hat`` by the ``a``-weighted combination of neighbours' estimates.

    ``noise_estimates`` (pairs ``(l, sigma2)``) are combined the same way when
    given. Statistics are left untouched.
    """
    row = _checked_row(node.id, a_row, [l for l, _ in estimates], "estimates")
    by_node = dict(estimates)
    thetas = np.stack([np.asarray(by_node[l], dtype=float) for l, _ in row])
    if noise_estimates is None:
        theta_hat = _weighted_sum(thetas, *_one_row(row), 0.0)[0]
        return NodeState(node.id, node.stats, theta_hat, node.sigma2_hat, node.cform)
    _checked_row(node.id, a_row, [l for l, _ in noise_estimates], "noise estimates")
    noise = dict(noise_estimates)
    values = np.column_stack((thetas, [float(noise[l]) for l, _ in row]))
    combined = _weighted_sum(values, *_one_row(row), 0.0)[0]
    return NodeState(node.id, node.stats, combined[:-1], float(combined[-1]), node.cform)


def spatial_statistic_average(node, stats, a_row):
    """Convex combination of the neighbours' ``(V, nu)``.

    A heuristic stand-in for the exact Kullback-Leibler consensus: the result
    becomes the node's prior for the next step.
    """
    row = _checked_row(node.id, a_row, [l for l, _ in stats], "statistics")
    by_node = dict(stats)
    V = np.stack([by_node[l].V for l, _ in row])
    nu = np.array([by_node[l].nu for l, _ in row])
    averaged = _average(V, nu, *_one_row(row), node.cform is not None)
    return averaged.row(0, node.id)


def _run_phase(nodes, task, phase, executor):
    def guarded(k):
        try:
            return task(k)
        except Exception as exc:
            raise node_step_error(k, phase, exc) from exc

    if executor is None:
        return {k: guarded(k) for k in nodes}
    results = executor.map(guarded, nodes)
    return dict(zip(nodes, results))


def _run_stacked(phase, kernel, *args):
    try:
        return kernel(*args)
    except SingularStatisticsError as exc:
        if exc.index is None:
            raise
        raise node_step_error(exc.index + 1, phase, exc) from exc


def network_step(states, net, cfg, step_data, executor=None):
    """One time step of the diffusion estimator over the whole network.

    Parameters
    ----------
    states : Mapping
        Node id -> :class:`NodeState` after the previous step, typically the
        :class:`NetworkState` returned by the previous call.
    net : Network
    cfg : DiffusionConfig
        Its weight tables must match the closed neighbourhoods of ``net``.
    step_data : Mapping
        Node id -> :class:`~estimation.nig.Observation` for this step, or a
        :class:`StepObservations`.
    executor : concurrent.futures.Executor, optional
        Runs the nodes of each phase in parallel; ``None`` evaluates each phase
        for all nodes at once. Phases are always separated by a barrier.

    Returns
    -------
    (NetworkState, NetworkState)
        The node states after the incremental phase and after the spatial phase.
    """
    layout = cfg.layout(net)
    M = net.node_count
    Z = observation_matrix(step_data, M)
    if not isinstance(states, NetworkState):
        states = NetworkState.from_nodes(states, M)
    elif len(states) != M:
        raise IncompleteNeighbourhoodError(f"{len(states)} node states for a network of {M} nodes")
    if Z.shape[1] != states.V.shape[1]:
        raise InvalidObservationError(
            f"regression vector has dimension {Z.shape[1] - 1}, model order is {states.V.shape[1] - 1}"
        )

    if executor is None:
        return _sequential_step(states, layout, Z)

    nodes = list(net.nodes)

    def incremental(k):
        if cfg.incremental_mode is IncrementalMode.SELF_ONLY:
            c_row = ((k, 1.0),)
        else:
            c_row = cfg.incremental_weights.row(k)
        data = [(l, step_data[l]) for l, _ in c_row]
        return incremental_update(states[k], data, c_row)

    after_incremental = NetworkState.from_nodes(
        _run_phase(nodes, incremental, "incremental", executor), M
    )
    if cfg.spatial_mode is SpatialMode.OFF:
        return after_incremental, after_incremental

    snapshot = after_incremental

    def spatial(k):
        a_row = cfg.spatial_weights.row(k)
        members = [l for l, _ in a_row]
        if cfg.spatial_mode is SpatialMode.STATISTIC_AVERAGING:
            return spatial_statistic_average(
                snapshot[k], [(l, snapshot[l].stats) for l in members], a_row
            )
        return spatial_update(
            snapshot[k],
            [(l, snapshot[l].theta_hat) for l in members],
            a_row,
            noise_estimates=[(l, snapshot[l].sigma2_hat) for l in members],
        )

    after_spatial = NetworkState.from_nodes(_run_phase(nodes, spatial, "spatial", executor), M)
    return after_incremental, after_spatial


def _sequential_step(states, layout, Z):
    slots = layout.incremental
    after_incremental = _run_stacked("incremental", _absorb, states, Z, slots.index, slots.weights)
    if layout.spatial is None:
        return after_incremental, after_incremental
    slots = layout.spatial
    after_spatial = _run_stacked(
        "spatial", _spatial, after_incremental, layout.spatial_mode, slots.index, slots.weights
    )
    return after_incremental, after_spatial


def check_neighbourhood_support(net, weights):
    """Raise ``InvalidWeightsError`` unless ``weights`` has one row per node covering exactly N_k."""
    extra = sorted(set(weights.rows) - set(net.nodes))
    if extra:
        raise InvalidWeightsError(f"weight rows for nodes {extra} outside the network")
    for k in net.nodes:
        if k not in weights.rows:
            raise InvalidWeightsError(f"node {k}: no weight row")
        support = {l for l, _ in weights.row(k)}
        if support != closed_neighbourhood(net, k):
            raise InvalidWeightsError(
                f"node {k}: weight support {sorted(support)} differs from the "
                f"closed neighbourhood {sorted(closed_neighbourhood(net, k))}"
            )
