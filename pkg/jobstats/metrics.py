"""Derived per-job efficiency metrics.

All metrics are computed from a :class:`jobstats.ingest.JobTimeline`.
Counter deltas count with their interval's weight, and only intervals of
usable quality (``ok``, ``wrapped``, ``gap``) contribute. A metric that
cannot be computed is :data:`Undefined`, never 0 or NaN.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, NamedTuple, Optional, Sequence, Tuple, \
    Union

import numpy as np

from jobstats.collectors import socket_of
from jobstats.ingest import USABLE, JobTimeline, NodeTimeline
from jobstats.scenario import BYTES_PER_ACCESS

__all__ = ['Undefined', 'is_defined', 'JobProfile', 'IdleResult',
           'BandwidthResult', 'cpu_idle_fraction', 'unused_memory_fraction',
           'waste_metric', 'socket_bandwidth', 'numa_cov',
           'coefficient_of_variation', 'socket_totals', 'node_mem_peaks',
           'aggregate_idle', 'profile_job', 'BYTES_PER_GB']

logger = logging.getLogger(__name__)

BYTES_PER_GB = 1e9


class _UndefinedType(object):
    """Marker for a metric that has no value for a job."""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return 'Undefined'

    def __bool__(self):
        return False

    def __reduce__(self):
        return (_UndefinedType, ())


Undefined = _UndefinedType()
Metric = Union[float, _UndefinedType]


def is_defined(value) -> bool:
    return value is not Undefined and value is not None


class IdleResult(NamedTuple):
    """CPU idle fraction with the core-seconds it was computed over."""
    value: Metric
    core_seconds: float
    idle_core_seconds: float


class BandwidthResult(NamedTuple):
    """Per-node per-socket GB/s and the mean of the node totals."""
    per_node: Dict[str, Tuple[float, ...]]
    mean: Metric


def _weighted(points, index: int) -> float:
    return sum(point.values[index] * point.weight for point in points
               if point.quality in USABLE)


def cpu_idle_fraction(timeline: JobTimeline) -> IdleResult:
    """Share of the job's core time that was idle.

    Parameters
    ----------
    timeline : JobTimeline

    Returns
    -------
    IdleResult
        Sum of idle deltas over the sum of all cpu field deltas, over every
        core and node. ``value`` is Undefined when no cpu time was covered.
    """
    total = 0.0
    idle = 0.0
    for node in timeline.nodes.values():
        schema = node.schemas.get('cpu')
        if schema is None:
            continue
        idle_index = schema.index('idle')
        for _, points in node.points('cpu'):
            for index in range(len(schema.fields)):
                amount = _weighted(points, index)
                total += amount
                if index == idle_index:
                    idle += amount
    core_seconds = total / 100.0
    idle_core_seconds = idle / 100.0
    if total <= 0:
        return IdleResult(Undefined, 0.0, 0.0)
    return IdleResult(min(max(idle / total, 0.0), 1.0), core_seconds,
                      idle_core_seconds)


def node_mem_peaks(timeline: JobTimeline) -> Dict[str, float]:
    """Per node, the highest share of memory in use at any sample."""
    peaks = {}
    for hostname, node in timeline.nodes.items():
        schema = node.schemas.get('mem')
        if schema is None:
            continue
        used_index = schema.index('used')
        used_at: Dict[int, int] = {}
        for _, points in node.points('mem'):
            for point in points:
                used_at[point.t1] = used_at.get(point.t1, 0) \
                    + point.values[used_index]
        if used_at:
            peaks[hostname] = max(used_at.values()) / node.mem_total_kb
    return peaks


def unused_memory_fraction(timeline: JobTimeline) -> Metric:
    """One minus the mean over nodes of each node's peak memory use.

    Returns
    -------
    float or Undefined
        Clamped to [0, 1]; Undefined when no node has mem samples.
    """
    peaks = node_mem_peaks(timeline)
    if not peaks:
        return Undefined
    used = float(np.mean(list(peaks.values())))
    return min(max(1.0 - used, 0.0), 1.0)


def waste_metric(idle: Metric, unused: Metric) -> Metric:
    """CPU idle fraction times unused memory fraction."""
    if not is_defined(idle) or not is_defined(unused):
        return Undefined
    return idle * unused


def socket_totals(node: NodeTimeline) -> Optional[Tuple[np.ndarray, float]]:
    """Whole-job ``mem_access`` totals per socket of a node.

    Returns
    -------
    tuple or None
        (totals per socket, covered seconds), or None when the node has no
        usable ``mem_access`` data.
    """
    schema = node.schemas.get('pmc')
    if schema is None or 'mem_access' not in schema.field_names:
        return None
    index = schema.index('mem_access')
    devices = node.points('pmc')
    if not devices:
        return None
    totals = np.zeros(node.sockets)
    for core, points in devices:
        if core >= node.cores:
            continue
        totals[socket_of(core, node.cores, node.sockets)] += \
            _weighted(points, index)
    seconds = sum(point.seconds for point in devices[0][1]
                  if point.quality in USABLE)
    if seconds <= 0:
        return None
    return totals, seconds


def socket_bandwidth(timeline: JobTimeline) -> BandwidthResult:
    """Sustained memory bandwidth per socket, in decimal GB/s.

    Returns
    -------
    BandwidthResult
        Per node the bandwidth of each socket; ``mean`` is the mean over
        nodes of the node total, or Undefined without pmc data.
    """
    per_node = {}
    for hostname, node in sorted(timeline.nodes.items()):
        measured = socket_totals(node)
        if measured is None:
            continue
        totals, seconds = measured
        per_node[hostname] = tuple(
            float(total) * BYTES_PER_ACCESS / seconds / BYTES_PER_GB
            for total in totals)
    if not per_node:
        return BandwidthResult(per_node, Undefined)
    mean = float(np.mean([sum(values) for values in per_node.values()]))
    return BandwidthResult(per_node, mean)


def coefficient_of_variation(totals: Sequence[float]) -> float:
    """Population standard deviation over mean; 0 when the mean is 0."""
    values = np.asarray(totals, dtype=float)
    mean = values.mean()
    if mean == 0:
        return 0.0
    return float(np.std(values) / mean)


def numa_cov(timeline: JobTimeline) -> Metric:
    """NUMA imbalance: mean over nodes of the CoV of socket totals."""
    covs = []
    for node in timeline.nodes.values():
        measured = socket_totals(node)
        if measured is not None:
            covs.append(coefficient_of_variation(measured[0]))
    if not covs:
        return Undefined
    return float(np.mean(covs))


def aggregate_idle(profiles: Iterable) -> Metric:
    """Core-time weighted idle fraction of a pool of profiles.

    Profiles with an undefined idle fraction are left out.
    """
    weighted = 0.0
    total = 0.0
    for profile in profiles:
        if not is_defined(profile.idle_fraction):
            continue
        weighted += profile.idle_fraction * profile.core_seconds
        total += profile.core_seconds
    if total <= 0:
        return Undefined
    return weighted / total


@dataclass(frozen=True)
class JobProfile:
    """Derived metrics of one job.

    ``waste`` is ``idle_fraction * unused_mem_fraction`` by construction.
    ``cores_per_node`` and ``sockets_per_node`` are None for a job without
    data.
    """
    job_id: str
    owner: str
    queue: str
    nodes: int
    wayness: int
    wall_hours: float
    idle_fraction: Metric
    unused_mem_fraction: Metric
    waste: Metric
    mean_bandwidth_gbps: Metric
    numa_cov: Metric
    coverage: float
    cores_per_node: Optional[int] = None
    sockets_per_node: Optional[int] = None
    core_seconds: float = 0.0
    idle_core_seconds: float = 0.0
    socket_bandwidth: Dict[str, Tuple[float, ...]] = \
        field(default_factory=dict)
    node_mem_peaks: Dict[str, float] = field(default_factory=dict)

    @property
    def node_hours(self) -> float:
        return self.nodes * self.wall_hours

    @property
    def mem_used_fraction(self) -> Metric:
        if not is_defined(self.unused_mem_fraction):
            return Undefined
        return 1.0 - self.unused_mem_fraction

    @property
    def is_full_wayness(self) -> bool:
        return self.cores_per_node is not None \
            and self.wayness == self.cores_per_node


def profile_job(timeline: JobTimeline) -> JobProfile:
    """Compute every metric of one job.

    Parameters
    ----------
    timeline : JobTimeline

    Returns
    -------
    JobProfile
    """
    job = timeline.job
    idle = cpu_idle_fraction(timeline)
    unused = unused_memory_fraction(timeline)
    bandwidth = socket_bandwidth(timeline)
    shapes = sorted({(node.cores, node.sockets)
                     for node in timeline.nodes.values()})
    cores, sockets = shapes[0] if shapes else (None, None)
    if len(shapes) > 1:
        logger.warning('job %s spans nodes of different shapes %s',
                       job.job_id, shapes)
    return JobProfile(job_id=job.job_id, owner=job.owner, queue=job.queue,
                      nodes=job.nodes, wayness=job.wayness,
                      wall_hours=job.wall_hours, idle_fraction=idle.value,
                      unused_mem_fraction=unused,
                      waste=waste_metric(idle.value, unused),
                      mean_bandwidth_gbps=bandwidth.mean,
                      numa_cov=numa_cov(timeline),
                      coverage=timeline.coverage, cores_per_node=cores,
                      sockets_per_node=sockets,
                      core_seconds=idle.core_seconds,
                      idle_core_seconds=idle.idle_core_seconds,
                      socket_bandwidth=bandwidth.per_node,
                      node_mem_peaks=node_mem_peaks(timeline))
