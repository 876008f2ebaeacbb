"""A deterministic synthetic cluster for tests and desk-scale experiments.

A :class:`SyntheticScenario` describes nodes and the jobs placed on them.
Every counter a synthetic node reports is the integral, from the scenario
start, of rates set by the jobs running on it: a job with wayness ``w`` and
idle pattern ``p`` keeps its ``w`` lowest-indexed cores busy at a fraction
``1 - p``, and its DRAM traffic accrues as ``mem_access`` events (64 bytes
each) on the sockets in proportion to its NUMA skew. Values are floored at
emission, so consecutive samples never lose or gain core time.

Scenarios are stored as INI text::

    [scenario]
    seed = 7
    nodes = 2
    cores_per_node = 16

    [job 271828]
    owner = alice
    nodes = 0,1
    wayness = 16
    start = 1325808300
    end = 1325814300
"""
import configparser
import functools
import logging
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from jobstats.collectors import SYNTHETIC, TYPE_ORDER, Source, \
    SourceDescriptor, event_set, schema_for, socket_of, \
    synthetic_device_counts
from jobstats.load import AccountingRecord
from jobstats.locations import DEFAULT_INTERVAL
from jobstats.record_format import RecordGroup, Sample

__all__ = ['SyntheticJob', 'SyntheticScenario', 'SyntheticNode',
           'SyntheticSource', 'PlantedPool', 'synth_sample',
           'parse_scenario', 'load_scenario', 'format_scenario',
           'planted_pool', 'BYTES_PER_ACCESS', 'PRODUCTION_QUEUES']

logger = logging.getLogger(__name__)

WORD = 2 ** 64
BYTES_PER_ACCESS = 64
PRODUCTION_QUEUES = frozenset({'normal', 'long', 'large', 'serial'})


@dataclass(frozen=True)
class SyntheticJob:
    """A job placed on synthetic nodes.

    Attributes
    ----------
    job_id : str
    nodes : tuple of int
        Indices of the nodes the job runs on.
    wayness : int
        Processes per node; they occupy the lowest-indexed cores.
    start, end : int
        Job interval in epoch seconds.
    owner, queue : str
    idle_pattern : float
        Fraction of time each of the job's cores is idle.
    numa_skew : tuple of float
        Share of the job's DRAM traffic per socket; empty means uniform.
    mem_used_fraction : float
        Share of node memory the job occupies while running.
    dram_bytes_per_sec : float
        DRAM traffic per node.
    """
    job_id: str
    nodes: Tuple[int, ...]
    wayness: int
    start: int
    end: int
    owner: str = 'user'
    queue: str = 'normal'
    idle_pattern: float = 0.0
    numa_skew: Tuple[float, ...] = ()
    mem_used_fraction: float = 0.0
    dram_bytes_per_sec: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'nodes', tuple(self.nodes))
        object.__setattr__(self, 'numa_skew', tuple(self.numa_skew))
        if not self.nodes or len(set(self.nodes)) != len(self.nodes):
            raise ValueError('job %s needs distinct node indices'
                             % self.job_id)
        if self.wayness < 1:
            raise ValueError('job %s has wayness < 1' % self.job_id)
        if self.end <= self.start:
            raise ValueError('job %s ends before it starts' % self.job_id)
        for name in ('idle_pattern', 'mem_used_fraction'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError('job %s: %s outside [0, 1]'
                                 % (self.job_id, name))
        if self.dram_bytes_per_sec < 0:
            raise ValueError('job %s: negative DRAM rate' % self.job_id)
        if self.numa_skew:
            if any(weight < 0 for weight in self.numa_skew):
                raise ValueError('job %s: negative NUMA weight'
                                 % self.job_id)
            if abs(sum(self.numa_skew) - 1.0) > 1e-6:
                raise ValueError('job %s: NUMA weights must sum to 1'
                                 % self.job_id)

    def is_active(self, timestamp: int) -> bool:
        return self.start <= timestamp <= self.end


@dataclass(frozen=True)
class SyntheticScenario:
    """A synthetic cluster: node shape, jobs, and the simulated time span.

    ``start`` defaults to the earliest job start and ``end`` to the latest
    job end. ``wrap_offset`` > 0 starts every counter that many increments
    below 2^64 so that it wraps during the run.
    """
    seed: int = 0
    nodes: int = 1
    cores_per_node: int = 16
    sockets_per_node: int = 4
    mem_total_kb: int = 32 * 1024 * 1024
    jobs: Tuple[SyntheticJob, ...] = ()
    start: Optional[int] = None
    end: Optional[int] = None
    interval: int = DEFAULT_INTERVAL
    arch: str = 'synthetic'
    wrap_offset: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'jobs', tuple(self.jobs))
        if not 0 <= self.seed < WORD:
            raise ValueError('seed must be an unsigned 64-bit integer')
        if self.nodes < 1 or self.mem_total_kb < 1 or self.interval < 1:
            raise ValueError('nodes, mem_total_kb and interval must be '
                             'positive')
        if not self.cores_per_node >= self.sockets_per_node >= 1:
            raise ValueError('need cores_per_node >= sockets_per_node >= 1')
        if not 0 <= self.wrap_offset < WORD:
            raise ValueError('wrap_offset out of range')
        event_set(self.arch)
        job_ids = [job.job_id for job in self.jobs]
        if len(set(job_ids)) != len(job_ids):
            raise ValueError('duplicate job ids in scenario')
        for job in self.jobs:
            if any(not 0 <= node < self.nodes for node in job.nodes):
                raise ValueError('job %s runs on a node outside 0..%d'
                                 % (job.job_id, self.nodes - 1))
            if job.wayness > self.cores_per_node:
                raise ValueError('job %s: wayness %d exceeds %d cores'
                                 % (job.job_id, job.wayness,
                                    self.cores_per_node))
            if job.numa_skew and \
                    len(job.numa_skew) != self.sockets_per_node:
                raise ValueError('job %s: %d NUMA weights for %d sockets'
                                 % (job.job_id, len(job.numa_skew),
                                    self.sockets_per_node))
        if self.start is None:
            object.__setattr__(self, 'start', min(
                (job.start for job in self.jobs), default=0))
        if self.end is None:
            object.__setattr__(self, 'end', max(
                (job.end for job in self.jobs),
                default=self.start + 86400))
        if self.end <= self.start:
            raise ValueError('scenario end must follow its start')

    def hostname(self, node: int) -> str:
        return 'n%03d' % (node + 1)

    def jobs_on(self, node: int) -> List[SyntheticJob]:
        return [job for job in self.jobs if node in job.nodes]

    def skew(self, job: SyntheticJob) -> Tuple[float, ...]:
        if job.numa_skew:
            return job.numa_skew
        return (1.0 / self.sockets_per_node,) * self.sockets_per_node

    def accounting(self) -> List[AccountingRecord]:
        """Accounting records of the scenario's jobs, ordered by job id."""
        return [AccountingRecord(job.job_id, job.owner, job.queue,
                                 len(job.nodes), job.wayness, job.start,
                                 job.end,
                                 [self.hostname(node) for node in job.nodes])
                for job in sorted(self.jobs, key=lambda job: job.job_id)]


class _NodeModel(object):
    """Piecewise-constant rates of one node, integrated on demand."""

    def __init__(self, scenario: SyntheticScenario, node: int):
        self.scenario = scenario
        self.node = node
        self.jobs = scenario.jobs_on(node)
        cores = scenario.cores_per_node
        sockets = scenario.sockets_per_node
        points = sorted({scenario.start}
                        | {max(job.start, scenario.start) for job in self.jobs}
                        | {max(job.end, scenario.start) for job in self.jobs})
        self.seg_start = np.array(points, dtype=float)
        self.seg_end = np.append(self.seg_start[1:], np.inf)
        core_rate = np.zeros((len(points), cores))
        socket_rate = np.zeros((len(points), sockets))
        self.multi_rate = np.zeros(len(points))
        for k, point in enumerate(points):
            for job in self.jobs:
                if not job.start <= point < job.end:
                    continue
                core_rate[k, :job.wayness] += 1.0 - job.idle_pattern
                socket_rate[k] += np.asarray(scenario.skew(job)) \
                    * job.dram_bytes_per_sec / BYTES_PER_ACCESS
                if len(job.nodes) > 1:
                    self.multi_rate[k] += 1.0
        # A core cannot be more than fully busy
        self.core_rate = np.minimum(core_rate, 1.0)
        self.socket_rate = socket_rate
        self.counts = synthetic_device_counts(cores, sockets)
        self.schemas = {type_name: schema_for(type_name, scenario.arch)
                        for type_name in TYPE_ORDER}
        self.bases = self._bases()
        self.socket_cores = [[core for core in range(cores)
                              if socket_of(core, cores, sockets) == socket]
                             for socket in range(sockets)]

    def _bases(self) -> Dict[str, List[List[int]]]:
        rng = np.random.default_rng([self.scenario.seed, self.node])
        bases = {}
        for type_name in TYPE_ORDER:
            shape = (self.counts[type_name],
                     len(self.schemas[type_name].fields))
            if self.scenario.wrap_offset:
                jitter = rng.integers(0, 2 ** 16, size=shape)
                offsets = (WORD - self.scenario.wrap_offset
                           + jitter.astype(object)) % WORD
            else:
                offsets = rng.integers(0, 2 ** 32, size=shape).astype(object)
            bases[type_name] = offsets.tolist()
        return bases

    def values(self, timestamp: int) -> Dict[str, List[List[int]]]:
        scenario = self.scenario
        elapsed = max(int(timestamp) - scenario.start, 0)
        overlap = np.clip(np.minimum(self.seg_end, timestamp)
                          - self.seg_start, 0.0, None)
        busy_exact = overlap @ self.core_rate * 100.0
        access_exact = overlap @ self.socket_rate
        multi = float(overlap @ self.multi_rate)
        active = [job for job in self.jobs if job.is_active(timestamp)]
        cores = scenario.cores_per_node
        sockets = scenario.sockets_per_node

        busy = [min(int(math.floor(value)), elapsed * 100)
                for value in busy_exact]
        total_busy = sum(busy)
        cpu = []
        for core_busy in busy:
            system = core_busy // 10
            cpu.append([core_busy - system, 0, system,
                        elapsed * 100 - core_busy, 0, 0, 0])

        frac = min(sum(job.mem_used_fraction for job in active), 1.0)
        used = int(math.floor(frac * scenario.mem_total_kb / sockets))
        mem = []
        for socket in range(sockets):
            total = scenario.mem_total_kb // sockets
            if socket == 0:
                total += scenario.mem_total_kb % sockets
            mem.append([total, total - used, used, 0])

        accesses = [0] * cores
        for socket, members in enumerate(self.socket_cores):
            count = int(math.floor(access_exact[socket]))
            width = len(members)
            for rank, core in enumerate(members):
                accesses[core] = (count - rank + width - 1) // width
        events = {
            'flops': lambda core: int(math.floor(busy_exact[core] * 1e7)),
            'mem_access': lambda core: accesses[core],
            'dcache_fill': lambda core: 2 * accesses[core],
            'numa_traffic': lambda core: accesses[core] // 4,
            'l1d_hits': lambda core: int(math.floor(busy_exact[core] * 5e6)),
        }
        pmc = [[events[name](core) for name in self.schemas['pmc'].field_names]
               for core in range(cores)]

        ways = sum(job.wayness for job in active)
        load = int(round(sum(job.wayness * (1.0 - job.idle_pattern)
                             for job in active) * 100))
        ib_bytes = int(math.floor(multi * 5e7))
        return {
            'cpu': cpu,
            'mem': mem,
            'vm': [[0, 0, 4 * elapsed, 2 * elapsed, 5 * total_busy,
                    elapsed // 3600]],
            'load': [[load, load, load, ways + 1, 200 + 2 * ways]],
            'net': [[2000 * elapsed, 2 * elapsed, 1500 * elapsed,
                     2 * elapsed],
                    [ib_bytes // 10 + 100 * elapsed, elapsed,
                     ib_bytes // 10 + 100 * elapsed, elapsed]],
            'block': [[elapsed // (10 * d), 8 * (elapsed // (10 * d)),
                       elapsed // (5 * d), 8 * (elapsed // (5 * d))]
                      for d in (1, 2)],
            'ipc': [[ways, len(active), 0]],
            'irq': [[1000 * elapsed + total_busy,
                     500 * elapsed + total_busy // 2, 200 * elapsed]],
            'fs': [[d * 4096 * (total_busy // 100),
                    d * 1024 * (total_busy // 100),
                    total_busy // 100 + elapsed // 60] for d in (1, 2)],
            'ib': [[ib_bytes, ib_bytes, ib_bytes // 2048,
                    ib_bytes // 2048]],
            'pmc': pmc,
        }

    def samples(self, type_name: str, raw: List[List[int]]) -> List[Sample]:
        schema = self.schemas[type_name]
        counters = [spec.is_counter for spec in schema.fields]
        samples = []
        for device, (values, bases) in enumerate(
                zip(raw, self.bases[type_name])):
            samples.append(Sample(type_name, device, [
                (base + value) % WORD if counter else value
                for value, base, counter in zip(values, bases, counters)]))
        return samples


@functools.lru_cache(maxsize=64)
def _node_model(scenario: SyntheticScenario, node: int) -> _NodeModel:
    return _NodeModel(scenario, node)


class SyntheticNode(object):
    """One node of a scenario, able to produce samples at any time.

    Parameters
    ----------
    scenario : SyntheticScenario
    node : int
        Node index, ``0 <= node < scenario.nodes``.

    Raises
    ------
    ValueError
        If the node index is out of range.
    """

    def __init__(self, scenario: SyntheticScenario, node: int):
        if not 0 <= node < scenario.nodes:
            raise ValueError('node %d outside 0..%d'
                             % (node, scenario.nodes - 1))
        self.scenario = scenario
        self.node = node
        self._model = _node_model(scenario, node)
        self._cached: Tuple[Optional[int], Dict] = (None, {})

    @property
    def hostname(self) -> str:
        return self.scenario.hostname(self.node)

    def active_jobs(self, timestamp: int) -> FrozenSet[str]:
        return frozenset(job.job_id for job in self._model.jobs
                         if job.is_active(timestamp))

    def _values(self, timestamp: int) -> Dict[str, List[List[int]]]:
        if self._cached[0] != timestamp:
            self._cached = (timestamp, self._model.values(timestamp))
        return self._cached[1]

    def samples(self, type_name: str, timestamp: int) -> List[Sample]:
        """Samples of one record type at ``timestamp``."""
        return self._model.samples(type_name,
                                   self._values(timestamp)[type_name])

    def sample(self, timestamp: int,
               types: Sequence[str] = TYPE_ORDER) -> RecordGroup:
        """A full record group at ``timestamp``, tagged with active jobs."""
        samples = []
        for type_name in types:
            samples.extend(self.samples(type_name, timestamp))
        return RecordGroup(int(timestamp), self.active_jobs(timestamp),
                           samples)

    def source(self, type_name: str) -> 'SyntheticSource':
        return SyntheticSource(self, type_name)


class SyntheticSource(Source):
    """Serves one record type of a synthetic node."""

    def __init__(self, node: SyntheticNode, type_name: str):
        self.node = node
        self.descriptor = SourceDescriptor(
            type_name, schema_for(type_name, node.scenario.arch),
            node._model.counts[type_name], SYNTHETIC)

    def read(self, timestamp: int) -> List[Sample]:
        return self.node.samples(self.type_name, timestamp)


def synth_sample(scenario: SyntheticScenario, node: int,
                 timestamp: int) -> RecordGroup:
    """Return the record group node ``node`` reports at ``timestamp``.

    Parameters
    ----------
    scenario : SyntheticScenario
    node : int
        Node index.
    timestamp : int
        Epoch seconds.

    Returns
    -------
    RecordGroup
        Samples of every canonical record type, tagged with the jobs
        running on the node. The result depends only on the arguments.

    Raises
    ------
    ValueError
        If ``node`` is out of range.
    """
    return SyntheticNode(scenario, node).sample(timestamp)


_SCENARIO_INTS = ('seed', 'nodes', 'cores_per_node', 'sockets_per_node',
                  'mem_total_kb', 'start', 'end', 'interval', 'wrap_offset')
_JOB_FLOATS = ('idle_pattern', 'mem_used_fraction', 'dram_bytes_per_sec')


def _split_list(value: str) -> List[str]:
    return [part.strip() for part in value.split(',') if part.strip()]


def parse_scenario(text: str) -> SyntheticScenario:
    """Parse INI scenario text.

    Parameters
    ----------
    text : str
        A ``[scenario]`` section with node shape and time span options and
        one ``[job <id>]`` section per job.

    Returns
    -------
    SyntheticScenario

    Raises
    ------
    ValueError
        If an option is missing, unknown, or has an invalid value.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    options = {}
    if parser.has_section('scenario'):
        for key, value in parser.items('scenario'):
            if key == 'arch':
                options[key] = value.strip()
            elif key in _SCENARIO_INTS:
                options[key] = int(value)
            else:
                raise ValueError('unknown scenario option %r' % key)
    jobs = []
    for section in parser.sections():
        if section == 'scenario':
            continue
        kind, _, job_id = section.partition(' ')
        if kind != 'job' or not job_id.strip():
            raise ValueError('unknown section [%s]' % section)
        values = dict(parser.items(section))
        try:
            job = dict(job_id=job_id.strip(),
                       nodes=[int(node) for node in
                              _split_list(values.pop('nodes', '0'))],
                       wayness=int(values.pop('wayness')),
                       start=int(values.pop('start')),
                       end=int(values.pop('end')))
        except KeyError as err:
            raise ValueError('[%s] lacks option %s' % (section, err)) \
                from None
        for key in ('owner', 'queue'):
            if key in values:
                job[key] = values.pop(key).strip()
        for key in _JOB_FLOATS:
            if key in values:
                job[key] = float(values.pop(key))
        if 'numa_skew' in values:
            job['numa_skew'] = [float(weight) for weight in
                                _split_list(values.pop('numa_skew'))]
        if values:
            raise ValueError('[%s] has unknown option(s) %s'
                             % (section, ', '.join(sorted(values))))
        jobs.append(SyntheticJob(**job))
    return SyntheticScenario(jobs=jobs, **options)


def load_scenario(path: str) -> SyntheticScenario:
    """Read a scenario file, see :func:`parse_scenario`."""
    with open(path, 'r') as fh:
        return parse_scenario(fh.read())


def format_scenario(scenario: SyntheticScenario) -> str:
    """Return INI text that parses back to ``scenario``."""
    lines = ['[scenario]']
    for key in _SCENARIO_INTS:
        lines.append('%s = %d' % (key, getattr(scenario, key)))
    lines.append('arch = %s' % scenario.arch)
    for job in scenario.jobs:
        lines += ['', '[job %s]' % job.job_id,
                  'owner = %s' % job.owner,
                  'queue = %s' % job.queue,
                  'nodes = %s' % ','.join(str(node) for node in job.nodes),
                  'wayness = %d' % job.wayness,
                  'start = %d' % job.start,
                  'end = %d' % job.end]
        lines += ['%s = %r' % (key, getattr(job, key)) for key in _JOB_FLOATS]
        if job.numa_skew:
            lines.append('numa_skew = %s'
                         % ','.join(repr(weight) for weight in job.numa_skew))
    return '\n'.join(lines) + '\n'


@dataclass(frozen=True)
class PlantedPool:
    """A synthetic job pool with known anomalies.

    Attributes
    ----------
    scenario : SyntheticScenario
    waste_jobs : frozenset of str
        Production jobs of at least one node-hour whose waste exceeds 0.9.
    imbalance_jobs : frozenset of str
        Production full-wayness jobs above 1 GB/s with NUMA CoV above 1.
    filtered_jobs : frozenset of str
        Jobs that would flag but are too small or in a debug queue.
    production_queues : frozenset of str
    expected_idle : float
        Closed-form core-time weighted idle fraction of the jobs that
        survive filtering.
    imbalance_top_share : float
        Share of the imbalance flags owned by their most frequent owner.
    """
    scenario: SyntheticScenario
    waste_jobs: FrozenSet[str]
    imbalance_jobs: FrozenSet[str]
    filtered_jobs: FrozenSet[str]
    production_queues: FrozenSet[str] = PRODUCTION_QUEUES
    expected_idle: float = 0.0
    imbalance_top_share: float = 0.0


POOL_START = 1325808000
POOL_SLOT = 7200
POOL_SLOTS = 26
POOL_NODES = 8
_WASTE_OWNERS = ('wanda', 'walt', 'wes')
_IMBALANCE_OWNERS = ('ivan',) * 7 + ('irene', 'igor')
_OWNERS = ('alice', 'bob', 'carol', 'dave', 'erin', 'frank', 'grace',
           'heidi', 'judy', 'mallory', 'oscar', 'peggy')


def planted_pool(seed: int = 0) -> PlantedPool:
    """Build the seeded 8-node, 200-job pool with planted anomalies.

    Each of the 8 nodes (16 cores, 4 sockets) has 26 two-hour slots. Eight
    two-node jobs take two slots on a node pair; the other 192 jobs take one
    slot each. Planted are 12 wasteful jobs (one busy-ish core, almost no
    memory), 9 NUMA-imbalanced full-wayness jobs (7 of them owned by one
    user), copies of both that are filtered out (half-hour or debug queue),
    and decoys close to either rule.
    """
    rng = np.random.default_rng(seed)

    def uniform(low, high):
        return round(float(rng.uniform(low, high)), 3)

    def spec(kind, owner, wayness, idle, mem, dram, skew=(), queue='normal',
             duration=6000):
        return dict(kind=kind, owner=owner, queue=queue, wayness=wayness,
                    idle_pattern=idle, mem_used_fraction=mem,
                    dram_bytes_per_sec=dram, numa_skew=skew,
                    duration=duration)

    def waste_like(i, **extra):
        return spec('waste', _WASTE_OWNERS[i % 3], 1, uniform(0.3, 0.6),
                    uniform(0.01, 0.03), uniform(1e8, 5e8), **extra)

    def imbalance_like(i, **extra):
        skew = (1.0, 0.0, 0.0, 0.0) if i % 3 else (0.9, 0.1, 0.0, 0.0)
        return spec('imbalance', _IMBALANCE_OWNERS[i % 9], 16,
                    uniform(0.0, 0.1), uniform(0.3, 0.6), uniform(2e9, 6e9),
                    skew, **extra)

    singles = []
    singles += [waste_like(i) for i in range(12)]
    singles += [waste_like(i, duration=1800) for i in range(4)]
    singles += [waste_like(i, queue='debug') for i in range(4)]
    singles += [imbalance_like(i) for i in range(9)]
    singles += [imbalance_like(i, duration=1800) for i in range(3)]
    singles += [imbalance_like(i, queue='debug') for i in range(3)]
    singles += [spec('decoy', 'oscar', 8, 0.0, 0.4, 3e9, (1.0, 0, 0, 0))
                for _ in range(6)]
    singles += [spec('decoy', 'peggy', 16, 0.0, 0.4, 5e8, (1.0, 0, 0, 0))
                for _ in range(4)]
    singles += [spec('decoy', 'judy', 16, 0.0, 0.4, 4e9, (0.4, 0.3, 0.3, 0))
                for _ in range(4)]
    singles += [spec('decoy', 'mallory', 2, 0.0, 0.02, 1e8)
                for _ in range(3)]
    singles += [spec('decoy', 'mallory', 1, 0.0, 0.1, 1e8)
                for _ in range(3)]
    while len(singles) < 192:
        singles.append(spec('background',
                            _OWNERS[int(rng.integers(len(_OWNERS)))],
                            int(rng.choice([16, 8, 4])), uniform(0.0, 0.2),
                            uniform(0.2, 0.8), uniform(1e9, 3e9),
                            queue=str(rng.choice(['normal', 'long']))))
    singles = [singles[i] for i in rng.permutation(len(singles))]

    placed = []
    for k in range(8):
        pair = (2 * (k % 4), 2 * (k % 4) + 1)
        placed.append((k // 4, pair, spec(
            'background', _OWNERS[k], 16, uniform(0.0, 0.2),
            uniform(0.2, 0.8), uniform(1e9, 3e9), queue='large')))
    free = [(slot, (node,)) for slot in range(POOL_SLOTS)
            for node in range(POOL_NODES) if slot >= 2]
    for (slot, nodes), job in zip(free, singles):
        placed.append((slot, nodes, job))
    placed.sort(key=lambda item: (item[0], item[1]))

    jobs = []
    expected = {'waste': set(), 'imbalance': set()}
    filtered = set()
    idle_core_seconds = 0.0
    core_seconds = 0.0
    for index, (slot, nodes, job) in enumerate(placed):
        job_id = str(300001 + index)
        start = POOL_START + slot * POOL_SLOT + 300
        duration = job.pop('duration')
        kind = job.pop('kind')
        jobs.append(SyntheticJob(job_id=job_id, nodes=nodes, start=start,
                                 end=start + duration, **job))
        small = len(nodes) * duration < 3600
        if small or job['queue'] not in PRODUCTION_QUEUES:
            if kind in expected:
                filtered.add(job_id)
            continue
        if kind in expected:
            expected[kind].add(job_id)
        busy = job['wayness'] * (1.0 - job['idle_pattern'])
        core_seconds += len(nodes) * 16 * duration
        idle_core_seconds += len(nodes) * (16 - busy) * duration

    scenario = SyntheticScenario(seed=seed, nodes=POOL_NODES,
                                 cores_per_node=16, sockets_per_node=4,
                                 jobs=jobs, start=POOL_START,
                                 end=POOL_START + POOL_SLOTS * POOL_SLOT)
    return PlantedPool(scenario, frozenset(expected['waste']),
                       frozenset(expected['imbalance']), frozenset(filtered),
                       PRODUCTION_QUEUES, idle_core_seconds / core_seconds,
                       7 / 9)
