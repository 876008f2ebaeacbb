"""Turn raw per-node stats files and accounting rows into job timelines.

Counter samples are differenced into :class:`DeltaPoint` intervals with
wraparound correction and reset detection, then the intervals of every job
are cut out of its nodes' data by job tag and time window.
"""
import glob
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, \
    Tuple

from tqdm import tqdm

from jobstats.load import AccountingRecord, RowError, read_accounting
from jobstats.locations import DEFAULT_INTERVAL
from jobstats.record_format import FormatError, Mark, ParsedFile, \
    RecordGroup, TypeSchema, read_file
from jobstats.scenario import PRODUCTION_QUEUES

__all__ = ['DeltaPoint', 'DeltaConfig', 'NodeData', 'NodeTimeline',
           'JobTimeline', 'IngestReport', 'delta_series', 'assemble_job',
           'filter_jobs', 'load_stats_dir', 'OK', 'WRAPPED',
           'RESET_DROPPED', 'GAP', 'QUALITIES', 'USABLE', 'COUNTER_WIDTH']

logger = logging.getLogger(__name__)

COUNTER_WIDTH = 2 ** 64
OK = 'ok'
WRAPPED = 'wrapped'
RESET_DROPPED = 'reset_dropped'
GAP = 'gap'
QUALITIES = (OK, WRAPPED, RESET_DROPPED, GAP)
#: Interval qualities whose deltas enter metric sums
USABLE = frozenset({OK, WRAPPED, GAP})

# Per-second ceilings used to tell a wrap from a counter reset
DEFAULT_MAX_RATES = {
    'cs': 101.0,
    'kb': 1e8,
    'b': 1e11,
    'p': 1e9,
    'ev': 1e12,
    'none': 1e12,
}


@dataclass(frozen=True)
class DeltaPoint:
    """One interval of a device's series.

    Counter fields hold non-negative deltas and gauge fields the value at
    ``t1``. ``weight`` is the share of the interval inside the job window;
    counter deltas count with that weight in metrics.
    """
    t0: int
    t1: int
    values: Tuple[int, ...]
    quality: str = OK
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'values', tuple(self.values))
        if self.t1 <= self.t0:
            raise ValueError('interval end %d not after start %d'
                             % (self.t1, self.t0))
        if self.quality not in QUALITIES:
            raise ValueError('invalid quality %r' % self.quality)
        if not 0.0 < self.weight <= 1.0:
            raise ValueError('weight %r outside (0, 1]' % self.weight)

    @property
    def seconds(self) -> float:
        """Interval length counted towards the job."""
        return (self.t1 - self.t0) * self.weight


@dataclass(frozen=True)
class DeltaConfig:
    """Parameters of delta computation.

    Attributes
    ----------
    tick : int
        Nominal collection period in seconds.
    gap_factor : float
        Intervals longer than ``gap_factor * tick`` are marked as gaps.
    max_rates : dict
        Highest plausible increase per second by unit; a wrapped delta
        above ``rate * interval`` is taken as a counter reset.
    field_rates : dict
        Overrides keyed ``<type_name>.<field>``.
    """
    tick: int = DEFAULT_INTERVAL
    gap_factor: float = 3.0
    max_rates: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_MAX_RATES))
    field_rates: Mapping[str, float] = field(default_factory=dict)

    def max_rate(self, type_name: str, spec) -> float:
        key = '%s.%s' % (type_name, spec.name)
        if key in self.field_rates:
            return self.field_rates[key]
        return self.max_rates.get(spec.unit, DEFAULT_MAX_RATES['none'])


def delta_series(samples: Sequence[Tuple[int, Sequence[int]]],
                 schema: TypeSchema,
                 config: Optional[DeltaConfig] = None,
                 segments: Optional[Sequence[int]] = None) \
        -> List[DeltaPoint]:
    """Difference one device's samples into intervals.

    Parameters
    ----------
    samples : sequence of (timestamp, values)
        Time-ordered samples of one (node, type, device).
    schema : TypeSchema
        Says which fields are counters.
    config : DeltaConfig, optional
    segments : sequence of int, optional
        Segment number of each sample. Samples from different segments
        (separate files, or either side of a ``%rotate``) are compared for
        resets only: a counter that went down across a boundary marks the
        interval ``reset_dropped`` instead of being wrap-corrected.

    Returns
    -------
    list of DeltaPoint
        One point per consecutive sample pair. Counter deltas are never
        negative; ``reset_dropped`` points carry zero counter deltas.
    """
    config = config or DeltaConfig()
    counters = [spec.is_counter for spec in schema.fields]
    limits = [config.max_rate(schema.type_name, spec)
              for spec in schema.fields]
    points = []
    previous = None
    for index, (timestamp, values) in enumerate(samples):
        segment = segments[index] if segments is not None else 0
        if len(values) != len(counters):
            logger.debug('%s sample at %d has %d values, restarting series',
                         schema.type_name, timestamp, len(values))
            previous = None
            continue
        if previous is not None and timestamp <= previous[0]:
            continue
        if previous is not None:
            points.append(_delta_point(previous, (timestamp, values, segment),
                                       counters, limits, config))
        previous = (timestamp, values, segment)
    return points


def _delta_point(previous, current, counters, limits, config) -> DeltaPoint:
    t0, before, segment0 = previous
    t1, after, segment1 = current
    elapsed = t1 - t0
    boundary = segment0 != segment1
    wrapped = reset = False
    deltas = []
    for prev, curr, counter, limit in zip(before, after, counters, limits):
        if not counter:
            deltas.append(curr)
            continue
        if curr >= prev:
            deltas.append(curr - prev)
            continue
        if boundary:
            reset = True
            deltas.append(0)
            continue
        delta = curr + COUNTER_WIDTH - prev
        if delta > limit * elapsed:
            reset = True
            deltas.append(0)
        else:
            wrapped = True
            deltas.append(delta)
    if reset:
        quality = RESET_DROPPED
        deltas = [0 if counter else value
                  for value, counter in zip(deltas, counters)]
    elif elapsed > config.gap_factor * config.tick:
        quality = GAP
    elif wrapped:
        quality = WRAPPED
    else:
        quality = OK
    return DeltaPoint(t0, t1, deltas, quality)


class NodeData(object):
    """The parsed stats files of one node, indexed by job id.

    Files are ordered by their first timestamp. Every file, and every part
    of a file following a ``%rotate`` mark, is a separate segment. A
    ``%begin`` mark at the same second as the group before it adds its job
    to that group's tags, so a job starting as another one ends keeps the
    shared burst as its first sample.
    """

    def __init__(self, hostname: str):
        self.hostname = hostname
        self.groups: List[Tuple[int, RecordGroup]] = []
        self.segment_schemas: List[Dict[str, TypeSchema]] = []
        self.headers = []
        self.skipped = 0
        self._files: List[Tuple[int, str, ParsedFile]] = []
        self._index: Optional[Dict[str, List[int]]] = None

    def add_file(self, parsed: ParsedFile, name: str = '') -> None:
        first = next((item.timestamp for item in parsed.items
                      if isinstance(item, (RecordGroup, Mark))), math.inf)
        self._files.append((first, name, parsed))
        self.skipped += parsed.skipped
        self._index = None

    def _build(self) -> None:
        self.groups = []
        self.segment_schemas = []
        self.headers = []
        for _, _, parsed in sorted(self._files, key=lambda item: item[:2]):
            self.headers.append(parsed.header)
            schemas = parsed.header.schema_map()
            self.segment_schemas.append(schemas)
            last = None
            for item in parsed.items:
                if isinstance(item, Mark) and item.kind == 'rotate':
                    self.segment_schemas.append(schemas)
                elif isinstance(item, Mark) and item.kind == 'begin':
                    self._join_last_group(item)
                elif isinstance(item, RecordGroup):
                    if last is not None and item.timestamp <= last:
                        continue
                    last = item.timestamp
                    self.groups.append((len(self.segment_schemas) - 1, item))
        self.groups.sort(key=lambda pair: pair[1].timestamp)
        deduped = []
        for pair in self.groups:
            if deduped and deduped[-1][1].timestamp == pair[1].timestamp:
                continue
            deduped.append(pair)
        self.groups = deduped
        index = defaultdict(list)
        for position, (_, group) in enumerate(self.groups):
            for job_id in group.job_ids:
                index[job_id].append(position)
        self._index = dict(index)

    def _join_last_group(self, mark: Mark) -> None:
        # hooks write no second burst at an instant that already has one
        if not self.groups or mark.job_id is None:
            return
        segment, group = self.groups[-1]
        if group.timestamp == mark.timestamp \
                and mark.job_id not in group.job_ids:
            self.groups[-1] = (segment, replace(
                group, job_ids=group.job_ids | {mark.job_id}))

    @property
    def header(self):
        if self._index is None:
            self._build()
        return self.headers[-1] if self.headers else None

    def interval(self, default: int = DEFAULT_INTERVAL) -> int:
        """The collection period from the newest ``$interval`` metadata.

        Files without a usable ``$interval`` give ``default``.
        """
        if self._index is None:
            self._build()
        for header in reversed(self.headers):
            value = header.extras.get('interval')
            if value is None:
                continue
            try:
                interval = int(value)
            except ValueError:
                interval = 0
            if interval > 0:
                return interval
            logger.warning('%s: ignoring $interval %r', self.hostname, value)
        return default

    def groups_for(self, job_id: str, low: int, high: int) \
            -> List[Tuple[int, RecordGroup]]:
        """Groups tagged with ``job_id`` with ``low <= timestamp <= high``."""
        if self._index is None:
            self._build()
        return [self.groups[position]
                for position in self._index.get(job_id, ())
                if low <= self.groups[position][1].timestamp <= high]


@dataclass
class NodeTimeline:
    """One node's part of a job timeline."""
    hostname: str
    cores: int
    sockets: int
    mem_total_kb: int
    schemas: Dict[str, TypeSchema] = field(default_factory=dict)
    series: Dict[Tuple[str, int], List[DeltaPoint]] = \
        field(default_factory=dict)

    def points(self, type_name: str) \
            -> List[Tuple[int, List[DeltaPoint]]]:
        """(device_id, points) of one type, ordered by device id."""
        return sorted((device, points) for (name, device), points
                      in self.series.items() if name == type_name)


@dataclass
class JobTimeline:
    """The delta series of one job on each of its nodes.

    ``coverage`` is the share of the job's wall time covered by ``ok`` or
    ``wrapped`` cpu intervals, averaged over the listed nodes (a missing
    node counts as uncovered).
    """
    job: AccountingRecord
    nodes: Dict[str, NodeTimeline] = field(default_factory=dict)
    coverage: float = 0.0
    missing_nodes: Tuple[str, ...] = ()
    tick: int = DEFAULT_INTERVAL

    @property
    def is_empty(self) -> bool:
        return not self.nodes


def _clip(points: Iterable[DeltaPoint], start: int, end: int) \
        -> List[DeltaPoint]:
    clipped = []
    for point in points:
        inside = min(point.t1, end) - max(point.t0, start)
        if inside <= 0:
            continue
        length = point.t1 - point.t0
        if inside < length:
            point = DeltaPoint(point.t0, point.t1, point.values,
                               point.quality, point.weight * inside / length)
        clipped.append(point)
    return clipped


def _node_coverage(node: NodeTimeline, wall_seconds: int) -> float:
    devices = node.points('cpu')
    if not devices:
        return 0.0
    covered = sum(point.seconds for point in devices[0][1]
                  if point.quality in (OK, WRAPPED))
    return min(covered / wall_seconds, 1.0)


def assemble_job(job: AccountingRecord, node_data: Mapping[str, NodeData],
                 config: Optional[DeltaConfig] = None) -> JobTimeline:
    """Cut one job's timeline out of its nodes' data.

    Parameters
    ----------
    job : AccountingRecord
    node_data : dict
        NodeData by hostname; nodes of the job may be absent.
    config : DeltaConfig, optional
        ``config.tick`` is used for nodes whose files carry no
        ``$interval``.

    Returns
    -------
    JobTimeline
        Built from the groups tagged with the job inside
        ``[start - tick, end + tick]``, where ``tick`` is each node's
        collection period. Intervals reaching outside ``[start, end]`` are
        weighted by the share inside. Nodes without any such group are
        listed in ``missing_nodes``; if no node has data the timeline is
        empty.
    """
    config = config or DeltaConfig()
    wall_seconds = job.end - job.start
    nodes = {}
    missing = []
    ticks = []
    for hostname in job.node_list:
        data = node_data.get(hostname)
        if data is None:
            missing.append(hostname)
            continue
        tick = data.interval(config.tick)
        groups = data.groups_for(job.job_id, job.start - tick,
                                 job.end + tick)
        if not groups:
            missing.append(hostname)
            continue
        node_config = config if tick == config.tick \
            else replace(config, tick=tick)
        ticks.append(tick)
        header = data.header
        raw = defaultdict(list)
        for segment, group in groups:
            for sample in group.samples:
                raw[sample.type_name, sample.device_id].append(
                    (group.timestamp, sample.values, segment))
        timeline = NodeTimeline(hostname, header.cores, header.sockets,
                                header.mem_total_kb)
        for (type_name, device), samples in sorted(raw.items()):
            schema = data.segment_schemas[samples[-1][2]][type_name]
            timeline.schemas.setdefault(type_name, schema)
            points = delta_series([(t, values) for t, values, _ in samples],
                                  schema, node_config,
                                  [segment for _, _, segment in samples])
            timeline.series[type_name, device] = _clip(points, job.start,
                                                       job.end)
        nodes[hostname] = timeline
    if missing:
        logger.info('job %s: no data from %s', job.job_id,
                    ', '.join(missing))
    coverage = sum(_node_coverage(node, wall_seconds)
                   for node in nodes.values()) / len(job.node_list)
    return JobTimeline(job, nodes, coverage, tuple(missing),
                       max(ticks, default=config.tick))


def _accounting_view(item):
    return getattr(item, 'job', item)


def filter_jobs(jobs: Iterable, min_node_hours: float = 1.0,
                production_queues: Iterable[str] = PRODUCTION_QUEUES) -> List:
    """Keep the jobs big enough and in a production queue.

    Parameters
    ----------
    jobs : iterable
        AccountingRecords, JobTimelines or JobProfiles.
    min_node_hours : float
        Jobs with ``nodes * wall_hours`` below this are dropped; a job at
        exactly the minimum is kept.
    production_queues : iterable of str

    Returns
    -------
    list
        The kept jobs, in input order.
    """
    queues = set(production_queues)
    kept = []
    for item in jobs:
        view = _accounting_view(item)
        if view.nodes * view.wall_hours >= min_node_hours \
                and view.queue in queues:
            kept.append(item)
    return kept


@dataclass
class IngestReport:
    """Counts from one ingest run."""
    jobs: int = 0
    empty: int = 0
    missing_nodes: int = 0
    files: int = 0
    skipped_lines: int = 0
    unreadable: List[Tuple[str, str]] = field(default_factory=list)
    row_errors: List[RowError] = field(default_factory=list)


def load_stats_dir(stats_dir: str, strict: bool = False,
                   report: Optional[IngestReport] = None) \
        -> Dict[str, NodeData]:
    """Parse every ``<stats_dir>/<hostname>/*.stats`` file.

    Raises
    ------
    FormatError
        In strict mode, for the first malformed file.
    """
    report = report if report is not None else IngestReport()
    nodes = {}
    for host_dir in sorted(glob.glob(os.path.join(stats_dir, '*', ''))):
        hostname = os.path.basename(os.path.dirname(host_dir))
        paths = sorted(glob.glob(os.path.join(host_dir, '*.stats')))
        if not paths:
            continue
        data = NodeData(hostname)
        for path in paths:
            try:
                parsed = read_file(path, strict=strict)
            except FormatError as err:
                if strict:
                    raise FormatError('%s: %s' % (path, err.reason),
                                      err.lineno) from None
                logger.warning('%s unreadable: %s', path, err)
                report.unreadable.append((path, str(err)))
                continue
            data.add_file(parsed, os.path.basename(path))
            report.files += 1
            report.skipped_lines += parsed.skipped
        nodes[hostname] = data
    return nodes


def ingest(stats_dir: str, accounting_path: str, store,
           strict: bool = False, config: Optional[DeltaConfig] = None,
           progress: bool = False) -> IngestReport:
    """Assemble every accounted job's timeline and put it into ``store``.

    Parameters
    ----------
    stats_dir : str
        Root of the per-node stats directories.
    accounting_path : str
        Accounting CSV file.
    store : jobstats.store.JobStore
        Receives one timeline per accounting record; existing entries are
        overwritten.
    strict : bool
        Abort on malformed stats lines.
    config : DeltaConfig, optional
    progress : bool
        Show a progress bar over jobs.

    Returns
    -------
    IngestReport
    """
    report = IngestReport()
    records, report.row_errors = read_accounting(accounting_path)
    nodes = load_stats_dir(stats_dir, strict=strict, report=report)
    for record in tqdm(records, desc='assembling jobs', unit='job',
                       disable=not progress):
        timeline = assemble_job(record, nodes, config)
        if timeline.is_empty:
            report.empty += 1
            if progress:
                tqdm.write('job %s: no data on any node' % record.job_id)
        report.missing_nodes += len(timeline.missing_nodes)
        store.put_timeline(timeline)
        report.jobs += 1
    store.write_index()
    return report
