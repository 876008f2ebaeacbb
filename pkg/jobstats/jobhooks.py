"""Prolog, epilog, rotation and periodic collection entry points.

Every hook invocation is a short-lived process. The state they share
(running jobs, the current file, the last group timestamp, the programmed
counter events) lives in ``<stats_dir>/<hostname>/state.json`` and is
guarded by an advisory lock on ``<stats_dir>/<hostname>/.lock``, so marks
and ticks serialize through one appender per node.

Files are named ``<hostname>/<YYYYMMDD>.stats`` after the UTC day they were
opened on; a second file on the same day gets a ``-<n>`` suffix. A hook
firing on a later UTC day than the current file, or with a different
counter architecture, closes it with ``%rotate`` and opens a new one.
"""
import contextlib
import datetime
import fcntl
import json
import logging
import os
import socket
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator, List, Optional, Sequence

from tqdm import tqdm

from jobstats.collectors import TYPE_ORDER, PlatformProbe, Source, \
    VirtualRegisterFile, build_sources, collect_once, event_set
from jobstats.load import write_accounting
from jobstats.locations import ARCH_ENV, DEFAULT_INTERVAL, HOSTNAME_ENV
from jobstats.record_format import FileHeader, Mark, Metadata, RecordGroup, \
    append_group, write_header
from jobstats.scenario import SyntheticNode, SyntheticScenario

__all__ = ['NodeCollector', 'NodeState', 'StorageError', 'synthesize',
           'host_collector', 'stats_file_name', 'STATE_FILE', 'LOCK_FILE']

logger = logging.getLogger(__name__)

STATE_FILE = 'state.json'
LOCK_FILE = '.lock'
SECONDS_PER_DAY = 86400


class StorageError(OSError):
    """Raised when the stats directory stays unwritable after retries."""


@dataclass
class NodeState:
    """What hook invocations on one node share between processes."""
    active_jobs: List[str] = field(default_factory=list)
    current_file: Optional[str] = None
    last_timestamp: Optional[int] = None
    arch: Optional[str] = None
    pmc_events: Optional[List[str]] = None
    warnings: int = 0

    @classmethod
    def from_json(cls, text: str) -> 'NodeState':
        data = json.loads(text)
        return cls(**{key: data[key] for key in data
                      if key in cls.__dataclass_fields__})

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)


def stats_file_name(timestamp: int, suffix: int = 0) -> str:
    """Return ``YYYYMMDD.stats`` (or ``YYYYMMDD-<n>.stats``) for a UTC day."""
    day = datetime.datetime.fromtimestamp(
        timestamp, datetime.timezone.utc).strftime('%Y%m%d')
    if suffix:
        return '%s-%d.stats' % (day, suffix)
    return '%s.stats' % day


class NodeCollector(object):
    """Appends job-tagged record groups and marks to a node's stats files.

    Parameters
    ----------
    stats_dir : str
        Root directory; files go to ``<stats_dir>/<hostname>/``.
    hostname : str
    sources : list of Source
        Polled in order on every burst; their schemas form the header.
    cores, sockets, mem_total_kb : int
        Node topology written to every header.
    arch : str
        Counter architecture, selecting the event set programmed at job
        start.
    interval : int
        Collection period in seconds, recorded in the header.
    clock : callable, optional
        Returns the current epoch seconds. Default: ``time.time``.
    source_timeout : float, optional
        Seconds a single source may take per burst.
    persist : bool
        If True, load and save :class:`NodeState` under the node lock for
        every operation. Otherwise the state lives only in this object.
    retries : int
        Write attempts after the first failure.
    backoff : float
        Initial delay between write attempts, doubled every time.
    """

    def __init__(self, stats_dir: str, hostname: str,
                 sources: Sequence[Source], cores: int, sockets: int,
                 mem_total_kb: int, arch: str = 'synthetic',
                 interval: int = DEFAULT_INTERVAL,
                 clock: Optional[Callable[[], float]] = None,
                 source_timeout: Optional[float] = None,
                 persist: bool = True, retries: int = 3,
                 backoff: float = 0.05):
        if not sources:
            raise ValueError('a collector needs at least one source')
        self.stats_dir = stats_dir
        self.hostname = hostname
        self.host_dir = os.path.join(stats_dir, hostname)
        self.sources = list(sources)
        self.cores = cores
        self.sockets = sockets
        self.mem_total_kb = mem_total_kb
        self.arch = arch
        self.interval = interval
        self.clock = clock or time.time
        self.source_timeout = source_timeout
        self.persist = persist
        self.retries = retries
        self.backoff = backoff
        self.registers = VirtualRegisterFile(arch)
        self.state = NodeState()
        self.error_counts: Counter = Counter()
        self.files_written: List[str] = []

    @property
    def current_path(self) -> Optional[str]:
        if self.state.current_file is None:
            return None
        return os.path.join(self.host_dir, self.state.current_file)

    @property
    def warnings(self) -> int:
        return self.state.warnings

    def header(self) -> FileHeader:
        """Header of a new file under the collector's current state."""
        extras = {'interval': str(self.interval), 'arch': self.arch}
        if self.state.pmc_events:
            extras['pmc_events'] = ','.join(self.state.pmc_events)
        return FileHeader(hostname=self.hostname, cores=self.cores,
                          sockets=self.sockets,
                          mem_total_kb=self.mem_total_kb,
                          schemas=[source.descriptor.schema
                                   for source in self.sources],
                          extras=extras)

    @contextlib.contextmanager
    def _locked(self) -> Iterator[NodeState]:
        self._makedirs()
        if not self.persist:
            yield self.state
            return
        lock_path = os.path.join(self.host_dir, LOCK_FILE)
        state_path = os.path.join(self.host_dir, STATE_FILE)
        with open(lock_path, 'a') as lock:
            fcntl.flock(lock, fcntl.LOCK_EX)
            try:
                if os.path.exists(state_path):
                    with open(state_path) as fh:
                        self.state = NodeState.from_json(fh.read())
                if self.state.pmc_events and self.state.arch == self.arch:
                    self.registers.programmed = self.registers.event_set
                yield self.state
                tmp_path = state_path + '.tmp'
                self._retry(lambda: self._replace(tmp_path, state_path,
                                                  self.state.to_json()),
                            state_path)
            finally:
                fcntl.flock(lock, fcntl.LOCK_UN)

    @staticmethod
    def _replace(tmp_path: str, path: str, text: str) -> None:
        with open(tmp_path, 'w') as fh:
            fh.write(text)
        os.replace(tmp_path, path)

    def _makedirs(self) -> None:
        self._retry(lambda: os.makedirs(self.host_dir, exist_ok=True),
                    self.host_dir)

    def _retry(self, action: Callable[[], None], path: str) -> None:
        delay = self.backoff
        for attempt in range(self.retries + 1):
            try:
                action()
                return
            except OSError as err:
                error = err
                if attempt < self.retries:
                    time.sleep(delay)
                    delay *= 2
        logger.error('giving up on %s after %d attempts: %s', path,
                     self.retries + 1, error)
        raise StorageError('cannot write %s: %s' % (path, error)) from error

    def _append(self, text: str) -> None:
        path = self.current_path

        def write():
            with open(path, 'a', encoding='utf-8', newline='\n') as fh:
                fh.write(text)
        self._retry(write, path)

    def _open_new_file(self, timestamp: int) -> str:
        suffix = 0
        while os.path.exists(os.path.join(
                self.host_dir, stats_file_name(timestamp, suffix))):
            suffix += 1
        self.state.current_file = stats_file_name(timestamp, suffix)
        self.state.last_timestamp = None
        self.state.arch = self.arch
        if self.state.pmc_events and \
                self.state.pmc_events != list(event_set(self.arch).events):
            self.state.pmc_events = None
        self._append(write_header(self.header()))
        self.files_written.append(self.current_path)
        logger.info('opened %s', self.current_path)
        return self.current_path

    def _ensure_file(self, timestamp: int) -> None:
        path = self.current_path
        if path is not None and os.path.exists(path):
            # a new UTC day or counter layout starts a new file
            if self.state.arch == self.arch and \
                    stats_file_name(timestamp)[:8] <= \
                    self.state.current_file[:8]:
                return
            self._append(append_group(Mark('rotate', timestamp), ()))
        self._open_new_file(timestamp)

    def _write(self, items: Iterable) -> None:
        schemas = {source.type_name: source.descriptor.schema
                   for source in self.sources}
        self._append(''.join(append_group(item, schemas) for item in items))

    def _burst(self, timestamp: int) -> Optional[RecordGroup]:
        last = self.state.last_timestamp
        if last is not None and timestamp <= last:
            logger.debug('skipping burst at %d, last group at %d',
                         timestamp, last)
            return None
        group = collect_once(self.sources, timestamp,
                             self.state.active_jobs, self.error_counts,
                             self.source_timeout)
        self.state.last_timestamp = timestamp
        return group

    def _now(self, timestamp: Optional[int]) -> int:
        return int(self.clock()) if timestamp is None else int(timestamp)

    def begin_job(self, job_id: str, timestamp: Optional[int] = None) -> Mark:
        """Record a job start.

        Emits ``%begin <job_id>``, a ``$pmc_events`` line naming the
        architecture's counter events and one sample burst tagged with the
        job. Counters are programmed only if no other job is running on
        the node, so a running job's counters are never reprogrammed.

        Returns
        -------
        Mark
            The begin mark; a repeated begin for a running job yields a
            mark with note ``duplicate`` and increments the warning count.
        """
        timestamp = self._now(timestamp)
        with self._locked() as state:
            self._ensure_file(timestamp)
            if job_id in state.active_jobs:
                state.warnings += 1
                logger.warning('duplicate begin for job %s on %s', job_id,
                               self.hostname)
                mark = Mark('begin', timestamp, job_id, 'duplicate')
                self._write([mark])
                return mark
            mark = Mark('begin', timestamp, job_id)
            events = self.registers.event_set
            if not state.active_jobs:
                events = self.registers.program(timestamp, job_id)
                state.pmc_events = list(events.events)
            items = [mark, Metadata('pmc_events', ','.join(events.events))]
            state.active_jobs.append(job_id)
            group = self._burst(timestamp)
            if group is not None:
                items.append(group)
            self._write(items)
            return mark

    def end_job(self, job_id: str, timestamp: Optional[int] = None) -> Mark:
        """Record a job end: one last sample burst, then ``%end <job_id>``.

        An end for a job that is not running still gets its mark, with note
        ``unmatched``, and increments the warning count.
        """
        timestamp = self._now(timestamp)
        with self._locked() as state:
            self._ensure_file(timestamp)
            note = None
            if job_id not in state.active_jobs:
                state.warnings += 1
                note = 'unmatched'
                logger.warning('end for job %s without begin on %s', job_id,
                               self.hostname)
            items = []
            group = self._burst(timestamp)
            if group is not None:
                items.append(group)
            if note is None:
                state.active_jobs.remove(job_id)
            mark = Mark('end', timestamp, job_id, note)
            items.append(mark)
            self._write(items)
            return mark

    def rotate(self, timestamp: Optional[int] = None) -> str:
        """Close the current file with ``%rotate`` and open a fresh one.

        Returns
        -------
        str
            Path of the new file, which starts with a full header.
        """
        timestamp = self._now(timestamp)
        with self._locked():
            path = self.current_path
            if path is not None and os.path.exists(path):
                self._write([Mark('rotate', timestamp)])
            return self._open_new_file(timestamp)

    def collect(self, timestamp: Optional[int] = None) \
            -> Optional[RecordGroup]:
        """Append one periodic burst tagged with the running jobs.

        Returns None when ``timestamp`` does not follow the last group.
        """
        timestamp = self._now(timestamp)
        with self._locked():
            self._ensure_file(timestamp)
            group = self._burst(timestamp)
            if group is not None:
                self._write([group])
            return group


def _hook_events(scenario: SyntheticScenario, node: int):
    # (timestamp, order, action, job_id); at one instant rotation comes
    # first, then job ends, then job starts
    events = []
    day = (scenario.start // SECONDS_PER_DAY + 1) * SECONDS_PER_DAY
    while day <= scenario.end:
        events.append((day, 0, 'rotate', None))
        day += SECONDS_PER_DAY
    for job in scenario.jobs_on(node):
        events.append((job.start, 2, 'begin', job.job_id))
        events.append((job.end, 1, 'end', job.job_id))
    hooked = {event[0] for event in events if event[2] != 'rotate'}
    first = -(-scenario.start // scenario.interval) * scenario.interval
    for tick in range(first, scenario.end + 1, scenario.interval):
        if tick not in hooked:
            events.append((tick, 3, 'collect', None))
    return sorted(events, key=lambda event: event[:2])


def synthesize(scenario: SyntheticScenario, stats_dir: str,
               types: Sequence[str] = TYPE_ORDER,
               accounting_name: Optional[str] = 'accounting.csv',
               progress: bool = False) -> List[str]:
    """Write the stats files a scenario's nodes would produce.

    Each node runs the same hook sequence a real node would: a burst every
    ``scenario.interval`` seconds, begin/end hooks at job boundaries and a
    rotation at every UTC midnight. Ticks that coincide with a job hook are
    covered by the hook's own burst.

    Parameters
    ----------
    scenario : SyntheticScenario
    stats_dir : str
        Output root; files go to ``<stats_dir>/<hostname>/``.
    types : sequence of str
        Record types collected.
    accounting_name : str, optional
        If given, the scenario's accounting CSV is written under this name
        in ``stats_dir``.
    progress : bool
        Show a progress bar over nodes.

    Returns
    -------
    list of str
        Paths of the stats files written, in node order.
    """
    os.makedirs(stats_dir, exist_ok=True)
    paths = []
    for node in tqdm(range(scenario.nodes), desc='synthesizing nodes',
                     unit='node', disable=not progress):
        synthetic = SyntheticNode(scenario, node)
        collector = NodeCollector(
            stats_dir, synthetic.hostname,
            [synthetic.source(type_name) for type_name in types],
            scenario.cores_per_node, scenario.sockets_per_node,
            scenario.mem_total_kb, arch=scenario.arch,
            interval=scenario.interval, persist=False)
        for timestamp, _, action, job_id in _hook_events(scenario, node):
            if action == 'collect':
                collector.collect(timestamp)
            elif action == 'rotate':
                collector.rotate(timestamp)
            elif action == 'begin':
                collector.begin_job(job_id, timestamp)
            else:
                collector.end_job(job_id, timestamp)
        paths.extend(collector.files_written)
    if accounting_name:
        write_accounting(scenario.accounting(),
                         os.path.join(stats_dir, accounting_name))
    return paths


def host_collector(stats_dir: str, hostname: Optional[str] = None,
                   arch: Optional[str] = None,
                   interval: int = DEFAULT_INTERVAL,
                   probe: Optional[PlatformProbe] = None,
                   source_timeout: Optional[float] = None) -> NodeCollector:
    """Build the persistent collector the hook commands of a node use.

    Sources are chosen by :func:`jobstats.collectors.build_sources`; record
    types neither the fixture directory nor the host can serve are filled
    in by an idle synthetic node with the host's topology.
    """
    hostname = hostname or os.environ.get(HOSTNAME_ENV) \
        or socket.gethostname().split('.')[0]
    arch = arch or os.environ.get(ARCH_ENV) or 'synthetic'
    if probe is None:
        probe = PlatformProbe(arch=arch)
    measured = {source.type_name: source
                for source in build_sources(probe, synthetic_node=None)}
    cores, sockets, mem_total_kb = probe.topology()
    if 'cpu' in measured:
        cores = measured['cpu'].descriptor.device_count
    if 'mem' in measured:
        mem = measured['mem'].read(0)
        sockets = len(mem)
        mem_total_kb = sum(sample.values[0] for sample in mem)
    sockets = max(min(sockets, cores), 1)
    idle = SyntheticNode(SyntheticScenario(
        nodes=1, cores_per_node=cores, sockets_per_node=sockets,
        mem_total_kb=max(mem_total_kb, 1), arch=arch, interval=interval,
        start=0), 0)
    sources = [measured[type_name] if type_name in measured
               else idle.source(type_name) for type_name in TYPE_ORDER]
    return NodeCollector(stats_dir, hostname, sources, cores, sockets,
                         mem_total_kb, arch=arch, interval=interval,
                         source_timeout=source_timeout)
