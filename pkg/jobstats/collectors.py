"""Metric sources that produce samples on every collection tick.

A source serves one record type (``cpu``, ``mem``, ...) for all devices of a
node. Host sources read Linux procfs/sysfs text, fixture sources read the
same text from captured files (one file per type name), and synthetic
sources compute samples from a :class:`jobstats.scenario.SyntheticScenario`.
"""
import glob
import logging
import os
import platform
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, \
    Tuple

import psutil

from jobstats.locations import FIXTURES_ENV, PROC_ROOT, SYS_ROOT
from jobstats.record_format import RecordGroup, Sample, TypeSchema, \
    parse_schema

__all__ = ['SourceError', 'SourceDescriptor', 'CounterEventSet', 'Source',
           'ProcSource', 'PlatformProbe', 'VirtualRegisterFile',
           'EVENT_SETS', 'TYPE_ORDER', 'HOST', 'SYNTHETIC', 'FIXTURE',
           'event_set', 'schema_for', 'pmc_schema', 'socket_of',
           'list_sources', 'build_sources', 'collect_once', 'parse_cpu_lines',
           'parse_mem_lines', 'parse_vm_lines', 'parse_load_lines',
           'parse_net_lines', 'parse_block_lines', 'parse_irq_lines',
           'parse_ipc_tables', 'parse_device_table',
           'synthetic_device_counts']

logger = logging.getLogger(__name__)

HOST = 'host'
SYNTHETIC = 'synthetic'
FIXTURE = 'fixture'
AVAILABILITIES = (HOST, SYNTHETIC, FIXTURE)

TYPE_ORDER = ('cpu', 'mem', 'vm', 'load', 'net', 'block', 'ipc', 'irq', 'fs',
              'ib', 'pmc')

# fs and ib carry a minimal byte/operation set, extensible by appending fields
_SCHEMA_LINES = {
    'cpu': '!cpu user:c:cs nice:c:cs system:c:cs idle:c:cs iowait:c:cs '
           'irq:c:cs softirq:c:cs',
    'mem': '!mem total:g:kb free:g:kb used:g:kb cached:g:kb',
    'vm': '!vm pswpin:c:ev pswpout:c:ev pgpgin:c:kb pgpgout:c:kb '
          'pgfault:c:ev pgmajfault:c:ev',
    'load': '!load load_1:g:none load_5:g:none load_15:g:none '
            'nr_running:g:none nr_threads:g:none',
    'net': '!net rx_bytes:c:b rx_packets:c:p tx_bytes:c:b tx_packets:c:p',
    'block': '!block rd_ios:c:ev rd_sectors:c:ev wr_ios:c:ev '
             'wr_sectors:c:ev',
    'ipc': '!ipc shm_segs:g:none sem_arrays:g:none msg_queues:g:none',
    'irq': '!irq intr:c:ev ctxt:c:ev softirq:c:ev',
    'fs': '!fs read_bytes:c:b write_bytes:c:b ops:c:ev',
    'ib': '!ib rx_bytes:c:b tx_bytes:c:b rx_packets:c:p tx_packets:c:p',
}
_SCHEMAS = {name: parse_schema(line) for name, line in _SCHEMA_LINES.items()}


class SourceError(RuntimeError):
    """Raised when a source cannot produce samples."""


@dataclass(frozen=True)
class CounterEventSet:
    """The hardware events programmed into the counters of one architecture."""
    arch: str
    events: Tuple[str, ...]


EVENT_SETS = {
    'opteron': CounterEventSet(
        'opteron', ('flops', 'mem_access', 'dcache_fill', 'numa_traffic')),
    'nehalem_westmere': CounterEventSet(
        'nehalem_westmere', ('flops', 'numa_traffic', 'l1d_hits')),
    'synthetic': CounterEventSet(
        'synthetic', ('flops', 'mem_access', 'dcache_fill', 'numa_traffic')),
}


def event_set(arch: str) -> CounterEventSet:
    """Return the CounterEventSet for ``arch``.

    Raises
    ------
    ValueError
        If the architecture is unknown.
    """
    try:
        return EVENT_SETS[arch]
    except KeyError:
        raise ValueError('unknown architecture %r, expected one of %s'
                         % (arch, ', '.join(sorted(EVENT_SETS)))) from None


def socket_of(core: int, cores: int, sockets: int) -> int:
    """Return the socket owning ``core``; cores are split into equal runs."""
    return core * sockets // cores


def pmc_schema(arch: str) -> TypeSchema:
    """Schema of the per-core ``pmc`` type for an architecture."""
    events = event_set(arch).events
    return parse_schema('!pmc ' + ' '.join('%s:c:ev' % e for e in events))


def schema_for(type_name: str, arch: str = 'synthetic') -> TypeSchema:
    """Return the canonical schema of a record type."""
    if type_name == 'pmc':
        return pmc_schema(arch)
    try:
        return _SCHEMAS[type_name]
    except KeyError:
        raise ValueError('unknown record type %r' % type_name) from None


@dataclass(frozen=True)
class SourceDescriptor:
    """A record type a source can serve, and where its data comes from."""
    type_name: str
    schema: TypeSchema
    device_count: int
    availability: str

    def __post_init__(self):
        if self.schema.type_name != self.type_name:
            raise ValueError('schema %s does not match type %s'
                             % (self.schema.type_name, self.type_name))
        if self.device_count < 1:
            raise ValueError('device_count must be positive')
        if self.availability not in AVAILABILITIES:
            raise ValueError('invalid availability %r' % self.availability)


def _ints(words: Sequence[str], line: str) -> List[int]:
    try:
        return [int(word) for word in words]
    except ValueError:
        raise SourceError('unrecognized line: %r' % line) from None


def parse_cpu_lines(text: str) -> List[Sample]:
    """Parse kernel per-cpu accounting lines into ``cpu`` samples.

    Parameters
    ----------
    text : str
        Text in the layout of ``/proc/stat``. Lines not starting with
        ``cpu`` are ignored, as is the aggregate ``cpu`` line.

    Returns
    -------
    list
        One Sample per core line, with the core index as device id and
        user, nice, system, idle, iowait, irq and softirq in centiseconds.

    Raises
    ------
    SourceError
        If a ``cpu`` line does not have the expected layout.
    """
    samples = []
    for line in text.splitlines():
        words = line.split()
        if not words or not words[0].startswith('cpu'):
            continue
        name = words[0]
        if name == 'cpu':
            continue
        index = name[3:]
        if not index.isdigit() or len(words) < 8:
            raise SourceError('unrecognized cpu line: %r' % line)
        samples.append(Sample('cpu', int(index), _ints(words[1:8], line)))
    return samples


_NODE_MEM_KEYS = {'MemTotal': 0, 'MemFree': 1, 'MemUsed': 2, 'FilePages': 3}
_PLAIN_MEM_KEYS = {'MemTotal': 0, 'MemFree': 1, 'Cached': 3}


def parse_mem_lines(text: str) -> List[Sample]:
    """Parse per-NUMA-node ``meminfo`` text into per-socket ``mem`` samples.

    Accepts the concatenated ``/sys/devices/system/node/node*/meminfo``
    layout (``Node 0 MemTotal: 8388608 kB``) or a plain ``/proc/meminfo``,
    which is reported as socket 0.
    """
    nodes: Dict[int, List[Optional[int]]] = {}
    for line in text.splitlines():
        words = line.split()
        if not words:
            continue
        if words[0] == 'Node' and len(words) >= 4:
            if not words[1].isdigit():
                raise SourceError('unrecognized meminfo line: %r' % line)
            node, key, value = int(words[1]), words[2], words[3]
            keys = _NODE_MEM_KEYS
        elif len(words) >= 2:
            node, key, value = 0, words[0], words[1]
            keys = _PLAIN_MEM_KEYS
        else:
            raise SourceError('unrecognized meminfo line: %r' % line)
        key = key.rstrip(':')
        if key not in keys:
            continue
        values = nodes.setdefault(node, [None, None, None, 0])
        values[keys[key]] = _ints([value], line)[0]
    samples = []
    for node, (total, free, used, cached) in sorted(nodes.items()):
        if total is None or free is None:
            raise SourceError('meminfo for node %d lacks MemTotal/MemFree'
                              % node)
        if used is None:
            used = total - free
        samples.append(Sample('mem', node, (total, free, used, cached)))
    return samples


def parse_vm_lines(text: str) -> List[Sample]:
    """Parse ``/proc/vmstat`` into one ``vm`` sample."""
    values = {}
    for line in text.splitlines():
        words = line.split()
        if len(words) == 2:
            values[words[0]] = words[1]
    names = schema_for('vm').field_names
    if not any(name in values for name in names):
        raise SourceError('no paging counters found in vmstat text')
    return [Sample('vm', 0, _ints([values.get(name, '0') for name in names],
                                  'vmstat'))]


def parse_load_lines(text: str) -> List[Sample]:
    """Parse ``/proc/loadavg``; load averages are scaled by 100."""
    words = text.split()
    if len(words) < 4 or '/' not in words[3]:
        raise SourceError('unrecognized loadavg text: %r' % text.strip())
    try:
        loads = [int(round(float(word) * 100)) for word in words[:3]]
    except ValueError:
        raise SourceError('unrecognized loadavg text: %r'
                          % text.strip()) from None
    running, threads = words[3].split('/', 1)
    return [Sample('load', 0, loads + _ints([running, threads], text))]


def parse_net_lines(text: str) -> List[Sample]:
    """Parse ``/proc/net/dev``; interfaces other than ``lo`` in file order."""
    samples = []
    for line in text.splitlines():
        if ':' not in line or '|' in line:
            continue
        name, _, rest = line.partition(':')
        if name.strip() == 'lo':
            continue
        words = rest.split()
        if len(words) < 10:
            raise SourceError('unrecognized net line: %r' % line)
        numbers = _ints(words[:10], line)
        samples.append(Sample('net', len(samples),
                              (numbers[0], numbers[1], numbers[8],
                               numbers[9])))
    return samples


def parse_block_lines(text: str) -> List[Sample]:
    """Parse ``/proc/diskstats``; loop and ram devices are skipped."""
    samples = []
    for line in text.splitlines():
        words = line.split()
        if not words:
            continue
        if len(words) < 10:
            raise SourceError('unrecognized diskstats line: %r' % line)
        if words[2].startswith(('loop', 'ram')):
            continue
        numbers = _ints(words[3:10], line)
        samples.append(Sample('block', len(samples),
                              (numbers[0], numbers[2], numbers[4],
                               numbers[6])))
    return samples


def parse_irq_lines(text: str) -> List[Sample]:
    """Parse the ``intr``, ``ctxt`` and ``softirq`` lines of ``/proc/stat``."""
    totals = {}
    for line in text.splitlines():
        words = line.split()
        if len(words) >= 2 and words[0] in ('intr', 'ctxt', 'softirq'):
            totals[words[0]] = _ints(words[1:2], line)[0]
    missing = [key for key in ('intr', 'ctxt', 'softirq')
               if key not in totals]
    if missing:
        raise SourceError('stat text lacks %s' % ', '.join(missing))
    return [Sample('irq', 0, (totals['intr'], totals['ctxt'],
                              totals['softirq']))]


def parse_ipc_tables(shm: str, sem: str, msg: str) -> List[Sample]:
    """Count SysV IPC objects from the ``/proc/sysvipc`` tables."""
    def rows(text):
        return max(len([line for line in text.splitlines() if line.strip()])
                   - 1, 0)
    return [Sample('ipc', 0, (rows(shm), rows(sem), rows(msg)))]


def parse_device_table(text: str, type_name: str, arch: str = 'synthetic') \
        -> List[Sample]:
    """Parse a captured ``<device_id> <v1> <v2> ...`` table.

    This is the fixture layout of the types without a procfs rendition
    (``fs``, ``ib`` and ``pmc``).
    """
    width = len(schema_for(type_name, arch).fields)
    samples = []
    for line in text.splitlines():
        words = line.split()
        if not words or words[0].startswith('#'):
            continue
        if len(words) != width + 1:
            raise SourceError('unrecognized %s line: %r' % (type_name, line))
        numbers = _ints(words, line)
        samples.append(Sample(type_name, numbers[0], numbers[1:]))
    return samples


class Source(object):
    """Base class of metric sources.

    Subclasses set ``descriptor`` and implement :meth:`read`.
    """
    descriptor: SourceDescriptor

    @property
    def type_name(self) -> str:
        return self.descriptor.type_name

    def read(self, timestamp: int) -> List[Sample]:
        raise NotImplementedError


class ProcSource(Source):
    """Reads host or captured text files and parses them into samples.

    Parameters
    ----------
    type_name : str
        The record type served.
    paths : list of str
        Files read on every tick; their texts are passed to ``parser`` in
        order.
    parser : callable
        Turns the file texts into a list of samples.
    availability : str
        ``host`` or ``fixture``.
    arch : str
        Architecture used for the ``pmc`` schema.
    """

    def __init__(self, type_name: str, paths: Sequence[str],
                 parser: Callable[..., List[Sample]],
                 availability: str = HOST, arch: str = 'synthetic'):
        self.paths = list(paths)
        self.parser = parser
        schema = schema_for(type_name, arch)
        count = len(self.read(0))
        if count == 0:
            raise SourceError('%s: no devices in %s'
                              % (type_name, ', '.join(self.paths)))
        self.descriptor = SourceDescriptor(type_name, schema, count,
                                           availability)

    def read(self, timestamp: int) -> List[Sample]:
        texts = []
        for path in self.paths:
            with open(path, 'r') as fh:
                texts.append(fh.read())
        return self.parser(*texts)


def _host_layouts(proc_root: str, sys_root: str) \
        -> Dict[str, Tuple[List[str], Callable[..., List[Sample]]]]:
    node_meminfo = sorted(
        glob.glob(os.path.join(sys_root, 'devices', 'system', 'node',
                               'node[0-9]*', 'meminfo')),
        key=lambda path: int(os.path.basename(os.path.dirname(path))[4:]))
    if not node_meminfo:
        node_meminfo = [os.path.join(proc_root, 'meminfo')]
    stat = os.path.join(proc_root, 'stat')
    sysvipc = [os.path.join(proc_root, 'sysvipc', name)
               for name in ('shm', 'sem', 'msg')]
    return {
        'cpu': ([stat], parse_cpu_lines),
        'mem': (node_meminfo,
                lambda *texts: parse_mem_lines('\n'.join(texts))),
        'vm': ([os.path.join(proc_root, 'vmstat')], parse_vm_lines),
        'load': ([os.path.join(proc_root, 'loadavg')], parse_load_lines),
        'net': ([os.path.join(proc_root, 'net', 'dev')], parse_net_lines),
        'block': ([os.path.join(proc_root, 'diskstats')], parse_block_lines),
        'ipc': (sysvipc, parse_ipc_tables),
        'irq': ([stat], parse_irq_lines),
    }


_FIXTURE_PARSERS = {
    'cpu': parse_cpu_lines,
    'mem': parse_mem_lines,
    'vm': parse_vm_lines,
    'load': parse_load_lines,
    'net': parse_net_lines,
    'block': parse_block_lines,
    'irq': parse_irq_lines,
}


def _fixture_parser(type_name: str, arch: str) -> Callable[..., List[Sample]]:
    parser = _FIXTURE_PARSERS.get(type_name)
    if parser is not None:
        return parser
    return lambda text: parse_device_table(text, type_name, arch)


@dataclass
class PlatformProbe:
    """Describes what the current environment can serve.

    Attributes
    ----------
    system : str
        Operating system name as reported by ``platform.system()``.
    proc_root, sys_root : str
        Roots of the procfs and sysfs trees read by host sources.
    fixture_dir : str or None
        Directory of captured text, one file per type name.
    arch : str
        Counter architecture of the node.
    """
    system: str = field(default_factory=platform.system)
    proc_root: str = PROC_ROOT
    sys_root: str = SYS_ROOT
    fixture_dir: Optional[str] = field(
        default_factory=lambda: os.environ.get(FIXTURES_ENV))
    arch: str = 'synthetic'

    def topology(self) -> Tuple[int, int, int]:
        """Return (cores, sockets, mem_total_kb) of this machine."""
        cores = psutil.cpu_count(logical=True) or 1
        nodes = glob.glob(os.path.join(self.sys_root, 'devices', 'system',
                                       'node', 'node[0-9]*'))
        sockets = min(max(len(nodes), 1), cores)
        mem_total_kb = max(psutil.virtual_memory().total // 1024, 1)
        return cores, sockets, mem_total_kb


def _host_sources(probe: PlatformProbe) -> Dict[str, Source]:
    sources = {}
    if probe.system != 'Linux':
        return sources
    for type_name, (paths, parser) in _host_layouts(
            probe.proc_root, probe.sys_root).items():
        if not all(os.path.exists(path) for path in paths):
            continue
        try:
            sources[type_name] = ProcSource(type_name, paths, parser, HOST,
                                            probe.arch)
        except (OSError, SourceError) as err:
            logger.info('host source %s unavailable: %s', type_name, err)
    return sources


def _fixture_sources(probe: PlatformProbe) -> Dict[str, Source]:
    sources = {}
    if not probe.fixture_dir or not os.path.isdir(probe.fixture_dir):
        return sources
    for type_name in TYPE_ORDER:
        path = os.path.join(probe.fixture_dir, type_name)
        if not os.path.isfile(path):
            continue
        try:
            sources[type_name] = ProcSource(
                type_name, [path], _fixture_parser(type_name, probe.arch),
                FIXTURE, probe.arch)
        except (OSError, SourceError) as err:
            logger.warning('fixture %s unusable: %s', path, err)
    return sources


def synthetic_device_counts(cores: int, sockets: int) -> Dict[str, int]:
    """Number of devices per record type on a synthetic node."""
    counts = dict.fromkeys(TYPE_ORDER, 1)
    counts.update(cpu=cores, pmc=cores, mem=sockets, net=2, block=2, fs=2)
    return counts


def list_sources(probe: Optional[PlatformProbe] = None,
                 topology: Optional[Tuple[int, int, int]] = None) \
        -> List[SourceDescriptor]:
    """Return every source the current environment can serve.

    Parameters
    ----------
    probe : Optional[PlatformProbe]
        Environment description. Default: probe the running machine.
    topology : Optional[tuple]
        (cores, sockets, mem_total_kb) used to size the synthetic
        descriptors. Default: ``probe.topology()``.

    Returns
    -------
    list
        SourceDescriptors in canonical type order. Every type has a
        synthetic descriptor; types readable from the host (Linux only) or
        present in the fixture directory get host and fixture descriptors.
    """
    if probe is None:
        probe = PlatformProbe()
    cores, sockets, _ = topology or probe.topology()
    counts = synthetic_device_counts(cores, sockets)
    host = _host_sources(probe)
    fixtures = _fixture_sources(probe)
    descriptors = []
    for type_name in TYPE_ORDER:
        for served in (fixtures, host):
            if type_name in served:
                descriptors.append(served[type_name].descriptor)
        descriptors.append(SourceDescriptor(
            type_name, schema_for(type_name, probe.arch), counts[type_name],
            SYNTHETIC))
    return descriptors


def build_sources(probe: Optional[PlatformProbe] = None,
                  synthetic_node=None,
                  types: Optional[Iterable[str]] = None,
                  prefer: Sequence[str] = (FIXTURE, HOST, SYNTHETIC)) \
        -> List[Source]:
    """Instantiate one source per record type.

    Parameters
    ----------
    probe : Optional[PlatformProbe]
        Environment description. Default: probe the running machine.
    synthetic_node : Optional[jobstats.scenario.SyntheticNode]
        Serves the types no fixture or host source covers. Without it,
        those types are left out.
    types : Optional[iterable]
        Restrict to these record types. Default: all canonical types.
    prefer : sequence
        Availability preference order.

    Returns
    -------
    list
        Sources in canonical type order.
    """
    if probe is None:
        probe = PlatformProbe()
    wanted = set(TYPE_ORDER if types is None else types)
    served = {HOST: _host_sources(probe) if HOST in prefer else {},
              FIXTURE: _fixture_sources(probe) if FIXTURE in prefer else {}}
    sources = []
    for type_name in TYPE_ORDER:
        if type_name not in wanted:
            continue
        for availability in prefer:
            if availability == SYNTHETIC:
                if synthetic_node is not None:
                    sources.append(synthetic_node.source(type_name))
                    break
            elif type_name in served[availability]:
                sources.append(served[availability][type_name])
                break
    return sources


def _read_source(source: Source, timestamp: int,
                 timeout: Optional[float]) -> List[Sample]:
    if timeout is None:
        return source.read(timestamp)
    executor = ThreadPoolExecutor(max_workers=1)
    try:
        return executor.submit(source.read, timestamp).result(timeout=timeout)
    except FutureTimeout:
        raise SourceError('%s timed out after %.1fs'
                          % (source.type_name, timeout)) from None
    finally:
        # A hung read is abandoned, not joined
        executor.shutdown(wait=False)


def collect_once(sources: Sequence[Source], clock: int,
                 active_jobs: Iterable[str] = (),
                 error_counts: Optional[Counter] = None,
                 timeout: Optional[float] = None) -> RecordGroup:
    """Poll every source once and bundle the samples into a RecordGroup.

    Parameters
    ----------
    sources : list
        Sources polled sequentially, in order.
    clock : int
        Timestamp of the tick, in epoch seconds.
    active_jobs : iterable of str
        Job ids running on the node; the group is tagged with them.
    error_counts : Optional[collections.Counter]
        Incremented by type name for every source that fails.
    timeout : Optional[float]
        Seconds a single source may take before it is treated as failed.

    Returns
    -------
    RecordGroup
        One sample per (source, device). Failing sources contribute
        nothing; the group is emitted even if every source fails.

    Raises
    ------
    ValueError
        If ``sources`` is empty.
    """
    if not sources:
        raise ValueError('collect_once needs at least one source')
    if error_counts is None:
        error_counts = Counter()
    samples = []
    for source in sources:
        try:
            read = _read_source(source, clock, timeout)
            width = len(source.descriptor.schema.fields)
            for sample in read:
                if sample.type_name != source.type_name \
                        or len(sample.values) != width:
                    raise SourceError('%s produced a malformed sample'
                                      % source.type_name)
        except Exception as err:
            error_counts[source.type_name] += 1
            logger.warning('source %s failed: %s', source.type_name, err)
            continue
        samples.extend(read)
    return RecordGroup(int(clock), frozenset(active_jobs), samples)


class VirtualRegisterFile(object):
    """Stand-in for a node's programmable performance counter registers.

    Programming selects the architecture's event set and is logged; reading
    never reprograms.
    """

    def __init__(self, arch: str = 'synthetic'):
        self.event_set = event_set(arch)
        self.programmed: Optional[CounterEventSet] = None
        self.program_log: List[Tuple[int, Optional[str]]] = []

    @property
    def is_programmed(self) -> bool:
        return self.programmed is not None

    def program(self, timestamp: int,
                job_id: Optional[str] = None) -> CounterEventSet:
        """Program the event set, recording when and for which job."""
        self.programmed = self.event_set
        self.program_log.append((timestamp, job_id))
        logger.debug('programmed %s counters at %d for %s',
                     self.event_set.arch, timestamp, job_id)
        return self.programmed
