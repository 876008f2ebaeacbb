"""An embedded on-disk job store.

Layout under the store root::

    jobs/<job_id>       one job timeline, structured text
    profiles/<job_id>   one job profile, ``key value`` lines
    index               ``<job_id> <kinds>`` per stored job, sorted

Every entry is written to a temporary file and renamed into place. Writers
hold an advisory lock on ``<root>/.lock``; readers need no lock.
"""
import fcntl
import logging
import os
import re
from typing import Dict, Iterator, List, Optional, Tuple, Union

from jobstats.ingest import DeltaPoint, JobTimeline, NodeTimeline
from jobstats.load import AccountingRecord
from jobstats.metrics import JobProfile, Undefined
from jobstats.record_format import FormatError, format_schema, parse_schema

__all__ = ['JobStore', 'StoreError', 'store_put', 'store_scan',
           'format_timeline', 'parse_timeline', 'format_profile',
           'parse_profile', 'TIMELINES', 'PROFILES']

logger = logging.getLogger(__name__)

TIMELINES = 'jobs'
PROFILES = 'profiles'
INDEX = 'index'
UNDEFINED = 'undefined'
_SAFE_ID_RE = re.compile(r'^[A-Za-z0-9_@+\[\]-][A-Za-z0-9_.@+\[\]-]*$')


class StoreError(ValueError):
    """Raised for a corrupt store entry or an unstorable job id."""


def _check_job_id(job_id: str) -> None:
    if not isinstance(job_id, str) or not _SAFE_ID_RE.match(job_id):
        raise StoreError('job id %r cannot name a store entry' % (job_id,))


def _number(value) -> str:
    if value is Undefined or value is None:
        return UNDEFINED
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_float(text: str):
    if text == UNDEFINED:
        return Undefined
    return float(text)


def format_timeline(timeline: JobTimeline) -> str:
    """Serialize a timeline deterministically."""
    job = timeline.job
    lines = ['$job_id %s' % job.job_id,
             '$owner %s' % job.owner,
             '$queue %s' % job.queue,
             '$nodes %d' % job.nodes,
             '$wayness %d' % job.wayness,
             '$start %d' % job.start,
             '$end %d' % job.end,
             '$node_list %s' % ';'.join(job.node_list),
             '$tick %d' % timeline.tick,
             '$coverage %r' % timeline.coverage,
             '$missing %s' % (';'.join(timeline.missing_nodes) or '-')]
    for hostname in sorted(timeline.nodes):
        node = timeline.nodes[hostname]
        lines.append('@node %s %d %d %d' % (hostname, node.cores,
                                             node.sockets, node.mem_total_kb))
        for type_name in sorted(node.schemas):
            lines.append(format_schema(node.schemas[type_name]))
        for (type_name, device), points in sorted(node.series.items()):
            lines.append('=%s %d' % (type_name, device))
            for point in points:
                lines.append('%d %d %s %r %s' % (
                    point.t0, point.t1, point.quality, point.weight,
                    ' '.join(str(value) for value in point.values)))
    return ''.join(line + '\n' for line in lines)


def parse_timeline(text: str) -> JobTimeline:
    """Inverse of :func:`format_timeline`.

    Raises
    ------
    StoreError
        If the text is not a well-formed timeline entry.
    """
    meta: Dict[str, str] = {}
    nodes: Dict[str, NodeTimeline] = {}
    node: Optional[NodeTimeline] = None
    points: Optional[List[DeltaPoint]] = None
    try:
        for line in text.splitlines():
            if line.startswith('$'):
                key, _, value = line[1:].partition(' ')
                meta[key] = value
            elif line.startswith('@node '):
                hostname, cores, sockets, mem = line[6:].split(' ')
                node = NodeTimeline(hostname, int(cores), int(sockets),
                                    int(mem))
                nodes[hostname] = node
            elif line.startswith('!'):
                schema = parse_schema(line)
                node.schemas[schema.type_name] = schema
            elif line.startswith('='):
                type_name, device = line[1:].split(' ')
                points = node.series.setdefault((type_name, int(device)),
                                                [])
            elif line:
                words = line.split(' ')
                points.append(DeltaPoint(int(words[0]), int(words[1]),
                                         [int(word) for word in words[4:]],
                                         words[2], float(words[3])))
        job = AccountingRecord(
            meta['job_id'], meta['owner'], meta['queue'], int(meta['nodes']),
            int(meta['wayness']), int(meta['start']), int(meta['end']),
            meta['node_list'].split(';'))
        missing = () if meta['missing'] == '-' \
            else tuple(meta['missing'].split(';'))
        return JobTimeline(job, nodes, float(meta['coverage']), missing,
                           int(meta['tick']))
    except (KeyError, IndexError, ValueError, TypeError, AttributeError,
            FormatError) as err:
        raise StoreError('corrupt timeline entry: %s' % err) from None


_PROFILE_INTS = ('nodes', 'wayness', 'cores_per_node', 'sockets_per_node')
_PROFILE_FLOATS = ('wall_hours', 'idle_fraction', 'unused_mem_fraction',
                   'waste', 'mean_bandwidth_gbps', 'numa_cov', 'coverage',
                   'core_seconds', 'idle_core_seconds')


def format_profile(profile: JobProfile) -> str:
    """Serialize a profile as ``key value`` lines with fixed field names."""
    lines = ['job_id %s' % profile.job_id,
             'owner %s' % profile.owner,
             'queue %s' % profile.queue]
    lines += ['%s %s' % (key, _number(getattr(profile, key)))
              for key in _PROFILE_INTS + _PROFILE_FLOATS]
    for hostname in sorted(profile.socket_bandwidth):
        lines.append('socket_bandwidth %s %s' % (hostname, ' '.join(
            repr(value) for value in profile.socket_bandwidth[hostname])))
    for hostname in sorted(profile.node_mem_peaks):
        lines.append('node_mem_peak %s %r'
                     % (hostname, profile.node_mem_peaks[hostname]))
    return ''.join(line + '\n' for line in lines)


def parse_profile(text: str) -> JobProfile:
    """Inverse of :func:`format_profile`.

    Raises
    ------
    StoreError
        If a field is missing or malformed.
    """
    values: Dict[str, str] = {}
    bandwidth: Dict[str, Tuple[float, ...]] = {}
    peaks: Dict[str, float] = {}
    try:
        for line in text.splitlines():
            if not line:
                continue
            key, _, value = line.partition(' ')
            if key == 'socket_bandwidth':
                hostname, _, numbers = value.partition(' ')
                bandwidth[hostname] = tuple(float(number) for number in
                                            numbers.split(' ') if number)
            elif key == 'node_mem_peak':
                hostname, _, number = value.partition(' ')
                peaks[hostname] = float(number)
            else:
                values[key] = value
        fields = {key: values[key] for key in ('job_id', 'owner', 'queue')}
        for key in _PROFILE_INTS:
            fields[key] = None if values[key] == UNDEFINED \
                else int(values[key])
        for key in _PROFILE_FLOATS:
            fields[key] = _parse_float(values[key])
        return JobProfile(socket_bandwidth=bandwidth, node_mem_peaks=peaks,
                          **fields)
    except (KeyError, ValueError) as err:
        raise StoreError('corrupt profile entry: %s' % err) from None


class JobStore(object):
    """A directory of job timelines and profiles.

    Parameters
    ----------
    root : str
        Store directory, created on first write.

    Examples
    --------
    >>> with JobStore('store') as store:
    ...     store.put_timeline(timeline)
    """

    def __init__(self, root: str):
        self.root = root
        self.scan_errors: List[Tuple[str, str]] = []
        self._lock = None

    def __enter__(self) -> 'JobStore':
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _dir(self, kind: str) -> str:
        return os.path.join(self.root, kind)

    def _acquire(self) -> None:
        if self._lock is None:
            os.makedirs(self.root, exist_ok=True)
            self._lock = open(os.path.join(self.root, '.lock'), 'a')
            fcntl.flock(self._lock, fcntl.LOCK_EX)

    def close(self) -> None:
        """Write the index if this store was written to, and unlock."""
        if self._lock is not None:
            self.write_index()
            fcntl.flock(self._lock, fcntl.LOCK_UN)
            self._lock.close()
            self._lock = None

    def _write(self, kind: str, job_id: str, text: str) -> str:
        _check_job_id(job_id)
        self._acquire()
        directory = self._dir(kind)
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, job_id)
        tmp_path = os.path.join(directory, '.%s.tmp' % job_id)
        with open(tmp_path, 'w', encoding='utf-8', newline='\n') as fh:
            fh.write(text)
        os.replace(tmp_path, path)
        return path

    def put_timeline(self, timeline: JobTimeline) -> str:
        return self._write(TIMELINES, timeline.job.job_id,
                           format_timeline(timeline))

    def put_profile(self, profile: JobProfile) -> str:
        return self._write(PROFILES, profile.job_id, format_profile(profile))

    def put(self, item: Union[JobTimeline, JobProfile]) -> str:
        """Store a timeline or profile atomically, replacing any previous."""
        if isinstance(item, JobTimeline):
            return self.put_timeline(item)
        if isinstance(item, JobProfile):
            return self.put_profile(item)
        raise TypeError('cannot store %r' % (item,))

    def job_ids(self, kind: str = PROFILES) -> List[str]:
        """Stored job ids of one kind, in job id order."""
        directory = self._dir(kind)
        if not os.path.isdir(directory):
            return []
        return sorted(name for name in os.listdir(directory)
                      if not name.startswith('.'))

    def _read(self, kind: str, job_id: str) -> str:
        _check_job_id(job_id)
        with open(os.path.join(self._dir(kind), job_id),
                  encoding='utf-8') as fh:
            return fh.read()

    def get_timeline(self, job_id: str) -> JobTimeline:
        return parse_timeline(self._read(TIMELINES, job_id))

    def get_profile(self, job_id: str) -> JobProfile:
        return parse_profile(self._read(PROFILES, job_id))

    def _scan(self, kind: str, parse) -> Iterator:
        for job_id in self.job_ids(kind):
            try:
                item = parse(self._read(kind, job_id))
            except (OSError, UnicodeDecodeError, StoreError) as err:
                logger.warning('skipping store entry %s/%s: %s', kind,
                               job_id, err)
                self.scan_errors.append(('%s/%s' % (kind, job_id),
                                         str(err)))
                continue
            yield item

    def scan_timelines(self) -> Iterator[JobTimeline]:
        """Stream stored timelines in job id order, skipping corrupt ones."""
        return self._scan(TIMELINES, parse_timeline)

    def scan_profiles(self) -> Iterator[JobProfile]:
        """Stream stored profiles in job id order, skipping corrupt ones."""
        return self._scan(PROFILES, parse_profile)

    def write_index(self) -> str:
        """Rewrite ``index`` from the entries present on disk."""
        os.makedirs(self.root, exist_ok=True)
        kinds: Dict[str, List[str]] = {}
        for kind in (TIMELINES, PROFILES):
            for job_id in self.job_ids(kind):
                kinds.setdefault(job_id, []).append(kind)
        path = os.path.join(self.root, INDEX)
        tmp_path = os.path.join(self.root, '.%s.tmp' % INDEX)
        with open(tmp_path, 'w', encoding='utf-8', newline='\n') as fh:
            for job_id in sorted(kinds):
                fh.write('%s %s\n' % (job_id, ','.join(kinds[job_id])))
        os.replace(tmp_path, path)
        return path


def store_put(store: JobStore, item: Union[JobTimeline, JobProfile]) -> str:
    """Put a timeline or profile into ``store``, see :meth:`JobStore.put`."""
    return store.put(item)


def store_scan(store: JobStore, kind: str = PROFILES) -> Iterator:
    """Stream the stored profiles (or timelines) in job id order."""
    if kind == PROFILES:
        return store.scan_profiles()
    if kind == TIMELINES:
        return store.scan_timelines()
    raise ValueError('unknown store kind %r' % kind)
