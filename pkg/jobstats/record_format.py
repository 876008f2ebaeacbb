"""Write and parse the self-describing plain-text record format.

Every collector output file uses the same line grammar. A file starts with a
header made of ``$key value`` metadata lines and one
``!<type_name> <name>:<kind>:<unit> ...`` line per record type. The body is
a sequence of

* record groups: a ``<timestamp> <job ids>`` line (job ids comma-joined, or
  ``-`` for none) followed by one ``<type_name> <device_id> <v1> <v2> ...``
  line per sample,
* marks: a ``<timestamp> -`` line followed by ``%begin <job>``,
  ``%end <job>`` or ``%rotate``, optionally with a trailing note,
* metadata updates: ``$key value`` lines appearing after the first record.

Fields are separated by single spaces and lines end with ``\\n``. All sample
values are unsigned 64-bit integers.
"""
import io
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, \
    Optional, Tuple, Union

__all__ = ['FormatError', 'FieldSpec', 'TypeSchema', 'FileHeader', 'Sample',
           'RecordGroup', 'Mark', 'Metadata', 'ParsedFile', 'RecordReader',
           'write_header', 'append_group', 'write_file', 'parse_file',
           'read_file', 'iter_records', 'format_schema', 'parse_schema',
           'COUNTER', 'GAUGE', 'UNITS', 'SCHEMA_VERSION', 'MAX_VALUE']

logger = logging.getLogger(__name__)

SCHEMA_VERSION = '1.0'
COUNTER = 'counter'
GAUGE = 'gauge'
KIND_CHARS = {COUNTER: 'c', GAUGE: 'g'}
CHAR_KINDS = {char: kind for kind, char in KIND_CHARS.items()}
UNITS = ('cs', 'kb', 'b', 'p', 'ev', 'none')
MAX_VALUE = 2 ** 64 - 1
REQUIRED_KEYS = ('schema_version', 'hostname', 'cores', 'sockets',
                 'mem_total_kb')
MARK_KINDS = ('begin', 'end', 'rotate')
NO_JOBS = '-'

_IDENTIFIER_RE = re.compile(r'^[a-z][a-z0-9_]*$')
_JOB_ID_RE = re.compile(r'^[A-Za-z0-9_.@+\[\]-]+$')
_UINT_RE = re.compile(r'^(0|[1-9][0-9]*)$')
_TIMESTAMP_LINE_RE = re.compile(r'^(0|[1-9][0-9]*) (\S+)$')


class FormatError(ValueError):
    """Raised when text or a structure violates the record grammar."""

    def __init__(self, reason: str, lineno: Optional[int] = None):
        self.reason = reason
        self.lineno = lineno
        if lineno is None:
            message = reason
        else:
            message = 'line %d: %s' % (lineno, reason)
        super().__init__(message)


def _check_identifier(name: str, what: str) -> None:
    if not isinstance(name, str) or not _IDENTIFIER_RE.match(name):
        raise FormatError('invalid %s %r' % (what, name))


def _check_job_id(job_id: str) -> None:
    if not isinstance(job_id, str) or job_id == NO_JOBS \
            or not _JOB_ID_RE.match(job_id):
        raise FormatError('invalid job id %r' % (job_id,))


def _check_value(value: int, what: str) -> None:
    if isinstance(value, bool) or not isinstance(value, int) \
            or not 0 <= value <= MAX_VALUE:
        raise FormatError('%s %r is not an unsigned 64-bit integer'
                          % (what, value))


@dataclass(frozen=True)
class FieldSpec:
    """One field of a record type: name, counter or gauge, and unit."""
    name: str
    kind: str = COUNTER
    unit: str = 'none'

    def __post_init__(self):
        _check_identifier(self.name, 'field name')
        if self.kind not in KIND_CHARS:
            raise FormatError('invalid field kind %r' % (self.kind,))
        if self.unit not in UNITS:
            raise FormatError('invalid unit %r' % (self.unit,))

    @property
    def is_counter(self) -> bool:
        return self.kind == COUNTER


@dataclass(frozen=True)
class TypeSchema:
    """The ordered field list of one record type such as ``cpu``."""
    type_name: str
    fields: Tuple[FieldSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, 'fields', tuple(self.fields))
        _check_identifier(self.type_name, 'type name')
        if not self.fields:
            raise FormatError('type %s has no fields' % self.type_name)
        names = [spec.name for spec in self.fields]
        if len(set(names)) != len(names):
            raise FormatError('type %s has duplicate field names'
                              % self.type_name)

    @property
    def field_names(self) -> List[str]:
        return [spec.name for spec in self.fields]

    def index(self, name: str) -> int:
        """Return the position of field ``name`` in this schema."""
        try:
            return self.field_names.index(name)
        except ValueError:
            raise ValueError('type %s has no field %s'
                             % (self.type_name, name)) from None


@dataclass(frozen=True)
class FileHeader:
    """Metadata and record type schemas at the top of a stats file.

    ``extras`` holds any further ``$`` metadata in file order, for example
    ``interval``, ``arch`` and ``pmc_events``; unknown keys found while
    parsing are kept here unchanged.
    """
    hostname: str
    cores: int
    sockets: int
    mem_total_kb: int
    schemas: Tuple[TypeSchema, ...] = ()
    schema_version: str = SCHEMA_VERSION
    extras: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'schemas', tuple(self.schemas))
        object.__setattr__(self, 'extras', dict(self.extras))
        self.validate()

    def validate(self) -> None:
        """Raise FormatError if the header breaks a format invariant."""
        for key, value in (('schema_version', self.schema_version),
                           ('hostname', self.hostname)):
            if not isinstance(value, str) or not value \
                    or any(c.isspace() for c in value):
                raise FormatError('invalid %s %r' % (key, value))
        for key in ('cores', 'sockets', 'mem_total_kb'):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, int) \
                    or value < 1:
                raise FormatError('%s must be a positive integer' % key)
        if self.cores < self.sockets:
            raise FormatError('cores (%d) fewer than sockets (%d)'
                              % (self.cores, self.sockets))
        names = [schema.type_name for schema in self.schemas]
        if len(set(names)) != len(names):
            raise FormatError('duplicate type names in header')
        for key, value in self.extras.items():
            _check_identifier(key, 'metadata key')
            if key in REQUIRED_KEYS:
                raise FormatError('metadata key %s is reserved' % key)
            _check_metadata_value(value)

    def schema_map(self) -> Dict[str, TypeSchema]:
        return {schema.type_name: schema for schema in self.schemas}


def _check_metadata_value(value: str) -> None:
    if not isinstance(value, str) or not value or '\n' in value \
            or value != value.strip():
        raise FormatError('invalid metadata value %r' % (value,))


@dataclass(frozen=True)
class Sample:
    """The values of one device of one record type at one timestamp."""
    type_name: str
    device_id: int
    values: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, 'values', tuple(self.values))


@dataclass(frozen=True)
class RecordGroup:
    """One timestamped burst of samples tagged with the running jobs."""
    timestamp: int
    job_ids: FrozenSet[str] = frozenset()
    samples: Tuple[Sample, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'job_ids', frozenset(self.job_ids))
        object.__setattr__(self, 'samples', tuple(self.samples))


@dataclass(frozen=True)
class Mark:
    """A job begin/end or file rotation event."""
    kind: str
    timestamp: int
    job_id: Optional[str] = None
    note: Optional[str] = None


@dataclass(frozen=True)
class Metadata:
    """A ``$key value`` line appearing between records."""
    key: str
    value: str


Record = Union[RecordGroup, Mark, Metadata]


def format_schema(schema: TypeSchema) -> str:
    """Return the ``!`` header line (without newline) for a schema."""
    specs = ['%s:%s:%s' % (spec.name, KIND_CHARS[spec.kind], spec.unit)
             for spec in schema.fields]
    return '!%s %s' % (schema.type_name, ' '.join(specs))


def parse_schema(line: str) -> TypeSchema:
    """Parse a ``!`` header line into a TypeSchema.

    Raises
    ------
    FormatError
        If the line does not follow the schema grammar.
    """
    if not line.startswith('!'):
        raise FormatError('schema line must start with !')
    parts = line[1:].split(' ')
    if len(parts) < 2:
        raise FormatError('schema line without fields')
    specs = []
    for part in parts[1:]:
        pieces = part.split(':')
        if len(pieces) != 3 or pieces[1] not in CHAR_KINDS:
            raise FormatError('invalid field spec %r' % part)
        specs.append(FieldSpec(pieces[0], CHAR_KINDS[pieces[1]], pieces[2]))
    return TypeSchema(parts[0], specs)


def write_header(header: FileHeader) -> str:
    """Serialize a file header.

    Parameters
    ----------
    header : FileHeader

    Returns
    -------
    str
        ``$`` metadata lines (the five required keys, then extras in order)
        followed by one ``!`` line per schema. Identical headers produce
        identical text.

    Raises
    ------
    FormatError
        If the header violates an invariant.
    """
    header.validate()
    lines = ['$schema_version %s' % header.schema_version,
             '$hostname %s' % header.hostname,
             '$cores %d' % header.cores,
             '$sockets %d' % header.sockets,
             '$mem_total_kb %d' % header.mem_total_kb]
    lines += ['$%s %s' % (key, value) for key, value in header.extras.items()]
    lines += [format_schema(schema) for schema in header.schemas]
    return ''.join(line + '\n' for line in lines)


def _schema_map(schemas) -> Mapping[str, TypeSchema]:
    if isinstance(schemas, FileHeader):
        return schemas.schema_map()
    if isinstance(schemas, Mapping):
        return schemas
    return {schema.type_name: schema for schema in schemas}


def append_group(item: Record, schemas) -> str:
    """Serialize a record group, mark or metadata update.

    Parameters
    ----------
    item : RecordGroup or Mark or Metadata
        The record to serialize.
    schemas : FileHeader or dict or list
        The schemas declared by the file's header, used to check sample
        types and arity.

    Returns
    -------
    str
        The record's lines, each terminated by a newline.

    Raises
    ------
    FormatError
        If a sample references an undeclared type, has the wrong number of
        values, or any identifier or value is out of range.
    """
    if isinstance(item, RecordGroup):
        return _format_group(item, _schema_map(schemas))
    if isinstance(item, Mark):
        return _format_mark(item)
    if isinstance(item, Metadata):
        _check_identifier(item.key, 'metadata key')
        _check_metadata_value(item.value)
        return '$%s %s\n' % (item.key, item.value)
    raise TypeError('cannot serialize %r' % (item,))


def _format_group(group: RecordGroup, schemas: Mapping[str, TypeSchema]) \
        -> str:
    _check_value(group.timestamp, 'timestamp')
    for job_id in group.job_ids:
        _check_job_id(job_id)
    jobs = ','.join(sorted(group.job_ids)) if group.job_ids else NO_JOBS
    lines = ['%d %s' % (group.timestamp, jobs)]
    seen = set()
    for sample in group.samples:
        schema = schemas.get(sample.type_name)
        if schema is None:
            raise FormatError('type %s not declared in header'
                              % sample.type_name)
        _check_value(sample.device_id, 'device id')
        key = (sample.type_name, sample.device_id)
        if key in seen:
            raise FormatError('duplicate sample %s %d' % key)
        seen.add(key)
        if len(sample.values) != len(schema.fields):
            raise FormatError('type %s expects %d values, got %d'
                              % (sample.type_name, len(schema.fields),
                                 len(sample.values)))
        for value in sample.values:
            _check_value(value, 'value')
        lines.append('%s %d %s' % (sample.type_name, sample.device_id,
                                   ' '.join(str(v) for v in sample.values)))
    return ''.join(line + '\n' for line in lines)


def _format_mark(mark: Mark) -> str:
    _check_value(mark.timestamp, 'timestamp')
    if mark.kind not in MARK_KINDS:
        raise FormatError('invalid mark kind %r' % (mark.kind,))
    words = [mark.kind]
    if mark.kind == 'rotate':
        if mark.job_id is not None:
            raise FormatError('rotate marks carry no job id')
    else:
        _check_job_id(mark.job_id)
        words.append(mark.job_id)
    if mark.note is not None:
        _check_identifier(mark.note, 'mark note')
        words.append(mark.note)
    return '%d %s\n%%%s\n' % (mark.timestamp, NO_JOBS, ' '.join(words))


def write_file(header: FileHeader, items: Iterable[Record]) -> str:
    """Serialize a whole file: the header followed by every record.

    Raises
    ------
    FormatError
        If any record is invalid, or a Metadata item precedes every group
        and mark (it would be read back as part of the header).
    """
    schemas = header.schema_map()
    parts = [write_header(header)]
    seen_record = False
    for item in items:
        if isinstance(item, Metadata) and not seen_record:
            raise FormatError('metadata item before the first record')
        seen_record = True
        parts.append(append_group(item, schemas))
    return ''.join(parts)


@dataclass
class ParsedFile:
    """Result of parsing one stats file.

    ``skipped`` counts malformed lines dropped in lenient mode and
    ``errors`` lists them as ``(line number, reason)``.
    """
    header: FileHeader
    items: List[Record]
    skipped: int = 0
    errors: List[Tuple[int, str]] = field(default_factory=list)


class _PendingGroup(object):
    __slots__ = ('lineno', 'timestamp', 'job_ids', 'samples', 'keys')

    def __init__(self, lineno, timestamp, job_ids):
        self.lineno = lineno
        self.timestamp = timestamp
        self.job_ids = job_ids
        self.samples = []
        self.keys = set()


class RecordReader(object):
    """Single-pass reader over the lines of one stats file.

    The header is read on construction; iterating the reader yields the
    body's records one at a time, so memory use is bounded by the largest
    group rather than the file.

    Parameters
    ----------
    lines : iterable of str
        Lines of the file, with or without trailing newlines.
    strict : bool
        If True the first malformed line raises FormatError. Otherwise
        malformed lines are skipped and counted in ``skipped``.

    Raises
    ------
    FormatError
        If the header is missing or incomplete, in either mode.
    """

    def __init__(self, lines: Iterable[str], strict: bool = False):
        self.strict = strict
        self.skipped = 0
        self.errors: List[Tuple[int, str]] = []
        self._lines = enumerate(lines, 1)
        self._pushback: Optional[Tuple[int, str]] = None
        self.header = self._read_header()

    def _malformed(self, lineno: int, reason: str) -> None:
        if self.strict:
            raise FormatError(reason, lineno)
        self.skipped += 1
        self.errors.append((lineno, reason))
        logger.debug('skipping line %d: %s', lineno, reason)

    def _read_header(self) -> FileHeader:
        metadata: Dict[str, str] = {}
        schemas: List[TypeSchema] = []
        lineno = 0
        for lineno, raw in self._lines:
            line = raw.rstrip('\r\n')
            if line.startswith('$'):
                key, _, value = line[1:].partition(' ')
                if not _IDENTIFIER_RE.match(key) or not value \
                        or key in metadata:
                    self._malformed(lineno, 'invalid metadata line')
                    continue
                metadata[key] = value
            elif line.startswith('!'):
                try:
                    schemas.append(parse_schema(line))
                except FormatError as err:
                    raise FormatError(err.reason, lineno) from None
            else:
                self._pushback = (lineno, raw)
                break
        missing = [key for key in REQUIRED_KEYS if key not in metadata]
        if missing:
            raise FormatError('missing header before first record (no %s)'
                              % ', '.join(missing), lineno or None)
        integers = {}
        for key in ('cores', 'sockets', 'mem_total_kb'):
            if not _UINT_RE.match(metadata[key]):
                raise FormatError('header %s is not an integer' % key)
            integers[key] = int(metadata[key])
        extras = {key: value for key, value in metadata.items()
                  if key not in REQUIRED_KEYS}
        try:
            return FileHeader(hostname=metadata['hostname'],
                              schema_version=metadata['schema_version'],
                              schemas=schemas, extras=extras, **integers)
        except FormatError as err:
            raise FormatError(err.reason, lineno or None) from None

    def _body_lines(self) -> Iterator[Tuple[int, str]]:
        if self._pushback is not None:
            pushed, self._pushback = self._pushback, None
            yield pushed
        yield from self._lines

    def __iter__(self) -> Iterator[Record]:
        schemas = self.header.schema_map()
        pending: Optional[_PendingGroup] = None
        last_timestamp: Optional[int] = None

        def flush():
            nonlocal last_timestamp
            if last_timestamp is not None \
                    and pending.timestamp <= last_timestamp:
                self._malformed(pending.lineno, 'timestamp not increasing')
                return None
            last_timestamp = pending.timestamp
            return RecordGroup(pending.timestamp, pending.job_ids,
                               pending.samples)

        for lineno, raw in self._body_lines():
            line = raw.rstrip('\r\n')
            first = line[:1]
            if first.isdigit():
                if pending is not None:
                    group = flush()
                    if group is not None:
                        yield group
                pending = self._parse_timestamp_line(lineno, line)
            elif first == '%':
                if pending is None or pending.job_ids or pending.samples:
                    if pending is not None:
                        group = flush()
                        if group is not None:
                            yield group
                        pending = None
                    self._malformed(lineno, 'mark without its timestamp line')
                    continue
                mark = self._parse_mark(lineno, line, pending.timestamp)
                pending = None
                if mark is not None:
                    yield mark
            elif first == '$':
                if pending is not None:
                    group = flush()
                    if group is not None:
                        yield group
                    pending = None
                key, _, value = line[1:].partition(' ')
                if not _IDENTIFIER_RE.match(key) or not value \
                        or value != value.strip():
                    self._malformed(lineno, 'invalid metadata line')
                    continue
                yield Metadata(key, value)
            elif pending is None:
                self._malformed(lineno, 'line outside any record group')
            else:
                self._add_sample(lineno, line, pending, schemas)
        if pending is not None:
            group = flush()
            if group is not None:
                yield group

    def _parse_timestamp_line(self, lineno: int, line: str) \
            -> Optional[_PendingGroup]:
        match = _TIMESTAMP_LINE_RE.match(line)
        if match is None:
            self._malformed(lineno, 'invalid timestamp line')
            return None
        timestamp = int(match.group(1))
        if timestamp > MAX_VALUE:
            self._malformed(lineno, 'timestamp out of range')
            return None
        jobs = match.group(2)
        if jobs == NO_JOBS:
            return _PendingGroup(lineno, timestamp, frozenset())
        job_ids = jobs.split(',')
        if len(set(job_ids)) != len(job_ids) or not all(
                job_id != NO_JOBS and _JOB_ID_RE.match(job_id)
                for job_id in job_ids):
            self._malformed(lineno, 'invalid job id list')
            return None
        return _PendingGroup(lineno, timestamp, frozenset(job_ids))

    def _parse_mark(self, lineno: int, line: str, timestamp: int) \
            -> Optional[Mark]:
        words = line[1:].split(' ')
        kind = words[0]
        if kind == 'rotate':
            if len(words) == 1:
                return Mark('rotate', timestamp)
            if len(words) == 2 and _IDENTIFIER_RE.match(words[1]):
                return Mark('rotate', timestamp, note=words[1])
        elif kind in MARK_KINDS and len(words) in (2, 3):
            job_id = words[1]
            note = words[2] if len(words) == 3 else None
            if job_id != NO_JOBS and _JOB_ID_RE.match(job_id) and (
                    note is None or _IDENTIFIER_RE.match(note)):
                return Mark(kind, timestamp, job_id, note)
        self._malformed(lineno, 'invalid mark')
        return None

    def _add_sample(self, lineno: int, line: str, pending: _PendingGroup,
                    schemas: Mapping[str, TypeSchema]) -> None:
        words = line.split(' ')
        schema = schemas.get(words[0])
        if schema is None:
            self._malformed(lineno, 'undeclared type %r' % words[0])
            return
        if len(words) - 2 != len(schema.fields):
            self._malformed(lineno, 'type %s expects %d values, got %d'
                            % (schema.type_name, len(schema.fields),
                               max(len(words) - 2, 0)))
            return
        if not all(_UINT_RE.match(word) for word in words[1:]):
            self._malformed(lineno, 'non-integer sample field')
            return
        numbers = [int(word) for word in words[1:]]
        if any(number > MAX_VALUE for number in numbers):
            self._malformed(lineno, 'value exceeds 64 bits')
            return
        key = (schema.type_name, numbers[0])
        if key in pending.keys:
            self._malformed(lineno, 'duplicate sample %s %d' % key)
            return
        pending.keys.add(key)
        pending.samples.append(Sample(schema.type_name, numbers[0],
                                      tuple(numbers[1:])))


def _split_lines(text: str) -> Iterator[str]:
    return iter(io.StringIO(text, newline='\n'))


def iter_records(lines: Iterable[str], strict: bool = False) -> RecordReader:
    """Return a streaming RecordReader over ``lines``.

    The reader's ``header`` is available immediately; iterate it for the
    records.
    """
    return RecordReader(lines, strict=strict)


def parse_file(text: str, strict: bool = False) -> ParsedFile:
    """Parse the full text of a stats file.

    Parameters
    ----------
    text : str
        File content.
    strict : bool
        Abort on the first malformed line instead of skipping it.

    Returns
    -------
    ParsedFile
        Header, records in file order, and the lenient-mode skip report.
        For well-formed input ``parse_file(write_file(h, items))`` yields
        ``h`` and ``items`` back.

    Raises
    ------
    FormatError
        In strict mode for any malformed line; in both modes when the
        header is missing.
    """
    reader = RecordReader(_split_lines(text), strict=strict)
    items = list(reader)
    return ParsedFile(reader.header, items, reader.skipped, reader.errors)


def read_file(path: str, strict: bool = False) -> ParsedFile:
    """Parse the stats file at ``path``, see :func:`parse_file`."""
    with open(path, 'r', encoding='utf-8', errors='replace',
              newline='\n') as fh:
        reader = RecordReader(fh, strict=strict)
        items = list(reader)
    if reader.skipped:
        logger.warning('%s: skipped %d malformed lines', path,
                       reader.skipped)
    return ParsedFile(reader.header, items, reader.skipped, reader.errors)
