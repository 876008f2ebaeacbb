"""Implements loading and writing of scheduler accounting files."""
import csv
import io
import logging
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Tuple

__all__ = ['AccountingRecord', 'AccountingError', 'RowError',
           'ACCOUNTING_COLUMNS', 'load_accounting', 'read_accounting',
           'format_accounting', 'write_accounting']

logger = logging.getLogger(__name__)

ACCOUNTING_COLUMNS = ('job_id', 'owner', 'queue', 'nodes', 'wayness',
                      'start', 'end', 'node_list')


class AccountingError(ValueError):
    """Raised when an accounting file is structurally unusable."""


class RowError(NamedTuple):
    """A rejected accounting row: its 1-based line number and the reason."""
    row: int
    reason: str


@dataclass(frozen=True)
class AccountingRecord:
    """One scheduler accounting row.

    Attributes
    ----------
    job_id : str
    owner : str
    queue : str
    nodes : int
        Number of nodes allocated to the job.
    wayness : int
        Processes launched per node.
    start, end : int
        Job interval in epoch seconds.
    node_list : tuple of str
        Hostnames of the allocated nodes.
    """
    job_id: str
    owner: str
    queue: str
    nodes: int
    wayness: int
    start: int
    end: int
    node_list: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, 'node_list', tuple(self.node_list))
        if not self.job_id:
            raise ValueError('empty job id')
        if self.nodes < 1 or self.wayness < 1:
            raise ValueError('nodes and wayness must be positive')
        if self.end <= self.start:
            raise ValueError('end %d is not after start %d'
                             % (self.end, self.start))
        if len(self.node_list) != self.nodes:
            raise ValueError('node_list has %d names but nodes=%d'
                             % (len(self.node_list), self.nodes))
        if len(set(self.node_list)) != len(self.node_list):
            raise ValueError('node_list repeats a hostname')

    @property
    def wall_hours(self) -> float:
        return (self.end - self.start) / 3600.0

    @property
    def node_hours(self) -> float:
        return self.nodes * self.wall_hours


def _record_from_row(row) -> AccountingRecord:
    missing = [column for column in ACCOUNTING_COLUMNS if row.get(column) in
               (None, '')]
    if missing:
        raise ValueError('empty %s' % ', '.join(missing))
    try:
        numbers = {column: int(row[column])
                   for column in ('nodes', 'wayness', 'start', 'end')}
    except ValueError as err:
        raise ValueError('non-integer field (%s)' % err) from None
    return AccountingRecord(job_id=row['job_id'].strip(),
                            owner=row['owner'].strip(),
                            queue=row['queue'].strip(),
                            node_list=[name.strip() for name in
                                       row['node_list'].split(';')],
                            **numbers)


def load_accounting(text: str) \
        -> Tuple[List[AccountingRecord], List[RowError]]:
    """Parse accounting CSV text.

    Parameters
    ----------
    text : str
        CSV with the header row
        ``job_id,owner,queue,nodes,wayness,start,end,node_list``; the node
        list is semicolon-joined.

    Returns
    -------
    records : list of AccountingRecord
        One record per valid row, in file order.
    errors : list of RowError
        Rejected rows with their line numbers.

    Raises
    ------
    AccountingError
        If a column is missing from the header.
    """
    reader = csv.DictReader(io.StringIO(text))
    columns = reader.fieldnames or []
    missing = [column for column in ACCOUNTING_COLUMNS
               if column not in columns]
    if missing:
        raise AccountingError('accounting file lacks column(s) %s'
                              % ', '.join(missing))
    records = []
    errors = []
    seen = set()
    for row in reader:
        lineno = reader.line_num
        try:
            record = _record_from_row(row)
        except ValueError as err:
            errors.append(RowError(lineno, str(err)))
            continue
        if record.job_id in seen:
            errors.append(RowError(lineno, 'duplicate job id %s'
                                   % record.job_id))
            continue
        seen.add(record.job_id)
        records.append(record)
    for error in errors:
        logger.warning('accounting row %d rejected: %s', *error)
    return records, errors


def read_accounting(path: str) \
        -> Tuple[List[AccountingRecord], List[RowError]]:
    """Load the accounting CSV at ``path``, see :func:`load_accounting`."""
    with open(path, newline='') as fh:
        return load_accounting(fh.read())


def format_accounting(records: Iterable[AccountingRecord]) -> str:
    """Return accounting CSV text for ``records``, in the given order."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(ACCOUNTING_COLUMNS)
    for record in records:
        writer.writerow([record.job_id, record.owner, record.queue,
                         record.nodes, record.wayness, record.start,
                         record.end, ';'.join(record.node_list)])
    return out.getvalue()


def write_accounting(records: Iterable[AccountingRecord], path: str) -> None:
    with open(path, 'w', newline='') as fh:
        fh.write(format_accounting(records))
