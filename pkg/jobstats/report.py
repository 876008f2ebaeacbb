"""Flag rules over job profiles, per-user summaries and scatter output."""
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, \
    Tuple

import pandas as pd
from jinja2 import Environment, FileSystemLoader

from jobstats.locations import TEMPLATES_PATH
from jobstats.metrics import JobProfile, Metric, Undefined, is_defined

__all__ = ['FlagRule', 'FlagReport', 'UserSummary', 'ScatterTable',
           'WASTE_RULE', 'IMBALANCE_RULE', 'flag_waste', 'flag_imbalance',
           'summarize_users', 'emit_scatter', 'render_scatter_svg',
           'write_report', 'format_summary', 'flagged_table',
           'FULL_WAYNESS', 'PARTIAL_WAYNESS', 'SCATTER_COLUMNS',
           'SCATTER_METRICS']

logger = logging.getLogger(__name__)

FULL_WAYNESS = 'full_wayness'
PARTIAL_WAYNESS = 'partial_wayness'
SCATTER_COLUMNS = ['job_id', 'x', 'y', 'group']
SCATTER_METRICS = ('idle_fraction', 'unused_mem_fraction', 'mem_used_fraction',
                   'waste', 'mean_bandwidth_gbps', 'numa_cov', 'coverage',
                   'wall_hours', 'node_hours', 'nodes', 'wayness')

environment = Environment(autoescape=True,
                          loader=FileSystemLoader(TEMPLATES_PATH),
                          trim_blocks=True, lstrip_blocks=True)


@dataclass(frozen=True)
class FlagRule:
    """A named flag predicate and its thresholds."""
    name: str
    parameters: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'parameters', tuple(self.parameters))
        for key, value in self.parameters:
            if isinstance(value, bool):
                continue
            if not math.isfinite(value) or value < 0:
                raise ValueError('rule %s: %s=%r is not a finite, '
                                 'non-negative threshold'
                                 % (self.name, key, value))

    def __getitem__(self, key: str):
        return dict(self.parameters)[key]


WASTE_RULE = FlagRule('waste', (('threshold', 0.9),))
IMBALANCE_RULE = FlagRule('imbalance', (('min_bw_gbps', 1.0),
                                        ('min_cov', 1.0),
                                        ('require_full_wayness', True)))


@dataclass
class FlagReport:
    """The result of applying one flag rule to a pool of profiles.

    Attributes
    ----------
    rule : FlagRule
    flagged : list of str
        Flagged job ids, in job id order.
    owners : dict
        Owner of every flagged job.
    shapes : dict
        (nodes, wall_hours) of every flagged job.
    metrics : dict
        The values the rule looked at, per flagged job.
    unevaluable : list of str
        Jobs whose metrics needed by the rule are undefined.
    boundary : list of str
        Jobs with a metric exactly at a threshold (not flagged).
    pool_size : int
        Number of profiles the rule was applied to.
    """
    rule: FlagRule
    flagged: List[str] = field(default_factory=list)
    owners: Dict[str, str] = field(default_factory=dict)
    shapes: Dict[str, Tuple[int, float]] = field(default_factory=dict)
    metrics: Dict[str, Dict[str, float]] = field(default_factory=dict)
    unevaluable: List[str] = field(default_factory=list)
    boundary: List[str] = field(default_factory=list)
    pool_size: int = 0

    @property
    def name(self) -> str:
        return self.rule.name

    def _add(self, profile: JobProfile, metrics: Dict[str, float]) -> None:
        self.flagged.append(profile.job_id)
        self.owners[profile.job_id] = profile.owner
        self.shapes[profile.job_id] = (profile.nodes, profile.wall_hours)
        self.metrics[profile.job_id] = metrics

    def _finish(self) -> 'FlagReport':
        self.flagged.sort()
        self.unevaluable.sort()
        self.boundary.sort()
        logger.info('rule %s flagged %d of %d jobs (%d unevaluable)',
                    self.name, len(self.flagged), self.pool_size,
                    len(self.unevaluable))
        return self


def flag_waste(profiles: Iterable[JobProfile],
               threshold: float = 0.9) -> FlagReport:
    """Flag jobs whose waste metric is strictly greater than ``threshold``.

    Parameters
    ----------
    profiles : iterable of JobProfile
        The pool, normally already passed through
        :func:`jobstats.ingest.filter_jobs`.
    threshold : float

    Returns
    -------
    FlagReport
        Jobs with undefined waste are listed as unevaluable, jobs at
        exactly the threshold as boundary.
    """
    report = FlagReport(FlagRule('waste', (('threshold', threshold),)))
    for profile in profiles:
        report.pool_size += 1
        if not is_defined(profile.waste):
            report.unevaluable.append(profile.job_id)
        elif profile.waste > threshold:
            report._add(profile, {'waste': profile.waste,
                                  'idle_fraction': profile.idle_fraction,
                                  'unused_mem_fraction':
                                      profile.unused_mem_fraction})
        elif profile.waste == threshold:
            report.boundary.append(profile.job_id)
    return report._finish()


def flag_imbalance(profiles: Iterable[JobProfile], min_bw_gbps: float = 1.0,
                   min_cov: float = 1.0,
                   require_full_wayness: bool = True) -> FlagReport:
    """Flag memory-bound jobs with an uneven load across sockets.

    A job is flagged if it fills every core of its nodes (when
    ``require_full_wayness``), its mean bandwidth is strictly above
    ``min_bw_gbps`` and its NUMA CoV strictly above ``min_cov``.

    Returns
    -------
    FlagReport
    """
    report = FlagReport(FlagRule('imbalance', (
        ('min_bw_gbps', min_bw_gbps), ('min_cov', min_cov),
        ('require_full_wayness', require_full_wayness))))
    for profile in profiles:
        report.pool_size += 1
        bandwidth, cov = profile.mean_bandwidth_gbps, profile.numa_cov
        if require_full_wayness and not profile.is_full_wayness:
            continue
        if not is_defined(bandwidth) or not is_defined(cov):
            report.unevaluable.append(profile.job_id)
            continue
        if bandwidth > min_bw_gbps and cov > min_cov:
            report._add(profile, {'mean_bandwidth_gbps': bandwidth,
                                  'numa_cov': cov})
        elif (bandwidth == min_bw_gbps and cov >= min_cov) or \
                (cov == min_cov and bandwidth >= min_bw_gbps):
            report.boundary.append(profile.job_id)
    return report._finish()


@dataclass
class UserSummary:
    """Flag counts per owner, most flagged first."""
    counts: List[Tuple[str, int]]
    top_share: Metric

    @property
    def top_user(self) -> Optional[str]:
        return self.counts[0][0] if self.counts else None


def summarize_users(report: FlagReport) -> UserSummary:
    """Count flagged jobs per owner and the top owner's share.

    Returns
    -------
    UserSummary
        Counts sorted by decreasing count, then owner; the share is
        Undefined for an empty report.
    """
    counter = Counter(report.owners[job_id] for job_id in report.flagged)
    counts = sorted(counter.items(), key=lambda item: (-item[1], item[0]))
    if not counts:
        return UserSummary([], Undefined)
    return UserSummary(counts, counts[0][1] / len(report.flagged))


def _full_wayness_group(profile: JobProfile) -> str:
    return FULL_WAYNESS if profile.is_full_wayness else PARTIAL_WAYNESS


@dataclass
class ScatterTable:
    """Scatter points and the jobs left out for an undefined metric."""
    x_metric: str
    y_metric: str
    table: pd.DataFrame
    undefined: List[str] = field(default_factory=list)

    def to_csv(self) -> str:
        return self.table.to_csv(index=False, lineterminator='\n')

    def undefined_csv(self) -> str:
        return pd.DataFrame({'job_id': self.undefined}).to_csv(
            index=False, lineterminator='\n')


def emit_scatter(profiles: Iterable[JobProfile],
                 x_metric: str = 'idle_fraction',
                 y_metric: str = 'mem_used_fraction',
                 group: Callable[[JobProfile], str] = _full_wayness_group) \
        -> ScatterTable:
    """Project profiles onto two metrics.

    Parameters
    ----------
    profiles : iterable of JobProfile
    x_metric, y_metric : str
        Names from :data:`SCATTER_METRICS`, e.g. ``idle_fraction`` and
        ``mem_used_fraction``, or ``mean_bandwidth_gbps`` and ``numa_cov``.
    group : callable
        Maps a profile to its group label. Default: ``full_wayness`` for
        jobs filling every core, else ``partial_wayness``.

    Returns
    -------
    ScatterTable
        Columns ``job_id,x,y,group`` ordered by job id, one row per profile
        with both metrics defined; the rest are listed in ``undefined``.

    Raises
    ------
    ValueError
        If a metric name is unknown.
    """
    for name in (x_metric, y_metric):
        if name not in SCATTER_METRICS:
            raise ValueError('unknown metric %r, expected one of %s'
                             % (name, ', '.join(SCATTER_METRICS)))
    rows = []
    undefined = []
    for profile in sorted(profiles, key=lambda profile: profile.job_id):
        x, y = getattr(profile, x_metric), getattr(profile, y_metric)
        if not is_defined(x) or not is_defined(y):
            undefined.append(profile.job_id)
            continue
        rows.append((profile.job_id, float(x), float(y), group(profile)))
    table = pd.DataFrame(rows, columns=SCATTER_COLUMNS)
    return ScatterTable(x_metric, y_metric, table, undefined)


def _axis(values: Sequence[float]) -> Tuple[float, float]:
    low = min([0.0] + list(values))
    high = max([1.0] + list(values))
    return low, high


def render_scatter_svg(scatter: ScatterTable, width: int = 640,
                       height: int = 480) -> str:
    """Render scatter points as an SVG document.

    Full-wayness points are blue and partial-wayness points red. Axes span
    [0, 1] or the data range if it is wider.
    """
    margin = 60
    x_low, x_high = _axis(scatter.table['x'].tolist())
    y_low, y_high = _axis(scatter.table['y'].tolist())
    plot_width, plot_height = width - 2 * margin, height - 2 * margin
    points = []
    for row in scatter.table.itertuples(index=False):
        points.append({
            'job_id': row.job_id,
            'cx': margin + (row.x - x_low) / (x_high - x_low) * plot_width,
            'cy': height - margin
            - (row.y - y_low) / (y_high - y_low) * plot_height,
            'color': 'blue' if row.group == FULL_WAYNESS else 'red',
        })
    template = environment.get_template('scatter.svg')
    return template.render(width=width, height=height, margin=margin,
                           points=points, x_label=scatter.x_metric,
                           y_label=scatter.y_metric,
                           x_range=(x_low, x_high), y_range=(y_low, y_high))


def _format_value(value) -> str:
    if value is Undefined or value is None:
        return 'undefined'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_summary(report: FlagReport) -> str:
    """``key value`` text summarizing a report."""
    summary = summarize_users(report)
    lines = ['rule %s' % report.name]
    lines += ['param.%s %s' % (key, _format_value(value))
              for key, value in report.rule.parameters]
    lines += ['pool_size %d' % report.pool_size,
              'flagged_count %d' % len(report.flagged),
              'flagged %s' % (','.join(report.flagged) or '-'),
              'unevaluable %s' % (','.join(report.unevaluable) or '-'),
              'boundary %s' % (','.join(report.boundary) or '-'),
              'top_share %s' % _format_value(summary.top_share)]
    lines += ['user.%s %d' % (owner, count)
              for owner, count in summary.counts]
    return ''.join(line + '\n' for line in lines)


def flagged_table(report: FlagReport) -> pd.DataFrame:
    """One row per flagged job with its owner, shape and rule metrics."""
    metric_names = sorted({name for values in report.metrics.values()
                           for name in values})
    rows = []
    for job_id in report.flagged:
        nodes, wall_hours = report.shapes[job_id]
        rows.append([job_id, report.owners[job_id], nodes, wall_hours]
                    + [report.metrics[job_id][name] for name in metric_names])
    return pd.DataFrame(rows, columns=['job_id', 'owner', 'nodes',
                                       'wall_hours'] + metric_names)


def write_report(report: FlagReport, directory: str) -> List[str]:
    """Write ``<rule>.csv`` (flagged jobs) and ``<rule>.kv`` (summary).

    Returns
    -------
    list of str
        The paths written.
    """
    os.makedirs(directory, exist_ok=True)
    csv_path = os.path.join(directory, '%s.csv' % report.name)
    kv_path = os.path.join(directory, '%s.kv' % report.name)
    flagged_table(report).to_csv(csv_path, index=False, lineterminator='\n')
    with open(kv_path, 'w', newline='\n') as fh:
        fh.write(format_summary(report))
    return [csv_path, kv_path]
