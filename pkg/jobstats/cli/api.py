# -*- coding: utf-8 -*-

"""A single ``jobstats`` executable for the node hooks and the offline
pipeline.

Node side (cron and scheduler prolog/epilog)::

    jobstats collect
    jobstats begin-job 271828
    jobstats end-job 271828
    jobstats rotate

Offline side::

    jobstats synth --scenario stripes.cfg
    jobstats ingest
    jobstats analyze
    jobstats report --rule all --out reports

Exit status: 0 on success, also when hooks only produced warnings; 1 on
usage errors; 2 when storage is unwritable or unreadable; 3 on malformed
data in ``--strict`` mode.
"""

import configparser
import glob
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import click
import pandas as pd
from more_click import verbose_option
from tqdm import tqdm

from jobstats.collectors import PlatformProbe
from jobstats.ingest import DeltaConfig, filter_jobs, ingest as ingest_stats
from jobstats.jobhooks import StorageError, host_collector, synthesize
from jobstats.load import AccountingError
from jobstats.locations import ARCH_ENV, DEFAULT_INTERVAL, \
    DEFAULT_SOURCE_TIMEOUT, DEFAULT_STATS_DIR, DEFAULT_STORE, FIXTURES_ENV, \
    HOSTNAME_ENV, SOURCE_TIMEOUT_ENV, STATS_DIR_ENV, STORE_ENV
from jobstats.metrics import aggregate_idle, profile_job
from jobstats.record_format import FormatError, read_file
from jobstats.report import SCATTER_METRICS, emit_scatter, flag_imbalance, \
    flag_waste, flagged_table, format_summary, render_scatter_svg, \
    write_report
from jobstats.scenario import PRODUCTION_QUEUES, load_scenario, planted_pool
from jobstats.store import TIMELINES, JobStore, StoreError

__all__ = ['main', 'dispatch', 'EXIT_OK', 'EXIT_USAGE', 'EXIT_IO',
           'EXIT_DATA']

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3

RULES = ('waste', 'imbalance')


@dataclass
class Settings:
    """Global options shared by every subcommand."""
    stats_dir: str
    store: str
    interval: int
    strict: bool


@click.group()
@verbose_option
@click.option('--stats-dir', envvar=STATS_DIR_ENV, default=DEFAULT_STATS_DIR,
              show_default=True, type=click.Path(file_okay=False),
              help='Root of the per-node stats directories.')
@click.option('--store', envvar=STORE_ENV, default=DEFAULT_STORE,
              show_default=True, type=click.Path(file_okay=False),
              help='Job store directory.')
@click.option('--interval', default=DEFAULT_INTERVAL, show_default=True,
              type=click.IntRange(min=1),
              help='Collection period in seconds. Ingest uses it for '
                   'stats files without $interval.')
@click.option('--strict', is_flag=True,
              help='Fail on the first malformed stats line.')
@click.pass_context
def main(ctx: click.Context, stats_dir: str, store: str, interval: int,
         strict: bool):
    """Job-oriented resource measurement and analysis."""
    ctx.obj = Settings(stats_dir, store, interval, strict)


def _hook_options(command):
    command = click.option('--timestamp', type=int,
                           help='Epoch seconds. Default: now.')(command)
    command = click.option('--hostname', envvar=HOSTNAME_ENV,
                           help='Node name. Default: this host.')(command)
    command = click.option('--arch', envvar=ARCH_ENV,
                           type=click.Choice(['opteron', 'nehalem_westmere',
                                              'synthetic']),
                           help='Counter architecture.')(command)
    command = click.option('--fixtures', envvar=FIXTURES_ENV,
                           type=click.Path(file_okay=False, exists=True),
                           help='Directory of captured source text.')(command)
    command = click.option('--source-timeout', envvar=SOURCE_TIMEOUT_ENV,
                           default=DEFAULT_SOURCE_TIMEOUT, show_default=True,
                           type=float,
                           help='Seconds a source may take per burst.')(
        command)
    return command


def _collector(settings: Settings, hostname: Optional[str],
               arch: Optional[str], fixtures: Optional[str],
               source_timeout: float):
    arch = arch or 'synthetic'
    probe = PlatformProbe(fixture_dir=fixtures, arch=arch)
    return host_collector(settings.stats_dir, hostname=hostname, arch=arch,
                          interval=settings.interval, probe=probe,
                          source_timeout=source_timeout)


def _report_warnings(collector) -> None:
    for type_name, count in sorted(collector.error_counts.items()):
        click.echo('warning: source %s failed %d time(s)'
                   % (type_name, count), err=True)
    if collector.warnings:
        click.echo('warning: %d unmatched or duplicate job mark(s)'
                   % collector.warnings, err=True)


@main.command()
@_hook_options
@click.pass_obj
def collect(settings: Settings, timestamp, hostname, arch, fixtures,
            source_timeout):
    """Append one burst of samples tagged with the running jobs."""
    collector = _collector(settings, hostname, arch, fixtures,
                           source_timeout)
    group = collector.collect(timestamp)
    if group is None:
        click.echo('warning: timestamp does not follow the last record, '
                   'nothing written', err=True)
    _report_warnings(collector)
    logger.info('wrote %s', collector.current_path)


@main.command(name='begin-job')
@click.argument('job_id')
@_hook_options
@click.pass_obj
def begin_job(settings: Settings, job_id, timestamp, hostname, arch,
              fixtures, source_timeout):
    """Mark the start of a job (scheduler prolog)."""
    collector = _collector(settings, hostname, arch, fixtures,
                           source_timeout)
    collector.begin_job(job_id, timestamp)
    _report_warnings(collector)


@main.command(name='end-job')
@click.argument('job_id')
@_hook_options
@click.pass_obj
def end_job(settings: Settings, job_id, timestamp, hostname, arch, fixtures,
            source_timeout):
    """Mark the end of a job (scheduler epilog)."""
    collector = _collector(settings, hostname, arch, fixtures,
                           source_timeout)
    collector.end_job(job_id, timestamp)
    _report_warnings(collector)


@main.command()
@_hook_options
@click.pass_obj
def rotate(settings: Settings, timestamp, hostname, arch, fixtures,
           source_timeout):
    """Close the current stats file and start a new one."""
    collector = _collector(settings, hostname, arch, fixtures,
                           source_timeout)
    click.echo(collector.rotate(timestamp))
    _report_warnings(collector)


@main.command()
@click.option('--scenario', 'scenario_path',
              type=click.Path(dir_okay=False, exists=True),
              help='Scenario file with [scenario] and [job <id>] sections.')
@click.option('--planted-pool', 'seed', type=int, metavar='SEED',
              help='Generate the seeded planted-anomaly pool instead.')
@click.pass_obj
def synth(settings: Settings, scenario_path: Optional[str],
          seed: Optional[int]):
    """Write the raw stats files and accounting CSV of a synthetic cluster."""
    if (scenario_path is None) == (seed is None):
        raise click.UsageError('give exactly one of --scenario and '
                               '--planted-pool')
    if scenario_path is not None:
        try:
            scenario = load_scenario(scenario_path)
        except (ValueError, configparser.Error) as err:
            raise click.BadParameter(str(err), param_hint='--scenario') \
                from None
    else:
        scenario = planted_pool(seed).scenario
    paths = synthesize(scenario, settings.stats_dir, progress=True)
    click.echo('wrote %d stats file(s) for %d node(s) and %d job(s) to %s'
               % (len(paths), scenario.nodes, len(scenario.jobs),
                  settings.stats_dir))


@main.command()
@click.option('--accounting', type=click.Path(dir_okay=False),
              help='Accounting CSV. Default: accounting.csv in the stats '
                   'directory.')
@click.pass_obj
def ingest(settings: Settings, accounting: Optional[str]):
    """Join raw stats with accounting and store one timeline per job."""
    accounting = accounting or os.path.join(settings.stats_dir,
                                            'accounting.csv')
    with JobStore(settings.store) as store:
        report = ingest_stats(settings.stats_dir, accounting, store,
                              strict=settings.strict,
                              config=DeltaConfig(tick=settings.interval),
                              progress=True)
    for row_error in report.row_errors:
        click.echo('warning: accounting row %d: %s'
                   % (row_error.row, row_error.reason), err=True)
    for path, reason in report.unreadable:
        click.echo('warning: %s: %s' % (path, reason), err=True)
    click.echo('ingested %d job(s) from %d file(s): %d without data, '
               '%d missing node(s), %d skipped line(s)'
               % (report.jobs, report.files, report.empty,
                  report.missing_nodes, report.skipped_lines))


@main.command()
@click.pass_obj
def analyze(settings: Settings):
    """Compute a profile for every stored job timeline."""
    count = 0
    with JobStore(settings.store) as store:
        job_ids = store.job_ids(TIMELINES)
        for timeline in tqdm(store.scan_timelines(), total=len(job_ids),
                             desc='profiling jobs', unit='job'):
            store.put_profile(profile_job(timeline))
            count += 1
        for entry, reason in store.scan_errors:
            tqdm.write('warning: %s: %s' % (entry, reason))
    click.echo('profiled %d job(s)' % count)


def _parse_scatter(value: Optional[str]):
    if value is None:
        return None
    x_metric, sep, y_metric = value.partition(',')
    if not sep or not x_metric or not y_metric:
        raise click.BadParameter('expected X,Y', param_hint='--scatter')
    axes = x_metric.strip(), y_metric.strip()
    for name in axes:
        if name not in SCATTER_METRICS:
            raise click.BadParameter(
                'unknown metric %s, expected one of %s'
                % (name, ', '.join(SCATTER_METRICS)), param_hint='--scatter')
    return axes


@main.command()
@click.option('--rule', type=click.Choice(RULES + ('all',)), default='all',
              show_default=True)
@click.option('--threshold', default=0.9, show_default=True,
              type=click.FloatRange(min=0), help='Waste threshold.')
@click.option('--min-bw', default=1.0, show_default=True,
              type=click.FloatRange(min=0),
              help='Imbalance bandwidth threshold in GB/s.')
@click.option('--min-cov', default=1.0, show_default=True,
              type=click.FloatRange(min=0),
              help='Imbalance NUMA CoV threshold.')
@click.option('--min-node-hours', default=1.0, show_default=True,
              type=click.FloatRange(min=0))
@click.option('--production-queue', 'production_queues', multiple=True,
              help='Queue kept by the job filter; repeatable. Default: '
                   + ', '.join(sorted(PRODUCTION_QUEUES)))
@click.option('--scatter', help='Emit scatter data for metrics X,Y, e.g. '
                                'idle_fraction,mem_used_fraction.')
@click.option('--svg', type=click.Path(dir_okay=False),
              help='Also render the scatter to this SVG file.')
@click.option('--out', type=click.Path(file_okay=False),
              help='Write <rule>.csv and <rule>.kv files here.')
@click.option('--format', 'fmt', type=click.Choice(['csv', 'kv']),
              default='kv', show_default=True,
              help='Format of the report printed to stdout.')
@click.pass_obj
def report(settings: Settings, rule: str, threshold: float, min_bw: float,
           min_cov: float, min_node_hours: float,
           production_queues: Sequence[str], scatter: Optional[str],
           svg: Optional[str], out: Optional[str], fmt: str):
    """Flag inefficient jobs among the stored profiles."""
    axes = _parse_scatter(scatter)
    if svg and axes is None:
        raise click.UsageError('--svg needs --scatter')
    store = JobStore(settings.store)
    profiles = filter_jobs(list(store.scan_profiles()), min_node_hours,
                           production_queues or PRODUCTION_QUEUES)
    reports = []
    if rule in ('waste', 'all'):
        reports.append(flag_waste(profiles, threshold))
    if rule in ('imbalance', 'all'):
        reports.append(flag_imbalance(profiles, min_bw, min_cov))

    if fmt == 'kv':
        idle = aggregate_idle(profiles)
        click.echo('pool.jobs %d' % len(profiles))
        click.echo('pool.aggregate_idle %s'
                   % (repr(idle) if isinstance(idle, float) else 'undefined'))
        for flag_report in reports:
            click.echo(format_summary(flag_report), nl=False)
    else:
        tables = [flagged_table(flag_report).assign(rule=flag_report.name)
                  for flag_report in reports]
        table = pd.concat(tables, ignore_index=True, sort=False)
        columns = ['rule'] + [column for column in table.columns
                              if column != 'rule']
        click.echo(table[columns].to_csv(index=False, lineterminator='\n'),
                   nl=False)

    if out:
        for flag_report in reports:
            for path in write_report(flag_report, out):
                logger.info('wrote %s', path)

    if axes is not None:
        table = emit_scatter(profiles, *axes)
        if out:
            with open(os.path.join(out, 'scatter.csv'), 'w',
                      newline='\n') as fh:
                fh.write(table.to_csv())
            with open(os.path.join(out, 'scatter_undefined.csv'), 'w',
                      newline='\n') as fh:
                fh.write(table.undefined_csv())
        else:
            click.echo(table.to_csv(), nl=False)
        if svg:
            with open(svg, 'w', newline='\n') as fh:
                fh.write(render_scatter_svg(table))


def _stats_paths(stats_dir: str) -> List[str]:
    return sorted(glob.glob(os.path.join(stats_dir, '*', '*.stats')))


@main.command()
@click.argument('paths', nargs=-1, type=click.Path(dir_okay=False))
@click.pass_context
def validate(ctx: click.Context, paths: Sequence[str]):
    """Parse-check stats files (default: every file in the stats directory).

    Prints the skipped line count of every file. Exits with 3 if a file
    has no usable header, or with --strict on its first malformed line.
    """
    settings: Settings = ctx.obj
    paths = list(paths) or _stats_paths(settings.stats_dir)
    failed = 0
    for path in paths:
        try:
            parsed = read_file(path, strict=settings.strict)
        except FormatError as err:
            click.echo('%s: error: %s' % (path, err))
            failed += 1
            if settings.strict:
                break
            continue
        click.echo('%s: %d record(s), %d skipped line(s)'
                   % (path, len(parsed.items), parsed.skipped))
        for lineno, reason in parsed.errors:
            logger.info('%s:%d: %s', path, lineno, reason)
    if failed:
        ctx.exit(EXIT_DATA)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and map failures to exit statuses.

    Parameters
    ----------
    argv : sequence of str, optional
        Arguments without the program name. Default: ``sys.argv[1:]``.

    Returns
    -------
    int
        0 on success or warnings, 1 on usage errors, 2 on storage
        failures, 3 on malformed data.
    """
    try:
        result = main.main(args=None if argv is None else list(argv),
                           prog_name='jobstats', standalone_mode=False)
    except click.UsageError as err:
        err.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo('aborted', err=True)
        return EXIT_USAGE
    except click.ClickException as err:
        err.show()
        return EXIT_IO
    except (FormatError, AccountingError, StoreError) as err:
        click.echo('error: %s' % err, err=True)
        return EXIT_DATA
    except (StorageError, OSError) as err:
        click.echo('error: %s' % err, err=True)
        return EXIT_IO
    return result if isinstance(result, int) else EXIT_OK
