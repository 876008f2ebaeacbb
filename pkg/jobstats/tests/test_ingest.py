import pytest

from jobstats.ingest import GAP, OK, RESET_DROPPED, WRAPPED, DeltaConfig, \
    IngestReport, NodeData, assemble_job, delta_series, filter_jobs, \
    ingest, load_stats_dir
from jobstats.jobhooks import synthesize
from jobstats.load import AccountingRecord
from jobstats.metrics import profile_job
from jobstats.record_format import FieldSpec, FileHeader, FormatError, \
    Mark, ParsedFile, RecordGroup, Sample, TypeSchema
from jobstats.scenario import SyntheticJob, SyntheticScenario
from jobstats.store import TIMELINES, JobStore

CPU = TypeSchema('cpu', [FieldSpec('user', 'counter', 'cs'),
                         FieldSpec('idle', 'counter', 'cs')])
MEM = TypeSchema('mem', [FieldSpec('used', 'gauge', 'kb')])
START = 1325808300
END = START + 7200


def test_ok_delta():
    points = delta_series([(0, [100, 100]), (600, [400, 500])], CPU)
    assert len(points) == 1
    assert points[0].values == (300, 400)
    assert points[0].quality == OK


def test_equal_values():
    point, = delta_series([(0, [7, 7]), (600, [7, 7])], CPU)
    assert point.values == (0, 0)
    assert point.quality == OK


def test_wrapped_delta():
    point, = delta_series([(0, [2 ** 64 - 100, 0]), (600, [50, 0])], CPU)
    assert point.values == (150, 0)
    assert point.quality == WRAPPED


def test_implausible_wrap_is_reset():
    point, = delta_series([(0, [10 ** 6, 5]), (600, [10, 60005])], CPU)
    assert point.quality == RESET_DROPPED
    assert point.values == (0, 0)


def test_reset_across_rotate():
    point, = delta_series([(0, [5000, 0]), (600, [40, 0])], CPU,
                          segments=[0, 1])
    assert point.quality == RESET_DROPPED


def test_increase_across_rotate_is_ok():
    point, = delta_series([(0, [5000, 0]), (600, [5040, 0])], CPU,
                          segments=[0, 1])
    assert point.quality == OK
    assert point.values == (40, 0)


@pytest.mark.parametrize('before,after,quality', [
    ([0, 0], [100, 100], GAP),
    ([2 ** 64 - 100, 0], [50, 0], GAP),
    ([5000, 0], [40, 0], RESET_DROPPED),
])
def test_quality_precedence(before, after, quality):
    point, = delta_series([(0, before), (2400, after)], CPU)
    assert point.quality == quality


def test_gap_keeps_deltas():
    point, = delta_series([(0, [0, 0]), (1801, [100, 200])], CPU)
    assert point.quality == GAP
    assert point.values == (100, 200)
    point, = delta_series([(0, [0, 0]), (1800, [100, 200])], CPU)
    assert point.quality == OK


def test_gauge_passes_through():
    points = delta_series([(0, [900]), (600, [300]), (1200, [700])], MEM)
    assert [point.values for point in points] == [(300,), (700,)]
    assert {point.quality for point in points} == {OK}


def test_field_rate_override():
    config = DeltaConfig(field_rates={'cpu.user': 1e12})
    point, = delta_series([(0, [10 ** 6, 0]), (600, [10, 0])], CPU)
    assert point.quality == RESET_DROPPED
    point, = delta_series([(0, [2 ** 64 - 10 ** 6, 0]), (600, [10, 0])],
                          CPU, config)
    assert point.quality == WRAPPED


def test_bad_arity_restarts_series():
    points = delta_series([(0, [0, 0]), (600, [1]), (1200, [5, 5]),
                           (1800, [10, 10])], CPU)
    assert [(point.t0, point.t1) for point in points] == [(1200, 1800)]


def _node_data(groups, hostname='n001', **extras):
    header = FileHeader(hostname, 16, 4, 1000, schemas=(CPU,), extras=extras)
    data = NodeData(hostname)
    data.add_file(ParsedFile(header, list(groups)), 'a.stats')
    return data


def _cpu_group(timestamp, value, jobs=('1',)):
    return RecordGroup(timestamp, jobs, [Sample('cpu', 0, (value, 0))])


def test_window_excludes_outside_groups():
    data = _node_data([_cpu_group(t, t) for t in (0, 600, 1200, 1800, 5000)])
    record = AccountingRecord('1', 'a', 'normal', 1, 16, 600, 1800, ['n001'])
    timeline = assemble_job(record, {'n001': data})
    points = timeline.nodes['n001'].series['cpu', 0]
    assert [(point.t0, point.t1) for point in points] == \
        [(600, 1200), (1200, 1800)]
    assert timeline.coverage == 1.0


def test_padding_tick_is_weighted():
    data = _node_data([_cpu_group(t, t) for t in (0, 900, 1500)])
    record = AccountingRecord('1', 'a', 'normal', 1, 16, 600, 1500, ['n001'])
    points = assemble_job(record, {'n001': data}).nodes['n001'].series[
        'cpu', 0]
    assert points[0].weight == pytest.approx(1 / 3)
    assert points[0].seconds == pytest.approx(300)
    assert points[1].weight == 1.0


def test_untagged_groups_ignored():
    data = _node_data([_cpu_group(0, 0), _cpu_group(600, 600, ('2',)),
                       _cpu_group(1200, 1200)])
    record = AccountingRecord('1', 'a', 'normal', 1, 16, 0, 1200, ['n001'])
    points = assemble_job(record, {'n001': data}).nodes['n001'].series[
        'cpu', 0]
    assert [(point.t0, point.t1) for point in points] == [(0, 1200)]


def test_missing_node():
    data = _node_data([_cpu_group(t, t) for t in (0, 600, 1200)])
    record = AccountingRecord('1', 'a', 'normal', 2, 16, 0, 1200,
                              ['n001', 'n002'])
    timeline = assemble_job(record, {'n001': data})
    assert timeline.missing_nodes == ('n002',)
    assert list(timeline.nodes) == ['n001']
    assert timeline.coverage == pytest.approx(0.5)


def test_no_data_gives_empty_timeline():
    record = AccountingRecord('1', 'a', 'normal', 1, 16, 0, 1200, ['n009'])
    timeline = assemble_job(record, {})
    assert timeline.is_empty
    assert timeline.job is record
    assert timeline.coverage == 0.0


@pytest.mark.parametrize('extras,interval', [
    ({}, 600),
    ({'interval': '1800'}, 1800),
    ({'interval': 'often'}, 600),
    ({'interval': '0'}, 600),
])
def test_node_interval(extras, interval):
    assert _node_data([_cpu_group(0, 0)], **extras).interval() == interval


def test_interval_default_from_config():
    data = _node_data([_cpu_group(t, t) for t in (0, 2400, 4800)])
    record = AccountingRecord('1', 'a', 'normal', 1, 16, 0, 4800, ['n001'])
    timeline = assemble_job(record, {'n001': data}, DeltaConfig(tick=2400))
    assert timeline.tick == 2400
    assert {point.quality for point in
            timeline.nodes['n001'].series['cpu', 0]} == {OK}


def test_header_interval_sets_tick(tmp_path):
    end = START + 4 * 3600
    job = SyntheticJob('7', (0,), 16, START, end, owner='alice')
    scenario = SyntheticScenario(nodes=1, jobs=[job], start=START - 300,
                                 end=end + 3600, interval=3600)
    synthesize(scenario, str(tmp_path))
    nodes = load_stats_dir(str(tmp_path))
    assert nodes['n001'].interval() == 3600
    record = AccountingRecord('7', 'alice', 'normal', 1, 16, START, end,
                              ['n001'])
    timeline = assemble_job(record, nodes)
    assert timeline.tick == 3600
    assert timeline.coverage >= 0.95
    assert {point.quality for point in
            timeline.nodes['n001'].series['cpu', 0]} == {OK}


def test_begin_joins_group_at_same_instant():
    header = FileHeader('n001', 16, 4, 1000, schemas=(CPU,))
    items = [_cpu_group(0, 0), _cpu_group(600, 600), Mark('end', 600, '1'),
             Mark('begin', 600, '2'), _cpu_group(1200, 1200, ('2',))]
    data = NodeData('n001')
    data.add_file(ParsedFile(header, items), 'a.stats')
    assert [group.timestamp for _, group in data.groups_for('2', 0, 1800)] \
        == [600, 1200]
    assert [group.timestamp for _, group in data.groups_for('1', 0, 1800)] \
        == [0, 600]


def test_back_to_back_jobs(tmp_path):
    first = SyntheticJob('1', (0,), 16, START, START + 3000, owner='alice')
    second = SyntheticJob('2', (0,), 16, START + 3000, START + 3200,
                          owner='bob')
    scenario = SyntheticScenario(nodes=1, jobs=[first, second],
                                 start=START - 300, end=START + 4200)
    synthesize(scenario, str(tmp_path))
    record = AccountingRecord('2', 'bob', 'normal', 1, 16, START + 3000,
                              START + 3200, ['n001'])
    timeline = assemble_job(record, load_stats_dir(str(tmp_path)))
    points = timeline.nodes['n001'].series['cpu', 0]
    assert [(point.t0, point.t1) for point in points] == \
        [(START + 3000, START + 3200)]
    assert timeline.coverage == pytest.approx(1.0)
    assert profile_job(timeline).idle_fraction == pytest.approx(0.0)


@pytest.fixture
def two_node_dir(tmp_path):
    job = SyntheticJob('42', (0, 1), 16, START, END, owner='alice',
                       mem_used_fraction=0.5, dram_bytes_per_sec=2e9)
    scenario = SyntheticScenario(nodes=2, jobs=[job], start=START - 300,
                                 end=END + 600)
    synthesize(scenario, str(tmp_path))
    return tmp_path


def test_two_node_coverage(two_node_dir):
    nodes = load_stats_dir(str(two_node_dir))
    assert sorted(nodes) == ['n001', 'n002']
    record = AccountingRecord('42', 'alice', 'normal', 2, 16, START, END,
                              ['n001', 'n002'])
    timeline = assemble_job(record, nodes)
    assert timeline.missing_nodes == ()
    assert timeline.coverage >= 0.95
    assert {name for name, _ in timeline.nodes['n001'].series} >= \
        {'cpu', 'mem', 'pmc'}


def test_unreadable_stats_file(two_node_dir):
    (two_node_dir / 'n001' / 'broken.stats').write_text('not a header\n')
    report = IngestReport()
    nodes = load_stats_dir(str(two_node_dir), report=report)
    assert len(report.unreadable) == 1
    assert 'n001' in nodes
    with pytest.raises(FormatError):
        load_stats_dir(str(two_node_dir), strict=True)


def test_ingest_into_store(two_node_dir, tmp_path_factory):
    root = str(tmp_path_factory.mktemp('store'))
    with JobStore(root) as store:
        report = ingest(str(two_node_dir),
                        str(two_node_dir / 'accounting.csv'), store)
        assert store.job_ids(TIMELINES) == ['42']
        assert store.get_timeline('42').coverage >= 0.95
    assert report.jobs == 1
    assert report.empty == 0
    assert report.files == 2


@pytest.mark.parametrize('nodes,seconds,queue,kept', [
    (1, 1800, 'normal', False),
    (1, 3600, 'normal', True),
    (2, 1800, 'normal', True),
    (4, 7200, 'debug', False),
    (1, 3599, 'serial', False),
])
def test_filter_jobs(nodes, seconds, queue, kept):
    record = AccountingRecord('1', 'a', queue, nodes, 1, 0, seconds,
                              ['n%03d' % i for i in range(nodes)])
    assert (filter_jobs([record]) == [record]) is kept


def test_filter_custom_queues():
    record = AccountingRecord('1', 'a', 'debug', 1, 1, 0, 3600, ['n001'])
    assert filter_jobs([record], production_queues={'debug'}) == [record]
    assert filter_jobs([record], min_node_hours=2.0,
                       production_queues={'debug'}) == []
