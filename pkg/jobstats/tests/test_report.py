import pytest

from jobstats.metrics import JobProfile, Undefined
from jobstats.report import FULL_WAYNESS, PARTIAL_WAYNESS, FlagRule, \
    WASTE_RULE, emit_scatter, flag_imbalance, flag_waste, flagged_table, \
    format_summary, render_scatter_svg, summarize_users, write_report


def _profile(job_id='1', owner='alice', wayness=16, idle=0.5, unused=0.5,
             bandwidth=1.5, cov=0.5, waste=None, nodes=1, cores=16):
    if waste is None:
        waste = Undefined if Undefined in (idle, unused) else idle * unused
    return JobProfile(job_id=job_id, owner=owner, queue='normal', nodes=nodes,
                      wayness=wayness, wall_hours=2.0, idle_fraction=idle,
                      unused_mem_fraction=unused, waste=waste,
                      mean_bandwidth_gbps=bandwidth, numa_cov=cov,
                      coverage=1.0, cores_per_node=cores, sockets_per_node=4)


def test_rule_parameters():
    assert WASTE_RULE['threshold'] == 0.9
    with pytest.raises(ValueError):
        FlagRule('waste', (('threshold', -0.1),))
    with pytest.raises(ValueError):
        FlagRule('waste', (('threshold', float('nan')),))


@pytest.mark.parametrize('waste,flagged', [
    (0.95, True),
    (0.912, True),
    (0.9, False),
    (0.5, False),
])
def test_flag_waste(waste, flagged):
    report = flag_waste([_profile(waste=waste)])
    assert (report.flagged == ['1']) is flagged
    assert report.pool_size == 1


def test_waste_boundary_and_unevaluable():
    report = flag_waste([_profile('1', waste=0.9),
                         _profile('2', idle=Undefined),
                         _profile('3', waste=0.99)])
    assert report.flagged == ['3']
    assert report.boundary == ['1']
    assert report.unevaluable == ['2']
    assert report.metrics['3']['waste'] == 0.99


def test_waste_custom_threshold():
    report = flag_waste([_profile(waste=0.6)], threshold=0.5)
    assert report.flagged == ['1']
    assert report.rule['threshold'] == 0.5


@pytest.mark.parametrize('wayness,bandwidth,cov,flagged', [
    (16, 2.0, 1.7, True),
    (8, 2.0, 1.7, False),
    (16, 0.5, 1.7, False),
    (16, 2.0, 0.6, False),
    (16, 1.0, 1.7, False),
    (16, 2.0, 1.0, False),
])
def test_flag_imbalance(wayness, bandwidth, cov, flagged):
    report = flag_imbalance([_profile(wayness=wayness, bandwidth=bandwidth,
                                      cov=cov)])
    assert (report.flagged == ['1']) is flagged


def test_imbalance_partial_wayness_allowed():
    profile = _profile(wayness=8, bandwidth=2.0, cov=1.7)
    report = flag_imbalance([profile], require_full_wayness=False)
    assert report.flagged == ['1']


def test_imbalance_boundary_and_unevaluable():
    report = flag_imbalance([_profile('1', bandwidth=1.0, cov=1.5),
                             _profile('2', bandwidth=Undefined),
                             _profile('3', wayness=4, bandwidth=Undefined),
                             _profile('4', cores=None, bandwidth=3.0,
                                      cov=1.5)])
    assert report.flagged == []
    assert report.boundary == ['1']
    assert report.unevaluable == ['2']
    assert report.pool_size == 4


def test_summarize_users():
    report = flag_waste([_profile('1', owner='a', waste=1.0),
                         _profile('2', owner='b', waste=1.0),
                         _profile('3', owner='a', waste=1.0)])
    summary = summarize_users(report)
    assert summary.counts == [('a', 2), ('b', 1)]
    assert summary.top_user == 'a'
    assert summary.top_share == pytest.approx(2 / 3)


def test_summarize_ties_by_owner():
    report = flag_waste([_profile('1', owner='zed', waste=1.0),
                         _profile('2', owner='amy', waste=1.0)])
    assert summarize_users(report).counts == [('amy', 1), ('zed', 1)]


def test_summarize_empty():
    summary = summarize_users(flag_waste([]))
    assert summary.counts == []
    assert summary.top_share is Undefined
    assert summary.top_user is None


def test_format_summary():
    report = flag_waste([_profile('2', owner='b', waste=0.95),
                         _profile('1', owner='a', waste=0.9)])
    assert format_summary(report).splitlines() == [
        'rule waste',
        'param.threshold 0.9',
        'pool_size 2',
        'flagged_count 1',
        'flagged 2',
        'unevaluable -',
        'boundary 1',
        'top_share 1.0',
        'user.b 1',
    ]
    assert 'top_share undefined' in format_summary(flag_waste([]))


def test_flagged_table():
    report = flag_imbalance([_profile('9', bandwidth=3.0, cov=1.7)])
    table = flagged_table(report)
    assert list(table.columns) == ['job_id', 'owner', 'nodes', 'wall_hours',
                                   'mean_bandwidth_gbps', 'numa_cov']
    assert table.iloc[0]['numa_cov'] == 1.7


def test_write_report(tmp_path):
    report = flag_waste([_profile('5', waste=0.95)])
    csv_path, kv_path = write_report(report, str(tmp_path / 'out'))
    with open(csv_path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == 'job_id,owner,nodes,wall_hours,idle_fraction,' \
                       'unused_mem_fraction,waste'
    assert lines[1].startswith('5,alice,1,2.0,')
    with open(kv_path) as fh:
        assert fh.read() == format_summary(report)


def test_scatter_pass_through():
    profiles = [_profile('2', idle=0.25, unused=0.5),
                _profile('1', wayness=4, idle=0.75, unused=0.75),
                _profile('3', unused=Undefined)]
    scatter = emit_scatter(profiles)
    assert scatter.to_csv().splitlines() == [
        'job_id,x,y,group',
        '1,0.75,0.25,%s' % PARTIAL_WAYNESS,
        '2,0.25,0.5,%s' % FULL_WAYNESS,
    ]
    assert scatter.undefined == ['3']
    assert scatter.undefined_csv() == 'job_id\n3\n'


def test_scatter_other_metrics():
    scatter = emit_scatter([_profile(bandwidth=2.5, cov=1.25)],
                           'mean_bandwidth_gbps', 'numa_cov')
    assert scatter.table.iloc[0]['x'] == 2.5
    assert scatter.table.iloc[0]['y'] == 1.25


def test_scatter_empty_pool():
    assert emit_scatter([]).to_csv() == 'job_id,x,y,group\n'


def test_scatter_unknown_metric():
    with pytest.raises(ValueError):
        emit_scatter([_profile()], 'flops', 'numa_cov')


def test_render_svg():
    scatter = emit_scatter([_profile('1'), _profile('2', wayness=2)])
    svg = render_scatter_svg(scatter)
    assert svg.startswith('<?xml')
    assert svg.count('<title>') == 2
    assert svg.count('fill="blue"') == 2
    assert svg.count('fill="red"') == 2
    assert 'idle_fraction' in svg


def test_render_empty_svg():
    svg = render_scatter_svg(emit_scatter([]))
    assert '<title>' not in svg
    assert '<svg' in svg
