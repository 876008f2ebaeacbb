import os
import platform
import time
from collections import Counter

import pytest

from jobstats.collectors import FIXTURE, HOST, SYNTHETIC, TYPE_ORDER, \
    PlatformProbe, Source, SourceDescriptor, SourceError, \
    VirtualRegisterFile, build_sources, collect_once, event_set, \
    list_sources, parse_block_lines, parse_cpu_lines, parse_device_table, \
    parse_ipc_tables, parse_irq_lines, parse_load_lines, parse_mem_lines, \
    parse_net_lines, parse_vm_lines, pmc_schema, schema_for, socket_of
from jobstats.locations import FIXTURES_PATH
from jobstats.record_format import Sample
from jobstats.scenario import SyntheticJob, SyntheticNode, SyntheticScenario


def _fixture(name):
    with open(os.path.join(FIXTURES_PATH, name)) as fh:
        return fh.read()


def test_parse_cpu_fixture_line():
    samples = parse_cpu_lines('cpu0 430 0 120 93000 50 0 3 0\n')
    assert samples == [Sample('cpu', 0, [430, 0, 120, 93000, 50, 0, 3])]


def test_parse_cpu_aggregate_only():
    assert parse_cpu_lines('cpu  7096 0 1926 1489704 801 0 49 0 0 0\n') == []


def test_parse_cpu_16_cores():
    samples = parse_cpu_lines(_fixture('cpu'))
    assert [sample.device_id for sample in samples] == list(range(16))
    assert samples[0].values == (430, 0, 120, 93000, 50, 0, 3)


@pytest.mark.parametrize('text', ['cpu0 1 2 3\n', 'cpux 1 2 3 4 5 6 7\n',
                                  'cpu1 1 2 3 4 5 6 seven\n'])
def test_parse_cpu_bad_layout(text):
    with pytest.raises(SourceError) as excinfo:
        parse_cpu_lines(text)
    assert text.strip() in str(excinfo.value)


def test_parse_mem_per_node():
    samples = parse_mem_lines(_fixture('mem'))
    assert [sample.device_id for sample in samples] == [0, 1, 2, 3]
    assert samples[0].values == (8388608, 6291456, 2097152, 524288)
    assert samples[3].values == (8388608, 6288384, 2100224, 525824)


def test_parse_mem_plain_meminfo():
    text = 'MemTotal: 1000 kB\nMemFree: 400 kB\nCached: 100 kB\n'
    assert parse_mem_lines(text) == [Sample('mem', 0, [1000, 400, 600, 100])]


def test_parse_mem_incomplete():
    with pytest.raises(SourceError):
        parse_mem_lines('Node 0 MemTotal: 1000 kB\n')


def test_parse_vm():
    assert parse_vm_lines(_fixture('vm')) == [
        Sample('vm', 0, [0, 12, 1048570, 2097150, 88123450, 2100])]


def test_parse_load():
    assert parse_load_lines(_fixture('load')) == [
        Sample('load', 0, [52, 61, 70, 2, 311])]
    with pytest.raises(SourceError):
        parse_load_lines('0.5 0.5\n')


def test_parse_net_skips_loopback():
    samples = parse_net_lines(_fixture('net'))
    assert samples == [
        Sample('net', 0, [918273645, 1234567, 192837465, 987654]),
        Sample('net', 1, [1048576, 8192, 2097152, 16384])]


def test_parse_block_skips_loop():
    samples = parse_block_lines(_fixture('block'))
    assert samples == [Sample('block', 0, [20311, 1893422, 51200, 2811456]),
                       Sample('block', 1, [1022, 40960, 2048, 65536])]


def test_parse_irq():
    expected = [Sample('irq', 0, [4821994, 9120055, 1290577])]
    assert parse_irq_lines(_fixture('irq')) == expected
    assert parse_irq_lines(_fixture('cpu')) == expected
    with pytest.raises(SourceError):
        parse_irq_lines('ctxt 5\n')


def test_parse_ipc_tables():
    shm = 'key shmid perms\n1 2 3\n4 5 6\n'
    sem = 'key semid perms\n'
    msg = 'key msqid perms\n7 8 9\n'
    assert parse_ipc_tables(shm, sem, msg) == [Sample('ipc', 0, [2, 0, 1])]


def test_parse_device_table():
    assert parse_device_table(_fixture('ib'), 'ib') == [
        Sample('ib', 0, [73400320, 52428800, 51200, 40960])]
    with pytest.raises(SourceError):
        parse_device_table('0 1 2\n', 'ib')


@pytest.mark.parametrize('arch,events', [
    ('opteron', ('flops', 'mem_access', 'dcache_fill', 'numa_traffic')),
    ('nehalem_westmere', ('flops', 'numa_traffic', 'l1d_hits')),
])
def test_event_sets(arch, events):
    assert event_set(arch).events == events
    assert tuple(pmc_schema(arch).field_names) == events


def test_unknown_arch():
    with pytest.raises(ValueError):
        event_set('itanium')


@pytest.mark.parametrize('core,socket', [(0, 0), (3, 0), (4, 1), (15, 3)])
def test_socket_of(core, socket):
    assert socket_of(core, 16, 4) == socket


def test_canonical_schemas():
    assert schema_for('cpu').field_names == [
        'user', 'nice', 'system', 'idle', 'iowait', 'irq', 'softirq']
    assert schema_for('mem').field_names == ['total', 'free', 'used',
                                             'cached']
    assert all(not spec.is_counter for spec in schema_for('mem').fields)
    with pytest.raises(ValueError):
        schema_for('gpu')


def test_list_sources_non_linux():
    probe = PlatformProbe(system='Darwin', fixture_dir=None)
    descriptors = list_sources(probe, topology=(16, 4, 33554432))
    assert [d.type_name for d in descriptors] == list(TYPE_ORDER)
    assert {d.availability for d in descriptors} == {SYNTHETIC}
    counts = {d.type_name: d.device_count for d in descriptors}
    assert counts['cpu'] == 16 and counts['pmc'] == 16
    assert counts['mem'] == 4


def test_list_sources_fixtures():
    probe = PlatformProbe(system='Darwin', fixture_dir=FIXTURES_PATH)
    descriptors = list_sources(probe, topology=(16, 4, 33554432))
    fixtures = {d.type_name for d in descriptors
                if d.availability == FIXTURE}
    assert fixtures == {'cpu', 'mem', 'vm', 'load', 'net', 'block', 'irq',
                        'ib'}
    assert {d.type_name for d in descriptors
            if d.availability == SYNTHETIC} == set(TYPE_ORDER)


@pytest.mark.skipif(platform.system() != 'Linux'
                    or not os.path.exists('/proc/stat'),
                    reason='needs a Linux procfs')
def test_list_sources_linux_host():
    probe = PlatformProbe(fixture_dir=None)
    host = {d.type_name for d in list_sources(probe)
            if d.availability == HOST}
    assert {'cpu', 'load'} <= host


def test_build_sources_prefers_fixtures():
    scenario = SyntheticScenario(start=0, end=3600)
    probe = PlatformProbe(system='Darwin', fixture_dir=FIXTURES_PATH)
    sources = build_sources(probe, SyntheticNode(scenario, 0))
    availability = {source.type_name: source.descriptor.availability
                    for source in sources}
    assert [source.type_name for source in sources] == list(TYPE_ORDER)
    assert availability['cpu'] == FIXTURE
    assert availability['pmc'] == SYNTHETIC
    assert availability['fs'] == SYNTHETIC


def test_build_sources_without_synthetic():
    probe = PlatformProbe(system='Darwin', fixture_dir=None)
    assert build_sources(probe) == []


class _Failing(Source):
    descriptor = SourceDescriptor('ipc', schema_for('ipc'), 1, SYNTHETIC)

    def read(self, timestamp):
        raise OSError('gone')


class _Slow(Source):
    descriptor = SourceDescriptor('ipc', schema_for('ipc'), 1, SYNTHETIC)

    def read(self, timestamp):
        time.sleep(1.0)
        return [Sample('ipc', 0, [0, 0, 0])]


class _Malformed(Source):
    descriptor = SourceDescriptor('ipc', schema_for('ipc'), 1, SYNTHETIC)

    def read(self, timestamp):
        return [Sample('ipc', 0, [0])]


SCENARIO = SyntheticScenario(nodes=1, jobs=[SyntheticJob(
    '271828', [0], 16, 1000, 5000)], start=0, end=6000)


def test_collect_once_tags_active_job():
    node = SyntheticNode(SCENARIO, 0)
    sources = [node.source('cpu'), node.source('mem')]
    group = collect_once(sources, 2000, node.active_jobs(2000))
    assert group.timestamp == 2000
    assert group.job_ids == {'271828'}
    assert len(group.samples) == 16 + 4


def test_collect_once_outside_jobs():
    node = SyntheticNode(SCENARIO, 0)
    group = collect_once([node.source('load')], 5400,
                         node.active_jobs(5400))
    assert group.job_ids == frozenset()


@pytest.mark.parametrize('bad', [_Failing, _Malformed])
def test_collect_once_isolates_failures(bad):
    node = SyntheticNode(SCENARIO, 0)
    errors = Counter()
    group = collect_once([node.source('load'), bad()], 2000,
                         error_counts=errors)
    assert {sample.type_name for sample in group.samples} == {'load'}
    assert errors == Counter({'ipc': 1})


def test_collect_once_all_failing():
    group = collect_once([_Failing()], 10)
    assert group.samples == ()


def test_collect_once_timeout():
    errors = Counter()
    began = time.monotonic()
    group = collect_once([_Slow()], 10, error_counts=errors, timeout=0.1)
    assert time.monotonic() - began < 0.9
    assert group.samples == ()
    assert errors['ipc'] == 1


def test_collect_once_needs_sources():
    with pytest.raises(ValueError):
        collect_once([], 10)


def test_virtual_register_file():
    registers = VirtualRegisterFile('nehalem_westmere')
    assert not registers.is_programmed
    programmed = registers.program(100, '271828')
    assert programmed.events == ('flops', 'numa_traffic', 'l1d_hits')
    assert registers.program_log == [(100, '271828')]
