import random

import pytest

from jobstats.record_format import FieldSpec, FileHeader, FormatError, \
    Mark, Metadata, RecordGroup, Sample, TypeSchema, append_group, \
    iter_records, parse_file, parse_schema, write_file, write_header

CPU = TypeSchema('cpu', [FieldSpec('user', 'counter', 'cs'),
                         FieldSpec('idle', 'counter', 'cs')])
MEM = TypeSchema('mem', [FieldSpec('used', 'gauge', 'kb')])
HEADER = FileHeader(hostname='n001', cores=16, sockets=4,
                    mem_total_kb=33554432, schemas=[CPU, MEM])


def test_write_header_schema_line():
    text = write_header(HEADER)
    assert '!cpu user:c:cs idle:c:cs\n' in text
    assert '!mem used:g:kb\n' in text
    assert text.startswith('$schema_version 1.0\n$hostname n001\n'
                           '$cores 16\n$sockets 4\n$mem_total_kb 33554432\n')


def test_write_header_deterministic():
    same = FileHeader(hostname='n001', cores=16, sockets=4,
                      mem_total_kb=33554432, schemas=[CPU, MEM])
    assert write_header(same) == write_header(HEADER)


def test_write_header_without_schemas():
    text = write_header(FileHeader('n001', 16, 4, 1024))
    assert '!' not in text
    assert parse_file(text).header == FileHeader('n001', 16, 4, 1024)


@pytest.mark.parametrize('type_name', ['CPU!', 'Cpu', '1cpu', ''])
def test_invalid_type_name(type_name):
    with pytest.raises(FormatError):
        TypeSchema(type_name, [FieldSpec('user', 'counter', 'cs')])


@pytest.mark.parametrize('kwargs', [dict(cores=2, sockets=4),
                                    dict(cores=0, sockets=0),
                                    dict(hostname='two words')])
def test_invalid_header(kwargs):
    fields = dict(hostname='n001', cores=16, sockets=4, mem_total_kb=1)
    fields.update(kwargs)
    with pytest.raises(FormatError):
        FileHeader(**fields)


def test_parse_schema():
    assert parse_schema('!cpu user:c:cs idle:c:cs') == CPU
    with pytest.raises(FormatError):
        parse_schema('!cpu user:x:cs')


def test_append_group():
    group = RecordGroup(1325808000, {'271828'},
                        [Sample('cpu', 0, [430, 93000])])
    assert append_group(group, HEADER) == \
        '1325808000 271828\ncpu 0 430 93000\n'


def test_append_group_no_jobs():
    group = RecordGroup(1325808000, (), [Sample('mem', 1, [5])])
    assert append_group(group, HEADER).splitlines()[0] == '1325808000 -'


def test_append_group_sorts_job_ids():
    group = RecordGroup(7, {'b2', 'a1'})
    assert append_group(group, HEADER) == '7 a1,b2\n'


@pytest.mark.parametrize('mark,text', [
    (Mark('begin', 100, '271828'), '100 -\n%begin 271828\n'),
    (Mark('end', 200, '271828'), '200 -\n%end 271828\n'),
    (Mark('rotate', 300), '300 -\n%rotate\n'),
    (Mark('begin', 400, '271828', 'duplicate'),
     '400 -\n%begin 271828 duplicate\n'),
])
def test_append_mark(mark, text):
    assert append_group(mark, HEADER) == text


@pytest.mark.parametrize('group', [
    RecordGroup(1, (), [Sample('cpu', 0, [1])]),
    RecordGroup(1, (), [Sample('disk', 0, [1])]),
    RecordGroup(1, (), [Sample('cpu', 0, [1, -1])]),
    RecordGroup(1, (), [Sample('cpu', 0, [1, 2 ** 64])]),
    RecordGroup(1, (), [Sample('mem', 0, [1]), Sample('mem', 0, [2])]),
    RecordGroup(1, {'-'}),
])
def test_append_group_invalid(group):
    with pytest.raises(FormatError):
        append_group(group, HEADER)


def test_metadata_before_records():
    with pytest.raises(FormatError):
        write_file(HEADER, [Metadata('pmc_events', 'flops')])


def test_round_trip():
    items = [RecordGroup(100, (), [Sample('cpu', 0, [1, 2]),
                                   Sample('mem', 0, [3])]),
             Mark('begin', 100, 'J1'),
             Metadata('pmc_events', 'flops,mem_access'),
             RecordGroup(200, {'J1', 'J2'}, [Sample('cpu', 0, [5, 6])]),
             Mark('end', 250, 'J1', 'unmatched'),
             RecordGroup(300, {'J2'}),
             Mark('rotate', 300)]
    header = FileHeader('n002', 8, 2, 100, [CPU, MEM],
                        extras={'interval': '600', 'arch': 'opteron'})
    parsed = parse_file(write_file(header, items))
    assert parsed.header == header
    assert parsed.items == items
    assert parsed.skipped == 0


def test_lenient_arity():
    text = write_header(HEADER) + '100 -\ncpu 0 430\nmem 0 7\n'
    parsed = parse_file(text)
    assert parsed.skipped == 1
    assert parsed.items == [RecordGroup(100, (), [Sample('mem', 0, [7])])]
    assert parsed.errors[0][0] == 9


def test_strict_arity():
    text = write_header(HEADER) + '100 -\ncpu 0 430\n'
    with pytest.raises(FormatError) as excinfo:
        parse_file(text, strict=True)
    assert excinfo.value.lineno == 9


def test_unknown_metadata_kept():
    text = write_header(HEADER).replace('$mem_total_kb 33554432\n',
                                        '$mem_total_kb 33554432\n'
                                        '$rack r17\n')
    assert parse_file(text).header.extras == {'rack': 'r17'}


@pytest.mark.parametrize('strict', [False, True])
def test_missing_header(strict):
    with pytest.raises(FormatError):
        parse_file('100 -\ncpu 0 1 2\n', strict=strict)


def test_non_increasing_timestamp_skipped():
    text = write_header(HEADER) + '200 -\n100 -\nmem 0 1\n300 -\n'
    parsed = parse_file(text)
    assert [item.timestamp for item in parsed.items] == [200, 300]
    assert parsed.skipped == 1


def test_marks_exempt_from_ordering():
    text = write_header(HEADER) + '200 -\n150 -\n%end J\n300 -\n'
    parsed = parse_file(text, strict=True)
    assert parsed.items == [RecordGroup(200), Mark('end', 150, 'J'),
                            RecordGroup(300)]


def test_truncated_last_line():
    text = write_file(HEADER, [RecordGroup(100, (), [
        Sample('cpu', 0, [430, 93000]), Sample('cpu', 1, [1, 2])])])
    parsed = parse_file(text[:-4])
    assert parsed.skipped == 1
    assert parsed.items[0].samples == (Sample('cpu', 0, (430, 93000)),)


def test_iter_records_streams():
    def lines():
        yield from write_header(HEADER).splitlines(True)
        for t in range(1, 4):
            yield '%d -\n' % t
            yield 'mem 0 %d\n' % t
    reader = iter_records(lines())
    assert reader.header == HEADER
    assert [group.timestamp for group in reader] == [1, 2, 3]


def _random_file(rng):
    schemas = []
    for index in range(rng.randint(1, 4)):
        fields = [FieldSpec('f%d' % k, rng.choice(['counter', 'gauge']),
                            rng.choice(['cs', 'kb', 'b', 'p', 'ev', 'none']))
                  for k in range(rng.randint(1, 5))]
        schemas.append(TypeSchema('t%d' % index, fields))
    sockets = rng.randint(1, 4)
    header = FileHeader('host%d' % rng.randint(0, 999),
                        sockets * rng.randint(1, 8), sockets,
                        rng.randint(1, 2 ** 40), schemas,
                        extras={'interval': str(rng.randint(1, 3600))})
    items = []
    timestamp = rng.randint(0, 2 ** 32)
    for _ in range(rng.randint(0, 8)):
        roll = rng.random()
        if roll < 0.2:
            kind = rng.choice(['begin', 'end', 'rotate'])
            job_id = None if kind == 'rotate' else str(rng.randint(1, 99))
            items.append(Mark(kind, rng.randint(0, 2 ** 32), job_id))
        elif roll < 0.3 and items:
            items.append(Metadata('pmc_events', 'flops,mem_access'))
        else:
            timestamp += rng.randint(1, 1200)
            samples = []
            for schema in rng.sample(schemas, rng.randint(0, len(schemas))):
                for device in rng.sample(range(16), rng.randint(1, 3)):
                    samples.append(Sample(schema.type_name, device, [
                        rng.randint(0, 2 ** 64 - 1)
                        for _ in schema.fields]))
            jobs = {str(rng.randint(1, 99)) for _ in range(rng.randint(0, 2))}
            items.append(RecordGroup(timestamp, jobs, samples))
    return header, items


def test_random_round_trip():
    rng = random.Random(1325808000)
    for _ in range(1000):
        header, items = _random_file(rng)
        parsed = parse_file(write_file(header, items))
        assert parsed.header == header
        assert parsed.items == items
        assert parsed.skipped == 0
