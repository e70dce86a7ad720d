import json

import pytest

from conftest import short_demos
from forkrl.demos import (SCHEMA_VERSION, generate_demonstrations, read_demonstrations, read_header,
                          record_episode, write_demonstrations)
from forkrl.errors import CorruptLineError, DemoSchemaError, DemoYieldError
from forkrl.heuristics import HeuristicExperts
from forkrl.sim import state_to_dict


def test_record_episode_logs_every_step(short_settings):
    demo = record_episode(short_settings, 5, HeuristicExperts(short_settings))
    assert not demo.success
    assert len(demo.steps) == short_settings.env.t_max
    assert [s.t for s in demo.steps] == list(range(short_settings.env.t_max))
    assert {s.expert for s in demo.steps} == {'navigation'}
    assert demo.for_expert('navigation') == demo.steps


def test_dataset_reads_back(tmp_path, settings):
    demos = short_demos(settings)
    path = write_demonstrations(tmp_path / 'd.jsonl', demos, {'config_hash': settings.digest})
    head = read_header(path)
    assert head['schema'] == SCHEMA_VERSION and head['config_hash'] == settings.digest
    back = read_demonstrations(path, expected_hash=settings.digest)
    assert len(back) == len(demos)
    for a, b in zip(demos, back):
        assert len(a.steps) == len(b.steps)
        assert [s.expert for s in a.steps] == [s.expert for s in b.steps]
        assert state_to_dict(a.steps[-1].state) == state_to_dict(b.steps[-1].state)
        assert b.steps[0].action.as_list() == pytest.approx(a.steps[0].action.as_list())
    experts = {s.expert for s in back[0].steps}
    assert experts == {'navigation', 'picking', 'placing'}


def test_config_hash_mismatch_only_warns(demo_file, caplog):
    demos = read_demonstrations(demo_file, expected_hash='not-this-config')
    assert len(demos) == 2
    assert 'recorded under config' in caplog.text


def _lines(path):
    return path.read_text().splitlines()


def test_truncated_line_is_reported_with_its_number(demo_file):
    lines = _lines(demo_file)
    lines[3] = lines[3][:20]
    demo_file.write_text('\n'.join(lines) + '\n')
    with pytest.raises(CorruptLineError) as err:
        read_demonstrations(demo_file)
    assert err.value.line_no == 4


def test_missing_steps_are_detected(demo_file):
    lines = _lines(demo_file)
    del lines[2]
    demo_file.write_text('\n'.join(lines) + '\n')
    with pytest.raises(CorruptLineError):
        read_demonstrations(demo_file)


def test_unknown_record_type(demo_file):
    with demo_file.open('a') as f:
        f.write(json.dumps({'type': 'mystery'}) + '\n')
    with pytest.raises(CorruptLineError):
        read_demonstrations(demo_file)


def test_schema_and_header_checks(tmp_path):
    bad = tmp_path / 'bad.jsonl'
    bad.write_text(json.dumps({'type': 'header', 'schema': SCHEMA_VERSION + 1}) + '\n')
    with pytest.raises(DemoSchemaError):
        read_header(bad)
    bad.write_text(json.dumps({'type': 'step'}) + '\n')
    with pytest.raises(CorruptLineError):
        read_header(bad)


def test_low_yield_stops_generation(tmp_path, short_settings):
    # 40-step episodes never finish the task
    with pytest.raises(DemoYieldError):
        generate_demonstrations(short_settings, 3, 0, tmp_path / 'demos.jsonl', progress=False)
