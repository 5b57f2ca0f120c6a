import asyncio
import os

import httpx
import numpy as np
import pytest

from config import settings
from core.models import DriveCycle
from services.cycles import (
    EPA_DURATIONS,
    CycleFormatError,
    check_epa_cycle,
    cycle_path,
    fetch_cycle,
    fetch_cycles,
    get_cycle,
    load_cycle_csv,
    parse_epa_schedule,
    preceding_acceleration,
    resample,
    write_cycle_csv,
)
from tests.doubles import epa_schedule_text, epa_transport

EPA_SAMPLE = """Highway Fuel Economy Driving Schedule
Test Time, secs\tSpeed, mph
0\t0
1\t2.2
2\t4.4
3\t6.6
"""


def _write(tmp_path, text, name='cycle.csv'):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return str(path)


def test_load_valid_csv(tmp_path):
    cycle = load_cycle_csv(_write(tmp_path, "t_s,v_mps\n0,0\n1,1.5\n2,3.0\n"))
    assert cycle.name == 'cycle'
    assert cycle.t.tolist() == [0.0, 1.0, 2.0]
    assert cycle.v.tolist() == [0.0, 1.5, 3.0]


def test_malformed_field_names_the_line(tmp_path):
    path = _write(tmp_path, "t_s,v_mps\n0,0\n1,fast\n2,3.0\n")
    with pytest.raises(CycleFormatError, match=r"line 3: field 'v_mps'"):
        load_cycle_csv(path)


def test_missing_column_is_reported(tmp_path):
    with pytest.raises(CycleFormatError, match='v_mps'):
        load_cycle_csv(_write(tmp_path, "t_s,speed\n0,0\n1,1\n"))


def test_time_must_increase(tmp_path):
    with pytest.raises(CycleFormatError, match=r"line 4: field 't_s'"):
        load_cycle_csv(_write(tmp_path, "t_s,v_mps\n0,0\n1,1\n1,2\n"))


def test_negative_speed_is_rejected(tmp_path):
    with pytest.raises(CycleFormatError, match=r"line 2: field 'v_mps'"):
        load_cycle_csv(_write(tmp_path, "t_s,v_mps\n0,-1\n1,1\n"))


def test_missing_file(tmp_path):
    with pytest.raises(CycleFormatError, match='not found'):
        load_cycle_csv(str(tmp_path / 'nope.csv'))


def test_resample_keeps_the_endpoints():
    cycle = DriveCycle('ramp', np.array([0.0, 1.0, 2.55]), np.array([0.0, 2.0, 5.1]))
    t, v = resample(cycle, 0.1)
    assert t[0] == 0.0 and v[0] == 0.0
    assert t[-1] == pytest.approx(2.5)
    assert np.allclose(np.diff(t), 0.1)
    assert v[10] == pytest.approx(2.0)


def test_lead_acceleration_of_a_ramp():
    v = 0.5 * np.arange(20) * 0.1
    assert np.allclose(preceding_acceleration(v, 0.1), 0.5)


def test_parse_epa_schedule_converts_units():
    cycle = parse_epa_schedule(EPA_SAMPLE, 'hwfet')
    assert cycle.t.tolist() == [0.0, 1.0, 2.0, 3.0]
    assert cycle.v[1] == pytest.approx(2.2 * 0.44704)


def test_parse_rejects_pages_without_samples():
    with pytest.raises(CycleFormatError):
        parse_epa_schedule("<html>moved</html>", 'hwfet')


def test_round_trip_through_csv(tmp_path):
    cycle = parse_epa_schedule(EPA_SAMPLE, 'hwfet')
    path = str(tmp_path / 'hwfet.csv')
    write_cycle_csv(cycle, path)
    loaded = load_cycle_csv(path)
    assert np.allclose(loaded.v, cycle.v)


def test_fetch_writes_the_resource(tmp_path):
    transport = httpx.MockTransport(lambda request: httpx.Response(200, text=EPA_SAMPLE))
    cycle = asyncio.run(fetch_cycle('hwfet', str(tmp_path), transport=transport))
    assert cycle.name == 'hwfet'
    assert (tmp_path / 'hwfet.csv').exists()
    assert get_cycle('hwfet', str(tmp_path), allow_download=False).v.tolist() == pytest.approx(cycle.v.tolist())


def test_fetch_raises_on_http_errors(tmp_path):
    transport = httpx.MockTransport(lambda request: httpx.Response(404))
    with pytest.raises(httpx.HTTPStatusError):
        asyncio.run(fetch_cycle('hwfet', str(tmp_path), transport=transport))


def test_unknown_cycle_name(tmp_path):
    assert 'nedc' not in settings.CYCLE_URLS
    with pytest.raises(CycleFormatError, match='unknown drive cycle'):
        asyncio.run(fetch_cycle('nedc', str(tmp_path)))


def test_offline_lookup_of_a_missing_cycle(tmp_path):
    with pytest.raises(CycleFormatError, match='not found'):
        get_cycle('us06', str(tmp_path), allow_download=False)


def test_fetch_cycles_vendors_every_epa_schedule(tmp_path):
    cycles = asyncio.run(fetch_cycles(cycles_dir=str(tmp_path), transport=epa_transport()))
    assert [c.name for c in cycles] == list(EPA_DURATIONS)
    for name, duration in EPA_DURATIONS.items():
        loaded = load_cycle_csv(str(tmp_path / f'{name}.csv'))
        assert len(loaded.t) == int(duration) + 1
        assert loaded.duration == pytest.approx(duration)


def test_fetch_cycles_writes_nothing_when_one_schedule_is_truncated(tmp_path):
    transport = epa_transport({'us06': EPA_SAMPLE})
    with pytest.raises(CycleFormatError, match='us06: duration 3 s'):
        asyncio.run(fetch_cycles(cycles_dir=str(tmp_path), transport=transport))
    assert list(tmp_path.iterdir()) == []


def test_check_rejects_schedules_not_starting_at_rest():
    cycle = parse_epa_schedule(epa_schedule_text(765), 'hwfet')
    check_epa_cycle(cycle)
    moving = DriveCycle('hwfet', cycle.t, cycle.v + 1.0)
    with pytest.raises(CycleFormatError, match='at rest'):
        check_epa_cycle(moving)


def test_check_rejects_non_epa_names():
    cycle = parse_epa_schedule(epa_schedule_text(765), 'nedc')
    with pytest.raises(CycleFormatError, match='not an EPA schedule'):
        check_epa_cycle(cycle)


@pytest.mark.parametrize('name', list(EPA_DURATIONS))
def test_shipped_cycle_resources(name):
    path = cycle_path(name)
    if not os.path.isfile(path):
        pytest.skip(f"{path} not vendored yet, run `python run.py fetch-cycles`")
    cycle = load_cycle_csv(path, name)
    check_epa_cycle(cycle)
    assert len(cycle.t) == round(cycle.duration) + 1
