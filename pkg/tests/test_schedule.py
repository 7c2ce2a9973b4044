import pytest

from mikado.errors import IngestionError, ValidationError
from mikado.geometry import default_detector
from mikado.schedule import (PassConfig, Schedule, default_schedule, dump_schedule, load_default_schedule,
                             load_schedule, parse_schedule, write_schedule)


def test_shipped_matches_generator():
    assert load_default_schedule() == default_schedule(default_detector())


def test_shape(schedule):
    assert len(schedule) == 12
    assert [p.selection_min_hits for p in schedule] == [7] * 3 + [5] * 3 + [4] * 3 + [3] * 3
    assert sum(p.use_origin_seed for p in schedule) == 4
    # tightness grows looser pass after pass within each seed configuration
    for j in range(3):
        w = [schedule[3 * i + j].window_l3 for i in range(4)]
        assert all(a[0] <= b[0] and a[1] <= b[1] for a, b in zip(w, w[1:]))


def test_round_trip(tmp_path, schedule):
    path = tmp_path / "s.toml"
    write_schedule(schedule, path)
    assert load_schedule(path) == schedule
    assert parse_schedule(dump_schedule(schedule)) == schedule


def test_validation():
    base = ((8, 2), (8, 4), (8, 6))
    with pytest.raises(ValidationError):
        PassConfig(base_layers=base[:2])
    with pytest.raises(ValidationError):
        PassConfig(base_layers=base, use_origin_seed=True)
    with pytest.raises(ValidationError):
        PassConfig(base_layers=((8, 2), (8, 2), (8, 4)))
    with pytest.raises(ValidationError):
        PassConfig(base_layers=base, window_l2=(0.0, 1.0))
    with pytest.raises(ValidationError):
        PassConfig(base_layers=base, min_hits=2)
    with pytest.raises(ValidationError):
        PassConfig(base_layers=base, z_residual_cut=0.0)
    with pytest.raises(ValidationError):
        Schedule(())
    assert PassConfig(base_layers=["8:2", "8:4", "8:6"]).base_layers == base


def test_parse_errors(tmp_path):
    with pytest.raises(IngestionError):
        parse_schedule("passes = [")
    with pytest.raises(IngestionError):
        parse_schedule("x = 1")
    with pytest.raises(ValidationError):
        parse_schedule('[[passes]]\nbase_layers = ["8:2", "8:4", "8:6"]\nbogus = 1\n')
    with pytest.raises(ValidationError):
        parse_schedule("[[passes]]\nmin_hits = 3\n")
    with pytest.raises(IngestionError):
        load_schedule(tmp_path / "missing.toml")


def test_unknown_base_layer_rejected():
    sched = Schedule((PassConfig(base_layers=((8, 2), (8, 4), (99, 1))),))
    with pytest.raises(ValidationError):
        sched.check_against(default_detector())


def test_cell_sizes_cover_windows(schedule):
    for cfg in schedule:
        cells = cfg.cell_sizes(default_detector().keys)
        for key, (dphi, dt) in cells.items():
            w = cfg.window_for(key)
            assert dphi >= max(w[0], cfg.pickup_window[0]) and dt >= max(w[1], cfg.pickup_window[1])
        assert cells[cfg.base_layers[-1]][0] >= cfg.window_l3[0]
