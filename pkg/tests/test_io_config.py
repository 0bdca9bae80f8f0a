import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from dense_ensemble.config import EnsembleConfig, SurrogateFile, config_hash, dump_yaml, load_config
from dense_ensemble.io import TimeSeries, file_inventory, output_root, read_csv, read_snapshot, write_csv, write_snapshot
from dense_ensemble.pstd import ConfigError

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(rows=st.lists(st.tuples(finite, finite), min_size=1, max_size=30))
def test_csv_round_trip_is_exact(rows, tmp_path_factory):
    path = tmp_path_factory.mktemp("csv") / "s.csv"
    a = np.array(rows)
    ts = TimeSeries(np.arange(len(a)) * 1e-16, {"E_y": a[:, 0], "rho_yy": a[:, 1]}, {"kind": "full"})
    write_csv(ts, path)
    back = read_csv(path)
    assert back.equals(ts)
    assert back.meta["kind"] == "full"


def test_csv_header_and_precision(tmp_path):
    ts = TimeSeries(np.array([0.0, 1e-16]), {"x": np.array([0.1, 1 / 3])})
    write_csv(ts, tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "time_s,x"
    assert lines[2].split(",")[1] == "0.33333333333333331"


def test_csv_malformed_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time_s,x\n0,1\n1e-16,oops\n")
    with pytest.raises(ConfigError) as err:
        read_csv(p)
    assert err.value.field.endswith(":3")


def test_snapshot_layout(tmp_path):
    a = np.arange(12, dtype=float).reshape(3, 4)
    write_snapshot(a, tmp_path / "s.f64", name="J_y", spacing=1e-9, time=2e-15, units="A/m^2")
    raw = np.fromfile(tmp_path / "s.f64", dtype="<f8")
    # x index varies fastest on disk
    assert np.array_equal(raw[:3], a[:, 0])
    back, meta = read_snapshot(tmp_path / "s.f64")
    assert np.array_equal(back, a) and meta["time_s"] == 2e-15 and meta["dims"] == [3, 4]


def test_inventory_and_output_root(tmp_path, monkeypatch):
    f = tmp_path / "f.txt"
    f.write_text("abc")
    inv = file_inventory([f])
    assert inv[0]["size"] == 3
    assert inv[0]["sha256"] == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    monkeypatch.setenv("DENSE_ENSEMBLE_OUT", str(tmp_path / "out"))
    assert output_root() == tmp_path / "out"


# ------------------------------------------------------------------ config
def test_defaults_validate():
    cfg = EnsembleConfig().validate()
    assert cfg.grid.dims == [45, 45, 45]


def test_config_round_trip_idempotent(tmp_path):
    cfg = load_config("scripts/configs/desk_sphere.yaml")
    text = dump_yaml(cfg.to_dict())
    p = tmp_path / "c.yaml"
    p.write_text(text)
    again = load_config(p)
    assert again == cfg
    assert dump_yaml(again.to_dict()) == text
    assert again.hash() == cfg.hash() == config_hash(yaml.safe_load(text))


def test_yaml_numbers_written_as_strings_are_accepted(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("grid:\n  spacing: 1e-9\nrun:\n  duration: 5e-15\n")
    cfg = load_config(p)
    assert cfg.grid.spacing == 1e-9 and cfg.run.duration == 5e-15


@pytest.mark.parametrize(
    "doc, field",
    [
        ({"grid": {"spacng": 1e-9}}, "grid.spacng"),
        ({"drive": {"frequency_hz": -1.0}}, "drive.frequency_hz"),
        ({"geometry": {"shape": "cube"}}, "geometry.shape"),
        ({"probes": [{"name": "a", "stride": 0}]}, "probes[0].stride"),
        ({"pml": {"thickness": 4}}, "pml.thickness"),
        ({"run": {"duration": "soon"}}, "run.duration"),
        ({"emitter": {"gamma0": 0}}, "emitter.gamma0"),
        ({"drive": {"polarization": [0, 0, 1]}}, "drive.polarization"),
    ],
)
def test_field_level_errors(doc, field):
    with pytest.raises(ConfigError) as err:
        EnsembleConfig.from_dict(doc)
    assert err.value.field == field


def test_missing_and_unparseable_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("grid: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_surrogate_file():
    f = SurrogateFile.from_dict({"surrogate": {"number_density": "2.5e27"}})
    assert f.surrogate.number_density == 2.5e27
    with pytest.raises(ConfigError) as err:
        SurrogateFile.from_dict({"surrogate": {"dt": -1}})
    assert err.value.field == "surrogate.dt"


def test_hash_is_stable_across_key_order():
    a = {"x": 1.0, "y": {"b": 2, "a": [1, 2]}}
    b = json.loads(json.dumps({"y": {"a": [1, 2], "b": 2}, "x": 1.0}))
    assert config_hash(a) == config_hash(b)
