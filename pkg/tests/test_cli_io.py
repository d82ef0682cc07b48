import csv
import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rdtflow.cli_io import (CSV_COLUMNS, RunConfig, convergence_study, fit_order, main,
                            nested_sizes, parse_grid, read_snapshot, restrict,
                            write_snapshot)
from rdtflow.errors import ConfigError


def run_cli(*argv):
    return main([str(a) for a in argv])


def write_config(path, **data):
    path.write_text(json.dumps(data))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ----------------------------------------------------------------- config

def test_parse_grid():
    assert parse_grid("64") == (64,)
    assert parse_grid("32", 3) == (32, 32, 32)
    assert parse_grid("16x16x32") == (16, 16, 32)
    with pytest.raises(ConfigError):
        parse_grid("16xx")


@pytest.mark.parametrize("bad", [dict(dt=-1.0), dict(grid=(3,)), dict(freeze_mode="frozen"),
                                 dict(zeta_variant="typo"), dict(stride=0), dict(refine="both")])
def test_run_config_validation(bad):
    with pytest.raises(ConfigError):
        RunConfig(scenario="heat_dirichlet", **bad).validate()


def test_bad_scenario_parameter_is_config_error():
    cfg = RunConfig(scenario="s3_band", params=dict(mu="cubic")).validate()
    with pytest.raises(ConfigError):
        cfg.build_scenario()


# --------------------------------------------------------- serialization

@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 3)),
              elements=st.floats(allow_nan=True, allow_infinity=True, width=64)))
def test_snapshot_round_trip_bit_identical(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("snap") / "s.json"
    header = {"schema_version": 1, "time": 0.1}
    write_snapshot(path, data, header)
    head, back = read_snapshot(path)
    assert head == header
    assert back.shape == data.shape
    assert np.array_equal(np.isnan(back), np.isnan(data))
    keep = ~np.isnan(data)
    assert np.array_equal(back[keep].view(np.uint64), data[keep].view(np.uint64))


def test_snapshot_keeps_negative_zero(tmp_path):
    path = tmp_path / "s.json"
    write_snapshot(path, np.array([-0.0, 0.0, 3.0]), {"step": 2})
    head, back = read_snapshot(path)
    assert list(np.signbit(back)) == [True, False, False]
    assert head == {"step": 2}


def test_snapshot_uses_seventeen_digits(tmp_path):
    path = tmp_path / "s.json"
    write_snapshot(path, np.array([0.1, 1.0 / 3.0]), {})
    text = path.read_text()
    assert "0.10000000000000001" in text and "0.33333333333333331" in text


# ------------------------------------------------------------------ run

def test_list_scenarios(capsys):
    assert run_cli("list-scenarios") == 0
    names = capsys.readouterr().out.split()
    assert "s3_band" in names and len(names) == 6


def test_run_flat_writes_outputs(tmp_path):
    out = tmp_path / "flat"
    rc = run_cli("run", "--scenario", "rdt_flat", "--grid", "6x6x9", "--dt", "1e-3",
                 "--t-end", "0.02", "--stride", "5", "--out", out)
    assert rc == 0
    rows = read_csv(out / "diagnostics.csv")
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) - 1 == 21
    snaps = sorted(os.listdir(out))
    assert [s for s in snaps if s.startswith("snapshot")] == [
        f"snapshot_{k:06d}.json" for k in (0, 5, 10, 15, 20)]
    h0, u0 = read_snapshot(out / "snapshot_000000.json")
    h1, u1 = read_snapshot(out / "snapshot_000020.json")
    assert np.abs(u1 - u0).max() <= 1e-8
    assert h1["field_names"][0] == "g_13" and h1["step"] == 20
    assert h1["grid"]["sizes"] == [6, 6, 9]


def test_run_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert run_cli("run", "--scenario", "coupled_mixed_bc", "--grid", "16x9", "--dt",
                       "2e-3", "--t-end", "0.01", "--out", out) == 0
        outs.append(out)
    for name in sorted(os.listdir(outs[0])):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_config_file_with_overrides(tmp_path):
    cfg = write_config(tmp_path / "c.json", scenario="heat_dirichlet", grid=33, dt=1e-3,
                       t_end=0.005, metadata={"note": "ignored"})
    out = tmp_path / "o"
    assert run_cli("run", "--config", cfg, "--t-end", "0.002", "--out", out) == 0
    assert len(read_csv(out / "diagnostics.csv")) - 1 == 3


def test_no_contraction_exit_code(tmp_path, capsys):
    rc = run_cli("run", "--scenario", "coupled_mixed_bc", "--grid", "16x9", "--dt", "10",
                 "--t-end", "10", "--out", tmp_path)
    assert rc == 11
    assert "NoContraction" in capsys.readouterr().err
    assert len(read_csv(tmp_path / "diagnostics.csv")) == 2


@pytest.mark.parametrize("params,code,name", [({"diffusivity": -1.0}, 13, "NotParabolic"),
                                              ({"offset": 0.1}, 14, "IncompatibleData")])
def test_planted_failures_exit_codes(tmp_path, capsys, params, code, name):
    cfg = write_config(tmp_path / "c.json", scenario="heat_dirichlet", params=params, grid=33)
    assert run_cli("run", "--config", cfg, "--out", tmp_path) == code
    assert name in capsys.readouterr().err


@pytest.mark.parametrize("content", ["{not json", "[1, 2]", '{"scenario": "heat_dirichlet", "colour": 1}',
                                     '{"scenario": "heat_dirichlet", "dt": "fast"}', "{}"])
def test_malformed_config_exit_30(tmp_path, content):
    path = tmp_path / "c.json"
    path.write_text(content)
    assert run_cli("run", "--config", path, "--out", tmp_path) == 30


def test_unknown_scenario_exit_31(tmp_path):
    assert run_cli("run", "--scenario", "umbilic", "--out", tmp_path) == 31


def test_bad_flag_exit_30(capsys):
    assert run_cli("run", "--freeze-mode", "sometimes") == 30


# --------------------------------------------------------------- verify

def test_verify_heat_passes(tmp_path, capsys):
    assert run_cli("verify", "--scenario", "heat_dirichlet", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "A1 PASS" in out and "A8 PASS" in out


def test_verify_coarse_heat_fails(tmp_path, capsys):
    rc = run_cli("verify", "--scenario", "heat_dirichlet", "--grid", "6", "--out", tmp_path)
    assert rc == 1
    assert "A1 FAIL: sup error" in capsys.readouterr().out


# ----------------------------------------------------------- convergence

def test_convergence_needs_two_levels(tmp_path):
    with pytest.raises(ConfigError):
        convergence_study(RunConfig(scenario="heat_dirichlet"), levels=1)
    assert run_cli("convergence", "--scenario", "heat_dirichlet", "--levels", "1",
                   "--out", tmp_path) == 30


def test_convergence_writes_table(tmp_path):
    rc = run_cli("convergence", "--scenario", "heat_dirichlet", "--levels", "3",
                 "--out", tmp_path)
    assert rc == 0
    rows = read_csv(tmp_path / "convergence_space.csv")
    assert rows[0] == ["level", "sizes", "dt", "step", "error", "order"]
    assert rows[-1][0] == "fit" and float(rows[-1][-1]) >= 1.8


def test_nested_helpers():
    assert nested_sizes((8, 9), (0, 1), 2, (True, False)) == (32, 33)
    fine = np.arange(16 * 17).reshape(16, 17)
    assert restrict(fine, (0, 1), 2).shape == (8, 9)
    assert fit_order([0.1, 0.05, 0.025], [1e-2, 2.5e-3, 6.25e-4]) == pytest.approx(2.0)
    assert np.isnan(fit_order([0.1, 0.05], [0.0, 0.0]))
