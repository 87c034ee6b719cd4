import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timebin.generation import expected_populations, published_budget, qubit_from_mzi
from timebin.io import (
    TOMOGRAPHY_HEADER,
    ConfigError,
    DataFileError,
    derive_seed,
    load_config,
    parse_config,
    read_csv,
    read_state,
    state_record,
    write_csv,
    write_json,
)


def test_derive_seed_is_stable_and_distinct():
    a = derive_seed(2012, "sample:bal")
    assert a == derive_seed(2012, "sample:bal")
    assert a != derive_seed(2012, "tomography:bal")
    assert a != derive_seed(2013, "sample:bal")
    assert 0 <= a < 2**64


def test_derive_seed_known_value():
    import hashlib

    expected = int.from_bytes(hashlib.sha256(b"7:trace:x").digest()[:8], "big")
    assert derive_seed(7, "trace:x") == expected


def test_defaults_use_mzi_target():
    cfg = parse_config("", "toml")
    assert len(cfg.targets) == 1
    assert cfg.targets[0] == qubit_from_mzi(cfg.mzi)
    assert cfg.targets[0].name == "mzi"
    assert cfg.budget.eta_nopo == 1.0


def test_published_preset_with_calibration():
    cfg = parse_config('[budget]\npreset = "published"\nmultiphoton = 0.05\n', "toml")
    assert expected_populations(cfg.budget)[2] == pytest.approx(0.05, abs=1e-9)
    assert cfg.budget.phase_jitter == published_budget().phase_jitter


def test_toml_and_json_agree():
    toml = """
seed = 3
dim = 3
[mle]
dim_per_mode = 2
[[targets]]
name = "a"
weights = [2, 1]
phi_rad = 0.5
"""
    js = json.dumps(
        {"seed": 3, "dim": 3, "mle": {"dim_per_mode": 2}, "targets": [{"name": "a", "weights": [2, 1], "phi_rad": 0.5}]}
    )
    a, b = parse_config(toml, "toml"), parse_config(js, "json")
    assert a == b
    assert a.targets[0].c0 == pytest.approx(2 / math.sqrt(5))


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("sed = 1\n", "unknown key 'sed'"),
        ("[mle]\ndim_per_mod = 3\n", "mle.dim_per_mod"),
        ("[budget]\neta_det = 1.5\n", "eta_det"),
        ('[budget]\npreset = "lab"\n', "preset"),
        ("[sampling]\nsamples = 0\n", "sampling.samples"),
        ("[sampling]\nsamples = 2.5\n", "sampling.samples"),
        ("[[targets]]\nname = \"a\"\nc0 = 1.0\n", "targets[0]"),
        ("[[targets]]\nname = \"a\"\nc0 = 0.6\nc1 = 0.6\n", "targets[0]"),
        ("[[targets]]\nname = \"../x\"\nc0 = 1.0\nc1 = 0.0\n", "targets[0].name"),
        ("[[targets]]\nname = \"a\"\nweights = [0, 0]\n", "targets[0]"),
        ("[[targets]]\nname = \"a\"\nc0 = 1\nc1 = 0\n[[targets]]\nname = \"a\"\nc0 = 1\nc1 = 0\n", "unique"),
        ("[mzi]\ntau1 = 0.9\n", "mzi"),
        ("[mle]\nx_bin_width = 0.07\n", "mle"),
    ],
)
def test_config_errors_name_the_key(text, fragment):
    with pytest.raises(ConfigError, match=None) as info:
        parse_config(text, "toml")
    assert fragment in str(info.value)


def test_toml_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("seed = 1\n[mle\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)


def test_json_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "seed": 1,\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(p)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")


def test_echo_round_trips():
    cfg = parse_config('[budget]\npreset = "published"\n[[targets]]\nname = "t"\nc0 = 0.6\nc1 = 0.8\n', "toml")
    echo = cfg.echo()
    echo.pop("output_dir")
    again = parse_config(json.dumps(echo), "json")
    assert again.budget.p_multi == cfg.budget.p_multi
    assert again.targets == cfg.targets
    assert again.mle == cfg.mle


@settings(max_examples=30, deadline=None)
@given(vals=st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=4, max_size=4), n=st.integers(1, 5))
def test_csv_round_trip_is_exact(tmp_path_factory, vals, n):
    p = tmp_path_factory.mktemp("csv") / "t.csv"
    rows = np.tile(vals, (n, 1))
    write_csv(p, TOMOGRAPHY_HEADER, rows)
    back = read_csv(p, TOMOGRAPHY_HEADER)
    assert np.array_equal(back, rows)


def test_csv_errors_name_the_row(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, TOMOGRAPHY_HEADER, np.zeros((3, 4)))
    text = p.read_text().splitlines()
    p.write_text("\n".join(text[:3] + ["0.0,0.0"]) + "\n")
    with pytest.raises(DataFileError, match="row 4"):
        read_csv(p, TOMOGRAPHY_HEADER)
    p.write_text("\n".join(text[:2] + ["0.0,abc,0.0,0.0"]) + "\n")
    with pytest.raises(DataFileError, match="row 3"):
        read_csv(p, TOMOGRAPHY_HEADER)
    p.write_text("a,b,c,d\n0,0,0,0\n")
    with pytest.raises(DataFileError, match="header"):
        read_csv(p, TOMOGRAPHY_HEADER)
    with pytest.raises(DataFileError, match="missing"):
        read_csv(tmp_path / "none.csv", TOMOGRAPHY_HEADER)


def test_csv_empty(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, TOMOGRAPHY_HEADER, [])
    with pytest.raises(DataFileError, match="no data"):
        read_csv(p, TOMOGRAPHY_HEADER)
    assert read_csv(p, TOMOGRAPHY_HEADER, allow_empty=True).shape == (0, 4)


def test_state_json_round_trip(tmp_path):
    from tests.helpers import random_density_matrix

    rho = random_density_matrix(9, seed=4)
    p = tmp_path / "s.json"
    write_json(p, state_record(rho, 3, 2, {"k": 1}))
    dm, meta = read_state(p)
    assert np.array_equal(dm.entries, rho)
    assert meta == {"k": 1}


def test_state_json_errors(tmp_path):
    p = tmp_path / "s.json"
    p.write_text("{")
    with pytest.raises(DataFileError):
        read_state(p)
    p.write_text('{"other": 1}')
    with pytest.raises(DataFileError, match="state"):
        read_state(p)
    with pytest.raises(DataFileError, match="missing"):
        read_state(tmp_path / "x.json")
