import json

import pytest

from jumplq.cli import config_to_dict, dumps, load_config, main, parse_config, run_command
from jumplq.errors import ParseError, SchemaError

FINANCE = {"finance": {"lambda": 1, "alpha": 0.1, "r": 0.0, "sigma": 0.2,
                       "jumps": [{"rate": 1, "gamma": 0.1}], "T": 1, "steps": 100, "x0": 1},
           "mc": {"n_paths": 500, "seed": 3, "n_probe": 4, "n_directions": 2}}

SYSTEM = {
    "command": "riccati",
    "grid": {"t0": 0, "T": 1, "n_steps": 40},
    "measure": {"marks": [{"rate": 1.0, "label": "a"}]},
    "n": 1, "m": 1, "initial": [1.0],
    "scenarios": [{"probability": 0.4, "coefficients": {"A": [[0.1]], "B": [[1]], "C": [[0.3]], "D": [[0.2]],
                                                        "E": [[[0.2]]], "F": [[[0.1]]]}},
                  {"probability": 0.6, "coefficients": {"A": [[-0.1]], "B": [[1]], "E": [[[0.0]]]},
                   "weights": {"Q": [[2]], "R": [[1]], "G": [[0.5]]}}],
    "weights": {"Q": [[1]], "R": [[1]], "G": [[1]]},
    "mc": {"n_paths": 200, "seed": 1},
}


def _write(tmp_path, doc, name="c.json", **out):
    doc = dict(doc, output={"directory": str(tmp_path / "out"), **out})
    f = tmp_path / name
    f.write_text(json.dumps(doc))
    return f


def test_finance_command_inferred(tmp_path):
    cfg = parse_config(_write(tmp_path, FINANCE))
    assert cfg.command == "finance" and cfg.finance.alpha == 0.1


def test_ragged_matrix(tmp_path):
    doc = json.loads(json.dumps(SYSTEM))
    doc["n"] = 2
    doc["scenarios"][0]["coefficients"]["A"] = [[1, 2], [3]]
    with pytest.raises(SchemaError, match=r"scenarios\[0\].coefficients.A"):
        parse_config(_write(tmp_path, doc))


def test_unknown_keys(tmp_path):
    with pytest.raises(SchemaError, match="bogus"):
        parse_config(_write(tmp_path, dict(SYSTEM, bogus=1)))
    doc = json.loads(json.dumps(SYSTEM))
    doc["scenarios"][0]["coefficients"]["Z"] = [[1]]
    with pytest.raises(SchemaError, match="coefficients.Z"):
        parse_config(_write(tmp_path, doc))


def test_parse_error_has_line(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text('{\n  "command": "riccati",\n  "grid": ,\n}')
    with pytest.raises(ParseError, match="line 3"):
        parse_config(f)


def test_round_trip(tmp_path):
    cfg = parse_config(_write(tmp_path, SYSTEM))
    again = load_config(json.loads(dumps(config_to_dict(cfg))))
    assert again.problem == cfg.problem
    assert config_to_dict(again) == config_to_dict(cfg)
    fin = parse_config(_write(tmp_path, FINANCE, name="f.json"))
    assert load_config(config_to_dict(fin)).finance == fin.finance


def test_dumps_17_digits():
    assert dumps({"x": 0.1}).strip() == '{\n  "x": 0.10000000000000001\n}'


def test_verify_passes(tmp_path, capsys):
    assert main(["verify", str(_write(tmp_path, FINANCE))]) == 0
    rep = json.loads((tmp_path / "out" / "verification.json").read_text())
    assert all(rep["pass_flags"].values())


def test_below_threshold_fails(tmp_path, capsys):
    doc = json.loads(json.dumps(FINANCE))
    doc["finance"]["alpha"] = 0.045
    assert main(["riccati", str(_write(tmp_path, doc))]) == 1
    err = capsys.readouterr().err
    assert "NotUniformlyConvex" in err and "t=1" in err and err.startswith("error: riccati:")


def test_simulate_byte_identical(tmp_path):
    doc = dict(SYSTEM, mc={"n_paths": 1, "seed": 5})
    f = _write(tmp_path, doc)
    blobs = []
    for d in ("a", "b"):
        assert main(["simulate", str(f), "-o", str(tmp_path / d)]) == 0
        blobs.append((tmp_path / d / "paths.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_other_commands(tmp_path, capsys):
    f = _write(tmp_path, SYSTEM, formats=["json"])
    assert main(["riccati", str(f)]) == 0
    assert not (tmp_path / "out" / "riccati_s0.csv").exists()
    assert len(json.loads((tmp_path / "out" / "riccati.json").read_text())["P0"]) == 2
    assert main(["probe", str(f)]) == 0
    assert json.loads((tmp_path / "out" / "probe.json").read_text())["probe_delta"] > 0
    doc = dict(SYSTEM, control=0.5)
    assert main(["evaluate", str(_write(tmp_path, doc, name="e.json"))]) == 0
    est = json.loads((tmp_path / "out" / "cost.json").read_text())
    assert est["exact"] is not None and abs(est["mean"] - est["exact"]) < 4 * est["std_error"] + 0.05


def test_verify_failure_exit_code(tmp_path):
    cfg = parse_config(_write(tmp_path, FINANCE), command="verify")
    cfg.tolerances["allowance"] = -1.0
    with open(tmp_path / "sink", "w") as sink:
        assert run_command(cfg, stream=sink) == 2
