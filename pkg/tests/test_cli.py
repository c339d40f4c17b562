import csv
import json

import numpy as np
import pytest

from fermiwalk import cli, config, io
from fermiwalk.errors import ConfigurationError


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_presets_listed(capsys):
    assert cli.main(["presets"]) == 0
    names = capsys.readouterr().out.split()
    assert "hop-decay" in names and "converge-hop" in names


def test_config_error_has_line_number():
    text = "d: 3\nseed: 1\nlambdas: [1.0, oops]\n"
    with pytest.raises(ConfigurationError, match=r"cfg:3: lambdas\.1"):
        config.load_config(text, "cfg")
    with pytest.raises(ConfigurationError, match=r"cfg:2: reservoir"):
        config.load_config("d: 3\nreservoir: {kind: thermal, beta: 1.0}\n", "cfg")
    with pytest.raises(ConfigurationError, match=r"cfg:2: bogus: Extra inputs"):
        config.load_config("d: 3\nbogus: 1\n", "cfg")


def test_unknown_preset():
    with pytest.raises(ConfigurationError, match="neither"):
        config.load_config_source("no-such-thing")


def test_exit_code_config(tmp_path, capsys):
    cfg = write(tmp_path, "d: 3\nmode: truncated\n")
    assert cli.main(["propagate", "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "order" in capsys.readouterr().err


def test_exit_code_budget(tmp_path):
    cfg = write(tmp_path, "d: 3\ntimes: [4]\nbudget: 1000\n")
    assert cli.main(["propagate", "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_BUDGET


def test_exit_code_hypothesis(tmp_path, capsys):
    rho = np.zeros((8, 8))
    rho[0, 0] = rho[7, 7] = rho[0, 7] = rho[7, 0] = 0.5
    text = ("d: 3\nV: {source: haar, require_assumptions: true}\n"
            f"rho0: {{kind: matrix, matrix: {json.dumps(rho.tolist())}}}\n"
            "converge: {t_max: 3}\n")
    cfg = write(tmp_path, text)
    assert cli.main(["converge", "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_HYPOTHESIS
    assert "ker T" in capsys.readouterr().err


def test_lambda_zero_is_free(tmp_path):
    assert cli.main(["propagate", "--config", "free-limit", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "propagate.csv")
    assert len(rows) == 5
    for r in rows:
        assert float(r["err_to_free"]) < 1e-12
        assert r["config_hash"] and r["mode"] == "exact" and r["prune_tol"] == "0.0"


def test_ris_difference_column(tmp_path):
    assert cli.main(["propagate", "--config", "ris-diagonal", "--out", str(tmp_path)]) == 0
    for r in read_csv(tmp_path / "propagate.csv"):
        assert float(r["ris_difference"]) < 1e-12


def test_slope_column(tmp_path):
    text = ("d: 3\nseed: 2024\nV: {source: haar, require_assumptions: true}\ncoupling: {kind: hop}\n"
            "lambdas: [2.0, 2.5, 3.0, 3.5, 4.0]\ntimes: [3]\n")
    assert cli.main(["propagate", "--config", write(tmp_path, text), "--out", str(tmp_path)]) == 0
    fit = read_csv(tmp_path / "propagate_fit.csv")[0]
    assert float(fit["expected_slope"]) == -0.25
    assert float(fit["slope_vs_lambda2"]) <= -0.25 * 0.9


def test_spectral_outputs(tmp_path):
    assert cli.main(["spectral", "--config", "spectral-hop", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "spectral.json").read_text())
    assert rep["main_assumptions"]
    assert rep["spectrum"]["peripheral_distance"] < 1e-8
    assert rep["spectrum"]["multiplicity_of_1"] == rep["config"]["d"] + 1
    rows = read_csv(tmp_path / "spectrum.csv")
    assert len(rows) == 4 ** rep["config"]["d"]


def test_spectral_identity(tmp_path):
    assert cli.main(["spectral", "--config", "spectral-identity", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "spectral.json").read_text())
    assert rep["assumptions"]["snd"]["holds"] is False
    assert rep["spectrum"]["peripheral"]


def test_converge_flat_for_mixed_state(tmp_path):
    text = "d: 3\nV: {source: haar}\nrho0: {kind: maximally-mixed}\nconverge: {t_max: 10}\n"
    assert cli.main(["converge", "--config", write(tmp_path, text), "--out", str(tmp_path)]) == 0
    assert all(float(r["distance_to_limit"]) < 1e-14 for r in read_csv(tmp_path / "converge.csv"))


def test_converge_decays(tmp_path):
    assert cli.main(["converge", "--config", "converge-hop", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "converge.csv")
    dist = [float(r["distance_to_limit"]) for r in rows]
    assert dist[0] > 0.5 and dist[-1] < 1e-4
    rep = json.loads((tmp_path / "converge.json").read_text())
    assert rep["closed_vs_projected"] < 1e-8
    # observed rate is at least the guaranteed one
    assert rep["fitted_rate"] >= rep["predicted_rate"] * 0.9


def test_genericity_outputs(tmp_path):
    text = "d: 4\nseed: 3\ngenericity: {samples: 20}\n"
    assert cli.main(["genericity", "--config", write(tmp_path, text), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "genericity.json").read_text())
    assert rep["samples_with_small_minor"] == 0
    assert rep["assumption_pass_rate"] == 1.0


def test_reproducible_and_seed_override(tmp_path):
    outs = []
    for name, seed in [("a", None), ("b", None), ("c", 3)]:
        args = ["propagate", "--config", "determinism", "--out", str(tmp_path / name)]
        if seed is not None:
            args += ["--seed", str(seed)]
        assert cli.main(args) == 0
        outs.append((tmp_path / name / "propagate.json").read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] != outs[2]


def test_json_roundtrip(rng):
    m = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    back = io.matrix_from_json(json.loads(io.dumps(io.matrix_to_json(m))))
    assert np.array_equal(back, m)
    assert np.array_equal(io.matrix_from_json([[1, 2], [3, 4]]), np.array([[1, 2], [3, 4]], dtype=complex))
    with pytest.raises(ConfigurationError):
        io.matrix_from_json([[1, 2], [3]])


def test_config_hash_order_independent():
    assert io.config_hash({"a": 1, "b": [1, 2]}) == io.config_hash({"b": [1, 2], "a": 1})
    assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})
