import json
import subprocess
import sys

import numpy as np
import pytest

from score_xform import __version__
from score_xform.cli import config_hash, load_config, main, read_csv_matrix
from score_xform.errors import ConfigError, EmptyData, ParseError


def _run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    report = json.loads(captured.out) if captured.out else None
    return code, report, captured.err


def _write_config(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


# -- CSV --------------------------------------------------------------------------------


def test_csv_header_comments_and_blanks(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y\n# comment\n1,2\n\n3.5,-4e-1\n")
    np.testing.assert_array_equal(read_csv_matrix(p), [[1.0, 2.0], [3.5, -0.4]])


def test_csv_parse_error_reports_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2\n3,4\n5,abc\n")
    with pytest.raises(ParseError) as err:
        read_csv_matrix(p)
    assert err.value.line == 3 and str(err.value).startswith("line 3:")


def test_csv_ragged_and_nonfinite(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(ParseError) as err:
        read_csv_matrix(p)
    assert err.value.line == 2
    p.write_text("1,nan\n")
    with pytest.raises(ParseError):
        read_csv_matrix(p)


def test_csv_without_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y\n")
    with pytest.raises(EmptyData):
        read_csv_matrix(p)


# -- config --------------------------------------------------------------------------------


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config("verify", None, {"suite": "transforms", "colour": "red"})
    with pytest.raises(ConfigError):
        load_config("fit-kef", None, {"seed": -1})


def test_config_hash_is_order_independent():
    assert config_hash("verify", {"a": 1, "b": 2}) == config_hash("verify", {"b": 2, "a": 1})
    assert config_hash("verify", {"a": 1}) != config_hash("fit-kef", {"a": 1})


def test_cli_rejects_unknown_config_key(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json", {"suite": "simplex", "bogus": 1})
    code, report, err = _run(["verify", "--config", cfg], capsys)
    assert code == 2 and report is None and "bogus" in err


# -- verify ------------------------------------------------------------------------------------


@pytest.mark.parametrize("argv", [
    ["verify", "--suite", "transforms", "--seed", "7"],
    ["verify", "--suite", "reverse-ito"],
    ["verify", "--suite", "gssm-vr", "--slices", "100000"],
    ["verify", "--suite", "simplex"],
])
def test_verify_suites_pass(argv, capsys):
    code, report, _ = _run(argv, capsys)
    assert code == 0
    assert report["status"] == "pass"
    assert report["metric"] <= report["tolerance"]
    assert report["version"] == __version__ and len(report["config_hash"]) == 64


def test_verify_reverse_ito_residual(capsys):
    _, report, _ = _run(["verify", "--suite", "reverse-ito"], capsys)
    residuals = {c["name"]: c["metric"] for c in report["checks"]}
    assert residuals["additive_logistic_vp_mixture"] <= 1e-6


def test_verify_writes_report(tmp_path, capsys):
    code, report, _ = _run(["verify", "--suite", "simplex", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads((tmp_path / "report.json").read_text()) == report


def test_verify_without_suite(capsys):
    assert main(["verify"]) == 2


# -- fit-kef -----------------------------------------------------------------------------------


def test_fit_kef_normal_1d(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json", {"dataset": {"name": "normal-1d", "n_points": 2000},
                                              "grid": [-3, 3, 20], "base_var": 4.0, "lam": 1e-3})
    code, report, _ = _run(["fit-kef", "--config", cfg, "--out", str(tmp_path / "out")], capsys)
    assert code == 0
    alpha = np.array(report["model"]["alpha"])
    assert alpha.shape == (20,) and np.all(np.isfinite(alpha))
    assert report["sm_loss"]["value"] < report["base_sm_loss"]["value"]
    assert report["fisher_divergence"] < report["base_fisher_divergence"]
    saved = json.loads((tmp_path / "out" / "model.json").read_text())
    assert saved["alpha"] == report["model"]["alpha"]


def test_fit_kef_from_csv(tmp_path, capsys):
    data = np.random.default_rng(0).standard_normal((300, 2))
    p = tmp_path / "d.csv"
    np.savetxt(p, data, delimiter=",")
    code, report, _ = _run(["fit-kef", "--data", str(p), "--loss", "gssm-vr", "--seed", "1"], capsys)
    assert code == 0 and np.isfinite(report["fitted_loss"])
    assert "fisher_divergence" not in report


def test_fit_kef_bad_csv(tmp_path, capsys):
    p = tmp_path / "d.csv"
    p.write_text("1.0\n2.0\noops\n")
    code, report, err = _run(["fit-kef", "--data", str(p)], capsys)
    assert code == 2 and report is None and "line 3" in err


# -- sample-simplex ------------------------------------------------------------------------------


def test_sample_simplex_w_ordering(tmp_path, capsys):
    masses = {}
    for w in ("1.0", "1.1"):
        out = tmp_path / w
        code, report, _ = _run(["sample-simplex", "--w", w, "--n-samples", "2000", "--steps", "500",
                                "--out", str(out)], capsys)
        assert code == 0
        masses[w] = report["mean_empty_mass"]
        samples = np.loadtxt(out / "samples.csv", delimiter=",")
        assert samples.shape == (2000, 12)
        assert report["clamp_rate"] < 0.01
    assert masses["1.1"] <= masses["1.0"]


def test_sample_simplex_rejects_bad_schedule(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json", {"schedule": {"beta_min": 0.1, "beta_mid": 3}})
    assert main(["sample-simplex", "--config", cfg]) == 2


# -- bench-losses --------------------------------------------------------------------------------


def test_bench_losses_table(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json", {"dataset": {"name": "mixture-2d", "n_points": 400},
                                              "n_inducing": 10, "slices_per_point": 2})
    code, report, _ = _run(["bench-losses", "--config", cfg], capsys)
    assert code == 0
    assert [r["loss"] for r in report["table"]] == ["sm", "ssm", "ssm-vr", "gssm", "gssm-vr"]
    for row in report["table"]:
        assert all(np.isfinite(row[k]) for k in ("objective", "objective_stderr", "sm_loss", "sm_stderr"))


def test_bench_losses_zero_rows(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text("x0,x1\n")
    code, report, err = _run(["bench-losses", "--data", str(p)], capsys)
    assert code != 0 and report is None and "no data rows" in err


# -- reproducibility -------------------------------------------------------------------------------


def test_byte_identical_reruns(tmp_path, capsys):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["sample-simplex", "--n-samples", "300", "--steps", "50", "--seed", "4", "--out", str(out)]) == 0
        assert main(["fit-kef", "--seed", "4", "--out", str(out)]) == 0
        outputs.append({f: (out / f).read_bytes() for f in ("samples.csv", "report.json", "model.json")})
    capsys.readouterr()
    assert outputs[0] == outputs[1]


def test_thread_cap_env(monkeypatch, capsys):
    monkeypatch.setenv("SCORE_XFORM_THREADS", "1")
    assert main(["verify", "--suite", "simplex"]) == 0
    monkeypatch.setenv("SCORE_XFORM_THREADS", "zero")
    assert main(["verify", "--suite", "simplex"]) == 2


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "score_xform", "--version"], capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.strip() == __version__
