import csv
from dataclasses import replace

import pytest

from conftest import P1_CONFIG, VASICEK_CONFIG
from divctl import cli, verify
from divctl.config import ConfigError, parse_config, parse_text
from divctl.params import GbmDiscount, VasicekDiscount

P1_TEXT = P1_CONFIG
VAS_TEXT = VASICEK_CONFIG


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_parse_reference_config():
    cfg = parse_text(P1_TEXT)
    assert isinstance(cfg.discount, GbmDiscount)
    assert cfg.discount.rho == pytest.approx(0.03, abs=1e-15)
    assert cfg.seed == 1


def test_parse_config_from_file(tmp_path):
    cfg = parse_config(_write(tmp_path, "v.cfg", VAS_TEXT + "run.seed = 9\nmc.x0 = 1, 2.5\n"))
    assert isinstance(cfg.discount, VasicekDiscount)
    assert cfg.seed == 9 and cfg.numbers("mc.x0") == [1.0, 2.5]


@pytest.mark.parametrize("text, fragment", [
    ("", "missing section: risk"),
    (P1_TEXT + "vasicek.a = 1\n", "exactly one discount model"),
    ("risk.c = 2\nrisk.lam = 1\nrisk.beta = 1\nrisk.M = 1\n", "exactly one discount model"),
    (P1_TEXT.replace("risk.c = 2", "risk.c = two"), "risk.c"),
    (P1_TEXT.replace("risk.c = 2", "risk.c = 0"), "risk.c"),
    (P1_TEXT.replace("risk.M = 1", ""), "risk.M: missing key"),
    (P1_TEXT + "gbm.mu = 1\n", "gbm.mu: unknown key"),
    (P1_TEXT + "risk.c = 3\n", "risk.c: duplicate key"),
    (P1_TEXT.replace("gbm.m = 0.05", "gbm.m = 0.02"), "gbm.rho"),
    (P1_TEXT + "oops\n", "section.key = value"),
])
def test_config_errors_name_the_key(text, fragment):
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        parse_text(text)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "absent.cfg")


def test_fmt_round_trips():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert float(cli.fmt(2.0 / 3.0)) == 2.0 / 3.0
    assert cli.fmt(True) == "true" and cli.fmt(7) == "7"


def test_solve_gbm_summary_and_csv(tmp_path, capsys):
    cfg = _write(tmp_path, "p1.cfg", P1_TEXT)
    assert cli.main(["solve-gbm", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out
    assert "case=B" in line
    b = float(line.split("b_star=")[1].split()[0])
    assert abs(b - 6.4524) < 5e-4
    rows = _rows(tmp_path / "value_curve.csv")
    assert rows[0] == ["x", "V", "F_prime", "policy"] and len(rows) == 202


def test_mc_zero_paths_exits_one(tmp_path, capsys):
    cfg = _write(tmp_path, "p1.cfg", P1_TEXT)
    assert cli.main(["mc", "--config", str(cfg), "--out", str(tmp_path), "--paths", "0"]) == 1
    assert "n_paths" in capsys.readouterr().err


def test_mc_writes_estimates(tmp_path):
    cfg = _write(tmp_path, "p1.cfg", P1_TEXT + "mc.x0 = 0, 6\nmc.horizon = 300\n")
    assert cli.main(["mc", "--config", str(cfg), "--out", str(tmp_path), "--paths", "50", "--seed", "4"]) == 0
    rows = _rows(tmp_path / "estimates.csv")
    assert rows[0] == ["r0", "x0", "mean", "stderr", "n_paths", "seed"]
    assert [r[5] for r in rows[1:]] == ["4", "5"]


def test_wrong_model_and_missing_config_exit_one(tmp_path):
    cfg = _write(tmp_path, "p1.cfg", P1_TEXT)
    assert cli.main(["solve-vasicek", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert cli.main(["bound", "--out", str(tmp_path)]) == 1
    bad = _write(tmp_path, "bad.cfg", "")
    assert cli.main(["solve-gbm", "--config", str(bad)]) == 1


def test_solve_vasicek_outputs(tmp_path):
    cfg = _write(tmp_path, "v.cfg", VAS_TEXT + "grid.x_max = 20\n")
    assert cli.main(["solve-vasicek", "--config", str(cfg), "--out", str(tmp_path), "--nx", "101", "--nr",
                     "9"]) == 0
    assert _rows(tmp_path / "value_field.csv")[0] == ["r", "x", "V", "policy"]
    assert len(_rows(tmp_path / "value_field.csv")) == 1 + 9 * 101
    assert _rows(tmp_path / "threshold_curve.csv")[0] == ["r", "b_star", "resolved"]
    assert _rows(tmp_path / "convergence.csv")[0] == ["iteration", "residual_norm"]


def test_solve_vasicek_non_convergence_exits_two(tmp_path):
    cfg = _write(tmp_path, "v.cfg", VAS_TEXT + "grid.x_max = 20\n")
    code = cli.main(["solve-vasicek", "--config", str(cfg), "--out", str(tmp_path), "--nx", "101", "--nr", "9",
                     "--max-iter", "20"])
    assert code == 2
    assert (tmp_path / "convergence.csv").exists()


def test_bound_table(tmp_path):
    cfg = _write(tmp_path, "v.cfg", VAS_TEXT + "bound.r = 0.02, 0.1\nbound.s = 0, 1\n")
    assert cli.main(["bound", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "bound.csv")
    assert rows[0][:3] == ["r", "s", "f"] and len(rows) == 5
    assert float(rows[2][2]) == pytest.approx(-0.0301959, abs=5e-8)


def test_verify_default_suite_exits_zero(tmp_path, monkeypatch, default_reports, capsys):
    monkeypatch.setattr(verify, "default_suite", lambda **kw: default_reports)
    assert cli.main(["verify", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == len(default_reports)
    assert all(line.startswith("PASS") for line in out)
    rows = _rows(tmp_path / "checks.csv")
    assert rows[0] == ["name", "metric", "tolerance", "passed"]
    assert (tmp_path / "details").is_dir()


def test_verify_flags_failed_check(tmp_path, monkeypatch, default_reports):
    broken = [replace(default_reports[0], passed=False)] + list(default_reports[1:])
    monkeypatch.setattr(verify, "default_suite", lambda **kw: broken)
    assert cli.main(["verify", "--out", str(tmp_path)]) == 2


def test_every_command_is_byte_identical_across_threads(determinism_runs):
    one, four_a, four_b = determinism_runs
    assert set(one) == set(four_a) == set(four_b)
    assert len(one) >= 10
    for key in one:
        assert one[key] == four_a[key] == four_b[key], key
