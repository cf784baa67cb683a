import json
import os
import textwrap

import pytest

from src.common.errors import ConfigError
from src.common.io_utils import read_csv
from src.common.settings import LabSettings
from src.analysis.dirichlet import Monitoring
from src.harness.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, main
from src.harness.commands import cmd_dirichlet, cmd_semigroup, cmd_simulate, cmd_yosida
from src.harness.config import load_experiment_config, parse_experiment_config
from src.harness.verify import (
    ANCHOR_MAP,
    PROPERTY_ANCHORS,
    PROPERTY_CATALOGUE,
    CheckStatus,
    VerificationSuite,
    run_verification,
    validate_report_dict,
)

BASE = """\
model:
  preset: HeatDirichlet
  n_modes: 4
integrator:
  dt: 0.01
  t_final: 0.1
  record_every: 2
mc:
  n_paths: 200
  master_seed: 42
  path_ids: [0, 3]
observables:
  - "cos(h=0:1)"
semigroup:
  x0: [0.5]
  t_list: [0.0, 0.1]
"""


def _config(tmp_path, extra: str = "", out: str = "out"):
    text = BASE + textwrap.dedent(extra) + f"output:\n  directory: {tmp_path / out}\n"
    return parse_experiment_config(text)


# --- 配置 ---
def test_base_config_parses(tmp_path):
    cfg = _config(tmp_path)
    assert cfg.model.n_modes == 4
    assert cfg.master_seed == 42
    assert cfg.mc.path_ids == (0, 3)
    assert cfg.drift.is_zero
    assert len(cfg.observables) == 1
    assert cfg.domain is None
    assert cfg.with_overrides(seed=7).master_seed == 7


def test_unknown_key_reports_path_and_line():
    text = "model:\n  preset: HeatDirichlet\n  n_mode: 4\nintegrator:\n  dt: 0.1\n  t_final: 1.0\n"
    with pytest.raises(ConfigError) as info:
        parse_experiment_config(text)
    assert info.value.field_path == "model.n_mode"
    assert info.value.line == 3


def test_small_beta_is_reported_on_the_parameter():
    text = "model:\n  preset: ScaledIdentityHOneNoise\n  n_modes: 4\n  params:\n    beta: 1.0\n" \
           "integrator:\n  dt: 0.1\n  t_final: 1.0\n"
    with pytest.raises(ConfigError) as info:
        parse_experiment_config(text)
    assert info.value.field_path == "model.params.beta"
    assert info.value.line == 5


def test_observable_mode_out_of_range(tmp_path):
    text = BASE.replace("cos(h=0:1)", "cos(h=7:1)")
    with pytest.raises(ConfigError) as info:
        parse_experiment_config(text)
    assert info.value.field_path == "observables[0]"
    assert info.value.line == 13


def test_integrator_steps_must_divide_horizon():
    text = "model:\n  preset: HeatDirichlet\n  n_modes: 4\nintegrator:\n  dt: 0.3\n  t_final: 1.0\n"
    with pytest.raises(ConfigError, match="whole number"):
        parse_experiment_config(text)


def test_invalid_yaml():
    with pytest.raises(ConfigError, match="not valid"):
        parse_experiment_config("model: [unclosed\n")


def test_epsilon_must_fit_the_domain():
    text = BASE + "domain:\n  shape: ball\n  radius: 0.5\n  eps_list: [0.6, 0.1]\n"
    with pytest.raises(ConfigError) as info:
        parse_experiment_config(text)
    assert info.value.field_path == "domain.eps_list"


def test_killing_config_from_dirichlet_section(tmp_path):
    domain = "domain:\n  shape: ball\n  radius: 1.0\n  eps_list: [0.4, 0.2]\n"
    cfg = _config(tmp_path, domain)
    assert cfg.killing.monitoring is Monitoring.GRID_EXIT
    assert cfg.killing.epsilon == 0.2
    cfg = _config(tmp_path, domain + "dirichlet:\n  monitoring: FeynmanKac\n  epsilon: 0.3\n")
    assert cfg.killing.monitoring is Monitoring.FEYNMAN_KAC
    assert cfg.killing.epsilon == 0.3
    assert _config(tmp_path).killing is None


def test_killing_config_errors(tmp_path):
    domain = "domain:\n  shape: ball\n  radius: 1.0\n"
    with pytest.raises(ConfigError) as info:
        _config(tmp_path, domain + "dirichlet:\n  epsilon: 1.5\n")
    assert info.value.field_path == "dirichlet.epsilon"
    with pytest.raises(ConfigError) as info:
        _config(tmp_path, "dirichlet:\n  epsilon: 0.1\n")
    assert info.value.field_path == "dirichlet.epsilon"
    with pytest.raises(ConfigError) as info:
        _config(tmp_path, domain + "dirichlet:\n  monitoring: Stopped\n")
    assert info.value.field_path == "dirichlet.monitoring"


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_experiment_config("/nonexistent/lab.yaml")


def test_shipped_configs_load():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in ("config.yaml", "ou_minimal.yaml", "gradient_cubic.yaml", "h1_noise.yaml"):
        cfg = load_experiment_config(os.path.join(root, name))
        assert cfg.model.n_modes >= 1


# --- 子命令 ---
def test_simulate_writes_one_file_per_path(tmp_path):
    out = cmd_simulate(_config(tmp_path))
    assert out.summary["rows_per_path"] == 6
    assert [os.path.basename(f) for f in out.files] == ["trajectory_path0.csv", "trajectory_path3.csv"]
    table = read_csv(out.files[1])
    assert table["meta"]["master_seed"] == "42"
    assert table["meta"]["path_id"] == "3"
    assert table["header"][:2] == ["t", "mode_0"]
    assert len(table["rows"]) == 6


def test_simulate_reruns_are_byte_identical(tmp_path):
    first = cmd_simulate(_config(tmp_path, out="a"))
    second = cmd_simulate(_config(tmp_path, out="b"))
    for a, b in zip(first.files, second.files):
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()


def test_semigroup_adds_mehler_column_for_zero_drift(tmp_path):
    out = cmd_semigroup(_config(tmp_path))
    table = read_csv(os.path.join(tmp_path, "out", "semigroup.csv"))
    assert table["header"] == ["observable", "t", "mc", "mc_stderr", "n_paths", "mehler", "z_score"]
    assert len(table["rows"]) == 2
    for row in table["rows"]:
        assert abs(float(row[-1])) <= 4.0
    assert out.summary["rows"] == 2


def test_semigroup_without_mehler_for_cubic_drift(tmp_path):
    cfg = _config(tmp_path, "drift:\n  variant: nemytskii_gradient\n  poly_coeffs: [0, 0, 0, 1]\n")
    cmd_semigroup(cfg)
    table = read_csv(os.path.join(tmp_path, "out", "semigroup.csv"))
    assert "mehler" not in table["header"]


def test_yosida_outputs(tmp_path):
    extra = """\
    drift:
      variant: nemytskii_gradient
      poly_coeffs: [0, 0, 0, 1]
    yosida:
      deltas: [1.0, 0.1]
      n_pairs: 50
      s_list: [0.1, 0.01]
      n_points: 3
      n_smoothing_samples: 50
    """
    out = cmd_yosida(_config(tmp_path, extra))
    names = sorted(os.path.basename(f) for f in out.files)
    assert names == ["mehler_ladder.csv", "yosida.json", "yosida_checks.csv"]
    checks = read_csv(os.path.join(tmp_path, "out", "yosida_checks.csv"))
    assert checks["header"] == ["delta", "property", "lhs", "rhs", "slack", "pass"]
    assert out.summary["yosida_passed"]
    with open(os.path.join(tmp_path, "out", "yosida.json"), encoding="utf-8") as f:
        assert json.load(f)["master_seed"] == 42


def test_dirichlet_needs_a_domain(tmp_path):
    with pytest.raises(ConfigError, match="domain"):
        cmd_dirichlet(_config(tmp_path))


def test_dirichlet_outputs(tmp_path):
    extra = """\
    domain:
      shape: ball
      radius: 1.0
      eps_list: [0.4, 0.2]
    dirichlet:
      t: 0.1
      subinvariance_t: []
    """
    out = cmd_dirichlet(_config(tmp_path, extra))
    names = sorted(os.path.basename(f) for f in out.files)
    assert names == ["dirichlet.json", "dirichlet_scan_0.csv", "dirichlet_scan_1.csv"]
    scan = read_csv(os.path.join(tmp_path, "out", "dirichlet_scan_0.csv"))
    assert scan["header"] == ["eps", "value", "stderr", "gap", "gap_se"]
    assert [float(r[0]) for r in scan["rows"]] == [0.4, 0.2]


def test_dirichlet_measure_rows_follow_monitoring(tmp_path):
    extra = """\
    domain:
      shape: ball
      radius: 0.5
      eps_list: [0.2, 0.1]
    invariant:
      t_large: 0.5
    dirichlet:
      t: 0.05
      subinvariance_t: [0.05]
      ensemble_size: 20
      monitoring: FeynmanKac
    """
    cmd_dirichlet(_config(tmp_path, extra))
    with open(os.path.join(tmp_path, "out", "dirichlet.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["killing"] == {"monitoring": "FeynmanKac", "epsilon": 0.1}
    assert [k["epsilon"] for k in report["killed"]] == [0.1, 0.1]
    assert {r["test"] for r in report["subinvariance"]} == {"fk_contraction"}


# --- verify ---
def test_single_check_report_is_well_formed():
    report = VerificationSuite("fast", master_seed=0).run(only=["drift_dissipativity"])
    assert [r.check_id for r in report.records] == ["drift_dissipativity"]
    assert report.passed
    data = report.to_dict()
    assert validate_report_dict(data) == []
    row = data["checks"][0]
    assert row["property"] in PROPERTY_CATALOGUE
    assert row["anchor"] == PROPERTY_ANCHORS["drift-dissipativity"]
    assert "runtime_ms" not in row


def test_every_property_resolves_to_an_anchor():
    assert set(PROPERTY_ANCHORS) == set(PROPERTY_CATALOGUE)
    assert set(PROPERTY_ANCHORS.values()) <= set(ANCHOR_MAP)
    assert PROPERTY_ANCHORS["determinism"] == "plumbing"
    for suite in ("fast", "full"):
        for _, prop, _ in VerificationSuite(suite).checks():
            assert prop in PROPERTY_ANCHORS


def test_raising_check_is_recorded_as_error(monkeypatch):
    def boom(self):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(VerificationSuite, "check_drift_dissipativity", boom)
    report = VerificationSuite("fast").run(only=["drift_dissipativity"])
    (record,) = report.records
    assert record.status is CheckStatus.ERROR
    assert "synthetic failure" in record.error_message
    assert record.anchor == "model-presets"
    assert not report.passed
    assert report.get_summary()["error"] == 1


def test_unknown_check_id_is_a_config_error():
    with pytest.raises(ConfigError, match="unknown check"):
        VerificationSuite("fast").run(only=["no_such_check"])


def test_report_validator_flags_problems():
    problems = validate_report_dict({"version": 1, "suite": "fast", "master_seed": 0, "summary": {},
                                     "checks": [{"check_id": "x", "property": "made-up", "status": "maybe",
                                                 "pass": True, "details": {}}]})
    assert any("catalogue" in p for p in problems)
    assert any("status" in p for p in problems)
    assert any("anchor" in p for p in problems)


def test_report_validator_checks_anchor_against_property():
    row = {"check_id": "determinism", "property": "determinism", "anchor": "killed-semigroups",
           "status": "passed", "pass": True, "details": {}}
    data = {"version": 1, "suite": "fast", "master_seed": 0, "summary": {}, "checks": [row]}
    assert any("does not match" in p for p in validate_report_dict(data))
    assert validate_report_dict(dict(data, checks=[dict(row, anchor="plumbing")])) == []


def test_suite_runs_on_the_configured_drift(tmp_path):
    corrupted = "drift:\n  variant: nemytskii_gradient\n  poly_coeffs: [0, 0, 0, -1]\n"
    report = VerificationSuite("fast", 0, config=_config(tmp_path, corrupted)).run(only=["drift_dissipativity"])
    (record,) = report.records
    assert record.status is CheckStatus.FAILED
    assert record.lhs > record.rhs
    witness = record.details["dissipativity"]
    assert len(witness["witness_x"]) == len(witness["witness_y"]) == 4
    assert not record.details["validation"]["passed"]

    suite = VerificationSuite("fast", 0, config=_config(tmp_path))
    assert suite.model.n_modes == 4 and suite.drift.is_zero
    assert suite.regular_drift.has_nonlinearity


@pytest.mark.slow
def test_fast_suite_report_is_identical_across_worker_counts(tmp_path, monkeypatch):
    reports = []
    for workers in (1, 2):
        monkeypatch.setattr(LabSettings, "NUM_WORKERS", workers)
        out_dir = tmp_path / f"w{workers}"
        os.makedirs(out_dir)
        report = run_verification("fast", 0, str(out_dir))
        assert report.passed, [r.check_id for r in report.records if not r.passed]
        reports.append((out_dir / "verify_report.json").read_bytes())
    assert reports[0] == reports[1]


def test_unknown_suite():
    with pytest.raises(ValueError):
        VerificationSuite("medium")


# --- CLI ---
def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  preset: Laplace\nintegrator:\n  dt: 0.1\n  t_final: 1.0\n", encoding="utf-8")
    log = str(tmp_path / "lab.log")
    assert main(["simulate", "--config", str(bad), "--log_file", log, "--no_progress"]) == EXIT_CONFIG
    assert main(["simulate", "--log_file", log]) == EXIT_CONFIG


def test_cli_simulate_run(tmp_path):
    path = tmp_path / "lab.yaml"
    path.write_text(BASE, encoding="utf-8")
    out_dir = tmp_path / "cli_out"
    code = main(["simulate", "--config", str(path), "--seed", "5", "--out", str(out_dir),
                 "--log_file", str(tmp_path / "lab.log"), "--no_progress"])
    assert code == EXIT_OK
    assert read_csv(str(out_dir / "trajectory_path0.csv"))["meta"]["master_seed"] == "5"


def test_cli_verify_fails_on_a_corrupted_drift(tmp_path):
    path = tmp_path / "lab.yaml"
    path.write_text(BASE + "drift:\n  variant: nemytskii_gradient\n  poly_coeffs: [0, 0, 0, -1]\n", encoding="utf-8")
    out_dir = tmp_path / "verify_out"
    log = str(tmp_path / "lab.log")
    code = main(["verify", "--config", str(path), "--out", str(out_dir), "--checks", "drift_dissipativity",
                 "--log_file", log, "--no_progress"])
    assert code == EXIT_FAILED
    with open(out_dir / "verify_report.json", encoding="utf-8") as f:
        (row,) = json.load(f)["checks"]
    assert row["check_id"] == "drift_dissipativity" and row["status"] == "failed"
    assert row["details"]["dissipativity"]["witness_x"]

    path.write_text(BASE, encoding="utf-8")
    assert main(["verify", "--config", str(path), "--out", str(out_dir), "--checks", "drift_dissipativity",
                 "--log_file", log, "--no_progress"]) == EXIT_OK
    assert main(["verify", "--config", str(path), "--out", str(out_dir), "--checks", "no_such_check",
                 "--log_file", log, "--no_progress"]) == EXIT_CONFIG
