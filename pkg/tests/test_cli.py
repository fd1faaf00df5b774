import json
import math
from pathlib import Path

import numpy as np
import pytest

from nhctmc.cli import main
from nhctmc.fields import FunctionField
from nhctmc.io import read_field_csv

CONFIGS = Path(__file__).parent.parent / "configs"

ZERO = """
model:
  type: piecewise
  horizon: 1.0
  blocks: [[[0.0, 0.0], [0.0, 0.0]]]
run: {h: 0.01}
simulate: {n_paths: 200, seed: 1}
"""


def run(tmp_path, command, text=None, config=None, extra=(), **kw):
    if config is None:
        config = tmp_path / "run.yaml"
        config.write_text(text)
    out = tmp_path / "out"
    code = main([command, "--config", str(config), "--out", str(out), *extra], **kw)
    return code, out


def test_build_zero_rates(tmp_path):
    code, out = run(tmp_path, "build", ZERO)
    assert code == 0
    times, field = read_field_csv(out / "field.csv")
    assert np.all(field == np.eye(2))
    assert json.loads((out / "series.json").read_text())["series_order"] >= 1


def test_build_two_state_csv(tmp_path):
    code, out = run(tmp_path, "build", config=CONFIGS / "two_state.yaml")
    assert code == 0
    times, field = read_field_csv(out / "field.csv")
    assert times[-1] == 1.0
    assert abs(field[-1, 0, 0] - (2 / 3 + math.exp(-3) / 3)) <= 1e-5


def test_csv_format(tmp_path):
    code, out = run(tmp_path, "build", ZERO)
    text = (out / "field.csv").read_text()
    assert text.endswith("\n")
    header, first = text.splitlines()[:2]
    assert header == "t,P[0->0],P[0->1],P[1->0],P[1->1]"
    assert first.split(",")[1] == "1"
    # 17 significant digits round-trip every double
    code, out = run(tmp_path, "build", config=CONFIGS / "two_state.yaml")
    last = (out / "field.csv").read_text().splitlines()[-1].split(",")
    assert all(v == format(float(v), ".17g") for v in last)


def test_negative_off_diagonal_exit_1(tmp_path, capsys):
    text = "model:\n  type: piecewise\n  blocks: [[[-1.0, -0.5], [1.0, -1.0]]]\n"
    code, _ = run(tmp_path, "build", text)
    assert code == 1
    assert "negative off-diagonal at (0,1)" in capsys.readouterr().err


def test_config_error_exit_1(tmp_path, capsys):
    code, _ = run(tmp_path, "build", "model:\n  type: piecewise\n  blocks: oops\n")
    assert code == 1
    assert "line 3" in capsys.readouterr().err


def test_no_convergence_exit_2(tmp_path, capsys):
    text = ZERO.replace("[[0.0, 0.0], [0.0, 0.0]]", "[[-5.0, 5.0], [5.0, -5.0]]").replace(
        "run: {h: 0.01}", "run: {h: 0.01, max_order: 2}"
    )
    code, _ = run(tmp_path, "build", text)
    assert code == 2
    assert "no convergence" in capsys.readouterr().err


def test_verify_conservative_regular(tmp_path):
    code, out = run(tmp_path, "verify", config=CONFIGS / "two_state.yaml")
    assert code == 0
    report = json.loads((out / "verification.json").read_text())
    assert report["passed"] and report["regularity"]["regular"]
    names = {p["name"] for p in report["properties"]}
    assert {"chapman_kolmogorov", "forward_residual", "backward_residual", "derivative_condition"} <= names


def test_verify_single_state_kill(tmp_path):
    code, out = run(tmp_path, "verify", config=CONFIGS / "single_kill.yaml")
    assert code == 0
    report = json.loads((out / "verification.json").read_text())
    assert report["regularity"]["regular"] is False
    rows = np.loadtxt(out / "defect.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(rows[:, 1], 1 - np.exp(-rows[:, 0]), atol=1e-6)


def test_verify_corrupted_field_exit_3(tmp_path, capsys):
    def corrupt(field):
        def fn(s, t):
            P = field.matrix(s, t).copy()
            P[0, 1] = -1e-3
            return P

        return FunctionField(fn, field.size)

    code, out = run(tmp_path, "verify", config=CONFIGS / "two_state.yaml", field_hook=corrupt)
    assert code == 3
    assert "nonnegativity" in capsys.readouterr().err
    assert not json.loads((out / "verification.json").read_text())["passed"]


def test_oracle_compare_two_state(tmp_path):
    code, out = run(tmp_path, "oracle-compare", config=CONFIGS / "two_state.yaml")
    assert code == 0
    assert json.loads((out / "oracle.json").read_text())["max_discrepancy"] <= 1e-5


def test_oracle_compare_breakpoint(tmp_path):
    code, out = run(tmp_path, "oracle-compare", config=CONFIGS / "three_state_breakpoint.yaml")
    assert code == 0
    assert json.loads((out / "oracle.json").read_text())["max_discrepancy"] <= 1e-4


def test_oracle_compare_callable_exit_1(tmp_path, capsys):
    code, _ = run(tmp_path, "oracle-compare", config=CONFIGS / "callable_sinusoid.yaml")
    assert code == 1
    assert "oracle requires piecewise-constant rates" in capsys.readouterr().err


def test_oracle_mismatch_exit_4(tmp_path):
    text = (CONFIGS / "two_state.yaml").read_text().replace("h: 1.0e-3", "h: 0.05").replace(
        "bound: 1.0e-5", "bound: 1.0e-9"
    )
    code, out = run(tmp_path, "oracle-compare", text)
    assert code == 4
    assert not json.loads((out / "oracle.json").read_text())["passed"]


def test_simulate_zero_rates(tmp_path):
    code, out = run(tmp_path, "simulate", ZERO)
    assert code == 0
    rep = json.loads((out / "simulation.json").read_text())
    assert rep["comparison"]["estimate"] == [1.0, 0.0, 0.0]


def test_simulate_tiny_run(tmp_path):
    text = (CONFIGS / "two_state.yaml").read_text().replace("n_paths: 100000", "n_paths: 10")
    code, _ = run(tmp_path, "simulate", text)
    assert code == 0


@pytest.mark.slow
def test_simulate_two_state_within_band(tmp_path):
    code, out = run(tmp_path, "simulate", config=CONFIGS / "two_state.yaml")
    assert code == 0
    assert json.loads((out / "simulation.json").read_text())["comparison"]["all_within"]


def test_simulate_statistical_miss_exit_5(tmp_path):
    text = (CONFIGS / "two_state.yaml").read_text().replace("n_paths: 100000", "n_paths: 2000\n  z: 1.0e-6")
    code, _ = run(tmp_path, "simulate", text)
    assert code == 5


def test_simulate_seed_override_and_raw_csv(tmp_path):
    text = ZERO.replace("[[0.0, 0.0], [0.0, 0.0]]", "[[-1.0, 1.0], [2.0, -2.0]]").replace(
        "seed: 1}", "seed: 1, raw_csv: true}"
    )
    code, out = run(tmp_path, "simulate", text, extra=("--seed", "5"))
    assert code == 0
    first = (out / "terminal_states.csv").read_text()
    assert json.loads((out / "simulation.json").read_text())["seed"] == 5
    run(tmp_path, "simulate", text, extra=("--seed", "5"))
    assert (out / "terminal_states.csv").read_text() == first
    run(tmp_path, "simulate", text, extra=("--seed", "6"))
    assert (out / "terminal_states.csv").read_text() != first


def test_policy_command(tmp_path):
    code, out = run(tmp_path, "policy", config=CONFIGS / "mm1_policy.yaml")
    assert code == 0
    data = np.loadtxt(out / "queue_metrics.csv", delimiter=",", skiprows=1)
    assert data[0, 1] == 2.0 and data[0, 2] == 1.0
    # survival is nonincreasing up to the O(h^2) quadrature overshoot
    assert np.all(np.diff(data[:, 2]) <= 1e-8)


def test_policy_command_needs_policy_model(tmp_path):
    code, _ = run(tmp_path, "policy", ZERO)
    assert code == 1


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_verify(tmp_path, path):
    assert run(tmp_path, "verify", config=path)[0] == 0
    expected = 1 if "callable" in path.read_text() else 0
    assert run(tmp_path, "oracle-compare", config=path)[0] == expected
