from pathlib import Path

import numpy as np
import pytest

from nhctmc.config import load_config, parse_config
from nhctmc.errors import ConfigError
from nhctmc.rates import CallableRates, validate_q_matrix

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_load_and_validate(path):
    cfg = load_config(path)
    assert validate_q_matrix(cfg.rates).valid
    assert cfg.s <= cfg.t_end <= cfg.rates.horizon


def test_defaults():
    cfg = parse_config("model: {type: piecewise, blocks: [[[-1.0]]]}")
    assert cfg.t_end == 1.0 and cfg.h == 1e-3 and cfg.series_tol == 1e-10
    assert cfg.seed == 0 and cfg.output == "out"


def test_sparse_block_fills_diagonal():
    cfg = parse_config("""
model:
  type: piecewise
  size: 3
  horizon: 2
  blocks:
    - sparse: [[0, 1, 2.0], [2, 0, 0.5], [2, 2, -1.0]]
""")
    np.testing.assert_array_equal(cfg.rates.blocks[0], [[-2, 2, 0], [0, 0, 0], [0.5, 0, -1]])


def test_birth_death_formula():
    cfg = load_config(Path(__file__).parent.parent / "configs" / "birth_chain.yaml")
    q = cfg.rates.blocks[0]
    np.testing.assert_array_equal(np.diagonal(q, 1), [(i + 1) ** 2 for i in range(11)])


def test_callable_model():
    cfg = load_config(Path(__file__).parent.parent / "configs" / "callable_sinusoid.yaml")
    assert isinstance(cfg.rates, CallableRates)
    assert cfg.rates.discontinuities == (0.6,)
    q = cfg.rates.rates_at(0.7)
    assert q[0].sum() == pytest.approx(-0.4)


def test_policy_explicit_actions():
    cfg = parse_config("""
model:
  type: policy
  size: 2
  actions:
    - {idle: [0.0, 0.0], push: [-1.0, 1.0]}
    - {idle: [0.0, 0.0]}
  schedule: [[push, idle], [idle, idle]]
""")
    np.testing.assert_array_equal(cfg.rates.breakpoints, [0, 1, 2])
    assert cfg.t_end == 2.0


@pytest.mark.parametrize(
    "text, field, line",
    [
        ("model:\n  type: nope\n", "model.type", 2),
        ("model:\n  type: piecewise\n  blocks: [[[-1.0]]]\nrun:\n  h: -1\n", "run.h", 5),
        ("model:\n  type: piecewise\n  horizon: 1\n  blocks: [[[-1.0]]]\nrun:\n  t_end: 3\n", "run.t_end", 6),
        ("model:\n  type: birth_death\n  size: 3\n  birth: {form: cubic}\n", "model.birth.form", 4),
        ("model:\n  type: piecewise\n  blocks: [[[-1.0]]]\nsimulate:\n  initial_state: 4\n",
         "simulate.initial_state", 5),
    ],
)
def test_errors_carry_field_and_line(text, field, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.field == field
    assert exc.value.line == line


def test_missing_key_and_yaml_syntax():
    with pytest.raises(ConfigError, match="model"):
        parse_config("run: {h: 0.1}\n")
    with pytest.raises(ConfigError) as exc:
        parse_config("model: [unclosed\n")
    assert exc.value.line is not None


def test_unavailable_policy_action():
    with pytest.raises(ConfigError, match="not available"):
        parse_config("""
model:
  type: policy
  size: 3
  arrival: 1.0
  services: {slow: 0.5}
  schedule: [slow, turbo]
""")


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/config.yaml")
