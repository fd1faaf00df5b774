import math

import numpy as np
import pytest

from nhctmc.kernel import minimal_solution
from nhctmc.rates import CallableRates, PiecewiseConstantRates, StateSpace, constant_rates, truncate_birth_death
from nhctmc.sampler import (
    EmpiricalEstimate,
    empirical_transition,
    estimate_from_terminal,
    path_rng,
    sample_path,
    terminal_states,
)

TWO = [[-1.0, 1.0], [2.0, -2.0]]
P00_CLOSED = 2 / 3 + math.exp(-3) / 3


def test_zero_rates_single_state_path():
    path = sample_path(constant_rates(np.zeros((3, 3)), horizon=1.0), 2, 0.0, 1.0, seed=1)
    assert path.states == [2] and path.times == [0.0] and path.status == "alive"


def test_same_seed_same_path():
    Q = PiecewiseConstantRates(StateSpace.range(2), [0, 0.5, 1], [TWO, [[-4.0, 3.0], [1.0, -1.5]]])
    a = sample_path(Q, 0, 0.0, 1.0, seed=7)
    b = sample_path(Q, 0, 0.0, 1.0, seed=7)
    assert a == b


def test_path_invariants():
    Q = PiecewiseConstantRates(StateSpace.range(3), [0, 0.3, 2], [
        [[-3.0, 2.0, 0.5], [1.0, -1.0, 0.0], [0.5, 0.5, -1.0]],
        [[-1.0, 0.5, 0.5], [2.0, -3.0, 1.0], [0.0, 4.0, -4.0]],
    ])
    for k in range(200):
        p = sample_path(Q, 0, 0.1, 2.0, rng=path_rng(3, k))
        t = np.array(p.times)
        assert t[0] == 0.1 and np.all(np.diff(t) > 0) and t[-1] <= 2.0
        assert all(x != y for x, y in zip(p.states[:-1], p.states[1:]))
        if p.status == "killed":
            assert p.kill_time >= t[-1] and p.final_state is None


def test_single_state_survival():
    est = empirical_transition(constant_rates([[-1.0]], horizon=1.0), 0, 0.0, 1.0, 20000, seed=11)
    assert abs(est.probabilities[0] - math.exp(-1)) <= 3 * est.standard_errors[0]
    assert est.counts.sum() + est.killed == est.n_paths


def test_zero_rates_frequency_one():
    est = empirical_transition(constant_rates(np.zeros((2, 2)), horizon=1.0), 1, 0.0, 1.0, 50, seed=0)
    np.testing.assert_array_equal(est.probabilities, [0.0, 1.0])
    assert est.killed == 0


@pytest.mark.slow
def test_two_state_frequency():
    est = empirical_transition(constant_rates(TWO, horizon=1.0), 0, 0.0, 1.0, 100_000, seed=2024)
    assert abs(est.probabilities[0] - P00_CLOSED) <= 3 * est.standard_errors[0]


@pytest.mark.slow
def test_birth_chain_killed_fraction():
    Q = truncate_birth_death(lambda i: (i + 1) ** 2, 0.0, 12, horizon=0.5)
    defect = minimal_solution(Q, 0.0, 0.5, 1e-3).defect[-1, 0]
    est = empirical_transition(Q, 0, 0.0, 0.5, 100_000, seed=99)
    assert abs(est.killed_fraction - defect) <= 3 * est.killed_se


def test_seed_determinism_and_subset_replay():
    Q = constant_rates([[-2.0, 1.0, 0.5], [1.0, -1.0, 0.0], [0.3, 0.3, -1.0]], horizon=1.0)
    a = terminal_states(Q, 0, 0.0, 1.0, 500, seed=5)
    b = terminal_states(Q, 0, 0.0, 1.0, 500, seed=5)
    np.testing.assert_array_equal(a, b)
    # path k is reproducible on its own
    p = sample_path(Q, 0, 0.0, 1.0, rng=path_rng(5, 123))
    assert a[123] == (p.states[-1] if p.status == "alive" else -1)
    assert not np.array_equal(a, terminal_states(Q, 0, 0.0, 1.0, 500, seed=6))


def test_parallel_equals_sequential(monkeypatch):
    Q = constant_rates([[-2.0, 1.0, 0.5], [1.0, -1.0, 0.0], [0.3, 0.3, -1.0]], horizon=1.0)
    seq = terminal_states(Q, 0, 0.0, 1.0, 400, seed=9, workers=1)
    par = terminal_states(Q, 0, 0.0, 1.0, 400, seed=9, workers=3)
    np.testing.assert_array_equal(seq, par)
    monkeypatch.setenv("CTMC_THREADS", "2")
    np.testing.assert_array_equal(seq, terminal_states(Q, 0, 0.0, 1.0, 400, seed=9))


def test_thinning_matches_kernel():
    def rates(t):
        a = 1.0 + 0.5 * math.sin(2 * t)
        return np.array([[-a - 0.3, a], [1.0, -1.0]])

    Q = CallableRates(StateSpace.range(2), rates, horizon=1.0, diag_bound=1.8)
    row = minimal_solution(Q, 0.0, 1.0, 1e-3)
    est = empirical_transition(Q, 0, 0.0, 1.0, 20000, seed=4)
    cmp = est.compare(row.endpoint[0], row.defect[-1, 0])
    assert cmp["all_within"], cmp


def test_compare_band_uses_model_se_for_empty_counts():
    est = EmpiricalEstimate(np.array([10, 0]), 0, 10)
    cmp = est.compare([0.99, 0.01], 0.0)
    assert cmp["all_within"]
    cmp = est.compare([0.5, 0.5], 0.0)
    assert not cmp["all_within"]


def test_estimate_from_terminal_counts():
    est = estimate_from_terminal(np.array([0, 1, 1, -1, 2]), 3)
    np.testing.assert_array_equal(est.counts, [1, 2, 1])
    assert est.killed == 1 and est.n_paths == 5


def test_rejects_bad_arguments():
    Q = constant_rates([[-1.0]], horizon=1.0)
    with pytest.raises(ValueError):
        sample_path(Q, 0, 1.0, 0.5)
    with pytest.raises(ValueError):
        terminal_states(Q, 0, 0.0, 1.0, 0, seed=1)


@pytest.mark.slow
def test_coverage_calibration():
    # 200 independent replications; the 3-sigma band should cover the kernel value
    Q = constant_rates(TWO, horizon=1.0)
    sol = minimal_solution(Q, 0.0, 1.0, 1e-3)
    row, defect = sol.endpoint[0], sol.defect[-1, 0]
    final = terminal_states(Q, 0, 0.0, 1.0, 200 * 500, seed=31337)
    covered = 0
    for rep in final.reshape(200, 500):
        est = estimate_from_terminal(rep, 2)
        covered += est.compare(row, defect)["all_within"]
    assert covered / 200 >= 0.99
