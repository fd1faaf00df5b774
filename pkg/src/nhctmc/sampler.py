"""Exact path simulation of the minimal jump process.

Path ``k`` of a run with seed ``seed`` draws from
``numpy.random.default_rng(SeedSequence(seed, spawn_key=(k,)))``, so any
subset of paths can be regenerated (or generated in parallel) and gives the
same results as a sequential run.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .rates import CallableRates, PiecewiseConstantRates, require_valid

__all__ = [
    "PathSample",
    "EmpiricalEstimate",
    "path_rng",
    "sample_path",
    "terminal_states",
    "estimate_from_terminal",
    "empirical_transition",
]

ALIVE = "alive"
KILLED = "killed"


@dataclass
class PathSample:
    times: list  # times[0] = s, then jump times
    states: list  # states[k] held on [times[k], times[k+1])
    status: str
    kill_time: float | None = None

    @property
    def final_state(self):
        return self.states[-1] if self.status == ALIVE else None


def path_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _jump_target(q_row, i, exit_rate, rng):
    """Next state (``None`` for the cemetery) given a jump out of ``i``."""
    probs = np.clip(q_row, 0.0, None)
    probs[i] = 0.0
    u = rng.random() * exit_rate
    acc = 0.0
    for j, p in enumerate(probs):
        acc += p
        if u < acc:
            return j
    return None


def _sample_pc(Q: PiecewiseConstantRates, i0, s, t_end, rng) -> PathSample:
    bp = Q.breakpoints
    times, states = [s], [i0]
    t, i = s, i0
    k = Q.block_index(s)
    while True:
        block_end = min(bp[k + 1], t_end)
        q = Q.blocks[k]
        rate = -q[i, i]
        if rate > 0:
            t_next = t + rng.exponential(1.0 / rate)
        else:
            t_next = math.inf
        if t_next >= block_end:
            if block_end >= t_end:
                return PathSample(times, states, ALIVE)
            t, k = block_end, k + 1
            continue
        t = t_next
        j = _jump_target(q[i], i, rate, rng)
        if j is None:
            return PathSample(times, states, KILLED, t)
        i = j
        times.append(t)
        states.append(i)


def _sample_thinning(Q: CallableRates, i0, s, t_end, rng) -> PathSample:
    bound = Q.diag_bound
    times, states = [s], [i0]
    t, i = s, i0
    if bound <= 0:
        return PathSample(times, states, ALIVE)
    while True:
        t += rng.exponential(1.0 / bound)
        if t >= t_end:
            return PathSample(times, states, ALIVE)
        q = Q.rates_at(t)
        rate = -q[i, i]
        if rng.random() * bound >= rate:
            continue
        j = _jump_target(q[i], i, rate, rng)
        if j is None:
            return PathSample(times, states, KILLED, t)
        i = j
        times.append(t)
        states.append(i)


def sample_path(Q, i0: int, s: float, t_end: float, seed=None, *, rng=None) -> PathSample:
    """Simulate one path from state ``i0`` at ``s`` up to ``t_end``.

    Piecewise-constant rates are simulated exactly with exponential holding
    times, redrawn at block boundaries.  Callable rates are simulated by
    thinning against the declared diagonal bound.
    """
    if s > t_end:
        raise ValueError(f"s={s} > t_end={t_end}")
    if rng is None:
        rng = np.random.default_rng(seed)
    if isinstance(Q, PiecewiseConstantRates):
        return _sample_pc(Q, i0, s, t_end, rng)
    return _sample_thinning(Q, i0, s, t_end, rng)


@dataclass
class EmpiricalEstimate:
    counts: np.ndarray  # per final state
    killed: int
    n_paths: int

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.n_paths

    @property
    def killed_fraction(self) -> float:
        return self.killed / self.n_paths

    @property
    def standard_errors(self) -> np.ndarray:
        p = self.probabilities
        return np.sqrt(p * (1 - p) / self.n_paths)

    @property
    def killed_se(self) -> float:
        p = self.killed_fraction
        return math.sqrt(p * (1 - p) / self.n_paths)

    def compare(self, expected_row, expected_defect: float, z: float = 3.0) -> dict:
        """z-sigma band comparison against model probabilities.

        The band uses the larger of the empirical standard error and the one
        implied by the model value, so that a zero empirical count does not
        collapse the band.
        """
        expected = np.append(np.asarray(expected_row, dtype=float), expected_defect)
        p_hat = np.append(self.probabilities, self.killed_fraction)
        se_hat = np.append(self.standard_errors, self.killed_se)
        p0 = np.clip(expected, 0.0, 1.0)
        se_model = np.sqrt(p0 * (1 - p0) / self.n_paths)
        se = np.maximum(se_hat, se_model)
        dev = np.abs(p_hat - expected)
        within = dev <= z * se
        return {
            "expected": expected.tolist(),
            "estimate": p_hat.tolist(),
            "se": se.tolist(),
            "within": within.tolist(),
            "all_within": bool(np.all(within)),
            "z": z,
        }

    def as_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "counts": self.counts.tolist(),
            "killed": self.killed,
            "probabilities": self.probabilities.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "killed_fraction": self.killed_fraction,
            "killed_se": self.killed_se,
        }


def _terminal(Q, i0, s, t_end, seed, lo, hi):
    out = np.empty(hi - lo, dtype=np.int64)
    for k in range(lo, hi):
        path = sample_path(Q, i0, s, t_end, rng=path_rng(seed, k))
        out[k - lo] = path.states[-1] if path.status == ALIVE else -1
    return out


def _workers(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("CTMC_THREADS")
    return max(1, int(env)) if env else 1


def terminal_states(Q, i0: int, s: float, t_end: float, n_paths: int, seed: int, workers=None) -> np.ndarray:
    """Final state of each path, ``-1`` for killed paths.

    ``workers`` (default: ``$CTMC_THREADS`` or 1) splits the path index range
    across processes; the result does not depend on it.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    require_valid(Q)
    nw = min(_workers(workers), n_paths)
    if nw == 1 or isinstance(Q, CallableRates):
        return _terminal(Q, i0, s, t_end, seed, 0, n_paths)
    edges = np.linspace(0, n_paths, nw + 1).astype(int)
    with ProcessPoolExecutor(max_workers=nw) as pool:
        futures = [pool.submit(_terminal, Q, i0, s, t_end, seed, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
        return np.concatenate([f.result() for f in futures])


def estimate_from_terminal(final: np.ndarray, size: int) -> EmpiricalEstimate:
    killed = int(np.sum(final < 0))
    counts = np.bincount(final[final >= 0], minlength=size).astype(np.int64)
    return EmpiricalEstimate(counts, killed, int(final.size))


def empirical_transition(Q, i0: int, s: float, t_end: float, n_paths: int, seed: int, workers=None) -> EmpiricalEstimate:
    """Terminal-state frequencies of ``n_paths`` independent paths."""
    final = terminal_states(Q, i0, s, t_end, n_paths, seed, workers)
    return estimate_from_terminal(final, Q.size)
