"""Piecewise-constant control policies compiled to rate models.

A policy picks, for every state and every unit epoch ``[k, k+1)``, one action
from that state's action set; the controlled rates are the chosen action rows
held constant on each epoch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ActionNotAvailable, DegenerateConditioning, InvalidRates
from .kernel import MinimalSolution
from .rates import PiecewiseConstantRates, StateSpace, ValidationReport, _check_matrix, validate_q_matrix

__all__ = ["ActionModel", "PiecewisePolicy", "QueueMetrics", "compile_policy", "mm1_action_model", "queue_metrics"]


@dataclass(frozen=True)
class ActionModel:
    """``rows[i][action]`` is the rate row of state ``i`` under ``action``."""

    space: StateSpace
    rows: tuple  # per state: dict action -> np.ndarray

    def __post_init__(self):
        n = self.space.size
        if len(self.rows) != n:
            raise ValueError(f"need action rows for {n} states, got {len(self.rows)}")
        frozen = []
        for i, acts in enumerate(self.rows):
            if not acts:
                raise ValueError(f"state {i} has an empty action set")
            clean = {}
            for a, row in acts.items():
                row = np.asarray(row, dtype=float)
                if row.shape != (n,):
                    raise ValueError(f"action {a!r} of state {i}: row has shape {row.shape}")
                q = np.zeros((n, n))
                q[i] = row
                violations = []
                _check_matrix(q, 0.0, 1e-12, violations)
                if violations:
                    raise InvalidRates(ValidationReport(False, [(0.0, i, f"action {a!r}: {v[2]}") for v in violations]))
                row.setflags(write=False)
                clean[a] = row
            frozen.append(clean)
        object.__setattr__(self, "rows", tuple(frozen))

    def actions(self, i: int) -> tuple:
        return tuple(self.rows[i])


@dataclass(frozen=True)
class PiecewisePolicy:
    """``choices[k][i]`` is the action used in state ``i`` on ``[k, k+1)``."""

    choices: tuple

    @classmethod
    def constant(cls, action, n_states: int, epochs: int) -> "PiecewisePolicy":
        return cls(tuple(tuple([action] * n_states) for _ in range(epochs)))

    @property
    def epochs(self) -> int:
        return len(self.choices)


def compile_policy(model: ActionModel, policy: PiecewisePolicy, epoch_length: float = 1.0) -> PiecewiseConstantRates:
    n = model.space.size
    if policy.epochs < 1:
        raise ValueError("policy must cover at least one epoch")
    blocks = np.zeros((policy.epochs, n, n))
    for k, choice in enumerate(policy.choices):
        if len(choice) != n:
            raise ValueError(f"epoch {k}: {len(choice)} choices for {n} states")
        for i, a in enumerate(choice):
            try:
                blocks[k, i] = model.rows[i][a]
            except KeyError:
                raise ActionNotAvailable(f"action {a!r} not available in state {model.space.labels[i]!r} (epoch {k})") from None
    Q = PiecewiseConstantRates(model.space, epoch_length * np.arange(policy.epochs + 1), blocks)
    report = validate_q_matrix(Q)
    if not report.valid:
        raise InvalidRates(report)
    return Q


def mm1_action_model(size: int, arrival: float, service_rates: dict) -> ActionModel:
    """Single-server queue on ``0..size-1`` with a choice of service rate.

    Arrivals in the top state are lost to the window, so that row leaks mass
    at rate ``arrival``.  State 0 has no service whatever the action.
    """
    rows = []
    for i in range(size):
        acts = {}
        for name, mu in service_rates.items():
            row = np.zeros(size)
            if i + 1 < size:
                row[i + 1] = arrival
            served = mu if i > 0 else 0.0
            if i > 0:
                row[i - 1] = served
            row[i] = -(arrival + served)
            acts[name] = row
        rows.append(acts)
    return ActionModel(StateSpace.range(size), tuple(rows))


@dataclass
class QueueMetrics:
    times: np.ndarray
    mean: np.ndarray
    survival: np.ndarray


def queue_metrics(sol: MinimalSolution, i0: int, values=None) -> QueueMetrics:
    """Conditional mean queue length given survival, and the survival curve.

    ``values`` gives the numeric level of each state (default: the index).
    """
    if sol.layout != "end":
        raise ValueError("queue metrics need a solution in layout 'end'")
    n = sol.field.shape[-1]
    values = np.arange(n, dtype=float) if values is None else np.asarray(values, dtype=float)
    rows = sol.field[:, i0, :]
    surv = rows.sum(axis=1)
    if np.any(surv < 1e-12):
        k = int(np.argmin(surv))
        raise DegenerateConditioning(f"survival {surv[k]:.3e} at t={sol.times[k]}")
    return QueueMetrics(sol.times.copy(), rows @ values / surv, surv)
