"""Two-parameter transition fields ``(s, t) -> P(s, t)``.

Property checks only need ``matrix(s, t)``; these adapters put kernel
solutions, exact oracle matrices and stored arrays behind that one method.
"""
from __future__ import annotations

import numpy as np

from .errors import OffGrid
from .kernel import MinimalSolution, TimeGrid, minimal_solution
from .oracle import AugmentedChain, pc_exact, restrict

__all__ = ["TransitionField", "KernelField", "ChainField", "ArrayField", "FunctionField"]


class TransitionField:
    size: int

    def matrix(self, s: float, t: float) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, s, t):
        return self.matrix(s, t)


class KernelField(TransitionField):
    """Minimal solution computed by the series kernel, cached per start time.

    ``matrix(s, t)`` reads the end-layout solution from ``s`` to ``horizon``
    when ``t`` is one of its nodes and otherwise solves ``[s, t]`` directly.
    """

    def __init__(self, Q, horizon: float, h: float = 1e-3, series_tol: float = 1e-10, **kwargs):
        self.Q = Q
        self.size = Q.size
        self.horizon = horizon
        self.h = h
        self.series_tol = series_tol
        self.kwargs = kwargs
        self._by_start: dict[float, MinimalSolution] = {}
        self._direct: dict[tuple, np.ndarray] = {}

    def solution(self, s: float) -> MinimalSolution:
        key = float(s)
        if key not in self._by_start:
            self._by_start[key] = minimal_solution(
                self.Q, s, self.horizon, self.h, self.series_tol, **self.kwargs
            )
        return self._by_start[key]

    def matrix(self, s: float, t: float) -> np.ndarray:
        if s > t:
            raise ValueError(f"s={s} > t={t}")
        if t <= self.horizon:
            sol = self.solution(s)
            k = sol.grid.index(t)
            if k is not None:
                return sol.field[k]
        key = (float(s), float(t))
        if key not in self._direct:
            sol = minimal_solution(self.Q, s, t, self.h, self.series_tol, **self.kwargs)
            self._direct[key] = sol.endpoint
        return self._direct[key]


class ChainField(TransitionField):
    """Restriction to ``S`` of an augmented chain's exact transition matrices."""

    def __init__(self, chain: AugmentedChain):
        self.chain = chain
        self.size = chain.base.size

    def matrix(self, s, t):
        return restrict(pc_exact(self.chain, s, t))


class ArrayField(TransitionField):
    """Stored values ``values[a, b] = P(times[a], times[b])`` for ``a <= b``."""

    def __init__(self, times, values):
        times = np.asarray(times, dtype=float)
        step = float(np.max(np.diff(times))) if times.size > 1 else 1.0
        self.grid = TimeGrid(float(times[0]), float(times[-1]), step, times)
        self.values = np.asarray(values, dtype=float)
        self.size = self.values.shape[-1]

    @classmethod
    def from_field(cls, field: TransitionField, times) -> "ArrayField":
        times = np.asarray(times, dtype=float)
        n = field.size
        vals = np.full((times.size, times.size, n, n), np.nan)
        for a in range(times.size):
            for b in range(a, times.size):
                vals[a, b] = field.matrix(times[a], times[b])
        return cls(times, vals)

    def _index(self, t):
        k = self.grid.index(t)
        if k is None:
            raise OffGrid(f"time {t} is not on the stored grid")
        return k

    def matrix(self, s, t):
        a, b = self._index(s), self._index(t)
        if a > b:
            raise ValueError(f"s={s} > t={t}")
        return self.values[a, b]


class FunctionField(TransitionField):
    def __init__(self, fn, size: int):
        self.fn = fn
        self.size = size

    def matrix(self, s, t):
        return np.asarray(self.fn(s, t), dtype=float)
