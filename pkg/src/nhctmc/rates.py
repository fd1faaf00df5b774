"""Nonhomogeneous rate matrices Q(t) on a finite state window.

Two concrete models are provided:

* :class:`PiecewiseConstantRates` -- ``Q(t) = Q_k`` on ``[t_k, t_{k+1})``,
  the class produced by piecewise-constant control policies.
* :class:`CallableRates` -- an arbitrary pure function of time together with
  its declared jump times and a bound on the exit rates.

Both are evaluated right-continuously.  Neither constructor enforces the sign
and row-sum constraints; use :func:`validate_q_matrix` to get a report, or
:func:`require_valid` to raise on the first violation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import DimensionMismatch, InvalidRates, NonnegativityViolation, OutOfHorizon

__all__ = [
    "StateSpace",
    "PiecewiseConstantRates",
    "CallableRates",
    "ValidationReport",
    "constant_rates",
    "validate_q_matrix",
    "require_valid",
    "eval_rates",
    "integrate_diagonal",
    "truncate_birth_death",
]

PC_TOL = 1e-12
CALLABLE_TOL = 1e-9

# Gauss-Legendre rule for per-segment diagonal integrals of callable rates.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class StateSpace:
    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        if len(labels) == 0:
            raise ValueError("state space needs at least one state")
        if len(set(labels)) != len(labels):
            raise ValueError("state labels must be distinct")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def range(cls, n: int) -> "StateSpace":
        return cls(tuple(range(n)))

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        return self.labels.index(label)

    def __len__(self):
        return self.size


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PiecewiseConstantRates:
    """Rates ``Q(t) = blocks[k]`` for ``breakpoints[k] <= t < breakpoints[k+1]``.

    The last breakpoint is the horizon and may be ``inf``.
    """

    space: StateSpace
    breakpoints: np.ndarray
    blocks: np.ndarray

    def __post_init__(self):
        bp = _frozen(self.breakpoints)
        blocks = np.array(self.blocks, dtype=float)
        n = self.space.size
        if bp.ndim != 1 or bp.size < 2:
            raise ValueError("need at least two breakpoints")
        if not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not np.all(np.isfinite(bp[:-1])) or bp[0] < 0:
            raise ValueError("breakpoints must be finite and nonnegative (horizon may be inf)")
        if blocks.ndim == 2:
            blocks = blocks[None]
        if blocks.shape[0] != bp.size - 1:
            raise DimensionMismatch(
                f"{bp.size - 1} time intervals but {blocks.shape[0]} blocks"
            )
        if blocks.shape[1:] != (n, n):
            raise DimensionMismatch(
                f"blocks have shape {blocks.shape[1:]}, expected {(n, n)}"
            )
        blocks.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "blocks", blocks)
        # cumulative diagonal integrals at breakpoints (finite part only)
        lengths = np.diff(bp)
        finite = np.where(np.isfinite(lengths), lengths, 0.0)
        cum = np.zeros((bp.size, n))
        cum[1:] = np.cumsum(finite[:, None] * np.diagonal(blocks, axis1=1, axis2=2), axis=0)
        cum.setflags(write=False)
        object.__setattr__(self, "_cum_diag", cum)

    @property
    def size(self) -> int:
        return self.space.size

    @property
    def start(self) -> float:
        return float(self.breakpoints[0])

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def discontinuities(self) -> tuple:
        return tuple(float(b) for b in self.breakpoints[1:-1])

    def _check_time(self, t):
        if t < self.start or t > self.horizon:
            raise OutOfHorizon(f"t={t} outside [{self.start}, {self.horizon}]")

    def block_index(self, t: float) -> int:
        self._check_time(t)
        k = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return min(k, self.blocks.shape[0] - 1)

    def rates_at(self, t: float) -> np.ndarray:
        return self.blocks[self.block_index(t)]

    def rates_before(self, t: float) -> np.ndarray:
        """Left limit ``Q(t-)``; equals ``Q(t)`` away from breakpoints."""
        self._check_time(t)
        k = int(np.searchsorted(self.breakpoints, t, side="left")) - 1
        return self.blocks[min(max(k, 0), self.blocks.shape[0] - 1)]

    def cumulative_diagonal(self, t: float) -> np.ndarray:
        """``int_{start}^t q_ii(u) du`` for every state i."""
        k = self.block_index(t)
        return self._cum_diag[k] + (t - self.breakpoints[k]) * np.diagonal(self.blocks[k])

    def diagonal_integral(self, a: float, b: float) -> np.ndarray:
        if a > b:
            raise ValueError(f"a={a} > b={b}")
        self._check_time(a)
        self._check_time(b)
        ka, kb = self.block_index(a), self.block_index(b)
        diag = np.diagonal(self.blocks, axis1=1, axis2=2)
        if ka == kb:
            return (b - a) * diag[ka]
        total = (self.breakpoints[ka + 1] - a) * diag[ka]
        for k in range(ka + 1, kb):
            total = total + (self.breakpoints[k + 1] - self.breakpoints[k]) * diag[k]
        return total + (b - self.breakpoints[kb]) * diag[kb]

    def max_exit_rate(self, a: float | None = None, b: float | None = None) -> float:
        a = self.start if a is None else a
        b = self.horizon if b is None else b
        ka, kb = self.block_index(a), self.block_index(b)
        diag = np.diagonal(self.blocks[ka:kb + 1], axis1=1, axis2=2)
        return float(np.max(-diag, initial=0.0))

    def is_conservative(self, tol: float = PC_TOL) -> bool:
        return bool(np.all(np.abs(self.blocks.sum(axis=2)) <= tol))


@dataclass(frozen=True)
class CallableRates:
    """Rates given by a pure function ``fn(t) -> (n, n) array``.

    ``discontinuities`` must list every jump time of ``fn`` on the horizon and
    ``diag_bound`` must dominate ``|q_ii(t)|``; together they stand in for the
    integrability requirement on the diagonal.
    """

    space: StateSpace
    fn: Callable[[float], np.ndarray]
    horizon: float
    diag_bound: float
    discontinuities: tuple = ()
    quad_tol: float = 1e-10
    start: float = 0.0

    def __post_init__(self):
        disc = tuple(sorted(float(d) for d in self.discontinuities))
        if any(d <= self.start or d >= self.horizon for d in disc):
            raise ValueError("discontinuities must lie strictly inside the horizon")
        if not (math.isfinite(self.diag_bound) and self.diag_bound >= 0):
            raise ValueError("diag_bound must be finite and nonnegative")
        if not (self.horizon > self.start and math.isfinite(self.horizon)):
            raise ValueError("horizon must be finite and after start")
        object.__setattr__(self, "discontinuities", disc)

    @property
    def size(self) -> int:
        return self.space.size

    def _check_time(self, t):
        if t < self.start or t > self.horizon:
            raise OutOfHorizon(f"t={t} outside [{self.start}, {self.horizon}]")

    def rates_at(self, t: float) -> np.ndarray:
        self._check_time(t)
        q = np.asarray(self.fn(t), dtype=float)
        n = self.size
        if q.shape != (n, n):
            raise DimensionMismatch(f"rate function returned shape {q.shape}, expected {(n, n)}")
        return q

    def rates_before(self, t: float) -> np.ndarray:
        if t in self.discontinuities:
            return self.rates_at(float(np.nextafter(t, -np.inf)))
        return self.rates_at(t)

    def _diag_fn(self, i):
        return lambda u: self.rates_at(u)[i, i]

    def diagonal_integral(self, a: float, b: float) -> np.ndarray:
        return np.array([integrate_diagonal(self, i, a, b) for i in range(self.size)])

    def segment_diagonal_integrals(self, nodes: np.ndarray) -> np.ndarray:
        """Per-segment ``int q_ii`` on consecutive ``nodes`` (Gauss-Legendre,
        split at declared discontinuities)."""
        out = np.empty((len(nodes) - 1, self.size))
        disc = np.asarray(self.discontinuities)
        for c in range(len(nodes) - 1):
            a, b = nodes[c], nodes[c + 1]
            cuts = [a, *disc[(disc > a) & (disc < b)], b]
            acc = np.zeros(self.size)
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
                for x, w in zip(_GL_X, _GL_W):
                    acc += w * half * np.diagonal(self.rates_at(mid + half * x))
            out[c] = acc
        return out

    def max_exit_rate(self, a=None, b=None) -> float:
        return float(self.diag_bound)


def constant_rates(matrix, horizon: float = np.inf, labels=None) -> PiecewiseConstantRates:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    space = StateSpace(labels if labels is not None else range(matrix.shape[0]))
    return PiecewiseConstantRates(space, [0.0, horizon], matrix[None])


@dataclass
class ValidationReport:
    conservative: bool
    violations: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


def _check_matrix(q, t, tol, violations):
    n = q.shape[0]
    if not np.all(np.isfinite(q)):
        for i, j in zip(*np.nonzero(~np.isfinite(q))):
            violations.append((t, int(i), f"non-finite rate at ({i},{j})"))
        return False
    off = q - np.diag(np.diagonal(q))
    for i, j in zip(*np.nonzero(off < -tol)):
        violations.append((t, int(i), f"negative off-diagonal at ({i},{j})"))
    for i in np.nonzero(np.diagonal(q) > tol)[0]:
        violations.append((t, int(i), f"positive diagonal at ({i},{i})"))
    sums = q.sum(axis=1)
    for i in np.nonzero(sums > tol)[0]:
        violations.append((t, int(i), f"positive row sum {sums[i]:.6g} in row {i}"))
    return bool(np.all(np.abs(sums) <= tol)) and n > 0


def validate_q_matrix(Q, tol: float | None = None, n_check: int = 201) -> ValidationReport:
    """Check the sign and row-sum constraints of a rate model.

    Piecewise-constant models are checked block by block.  Callable models are
    checked at ``n_check`` uniform times plus every declared discontinuity and
    its left limit, and additionally against the declared diagonal bound.
    """
    violations = []
    conservative = True
    if isinstance(Q, PiecewiseConstantRates):
        tol = PC_TOL if tol is None else tol
        for k, block in enumerate(Q.blocks):
            if block.shape != (Q.size, Q.size):
                raise DimensionMismatch(f"block {k} has shape {block.shape}")
            conservative &= _check_matrix(block, float(Q.breakpoints[k]), tol, violations)
        return ValidationReport(bool(conservative), violations)

    tol = CALLABLE_TOL if tol is None else tol
    times = set(np.linspace(Q.start, Q.horizon, n_check).tolist())
    for d in Q.discontinuities:
        times.add(d)
        times.add(float(np.nextafter(d, -np.inf)))
    for t in sorted(times):
        q = Q.rates_at(t)
        conservative &= _check_matrix(q, t, tol, violations)
        worst = np.max(np.abs(np.diagonal(q)))
        if worst > Q.diag_bound + tol:
            violations.append((t, int(np.argmax(np.abs(np.diagonal(q)))),
                               f"diagonal {worst:.6g} exceeds declared bound {Q.diag_bound:.6g}"))
    return ValidationReport(bool(conservative), violations)


def require_valid(Q, tol: float | None = None) -> ValidationReport:
    report = validate_q_matrix(Q, tol)
    if not report.valid:
        raise InvalidRates(report)
    return report


def eval_rates(Q, t: float) -> np.ndarray:
    """Right-continuous evaluation of ``Q(t)``; the last block holds at the horizon."""
    return Q.rates_at(t)


def integrate_diagonal(Q, i: int, a: float, b: float) -> float:
    """``int_a^b q_ii(u) du``.

    Exact for piecewise-constant rates.  For callable rates, adaptive
    quadrature is run separately on each smooth piece between declared
    discontinuities, with absolute tolerance ``Q.quad_tol`` overall.
    """
    if a > b:
        raise ValueError(f"a={a} > b={b}")
    if isinstance(Q, PiecewiseConstantRates):
        return float(Q.diagonal_integral(a, b)[i])
    Q._check_time(a)
    Q._check_time(b)
    cuts = [a, *[d for d in Q.discontinuities if a < d < b], b]
    f = Q._diag_fn(i)
    tol = Q.quad_tol / max(len(cuts) - 1, 1)
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        val, _ = integrate.quad(f, lo, hi, epsabs=tol, epsrel=0.0, limit=200)
        total += val
    return float(total)


def _rate_values(rate, size: int, name: str) -> np.ndarray:
    if callable(rate):
        vals = np.array([float(rate(i)) for i in range(size)])
    else:
        vals = np.broadcast_to(np.asarray(rate, dtype=float), (size,)).copy()
    return vals


def truncate_birth_death(
    birth: Callable[[int], float] | Sequence[float] | float,
    death: Callable[[int], float] | Sequence[float] | float,
    size: int,
    horizon: float = np.inf,
) -> PiecewiseConstantRates:
    """Birth-death generator restricted to states ``0..size-1``.

    Births out of the top state are dropped, so that row leaks mass at rate
    ``birth(size-1)``.  ``death(0)`` is ignored.
    """
    if size < 1:
        raise ValueError("window size must be positive")
    lam = _rate_values(birth, size, "birth")
    mu = _rate_values(death, size, "death")
    mu[0] = 0.0
    for name, vals in (("birth", lam), ("death", mu)):
        bad = np.nonzero(vals < 0)[0]
        if bad.size:
            raise NonnegativityViolation(f"{name}({bad[0]}) = {vals[bad[0]]} < 0")
    q = np.zeros((size, size))
    idx = np.arange(size)
    q[idx[:-1], idx[:-1] + 1] = lam[:-1]
    q[idx[1:], idx[1:] - 1] = mu[1:]
    q[idx, idx] = -(lam + mu)
    return PiecewiseConstantRates(StateSpace.range(size), [0.0, horizon], q[None])
