"""Numerical checks of the pretransition axioms and their consequences.

Every check works on a :class:`~nhctmc.fields.TransitionField` and a list of
probe times.  Uniformity over the state space is trivially a maximum over the
finite window.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import AtDiscontinuity

__all__ = [
    "PropertyOutcome",
    "DerivativeEstimate",
    "validate_pretransition",
    "ck_residual",
    "continuity_slack",
    "continuity_inequality",
    "derivative_at_diagonal",
    "rate_row_bound",
    "consequence_checks",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-6
_STRICT = -np.finfo(float).tiny


@dataclass
class PropertyOutcome:
    name: str
    measured: float
    bound: float
    tol: float
    location: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.measured <= self.bound + self.tol)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "measured": self.measured,
            "bound": self.bound,
            "tol": self.tol,
            "location": self.location,
        }


def _pairs(times):
    times = sorted(float(t) for t in times)
    return [(s, t) for a, s in enumerate(times) for t in times[a:]]


def _nonnegativity(field, pairs, tol):
    worst, loc = -np.inf, {}
    for s, t in pairs:
        P = field.matrix(s, t)
        i, j = np.unravel_index(int(np.argmin(P)), P.shape)
        if -P[i, j] > worst:
            worst, loc = float(-P[i, j]), {"s": s, "t": t, "i": int(i), "j": int(j), "value": float(P[i, j])}
    return PropertyOutcome("nonnegativity", worst, 0.0, tol, loc)


def _substochastic(field, pairs, tol):
    worst, loc = -np.inf, {}
    for s, t in pairs:
        rows = field.matrix(s, t).sum(axis=1)
        i = int(np.argmax(rows))
        if rows[i] > worst:
            worst, loc = float(rows[i]), {"s": s, "t": t, "i": i}
    return PropertyOutcome("row_sums_at_most_one", worst, 1.0, tol, loc)


def validate_pretransition(field, times, tol: float = DEFAULT_TOL, ck_tol: float | None = None, steps=None) -> list:
    """Check nonnegativity, substochastic rows, Chapman-Kolmogorov and
    continuity at the diagonal on all probe pairs/triples of ``times``.

    Diagonal continuity compares the deviation ``max |P(s, s+d) - I|`` at a
    small step ``d`` with the deviation at a larger reference step ``D``: it
    must shrink at least linearly, ``dev(d) <= 2 (d/D) dev(D)``.  ``steps =
    (d, D)`` defaults to 1/400 and 1/100 of the smallest probe spacing; pass
    steps on the stored grid for fields that only hold grid values.
    """
    times = sorted(float(t) for t in times)
    pairs = _pairs(times)
    out = [_nonnegativity(field, pairs, tol), _substochastic(field, pairs, tol)]

    ck_worst, ck_loc = 0.0, {}
    for s, u, t in itertools.combinations(times, 3):
        r, (i, j) = ck_residual(field, s, u, t)
        if r > ck_worst:
            ck_worst, ck_loc = r, {"s": s, "u": u, "t": t, "i": i, "j": j}
    out.append(PropertyOutcome("chapman_kolmogorov", ck_worst, 0.0, tol if ck_tol is None else ck_tol, ck_loc))

    ident = 0.0
    ident_loc = {}
    for s in times:
        d = float(np.max(np.abs(field.matrix(s, s) - np.eye(field.size))))
        if d > ident:
            ident, ident_loc = d, {"s": s}
    out.append(PropertyOutcome("initial_identity", ident, 0.0, tol, ident_loc))

    if steps is None:
        gaps = np.diff(times)
        gap = float(gaps[gaps > 0].min()) if np.any(gaps > 0) else 0.0
        steps = (gap / 400, gap / 100)
    d1, d4 = steps
    checks = [(s, d1, d4) for s in times[:-1] if d4 > 0 and s + d4 <= times[-1]]
    excess, loc = 0.0, {}
    eye = np.eye(field.size)
    for s, d1, d4 in checks:
        dev1 = float(np.max(np.abs(field.matrix(s, s + d1) - eye)))
        dev4 = float(np.max(np.abs(field.matrix(s, s + d4) - eye)))
        over = dev1 - 2.0 * (d1 / d4) * dev4
        if over > excess:
            excess, loc = over, {"s": s, "step": d1, "deviation": dev1, "reference": dev4}
    out.append(PropertyOutcome("diagonal_continuity", excess, 0.0, tol, loc))
    return out


def ck_residual(field, s: float, u: float, t: float):
    """``max_ij |P(s,t) - P(s,u) P(u,t)|`` and the worst ``(i, j)``."""
    if not s <= u <= t:
        raise ValueError(f"need s <= u <= t, got {s}, {u}, {t}")
    diff = np.abs(field.matrix(s, t) - field.matrix(s, u) @ field.matrix(u, t))
    i, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
    return float(diff[i, j]), (int(i), int(j))


def continuity_slack(field, i: int, j: int, u: float, v: float, t: float) -> float:
    """``(1 - P_ii(u^v, u v v)) - |P_ij(u,t) - P_ij(v,t)|``; nonnegative when the bound holds."""
    lo, hi = min(u, v), max(u, v)
    lhs = abs(field.matrix(u, t)[i, j] - field.matrix(v, t)[i, j])
    rhs = 1.0 - field.matrix(lo, hi)[i, i]
    return float(rhs - lhs)


def continuity_inequality(field, i, j, u, v, t, tol: float = DEFAULT_TOL) -> bool:
    return continuity_slack(field, i, j, u, v, t) >= -tol


@dataclass
class DerivativeEstimate:
    estimate: float
    target: float
    steps: tuple
    quotients: tuple

    @property
    def error(self) -> float:
        return abs(self.estimate - self.target)

    @property
    def order(self) -> float:
        """Observed convergence order of the raw difference quotients."""
        h = np.asarray(self.steps)
        e = np.abs(np.asarray(self.quotients) - self.target)
        if np.any(e <= 0) or h.size < 2:
            return float("inf")
        return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def _extrapolate_to_zero(h, d):
    """Neville interpolation of ``(h_k, d_k)`` evaluated at ``h = 0``."""
    p = list(map(float, d))
    h = list(map(float, h))
    n = len(p)
    for m in range(1, n):
        for k in range(n - m):
            p[k] = (h[k] * p[k + 1] - h[k + m] * p[k]) / (h[k] - h[k + m])
    return p[0]


def derivative_at_diagonal(field, Q, i: int, j: int, s: float, steps=(1e-2, 5e-3, 2.5e-3)) -> DerivativeEstimate:
    """Right derivative of ``P_ij(s, .)`` at ``s`` from one-sided differences,
    Richardson-extrapolated to zero step, against ``q_ij(s)``."""
    if any(abs(s - d) <= 1e-12 * max(1.0, abs(d)) for d in Q.discontinuities):
        raise AtDiscontinuity(f"s={s} is a declared rate discontinuity")
    steps = tuple(sorted((float(h) for h in steps), reverse=True))
    delta = 1.0 if i == j else 0.0
    quotients = tuple((field.matrix(s, s + h)[i, j] - delta) / h for h in steps)
    est = _extrapolate_to_zero(steps, quotients)
    return DerivativeEstimate(est, float(Q.rates_at(s)[i, j]), steps, quotients)


def rate_row_bound(Q, s: float, tol: float = 1e-12) -> bool:
    """``sum_{j != i} q_ij(s) <= -q_ii(s)`` for every row.

    Invalid rate models are rejected before any kernel computation, so for
    anything reaching this check it restates the row-sum constraint.
    """
    q = Q.rates_at(s)
    off = q.sum(axis=1) - np.diagonal(q)
    return bool(np.all(off <= -np.diagonal(q) + tol))


def consequence_checks(field, times, tol: float = DEFAULT_TOL, Q=None) -> list:
    """Consequences of the pretransition axioms on probe ``times``.

    Nonnegativity and substochastic rows, strictly positive diagonal, the
    start-time continuity inequality on every probe pair, the end-time
    continuity bound on neighbouring probes and, when ``Q`` is given, the
    row bound of the rates at each probe time.
    """
    times = sorted(float(t) for t in times)
    pairs = _pairs(times)
    out = [_nonnegativity(field, pairs, tol), _substochastic(field, pairs, tol)]

    min_diag, loc = np.inf, {}
    for s, t in pairs:
        d = np.diagonal(field.matrix(s, t))
        k = int(np.argmin(d))
        if d[k] < min_diag:
            min_diag, loc = float(d[k]), {"s": s, "t": t, "i": k}
    out.append(PropertyOutcome("diagonal_positive", -min_diag, _STRICT, 0.0, loc))

    worst, loc = -np.inf, {}
    n = field.size
    for t in times:
        starts = [u for u in times if u <= t]
        for u, v in itertools.combinations(starts, 2):
            lhs = np.abs(field.matrix(u, t) - field.matrix(v, t))
            rhs = 1.0 - np.diagonal(field.matrix(u, v))
            viol = lhs - rhs[:, None]
            i, j = np.unravel_index(int(np.argmax(viol)), (n, n))
            if viol[i, j] > worst:
                worst, loc = float(viol[i, j]), {"u": u, "v": v, "t": t, "i": int(i), "j": int(j)}
    if worst > -np.inf:
        out.append(PropertyOutcome("start_continuity_inequality", worst, 0.0, tol, loc))

    worst, loc = -np.inf, {}
    for s in times:
        ends = [t for t in times if t >= s]
        for t, t2 in zip(ends[:-1], ends[1:]):
            change = np.max(np.abs(field.matrix(s, t2) - field.matrix(s, t)), axis=1)
            bound = 1.0 - np.min(np.diagonal(field.matrix(t, t2)))
            k = int(np.argmax(change))
            if change[k] - bound > worst:
                worst, loc = float(change[k] - bound), {"s": s, "t": t, "t_next": t2, "i": k}
    if worst > -np.inf:
        out.append(PropertyOutcome("end_continuity_bound", worst, 0.0, tol, loc))

    if Q is not None:
        bad = [s for s in times if not rate_row_bound(Q, s)]
        out.append(PropertyOutcome("rate_row_bound", float(len(bad)), 0.0, 0.0, {"times": bad}))
    return out
