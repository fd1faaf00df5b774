"""Series construction of the minimal transition matrix.

The minimal solution is the sum of the terms

    P0(s, t)      = diag(exp(int_s^t q_ii))
    P(n+1)(s, t)  = int_s^t diag(exp(int_s^u q_ii)) A(u) P(n)(u, t) du

where ``A(u)`` is ``Q(u)`` with its diagonal zeroed.  The same terms can be
generated with the kernel on the right:

    Q(n+1)(s, t)  = int_s^t Q(n)(s, u) A(u) diag(exp(int_u^t q_jj)) du

and the two families agree term by term.  The first recursion naturally
produces ``P(u, t_end)`` for every start ``u`` of a grid (layout ``"start"``);
the second produces ``P(s, u)`` for every end ``u`` (layout ``"end"``).

Integrals are discretised with the composite trapezoid rule on a grid that has
a node at every rate discontinuity.  On each segment the rates are those of the
segment itself: right limit at the left node, left limit at the right node.
Because the survival factor separates as ``exp(G(u) - G(a))`` every term is a
prefix or suffix sum over segments, so one term costs ``O(M n^3)``.  With the
same rule on both sides the two recursions give identical terms up to
round-off.  Partial row sums can exceed one by the ``O(h^2)`` quadrature error.

Long intervals are cut into chunks with ``max_exit_rate * length <= 4`` and the
chunk solutions are composed with the Chapman-Kolmogorov product.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import GridMismatch, NoConvergence, OffGrid, OutOfHorizon
from .rates import PiecewiseConstantRates, require_valid

__all__ = [
    "TimeGrid",
    "KernelWeights",
    "SeriesTerm",
    "MinimalSolution",
    "ResidualReport",
    "DefectReport",
    "PQReport",
    "make_grid",
    "kernel_weights",
    "initial_term",
    "survival",
    "series_term_forward",
    "series_term_backward",
    "minimal_solution",
    "forward_residual",
    "backward_residual",
    "regularity_defect",
    "pq_equality_check",
    "factorial_tail",
]

CHAIN_BUDGET = 4.0


@dataclass(frozen=True)
class TimeGrid:
    s: float
    t_end: float
    h: float
    nodes: np.ndarray
    forced: tuple = ()

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 1:
            raise ValueError("grid needs at least one node")
        if nodes.size > 1 and not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def __len__(self):
        return self.nodes.size

    def index(self, t: float, rtol: float = 1e-9) -> int | None:
        k = int(np.searchsorted(self.nodes, t))
        scale = rtol * max(1.0, abs(t))
        for c in (k - 1, k):
            if 0 <= c < self.nodes.size and abs(self.nodes[c] - t) <= scale:
                return c
        return None

    def slice(self, i0: int, i1: int) -> "TimeGrid":
        nodes = self.nodes[i0:i1 + 1]
        forced = tuple(f for f in self.forced if nodes[0] < f < nodes[-1])
        return TimeGrid(float(nodes[0]), float(nodes[-1]), self.h, nodes, forced)

    def same_as(self, other: "TimeGrid") -> bool:
        return self.nodes.shape == other.nodes.shape and np.array_equal(self.nodes, other.nodes)


def make_grid(Q, s: float, t_end: float, h: float, force_breaks: bool = True) -> TimeGrid:
    """Grid on ``[s, t_end]``, uniform on each piece between forced nodes.

    With ``force_breaks`` every declared rate discontinuity in ``(s, t_end)``
    becomes a node; otherwise the interval is divided uniformly.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if s > t_end:
        raise ValueError(f"s={s} > t_end={t_end}")
    if s < Q.start or t_end > Q.horizon:
        raise OutOfHorizon(f"[{s}, {t_end}] not inside [{Q.start}, {Q.horizon}]")
    if s == t_end:
        return TimeGrid(s, t_end, h, np.array([s]))
    forced = tuple(d for d in Q.discontinuities if s < d < t_end) if force_breaks else ()
    anchors = [s, *forced, t_end]
    pieces = []
    for a, b in zip(anchors[:-1], anchors[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        pts = np.linspace(a, b, n + 1)
        pieces.append(pts if not pieces else pts[1:])
    return TimeGrid(s, t_end, h, np.concatenate(pieces), forced)


@dataclass(frozen=True)
class KernelWeights:
    """Discretised rates on a grid.

    ``log_surv[a, i]`` is ``int_{u_0}^{u_a} q_ii``; ``left``/``right`` hold the
    segment rates at the left and right end of every segment and ``off_left``
    / ``off_right`` the same with zero diagonal (``q + d``).
    """

    grid: TimeGrid
    log_surv: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @property
    def off_left(self) -> np.ndarray:
        return _zero_diag(self.left)

    @property
    def off_right(self) -> np.ndarray:
        return _zero_diag(self.right)

    def matrix(self, a: int, b: int) -> np.ndarray:
        """Kernel ``K(u_a, u_b) = diag(exp(int_{u_a}^{u_b} q_ii)) [q(u_b) + d(u_b)]``,
        right-continuous in ``u_b``."""
        rates = self.left[b] if b < len(self.left) else self.right[-1]
        return np.exp(self.log_surv[b] - self.log_surv[a])[:, None] * _zero_diag(rates)

    def slice(self, i0: int, i1: int) -> "KernelWeights":
        return KernelWeights(
            self.grid.slice(i0, i1),
            self.log_surv[i0:i1 + 1] - self.log_surv[i0],
            self.left[i0:i1],
            self.right[i0:i1],
        )


def _zero_diag(q: np.ndarray) -> np.ndarray:
    out = np.array(q, copy=True)
    idx = np.arange(out.shape[-1])
    out[..., idx, idx] = 0.0
    return out


def kernel_weights(Q, grid: TimeGrid) -> KernelWeights:
    nodes = grid.nodes
    n = Q.size
    m = nodes.size - 1
    left = np.empty((m, n, n))
    right = np.empty((m, n, n))
    for c in range(m):
        left[c] = Q.rates_at(nodes[c])
        right[c] = Q.rates_before(nodes[c + 1])
    if isinstance(Q, PiecewiseConstantRates):
        seg = np.array([Q.diagonal_integral(a, b) for a, b in zip(nodes[:-1], nodes[1:])])
    else:
        seg = Q.segment_diagonal_integrals(nodes)
    log_surv = np.zeros((m + 1, n))
    if m:
        log_surv[1:] = np.cumsum(seg.reshape(m, n), axis=0)
    return KernelWeights(grid, log_surv, left, right)


@dataclass
class SeriesTerm:
    """One term of the series on a grid.

    ``layout == "start"``: ``values[a] = P(n)(u_a, t_end)``.
    ``layout == "end"``:   ``values[b] = P(n)(s, u_b)``.
    """

    n: int
    values: np.ndarray
    grid: TimeGrid
    layout: str

    @property
    def sup_norm(self) -> float:
        return float(np.max(self.values, initial=0.0))

    @property
    def endpoint(self) -> np.ndarray:
        """The term at ``(s, t_end)``."""
        return self.values[0] if self.layout == "start" else self.values[-1]


def survival(Q, i: int, s: float, t: float) -> float:
    """Probability of no jump out of ``i`` on ``[s, t]``."""
    if s > t:
        raise ValueError(f"s={s} > t={t}")
    return float(np.exp(Q.diagonal_integral(s, t)[i]))


def initial_term(Q, grid: TimeGrid, layout: str = "end", weights: KernelWeights | None = None) -> SeriesTerm:
    w = weights if weights is not None else kernel_weights(Q, grid)
    return SeriesTerm(0, _initial(w, layout), grid, layout)


def _initial(w: KernelWeights, layout: str) -> np.ndarray:
    g = w.log_surv
    if layout == "start":
        e = np.exp(g[-1] - g)
    elif layout == "end":
        e = np.exp(g)
    else:
        raise ValueError(f"unknown layout {layout!r}")
    out = np.zeros(g.shape + (g.shape[1],))
    idx = np.arange(g.shape[1])
    out[:, idx, idx] = e
    return out


def _step_start(w: KernelWeights, prev: np.ndarray) -> np.ndarray:
    """Kernel-on-the-left recursion; suffix sums over segments."""
    h = w.grid.steps
    if h.size == 0:
        return np.zeros_like(prev)
    e = np.exp(w.log_surv)
    seg = 0.5 * h[:, None, None] * (
        e[:-1, :, None] * (w.off_left @ prev[:-1]) + e[1:, :, None] * (w.off_right @ prev[1:])
    )
    out = np.zeros_like(prev)
    out[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    out *= np.exp(-w.log_surv)[:, :, None]
    return out


def _step_end(w: KernelWeights, prev: np.ndarray) -> np.ndarray:
    """Kernel-on-the-right recursion; prefix sums over segments."""
    h = w.grid.steps
    if h.size == 0:
        return np.zeros_like(prev)
    e = np.exp(-w.log_surv)
    seg = 0.5 * h[:, None, None] * (
        (prev[:-1] @ w.off_left) * e[:-1, None, :] + (prev[1:] @ w.off_right) * e[1:, None, :]
    )
    out = np.zeros_like(prev)
    out[1:] = np.cumsum(seg, axis=0)
    out *= np.exp(w.log_surv)[:, None, :]
    return out


def _check_term(prev: SeriesTerm, grid: TimeGrid, layout: str):
    if not prev.grid.same_as(grid):
        raise GridMismatch("previous term lives on a different grid")
    if prev.layout != layout:
        raise GridMismatch(f"expected a term in layout {layout!r}, got {prev.layout!r}")


def series_term_forward(Q, prev: SeriesTerm, grid: TimeGrid, weights: KernelWeights | None = None) -> SeriesTerm:
    """Next term of the kernel-on-the-left recursion, ``P(n+1)(u, t_end)`` for all grid starts."""
    _check_term(prev, grid, "start")
    w = weights if weights is not None else kernel_weights(Q, grid)
    return SeriesTerm(prev.n + 1, _step_start(w, prev.values), grid, "start")


def series_term_backward(Q, prev: SeriesTerm, grid: TimeGrid, weights: KernelWeights | None = None) -> SeriesTerm:
    """Next term of the kernel-on-the-right recursion, ``Q(n+1)(s, u)`` for all grid ends."""
    _check_term(prev, grid, "end")
    w = weights if weights is not None else kernel_weights(Q, grid)
    return SeriesTerm(prev.n + 1, _step_end(w, prev.values), grid, "end")


def factorial_tail(x: float, order: int) -> float:
    """``sum_{n > order} x**n / n!``, the a-priori bound on the discarded terms."""
    if x <= 0:
        return 0.0
    return float(math.exp(x) * special.gammainc(order + 1, x))


@dataclass
class MinimalSolution:
    """Minimal transition matrix on a grid.

    For ``layout == "end"`` ``field[b] = P(s, u_b)``; for ``layout == "start"``
    ``field[a] = P(u_a, t_end)``.  ``orders``, ``last_term_norms`` and
    ``chunk_bounds`` describe the series on each chained sub-interval.
    """

    grid: TimeGrid
    field: np.ndarray
    layout: str
    orders: tuple
    last_term_norms: tuple
    tail_bound: float
    max_partial_row_sum: float
    chunk_bounds: tuple
    exit_rate: float
    series_tol: float

    @property
    def s(self) -> float:
        return self.grid.s

    @property
    def t_end(self) -> float:
        return self.grid.t_end

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def series_order(self) -> int:
        return max(self.orders)

    @property
    def endpoint(self) -> np.ndarray:
        """``P(s, t_end)``."""
        return self.field[0] if self.layout == "start" else self.field[-1]

    @property
    def defect_raw(self) -> np.ndarray:
        return 1.0 - self.field.sum(axis=2)

    @property
    def defect(self) -> np.ndarray:
        return np.maximum(self.defect_raw, 0.0)

    def at(self, u: float) -> np.ndarray:
        k = self.grid.index(u)
        if k is None:
            raise OffGrid(f"time {u} is not a grid node")
        return self.field[k]

    def report(self) -> dict:
        return {
            "s": self.s,
            "t_end": self.t_end,
            "h": self.h,
            "layout": self.layout,
            "nodes": int(self.grid.nodes.size),
            "series_order": self.series_order,
            "orders": list(self.orders),
            "chunks": [[float(self.grid.nodes[a]), float(self.grid.nodes[b])] for a, b in self.chunk_bounds],
            "last_term_norm": max(self.last_term_norms),
            "series_tol": self.series_tol,
            "tail_bound": self.tail_bound,
            "exit_rate": self.exit_rate,
            "max_partial_row_sum": self.max_partial_row_sum,
        }


def _chunk_bounds(nodes: np.ndarray, length: float) -> list:
    m = nodes.size - 1
    if m == 0:
        return [(0, 0)]
    bounds = []
    i0 = 0
    while i0 < m:
        target = nodes[i0] + length
        i1 = int(np.searchsorted(nodes, target * (1 + 1e-12), side="right")) - 1
        i1 = min(max(i1, i0 + 1), m)
        bounds.append((i0, i1))
        i0 = i1
    return bounds


def _sum_series(w: KernelWeights, layout: str, series_tol: float, max_order: int):
    step = _step_start if layout == "start" else _step_end
    term = _initial(w, layout)
    total = term.copy()
    norms = [float(term.max(initial=0.0))]
    max_row = float(total.sum(axis=2).max(initial=0.0))
    n = 0
    while True:
        term = step(w, term)
        n += 1
        norm = float(term.max(initial=0.0))
        norms.append(norm)
        total += term
        max_row = max(max_row, float(total.sum(axis=2).max(initial=0.0)))
        if norm <= series_tol and (norm == 0.0 or norm < norms[-2]):
            return total, n, norm, max_row
        if n >= max_order:
            raise NoConvergence(
                f"series not converged after {n} terms on [{w.grid.s}, {w.grid.t_end}]: "
                f"last term norm {norm:.3e} > {series_tol:.1e}; shorten the chain length or raise max_order"
            )


def minimal_solution(
    Q,
    s: float,
    t_end: float,
    h: float = 1e-3,
    series_tol: float = 1e-10,
    *,
    layout: str = "end",
    max_order: int = 200,
    chain_length: float | None = None,
    force_breaks: bool = True,
    grid: TimeGrid | None = None,
) -> MinimalSolution:
    """Sum the series for the minimal solution on ``[s, t_end]``.

    Each chained chunk is summed until the latest term has sup-norm at most
    ``series_tol`` and is smaller than its predecessor.  Raises
    :class:`NoConvergence` when ``max_order`` terms do not suffice.
    """
    if series_tol <= 0:
        raise ValueError("series_tol must be positive")
    if layout not in ("start", "end"):
        raise ValueError(f"unknown layout {layout!r}")
    require_valid(Q)
    if grid is None:
        grid = make_grid(Q, s, t_end, h, force_breaks=force_breaks)
    weights = kernel_weights(Q, grid)
    lam = Q.max_exit_rate(s, t_end)
    if chain_length is None:
        chain_length = CHAIN_BUDGET / lam if lam > 0 else math.inf
    bounds = _chunk_bounds(grid.nodes, chain_length)

    n = Q.size
    out = np.empty((grid.nodes.size, n, n))
    orders, norms, tail, max_row = [], [], 0.0, 0.0
    pieces = []
    for i0, i1 in bounds:
        w = weights.slice(i0, i1)
        total, order, norm, row = _sum_series(w, layout, series_tol, max_order)
        pieces.append(total)
        orders.append(order)
        norms.append(norm)
        max_row = max(max_row, row)
        tail += factorial_tail(lam * (grid.nodes[i1] - grid.nodes[i0]), order)

    running = np.eye(n)
    if layout == "end":
        for (i0, i1), piece in zip(bounds, pieces):
            out[i0:i1 + 1] = running @ piece
            running = out[i1].copy()
    else:
        for (i0, i1), piece in zip(reversed(bounds), reversed(pieces)):
            out[i0:i1 + 1] = piece @ running
            running = out[i0].copy()
    max_row = max(max_row, float(out.sum(axis=2).max(initial=0.0)))
    return MinimalSolution(
        grid=grid,
        field=out,
        layout=layout,
        orders=tuple(orders),
        last_term_norms=tuple(norms),
        tail_bound=tail,
        max_partial_row_sum=max_row,
        chunk_bounds=tuple(bounds),
        exit_rate=lam,
        series_tol=series_tol,
    )


@dataclass
class ResidualReport:
    max_residual: float
    location: tuple  # (i, j, node time)
    per_node: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        i, j, t = self.location
        return {"max": self.max_residual, "i": i, "j": j, "t": t}


def _residual_report(resid: np.ndarray, nodes: np.ndarray) -> ResidualReport:
    absr = np.abs(resid)
    k, i, j = np.unravel_index(int(np.argmax(absr)), absr.shape)
    return ResidualReport(float(absr[k, i, j]), (int(i), int(j), float(nodes[k])), absr.max(axis=(1, 2)))


def forward_residual(Q, sol: MinimalSolution) -> ResidualReport:
    """Residual of ``P(s,u) = I + int_s^u P(s,v) Q(v) dv`` at every grid end ``u``."""
    if sol.layout != "end":
        raise GridMismatch("forward residual needs a solution in layout 'end'")
    w = kernel_weights(Q, sol.grid)
    P = sol.field
    h = sol.grid.steps
    integral = np.zeros_like(P)
    if h.size:
        seg = 0.5 * h[:, None, None] * (P[:-1] @ w.left + P[1:] @ w.right)
        integral[1:] = np.cumsum(seg, axis=0)
    resid = P - np.eye(Q.size) - integral
    return _residual_report(resid, sol.grid.nodes)


def backward_residual(Q, sol: MinimalSolution) -> ResidualReport:
    """Residual of ``P(u,t) = I + int_u^t Q(v) P(v,t) dv`` at every grid start ``u``."""
    if sol.layout != "start":
        raise GridMismatch("backward residual needs a solution in layout 'start'")
    w = kernel_weights(Q, sol.grid)
    P = sol.field
    h = sol.grid.steps
    integral = np.zeros_like(P)
    if h.size:
        seg = 0.5 * h[:, None, None] * (w.left @ P[:-1] + w.right @ P[1:])
        integral[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    resid = P - np.eye(Q.size) - integral
    return _residual_report(resid, sol.grid.nodes)


@dataclass
class DefectReport:
    times: np.ndarray
    defect: np.ndarray
    raw: np.ndarray
    max_defect: float
    tol: float

    @property
    def regular(self) -> bool:
        return self.max_defect <= self.tol

    def as_dict(self) -> dict:
        return {
            "regular": self.regular,
            "max_defect": self.max_defect,
            "tol": self.tol,
            "final_defect": self.defect[-1].tolist(),
        }


def regularity_defect(sol: MinimalSolution, tol: float = 1e-6) -> DefectReport:
    """Row defects ``1 - sum_j P_ij`` along the grid, clamped at zero.

    The solution is regular on the window exactly when the largest defect is
    (numerically) zero.
    """
    raw = sol.defect_raw
    clamped = np.maximum(raw, 0.0)
    return DefectReport(sol.grid.nodes, clamped, raw, float(clamped.max(initial=0.0)), tol)


@dataclass
class PQReport:
    max_discrepancy: float
    per_order: np.ndarray
    ends: tuple


def pq_equality_check(Q, grid: TimeGrid, max_order: int = 5, ends=None) -> PQReport:
    """Compare the two recursions term by term.

    The kernel-on-the-right family gives ``Q(n)(s, u_e)`` for every end at
    once; for each end index in ``ends`` the kernel-on-the-left family is run
    on the truncated grid to obtain ``P(n)(s, u_e)``.
    """
    require_valid(Q)
    m = grid.nodes.size - 1
    if ends is None:
        ends = sorted({int(round(k * m / 4)) for k in range(1, 5)} - {0}) or [m]
    ends = tuple(int(e) for e in ends)
    weights = kernel_weights(Q, grid)
    right = [_initial(weights, "end")]
    for _ in range(max_order):
        right.append(_step_end(weights, right[-1]))
    per_order = np.zeros(max_order + 1)
    for e in ends:
        w = weights.slice(0, e)
        term = _initial(w, "start")
        for n in range(max_order + 1):
            if n:
                term = _step_start(w, term)
            diff = float(np.max(np.abs(term[0] - right[n][e])))
            per_order[n] = max(per_order[n], diff)
    return PQReport(float(per_order.max()), per_order, ends)
