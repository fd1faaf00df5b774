"""Reference transition matrices for piecewise-constant rates.

A non-conservative generator is made conservative by adding a cemetery state
that collects the missing row mass.  Transition matrices of the augmented
chain are ordered products of block exponentials (scipy's scaling-and-squaring
Pade ``expm``), which shares nothing with the quadrature used by
:mod:`nhctmc.kernel`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import InvalidDistribution, OutOfHorizon, VacuousResurrection
from .rates import PiecewiseConstantRates, require_valid

__all__ = [
    "AugmentedChain",
    "conservativize",
    "pc_exact",
    "restrict",
    "resurrect",
    "oracle_minimal",
    "semigroup_error",
]


@dataclass(frozen=True)
class AugmentedChain:
    """Chain on ``S + {cemetery}``; the cemetery has index ``base.size``."""

    base: PiecewiseConstantRates
    blocks: np.ndarray

    @property
    def cemetery(self) -> int:
        return self.base.size

    @property
    def breakpoints(self) -> np.ndarray:
        return self.base.breakpoints


def _augment(Q: PiecewiseConstantRates, cemetery_row=None) -> np.ndarray:
    n = Q.size
    blocks = np.zeros((Q.blocks.shape[0], n + 1, n + 1))
    blocks[:, :n, :n] = Q.blocks
    blocks[:, :n, n] = -Q.blocks.sum(axis=2)
    if cemetery_row is not None:
        blocks[:, n, :] = cemetery_row
    blocks.setflags(write=False)
    return blocks


def conservativize(Q: PiecewiseConstantRates) -> AugmentedChain:
    """Add an absorbing cemetery fed at rate ``-sum_j q_ij`` from each state."""
    require_valid(Q)
    return AugmentedChain(Q, _augment(Q))


def pc_exact(chain: AugmentedChain, s: float, t: float) -> np.ndarray:
    """Transition matrix of the augmented chain over ``[s, t]``."""
    bp = chain.breakpoints
    if s > t:
        raise ValueError(f"s={s} > t={t}")
    if s < bp[0] or t > bp[-1]:
        raise OutOfHorizon(f"[{s}, {t}] not inside [{bp[0]}, {bp[-1]}]")
    out = np.eye(chain.blocks.shape[1])
    if s == t:
        return out
    k0 = int(np.searchsorted(bp, s, side="right")) - 1
    for k in range(k0, chain.blocks.shape[0]):
        lo, hi = max(s, bp[k]), min(t, bp[k + 1])
        if hi > lo:
            out = out @ expm((hi - lo) * chain.blocks[k])
        if bp[k + 1] >= t:
            break
    return out


def restrict(P: np.ndarray) -> np.ndarray:
    """Drop the cemetery row and column."""
    return np.array(P[:-1, :-1])


def oracle_minimal(Q: PiecewiseConstantRates, s: float, t: float) -> np.ndarray:
    """Minimal transition matrix on ``S`` over ``[s, t]``."""
    return restrict(pc_exact(conservativize(Q), s, t))


def resurrect(Q: PiecewiseConstantRates, nu, rate: float) -> AugmentedChain:
    """Cemetery that returns to ``S`` at ``rate``, landing with distribution ``nu``.

    The restriction to ``S`` keeps the same right derivative ``Q`` at every
    time (a return needs two jumps) but dominates the minimal solution.
    """
    require_valid(Q)
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (Q.size,) or np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-12:
        raise InvalidDistribution("nu must be a probability vector over the states")
    if rate <= 0:
        raise ValueError("resurrection rate must be positive")
    if Q.is_conservative():
        raise VacuousResurrection("rates are conservative; nothing is ever killed")
    row = np.append(rate * nu, -rate)
    return AugmentedChain(Q, _augment(Q, row))


def semigroup_error(block, a: float, b: float) -> float:
    """``max |exp((a+b)Q) - exp(aQ) exp(bQ)|`` for one constant block."""
    block = np.asarray(block, dtype=float)
    return float(np.max(np.abs(expm((a + b) * block) - expm(a * block) @ expm(b * block))))
