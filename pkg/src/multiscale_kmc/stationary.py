"""Irreducibility and invariant measures of finite intensity matrices."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .ctmc import IntensityMatrix
from .errors import NotIrreducible


def _as_rates(Q) -> np.ndarray:
    return Q.rates if isinstance(Q, IntensityMatrix) else np.asarray(Q, dtype=np.float64)


def _support(Q: np.ndarray, support: Iterable[int] | None) -> list[int]:
    if support is None:
        return list(range(Q.shape[0]))
    nodes = sorted({int(i) for i in support})
    if not nodes:
        raise ValueError("support must be nonempty")
    if nodes[0] < 0 or nodes[-1] >= Q.shape[0]:
        raise IndexError(f"support {nodes} out of range for dimension {Q.shape[0]}")
    return nodes


def _reaches_all(adj: np.ndarray) -> bool:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i] & ~seen)[0]:
            seen[j] = True
            stack.append(int(j))
    return bool(seen.all())


def is_irreducible(Q, support: Iterable[int] | None = None) -> bool:
    """True iff the rate graph restricted to ``support`` is strongly connected.

    Forward reachability from one node, then reachability in the reversed
    graph; both must cover the whole support.
    """
    rates = _as_rates(Q)
    nodes = _support(rates, support)
    sub = rates[np.ix_(nodes, nodes)] > 0
    np.fill_diagonal(sub, False)
    return _reaches_all(sub) and _reaches_all(sub.T)


def invariant_measure(Q, support: Iterable[int] | None = None) -> np.ndarray:
    """Unique invariant probability of ``Q`` restricted to ``support``.

    Solves ``pi^T (Q - Delta) = 0`` with ``sum(pi) = 1``, replacing one
    equation by the normalization. The result lives on the full state space;
    states outside ``support`` get weight exactly 0.
    """
    rates = _as_rates(Q)
    nodes = _support(rates, support)
    if not is_irreducible(rates, nodes):
        raise NotIrreducible(f"rates restricted to {nodes} are not irreducible")
    sub = rates[np.ix_(nodes, nodes)].copy()
    np.fill_diagonal(sub, 0.0)
    gen = sub - np.diag(sub.sum(axis=1))
    A = gen.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(len(nodes))
    b[-1] = 1.0
    pi_sub = np.linalg.solve(A, b)
    # round-off can leave -1e-17 on tiny weights
    pi_sub = np.clip(pi_sub, 0.0, None)
    pi_sub /= pi_sub.sum()
    pi = np.zeros(rates.shape[0])
    pi[nodes] = pi_sub
    return pi


def balance_residual(Q, pi: np.ndarray) -> float:
    """``max |pi^T Q - pi^T Delta|`` under the zero-diagonal convention."""
    rates = _as_rates(Q).copy()
    np.fill_diagonal(rates, 0.0)
    return float(np.max(np.abs(pi @ rates - pi * rates.sum(axis=1))))
