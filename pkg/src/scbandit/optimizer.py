"""Exact offline optimizer for the sequential choice model.

Each message gets a normalized score

    theta_i = (r_i u_i - c p (1 - u_i)) / (1 - q (1 - u_i)),

messages with positive marginal payoff (the numerator) are kept, and the
kept messages are shown in decreasing score order. The kernels here take raw
arrays and accept ``u_i = 1`` so learners can feed optimistic estimates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConstraintViolation, DegenerateScore
from .model import EnvironmentParams, MessageCatalog


@dataclass(frozen=True)
class ScoredMessage:
    index: int
    score: float
    marginal_payoff: float


def score(r: float, u: float, c: float, p: float) -> float:
    denom = 1.0 - (1.0 - p) * (1.0 - u)
    if denom <= 0.0:
        raise DegenerateScore(f"score undefined for u={u}, p={p}")
    return (r * u - c * p * (1.0 - u)) / denom


def scored_messages(catalog: MessageCatalog, env: EnvironmentParams) -> list[ScoredMessage]:
    """Score every non-degenerate message (degenerate ones are skipped)."""
    env.check_catalog(catalog)
    p, c = env.abandon_prob, env.abandon_cost
    out = []
    for i, (r, u) in enumerate(zip(catalog.revenues, env.valuations)):
        marginal = r * u - c * p * (1.0 - u)
        try:
            out.append(ScoredMessage(i, score(r, u, c, p), marginal))
        except DegenerateScore:
            continue
    return out


@numba.njit(cache=True)
def order_by_score(r, u, q, c):
    """Indices with positive marginal payoff, by descending score then index."""
    n = r.shape[0]
    p = 1.0 - q
    keep = np.empty(n, dtype=np.int64)
    neg_theta = np.empty(n)
    m = 0
    for i in range(n):
        marginal = r[i] * u[i] - c * p * (1.0 - u[i])
        if marginal > 0.0:
            keep[m] = i
            # marginal > 0 forces u > 0, so the denominator is >= u > 0
            neg_theta[m] = -marginal / (1.0 - q * (1.0 - u[i]))
            m += 1
    order = np.argsort(neg_theta[:m], kind="mergesort")
    return keep[:m][order]


@numba.njit(cache=True)
def order_with_head(r, u, q, c, head):
    tail = order_by_score(r, u, q, c)
    out = np.empty(tail.shape[0] + 1, dtype=np.int64)
    out[0] = head
    k = 1
    for i in tail:
        if i != head:
            out[k] = i
            k += 1
    return out[:k]


@numba.njit(cache=True)
def sequence_payoff(seq, r, u, q, c):
    """Expected payoff of ``seq``; same quantity as ``model.expected_payoff``."""
    reach = 1.0
    total = 0.0
    p = 1.0 - q
    for i in seq:
        total += reach * u[i] * r[i]
        reach *= 1.0 - u[i]
        total -= c * p * reach
        reach *= q
    return total


def optimal_sequence(catalog: MessageCatalog, env: EnvironmentParams) -> tuple[int, ...]:
    env.check_catalog(catalog)
    seq = order_by_score(
        catalog.revenues, env.valuations, env.continue_prob, env.abandon_cost
    )
    return tuple(int(i) for i in seq)


def optimal_sequence_with_fixed_head(
    catalog: MessageCatalog, env: EnvironmentParams, head: int
) -> tuple[int, ...]:
    """Best sequence subject to showing ``head`` first."""
    env.check_catalog(catalog)
    if not 0 <= head < catalog.n:
        raise ConstraintViolation(f"head {head} not in catalog of size {catalog.n}")
    seq = order_with_head(
        catalog.revenues, env.valuations, env.continue_prob, env.abandon_cost, head
    )
    return tuple(int(i) for i in seq)
