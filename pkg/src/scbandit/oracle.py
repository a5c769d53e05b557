"""Brute-force search over every ordered, duplicate-free sequence.

Used as ground truth for the score-ordering optimizer; deliberately naive.
"""
from __future__ import annotations

from itertools import combinations, permutations

import numpy as np

from .errors import OracleSizeError
from .model import EnvironmentParams, MessageCatalog, validate_survival

DEFAULT_MAX_N = 8


def all_sequences(n: int):
    """Every ordered subset of ``range(n)``: by size, then lexicographic order."""
    for m in range(n + 1):
        for subset in combinations(range(n), m):
            yield from permutations(subset)


def sequence_value(seq, revenues, valuations, survival, cost) -> float:
    """Expected payoff of ``seq`` written straight from the outcome definition.

    Position ``l`` (1-based) is reached when the user turned down the first
    ``l - 1`` messages and ``W >= l``; abandonment happens at the ``k``-th
    turned-down message when ``W = k``. Plain floats keep this fast enough for
    exhaustive search without sharing code with the vectorized model.
    """
    total = 0.0
    declined = 1.0
    for k, i in enumerate(seq):
        total += survival[k] * declined * valuations[i] * revenues[i]
        declined *= 1.0 - valuations[i]
        total -= cost * (survival[k] - survival[k + 1]) * declined
    return total


def _argmax(n: int, objective, max_n: int):
    if n > max_n:
        raise OracleSizeError(f"N={n} exceeds enumeration guard max_n={max_n}")
    best_seq, best_val = None, -np.inf
    for seq in all_sequences(n):
        val = objective(seq)
        if val > best_val or (val == best_val and seq < best_seq):
            best_seq, best_val = seq, val
    return best_seq, float(best_val)


def enumerate_optimal(
    catalog: MessageCatalog, env: EnvironmentParams, max_n: int = DEFAULT_MAX_N
) -> tuple[tuple[int, ...], float]:
    env.check_catalog(catalog)
    r, u = catalog.revenues.tolist(), env.valuations.tolist()
    q, c = env.continue_prob, env.abandon_cost
    survival = [q**k for k in range(catalog.n + 1)]
    return _argmax(catalog.n, lambda seq: sequence_value(seq, r, u, survival, c), max_n)


def enumerate_optimal_general_w(
    catalog: MessageCatalog,
    valuations,
    survival,
    cost: float,
    max_n: int = DEFAULT_MAX_N,
) -> tuple[tuple[int, ...], float]:
    s = validate_survival(survival, catalog.n + 1).tolist()
    u = np.asarray(valuations, dtype=np.float64)
    if u.shape != catalog.revenues.shape:
        raise ValueError("valuations do not match catalog")
    r = catalog.revenues.tolist()
    return _argmax(catalog.n, lambda seq: sequence_value(seq, r, u.tolist(), s, cost), max_n)
