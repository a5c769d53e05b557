"""Sequential choice model with geometric (or general) user patience.

A user walks down an ordered list of messages. At each message they accept
it with probability ``u_i`` (platform earns ``r_i``); otherwise the message
was unsatisfying and they abandon with probability ``p`` (platform pays
``c``) or move on. Reaching position ``l`` therefore requires surviving
``l - 1`` unsatisfying messages, which happens with probability
``q**(l-1)`` for ``q = 1 - p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConstraintViolation


@dataclass(frozen=True)
class MessageCatalog:
    revenues: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.revenues, dtype=np.float64).copy()
        if r.ndim != 1 or r.size < 1:
            raise ConstraintViolation("catalog needs at least one message")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ConstraintViolation("revenues must be finite and nonnegative")
        r.setflags(write=False)
        object.__setattr__(self, "revenues", r)

    @property
    def n(self) -> int:
        return int(self.revenues.size)


@dataclass(frozen=True)
class EnvironmentParams:
    valuations: np.ndarray
    abandon_prob: float
    abandon_cost: float

    def __post_init__(self):
        u = np.asarray(self.valuations, dtype=np.float64).copy()
        if u.ndim != 1 or u.size < 1:
            raise ConstraintViolation("valuations must be a nonempty vector")
        if not np.all((u >= 0) & (u < 1)):
            raise ConstraintViolation("valuations must lie in [0, 1)")
        p = float(self.abandon_prob)
        if not 0.0 <= p <= 1.0:
            raise ConstraintViolation(f"abandon_prob {p} outside [0, 1]")
        c = float(self.abandon_cost)
        if not (math.isfinite(c) and c >= 0):
            raise ConstraintViolation(f"abandon_cost {c} must be finite and >= 0")
        u.setflags(write=False)
        object.__setattr__(self, "valuations", u)
        object.__setattr__(self, "abandon_prob", p)
        object.__setattr__(self, "abandon_cost", c)

    @property
    def continue_prob(self) -> float:
        return 1.0 - self.abandon_prob

    def check_catalog(self, catalog: MessageCatalog) -> None:
        if self.valuations.size != catalog.n:
            raise ConstraintViolation(
                f"{self.valuations.size} valuations for a catalog of {catalog.n}"
            )


@dataclass(frozen=True)
class PayoffBreakdown:
    select_probs: np.ndarray
    abandon_prob_total: float
    expected_payoff: float

    @property
    def residual_prob(self) -> float:
        """Probability the user sees everything, picks nothing, and stays."""
        return 1.0 - float(self.select_probs.sum()) - self.abandon_prob_total


def validate_sequence(seq: Iterable[int], n: int) -> tuple[int, ...]:
    """Return ``seq`` as a tuple of ints after checking indices and duplicates."""
    out = tuple(int(i) for i in seq)
    seen = set()
    for i in out:
        if not 0 <= i < n:
            raise ConstraintViolation(f"message index {i} not in catalog of size {n}")
        if i in seen:
            raise ConstraintViolation(f"message {i} appears twice in sequence")
        seen.add(i)
    return out


def _reach_probs(u_seq: np.ndarray, survival_at: np.ndarray) -> np.ndarray:
    # P(user is shown position l) = P(W >= l) * prod_{k<l} (1 - u_k)
    not_chosen = np.concatenate(([1.0], np.cumprod(1.0 - u_seq)[:-1]))
    return survival_at * not_chosen


def selection_probabilities(
    catalog: MessageCatalog, env: EnvironmentParams, seq: Iterable[int]
) -> np.ndarray:
    env.check_catalog(catalog)
    seq = validate_sequence(seq, catalog.n)
    probs = np.zeros(catalog.n)
    if not seq:
        return probs
    idx = np.array(seq)
    u_seq = env.valuations[idx]
    reach = _reach_probs(u_seq, env.continue_prob ** np.arange(len(seq)))
    probs[idx] = reach * u_seq
    return probs


def abandonment_probability(
    catalog: MessageCatalog, env: EnvironmentParams, seq: Iterable[int]
) -> float:
    env.check_catalog(catalog)
    seq = validate_sequence(seq, catalog.n)
    if not seq:
        return 0.0
    q = env.continue_prob
    u_seq = env.valuations[np.array(seq)]
    k = np.arange(1, len(seq) + 1)
    # P(W = k) * prod_{j<=k} (1 - u_j)
    return float(np.sum(q ** (k - 1) * (1.0 - q) * np.cumprod(1.0 - u_seq)))


def expected_payoff(
    catalog: MessageCatalog, env: EnvironmentParams, seq: Iterable[int]
) -> PayoffBreakdown:
    probs = selection_probabilities(catalog, env, seq)
    p_a = abandonment_probability(catalog, env, seq)
    value = float(probs @ catalog.revenues) - env.abandon_cost * p_a
    return PayoffBreakdown(select_probs=probs, abandon_prob_total=p_a, expected_payoff=value)


def geometric_survival(q: float, length: int) -> np.ndarray:
    """``P(W > k)`` for ``k = 0..length-1`` under geometric patience."""
    return q ** np.arange(length, dtype=np.float64)


def validate_survival(survival, needed: int) -> np.ndarray:
    s = np.asarray(survival, dtype=np.float64)
    if s.ndim != 1 or s.size < needed:
        raise ConstraintViolation(
            f"survival curve needs P(W>k) for k=0..{needed - 1}, got {s.size} values"
        )
    if s.size and s[0] != 1.0:
        raise ConstraintViolation("survival[0] = P(W > 0) must equal 1")
    if np.any((s < 0) | (s > 1)) or np.any(np.diff(s) > 0):
        raise ConstraintViolation("survival curve must be nonincreasing within [0, 1]")
    return s


def expected_payoff_general_w(
    catalog: MessageCatalog,
    valuations,
    survival,
    cost: float,
    seq: Iterable[int],
) -> float:
    """Expected payoff when patience W has an arbitrary distribution.

    ``survival[k]`` is ``P(W > k)``; a sequence of length ``m`` needs entries
    ``0..m``. Reaching position ``l`` has probability ``P(W >= l) =
    survival[l-1]`` and abandoning at the ``k``-th unsatisfying message has
    probability ``survival[k-1] - survival[k]``.
    """
    u = np.asarray(valuations, dtype=np.float64)
    if u.shape != catalog.revenues.shape:
        raise ConstraintViolation("valuations do not match catalog")
    seq = validate_sequence(seq, catalog.n)
    m = len(seq)
    s = validate_survival(survival, m + 1)
    if m == 0:
        return 0.0
    idx = np.array(seq)
    u_seq = u[idx]
    reach = _reach_probs(u_seq, s[:m])
    revenue = float(np.sum(reach * u_seq * catalog.revenues[idx]))
    abandon = float(np.sum((s[:m] - s[1 : m + 1]) * np.cumprod(1.0 - u_seq)))
    return revenue - cost * abandon
