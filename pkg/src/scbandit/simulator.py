"""Episode sampling for the sequential choice model.

All randomness comes from a ``numpy.random.Generator`` (PCG64). The numba
kernels draw from the very same generator object, so an episode sampled from
Python and one sampled inside a compiled run loop consume identical streams.

Per shown position the kernel draws one uniform for accept-vs-not and, only
if the message was not accepted, one more for abandon-vs-continue.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConstraintViolation
from .links import logistic_link
from .model import EnvironmentParams, MessageCatalog, validate_sequence

ACCEPTED, ABANDONED, EXHAUSTED = 0, 1, 2


class Terminal(enum.IntEnum):
    ACCEPTED = ACCEPTED
    ABANDONED = ABANDONED
    EXHAUSTED = EXHAUSTED


@dataclass(frozen=True)
class EpisodeOutcome:
    shown: tuple[int, ...]
    terminal: Terminal
    payoff: float

    @property
    def accepted(self) -> int | None:
        return self.shown[-1] if self.terminal is Terminal.ACCEPTED else None

    @property
    def skips(self) -> int:
        """Shown messages turned down without abandoning."""
        if self.terminal is Terminal.EXHAUSTED:
            return len(self.shown)
        return len(self.shown) - 1

    @property
    def abandons(self) -> int:
        return int(self.terminal is Terminal.ABANDONED)


@numba.njit(cache=True)
def sample_episode(seq, u, q, rng):
    """Return ``(number shown, terminal code)``."""
    m = seq.shape[0]
    for pos in range(m):
        if rng.random() < u[seq[pos]]:
            return pos + 1, ACCEPTED
        if rng.random() >= q:
            return pos + 1, ABANDONED
    return m, EXHAUSTED


@numba.njit(cache=True)
def sample_episode_patience(seq, u, q, rng):
    """Same law as ``sample_episode`` but with patience W drawn up front."""
    m = seq.shape[0]
    if q <= 0.0:
        w = 1
    elif q >= 1.0:
        w = m + 1
    else:
        w = rng.geometric(1.0 - q)
    for pos in range(m):
        if rng.random() < u[seq[pos]]:
            return pos + 1, ACCEPTED
        if pos + 1 == w:
            return pos + 1, ABANDONED
    return m, EXHAUSTED


@numba.njit(cache=True)
def outcome_counts(seq, u, q, rng, n_episodes, up_front):
    """Tally terminal events over many episodes.

    Returns an array of length ``len(seq) + 2``: accepts at each position,
    then abandonments, then exhausted episodes.
    """
    m = seq.shape[0]
    counts = np.zeros(m + 2, dtype=np.int64)
    for _ in range(n_episodes):
        if up_front:
            shown, term = sample_episode_patience(seq, u, q, rng)
        else:
            shown, term = sample_episode(seq, u, q, rng)
        if term == ACCEPTED:
            counts[shown - 1] += 1
        elif term == ABANDONED:
            counts[m] += 1
        else:
            counts[m + 1] += 1
    return counts


def _outcome(seq, shown, term, revenues, cost) -> EpisodeOutcome:
    terminal = Terminal(term)
    if terminal is Terminal.ACCEPTED:
        payoff = float(revenues[seq[shown - 1]])
    elif terminal is Terminal.ABANDONED:
        payoff = -cost
    else:
        payoff = 0.0
    return EpisodeOutcome(tuple(seq[:shown]), terminal, payoff)


def run_episode(
    catalog: MessageCatalog,
    env: EnvironmentParams,
    seq,
    rng: np.random.Generator,
) -> EpisodeOutcome:
    env.check_catalog(catalog)
    seq = validate_sequence(seq, catalog.n)
    arr = np.array(seq, dtype=np.int64)
    shown, term = sample_episode(arr, env.valuations, env.continue_prob, rng)
    return _outcome(seq, shown, term, catalog.revenues, env.abandon_cost)


@dataclass(frozen=True)
class FeatureBox:
    """Uniform box for the non-intercept features; vectors get a leading 1."""

    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        if len(self.low) != len(self.high) or not self.low:
            raise ConstraintViolation("feature box needs matching nonempty bounds")
        for a, b in zip(self.low, self.high):
            if not (np.isfinite(a) and np.isfinite(b) and a <= b):
                raise ConstraintViolation(f"invalid feature range [{a}, {b}]")

    @classmethod
    def unit(cls, k: int) -> "FeatureBox":
        return cls((0.0,) * k, (1.0,) * k)

    @property
    def dim(self) -> int:
        """Feature dimension including the intercept."""
        return len(self.low) + 1


def sample_features(box: FeatureBox, rng: np.random.Generator, size: int | None = None):
    """Draw ``(1, z_1, ..., z_k)`` with z uniform on the box.

    With ``size`` given, returns a ``(size, dim)`` array whose rows equal what
    ``size`` successive single draws would produce.
    """
    shape = (len(box.low),) if size is None else (size, len(box.low))
    z = rng.uniform(box.low, box.high, size=shape)
    ones = np.ones(shape[:-1] + (1,))
    return np.concatenate((ones, z), axis=-1)


@dataclass(frozen=True)
class ContextualEnvironment:
    alpha: np.ndarray
    betas: np.ndarray
    abandon_cost: float
    features: FeatureBox

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64).copy()
        b = np.atleast_2d(np.asarray(self.betas, dtype=np.float64)).copy()
        if a.ndim != 1 or b.shape[1] != a.size:
            raise ConstraintViolation("alpha and every beta_i must share dimension d")
        if self.features.dim != a.size:
            raise ConstraintViolation(
                f"feature box gives dimension {self.features.dim}, coefficients have {a.size}"
            )
        if not np.isfinite(self.abandon_cost) or self.abandon_cost < 0:
            raise ConstraintViolation("abandon_cost must be finite and >= 0")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "betas", b)

    @property
    def dim(self) -> int:
        return self.alpha.size

    def check_features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ConstraintViolation(f"feature vector of shape {x.shape}, need ({self.dim},)")
        return x

    def valuations(self, x) -> np.ndarray:
        return logistic_link(self.betas @ self.check_features(x))

    def continue_prob(self, x) -> float:
        return logistic_link(float(self.alpha @ self.check_features(x)))

    def at(self, x) -> EnvironmentParams:
        """Non-contextual parameters seen by a user with features ``x``.

        Only valid while every ``u_i(x) < 1`` in floating point.
        """
        return EnvironmentParams(self.valuations(x), 1.0 - self.continue_prob(x), self.abandon_cost)


def run_contextual_episode(
    catalog: MessageCatalog,
    ctx: ContextualEnvironment,
    x,
    seq,
    rng: np.random.Generator,
) -> EpisodeOutcome:
    x = ctx.check_features(x)
    if ctx.betas.shape[0] != catalog.n:
        raise ConstraintViolation("one beta per catalog message required")
    seq = validate_sequence(seq, catalog.n)
    arr = np.array(seq, dtype=np.int64)
    shown, term = sample_episode(arr, ctx.valuations(x), ctx.continue_prob(x), rng)
    return _outcome(seq, shown, term, catalog.revenues, ctx.abandon_cost)
