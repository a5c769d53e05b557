"""UCB learner that estimates valuations and patience together, plus the
explore-then-exploit benchmarks.

Counters follow the feedback a platform actually sees: every shown message
adds a view; the last one is accepted, or abandoned on, or (if the user
turned it down and stayed) counted as a skip. Hence
``sum(views) == sum(accepts) + n_e + n_a`` after any history.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .model import MessageCatalog
from .optimizer import order_by_score, order_with_head, sequence_payoff
from .simulator import ABANDONED, ACCEPTED, EpisodeOutcome, sample_episode

ALGORITHM1, BENCHMARK1, BENCHMARK2 = 0, 1, 2
POLICY_CODES = {"algorithm1": ALGORITHM1, "benchmark1": BENCHMARK1, "benchmark2": BENCHMARK2}

Runner = Callable[[tuple], EpisodeOutcome]


@dataclass
class LearnerState:
    """Feedback counters after ``t`` users.

    ``turn_downs`` holds ``[n_e, n_a]``: skips without abandonment and
    abandonments.
    """

    views: np.ndarray
    accepts: np.ndarray
    turn_downs: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    t: int = 0

    @classmethod
    def empty(cls, n: int) -> "LearnerState":
        return cls(np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))

    @property
    def n_e(self) -> int:
        return int(self.turn_downs[0])

    @property
    def n_a(self) -> int:
        return int(self.turn_downs[1])

    @property
    def n_q(self) -> int:
        return self.n_e + self.n_a

    def record(self, outcome: EpisodeOutcome) -> None:
        seq = np.array(outcome.shown, dtype=np.int64)
        record_episode(seq, len(seq), int(outcome.terminal), self.views, self.accepts, self.turn_downs)
        self.t += 1

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "views": self.views.tolist(),
            "accepts": self.accepts.tolist(),
            "n_e": self.n_e,
            "n_a": self.n_a,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerState":
        return cls(
            np.array(d["views"], dtype=np.int64),
            np.array(d["accepts"], dtype=np.int64),
            np.array([d["n_e"], d["n_a"]], dtype=np.int64),
            int(d["t"]),
        )


@dataclass(frozen=True)
class UcbView:
    u: np.ndarray
    q: float


@numba.njit(cache=True)
def record_episode(seq, shown, term, views, accepts, turn_downs):
    for pos in range(shown):
        views[seq[pos]] += 1
    if shown == 0:
        return
    if term == ACCEPTED:
        accepts[seq[shown - 1]] += 1
        turn_downs[0] += shown - 1
    elif term == ABANDONED:
        turn_downs[0] += shown - 1
        turn_downs[1] += 1
    else:
        turn_downs[0] += shown


@numba.njit(cache=True)
def ucb_values(accepts, views, n_e, n_a, t):
    log_t = math.log(t) if t >= 1 else 0.0
    u = np.ones(views.shape[0])
    for i in range(views.shape[0]):
        if views[i] > 0:
            u[i] = min(1.0, accepts[i] / views[i] + math.sqrt(2.0 * log_t / views[i]))
    n_q = n_e + n_a
    q = 1.0
    if n_q > 0:
        q = min(1.0, n_e / n_q + math.sqrt(2.0 * log_t / n_q))
    return u, q


@numba.njit(cache=True)
def point_values(accepts, views, n_e, n_a):
    """Point estimates with unobserved quantities optimistically set to 1."""
    u = np.ones(views.shape[0])
    for i in range(views.shape[0]):
        if views[i] > 0:
            u[i] = accepts[i] / views[i]
    q = 1.0
    if n_e + n_a > 0:
        q = n_e / (n_e + n_a)
    return u, q


@numba.njit(cache=True)
def decide(policy, r, c, gamma, views, accepts, turn_downs, t):
    """Sequence for the user arriving after ``t`` completed episodes.

    Returns ``(sequence, learn)``; benchmarks only learn from exploration
    episodes, the UCB policy learns from every episode.
    """
    if policy == ALGORITHM1:
        u, q = ucb_values(accepts, views, turn_downs[0], turn_downs[1], t)
        return order_by_score(r, u, q, c), True
    u, q = point_values(accepts, views, turn_downs[0], turn_downs[1])
    j = np.argmin(views)
    if views[j] < gamma * math.log(t + 1):
        if policy == BENCHMARK1:
            return np.array([j], dtype=np.int64), True
        return order_with_head(r, u, q, c, j), True
    return order_by_score(r, u, q, c), False


@numba.njit(cache=True)
def run_policy(policy, r, u_true, q_true, c, gamma, views, accepts, turn_downs, t0, steps,
               rng, opt_payoff, regret_out):
    """Run ``steps`` users against the true model, writing per-user regret."""
    for s in range(steps):
        seq, learn = decide(policy, r, c, gamma, views, accepts, turn_downs, t0 + s)
        regret_out[s] = opt_payoff - sequence_payoff(seq, r, u_true, q_true, c)
        shown, term = sample_episode(seq, u_true, q_true, rng)
        if learn:
            record_episode(seq, shown, term, views, accepts, turn_downs)


def point_estimates(state: LearnerState) -> tuple[np.ndarray, float]:
    """Ratio estimators ``c_i / T_i`` and ``n_e / N_q``; NaN where undefined."""
    with np.errstate(invalid="ignore", divide="ignore"):
        u_hat = np.where(state.views > 0, state.accepts / np.maximum(state.views, 1), np.nan)
    q_hat = state.n_e / state.n_q if state.n_q > 0 else math.nan
    return u_hat, q_hat


def ucb_view(state: LearnerState) -> UcbView:
    u, q = ucb_values(state.accepts, state.views, state.n_e, state.n_a, state.t)
    return UcbView(u, q)


def _step(policy, state, catalog, cost, gamma, runner):
    seq, learn = decide(policy, catalog.revenues, float(cost), float(gamma),
                        state.views, state.accepts, state.turn_downs, state.t)
    seq = tuple(int(i) for i in seq)
    outcome = runner(seq)
    if learn:
        state.record(outcome)
    else:
        state.t += 1
    return seq, outcome, state


def algorithm1_step(state: LearnerState, catalog: MessageCatalog, cost: float, runner: Runner):
    """Offer the optimal sequence under the current UCBs, then update counters.

    ``state`` is updated in place and also returned.
    """
    return _step(ALGORITHM1, state, catalog, cost, 1.0, runner)


def benchmark1_step(state: LearnerState, catalog: MessageCatalog, cost: float,
                    runner: Runner, gamma: float = 1.0):
    """Singleton exploration of any message seen fewer than ``gamma*ln(t)`` times,
    otherwise the optimal sequence under the point estimates.

    Counters only change on exploration steps.
    """
    return _step(BENCHMARK1, state, catalog, cost, gamma, runner)


def benchmark2_step(state: LearnerState, catalog: MessageCatalog, cost: float,
                    runner: Runner, gamma: float = 1.0):
    """Like benchmark 1, but exploration puts the message in front of the
    greedy sequence instead of showing it alone."""
    return _step(BENCHMARK2, state, catalog, cost, gamma, runner)
