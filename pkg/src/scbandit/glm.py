"""Contextual learner: logistic valuations ``u_i(x) = mu(beta_i.x)`` and
patience ``q(x) = mu(alpha.x)``, fitted by ridge-penalized quasi-MLE, with
GLM-UCB exploration bonuses ``sqrt(2 ln t) * ||x||_{M^-1}``.

Observation logs are flat arrays of rows ``(user, group, successes, trials)``
pointing into a user-feature table. Message ``i`` logs one Bernoulli row
(accepted?) per view. The patience model logs one binomial row per user who
turned down at least one message: ``successes`` skips out of ``trials``
turn-downs, the final one being the abandonment if it happened.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .errors import EstimationError
from .linalg import cho_solve, cholesky, inv_quad
from .links import dot, logistic_link, mu
from .model import MessageCatalog
from .optimizer import order_by_score, order_with_head, sequence_payoff
from .simulator import ABANDONED, ACCEPTED, EpisodeOutcome, sample_episode
from .ucb import BENCHMARK1, BENCHMARK2

ALGORITHM2 = 3

__all__ = [
    "logistic_link",
    "quasi_mle",
    "GlmLearnerState",
    "glm_ucb_values",
    "algorithm2_step",
    "contextual_benchmark_step",
]

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
MAX_NEWTON_STEP = 10.0
FULL_REFIT_UNTIL = 1000

FIT_OK, FIT_MAX_ITER, FIT_NONFINITE = 0, 1, 2


@numba.njit(cache=True)
def irls_grouped(X, row_user, row_group, row_succ, row_trials, n_rows, lam, beta,
                 tol, max_iter):
    """Newton iterations on the penalized log-likelihood, many models at once.

    Maximizes, for each group g,
        sum_rows [s log mu(b.x) + (n - s) log(1 - mu(b.x))] - lam/2 |b|^2.
    ``beta`` (groups x d) is the warm start and receives the fit only if
    every update stays finite. Returns a status code.
    """
    n_groups, d = beta.shape
    b = beta.copy()
    active = np.ones(n_groups, dtype=np.bool_)
    status = FIT_MAX_ITER
    for _ in range(max_iter):
        grad = -lam * b
        hess = np.zeros((n_groups, d, d))
        for g in range(n_groups):
            for j in range(d):
                hess[g, j, j] = lam
        for k in range(n_rows):
            g = row_group[k]
            if not active[g]:
                continue
            x = X[row_user[k]]
            p = mu(dot(b[g], x))
            resid = row_succ[k] - row_trials[k] * p
            w = row_trials[k] * p * (1.0 - p)
            for j in range(d):
                grad[g, j] += resid * x[j]
                for l in range(j + 1):
                    hess[g, j, l] += w * x[j] * x[l]
        any_active = False
        for g in range(n_groups):
            if not active[g]:
                continue
            for j in range(d):
                for l in range(j):
                    hess[g, l, j] = hess[g, j, l]
            L, ok = cholesky(hess[g])
            if not ok:
                return FIT_NONFINITE
            step = cho_solve(L, grad[g])
            size = np.max(np.abs(step))
            if not math.isfinite(size):
                return FIT_NONFINITE
            if size > MAX_NEWTON_STEP:
                step *= MAX_NEWTON_STEP / size
            b[g] += step
            if size < tol:
                active[g] = False
            else:
                any_active = True
        if not any_active:
            status = FIT_OK
            break
    beta[:] = b
    return status


def quasi_mle(observations, lam: float = 1.0, beta0=None) -> np.ndarray:
    """Ridge-penalized logistic MLE from ``(feature vector, 0/1 outcome)`` pairs."""
    X = np.array([np.asarray(x, dtype=np.float64) for x, _ in observations])
    y = np.array([float(o) for _, o in observations])
    if X.ndim != 2:
        raise ValueError("observations need feature vectors of one common dimension")
    if lam <= 0:
        raise ValueError("regularizer must be positive")
    n, d = X.shape
    beta = np.zeros((1, d)) if beta0 is None else np.array(beta0, dtype=np.float64).reshape(1, d)
    status = irls_grouped(
        X, np.arange(n), np.zeros(n, dtype=np.int64), y, np.ones(n), n, float(lam), beta,
        IRLS_TOL, IRLS_MAX_ITER,
    )
    if status == FIT_NONFINITE:
        raise EstimationError("quasi-MLE diverged")
    return beta[0]



@numba.njit(cache=True)
def ucb_from_estimates(M, M_ab, betas, alpha, lam, lam_ab, x, t):
    """Clamped GLM-UCB values; NaN entries flag a failed SPD solve."""
    rho = math.sqrt(2.0 * math.log(t)) if t >= 1 else 0.0
    n = betas.shape[0]
    u = np.empty(n)
    for i in range(n):
        u[i] = min(1.0, mu(dot(betas[i], x)) + rho * math.sqrt(inv_quad(M[i], x, lam)))
    q = min(1.0, mu(dot(alpha, x)) + rho * math.sqrt(inv_quad(M_ab, x, lam_ab)))
    return u, q


@numba.njit(cache=True)
def contextual_decide(policy, t, x, r, c, gamma, M, M_ab, betas, alpha, lam, lam_ab,
                      views, n_ab_rows):
    """Sequence for user ``t`` (1-based) and whether to learn from the episode."""
    n = r.shape[0]
    if policy == ALGORITHM2:
        if t <= n:
            return np.array([t - 1], dtype=np.int64), True
        u, q = ucb_from_estimates(M, M_ab, betas, alpha, lam, lam_ab, x, t)
        return order_by_score(r, u, q, c), True
    u = np.ones(n)
    for i in range(n):
        if views[i] > 0:
            u[i] = mu(dot(betas[i], x))
    q = mu(dot(alpha, x)) if n_ab_rows > 0 else 1.0
    j = np.argmin(views)
    if views[j] < gamma * math.log(t):
        if policy == BENCHMARK1:
            return np.array([j], dtype=np.int64), True
        return order_with_head(r, u, q, c, j), True
    return order_by_score(r, u, q, c), False


@numba.njit(cache=True)
def contextual_record(user, x, seq, shown, term, M, M_ab, views, v_user, v_group, v_succ,
                      v_trials, n_v, a_user, a_succ, a_trials, n_a):
    """Append one episode's rows; returns the new row counts.

    The caller guarantees capacity for ``shown`` more view rows and one
    patience row.
    """
    d = x.shape[0]
    for pos in range(shown):
        i = seq[pos]
        views[i] += 1
        for j in range(d):
            for l in range(d):
                M[i, j, l] += x[j] * x[l]
        v_user[n_v] = user
        v_group[n_v] = i
        v_succ[n_v] = 1.0 if (term == ACCEPTED and pos == shown - 1) else 0.0
        v_trials[n_v] = 1.0
        n_v += 1
    turned_down = shown - 1 if term == ACCEPTED else shown
    if turned_down > 0:
        for j in range(d):
            for l in range(d):
                M_ab[j, l] += turned_down * x[j] * x[l]
        a_user[n_a] = user
        a_succ[n_a] = turned_down - 1.0 if term == ABANDONED else float(turned_down)
        a_trials[n_a] = float(turned_down)
        n_a += 1
    return n_v, n_a


@numba.njit(cache=True)
def refit(X, v_user, v_group, v_succ, v_trials, n_v, a_user, a_succ, a_trials, n_a,
          betas, alpha, lam, lam_ab):
    s1 = irls_grouped(X, v_user, v_group, v_succ, v_trials, n_v, lam, betas,
                      IRLS_TOL, IRLS_MAX_ITER)
    a = alpha.reshape(1, alpha.shape[0])
    a_group = np.zeros(n_a, dtype=np.int64)
    s2 = irls_grouped(X, a_user, a_group, a_succ, a_trials, n_a, lam_ab, a,
                      IRLS_TOL, IRLS_MAX_ITER)
    alpha[:] = a[0]
    return max(s1, s2)


@numba.njit(cache=True)
def refit_due(t, next_refit, every_step):
    return every_step or t <= FULL_REFIT_UNTIL or t >= next_refit


@dataclass
class GlmLearnerState:
    """Design matrices, fitted coefficients and observation logs.

    ``t`` counts users already served. Arrays carry spare capacity; only the
    first ``n_users`` / ``n_view_rows`` / ``n_ab_rows`` entries are live.
    """

    M: np.ndarray
    M_ab: np.ndarray
    betas: np.ndarray
    alpha: np.ndarray
    views: np.ndarray
    X: np.ndarray
    v_user: np.ndarray
    v_group: np.ndarray
    v_succ: np.ndarray
    v_trials: np.ndarray
    a_user: np.ndarray
    a_succ: np.ndarray
    a_trials: np.ndarray
    lam: float = 1.0
    lam_ab: float = 1.0
    every_step: bool = False
    t: int = 0
    n_view_rows: int = 0
    n_ab_rows: int = 0
    next_refit: int = 0
    failed_fits: int = 0

    @classmethod
    def empty(cls, n: int, d: int, lam: float = 1.0, lam_ab: float = 1.0,
              every_step: bool = False, capacity: int = 1024) -> "GlmLearnerState":
        if lam <= 0 or lam_ab <= 0:
            raise ValueError("regularizers must be positive")
        return cls(
            M=np.tile(lam * np.eye(d), (n, 1, 1)),
            M_ab=lam_ab * np.eye(d),
            betas=np.zeros((n, d)),
            alpha=np.zeros(d),
            views=np.zeros(n, dtype=np.int64),
            X=np.zeros((capacity, d)),
            v_user=np.zeros(capacity, dtype=np.int64),
            v_group=np.zeros(capacity, dtype=np.int64),
            v_succ=np.zeros(capacity),
            v_trials=np.zeros(capacity),
            a_user=np.zeros(capacity, dtype=np.int64),
            a_succ=np.zeros(capacity),
            a_trials=np.zeros(capacity),
            lam=float(lam),
            lam_ab=float(lam_ab),
            every_step=every_step,
        )

    @property
    def n(self) -> int:
        return self.betas.shape[0]

    @property
    def d(self) -> int:
        return self.alpha.shape[0]

    def reserve(self, users: int, view_rows: int) -> None:
        """Grow the logs so they can take the given number of extra entries."""
        def grow(arr, need):
            if need <= arr.shape[0]:
                return arr
            new = np.zeros((max(need, 2 * arr.shape[0]),) + arr.shape[1:], dtype=arr.dtype)
            new[: arr.shape[0]] = arr
            return new

        self.X = grow(self.X, self.t + users)
        for name in ("a_user", "a_succ", "a_trials"):
            setattr(self, name, grow(getattr(self, name), self.n_ab_rows + users))
        for name in ("v_user", "v_group", "v_succ", "v_trials"):
            setattr(self, name, grow(getattr(self, name), self.n_view_rows + view_rows))

    def maybe_refit(self, t: int) -> bool:
        """Refit if the cadence says so before serving user ``t``; False on failure."""
        if not refit_due(t, self.next_refit, self.every_step):
            return True
        self.next_refit = t + math.ceil(t / 100)
        status = refit(
            self.X, self.v_user, self.v_group, self.v_succ, self.v_trials, self.n_view_rows,
            self.a_user, self.a_succ, self.a_trials, self.n_ab_rows,
            self.betas, self.alpha, self.lam, self.lam_ab,
        )
        if status == FIT_NONFINITE:
            self.failed_fits += 1
            return False
        return True

    def record(self, x, outcome: EpisodeOutcome) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.reserve(1, len(outcome.shown))
        self.X[self.t] = x
        seq = np.array(outcome.shown, dtype=np.int64)
        self.n_view_rows, self.n_ab_rows = contextual_record(
            self.t, x, seq, len(seq), int(outcome.terminal), self.M, self.M_ab, self.views,
            self.v_user, self.v_group, self.v_succ, self.v_trials, self.n_view_rows,
            self.a_user, self.a_succ, self.a_trials, self.n_ab_rows,
        )
        self.t += 1

    def point_estimates(self, x) -> tuple[np.ndarray, float]:
        x = np.asarray(x, dtype=np.float64)
        return logistic_link(self.betas @ x), logistic_link(float(self.alpha @ x))

    def to_dict(self) -> dict:
        nv, na, nu = self.n_view_rows, self.n_ab_rows, self.t
        return {
            "t": self.t,
            "lam": self.lam,
            "lam_ab": self.lam_ab,
            "every_step": self.every_step,
            "next_refit": self.next_refit,
            "failed_fits": self.failed_fits,
            "betas": self.betas.tolist(),
            "alpha": self.alpha.tolist(),
            "M": self.M.tolist(),
            "M_ab": self.M_ab.tolist(),
            "views": self.views.tolist(),
            "X": self.X[:nu].tolist(),
            "view_rows": [self.v_user[:nv].tolist(), self.v_group[:nv].tolist(),
                          self.v_succ[:nv].tolist(), self.v_trials[:nv].tolist()],
            "abandon_rows": [self.a_user[:na].tolist(), self.a_succ[:na].tolist(),
                             self.a_trials[:na].tolist()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlmLearnerState":
        betas = np.array(d["betas"], dtype=np.float64)
        n, dim = betas.shape
        st = cls.empty(n, dim, d["lam"], d["lam_ab"], d["every_step"], capacity=1)
        st.betas = betas
        st.alpha = np.array(d["alpha"], dtype=np.float64)
        st.M = np.array(d["M"], dtype=np.float64)
        st.M_ab = np.array(d["M_ab"], dtype=np.float64)
        st.views = np.array(d["views"], dtype=np.int64)
        st.X = np.array(d["X"], dtype=np.float64).reshape(-1, dim)
        vu, vg, vs, vt = d["view_rows"]
        st.v_user, st.v_group = np.array(vu, dtype=np.int64), np.array(vg, dtype=np.int64)
        st.v_succ, st.v_trials = np.array(vs, dtype=np.float64), np.array(vt, dtype=np.float64)
        au, as_, at = d["abandon_rows"]
        st.a_user = np.array(au, dtype=np.int64)
        st.a_succ, st.a_trials = np.array(as_, dtype=np.float64), np.array(at, dtype=np.float64)
        st.t, st.n_view_rows, st.n_ab_rows = d["t"], len(vu), len(au)
        st.next_refit, st.failed_fits = d["next_refit"], d["failed_fits"]
        return st


def glm_ucb_values(state: GlmLearnerState, x, t: int) -> tuple[np.ndarray, float]:
    x = np.asarray(x, dtype=np.float64)
    u, q = ucb_from_estimates(state.M, state.M_ab, state.betas, state.alpha,
                              state.lam, state.lam_ab, x, t)
    if np.isnan(q) or np.isnan(u).any():
        raise EstimationError("design matrix lost positive definiteness")
    return u, q


Runner = Callable[[tuple], EpisodeOutcome]


def _contextual_step(policy, state, catalog, cost, x, runner, gamma):
    t = state.t + 1
    x = np.asarray(x, dtype=np.float64)
    if policy != ALGORITHM2 or t > catalog.n:
        state.maybe_refit(t)
    seq, learn = contextual_decide(
        policy, t, x, catalog.revenues, float(cost), float(gamma), state.M, state.M_ab,
        state.betas, state.alpha, state.lam, state.lam_ab, state.views, state.n_ab_rows,
    )
    seq = tuple(int(i) for i in seq)
    outcome = runner(seq)
    if learn:
        state.record(x, outcome)
    else:
        state.reserve(1, 0)
        state.X[state.t] = x
        state.t += 1
    return seq, outcome, state


def algorithm2_step(state: GlmLearnerState, catalog: MessageCatalog, cost: float, x,
                    runner: Runner):
    """Serve one user with GLM-UCB.

    The first ``N`` users each get a single message (user ``j`` gets message
    ``j``); afterwards the coefficients are refreshed per the refit cadence and
    the user gets the optimal sequence under the optimistic ``u(x), q(x)``.
    A failed refit keeps the previous coefficients.
    """
    return _contextual_step(ALGORITHM2, state, catalog, cost, x, runner, 1.0)


def contextual_benchmark_step(state: GlmLearnerState, catalog: MessageCatalog, cost: float,
                              x, runner: Runner, variant: int = 1, gamma: float = 1.0):
    """Benchmark 1 or 2 with per-context point estimates ``mu(beta_i.x)``."""
    policy = {1: BENCHMARK1, 2: BENCHMARK2}[variant]
    return _contextual_step(policy, state, catalog, cost, x, runner, gamma)


@numba.njit(cache=True)
def run_contextual_chunk(policy, r, c, gamma, alpha_true, betas_true, X_all, t0, steps,
                         rng, M, M_ab, betas, alpha, lam, lam_ab, views, X,
                         v_user, v_group, v_succ, v_trials, n_v, a_user, a_succ, a_trials,
                         n_a, next_refit, every_step, regret_out):
    """Compiled counterpart of repeated ``_contextual_step`` calls.

    ``X_all[k]`` is the feature vector of user ``k + 1``. Returns the updated
    ``(n_v, n_a, next_refit, failed_fits)``.
    """
    n = r.shape[0]
    failed = 0
    u_true = np.empty(n)
    for s in range(steps):
        t = t0 + s + 1
        x = X_all[t - 1]
        if (policy != ALGORITHM2 or t > n) and refit_due(t, next_refit, every_step):
            next_refit = t + (t + 99) // 100
            if refit(X, v_user, v_group, v_succ, v_trials, n_v, a_user, a_succ, a_trials,
                     n_a, betas, alpha, lam, lam_ab) == FIT_NONFINITE:
                failed += 1
        seq, learn = contextual_decide(policy, t, x, r, c, gamma, M, M_ab, betas, alpha,
                                       lam, lam_ab, views, n_a)
        for i in range(n):
            u_true[i] = mu(dot(betas_true[i], x))
        q_true = mu(dot(alpha_true, x))
        best = order_by_score(r, u_true, q_true, c)
        regret_out[s] = (sequence_payoff(best, r, u_true, q_true, c)
                         - sequence_payoff(seq, r, u_true, q_true, c))
        shown, term = sample_episode(seq, u_true, q_true, rng)
        X[t - 1] = x
        if learn:
            n_v, n_a = contextual_record(t - 1, x, seq, shown, term, M, M_ab, views,
                                         v_user, v_group, v_succ, v_trials, n_v,
                                         a_user, a_succ, a_trials, n_a)
    return n_v, n_a, next_refit, failed
