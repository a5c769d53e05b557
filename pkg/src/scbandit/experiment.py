"""Replicated, seeded regret simulations.

Randomness layout (numpy PCG64 fed by ``SeedSequence``): replication ``k``
draws its instance from ``spawn_key=(k, 0)``, user features from ``(k, 1)``
and each policy's episodes from ``(k, 2, policy_code)``. Policies in the same
replication therefore face the same instance and the same users, and a
policy's curve does not depend on which other policies are configured.
With ``shared_instance`` every replication uses the instance of key
``(0, 0)``.

Regret is always computed from exact expected payoffs, never from sampled
ones.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError
from .glm import ALGORITHM2, GlmLearnerState, run_contextual_chunk
from .model import EnvironmentParams, MessageCatalog
from .optimizer import order_by_score, sequence_payoff
from .simulator import ContextualEnvironment, FeatureBox, sample_features
from .ucb import POLICY_CODES as _UCB_CODES
from .ucb import LearnerState, run_policy

log = logging.getLogger(__name__)

POLICY_CODES = {**_UCB_CODES, "algorithm2": ALGORITHM2}
POLICY_PARAMS = {
    "algorithm1": set(),
    "benchmark1": {"gamma", "lambda", "lambda_abandon", "refit"},
    "benchmark2": {"gamma", "lambda", "lambda_abandon", "refit"},
    "algorithm2": {"lambda", "lambda_abandon", "refit"},
}
CONTEXT_CHUNK = 2000


@dataclass(frozen=True)
class PolicySpec:
    name: str
    gamma: float = 1.0
    lam: float = 1.0
    lam_abandon: float = 1.0
    refit: str = "cadence"

    @property
    def code(self) -> int:
        return POLICY_CODES[self.name]

    def to_dict(self, contextual: bool) -> dict:
        d = {"name": self.name}
        params = POLICY_PARAMS[self.name]
        if "gamma" in params:
            d["gamma"] = self.gamma
        if contextual and "lambda" in params:
            d.update({"lambda": self.lam, "lambda_abandon": self.lam_abandon, "refit": self.refit})
        return d


@dataclass(frozen=True)
class ContextualSpec:
    alpha: tuple[float, ...]
    beta_low: tuple[float, ...]
    beta_high: tuple[float, ...]
    feature_low: tuple[float, ...]
    feature_high: tuple[float, ...]
    abandon_cost: float


@dataclass(frozen=True)
class ExperimentConfig:
    horizon: int
    replications: int
    seed: int
    policies: tuple[PolicySpec, ...]
    n_messages: int
    revenue_range: tuple[float, float] | None = None
    revenues: tuple[float, ...] | None = None
    valuation_range: tuple[float, float] | None = None
    valuations: tuple[float, ...] | None = None
    abandon_prob: float | None = None
    abandon_cost: float | None = None
    contextual: ContextualSpec | None = None
    shared_instance: bool = False
    record_stride: int = 1
    name: str = "experiment"

    @property
    def is_contextual(self) -> bool:
        return self.contextual is not None

    def to_dict(self) -> dict:
        catalog = {"n": self.n_messages}
        if self.revenues is not None:
            catalog["revenues"] = list(self.revenues)
        else:
            catalog["revenue_range"] = list(self.revenue_range)
        d = {
            "name": self.name,
            "horizon": self.horizon,
            "replications": self.replications,
            "seed": self.seed,
            "shared_instance": self.shared_instance,
            "record_stride": self.record_stride,
            "catalog": catalog,
        }
        if self.contextual is None:
            env = {"abandon_prob": self.abandon_prob, "abandon_cost": self.abandon_cost}
            if self.valuations is not None:
                env["valuations"] = list(self.valuations)
            else:
                env["valuation_range"] = list(self.valuation_range)
            d["environment"] = env
        else:
            d["contextual"] = {k: list(v) if isinstance(v, tuple) else v
                               for k, v in dataclasses.asdict(self.contextual).items()}
        d["policies"] = [p.to_dict(self.is_contextual) for p in self.policies]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------- parsing

def _keys(section: dict, where: str, allowed: set, required: set = frozenset()) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(section)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _range(value, where: str, lo: float = -math.inf, hi: float = math.inf) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected [low, high]") from None
    if not (lo <= a <= b <= hi):
        raise ConfigError(f"{where}: need {lo} <= low <= high <= {hi}, got [{a}, {b}]")
    return a, b


def _vector(value, where: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vec = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a list of numbers") from None
    if n is not None and len(vec) != n:
        raise ConfigError(f"{where}: expected {n} values, got {len(vec)}")
    if not all(math.isfinite(v) for v in vec):
        raise ConfigError(f"{where}: values must be finite")
    return vec


def _positive_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{where}: expected an integer >= 1, got {value!r}")
    return value


def _policy(raw, k: int, contextual: bool) -> PolicySpec:
    where = f"policies[{k}]"
    if isinstance(raw, str):
        raw = {"name": raw}
    if not isinstance(raw, dict) or "name" not in raw:
        raise ConfigError(f"{where}: expected a mapping with a name")
    name = raw["name"]
    if name not in POLICY_PARAMS:
        raise ConfigError(f"{where}: unknown policy {name!r}")
    if name == "algorithm1" and contextual:
        raise ConfigError(f"{where}: algorithm1 needs a non-contextual environment")
    if name == "algorithm2" and not contextual:
        raise ConfigError(f"{where}: algorithm2 needs a contextual environment")
    allowed = POLICY_PARAMS[name] if contextual else POLICY_PARAMS[name] - {"lambda", "lambda_abandon", "refit"}
    _keys(raw, where, allowed | {"name"})
    spec = PolicySpec(
        name=name,
        gamma=float(raw.get("gamma", 1.0)),
        lam=float(raw.get("lambda", 1.0)),
        lam_abandon=float(raw.get("lambda_abandon", 1.0)),
        refit=raw.get("refit", "cadence"),
    )
    if spec.gamma <= 0 or spec.lam <= 0 or spec.lam_abandon <= 0:
        raise ConfigError(f"{where}: gamma and regularizers must be positive")
    if spec.refit not in ("cadence", "every_step"):
        raise ConfigError(f"{where}: refit must be 'cadence' or 'every_step'")
    return spec


def parse_config(raw: dict) -> ExperimentConfig:
    top = {"name", "horizon", "replications", "seed", "shared_instance", "record_stride",
           "catalog", "environment", "contextual", "policies"}
    _keys(raw, "config", top, {"horizon", "replications", "seed", "catalog", "policies"})
    if ("environment" in raw) == ("contextual" in raw):
        raise ConfigError("config: give exactly one of 'environment' or 'contextual'")

    cat = raw["catalog"]
    _keys(cat, "catalog", {"n", "revenues", "revenue_range"}, {"n"})
    n = _positive_int(cat["n"], "catalog.n")
    if ("revenues" in cat) == ("revenue_range" in cat):
        raise ConfigError("catalog: give exactly one of 'revenues' or 'revenue_range'")
    kw = {}
    if "revenues" in cat:
        kw["revenues"] = _vector(cat["revenues"], "catalog.revenues", n)
        if min(kw["revenues"]) < 0:
            raise ConfigError("catalog.revenues: must be nonnegative")
    else:
        kw["revenue_range"] = _range(cat["revenue_range"], "catalog.revenue_range", lo=0.0)

    contextual = "contextual" in raw
    if not contextual:
        env = raw["environment"]
        _keys(env, "environment", {"valuations", "valuation_range", "abandon_prob", "abandon_cost"},
              {"abandon_prob", "abandon_cost"})
        if ("valuations" in env) == ("valuation_range" in env):
            raise ConfigError("environment: give exactly one of 'valuations' or 'valuation_range'")
        if "valuations" in env:
            kw["valuations"] = _vector(env["valuations"], "environment.valuations", n)
            if not all(0 <= v < 1 for v in kw["valuations"]):
                raise ConfigError("environment.valuations: must lie in [0, 1)")
        else:
            kw["valuation_range"] = _range(env["valuation_range"], "environment.valuation_range", 0.0, 1.0)
        kw["abandon_prob"] = float(env["abandon_prob"])
        kw["abandon_cost"] = float(env["abandon_cost"])
        if not 0 <= kw["abandon_prob"] <= 1:
            raise ConfigError("environment.abandon_prob: must lie in [0, 1]")
        if not kw["abandon_cost"] >= 0:
            raise ConfigError("environment.abandon_cost: must be >= 0")
    else:
        ctx = raw["contextual"]
        fields = {"alpha", "beta_low", "beta_high", "feature_low", "feature_high", "abandon_cost"}
        _keys(ctx, "contextual", fields, fields)
        alpha = _vector(ctx["alpha"], "contextual.alpha")
        d = len(alpha)
        if d < 1:
            raise ConfigError("contextual.alpha: needs at least the intercept")
        blo = _vector(ctx["beta_low"], "contextual.beta_low", d)
        bhi = _vector(ctx["beta_high"], "contextual.beta_high", d)
        flo = _vector(ctx["feature_low"], "contextual.feature_low", d - 1)
        fhi = _vector(ctx["feature_high"], "contextual.feature_high", d - 1)
        if d < 2:
            raise ConfigError("contextual: need at least one non-intercept feature")
        if any(a > b for a, b in zip(blo, bhi)) or any(a > b for a, b in zip(flo, fhi)):
            raise ConfigError("contextual: every low bound must be <= its high bound")
        cost = float(ctx["abandon_cost"])
        if not cost >= 0:
            raise ConfigError("contextual.abandon_cost: must be >= 0")
        kw["contextual"] = ContextualSpec(alpha, blo, bhi, flo, fhi, cost)

    policies = raw["policies"]
    if not isinstance(policies, list) or not policies:
        raise ConfigError("policies: expected a nonempty list")
    specs = tuple(_policy(p, k, contextual) for k, p in enumerate(policies))
    names = [p.name for p in specs]
    if len(set(names)) != len(names):
        raise ConfigError("policies: each policy may appear once")

    seed = raw["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: expected a nonnegative integer")
    shared = raw.get("shared_instance", False)
    if not isinstance(shared, bool):
        raise ConfigError("shared_instance: expected true/false")
    return ExperimentConfig(
        horizon=_positive_int(raw["horizon"], "horizon"),
        replications=_positive_int(raw["replications"], "replications"),
        seed=seed,
        policies=specs,
        n_messages=n,
        shared_instance=shared,
        record_stride=_positive_int(raw.get("record_stride", 1), "record_stride"),
        name=str(raw.get("name", "experiment")),
        **kw,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(raw)


# ---------------------------------------------------------------- running

def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class Instance:
    catalog: MessageCatalog
    env: EnvironmentParams | None = None
    ctx: ContextualEnvironment | None = None


def draw_instance(config: ExperimentConfig, replication: int) -> Instance:
    rng = stream(config.seed, 0 if config.shared_instance else replication, 0)
    n = config.n_messages
    if config.revenues is not None:
        revenues = np.array(config.revenues)
    else:
        revenues = rng.uniform(*config.revenue_range, size=n)
    catalog = MessageCatalog(revenues)
    if config.contextual is None:
        if config.valuations is not None:
            u = np.array(config.valuations)
        else:
            u = rng.uniform(*config.valuation_range, size=n)
        return Instance(catalog, env=EnvironmentParams(u, config.abandon_prob, config.abandon_cost))
    spec = config.contextual
    betas = rng.uniform(spec.beta_low, spec.beta_high, size=(n, len(spec.alpha)))
    box = FeatureBox(spec.feature_low, spec.feature_high)
    return Instance(catalog, ctx=ContextualEnvironment(np.array(spec.alpha), betas, spec.abandon_cost, box))


def run_noncontextual(policy: PolicySpec, inst: Instance, horizon: int,
                      rng: np.random.Generator) -> np.ndarray:
    r, env = inst.catalog.revenues, inst.env
    u, q, c = env.valuations, env.continue_prob, env.abandon_cost
    best = sequence_payoff(order_by_score(r, u, q, c), r, u, q, c)
    state = LearnerState.empty(inst.catalog.n)
    regret = np.empty(horizon)
    run_policy(policy.code, r, u, q, c, policy.gamma, state.views, state.accepts,
               state.turn_downs, 0, horizon, rng, best, regret)
    return regret


def run_contextual(policy: PolicySpec, inst: Instance, features: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    horizon, d = features.shape
    n, ctx = inst.catalog.n, inst.ctx
    st = GlmLearnerState.empty(n, d, policy.lam, policy.lam_abandon,
                               every_step=policy.refit == "every_step")
    regret = np.empty(horizon)
    for t0 in range(0, horizon, CONTEXT_CHUNK):
        steps = min(CONTEXT_CHUNK, horizon - t0)
        st.reserve(steps, steps * n)
        st.n_view_rows, st.n_ab_rows, st.next_refit, failed = run_contextual_chunk(
            policy.code, inst.catalog.revenues, ctx.abandon_cost, policy.gamma, ctx.alpha,
            ctx.betas, features, t0, steps, rng, st.M, st.M_ab, st.betas, st.alpha, st.lam,
            st.lam_ab, st.views, st.X, st.v_user, st.v_group, st.v_succ, st.v_trials,
            st.n_view_rows, st.a_user, st.a_succ, st.a_trials, st.n_ab_rows, st.next_refit,
            st.every_step, regret[t0:t0 + steps],
        )
        st.t += steps
        if failed:
            st.failed_fits += failed
            log.warning("%s: %d quasi-MLE refits failed; kept previous estimates",
                        policy.name, failed)
    return regret


def run_replication(config: ExperimentConfig, replication: int) -> dict[str, np.ndarray]:
    """Per-user instantaneous regret of every policy for one replication."""
    inst = draw_instance(config, replication)
    out = {}
    features = None
    if config.is_contextual:
        features = sample_features(inst.ctx.features, stream(config.seed, replication, 1),
                                   size=config.horizon)
    for policy in config.policies:
        rng = stream(config.seed, replication, 2, policy.code)
        if features is None:
            out[policy.name] = run_noncontextual(policy, inst, config.horizon, rng)
        else:
            out[policy.name] = run_contextual(policy, inst, features, rng)
    return out


@dataclass(frozen=True)
class RegretRecord:
    replication: int
    t: int
    policy: str
    inst_regret: float
    cum_regret: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    inst_regret: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def policies(self) -> list[str]:
        return [p.name for p in self.config.policies]

    def cumulative(self, policy: str) -> np.ndarray:
        return np.cumsum(self.inst_regret[policy], axis=1)

    def final_regret(self, policy: str) -> np.ndarray:
        """Cumulative regret at the horizon, one value per replication."""
        return self.cumulative(policy)[:, -1]

    def aggregate(self, policy: str) -> tuple[np.ndarray, np.ndarray]:
        """Mean cumulative regret curve and its standard error across replications."""
        cum = self.cumulative(policy)
        mean = cum.mean(axis=0)
        if cum.shape[0] < 2:
            return mean, np.zeros_like(mean)
        return mean, cum.std(axis=0, ddof=1) / math.sqrt(cum.shape[0])

    def recorded_steps(self) -> np.ndarray:
        """1-based times written to disk: every ``record_stride``-th step plus the last."""
        T, k = self.config.horizon, self.config.record_stride
        t = np.arange(k, T + 1, k)
        return t if t.size and t[-1] == T else np.append(t, T)

    def records(self) -> Iterator[RegretRecord]:
        steps = self.recorded_steps()
        for policy in self.policies:
            inst, cum = self.inst_regret[policy], self.cumulative(policy)
            for rep in range(inst.shape[0]):
                for t in steps:
                    yield RegretRecord(rep, int(t), policy, float(inst[rep, t - 1]),
                                       float(cum[rep, t - 1]))


def _checkpoint_path(out_dir: Path, replication: int) -> Path:
    return out_dir / "checkpoints" / f"rep-{replication:05d}.npz"


def _save_checkpoint(out_dir: Path, replication: int, regrets: dict) -> None:
    path = _checkpoint_path(out_dir, replication)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".tmp.npz")
    np.savez(tmp, **regrets)
    os.replace(tmp, path)


def _load_checkpoints(out_dir: Path, config: ExperimentConfig) -> dict[int, dict]:
    manifest = out_dir / "manifest.json"
    if not manifest.exists():
        return {}
    if json.loads(manifest.read_text()).get("config_sha256") != config.digest():
        log.warning("checkpoints in %s belong to another config; starting over", out_dir)
        return {}
    done = {}
    for k in range(config.replications):
        path = _checkpoint_path(out_dir, k)
        if path.exists():
            with np.load(path) as data:
                done[k] = {p.name: data[p.name] for p in config.policies}
    return done


def run_experiment(config: ExperimentConfig, parallelism: int = 1, out_dir=None,
                   resume: bool = False) -> ExperimentResult:
    """Run every replication; with ``out_dir`` each finished replication is
    checkpointed so an interrupted run can continue with ``resume=True``."""
    out_dir = Path(out_dir) if out_dir is not None else None
    done = _load_checkpoints(out_dir, config) if (resume and out_dir) else {}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(config, out_dir)
    pending = [k for k in range(config.replications) if k not in done]

    def finish(k, regrets):
        done[k] = regrets
        if out_dir is not None:
            _save_checkpoint(out_dir, k, regrets)
        log.info("replication %d/%d done", len(done), config.replications)

    if parallelism <= 1 or len(pending) <= 1:
        for k in pending:
            finish(k, run_replication(config, k))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = {k: pool.submit(run_replication, config, k) for k in pending}
            for k in pending:
                finish(k, futures[k].result())

    result = ExperimentResult(config)
    for p in config.policies:
        result.inst_regret[p.name] = np.stack([done[k][p.name] for k in range(config.replications)])
    return result


# ---------------------------------------------------------------- output

def manifest(config: ExperimentConfig) -> dict:
    return {
        "package": "scbandit",
        "version": __version__,
        "config": config.to_dict(),
        "config_sha256": config.digest(),
        "rng": {
            "bit_generator": "PCG64",
            "base_seed": config.seed,
            "instance_spawn_keys": [[0 if config.shared_instance else k, 0]
                                    for k in range(config.replications)],
            "feature_spawn_keys": [[k, 1] for k in range(config.replications)],
            "policy_spawn_keys": {p.name: [[k, 2, p.code] for k in range(config.replications)]
                                  for p in config.policies},
        },
    }


def write_manifest(config: ExperimentConfig, out_dir) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest(config), indent=2, sort_keys=True) + "\n")
    return path


def emit_results(result: ExperimentResult, out_dir, keep_checkpoints: bool = False) -> list[Path]:
    """Write ``records.csv``, ``aggregate.csv`` and ``manifest.json``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        records = out_dir / "records.csv"
        with open(records, "w", newline="\n") as fh:
            fh.write("replication,t,policy,inst_regret,cum_regret\n")
            for rec in result.records():
                fh.write(f"{rec.replication},{rec.t},{rec.policy},"
                         f"{rec.inst_regret!r},{rec.cum_regret!r}\n")
        aggregate = out_dir / "aggregate.csv"
        steps = result.recorded_steps()
        with open(aggregate, "w", newline="\n") as fh:
            fh.write("t,policy,mean_cum_regret,stderr\n")
            for policy in result.policies:
                mean, se = result.aggregate(policy)
                for t in steps:
                    fh.write(f"{t},{policy},{float(mean[t - 1])!r},{float(se[t - 1])!r}\n")
        paths = [records, aggregate, write_manifest(result.config, out_dir)]
    except OSError as exc:
        raise OSError(f"cannot write results to {out_dir}: {exc}") from exc
    if not keep_checkpoints:
        ckpt = out_dir / "checkpoints"
        if ckpt.is_dir():
            for f in ckpt.iterdir():
                f.unlink()
            ckpt.rmdir()
    return paths
