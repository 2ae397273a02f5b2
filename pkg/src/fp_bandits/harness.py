"""Experiment orchestration: seeded repetitions, aggregation and CSV output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from fp_bandits import __version__
from fp_bandits import rng as rngs
from fp_bandits.environments import ContextMode, EnvConfig, Environment, RegretTrace, instance_constants
from fp_bandits.links import LinkSpec, link_from_name, mu_dot
from fp_bandits.perturbation import PerturbationScheme
from fp_bandits.policies import Algorithm, Policy, PolicyConfig

log = logging.getLogger(__name__)

TRACE_HEADER = ("run_id", "t", "policy", "chosen_arm", "inst_regret", "cum_regret",
                "diag_width", "diag_kappa_star")
AGGREGATE_HEADER = ("policy", "t", "mean_cum_regret", "std_cum_regret", "n_runs")
THREADS_ENV = "FP_BANDITS_THREADS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig
    policies: tuple[PolicyConfig, ...]
    n_runs: int = 1
    base_seed: int = 0
    output_path: str | None = None
    record_diagnostics: bool = True
    checkpoint_every: int = 0
    write_traces: bool = False

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if not self.policies:
            raise ConfigError("at least one policy is required")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ConfigError(f"policy labels must be unique, got {names}")

    def run_seed(self, run_id: int) -> int:
        return rngs.run_seed(self.base_seed, run_id)


@dataclass
class RunResult:
    run_id: int
    policy: str
    trace: RegretTrace
    kappa_star: float
    kappa: float
    no_convergence: int
    clipped: int


@dataclass
class AggregateResult:
    policies: list[str]
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    final: dict[str, np.ndarray]
    n_runs: int
    metadata: dict = field(default_factory=dict)
    runs: list[RunResult] = field(default_factory=list, repr=False)

    def final_quantiles(self, policy: str, qs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict[float, float]:
        return {q: float(np.quantile(self.final[policy], q)) for q in qs}

    def final_mean_se(self, policy: str) -> tuple[float, float]:
        f = self.final[policy]
        se = float(np.std(f, ddof=1) / np.sqrt(f.size)) if f.size > 1 else 0.0
        return float(np.mean(f)), se


def simulate(env: Environment, policy: Policy, reward_rng: np.random.Generator,
             record_diagnostics: bool = True) -> RegretTrace:
    """Run the bandit loop for ``env.cfg.T`` rounds."""
    trace = RegretTrace()
    link = env.link
    for t in range(1, env.cfg.T + 1):
        X = env.action_set(t)
        arm = policy.select(X)
        wh = wv = kd = np.nan
        if record_diagnostics:
            est = policy.estimator
            wh = float(est.widths(X[arm], "H")[0])
            wv = wh if link.is_linear else float(est.widths(X[arm], "V")[0])
            z = X @ env.theta_star
            kd = float(mu_dot(link, z[np.argmax(z)], clamp=False))
        regret = env.regret_of(X, arm)
        reward = env.step(X, arm, reward_rng)
        trace.record(t, arm, regret, wh, wv, kd)
        policy.update(X[arm], reward)
    return trace


def run_single(cfg: ExperimentConfig, policy_cfg: PolicyConfig, run_id: int) -> RunResult:
    seed = cfg.run_seed(run_id)
    env = Environment(cfg.env, seed=seed)
    policy = Policy(policy_cfg, cfg.env.d, cfg.env.T, rngs.stream(seed, rngs.POLICY_NOISE))
    trace = simulate(env, policy, rngs.stream(seed, rngs.REWARD_NOISE), cfg.record_diagnostics)
    if cfg.env.context_mode is ContextMode.FRESH and cfg.env.T > 2000:
        # exact kappa needs every round's arms; sample rounds on long fresh runs
        kstar = float(np.nanmean(trace.column("opt_mu_dot"))) if cfg.record_diagnostics else np.nan
        kappa = np.nan
    else:
        kstar, kappa = instance_constants(env, trace, policy.estimator.theta_hat)
    diag = policy.state.diagnostics
    return RunResult(run_id, policy_cfg.name, trace, kstar, kappa,
                     diag["no_convergence"], diag["clipped"])


def _run_job(args):
    cfg, policy_cfg, run_id = args
    return run_single(cfg, policy_cfg, run_id)


def resolve_threads(threads: int | None = None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return max(1, int(threads or 1))


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> AggregateResult:
    """Run every (policy, run) pair and aggregate cumulative regret across runs.

    Runs are independent; results are ordered by ``(policy, run_id)`` whatever
    the worker count, so serial and parallel execution agree exactly.
    """
    start = time.perf_counter()
    jobs = [(cfg, p, r) for p in cfg.policies for r in range(cfg.n_runs)]
    n = resolve_threads(threads)
    if n == 1:
        results = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=1))
    agg = aggregate(cfg, results)
    agg.metadata["wall_time_s"] = time.perf_counter() - start
    if cfg.output_path:
        out = Path(cfg.output_path)
        emit_aggregate_csv(agg, out)
        if cfg.write_traces:
            emit_trace_csv(results, out.with_name(out.stem + "_traces.csv"))
        out.with_name(out.stem + "_meta.json").write_text(
            json.dumps(agg.metadata, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")
    return agg


def aggregate(cfg: ExperimentConfig, results: list[RunResult]) -> AggregateResult:
    names = [p.name for p in cfg.policies]
    mean, std, final = {}, {}, {}
    per_policy_meta = {}
    for name in names:
        rs = sorted((r for r in results if r.policy == name), key=lambda r: r.run_id)
        curves = np.vstack([r.trace.cum_regret for r in rs])
        mean[name] = curves.mean(axis=0)
        std[name] = curves.std(axis=0, ddof=1) if len(rs) > 1 else np.zeros(curves.shape[1])
        final[name] = curves[:, -1].copy()
        per_policy_meta[name] = {
            "kappa_star_mean": float(np.nanmean([r.kappa_star for r in rs])) if rs else None,
            "no_convergence": int(sum(r.no_convergence for r in rs)),
            "clipped": int(sum(r.clipped for r in rs)),
        }
    meta = {
        "config_hash": config_hash(cfg),
        "version": __version__,
        "numpy": np.__version__,
        "policies": per_policy_meta,
    }
    ordered = sorted(results, key=lambda r: (names.index(r.policy), r.run_id))
    return AggregateResult(names, mean, std, final, cfg.n_runs, meta, ordered)


def _fmt(x: float) -> str:
    return "%.17g" % x


def emit_aggregate_csv(result: AggregateResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_HEADER)
        for name in result.policies:
            for i, (m, s) in enumerate(zip(result.mean[name], result.std[name]), start=1):
                w.writerow((name, i, _fmt(m), _fmt(s), result.n_runs))


def emit_trace_csv(results, path) -> None:
    """Write per-round rows of every run; an empty list gives a header-only file."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for res in results:
            kstar = res.trace.kappa_star_running()
            for (t, chosen, inst, cum, wh, _wv, _k), ks in zip(res.trace.rows(), kstar):
                w.writerow((res.run_id, t, res.policy, chosen, _fmt(inst), _fmt(cum), _fmt(wh), _fmt(ks)))


def emit_csv(obj, path) -> None:
    if isinstance(obj, AggregateResult):
        emit_aggregate_csv(obj, path)
    else:
        emit_trace_csv(obj, path)


def read_aggregate_csv(path) -> dict[str, dict[str, np.ndarray]]:
    out: dict[str, dict[str, list]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            d = out.setdefault(row["policy"], {"t": [], "mean": [], "std": [], "n_runs": []})
            d["t"].append(int(row["t"]))
            d["mean"].append(float(row["mean_cum_regret"]))
            d["std"].append(float(row["std_cum_regret"]))
            d["n_runs"].append(int(row["n_runs"]))
    return {k: {c: np.array(v) for c, v in d.items()} for k, d in out.items()}


# ---------------------------------------------------------------- config files

def _policy_to_dict(p: PolicyConfig) -> dict:
    return {
        "algorithm": p.algorithm.value,
        "lam": p.lam,
        "c_t_mode": p.c_t_mode.value,
        "c_t_value": p.c_t_value,
        "delta": p.delta,
        "epsilon0": p.epsilon0,
        "phe_scale": p.phe_scale,
        "scheme": {"distribution": p.scheme.distribution.value, "coupling": p.scheme.coupling.value},
        "theta_bound": p.theta_bound,
        "reward_bound": p.reward_bound,
        "rand_ucb_z": p.rand_ucb_z,
        "label": p.label,
    }


def config_to_dict(cfg: ExperimentConfig) -> dict:
    env = cfg.env
    return {
        "env": {
            "link": env.link.kind.value,
            "derivative_floor": env.link.derivative_floor,
            "d": env.d, "K": env.K, "T": env.T,
            "context_mode": env.context_mode.value,
            "S": env.S, "noise_sigma": env.noise_sigma, "unit_sphere": env.unit_sphere,
        },
        "policies": [_policy_to_dict(p) for p in cfg.policies],
        "n_runs": cfg.n_runs,
        "base_seed": cfg.base_seed,
        "record_diagnostics": cfg.record_diagnostics,
    }


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


_ALIASES = {"greedy": ("eps_greedy", {"epsilon0": 0.0})}


def _policy_from_dict(d: dict, link: LinkSpec, env: EnvConfig) -> PolicyConfig:
    d = dict(d)
    algo = str(d.pop("algorithm", "fp")).lower()
    extra = {}
    if algo in _ALIASES:
        algo, extra = _ALIASES[algo]
        d.setdefault("label", "Greedy")
    scheme = d.pop("scheme", None)
    if isinstance(scheme, dict):
        scheme = PerturbationScheme(scheme.get("distribution", "gaussian"), scheme.get("coupling", "coupled"))
    elif isinstance(scheme, str):
        scheme = PerturbationScheme(scheme)
    kwargs = {**extra, **d}
    if scheme is not None:
        kwargs["scheme"] = scheme
    kwargs.setdefault("theta_bound", None)
    if kwargs.get("delta") in ("1/T", "1/t"):
        kwargs["delta"] = 1.0 / env.T
    unknown = set(kwargs) - set(PolicyConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown policy fields: {sorted(unknown)}")
    try:
        return PolicyConfig(algorithm=algo, link=link, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        e = dict(data["env"])
        link = link_from_name(e.pop("link", "linear"), float(e.pop("derivative_floor", 0.0)))
        env = EnvConfig(link=link, **e)
        policies = [_policy_from_dict(p, link, env) for p in data["policies"]]
        return ExperimentConfig(
            env=env,
            policies=policies,
            n_runs=int(data.get("n_runs", 1)),
            base_seed=int(data.get("base_seed", 0)),
            output_path=data.get("output_path"),
            record_diagnostics=bool(data.get("record_diagnostics", True)),
            checkpoint_every=int(data.get("checkpoint_every", 0)),
            write_traces=bool(data.get("write_traces", False)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def _parse_scalar(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_flat(text: str) -> dict:
    """Parse ``key = value`` lines with dotted keys (``env.d = 10``, ``policies = fp,ts``)."""
    data: dict = {"env": {}}
    policies = None
    policy_opts: dict = {}
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "policies":
            policies = [p.strip() for p in value.split(",") if p.strip()]
        elif key.startswith("env."):
            data["env"][key[4:]] = _parse_scalar(value)
        elif key.startswith("policy."):
            policy_opts[key[7:]] = _parse_scalar(value)
        else:
            data[key] = _parse_scalar(value)
    if policies is None:
        raise ConfigError("missing 'policies' entry")
    data["policies"] = [{"algorithm": p, **policy_opts} for p in policies]
    return data


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    else:
        data = parse_flat(text)
    return config_from_dict(data)


def override(cfg: ExperimentConfig, *, seed: int | None = None, runs: int | None = None,
             out: str | None = None) -> ExperimentConfig:
    changes = {}
    if seed is not None:
        changes["base_seed"] = int(seed)
    if runs is not None:
        changes["n_runs"] = int(runs)
    if out is not None:
        changes["output_path"] = str(out)
    return replace(cfg, **changes) if changes else cfg
