"""Experiment runner: seeded parallel trials, deterministic aggregation,
and CSV/JSON emission.

A trial is a pure function of (config, seed, trial index), so the summary is
byte-identical across re-runs and across worker counts; aggregation always
folds results in trial order.  Wall-clock time is deliberately kept out of
the summary.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ensemble import ENSEMBLES, build_pool
from .environments import (
    AdversarialEnv,
    CorruptedIidEnv,
    IidEnv,
    LimitedResourcesEnv,
    RandomOrderEnv,
    SeaEnvironment,
    SlowShiftAbsoluteEnv,
    SlowShiftQuadraticEnv,
)
from .geometry import Ball, Box, ProblemParams, Simplex, SolverFailureError
from .learners import GRADIENT_LEARNERS, LOSS_LEARNERS, ConfigurationError
from .losses import Absolute, Linear, ShiftedQuadratic, SquaredLinear
from .metrics import (
    RegretLedger,
    VariationTracker,
    bound_value,
    nonsmooth_dynamic_bound,
    smooth_dynamic_bound,
)

WORKERS_ENV_VAR = "SEA_OCO_WORKERS"

STABILITY_TOL = 1e-9
FEASIBILITY_TOL = 1e-10
WEIGHT_TOL = 1e-12


class ExperimentError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


_PARAM_KEYS = ("G", "D", "L", "lam", "alpha", "sigma_max_sq", "Sigma_max_sq")


def _build_domain(spec: dict, d: int):
    kind = spec["type"]
    if kind == "ball":
        return Ball(radius=float(spec["radius"]), dim=d)
    if kind == "box":
        return Box(lo=np.asarray(spec["lo"], float), hi=np.asarray(spec["hi"], float))
    if kind == "simplex":
        return Simplex(dim=d)
    raise ConfigurationError(f"unknown domain type '{kind}'")


def _build_atoms(spec: dict, d: int):
    family = spec["family"]
    if family == "linear":
        return [Linear(np.asarray(g, float)) for g in spec["gradients"]]
    if family == "shifted_quadratic":
        lam = float(spec["lam"])
        return [ShiftedQuadratic(np.asarray(c, float), lam) for c in spec["centers"]]
    if family == "squared_linear":
        a = np.asarray(spec["a"], float)
        return [SquaredLinear(a, float(b)) for b in spec["bs"]]
    if family == "absolute":
        a = np.asarray(spec["a"], float)
        return [Absolute(a, float(b)) for b in spec["bs"]]
    raise ConfigurationError(f"unknown loss family '{family}'")


def build_environment(spec: dict, params: ProblemParams) -> SeaEnvironment:
    d = int(spec["d"])
    domain = _build_domain(spec["domain"], d)
    kind = spec["kind"]
    weights = np.asarray(spec["weights"], float) if "weights" in spec else None
    if kind == "adversarial":
        env = AdversarialEnv(
            _build_atoms(spec, d), domain, params, cycle=bool(spec.get("cycle", True))
        )
    elif kind == "iid":
        env = IidEnv(_build_atoms(spec, d), domain, params, weights=weights)
    elif kind == "corrupted":
        env = CorruptedIidEnv(
            _build_atoms(spec, d),
            domain,
            params,
            corruption_budget=float(spec["corruption_budget"]),
            corruption_rounds=int(spec["corruption_rounds"]),
            weights=weights,
        )
    elif kind == "random_order":
        env = RandomOrderEnv(_build_atoms(spec, d), domain, params)
    elif kind == "slow_shift_quadratic":
        env = SlowShiftQuadraticEnv(
            segment_centers=[np.asarray(c, float) for c in spec["segment_centers"]],
            segment_len=int(spec["segment_len"]),
            lam=float(spec["lam"]),
            noise_offsets=[np.asarray(o, float) for o in spec["offsets"]],
            domain=domain,
            params=params,
            drift_bound=spec.get("drift_bound"),
        )
    elif kind == "slow_shift_absolute":
        env = SlowShiftAbsoluteEnv(
            a=np.asarray(spec["a"], float),
            segment_levels=spec["segment_levels"],
            segment_len=int(spec["segment_len"]),
            spread=float(spec["spread"]),
            domain=domain,
            params=params,
        )
    elif kind == "limited_resources":
        env = LimitedResourcesEnv(
            _build_atoms(spec, d), int(spec["batch_size"]), domain, params
        )
    else:
        raise ConfigurationError(f"unknown environment kind '{kind}'")
    env.validate_params()
    return env


@dataclass(frozen=True)
class ExperimentConfig:
    environment: dict
    algorithm: dict
    params: ProblemParams
    T: int
    trials: int
    seed: int
    out_dir: str = "results"
    record_cadence: int = 0  # 0: final snapshot only

    def __post_init__(self):
        if self.T < 1 or self.trials < 1:
            raise ConfigurationError("need T >= 1 and trials >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            p = raw["params"]
            params = ProblemParams(**{k: p.get(k) for k in _PARAM_KEYS})
            return cls(
                environment=raw["environment"],
                algorithm=raw["algorithm"],
                params=params,
                T=int(raw["T"]),
                trials=int(raw["trials"]),
                seed=int(raw["seed"]),
                out_dir=str(raw.get("out_dir", "results")),
                record_cadence=int(raw.get("record_cadence", 0)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"config is missing required field {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "environment": self.environment,
            "algorithm": self.algorithm,
            "params": {k: getattr(self.params, k) for k in _PARAM_KEYS},
            "T": self.T,
            "trials": self.trials,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "record_cadence": self.record_cadence,
        }


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(raw)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# one trial
# ---------------------------------------------------------------------------


@dataclass
class TrialResult:
    trial: int
    failed: bool = False
    error: str = ""
    expected_regret: float = 0.0
    sampled_regret: float = 0.0
    dynamic_regret: float | None = None
    vbar: float = 0.0
    sigma_cum: float = 0.0
    Sigma_cum: float = 0.0
    sigma_tilde_cum: float | None = None
    path_length: float | None = None
    sigma_exact: bool = True
    n_experts: int | None = None
    base_dynamic_regrets: list | None = None
    violations: dict = field(default_factory=dict)
    cadence: list = field(default_factory=list)  # (round, exp_regret, vbar, sigma, Sigma, path)


def _is_ensemble(name: str) -> bool:
    return name in ENSEMBLES


def _make_algorithm(config: ExperimentConfig, env: SeaEnvironment):
    name = config.algorithm["name"]
    if name in GRADIENT_LEARNERS or name in LOSS_LEARNERS:
        from .learners import make_learner

        return make_learner(name, config.params, env.domain)
    if name in ENSEMBLES:
        cls, pool_kind = ENSEMBLES[name]
        pool = build_pool(config.params, config.T, pool_kind)
        return cls(config.params, env.domain, pool=pool)
    raise ConfigurationError(f"unknown algorithm '{name}'")


def run_trial(config: ExperimentConfig, env: SeaEnvironment, trial: int) -> TrialResult:
    name = config.algorithm["name"]
    is_ensemble = _is_ensemble(name)
    is_implicit = name in LOSS_LEARNERS
    track_dynamic = bool(config.algorithm.get("track_dynamic", is_ensemble))
    algo = _make_algorithm(config, env)
    ctx = env.trial(config.seed, trial, config.T)
    u_star = env.static_comparator(config.T)

    ledger = RegretLedger()
    tracker = VariationTracker()
    adversarial = env.kind == "adversarial"
    violations = {
        "stability": 0,
        "feasibility": 0,
        "weights": 0,
        "eta_monotonicity": 0,
        "grad_bound": 0,
    }
    base_F_cum = np.zeros(algo.n) if is_ensemble else None
    F_ut_cum = 0.0
    prev_eta = math.inf
    cadence = []
    result = TrialResult(trial=trial, n_experts=algo.n if is_ensemble else None)

    try:
        for t in range(1, config.T + 1):
            spec = ctx.round(t)
            x_t = algo.x
            if not env.domain.contains(x_t, tol=FEASIBILITY_TOL):
                violations["feasibility"] += 1
            f_x = spec.f.value(x_t)
            F_x = spec.F.value(x_t)
            f_u = spec.f.value(u_star)
            F_u = spec.F.value(u_star)
            u_t = env.round_comparator(spec) if track_dynamic else None
            F_ut = spec.F.value(u_t) if track_dynamic else None
            ledger.record(f_x, F_x, f_u, F_u, F_ut)
            if track_dynamic:
                F_ut_cum += F_ut
            if is_ensemble:
                for i in range(algo.n):
                    base_F_cum[i] += spec.F.value(algo.x_base[i])

            g_t = spec.f.grad(x_t)
            if is_ensemble:
                telemetry = algo.round(spec.f)
                if abs(float(np.sum(telemetry.p)) - 1.0) > WEIGHT_TOL or np.any(telemetry.p < 0):
                    violations["weights"] += 1
                if getattr(algo, "max_stability_slack", 0.0) > STABILITY_TOL:
                    violations["stability"] += 1
                    algo.max_stability_slack = 0.0
            elif is_implicit:
                algo.step_loss(spec.f)
                if algo.eta > prev_eta * (1.0 + 1e-12):
                    violations["eta_monotonicity"] += 1
                prev_eta = algo.eta
            else:
                algo.step(g_t)
                if algo.last_stability_slack > STABILITY_TOL:
                    violations["stability"] += 1
                eta = getattr(algo, "eta", None)
                if eta is not None:
                    if name == "omd_strongly_convex":
                        expected = 2.0 / (config.params.lam * (algo.t + 1))
                        if abs(eta - expected) > 1e-12 * max(1.0, expected):
                            violations["eta_monotonicity"] += 1
                    elif eta > prev_eta * (1.0 + 1e-12):
                        violations["eta_monotonicity"] += 1
                    prev_eta = eta

            tracker.update(
                g_t,
                spec.sigma_sq_exact,
                spec.adv_var_exact,
                u_t,
                spec.sigma_tilde_sq_exact,
                vt_summand=spec.adv_var_exact if adversarial else None,
            )
            if config.record_cadence and t % config.record_cadence == 0:
                cadence.append(
                    (
                        t,
                        ledger.cum_expected,
                        tracker.vbar,
                        tracker.sigma_cum,
                        tracker.Sigma_cum,
                        tracker.path_length if track_dynamic else None,
                        tracker.sigma_tilde_cum if tracker.sigma_tilde_available else None,
                    )
                )
    except SolverFailureError as exc:
        result.failed = True
        result.error = str(exc)
        return result

    violations["grad_bound"] = algo.grad_bound_violations
    result.expected_regret = ledger.static_regret("expected")
    result.sampled_regret = ledger.static_regret("sampled")
    if track_dynamic:
        result.dynamic_regret = ledger.dynamic_regret()
        result.path_length = tracker.path_length
    result.vbar = tracker.vbar
    result.sigma_cum = tracker.sigma_cum
    result.Sigma_cum = tracker.Sigma_cum
    result.sigma_exact = tracker.sigma_exact
    result.sigma_tilde_cum = tracker.sigma_tilde_cum if tracker.sigma_tilde_available else None
    if is_ensemble:
        result.base_dynamic_regrets = [float(v - F_ut_cum) for v in base_F_cum]
    result.violations = violations
    result.cadence = cadence
    return result


# worker-side cache so each process builds the environment once per config
_WORKER_CACHE: dict = {}


def _trial_worker(config_json: str, trial: int) -> TrialResult:
    if config_json not in _WORKER_CACHE:
        config = ExperimentConfig.from_dict(json.loads(config_json))
        env = build_environment(config.environment, config.params)
        _WORKER_CACHE.clear()
        _WORKER_CACHE[config_json] = (config, env)
    config, env = _WORKER_CACHE[config_json]
    return run_trial(config, env, trial)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def _mean_stderr(values: list) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def _bound_for(config: ExperimentConfig, n_experts, sigma, Sigma, sigma_tilde, path) -> float | None:
    name = config.algorithm["name"]
    p = config.params
    d = int(config.environment["d"])
    try:
        if name in ("omd_convex", "ftrl_convex"):
            return bound_value("1", p, sigma, Sigma)
        if name in ("omd_strongly_convex", "ftrl_strongly_convex"):
            return bound_value("2", p, sigma, Sigma)
        if name in ("ons", "ftrl_exp_concave"):
            return bound_value("3", p, sigma, Sigma, dim=d)
        if name == "implicit_omd":
            if sigma_tilde is None:
                return None
            return bound_value("6", p, sigma_tilde, Sigma)
        if name == "ensemble_smooth":
            return smooth_dynamic_bound(p, n_experts, path or 0.0, sigma, Sigma)
        if name == "ensemble_nonsmooth":
            if sigma_tilde is None:
                return None
            return nonsmooth_dynamic_bound(p, n_experts, path or 0.0, sigma_tilde, Sigma)
    except ConfigurationError:
        return None
    return None


def _workers(trials: int) -> int:
    raw = os.environ.get(WORKERS_ENV_VAR)
    if raw:
        return max(1, int(raw))
    return max(1, min(os.cpu_count() or 1, trials))


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> dict:
    """Run all trials and return the summary dictionary (see `emit`)."""
    env = build_environment(config.environment, config.params)  # validates eagerly
    n_workers = workers if workers is not None else _workers(config.trials)
    config_json = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))

    if n_workers <= 1 or config.trials == 1:
        results = [run_trial(config, env, i) for i in range(config.trials)]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(
                pool.map(_trial_worker, [config_json] * config.trials, range(config.trials))
            )
    results.sort(key=lambda r: r.trial)

    failed = [r.trial for r in results if r.failed]
    if len(failed) > 0.1 * config.trials:
        raise ExperimentError(
            f"{len(failed)}/{config.trials} trials failed: "
            + "; ".join(next(r.error for r in results if r.trial == i) for i in failed[:3])
        )
    ok = [r for r in results if not r.failed]

    exp_mean, exp_se = _mean_stderr([r.expected_regret for r in ok])
    samp_mean, samp_se = _mean_stderr([r.sampled_regret for r in ok])
    vbar_mean, _ = _mean_stderr([r.vbar for r in ok])
    sigma_mean, _ = _mean_stderr([r.sigma_cum for r in ok])
    Sigma_mean, _ = _mean_stderr([r.Sigma_cum for r in ok])
    track_dynamic = ok[0].dynamic_regret is not None
    dyn_mean = dyn_se = None
    path_mean = None
    if track_dynamic:
        dyn_mean, dyn_se = _mean_stderr([r.dynamic_regret for r in ok])
        path_mean, _ = _mean_stderr([r.path_length for r in ok])
    tilde_available = all(r.sigma_tilde_cum is not None for r in ok)
    tilde_mean = None
    if tilde_available:
        tilde_mean, _ = _mean_stderr([r.sigma_tilde_cum for r in ok])
    n_experts = ok[0].n_experts

    bound = _bound_for(config, n_experts, sigma_mean, Sigma_mean, tilde_mean, path_mean)
    regret_for_margin = dyn_mean if _is_ensemble(config.algorithm["name"]) else exp_mean
    margin = None if bound is None else bound - regret_for_margin

    violations = {}
    for r in ok:
        for k, v in r.violations.items():
            violations[k] = violations.get(k, 0) + v

    cadence_rows = []
    if config.record_cadence:
        n_rows = min(len(r.cadence) for r in ok) if ok else 0
        for j in range(n_rows):
            t = ok[0].cadence[j][0]
            regs = [r.cadence[j][1] for r in ok]
            m, se = _mean_stderr(regs)
            vb, _ = _mean_stderr([r.cadence[j][2] for r in ok])
            sg, _ = _mean_stderr([r.cadence[j][3] for r in ok])
            Sg, _ = _mean_stderr([r.cadence[j][4] for r in ok])
            paths = [r.cadence[j][5] for r in ok]
            pm = None if paths[0] is None else sum(paths) / len(paths)
            tildes = [r.cadence[j][6] for r in ok]
            tm = None if tildes[0] is None else sum(tildes) / len(tildes)
            b = _bound_for(config, n_experts, sg, Sg, tm, pm)
            cadence_rows.append(
                {
                    "round": t,
                    "regret_mean": m,
                    "regret_stderr": se,
                    "vbar_mean": vb,
                    "sigma_cum": sg,
                    "Sigma_cum": Sg,
                    "bound_value": b,
                }
            )

    base_dyn = None
    if ok[0].base_dynamic_regrets is not None:
        base_dyn = [
            sum(r.base_dynamic_regrets[i] for r in ok) / len(ok)
            for i in range(len(ok[0].base_dynamic_regrets))
        ]

    return {
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "final": {
            "trials_ok": len(ok),
            "failed_trials": failed,
            "expected_regret_mean": exp_mean,
            "expected_regret_stderr": exp_se,
            "sampled_regret_mean": samp_mean,
            "sampled_regret_stderr": samp_se,
            "dynamic_regret_mean": dyn_mean,
            "dynamic_regret_stderr": dyn_se,
            "path_length_mean": path_mean,
            "vbar_mean": vbar_mean,
            "sigma_cum_mean": sigma_mean,
            "Sigma_cum_mean": Sigma_mean,
            "sigma_tilde_cum_mean": tilde_mean,
            "sigma_is_exact": all(r.sigma_exact for r in ok),
            "n_experts": n_experts,
            "base_dynamic_regret_mean": base_dyn,
            "bound_value": bound,
            "bound_margin": margin,
            "violations": violations,
        },
        "cadence": cadence_rows,
    }


# ---------------------------------------------------------------------------
# emission (17 significant digits, byte-stable)
# ---------------------------------------------------------------------------


def _fmt_number(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return "null"
    v = float(x)
    if math.isnan(v):
        return "NaN"
    return f"{v:.17g}"


def _emit_json(obj, out) -> None:
    if isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(k)))
            out.append(":")
            _emit_json(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _emit_json(v, out)
        out.append("]")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    else:
        out.append(_fmt_number(obj))


def summary_json_bytes(summary: dict) -> bytes:
    out: list[str] = []
    _emit_json(summary, out)
    return "".join(out).encode()


CSV_COLUMNS = (
    "round",
    "regret_mean",
    "regret_stderr",
    "vbar_mean",
    "sigma_cum",
    "Sigma_cum",
    "bound_value",
)


def summary_csv_bytes(summary: dict) -> bytes:
    lines = [",".join(CSV_COLUMNS)]
    for row in summary["cadence"]:
        lines.append(",".join(_fmt_number(row[c]) for c in CSV_COLUMNS))
    return ("\n".join(lines) + "\n").encode()


def emit(summary: dict, out_dir: str, formats: tuple = ("json", "csv")) -> dict:
    """Write summary files; returns {format: path}."""
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    if "json" in formats:
        path = os.path.join(out_dir, "summary.json")
        with open(path, "wb") as fh:
            fh.write(summary_json_bytes(summary))
        written["json"] = path
    if "csv" in formats:
        path = os.path.join(out_dir, "cadence.csv")
        with open(path, "wb") as fh:
            fh.write(summary_csv_bytes(summary))
        written["csv"] = path
    return written
