"""Regret ledgers, variation trackers, closed-form guarantee calculators,
and numeric oracles for the inequalities the analysis relies on.

The guarantee calculators evaluate the printed right-hand sides verbatim:

  convex OMD        5 sqrt(10) D^2 L + (5 sqrt(5)/2) D G
                    + 5 sqrt(2) D sqrt(sigma2) + 5 D sqrt(Sigma2)
  strongly convex   (32 sm + 16 Sm)/lam * ln((2 sigma2 + Sigma2)/(2 sm + Sm) + 1)
                    + (64 sm + 32 Sm)/lam + (16 L^2 D^2 / lam) ln(1 + 8 sqrt2 L/lam)
                    + (16 L^2 D^2 + 4 G^2)/lam + lam D^2 / 4
  exp-concave       (16 d / b) ln(b sigma2/d + b Sigma2/(2d) + b G^2/(8d) + 1)
                    + (16 d / b) ln(32 L^2 + 1) + D^2 (1 + b G^2 / 2)
  implicit (nonsm.) 5 D sqrt(1 + 5 G^2) + 10 sqrt(2) D sqrt(tilde sigma2)
                    + 10 D sqrt(Sigma2)

The non-smooth guarantee is printed with 5 D sqrt(1 + G^2) in its statement
but its derivation carries 5 D sqrt(1 + 5 G^2); the calculator returns the
derivation's (larger) value and exposes both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Ball, Box, Domain, ProblemParams, Simplex, SpdMatrix, as_vector
from .learners import ConfigurationError


# ---------------------------------------------------------------------------
# per-trial telemetry
# ---------------------------------------------------------------------------


@dataclass
class RegretLedger:
    """Per-round learner/comparator losses with running prefix sums."""

    f_x: list = field(default_factory=list)
    F_x: list = field(default_factory=list)
    f_u: list = field(default_factory=list)
    F_u: list = field(default_factory=list)
    F_ut: list = field(default_factory=list)
    cum_sampled: float = 0.0
    cum_expected: float = 0.0
    cum_dynamic: float = 0.0

    def record(self, f_x: float, F_x: float, f_u: float, F_u: float, F_ut: float | None):
        self.f_x.append(f_x)
        self.F_x.append(F_x)
        self.f_u.append(f_u)
        self.F_u.append(F_u)
        self.F_ut.append(F_ut)
        self.cum_sampled += f_x - f_u
        self.cum_expected += F_x - F_u
        if F_ut is not None:
            self.cum_dynamic += F_x - F_ut

    @property
    def rounds(self) -> int:
        return len(self.f_x)

    def static_regret(self, mode: str = "expected") -> float:
        if mode == "expected":
            return self.cum_expected
        if mode == "sampled":
            return self.cum_sampled
        raise ValueError("mode must be 'expected' or 'sampled'")

    def dynamic_regret(self) -> float:
        if any(v is None for v in self.F_ut):
            raise ValueError("dynamic comparators were not recorded every round")
        return self.cum_dynamic


@dataclass
class VariationTracker:
    """Running problem quantities: the learner-side gradient variation, the
    exact cumulative variance/variation supplied by the environment, the
    adversarial-round variation, and the comparator path length."""

    vbar: float = 0.0
    sigma_cum: float = 0.0
    Sigma_cum: float = 0.0
    v_t: float = 0.0
    path_length: float = 0.0
    sigma_tilde_cum: float = 0.0
    sigma_exact: bool = True
    sigma_tilde_available: bool = True
    _prev_grad: np.ndarray | None = None
    _prev_u: np.ndarray | None = None
    rounds: int = 0

    def update(
        self,
        g: np.ndarray,
        sigma_sq: float | None,
        adv_var: float | None,
        u_t: np.ndarray | None = None,
        sigma_tilde_sq: float | None = None,
        vt_summand: float | None = None,
    ):
        diff = g if self._prev_grad is None else g - self._prev_grad
        self.vbar += float(diff @ diff)
        self._prev_grad = np.array(g, copy=True)
        if sigma_sq is None:
            self.sigma_exact = False
        else:
            self.sigma_cum += sigma_sq
        if adv_var is not None:
            self.Sigma_cum += adv_var
        if sigma_tilde_sq is None:
            self.sigma_tilde_available = False
        else:
            self.sigma_tilde_cum += sigma_tilde_sq
        if vt_summand is not None and self.rounds >= 1:
            self.v_t += vt_summand
        if u_t is not None:
            if self._prev_u is not None:
                self.path_length += float(np.linalg.norm(u_t - self._prev_u))
            self._prev_u = np.array(u_t, copy=True)
        self.rounds += 1


def static_regret(ledger: RegretLedger, mode: str = "expected") -> float:
    return ledger.static_regret(mode)


def dynamic_regret(ledger: RegretLedger) -> float:
    return ledger.dynamic_regret()


# ---------------------------------------------------------------------------
# printed guarantee values
# ---------------------------------------------------------------------------


def _beta(params: ProblemParams) -> float:
    if params.alpha is None:
        raise ConfigurationError("exp-concave guarantee needs alpha")
    return 0.5 * min(1.0 / (4.0 * params.G * params.D), params.alpha)


def bound_value(
    theorem: str | int,
    params: ProblemParams,
    sigma_cum: float = 0.0,
    Sigma_cum: float = 0.0,
    dim: int | None = None,
) -> float:
    """Evaluate the closed-form static-regret guarantee for one of the four
    single-learner settings: 1 convex OMD, 2 strongly convex OMD, 3 exp-concave
    OMD (needs dim), 6 implicit-update OMD (sigma_cum is the sup-form variance)."""
    key = str(theorem)
    G, D, L = params.G, params.D, params.L
    if key == "1":
        return (
            5.0 * math.sqrt(10.0) * D**2 * L
            + 2.5 * math.sqrt(5.0) * D * G
            + 5.0 * math.sqrt(2.0) * D * math.sqrt(sigma_cum)
            + 5.0 * D * math.sqrt(Sigma_cum)
        )
    if key == "2":
        if params.lam is None:
            raise ConfigurationError("strongly convex guarantee needs lam")
        if params.sigma_max_sq is None or params.Sigma_max_sq is None:
            raise ConfigurationError("strongly convex guarantee needs sigma_max_sq/Sigma_max_sq")
        lam = params.lam
        sm, Sm = params.sigma_max_sq, params.Sigma_max_sq
        mix = 2.0 * sm + Sm
        return (
            (32.0 * sm + 16.0 * Sm) / lam * math.log((2.0 * sigma_cum + Sigma_cum) / mix + 1.0)
            + (64.0 * sm + 32.0 * Sm) / lam
            + 16.0 * L**2 * D**2 / lam * math.log(1.0 + 8.0 * math.sqrt(2.0) * L / lam)
            + (16.0 * L**2 * D**2 + 4.0 * G**2) / lam
            + lam * D**2 / 4.0
        )
    if key == "3":
        if dim is None:
            raise ConfigurationError("exp-concave guarantee needs the decision dimension")
        b = _beta(params)
        lead = 16.0 * dim / b
        return (
            lead * math.log(b * sigma_cum / dim + b * Sigma_cum / (2.0 * dim) + b * G**2 / (8.0 * dim) + 1.0)
            + lead * math.log(32.0 * L**2 + 1.0)
            + D**2 * (1.0 + 0.5 * b * G**2)
        )
    if key == "6":
        return nonsmooth_bound_forms(params, sigma_cum, Sigma_cum)["proof"]
    raise ConfigurationError(f"unknown guarantee '{theorem}' (expected 1, 2, 3, or 6)")


def nonsmooth_bound_forms(params: ProblemParams, sigma_tilde_cum: float, Sigma_cum: float) -> dict:
    """Both printed forms of the non-smooth static guarantee; 'proof' is the
    one the derivation supports and the one `bound_value` returns."""
    D, G = params.D, params.G
    tail = 10.0 * math.sqrt(2.0) * D * math.sqrt(sigma_tilde_cum) + 10.0 * D * math.sqrt(Sigma_cum)
    return {
        "statement": 5.0 * D * math.sqrt(1.0 + G**2) + tail,
        "proof": 5.0 * D * math.sqrt(1.0 + 5.0 * G**2) + tail,
    }


def smooth_dynamic_bound(
    params: ProblemParams, n_experts: int, path_length: float, sigma_cum: float, Sigma_cum: float
) -> float:
    """Proof-level dynamic-regret guarantee of the smooth two-layer ensemble."""
    D, G, L = params.D, params.G, params.L
    ln_n = math.log(n_experts)
    lead = 5.0 * math.sqrt(D**2 * ln_n) + 2.0 * math.sqrt(D**2 + 2.0 * D * path_length)
    return (
        G * lead
        + lead * (2.0 * math.sqrt(2.0) * math.sqrt(sigma_cum) + 2.0 * math.sqrt(Sigma_cum))
        + (58.0 * ln_n + 16.0) * D**2 * L
        + 32.0 * D * L * path_length
        + G**2 / L
    )


def nonsmooth_dynamic_bound(
    params: ProblemParams,
    n_experts: int,
    path_length: float,
    sigma_tilde_cum: float,
    Sigma_cum: float,
) -> float:
    """Dynamic-regret guarantee of the non-smooth (implicit-update) ensemble."""
    D, G = params.D, params.G
    ln_n = math.log(n_experts)
    lead = D * (ln_n + 4.0) + 2.0 * math.sqrt(2.0 * (D**2 + 2.0 * D * path_length))
    return (
        lead * (G + 2.0 * math.sqrt(2.0 * sigma_tilde_cum) + 2.0 * math.sqrt(Sigma_cum))
        + 4.0 * G**4
        + ln_n
        + 4.0
    )


# ---------------------------------------------------------------------------
# lemma oracles: return (lhs, rhs); callers assert lhs <= rhs + 1e-9
# ---------------------------------------------------------------------------


def _proj_for(domain: Domain, y: np.ndarray) -> np.ndarray:
    return domain.project(y)


def lemma_oracle(lemma: str, inputs: dict) -> tuple[float, float]:
    """Numerically evaluate both sides of one of the analysis inequalities.

    lemma names: 'sum', 'self_tuning', 'log_det', 'ln_pq', 'stability',
    'grad_diff_round', 'grad_diff_cumulative', 'strongly_convex_log'.
    """
    if lemma == "sum":
        ls = np.asarray(inputs["values"], dtype=float)
        delta = float(inputs["delta"])
        if np.any(ls < 0) or delta < 0:
            raise ValueError("sum lemma needs non-negative inputs")
        prefix = delta + np.cumsum(ls)
        lhs = float(np.sum(np.divide(ls, np.sqrt(prefix), out=np.zeros_like(ls), where=prefix > 0)))
        rhs = 2.0 * math.sqrt(delta + float(np.sum(ls)))
        return lhs, rhs

    if lemma == "self_tuning":
        ls = np.asarray(inputs["values"], dtype=float)
        delta = float(inputs["delta"])
        if np.any(ls < 0) or delta < 0:
            raise ValueError("self-tuning lemma needs non-negative inputs")
        prev = delta + np.concatenate([[0.0], np.cumsum(ls)[:-1]])
        if np.any((prev <= 0.0) & (ls > 0.0)):
            raise ValueError("self-tuning lemma needs delta > 0 ahead of any positive value")
        lhs = float(np.sum(np.divide(ls, np.sqrt(prev), out=np.zeros_like(ls), where=prev > 0)))
        rhs = 4.0 * math.sqrt(delta + float(np.sum(ls))) + float(np.max(ls, initial=0.0))
        return lhs, rhs

    if lemma == "log_det":
        us = np.asarray(inputs["vectors"], dtype=float)
        eps = float(inputs["eps"])
        if eps <= 0:
            raise ValueError("log-det lemma needs eps > 0")
        d = us.shape[1]
        S = eps * np.eye(d)
        lhs = 0.0
        for u in us:
            S = S + np.outer(u, u)
            lhs += float(u @ np.linalg.solve(S, u))
        rhs = d * math.log(1.0 + float(np.sum(us**2)) / (d * eps))
        return lhs, rhs

    if lemma == "ln_pq":
        a, b, c, A = (float(inputs[k]) for k in ("a", "b", "c", "A"))
        if a < 0 or b < 0 or c <= 0 or A < 0:
            raise ValueError("ln-pq lemma needs a,b >= 0, c > 0, A >= 0")
        lhs = a * math.log(b * A + 1.0) - c * A
        rhs = a * math.log(a * b / c + 1.0)
        return lhs, rhs

    if lemma == "stability":
        domain: Domain = inputs["domain"]
        c = as_vector(inputs["center"], domain.dim)
        a1 = as_vector(inputs["a"], domain.dim)
        a2 = as_vector(inputs["a_prime"], domain.dim)
        H: SpdMatrix | None = inputs.get("H")
        if H is None:
            # psi = ||.||^2/2: the two argmins are projections of c - a
            x1 = _proj_for(domain, c - a1)
            x2 = _proj_for(domain, c - a2)
            lhs = float(np.linalg.norm(x1 - x2))
            rhs = float(np.linalg.norm(a1 - a2))
        else:
            from .geometry import project_mahalanobis

            x1 = project_mahalanobis(domain, H, c - H.solve(a1), tol=1e-12)
            x2 = project_mahalanobis(domain, H, c - H.solve(a2), tol=1e-12)
            lhs = math.sqrt(max(H.quad(x1 - x2), 0.0))
            rhs = math.sqrt(max(H.quad_inv(a1 - a2), 0.0))
        return lhs, rhs

    if lemma == "grad_diff_round":
        gf_t = as_vector(inputs["grad_f_t"])
        gF_t = as_vector(inputs["grad_F_t_at_x_t"])
        gF_t_prev_pt = as_vector(inputs["grad_F_t_at_x_prev"])
        gF_prev = as_vector(inputs["grad_F_prev_at_x_prev"])
        gf_prev = as_vector(inputs["grad_f_prev"])
        x_t = as_vector(inputs["x_t"])
        x_prev = as_vector(inputs["x_prev"])
        L = float(inputs["L"])
        # smoothness precondition on the expected-gradient pair
        move = float(np.linalg.norm(x_t - x_prev))
        if float(np.linalg.norm(gF_t - gF_t_prev_pt)) > L * move + 1e-9:
            raise ValueError("inputs violate the smoothness precondition")
        lhs = float(np.sum((gf_t - gf_prev) ** 2))
        rhs = 4.0 * (
            float(np.sum((gf_t - gF_t) ** 2))
            + L**2 * move**2
            + float(np.sum((gF_t_prev_pt - gF_prev) ** 2))
            + float(np.sum((gF_prev - gf_prev) ** 2))
        )
        return lhs, rhs

    if lemma == "grad_diff_cumulative":
        rounds = inputs["rounds"]  # list of dicts like grad_diff_round, in order
        G = float(inputs["G"])
        L = float(inputs["L"])
        lhs = 0.0
        noise = 0.0
        drift = 0.0
        move = 0.0
        prev_grad = None
        for r in rounds:
            gf = as_vector(r["grad_f_t"])
            if float(np.linalg.norm(gf)) > G + 1e-9:
                raise ValueError("inputs violate the gradient-bound precondition")
            if prev_grad is None:
                lhs += float(np.sum(gf**2))
            else:
                lhs += float(np.sum((gf - prev_grad) ** 2))
                drift += float(np.sum((as_vector(r["grad_F_t_at_x_prev"]) - as_vector(r["grad_F_prev_at_x_prev"])) ** 2))
                move += float(np.sum((as_vector(r["x_t"]) - as_vector(r["x_prev"])) ** 2))
            noise += float(np.sum((gf - as_vector(r["grad_F_t_at_x_t"])) ** 2))
            prev_grad = gf
        rhs = G**2 + 4.0 * L**2 * move + 8.0 * noise + 4.0 * drift
        return lhs, rhs

    if lemma == "strongly_convex_log":
        sigmas = np.asarray(inputs["sigma_sq"], dtype=float)
        advs = np.asarray(inputs["adv_var"], dtype=float)
        lam = float(inputs["lam"])
        sm = float(inputs["sigma_max_sq"])
        Sm = float(inputs["Sigma_max_sq"])
        if np.any(sigmas < 0) or np.any(advs < 0) or lam <= 0:
            raise ValueError("invalid inputs")
        if np.any(sigmas > sm + 1e-12) or np.any(advs > Sm + 1e-12):
            raise ValueError("inputs violate the max-variance precondition")
        terms = 2.0 * sigmas + advs
        t_idx = np.arange(1, len(terms) + 1)
        lhs = float(np.sum(terms / (lam * t_idx)))
        mix = 2.0 * sm + Sm
        rhs = mix / lam * math.log(float(np.sum(terms)) / mix + 1.0) + 2.0 * mix / lam
        return lhs, rhs

    raise ValueError(f"unknown lemma '{lemma}'")


LEMMA_NAMES = (
    "sum",
    "self_tuning",
    "log_det",
    "ln_pq",
    "stability",
    "grad_diff_round",
    "grad_diff_cumulative",
    "strongly_convex_log",
)


def _random_domain(rng: np.random.Generator, dim: int) -> Domain:
    pick = rng.integers(0, 3)
    if pick == 0:
        return Ball(radius=float(rng.uniform(0.2, 3.0)), dim=dim)
    if pick == 1:
        lo = -rng.uniform(0.2, 2.0, size=dim)
        hi = rng.uniform(0.2, 2.0, size=dim)
        return Box(lo=lo, hi=hi)
    return Simplex(dim=dim)


def random_lemma_instance(lemma: str, rng: np.random.Generator) -> dict:
    """Draw a random input satisfying the lemma's preconditions."""
    if lemma == "sum":
        n = int(rng.integers(1, 40))
        scale = 10.0 ** rng.uniform(-3, 2)
        return {
            "values": rng.random(n) * scale,
            "delta": 0.0 if rng.random() < 0.2 else float(rng.random() * scale),
        }
    if lemma == "self_tuning":
        # the inequality needs the offset to dominate either the unit scale or
        # the largest increment (both regimes the analysis uses)
        n = int(rng.integers(1, 40))
        scale = 10.0 ** rng.uniform(-3, 2)
        values = rng.random(n) * scale
        if rng.random() < 0.5:
            delta = float(np.max(values) * rng.uniform(1.0, 3.0) + 1e-12)
        else:
            delta = float(rng.uniform(1.0, 10.0))
        return {"values": values, "delta": delta}
    if lemma == "log_det":
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, 30))
        return {
            "vectors": rng.standard_normal((n, d)) * 10.0 ** rng.uniform(-2, 1),
            "eps": float(10.0 ** rng.uniform(-2, 2)),
        }
    if lemma == "ln_pq":
        return {
            "a": float(10.0 ** rng.uniform(-2, 2)),
            "b": float(10.0 ** rng.uniform(-2, 2)),
            "c": float(10.0 ** rng.uniform(-2, 2)),
            "A": float(10.0 ** rng.uniform(-3, 3)),
        }
    if lemma == "stability":
        d = int(rng.integers(1, 5))
        domain = _random_domain(rng, d)
        inputs = {
            "domain": domain,
            "center": domain.project(rng.standard_normal(d)),
            "a": 0.4 * rng.standard_normal(d),
            "a_prime": 0.4 * rng.standard_normal(d),
        }
        if rng.random() < 0.3:
            # keep H well conditioned so the metric projection stays cheap
            M = 0.5 * rng.standard_normal((d, d))
            inputs["H"] = SpdMatrix(M @ M.T + np.eye(d))
        return inputs
    if lemma in ("grad_diff_round", "grad_diff_cumulative"):
        # quadratic expected losses (Hessian lam I, lam <= L) plus constant
        # gradient noise, decisions inside a ball: preconditions hold exactly
        d = int(rng.integers(1, 5))
        L = float(rng.uniform(0.3, 2.0))
        radius = float(rng.uniform(0.5, 2.0))
        n_rounds = int(rng.integers(2, 10)) if lemma == "grad_diff_cumulative" else 2
        lam = float(rng.uniform(0.1, 1.0)) * L
        centers = rng.standard_normal((n_rounds, d)) * 0.3
        noises = rng.standard_normal((n_rounds, d)) * 0.2
        xs = rng.standard_normal((n_rounds, d))
        xs = radius * xs / np.maximum(np.linalg.norm(xs, axis=1, keepdims=True), 1.0)
        G = max(
            float(np.linalg.norm(lam * (x - c) + n))
            for x, c, n in zip(xs, centers, noises)
        ) + 1e-6
        rounds = []
        for t in range(n_rounds):
            gF_t = lam * (xs[t] - centers[t])
            rounds.append(
                {
                    "grad_f_t": gF_t + noises[t],
                    "grad_F_t_at_x_t": gF_t,
                    "grad_F_t_at_x_prev": lam * (xs[t - 1] - centers[t]) if t else np.zeros(d),
                    "grad_F_prev_at_x_prev": lam * (xs[t - 1] - centers[t - 1]) if t else np.zeros(d),
                    "grad_f_prev": lam * (xs[t - 1] - centers[t - 1]) + noises[t - 1] if t else np.zeros(d),
                    "x_t": xs[t],
                    "x_prev": xs[t - 1] if t else np.zeros(d),
                }
            )
        if lemma == "grad_diff_cumulative":
            return {"rounds": rounds, "G": G, "L": L}
        r = dict(rounds[1])
        r["L"] = L
        return r
    if lemma == "strongly_convex_log":
        n = int(rng.integers(1, 50))
        sm = float(10.0 ** rng.uniform(-2, 1))
        Sm = float(10.0 ** rng.uniform(-2, 1))
        return {
            "sigma_sq": rng.random(n) * sm,
            "adv_var": rng.random(n) * Sm,
            "lam": float(10.0 ** rng.uniform(-1, 1)),
            "sigma_max_sq": sm,
            "Sigma_max_sq": Sm,
        }
    raise ValueError(f"unknown lemma '{lemma}'")


def fuzz_lemmas(n: int = 10_000, seed: int = 0, tol: float = 1e-9) -> dict:
    """Run n random instances through every lemma oracle.

    Returns {lemma: (instances, violations, worst_slack)}; any violation means
    the inequality lhs <= rhs + tol failed, which is build-stopping.
    """
    results = {}
    for lemma in LEMMA_NAMES:
        rng = np.random.Generator(
            np.random.Philox(key=np.random.SeedSequence((seed, LEMMA_NAMES.index(lemma))).generate_state(2, np.uint64))
        )
        violations = 0
        worst = -math.inf
        for _ in range(n):
            lhs, rhs = lemma_oracle(lemma, random_lemma_instance(lemma, rng))
            slack = lhs - rhs
            worst = max(worst, slack)
            if slack > tol:
                violations += 1
        results[lemma] = (n, violations, worst)
    return results
