"""Two-layer dynamic-regret ensembles: a meta-learner (optimistic Hedge)
running over a pool of fixed-step base learners.

Three variants:

  SmoothEnsemble     gradient-descent bases sharing the combined-point
                     gradient, meta feedback/optimism carry the movement
                     correction term lam ||x_{t,i} - x_{t-1,i}||^2;
  NonsmoothEnsemble  implicit-update (prox) bases with their own gradient
                     points, meta fed with raw function values;
  AltOptimismEnsemble bases with their own gradients, meta optimism taken at
                     the pre-aggregated point xbar_{t+1}, no corrections.

Base states are stored as (N, d) arrays so one round is a handful of
vectorized operations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import Domain, ProblemParams
from .losses import LossFn, prox


class PoolKind(Enum):
    SMOOTH_THM5 = "smooth_thm5"
    NONSMOOTH_THM7 = "nonsmooth_thm7"
    ALT_OPTIMISM_B1 = "alt_optimism_b1"


@dataclass(frozen=True)
class StepSizePool:
    etas: tuple
    kind: PoolKind
    clamped: bool = False

    @property
    def n(self) -> int:
        return len(self.etas)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("pool must hold at least one step size")
        if any(e2 <= e1 for e1, e2 in zip(self.etas, self.etas[1:])):
            raise ValueError("pool step sizes must be strictly increasing")


def build_pool(params: ProblemParams, T: int, kind: PoolKind) -> StepSizePool:
    """Step-size pools with the geometric grids the dynamic-regret theorems use."""
    if T < 1:
        raise ValueError("horizon must be >= 1")
    G, D, L = params.G, params.D, params.L
    clamped = False
    if kind is PoolKind.SMOOTH_THM5:
        n = math.ceil(0.5 * math.log2(G**2 * T / (8.0 * L**2 * D**2))) + 1
        if n < 1:
            n, clamped = 1, True
        base = math.sqrt(D**2 / (8.0 * G**2 * T))
        etas = [min(1.0 / (8.0 * L), base * 2.0 ** ((i - 1) / 2.0)) for i in range(1, n + 1)]
        # the cap can introduce ties at the top of the grid; keep the strict prefix
        kept = [etas[0]]
        for e in etas[1:]:
            if e > kept[-1]:
                kept.append(e)
            else:
                clamped = True
                break
        etas = kept
    elif kind is PoolKind.NONSMOOTH_THM7:
        n = math.ceil(0.5 * math.log2((1.0 + 2.0 * T) * (1.0 + 4.0 * T * G**2))) + 1
        if n < 1:
            n, clamped = 1, True
        base = D / math.sqrt(1.0 + 4.0 * T * G**2)
        etas = [base * 2.0 ** (i - 1) for i in range(1, n + 1)]
    elif kind is PoolKind.ALT_OPTIMISM_B1:
        n = math.ceil(0.5 * math.log2(8.0 * G**2 * T / (L**2 * D**2))) + 1
        if n < 1:
            n, clamped = 1, True
        base = math.sqrt(D**2 / (98.0 * G**2 * T))
        etas = [min(1.0 / (4.0 * L), base * 2.0 ** (i - 1)) for i in range(1, n + 1)]
        kept = [etas[0]]
        for e in etas[1:]:
            if e > kept[-1]:
                kept.append(e)
            else:
                clamped = True
                break
        etas = kept
    else:
        raise ValueError(f"unknown pool kind {kind}")
    return StepSizePool(tuple(etas), kind, clamped)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    w = np.exp(z)
    return w / w.sum()


@dataclass
class RoundTelemetry:
    """Per-round meta quantities exposed for invariant checks and traces."""

    eps: float
    p: np.ndarray
    feedback: np.ndarray
    optimism: np.ndarray
    prev_optimism: np.ndarray | None
    base_decisions: np.ndarray
    grad_at_combined: np.ndarray | None = None


class _EnsembleBase:
    def __init__(self, params: ProblemParams, domain: Domain, pool: StepSizePool):
        self.params = params
        self.domain = domain
        self.pool = pool
        self.etas = np.asarray(pool.etas)
        n = pool.n
        init = domain.initial_point()
        self.xhat = np.tile(init, (n, 1))
        self.x_base = np.tile(init, (n, 1))
        self.p = np.full(n, 1.0 / n)
        self.x = init.copy()
        self.t = 0
        self.grad_bound_violations = 0
        self.max_stability_slack = 0.0
        # cumulative per-base losses f_t(x_{t,i}), for best-base comparisons
        self.base_cum_loss = np.zeros(n)

    @property
    def n(self) -> int:
        return self.pool.n

    def _check_grad(self, g: np.ndarray) -> None:
        if float(np.linalg.norm(g)) > self.params.G + 1e-9:
            self.grad_bound_violations += 1

    def _record_base_losses(self, f: LossFn) -> None:
        self.base_cum_loss += np.array([f.value(row) for row in self.x_base])


class SmoothEnsemble(_EnsembleBase):
    """Dynamic-regret ensemble for smooth losses (correction-term meta)."""

    def __init__(self, params: ProblemParams, domain: Domain, pool: StepSizePool | None = None, T: int | None = None):
        if pool is None:
            if T is None:
                raise ValueError("need a pool or a horizon to build one")
            pool = build_pool(params, T, PoolKind.SMOOTH_THM5)
        super().__init__(params, domain, pool)
        self.lam_corr = 2.0 * params.L
        self.cum_feedback = np.zeros(pool.n)
        self.prev_grad = np.zeros(domain.dim)
        self.vbar = 0.0
        self.x_base_prev = self.x_base.copy()
        self.prev_optimism: np.ndarray | None = None
        self._eps_cap = 1.0 / (8.0 * params.D**2 * params.L)

    def round(self, f: LossFn) -> RoundTelemetry:
        g = f.grad(self.x)
        self._check_grad(g)
        self._record_base_losses(f)
        diff = g - self.prev_grad
        self.vbar += float(diff @ diff)
        ln_n = math.log(self.n)
        if self.vbar <= 0.0:
            eps = self._eps_cap
        else:
            eps = min(self._eps_cap, math.sqrt(ln_n / (self.params.D**2 * self.vbar)))

        step = self.etas[:, None] * g[None, :]
        xhat_new = self.domain.project_rows(self.xhat - step)
        x_new = self.domain.project_rows(xhat_new - step)

        slack = np.linalg.norm(xhat_new - self.x_base, axis=1) - self.etas * float(
            np.linalg.norm(diff)
        )
        self.max_stability_slack = max(self.max_stability_slack, float(np.max(slack)))

        feedback = self.x_base @ g
        if self.t >= 1:  # round 1 omits the correction
            feedback = feedback + self.lam_corr * np.sum(
                (self.x_base - self.x_base_prev) ** 2, axis=1
            )
        optimism = x_new @ g + self.lam_corr * np.sum((x_new - self.x_base) ** 2, axis=1)

        self.cum_feedback += feedback
        p_new = _softmax(-eps * (self.cum_feedback + optimism))

        telemetry = RoundTelemetry(
            eps=eps,
            p=p_new,
            feedback=feedback,
            optimism=optimism,
            prev_optimism=self.prev_optimism,
            base_decisions=self.x_base.copy(),
            grad_at_combined=g,
        )
        self.x_base_prev = self.x_base
        self.x_base = x_new
        self.xhat = xhat_new
        self.prev_grad = g
        self.prev_optimism = optimism
        self.p = p_new
        self.x = p_new @ x_new
        self.t += 1
        return telemetry


class NonsmoothEnsemble(_EnsembleBase):
    """Dynamic-regret ensemble for non-smooth losses (implicit-update bases)."""

    def __init__(
        self,
        params: ProblemParams,
        domain: Domain,
        pool: StepSizePool | None = None,
        T: int | None = None,
        prox_tol: float = 1e-10,
    ):
        if pool is None:
            if T is None:
                raise ValueError("need a pool or a horizon to build one")
            pool = build_pool(params, T, PoolKind.NONSMOOTH_THM7)
        super().__init__(params, domain, pool)
        self.cum_values = np.zeros(pool.n)
        self.prev_f: LossFn | None = None
        self.acc_dev = 0.0
        self.x_ref = np.zeros(domain.dim)
        self.prox_tol = prox_tol

    def round(self, f: LossFn) -> RoundTelemetry:
        values = np.array([f.value(row) for row in self.x_base])
        self.base_cum_loss += values
        self.cum_values += values

        # reference-loss deviation, with the round-0 reference loss defined as 0
        f_ref = f.value(self.x_ref)
        if self.prev_f is None:
            prev_vals = np.zeros(self.n)
            prev_ref = 0.0
        else:
            prev_vals = np.array([self.prev_f.value(row) for row in self.x_base])
            prev_ref = self.prev_f.value(self.x_ref)
        dev = float(np.max(np.abs((values - f_ref) - (prev_vals - prev_ref))))
        self.acc_dev += dev * dev
        eps = 1.0 / math.sqrt(1.0 + self.acc_dev)

        x_new = np.empty_like(self.x_base)
        for i in range(self.n):
            g_i = f.grad(self.x_base[i])
            self._check_grad(g_i)
            xhat_i = self.domain.project(self.xhat[i] - self.etas[i] * g_i)
            self.xhat[i] = xhat_i
            x_new[i] = prox(f, xhat_i, self.etas[i], self.domain, tol=self.prox_tol)

        optimism = np.array([f.value(row) for row in x_new])
        p_new = _softmax(-eps * (self.cum_values + optimism))

        telemetry = RoundTelemetry(
            eps=eps,
            p=p_new,
            feedback=values,
            optimism=optimism,
            prev_optimism=None,
            base_decisions=self.x_base.copy(),
        )
        self.x_base = x_new
        self.prev_f = f
        self.p = p_new
        self.x = p_new @ x_new
        self.t += 1
        return telemetry


class AltOptimismEnsemble(_EnsembleBase):
    """Comparison variant: optimism evaluated at the pre-aggregated point
    xbar_{t+1} = sum_i p_{t,i} x_{t+1,i}, no correction terms."""

    def __init__(self, params: ProblemParams, domain: Domain, pool: StepSizePool | None = None, T: int | None = None):
        if pool is None:
            if T is None:
                raise ValueError("need a pool or a horizon to build one")
            pool = build_pool(params, T, PoolKind.ALT_OPTIMISM_B1)
        super().__init__(params, domain, pool)
        self.cum_feedback = np.zeros(pool.n)
        self.delta = 4.0 * params.D**2 * params.L**2 * (math.log(pool.n) + 2.0 * params.D**2)
        self.acc_hat = 0.0
        self.prev_f: LossFn | None = None
        self.xbar = self.x.copy()

    def round(self, f: LossFn) -> RoundTelemetry:
        g_comb = f.grad(self.x)
        self._check_grad(g_comb)
        self._record_base_losses(f)
        eps = 1.0 / math.sqrt(self.delta + 4.0 * self.params.G**2 + self.acc_hat)
        prev_at_bar = (
            np.zeros(self.domain.dim) if self.prev_f is None else self.prev_f.grad(self.xbar)
        )
        dev = g_comb - prev_at_bar
        self.acc_hat += float(dev @ dev)

        x_new = np.empty_like(self.x_base)
        xhat_new = np.empty_like(self.xhat)
        for i in range(self.n):
            g_i = f.grad(self.x_base[i])
            xhat_new[i] = self.domain.project(self.xhat[i] - self.etas[i] * g_i)
            x_new[i] = self.domain.project(xhat_new[i] - self.etas[i] * g_i)

        feedback = self.x_base @ g_comb
        self.cum_feedback += feedback
        xbar_next = self.p @ x_new
        optimism = x_new @ f.grad(xbar_next)
        p_new = _softmax(-eps * (self.cum_feedback + optimism))

        telemetry = RoundTelemetry(
            eps=eps,
            p=p_new,
            feedback=feedback,
            optimism=optimism,
            prev_optimism=None,
            base_decisions=self.x_base.copy(),
            grad_at_combined=g_comb,
        )
        self.xhat = xhat_new
        self.x_base = x_new
        self.xbar = xbar_next
        self.prev_f = f
        self.p = p_new
        self.x = p_new @ x_new
        self.t += 1
        return telemetry


ENSEMBLES = {
    "ensemble_smooth": (SmoothEnsemble, PoolKind.SMOOTH_THM5),
    "ensemble_nonsmooth": (NonsmoothEnsemble, PoolKind.NONSMOOTH_THM7),
    "ensemble_alt_optimism": (AltOptimismEnsemble, PoolKind.ALT_OPTIMISM_B1),
}
