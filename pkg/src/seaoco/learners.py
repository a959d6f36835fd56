"""Static-regret learners: optimistic OMD, optimistic FTRL, and the
implicit-update variant for non-smooth losses.

All learners expose `x` (the decision for the upcoming round) and a `step`
method fed with that round's gradient (or, for the implicit learner, the full
loss).  Optimism is always the last observed gradient; the gradient of the
round-0 placeholder loss is the zero vector.

Each step also records a cheap certificate of the mirror-descent stability
inequality ||xhat_{t+1} - x_t|| <= eta_t ||g_t - g_{t-1}|| (in the metric of
the current regularizer), which the harness asserts every round.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import Domain, ProblemParams, SpdMatrix, as_vector, project_mahalanobis
from .losses import LossFn, grad as loss_grad, prox


class ConfigurationError(ValueError):
    pass


class _LearnerBase:
    """Shared bookkeeping: feasibility, gradient-bound accounting, stability."""

    def __init__(self, params: ProblemParams, domain: Domain):
        self.params = params
        self.domain = domain
        self.t = 0  # rounds completed
        self.grad_bound_violations = 0
        self.last_stability_slack = 0.0  # lhs - rhs of the stability inequality

    def _check_grad(self, g: np.ndarray) -> None:
        if float(np.linalg.norm(g)) > self.params.G + 1e-9:
            self.grad_bound_violations += 1


class OmdConvex(_LearnerBase):
    """Two-projection optimistic OMD with the self-confident step size
    eta_t = D / sqrt(delta + 4 G^2 + Vbar_{t-1}), delta = 10 D^2 L^2."""

    def __init__(self, params: ProblemParams, domain: Domain):
        super().__init__(params, domain)
        self.delta = 10.0 * params.D**2 * params.L**2
        self.xhat = domain.initial_point()
        self.x = self.xhat.copy()
        self.prev_grad = np.zeros(domain.dim)
        self.vbar = 0.0  # sum ||g_s - g_{s-1}||^2 over completed rounds
        self.eta = self._eta(self.vbar)

    def _eta(self, vbar: float) -> float:
        return self.params.D / math.sqrt(self.delta + 4.0 * self.params.G**2 + vbar)

    def step(self, g) -> np.ndarray:
        g = as_vector(g, self.domain.dim)
        self._check_grad(g)
        eta_t = self.eta
        xhat_next = self.domain.project(self.xhat - eta_t * g)
        diff = g - self.prev_grad
        diff_sq = float(diff @ diff)
        self.last_stability_slack = (
            float(np.linalg.norm(xhat_next - self.x)) - eta_t * math.sqrt(diff_sq)
        )
        self.vbar += diff_sq
        eta_next = self._eta(self.vbar)
        x_next = self.domain.project(xhat_next - eta_next * g)
        self.xhat = xhat_next
        self.x = x_next
        self.prev_grad = g
        self.eta = eta_next
        self.t += 1
        return x_next


class OmdStronglyConvex(_LearnerBase):
    """Optimistic OMD with eta_t = 2 / (lam t) for strongly convex losses."""

    def __init__(self, params: ProblemParams, domain: Domain):
        if params.lam is None:
            raise ConfigurationError("strongly convex OMD needs lam")
        super().__init__(params, domain)
        self.lam = params.lam
        self.xhat = domain.initial_point()
        self.x = self.xhat.copy()
        self.prev_grad = np.zeros(domain.dim)
        self.eta = self._eta(1)

    def _eta(self, t: int) -> float:
        if t < 1:
            raise ConfigurationError("round index must be >= 1")
        return 2.0 / (self.lam * t)

    def step(self, g) -> np.ndarray:
        g = as_vector(g, self.domain.dim)
        self._check_grad(g)
        t = self.t + 1
        eta_t = self._eta(t)
        xhat_next = self.domain.project(self.xhat - eta_t * g)
        self.last_stability_slack = float(
            np.linalg.norm(xhat_next - self.x)
        ) - eta_t * float(np.linalg.norm(g - self.prev_grad))
        eta_next = self._eta(t + 1)
        x_next = self.domain.project(xhat_next - eta_next * g)
        self.xhat = xhat_next
        self.x = x_next
        self.prev_grad = g
        self.eta = eta_next
        self.t = t
        return x_next


class OnlineNewtonStep(_LearnerBase):
    """Optimistic OMD with the matrix regularizer
    H_t = (1 + beta G^2 / 2) I + (beta/2) sum_{s<t} g_s g_s^T,
    beta = 0.5 min{1/(4GD), alpha}."""

    def __init__(self, params: ProblemParams, domain: Domain, proj_tol: float = 1e-10):
        if params.alpha is None:
            raise ConfigurationError("ONS needs the exp-concavity modulus alpha")
        super().__init__(params, domain)
        self.beta = 0.5 * min(1.0 / (4.0 * params.G * params.D), params.alpha)
        self.H = SpdMatrix.identity(domain.dim, 1.0 + 0.5 * self.beta * params.G**2)
        self.xhat = domain.initial_point()
        self.x = self.xhat.copy()
        self.prev_grad = np.zeros(domain.dim)
        self.proj_tol = proj_tol

    def _argmin(self, H: SpdMatrix, center: np.ndarray, g: np.ndarray) -> np.ndarray:
        return project_mahalanobis(self.domain, H, center - H.solve(g), tol=self.proj_tol)

    def step(self, g) -> np.ndarray:
        g = as_vector(g, self.domain.dim)
        self._check_grad(g)
        H_t = self.H
        xhat_next = self._argmin(H_t, self.xhat, g)
        diff = g - self.prev_grad
        # stability in the H_t metric: ||xhat_{t+1} - x_t||_H <= ||g - g_prev||_{H^{-1}}
        gap = xhat_next - self.x
        self.last_stability_slack = math.sqrt(max(H_t.quad(gap), 0.0)) - math.sqrt(
            max(H_t.quad_inv(diff), 0.0)
        )
        H_next = H_t.rank_one_update(g, 0.5 * self.beta)
        x_next = self._argmin(H_next, xhat_next, g)
        self.H = H_next
        self.xhat = xhat_next
        self.x = x_next
        self.prev_grad = g
        self.t += 1
        return x_next


class ImplicitOmd(_LearnerBase):
    """Optimistic OMD whose optimistic step is the prox (implicit) update,
    for non-smooth losses.  Step size
    eta_t = D / sqrt(1 + 4 G^2 + sum_{s<t} ||grad f_s(x_s) - grad f_{s-1}(x_s)||^2),
    where both gradients are taken at the round-s decision."""

    def __init__(self, params: ProblemParams, domain: Domain, prox_tol: float = 1e-10):
        super().__init__(params, domain)
        self.xhat = domain.initial_point()
        self.x = self.xhat.copy()
        self.prev_loss: LossFn | None = None
        self.acc = 0.0
        self.eta = self._eta(self.acc)
        self.prox_tol = prox_tol

    def _eta(self, acc: float) -> float:
        return self.params.D / math.sqrt(1.0 + 4.0 * self.params.G**2 + acc)

    def step_loss(self, f: LossFn) -> np.ndarray:
        g = loss_grad(f, self.x)
        self._check_grad(g)
        eta_t = self.eta
        prev_g_here = (
            np.zeros(self.domain.dim) if self.prev_loss is None else loss_grad(self.prev_loss, self.x)
        )
        diff = g - prev_g_here
        self.acc += float(diff @ diff)
        eta_next = self._eta(self.acc)
        xhat_next = self.domain.project(self.xhat - eta_t * g)
        x_next = prox(f, xhat_next, eta_next, self.domain, tol=self.prox_tol)
        self.xhat = xhat_next
        self.x = x_next
        self.prev_loss = f
        self.eta = eta_next
        self.t += 1
        return x_next


class FtrlConvex(_LearnerBase):
    """Optimistic FTRL over linearized losses with the recursive step size
    eta_t = D^2 / (delta + sum_{s<t} eta_s ||g_s - g_{s-1}||^2),
    delta = sqrt(9 D^4 L^2 + 6 D^2 G^2)."""

    def __init__(self, params: ProblemParams, domain: Domain):
        super().__init__(params, domain)
        self.delta = math.sqrt(9.0 * params.D**4 * params.L**2 + 6.0 * params.D**2 * params.G**2)
        self.grad_sum = np.zeros(domain.dim)
        self.prev_grad = np.zeros(domain.dim)
        self.weighted_var = 0.0
        self.eta = params.D**2 / self.delta
        self.x = domain.project(np.zeros(domain.dim))

    def step(self, g) -> np.ndarray:
        g = as_vector(g, self.domain.dim)
        self._check_grad(g)
        diff = g - self.prev_grad
        self.weighted_var += self.eta * float(diff @ diff)
        eta_next = self.params.D**2 / (self.delta + self.weighted_var)
        self.grad_sum += g
        x_next = self.domain.project(-(eta_next / 2.0) * (self.grad_sum + g))
        self.eta = eta_next
        self.prev_grad = g
        self.x = x_next
        self.t += 1
        return x_next


class FtrlStronglyConvex(_LearnerBase):
    """Optimistic FTRL over strongly convex surrogate losses; the argmin of the
    lam(t+1)-strongly-convex objective has the closed form
    (lam (x0 + sum x_s) - sum g_s - m_{t+1}) / (lam (t+1)) followed by projection."""

    def __init__(self, params: ProblemParams, domain: Domain):
        if params.lam is None:
            raise ConfigurationError("strongly convex FTRL needs lam")
        super().__init__(params, domain)
        self.lam = params.lam
        self.x0 = domain.initial_point()
        self.x = self.x0.copy()
        self.sum_x = np.zeros(domain.dim)
        self.sum_g = np.zeros(domain.dim)

    def step(self, g) -> np.ndarray:
        g = as_vector(g, self.domain.dim)
        self._check_grad(g)
        self.sum_x += self.x
        self.sum_g += g
        t = self.t + 1
        z = (self.lam * (self.x0 + self.sum_x) - self.sum_g - g) / (self.lam * (t + 1))
        x_next = self.domain.project(z)
        self.x = x_next
        self.t = t
        return x_next


class FtrlExpConcave(_LearnerBase):
    """Optimistic FTRL over exp-concave surrogate losses.  The cumulative
    objective is the quadratic 0.5 x^T A_t x + <b_t, x> with
    A_t = (1 + beta G^2) I + beta sum_{s<=t} g_s g_s^T and
    b_t = sum_{s<=t} (g_s - beta <g_s, x_s> g_s) + g_t (optimism)."""

    def __init__(self, params: ProblemParams, domain: Domain, proj_tol: float = 1e-10):
        if params.alpha is None:
            raise ConfigurationError("exp-concave FTRL needs alpha")
        super().__init__(params, domain)
        self.beta = 0.5 * min(1.0 / (4.0 * params.G * params.D), params.alpha)
        self.A = SpdMatrix.identity(domain.dim, 1.0 + self.beta * params.G**2)
        self.b = np.zeros(domain.dim)
        self.x = domain.project(np.zeros(domain.dim))
        self.proj_tol = proj_tol

    def step(self, g) -> np.ndarray:
        g = as_vector(g, self.domain.dim)
        self._check_grad(g)
        self.A = self.A.rank_one_update(g, self.beta)
        self.b = self.b + g - self.beta * float(g @ self.x) * g
        z = self.A.solve(-(self.b + g))
        x_next = project_mahalanobis(self.domain, self.A, z, tol=self.proj_tol)
        self.x = x_next
        self.t += 1
        return x_next


GRADIENT_LEARNERS = {
    "omd_convex": OmdConvex,
    "omd_strongly_convex": OmdStronglyConvex,
    "ons": OnlineNewtonStep,
    "ftrl_convex": FtrlConvex,
    "ftrl_strongly_convex": FtrlStronglyConvex,
    "ftrl_exp_concave": FtrlExpConcave,
}

LOSS_LEARNERS = {
    "implicit_omd": ImplicitOmd,
}


def make_learner(name: str, params: ProblemParams, domain: Domain):
    if name in GRADIENT_LEARNERS:
        return GRADIENT_LEARNERS[name](params, domain)
    if name in LOSS_LEARNERS:
        return LOSS_LEARNERS[name](params, domain)
    raise ConfigurationError(f"unknown learner '{name}'")
