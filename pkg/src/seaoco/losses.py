"""Parametric loss families with value, (sub)gradient, and prox oracles.

Four round-loss families are supported:

  Linear(g)              f(x) = <g, x> + const
  ShiftedQuadratic(c,l)  f(x) = (l/2) ||x - c||^2 + const
  SquaredLinear(a,b)     f(x) = 0.5 (<a, x> - b)^2 + const
  Absolute(a,b)          f(x) = |<a, x> - b| + const          (non-smooth)

`const` never affects gradients or prox steps; it keeps corrupted /
batch-averaged losses exact in value.  Expected losses are finite mixtures
of round losses, which covers every environment in this package exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    Ball,
    Domain,
    SolverFailureError,
    SpdMatrix,
    as_vector,
    project_mahalanobis,
)


@dataclass(frozen=True)
class Linear:
    g: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "g", as_vector(self.g))

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    def value(self, x: np.ndarray) -> float:
        return float(self.g @ x) + self.const

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.g

    def grad_norm_bound(self, domain: Domain) -> float:
        return float(np.linalg.norm(self.g))

    @property
    def smooth(self) -> bool:
        return True


@dataclass(frozen=True)
class ShiftedQuadratic:
    c: np.ndarray
    lam: float
    const: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "c", as_vector(self.c))
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def value(self, x: np.ndarray) -> float:
        d = x - self.c
        return 0.5 * self.lam * float(d @ d) + self.const

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.lam * (x - self.c)

    def grad_norm_bound(self, domain: Domain) -> float:
        # ||grad|| = lam ||x - c||, maximized at an extreme point
        if isinstance(domain, Ball):
            return self.lam * (domain.radius + float(np.linalg.norm(self.c)))
        pts = domain.extreme_points()
        return self.lam * float(np.max(np.linalg.norm(pts - self.c, axis=1)))

    @property
    def smooth(self) -> bool:
        return True


@dataclass(frozen=True)
class SquaredLinear:
    a: np.ndarray
    b: float
    const: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", as_vector(self.a))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def value(self, x: np.ndarray) -> float:
        r = float(self.a @ x) - self.b
        return 0.5 * r * r + self.const

    def grad(self, x: np.ndarray) -> np.ndarray:
        return (float(self.a @ x) - self.b) * self.a

    def grad_norm_bound(self, domain: Domain) -> float:
        lo, hi = domain.support_range(self.a)
        return float(np.linalg.norm(self.a)) * max(abs(lo - self.b), abs(hi - self.b))

    def exp_concavity(self, domain: Domain) -> float:
        """Per-instance modulus 1 / (2 sup (<a,x> - b)^2) over the domain."""
        lo, hi = domain.support_range(self.a)
        sup_sq = max(abs(lo - self.b), abs(hi - self.b)) ** 2
        if sup_sq == 0.0:
            raise ValueError("degenerate squared-linear loss: residual is 0 on the domain")
        return 1.0 / (2.0 * sup_sq)

    @property
    def smooth(self) -> bool:
        return True


@dataclass(frozen=True)
class Absolute:
    a: np.ndarray
    b: float
    const: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", as_vector(self.a))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def value(self, x: np.ndarray) -> float:
        return abs(float(self.a @ x) - self.b) + self.const

    def grad(self, x: np.ndarray) -> np.ndarray:
        # midpoint subgradient selection: coefficient 0 at the kink
        return np.sign(float(self.a @ x) - self.b) * self.a

    def grad_norm_bound(self, domain: Domain) -> float:
        return float(np.linalg.norm(self.a))

    @property
    def smooth(self) -> bool:
        return False


LossFn = Linear | ShiftedQuadratic | SquaredLinear | Absolute


class ExpectedLoss:
    """Finite mixture sum_k w_k f_k, the conditional expectation of a round loss.

    Exact whenever the round distribution has finite support (all environments
    here).  The gradient uses the mixture of per-component selections, which is
    a valid subgradient everywhere.
    """

    __slots__ = ("weights", "components", "exact")

    def __init__(self, components, weights=None, exact: bool = True):
        components = tuple(components)
        if not components:
            raise ValueError("mixture needs at least one component")
        if weights is None:
            weights = np.full(len(components), 1.0 / len(components))
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(components),) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 over the components")
        self.components = components
        self.weights = weights
        self.exact = exact

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def value(self, x: np.ndarray) -> float:
        return float(sum(w * f.value(x) for w, f in zip(self.weights, self.components)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dim)
        for w, f in zip(self.weights, self.components):
            out += w * f.grad(x)
        return out

    @property
    def smooth(self) -> bool:
        return all(f.smooth for f in self.components)


def eval_loss(f: LossFn | ExpectedLoss, x) -> float:
    x = as_vector(x, f.dim)
    v = f.value(x)
    if not np.isfinite(v):
        raise ValueError("loss evaluated to a non-finite value")
    return v


def grad(f: LossFn | ExpectedLoss, x) -> np.ndarray:
    return f.grad(as_vector(x, f.dim))


# ---------------------------------------------------------------------------
# Prox oracle: argmin over X of f(x) + (1/2 eta) ||x - xhat||^2
# ---------------------------------------------------------------------------

_PROX_MAX_ITER = 50_000


def _prox_absolute(f: Absolute, xhat: np.ndarray, eta: float, domain: Domain) -> np.ndarray:
    # 1-D reduction over the subgradient coefficient s in [-1, 1]:
    # x*(s) = Pi_X(xhat - eta s a) and s must agree with sign(<a,x*> - b).
    # r(s) = <a, x*(s)> - b is continuous and non-increasing, so bisect.
    a, b = f.a, f.b
    # fast path: unconstrained soft-threshold solution, exact when feasible
    u = float(a @ xhat) - b
    asq = float(a @ a)
    if asq == 0.0:
        return domain.project(xhat)
    tau = -np.sign(u) * min(eta, abs(u) / asq)
    cand = xhat + tau * a
    if domain.contains(cand, tol=0.0):
        return cand

    def r(s: float) -> float:
        return float(a @ domain.project(xhat - eta * s * a)) - b

    if r(1.0) >= 0.0:
        return domain.project(xhat - eta * a)
    if r(-1.0) <= 0.0:
        return domain.project(xhat + eta * a)
    lo, hi = -1.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if r(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return domain.project(xhat - eta * (0.5 * (lo + hi)) * a)


def _prox_residual(f: LossFn, x: np.ndarray, xhat: np.ndarray, eta: float, domain: Domain) -> float:
    v = f.grad(x) + (x - xhat) / eta
    return float(np.linalg.norm(x - domain.project(x - v)))


def _prox_subgradient_fallback(
    f: LossFn, xhat: np.ndarray, eta: float, domain: Domain, tol: float
) -> np.ndarray:
    best = domain.project(xhat)
    best_val = f.value(best) + float((best - xhat) @ (best - xhat)) / (2 * eta)
    x = best
    for k in range(1, _PROX_MAX_ITER + 1):
        g = f.grad(x) + (x - xhat) / eta
        x = domain.project(x - g / (k / eta + 1.0))
        val = f.value(x) + float((x - xhat) @ (x - xhat)) / (2 * eta)
        if val < best_val:
            best, best_val = x, val
            if _prox_residual(f, best, xhat, eta, domain) <= tol:
                return best
    residual = _prox_residual(f, best, xhat, eta, domain)
    if residual <= tol:
        return best
    raise SolverFailureError("prox fallback did not converge", residual)


def prox(f: LossFn, xhat, eta: float, domain: Domain, tol: float = 1e-10) -> np.ndarray:
    """Implicit step: argmin over the domain of f(x) + (1/2 eta)||x - xhat||^2."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    xhat = as_vector(xhat, domain.dim)
    if isinstance(f, Linear):
        return domain.project(xhat - eta * f.g)
    if isinstance(f, ShiftedQuadratic):
        # objective is an isotropic quadratic, so projecting its minimizer is exact
        z = (xhat + eta * f.lam * f.c) / (1.0 + eta * f.lam)
        return domain.project(z)
    if isinstance(f, SquaredLinear):
        asq = float(f.a @ f.a)
        tau = eta * (f.b - float(f.a @ xhat)) / (1.0 + eta * asq)
        z = xhat + tau * f.a
        if domain.contains(z, tol=0.0):
            return z
        # constrained case is the Mahalanobis projection of z in the prox metric
        H = SpdMatrix(np.outer(f.a, f.a) + np.eye(f.dim) / eta)
        return project_mahalanobis(domain, H, z, tol=tol)
    if isinstance(f, Absolute):
        x = _prox_absolute(f, xhat, eta, domain)
        if _prox_residual(f, x, xhat, eta, domain) <= max(tol, 1e-9):
            return x
        return _prox_subgradient_fallback(f, xhat, eta, domain, tol)
    raise TypeError(f"prox not implemented for {type(f).__name__}")
