"""Feasible domains, projections, and SPD matrix maintenance.

Everything downstream (learners, ensembles, environments) works with plain
1-D numpy arrays as decision vectors.  Domains own their projection oracles;
the Mahalanobis projection and the rank-one inverse update live here because
the second-order learners share them.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np


class DimensionMismatchError(ValueError):
    pass


class SolverFailureError(RuntimeError):
    """Iterative solver did not reach its tolerance; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class DegenerateUpdateError(RuntimeError):
    pass


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Validate and return a finite 1-D float array."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatchError(f"expected 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def _project_simplex(y: np.ndarray) -> np.ndarray:
    # Sorting-based O(d log d) projection onto {x >= 0, sum x = 1}.
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, y.size + 1) > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


@dataclass(frozen=True)
class Ball:
    """Euclidean ball of given radius centered at the origin."""

    radius: float
    dim: int

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def contains(self, x: np.ndarray, tol: float = 1e-10) -> bool:
        return float(np.linalg.norm(x)) <= self.radius + tol

    def project(self, y: np.ndarray) -> np.ndarray:
        y = as_vector(y, self.dim)
        n = float(np.linalg.norm(y))
        if n <= self.radius:
            return y
        return y * (self.radius / n)

    def project_rows(self, Y: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(Y, axis=1)
        scale = np.where(norms > self.radius, self.radius / np.maximum(norms, 1e-300), 1.0)
        return Y * scale[:, None]

    def support_range(self, a: np.ndarray) -> tuple[float, float]:
        # range of <a, x> over the domain
        s = self.radius * float(np.linalg.norm(a))
        return -s, s

    def extreme_points(self) -> np.ndarray:
        # +-r e_i, used as probe anchors for sup estimates
        eye = np.eye(self.dim) * self.radius
        return np.vstack([eye, -eye])


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi]; must contain the origin."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = as_vector(self.lo)
        hi = as_vector(self.hi, lo.shape[0])
        if np.any(lo > 0) or np.any(hi < 0):
            raise ValueError("box must contain the origin (lo <= 0 <= hi)")
        if np.any(hi < lo):
            raise ValueError("need lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def contains(self, x: np.ndarray, tol: float = 1e-10) -> bool:
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def project(self, y: np.ndarray) -> np.ndarray:
        y = as_vector(y, self.dim)
        return np.clip(y, self.lo, self.hi)

    def project_rows(self, Y: np.ndarray) -> np.ndarray:
        return np.clip(Y, self.lo, self.hi)

    def support_range(self, a: np.ndarray) -> tuple[float, float]:
        hi = float(np.sum(np.where(a > 0, a * self.hi, a * self.lo)))
        lo = float(np.sum(np.where(a > 0, a * self.lo, a * self.hi)))
        return lo, hi

    def extreme_points(self) -> np.ndarray:
        if self.dim > 12:
            raise ValueError("corner enumeration not supported beyond d=12")
        corners = np.array(np.meshgrid(*zip(self.lo, self.hi))).T.reshape(-1, self.dim)
        return corners


@dataclass(frozen=True)
class Simplex:
    """Probability simplex in R^dim."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def diameter(self) -> float:
        return float(np.sqrt(2.0)) if self.dim > 1 else 0.0

    def initial_point(self) -> np.ndarray:
        return np.full(self.dim, 1.0 / self.dim)

    def contains(self, x: np.ndarray, tol: float = 1e-10) -> bool:
        return bool(np.all(x >= -tol) and abs(float(np.sum(x)) - 1.0) <= tol)

    def project(self, y: np.ndarray) -> np.ndarray:
        y = as_vector(y, self.dim)
        if self.contains(y, tol=0.0):
            return y
        return _project_simplex(y)

    def project_rows(self, Y: np.ndarray) -> np.ndarray:
        return np.vstack([self.project(row) for row in Y])

    def support_range(self, a: np.ndarray) -> tuple[float, float]:
        return float(np.min(a)), float(np.max(a))

    def extreme_points(self) -> np.ndarray:
        return np.eye(self.dim)


Domain = Ball | Box | Simplex


def project_euclidean(domain: Domain, y) -> np.ndarray:
    """argmin over the domain of ||x - y||_2."""
    return domain.project(as_vector(y, domain.dim))


@dataclass(frozen=True)
class ProblemParams:
    """Problem-level constants shared by learners and bound calculators.

    All are upper bounds: G on gradient norms, D on the domain diameter,
    L on the smoothness of expected losses.  lam / alpha are the strong
    convexity and exp-concavity moduli when applicable.
    """

    G: float
    D: float
    L: float
    lam: float | None = None
    alpha: float | None = None
    sigma_max_sq: float | None = None
    Sigma_max_sq: float | None = None

    def __post_init__(self):
        for name in ("G", "D", "L", "lam", "alpha", "sigma_max_sq", "Sigma_max_sq"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be strictly positive, got {v}")

    def replace(self, **kw) -> "ProblemParams":
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------------------
# SPD matrices with incrementally maintained inverses
# ---------------------------------------------------------------------------

_REFACTOR_EVERY = 512  # dense re-inversion cadence, bounds float drift


class SpdMatrix:
    """Symmetric positive-definite matrix stored together with its inverse.

    Instances are treated as immutable values: `rank_one_update` returns a
    new matrix.  The inverse is maintained by Sherman-Morrison and recomputed
    from scratch by dense factorization every 512 updates.
    """

    __slots__ = ("mat", "inv", "_updates", "_lam_max")

    def __init__(self, mat: np.ndarray, inv: np.ndarray | None = None, _updates: int = 0):
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("SpdMatrix needs a square matrix")
        if not np.allclose(mat, mat.T, atol=1e-10, rtol=0.0):
            raise ValueError("matrix is not symmetric to 1e-10")
        self.mat = mat
        self.inv = np.linalg.inv(mat) if inv is None else inv
        self._updates = _updates
        self._lam_max = None

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "SpdMatrix":
        eye = np.eye(dim)
        return cls(eye * scale, eye / scale)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.mat @ v

    def solve(self, v: np.ndarray) -> np.ndarray:
        return self.inv @ v

    def quad(self, v: np.ndarray) -> float:
        """v^T H v."""
        return float(v @ self.mat @ v)

    def quad_inv(self, v: np.ndarray) -> float:
        """v^T H^{-1} v."""
        return float(v @ self.inv @ v)

    def inverse_drift(self) -> float:
        return float(np.max(np.abs(self.mat @ self.inv - np.eye(self.dim))))

    def lam_max(self) -> float:
        """Largest eigenvalue, estimated by power iteration (memoized)."""
        if self._lam_max is None:
            v = np.ones(self.dim) + 1e-3 * np.arange(self.dim)
            v /= np.linalg.norm(v)
            lam = 0.0
            for _ in range(200):
                w = self.mat @ v
                lam_new = float(np.linalg.norm(w))
                v = w / lam_new
                if abs(lam_new - lam) <= 1e-12 * max(lam_new, 1.0):
                    lam = lam_new
                    break
                lam = lam_new
            # small safety factor so 1/lam_max stays a valid step size
            self._lam_max = lam * (1.0 + 1e-9)
        return self._lam_max

    def rank_one_update(self, g: np.ndarray, s: float) -> "SpdMatrix":
        """Return H + s g g^T with the inverse updated by Sherman-Morrison."""
        if s < 0:
            raise ValueError("s must be >= 0")
        g = as_vector(g, self.dim)
        if s == 0.0:
            return self
        new_mat = self.mat + s * np.outer(g, g)
        updates = self._updates + 1
        if updates % _REFACTOR_EVERY == 0:
            new_inv = np.linalg.inv(new_mat)
        else:
            u = self.inv @ g
            denom = 1.0 + s * float(g @ u)
            if denom <= 1e-14:
                raise DegenerateUpdateError(f"rank-one denominator {denom:.3e} <= 1e-14")
            new_inv = self.inv - (s / denom) * np.outer(u, u)
        out = SpdMatrix.__new__(SpdMatrix)
        out.mat = new_mat
        out.inv = new_inv
        out._updates = updates
        out._lam_max = None
        return out


def rank_one_inverse_update(H: SpdMatrix, g, s: float) -> SpdMatrix:
    return H.rank_one_update(as_vector(g, H.dim), s)


def project_mahalanobis(
    domain: Domain,
    H: SpdMatrix,
    y,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> np.ndarray:
    """argmin over the domain of ||x - y||_H^2.

    Projected gradient on the quadratic with fixed step 1/lam_max(H); the
    optimality residual is the scaled fixed-point gap of the projection map.
    """
    y = as_vector(y, domain.dim)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if domain.contains(y, tol=0.0):
        return y
    lam = H.lam_max()
    step = 1.0 / lam
    x = domain.project(y)
    for _ in range(max_iter):
        grad = H.mat @ (x - y)
        x_new = domain.project(x - step * grad)
        residual = float(np.linalg.norm(x_new - x)) * lam
        x = x_new
        if residual <= tol:
            return x
    raise SolverFailureError("Mahalanobis projection did not converge", residual)
