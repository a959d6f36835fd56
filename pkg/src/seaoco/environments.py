"""Synthetic round-loss generators covering the interpolation regimes:
adversarial schedules, i.i.d. sampling, corrupted i.i.d., random order,
slow distribution shift, and batched sampling under limited resources.

Every environment reports, per round, the sampled loss f_t, the exact
conditional expectation F_t (a finite mixture), and -- whenever the family
makes them closed-form -- the exact per-round stochastic variance and
adversarial variation.  Randomness is counter-based: the (seed, trial)
pair keys an independent Philox stream and all draws for a trial are made
up front, so (seed, trial, t) pins every round.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Ball, Box, Domain, ProblemParams, Simplex, as_vector
from .losses import Absolute, ExpectedLoss, Linear, LossFn, ShiftedQuadratic, SquaredLinear


class EndOfHorizonError(RuntimeError):
    pass


class UnsupportedStructureError(ValueError):
    """Raised when a closed-form quantity is requested for a loss structure
    that does not admit one (callers should fall back to estimates/grids)."""


@dataclass(frozen=True)
class RoundSpec:
    f: LossFn
    F: ExpectedLoss
    sigma_sq_exact: float | None
    adv_var_exact: float | None
    sigma_tilde_sq_exact: float | None = None


def trial_generator(seed: int, trial: int) -> np.random.Generator:
    """Independent per-trial stream from a counter-based generator."""
    key = np.random.SeedSequence((seed, trial)).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# closed-form sup / variance helpers
# ---------------------------------------------------------------------------


def _sup_norm_isotropic_affine(domain: Domain, lam: float, z: np.ndarray, g0: np.ndarray) -> float:
    """sup over the domain of ||lam * x - z + g0|| (gradient of an isotropic
    quadratic plus a linear part); the norm is convex so polytopes attain the
    sup at extreme points and the ball has a closed form."""
    if lam == 0.0:
        return float(np.linalg.norm(g0 - z))
    center = (z - g0) / lam
    if isinstance(domain, Ball):
        return lam * (domain.radius + float(np.linalg.norm(center)))
    pts = domain.extreme_points()
    return lam * float(np.max(np.linalg.norm(pts - center, axis=1)))


def _mixture_gradient_profile(F: ExpectedLoss):
    """Classify a mixture's gradient: ('affine', lam, z, g0) meaning
    grad F(x) = lam x - z + g0, or ('squared', a, b), or ('absolute', a, bs, ws)."""
    comps, ws = F.components, F.weights
    if all(isinstance(c, (ShiftedQuadratic, Linear)) for c in comps):
        lam = sum(w * c.lam for w, c in zip(ws, comps) if isinstance(c, ShiftedQuadratic))
        z = np.zeros(F.dim)
        g0 = np.zeros(F.dim)
        for w, c in zip(ws, comps):
            if isinstance(c, ShiftedQuadratic):
                z += w * c.lam * c.c
            else:
                g0 += w * c.g
        return ("affine", float(lam), z, g0)
    if all(isinstance(c, SquaredLinear) for c in comps):
        a = comps[0].a
        if any(not np.array_equal(c.a, a) for c in comps):
            raise UnsupportedStructureError("squared-linear mixture needs a shared direction")
        b = float(sum(w * c.b for w, c in zip(ws, comps)))
        return ("squared", a, b)
    if all(isinstance(c, Absolute) for c in comps):
        a = comps[0].a
        if any(not np.array_equal(c.a, a) for c in comps):
            raise UnsupportedStructureError("absolute mixture needs a shared direction")
        return ("absolute", a, np.array([c.b for c in comps]), np.asarray(ws))
    raise UnsupportedStructureError("mixed families without a closed-form gradient profile")


def _abs_mean_coeff(bs: np.ndarray, ws: np.ndarray, s: float) -> float:
    # d/ds of sum_k w_k |s - b_k| with midpoint selection at kinks
    return float(np.sum(ws * np.sign(s - bs)))


def _scan_values(*b_arrays) -> np.ndarray:
    # probe points between / outside all breakpoints
    bs = np.unique(np.concatenate([np.atleast_1d(b) for b in b_arrays]))
    probes = [bs[0] - 1.0, bs[-1] + 1.0]
    probes += list(bs)
    probes += list((bs[:-1] + bs[1:]) / 2.0)
    return np.asarray(probes)


def sup_grad_norm_sq(F: ExpectedLoss, domain: Domain) -> float:
    """sup over the domain of ||grad F||^2 (the t=1 adversarial-variation term)."""
    profile = _mixture_gradient_profile(F)
    if profile[0] == "affine":
        _, lam, z, g0 = profile
        return _sup_norm_isotropic_affine(domain, lam, z, g0) ** 2
    if profile[0] == "squared":
        _, a, b = profile
        lo, hi = domain.support_range(a)
        return float(a @ a) * max(abs(lo - b), abs(hi - b)) ** 2
    _, a, bs, ws = profile
    lo, hi = domain.support_range(a)
    probes = np.clip(_scan_values(bs, np.array([lo, hi])), lo, hi)
    coeff = max(abs(_abs_mean_coeff(bs, ws, s)) for s in probes)
    return float(a @ a) * coeff**2


def sup_grad_diff_sq(F_t: ExpectedLoss, F_prev: ExpectedLoss, domain: Domain) -> float:
    """sup over the domain of ||grad F_t - grad F_{t-1}||^2."""
    p_t = _mixture_gradient_profile(F_t)
    p_prev = _mixture_gradient_profile(F_prev)
    if p_t[0] != p_prev[0]:
        raise UnsupportedStructureError("consecutive rounds must share a gradient profile")
    if p_t[0] == "affine":
        _, lam1, z1, g1 = p_t
        _, lam0, z0, g0 = p_prev
        return _sup_norm_isotropic_affine(domain, lam1 - lam0, z1 - z0, g1 - g0) ** 2
    if p_t[0] == "squared":
        _, a1, b1 = p_t
        _, a0, b0 = p_prev
        if not np.array_equal(a1, a0):
            raise UnsupportedStructureError("squared-linear rounds must share a direction")
        return float(a1 @ a1) * (b1 - b0) ** 2
    _, a1, bs1, ws1 = p_t
    _, a0, bs0, ws0 = p_prev
    if not np.array_equal(a1, a0):
        raise UnsupportedStructureError("absolute rounds must share a direction")
    lo, hi = domain.support_range(a1)
    probes = np.clip(_scan_values(bs1, bs0, np.array([lo, hi])), lo, hi)
    coeff = max(
        abs(_abs_mean_coeff(bs1, ws1, s) - _abs_mean_coeff(bs0, ws0, s)) for s in probes
    )
    return float(a1 @ a1) * coeff**2


def _atom_grad_deltas(atoms, weights, F: ExpectedLoss) -> np.ndarray | None:
    """Per-atom constant gradient deviations grad f_k - grad F, or None when
    the deviation is not constant over the domain."""
    if not all(isinstance(a, (Linear, ShiftedQuadratic, SquaredLinear)) for a in atoms):
        return None
    try:
        profile = _mixture_gradient_profile(F)
    except UnsupportedStructureError:
        return None
    deltas = []
    for atom in atoms:
        if isinstance(atom, (Linear, ShiftedQuadratic)):
            if profile[0] != "affine":
                return None
            _, lam, z, g0 = profile
            a_lam = atom.lam if isinstance(atom, ShiftedQuadratic) else 0.0
            if abs(a_lam - lam) > 1e-15:  # x-dependent deviation
                return None
            a_z = a_lam * atom.c if isinstance(atom, ShiftedQuadratic) else np.zeros(F.dim)
            a_g0 = atom.g if isinstance(atom, Linear) else np.zeros(F.dim)
            deltas.append((a_g0 - a_z) - (g0 - z))
        else:  # SquaredLinear
            if profile[0] != "squared":
                return None
            _, a, b = profile
            if not np.array_equal(atom.a, a):
                return None
            deltas.append((b - atom.b) * a)
    return np.asarray(deltas)


def exact_sigma_sq(atoms, weights, F: ExpectedLoss) -> float | None:
    """sup_x E ||grad f - grad F||^2 when the deviation is constant in x."""
    deltas = _atom_grad_deltas(atoms, weights, F)
    if deltas is None:
        return None
    return float(np.sum(np.asarray(weights) * np.sum(deltas**2, axis=1)))


def exact_sigma_tilde_sq(atoms, weights, F: ExpectedLoss, domain: Domain) -> float | None:
    """E sup_x ||grad f - grad F||^2 for shared-direction absolute mixtures and
    for every constant-deviation family (where it equals sigma^2)."""
    deltas = _atom_grad_deltas(atoms, weights, F)
    if deltas is not None:
        return float(np.sum(np.asarray(weights) * np.sum(deltas**2, axis=1)))
    if not all(isinstance(a, Absolute) for a in atoms):
        return None
    profile = _mixture_gradient_profile(F)
    if profile[0] != "absolute":
        return None
    _, a, bs, ws = profile
    lo, hi = domain.support_range(a)
    total = 0.0
    for w, atom in zip(weights, atoms):
        probes = np.clip(_scan_values(bs, np.array([atom.b, lo, hi])), lo, hi)
        coeff = max(abs(np.sign(s - atom.b) - _abs_mean_coeff(bs, ws, s)) for s in probes)
        total += w * float(a @ a) * coeff**2
    return total


def average_losses(atoms) -> LossFn:
    """Exact mean of same-family losses (closed under averaging)."""
    k = len(atoms)
    if all(isinstance(a, Linear) for a in atoms):
        return Linear(
            sum(a.g for a in atoms) / k, const=sum(a.const for a in atoms) / k
        )
    if all(isinstance(a, ShiftedQuadratic) for a in atoms):
        lam = atoms[0].lam
        if any(abs(a.lam - lam) > 1e-15 for a in atoms):
            raise UnsupportedStructureError("quadratic averaging needs a shared curvature")
        centers = np.array([a.c for a in atoms])
        cbar = centers.mean(axis=0)
        spread = float(np.mean(np.sum((centers - cbar) ** 2, axis=1)))
        const = sum(a.const for a in atoms) / k + 0.5 * lam * spread
        return ShiftedQuadratic(cbar, lam, const=const)
    if all(isinstance(a, SquaredLinear) for a in atoms):
        direction = atoms[0].a
        if any(not np.array_equal(a.a, direction) for a in atoms):
            raise UnsupportedStructureError("squared-linear averaging needs a shared direction")
        bs = np.array([a.b for a in atoms])
        bbar = float(bs.mean())
        const = sum(a.const for a in atoms) / k + 0.5 * float(np.mean((bs - bbar) ** 2))
        return SquaredLinear(direction, bbar, const=const)
    raise UnsupportedStructureError("averaging is only closed for gradient-affine families")


# ---------------------------------------------------------------------------
# comparator oracles
# ---------------------------------------------------------------------------


def _minimize_linear(domain: Domain, g: np.ndarray) -> np.ndarray:
    if isinstance(domain, Ball):
        n = float(np.linalg.norm(g))
        return domain.initial_point() if n == 0.0 else -domain.radius * g / n
    if isinstance(domain, Box):
        return np.where(g > 0, domain.lo, domain.hi).astype(float)
    if isinstance(domain, Simplex):
        out = np.zeros(domain.dim)
        out[int(np.argmin(g))] = 1.0
        return out
    raise UnsupportedStructureError("unknown domain")


def _point_with_inner_product(domain: Domain, a: np.ndarray, s_target: float) -> np.ndarray:
    """A feasible point with <a, x> = s_target (clipped to the support range)."""
    lo, hi = domain.support_range(a)
    s = min(max(s_target, lo), hi)
    if isinstance(domain, Ball):
        return s * a / float(a @ a)
    # project points along the line tau * a; <a, P(tau a)> is monotone in tau
    t_lo, t_hi = -1.0, 1.0
    while float(a @ domain.project(t_lo * a)) > s and t_lo > -1e12:
        t_lo *= 2.0
    while float(a @ domain.project(t_hi * a)) < s and t_hi < 1e12:
        t_hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (t_lo + t_hi)
        if float(a @ domain.project(mid * a)) < s:
            t_lo = mid
        else:
            t_hi = mid
    return domain.project(0.5 * (t_lo + t_hi) * a)


def _weighted_median(bs: np.ndarray, ws: np.ndarray) -> float:
    order = np.argsort(bs)
    b_sorted, w_sorted = bs[order], ws[order]
    cum = np.cumsum(w_sorted)
    idx = int(np.searchsorted(cum, 0.5))
    if idx < len(b_sorted) - 1 and abs(cum[idx] - 0.5) <= 1e-15:
        return 0.5 * (b_sorted[idx] + b_sorted[idx + 1])  # flat stretch: midpoint
    return float(b_sorted[idx])


def minimize_expected(F: ExpectedLoss, domain: Domain, grid_resolution: float = 1e-4) -> np.ndarray:
    """argmin of an expected loss over the domain.

    Closed-form for the structures the environments emit; a dense-grid
    fallback (d <= 2) covers anything else.
    """
    try:
        profile = _mixture_gradient_profile(F)
    except UnsupportedStructureError:
        return _grid_minimize(F, domain, grid_resolution)
    if profile[0] == "affine":
        _, lam, z, g0 = profile
        if lam == 0.0:
            return _minimize_linear(domain, g0 - z)
        return domain.project((z - g0) / lam)
    if profile[0] == "squared":
        _, a, b = profile
        return _point_with_inner_product(domain, a, b)
    _, a, bs, ws = profile
    return _point_with_inner_product(domain, a, _weighted_median(bs, ws))


def _grid_minimize(F: ExpectedLoss, domain: Domain, resolution: float) -> np.ndarray:
    if domain.dim > 2:
        raise UnsupportedStructureError("grid fallback is limited to d <= 2")
    if isinstance(domain, Ball):
        lo = np.full(domain.dim, -domain.radius)
        hi = np.full(domain.dim, domain.radius)
    elif isinstance(domain, Box):
        lo, hi = domain.lo, domain.hi
    else:
        lo = np.zeros(domain.dim)
        hi = np.ones(domain.dim)
    axes = [np.arange(lo[i], hi[i] + resolution, resolution) for i in range(domain.dim)]
    best, best_val = None, np.inf
    for point in itertools.product(*axes):
        x = domain.project(np.asarray(point))
        v = F.value(x)
        if v < best_val:
            best, best_val = x, v
    return best


# ---------------------------------------------------------------------------
# environments
# ---------------------------------------------------------------------------


class _TrialContext:
    def __init__(self, env, T: int):
        self.env = env
        self.T = T

    def round(self, t: int) -> RoundSpec:
        raise NotImplementedError


class SeaEnvironment:
    """Base class; concrete kinds fill in per-trial round generation."""

    kind = "abstract"

    def __init__(self, domain: Domain, params: ProblemParams):
        self.domain = domain
        self.params = params

    @property
    def dim(self) -> int:
        return self.domain.dim

    def analytic_G(self) -> float:
        raise NotImplementedError

    def trial(self, seed: int, trial_index: int, T: int) -> _TrialContext:
        raise NotImplementedError

    def static_comparator(self, T: int) -> np.ndarray:
        raise NotImplementedError

    def round_comparator(self, spec: RoundSpec) -> np.ndarray:
        return minimize_expected(spec.F, self.domain)

    def validate_params(self) -> None:
        g = self.analytic_G()
        if g > self.params.G + 1e-9:
            raise ValueError(
                f"environment gradients (analytic bound {g:.6g}) exceed configured G={self.params.G}"
            )

    # distribution access for the Monte-Carlo sup-variance estimator; kinds
    # with a trial-independent round distribution override this
    def round_distribution(self, t: int):
        raise UnsupportedStructureError(f"{self.kind} has no trial-free round distribution")


class _DeterministicSequenceContext(_TrialContext):
    """Shared by environments whose F_t sequence is deterministic; draws are
    table lookups prepared at trial start."""

    def __init__(self, env, T: int, indices: np.ndarray | None):
        super().__init__(env, T)
        self.indices = indices

    def round(self, t: int) -> RoundSpec:
        if t < 1:
            raise ValueError("rounds are 1-indexed")
        return self.env._round_spec(t, None if self.indices is None else int(self.indices[t - 1]))


class AdversarialEnv(SeaEnvironment):
    """Deterministic schedule: F_t = f_t, zero stochastic variance."""

    kind = "adversarial"

    def __init__(self, schedule, domain: Domain, params: ProblemParams, cycle: bool = True):
        super().__init__(domain, params)
        self.schedule = list(schedule)
        self.cycle = cycle
        self._specs_cache: dict[int, RoundSpec] = {}

    def analytic_G(self) -> float:
        return max(f.grad_norm_bound(self.domain) for f in self.schedule)

    def _loss_at(self, t: int) -> LossFn:
        idx = (t - 1) % len(self.schedule) if self.cycle else t - 1
        if idx >= len(self.schedule):
            raise EndOfHorizonError(f"round {t} beyond the fixed schedule")
        return self.schedule[idx]

    def _round_spec(self, t: int, _idx) -> RoundSpec:
        # cyclic schedules repeat (f_{t-1}, f_t) pairs, so cache by phase
        key = ("first",) if t == 1 else (
            ("pair", (t - 1) % len(self.schedule)) if self.cycle else ("abs", t)
        )
        if key in self._specs_cache:
            return self._specs_cache[key]
        f = self._loss_at(t)
        F = ExpectedLoss([f], exact=True)
        if t == 1:
            adv = sup_grad_norm_sq(F, self.domain)
        else:
            F_prev = ExpectedLoss([self._loss_at(t - 1)], exact=True)
            adv = sup_grad_diff_sq(F, F_prev, self.domain)
        spec = RoundSpec(f, F, 0.0, adv, 0.0)
        self._specs_cache[key] = spec
        return spec

    def trial(self, seed: int, trial_index: int, T: int) -> _TrialContext:
        return _DeterministicSequenceContext(self, T, None)

    def static_comparator(self, T: int) -> np.ndarray:
        losses = [self._loss_at(t) for t in range(1, T + 1)]
        return minimize_expected(ExpectedLoss(losses), self.domain)


class IidEnv(SeaEnvironment):
    """Atoms sampled i.i.d. from a finite distribution; F_t is constant."""

    kind = "iid"

    def __init__(self, atoms, domain: Domain, params: ProblemParams, weights=None):
        super().__init__(domain, params)
        self.atoms = list(atoms)
        k = len(self.atoms)
        self.weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, float)
        self.F = ExpectedLoss(self.atoms, self.weights, exact=True)
        self.sigma_sq = exact_sigma_sq(self.atoms, self.weights, self.F)
        self.sigma_tilde_sq = exact_sigma_tilde_sq(self.atoms, self.weights, self.F, domain)
        self.adv_var_first = sup_grad_norm_sq(self.F, domain)

    def analytic_G(self) -> float:
        return max(f.grad_norm_bound(self.domain) for f in self.atoms)

    def _round_spec(self, t: int, idx: int) -> RoundSpec:
        return RoundSpec(
            self.atoms[idx],
            self.F,
            self.sigma_sq,
            self.adv_var_first if t == 1 else 0.0,
            self.sigma_tilde_sq,
        )

    def trial(self, seed: int, trial_index: int, T: int) -> _TrialContext:
        rng = trial_generator(seed, trial_index)
        indices = rng.choice(len(self.atoms), size=T, p=self.weights)
        return _DeterministicSequenceContext(self, T, indices)

    def static_comparator(self, T: int) -> np.ndarray:
        return minimize_expected(self.F, self.domain)

    def round_distribution(self, t: int):
        return self.atoms, self.weights, self.F


class CorruptedIidEnv(SeaEnvironment):
    """i.i.d. base losses plus a constructed linear corruption schedule
    <gamma_t, x> whose norms sum exactly to the corruption budget."""

    kind = "corrupted"

    def __init__(
        self,
        atoms,
        domain: Domain,
        params: ProblemParams,
        corruption_budget: float,
        corruption_rounds: int,
        weights=None,
    ):
        super().__init__(domain, params)
        self.base_atoms = list(atoms)
        k = len(self.base_atoms)
        self.weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, float)
        if corruption_budget < 0:
            raise ValueError("corruption budget must be >= 0")
        self.corruption_budget = corruption_budget
        self.corruption_rounds = corruption_rounds
        base_F = ExpectedLoss(self.base_atoms, self.weights, exact=True)
        self.sigma_sq = exact_sigma_sq(self.base_atoms, self.weights, base_F)
        self.sigma_tilde_sq = exact_sigma_tilde_sq(self.base_atoms, self.weights, base_F, domain)
        self._F_cache: dict[int, ExpectedLoss] = {}

    def gamma(self, t: int) -> np.ndarray:
        """Deterministic corruption vector; norms sum to the budget exactly."""
        if t > self.corruption_rounds or self.corruption_budget == 0.0:
            return np.zeros(self.dim)
        norm = self.corruption_budget / self.corruption_rounds
        direction = np.zeros(self.dim)
        direction[(t - 1) % self.dim] = 1.0 if t % 2 == 1 else -1.0
        return norm * direction

    def realized_corruption_total(self, T: int) -> float:
        return float(sum(np.linalg.norm(self.gamma(t)) for t in range(1, T + 1)))

    def _corrupt(self, f: LossFn, gamma_vec: np.ndarray) -> LossFn:
        if not np.any(gamma_vec):
            return f
        if isinstance(f, Linear):
            return Linear(f.g + gamma_vec, const=f.const)
        if isinstance(f, ShiftedQuadratic):
            shift = gamma_vec / f.lam
            const = f.const + float(gamma_vec @ f.c) - 0.5 * float(gamma_vec @ gamma_vec) / f.lam
            return ShiftedQuadratic(f.c - shift, f.lam, const=const)
        raise UnsupportedStructureError("corruption folding supports linear/quadratic atoms")

    def analytic_G(self) -> float:
        gmax = (
            self.corruption_budget / self.corruption_rounds if self.corruption_budget > 0 else 0.0
        )
        worst = 0.0
        for t in (1, 2):
            gam = np.zeros(self.dim)
            gam[0] = gmax
            for f in self.base_atoms:
                worst = max(worst, self._corrupt(f, gam).grad_norm_bound(self.domain))
        return worst

    def _expected(self, t: int) -> ExpectedLoss:
        if t not in self._F_cache:
            gam = self.gamma(t)
            comps = [self._corrupt(f, gam) for f in self.base_atoms]
            self._F_cache[t] = ExpectedLoss(comps, self.weights, exact=True)
        return self._F_cache[t]

    def _round_spec(self, t: int, idx: int) -> RoundSpec:
        gam = self.gamma(t)
        f = self._corrupt(self.base_atoms[idx], gam)
        F = self._expected(t)
        if t == 1:
            adv = sup_grad_norm_sq(F, self.domain)
        else:
            diff = gam - self.gamma(t - 1)
            adv = float(diff @ diff)
        return RoundSpec(f, F, self.sigma_sq, adv, self.sigma_tilde_sq)

    def trial(self, seed: int, trial_index: int, T: int) -> _TrialContext:
        rng = trial_generator(seed, trial_index)
        indices = rng.choice(len(self.base_atoms), size=T, p=self.weights)
        return _DeterministicSequenceContext(self, T, indices)

    def static_comparator(self, T: int) -> np.ndarray:
        comps, ws = [], []
        for t in range(1, T + 1):
            F_t = self._expected(t)
            comps.extend(F_t.components)
            ws.extend(F_t.weights / T)
        return minimize_expected(ExpectedLoss(comps, np.asarray(ws)), self.domain)

    def round_distribution(self, t: int):
        gam = self.gamma(t)
        atoms = [self._corrupt(f, gam) for f in self.base_atoms]
        return atoms, self.weights, self._expected(t)


class RandomOrderEnv(SeaEnvironment):
    """A fixed multiset of losses presented in uniformly random order;
    F_t is the mean over the not-yet-consumed remainder."""

    kind = "random_order"

    def __init__(self, atoms, domain: Domain, params: ProblemParams):
        super().__init__(domain, params)
        self.atoms = list(atoms)

    def analytic_G(self) -> float:
        return max(f.grad_norm_bound(self.domain) for f in self.atoms)

    def trial(self, seed: int, trial_index: int, T: int) -> "_RandomOrderContext":
        if T > len(self.atoms):
            raise EndOfHorizonError(
                f"horizon {T} exceeds the multiset of {len(self.atoms)} losses"
            )
        rng = trial_generator(seed, trial_index)
        perm = rng.permutation(len(self.atoms))
        return _RandomOrderContext(self, T, perm)

    def static_comparator(self, T: int) -> np.ndarray:
        # the multiset mean (= F_1) is the deterministic expected objective
        return minimize_expected(ExpectedLoss(self.atoms), self.domain)


class _RandomOrderContext(_TrialContext):
    def __init__(self, env: RandomOrderEnv, T: int, perm: np.ndarray):
        super().__init__(env, T)
        self.perm = perm
        self._prev_F: ExpectedLoss | None = None
        self._next_t = 1

    def round(self, t: int) -> RoundSpec:
        env = self.env
        if t > len(env.atoms):
            raise EndOfHorizonError(f"round {t} exceeds the multiset")
        if t != self._next_t:
            raise ValueError("random-order rounds must be consumed sequentially")
        remaining = [env.atoms[i] for i in self.perm[t - 1 :]]
        F = ExpectedLoss(remaining, exact=True)
        sigma_sq = exact_sigma_sq(remaining, F.weights, F)
        if t == 1:
            adv = sup_grad_norm_sq(F, env.domain)
        else:
            adv = sup_grad_diff_sq(F, self._prev_F, env.domain)
        f = env.atoms[int(self.perm[t - 1])]
        self._prev_F = F
        self._next_t += 1
        return RoundSpec(f, F, sigma_sq, adv, None)


class SlowShiftQuadraticEnv(SeaEnvironment):
    """Quadratic losses whose expected center follows a piecewise-constant
    path; each jump keeps sup ||grad F_t - grad F_{t-1}||^2 <= drift_bound."""

    kind = "slow_shift_quadratic"

    def __init__(
        self,
        segment_centers,
        segment_len: int,
        lam: float,
        noise_offsets,
        domain: Domain,
        params: ProblemParams,
        drift_bound: float | None = None,
    ):
        super().__init__(domain, params)
        self.segment_centers = [as_vector(c, domain.dim) for c in segment_centers]
        self.segment_len = segment_len
        self.lam = lam
        self.noise_offsets = [as_vector(o, domain.dim) for o in noise_offsets]
        mean_offset = np.mean(self.noise_offsets, axis=0)
        if float(np.linalg.norm(mean_offset)) > 1e-12:
            raise ValueError("noise offsets must have zero mean so centers are the expectations")
        jumps = [
            lam**2 * float(np.sum((c2 - c1) ** 2))
            for c1, c2 in zip(self.segment_centers, self.segment_centers[1:])
        ]
        self.max_jump_sq = max(jumps, default=0.0)
        if drift_bound is not None and self.max_jump_sq > drift_bound + 1e-12:
            raise ValueError("segment jumps exceed the configured drift bound")
        offs = np.array(self.noise_offsets)
        self.sigma_sq = lam**2 * float(np.mean(np.sum(offs**2, axis=1)))

    def center(self, t: int) -> np.ndarray:
        seg = min((t - 1) // self.segment_len, len(self.segment_centers) - 1)
        return self.segment_centers[seg]

    def analytic_G(self) -> float:
        worst = 0.0
        for c in self.segment_centers:
            for off in self.noise_offsets:
                worst = max(
                    worst, ShiftedQuadratic(c + off, self.lam).grad_norm_bound(self.domain)
                )
        return worst

    def _expected(self, t: int) -> ExpectedLoss:
        c = self.center(t)
        comps = [ShiftedQuadratic(c + off, self.lam) for off in self.noise_offsets]
        return ExpectedLoss(comps, exact=True)

    def _round_spec(self, t: int, idx: int) -> RoundSpec:
        c = self.center(t)
        f = ShiftedQuadratic(c + self.noise_offsets[idx], self.lam)
        F = self._expected(t)
        if t == 1:
            adv = sup_grad_norm_sq(F, self.domain)
        else:
            diff = self.lam * (self.center(t - 1) - c)
            adv = float(diff @ diff)
        return RoundSpec(f, F, self.sigma_sq, adv, self.sigma_sq)

    def trial(self, seed: int, trial_index: int, T: int) -> _TrialContext:
        rng = trial_generator(seed, trial_index)
        indices = rng.integers(0, len(self.noise_offsets), size=T)
        return _DeterministicSequenceContext(self, T, indices)

    def static_comparator(self, T: int) -> np.ndarray:
        cbar = np.mean([self.center(t) for t in range(1, T + 1)], axis=0)
        return self.domain.project(cbar)

    def round_distribution(self, t: int):
        F = self._expected(t)
        return list(F.components), F.weights, F


class SlowShiftAbsoluteEnv(SeaEnvironment):
    """Non-smooth counterpart: |<a, x> - b_t| with the target level b_t drawn
    around a piecewise-constant center."""

    kind = "slow_shift_absolute"

    def __init__(
        self,
        a,
        segment_levels,
        segment_len: int,
        spread: float,
        domain: Domain,
        params: ProblemParams,
    ):
        super().__init__(domain, params)
        self.a = as_vector(a, domain.dim)
        self.segment_levels = [float(b) for b in segment_levels]
        self.segment_len = segment_len
        self.spread = spread

    def level(self, t: int) -> float:
        seg = min((t - 1) // self.segment_len, len(self.segment_levels) - 1)
        return self.segment_levels[seg]

    def analytic_G(self) -> float:
        return float(np.linalg.norm(self.a))

    def _atoms(self, t: int):
        b = self.level(t)
        return [Absolute(self.a, b - self.spread), Absolute(self.a, b + self.spread)]

    def _expected(self, t: int) -> ExpectedLoss:
        return ExpectedLoss(self._atoms(t), exact=True)

    def _round_spec(self, t: int, idx: int) -> RoundSpec:
        atoms = self._atoms(t)
        F = self._expected(t)
        if t == 1:
            adv = sup_grad_norm_sq(F, self.domain)
        else:
            adv = sup_grad_diff_sq(F, self._expected(t - 1), self.domain)
        tilde = exact_sigma_tilde_sq(atoms, F.weights, F, self.domain)
        return RoundSpec(atoms[idx], F, None, adv, tilde)

    def trial(self, seed: int, trial_index: int, T: int) -> _TrialContext:
        rng = trial_generator(seed, trial_index)
        indices = rng.integers(0, 2, size=T)
        return _DeterministicSequenceContext(self, T, indices)

    def static_comparator(self, T: int) -> np.ndarray:
        bs, ws = [], []
        for t in range(1, T + 1):
            b = self.level(t)
            bs.extend([b - self.spread, b + self.spread])
            ws.extend([0.5 / T, 0.5 / T])
        s = _weighted_median(np.asarray(bs), np.asarray(ws))
        return _point_with_inner_product(self.domain, self.a, s)

    def round_distribution(self, t: int):
        F = self._expected(t)
        return self._atoms(t), F.weights, F


class LimitedResourcesEnv(SeaEnvironment):
    """Per-round pool of K losses of which a batch of size B is sampled
    without replacement; the learner sees the batch mean."""

    kind = "limited_resources"

    def __init__(self, pool, batch_size: int, domain: Domain, params: ProblemParams):
        super().__init__(domain, params)
        self.pool = list(pool)
        K = len(self.pool)
        if not 1 <= batch_size <= K:
            raise ValueError("need 1 <= batch_size <= pool size")
        self.batch_size = batch_size
        self.F = ExpectedLoss([average_losses(self.pool)], exact=True)
        deltas = _atom_grad_deltas(self.pool, np.full(K, 1.0 / K), ExpectedLoss(self.pool))
        if deltas is None:
            raise UnsupportedStructureError("limited-resources pool must be gradient-affine")
        pop_var = float(np.mean(np.sum(deltas**2, axis=1)))
        B = batch_size
        self.sigma_sq = 0.0 if K == 1 or B == K else pop_var * (K - B) / (B * (K - 1))
        self.adv_var_first = sup_grad_norm_sq(self.F, domain)

    def analytic_G(self) -> float:
        # the batch mean's gradient bound is at most the worst pool member's
        return max(f.grad_norm_bound(self.domain) for f in self.pool)

    def _round_spec(self, t: int, batch_idx: tuple) -> RoundSpec:
        f = average_losses([self.pool[i] for i in batch_idx])
        return RoundSpec(
            f, self.F, self.sigma_sq, self.adv_var_first if t == 1 else 0.0, self.sigma_sq
        )

    def trial(self, seed: int, trial_index: int, T: int) -> "_BatchContext":
        rng = trial_generator(seed, trial_index)
        batches = [tuple(rng.choice(len(self.pool), size=self.batch_size, replace=False)) for _ in range(T)]
        return _BatchContext(self, T, batches)

    def static_comparator(self, T: int) -> np.ndarray:
        return minimize_expected(self.F, self.domain)

    def enumerate_batches(self):
        return itertools.combinations(range(len(self.pool)), self.batch_size)


class _BatchContext(_TrialContext):
    def __init__(self, env, T, batches):
        super().__init__(env, T)
        self.batches = batches

    def round(self, t: int) -> RoundSpec:
        return self.env._round_spec(t, self.batches[t - 1])


# ---------------------------------------------------------------------------
# Monte-Carlo estimator for the sup-form variance
# ---------------------------------------------------------------------------


def _domain_samples(domain: Domain, rng: np.random.Generator, n: int) -> np.ndarray:
    if isinstance(domain, Ball):
        g = rng.standard_normal((n, domain.dim))
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        radii = domain.radius * rng.random(n) ** (1.0 / domain.dim)
        return g * radii[:, None]
    if isinstance(domain, Box):
        return domain.lo + rng.random((n, domain.dim)) * (domain.hi - domain.lo)
    return rng.dirichlet(np.ones(domain.dim), size=n)


def sigma_tilde_sq_estimate(
    env: SeaEnvironment,
    t: int,
    n_samples: int = 256,
    n_probe_points: int = 64,
    seed: int = 0,
) -> float:
    """Monte-Carlo estimate of E sup_x ||grad f_t(x) - grad F_t(x)||^2.

    The inner sup is taken over random domain points plus the domain's extreme
    points, so the estimate is biased low; callers comparing against bounds
    should inflate it.
    """
    atoms, weights, F = env.round_distribution(t)
    rng = trial_generator(seed, -t)
    probes = _domain_samples(env.domain, rng, n_probe_points)
    probes = np.vstack([probes, env.domain.extreme_points()])
    draws = rng.choice(len(atoms), size=n_samples, p=np.asarray(weights))
    sup_by_atom: dict[int, float] = {}
    total = 0.0
    for idx in draws:
        idx = int(idx)
        if idx not in sup_by_atom:
            f = atoms[idx]
            sup_by_atom[idx] = max(
                float(np.sum((f.grad(x) - F.grad(x)) ** 2)) for x in probes
            )
        total += sup_by_atom[idx]
    return total / n_samples


ENVIRONMENT_KINDS = {
    "adversarial": AdversarialEnv,
    "iid": IidEnv,
    "corrupted": CorruptedIidEnv,
    "random_order": RandomOrderEnv,
    "slow_shift_quadratic": SlowShiftQuadraticEnv,
    "slow_shift_absolute": SlowShiftAbsoluteEnv,
    "limited_resources": LimitedResourcesEnv,
}
