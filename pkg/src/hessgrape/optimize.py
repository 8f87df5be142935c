"""Box-constrained minimization of smooth objectives.

An objective provider is a callable ``f(x, order)`` returning
``(value, grad, hess)`` where entries beyond ``order`` may be None.

:func:`minimize` runs a primal log-barrier method

    phi_mu(x) = f(x) - mu * sum_i [log(x_i - lo_i) + log(hi_i - x_i)]

on a quadratic model of ``phi_mu``.  The curvature of ``f`` is either the
exact Hessian (``newton-exact-hessian``) or a BFGS approximation
(``bfgs``); the barrier curvature is always exact.  Steps come from a trust
region solved exactly by eigendecomposition (default) or from an Armijo
line search along the eigenvalue-shifted Newton direction.  Either way a
fraction-to-boundary rule keeps iterates strictly interior, and ``mu`` is
reduced geometrically once the barrier subproblem is solved to
``kappa * mu``.

With ``constraint_style="penalty"`` the bounds are instead imposed through a
quadratic penalty and the same machinery runs without a barrier.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

NEWTON = "newton-exact-hessian"
BFGS = "bfgs"
GRADIENT_DESCENT = "gradient-descent"
MODES = (NEWTON, BFGS, GRADIENT_DESCENT)
CONSTRAINT_STYLES = ("barrier", "penalty", "none")

Objective = Callable[[np.ndarray, int], tuple]


class LineSearchFailure(RuntimeError):
    pass


class NonFiniteObjective(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    mode: str = NEWTON
    constraint_style: str = "barrier"
    optimality_tol: float = 1e-9
    step_tol: float = 1e-10
    max_iterations: int = 1000
    penalty_sigma: float = 1e5
    fixed_step: float = 0.1
    mu_initial: float = 1e-2
    mu_reduction: float = 0.2
    mu_final: float = 1e-10
    barrier_kappa: float = 10.0
    fraction_to_boundary: float = 0.995
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    curvature_skip_tol: float = 1e-12
    hessian_shift: float = 1e-8
    globalization: str = "trust-region"
    initial_radius: float = 1.0
    max_radius: float = 1e3
    accept_ratio: float = 1e-4

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.constraint_style not in CONSTRAINT_STYLES:
            raise ValueError(f"unknown constraint style {self.constraint_style!r}")
        for name in ("optimality_tol", "step_tol", "penalty_sigma", "fixed_step", "mu_initial",
                     "mu_final", "armijo_c1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.fraction_to_boundary < 1:
            raise ValueError("fraction_to_boundary must lie in (0, 1)")
        if not 0 < self.mu_reduction < 1 or not 0 < self.backtrack < 1:
            raise ValueError("reduction factors must lie in (0, 1)")
        if self.globalization not in ("trust-region", "line-search"):
            raise ValueError(f"unknown globalization {self.globalization!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class OptimizationReport:
    x: np.ndarray
    J: float
    reason: str
    iterations: int = 0
    n_fun: int = 0
    n_grad: int = 0
    n_hess: int = 0
    history: list[float] = field(default_factory=list)
    merit_history: list[float] = field(default_factory=list)
    mu_history: list[float] = field(default_factory=list)
    mu_path: list[float] = field(default_factory=list)
    path: list[np.ndarray] = field(default_factory=list)
    wall_time: float = 0.0
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.reason in ("optimality", "step")


class _Counted:
    """Wraps a provider and counts evaluations."""

    def __init__(self, f: Objective):
        self.f = f
        self.n_fun = self.n_grad = self.n_hess = 0

    def __call__(self, x, order):
        val, g, H = self.f(x, order)
        self.n_fun += 1
        self.n_grad += order >= 1
        self.n_hess += order >= 2
        if not np.isfinite(val) or (g is not None and not np.all(np.isfinite(g))):
            raise NonFiniteObjective(f"objective returned non-finite output at x={x!r}")
        return val, g, H

    def hessian(self, x):
        """Hessian at a point whose value has already been counted."""
        _, _, H = self.f(x, 2)
        self.n_hess += 1
        if not np.all(np.isfinite(H)):
            raise NonFiniteObjective("objective returned a non-finite Hessian")
        return H


def bfgs_update(
    B: np.ndarray, s: np.ndarray, y: np.ndarray, curvature_skip_tol: float = 1e-12
) -> tuple[np.ndarray, bool]:
    """One BFGS update of a Hessian approximation.

    ``B + y y^T / (y^T s) - B s s^T B / (s^T B s)``.  The update is skipped
    when ``y^T s <= curvature_skip_tol * |s| |y|``, which would break positive
    definiteness.

    Returns:
        ``(B_new, applied)``.
    """
    s, y = np.asarray(s, dtype=float), np.asarray(y, dtype=float)
    if B.shape != (s.size, s.size) or y.shape != s.shape:
        raise ValueError("dimension mismatch in BFGS update")
    ys = float(y @ s)
    if ys <= curvature_skip_tol * np.linalg.norm(s) * np.linalg.norm(y):
        return B, False
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 0:
        return B, False
    Bn = B + np.outer(y, y) / ys - np.outer(Bs, Bs) / sBs
    return 0.5 * (Bn + Bn.T), True


def line_search(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    p: np.ndarray,
    g: np.ndarray,
    cfg: OptimizerConfig,
    alpha0: float = 1.0,
    f0: float | None = None,
) -> tuple[float, float]:
    """Armijo backtracking from ``alpha0``.

    Returns ``(alpha, f(x + alpha p))``.

    Raises:
        ValueError: if ``p`` is not a descent direction.
        LineSearchFailure: when no step satisfies the Armijo condition
            within ``cfg.max_backtracks`` halvings.
    """
    slope = float(g @ p)
    if not slope < 0:
        raise ValueError(f"not a descent direction: g.p = {slope}")
    fx = f(x) if f0 is None else f0
    alpha = alpha0
    for _ in range(cfg.max_backtracks + 1):
        ft = f(x + alpha * p)
        if np.isfinite(ft) and ft <= fx + cfg.armijo_c1 * alpha * slope:
            return alpha, ft
        alpha *= cfg.backtrack
    raise LineSearchFailure(f"no Armijo step found (last alpha {alpha / cfg.backtrack:.3e})")


def penalty_wrap(f: Objective, lo: np.ndarray, hi: np.ndarray, sigma: float) -> Objective:
    """Add ``sigma * violation^2`` for every component outside ``[lo, hi]``."""
    if not sigma > 0:
        raise ValueError("penalty factor must be positive")
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)

    def wrapped(x, order=0):
        val, g, H = f(x, order)
        viol = np.where(x > hi, x - hi, np.where(x < lo, x - lo, 0.0))
        val = val + sigma * float(viol @ viol)
        if g is not None:
            g = g + 2.0 * sigma * viol
        if H is not None:
            H = H + np.diag(2.0 * sigma * (viol != 0))
        return val, g, H

    return wrapped


def projected_gradient_norm(x, g, lo, hi) -> float:
    return float(np.max(np.abs(x - np.clip(x - g, lo, hi)))) if x.size else 0.0


def _fraction_to_boundary(x, p, lo, hi, tau) -> float:
    alpha = 1.0
    neg = p < 0
    if np.any(neg):
        alpha = min(alpha, float(np.min(tau * (x[neg] - lo[neg]) / -p[neg])))
    pos = p > 0
    if np.any(pos):
        alpha = min(alpha, float(np.min(tau * (hi[pos] - x[pos]) / p[pos])))
    return alpha


def _shift_to_pd(H: np.ndarray, shift: float) -> np.ndarray:
    lam_min = float(np.linalg.eigvalsh(H)[0])
    if lam_min <= 0:
        H = H + (abs(lam_min) + shift) * np.eye(H.shape[0])
    return H


def _interior_start(x0, lo, hi):
    width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    margin = 1e-3 * width
    return np.clip(x0, lo + margin, hi - margin)


def trust_region_step(M: np.ndarray, g: np.ndarray, radius: float) -> np.ndarray:
    """Minimizer of ``g.p + p.M.p / 2`` subject to ``|p| <= radius``.

    Solved exactly from the eigendecomposition of ``M``: the solution is
    ``-(M + lam I)^{-1} g`` with ``lam >= max(0, -lambda_min)`` picked so the
    step lands on the boundary whenever the unshifted step does not fit.
    """
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    gt = V.T @ g

    def step_norm(lam):
        return float(np.linalg.norm(gt / (w + lam)))

    if w[0] > 0 and step_norm(0.0) <= radius:
        return -V @ (gt / w)
    lam_lo = max(0.0, -w[0])
    lam_lo += 1e-12 * max(1.0, abs(w[-1]))
    if step_norm(lam_lo) <= radius:
        # hard case: gradient has (almost) no weight on the lowest mode
        p = -V @ (gt / (w + lam_lo))
        extra = np.sqrt(max(radius**2 - float(p @ p), 0.0))
        return p + extra * V[:, 0]
    lam_hi = lam_lo + max(1.0, float(np.linalg.norm(g)) / radius)
    while step_norm(lam_hi) > radius:
        lam_hi *= 2.0
    lam = brentq(lambda t: step_norm(t) - radius, lam_lo, lam_hi, xtol=1e-14, rtol=1e-12)
    return -V @ (gt / (w + lam))


def minimize(
    objective: Objective,
    x0: np.ndarray,
    bounds: tuple[np.ndarray, np.ndarray] | None,
    cfg: OptimizerConfig = OptimizerConfig(),
) -> OptimizationReport:
    """Minimize ``objective`` over the box ``bounds`` from ``x0``.

    ``cfg.mode`` selects exact-Hessian Newton or BFGS; gradient descent is
    dispatched to :func:`gradient_descent_fixed`.  ``cfg.globalization``
    chooses between a trust region on the barrier model and an Armijo line
    search along the (shifted) Newton direction.
    """
    if cfg.mode == GRADIENT_DESCENT:
        return gradient_descent_fixed(objective, x0, cfg)
    return _BarrierSolver(objective, x0, bounds, cfg).run()


class _BarrierSolver:
    def __init__(self, objective, x0, bounds, cfg: OptimizerConfig):
        self.t0 = time.monotonic()
        self.objective = objective
        self.cfg = cfg
        x = np.asarray(x0, dtype=float).copy()
        n = self.n = x.size
        if bounds is None:
            lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
        else:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (n,)).copy() for b in bounds)
        self.lo, self.hi = lo, hi
        self.lo_f, self.hi_f = np.isfinite(lo), np.isfinite(hi)
        style = cfg.constraint_style
        if not np.any(self.lo_f | self.hi_f):
            style = "none"
        self.style = style
        f = penalty_wrap(objective, lo, hi, cfg.penalty_sigma) if style == "penalty" else objective
        self.fc = _Counted(f)
        self.barrier = style == "barrier"
        message = ""
        if self.barrier:
            xi = _interior_start(x, lo, hi)
            if not np.array_equal(xi, x):
                message = "initial point moved strictly inside the bounds"
            x = xi
        self.x = x
        self.mu = cfg.mu_initial if self.barrier else 0.0
        self.newton = cfg.mode == NEWTON
        self.rep = OptimizationReport(x=x, J=np.nan, reason="max-iter", message=message)
        self.tiny_step = False

    def barrier_terms(self, z):
        if not self.barrier:
            return 0.0, np.zeros(self.n), np.zeros(self.n)
        lo_f, hi_f = self.lo_f, self.hi_f
        dl = np.where(lo_f, z - self.lo, 1.0)
        du = np.where(hi_f, self.hi - z, 1.0)
        val = -float(np.sum(np.log(dl[lo_f])) + np.sum(np.log(du[hi_f])))
        grad = np.where(lo_f, -1.0 / dl, 0.0) + np.where(hi_f, 1.0 / du, 0.0)
        curv = np.where(lo_f, 1.0 / dl**2, 0.0) + np.where(hi_f, 1.0 / du**2, 0.0)
        return val, grad, curv

    def outside(self, z) -> bool:
        return self.barrier and bool(np.any(z <= self.lo) or np.any(z >= self.hi))

    def reduce_mu(self) -> bool:
        """Shrink the barrier weight; False once it is already at the floor."""
        cfg = self.cfg
        if not self.barrier or self.mu <= cfg.mu_final:
            return False
        self.mu = max(self.mu * cfg.mu_reduction, cfg.mu_final)
        self.rep.mu_history.append(self.mu)
        return True

    def record(self):
        rep = self.rep
        rep.history.append(self.J)
        rep.merit_history.append(self.J + self.mu * self.barrier_terms(self.x)[0])
        rep.mu_path.append(self.mu)
        rep.path.append(self.x.copy())

    def run(self) -> OptimizationReport:
        cfg, rep, fc = self.cfg, self.rep, self.fc
        try:
            self.J, self.g, _ = fc(self.x, 1)
            self.H = fc.hessian(self.x) if self.newton else None
        except NonFiniteObjective as exc:
            rep.reason, rep.message = "non-finite", str(exc)
            return self.finish()
        self.B = np.eye(self.n)
        self.radius = cfg.initial_radius
        rep.mu_history.append(self.mu)
        self.record()

        step = self.trust_region_iteration if cfg.globalization == "trust-region" else self.line_search_iteration
        it = 0
        while it < cfg.max_iterations:
            bval, bgrad, bcurv = self.barrier_terms(self.x)
            gphi = self.g + self.mu * bgrad
            if self.barrier:
                if np.max(np.abs(gphi)) <= cfg.barrier_kappa * self.mu:
                    if self.reduce_mu():
                        continue
                    rep.reason = "optimality"
                    break
            elif np.max(np.abs(self.g), initial=0.0) <= cfg.optimality_tol:
                # penalty and unconstrained styles solve an unconstrained problem
                rep.reason = "optimality"
                break
            curv = (self.H if self.newton else self.B) + np.diag(self.mu * bcurv)
            phi = self.J + self.mu * bval
            try:
                outcome = step(phi, gphi, curv)
            except NonFiniteObjective as exc:
                rep.reason, rep.message = "non-finite", str(exc)
                break
            if outcome == "accepted":
                it += 1
                self.record()
                if not self.tiny_step:
                    continue
                self.tiny_step = False
                outcome = "small"
            if outcome == "small":
                if self.reduce_mu():
                    continue
                rep.reason = "step"
                break
            if outcome == "retry":
                continue
            rep.reason = "line-search-failure"
            break
        rep.iterations = it
        return self.finish()

    def finish(self) -> OptimizationReport:
        rep, fc = self.rep, self.fc
        rep.x = self.x
        J = getattr(self, "J", np.nan)
        if self.style == "penalty" and np.isfinite(J):
            J = float(self.objective(self.x, 0)[0])
        rep.J = J
        rep.n_fun, rep.n_grad, rep.n_hess = fc.n_fun, fc.n_grad, fc.n_hess
        rep.wall_time = time.monotonic() - self.t0
        return rep

    def _accept(self, x_new, J_new, g_new):
        if not self.newton:
            self.B, _ = bfgs_update(self.B, x_new - self.x, g_new - self.g, self.cfg.curvature_skip_tol)
        self.H = self.fc.hessian(x_new) if self.newton else None
        self.x, self.J, self.g = x_new, J_new, g_new

    def trust_region_iteration(self, phi, gphi, curv) -> str:
        cfg = self.cfg
        if self.radius < cfg.step_tol:
            self.radius = cfg.initial_radius
            return "small"
        p = trust_region_step(curv, gphi, self.radius)
        if self.barrier:
            p = p * _fraction_to_boundary(self.x, p, self.lo, self.hi, cfg.fraction_to_boundary)
        pred = -(float(gphi @ p) + 0.5 * float(p @ curv @ p))
        step_len = float(np.linalg.norm(p))
        if not pred > 0 or np.max(np.abs(p)) <= cfg.step_tol:
            self.radius = cfg.initial_radius
            return "small"
        x_new = p + self.x
        if self.outside(x_new):
            self.radius = 0.25 * step_len
            return "retry"
        J_new, g_new, _ = self.fc(x_new, 1)
        phi_new = J_new + self.mu * self.barrier_terms(x_new)[0]
        rho = (phi - phi_new) / pred
        if rho < 0.25:
            self.radius = 0.25 * step_len
        elif rho > 0.75 and step_len >= 0.99 * self.radius:
            self.radius = min(2.0 * self.radius, cfg.max_radius)
        if rho > cfg.accept_ratio:
            self._accept(x_new, J_new, g_new)
            return "accepted"
        if not self.newton:
            self.B, _ = bfgs_update(self.B, p, g_new - self.g, cfg.curvature_skip_tol)
        return "retry"

    def line_search_iteration(self, phi, gphi, curv) -> str:
        cfg = self.cfg
        M = _shift_to_pd(0.5 * (curv + curv.T), cfg.hessian_shift)
        p = -np.linalg.solve(M, gphi)
        if not float(gphi @ p) < 0:
            p = -gphi
        alpha0 = _fraction_to_boundary(self.x, p, self.lo, self.hi, cfg.fraction_to_boundary) if self.barrier else 1.0

        def merit(z):
            if self.outside(z):
                return np.inf
            return self.fc(z, 0)[0] + self.mu * self.barrier_terms(z)[0]

        try:
            alpha, _ = line_search(merit, self.x, p, gphi, cfg, alpha0=alpha0, f0=phi)
        except LineSearchFailure as exc:
            if not self.newton and not np.array_equal(self.B, np.eye(self.n)):
                self.B = np.eye(self.n)
                self.rep.message = "BFGS approximation reset after line-search failure"
                return "retry"
            if self.reduce_mu():
                return "retry"
            self.rep.message = str(exc)
            return "failed"
        s = alpha * p
        x_new = self.x + s
        if self.barrier:
            x_new = np.clip(x_new, np.nextafter(self.lo, np.inf), np.nextafter(self.hi, -np.inf))
        J_new, g_new, _ = self.fc(x_new, 1)
        self._accept(x_new, J_new, g_new)
        self.tiny_step = bool(np.max(np.abs(s)) <= cfg.step_tol)
        return "accepted"


def gradient_descent_fixed(
    objective: Objective, x0: np.ndarray, cfg: OptimizerConfig = OptimizerConfig(mode=GRADIENT_DESCENT)
) -> OptimizationReport:
    """Steepest descent with a constant step; bounds are ignored."""
    if not cfg.fixed_step > 0:
        raise ValueError("fixed_step must be positive")
    t0 = time.monotonic()
    fc = _Counted(objective)
    x = np.asarray(x0, dtype=float).copy()
    J, g, _ = fc(x, 1)
    rep = OptimizationReport(x=x, J=J, reason="max-iter")
    rep.history.append(J)
    rep.path.append(x.copy())
    rising = 0
    it = 0
    while it < cfg.max_iterations:
        if np.max(np.abs(g)) <= cfg.optimality_tol:
            rep.reason = "optimality"
            break
        s = -cfg.fixed_step * g
        x = x + s
        J_new, g, _ = fc(x, 1)
        it += 1
        rising = rising + 1 if J_new > J else 0
        J = J_new
        rep.history.append(J)
        rep.path.append(x.copy())
        if rising >= 10 or not np.isfinite(J):
            rep.reason = "divergence"
            rep.message = "objective increased for 10 consecutive steps"
            break
        if np.max(np.abs(s)) <= cfg.step_tol:
            rep.reason = "step"
            break
    rep.x, rep.J, rep.iterations = x, J, it
    rep.n_fun, rep.n_grad = fc.n_fun, fc.n_grad
    rep.wall_time = time.monotonic() - t0
    return rep


@dataclass(frozen=True)
class SeedSpec:
    """Reproducible uniform draw of an initial parameter vector.

    Uses the counter-based Philox generator keyed by ``seed``.
    """

    seed: int

    def draw(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(key=self.seed))
        return rng.uniform(lo, hi)


@dataclass
class SeedRecord:
    seed_index: int
    seed: int
    mode: str
    report: OptimizationReport | None
    error: str | None = None

    @property
    def J(self) -> float:
        return self.report.J if self.report is not None else np.nan


@dataclass
class CampaignResult:
    modes: list[str]
    initial_points: list[np.ndarray]
    records: list[SeedRecord]

    def for_mode(self, mode: str) -> list[SeedRecord]:
        return [r for r in self.records if r.mode == mode]

    def finals(self, mode: str) -> np.ndarray:
        return np.array([r.J for r in self.for_mode(mode)])

    def best(self, mode: str) -> float:
        return float(np.nanmin(self.finals(mode)))

    def mean(self, mode: str) -> float:
        return float(np.nanmean(self.finals(mode)))

    def histogram(self, mode: str, edges: np.ndarray) -> np.ndarray:
        vals = np.clip(self.finals(mode), edges[0], edges[-1])
        counts, _ = np.histogram(vals[np.isfinite(vals)], bins=edges)
        return counts


def _run_one(args):
    objective, x0, bounds, cfg, seed_index, seed = args
    try:
        return SeedRecord(seed_index, seed, cfg.mode, minimize(objective, x0, bounds, cfg))
    except Exception as exc:  # one failed run must not stop the campaign
        logger.warning("seed %d mode %s failed: %s", seed, cfg.mode, exc)
        return SeedRecord(seed_index, seed, cfg.mode, None, error=f"{type(exc).__name__}: {exc}")


def multistart(
    objective: Objective,
    bounds: tuple[np.ndarray, np.ndarray],
    n_seeds: int,
    base_seed: int,
    configs: Sequence[OptimizerConfig],
    workers: int = 1,
    on_record: Callable[[SeedRecord], None] | None = None,
) -> CampaignResult:
    """Run every configuration from the same ``n_seeds`` random starts.

    Seed ``i`` uses ``SeedSpec(base_seed + i)``, so all modes see identical
    initial points.
    """
    if n_seeds < 1:
        raise ValueError("need at least one seed")
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    starts = [SeedSpec(base_seed + i).draw(lo, hi) for i in range(n_seeds)]
    jobs = [
        (objective, starts[i], (lo, hi), cfg, i, base_seed + i)
        for i in range(n_seeds)
        for cfg in configs
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = []
            for rec in pool.map(_run_one, jobs):
                records.append(rec)
                if on_record:
                    on_record(rec)
    else:
        records = []
        for job in jobs:
            rec = _run_one(job)
            records.append(rec)
            if on_record:
                on_record(rec)
    return CampaignResult([c.mode for c in configs], starts, records)


def with_mode(cfg: OptimizerConfig, mode: str) -> OptimizerConfig:
    return replace(cfg, mode=mode)
