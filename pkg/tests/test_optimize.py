import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hessgrape import ControlPulse, GateObjective, two_level_example
from hessgrape.optimize import (
    BFGS,
    GRADIENT_DESCENT,
    NEWTON,
    LineSearchFailure,
    OptimizerConfig,
    SeedSpec,
    bfgs_update,
    gradient_descent_fixed,
    line_search,
    minimize,
    multistart,
    penalty_wrap,
    projected_gradient_norm,
    trust_region_step,
)


def quadratic(A, b=None):
    A = np.asarray(A, dtype=float)
    b = np.zeros(len(A)) if b is None else np.asarray(b, dtype=float)

    def f(x, order=0):
        x = np.asarray(x, dtype=float)
        val = 0.5 * x @ A @ x + b @ x
        return val, (A @ x + b) if order >= 1 else None, A if order >= 2 else None

    return f


def scalar(fun, grad, hess):
    def f(x, order=0):
        v = float(fun(x[0]))
        g = np.array([grad(x[0])]) if order >= 1 else None
        H = np.array([[hess(x[0])]]) if order >= 2 else None
        return v, g, H

    return f


def spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


# --- configuration ----------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    {"mode": "sgd"},
    {"constraint_style": "soft"},
    {"optimality_tol": 0.0},
    {"step_tol": -1.0},
    {"fraction_to_boundary": 1.0},
    {"mu_reduction": 1.5},
    {"max_iterations": 0},
    {"globalization": "dogleg"},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        OptimizerConfig(**kw)


def test_config_defaults():
    c = OptimizerConfig()
    assert (c.optimality_tol, c.step_tol, c.penalty_sigma) == (1e-9, 1e-10, 1e5)
    assert (c.mu_initial, c.mu_reduction, c.fraction_to_boundary) == (1e-2, 0.2, 0.995)
    assert (c.armijo_c1, c.backtrack) == (1e-4, 0.5)


# --- BFGS update ------------------------------------------------------------------

def test_bfgs_identity_unchanged_for_matching_pair():
    B, applied = bfgs_update(np.eye(3), np.eye(3)[0], np.eye(3)[0])
    assert applied and np.allclose(B, np.eye(3))


def test_bfgs_skips_without_curvature():
    B0 = np.eye(2)
    B, applied = bfgs_update(B0, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert not applied and B is B0


def test_bfgs_dimension_mismatch():
    with pytest.raises(ValueError):
        bfgs_update(np.eye(2), np.ones(3), np.ones(3))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_bfgs_preserves_positive_definiteness(seed, n):
    rng = np.random.default_rng(seed)
    B = spd(rng, n)
    s = rng.normal(size=n)
    y = rng.normal(size=n)
    if y @ s <= 0:
        y = -y
    if y @ s <= 1e-8 * np.linalg.norm(s) * np.linalg.norm(y):
        return
    Bn, applied = bfgs_update(B, s, y)
    assert applied
    np.linalg.cholesky(Bn)
    assert np.allclose(Bn @ s, y, rtol=1e-8, atol=1e-8)  # secant condition
    assert np.array_equal(Bn, Bn.T)


def test_bfgs_mode_solves_quadratic():
    rng = np.random.default_rng(1)
    A = spd(rng, 4)
    rep = minimize(quadratic(A), rng.normal(size=4), None, OptimizerConfig(mode=BFGS, constraint_style="none"))
    assert rep.converged and np.linalg.norm(rep.x) <= 1e-8


# --- line search ---------------------------------------------------------------------

def test_line_search_on_quadratic():
    cfg = OptimizerConfig()
    f = lambda x: float(x[0] ** 2)
    x, g = np.array([1.0]), np.array([2.0])
    p = -g
    alpha, fa = line_search(f, x, p, g, cfg)
    assert fa <= f(x) + cfg.armijo_c1 * alpha * float(g @ p)
    assert fa == pytest.approx(f(x + alpha * p))
    assert alpha == 0.5  # alpha = 1 overshoots to x = -1 with no decrease


def test_line_search_full_step_on_linear():
    alpha, _ = line_search(lambda x: -float(x[0]), np.zeros(1), np.ones(1), -np.ones(1), OptimizerConfig())
    assert alpha == 1.0


def test_line_search_respects_initial_cap():
    alpha, _ = line_search(lambda x: -float(x[0]), np.zeros(1), np.ones(1), -np.ones(1), OptimizerConfig(), alpha0=0.3)
    assert alpha == 0.3


def test_line_search_uphill_rejected():
    with pytest.raises(ValueError):
        line_search(lambda x: float(x[0]), np.zeros(1), np.ones(1), np.ones(1), OptimizerConfig())


def test_line_search_failure():
    cfg = OptimizerConfig(max_backtracks=5)
    with pytest.raises(LineSearchFailure):
        # claims descent but the function only rises
        line_search(lambda x: float(x[0] ** 2) + 1.0 * (x[0] != 0), np.zeros(1), np.ones(1), -np.ones(1), cfg)


# --- trust-region subproblem -----------------------------------------------------------

@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(1e-3, 10.0))
def test_trust_region_step_is_optimal(seed, n, radius):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    M = A + A.T
    g = rng.normal(size=n)
    p = trust_region_step(M, g, radius)
    assert np.linalg.norm(p) <= radius * (1 + 1e-8)
    model = lambda q: g @ q + 0.5 * q @ M @ q
    # no random feasible point does better
    for _ in range(200):
        q = rng.normal(size=n)
        q *= radius * rng.uniform() ** (1 / n) / np.linalg.norm(q)
        assert model(p) <= model(q) + 1e-9 * (1 + abs(model(q)))


def test_trust_region_interior_newton_step():
    M = np.diag([2.0, 4.0])
    g = np.array([2.0, 4.0])
    assert np.allclose(trust_region_step(M, g, 10.0), [-1.0, -1.0])


def test_trust_region_hard_case():
    M = np.diag([-1.0, 2.0])
    g = np.array([0.0, 2.0])
    p = trust_region_step(M, g, 2.0)
    assert np.linalg.norm(p) == pytest.approx(2.0)
    assert abs(p[0]) > 0


# --- minimize --------------------------------------------------------------------------

@pytest.mark.parametrize("globalization", ["trust-region", "line-search"])
def test_newton_on_quadratic(globalization):
    rng = np.random.default_rng(2)
    A = spd(rng, 5)
    f = quadratic(A)
    cfg = OptimizerConfig(globalization=globalization)
    rep = minimize(f, rng.normal(size=5), (np.full(5, -1e3), np.full(5, 1e3)), cfg)
    assert np.linalg.norm(rep.x) <= 1e-9
    assert rep.converged


@pytest.mark.parametrize("globalization", ["trust-region", "line-search"])
def test_newton_one_step_exact_unconstrained(globalization):
    rng = np.random.default_rng(3)
    A = spd(rng, 6)
    b = rng.normal(size=6)
    rep = minimize(quadratic(A, b), rng.normal(size=6), None,
                   OptimizerConfig(constraint_style="none", globalization=globalization,
                                   initial_radius=1e6, max_radius=1e6))
    assert rep.iterations == 1
    assert np.allclose(rep.x, np.linalg.solve(A, -b), atol=1e-12)


@pytest.mark.parametrize("mode", [NEWTON, BFGS])
@pytest.mark.parametrize("globalization", ["trust-region", "line-search"])
def test_active_bound_solution(mode, globalization):
    f = scalar(lambda c: (c + 1) ** 2, lambda c: 2 * (c + 1), lambda c: 2.0)
    path = []

    def recording(x, order=0):
        path.append(x.copy())
        return f(x, order)

    rep = minimize(recording, np.array([1.5]), (np.zeros(1), np.full(1, 2.0)),
                   OptimizerConfig(mode=mode, globalization=globalization))
    assert rep.x[0] <= 1e-6
    assert all(0 < p[0] < 2 for p in path)
    assert all(0 < p[0] < 2 for p in rep.path)


def test_start_outside_box_is_moved_inside():
    f = quadratic(np.eye(2))
    rep = minimize(f, np.array([5.0, -5.0]), (np.full(2, -1.0), np.full(2, 1.0)), OptimizerConfig())
    assert "inside" in rep.message
    assert np.all(np.abs(rep.path[0]) < 1)


@pytest.mark.parametrize("mode", [NEWTON, BFGS])
@pytest.mark.parametrize("globalization", ["trust-region", "line-search"])
def test_barrier_merit_monotone_at_fixed_mu(mode, globalization):
    rng = np.random.default_rng(4)
    obj = GateObjective(two_level_example(), ControlPulse(np.zeros((6, 1)), np.pi / 4))
    rep = minimize(obj, rng.uniform(-2, 2, 6), (np.full(6, -2.5), np.full(6, 2.5)),
                   OptimizerConfig(mode=mode, globalization=globalization))
    merit, mu = np.asarray(rep.merit_history), np.asarray(rep.mu_path)
    assert len(merit) == len(mu) == len(rep.history) == len(rep.path)
    same = mu[1:] == mu[:-1]
    assert np.all(np.diff(merit)[same] <= 1e-12)
    assert rep.J <= rep.history[0]


def test_non_finite_objective_aborts():
    def f(x, order=0):
        v = np.nan if x[0] > 0.25 else float(x[0] ** 2 - x[0])
        return v, np.array([2 * x[0] - 1]) if order >= 1 else None, np.array([[2.0]]) if order >= 2 else None

    rep = minimize(f, np.array([0.0]), None, OptimizerConfig(constraint_style="none", initial_radius=10.0))
    assert rep.reason == "non-finite"
    assert "non-finite" in rep.message


def test_penalty_style_reaches_boundary():
    f = scalar(lambda c: (c + 1) ** 2, lambda c: 2 * (c + 1), lambda c: 2.0)
    rep = minimize(f, np.array([1.0]), (np.zeros(1), np.full(1, 2.0)),
                   OptimizerConfig(constraint_style="penalty"))
    # penalty optimum sits at -1 / (1 + sigma) just outside the box
    assert rep.x[0] == pytest.approx(-1 / (1 + 1e5), rel=1e-6)
    assert rep.J == pytest.approx(1.0, abs=1e-4)


# --- two-level landscape ------------------------------------------------------------------

def two_level():
    return GateObjective(two_level_example(), ControlPulse(np.zeros((2, 1)), 3 * np.pi / 4))


def test_newton_quadratic_local_convergence():
    f = two_level()
    rep = minimize(f, np.array([0.05, -0.04]), None, OptimizerConfig(constraint_style="none"))
    errs = [np.linalg.norm(p) for p in rep.path]
    errs = [e for e in errs if e > 1e-13]
    assert rep.J <= 1e-20 or rep.J == pytest.approx(0, abs=1e-15)
    ratios = [b / a**2 for a, b in zip(errs, errs[1:])][-3:]
    assert len(ratios) >= 2
    assert max(ratios) < 10.0


def test_gradient_descent_to_trapped_point():
    rep = gradient_descent_fixed(two_level(), np.array([-0.915, 2.251]),
                                 OptimizerConfig(mode=GRADIENT_DESCENT, max_iterations=5000))
    assert np.linalg.norm(rep.x - [0.0, 2.285]) < 0.05
    assert rep.J > 1e-3


# --- gradient descent ----------------------------------------------------------------------

def test_gradient_descent_geometric():
    f = scalar(lambda x: x * x, lambda x: 2 * x, lambda x: 2.0)
    rep = gradient_descent_fixed(f, np.array([1.0]), OptimizerConfig(mode=GRADIENT_DESCENT, fixed_step=0.4))
    assert abs(rep.x[0]) <= 1e-6
    xs = np.abs([p[0] for p in rep.path])
    assert np.allclose(xs[1:6] / xs[:5], 0.2)


def test_gradient_descent_divergence():
    f = scalar(lambda x: x * x, lambda x: 2 * x, lambda x: 2.0)
    rep = gradient_descent_fixed(f, np.array([1.0]), OptimizerConfig(mode=GRADIENT_DESCENT, fixed_step=1.5))
    assert rep.reason == "divergence"
    assert rep.iterations == 10


def test_minimize_dispatches_gradient_descent():
    f = scalar(lambda x: x * x, lambda x: 2 * x, lambda x: 2.0)
    rep = minimize(f, np.array([1.0]), None, OptimizerConfig(mode=GRADIENT_DESCENT, fixed_step=0.4))
    assert rep.n_hess == 0 and abs(rep.x[0]) <= 1e-6


# --- penalty wrapper --------------------------------------------------------------------------

def test_penalty_inside_unchanged():
    rng = np.random.default_rng(5)
    A = spd(rng, 3)
    f = quadratic(A)
    w = penalty_wrap(f, np.full(3, -1.0), np.full(3, 1.0), 1e5)
    x = rng.uniform(-0.9, 0.9, 3)
    for a, b in zip(f(x, 2), w(x, 2)):
        assert np.array_equal(a, b)


def test_penalty_hand_value():
    f = scalar(lambda c: 0.0, lambda c: 0.0, lambda c: 0.0)
    w = penalty_wrap(f, np.array([-1.0]), np.array([1.0]), 1e5)
    v, g, H = w(np.array([1.1]), 2)
    assert v == pytest.approx(1000.0)
    assert g[0] == pytest.approx(2e4)
    assert H[0, 0] == pytest.approx(2e5)


def test_penalty_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        penalty_wrap(quadratic(np.eye(1)), np.zeros(1), np.ones(1), 0.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3).filter(lambda x: min(abs(x - 1), abs(x + 1)) > 1e-3))
def test_penalty_gradient_finite_differences(x0):
    f = scalar(np.sin, np.cos, lambda x: -np.sin(x))
    w = penalty_wrap(f, np.array([-1.0]), np.array([1.0]), 1e5)
    h = 1e-7
    x = np.array([x0])
    fd = (w(x + h)[0] - w(x - h)[0]) / (2 * h)
    g = w(x, 1)[1][0]
    assert fd == pytest.approx(g, rel=1e-5, abs=1e-5)
    fd2 = (w(x + h, 1)[1][0] - w(x - h, 1)[1][0]) / (2 * h)
    assert fd2 == pytest.approx(w(x, 2)[2][0, 0], rel=1e-5, abs=1e-3)


def test_projected_gradient_norm():
    x = np.array([0.0, 0.5])
    g = np.array([1.0, -2.0])
    assert projected_gradient_norm(x, g, np.zeros(2), np.ones(2)) == pytest.approx(0.5)


# --- seeds and multistart ------------------------------------------------------------------

def test_seed_spec_reproducible():
    lo, hi = np.full(5, -1.0), np.full(5, 2.0)
    a, b = SeedSpec(7).draw(lo, hi), SeedSpec(7).draw(lo, hi)
    assert np.array_equal(a, b)
    assert np.all((a >= lo) & (a <= hi))
    assert not np.array_equal(a, SeedSpec(8).draw(lo, hi))


def test_multistart_pairs_modes():
    f = two_level()
    box = (np.full(2, -3.0), np.full(2, 3.0))
    res = multistart(f, box, 1, 11, [OptimizerConfig(mode=NEWTON), OptimizerConfig(mode=BFGS)])
    starts = [r.report.path[0] for r in res.records]
    assert np.array_equal(starts[0], starts[1])
    assert np.array_equal(res.initial_points[0], SeedSpec(11).draw(*box))


def test_multistart_deterministic():
    f = two_level()
    box = (np.full(2, -3.0), np.full(2, 3.0))
    cfgs = [OptimizerConfig(mode=NEWTON), OptimizerConfig(mode=BFGS)]
    a = multistart(f, box, 3, 5, cfgs)
    b = multistart(f, box, 3, 5, cfgs)
    for ra, rb in zip(a.records, b.records):
        assert ra.mode == rb.mode and ra.seed == rb.seed
        assert np.array_equal(ra.report.x, rb.report.x)
        assert ra.report.n_fun == rb.report.n_fun


def test_multistart_records_failures():
    def bad(x, order=0):
        raise RuntimeError("boom")

    res = multistart(bad, (np.zeros(1), np.ones(1)), 2, 0, [OptimizerConfig()])
    assert all(r.report is None and "boom" in r.error for r in res.records)
    assert np.all(np.isnan(res.finals(NEWTON)))


def test_multistart_needs_a_seed():
    with pytest.raises(ValueError):
        multistart(two_level(), (np.zeros(2), np.ones(2)), 0, 0, [OptimizerConfig()])


def test_campaign_histogram_totals():
    f = two_level()
    res = multistart(f, (np.full(2, -3.0), np.full(2, 3.0)), 4, 0, [OptimizerConfig(mode=BFGS)])
    edges = 10.0 ** np.arange(-16, 1)
    assert res.histogram(BFGS, edges).sum() == 4
