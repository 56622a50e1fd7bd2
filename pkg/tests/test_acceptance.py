"""Acceptance suite: ten verifiable claims about the package, one test each.

Every test prints a single `[criterion N] PASS/FAIL` line (visible in the
pytest log) and then asserts, so a red run still reports every criterion.
"""
import time

import numpy as np
import pytest

from gridtopo.estimation import (
    GlassoConfig,
    empirical_covariance,
    estimate_concentration,
    graphical_lasso,
    invert_covariance,
    kkt_violations,
)
from gridtopo.experiments import ExperimentSpec, reconstruct, run_experiment
from gridtopo.grid import bus_distance, builtin_grid, reduced_laplacian
from gridtopo.learning import (
    check_sufficiency,
    default_exact_tau1,
    default_exact_tau2,
    edge_errors,
    learn_by_counting,
    learn_by_thresholding,
    build_graphical_model,
    learn_parameters,
)
from gridtopo.powerflow import (
    InjectionStats,
    dc_concentration,
    dc_phase_covariance,
    lc_concentration,
    lc_voltage_covariance,
)
from gridtopo.sampling import derive_trial_seed, generate_voltage_samples

GRID_NAMES = ("radial20", "loopy20_c4", "loopy20_c7", "ieee14")


def report(capsys, num, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {num}] {'PASS' if ok else 'FAIL'} - {detail}")


def timer():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start


def test_criterion_1_concentration_support_is_two_hop(capsys):
    """Support of the analytic concentration = bus pairs at distance 1 or 2."""
    elapsed = timer()
    bad = []
    for name in GRID_NAMES:
        g = builtin_grid(name)
        st = InjectionStats.uniform(g)
        for conc in (dc_concentration(g, st), lc_concentration(g, st)):
            tol = 1e-9 * np.abs(conc.matrix).max()
            for a, la in enumerate(conc.labels):
                for b, lb in enumerate(conc.labels):
                    if a >= b or la.bus == lb.bus:
                        continue  # same-bus entries are allowed in LC blocks
                    d = bus_distance(g, la.bus, lb.bus, through_reference=False)
                    nonzero = abs(conc.matrix[a, b]) > tol
                    if nonzero != (d in (1, 2)):
                        bad.append((name, conc.model, la.text, lb.text))
    t = elapsed()
    ok = not bad and t < 1.0
    report(capsys, 1, ok,
           f"support == distance-1-or-2 pairs on {len(GRID_NAMES)} grids x dc/lc, "
           f"tol 1e-9*max, {len(bad)} violations, {t:.2f}s (budget 1s)")
    assert bad == []
    assert t < 1.0


def test_criterion_2_lc_block_inverse_identity(capsys):
    """Closed-form LC concentration inverts the LC covariance to 1e-8."""
    elapsed = timer()
    worst = 0.0
    for name in GRID_NAMES:
        g = builtin_grid(name)
        st = InjectionStats.uniform(g)
        J = lc_concentration(g, st).matrix
        want = np.linalg.inv(lc_voltage_covariance(g, st))
        worst = max(worst, np.abs(J - want).max() / np.abs(want).max())
    t = elapsed()
    ok = worst < 1e-8 and t < 1.0
    report(capsys, 2, ok,
           f"max relative deviation {worst:.2e} over {len(GRID_NAMES)} grids "
           f"(tol 1e-8), {t:.2f}s (budget 1s)")
    assert worst < 1e-8
    assert t < 1.0


def test_criterion_3_exact_thresholding(capsys):
    """Thresholding on exact matrices: zero errors, girth > 3 grids."""
    elapsed = timer()
    totals = {}
    for name in ("radial20", "loopy20_c4"):
        g = builtin_grid(name)
        st = InjectionStats.uniform(g)
        for model, fn in (("dc", dc_concentration), ("lc", lc_concentration)):
            conc = fn(g, st)
            topo = learn_by_thresholding(conc, default_exact_tau2(conc))
            totals[(name, model)] = edge_errors(topo, g).total
    t = elapsed()
    ok = set(totals.values()) == {0} and t < 1.0
    report(capsys, 3, ok,
           f"edge errors {totals} (want all 0), {t:.2f}s (budget 1s)")
    assert set(totals.values()) == {0}
    assert t < 1.0


def test_criterion_4_exact_counting(capsys):
    """Counting on exact matrices: zero errors, girth > 6 grids."""
    elapsed = timer()
    totals = {}
    for name in ("radial20", "loopy20_c7"):
        g = builtin_grid(name)
        st = InjectionStats.uniform(g)
        for model, fn in (("dc", dc_concentration), ("lc", lc_concentration)):
            conc = fn(g, st)
            gm = build_graphical_model(conc, default_exact_tau1(conc))
            totals[(name, model)] = edge_errors(learn_by_counting(gm), g).total
    t = elapsed()
    ok = set(totals.values()) == {0} and t < 1.0
    report(capsys, 4, ok,
           f"edge errors {totals} (want all 0), {t:.2f}s (budget 1s)")
    assert set(totals.values()) == {0}
    assert t < 1.0


def test_criterion_5_sampled_convergence(capsys):
    """Mean error vs n is non-increasing (<= 1 inversion) and hits 0 at n=1e4."""
    elapsed = timer()
    cases = [("thresholding", "radial20"), ("thresholding", "loopy20_c4"),
             ("counting", "radial20"), ("counting", "loopy20_c7")]
    failures = []
    curves = {}
    for algo, grid in cases:
        for model in ("dc", "lc"):
            spec = ExperimentSpec(grid=grid, model=model, algorithm=algo, seed=1)
            summary = run_experiment(spec).summary()
            means = [summary[n]["total_mean"] for n in spec.sample_counts]
            curves[(algo, grid, model)] = means
            inversions = sum(1 for a, b in zip(means, means[1:]) if b > a + 1e-9)
            if inversions > 1 or means[-1] != 0.0:
                failures.append((algo, grid, model, means))
    t = elapsed()
    ok = not failures and t < 120.0
    finals = {k[1] + "/" + k[2] + "/" + k[0][0]: v[-1] for k, v in curves.items()}
    report(capsys, 5, ok,
           f"8 sweeps (20 trials, n=500..10000, seed 1): final means {finals}, "
           f"{len(failures)} non-monotone/nonzero, {t:.1f}s (budget 120s)")
    assert failures == []
    assert t < 120.0


def test_criterion_6_triangle_regime_plateau(capsys):
    """ieee14 sampled errors converge to the exact-matrix error count."""
    elapsed = timer()
    g = builtin_grid("ieee14")

    def agreement(stats, root):
        conc = dc_concentration(g, stats)
        exact = edge_errors(learn_by_thresholding(conc, default_exact_tau2(conc)), g).total
        hits = 0
        for trial in range(10):
            seed = derive_trial_seed(root, 100_000, trial)
            s = generate_voltage_samples(g, stats, "dc", 100_000, seed)
            est = estimate_concentration(s)
            topo = reconstruct(est.concentration, "thresholding", est=est)
            hits += edge_errors(topo, g).total == exact
        return exact, hits

    exact_uni, hits_uni = agreement(InjectionStats.uniform(g), 7)
    pp = np.ones(13)
    pp[g.index_of[5]] = 0.1  # spoils one triangle edge: nonzero plateau
    exact_bad, hits_bad = agreement(InjectionStats(pp, np.ones(13), np.zeros(13)), 8)
    t = elapsed()
    ok = hits_uni >= 9 and hits_bad >= 9 and exact_bad > 0 and t < 120.0
    report(capsys, 6, ok,
           f"n=1e5 agreement with exact error: uniform {hits_uni}/10 (exact {exact_uni}), "
           f"spoiled {hits_bad}/10 (exact {exact_bad}), {t:.1f}s (budget 120s)")
    assert hits_uni >= 9
    assert hits_bad >= 9
    assert exact_bad > 0
    assert t < 120.0


def test_criterion_7_sufficiency_soundness(capsys, make_random_triangle_grid):
    """Satisfied certificates imply a strictly negative concentration entry."""
    elapsed = timer()
    rng = np.random.default_rng(5)
    violations = 0
    satisfied = 0
    certs = 0
    for k in range(200):
        g = make_random_triangle_grid(rng)
        m = len(g.non_reference_buses)
        if k % 2:
            stats = InjectionStats(rng.uniform(0.3, 3.0, m), np.ones(m), np.zeros(m))
        else:
            stats = InjectionStats.uniform(g, 1.0, 1.0, 0.0)
        J = dc_concentration(g, stats).matrix  # Theorem-style closed form oracle
        for cert in check_sufficiency(g, stats).certificates:
            certs += 1
            i, j = cert.edge
            entry = J[g.index_of[i], g.index_of[j]]
            for ok_check, _ in cert.checks.values():
                if ok_check:
                    satisfied += 1
                    if not entry < 0:
                        violations += 1
    t = elapsed()
    ok = violations == 0 and t < 30.0
    report(capsys, 7, ok,
           f"200 random triangle grids: {satisfied} satisfied checks over {certs} "
           f"certificates, {violations} violations, {t:.1f}s (budget 30s)")
    assert violations == 0
    assert t < 30.0


def test_criterion_8_parameter_roundtrip(capsys, make_random_tree):
    """Cov(theta) + injection variances recover the weighted Laplacian."""
    elapsed = timer()
    rng = np.random.default_rng(11)
    worst = 0.0

    def roundtrip(g):
        m = len(g.non_reference_buses)
        st = InjectionStats(rng.uniform(0.5, 2.0, m), np.ones(m), np.zeros(m))
        H = reduced_laplacian(g)
        got = learn_parameters(dc_phase_covariance(g, st), st.sigma_pp)
        return np.abs(got - H).max() / np.abs(H).max()

    for name in GRID_NAMES:
        worst = max(worst, roundtrip(builtin_grid(name)))
    for _ in range(100):
        worst = max(worst, roundtrip(make_random_tree(rng, int(rng.integers(5, 25)))))
    t = elapsed()
    ok = worst < 1e-6 and t < 10.0
    report(capsys, 8, ok,
           f"4 builtin grids + 100 random trees: max relative error {worst:.2e} "
           f"(tol 1e-6), {t:.1f}s (budget 10s)")
    assert worst < 1e-6
    assert t < 10.0


def test_criterion_9_glasso_correctness(capsys):
    """KKT residuals at tolerance scale on 50 covariances; lam=0 = inversion."""
    elapsed = timer()
    rng = np.random.default_rng(0)
    cfg = GlassoConfig(tol=1e-6)
    worst_kkt = 0.0
    for _ in range(50):
        d = int(rng.integers(4, 13))
        A = rng.standard_normal((d, d))
        cov = A @ A.T / d + np.eye(d)
        lam = float(rng.uniform(0.05, 0.3))
        S, _ = graphical_lasso(cov, lam, cfg)
        kkt = kkt_violations(cov, S, lam)
        worst_kkt = max(worst_kkt, max(kkt.values()) / max(1.0, np.abs(cov).max()))

    A = rng.standard_normal((10, 10))
    cov0 = A @ A.T / 10 + np.eye(10)
    S0, _ = graphical_lasso(cov0, 0.0, cfg)
    dev0 = np.abs(S0 - invert_covariance(cov0)).max() / np.abs(invert_covariance(cov0)).max()
    t = elapsed()
    ok = worst_kkt <= 1e-4 and dev0 < 1e-5 and t < 60.0
    report(capsys, 9, ok,
           f"50 random covariances: worst scaled KKT residual {worst_kkt:.2e} "
           f"(budget 1e-4); lam=0 vs inversion {dev0:.2e} (tol 1e-5), "
           f"{t:.1f}s (budget 60s)")
    assert worst_kkt <= 1e-4
    assert dev0 < 1e-5
    assert t < 60.0


def test_criterion_10_monte_carlo_consistency(capsys):
    """Empirical LC covariance within 3 standard errors of the analytic one."""
    elapsed = timer()
    g = builtin_grid("radial20")
    st = InjectionStats.uniform(g)
    want = lc_voltage_covariance(g, st)
    s = generate_voltage_samples(g, st, "lc", 100_000, seed=2024)
    got = empirical_covariance(s.data)
    se = np.sqrt((np.outer(np.diag(want), np.diag(want)) + want**2) / s.n)
    z = np.abs(got - want) / se
    t = elapsed()
    ok = z.max() <= 3.0 and t < 30.0
    report(capsys, 10, ok,
           f"n=1e5 LC samples, {z.size} entries: max |z| {z.max():.2f} "
           f"(budget 3 SE), {t:.1f}s (budget 30s)")
    assert z.max() <= 3.0
    assert t < 30.0
