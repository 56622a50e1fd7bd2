"""Analytic concentration matrices: DC and LC closed forms vs dense oracles."""
import numpy as np
import pytest

from gridtopo.exceptions import (
    InvalidInjectionStatsError,
    ModelMismatchError,
    UnknownBusError,
)
from gridtopo.grid import builtin_grid, bus_distance, make_grid, reduced_laplacian
from gridtopo.powerflow import (
    ConcentrationMatrix,
    InjectionStats,
    VarLabel,
    dc_concentration,
    dc_labels,
    dc_phase_covariance,
    lc_concentration,
    lc_labels,
    lc_system_matrix,
    lc_threshold_statistic,
    lc_voltage_covariance,
    parse_label,
    radial_lc_inverse,
    solve_dc,
    solve_lc,
)

GRID_NAMES = ("radial20", "loopy20_c4", "loopy20_c7", "ieee14")


def path_grid(n_buses: int, r: float = 0.0, x: float = 1.0):
    return make_grid(0, range(n_buses), [(b, b + 1, r, x) for b in range(n_buses - 1)])


def random_stats(grid, rng):
    m = len(grid.non_reference_buses)
    pp = rng.uniform(0.5, 2.0, m)
    qq = rng.uniform(0.5, 2.0, m)
    pq = rng.uniform(-0.6, 0.6, m) * np.sqrt(pp * qq)
    return InjectionStats(pp, qq, pq)


# ----------------------------------------------------------------------
# labels
# ----------------------------------------------------------------------


def test_labels_and_parse(radial20):
    dc = dc_labels(radial20)
    assert dc[0] == VarLabel("theta", 1) and len(dc) == 19
    lc = lc_labels(radial20)
    assert lc[0] == VarLabel("v", 1) and lc[19] == VarLabel("theta", 1)
    assert parse_label("theta_12") == VarLabel("theta", 12)
    assert parse_label("v_3").text == "v_3"
    for bad in ("x_1", "theta_", "v_one", "12"):
        with pytest.raises(ValueError):
            parse_label(bad)


# ----------------------------------------------------------------------
# injection statistics
# ----------------------------------------------------------------------


def test_injection_stats_uniform(radial20):
    st = InjectionStats.uniform(radial20, 1.0, 2.0, 0.5)
    assert st.n == 19
    np.testing.assert_allclose(st.det, np.full(19, 1.75))
    roundtrip = InjectionStats.from_dict(st.to_dict(), radial20)
    np.testing.assert_allclose(roundtrip.sigma_pq, st.sigma_pq)


def test_injection_stats_from_dict_defaults(radial20):
    st = InjectionStats.from_dict({}, radial20)
    np.testing.assert_allclose(st.sigma_pp, 1.0)
    np.testing.assert_allclose(st.sigma_qq, 1.0)
    np.testing.assert_allclose(st.sigma_pq, 0.5)
    scalar = InjectionStats.from_dict({"sigma_pp": 2.0}, radial20)
    np.testing.assert_allclose(scalar.sigma_pp, 2.0)


@pytest.mark.parametrize(
    "pp,qq,pq,match",
    [
        ([1.0, 1.0], [1.0], [0.0, 0.0], "equally sized"),
        ([1.0, -1.0], [1.0, 1.0], [0.0, 0.0], "must be positive"),
        ([1.0, np.nan], [1.0, 1.0], [0.0, 0.0], "finite"),
        ([1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 1.5], "index 2"),
    ],
)
def test_injection_stats_validation(pp, qq, pq, match):
    with pytest.raises(InvalidInjectionStatsError, match=match):
        InjectionStats(pp, qq, pq)


def test_stats_grid_mismatch(radial20, ieee14):
    st = InjectionStats.uniform(ieee14)
    with pytest.raises(InvalidInjectionStatsError, match="19 non-reference"):
        dc_concentration(radial20, st)


# ----------------------------------------------------------------------
# concentration matrix container
# ----------------------------------------------------------------------


def test_concentration_matrix_symmetrizes_and_checks():
    labels = (VarLabel("theta", 1), VarLabel("theta", 2))
    M = np.array([[2.0, -1.0], [-1.0 + 1e-12, 2.0]])
    conc = ConcentrationMatrix(M, labels, "dc")
    assert conc.matrix[0, 1] == conc.matrix[1, 0]
    assert conc.buses == (1, 2)
    assert conc.entry(labels[0], labels[1]) == pytest.approx(-1.0)
    with pytest.raises(ValueError, match="not symmetric"):
        ConcentrationMatrix(np.array([[2.0, 1.0], [-1.0, 2.0]]), labels, "dc")
    with pytest.raises(ValueError, match="not positive definite"):
        ConcentrationMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]), labels, "dc")
    with pytest.raises(ModelMismatchError):
        ConcentrationMatrix(np.eye(2), labels, "ac")


def test_concentration_blocks(radial20):
    conc = lc_concentration(radial20, InjectionStats.uniform(radial20))
    vv = conc.block("v", "v")
    tt = conc.block("theta", "theta")
    assert vv.shape == tt.shape == (19, 19)
    np.testing.assert_allclose(conc.matrix[:19, :19], vv)
    np.testing.assert_allclose(conc.matrix[19:, 19:], tt)


# ----------------------------------------------------------------------
# DC model
# ----------------------------------------------------------------------


def test_solve_dc_residual(radial20):
    rng = np.random.default_rng(1)
    p = rng.standard_normal((7, 19))
    theta = solve_dc(radial20, p)
    H = reduced_laplacian(radial20)
    np.testing.assert_allclose(theta @ H, p, atol=1e-10)


def test_dc_concentration_scalar_case():
    g = make_grid(0, [0, 1], [(0, 1, 0.6, 0.8)])  # susceptance 0.8
    st = InjectionStats(np.array([4.0]), np.array([1.0]), np.array([0.0]))
    conc = dc_concentration(g, st)
    assert conc.matrix[0, 0] == pytest.approx(0.8**2 / 4.0)
    np.testing.assert_allclose(dc_phase_covariance(g, st), [[4.0 / 0.8**2]])


def test_dc_concentration_path3_frozen():
    # two unit-susceptance lines 0-1-2, unit variances: J = H^2
    conc = dc_concentration(path_grid(3), InjectionStats.uniform(path_grid(3), 1.0, 1.0, 0.0))
    np.testing.assert_allclose(conc.matrix, [[5.0, -3.0], [-3.0, 2.0]], atol=1e-12)


@pytest.mark.parametrize("name", GRID_NAMES)
def test_dc_concentration_inverts_covariance(name):
    g = builtin_grid(name)
    st = random_stats(g, np.random.default_rng(7))
    J = dc_concentration(g, st).matrix
    S = dc_phase_covariance(g, st)
    np.testing.assert_allclose(J @ S, np.eye(S.shape[0]), atol=1e-9)


def test_dc_closed_form_equals_product_form(radial20):
    st = random_stats(radial20, np.random.default_rng(3))
    H = reduced_laplacian(radial20)
    want = H @ np.diag(1.0 / st.sigma_pp) @ H
    got = dc_concentration(radial20, st, self_check=False).matrix
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_dc_sign_structure_on_tree(radial20):
    conc = dc_concentration(radial20, InjectionStats.uniform(radial20))
    scale = np.abs(conc.matrix).max()
    for a, la in enumerate(conc.labels):
        for b, lb in enumerate(conc.labels):
            if a >= b:
                continue
            d = bus_distance(radial20, la.bus, lb.bus, through_reference=False)
            if d == 1:
                assert conc.matrix[a, b] < 0
            elif d == 2:
                assert conc.matrix[a, b] > 0
            else:
                assert abs(conc.matrix[a, b]) < 1e-12 * scale


# ----------------------------------------------------------------------
# LC model
# ----------------------------------------------------------------------


def test_lc_system_matrix_blocks(loopy20_c4):
    S = lc_system_matrix(loopy20_c4)
    Hg = reduced_laplacian(loopy20_c4, "conductance")
    Hb = reduced_laplacian(loopy20_c4, "susceptance")
    np.testing.assert_allclose(S[:19, :19], Hg)
    np.testing.assert_allclose(S[:19, 19:], Hb)
    np.testing.assert_allclose(S[19:, :19], Hb)
    np.testing.assert_allclose(S[19:, 19:], -Hg)


def test_solve_lc_residual(ieee14):
    rng = np.random.default_rng(2)
    m = len(ieee14.non_reference_buses)
    p = rng.standard_normal((5, m))
    q = rng.standard_normal((5, m))
    v, theta = solve_lc(ieee14, p, q)
    S = lc_system_matrix(ieee14)
    x = np.concatenate([v, theta], axis=1)
    np.testing.assert_allclose(x @ S.T, np.concatenate([p, q], axis=1), atol=1e-10)


@pytest.mark.parametrize("name", GRID_NAMES)
def test_lc_concentration_inverts_covariance(name):
    g = builtin_grid(name)
    st = random_stats(g, np.random.default_rng(11))
    J = lc_concentration(g, st).matrix
    S = lc_voltage_covariance(g, st)
    resid = np.abs(J @ S - np.eye(S.shape[0])).max()
    assert resid < 1e-8


def test_lc_closed_form_vs_numeric_inverse(loopy20_c7):
    st = random_stats(loopy20_c7, np.random.default_rng(13))
    J = lc_concentration(loopy20_c7, st).matrix
    want = np.linalg.inv(lc_voltage_covariance(loopy20_c7, st))
    assert np.abs(J - want).max() / np.abs(want).max() < 1e-10


def test_radial_lc_inverse_identity(radial20):
    S = lc_system_matrix(radial20)
    got = radial_lc_inverse(radial20)
    np.testing.assert_allclose(got @ S, np.eye(S.shape[0]), atol=1e-9)
    # closed form: inverse 1/r and 1/x Laplacians in the respective blocks
    m = len(radial20.non_reference_buses)
    np.testing.assert_allclose(
        got[:m, :m], np.linalg.inv(reduced_laplacian(radial20, "inv_r")), atol=1e-9
    )
    np.testing.assert_allclose(
        got[:m, m:], np.linalg.inv(reduced_laplacian(radial20, "inv_x")), atol=1e-9
    )


def test_lc_threshold_statistic_identity(ieee14):
    # J_vv + J_tt collapses to Hg (A+C) Hg + Hb (A+C) Hb
    st = random_stats(ieee14, np.random.default_rng(17))
    conc = lc_concentration(ieee14, st)
    stat = lc_threshold_statistic(conc)
    np.testing.assert_allclose(stat, conc.block("v", "v") + conc.block("theta", "theta"))
    Hg = reduced_laplacian(ieee14, "conductance")
    Hb = reduced_laplacian(ieee14, "susceptance")
    ac = (st.sigma_pp + st.sigma_qq) / st.det
    want = Hg @ (ac[:, None] * Hg) + Hb @ (ac[:, None] * Hb)
    np.testing.assert_allclose(stat, want, rtol=1e-9, atol=1e-9)


def test_lc_threshold_statistic_rejects_dc(radial20):
    conc = dc_concentration(radial20, InjectionStats.uniform(radial20))
    with pytest.raises(ModelMismatchError):
        lc_threshold_statistic(conc)


def test_lc_support_distance_pattern(loopy20_c4):
    # every block vanishes beyond distance 2 (reference removed from paths)
    st = InjectionStats.uniform(loopy20_c4)
    conc = lc_concentration(loopy20_c4, st)
    scale = np.abs(conc.matrix).max()
    for a, la in enumerate(conc.labels):
        for b, lb in enumerate(conc.labels):
            if la.bus == lb.bus:
                continue
            d = bus_distance(loopy20_c4, la.bus, lb.bus, through_reference=False)
            if d > 2:
                assert abs(conc.matrix[a, b]) < 1e-9 * scale
            if d == 1:
                assert abs(conc.matrix[a, b]) > 1e-9 * scale
