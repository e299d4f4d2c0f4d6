import numpy as np
import pytest
from scipy.linalg import expm

from octahedral.dynamics import J, vector_field
from octahedral.integrator import IntegratorConfig, flow
from octahedral.stability import (
    BlockDefect, Verdict, analyze, assemble_W, block_eigenvalues, build_symmetries, compute_B,
    extract_K, match_spectra, monodromy_route1, monodromy_route2, stability_verdict,
    symplectic_defect, symplectic_inverse,
)

# reference K outside its first row
K_REF = np.array([[-0.33061, 0.46342, 0.04988], [0.90212, -1.96273, -1.28477]])


@pytest.fixture(scope="module")
def sym():
    return build_symmetries()


@pytest.fixture(scope="module")
def report(orbit, cfg, ctx):
    return analyze(orbit, cfg, ctx)


def random_symplectic(rng):
    S = rng.normal(size=(6, 6))
    return expm(J @ (S + S.T) * 0.2)


# --- symmetry matrices ----------------------------------------------------

def test_symmetry_relations(sym):
    I = np.eye(6)
    for M in (sym.S_f, sym.S_r, sym.Y0):
        np.testing.assert_allclose(M.T @ M, I, atol=1e-15)
    assert np.array_equal(sym.S_f @ J, J @ sym.S_f)
    assert np.array_equal(sym.S_r @ J, -J @ sym.S_r)
    assert np.array_equal(np.linalg.matrix_power(sym.S_f, 6), I)
    assert np.array_equal(sym.S_r @ sym.S_r, I)
    assert np.array_equal(sym.Lambda @ sym.Lambda, I)
    np.testing.assert_allclose(-np.linalg.inv(sym.Y0) @ sym.S_f.T @ sym.S_r @ sym.Y0,
                               sym.Lambda, atol=1e-15)


def test_symmetry_entries_exact(sym):
    allowed = {0.0, 1.0, -1.0, np.sqrt(2) / 2, -np.sqrt(2) / 2}
    for M in (sym.S_f, sym.S_r, sym.Y0, sym.Lambda, sym.J):
        assert set(np.unique(M)) <= allowed


def test_S_f_maps_collision_states(sym, orbit):
    a, b, r = orbit.alpha, orbit.beta, np.sqrt(2)
    np.testing.assert_allclose(sym.S_f @ orbit.gamma0, [a, 0, a, b, -r, -b], atol=1e-15)


def test_S_r_fixed_vectors(sym, rng):
    # S_r v = v exactly on vectors of the form (a, a, b, c, -c, 0)
    for _ in range(5):
        a, b, c = rng.normal(size=3)
        v = np.array([a, a, b, c, -c, 0.0])
        np.testing.assert_allclose(sym.S_r @ v, v, atol=1e-15)
    w = np.linalg.eigh(0.5 * (sym.S_r + np.eye(6)))
    assert np.count_nonzero(w[0] > 0.5) == 3


def test_symmetry_relations_on_flow(sym, orbit, cfg):
    # backward states gamma(2 tau - s) are reached forward across the period
    for s in np.linspace(0.0, 2 * orbit.tau, 20):
        y = flow(orbit.gamma0, s, cfg)[:6]
        ahead = flow(orbit.gamma0, s + 2 * orbit.tau, cfg)[:6]
        back = flow(orbit.gamma0, (2 * orbit.tau - s) % orbit.period, cfg)[:6]
        assert np.linalg.norm(ahead - sym.S_f @ y) < 1e-5
        assert np.linalg.norm(back - sym.S_r @ y) < 1e-5


# --- pieces of the pipeline ----------------------------------------------

def test_symplectic_inverse(rng):
    for _ in range(5):
        M = random_symplectic(rng)
        assert symplectic_defect(M) < 1e-12
        np.testing.assert_allclose(symplectic_inverse(M) @ M, np.eye(6), atol=1e-12)


def test_B_properties(orbit, cfg, sym):
    B = compute_B(orbit, cfg)
    assert symplectic_defect(B) < 1e-8
    assert np.linalg.det(B) == pytest.approx(1.0, abs=1e-8)
    v0 = vector_field(orbit.gamma0)
    np.testing.assert_allclose(B @ (sym.Y0.T @ v0), vector_field(orbit.gamma_tau), atol=1e-6)


def test_W_inverse_identity(orbit, cfg):
    W, W_inv, _ = assemble_W(compute_B(orbit, cfg))
    np.testing.assert_allclose(W @ W_inv, np.eye(6), atol=1e-10)


def test_conditioning_warning():
    B = np.diag([1e5, 1e5, 1.0, 1e-5, 1e-5, 1.0])
    with pytest.warns(RuntimeWarning, match="conditioned"):
        assemble_W(B)


def test_block_defect_raises():
    W = np.eye(6)
    W[0, 4] = 1.0
    with pytest.raises(BlockDefect):
        extract_K(W, np.eye(6))


def test_block_eigenvalues_quadratic():
    K = np.array([[1, 0, 0], [0, 2.0, 1.0], [0, 1.0, 2.0]])
    assert sorted(block_eigenvalues(K)) == pytest.approx([1.0, 3.0])


def test_synthetic_stable_K():
    K = np.array([[1, 0, 0], [0, 0.5, 0], [0, 0, -0.5]])
    rep = stability_verdict(K)
    assert rep.verdict is Verdict.STABLE
    assert rep.reason == "block_eigenvalues_in_unit_interval"


def test_boundary_eigenvalues_count_as_stable():
    assert stability_verdict(np.diag([1.0, 1.0, -1.0])).verdict is Verdict.STABLE


def test_complex_block_is_unstable_with_own_reason():
    K = np.array([[1, 0, 0], [0, 0.0, -0.5], [0, 0.5, 0.0]])
    rep = stability_verdict(K)
    assert isinstance(rep.block_eigenvalues[0], complex)
    assert rep.verdict is Verdict.UNSTABLE
    assert rep.reason == "complex_block_eigenvalues"


def test_match_spectra():
    a = np.array([2.0, 0.5, 1j, -1j])
    assert match_spectra(a, a[::-1]) == 0.0
    assert match_spectra(a, a + 1e-3) == pytest.approx(1e-3 / 1.0)


# --- the orbit ------------------------------------------------------------

def test_report_structure(report):
    assert report.symplectic_defect < 1e-8
    assert report.block_defect < 1e-5
    assert report.extra["W_e1_defect"] < 1e-5
    assert report.extra["K_transpose_defect"] < 1e-5
    assert report.extra["gamma_prime_direction_defect"] < 1e-12
    assert np.isrealobj(report.K)


def test_report_K(report):
    np.testing.assert_allclose(report.K[1:], K_REF, atol=5e-3)
    assert report.trivial_eigen_defect < 1e-6


def test_report_verdict(report):
    lam = sorted(report.block_eigenvalues, reverse=True)
    assert lam[0] == pytest.approx(0.40550, abs=1e-3)
    assert lam[1] == pytest.approx(-1.22685, abs=1e-3)
    assert report.verdict is Verdict.UNSTABLE
    assert report.reason == "block_eigenvalue_outside_unit_interval"


def test_monodromy_routes_agree(report):
    assert report.route_discrepancy < 1e-4


def test_monodromy_spectrum(report):
    mu = report.monodromy_eigenvalues_route1
    # reciprocal pairs
    assert match_spectra(mu, 1.0 / mu) < 1e-4
    # eigenvalue 1 twice
    assert np.count_nonzero(np.abs(mu - 1.0) < 1e-4) >= 2


def test_monodromy_routes_directly(orbit, cfg, report, sym):
    M1 = monodromy_route1(report.W, sym)
    M2 = monodromy_route2(orbit, cfg)
    assert symplectic_defect(M1) < 1e-6
    assert match_spectra(np.linalg.eigvals(M1), np.linalg.eigvals(M2)) < 1e-4


def test_first_row_defect_shrinks_with_step(orbit, ctx):
    coarse = analyze(orbit, IntegratorConfig(step=4e-5), ctx, cross_check=False)
    fine = analyze(orbit, IntegratorConfig(step=1e-5), ctx, cross_check=False)
    assert fine.trivial_eigen_defect < coarse.trivial_eigen_defect


def test_report_dict(report):
    d = report.to_dict()
    for key in ("B", "W", "K", "block_eigenvalues", "verdict", "symplectic_defect",
                "block_defect", "monodromy_eigenvalues_route1", "monodromy_eigenvalues_route2"):
        assert key in d
    assert d["verdict"] == "LinearlyUnstable"
