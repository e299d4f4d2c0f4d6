"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``CRITERION n: PASS|FAIL`` line; the lines are
repeated in the pytest terminal summary.  Criteria 1, 5, 6 and 7 share the
orbit produced by one full ``search`` run.
"""

import numpy as np
import pytest

from octahedral.dynamics import J, gamma, grad_gamma, hess_gamma
from octahedral.integrator import COLLISIONS, EventSpec, IntegratorConfig, flow, propagate
from octahedral.search import (
    cutoff_asymptote_root, find_alpha_star, residual, solution_at,
)
from octahedral.stability import Verdict, analyze, build_symmetries, match_spectra

from conftest import record

K_REF = np.array([[-0.33061, 0.46342, 0.04988], [0.90212, -1.96273, -1.28477]])


@pytest.fixture(scope="module")
def found(searched, ctx, cfg):
    d = searched["orbit"]
    return solution_at(d["alpha"], d["beta"], ctx, cfg)


@pytest.fixture(scope="module")
def stab(found, cfg, ctx):
    return analyze(found, cfg, ctx)


def test_criterion_1_orbit(searched):
    d = searched["orbit"]
    errs = {
        "alpha": abs(d["alpha"] - 2.698372),
        "beta": abs(d["beta"] - 1.484464),
        "period": abs(d["period"] - 0.527482),
    }
    ok = searched["rc"] == 0 and max(errs.values()) < 1e-4 and searched["elapsed"] < 300
    record(1, ok, f"alpha={d['alpha']:.7f} beta={d['beta']:.7f} period={d['period']:.7f} "
                  f"max|err|={max(errs.values()):.1e} (tol 1e-4) runtime={searched['elapsed']:.0f}s")
    assert ok


def test_criterion_2_alpha_star():
    a = find_alpha_star()
    ok = abs(a - 3.53652) <= 1e-4
    record(2, ok, f"alpha*={a:.6f} target 3.53652 |err|={abs(a - 3.53652):.1e} (tol 1e-4)")
    assert ok


def test_criterion_3_asymptote_root():
    r = cutoff_asymptote_root()
    ok = 0 < r < 1 and abs(r - 0.523143) <= 1e-5
    record(3, ok, f"root={r:.7f} target 0.523143 (tol 1e-5)")
    assert ok


def test_criterion_4_residual_anchors(ctx, cfg):
    r05 = residual(0.5, ctx, cfg)
    r33 = residual(3.3, ctx, cfg)
    ok = abs(r05 - 3.475) <= 0.01 and abs(r33 + 4.112) <= 0.01
    record(4, ok, f"residual(0.5)={r05:.4f} residual(3.3)={r33:.4f} (tol 0.01)")
    assert ok


def test_criterion_5_stability(stab):
    lam = sorted(np.real(stab.block_eigenvalues), reverse=True)
    k_err = float(np.max(np.abs(stab.K[1:] - K_REF)))
    ok = (abs(lam[0] - 0.40550) <= 1e-3 and abs(lam[1] + 1.22685) <= 1e-3
          and stab.verdict is Verdict.UNSTABLE and k_err <= 5e-3
          and np.isrealobj(stab.block_eigenvalues))
    record(5, ok, f"lambda=({lam[0]:.5f}, {lam[1]:.5f}) verdict={stab.verdict.value} "
                  f"max|K-K_ref|={k_err:.1e}")
    assert ok


def _fd_errors(rng, n=100, h=1e-5):
    Q = rng.uniform(0.2, 3.0, size=(n, 3)) * rng.choice([-1, 1], size=(n, 3))
    P = rng.uniform(-3.0, 3.0, size=(n, 3))
    g_err = H_err = 0.0
    for y in np.hstack([Q, P]):
        g = np.empty(6)
        H = np.empty((6, 6))
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            g[k] = (gamma(y + e) - gamma(y - e)) / (2 * h)
            H[:, k] = (grad_gamma(y + e) - grad_gamma(y - e)) / (2 * h)
        gg, HH = grad_gamma(y), hess_gamma(y)
        g_err = max(g_err, np.max(np.abs(gg - g)) / max(1.0, np.max(np.abs(g))))
        H_err = max(H_err, np.max(np.abs(HH - H)) / max(1.0, np.max(np.abs(H))))
    return g_err, H_err


def test_criterion_6_structural(found, stab, cfg):
    sym = build_symmetries()
    checks = {}

    traj = flow(found.gamma0, found.period, IntegratorConfig(record_stride=10), record=True)
    checks["gamma_conservation<1e-9"] = max(abs(gamma(y)) for y in traj.states)

    worst = 0.0
    y = found.gamma0
    for _ in range(6):
        y = flow(y, 1e-3, cfg)[:6]
        ev = propagate(y, cfg, [EventSpec(c) for c in COLLISIONS], record=False).events[-1]
        worst = max(worst, abs(abs(ev.state[3 + int(ev.kind)]) - np.sqrt(2)))
        y = ev.state
    checks["collision_momentum<1e-8"] = worst

    worst = 0.0
    for s in np.linspace(0, 2 * found.tau, 20):
        a = flow(found.gamma0, s, cfg)[:6]
        b = flow(found.gamma0, s + 2 * found.tau, cfg)[:6]
        worst = max(worst, np.linalg.norm(b - sym.S_f @ a))
    checks["S_f_relation<1e-5"] = worst

    checks["B_symplectic<1e-8"] = stab.symplectic_defect
    checks["W_e1<1e-5"] = stab.extra["W_e1_defect"]
    checks["off_block<1e-5"] = stab.block_defect

    mu = stab.monodromy_eigenvalues_route1
    checks["route_agreement<1e-4"] = stab.route_discrepancy
    checks["reciprocal_pairs<1e-4"] = match_spectra(mu, 1.0 / mu)
    ones = np.sort(np.abs(mu - 1.0))
    checks["double_unit_eigenvalue<1e-4"] = ones[1]

    g_err, H_err = _fd_errors(np.random.default_rng(7))
    checks["grad_fd<1e-6"] = g_err
    checks["hess_fd<1e-5"] = H_err

    span = 2 * found.tau
    ref = flow(found.gamma0, span, IntegratorConfig(step=2.5e-5))[:6]
    errs = [np.linalg.norm(flow(found.gamma0, span, IntegratorConfig(step=h))[:6] - ref)
            for h in (4e-4, 2e-4, 1e-4)]
    order = float(np.min(np.log2(np.array(errs[:-1]) / np.array(errs[1:]))))
    checks["rk4_order>3.8"] = order

    failed = []
    for name, val in checks.items():
        bound = float(name.split("<")[-1].split(">")[-1])
        good = val > bound if ">" in name else val < bound
        if not good:
            failed.append(f"{name}: {val:.2e}")
    ok = not failed
    summary = ", ".join(failed) if failed else f"{len(checks)} checks, RK4 order {order:.2f}"
    record(6, ok, summary)
    assert ok, failed


def test_criterion_7_closure(found, cfg):
    y = flow(found.gamma0, found.period, cfg)[:6]
    err = float(np.linalg.norm(y - found.gamma0))
    ok = err < 1e-5
    record(7, ok, f"||gamma(12 tau) - gamma(0)|| = {err:.2e} (tol 1e-5)")
    assert ok
