"""
Linear stability of the octahedral orbit by symmetry reduction.

With the time-preserving symmetry S_f (gamma(s + 2 tau) = S_f gamma(s)) and
the time-reversing symmetry S_r (gamma(2 tau - s) = S_r gamma(s)) the
monodromy matrix over the period 12 tau factors as

    X(12 tau) = Y0 W^6 Y0^T,   W = Lambda D,   D = -B^-1 S_r B,   B = Y(tau),

where Y is the variational solution with Y(0) = Y0.  For the Y0 used here
(W + W^-1)/2 is block diagonal with blocks K^T and K, and all multipliers sit
on the unit circle exactly when the eigenvalues of K lie in [-1, 1].
"""

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dynamics import J, EnergyContext, vector_field
from .integrator import IntegratorConfig, propagate_variational

_D = np.sqrt(2.0) / 2.0


class SymmetryError(AssertionError):
    pass


class BlockDefect(RuntimeError):
    pass


@dataclass(frozen=True)
class Symmetries:
    S_f: np.ndarray
    S_r: np.ndarray
    Y0: np.ndarray
    Lambda: np.ndarray
    J: np.ndarray


def _check(cond, what):
    if not cond:
        raise SymmetryError(what)


def build_symmetries():
    """The orbit's symmetry matrices, checked against their defining relations."""
    S_f = np.zeros((6, 6))
    # (Q1, Q2, Q3) -> (Q3, -Q1, Q2), same on P
    for off in (0, 3):
        S_f[off + 0, off + 2] = 1.0
        S_f[off + 1, off + 0] = -1.0
        S_f[off + 2, off + 1] = 1.0
    S = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    S_r = np.block([[S, np.zeros((3, 3))], [np.zeros((3, 3)), -S]])
    Y0 = np.array([
        [1, 0, 0, 0, 0, 0],
        [0, 0, -_D, 0, _D, 0],
        [0, 0, _D, 0, _D, 0],
        [0, 0, 0, 1, 0, 0],
        [0, -_D, 0, 0, 0, -_D],
        [0, -_D, 0, 0, 0, _D],
    ])
    Lam = np.diag([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
    I = np.eye(6)
    eps = 1e-15
    for name, M in (("S_f", S_f), ("S_r", S_r), ("Y0", Y0)):
        _check(np.allclose(M.T @ M, I, atol=eps), f"{name} is not orthogonal")
    _check(np.array_equal(S_f @ J, J @ S_f), "S_f does not commute with J")
    _check(np.array_equal(S_r @ J, -J @ S_r), "S_r does not anticommute with J")
    _check(np.array_equal(np.linalg.matrix_power(S_f, 6), I), "S_f^6 != I")
    _check(np.array_equal(S_r @ S_r, I), "S_r^2 != I")
    _check(np.allclose(Y0.T @ J @ Y0, J, atol=eps), "Y0 is not symplectic")
    _check(np.allclose(-Y0.T @ S_f.T @ S_r @ Y0, Lam, atol=eps),
           "-Y0^-1 S_f^T S_r Y0 != Lambda")
    return Symmetries(S_f, S_r, Y0, Lam, J.copy())


def symplectic_inverse(B):
    """Inverse of a symplectic matrix from its 3x3 blocks."""
    B1, B2, B3, B4 = B[:3, :3], B[:3, 3:], B[3:, :3], B[3:, 3:]
    return np.block([[B4.T, -B2.T], [-B3.T, B1.T]])


def symplectic_defect(M):
    return float(np.max(np.abs(M.T @ J @ M - J)))


def compute_B(sol, cfg=None, ctx=None, sym=None):
    """B = Y(tau) with Y(0) = Y0, integrated along the orbit."""
    sym = sym or build_symmetries()
    cfg = cfg or IntegratorConfig()
    ctx = ctx or EnergyContext(sol.E)
    B, _ = propagate_variational(sol.gamma0, sym.Y0, sol.tau, cfg, ctx)
    return B


def assemble_W(B, sym=None):
    """Return ``(W, W_inv, D)`` with W = Lambda D and W^-1 = D Lambda."""
    sym = sym or build_symmetries()
    cond = np.linalg.norm(B, 2) * np.linalg.norm(symplectic_inverse(B), 2)
    if cond > 1e8:
        warnings.warn(f"B is badly conditioned (||B|| ||B^-1|| = {cond:.3g})", RuntimeWarning)
    D = -symplectic_inverse(B) @ sym.S_r @ B
    return sym.Lambda @ D, D @ sym.Lambda, D


def extract_K(W, W_inv, max_defect=1e-3):
    """Lower-right block of (W + W^-1)/2, with the off-block residue.

    Returns ``(K, off_block_defect, transpose_defect)``; the last compares
    the upper-left block with K^T.
    """
    M = 0.5 * (W + W_inv)
    K = M[3:, 3:].copy()
    off = float(max(np.max(np.abs(M[:3, 3:])), np.max(np.abs(M[3:, :3]))))
    tdef = float(np.max(np.abs(M[:3, :3] - K.T)))
    if off > max_defect:
        raise BlockDefect(f"(W + W^-1)/2 off-diagonal blocks reach {off:.3g}")
    return K, off, tdef


class Verdict(enum.Enum):
    STABLE = "LinearlyStable"
    UNSTABLE = "LinearlyUnstable"


def block_eigenvalues(K):
    """Eigenvalues of the lower-right 2x2 block of K by the quadratic formula."""
    a, b, c, d = K[1, 1], K[1, 2], K[2, 1], K[2, 2]
    tr = a + d
    det = a * d - b * c
    disc = tr * tr - 4.0 * det
    if disc >= 0:
        r = np.sqrt(disc)
        return (tr + r) / 2.0, (tr - r) / 2.0
    r = np.sqrt(-disc)
    return complex(tr / 2.0, r / 2.0), complex(tr / 2.0, -r / 2.0)


@dataclass
class StabilityReport:
    B: np.ndarray
    W: np.ndarray
    K: np.ndarray
    block_eigenvalues: tuple
    verdict: Verdict
    reason: str
    symplectic_defect: float
    block_defect: float
    trivial_eigen_defect: float
    monodromy_eigenvalues_route1: np.ndarray = None
    monodromy_eigenvalues_route2: np.ndarray = None
    extra: dict = field(default_factory=dict)

    @property
    def route_discrepancy(self):
        if self.monodromy_eigenvalues_route1 is None or self.monodromy_eigenvalues_route2 is None:
            return float("nan")
        return match_spectra(self.monodromy_eigenvalues_route1, self.monodromy_eigenvalues_route2)

    def to_dict(self):
        def cplx(v):
            v = np.asarray(v, dtype=complex)
            return [[float(z.real), float(z.imag)] for z in v]

        return {
            "B": self.B.tolist(),
            "W": self.W.tolist(),
            "K": self.K.tolist(),
            "block_eigenvalues": cplx(self.block_eigenvalues),
            "verdict": self.verdict.value,
            "reason": self.reason,
            "symplectic_defect": self.symplectic_defect,
            "block_defect": self.block_defect,
            "trivial_eigen_defect": self.trivial_eigen_defect,
            "monodromy_eigenvalues_route1": cplx(self.monodromy_eigenvalues_route1),
            "monodromy_eigenvalues_route2": cplx(self.monodromy_eigenvalues_route2),
            "route_discrepancy": self.route_discrepancy,
            **self.extra,
        }


def stability_verdict(K, **diagnostics):
    """Stable iff both eigenvalues of the 2x2 block are real and in [-1, 1]."""
    lam = block_eigenvalues(K)
    if isinstance(lam[0], complex):
        verdict, reason = Verdict.UNSTABLE, "complex_block_eigenvalues"
    elif all(-1.0 <= x <= 1.0 for x in lam):
        verdict, reason = Verdict.STABLE, "block_eigenvalues_in_unit_interval"
    else:
        verdict, reason = Verdict.UNSTABLE, "block_eigenvalue_outside_unit_interval"
    diagnostics.setdefault("B", np.full((6, 6), np.nan))
    diagnostics.setdefault("W", np.full((6, 6), np.nan))
    diagnostics.setdefault("symplectic_defect", float("nan"))
    diagnostics.setdefault("block_defect", float("nan"))
    diagnostics.setdefault("trivial_eigen_defect", float(np.max(np.abs(K[0] - [1.0, 0.0, 0.0]))))
    return StabilityReport(K=K, block_eigenvalues=lam, verdict=verdict, reason=reason, **diagnostics)


# ---------------------------------------------------------------------------
# monodromy cross-check
# ---------------------------------------------------------------------------

def monodromy_route1(W, sym=None):
    """X(12 tau) = Y0 W^6 Y0^T."""
    sym = sym or build_symmetries()
    return sym.Y0 @ np.linalg.matrix_power(W, 6) @ sym.Y0.T


def monodromy_route2(sol, cfg=None, ctx=None, sym=None):
    """(S_f^T S_r A^-1 S_r A)^6 with A = X(tau) integrated from the identity."""
    sym = sym or build_symmetries()
    cfg = cfg or IntegratorConfig()
    ctx = ctx or EnergyContext(sol.E)
    A, _ = propagate_variational(sol.gamma0, np.eye(6), sol.tau, cfg, ctx)
    X2 = sym.S_r @ np.linalg.solve(A, sym.S_r @ A)
    return np.linalg.matrix_power(sym.S_f.T @ X2, 6)


def match_spectra(a, b):
    """Largest distance between optimally paired eigenvalues, relative to max(1, |a|)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    cost = np.abs(a[:, None] - b[None, :]) / np.maximum(1.0, np.abs(a))[:, None]
    r, c = linear_sum_assignment(cost)
    return float(np.max(cost[r, c]))


def analyze(sol, cfg=None, ctx=None, cross_check=True):
    """Full pipeline from an orbit solution to a :class:`StabilityReport`."""
    sym = build_symmetries()
    cfg = cfg or IntegratorConfig()
    ctx = ctx or EnergyContext(sol.E)
    B = compute_B(sol, cfg, ctx, sym)
    W, W_inv, D = assemble_W(B, sym)
    K, off, tdef = extract_K(W, W_inv)
    v = sym.Y0.T @ vector_field(sol.gamma0, ctx)
    v /= np.linalg.norm(v)
    extra = {
        "W_e1_defect": float(np.max(np.abs(W[:, 0] - np.eye(6)[0]))),
        "gamma_prime_direction_defect": float(np.max(np.abs(v - np.eye(6)[0]))),
        "K_transpose_defect": tdef,
        "L1": D[:3, 3:].tolist(),
        "L2": (-D[3:, :3]).tolist(),
    }
    rep = stability_verdict(
        K, B=B, W=W, symplectic_defect=symplectic_defect(B), block_defect=off, extra=extra)
    if cross_check:
        rep.monodromy_eigenvalues_route1 = np.linalg.eigvals(monodromy_route1(W, sym))
        rep.monodromy_eigenvalues_route2 = np.linalg.eigvals(monodromy_route2(sol, cfg, ctx, sym))
    return rep
