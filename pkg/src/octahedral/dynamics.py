"""
Regularized Hamiltonian of the octahedral six-body problem.

Six unit masses sit at (+-q1, 0, 0), (0, +-q2, 0), (0, 0, +-q3).  Each axis
coordinate is regularized with the Levi-Civita substitution q = Q**2,
p = P / (2 Q) and time is rescaled with dt/ds = Q1**2 Q2**2 Q3**2, which
turns the binary collisions at the origin into regular points of the flow.

Phase points are plain float arrays ``(Q1, Q2, Q3, P1, P2, P3)``.  The hot
routines are compiled with numba and are reused by the integrator.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

SQRT2 = np.sqrt(2.0)

# symplectic unit, ordering (Q, P)
J = np.block([[np.zeros((3, 3)), np.eye(3)], [-np.eye(3), np.zeros((3, 3))]])

_PAIRS = ((0, 1), (0, 2), (1, 2))


class DegenerateStateError(ValueError):
    """Two regularized positions vanish together (unregularized quadruple collision)."""


@dataclass(frozen=True)
class EnergyContext:
    """Fixed total energy of the system (negative for bound orbits)."""

    E: float = -1.0

    def __post_init__(self):
        if not np.isfinite(self.E):
            raise ValueError("energy must be finite")

    def require_bound(self):
        if self.E >= 0:
            raise ValueError(f"search operations need E < 0, got {self.E}")
        return self


# ---------------------------------------------------------------------------
# coordinate transforms
# ---------------------------------------------------------------------------

def to_regularized(q, p):
    """Map physical ``(q, p)`` to regularized ``(Q, P)`` on the Q > 0 sheet.

    Returns a 6-vector.  Raises ``ValueError`` if any ``q_i <= 0``, where the
    transform is undefined.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != (3,) or p.shape != (3,):
        raise ValueError("q and p must be 3-vectors")
    if np.any(q <= 0):
        raise ValueError(f"to_regularized needs all q_i > 0, got {q}")
    Q = np.sqrt(q)
    return np.concatenate([Q, 2.0 * Q * p])


def to_physical(y):
    """Map a regularized 6-vector back to ``(q, p)``.

    The sign of ``Q_i`` is kept in ``p_i`` (double cover).  Raises if some
    ``Q_i == 0`` since the momentum is undefined at collision.
    """
    y = np.asarray(y, dtype=float)
    Q, P = y[:3], y[3:6]
    if np.any(Q == 0):
        raise ValueError(f"to_physical undefined at collision, Q = {Q}")
    return Q * Q, P / (2.0 * Q)


def physical_energy(q, p):
    """H = K - U in the original coordinates."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    U = 0.0
    for i, j in _PAIRS:
        U += 4.0 / np.sqrt(q[i] ** 2 + q[j] ** 2)
    U += np.sum(1.0 / (2.0 * q))
    return float(np.sum(p * p) - U)


# ---------------------------------------------------------------------------
# compiled kernels
#
# Everything is written in u_i = Q_i**2:
#   G(u, P) = 1/4 sum_i P_i^2 pi_i - 4 pi R(u) - 1/2 sum_{i<j} u_i u_j - E pi
# with pi = u1 u2 u3, pi_i = prod_{j != i} u_j and R = sum_{i<j} (u_i^2+u_j^2)^(-1/2).
# Derivatives in Q follow from dG/dQ_i = 2 Q_i dG/du_i.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _check_pairs(Q):
    for a in range(3):
        for b in range(a + 1, 3):
            if Q[a] == 0.0 and Q[b] == 0.0:
                return False
    return True


@njit(cache=True)
def _gamma(y, E):
    u0 = y[0] * y[0]
    u1 = y[1] * y[1]
    u2 = y[2] * y[2]
    pi = u0 * u1 * u2
    kin = 0.25 * (y[3] * y[3] * u1 * u2 + u0 * y[4] * y[4] * u2 + u0 * u1 * y[5] * y[5])
    rad = (4.0 * pi / np.sqrt(u0 * u0 + u1 * u1)
           + 4.0 * pi / np.sqrt(u0 * u0 + u2 * u2)
           + 4.0 * pi / np.sqrt(u1 * u1 + u2 * u2))
    return kin - rad - 0.5 * (u1 * u2 + u0 * u2 + u0 * u1) - pi * E


@njit(cache=True)
def _u_derivs(y, E, want_second, Gu, GuP, Guu):
    """First (and optionally second) derivatives of G in (u, P).

    Fills Gu[3]; GuP[3,3] with d2G/du_a dP_b; Guu[3,3].
    Returns dG/dP as a fresh array.
    """
    u = np.empty(3)
    for a in range(3):
        u[a] = y[a] * y[a]
    P = y[3:6]
    pi_a = np.empty(3)
    pi_a[0] = u[1] * u[2]
    pi_a[1] = u[0] * u[2]
    pi_a[2] = u[0] * u[1]
    pi = u[0] * u[1] * u[2]

    # R and its u-derivatives
    R = 0.0
    R_a = np.zeros(3)
    R_ab = np.zeros((3, 3))
    for a in range(3):
        for b in range(a + 1, 3):
            r = 1.0 / np.sqrt(u[a] * u[a] + u[b] * u[b])
            r3 = r * r * r
            R += r
            R_a[a] -= u[a] * r3
            R_a[b] -= u[b] * r3
            if want_second:
                r5 = r3 * r * r
                R_ab[a, a] += -r3 + 3.0 * u[a] * u[a] * r5
                R_ab[b, b] += -r3 + 3.0 * u[b] * u[b] * r5
                R_ab[a, b] += 3.0 * u[a] * u[b] * r5
                R_ab[b, a] += 3.0 * u[a] * u[b] * r5

    GP = np.empty(3)
    for a in range(3):
        GP[a] = 0.5 * P[a] * pi_a[a]

    for a in range(3):
        b = (a + 1) % 3
        c = (a + 2) % 3
        # kinetic: pi_i differentiated by u_a leaves the third index
        g = 0.25 * (P[b] * P[b] * u[c] + P[c] * P[c] * u[b])
        g -= 4.0 * (pi_a[a] * R + pi * R_a[a])
        g -= 0.5 * (u[b] + u[c])
        g -= E * pi_a[a]
        Gu[a] = g

    if want_second:
        for a in range(3):
            for b in range(3):
                if a == b:
                    GuP[a, b] = 0.0
                else:
                    c = 3 - a - b
                    GuP[a, b] = 0.5 * P[b] * u[c]
        for a in range(3):
            for b in range(3):
                if a == b:
                    pab = 0.0
                    kin = 0.0
                    pair = 0.0
                else:
                    c = 3 - a - b
                    pab = u[c]
                    kin = 0.25 * P[c] * P[c]
                    pair = -0.5
                rad = -4.0 * (pab * R + pi_a[a] * R_a[b] + pi_a[b] * R_a[a] + pi * R_ab[a, b])
                Guu[a, b] = kin + rad + pair - E * pab
    return GP


@njit(cache=True)
def _grad(y, E):
    Gu = np.empty(3)
    GuP = np.empty((3, 3))
    Guu = np.empty((3, 3))
    GP = _u_derivs(y, E, False, Gu, GuP, Guu)
    out = np.empty(6)
    for a in range(3):
        out[a] = 2.0 * y[a] * Gu[a]
        out[3 + a] = GP[a]
    return out


@njit(cache=True)
def _hess(y, E):
    Gu = np.empty(3)
    GuP = np.empty((3, 3))
    Guu = np.empty((3, 3))
    _u_derivs(y, E, True, Gu, GuP, Guu)
    H = np.zeros((6, 6))
    for a in range(3):
        for b in range(a, 3):
            v = 4.0 * y[a] * y[b] * Guu[a, b]
            if a == b:
                v += 2.0 * Gu[a]
            H[a, b] = v
            H[b, a] = v
    for a in range(3):
        for b in range(3):
            # d2/dQ_a dP_b
            H[a, 3 + b] = 2.0 * y[a] * GuP[a, b]
            H[3 + b, a] = H[a, 3 + b]
    for a in range(3):
        c = 1.0
        for b in range(3):
            if b != a:
                c *= y[b] * y[b]
        H[3 + a, 3 + a] = 0.5 * c
    return H


@njit(cache=True)
def _field(y, E, out):
    """Hamiltonian vector field plus the time quadrature, written into out[7].

    Scalar transcription of ``_grad`` for the integrator hot loop.
    """
    Q0 = y[0]
    Q1 = y[1]
    Q2 = y[2]
    P0 = y[3]
    P1 = y[4]
    P2 = y[5]
    u0 = Q0 * Q0
    u1 = Q1 * Q1
    u2 = Q2 * Q2
    pa0 = u1 * u2
    pa1 = u0 * u2
    pa2 = u0 * u1
    pi = u0 * pa0
    r01 = 1.0 / np.sqrt(u0 * u0 + u1 * u1)
    r02 = 1.0 / np.sqrt(u0 * u0 + u2 * u2)
    r12 = 1.0 / np.sqrt(u1 * u1 + u2 * u2)
    c01 = r01 * r01 * r01
    c02 = r02 * r02 * r02
    c12 = r12 * r12 * r12
    R = r01 + r02 + r12
    g0 = (0.25 * (P1 * P1 * u2 + P2 * P2 * u1)
          - 4.0 * (pa0 * R - pi * u0 * (c01 + c02))
          - 0.5 * (u1 + u2) - E * pa0)
    g1 = (0.25 * (P0 * P0 * u2 + P2 * P2 * u0)
          - 4.0 * (pa1 * R - pi * u1 * (c01 + c12))
          - 0.5 * (u0 + u2) - E * pa1)
    g2 = (0.25 * (P0 * P0 * u1 + P1 * P1 * u0)
          - 4.0 * (pa2 * R - pi * u2 * (c02 + c12))
          - 0.5 * (u0 + u1) - E * pa2)
    out[0] = 0.5 * P0 * pa0
    out[1] = 0.5 * P1 * pa1
    out[2] = 0.5 * P2 * pa2
    out[3] = -2.0 * Q0 * g0
    out[4] = -2.0 * Q1 * g1
    out[5] = -2.0 * Q2 * g2
    out[6] = pi


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def _state(y):
    y = np.ascontiguousarray(y, dtype=float)
    if y.shape != (6,):
        raise ValueError(f"expected a 6-vector, got shape {y.shape}")
    if not _check_pairs(y[:3]):
        raise DegenerateStateError(f"two regularized positions vanish at Q = {y[:3]}")
    return y


def _energy(ctx):
    return -1.0 if ctx is None else float(ctx.E)


def gamma(y, ctx=None):
    """Regularized Hamiltonian Gamma at the phase point ``y``."""
    return float(_gamma(_state(y), _energy(ctx)))


def grad_gamma(y, ctx=None):
    """Gradient ``(dGamma/dQ, dGamma/dP)`` as a 6-vector."""
    return _grad(_state(y), _energy(ctx))


def hess_gamma(y, ctx=None):
    """Symmetric 6x6 Hessian of Gamma."""
    return _hess(_state(y), _energy(ctx))


def vector_field(y, ctx=None):
    """Flow direction ``(dGamma/dP, -dGamma/dQ)``."""
    g = grad_gamma(y, ctx)
    return np.concatenate([g[3:], -g[:3]])


def time_rescale(y):
    """dt/ds = Q1^2 Q2^2 Q3^2."""
    Q = np.asarray(y, dtype=float)[:3]
    return float(np.prod(Q * Q))


def collision_state(alpha, beta):
    """The x-axis collision state ``(0, alpha, alpha, sqrt2, -beta, beta)``."""
    return np.array([0.0, alpha, alpha, SQRT2, -beta, beta])
