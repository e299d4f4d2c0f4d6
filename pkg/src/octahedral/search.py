"""
Shooting search for the octahedral collision orbit.

Starting from the x-axis collision ``(0, a, a, sqrt2, -b, b)`` the orbit is
wanted with the next collision on the y axis and, at the first time tau with
Q1 = Q2, the state ``(a', a', b', c, -c, 0)``.  The inner solve picks beta
so that P3(tau) = 0; the outer solve picks alpha so that P1(tau) + P2(tau) = 0.
"""

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .dynamics import EnergyContext, collision_state, SQRT2
from .integrator import (
    COLLISIONS, Event, EventKind, EventSpec, IntegratorConfig, MaxSpanExceeded,
    QuadrupleApproach, flow, propagate,
)

log = logging.getLogger(__name__)

CUTOFF_RATIO = 0.4
ROOT_TOL = 1e-10
BOUNDARY_TOL = 1e-8
# near the Sigma boundary the decision time grows like 1/distance
ALPHA_STAR_MAX_S = 1000.0
BOUNDARY_MAX_S = 50.0
ALPHA_GRID = tuple(np.round(np.arange(0.5, 3.3 + 1e-9, 0.1), 10))


class SearchError(RuntimeError):
    pass


class NotInSigma(SearchError):
    pass


class NoSignChange(SearchError):
    pass


class BracketError(SearchError):
    def __init__(self, msg, curve=None):
        super().__init__(msg)
        self.curve = curve or []


# ---------------------------------------------------------------------------
# collision-ordering cutoff
# ---------------------------------------------------------------------------

def cutoff_f(a, b):
    """Scaled rate of change of p_i - p_j with q_i = a q_j, q_k = b q_j.

    Negative values keep the pair (i, j) in the ordering region.
    """
    return (4.0 * (1.0 - a) / (a * a + 1.0) ** 1.5
            + 4.0 / (b * b + 1.0) ** 1.5
            - 4.0 * a / (a * a + b * b) ** 1.5
            + 0.5 - 0.5 / (a * a))


def cutoff_asymptote(a):
    """Limit of ``cutoff_f(a, b)`` as b -> infinity."""
    return 4.0 * (1.0 - a) / (a * a + 1.0) ** 1.5 + 0.5 - 0.5 / (a * a)


def cutoff_asymptote_root():
    # a = 1 is a second, trivial root; stay inside (0, 1)
    return brentq(cutoff_asymptote, 0.1, 0.9, xtol=1e-15)


def cutoff_pair(q, p, ratio=CUTOFF_RATIO):
    """First ordered pair (i, j), 1-based, with 0 < q_i < ratio*q_j and p_i < p_j."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    for i in range(3):
        for j in range(3):
            if i != j and 0 < q[i] < ratio * q[j] and p[i] < p[j]:
                return i + 1, j + 1
    return None


def cutoff_predicate(q, p):
    """True when some pair i must reach collision before pair j."""
    return cutoff_pair(q, p) is not None


# ---------------------------------------------------------------------------
# the region Sigma
# ---------------------------------------------------------------------------

class Outcome(enum.Enum):
    FIRST_COLLISION_AXIS1 = "FirstCollisionAxis1"
    FIRST_COLLISION_AXIS2 = "FirstCollisionAxis2"
    FIRST_COLLISION_AXIS3 = "FirstCollisionAxis3"
    CUTOFF_TRIGGERED = "CutoffTriggered"
    QUADRUPLE_APPROACH = "QuadrupleApproach"
    INCONCLUSIVE = "Inconclusive"


_AXIS_OUTCOME = {
    0: Outcome.FIRST_COLLISION_AXIS1,
    1: Outcome.FIRST_COLLISION_AXIS2,
    2: Outcome.FIRST_COLLISION_AXIS3,
}


@dataclass(frozen=True)
class SigmaQuery:
    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("Sigma is defined for alpha >= 0, beta >= 0")


@dataclass
class SigmaVerdict:
    outcome: Outcome
    s_star: float = float("nan")
    state: np.ndarray = None
    # set when the collision-ordering cutoff decided the outcome
    via_cutoff: bool = False
    # 1-based axes for a quadruple approach
    pair: tuple = None

    @property
    def in_sigma(self):
        return self.outcome is Outcome.FIRST_COLLISION_AXIS2

    @property
    def decided(self):
        return self.outcome in _AXIS_OUTCOME.values()


def classify_sigma(query, ctx=None, cfg=None, resolve_cutoff=True):
    """Decide which axis pair collides first after the x-collision at s = 0.

    Zero crossings of Q1, Q2, Q3, the collision-ordering cutoff and the
    quadruple guard all terminate the integration.  A cutoff firing is
    reported as the axis it implies unless ``resolve_cutoff`` is false.
    ``cfg.max_s`` is stretched by ``alpha**-3`` (see :func:`scaled_config`).
    """
    ctx = (ctx or EnergyContext()).require_bound()
    cfg = cfg or IntegratorConfig()
    if not isinstance(query, SigmaQuery):
        query = SigmaQuery(*query)
    y0 = collision_state(query.alpha, query.beta)
    twin = query.beta == 0.0
    if query.alpha == 0.0:
        return SigmaVerdict(Outcome.QUADRUPLE_APPROACH, 0.0, y0, pair=(2, 3))
    cfg = scaled_config(cfg, query.alpha)
    specs = [EventSpec(k) for k in COLLISIONS] + [EventSpec(EventKind.CUTOFF)]
    try:
        traj = propagate(y0, cfg, specs, ctx, record=False, twin23=twin)
    except QuadrupleApproach as exc:
        st = exc.trajectory.final
        s_end = float(exc.trajectory.s[-1])
        # with beta = 0 the y and z pairs arrive together
        if twin and exc.pair == (2, 3):
            return SigmaVerdict(Outcome.FIRST_COLLISION_AXIS2, s_end, st, pair=exc.pair)
        return SigmaVerdict(Outcome.QUADRUPLE_APPROACH, s_end, st, pair=exc.pair)
    except MaxSpanExceeded as exc:
        return SigmaVerdict(Outcome.INCONCLUSIVE, float(exc.trajectory.s[-1]), exc.trajectory.final)
    ev = traj.events[-1]
    if ev.kind is EventKind.CUTOFF:
        if not resolve_cutoff:
            return SigmaVerdict(Outcome.CUTOFF_TRIGGERED, ev.s, ev.state, via_cutoff=True)
        return SigmaVerdict(_AXIS_OUTCOME[ev.axis], ev.s, ev.state, via_cutoff=True)
    return SigmaVerdict(_AXIS_OUTCOME[int(ev.kind)], ev.s, ev.state)


def scaled_config(cfg, alpha, max_s=None):
    """Stretch the span cap by the natural timescale alpha**-3 of the flow
    near the collision state (regularized speeds scale like alpha**4)."""
    base = cfg.max_s if max_s is None else max_s
    return replace(cfg, max_s=base * max(1.0, alpha ** -3))


def _member(alpha, beta, ctx, cfg):
    v = classify_sigma(SigmaQuery(alpha, beta), ctx, cfg)
    if not v.decided:
        return None, v
    return v.in_sigma, v


def find_alpha_star(ctx=None, cfg=None, lo=3.0, hi=4.0, tol=ROOT_TOL, max_s=ALPHA_STAR_MAX_S):
    """Supremum of alpha with (alpha, 0) in Sigma, by bisection.

    At alpha* itself the orbit falls into total collapse, and the regularized
    time needed to decide a nearby point grows like 1/|alpha - alpha*|.  A
    midpoint left undecided after ``max_s`` lies inside that neighbourhood
    and is returned as the estimate.
    """
    ctx = (ctx or EnergyContext()).require_bound()
    cfg = replace(cfg or IntegratorConfig(), max_s=max_s)
    m_lo, _ = _member(lo, 0.0, ctx, cfg)
    m_hi, _ = _member(hi, 0.0, ctx, cfg)
    if m_lo is not True or m_hi is not False:
        raise BracketError(f"alpha bracket [{lo}, {hi}] does not straddle the Sigma boundary")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        m, v = _member(mid, 0.0, ctx, cfg)
        if m is None:
            log.info("alpha* bisection stopped at undecided alpha=%.12g (%s)", mid, v.outcome.value)
            return mid
        if m:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sigma_boundary_bracket(alpha, ctx=None, cfg=None, tol=BOUNDARY_TOL, beta_hi=None,
                           max_s=BOUNDARY_MAX_S):
    """Bracket ``(lo, hi)`` on the vertical line through alpha with
    (alpha, lo) in Sigma and (alpha, hi) not.  ``hi`` is None if the
    bisection ran into an undecided verdict."""
    ctx = (ctx or EnergyContext()).require_bound()
    cfg = replace(cfg or IntegratorConfig(), max_s=max_s)
    m0, v0 = _member(alpha, 0.0, ctx, cfg)
    if m0 is not True:
        raise NotInSigma(f"(alpha={alpha}, 0) is not in Sigma ({v0.outcome.value})")
    lo = 0.0
    hi = 1.0 if beta_hi is None else beta_hi
    while True:
        m, v = _member(alpha, hi, ctx, cfg)
        if m is False:
            break
        if m is None:
            return lo, None
        lo = hi
        hi *= 2.0
        if hi > 1e3:
            raise SearchError(f"no upper bound on Sigma found at alpha={alpha}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        m, v = _member(alpha, mid, ctx, cfg)
        if m is None:
            log.info("boundary bisection at alpha=%g stopped: %s", alpha, v.outcome.value)
            return lo, None
        if m:
            lo = mid
        else:
            hi = mid
    return lo, hi


def sigma_boundary(alpha, ctx=None, cfg=None, tol=BOUNDARY_TOL, max_s=BOUNDARY_MAX_S):
    """Largest beta found with (alpha, beta) in Sigma."""
    return sigma_boundary_bracket(alpha, ctx, cfg, tol, max_s=max_s)[0]


# ---------------------------------------------------------------------------
# boundary-value solve
# ---------------------------------------------------------------------------

def state_at_tau(alpha, beta, ctx=None, cfg=None):
    """Propagate to the first Q1 = Q2 crossing.  Returns ``(tau, state, t)``.

    Raises :class:`NotInSigma` if a collision comes first.
    """
    cfg = scaled_config(cfg or IntegratorConfig(), alpha)
    specs = [EventSpec(EventKind.Q1_EQUALS_Q2)] + [EventSpec(k) for k in COLLISIONS]
    try:
        traj = propagate(collision_state(alpha, beta), cfg, specs, ctx, record=False)
    except (QuadrupleApproach, MaxSpanExceeded) as exc:
        raise NotInSigma(f"no Q1 = Q2 crossing at ({alpha}, {beta}): {exc}") from exc
    ev = traj.events[-1]
    if ev.kind is not EventKind.Q1_EQUALS_Q2:
        raise NotInSigma(f"{ev.kind.name} before Q1 = Q2 at ({alpha}, {beta})")
    return ev.s, ev.state, ev.t


def _p3(alpha, beta, ctx, cfg):
    return state_at_tau(alpha, beta, ctx, cfg)[1][5]


def _bisect(fn, lo, hi, f_lo, tol):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if f_mid == 0.0:
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_beta(alpha, ctx=None, cfg=None, tol=ROOT_TOL, n_grid=16, bracket=None,
              march_step=0.1, march_max=50.0):
    """Beta in Sigma with P3(tau) = 0 at the first Q1 = Q2 crossing.

    P3(tau) is sampled every ``march_step`` from beta = 0 until the Q1 = Q2
    crossing is lost, which happens at the Sigma boundary.  Without a sign
    change the cell below the boundary is resampled on ``n_grid`` points
    against a bisected boundary.  The first sign change is bisected to
    ``tol``.  A caller that already knows a sign-changing ``bracket`` can
    pass it to skip the march.
    """
    ctx = (ctx or EnergyContext()).require_bound()
    cfg = cfg or IntegratorConfig()

    def p3(b):
        return _p3(alpha, b, ctx, cfg)

    if bracket is not None:
        lo, hi = bracket
        try:
            f_lo, f_hi = p3(lo), p3(hi)
        except NotInSigma:
            f_lo = f_hi = 1.0
        if np.sign(f_lo) != np.sign(f_hi):
            return _bisect(p3, lo, hi, f_lo, tol)
        log.debug("bracket %s lost the sign change at alpha=%g; full search", bracket, alpha)

    # march up from beta = 0 until the Q1 = Q2 crossing is lost
    grid, vals = [], []
    b = 0.0
    while b <= march_max:
        try:
            vals.append(p3(b))
        except NotInSigma:
            break
        grid.append(b)
        b = round(b + march_step, 12)
    if not grid:
        raise NotInSigma(f"no Q1 = Q2 crossing at (alpha={alpha}, beta=0)")
    grid, vals = np.array(grid), np.array(vals)
    flips = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if flips.size == 0:
        # sample the last march cell against the resolved boundary
        b_max = sigma_boundary(alpha, ctx, cfg, tol=1e-4)
        extra_b, extra_v = [], []
        for b in np.linspace(grid[-1], b_max, n_grid)[1:]:
            try:
                extra_v.append(p3(b))
                extra_b.append(b)
            except NotInSigma as exc:
                log.debug("skipping beta=%g at alpha=%g: %s", b, alpha, exc)
        grid = np.concatenate([grid, extra_b])
        vals = np.concatenate([vals, extra_v])
        flips = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if flips.size == 0:
        raise NoSignChange(
            f"P3(tau) keeps sign {np.sign(vals[0]):+.0f} on [0, {b_max:.6g}] at alpha={alpha}")
    if flips.size > 1:
        log.warning("P3(tau) changes sign %d times at alpha=%g; using the first", flips.size, alpha)
    k = flips[0]
    return _bisect(p3, grid[k], grid[k + 1], vals[k], tol)


def residual(alpha, ctx=None, cfg=None, beta=None, **kw):
    """P1(tau) + P2(tau) along the beta(alpha) curve."""
    if beta is None:
        beta = find_beta(alpha, ctx, cfg, **kw)
    _, st, _ = state_at_tau(alpha, beta, ctx, cfg)
    return st[3] + st[4]


@dataclass
class CurvePoint:
    alpha: float
    beta: float = float("nan")
    residual: float = float("nan")
    status: str = "ok"


def beta_curve(alphas, ctx=None, cfg=None, tol=ROOT_TOL):
    """beta(alpha) and residual(alpha) rows; failures become status rows."""
    rows = []
    for a in alphas:
        try:
            b = find_beta(a, ctx, cfg, tol=tol)
            rows.append(CurvePoint(float(a), b, residual(a, ctx, cfg, beta=b)))
        except SearchError as exc:
            rows.append(CurvePoint(float(a), status=type(exc).__name__))
    return rows


# ---------------------------------------------------------------------------
# the periodic orbit
# ---------------------------------------------------------------------------

@dataclass
class OrbitSolution:
    alpha: float
    beta: float
    tau: float
    E: float
    gamma_tau: np.ndarray
    t_tau: float = float("nan")
    residuals: list = field(default_factory=list)
    closure_error: float = float("nan")

    @property
    def period(self):
        return 12.0 * self.tau

    @property
    def gamma0(self):
        return collision_state(self.alpha, self.beta)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "tau": self.tau,
            "period": self.period,
            "E": self.E,
            "gamma0": self.gamma0.tolist(),
            "gamma_tau": np.asarray(self.gamma_tau).tolist(),
            "physical_period": 12.0 * self.t_tau,
            "residuals": [[r.alpha, r.beta, r.residual, r.status] for r in self.residuals],
            "closure_error": self.closure_error,
        }


def solution_at(alpha, beta, ctx=None, cfg=None):
    """Assemble an :class:`OrbitSolution` for given initial data."""
    ctx = ctx or EnergyContext()
    cfg = cfg or IntegratorConfig()
    tau, st, t = state_at_tau(alpha, beta, ctx, cfg)
    sol = OrbitSolution(alpha, beta, tau, ctx.E, st, t_tau=t)
    sol.closure_error = closure_error(sol, ctx, cfg)
    return sol


def closure_error(sol, ctx=None, cfg=None):
    """||gamma(12 tau) - gamma(0)|| by direct integration."""
    y = flow(sol.gamma0, sol.period, cfg or IntegratorConfig(), ctx)
    return float(np.linalg.norm(y[:6] - sol.gamma0))


def find_orbit(ctx=None, cfg=None, alphas=ALPHA_GRID, tol=ROOT_TOL):
    """Two-level shooting: coarse alpha sweep, then bisection on the residual."""
    ctx = (ctx or EnergyContext()).require_bound()
    cfg = cfg or IntegratorConfig()
    curve = beta_curve(alphas, ctx, cfg, tol)
    ok = [r for r in curve if r.status == "ok"]
    flips = [(r0, r1) for r0, r1 in zip(ok[:-1], ok[1:])
             if np.sign(r0.residual) != np.sign(r1.residual)]
    if not flips:
        raise BracketError("residual does not change sign on the alpha grid", curve)
    if len(flips) > 1:
        log.warning("residual changes sign %d times on the alpha grid; using the first", len(flips))
    r0, r1 = flips[0]
    lo, hi, f_lo = r0.alpha, r1.alpha, r0.residual
    b_lo, b_hi = r0.beta, r1.beta
    # beta(alpha) is monotone across a grid cell; pad the bracket
    pad = 0.05 * abs(b_hi - b_lo) + 1e-3
    beta_bracket = (max(0.0, min(b_lo, b_hi) - pad), max(b_lo, b_hi) + pad)
    cache = {}

    def res(a):
        b = find_beta(a, ctx, cfg, tol=tol, bracket=beta_bracket)
        cache[a] = b
        return residual(a, ctx, cfg, beta=b)

    alpha = _bisect(res, lo, hi, f_lo, tol)
    beta = find_beta(alpha, ctx, cfg, tol=tol, bracket=beta_bracket)
    sol = solution_at(alpha, beta, ctx, cfg)
    sol.residuals = curve
    return sol


def checkpoint_states(sol, ctx=None, cfg=None):
    """States at s = 2k tau, k = 0..6, by direct integration."""
    cfg = cfg or IntegratorConfig()
    y0 = sol.gamma0
    return np.array([y0] + [flow(y0, 2 * k * sol.tau, cfg, ctx)[:6] for k in range(1, 7)])


def expected_checkpoints(alpha, beta):
    """The collision states the symmetry construction predicts at s = 2k tau."""
    a, b, r = alpha, beta, SQRT2
    return np.array([
        [0, a, a, r, -b, b],
        [a, 0, a, b, -r, -b],
        [a, -a, 0, -b, -b, -r],
        [0, -a, -a, -r, b, -b],
        [-a, 0, -a, -b, r, b],
        [-a, a, 0, b, b, r],
        [0, a, a, r, -b, b],
    ], dtype=float)


def extend_orbit(sol, ctx=None, cfg=None):
    """Full-period trajectory, with the 2k tau collision states as events."""
    cfg = cfg or IntegratorConfig()
    traj = flow(sol.gamma0, sol.period, cfg, ctx, record=True)
    kinds = [EventKind.Q2_ZERO, EventKind.Q3_ZERO, EventKind.Q1_ZERO] * 2
    for k, st in enumerate(checkpoint_states(sol, ctx, cfg)[1:], start=1):
        traj.events.append(Event(2 * k * sol.tau, kinds[k - 1], st))
    return traj
