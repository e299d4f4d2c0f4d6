"""
Fixed-step RK4 propagation of the regularized flow and its linearization.

The base state carries a seventh component, the physical time ``t``, fed by
the quadrature dt/ds = Q1^2 Q2^2 Q3^2.  Events are located by bisection on
the fractional step taken from the left sample, so event states come from
the same stepper as every other sample.
"""

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dynamics import _check_pairs, _field, _gamma, _hess, DegenerateStateError


class EventKind(enum.IntEnum):
    Q1_ZERO = 0
    Q2_ZERO = 1
    Q3_ZERO = 2
    Q1_EQUALS_Q2 = 3
    P3_ZERO = 4
    CUTOFF = 5


COLLISIONS = (EventKind.Q1_ZERO, EventKind.Q2_ZERO, EventKind.Q3_ZERO)


@dataclass(frozen=True)
class EventSpec:
    """A scalar event function of the state; ``direction`` filters crossings
    (+1 rising, -1 falling, 0 either).  ``CUTOFF`` is a predicate, not a root."""

    kind: EventKind
    direction: int = 0


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 1e-5
    max_s: float = 5.0
    event_tol: float = 1e-12
    quad_floor: float = 1e-12
    record_stride: int = 1

    def __post_init__(self):
        if not (self.step > 0 and self.max_s > 0 and self.event_tol > 0 and self.quad_floor > 0):
            raise ValueError("step, max_s, event_tol and quad_floor must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")


@dataclass
class Event:
    s: float
    kind: EventKind
    state: np.ndarray
    t: float = 0.0
    # colliding axis (0-based) implied by a cutoff firing
    axis: int = -1


@dataclass
class Trajectory:
    s: np.ndarray
    t: np.ndarray
    states: np.ndarray
    events: list = field(default_factory=list)

    @property
    def final(self):
        return self.states[-1]


class MaxSpanExceeded(RuntimeError):
    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


_PAIR_NAMES = ((1, 2), (1, 3), (2, 3))


class QuadrupleApproach(DegenerateStateError):
    def __init__(self, msg, trajectory=None, pair=None):
        super().__init__(msg)
        self.trajectory = trajectory
        # 1-based axes whose positions vanished together
        self.pair = pair


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _rk4(y, h, E):
    k = np.empty((4, 7))
    w = np.empty(7)
    out = np.empty(7)
    _field(y, E, k[0])
    for i in range(7):
        w[i] = y[i] + 0.5 * h * k[0, i]
    _field(w, E, k[1])
    for i in range(7):
        w[i] = y[i] + 0.5 * h * k[1, i]
    _field(w, E, k[2])
    for i in range(7):
        w[i] = y[i] + h * k[2, i]
    _field(w, E, k[3])
    for i in range(7):
        out[i] = y[i] + (h / 6.0) * (k[0, i] + 2.0 * k[1, i] + 2.0 * k[2, i] + k[3, i])
    return out


@njit(cache=True)
def _var_field(z, E):
    # z = [y (7), X (36 row-major)]; X' = J D2Gamma X
    out = np.empty(43)
    f = np.empty(7)
    _field(z[:7], E, f)
    out[:7] = f
    H = _hess(z[:6], E)
    X = z[7:].reshape((6, 6))
    HX = H @ X
    JHX = np.empty((6, 6))
    JHX[:3] = HX[3:]
    JHX[3:] = -HX[:3]
    out[7:] = JHX.ravel()
    return out


@njit(cache=True)
def _rk4_var(z, h, E):
    k1 = _var_field(z, E)
    k2 = _var_field(z + 0.5 * h * k1, E)
    k3 = _var_field(z + 0.5 * h * k2, E)
    k4 = _var_field(z + h * k3, E)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _event_value(code, y):
    if code <= 2:
        return y[code]
    if code == 3:
        return y[0] - y[1]
    return y[5]


@njit(cache=True)
def _crossed(gl, gr, direction):
    if direction >= 0 and gl < 0.0 and gr >= 0.0:
        return True
    if direction <= 0 and gl > 0.0 and gr <= 0.0:
        return True
    return False


@njit(cache=True)
def _cutoff_update(y, beats, twin23):
    """Record pairs with 0 < q_i < 0.4 q_j and p_i < p_j; once i beats both
    others its collision comes first.  Returns that axis or -1.

    With ``twin23`` axes 2 and 3 move as one (beta = 0) and only the
    ordering of axes 1 and 2 is decided.
    """
    for a in range(3):
        if y[a] == 0.0:
            return -1
    n_ax = 2 if twin23 else 3
    for i in range(n_ax):
        qi = y[i] * y[i]
        pi = y[3 + i] / (2.0 * y[i])
        for j in range(n_ax):
            if i != j and not beats[i, j]:
                qj = y[j] * y[j]
                pj = y[3 + j] / (2.0 * y[j])
                if qi < 0.4 * qj and pi < pj:
                    beats[i, j] = True
    for i in range(n_ax):
        n = 0
        for j in range(n_ax):
            if i != j and beats[i, j]:
                n += 1
        if n == n_ax - 1:
            return i
    return -1


@njit(cache=True)
def _min_pair(y):
    """Smallest Q_i^2 + Q_j^2 and the pair index (0: 12, 1: 13, 2: 23)."""
    m = np.inf
    k = -1
    idx = 0
    for a in range(3):
        for b in range(a + 1, 3):
            v = y[a] * y[a] + y[b] * y[b]
            if v < m:
                m = v
                k = idx
            idx += 1
    return m, k


@njit(cache=True)
def _propagate(y0, h, max_s, E, codes, dirs, event_tol, quad_floor, buf, stride, twin23):
    """Returns (status, which, s_end, y_end, n_rec, axis).

    status: 0 root event, 1 max_s reached, 2 quadruple guard, 3 cutoff.
    For the guard, ``axis`` holds the pair index from ``_min_pair``.
    ``buf`` rows are [s, y(7)]; recording stops silently when it is full.
    """
    n_ev = codes.shape[0]
    use_cutoff = False
    for k in range(n_ev):
        if codes[k] == 5:
            use_cutoff = True
    beats = np.zeros((3, 3), dtype=np.bool_)
    y = y0.copy()
    s = 0.0
    gl = np.empty(n_ev)
    for k in range(n_ev):
        if codes[k] != 5:
            gl[k] = _event_value(codes[k], y)
    n_rec = 0
    cap = buf.shape[0]
    if cap > 0:
        buf[0, 0] = s
        buf[0, 1:] = y
        n_rec = 1
    step = 0
    while s < max_s:
        yr = _rk4(y, h, E)
        best_k = -1
        best_th = 2.0 * h
        best_y = yr
        for k in range(n_ev):
            c = codes[k]
            if c == 5:
                continue
            gr = _event_value(c, yr)
            if _crossed(gl[k], gr, dirs[k]):
                lo = 0.0
                hi = h
                yh = yr
                while hi - lo > event_tol:
                    mid = 0.5 * (lo + hi)
                    ym = _rk4(y, mid, E)
                    gm = _event_value(c, ym)
                    if _crossed(gl[k], gm, dirs[k]):
                        hi = mid
                        yh = ym
                    else:
                        lo = mid
                if hi < best_th:
                    best_th = hi
                    best_k = k
                    best_y = yh
            gl[k] = gr
        if best_k >= 0:
            s_ev = s + best_th
            if n_rec < cap:
                buf[n_rec, 0] = s_ev
                buf[n_rec, 1:] = best_y
                n_rec += 1
            return 0, best_k, s_ev, best_y, n_rec, -1
        y = yr
        step += 1
        s = step * h
        if n_rec < cap and step % stride == 0:
            buf[n_rec, 0] = s
            buf[n_rec, 1:] = y
            n_rec += 1
        m, pair = _min_pair(y)
        if m < quad_floor:
            return 2, -1, s, y, n_rec, pair
        if use_cutoff:
            axis = _cutoff_update(y, beats, twin23)
            if axis >= 0:
                return 3, -1, s, y, n_rec, axis
    return 1, -1, s, y, n_rec, -1


@njit(cache=True)
def _flow(y0, h, span, E, buf, stride):
    """Integrate exactly to ``span`` (full steps then one partial step)."""
    n = int(np.floor(span / h))
    rem = span - n * h
    if rem < 1e-15 * h:
        rem = 0.0
    y = y0.copy()
    n_rec = 0
    cap = buf.shape[0]
    if cap > 0:
        buf[0, 0] = 0.0
        buf[0, 1:] = y
        n_rec = 1
    for i in range(n):
        y = _rk4(y, h, E)
        if n_rec < cap and (i + 1) % stride == 0:
            buf[n_rec, 0] = (i + 1) * h
            buf[n_rec, 1:] = y
            n_rec += 1
    if rem > 0.0:
        y = _rk4(y, rem, E)
        if n_rec < cap:
            buf[n_rec, 0] = span
            buf[n_rec, 1:] = y
            n_rec += 1
    return y, n_rec


@njit(cache=True)
def _flow_var(z0, h, span, E):
    n = int(np.floor(span / h))
    rem = span - n * h
    if rem < 1e-15 * h:
        rem = 0.0
    z = z0.copy()
    for i in range(n):
        z = _rk4_var(z, h, E)
    if rem > 0.0:
        z = _rk4_var(z, rem, E)
    return z


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def _energy(ctx):
    return -1.0 if ctx is None else float(ctx.E)


def _augment(y0, t0=0.0):
    y0 = np.asarray(y0, dtype=float)
    if y0.shape == (7,):
        return y0.copy()
    if y0.shape != (6,):
        raise ValueError(f"expected a 6- or 7-vector, got shape {y0.shape}")
    return np.append(y0, t0)


def rk4_generic(f, y, h):
    """Classical RK4 step for an arbitrary field ``f(y)``; same tableau as the
    compiled kernels, kept for substitute-problem checks."""
    y = np.asarray(y, dtype=float)
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(y, h, ctx=None):
    """One classical RK4 step of the regularized flow.

    Accepts a 6-vector, or a 7-vector whose last entry is the physical time;
    returns the same length.
    """
    if not h > 0:
        raise ValueError("step must be positive")
    y = np.asarray(y, dtype=float)
    if not _check_pairs(y[:3]):
        raise DegenerateStateError(f"two regularized positions vanish at Q = {y[:3]}")
    out = _rk4(_augment(y), float(h), _energy(ctx))
    return out if y.shape == (7,) else out[:6]


def _buffer(cfg, span, record):
    if not record:
        return np.empty((0, 8))
    n = int(np.ceil(span / cfg.step / cfg.record_stride)) + 3
    return np.empty((n, 8))


def _trajectory(buf, n_rec):
    rows = buf[:n_rec]
    return Trajectory(s=rows[:, 0].copy(), t=rows[:, 7].copy(), states=rows[:, 1:7].copy())


def propagate(y0, cfg, events, ctx=None, record=True, twin23=False):
    """Integrate until the first requested event fires.

    ``events`` is a sequence of :class:`EventSpec`.  Zero-crossing events
    are localized to ``cfg.event_tol`` in s; the cutoff predicate fires on
    the step where some axis is certain to collide before both others.
    ``twin23`` declares Q2 = Q3 identically, merging those axes for the cutoff.

    Raises
    ------
    MaxSpanExceeded
        no event before ``cfg.max_s``.
    QuadrupleApproach
        min over pairs of Q_i^2 + Q_j^2 fell below ``cfg.quad_floor``.
    """
    y7 = _augment(y0)
    if not _check_pairs(y7[:3]):
        raise DegenerateStateError(f"two regularized positions vanish at Q = {y7[:3]}")
    events = list(events)
    codes = np.array([int(e.kind) for e in events], dtype=np.int64)
    dirs = np.array([int(e.direction) for e in events], dtype=np.int64)
    buf = _buffer(cfg, cfg.max_s, record)
    status, which, s_end, y_end, n_rec, axis = _propagate(
        y7, cfg.step, cfg.max_s, _energy(ctx), codes, dirs,
        cfg.event_tol, cfg.quad_floor, buf, cfg.record_stride, twin23)
    traj = _trajectory(buf, n_rec) if record else Trajectory(
        s=np.array([s_end]), t=np.array([y_end[6]]), states=y_end[None, :6].copy())
    if status == 0:
        traj.events.append(Event(s_end, events[which].kind, y_end[:6].copy(), t=y_end[6]))
        return traj
    if status == 3:
        traj.events.append(Event(s_end, EventKind.CUTOFF, y_end[:6].copy(), t=y_end[6], axis=axis))
        return traj
    if status == 2:
        raise QuadrupleApproach(f"quadruple-collision guard tripped at s = {s_end:.6g}",
                                traj, _PAIR_NAMES[axis])
    raise MaxSpanExceeded(f"no event before s = {cfg.max_s}", traj)


def flow(y0, span, cfg, ctx=None, record=False):
    """Integrate for exactly ``span`` regularized time.

    Returns the final 7-vector (state and physical time), or a
    :class:`Trajectory` when ``record`` is set.
    """
    if span < 0:
        raise ValueError("span must be nonnegative")
    y7 = _augment(y0)
    buf = _buffer(cfg, span, record)
    y_end, n_rec = _flow(y7, cfg.step, float(span), _energy(ctx), buf, cfg.record_stride)
    if record:
        return _trajectory(buf, n_rec)
    return y_end


def propagate_variational(y0, Y0, span, cfg, ctx=None):
    """Co-integrate the orbit and ``Y' = J D2Gamma(gamma(s)) Y`` from ``Y(0) = Y0``.

    Returns ``(Y(span), y(span))``; both see identical step boundaries.
    """
    if not span > 0:
        raise ValueError("span must be positive")
    Y0 = np.asarray(Y0, dtype=float)
    if Y0.shape != (6, 6):
        raise ValueError("Y0 must be 6x6")
    z0 = np.concatenate([_augment(y0), Y0.ravel()])
    z = _flow_var(z0, cfg.step, float(span), _energy(ctx))
    return z[7:].reshape(6, 6).copy(), z[:7].copy()


def gamma_residuals(states, ctx=None):
    E = _energy(ctx)
    return np.array([_gamma(np.ascontiguousarray(y[:6]), E) for y in states])


def export_csv(path, traj, ctx=None, header_comment=None):
    """Write ``s, t, Q1..P3, gamma_residual`` rows."""
    res = gamma_residuals(traj.states, ctx)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "t", "Q1", "Q2", "Q3", "P1", "P2", "P3", "gamma_residual"])
        for s, t, y, g in zip(traj.s, traj.t, traj.states, res):
            w.writerow([repr(float(v)) for v in (s, t, *y, g)])
