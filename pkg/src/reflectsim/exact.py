"""Event-driven solver for confined particle dynamics with elastic reflection.

Interior flight is integrated with an adaptive embedded Runge-Kutta 5(4) pair
(scipy's RK45) with dense output.  Boundary crossings are located on the
dense output by a subdivision scan plus bisection with secant polish; at each
transversal impact the velocity is reflected (tangential part kept, normal
part negated).  Tangential contacts (grazes) mark the certified-uniqueness
horizon and are handled according to a user policy, since the dynamics beyond
such a contact are genuinely non-unique.  A particle resting on the boundary
under an outward-pushing force moves in sliding mode, where the constraint
force density rho = F.nu + v^T H v keeps it on the boundary as long as
rho >= 0.

Velocities are stored with explicit left/right limits at events; sampled
states carry the right-continuous representative.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (BracketError, GeometryError, HorizonError, ModeError,
                     ReflectSimError, StiffnessError)
from .forces import ForceField
from .geometry import DomainGeometry
from .serialize import write_csv, write_json

FREE = "free"
SLIDING = "sliding"

_MODE_CODE = {FREE: 0, SLIDING: 1}
_MODE_NAME = {v: k for k, v in _MODE_CODE.items()}


@dataclass
class SolverOptions:
    """Tolerances and policies for both solvers.

    graze_tol defaults at runtime to 1e-8 times the characteristic speed
    max(1, |V0|).  graze_policy chooses what happens at a tangential contact:
    'stop' ends the run there (the default refuses to guess a branch),
    'stick' enters sliding mode when the constraint force allows it, and
    'reflect' applies the reflection rule and continues.
    """

    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float | None = None
    sample_dt: float = 1e-3
    pos_tol: float = 1e-9
    refl_tol: float = 1e-9
    graze_tol: float | None = None
    graze_pos_band: float = 1e-8
    graze_policy: str = "stop"
    time_tol: float = 1e-9
    max_events_per_window: int = 100
    scan_subsamples: int = 8
    slide_chunk: float = 1e-2
    initial_modes: tuple[str, ...] | None = None

    def resolved_graze_tol(self, v_char: float) -> float:
        if self.graze_tol is not None:
            return self.graze_tol
        return 1e-8 * max(1.0, v_char)


@dataclass
class SystemState:
    """Positions and velocities of all particles at one time."""

    t: float
    X: np.ndarray  # (n, m)
    V: np.ndarray  # (n, m)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if self.X.shape != self.V.shape:
            raise ValueError("positions and velocities must have the same shape")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]


@dataclass
class Event:
    t_event: float
    particle: int
    kind: str  # bounce | graze | slide_start | slide_end | zeno_abort
    v_minus: np.ndarray
    v_plus: np.ndarray
    normal: np.ndarray
    atom_mass: float = 0.0

    def to_dict(self) -> dict:
        return {
            "t_event": self.t_event,
            "particle": self.particle,
            "kind": self.kind,
            "v_minus": np.asarray(self.v_minus).tolist(),
            "v_plus": np.asarray(self.v_plus).tolist(),
            "normal": np.asarray(self.normal).tolist(),
            "atom_mass": self.atom_mass,
        }


@dataclass
class Segment:
    """One smooth dense-output piece of a trajectory."""

    t0: float
    t1: float
    sol: object  # OdeSolution over [t0, >= t1]
    modes: tuple[str, ...]

    def eval(self, ts: np.ndarray) -> np.ndarray:
        return np.asarray(self.sol(ts))


def _pack(X: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.concatenate([X.ravel(), V.ravel()])


def _unpack(y: np.ndarray, n: int, m: int):
    return y[: n * m].reshape(n, m), y[n * m:].reshape(n, m)


class Trajectory:
    """Dense-output trajectory with an event log.

    Between consecutive events the path is smooth; velocities at events carry
    explicit left/right limits in the event records, and sampled states use
    the right-continuous representative.
    """

    def __init__(self, n: int, m: int, horizon: tuple[float, float],
                 segments: list[Segment], events: list[Event],
                 sample_dt: float, status: str = "completed",
                 source: str = "exact", domain=None, force=None):
        self.n = n
        self.m = m
        self.horizon = horizon
        self.segments = segments
        self.events = events
        self.status = status
        self.sample_dt = sample_dt
        self.source = source
        self.domain = domain
        self.force = force
        self._bounds = np.array([s.t1 for s in segments])
        self.samples_t, self.samples_X, self.samples_V, self.samples_mode = \
            self._build_samples(sample_dt)

    # ---- evaluation ---------------------------------------------------------
    @property
    def t_start(self) -> float:
        return self.segments[0].t0

    @property
    def t_end(self) -> float:
        return self.segments[-1].t1

    def _segment_index(self, t: float, side: str) -> int:
        s = "right" if side == "right" else "left"
        idx = int(np.searchsorted(self._bounds, t, side=s))
        return min(max(idx, 0), len(self.segments) - 1)

    def state_at(self, t: float, side: str = "right") -> SystemState:
        if not (self.t_start - 1e-12 <= t <= self.t_end + 1e-12):
            raise HorizonError(f"t={t} outside trajectory horizon "
                               f"[{self.t_start}, {self.t_end}]")
        seg = self.segments[self._segment_index(t, side)]
        y = seg.eval(np.clip(t, seg.t0, seg.t1))
        X, V = _unpack(y, self.n, self.m)
        return SystemState(t, X, V)

    def eval_batch(self, ts: np.ndarray, side: str = "right"):
        """Evaluate positions/velocities on a time grid: (K,n,m) arrays."""
        ts = np.asarray(ts, dtype=float)
        K = len(ts)
        X = np.empty((K, self.n, self.m))
        V = np.empty((K, self.n, self.m))
        s = "right" if side == "right" else "left"
        idx = np.clip(np.searchsorted(self._bounds, ts, side=s),
                      0, len(self.segments) - 1)
        for j in np.unique(idx):
            seg = self.segments[j]
            sel = idx == j
            Y = seg.eval(np.clip(ts[sel], seg.t0, seg.t1))
            nm = self.n * self.m
            X[sel] = Y[:nm].T.reshape(-1, self.n, self.m)
            V[sel] = Y[nm:].T.reshape(-1, self.n, self.m)
        return X, V

    @property
    def mode_spans(self) -> list[tuple[float, float, tuple[str, ...]]]:
        spans: list[tuple[float, float, tuple[str, ...]]] = []
        for seg in self.segments:
            if spans and spans[-1][2] == seg.modes:
                spans[-1] = (spans[-1][0], seg.t1, seg.modes)
            else:
                spans.append((seg.t0, seg.t1, seg.modes))
        return spans

    def sliding_intervals(self, particle: int) -> list[tuple[float, float]]:
        out = []
        for t0, t1, modes in self.mode_spans:
            if modes[particle] == SLIDING:
                if out and abs(out[-1][1] - t0) < 1e-15:
                    out[-1] = (out[-1][0], t1)
                else:
                    out.append((t0, t1))
        return out

    # ---- sampling / export ---------------------------------------------------
    def _build_samples(self, sample_dt: float):
        t0, t1 = self.t_start, self.t_end
        K = max(2, int(round((t1 - t0) / sample_dt)) + 1)
        grid = np.linspace(t0, t1, K)
        ev_times = np.array([e.t_event for e in self.events
                             if t0 < e.t_event < t1])
        grid = np.unique(np.concatenate([grid, ev_times]))
        X, V = self.eval_batch(grid, side="right")
        # final time uses the left limit (nothing exists to the right)
        Xe, Ve = self.eval_batch(grid[-1:], side="left")
        X[-1], V[-1] = Xe[0], Ve[0]
        modes = np.zeros((len(grid), self.n), dtype=np.int8)
        for s0, s1, md in self.mode_spans:
            sel = (grid >= s0) & (grid < s1)
            for i, name in enumerate(md):
                modes[sel, i] = _MODE_CODE[name]
        for i, name in enumerate(self.segments[-1].modes):
            modes[-1, i] = _MODE_CODE[name]
        return grid, X, V, modes

    def to_csv(self, path) -> None:
        header = (["t", "particle"]
                  + [f"x{j}" for j in range(self.m)]
                  + [f"v{j}" for j in range(self.m)]
                  + ["mode"])

        def rows():
            for k, t in enumerate(self.samples_t):
                for i in range(self.n):
                    yield ([float(t), i]
                           + [float(v) for v in self.samples_X[k, i]]
                           + [float(v) for v in self.samples_V[k, i]]
                           + [_MODE_NAME[int(self.samples_mode[k, i])]])

        write_csv(path, header, rows())

    def events_to_json(self, path) -> None:
        write_json(path, {"status": self.status,
                          "horizon": list(self.horizon),
                          "events": [e.to_dict() for e in self.events]})


# ---------------------------------------------------------------------------
# reflection rule
# ---------------------------------------------------------------------------

def reflect(v, normal) -> np.ndarray:
    """Elastic reflection: tangential part kept, normal part negated."""
    v = np.asarray(v, dtype=float)
    nu = np.asarray(normal, dtype=float)
    norm = np.linalg.norm(nu)
    if abs(norm - 1.0) > 1e-6:
        raise GeometryError(f"reflection normal has length {norm}, not a unit vector")
    if norm != 1.0:
        nu = nu / norm
    return v - 2.0 * float(v @ nu) * nu


# ---------------------------------------------------------------------------
# crossing location
# ---------------------------------------------------------------------------

@dataclass
class DenseSegment:
    """A C^1 piece of one particle's path: batch-aware position/velocity of t."""

    t0: float
    t1: float
    position: object  # callable (K,) -> (K, m)
    velocity: object  # callable (K,) -> (K, m)

    @classmethod
    def from_ode(cls, sol, t0: float, t1: float, particle: int, n: int, m: int):
        lo, hi = particle * m, (particle + 1) * m
        nm = n * m

        def pos(ts):
            return np.asarray(sol(np.asarray(ts)))[lo:hi].T

        def vel(ts):
            return np.asarray(sol(np.asarray(ts)))[nm + lo:nm + hi].T

        return cls(t0, t1, pos, vel)


def _polish_root(f, a: float, b: float, fa: float, fb: float,
                 xtol: float = 1e-14, max_iter: int = 120) -> float:
    """Root of f in [a, b] with f(a) < 0 <= f(b): bisection + secant polish."""
    for _ in range(max_iter):
        if b - a <= xtol * max(1.0, abs(a)):
            break
        # secant proposal, guarded to stay inside the bracket
        t = a - fa * (b - a) / (fb - fa) if fb != fa else 0.5 * (a + b)
        if not (a < t < b):
            t = 0.5 * (a + b)
        ft = f(t)
        if ft == 0.0:
            return t
        if ft < 0:
            a, fa = t, ft
        else:
            b, fb = t, ft
        # force occasional bisection so the bracket cannot stagnate
        t_mid = 0.5 * (a + b)
        if b - a > xtol * max(1.0, abs(a)):
            fm = f(t_mid)
            if fm == 0.0:
                return t_mid
            if fm < 0:
                a, fa = t_mid, fm
            else:
                b, fb = t_mid, fm
    return b


def _first_upcross(f_batch, a: float, b: float, n_sub: int = 8,
                   depth: int = 3) -> tuple[float, float] | None:
    """Earliest sub-bracket of [a, b] where f crosses from < 0 to >= 0."""
    ts = np.linspace(a, b, n_sub + 1)
    fs = f_batch(ts)
    for j in range(n_sub):
        if fs[j] < 0.0 <= fs[j + 1]:
            if depth <= 0 or (ts[j + 1] - ts[j]) < 1e-13 * max(1.0, abs(b)):
                return ts[j], ts[j + 1]
            finer = _first_upcross(f_batch, ts[j], ts[j + 1], n_sub, depth - 1)
            return finer if finer is not None else (ts[j], ts[j + 1])
    return None


def locate_crossing(segment: DenseSegment, dom: DomainGeometry,
                    pos_tol: float = 1e-9, n_scan: int = 128) -> float:
    """First time in the segment at which the particle meets the boundary.

    The segment must start inside the domain.  Transversal crossings are
    bracketed by a subdivision scan of the signed distance and polished by
    bisection with secant acceleration; if the distance never changes sign,
    tangential touches are found as zeros of d/dt d_s whose distance lies
    within pos_tol of the boundary.
    """
    ts = np.linspace(segment.t0, segment.t1, n_scan + 1)

    def d_batch(tq):
        return dom.scan_distance(segment.position(np.atleast_1d(tq)))

    d = d_batch(ts)
    if d[0] >= 0.0:
        raise BracketError("segment does not start inside the domain")

    up = np.nonzero((d[:-1] < 0.0) & (d[1:] >= 0.0))[0]
    if len(up):
        j = int(up[0])
        bracket = _first_upcross(d_batch, ts[j], ts[j + 1])
        a, b = bracket if bracket else (ts[j], ts[j + 1])
        fa, fb = float(d_batch(np.array([a]))[0]), float(d_batch(np.array([b]))[0])
        return _polish_root(lambda t: float(d_batch(np.array([t]))[0]), a, b, fa, fb)

    # tangential touch: apex of d_s reaching the boundary without sign change
    def rdot_batch(tq):
        tq = np.atleast_1d(tq)
        P = segment.position(tq)
        V = segment.velocity(tq)
        inb = dom.bounding_box.contains(P)
        out = np.ones(len(tq))
        if np.any(inb):
            g = dom._grad(P[inb])
            out[inb] = np.einsum("ij,ij->i", V[inb], g)
        return out

    r = rdot_batch(ts)
    down = np.nonzero((r[:-1] > 0.0) & (r[1:] <= 0.0))[0]
    for j in down:
        t_apex = _polish_root(lambda t: -float(rdot_batch(t)[0]),
                              ts[j], ts[j + 1], -r[j], -r[j + 1])
        if float(d_batch(np.array([t_apex]))[0]) >= -pos_tol:
            return t_apex
    raise BracketError("no boundary crossing bracketed in segment")


# ---------------------------------------------------------------------------
# sliding mode
# ---------------------------------------------------------------------------

def sliding_density(dom: DomainGeometry, ff: ForceField, state: SystemState,
                    particle: int, pos_tol: float = 1e-9,
                    graze_tol: float = 1e-8) -> float:
    """Constraint-force density rho = F.nu + v^T H v for a particle on the boundary.

    While rho >= 0 the particle stays in sliding mode with acceleration
    F - rho nu; when rho turns negative the particle detaches.
    """
    x = state.X[particle]
    v = state.V[particle]
    if abs(dom.signed_distance(x)) > pos_tol:
        raise ModeError("sliding density requested off the boundary")
    nu = dom.gradient(x)
    if abs(float(v @ nu)) > max(graze_tol, 1e-8 * (1 + np.linalg.norm(v))):
        raise ModeError("sliding density requested with normal velocity")
    F = ff(state.t, state.X)[particle]
    H = dom.hessian(x)
    return float(F @ nu + v @ H @ v)


def _rho_raw(dom, ff, t, X, V, i) -> float:
    nu = dom.gradient(X[i])
    H = dom.hessian(X[i])
    F = ff(t, X)[i]
    return float(F @ nu + V[i] @ H @ V[i])


# ---------------------------------------------------------------------------
# the event-driven loop
# ---------------------------------------------------------------------------

@dataclass
class _Candidate:
    t: float
    particle: int
    kind: str  # crossing | graze | slide_end

    def sort_key(self):
        return (self.t, self.particle)


class _Simulation:
    def __init__(self, dom: DomainGeometry, ff: ForceField,
                 initial: SystemState, T: float, opts: SolverOptions):
        if T <= 0:
            raise ValueError("horizon T must be positive")
        self.dom = dom
        self.ff = ff
        self.T = float(T)
        self.opts = opts
        self.n, self.m = initial.n, initial.m
        self.X = initial.X.copy()
        self.V = initial.V.copy()
        self.t = float(initial.t)
        self.modes = list(opts.initial_modes or (FREE,) * self.n)
        if len(self.modes) != self.n:
            raise ValueError("initial_modes length does not match particle count")
        self.v_char = max(1.0, float(np.max(np.linalg.norm(self.V, axis=1)))
                          if self.n else 1.0)
        self.graze_tol = opts.resolved_graze_tol(self.v_char)
        self.events: list[Event] = []
        self.segments: list[Segment] = []
        self.contact_times: deque = deque(maxlen=opts.max_events_per_window)
        self.status = "completed"
        # per-particle time before which apex (graze) candidates are ignored;
        # a graze that continues leaves the state at the apex, so the monitor
        # would refire there immediately
        self._graze_block = np.full(self.n, -np.inf)

    # ---- helpers -------------------------------------------------------------
    def _rhs(self, t, y):
        X, V = _unpack(y, self.n, self.m)
        A = self.ff(t, X)
        for i, md in enumerate(self.modes):
            if md == SLIDING:
                nu = self.dom.gradient(X[i])
                H = self.dom.hessian(X[i])
                rho = float(A[i] @ nu + V[i] @ H @ V[i])
                A[i] = A[i] - rho * nu
        return _pack(V, A)

    def _max_step(self) -> float:
        speed = max(float(np.max(np.linalg.norm(self.V, axis=1))), self.v_char)
        cap = self.dom.tube_radius / (2.0 * max(speed, 1e-9))
        if self.opts.max_step is not None:
            cap = min(cap, self.opts.max_step)
        return cap

    def _scan_grid(self, sol) -> np.ndarray:
        s = self.opts.scan_subsamples
        steps = sol.t
        if len(steps) < 2:
            return steps
        fracs = (np.arange(1, s + 1) / s)
        grid = (steps[:-1, None] + np.diff(steps)[:, None] * fracs[None, :]).ravel()
        return np.concatenate([[steps[0]], grid])

    # ---- event scanning -------------------------------------------------------
    def _scan(self, sol, t_lo: float, t_hi: float) -> list[_Candidate]:
        """All per-particle event candidates in the segment, time-ordered."""
        ts = self._scan_grid(sol)
        ts = ts[(ts >= t_lo) & (ts <= t_hi)]
        if len(ts) < 2:
            return []
        Y = np.asarray(sol.sol(ts))
        nm = self.n * self.m
        cands: list[_Candidate] = []
        arm_tol = max(self.opts.pos_tol, 1e-13 * max(1.0, self.dom.tube_radius))
        for i in range(self.n):
            Xi = Y[i * self.m:(i + 1) * self.m].T
            Vi = Y[nm + i * self.m: nm + (i + 1) * self.m].T
            if self.modes[i] == FREE:
                c = self._scan_free(i, ts, Xi, Vi, arm_tol, sol)
            else:
                c = self._scan_sliding(i, ts, sol)
            if c is not None:
                cands.append(c)
        return sorted(cands, key=_Candidate.sort_key)

    def _scan_free(self, i, ts, Xi, Vi, arm_tol, sol) -> _Candidate | None:
        d = self.dom.scan_distance(Xi)
        below = d < -arm_tol
        seen = np.logical_or.accumulate(below)
        cross = (d[1:] >= 0.0) & seen[:-1]
        k_cross = int(np.nonzero(cross)[0][0]) + 1 if np.any(cross) else None

        seg = DenseSegment.from_ode(sol.sol, ts[0], ts[-1], i, self.n, self.m)

        def d_of_t(tq):
            return self.dom.scan_distance(seg.position(np.atleast_1d(tq)))

        # escape guard: starting at the boundary while moving outward means a
        # contact exactly at the segment start (e.g. an impact simultaneous
        # with another particle's event); the arming logic cannot see it
        if d[0] >= -arm_tol:
            g0 = self.dom._grad(Xi[:1])[0]
            if float(Vi[0] @ g0) > self.graze_tol:
                return _Candidate(ts[0], i, "crossing")

        t_cross = None
        if k_cross is not None:
            bracket = _first_upcross(d_of_t, ts[k_cross - 1], ts[k_cross])
            a, b = bracket if bracket else (ts[k_cross - 1], ts[k_cross])
            fa = float(d_of_t(a)[0])
            fb = float(d_of_t(b)[0])
            if fa >= 0.0:
                t_cross = a
            else:
                t_cross = _polish_root(lambda t: float(d_of_t(t)[0]), a, b, fa, fb)

        # tangential-apex monitor before any crossing
        limit = k_cross if k_cross is not None else len(ts)
        inb = self.dom.bounding_box.contains(Xi[:limit])
        rdot = np.ones(limit)
        if np.any(inb):
            g = self.dom._grad(Xi[:limit][inb])
            rdot[inb] = np.einsum("ij,ij->i", Vi[:limit][inb], g)

        def rdot_of_t(tq):
            tq = np.atleast_1d(tq)
            P = seg.position(tq)
            Vq = seg.velocity(tq)
            out = np.ones(len(tq))
            inb = self.dom.bounding_box.contains(P)
            if np.any(inb):
                g = self.dom._grad(P[inb])
                out[inb] = np.einsum("ij,ij->i", Vq[inb], g)
            return out

        down = np.nonzero((rdot[:-1] > 0.0) & (rdot[1:] <= 0.0))[0]
        for j in down:
            t_apex = _polish_root(lambda t: -float(rdot_of_t(t)[0]),
                                  ts[j], ts[j + 1], -rdot[j], -rdot[j + 1])
            if t_apex <= self._graze_block[i]:
                continue
            d_apex = float(d_of_t(t_apex)[0])
            if d_apex >= -self.opts.graze_pos_band:
                if t_cross is None or t_apex < t_cross:
                    return _Candidate(t_apex, i, "graze")
                break
        if t_cross is not None:
            return _Candidate(t_cross, i, "crossing")
        return None

    def _scan_sliding(self, i, ts, sol) -> _Candidate | None:
        def rho_of_t(tq):
            y = np.asarray(sol.sol(tq))
            X, V = _unpack(y, self.n, self.m)
            return _rho_raw(self.dom, self.ff, float(tq), X, V, i)

        rho = np.array([rho_of_t(t) for t in ts])
        down = np.nonzero((rho[:-1] >= 0.0) & (rho[1:] < 0.0))[0]
        if not len(down):
            return None
        j = int(down[0])
        t_det = _polish_root(lambda t: -rho_of_t(t), ts[j], ts[j + 1],
                             -rho[j], -rho[j + 1])
        return _Candidate(t_det, i, "slide_end")

    # ---- event handling --------------------------------------------------------
    def _zeno_check(self, t_ev: float) -> bool:
        self.contact_times.append(t_ev)
        w = self.contact_times
        if (len(w) == self.opts.max_events_per_window
                and w[-1] - w[0] <= self.opts.time_tol):
            return True
        return False

    def _project_to_contact(self, i: int) -> np.ndarray:
        self.X[i] = self.dom.project_to_boundary(self.X[i])
        return self.dom.gradient(self.X[i])

    def _handle_graze(self, t_ev: float, i: int) -> bool:
        """Returns True if the run should stop."""
        nu = self._project_to_contact(i)
        v_minus = self.V[i].copy()
        policy = self.opts.graze_policy
        if policy == "stop":
            self.events.append(Event(t_ev, i, "graze", v_minus, v_minus.copy(), nu))
            self.status = "stopped_at_graze"
            return True
        if policy == "reflect":
            v_plus = reflect(v_minus, nu)
            self.events.append(Event(t_ev, i, "graze", v_minus, v_plus, nu,
                                     atom_mass=2.0 * max(float(v_minus @ nu), 0.0)))
            self.V[i] = v_plus
            self._graze_block[i] = t_ev + max(self.opts.time_tol, 1e-12)
            return self._zeno_check(t_ev) and self._abort_zeno(t_ev, i)
        if policy == "stick":
            v_tan = v_minus - float(v_minus @ nu) * nu
            self.events.append(Event(t_ev, i, "graze", v_minus, v_tan, nu))
            self.V[i] = v_tan
            rho = _rho_raw(self.dom, self.ff, t_ev, self.X, self.V, i)
            if rho >= 0.0:
                self.modes[i] = SLIDING
                self.events.append(Event(t_ev, i, "slide_start",
                                         v_tan.copy(), v_tan.copy(), nu))
            else:
                self._graze_block[i] = t_ev + max(self.opts.time_tol, 1e-12)
            return self._zeno_check(t_ev) and self._abort_zeno(t_ev, i)
        raise ValueError(f"unknown graze policy {policy!r}")

    def _abort_zeno(self, t_ev: float, i: int) -> bool:
        self.events.append(Event(t_ev, i, "zeno_abort",
                                 self.V[i].copy(), self.V[i].copy(),
                                 self.dom.gradient(self.X[i])))
        self.status = "zeno_abort"
        return True

    def _handle_crossing(self, t_ev: float, i: int) -> bool:
        nu = self._project_to_contact(i)
        v_minus = self.V[i].copy()
        vn = float(v_minus @ nu)
        if vn > self.graze_tol:
            v_plus = reflect(v_minus, nu)
            self.events.append(Event(t_ev, i, "bounce", v_minus, v_plus, nu,
                                     atom_mass=2.0 * vn))
            self.V[i] = v_plus
            if self._zeno_check(t_ev):
                return self._abort_zeno(t_ev, i)
            return False
        if vn >= -self.graze_tol:
            return self._handle_graze(t_ev, i)
        # inward-moving contact: no impulse is needed
        return False

    # ---- main loop ----------------------------------------------------------------
    def run(self) -> Trajectory:
        self._validate_initial()
        opts = self.opts
        while self.t < self.T * (1 - 1e-15) and self.status == "completed":
            any_sliding = SLIDING in self.modes
            chunk_end = min(self.T, self.t + opts.slide_chunk) if any_sliding else self.T
            y0 = _pack(self.X, self.V)
            sol = solve_ivp(self._rhs, (self.t, chunk_end), y0, method="RK45",
                            dense_output=True, rtol=opts.rtol, atol=opts.atol,
                            max_step=self._max_step())
            if sol.status == -1:
                raise StiffnessError(f"integrator failed at t={sol.t[-1]}: "
                                     f"{sol.message}")
            cands = self._scan(sol, self.t, chunk_end)
            if not cands:
                self.segments.append(Segment(self.t, chunk_end, sol.sol,
                                             tuple(self.modes)))
                self.t = chunk_end
                y = sol.sol(chunk_end)
                self.X, self.V = (a.copy() for a in _unpack(y, self.n, self.m))
                self._stabilize_sliders()
                continue
            t_ev = min(cands[0].t, chunk_end)
            self.segments.append(Segment(self.t, t_ev, sol.sol, tuple(self.modes)))
            y = sol.sol(t_ev)
            self.X, self.V = (a.copy() for a in _unpack(y, self.n, self.m))
            self.t = t_ev
            # events within roundoff of the earliest are simultaneous and are
            # processed in ascending particle index (particles couple only
            # through the force, so the order is inconsequential but fixed)
            window = 1e-14 * max(1.0, abs(t_ev))
            stop = False
            for cand in cands:
                if cand.t - cands[0].t > window:
                    break
                i = cand.particle
                if cand.kind == "crossing":
                    stop = self._handle_crossing(t_ev, i)
                elif cand.kind == "graze":
                    stop = self._handle_graze(t_ev, i)
                else:  # slide_end
                    nu = self._project_to_contact(i)
                    self.V[i] = self.V[i] - float(self.V[i] @ nu) * nu
                    self.modes[i] = FREE
                    self.events.append(Event(t_ev, i, "slide_end",
                                             self.V[i].copy(), self.V[i].copy(),
                                             nu))
                if stop:
                    break
            if stop:
                break
            self._stabilize_sliders()
        return Trajectory(self.n, self.m, (0.0, self.T), self.segments,
                          self.events, opts.sample_dt, status=self.status,
                          source="exact", domain=self.dom, force=self.ff)

    def _stabilize_sliders(self) -> None:
        for i, md in enumerate(self.modes):
            if md == SLIDING:
                nu = self._project_to_contact(i)
                self.V[i] = self.V[i] - float(self.V[i] @ nu) * nu

    def _validate_initial(self) -> None:
        for i in range(self.n):
            d = self.dom.signed_distance(self.X[i])
            if d > self.opts.pos_tol:
                raise ReflectSimError(
                    f"particle {i} starts outside the domain (d_s={d:.3e})")
            if d < -self.opts.pos_tol and self.modes[i] == SLIDING:
                raise ModeError(f"particle {i} declared sliding but starts "
                                f"in the interior (d_s={d:.3e})")
            if d >= -self.opts.pos_tol:
                nu = self._project_to_contact(i)
                vn = float(self.V[i] @ nu)
                if self.modes[i] == SLIDING:
                    if abs(vn) > self.graze_tol:
                        raise ModeError(
                            f"particle {i} declared sliding but has normal "
                            f"velocity {vn:.3e}")
                    self.V[i] = self.V[i] - vn * nu
                    self.events.append(Event(self.t, i, "slide_start",
                                             self.V[i].copy(), self.V[i].copy(), nu))
                else:
                    if vn > self.graze_tol:
                        raise ReflectSimError(
                            f"particle {i} starts on the boundary moving outward")
                    if vn >= -self.graze_tol:
                        if self._handle_graze(self.t, i):
                            self.status = "stopped_at_graze"


def simulate_exact(dom: DomainGeometry, ff: ForceField, initial: SystemState,
                   T: float, opts: SolverOptions | None = None) -> Trajectory:
    """Integrate the confined dynamics with exact event handling.

    Returns a trajectory whose interior arcs satisfy x'' = F to integrator
    tolerance, whose bounces satisfy the reflection rule, and whose sliding
    arcs stay on the boundary with nonnegative constraint density.  At the
    first tangential contact the run proceeds per opts.graze_policy; runs
    that would accumulate infinitely many events stop with a zeno_abort
    event.
    """
    opts = opts or SolverOptions()
    sim = _Simulation(dom, ff, initial, T, opts)
    traj = sim.run()
    if sim.status == "stopped_at_graze" and not sim.segments:
        # graze at t=0 with stop policy: degenerate single-point trajectory
        raise ReflectSimError("run stopped at a t=0 graze; nothing to integrate")
    return traj
