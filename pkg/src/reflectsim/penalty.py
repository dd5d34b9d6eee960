"""Stiff-wall approximation of the confined dynamics.

The hard constraint is replaced by the restoring force -k * (d grad d), which
is zero on the closure of the domain and pushes excursions back inside.  For
each excursion the particle behaves like a half-period of a sqrt(k)-frequency
oscillator, so penetration depth scales like 1/sqrt(k) and excursion duration
like pi/sqrt(k); runs record both, together with the approximate boundary
force density rho_k = k * d, whose window integrals converge to the impulse
2 * (impact normal speed) of the exact dynamics.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import InvalidRunError, ReflectSimError, StiffnessError, TubeExitError
from .exact import (FREE, Segment, SolverOptions, SystemState, Trajectory,
                    _pack, _polish_root, _unpack)
from .forces import ForceField
from .geometry import DomainGeometry
from .serialize import write_csv, write_json


@dataclass
class Excursion:
    """One interval during which a particle is outside the closure."""

    particle: int
    t_enter: float
    t_exit: float
    max_depth: float
    entry_speed: float  # normal speed d/dt d_s at entry (> 0)
    exit_speed: float   # normal speed at exit (< 0)

    @property
    def duration(self) -> float:
        return self.t_exit - self.t_enter

    def to_dict(self) -> dict:
        return {"particle": self.particle, "t_enter": self.t_enter,
                "t_exit": self.t_exit, "duration": self.duration,
                "max_depth": self.max_depth, "entry_speed": self.entry_speed,
                "exit_speed": self.exit_speed}


@dataclass
class PenaltyRun:
    k: float
    trajectory: Trajectory
    max_penetration: float
    rho_samples: list[tuple[np.ndarray, np.ndarray]]  # per particle (t, rho)
    excursions: list[list[Excursion]]  # per particle

    def rho_window_integral(self, window, particle: int = 0) -> float:
        ts, rho = self.rho_samples[particle]
        lo, hi = window
        lo = max(lo, ts[0])
        hi = min(hi, ts[-1])
        if hi <= lo:
            return 0.0
        inner = ts[(ts > lo) & (ts < hi)]
        grid = np.concatenate([[lo], inner, [hi]])
        vals = np.interp(grid, ts, rho)
        return float(np.trapezoid(vals, grid))

    def total_rho_mass(self) -> float:
        return float(sum(np.trapezoid(r, t) for t, r in self.rho_samples))


def penalty_force(dom: DomainGeometry, x, k: float) -> np.ndarray:
    """Restoring force -k * (d grad d): zero inside, inward-directed outside."""
    return -k * dom.d_grad_d(x)


def estimate_speed_scale(dom: DomainGeometry, ff: ForceField,
                         initial: SystemState, rng_seed: int = 0) -> float:
    """A-priori bound on attainable speed, of energy-balance type."""
    v0 = float(np.max(np.linalg.norm(initial.V, axis=1))) if initial.n else 0.0
    if ff.sup_norm_bound is not None:
        f_sup = ff.sup_norm_bound
    else:
        rng = np.random.default_rng(rng_seed)
        lo, hi = dom.bounding_box.lo, dom.bounding_box.hi
        f_sup = 0.0
        for t in np.linspace(0.0, 1.0, 8):
            X = rng.uniform(lo, hi, size=(ff.n_particles, ff.dim))
            f_sup = max(f_sup, float(np.max(np.linalg.norm(ff(t, X), axis=1))))
    extent = float(np.max(dom.bounding_box.hi - dom.bounding_box.lo))
    return v0 + np.sqrt(2.0 * f_sup * extent)


def k_min(dom: DomainGeometry, ff: ForceField, initial: SystemState) -> float:
    """Smallest stiffness for which the 1/sqrt(k) penetration stays in the tube."""
    v = estimate_speed_scale(dom, ff, initial)
    return 4.0 * v * v / dom.tube_radius ** 2


def simulate_penalty(dom: DomainGeometry, ff: ForceField, initial: SystemState,
                     T: float, k: float, opts: SolverOptions | None = None) -> PenaltyRun:
    """Integrate the stiff-wall dynamics at stiffness k over [0, T].

    The step size is clamped to 2*pi/(20*sqrt(k)) so the wall oscillation is
    resolved; rho_k = k*d is recorded at integrator steps and excursion
    endpoints exactly.  Leaving the tube aborts the run with the achieved
    penetration (the signal that k is too small).
    """
    opts = opts or SolverOptions()
    if T <= 0:
        raise ValueError("horizon T must be positive")
    if k < k_min(dom, ff, initial):
        raise StiffnessError(
            f"k={k:g} is below the admissible minimum "
            f"{k_min(dom, ff, initial):.3g} for this scenario")
    n, m = initial.n, initial.m
    d0 = dom.signed_distance(initial.X)
    if np.any(d0 > opts.pos_tol):
        raise ReflectSimError("initial positions must lie in the closure")

    peak = {"d": 0.0}

    def rhs(t, y):
        X, V = _unpack(y, n, m)
        A = ff(t, X) - k * dom.d_grad_d(X)
        d = dom._sd(X)
        peak["d"] = max(peak["d"], float(np.max(d)))
        return _pack(V, A)

    max_step = 2.0 * np.pi / (20.0 * np.sqrt(k))
    if opts.max_step is not None:
        max_step = min(max_step, opts.max_step)
    try:
        sol = solve_ivp(rhs, (0.0, T), _pack(initial.X, initial.V),
                        method="RK45", dense_output=True,
                        rtol=opts.rtol, atol=opts.atol, max_step=max_step)
    except TubeExitError as exc:
        raise InvalidRunError(
            f"stiff-wall run left the tube at penetration {peak['d']:.3e}; "
            f"k={k:g} is too small", penetration=peak["d"]) from exc
    if sol.status == -1:
        raise StiffnessError(f"integrator failed at t={sol.t[-1]}: {sol.message}")

    traj = Trajectory(n, m, (0.0, T),
                      [Segment(0.0, T, sol.sol, (FREE,) * n)], [],
                      opts.sample_dt, status="completed",
                      source="penalty", domain=dom, force=ff)

    rho_samples, excursions, max_pen = _postprocess(dom, sol, n, m, k)
    return PenaltyRun(k, traj, max_pen, rho_samples, excursions)


def _postprocess(dom, sol, n, m, k):
    ts = sol.t
    Y = np.asarray(sol.sol(ts))
    rho_samples = []
    excursions: list[list[Excursion]] = []
    max_pen = 0.0

    for i in range(n):
        Xi = Y[i * m:(i + 1) * m].T
        d = dom._sd(Xi)

        def d_of_t(t):
            y = np.asarray(sol.sol(t))
            return float(dom._sd(y[i * m:(i + 1) * m][None, :])[0])

        def rdot_of_t(t):
            y = np.asarray(sol.sol(t))
            x = y[i * m:(i + 1) * m]
            v = y[n * m + i * m: n * m + (i + 1) * m]
            return float(v @ dom._grad(x[None, :])[0])

        excs = []
        extra_t, extra_rho = [], []
        outside = d > 0
        j = 0
        while j < len(ts):
            if not outside[j]:
                j += 1
                continue
            # entry root in (ts[j-1], ts[j]); excursion may start at t=0
            if j == 0:
                a = ts[0]
            else:
                a = _polish_root(d_of_t, ts[j - 1], ts[j], d[j - 1], d[j])
            jj = j
            while jj < len(ts) and outside[jj]:
                jj += 1
            if jj >= len(ts):
                b = ts[-1]
            else:
                b = _polish_root(lambda t: -d_of_t(t), ts[jj - 1], ts[jj],
                                 -d[jj - 1], -d[jj])
            fine = np.linspace(a, b, 1001)
            dfine = dom._sd(np.asarray(sol.sol(fine))[i * m:(i + 1) * m].T)
            depth = float(np.max(dfine))
            excs.append(Excursion(i, a, b, depth, rdot_of_t(a), rdot_of_t(b)))
            max_pen = max(max_pen, depth)
            extra_t += [a, b]
            extra_rho += [0.0, 0.0]
            j = jj
        grid = np.concatenate([ts, extra_t]) if extra_t else ts.copy()
        rho = np.concatenate([k * np.maximum(d, 0.0), extra_rho]) if extra_t \
            else k * np.maximum(d, 0.0)
        order = np.argsort(grid, kind="stable")
        rho_samples.append((grid[order], rho[order]))
        excursions.append(excs)
    return rho_samples, excursions, max_pen


# ---------------------------------------------------------------------------
# convergence sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    k: float
    valid: bool
    max_penetration: float = np.nan
    sup_gap: float = np.nan
    l1_vel_gap: float = np.nan
    rho_total_mass: float = np.nan
    rho_mass_error: float = np.nan
    n_excursions: int = 0
    max_excursion_duration: float = np.nan
    slope_contribution: float = np.nan  # pairwise log-log slope vs previous row
    message: str = ""

    def to_dict(self) -> dict:
        return {"k": self.k, "valid": self.valid,
                "max_penetration": self.max_penetration,
                "sup_gap": self.sup_gap, "l1_vel_gap": self.l1_vel_gap,
                "rho_total_mass": self.rho_total_mass,
                "rho_mass_error": self.rho_mass_error,
                "n_excursions": self.n_excursions,
                "max_excursion_duration": self.max_excursion_duration,
                "slope_contribution": self.slope_contribution,
                "message": self.message}


@dataclass
class SweepReport:
    rows: list[SweepRow]
    penetration_slope: float
    sup_gap_monotone: bool
    runs: list[PenaltyRun | None] = field(default_factory=list, repr=False)

    def to_csv(self, path) -> None:
        header = ["k", "max_penetration", "sup_gap", "l1_vel_gap",
                  "rho_total_mass", "rho_mass_error", "n_excursions",
                  "max_excursion_duration", "slope_contribution", "valid"]
        rows = [[r.k, r.max_penetration, r.sup_gap, r.l1_vel_gap,
                 r.rho_total_mass, r.rho_mass_error, r.n_excursions,
                 r.max_excursion_duration, r.slope_contribution,
                 str(r.valid).lower()]
                for r in self.rows]
        write_csv(path, header, rows)

    def to_json(self, path) -> None:
        write_json(path, self.summary())

    def summary(self) -> dict:
        return {"penetration_slope": self.penetration_slope,
                "sup_gap_monotone": self.sup_gap_monotone,
                "rows": [r.to_dict() for r in self.rows]}


def convergence_sweep(dom: DomainGeometry, ff: ForceField, initial: SystemState,
                      T: float, ks, reference: Trajectory,
                      opts: SolverOptions | None = None,
                      workers: int = 1) -> SweepReport:
    """Run the stiff-wall solver for increasing k and compare to a reference.

    Rows report penetration, sup-norm position gap and L1 velocity gap to the
    reference, total approximate-measure mass (with its error against the
    reference's boundary measure), and excursion statistics; invalid runs are
    flagged and excluded from the least-squares penetration slope.
    """
    from .analysis import compare_trajectories, extract_measure

    opts = opts or SolverOptions()
    ks = [float(k) for k in ks]
    if any(k2 <= k1 for k1, k2 in zip(ks, ks[1:])):
        raise ValueError("stiffness list must be strictly increasing")
    kmin = k_min(dom, ff, initial)
    if ks[0] < kmin:
        raise StiffnessError(f"smallest k={ks[0]:g} is below k_min={kmin:.3g}")

    ref_mass = extract_measure(reference).total_mass()

    def one(k: float):
        try:
            return simulate_penalty(dom, ff, initial, T, k, opts)
        except (InvalidRunError, StiffnessError) as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, ks))
    else:
        results = [one(k) for k in ks]

    rows: list[SweepRow] = []
    runs: list[PenaltyRun | None] = []
    for k, res in zip(ks, results):
        if isinstance(res, Exception):
            rows.append(SweepRow(k, valid=False, message=str(res)))
            runs.append(None)
            continue
        durations = [e.duration for excs in res.excursions for e in excs]
        rows.append(SweepRow(
            k, valid=True,
            max_penetration=res.max_penetration,
            sup_gap=compare_trajectories(res.trajectory, reference, "sup_pos"),
            l1_vel_gap=compare_trajectories(res.trajectory, reference, "l1_vel"),
            rho_total_mass=res.total_rho_mass(),
            rho_mass_error=abs(res.total_rho_mass() - ref_mass),
            n_excursions=sum(len(e) for e in res.excursions),
            max_excursion_duration=max(durations) if durations else 0.0))
        runs.append(res)

    fit = [(np.log(r.k), np.log(r.max_penetration)) for r in rows
           if r.valid and r.max_penetration > 0]
    slope = float(np.polyfit(*zip(*fit), 1)[0]) if len(fit) >= 2 else np.nan
    prev = None
    for r in rows:
        if not (r.valid and r.max_penetration > 0):
            continue
        if prev is not None:
            r.slope_contribution = ((np.log(r.max_penetration)
                                     - np.log(prev.max_penetration))
                                    / (np.log(r.k) - np.log(prev.k)))
        prev = r
    gaps = [r.sup_gap for r in rows if r.valid]
    monotone = all(g2 <= g1 * (1 + 1e-9) for g1, g2 in zip(gaps, gaps[1:]))
    return SweepReport(rows, slope, monotone, runs)
