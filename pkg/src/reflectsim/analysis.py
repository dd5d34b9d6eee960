"""Post-hoc verification of computed trajectories.

The solution concept is audited from four angles: energy balance over
requested windows, the boundary measure (impact atoms plus sliding density)
extracted from the event log, the residual of the distributional equation of
motion against compactly supported test functions, and the first-grazing
horizon up to which solutions are certified unique.  All operations are pure
over immutable trajectories.

Quadrature is trapezoidal on per-arc grids that never straddle an event, so
no smoothness across velocity jumps is assumed; measure atoms are summed
exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ReflectSimError
from .exact import Trajectory
from .serialize import write_csv, write_json


def _smooth_pieces(traj: Trajectory, lo: float, hi: float):
    """Yield (t0, t1) sub-intervals of [lo, hi] cut at segment boundaries."""
    for seg in traj.segments:
        a = max(seg.t0, lo)
        b = min(seg.t1, hi)
        if b > a:
            yield a, b


def _piece_grid(a: float, b: float, quad_dt: float) -> np.ndarray:
    K = max(2, int(np.ceil((b - a) / quad_dt)) + 1)
    return np.linspace(a, b, K)


def _force_on_grid(ff, ts: np.ndarray, Xs: np.ndarray) -> np.ndarray:
    """Evaluate the force along a sampled path; (K, n, m)."""
    return ff.eval_batch(ts, Xs)


def _eval_piece(traj: Trajectory, ts: np.ndarray):
    """Evaluate a grid lying inside one smooth arc with correct one-sided limits.

    The first node takes the right limit (start of the arc), every other node
    the left limit, so grids whose endpoints sit on events never pick up the
    post-jump velocity of the neighboring arc.
    """
    X, V = traj.eval_batch(ts, side="left")
    X0, V0 = traj.eval_batch(ts[:1], side="right")
    X[0], V[0] = X0[0], V0[0]
    return X, V


# ---------------------------------------------------------------------------
# boundary measure
# ---------------------------------------------------------------------------

@dataclass
class DensityTrack:
    """Sampled sliding-contact density on one interval, with normals."""

    t: np.ndarray        # (K,)
    values: np.ndarray   # (K,) nonnegative density a(t)
    normals: np.ndarray  # (K, m)

    def mass(self) -> float:
        return float(np.trapezoid(self.values, self.t))


@dataclass
class BoundaryMeasure:
    """Per-particle atoms {(t_k, a_k, nu_k)} plus sampled sliding densities."""

    horizon: tuple[float, float]
    atoms: list[list[tuple[float, float, np.ndarray]]]
    densities: list[list[DensityTrack]]

    def total_mass(self, particle: int | None = None) -> float:
        idx = range(len(self.atoms)) if particle is None else [particle]
        total = 0.0
        for i in idx:
            total += sum(a for _, a, _ in self.atoms[i])
            total += sum(tr.mass() for tr in self.densities[i])
        return total

    def window_mass(self, window, particle: int = 0) -> float:
        lo, hi = window
        total = sum(a for t, a, _ in self.atoms[particle] if lo <= t <= hi)
        for tr in self.densities[particle]:
            sel = (tr.t >= lo) & (tr.t <= hi)
            if np.count_nonzero(sel) >= 2:
                total += float(np.trapezoid(tr.values[sel], tr.t[sel]))
        return total

    def to_dict(self) -> dict:
        return {
            "horizon": list(self.horizon),
            "particles": [
                {"atoms": [{"t": t, "mass": a, "normal": nu.tolist()}
                           for t, a, nu in self.atoms[i]],
                 "density_intervals": [
                     {"t_start": float(tr.t[0]), "t_end": float(tr.t[-1]),
                      "mass": tr.mass()} for tr in self.densities[i]]}
                for i in range(len(self.atoms))
            ],
        }


def extract_measure(traj: Trajectory, quad_dt: float = 1e-4) -> BoundaryMeasure:
    """Boundary measure of an event-resolved trajectory.

    One atom of mass 2*(v-. nu) per bounce; on sliding intervals the density
    is the sampled constraint force rho = F.nu + v^T H v.
    """
    if traj.source != "exact":
        raise ReflectSimError(
            "trajectory has no event log; use extract_measure_penalty for "
            "stiff-wall runs")
    dom, ff = traj.domain, traj.force
    atoms: list[list[tuple[float, float, np.ndarray]]] = [[] for _ in range(traj.n)]
    densities: list[list[DensityTrack]] = [[] for _ in range(traj.n)]
    for e in traj.events:
        if e.kind == "bounce" and e.atom_mass > 0:
            atoms[e.particle].append(
                (e.t_event, e.atom_mass, np.asarray(e.normal)))
    for i in range(traj.n):
        for (a, b) in traj.sliding_intervals(i):
            ts = _piece_grid(a, b, quad_dt)
            X, V = _eval_piece(traj, ts)
            nus = dom._grad(X[:, i, :])
            H = dom._hess(X[:, i, :])
            F = _force_on_grid(ff, ts, X)[:, i, :]
            rho = (np.einsum("kj,kj->k", F, nus)
                   + np.einsum("kj,kjl,kl->k", V[:, i, :], H, V[:, i, :]))
            densities[i].append(DensityTrack(ts, np.maximum(rho, 0.0), nus))
    return BoundaryMeasure((traj.t_start, traj.t_end), atoms, densities)


def extract_measure_penalty(run, window, particle: int = 0) -> float:
    """Trapezoid integral of the approximate density rho_k over the window."""
    return run.rho_window_integral(window, particle)


# ---------------------------------------------------------------------------
# energy audit
# ---------------------------------------------------------------------------

@dataclass
class EnergyRow:
    particle: int
    s1: float
    s2: float
    kinetic_gap: float
    work: float

    @property
    def residual(self) -> float:
        return self.kinetic_gap - self.work

    def to_dict(self) -> dict:
        return {"particle": self.particle, "s1": self.s1, "s2": self.s2,
                "kinetic_gap": self.kinetic_gap, "work": self.work,
                "residual": self.residual}


@dataclass
class EnergyReport:
    rows: list[EnergyRow] = field(default_factory=list)

    @property
    def max_abs_residual(self) -> float:
        return max((abs(r.residual) for r in self.rows), default=0.0)

    def to_json(self, path) -> None:
        write_json(path, {"max_abs_residual": self.max_abs_residual,
                          "rows": [r.to_dict() for r in self.rows]})

    def to_csv(self, path) -> None:
        header = ["particle", "s1", "s2", "kinetic_gap", "work", "residual"]
        write_csv(path, header,
                  ([r.particle, r.s1, r.s2, r.kinetic_gap, r.work, r.residual]
                   for r in self.rows))


def energy_report(traj: Trajectory, ff, windows, quad_dt: float = 5e-5) -> EnergyReport:
    """Kinetic-energy gap minus force work on each window, per particle.

    Window endpoints use right-limit velocities (the right-continuous
    representative); the final time uses the left limit.
    """
    report = EnergyReport()
    for (s1, s2) in windows:
        if not (traj.t_start <= s1 < s2 <= traj.t_end + 1e-12):
            raise ReflectSimError(f"window ({s1}, {s2}) outside trajectory horizon")
        st1 = traj.state_at(s1, side="right")
        st2 = traj.state_at(s2, side="right" if s2 < traj.t_end else "left")
        work = np.zeros(traj.n)
        for a, b in _smooth_pieces(traj, s1, s2):
            ts = _piece_grid(a, b, quad_dt)
            X, V = _eval_piece(traj, ts)
            F = _force_on_grid(ff, ts, X)
            power = np.einsum("kij,kij->ki", F, V)
            work += np.trapezoid(power, ts, axis=0)
        for i in range(traj.n):
            kin = 0.5 * float(st2.V[i] @ st2.V[i]) - 0.5 * float(st1.V[i] @ st1.V[i])
            report.rows.append(EnergyRow(i, s1, s2, kin, float(work[i])))
    return report


# ---------------------------------------------------------------------------
# weak-form residual
# ---------------------------------------------------------------------------

def _mollifier(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0 - 1e-12
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui * ui))
    return out


def _mollifier_deriv(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0 - 1e-12
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui * ui)) * (-2.0 * ui / (1.0 - ui * ui) ** 2)
    return out


@dataclass(frozen=True)
class TestFunction:
    """Bump psi(t) = amplitude * sigma((t-center)/width) along one axis."""

    __test__ = False  # not a pytest class despite the name

    center: float
    width: float
    axis: int
    amplitude: float = 1.0

    def value(self, ts: np.ndarray) -> np.ndarray:
        return self.amplitude * _mollifier(
            (np.asarray(ts) - self.center) / self.width)

    def deriv(self, ts: np.ndarray) -> np.ndarray:
        return self.amplitude * _mollifier_deriv(
            (np.asarray(ts) - self.center) / self.width) / self.width

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.width, self.center + self.width


def default_test_functions(traj: Trajectory, n_functions: int = 20) -> list[TestFunction]:
    """Bumps at event times, gap midpoints, and a uniform grid, axes cycled."""
    t0, t1 = traj.t_start, traj.t_end
    span = t1 - t0
    centers: list[float] = []
    ev = sorted({e.t_event for e in traj.events if t0 < e.t_event < t1})
    centers.extend(ev)
    knots = [t0] + ev + [t1]
    centers.extend(0.5 * (a + b) for a, b in zip(knots, knots[1:]))
    grid = list(t0 + span * (np.arange(1, n_functions + 1)
                             / (n_functions + 1)))
    for c in grid:
        if len(centers) >= n_functions:
            break
        centers.append(c)
    centers = centers[:n_functions]
    fns = []
    for idx, c in enumerate(centers):
        w = 0.9 * min(c - t0, t1 - c, span / 6.0)
        if w <= 0:
            continue
        fns.append(TestFunction(c, w, idx % traj.m))
    return fns


def weak_form_residual(traj: Trajectory, measure: BoundaryMeasure, ff,
                       test_fns=None, quad_dt: float = 5e-5,
                       return_details: bool = False):
    """Max defect of the distributional equation of motion over test functions.

    For each particle and bump psi this evaluates
    |int v.dpsi dt + int F.psi dt - int nu.psi drho|; atoms are summed
    exactly and all time integrals are trapezoidal on event-aligned grids.
    Test functions must be compactly supported inside the horizon.
    """
    if test_fns is None:
        test_fns = default_test_functions(traj)
    if not test_fns:
        raise ReflectSimError("need at least one test function")
    t0, t1 = traj.t_start, traj.t_end
    rows = []
    worst = 0.0
    for fn in test_fns:
        lo, hi = fn.support
        if lo < t0 - 1e-12 or hi > t1 + 1e-12:
            raise ReflectSimError(
                f"test function support ({lo}, {hi}) exceeds the horizon")
        term1 = np.zeros(traj.n)
        term2 = np.zeros(traj.n)
        for a, b in _smooth_pieces(traj, lo, hi):
            ts = _piece_grid(a, b, quad_dt)
            X, V = _eval_piece(traj, ts)
            F = _force_on_grid(ff, ts, X)
            psi = fn.value(ts)
            dpsi = fn.deriv(ts)
            term1 += np.trapezoid(V[:, :, fn.axis] * dpsi[:, None], ts, axis=0)
            term2 += np.trapezoid(F[:, :, fn.axis] * psi[:, None], ts, axis=0)
        for i in range(traj.n):
            term3 = 0.0
            for t_k, a_k, nu_k in measure.atoms[i]:
                term3 += a_k * float(nu_k[fn.axis]) * float(fn.value(np.array([t_k]))[0])
            for tr in measure.densities[i]:
                psi = fn.value(tr.t)
                term3 += float(np.trapezoid(tr.values * tr.normals[:, fn.axis] * psi,
                                            tr.t))
            res = abs(float(term1[i]) + float(term2[i]) - term3)
            worst = max(worst, res)
            rows.append({"particle": i, "center": fn.center, "width": fn.width,
                         "axis": fn.axis, "residual": res})
    if return_details:
        return worst, rows
    return worst


# ---------------------------------------------------------------------------
# grazing horizon and trajectory comparison
# ---------------------------------------------------------------------------

def max_speed_jump(traj: Trajectory) -> float:
    """Largest | |v+| - |v-| | over the event log; zero for smooth runs.

    The speed (unlike the velocity) must be continuous across events.
    """
    worst = 0.0
    for e in traj.events:
        worst = max(worst, abs(float(np.linalg.norm(e.v_plus))
                               - float(np.linalg.norm(e.v_minus))))
    return worst


def first_grazing_time(traj: Trajectory):
    """Earliest tangential-contact time (graze or slide start), or None.

    Marks the horizon up to which the computed solution is certified unique.
    """
    times = [e.t_event for e in traj.events if e.kind in ("graze", "slide_start")]
    return min(times) if times else None


def compare_trajectories(a: Trajectory, b: Trajectory, norm: str = "sup_pos") -> float:
    """Distance between two trajectories on a common grid.

    sup_pos: sup over times of the max-particle position distance;
    l1_vel: max over particles of the time integral of the velocity gap.
    """
    if (a.n, a.m) != (b.n, b.m):
        raise ReflectSimError("trajectories have different particle layout")
    t0 = max(a.t_start, b.t_start)
    t1 = min(a.t_end, b.t_end)
    if abs(a.t_end - b.t_end) > max(a.sample_dt, b.sample_dt):
        raise ReflectSimError(
            f"horizon mismatch: {a.t_end} vs {b.t_end}")
    dt = min(a.sample_dt, b.sample_dt)
    ts = np.unique(np.concatenate([
        np.linspace(t0, t1, max(2, int(round((t1 - t0) / dt)) + 1)),
        [e.t_event for e in a.events if t0 < e.t_event < t1],
        [e.t_event for e in b.events if t0 < e.t_event < t1]]))
    Xa, Va = a.eval_batch(ts)
    Xb, Vb = b.eval_batch(ts)
    if norm == "sup_pos":
        return float(np.max(np.linalg.norm(Xa - Xb, axis=2)))
    if norm == "l1_vel":
        gap = np.linalg.norm(Va - Vb, axis=2)  # (K, n)
        return float(np.max(np.trapezoid(gap, ts, axis=0)))
    raise ValueError(f"unknown norm {norm!r}")
