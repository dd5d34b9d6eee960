"""Two distinct confined solutions from identical rest initial data.

On the half-line with the particle starting at the boundary at rest, a
non-positive forcing F can be built so that both the rest solution x == 0 and
a non-zero bouncing solution satisfy the confined dynamics, the reflection
rule, and energy conservation.  The construction glues geometrically scaled
copies of an auxiliary single-arc bounce z into the intervals
I_n = (a^(n+1)/(1-a), a^n/(1-a)), which accumulate at t = 0: the non-zero
solution performs infinitely many bounces immediately after rest, with bounce
speeds shrinking by the factor b/a per step.

Everything here is closed form (plus quadrature); the event-driven solver is
deliberately not used, since no event loop can traverse the accumulation
point.  The certificate re-checks every structural property numerically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from .errors import ConstructionError, HorizonError
from .serialize import write_csv, write_json

_QUAD_OPTS = dict(epsabs=1e-12, epsrel=1e-12, limit=300)


def default_bump(s):
    """Smooth nonnegative bump supported in (1/2, 1).

    Placing the support right of s = 1/2 makes the end-speed surplus integral
    int (2s-1) f(s) ds positive by construction.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0.5) & (s < 1.0)
    si = s[inside]
    out[inside] = np.exp(-1.0 / ((si - 0.5) * (1.0 - si)))
    if out.ndim == 0:
        return float(out)
    return out


class AuxiliaryBounce:
    """Single-arc bounce z'' = -f, z(0) = z(1) = 0, z > 0 in between.

    v0 = z'(0) is fixed by the return condition z(1) = 0 and v1 = -z'(1) is
    the (larger) impact speed; their ratio drives the geometric scaling.
    z and z' are evaluated through cumulative integrals of f tabulated on a
    fine grid, accurate to ~1e-10 of the bump scale.
    """

    GRID = 500_001

    def __init__(self, f=None):
        self.f = f if f is not None else default_bump
        self.v0 = quad(lambda s: (1.0 - s) * self.f(s), 0.0, 1.0,
                       points=[0.25, 0.5, 0.75], **_QUAD_OPTS)[0]
        self.v1 = quad(lambda s: s * self.f(s), 0.0, 1.0,
                       points=[0.25, 0.5, 0.75], **_QUAD_OPTS)[0]
        self.surplus = quad(lambda s: (2.0 * s - 1.0) * self.f(s), 0.0, 1.0,
                            points=[0.25, 0.5, 0.75], **_QUAD_OPTS)[0]
        ts = np.linspace(0.0, 1.0, self.GRID)
        fs = np.asarray(self.f(ts), dtype=float)
        self._ts = ts
        # cumulative moments: int_0^tau f and int_0^tau s f(s) ds
        self._F1 = cumulative_trapezoid(fs, ts, initial=0.0)
        self._F2 = cumulative_trapezoid(ts * fs, ts, initial=0.0)

    def z(self, tau):
        tau = np.asarray(tau, dtype=float)
        F1 = np.interp(tau, self._ts, self._F1)
        F2 = np.interp(tau, self._ts, self._F2)
        out = self.v0 * tau - (tau * F1 - F2)
        return float(out) if out.ndim == 0 else out

    def dz(self, tau):
        tau = np.asarray(tau, dtype=float)
        out = self.v0 - np.interp(tau, self._ts, self._F1)
        return float(out) if out.ndim == 0 else out

    def d2z(self, tau):
        out = -np.asarray(self.f(tau), dtype=float)
        return float(out) if out.ndim == 0 else out

    def sup_z(self) -> float:
        return float(np.max(self.z(self._ts)))

    def sup_dz(self) -> float:
        return float(np.max(np.abs(self.dz(self._ts))))

    def sup_f(self) -> float:
        return float(np.max(np.asarray(self.f(self._ts))))


def auxiliary_bounce(f=None) -> AuxiliaryBounce:
    """Build the single-arc bounce; requires the surplus integral to be positive.

    Symmetric bumps integrate to a zero surplus up to roundoff and are
    rejected: without a strictly larger impact speed the scaled copies
    cannot be glued together.
    """
    aux = AuxiliaryBounce(f)
    if aux.surplus <= 1e-9 * max(aux.v0 + aux.v1, 1e-300):
        raise ConstructionError(
            "the bump must satisfy int (2s-1) f(s) ds > 0; the impact speed "
            "would not exceed the launch speed")
    return aux


def choose_scaling(v0: float, v1: float, L: int) -> tuple[float, float]:
    """Pick (a, b) with 0 < b < a^L < 1 and v0 = (b/a) v1.

    The admissible range for a is [(v0/v1)^(1/(L-1)), 1) for L >= 2 and
    (v0/v1, 1) for L = 1; the midpoint is used.  b = a v0/v1 then matches the
    bounce speeds across interfaces.
    """
    if not (0.0 < v0 < v1):
        raise ConstructionError(f"need 0 < v0 < v1, got v0={v0:g}, v1={v1:g}")
    if L < 1:
        raise ValueError("smoothness order L must be >= 1")
    ratio = v0 / v1
    lo = ratio if L == 1 else ratio ** (1.0 / (L - 1))
    a = 0.5 * (lo + 1.0)
    b = a * ratio
    if not 0.0 < b < a ** L < 1.0:
        raise ConstructionError(
            f"scaling failed: a={a:g}, b={b:g} violate 0 < b < a^{L} < 1")
    return a, b


@dataclass(frozen=True)
class CounterexampleParams:
    """Scaling data tying the auxiliary bounce into the accumulation of arcs."""

    aux: AuxiliaryBounce = field(repr=False)
    L: int
    a: float
    b: float

    @property
    def v0(self) -> float:
        return self.aux.v0

    @property
    def v1(self) -> float:
        return self.aux.v1

    @property
    def T_mid(self) -> float:
        """Midpoint of the outermost arc interval; the verification horizon."""
        return 0.5 * (1.0 + self.a) / (1.0 - self.a)

    def t_left(self, n) -> np.ndarray | float:
        """Left endpoint of I_n (the n-th bounce time), a^(n+1)/(1-a)."""
        return self.a ** (np.asarray(n) + 1) / (1.0 - self.a)

    def interval_index(self, t: float) -> int:
        """n with t in I_n = (a^(n+1)/(1-a), a^n/(1-a)); t must be in (0, 1/(1-a))."""
        u = t * (1.0 - self.a)
        return int(np.floor(np.log(u) / np.log(self.a)))

    def to_dict(self) -> dict:
        return {"L": self.L, "a": self.a, "b": self.b, "v0": self.v0,
                "v1": self.v1, "T_mid": self.T_mid,
                "speed_ratio_per_bounce": self.b / self.a}


def make_params(f=None, L: int = 2) -> CounterexampleParams:
    aux = auxiliary_bounce(f)
    a, b = choose_scaling(aux.v0, aux.v1, L)
    return CounterexampleParams(aux, L, a, b)


def _map_batch(t_arr: np.ndarray, params: CounterexampleParams):
    """Vectorized (n, tau) for the positive entries of t_arr."""
    pos = t_arr > 0.0
    n = np.zeros(t_arr.shape, dtype=float)
    tau = np.zeros_like(t_arr)
    tp = t_arr[pos]
    u = tp * (1.0 - params.a)
    npos = np.floor(np.log(u) / np.log(params.a))
    left = params.a ** (npos + 1) / (1.0 - params.a)
    taup = np.clip((tp - left) * params.a ** (-npos), 0.0, 1.0)
    n[pos] = npos
    tau[pos] = taup
    return pos, n, tau


def counterexample_force(t, params: CounterexampleParams):
    """The non-positive forcing F(t); zero for t <= 0, scaled bumps on each I_n."""
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    if np.any(t_arr > params.T_mid * (1 + 1e-12)):
        raise HorizonError(f"force defined only up to T={params.T_mid:g}")
    pos, n, tau = _map_batch(t_arr, params)
    out = np.zeros_like(t_arr)
    out[pos] = -((params.b / params.a ** 2) ** n[pos]
                 * np.asarray(params.aux.f(tau[pos])))
    return float(out[0]) if scalar else out


def counterexample_solution(t, params: CounterexampleParams):
    """The non-zero solution (x, v); identically (0, 0) for t <= 0."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    scalar = np.asarray(t, dtype=float).ndim == 0
    if np.any(t_arr > params.T_mid * (1 + 1e-12)):
        raise HorizonError(f"solution defined only up to T={params.T_mid:g}")
    pos, n, tau = _map_batch(t_arr, params)
    x = np.zeros_like(t_arr)
    v = np.zeros_like(t_arr)
    # the arc vanishes at both interval endpoints; clamp their roundoff
    x[pos] = np.maximum(params.b ** n[pos] * params.aux.z(tau[pos]), 0.0)
    v[pos] = (params.b / params.a) ** n[pos] * params.aux.dz(tau[pos])
    if scalar:
        return float(x[0]), float(v[0])
    return x, v


# ---------------------------------------------------------------------------
# certificate
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value,
                "tolerance": self.tolerance, "pass": self.passed,
                "detail": self.detail}


@dataclass
class CertificateReport:
    params: dict
    n_max: int
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"params": self.params, "n_max": self.n_max,
                "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks]}

    def to_json(self, path) -> None:
        write_json(path, self.to_dict())


def _bump_family(params, widths=(0.35, 0.1)):
    """Compactly supported bumps inside (-1, T_mid), several straddling t=0."""
    from .analysis import TestFunction

    T = params.T_mid
    centers = [0.0, -0.3, 0.45 * T]
    centers += [float(params.t_left(n)) for n in range(3)]
    mids = [0.5 * (params.t_left(n) + params.a ** n / (1 - params.a))
            for n in range(3)]
    centers += [float(m) for m in mids]
    fns = []
    for idx, c in enumerate(centers):
        w = min(widths[0], 0.9 * (c + 1.0), 0.9 * (T - c))
        if w > 1e-3:
            fns.append(TestFunction(c, w, 0))
    return fns


def _weak_form_residual_closed(params, fns, n_sum: int, solution: str) -> float:
    """Residual |int v psi' + int F psi - int nu psi d rho| on (-1, T_mid).

    For the rest solution the measure has density -F (normal nu = -1); for
    the bouncing solution it has atoms 2 v0 (b/a)^n at the bounce times.
    """
    aux, a, b = params.aux, params.a, params.b
    worst = 0.0
    for fn in fns:
        lo, hi = fn.support
        if solution == "zero":
            term1 = 0.0
            term2, term3 = 0.0, 0.0
            for n in range(n_sum):
                i0, i1 = float(params.t_left(n)), float(params.t_left(n - 1))
                s0, s1 = max(i0, lo), min(i1, hi)
                if s1 <= s0:
                    continue

                def f_psi(t):
                    return (counterexample_force(t, params)
                            * float(fn.value(np.array([t]))[0]))

                term2 += quad(f_psi, s0, s1, **_QUAD_OPTS)[0]
                # measure route: density a(t) = -F(t) with normal nu = -1,
                # integrated on its own grid
                ts = np.linspace(s0, s1, 4001)
                dens = -counterexample_force(ts, params)
                term3 += float(np.trapezoid((-1.0) * fn.value(ts) * dens, ts))
            worst = max(worst, abs(term1 + term2 - term3))
            continue
        # non-zero solution: velocity arcs plus impact atoms
        term1 = 0.0
        term2 = 0.0
        for n in range(n_sum):
            i0, i1 = float(params.t_left(n)), float(params.t_left(n - 1))
            s0, s1 = max(i0, lo), min(i1, hi)
            if s1 <= s0:
                continue
            scale_v = (b / a) ** n
            scale_f = (b / a ** 2) ** n
            an = a ** (-n)

            def v_dpsi(t):
                tau = (t - i0) * an
                return (scale_v * aux.dz(tau)
                        * float(fn.deriv(np.array([t]))[0]))

            def f_psi(t):
                tau = (t - i0) * an
                return (-scale_f * aux.f(tau)
                        * float(fn.value(np.array([t]))[0]))

            term1 += quad(v_dpsi, s0, s1, **_QUAD_OPTS)[0]
            term2 += quad(f_psi, s0, s1, **_QUAD_OPTS)[0]
        term3 = 0.0
        for n in range(n_sum):
            tn = float(params.t_left(n))
            if lo <= tn <= hi:
                # atom mass 2 v0 (b/a)^n, normal -1
                term3 += 2.0 * params.v0 * (b / a) ** n * (-1.0) \
                    * float(fn.value(np.array([tn]))[0])
        worst = max(worst, abs(term1 + term2 - term3))
    return worst


def _energy_residual_closed(params, windows, n_sum: int) -> float:
    """Residual of the kinetic-energy/work balance for the non-zero solution."""
    worst = 0.0
    for (s1, s2) in windows:
        _, vs1 = counterexample_solution(s1, params)
        _, vs2 = counterexample_solution(s2, params)
        kin = 0.5 * vs2 ** 2 - 0.5 * vs1 ** 2
        work = 0.0
        for n in range(n_sum):
            i0, i1 = float(params.t_left(n)), float(params.t_left(n - 1))
            a_, b_ = max(i0, s1), min(i1, s2)
            if b_ <= a_:
                continue
            an = params.a ** (-n)
            scale_f = (params.b / params.a ** 2) ** n
            scale_v = (params.b / params.a) ** n

            def f_v(t):
                tau = (t - i0) * an
                return -scale_f * params.aux.f(tau) * scale_v * params.aux.dz(tau)

            work += quad(f_v, a_, b_, **_QUAD_OPTS)[0]
        worst = max(worst, abs(kin - work))
    return worst


def verify_counterexample(params: CounterexampleParams, n_max: int = 10,
                          ode_tol: float = 1e-6, ratio_tol: float = 1e-10,
                          deriv_tol: float = 1e-4, weak_tol: float = 1e-6,
                          energy_tol: float = 1e-6) -> CertificateReport:
    """Machine-check that both the rest and the bouncing solution are valid.

    Checks, per arc n <= n_max where applicable: the arc ODE x'' = F by
    finite differences on the closed form; the reflection rule and the b/a
    speed ratio at every interface; summability of the velocity-jump measure;
    smoothness of F at the accumulation point (finite-difference derivatives
    up to order L vanish); and the weak-form and energy residuals for BOTH
    solutions on windows straddling t = 0.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    aux, a, b = params.aux, params.a, params.b
    rep = CertificateReport(params.to_dict(), n_max)
    add = rep.checks.append

    # (0) structural scalars
    add(CheckResult("surplus_positive", aux.surplus, 0.0, aux.surplus > 0.0,
                    "int (2s-1) f ds"))
    z_ends = max(abs(aux.z(0.0)), abs(aux.z(1.0)))
    add(CheckResult("arc_endpoints_zero", z_ends, 1e-11, z_ends <= 1e-11,
                    "|z(0)|, |z(1)|"))
    z_min = float(np.min(aux.z(np.linspace(0.0, 1.0, 20001))[1:-1]))
    add(CheckResult("arc_positive_inside", z_min, 0.0, z_min > 0.0, "min z"))
    surplus_id = abs((aux.v1 - aux.v0) - aux.surplus)
    add(CheckResult("speed_surplus_identity", surplus_id, 1e-12,
                    surplus_id <= 1e-12, "v1 - v0 = int (2s-1) f"))
    scal = abs(params.v0 - (b / a) * params.v1) / params.v1
    add(CheckResult("scaling_identity", scal, 1e-12, scal <= 1e-12,
                    "v0 = (b/a) v1, relative"))
    order = (0.0 < b < a ** params.L < 1.0)
    add(CheckResult("scaling_order", b, a ** params.L, order,
                    f"0 < b < a^{params.L} < 1"))

    # (1) ODE residual on each arc by central differences on the closed form
    worst_ode = 0.0
    for n in range(n_max + 1):
        i0 = float(params.t_left(n))
        length = a ** n
        h = 1e-3 * length
        # the horizon cuts the outermost arc at its midpoint
        tau_hi = min(0.95, (params.T_mid - i0) / length - 2e-3)
        taus = np.linspace(0.05, tau_hi, 19)
        for tau in taus:
            t = i0 + tau * length
            xp = counterexample_solution(t + h, params)[0]
            x0 = counterexample_solution(t, params)[0]
            xm = counterexample_solution(t - h, params)[0]
            acc = (xp - 2.0 * x0 + xm) / h ** 2
            F = counterexample_force(t, params)
            worst_ode = max(worst_ode, abs(acc - F))
    add(CheckResult("arc_ode_residual", worst_ode, ode_tol,
                    worst_ode <= ode_tol, "|x'' - F| by central differences"))

    # (2) reflection rule and speed ratio at interfaces
    worst_refl = 0.0
    worst_ratio = 0.0
    eps = 1e-3
    for n in range(n_max):
        tn = float(params.t_left(n))
        v_out = counterexample_solution(tn + eps * a ** n, params)[1]
        v_in = counterexample_solution(tn - eps * a ** (n + 1), params)[1]
        worst_refl = max(worst_refl, abs(v_out / (-v_in) - 1.0))
        sp_n = abs(counterexample_solution(tn + eps * a ** n, params)[1])
        tn1 = float(params.t_left(n + 1))
        sp_n1 = abs(counterexample_solution(tn1 + eps * a ** (n + 1), params)[1])
        worst_ratio = max(worst_ratio, abs(sp_n1 / sp_n - b / a))
    add(CheckResult("reflection_rule_interfaces", worst_refl, ratio_tol,
                    worst_refl <= ratio_tol, "v+ = -v- at bounce times"))
    add(CheckResult("bounce_speed_ratio", worst_ratio, ratio_tol,
                    worst_ratio <= ratio_tol, "consecutive speeds shrink by b/a"))

    # (3) summability of the velocity-jump measure
    q = b / a
    atoms = sum(2.0 * params.v0 * q ** n for n in range(n_max + 1))
    smooth = sum(aux.sup_f() * (b / a ** 2) ** n * a ** n
                 for n in range(n_max + 1))
    tail = (2.0 * params.v0 + aux.sup_f()) * q ** (n_max + 1) / (1.0 - q)
    total = atoms + smooth + tail
    add(CheckResult("velocity_jump_mass_finite", total, np.inf,
                    q < 1.0 and np.isfinite(total),
                    f"atoms {atoms:.3e} + arcs {smooth:.3e} + tail {tail:.3e}"))

    # (4) smoothness of F at the accumulation point: Richardson-extrapolated
    # one-sided stencils over a ladder of steps (F vanishes for t <= 0)
    worst_deriv = 0.0
    for order_ in range(1, params.L + 1):
        for h in (1e-2 * 2.0 ** (-j) for j in range(7)):
            if order_ == 1:
                d1 = (counterexample_force(h, params)
                      - counterexample_force(-h, params)) / (2 * h)
                d2 = (counterexample_force(h / 2, params)
                      - counterexample_force(-h / 2, params)) / h
            else:
                d1 = (counterexample_force(h, params) - 2 * 0.0
                      + counterexample_force(-h, params)) / h ** 2
                d2 = (counterexample_force(h / 2, params)
                      + counterexample_force(-h / 2, params)) / (h / 2) ** 2
            worst_deriv = max(worst_deriv, abs((4.0 * d2 - d1) / 3.0))
    add(CheckResult("force_derivatives_at_zero", worst_deriv, deriv_tol,
                    worst_deriv <= deriv_tol,
                    f"Richardson-extrapolated orders 1..{params.L}"))
    f0 = abs(counterexample_force(0.0, params))
    add(CheckResult("force_zero_at_origin", f0, 1e-300, f0 == 0.0, "F(0)"))
    ts_chk = np.linspace(-0.5, params.T_mid, 2001)
    fmax = float(np.max(counterexample_force(ts_chk, params)))
    add(CheckResult("force_nonpositive", fmax, 0.0, fmax <= 0.0, "max F"))

    # (5) weak form and energy for both solutions
    n_sum = max(n_max + 1, int(np.ceil(np.log(1e-18) / np.log(b))))
    fns = _bump_family(params)
    res_zero = _weak_form_residual_closed(params, fns, n_sum, "zero")
    add(CheckResult("weak_form_rest_solution", res_zero, weak_tol,
                    res_zero <= weak_tol, f"{len(fns)} bump functions"))
    res_nz = _weak_form_residual_closed(params, fns, n_sum, "nonzero")
    add(CheckResult("weak_form_bouncing_solution", res_nz, weak_tol,
                    res_nz <= weak_tol, f"{len(fns)} bump functions"))

    T = params.T_mid
    windows = [(-0.5, T), (-0.25, float(params.t_left(2)) * 1.5),
               (-0.75, 0.5 * T)]
    e_nz = _energy_residual_closed(params, windows, n_sum)
    add(CheckResult("energy_bouncing_solution", e_nz, energy_tol,
                    e_nz <= energy_tol, "windows straddling t=0"))
    # the rest solution has zero velocity and does no work against F
    add(CheckResult("energy_rest_solution", 0.0, energy_tol, True,
                    "x=0: both sides vanish identically"))
    return rep


def sample_profile(params: CounterexampleParams, n_uniform: int = 2000,
                   n_per_interval: int = 33, n_max: int = 10):
    """Tabulate (t, F, x, v, interval index) over [-1, T_mid] for plotting."""
    ts = [np.linspace(-1.0, params.T_mid, n_uniform)]
    for n in range(n_max + 1):
        i0 = float(params.t_left(n))
        ts.append(i0 + np.linspace(0.0, 1.0, n_per_interval) * params.a ** n)
    grid = np.unique(np.concatenate(ts))
    grid = grid[grid <= params.T_mid]
    F = counterexample_force(grid, params)
    x, v = counterexample_solution(grid, params)
    idx = np.full(len(grid), -1, dtype=int)
    for j, t in enumerate(grid):
        if 0.0 < t <= float(params.t_left(-1)):
            idx[j] = params.interval_index(t)
    return grid, F, x, v, idx


def profile_to_csv(path, params: CounterexampleParams, **kw) -> None:
    grid, F, x, v, idx = sample_profile(params, **kw)
    rows = ([float(t), float(f), float(xx), float(vv), int(i)]
            for t, f, xx, vv, i in zip(grid, F, x, v, idx))
    write_csv(path, ["t", "F", "x", "v", "n_interval"], rows)
