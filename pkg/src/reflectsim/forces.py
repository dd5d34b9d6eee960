"""Force fields acting on the particle system.

A force field maps (t, X) with X of shape (n, m) to per-particle force
vectors of the same shape.  Fields are defined on the whole bounding box,
not just on the closure of the domain, so the stiff-wall solver can evaluate
them on excursions outside.  Velocity-dependent forces are out of scope.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, HorizonError


class ForceField:
    """Base class.  Subclasses implement ``_eval(t, X) -> (n, m) array``.

    ``lipschitz_constant`` and ``sup_norm_bound`` are optional metadata
    (exact where a closed form exists) used by uniqueness diagnostics and
    step-size heuristics.
    """

    def __init__(self, n_particles: int, dim: int,
                 lipschitz_constant: float | None = None,
                 sup_norm_bound: float | None = None,
                 horizon: float | None = None):
        self.n_particles = n_particles
        self.dim = dim
        self.lipschitz_constant = lipschitz_constant
        self.sup_norm_bound = sup_norm_bound
        self.horizon = horizon

    def _eval(self, t: float, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t: float, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != (self.n_particles, self.dim):
            raise ValueError(
                f"configuration has shape {X.shape}, expected "
                f"({self.n_particles}, {self.dim})")
        if self.horizon is not None and not (0.0 <= t <= self.horizon * (1 + 1e-12)):
            raise HorizonError(f"force requested at t={t} outside [0, {self.horizon}]")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite particle positions")
        F = self._eval(float(t), X)
        if not np.all(np.isfinite(F)):
            raise ValueError("force evaluation produced non-finite values")
        return F

    def eval_batch(self, ts: np.ndarray, Xs: np.ndarray) -> np.ndarray:
        """Force along a sampled path: ts (K,), Xs (K, n, m) -> (K, n, m).

        The base implementation loops; closed-form fields override it.
        """
        return np.stack([self(t, X) for t, X in zip(ts, Xs)])

    def to_dict(self) -> dict:
        return {"kind": type(self).__name__}


def eval_force(ff: ForceField, t: float, X) -> np.ndarray:
    return ff(t, X)


class Zero(ForceField):
    def __init__(self, n_particles: int, dim: int):
        super().__init__(n_particles, dim, lipschitz_constant=0.0, sup_norm_bound=0.0)

    def _eval(self, t, X):
        return np.zeros_like(X)

    def eval_batch(self, ts, Xs):
        return np.zeros_like(Xs)


class ConstantGravity(ForceField):
    def __init__(self, g, n_particles: int):
        g = np.asarray(g, dtype=float)
        super().__init__(n_particles, g.shape[0], lipschitz_constant=0.0,
                         sup_norm_bound=float(np.linalg.norm(g)))
        self.g = g

    def _eval(self, t, X):
        return np.broadcast_to(self.g, X.shape).copy()

    def eval_batch(self, ts, Xs):
        return np.broadcast_to(self.g, Xs.shape).copy()

    def to_dict(self):
        return {"kind": "constant_gravity", "g": self.g.tolist()}


class PairwiseSpring(ForceField):
    """Linear springs between every particle pair.

    For rest_length 0 the field is linear with exact Lipschitz constant
    2 * stiffness * (n - 1) in the max-over-particles norm; with a positive
    rest length the unit-vector term is unbounded near coincident particles,
    so no global constant is declared.
    """

    def __init__(self, stiffness: float, rest_length: float,
                 n_particles: int, dim: int):
        lip = 2.0 * stiffness * (n_particles - 1) if rest_length == 0.0 else None
        super().__init__(n_particles, dim, lipschitz_constant=lip)
        self.stiffness = float(stiffness)
        self.rest_length = float(rest_length)

    def _eval(self, t, X):
        return self.eval_batch(np.zeros(1), X[None])[0]

    def eval_batch(self, ts, Xs):
        diff = Xs[:, :, None, :] - Xs[:, None, :, :]   # (K, n, n, m), x_i - x_j
        dist = np.linalg.norm(diff, axis=3)
        n = Xs.shape[1]
        eye = np.eye(n, dtype=bool)
        dist[:, eye] = 1.0
        unit = diff / dist[:, :, :, None]
        mag = self.stiffness * (dist - self.rest_length)
        mag[:, eye] = 0.0
        mag[dist < 1e-14] = 0.0
        return -(mag[:, :, :, None] * unit).sum(axis=2)

    def to_dict(self):
        return {"kind": "pairwise_spring", "stiffness": self.stiffness,
                "rest_length": self.rest_length}


class PairwiseRepulsion(ForceField):
    """Smoothly cut-off pair repulsion: magnitude strength*u*(1-u^2)^2, u=r/cutoff.

    The kernel vanishes at contact and beyond the cutoff, keeping the field
    continuous and bounded; both metadata bounds are exact.
    """

    _W_MAX = (1.0 / np.sqrt(5.0)) * (1.0 - 0.2) ** 2  # max of u(1-u^2)^2 on [0,1]

    def __init__(self, strength: float, cutoff: float, n_particles: int, dim: int):
        sup = strength * self._W_MAX * (n_particles - 1)
        lip = 2.0 * strength / cutoff * (n_particles - 1)
        super().__init__(n_particles, dim, lipschitz_constant=lip, sup_norm_bound=sup)
        self.strength = float(strength)
        self.cutoff = float(cutoff)

    def _eval(self, t, X):
        return self.eval_batch(np.zeros(1), X[None])[0]

    def eval_batch(self, ts, Xs):
        diff = Xs[:, :, None, :] - Xs[:, None, :, :]
        dist = np.linalg.norm(diff, axis=3)
        n = Xs.shape[1]
        eye = np.eye(n, dtype=bool)
        dist[:, eye] = 1.0
        u = dist / self.cutoff
        w = np.where(u < 1.0, u * (1.0 - u ** 2) ** 2, 0.0)
        w[:, eye] = 0.0
        unit = diff / dist[:, :, :, None]
        return self.strength * (w[:, :, :, None] * unit).sum(axis=2)

    def to_dict(self):
        return {"kind": "pairwise_repulsion", "strength": self.strength,
                "cutoff": self.cutoff}


class TimeScalar(ForceField):
    """Scalar function of time applied along a fixed direction to all particles.

    The scalar comes from a closed-form preset or a (t, value) table with
    linear interpolation; tabulated data is immutable after load.
    """

    def __init__(self, scalar_fn, direction, n_particles: int,
                 sup_norm_bound: float | None = None,
                 horizon: float | None = None):
        direction = np.asarray(direction, dtype=float)
        super().__init__(n_particles, direction.shape[0], lipschitz_constant=0.0,
                         sup_norm_bound=sup_norm_bound, horizon=horizon)
        self.direction = direction
        self.scalar_fn = scalar_fn

    def _eval(self, t, X):
        return float(self.scalar_fn(t)) * np.broadcast_to(self.direction, X.shape)

    def eval_batch(self, ts, Xs):
        vals = np.asarray(self.scalar_fn(np.asarray(ts)), dtype=float)
        if vals.ndim == 0:
            vals = np.full(len(ts), float(vals))
        return vals[:, None, None] * np.broadcast_to(self.direction, Xs.shape)

    @classmethod
    def from_table(cls, times, values, direction, n_particles: int):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or len(times) < 2:
            raise ConfigError("time table needs matching 1-D times and values")
        if np.any(np.diff(times) <= 0):
            raise ConfigError("table times must be strictly increasing")
        times.setflags(write=False)
        values.setflags(write=False)

        def fn(t):
            return np.interp(t, times, values)

        amp = float(np.max(np.abs(values))) * float(np.linalg.norm(direction))
        obj = cls(fn, direction, n_particles, sup_norm_bound=amp)
        obj._table = (times, values)
        return obj

    def to_dict(self):
        return {"kind": "time_scalar", "direction": self.direction.tolist()}


def estimate_lipschitz(ff: ForceField, n_samples: int, rng_seed: int,
                       box=None, t_range=(0.0, 1.0)) -> float:
    """Max sampled difference quotient |F(t,X)-F(t,Y)| / ||X-Y||.

    ||.|| is the max over particles of the Euclidean norm.  The result is a
    lower bound on the true Lipschitz constant; the declared constant, when
    present, must dominate it.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    rng = np.random.default_rng(rng_seed)
    n, m = ff.n_particles, ff.dim
    if box is None:
        lo, hi = np.zeros(m), np.ones(m)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in box)
    best = 0.0
    ts = rng.uniform(t_range[0], t_range[1], size=n_samples)
    for i in range(n_samples):
        X = rng.uniform(lo, hi, size=(n, m))
        Y = rng.uniform(lo, hi, size=(n, m))
        gap = np.max(np.linalg.norm(X - Y, axis=1))
        if gap < 1e-12:
            continue
        dF = np.linalg.norm(ff(ts[i], X) - ff(ts[i], Y), axis=1)
        best = max(best, float(np.max(dF)) / gap)
    return best


def force_from_config(cfg: dict, n_particles: int, dim: int) -> ForceField:
    """Build a force field from a scenario-config table."""
    kind = cfg.get("kind")
    try:
        if kind == "zero":
            return Zero(n_particles, dim)
        if kind == "constant_gravity":
            g = np.asarray(cfg["g"], dtype=float)
            if g.shape[0] != dim:
                raise ConfigError(f"gravity vector has dim {g.shape[0]}, expected {dim}")
            return ConstantGravity(g, n_particles)
        if kind == "pairwise_spring":
            return PairwiseSpring(cfg["stiffness"], cfg.get("rest_length", 0.0),
                                  n_particles, dim)
        if kind == "pairwise_repulsion":
            return PairwiseRepulsion(cfg["strength"], cfg["cutoff"], n_particles, dim)
        if kind == "time_scalar":
            direction = cfg["direction"]
            if "csv" in cfg:
                data = np.loadtxt(cfg["csv"], delimiter=",", ndmin=2)
                return TimeScalar.from_table(data[:, 0], data[:, 1], direction,
                                             n_particles)
            if "times" in cfg:
                return TimeScalar.from_table(cfg["times"], cfg["values"], direction,
                                             n_particles)
            preset = cfg.get("preset", "constant")
            amp = float(cfg.get("amplitude", 1.0))
            if preset == "constant":
                return TimeScalar(lambda t: amp, direction, n_particles,
                                  sup_norm_bound=abs(amp))
            if preset == "sin":
                omega = float(cfg.get("omega", 1.0))
                phase = float(cfg.get("phase", 0.0))
                return TimeScalar(lambda t: amp * np.sin(omega * t + phase),
                                  direction, n_particles, sup_norm_bound=abs(amp))
            raise ConfigError(f"unknown time_scalar preset {preset!r}")
    except KeyError as exc:
        raise ConfigError(f"force kind {kind!r} is missing field {exc}") from exc
    raise ConfigError(f"unknown force kind {kind!r}")
