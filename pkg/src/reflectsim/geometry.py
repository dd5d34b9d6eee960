"""Signed-distance calculus for the confinement domain.

Each domain exposes the signed distance d_s (negative inside, positive
outside), its gradient and Hessian, the one-sided distance d = max(d_s, 0),
the combined field d*grad(d) used by the stiff-wall approximation, and the
orthogonal projection onto the boundary.  These are exact closed forms for
the built-in shapes and Newton-projected values for implicit level sets.

All queries accept a single point of shape (m,) or a batch of shape (N, m).
The calculus is only trusted inside the tubular neighborhood of the boundary
(|d_s| < tube_radius); solvers guard against leaving it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainQueryError, TubeExitError


def _as_batch(x, dim: int):
    """Coerce a point or point batch to shape (N, dim); report if it was single."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise ValueError(f"scalar point given for a {dim}-dimensional domain")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"point has dimension {arr.shape[0]}, expected {dim}")
        return arr.reshape(1, dim), True
    if arr.ndim == 2 and arr.shape[1] == dim:
        return arr, False
    raise ValueError(f"cannot interpret array of shape {arr.shape} as points in R^{dim}")


@dataclass(frozen=True)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    def contains(self, P: np.ndarray) -> np.ndarray:
        return np.all((P >= self.lo) & (P <= self.hi), axis=-1)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


class DomainGeometry:
    """Base class: bundles the distance oracle of one confinement domain.

    Subclasses implement the unchecked batch kernels ``_sd``, ``_grad`` and
    ``_hess``; the public methods add bounding-box/tube guards and handle
    single points transparently.  All queries are pure and thread-safe.
    """

    kind = "abstract"

    def __init__(self, dim: int, tube_radius: float, bounding_box: BoundingBox,
                 tol_geom: float = 1e-8):
        if tube_radius <= 0:
            raise ValueError("tube_radius must be positive")
        self.dim = dim
        self.tube_radius = float(tube_radius)
        self.bounding_box = bounding_box
        self.tol_geom = float(tol_geom)

    # ---- kernels (batch in, batch out, no guards) -------------------------
    def _sd(self, P: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _sd_estimate(self, P: np.ndarray) -> np.ndarray:
        """Cheap signed-distance proxy used to pre-filter rejection sampling."""
        return self._sd(P)

    def _grad(self, P: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _hess(self, P: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _project(self, P: np.ndarray) -> np.ndarray:
        d = self._sd(P)
        return P - d[:, None] * self._grad(P)

    # ---- public API --------------------------------------------------------
    def _check_box(self, P: np.ndarray) -> None:
        inside = self.bounding_box.contains(P)
        if not np.all(inside):
            bad = P[~inside][0]
            raise DomainQueryError(
                f"point {bad} is outside the bounding box "
                f"[{self.bounding_box.lo}, {self.bounding_box.hi}]")

    def signed_distance(self, x):
        P, single = _as_batch(x, self.dim)
        self._check_box(P)
        d = self._sd(P)
        return float(d[0]) if single else d

    def unconstrained_distance(self, x):
        P, single = _as_batch(x, self.dim)
        self._check_box(P)
        d = np.maximum(self._sd(P), 0.0)
        return float(d[0]) if single else d

    def gradient(self, x):
        P, single = _as_batch(x, self.dim)
        self._check_box(P)
        g = self._grad(P)
        return g[0] if single else g

    def hessian(self, x):
        P, single = _as_batch(x, self.dim)
        self._check_box(P)
        H = self._hess(P)
        return H[0] if single else H

    def normal(self, x):
        """Outward unit normal; meaningful on and near the boundary."""
        return self.gradient(x)

    def d_grad_d(self, x):
        """The combined field d*grad(d): zero on the closure, d_s*grad(d_s) outside."""
        P, single = _as_batch(x, self.dim)
        self._check_box(P)
        d = self._sd(P)
        over = d >= self.tube_radius
        if np.any(over):
            raise TubeExitError(
                f"point at distance {float(np.max(d)):.3e} is beyond the tube "
                f"radius {self.tube_radius:.3e}")
        out = np.zeros_like(P)
        mask = d > 0
        if np.any(mask):
            out[mask] = d[mask, None] * self._grad(P[mask])
        return out[0] if single else out

    def project_to_boundary(self, x):
        P, single = _as_batch(x, self.dim)
        self._check_box(P)
        d = self._sd(P)
        if np.any(np.abs(d) >= self.tube_radius):
            raise TubeExitError(
                f"projection requested at |d_s| = {float(np.max(np.abs(d))):.3e} "
                f">= tube radius {self.tube_radius:.3e}")
        Q = self._project(P)
        return Q[0] if single else Q

    def contains(self, x):
        P, single = _as_batch(x, self.dim)
        inside = self._sd(P) <= 0.0
        return bool(inside[0]) if single else inside

    def scan_distance(self, P: np.ndarray) -> np.ndarray:
        """Signed distance for event scans: out-of-box points count as outside.

        Any point outside the bounding box is certainly outside the closure
        (the box contains the tube), so it is assigned +tube_radius.  No
        exception is raised; this is the only unguarded query path.
        """
        out = np.full(P.shape[0], self.tube_radius)
        inb = self.bounding_box.contains(P)
        if np.any(inb):
            out[inb] = self._sd(P[inb])
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "tube_radius": self.tube_radius}


class Interval(DomainGeometry):
    """One-dimensional interval (lo, hi); boundary = the two endpoints."""

    kind = "interval"

    def __init__(self, lo: float, hi: float, tol_geom: float = 1e-8):
        if not hi > lo:
            raise ValueError("need hi > lo")
        self.lo = float(lo)
        self.hi = float(hi)
        half = (hi - lo) / 2.0
        pad = 1.5 * half
        box = BoundingBox(np.array([lo - pad]), np.array([hi + pad]))
        super().__init__(1, half, box, tol_geom)

    def _sd(self, P):
        x = P[:, 0]
        return np.maximum(self.lo - x, x - self.hi)

    def _grad(self, P):
        x = P[:, 0]
        g = np.where(self.lo - x > x - self.hi, -1.0, 1.0)
        return g[:, None]

    def _hess(self, P):
        return np.zeros((P.shape[0], 1, 1))

    def to_dict(self):
        d = super().to_dict()
        d.update(lo=self.lo, hi=self.hi)
        return d


class Ball(DomainGeometry):
    """Euclidean ball of given center and radius."""

    kind = "ball"

    def __init__(self, center, radius: float, tol_geom: float = 1e-8):
        center = np.asarray(center, dtype=float)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.center = center
        self.radius = float(radius)
        pad = 1.5 * radius  # box strictly contains the tube neighborhood
        box = BoundingBox(center - (radius + pad), center + (radius + pad))
        super().__init__(center.shape[0], radius, box, tol_geom)

    def _radial(self, P):
        rel = P - self.center
        r = np.linalg.norm(rel, axis=1)
        safe = np.maximum(r, 1e-300)
        u = rel / safe[:, None]
        # direction at the exact center is arbitrary; pick the first axis
        deg = r < 1e-13
        if np.any(deg):
            u[deg] = 0.0
            u[deg, 0] = 1.0
        return r, u

    def _sd(self, P):
        r, _ = self._radial(P)
        return r - self.radius

    def _grad(self, P):
        _, u = self._radial(P)
        return u

    def _hess(self, P):
        r, u = self._radial(P)
        eye = np.eye(self.dim)
        safe = np.maximum(r, 1e-13)
        return (eye[None, :, :] - u[:, :, None] * u[:, None, :]) / safe[:, None, None]

    def to_dict(self):
        d = super().to_dict()
        d.update(center=self.center.tolist(), radius=self.radius)
        return d


class Annulus(DomainGeometry):
    """Region between two concentric spheres: r_in < |x - c| < r_out (nonconvex)."""

    kind = "annulus"

    def __init__(self, center, r_in: float, r_out: float, tol_geom: float = 1e-8):
        center = np.asarray(center, dtype=float)
        if not 0 < r_in < r_out:
            raise ValueError("need 0 < r_in < r_out")
        self.center = center
        self.r_in = float(r_in)
        self.r_out = float(r_out)
        tube = min(r_in, (r_out - r_in) / 2.0)
        pad = 1.5 * tube
        box = BoundingBox(center - (r_out + pad), center + (r_out + pad))
        super().__init__(center.shape[0], tube, box, tol_geom)

    def _radial(self, P):
        rel = P - self.center
        r = np.linalg.norm(rel, axis=1)
        safe = np.maximum(r, 1e-300)
        u = rel / safe[:, None]
        deg = r < 1e-13
        if np.any(deg):
            u[deg] = 0.0
            u[deg, 0] = 1.0
        return r, u

    def _branch(self, r):
        """True where the inner boundary is the nearest one."""
        return r < (self.r_in + self.r_out) / 2.0

    def _sd(self, P):
        r, _ = self._radial(P)
        return np.maximum(self.r_in - r, r - self.r_out)

    def _grad(self, P):
        r, u = self._radial(P)
        sign = np.where(self._branch(r), -1.0, 1.0)
        return sign[:, None] * u

    def _hess(self, P):
        r, u = self._radial(P)
        eye = np.eye(self.dim)
        proj = eye[None, :, :] - u[:, :, None] * u[:, None, :]
        sign = np.where(self._branch(r), -1.0, 1.0)
        safe = np.maximum(r, 1e-13)
        return sign[:, None, None] * proj / safe[:, None, None]

    def to_dict(self):
        d = super().to_dict()
        d.update(center=self.center.tolist(), r_in=self.r_in, r_out=self.r_out)
        return d


class HalfSpaceTruncated(DomainGeometry):
    """Half-space {x . n < offset} with a box marking the region of interest.

    The far sides of the box stand in for the boundedness the theory assumes;
    they are placed outside any trajectory's reach and carry no dynamics.  The
    distance calculus is the exact (globally smooth) half-space one.
    """

    kind = "halfspace"

    def __init__(self, normal, offset: float, box_lo, box_hi,
                 tube_radius: float | None = None, tol_geom: float = 1e-8):
        normal = np.asarray(normal, dtype=float)
        nn = np.linalg.norm(normal)
        if nn == 0:
            raise ValueError("normal must be nonzero")
        self.n_hat = normal / nn
        self.offset = float(offset)
        lo = np.asarray(box_lo, dtype=float)
        hi = np.asarray(box_hi, dtype=float)
        box = BoundingBox(lo, hi)
        if tube_radius is None:
            tube_radius = 0.25 * float(np.min(hi - lo))
        super().__init__(len(lo), tube_radius, box, tol_geom)

    def _sd(self, P):
        return P @ self.n_hat - self.offset

    def _grad(self, P):
        return np.broadcast_to(self.n_hat, P.shape).copy()

    def _hess(self, P):
        return np.zeros((P.shape[0], self.dim, self.dim))

    def to_dict(self):
        d = super().to_dict()
        d.update(normal=self.n_hat.tolist(), offset=self.offset,
                 box_lo=self.bounding_box.lo.tolist(),
                 box_hi=self.bounding_box.hi.tolist())
        return d


class ImplicitSurface(DomainGeometry):
    """Domain given as the negative region of a level-set function phi.

    The signed distance is computed by a damped Gauss-Newton projection onto
    {phi = 0} (foot-point problem), the gradient is the surface normal at the
    foot point, and the Hessian is a symmetrized central difference of that
    gradient map.  Analytic phi derivatives may be supplied; otherwise they
    are approximated by central differences.
    """

    kind = "implicit"

    def __init__(self, phi, box_lo, box_hi, grad_phi=None, hess_phi=None,
                 tube_radius: float | None = None, fd_step: float | None = None,
                 newton_tol: float = 1e-12, max_iter: int = 50,
                 tol_geom: float = 1e-5):
        lo = np.asarray(box_lo, dtype=float)
        hi = np.asarray(box_hi, dtype=float)
        box = BoundingBox(lo, hi)
        dim = len(lo)
        if tube_radius is None:
            tube_radius = 0.1 * box.diagonal
        super().__init__(dim, tube_radius, box, tol_geom)
        self._phi = phi
        scale = box.diagonal
        self._fd_phi = (fd_step if fd_step is not None else 1e-6 * scale)
        # step for the d_s-level Hessian; balances O(h^2) truncation against
        # newton_tol/h projection noise
        self._fd_hess = (max(newton_tol, 1e-14) ** (1.0 / 3.0)
                         * max(self.tube_radius, 0.01 * scale))
        self.newton_tol = newton_tol
        self.max_iter = max_iter
        self._grad_phi = grad_phi if grad_phi is not None else self._fd_grad_phi
        self._hess_phi = hess_phi if hess_phi is not None else self._fd_hess_phi

    # ---- level-set derivatives --------------------------------------------
    def _fd_grad_phi(self, P):
        h = self._fd_phi
        G = np.empty_like(P)
        for j in range(self.dim):
            E = np.zeros(self.dim)
            E[j] = h
            G[:, j] = (self._phi(P + E) - self._phi(P - E)) / (2 * h)
        return G

    def _fd_hess_phi(self, P):
        h = self._fd_phi * 10
        H = np.empty((P.shape[0], self.dim, self.dim))
        for j in range(self.dim):
            E = np.zeros(self.dim)
            E[j] = h
            H[:, :, j] = (self._grad_phi(P + E) - self._grad_phi(P - E)) / (2 * h)
        return 0.5 * (H + np.swapaxes(H, 1, 2))

    # ---- foot-point projection ----------------------------------------------
    def _foot(self, P):
        """Batched foot-point solve: first-order warm start, then Gauss-Newton."""
        m = self.dim
        Y = P.copy()
        # cheap surface projection along the level-set gradient
        for _ in range(8):
            val = self._phi(Y)
            g = self._grad_phi(Y)
            gg = np.maximum(np.einsum("ij,ij->i", g, g), 1e-300)
            Y = Y - (val / gg)[:, None] * g
            if np.max(np.abs(val)) < 1e-14:
                break
        g = self._grad_phi(Y)
        gg = np.maximum(np.einsum("ij,ij->i", g, g), 1e-300)
        lam = np.einsum("ij,ij->i", P - Y, g) / gg

        def residual(Pc, Yc, lamc):
            gc = self._grad_phi(Yc)
            R1 = Yc - Pc + lamc[:, None] * gc
            R2 = self._phi(Yc)
            return R1, R2, gc, np.sqrt(np.einsum("ij,ij->i", R1, R1) + R2 ** 2)

        R1, R2, g, rnorm = residual(P, Y, lam)
        eye = np.eye(m)
        idx = np.nonzero(rnorm > self.newton_tol)[0]
        for _ in range(self.max_iter):
            if not len(idx):
                break
            Pa, Ya, la = P[idx], Y[idx], lam[idx]
            ga, R1a, R2a = g[idx], R1[idx], R2[idx]
            H = self._hess_phi(Ya)
            J = np.zeros((len(idx), m + 1, m + 1))
            J[:, :m, :m] = eye[None] + la[:, None, None] * H
            J[:, :m, m] = ga
            J[:, m, :m] = ga
            rhs = np.concatenate([-R1a, -R2a[:, None]], axis=1)
            try:
                step = np.linalg.solve(J, rhs[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                gga = np.maximum(np.einsum("ij,ij->i", ga, ga), 1e-300)
                step = np.concatenate(
                    [-(R2a / gga)[:, None] * ga, np.zeros((len(idx), 1))], axis=1)
            alpha = np.ones(len(idx))
            ra = rnorm[idx]
            Yn, lamn = Ya, la
            for _ in range(10):
                Yn = Ya + alpha[:, None] * step[:, :m]
                lamn = la + alpha * step[:, m]
                _, _, _, rn = residual(Pa, Yn, lamn)
                worse = (rn > ra) & (alpha > 1e-6)
                if not np.any(worse):
                    break
                alpha = np.where(worse, alpha / 2, alpha)
            Y[idx], lam[idx] = Yn, lamn
            R1n, R2n, gn, rn = residual(Pa, Yn, lamn)
            R1[idx], R2[idx], g[idx], rnorm[idx] = R1n, R2n, gn, rn
            idx = idx[rn > self.newton_tol]
        return Y

    def _sd(self, P):
        Y = self._foot(P)
        dist = np.linalg.norm(P - Y, axis=1)
        return np.where(self._phi(P) >= 0, dist, -dist)

    def _grad(self, P):
        Y = self._foot(P)
        g = self._grad_phi(Y)
        return g / np.linalg.norm(g, axis=1)[:, None]

    def _hess(self, P):
        h = self._fd_hess
        H = np.empty((P.shape[0], self.dim, self.dim))
        for j in range(self.dim):
            E = np.zeros(self.dim)
            E[j] = h
            H[:, :, j] = (self._grad(P + E) - self._grad(P - E)) / (2 * h)
        return 0.5 * (H + np.swapaxes(H, 1, 2))

    def _project(self, P):
        return self._foot(P)

    def _sd_estimate(self, P):
        val = self._phi(P)
        g = self._grad_phi(P)
        gn = np.maximum(np.linalg.norm(g, axis=1), 1e-12)
        return val / gn


def implicit_ellipse(semi_axes, center=None, tube_radius: float | None = None,
                     tol_geom: float = 1e-5, analytic: bool = True) -> ImplicitSurface:
    """Ellipse/ellipsoid {sum ((x_i-c_i)/a_i)^2 < 1} as an implicit domain."""
    axes = np.asarray(semi_axes, dtype=float)
    dim = len(axes)
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    inv2 = 1.0 / axes ** 2

    def phi(P):
        return np.einsum("ij,j->i", (P - c) ** 2, inv2) - 1.0

    def grad_phi(P):
        return 2.0 * (P - c) * inv2

    def hess_phi(P):
        H = np.zeros((P.shape[0], dim, dim))
        H[:] = np.diag(2.0 * inv2)
        return H

    if tube_radius is None:
        # reach of an ellipse boundary: smallest radius of curvature
        tube_radius = 0.8 * float(np.min(axes) ** 2 / np.max(axes))
    pad = max(tube_radius * 2, 0.5 * float(np.max(axes)))
    return ImplicitSurface(
        phi, c - axes - pad, c + axes + pad,
        grad_phi=grad_phi if analytic else None,
        hess_phi=hess_phi if analytic else None,
        tube_radius=tube_radius, tol_geom=tol_geom)


# ---------------------------------------------------------------------------
# self-validation
# ---------------------------------------------------------------------------

@dataclass
class GeometryCheck:
    name: str
    max_residual: float
    tolerance: float
    passed: bool


@dataclass
class GeometryReport:
    domain: dict
    n_samples: int
    rng_seed: int
    checks: list[GeometryCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "n_samples": self.n_samples,
            "rng_seed": self.rng_seed,
            "passed": self.passed,
            "checks": [
                {"check_name": c.name, "max_residual": c.max_residual,
                 "tolerance": c.tolerance, "pass": c.passed}
                for c in self.checks
            ],
        }


def sample_tube_points(dom: DomainGeometry, n: int, rng, band: float = 0.9) -> np.ndarray:
    """Rejection-sample n points with |d_s| < band * tube_radius."""
    lo, hi = dom.bounding_box.lo, dom.bounding_box.hi
    out = []
    got = 0
    for _ in range(500):
        draw = rng.uniform(lo, hi, size=(max(4 * n, 256), dom.dim))
        rough = np.abs(dom._sd_estimate(draw)) < 2.0 * band * dom.tube_radius
        draw = draw[rough]
        if not len(draw):
            continue
        d = dom._sd(draw)
        keep = np.abs(d) < band * dom.tube_radius
        pts = draw[keep]
        if len(pts):
            out.append(pts)
            got += len(pts)
        if got >= n:
            break
    if got < n:
        raise RuntimeError("tube sampling failed; domain too thin for its box")
    return np.concatenate(out)[:n]


def validate_geometry(dom: DomainGeometry, n_samples: int, rng_seed: int) -> GeometryReport:
    """Check the distance-calculus identities on random tube points.

    Residuals checked (all should vanish in the tube): the eikonal property
    | |grad d_s| - 1 |, the Hessian-gradient annihilation |H g|, the projection
    differential annihilation |(I - g g^T - d_s H) g|, the projected point
    lying on the boundary |d_s(P(x))|, and the round trip
    |P(x) + d_s(x) n(P(x)) - x|.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    P = sample_tube_points(dom, n_samples, rng)
    d = dom._sd(P)
    g = dom._grad(P)
    H = dom._hess(P)

    eik = np.abs(np.linalg.norm(g, axis=1) - 1.0)
    hg = np.linalg.norm(np.einsum("nij,nj->ni", H, g), axis=1)
    dP = (g - np.einsum("ni,nj,nj->ni", g, g, g)
          - d[:, None] * np.einsum("nij,nj->ni", H, g))
    ann = np.linalg.norm(dP, axis=1)
    Q = dom._project(P)
    on_bdry = np.abs(dom._sd(Q))
    nu = dom._grad(Q)
    rt = np.linalg.norm(Q + d[:, None] * nu - P, axis=1)

    tol = dom.tol_geom
    report = GeometryReport(dom.to_dict(), n_samples, rng_seed)
    for name, res in [("eikonal", eik), ("hessian_gradient", hg),
                      ("projection_differential", ann),
                      ("projection_on_boundary", on_bdry),
                      ("round_trip", rt)]:
        mx = float(np.max(res))
        report.checks.append(GeometryCheck(name, mx, tol, mx <= tol))
    return report


# ---------------------------------------------------------------------------
# config factory
# ---------------------------------------------------------------------------

def domain_from_config(cfg: dict) -> DomainGeometry:
    """Build a domain from a scenario-config table."""
    from .errors import ConfigError

    kind = cfg.get("kind")
    try:
        if kind == "interval":
            return Interval(cfg["lo"], cfg["hi"])
        if kind == "ball":
            return Ball(cfg["center"], cfg["radius"])
        if kind == "annulus":
            return Annulus(cfg["center"], cfg["r_in"], cfg["r_out"])
        if kind == "halfspace":
            return HalfSpaceTruncated(cfg["normal"], cfg["offset"],
                                      cfg["box_lo"], cfg["box_hi"],
                                      tube_radius=cfg.get("tube_radius"))
        if kind == "ellipse":
            return implicit_ellipse(cfg["semi_axes"], cfg.get("center"),
                                    tube_radius=cfg.get("tube_radius"))
    except KeyError as exc:
        raise ConfigError(f"domain kind {kind!r} is missing field {exc}") from exc
    raise ConfigError(f"unknown domain kind {kind!r}")
