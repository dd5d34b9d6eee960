"""Scenario configuration: a TOML file describing one experiment.

Canonical schema (all tables except [domain], [initial] and [run] optional):

    [domain]            # one of the built-in kinds
    kind = "interval"   # interval | ball | annulus | halfspace | ellipse
    lo = 0.0            # interval
    hi = 10.0
    # ball:      center = [0.0, 0.0], radius = 1.0
    # annulus:   center = [...], r_in = 1.0, r_out = 3.0
    # halfspace: normal = [...], offset = 0.0, box_lo = [...], box_hi = [...]
    # ellipse:   semi_axes = [2.0, 1.0], center = [...], tube_radius = 0.3

    [force]
    kind = "constant_gravity"   # zero | constant_gravity | pairwise_spring |
    g = [-1.0]                  # pairwise_repulsion | time_scalar
    # time_scalar: direction = [...] plus either preset = "constant"|"sin"
    # (amplitude, omega, phase), inline times = [...] / values = [...],
    # or csv = "table.csv" with (t, value) rows

    [initial]
    positions  = [[1.0]]        # one row per particle
    velocities = [[0.0]]
    modes = ["free"]            # optional; "free" | "sliding"

    [run]
    horizon = 5.0
    solver = "exact"            # exact | penalty | both
    k = 1e6                     # penalty stiffness (penalty/both)
    k_list = [1e2, 1e3, 1e4]    # penalty-sweep stiffness ladder
    seed = 0

    [solver_options]            # optional overrides, keys as in SolverOptions
    rtol = 1e-10
    graze_policy = "stop"

    [analysis]                  # optional post-processing requests
    energy_windows = [[0.0, 3.0]]
    weak_form = true
    n_test_functions = 20
    measure = true

    [validate]                  # optional: used by the validate subcommand
    n_samples = 10000
    lipschitz_samples = 1000
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .exact import FREE, SLIDING, SolverOptions, SystemState
from .forces import ForceField, force_from_config
from .geometry import DomainGeometry, domain_from_config


@dataclass
class ScenarioConfig:
    domain: DomainGeometry
    force: ForceField
    initial: SystemState
    horizon: float
    solver: str
    k: float | None
    k_list: list[float]
    seed: int
    options: SolverOptions
    analysis: dict = field(default_factory=dict)
    validate: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing [{where}] field {key!r}")
    return table[key]


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse and cross-validate a scenario file."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    for section in ("domain", "initial", "run"):
        if section not in raw:
            raise ConfigError(f"missing [{section}] table")

    dom = domain_from_config(raw["domain"])

    init = raw["initial"]
    X = np.asarray(_require(init, "positions", "initial"), dtype=float)
    V = np.asarray(_require(init, "velocities", "initial"), dtype=float)
    if X.ndim != 2 or X.shape != V.shape:
        raise ConfigError("positions and velocities must be equal-shaped "
                          "lists of per-particle vectors")
    if X.shape[1] != dom.dim:
        raise ConfigError(f"particles have dimension {X.shape[1]}, domain "
                          f"has {dom.dim}")
    n = X.shape[0]

    force_cfg = raw.get("force", {"kind": "zero"})
    ff = force_from_config(force_cfg, n, dom.dim)

    run = raw["run"]
    horizon = float(_require(run, "horizon", "run"))
    if horizon <= 0:
        raise ConfigError("run.horizon must be positive")
    solver = run.get("solver", "exact")
    if solver not in ("exact", "penalty", "both"):
        raise ConfigError(f"unknown solver {solver!r}")
    k = run.get("k")
    k_list = [float(v) for v in run.get("k_list", [])]
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise ConfigError("run.k_list must be strictly increasing")
    seed = int(run.get("seed", 0))

    opts_table = dict(raw.get("solver_options", {}))
    modes = init.get("modes")
    if modes is not None:
        if len(modes) != n or any(md not in (FREE, SLIDING) for md in modes):
            raise ConfigError("initial.modes must list 'free'/'sliding' per particle")
        opts_table["initial_modes"] = tuple(modes)
    known = {f.name for f in dc_fields(SolverOptions)}
    unknown = set(opts_table) - known
    if unknown:
        raise ConfigError(f"unknown solver_options keys: {sorted(unknown)}")
    opts = SolverOptions(**opts_table)
    for name in ("rtol", "atol", "pos_tol", "refl_tol", "sample_dt", "time_tol"):
        if getattr(opts, name) <= 0:
            raise ConfigError(f"solver_options.{name} must be positive")
    if opts.graze_policy not in ("stop", "stick", "reflect"):
        raise ConfigError(f"unknown graze_policy {opts.graze_policy!r}")

    # initial admissibility against the geometry
    d = dom.signed_distance(X)
    for i in range(n):
        if d[i] > opts.pos_tol:
            raise ConfigError(
                f"initial position of particle {i} lies outside the domain "
                f"(signed distance {d[i]:.3e})")

    if solver in ("penalty", "both") and k is None and not k_list:
        raise ConfigError("penalty runs need run.k or run.k_list")

    return ScenarioConfig(
        domain=dom, force=ff, initial=SystemState(0.0, X, V),
        horizon=horizon, solver=solver,
        k=float(k) if k is not None else None, k_list=k_list, seed=seed,
        options=opts, analysis=dict(raw.get("analysis", {})),
        validate=dict(raw.get("validate", {})), raw=raw)
