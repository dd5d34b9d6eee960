import numpy as np
import pytest

from reflectsim.exact import SolverOptions, SystemState, simulate_exact
from reflectsim.forces import ConstantGravity, Zero
from reflectsim.geometry import Ball, Interval

ROOT2 = float(np.sqrt(2.0))


def bounce_times_oracle(n: int) -> np.ndarray:
    """Closed-form impact times for the unit drop under F=-1: sqrt(2)*(2j+1)."""
    return ROOT2 * (2 * np.arange(n) + 1)


def ballistic_arc(t, t_prev_bounce, v_up):
    """Position/velocity on a parabola arc after a bounce with upward speed v_up."""
    dt = t - t_prev_bounce
    return v_up * dt - 0.5 * dt ** 2, v_up - dt


def chord_oracle(x0, v0, n_bounces):
    """Straight chords in the unit disk with elastic reflection at the wall."""
    x = np.asarray(x0, dtype=float)
    v = np.asarray(v0, dtype=float)
    t = 0.0
    hits = []
    for _ in range(n_bounces):
        b = float(x @ v)
        vv = float(v @ v)
        s = (-b + np.sqrt(b * b + (1.0 - float(x @ x)) * vv)) / vv
        t += s
        x = x + s * v
        x = x / np.linalg.norm(x)  # renormalize against roundoff
        v_minus = v.copy()
        v = v - 2.0 * float(v @ x) * x
        hits.append((t, x.copy(), v_minus, v.copy()))
    return hits


@pytest.fixture(scope="session")
def ball_drop():
    """Bouncing ball: Interval(0,10), F=-1, x0=1, v0=0, ten bounces."""
    dom = Interval(0.0, 10.0)
    ff = ConstantGravity([-1.0], n_particles=1)
    initial = SystemState(0.0, [[1.0]], [[0.0]])
    opts = SolverOptions()
    traj = simulate_exact(dom, ff, initial, T=28.0, opts=opts)
    return dom, ff, traj


@pytest.fixture(scope="session")
def disk_billiard():
    """Free flight in the unit disk, speed 1, many bounces."""
    dom = Ball((0.0, 0.0), 1.0)
    ff = Zero(1, 2)
    v0 = np.array([1.0, 0.5])
    v0 = v0 / np.linalg.norm(v0)
    initial = SystemState(0.0, [[0.0, 0.0]], [v0])
    traj = simulate_exact(dom, ff, initial, T=42.0, opts=SolverOptions())
    return dom, ff, traj
