import dataclasses

import numpy as np
import pytest

from reflectsim.counterexample import (auxiliary_bounce, choose_scaling,
                                       counterexample_force,
                                       counterexample_solution, default_bump,
                                       make_params, profile_to_csv,
                                       verify_counterexample)
from reflectsim.errors import ConstructionError, HorizonError


def simpson_oracle(f, a, b, n0=64):
    """Composite Simpson with refinement until the value stabilizes."""
    prev = None
    n = n0
    for _ in range(16):
        xs = np.linspace(a, b, n + 1)
        ys = np.asarray(f(xs))
        val = (b - a) / (3 * n) * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum()
                                   + 2 * ys[2:-2:2].sum())
        if prev is not None and abs(val - prev) < 1e-13:
            return val
        prev = val
        n *= 2
    return val


@pytest.fixture(scope="module")
def params():
    return make_params(L=2)


class TestDefaultBump:
    def test_outside_support(self):
        assert default_bump(0.25) == 0.0
        assert default_bump(1.0) == 0.0
        assert default_bump(0.5) == 0.0

    def test_nonnegative_and_smooth_scale(self):
        s = np.linspace(0, 1, 1001)
        f = default_bump(s)
        assert np.all(f >= 0)
        assert f.max() > 0

    def test_surplus_integral_positive(self):
        val = simpson_oracle(lambda s: (2 * s - 1) * default_bump(s), 0.0, 1.0)
        assert val > 0


class TestAuxiliaryBounce:
    def test_moments_match_independent_quadrature(self):
        aux = auxiliary_bounce()
        v0 = simpson_oracle(lambda s: (1 - s) * default_bump(s), 0.0, 1.0)
        v1 = simpson_oracle(lambda s: s * default_bump(s), 0.0, 1.0)
        assert aux.v0 == pytest.approx(v0, rel=1e-9)
        assert aux.v1 == pytest.approx(v1, rel=1e-9)

    def test_arc_boundary_conditions(self):
        aux = auxiliary_bounce()
        assert abs(aux.z(0.0)) <= 1e-15
        assert abs(aux.z(1.0)) <= 1e-12 * max(aux.v0, 1e-30) / aux.v0
        assert aux.dz(0.0) == pytest.approx(aux.v0, rel=1e-12)
        assert aux.dz(1.0) == pytest.approx(-aux.v1, rel=1e-9)

    def test_positive_inside(self):
        aux = auxiliary_bounce()
        tau = np.linspace(0.01, 0.99, 199)
        assert np.all(aux.z(tau) > 0)

    def test_speed_surplus(self):
        aux = auxiliary_bounce()
        assert aux.v1 - aux.v0 == pytest.approx(aux.surplus, rel=1e-9)
        assert aux.surplus > 0

    def test_left_biased_bump_rejected(self):
        def left_bump(s):
            s = np.asarray(s, dtype=float)
            out = np.zeros_like(s)
            inside = (s > 0.0) & (s < 0.5)
            si = s[inside]
            out[inside] = np.exp(-1.0 / (si * (0.5 - si)))
            return out

        with pytest.raises(ConstructionError):
            auxiliary_bounce(left_bump)


class TestChooseScaling:
    def test_reference_values_order_two(self):
        a, b = choose_scaling(1.0, 2.0, L=2)
        assert a == pytest.approx(0.75)
        assert b == pytest.approx(0.375)
        assert b < a ** 2 < 1

    def test_reference_values_order_one(self):
        a, b = choose_scaling(1.0, 2.0, L=1)
        assert a == pytest.approx(0.75)
        assert b == pytest.approx(0.375)
        assert b < a

    def test_equal_speeds_impossible(self):
        with pytest.raises(ConstructionError):
            choose_scaling(1.0, 1.0, L=2)

    def test_matching_condition(self, params):
        assert params.v0 == pytest.approx(params.b / params.a * params.v1,
                                          rel=1e-12)


class TestForce:
    def test_zero_before_origin(self, params):
        assert counterexample_force(-0.5, params) == 0.0
        assert counterexample_force(0.0, params) == 0.0

    def test_outermost_interval_values(self, params):
        # midpoint of the outermost arc maps to tau = 1/2
        assert counterexample_force(params.T_mid, params) == pytest.approx(
            -default_bump(0.5), abs=1e-300)
        # peak of the bump on the n=1 arc carries one scaling factor
        t1 = params.t_left(1)
        scale = params.b / params.a ** 2
        assert counterexample_force(t1 + 0.75 * params.a, params) == pytest.approx(
            -scale * default_bump(0.75), rel=1e-12)

    def test_nonpositive_everywhere(self, params):
        ts = np.linspace(-1.0, params.T_mid, 4001)
        assert np.max(counterexample_force(ts, params)) <= 0.0

    def test_geometric_envelope(self, params):
        sup_f = params.aux.sup_f()
        for n in range(1, 8):
            i0 = params.t_left(n)
            ts = i0 + np.linspace(0.01, 0.99, 101) * params.a ** n
            Fn = np.abs(counterexample_force(ts, params))
            bound = (params.b / params.a ** 2) ** n * sup_f
            assert np.max(Fn) <= bound * (1 + 1e-12)

    def test_horizon_guard(self, params):
        with pytest.raises(HorizonError):
            counterexample_force(params.T_mid + 1.0, params)


class TestSolution:
    def test_zero_before_origin(self, params):
        assert counterexample_solution(-0.5, params) == (0.0, 0.0)

    def test_velocity_scaling_at_bounces(self, params):
        q = params.b / params.a
        for n in range(10):
            tn = params.t_left(n)
            _, v = counterexample_solution(tn + 1e-4 * params.a ** n, params)
            assert v == pytest.approx(q ** n * params.v0, rel=1e-10)

    def test_launch_speed_vanishes_at_accumulation(self, params):
        # right-limit velocity at t -> 0+ along bounce times decays to zero
        q = params.b / params.a
        speeds = []
        for n in [5, 15, 30]:
            tn = params.t_left(n)
            _, v = counterexample_solution(tn + 1e-4 * params.a ** n, params)
            speeds.append(abs(v))
        assert speeds[1] < speeds[0] * q ** 5
        assert speeds[2] < 1e-12 * params.v0

    def test_sup_envelope_decays_geometrically(self, params):
        sup_z = params.aux.sup_z()
        for n in range(1, 8):
            i0 = params.t_left(n)
            ts = i0 + np.linspace(0, 1, 201) * params.a ** n
            x, _ = counterexample_solution(ts, params)
            assert np.max(x) <= sup_z * params.b ** n * (1 + 1e-10)
            assert np.min(x) >= 0.0


class TestCertificate:
    def test_default_construction_passes(self, params):
        rep = verify_counterexample(params, n_max=10)
        failures = [c.name for c in rep.checks if not c.passed]
        assert failures == []
        assert rep.passed

    def test_perturbed_scaling_fails_reflection(self, params):
        bad = dataclasses.replace(params, b=1.05 * params.b)
        rep = verify_counterexample(bad, n_max=5)
        by_name = {c.name: c for c in rep.checks}
        assert not by_name["reflection_rule_interfaces"].passed
        assert not rep.passed

    def test_vacuous_horizon(self, params):
        with pytest.raises(ValueError):
            verify_counterexample(params, n_max=0)

    def test_report_serializes(self, tmp_path, params):
        rep = verify_counterexample(params, n_max=3)
        rep.to_json(tmp_path / "cert.json")
        import json
        data = json.loads((tmp_path / "cert.json").read_text())
        assert data["passed"] == rep.passed
        assert len(data["checks"]) == len(rep.checks)


class TestProfileExport:
    def test_csv(self, tmp_path, params):
        p = tmp_path / "profile.csv"
        profile_to_csv(p, params, n_uniform=200, n_per_interval=9, n_max=3)
        lines = p.read_text().splitlines()
        assert lines[0] == "t,F,x,v,n_interval"
        assert len(lines) > 200


class TestSymmetricBumpRejected:
    def test_symmetric_bump_has_no_speed_surplus(self):
        def symmetric(s):
            s = np.asarray(s, dtype=float)
            out = np.zeros_like(s)
            inside = (s > 0.0) & (s < 1.0)
            si = s[inside]
            out[inside] = np.exp(-1.0 / (si * (1.0 - si)))
            return out

        # odd-about-1/2 integrand: the surplus vanishes, so the scaled
        # copies cannot be glued; construction must refuse
        with pytest.raises(ConstructionError):
            auxiliary_bounce(symmetric)
