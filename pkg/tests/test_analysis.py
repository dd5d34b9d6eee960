import numpy as np
import pytest

from conftest import ROOT2
from reflectsim.analysis import (BoundaryMeasure, TestFunction,
                                 compare_trajectories, default_test_functions,
                                 energy_report, extract_measure,
                                 extract_measure_penalty, first_grazing_time,
                                 weak_form_residual)
from reflectsim.errors import ReflectSimError
from reflectsim.exact import SolverOptions, SystemState, simulate_exact
from reflectsim.forces import ConstantGravity, TimeScalar, Zero
from reflectsim.geometry import Interval
from reflectsim.penalty import simulate_penalty


@pytest.fixture(scope="module")
def pinned_run():
    dom = Interval(0.0, 10.0)
    ff = TimeScalar.from_table([0.0, 0.99, 1.01, 2.0], [-1.0, -1.0, 1.0, 1.0],
                               [1.0], 1)
    opts = SolverOptions(initial_modes=("sliding",))
    traj = simulate_exact(dom, ff, SystemState(0.0, [[0.0]], [[0.0]]),
                          T=2.0, opts=opts)
    return traj


class TestExtractMeasure:
    def test_bouncing_ball_atoms(self, ball_drop):
        _, _, traj = ball_drop
        measure = extract_measure(traj)
        atoms = measure.atoms[0]
        assert len(atoms) == 10
        t0, a0, nu0 = atoms[0]
        assert t0 == pytest.approx(ROOT2, abs=1e-8)
        assert a0 == pytest.approx(2 * ROOT2, abs=1e-8)
        np.testing.assert_allclose(nu0, [-1.0])
        assert measure.densities[0] == []

    def test_no_contact_empty(self):
        dom = Interval(0.0, 10.0)
        traj = simulate_exact(dom, Zero(1, 1),
                              SystemState(0.0, [[5.0]], [[0.0]]), T=1.0)
        measure = extract_measure(traj)
        assert measure.total_mass() == 0.0

    def test_pinned_density_is_one(self, pinned_run):
        measure = extract_measure(pinned_run)
        assert measure.atoms[0] == []
        tracks = measure.densities[0]
        assert len(tracks) == 1
        tr = tracks[0]
        sel = (tr.t >= 0.0) & (tr.t <= 0.98)
        np.testing.assert_allclose(tr.values[sel], 1.0, atol=1e-8)
        # total mass = integral of the constraint density up to detachment
        assert measure.total_mass() == pytest.approx(1.0, abs=1e-2)

    def test_penalty_run_rejected(self):
        dom = Interval(0.0, 10.0)
        run = simulate_penalty(dom, Zero(1, 1),
                               SystemState(0.0, [[5.0]], [[0.0]]), T=0.5, k=100.0)
        with pytest.raises(ReflectSimError):
            extract_measure(run.trajectory)

    def test_support_on_contact_set(self, ball_drop):
        dom, _, traj = ball_drop
        measure = extract_measure(traj)
        for t_k, _, _ in measure.atoms[0]:
            x = traj.state_at(t_k, side="left").X[0]
            assert abs(dom.signed_distance(x)) <= 1e-9


class TestExtractMeasurePenalty:
    def test_window_around_first_impact(self):
        dom = Interval(0.0, 10.0)
        ff = ConstantGravity([-1.0], 1)
        run = simulate_penalty(dom, ff, SystemState(0.0, [[1.0]], [[0.0]]),
                               T=3.0, k=1e6)
        mass = extract_measure_penalty(run, (ROOT2 - 0.1, ROOT2 + 0.1))
        assert mass == pytest.approx(2 * ROOT2, abs=1e-2)

    def test_empty_window(self):
        dom = Interval(0.0, 10.0)
        run = simulate_penalty(dom, Zero(1, 1),
                               SystemState(0.0, [[5.0]], [[0.0]]), T=1.0, k=100.0)
        assert extract_measure_penalty(run, (0.2, 0.8)) == 0.0


class TestEnergyReport:
    def test_bouncing_ball(self, ball_drop):
        _, ff, traj = ball_drop
        rep = energy_report(traj, ff, [(0.0, 3 * ROOT2)])
        assert rep.max_abs_residual <= 1e-8

    def test_zero_force_any_window(self, disk_billiard):
        _, ff, traj = disk_billiard
        rep = energy_report(traj, ff, [(0.5, 7.0), (1.0, 30.0)])
        for row in rep.rows:
            assert row.kinetic_gap == pytest.approx(0.0, abs=1e-10)
            assert row.work == pytest.approx(0.0, abs=1e-10)

    def test_additivity(self, ball_drop):
        _, ff, traj = ball_drop
        rep = energy_report(traj, ff, [(0.0, 2.0), (2.0, 5.0), (0.0, 5.0)])
        r1, r2, r12 = rep.rows
        assert r1.residual + r2.residual == pytest.approx(r12.residual, abs=1e-9)
        assert r1.work + r2.work == pytest.approx(r12.work, abs=1e-9)

    def test_export(self, tmp_path, ball_drop):
        _, ff, traj = ball_drop
        rep = energy_report(traj, ff, [(0.0, 1.0)])
        rep.to_json(tmp_path / "e.json")
        rep.to_csv(tmp_path / "e.csv")
        assert (tmp_path / "e.json").exists()
        assert (tmp_path / "e.csv").read_text().startswith("particle,s1,s2,")


class TestWeakForm:
    def test_stationary_particle(self):
        dom = Interval(0.0, 10.0)
        ff = Zero(1, 1)
        traj = simulate_exact(dom, ff, SystemState(0.0, [[5.0]], [[0.0]]), T=2.0)
        measure = extract_measure(traj)
        res = weak_form_residual(traj, measure, ff)
        assert res <= 1e-12

    def test_bouncing_ball(self, ball_drop):
        _, ff, traj = ball_drop
        measure = extract_measure(traj)
        fns = default_test_functions(traj, 20)
        assert len(fns) == 20
        res = weak_form_residual(traj, measure, ff, fns)
        assert res <= 1e-6

    def test_negative_control_zeroed_measure(self, ball_drop):
        _, ff, traj = ball_drop
        empty = BoundaryMeasure((traj.t_start, traj.t_end),
                                [[] for _ in range(traj.n)],
                                [[] for _ in range(traj.n)])
        fns = [TestFunction(ROOT2, 0.5, 0)]
        res = weak_form_residual(traj, empty, ff, fns)
        assert res >= 1e-2

    def test_linearity_in_test_function(self, ball_drop):
        # doubling the bump width is not linear, but residual scales linearly
        # when the measure is deliberately zeroed: check doubling via two
        # identical bumps accumulates the same max
        _, ff, traj = ball_drop
        measure = extract_measure(traj)
        fn = TestFunction(2.0, 0.5, 0)
        r1, rows = weak_form_residual(traj, measure, ff, [fn],
                                      return_details=True)
        assert len(rows) == 1

    def test_sliding_density_closes_weak_form(self, pinned_run):
        measure = extract_measure(pinned_run)
        res = weak_form_residual(pinned_run, measure, pinned_run.force)
        assert res <= 1e-6

    def test_support_guard(self, ball_drop):
        _, ff, traj = ball_drop
        measure = extract_measure(traj)
        with pytest.raises(ReflectSimError):
            weak_form_residual(traj, measure, ff,
                               [TestFunction(0.1, 5.0, 0)])


class TestGrazingTime:
    def test_transversal_run_has_none(self, ball_drop):
        _, _, traj = ball_drop
        assert first_grazing_time(traj) is None

    def test_pinned_is_zero(self, pinned_run):
        assert first_grazing_time(pinned_run) == 0.0

    def test_tangential_landing(self):
        dom = Interval(0.0, 10.0)
        ff = ConstantGravity([-1.0], 1)
        v0 = np.sqrt(18.0)
        traj = simulate_exact(dom, ff, SystemState(0.0, [[1.0]], [[v0]]), T=20.0)
        assert first_grazing_time(traj) == pytest.approx(v0, abs=1e-6)


class TestCompare:
    def test_self_distance_zero(self, ball_drop):
        _, _, traj = ball_drop
        assert compare_trajectories(traj, traj, "sup_pos") == 0.0
        assert compare_trajectories(traj, traj, "l1_vel") == 0.0

    def test_penalty_vs_exact(self, ball_drop):
        dom, ff, _ = ball_drop
        initial = SystemState(0.0, [[1.0]], [[0.0]])
        ref = simulate_exact(dom, ff, initial, T=3.0)
        run = simulate_penalty(dom, ff, initial, T=3.0, k=1e6)
        gap = compare_trajectories(run.trajectory, ref, "sup_pos")
        assert gap <= 1e-2

    def test_lipschitz_sensitivity_window(self, ball_drop):
        # two billiard runs differing by 1e-3 in speed stay O(1e-3) apart
        # before the first bounce (short-horizon stability)
        dom, ff, _ = ball_drop
        a = simulate_exact(dom, ff, SystemState(0.0, [[1.0]], [[0.0]]), T=1.0)
        b = simulate_exact(dom, ff, SystemState(0.0, [[1.0]], [[1e-3]]), T=1.0)
        gap = compare_trajectories(a, b, "sup_pos")
        assert gap <= 2e-3

    def test_horizon_mismatch(self, ball_drop):
        dom, ff, traj = ball_drop
        short = simulate_exact(dom, ff, SystemState(0.0, [[1.0]], [[0.0]]), T=3.0)
        with pytest.raises(ReflectSimError):
            compare_trajectories(traj, short)


class TestSpeedJumpAudit:
    def test_bouncing_ball_continuous_speed(self, ball_drop):
        from reflectsim.analysis import max_speed_jump
        _, _, traj = ball_drop
        assert max_speed_jump(traj) <= 1e-12

    def test_detects_broken_log(self, ball_drop):
        import copy
        from reflectsim.analysis import max_speed_jump
        _, _, traj = ball_drop
        broken = copy.copy(traj)
        broken.events = [copy.copy(e) for e in traj.events]
        broken.events[0].v_plus = broken.events[0].v_plus * 0.5
        assert max_speed_jump(broken) > 0.5


class TestWeakFormLinearity:
    def test_residual_scales_with_amplitude(self, ball_drop):
        _, ff, traj = ball_drop
        empty = BoundaryMeasure((traj.t_start, traj.t_end),
                                [[] for _ in range(traj.n)],
                                [[] for _ in range(traj.n)])
        one = TestFunction(ROOT2, 0.5, 0, amplitude=1.0)
        two = TestFunction(ROOT2, 0.5, 0, amplitude=2.0)
        r1 = weak_form_residual(traj, empty, ff, [one])
        r2 = weak_form_residual(traj, empty, ff, [two])
        assert r2 == pytest.approx(2.0 * r1, rel=1e-12)
