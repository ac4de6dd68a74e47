import numpy as np
import pytest

from phrcbench.core import Branch, Label, slice_windows
from phrcbench.datagen import gen_multimodal, gen_phrc, split_train_test
from phrcbench.paths import DetourPath, StraightPath, quintic_coeffs, quintic_eval


class TestQuintic:
    def test_minimum_jerk_boundaries(self):
        c = quintic_coeffs(np.zeros(3), np.zeros(3), np.zeros(3),
                           np.array([1.0, 2.0, 3.0]), np.zeros(3), np.zeros(3), 2.0)
        pos0, vel0 = quintic_eval(c, 0.0)
        pos1, vel1 = quintic_eval(c, 2.0)
        np.testing.assert_allclose(pos0, np.zeros(3), atol=1e-12)
        np.testing.assert_allclose(vel0, np.zeros(3), atol=1e-12)
        np.testing.assert_allclose(pos1, [1.0, 2.0, 3.0], atol=1e-9)
        np.testing.assert_allclose(vel1, np.zeros(3), atol=1e-9)

    def test_velocity_boundary_conditions(self):
        v0, v1 = np.array([0.5, 0, 0]), np.array([-0.2, 0.1, 0])
        c = quintic_coeffs(np.zeros(3), v0, np.zeros(3), np.ones(3), v1, np.zeros(3), 1.5)
        np.testing.assert_allclose(quintic_eval(c, 0.0)[1], v0, atol=1e-12)
        np.testing.assert_allclose(quintic_eval(c, 1.5)[1], v1, atol=1e-9)


class TestMultimodal:
    def test_zero_noise_minimum_jerk_boundary_velocities(self):
        trajs = gen_multimodal(3, dt=0.05, seed=0, noise_std=0.0)
        for traj in trajs:
            np.testing.assert_allclose(traj.samples[0].vel, np.zeros(3), atol=1e-9)
            np.testing.assert_allclose(traj.samples[-1].vel, np.zeros(3), atol=1e-9)

    def test_velocity_consistent_with_positions(self):
        # central difference of integrated positions vs the velocity channel:
        # first-order integration -> halving dt halves the mismatch
        def max_err(dt):
            traj = gen_multimodal(1, dt=dt, seed=5, noise_std=0.0, duration=3.0)[0]
            pos = np.array([s.pos for s in traj.samples])
            vel = np.array([s.vel for s in traj.samples])
            cd = (pos[2:] - pos[:-2]) / (2 * dt)
            return np.max(np.abs(cd - vel[1:-1]))

        ratio = max_err(0.05) / max_err(0.025)
        assert ratio == pytest.approx(2.0, rel=0.25)

    def test_fixed_seed_reproducible(self):
        a = gen_multimodal(6, dt=0.05, seed=9, per_family=3)
        b = gen_multimodal(6, dt=0.05, seed=9, per_family=3)
        for t1, t2 in zip(a, b):
            np.testing.assert_array_equal(
                np.array([s.pos for s in t1.samples]), np.array([s.pos for s in t2.samples])
            )

    def test_windows_available_at_default_horizon(self):
        for traj in gen_multimodal(3, dt=0.05, seed=1, per_family=3):
            assert len(slice_windows(traj, 8, 12)) > 0

    def test_family_modes_balanced(self):
        per_family = 40
        trajs = gen_multimodal(per_family * 2, dt=0.05, seed=4, per_family=per_family,
                               k_choices=(2,), noise_std=0.0)
        for f in range(2):
            fam = trajs[f * per_family : (f + 1) * per_family]
            finals = np.array([t.samples[-1].pos for t in fam])
            centered = finals - finals.mean(axis=0)
            axis = np.linalg.svd(centered)[2][0]
            frac = np.mean(centered @ axis > 0)
            assert 0.2 <= frac <= 0.8

    def test_all_robot_branch(self):
        trajs = gen_multimodal(4, dt=0.05, seed=2, per_family=2)
        assert all(t.branch is Branch.ROBOT for t in trajs)


class TestPhrcCorpus:
    def test_label_histogram(self):
        trajs = gen_phrc(40, 60, dt=0.01, seed=0)
        labels = [t.label for t in trajs]
        assert labels.count(Label.FREE) == 40
        assert labels.count(Label.AVOID) == 60
        branches = [t.branch for t in trajs]
        assert branches.count(Branch.ROBOT) == 40
        assert branches.count(Branch.HUMAN) == 60

    def test_avoidance_force_zero_outside_detour(self):
        traj = gen_phrc(0, 1, dt=0.01, seed=7)[0]
        force = np.array([s.force for s in traj.samples])
        norms = np.linalg.norm(force, axis=1)
        active = np.flatnonzero(norms > 1e-12)
        assert active.size > 0
        # force-free lead-in and tail
        assert active[0] > 10
        assert active[-1] < len(traj) - 10
        # single contiguous activity window
        assert np.all(np.diff(active) == 1)

    def test_force_peak_inside_detour_window(self):
        traj = gen_phrc(0, 1, dt=0.01, seed=8)[0]
        force = np.array([s.force for s in traj.samples])
        norms = np.linalg.norm(force, axis=1)
        active = np.flatnonzero(norms > 1e-12)
        peak = int(np.argmax(norms))
        assert active[0] < peak < active[-1]

    def test_rest_head_and_tail(self):
        traj = gen_phrc(1, 0, dt=0.01, seed=1)[0]
        vel = np.array([s.vel for s in traj.samples])
        assert np.all(vel[:8] == 0.0)  # at rest until the schedule moves
        assert np.max(np.abs(vel[-10:])) < 0.02  # settling at the goal

    def test_fixed_seed_reproducible(self):
        a = gen_phrc(2, 2, dt=0.01, seed=3)
        b = gen_phrc(2, 2, dt=0.01, seed=3)
        for t1, t2 in zip(a, b):
            np.testing.assert_array_equal(
                np.array([s.pos for s in t1.samples]), np.array([s.pos for s in t2.samples])
            )


class TestDetourGeometry:
    def test_detour_clears_obstacle(self):
        nominal = StraightPath([0, 0, 0.2], [0.6, 0, 0.2], 6.0, profile="trapezoid")
        center = np.array([0.3, 0.0, 0.2])
        detour = DetourPath.around(nominal, center, 0.08, side=1)
        t = np.linspace(0, 6.0, 1200)
        pos, _ = detour.eval(t)
        assert np.min(np.linalg.norm(pos - center, axis=1)) >= 0.08

    def test_detour_peak_hits_clearance(self):
        nominal = StraightPath([0, 0, 0.2], [0.6, 0, 0.2], 6.0, profile="trapezoid")
        center = np.array([0.3, 0.0, 0.2])
        detour = DetourPath.around(nominal, center, 0.04, side=-1)
        pos, _ = detour.eval(detour.t_peak)
        assert abs(pos[1]) == pytest.approx(0.09, abs=1e-6)  # radius + margin, -y side
        assert pos[1] < 0


class TestSplit:
    def test_split_sizes_and_disjoint(self):
        trajs = gen_multimodal(20, dt=0.05, seed=0, per_family=5)
        train, test = split_train_test(trajs, 0.25, seed=1)
        assert len(train) == 15 and len(test) == 5
        ids = {id(t) for t in train} | {id(t) for t in test}
        assert len(ids) == 20

    def test_split_deterministic(self):
        trajs = gen_multimodal(10, dt=0.05, seed=0, per_family=5)
        t1 = split_train_test(trajs, 0.3, seed=2)
        t2 = split_train_test(trajs, 0.3, seed=2)
        assert [id(x) for x in t1[0]] == [id(x) for x in t2[0]]
