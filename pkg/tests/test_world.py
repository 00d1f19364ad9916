import numpy as np
import pytest

from trilift import geom, world
from trilift.world import (CableSpec, CoincidentAttachPoints, DisturbanceSpec,
                           RigidBodyState, ScenarioConfig, WorldParams, WorldState,
                           cable_wrench, make_world, sample_disturbance, step)


def simple_cable(length=1.0, k=500.0, c=0.0):
    return CableSpec(np.zeros(3), np.zeros(3), length, k, c)


class TestCableWrench:
    def test_hooke_stretch(self):
        load = RigidBodyState.at_rest([0, 0, 0])
        uav = RigidBodyState.at_rest([0, 0, 1.2])
        force, tension = cable_wrench(uav, load, simple_cable())
        assert tension == pytest.approx(100.0)
        assert np.allclose(force, [0, 0, 100.0])

    def test_slack(self):
        load = RigidBodyState.at_rest([0, 0, 0])
        uav = RigidBodyState.at_rest([0, 0, 0.8])
        force, tension = cable_wrench(uav, load, simple_cable())
        assert tension == 0.0
        assert np.allclose(force, 0.0)

    def test_damped(self):
        load = RigidBodyState.at_rest([0, 0, 0])
        uav = RigidBodyState(np.array([0, 0, 1.1]), np.array([0, 0, -0.5]),
                             geom.QUAT_IDENTITY.copy(), np.zeros(3))
        _, tension = cable_wrench(uav, load, simple_cable(c=10.0))
        assert tension == pytest.approx(45.0)

    def test_tension_never_negative(self):
        load = RigidBodyState.at_rest([0, 0, 0])
        uav = RigidBodyState(np.array([0, 0, 1.001]), np.array([0, 0, -5.0]),
                             geom.QUAT_IDENTITY.copy(), np.zeros(3))
        _, tension = cable_wrench(uav, load, simple_cable(c=10.0))
        assert tension == 0.0

    def test_continuous_at_natural_length(self):
        load = RigidBodyState.at_rest([0, 0, 0])
        spec = simple_cable()
        for eps in (1e-6, 1e-9):
            uav = RigidBodyState.at_rest([0, 0, 1.0 + eps])
            _, tension = cable_wrench(uav, load, spec)
            assert tension == pytest.approx(500.0 * eps, abs=1e-9)
        uav = RigidBodyState.at_rest([0, 0, 1.0])
        assert cable_wrench(uav, load, spec)[1] == 0.0

    def test_coincident_raises(self):
        load = RigidBodyState.at_rest([0, 0, 0])
        uav = RigidBodyState.at_rest([0, 0, 0])
        with pytest.raises(CoincidentAttachPoints):
            cable_wrench(uav, load, simple_cable())

    def test_attach_point_offsets_rotate(self):
        spec = CableSpec(np.array([0.25, 0, 0]), np.array([0, 0, -0.03]),
                         1.0, 500.0, 0.0)
        load = RigidBodyState.at_rest([0, 0, 0],
                                      geom.quat_from_euler(0, 0, np.pi / 2))
        uav = RigidBodyState.at_rest([0, 0.25, 1.5])
        p1, p2 = world.attach_points(uav, load, spec)
        assert np.allclose(p1, [0, 0.25, 0], atol=1e-12)
        assert np.allclose(p2, [0, 0.25, 1.47])


def free_world(n_active_cables=0, g=world.GRAVITY):
    cfg = ScenarioConfig()
    w = make_world(cfg)
    w.params.g = g
    return w


class TestStep:
    def test_free_fall(self):
        w = free_world()
        # lower the UAVs so all cables are slack: the load falls alone
        for u in w.uavs:
            u.p[2] -= 0.5
        for _ in range(5):
            w = step(w, [(0.0, np.zeros(3))] * 3, 0.002)
        assert w.load.v[2] == pytest.approx(-0.0981, abs=1e-6)

    def test_single_uav_hover_equilibrium(self):
        w = free_world()
        for u in w.uavs:
            u.p[2] -= 0.5  # slack cables
        thrust = 0.6 * 9.81
        p0 = w.uavs[0].p.copy()
        for _ in range(100):
            w = step(w, [(thrust, np.zeros(3))] * 3, 0.002)
        assert np.linalg.norm(w.uavs[0].p - p0) < 1e-9

    def test_full_hover_equilibrium(self):
        # static equilibrium: cables stretched so tension feeds exactly m_L g/3
        cfg = ScenarioConfig()
        w = make_world(cfg)
        tension = cfg.m_load * 9.81 / 3.0
        stretch = tension / cfg.cable_stiffness
        for u in w.uavs:
            u.p[2] += stretch
        thrust = cfg.m_uav * 9.81 + tension
        p0 = w.load.p.copy()
        for _ in range(500):
            w = step(w, [(thrust, np.zeros(3))] * 3, 0.002)
        assert np.linalg.norm(w.load.p - p0) < 1e-3
        assert (w.tensions > 0).all()

    def test_dt_bounds(self):
        w = free_world()
        with pytest.raises(ValueError):
            step(w, [(0.0, np.zeros(3))] * 3, 0.02)
        with pytest.raises(ValueError):
            step(w, [(-1.0, np.zeros(3))] * 3, 0.002)

    def test_blowup_detected(self):
        w = free_world()
        w.uavs[0].v[:] = 1e7
        with pytest.raises(world.NumericalBlowup):
            step(w, [(0.0, np.zeros(3))] * 3, 0.002)

    def test_determinism(self):
        def run(seed):
            rng = np.random.default_rng(seed)
            w = make_world(ScenarioConfig())
            dist = sample_disturbance(rng, 1.0, 0.2)
            for _ in range(200):
                w = step(w, [(6.0, np.zeros(3))] * 3, 0.002, dist, rng)
            return w

        w1, w2 = run(42), run(42)
        assert np.array_equal(w1.load.p, w2.load.p)
        assert np.array_equal(w1.uavs[1].q, w2.uavs[1].q)
        assert np.array_equal(w1.tensions, w2.tensions)

    def test_momentum_conserved_without_gravity(self):
        w = free_world(g=0.0)
        w.uavs[0].v[:] = [0.3, -0.2, 0.4]
        w.load.v[:] = [-0.1, 0.0, 0.2]
        mom0 = world.total_momentum(w)
        for _ in range(500):
            w = step(w, [(0.0, np.zeros(3))] * 3, 0.002)
        assert np.linalg.norm(world.total_momentum(w) - mom0) < 1e-9


class TestEnergyAudit:
    def _orbit_world(self):
        # one taut cable in orbit (g=0), other cables slack and at rest:
        # smooth dynamics, so RK4 should show clean 4th-order convergence
        cfg = ScenarioConfig(cable_damping=0.0)
        w = make_world(cfg)
        w.params.g = 0.0
        stretch = 0.05
        w.uavs[0].p = w.load.p + geom.quat_rotate(w.load.q, w.cables[0].rho_load) \
            + np.array([0.0, 0.0, 1.0 + stretch]) - world.UAV_ATTACH_OFFSET
        # tangential speed for a roughly circular relative orbit
        m_red = (0.6 * 1.4) / (0.6 + 1.4)
        k = cfg.cable_stiffness
        v_rel = np.sqrt(k * stretch * (1.0 + stretch) / m_red)
        w.uavs[0].v[:] = [v_rel * (1.4 / 2.0), 0.0, 0.0]
        w.load.v[:] = [-v_rel * (0.6 / 2.0), 0.0, 0.0]
        for u in w.uavs[1:]:
            u.p[2] -= 0.5
        return w

    def _drift(self, dt):
        w = self._orbit_world()
        e0 = world.mechanical_energy(w)
        n = int(round(1.0 / dt))
        for _ in range(n):
            w = step(w, [(0.0, np.zeros(3))] * 3, dt)
        return abs(world.mechanical_energy(w) - e0), abs(e0)

    def test_energy_drift_small(self):
        drift, scale = self._drift(0.001)
        assert drift < 1e-3 * max(scale, 1.0)

    def test_rk4_order(self):
        d1, _ = self._drift(0.001)
        d2, _ = self._drift(0.0005)
        assert d2 < d1 / 8.0  # ~16x for clean 4th order; allow margin


class TestDisturbance:
    def test_zero_max_is_zero_force(self):
        rng = np.random.default_rng(0)
        d = sample_disturbance(rng, 0.0, 0.0)
        w = make_world(ScenarioConfig())
        w1 = step(w, [(6.0, np.zeros(3))] * 3, 0.002, d, rng)
        w2 = step(w, [(6.0, np.zeros(3))] * 3, 0.002, DisturbanceSpec.none())
        assert np.allclose(w1.load.p, w2.load.p)

    def test_reproducible_direction(self):
        d1 = sample_disturbance(np.random.default_rng(7), 1.0, 1.0)
        d2 = sample_disturbance(np.random.default_rng(7), 1.0, 1.0)
        assert np.array_equal(d1.force_dir, d2.force_dir)
        assert np.array_equal(d1.torque_dir, d2.torque_dir)

    def test_uniform_on_sphere(self):
        rng = np.random.default_rng(3)
        dirs = np.array([sample_disturbance(rng, 1.0, 1.0).force_dir
                         for _ in range(100_000)])
        assert np.linalg.norm(dirs.mean(axis=0)) < 0.02
        assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)

    def test_negative_max_rejected(self):
        with pytest.raises(ValueError):
            sample_disturbance(np.random.default_rng(0), -1.0, 0.0)


class TestSlosh:
    def test_ball_stays_in_box_and_couples(self):
        cfg = ScenarioConfig(slosh=True)
        w = make_world(cfg)
        w.slosh.v[:] = [1.0, 0, 0]
        thrust = (cfg.m_load + 3 * cfg.m_uav + 0.6) * 9.81 / 3.0
        for _ in range(1000):
            w = step(w, [(thrust, np.zeros(3))] * 3, 0.002)
        rel = geom.quat_to_matrix(w.load.q).T @ (w.slosh.p - w.load.p)
        assert np.abs(rel).max() < 0.2  # contained by the walls
        assert np.linalg.norm(w.load.v) > 1e-4  # load felt the impacts


class TestScenarioConfig:
    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text('{"m_load": 2.8, "cable_length_deltas": [0.0, -0.035, 0.035]}')
        cfg = ScenarioConfig.from_json(path)
        assert cfg.m_load == 2.8
        cables = world.make_cables(cfg)
        assert cables[1].length == pytest.approx(0.965)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"nope": 1}')
        with pytest.raises(ValueError):
            ScenarioConfig.from_json(path)
