import numpy as np
import pytest

from geomekf import ins
from geomekf.filters import FilterState, FilterVariant, MeasurementModel, SystemModel, step
from geomekf.groups import so3_exp


class TestPropagate:
    def test_rest_state_no_inputs_no_gravity(self):
        xi = np.eye(5)
        out = ins.ins_propagate(xi, np.zeros(3), np.zeros(3), 0.01, gravity=(0, 0, 0))
        assert np.allclose(out, xi, atol=1e-15)

    def test_ballistic_unit_step(self):
        out = ins.ins_propagate(np.eye(5), np.zeros(3), np.zeros(3), 1.0)
        assert np.allclose(out[:3, 3], [0.0, 0.0, -9.81])
        assert np.allclose(out[:3, 4], [0.0, 0.0, -4.905])

    def test_constant_input_steps_compose(self, rng):
        omega = rng.normal(0, 1, 3)
        accel = rng.normal(0, 5, 3)
        xi = ins.STATE_GEOMETRY.random_point(rng, 0.5)
        dt = 0.05
        many = xi
        for _ in range(8):
            many = ins.ins_propagate(many, omega, accel, dt)
        once = ins.ins_propagate(xi, omega, accel, 8 * dt)
        assert np.allclose(many, once, atol=1e-9)

    def test_dt_positive(self):
        with pytest.raises(ValueError):
            ins.ins_propagate(np.eye(5), np.zeros(3), np.zeros(3), 0.0)

    def test_batch_factors_match_scalar(self, rng):
        omega = rng.normal(0, 1, (20, 3))
        accel = rng.normal(0, 5, (20, 3))
        dt = 0.005
        W = ins.batch_input_factors(omega, accel, dt)
        A = ins.batch_transitions(W, dt)
        B = ins.batch_input_jacobians(omega, accel, dt)
        for k in range(20):
            assert np.allclose(W[k], ins.input_factor(omega[k], accel[k], dt), atol=1e-14)
            assert np.allclose(A[k], ins.transition_matrix(omega[k], accel[k], dt), atol=1e-14)
            assert np.allclose(B[k], ins.input_jacobian(omega[k], accel[k], dt), atol=1e-14)


class TestMeasure:
    def test_zero_noise_extracts_pose(self, rng):
        xi = ins.STATE_GEOMETRY.random_point(rng, 0.6)
        y = ins.ins_measure(xi, np.zeros(6))
        assert np.array_equal(y[:3, :3], xi[:3, :3])
        assert np.array_equal(y[:3, 3], xi[:3, 4])

    def test_identity_pure_translation(self):
        y = ins.ins_measure(np.eye(5), np.array([0, 0, 0, 1.0, 0, 0]))
        assert np.allclose(y[:3, :3], np.eye(3))
        assert np.allclose(y[:3, 3], [1.0, 0, 0])

    def test_right_chart_roundtrip(self, rng):
        for _ in range(20):
            xi = ins.STATE_GEOMETRY.random_point(rng, 0.6)
            nu = 0.4 * rng.standard_normal(6)
            y = ins.ins_measure(xi, nu)
            rec = ins.OUTPUT_GEOMETRY.log(ins.pose_of(xi), y)
            assert np.allclose(rec, nu, atol=1e-9)

    def test_bad_noise_shape(self):
        from geomekf.manifold import GeometryError

        with pytest.raises(GeometryError):
            ins.ins_measure(np.eye(5), np.zeros(5))


class TestMeasurementJacobian:
    def test_matches_finite_differences(self, rng):
        fd_model = MeasurementModel(
            geometry_out=ins.OUTPUT_GEOMETRY,
            h=ins.pose_of,
            R=np.eye(6),
            geometry_state=ins.STATE_GEOMETRY,
        )
        for _ in range(100):
            xi = ins.STATE_GEOMETRY.random_point(rng, 0.6)
            C = ins.measurement_jacobian(xi)
            assert np.allclose(C, fd_model.output_matrix(xi), atol=1e-7)

    def test_velocity_columns_zero(self, rng):
        xi = ins.STATE_GEOMETRY.random_point(rng, 0.6)
        assert np.array_equal(ins.measurement_jacobian(xi)[:, 3:6], np.zeros((6, 3)))

    def test_selection_pattern_at_identity(self):
        C = ins.measurement_jacobian(np.eye(5))
        expect = np.zeros((6, 9))
        expect[:3, :3] = np.eye(3)
        expect[3:, 6:] = np.eye(3)
        assert np.allclose(C, expect)


class TestLissajousTruth:
    def test_initial_state(self):
        cfg = ins.TrajectoryConfig()
        state, omega, accel = ins.lissajous_truth(cfg, 0.0)
        p, v, _ = ins._kinematics(cfg, 0.0)
        assert np.allclose(state[:3, 4], p)
        assert np.allclose(state[:3, 3], v)
        run = ins.simulate_run(cfg, np.random.default_rng(0))
        assert np.allclose(run.truth[0], state, atol=1e-12)

    def test_hover_configuration(self):
        cfg = ins.TrajectoryConfig(amplitudes=(0.0, 0.0, 0.0))
        state, omega, accel = ins.lissajous_truth(cfg, 12.3)
        assert np.allclose(state, np.eye(5), atol=1e-12)
        assert np.allclose(omega, 0.0)
        assert np.allclose(accel, -np.asarray(cfg.gravity))

    def test_closed_loop_position_consistency(self):
        cfg = ins.TrajectoryConfig(
            gyro_noise_std=0.0, accel_noise_std=0.0,
            meas_noise_std=(0.0,) * 6, init_std=(0.0,) * 9,
        )
        run = ins.simulate_run(cfg, np.random.default_rng(1))
        p_end, _, _ = ins._kinematics(cfg, cfg.duration)
        assert np.linalg.norm(run.truth[-1][:3, 4] - p_end) < 1e-3

    def test_analytic_attitude_matches_discrete_flow(self):
        cfg = ins.TrajectoryConfig(duration=10.0)
        run = ins.simulate_run(cfg, np.random.default_rng(1))
        state, _, _ = ins.lissajous_truth(cfg, 10.0)
        assert np.allclose(state[:3, :3], run.truth[-1][:3, :3], atol=1e-6)

    def test_time_domain(self):
        cfg = ins.TrajectoryConfig()
        with pytest.raises(ValueError):
            ins.lissajous_truth(cfg, -1.0)


class TestSimulateRun:
    def test_zero_noise_measurements_equal_truth(self):
        cfg = ins.TrajectoryConfig(
            duration=4.0, gyro_noise_std=0.0, accel_noise_std=0.0,
            meas_noise_std=(0.0,) * 6, init_std=(0.0,) * 9,
        )
        run = ins.simulate_run(cfg, np.random.default_rng(3))
        for j, t in enumerate(run.t_meas):
            k = int(round(t * cfg.imu_rate))
            assert np.array_equal(run.measurements[j], ins.pose_of(run.truth[k]))
        assert np.array_equal(run.init_offset, np.zeros(9))

    def test_same_seed_bit_identical(self):
        cfg = ins.TrajectoryConfig(duration=4.0)
        a = ins.simulate_run(cfg, np.random.default_rng(9))
        b = ins.simulate_run(cfg, np.random.default_rng(9))
        for f in ("omega", "accel", "truth", "measurements", "init_offset"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_residual_std_matches_config(self):
        cfg = ins.TrajectoryConfig(duration=1000.0, imu_rate=20.0, meas_rate=10.0)
        run = ins.simulate_run(cfg, np.random.default_rng(12))
        res = np.array(
            [
                ins.OUTPUT_GEOMETRY.log(
                    ins.pose_of(run.truth[int(round(t * cfg.imu_rate))]),
                    run.measurements[j],
                )
                for j, t in enumerate(run.t_meas)
            ]
        )
        stds = res.std(axis=0)
        assert np.all(np.abs(stds / np.asarray(cfg.meas_noise_std) - 1.0) < 0.03)

    def test_stream_shapes_and_monotone_time(self):
        cfg = ins.TrajectoryConfig(duration=2.0)
        run = ins.simulate_run(cfg, np.random.default_rng(0))
        n = cfg.n_steps
        assert run.t_imu.shape == (n + 1,)
        assert run.omega.shape == (n + 1, 3)
        assert np.all(np.diff(run.t_imu) > 0)
        assert run.measurements.shape == (cfg.n_meas, 4, 4)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ins.TrajectoryConfig(imu_rate=150.0, meas_rate=100.0)
        with pytest.raises(ValueError):
            ins.TrajectoryConfig(duration=-1.0)
        with pytest.raises(ValueError):
            ins.TrajectoryConfig(meas_rate=0.0)
        with pytest.raises(ValueError):
            ins.TrajectoryConfig(duration=2.55)


class TestFilterConsistency:
    def test_noise_free_optimality_all_variants(self):
        cfg = ins.TrajectoryConfig(
            duration=20.0, gyro_noise_std=0.0, accel_noise_std=0.0,
            meas_noise_std=(0.0,) * 6, init_std=(0.0,) * 9,
        )
        run = ins.simulate_run(cfg, np.random.default_rng(5))
        sys_model = ins.make_system_model(cfg)
        meas_model = ins.make_measurement_model(cfg)
        geo = ins.STATE_GEOMETRY
        variants = [
            FilterVariant(False, False, False),
            FilterVariant(True, True, False),
            FilterVariant(True, True, True),
        ]
        spm = cfg.steps_per_meas
        for var in variants:
            state = FilterState(run.truth[0].copy(), ins.initial_covariance(cfg), 0)
            for j in range(cfg.n_meas):
                for k in range(j * spm, (j + 1) * spm):
                    u = np.concatenate([run.omega[k], run.accel[k]])
                    y = run.measurements[j] if k == (j + 1) * spm - 1 else None
                    state, _ = step(state, u, y, sys_model, meas_model, var)
            err = geo.log(state.estimate, run.truth[cfg.n_meas * spm])
            assert np.linalg.norm(err) < 1e-6

    def test_discretization_second_order(self):
        # the endpoint change from halving dt shrinks by ~4x per halving
        base = ins.TrajectoryConfig(
            duration=4.0, imu_rate=50.0, meas_rate=10.0,
            gyro_noise_std=0.0, accel_noise_std=0.0,
            meas_noise_std=(0.0,) * 6, init_std=(0.0,) * 9,
        )
        ends = []
        for rate in (50.0, 100.0, 200.0):
            cfg = ins.TrajectoryConfig(
                duration=4.0, imu_rate=rate, meas_rate=10.0,
                gyro_noise_std=0.0, accel_noise_std=0.0,
                meas_noise_std=(0.0,) * 6, init_std=(0.0,) * 9,
            )
            run = ins.simulate_run(cfg, np.random.default_rng(0))
            ends.append(run.truth[-1][:3, 4])
        d1 = np.linalg.norm(ends[0] - ends[1])
        d2 = np.linalg.norm(ends[1] - ends[2])
        order = np.log2(d1 / d2)
        assert 1.7 <= order <= 2.4
