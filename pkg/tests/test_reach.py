import math

import numpy as np
import pytest

from locomanip.geometry import Pose2D, Vec3, wrap_angle
from locomanip.kinematics import default_leg
from locomanip.nav import BaseLimits
from locomanip.reach import (
    OffsetModel,
    ReachAdjustment,
    SolverWeights,
    adjustment_to_commands,
    fit_offset_model,
    object_in_adjusted_frame,
    shoulder_position,
    solve_adjustment,
)

Z0 = 0.72


@pytest.fixture(scope="module")
def model():
    return fit_offset_model(default_leg(), Z0)


def oracle_grid_search(p_t, w, model, dd_bound=1.0, res=0.005):
    """Brute-force minimum over a 5 mm lattice of the bound box; independent
    of the solver's optimization path."""
    zlo, zhi = model.z_lo - w.z0, model.z_hi - w.z0
    dds = np.arange(-dd_bound, dd_bound + 1e-12, res)
    dzs = np.arange(zlo, zhi + 1e-12, res)
    best = math.inf
    for dz in dzs:
        sx, sz = model.query(w.z0 + dz)
        rx = p_t.x - dds[:, None] - sx
        ry = p_t.y - dds[None, :]
        rz = p_t.z - dz - sz
        d2 = rx ** 2 + ry ** 2 + rz ** 2
        feas = d2 <= w.reach_bound ** 2 + 1e-12
        if not feas.any():
            continue
        obj = (w.lam1 * (dds[:, None] ** 2 + dds[None, :] ** 2)
               + w.lam2 * dz ** 2 + w.lam3 * d2)
        best = min(best, float(obj[feas].min()))
    return best


def shoulder_object_distance(p_t, adj, model, z0=Z0):
    sh = shoulder_position(adj.delta_z, model, z0)
    obj = object_in_adjusted_frame(p_t, adj.delta_d, adj.delta_z)
    return math.dist((obj.x, obj.y, obj.z), (sh.x, sh.y, sh.z))


class TestOffsetModel:
    def test_direct_table_hit(self):
        m = OffsetModel(np.array([0.5, 0.72, 0.8]),
                        np.array([0.08, 0.05, 0.04]),
                        np.array([0.55, 0.60, 0.62]))
        assert shoulder_position(0.0, m, 0.72) == Vec3(0.05, 0.0, 0.60)

    def test_midpoint_interpolation(self):
        m = OffsetModel(np.array([0.6, 0.8]), np.array([0.10, 0.06]),
                        np.array([0.50, 0.70]))
        sh = shoulder_position(0.0, m, 0.70)  # midway between samples
        assert sh.x == pytest.approx(0.08)
        assert sh.z == pytest.approx(0.60)

    def test_query_clamps_to_range(self, model):
        assert model.query(0.0) == model.query(model.z_lo)
        assert model.query(9.0) == model.query(model.z_hi)

    def test_rejects_non_monotone(self):
        with pytest.raises(ValueError):
            OffsetModel(np.array([0.5, 0.5]), np.zeros(2), np.zeros(2))

    def test_rejects_unsupported_order(self):
        with pytest.raises(ValueError):
            OffsetModel(np.array([0.4, 0.8]), np.zeros(2), np.zeros(2), order=3)

    def test_csv_roundtrip(self, tmp_path, model):
        path = tmp_path / "offsets.csv"
        model.to_csv(path)
        back = OffsetModel.from_csv(path)
        np.testing.assert_allclose(back.zs, model.zs)
        np.testing.assert_allclose(back.dxs, model.dxs)
        np.testing.assert_allclose(back.dzs, model.dzs)

    def test_matches_leg_fk_within_tolerance(self, model, leg):
        # held-out heights between samples; direct FK is the oracle
        queries = np.linspace(leg.z_min + 0.003, leg.z_max - 0.003, 20)
        for z in queries:
            dx, dz = model.query(z)
            fx, fz = leg.shoulder_in_adjusted_frame(float(z), Z0)
            assert abs(dx - fx) <= 1e-3
            assert abs(dz - fz) <= 1e-3

    def test_monotone_continuous_in_dz(self, model):
        zs = np.linspace(model.z_lo - 0.1, model.z_hi + 0.1, 300)
        vals = [shoulder_position(z - Z0, model, Z0).z for z in zs]
        diffs = np.diff(vals)
        assert np.all(np.abs(diffs) < 0.02)  # no jumps (continuity)


class TestObjectInAdjustedFrame:
    def test_identity(self):
        p = Vec3(0.4, -0.2, 1.1)
        assert object_in_adjusted_frame(p, np.zeros(2), 0.0) == p

    def test_translation(self):
        out = object_in_adjusted_frame(Vec3(1, 0, 1), np.array([0.5, 0.0]), 0.2)
        assert out == Vec3(0.5, 0.0, 0.8)

    def test_additivity(self):
        p = Vec3(0.9, 0.3, 1.2)
        one = object_in_adjusted_frame(p, np.array([0.2, 0.1]), 0.05)
        two = object_in_adjusted_frame(one, np.array([0.1, -0.3]), 0.02)
        direct = object_in_adjusted_frame(p, np.array([0.3, -0.2]), 0.07)
        np.testing.assert_allclose(two.as_array(), direct.as_array(),
                                   atol=1e-12)


class TestSolveAdjustment:
    def test_zero_penalty_feasible_origin_returns_exact_zero(self, model):
        w = SolverWeights(lam3=0.0, z0=Z0)
        sh = shoulder_position(0.0, model, Z0)
        p_t = Vec3(sh.x + 0.2, sh.y, sh.z + 0.1)  # well inside eta*L
        adj = solve_adjustment(p_t, w, model)
        assert adj.feasible
        assert adj.delta_d[0] == 0.0 and adj.delta_d[1] == 0.0
        assert adj.delta_z == 0.0
        assert adj.objective == 0.0

    def test_boundary_feasible_origin(self, model):
        w = SolverWeights(lam3=0.0, z0=Z0)
        sh = shoulder_position(0.0, model, Z0)
        p_t = Vec3(sh.x + w.reach_bound, sh.y, sh.z)  # exactly at eta*L
        adj = solve_adjustment(p_t, w, model)
        assert adj.feasible
        assert np.all(adj.delta_d == 0.0) and adj.delta_z == 0.0

    def test_feasible_results_satisfy_constraint(self, model, rng):
        w = SolverWeights(z0=Z0)
        for _ in range(25):
            p_t = Vec3(rng.uniform(0.0, 1.4), rng.uniform(-0.7, 0.7),
                       rng.uniform(0.2, 1.6))
            adj = solve_adjustment(p_t, w, model)
            if adj.feasible:
                assert shoulder_object_distance(p_t, adj, model) \
                    <= w.reach_bound + 1e-6

    def test_against_grid_search_oracle(self, model, rng):
        checked = 0
        for _ in range(12):
            p_t = Vec3(rng.uniform(0.1, 1.3), rng.uniform(-0.6, 0.6),
                       rng.uniform(0.2, 1.5))
            w = SolverWeights(lam1=rng.uniform(0.2, 2.0),
                              lam2=rng.uniform(0.2, 3.0),
                              lam3=rng.uniform(0.0, 1.5), z0=Z0)
            adj = solve_adjustment(p_t, w, model)
            best = oracle_grid_search(p_t, w, model)
            if not adj.feasible:
                assert best == math.inf
                continue
            assert adj.objective <= best + 1e-4
            checked += 1
        assert checked >= 6

    def test_infeasible_reports_min_distance(self, model):
        w = SolverWeights(z0=Z0)
        adj = solve_adjustment(Vec3(5.0, 5.0, 3.0), w, model)
        assert not adj.feasible
        assert adj.min_achievable_distance is not None
        assert adj.min_achievable_distance > w.reach_bound

    def test_weight_scaling_preserves_argmin(self, model, rng):
        for _ in range(6):
            p_t = Vec3(rng.uniform(0.3, 1.2), rng.uniform(-0.5, 0.5),
                       rng.uniform(0.3, 1.4))
            base = SolverWeights(lam1=1.0, lam2=2.0, lam3=0.5, z0=Z0)
            for c in (0.1, 7.3):
                scaled = SolverWeights(lam1=c, lam2=2 * c, lam3=0.5 * c, z0=Z0)
                a = solve_adjustment(p_t, base, model)
                b = solve_adjustment(p_t, scaled, model)
                assert a.feasible == b.feasible
                if a.feasible:
                    assert np.max(np.abs(a.delta_d - b.delta_d)) <= 1e-6
                    assert abs(a.delta_z - b.delta_z) <= 1e-6

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            SolverWeights(lam1=-1.0)
        with pytest.raises(ValueError):
            SolverWeights(eta=0.0)
        with pytest.raises(ValueError):
            SolverWeights(arm_length=0.0)


class TestAdjustmentToCommands:
    LIMITS = BaseLimits()

    def integrate(self, commands, dt=0.05, z0=Z0, tau=0.25):
        x = y = yaw = 0.0
        h = z0
        for cmd in commands:
            if abs(cmd.omega_y) < 1e-12:
                x += cmd.v_x * math.cos(yaw) * dt
                y += cmd.v_x * math.sin(yaw) * dt
            else:
                yaw2 = yaw + cmd.omega_y * dt
                x += cmd.v_x / cmd.omega_y * (math.sin(yaw2) - math.sin(yaw))
                y -= cmd.v_x / cmd.omega_y * (math.cos(yaw2) - math.cos(yaw))
                yaw = yaw2
            h += (cmd.h - h) * (1.0 - math.exp(-dt / tau))
        return x, y, wrap_angle(yaw), h

    def test_pure_forward_drive(self):
        adj = ReachAdjustment(np.array([0.5, 0.0]), 0.0, True, 0.0)
        cmds = adjustment_to_commands(adj, self.LIMITS, p_t=Vec3(1.0, 0.0, 1.0),
                                      z0=Z0)
        assert all(c.omega_y == 0.0 for c in cmds)  # zero net rotation
        x, y, yaw, _ = self.integrate(cmds)
        assert x == pytest.approx(0.5, abs=1e-9)
        assert y == pytest.approx(0.0, abs=1e-9)
        assert yaw == pytest.approx(0.0, abs=1e-9)

    def test_pure_height_change(self):
        adj = ReachAdjustment(np.zeros(2), -0.1, True, 0.0)
        cmds = adjustment_to_commands(adj, self.LIMITS, z0=Z0)
        assert all(c.v_x == 0.0 for c in cmds)
        hs = [c.h for c in cmds]
        assert hs[-1] == pytest.approx(Z0 - 0.1)
        assert all(b <= a + 1e-12 for a, b in zip(hs, hs[1:]))  # descending

    def test_integration_reproduces_adjustment(self, rng):
        for _ in range(20):
            dd = rng.uniform(-0.8, 0.8, 2)
            dz = rng.uniform(-0.25, 0.08)
            adj = ReachAdjustment(dd, dz, True, 0.0)
            p_t = Vec3(rng.uniform(0.5, 1.2), rng.uniform(-0.5, 0.5), 1.0)
            cmds = adjustment_to_commands(adj, self.LIMITS, p_t=p_t, z0=Z0)
            x, y, yaw, h = self.integrate(cmds)
            assert math.hypot(x - dd[0], y - dd[1]) <= 0.02
            assert abs(h - (Z0 + dz)) <= 0.01
            # final heading faces the object
            expect = math.atan2(p_t.y - dd[1], p_t.x - dd[0])
            assert abs(wrap_angle(yaw - expect)) <= 1e-6

    def test_commands_respect_limits(self, rng):
        lim = BaseLimits(v_max=0.4, omega_max=0.9, h_min=0.5, h_max=0.8)
        adj = ReachAdjustment(np.array([-0.6, 0.3]), 0.05, True, 0.0)
        cmds = adjustment_to_commands(adj, lim, z0=0.72)
        for c in cmds:
            assert abs(c.v_x) <= 0.4 and abs(c.omega_y) <= 0.9
            assert 0.5 <= c.h <= 0.8

    def test_infeasible_rejected(self):
        adj = ReachAdjustment(np.zeros(2), 0.0, False, math.inf, 1.0)
        with pytest.raises(ValueError):
            adjustment_to_commands(adj, self.LIMITS)
