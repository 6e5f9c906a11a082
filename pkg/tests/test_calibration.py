import numpy as np
import pytest

from conftest import random_chain
from sockcal.calibration import (
    CalibrationOptions,
    cost,
    cost_gradient,
    distortion_error,
    insertion_feasibility,
    mean_absolute_error,
    optimize,
    placement_mae,
    removed_error_percent,
    socket_statistics,
    trace_to_csv,
)
from sockcal.dataset import CalibrationDataset, ToolPlacement
from sockcal.exceptions import DatasetSchemaError, DegenerateGradientError
from sockcal.kinematics import (
    FrameSpec,
    JointKind,
    KinematicChain,
    bcp_positions,
    forward_kinematics,
    pack_params,
)


def slider():
    """One prismatic joint along z: q is the ball height."""
    return KinematicChain((FrameSpec(kind=JointKind.PRISMATIC, axis=(0, 0, 1)),))


def random_dataset(rng, chain, placements=2, rows=8):
    ps = []
    for i in range(placements):
        ps.append(ToolPlacement(rng.uniform(-2, 2, (rows, chain.n)),
                                rng.uniform(-2, 2, (rows + 1, chain.n)),
                                rng.uniform(0.05, 0.3), f"P{i}"))
    return CalibrationDataset(tuple(ps), chain.n)


def brute_force_cost(chain, theta, theta_n, dataset, lam):
    """Direct re-summation from single FK calls."""
    inc = dist = 0.0
    for p in dataset.placements:
        pts = [np.array([forward_kinematics(chain, theta, q).translation
                         for q in s.configurations]) for s in p.sockets]
        mus = [x.sum(axis=0) / len(x) for x in pts]
        n0, n1 = len(pts[0]), len(pts[1])
        tr = [sum(float((xi - mu) @ (xi - mu)) for xi in x) / len(x) for x, mu in zip(pts, mus)]
        inc += (n0 * tr[0] + n1 * tr[1]) / (n0 + n1)
        dist += (np.sqrt(float((mus[1] - mus[0]) @ (mus[1] - mus[0]))) - p.distance_m) ** 2
    reg = lam * float((theta - theta_n) @ (theta - theta_n))
    return inc, dist, reg


class TestSocketStatistics:
    def test_identical_configurations(self):
        s = socket_statistics(slider(), np.zeros(6), np.array([[0.3], [0.3]]))
        assert s.covariance_trace == 0.0 and s.count == 2

    def test_two_points(self):
        s = socket_statistics(slider(), np.zeros(6), np.array([[0.0], [0.2]]))
        np.testing.assert_allclose(s.mean, [0, 0, 0.1], atol=1e-17)
        assert s.covariance_trace == pytest.approx(0.01, abs=1e-17)

    def test_brute_force_oracle(self, front_scenario):
        rng = np.random.default_rng(0)
        chain, theta = front_scenario.chain, front_scenario.theta_true
        q = rng.uniform(-2, 2, (30, 7))
        s = socket_statistics(chain, theta, q)
        x = [forward_kinematics(chain, theta, row).translation for row in q]
        mu = sum(x) / 30
        tr = sum(float((xi - mu) @ (xi - mu)) for xi in x) / 30
        np.testing.assert_allclose(s.mean, mu, atol=1e-12)
        assert abs(s.covariance_trace - tr) <= 1e-12

    def test_empty(self):
        with pytest.raises(DatasetSchemaError):
            socket_statistics(slider(), np.zeros(6), np.zeros((0, 1)))


class TestCost:
    def test_zero_at_truth(self, nominal_data):
        sc, data = nominal_data
        c = cost(sc.chain, sc.theta_nominal, sc.theta_nominal, data, lam=1e-4)
        assert c.total <= 1e-18

    def test_overstated_distance_is_pure_distortion(self, nominal_data):
        sc, data = nominal_data
        p = data.placements[0]
        longer = CalibrationDataset((ToolPlacement(p.socket0, p.socket1, p.distance_m + 1e-3),), 7)
        c = cost(sc.chain, sc.theta_nominal, sc.theta_nominal, longer, lam=1e-4)
        assert c.total == pytest.approx(1e-6, rel=1e-6)
        assert c.inconsistency <= 1e-18 and c.regularization == 0.0

    def test_matches_brute_force(self, front_scenario, front_data):
        sc = front_scenario
        rng = np.random.default_rng(1)
        theta = sc.theta_nominal + rng.normal(0, 1e-3, sc.theta_nominal.size)
        c = cost(sc.chain, theta, sc.theta_nominal, front_data, lam=1e-4)
        inc, dist, reg = brute_force_cost(sc.chain, theta, sc.theta_nominal, front_data, 1e-4)
        assert abs(c.inconsistency - inc) <= 1e-12
        assert abs(c.distortion - dist) <= 1e-12
        assert abs(c.regularization - reg) <= 1e-12

    def test_component_accounting(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            chain = random_chain(rng, 6)
            data = random_dataset(rng, chain)
            theta_n = pack_params(chain)
            theta = theta_n + rng.normal(0, 0.1, theta_n.size)
            lam = 10 ** rng.uniform(-6, 0)
            c = cost(chain, theta, theta_n, data, lam)
            direct = c.inconsistency + c.distortion + lam * float(np.sum((theta - theta_n) ** 2))
            assert abs(c.total - direct) <= 1e-14 * max(1.0, c.total)
            assert min(c.inconsistency, c.distortion, c.regularization) >= 0

    def test_regularization_counted_once(self):
        rng = np.random.default_rng(3)
        chain = random_chain(rng, 4)
        one = random_dataset(rng, chain, placements=1)
        three = CalibrationDataset(one.placements * 3, chain.n)
        theta_n = pack_params(chain)
        theta = theta_n + 0.01
        c1 = cost(chain, theta, theta_n, one, 0.5)
        c3 = cost(chain, theta, theta_n, three, 0.5)
        assert c3.regularization == c1.regularization
        assert c3.inconsistency == pytest.approx(3 * c1.inconsistency, rel=1e-14)

    def test_weights(self):
        rng = np.random.default_rng(4)
        chain = random_chain(rng, 3)
        data = random_dataset(rng, chain)
        theta_n = pack_params(chain)
        w = rng.uniform(0, 2, theta_n.size)
        theta = theta_n + 0.1
        c = cost(chain, theta, theta_n, data, 0.3, weights=w)
        assert c.regularization == pytest.approx(0.3 * np.sum(w * 0.01), rel=1e-14)

    def test_permutation_invariance(self, front_scenario, front_data):
        rng = np.random.default_rng(5)
        p = front_data.placements[0]
        perm = CalibrationDataset((ToolPlacement(
            p.socket0.configurations[rng.permutation(30)],
            p.socket1.configurations[rng.permutation(30)], p.distance_m),), 7)
        sc = front_scenario
        a = cost(sc.chain, sc.theta_nominal, sc.theta_nominal, front_data)
        b = cost(sc.chain, sc.theta_nominal, sc.theta_nominal, perm)
        assert b.total == pytest.approx(a.total, rel=1e-12)
        assert mean_absolute_error(sc.chain, sc.theta_nominal, perm) == pytest.approx(
            mean_absolute_error(sc.chain, sc.theta_nominal, front_data), rel=1e-12)

    def test_rigid_base_transform_invariance(self, front_scenario, front_data):
        sc = front_scenario
        rng = np.random.default_rng(6)
        for _ in range(5):
            base = FrameSpec(rpy=tuple(rng.uniform(-3, 3, 3)), displacement=tuple(rng.normal(size=3)))
            moved = KinematicChain((base,) + sc.chain.frames)
            theta = np.concatenate([base.params, sc.theta_nominal])
            a = cost(sc.chain, sc.theta_nominal, sc.theta_nominal, front_data, lam=0)
            b = cost(moved, theta, theta, front_data, lam=0)
            assert b.inconsistency == pytest.approx(a.inconsistency, rel=1e-9)
            assert b.distortion == pytest.approx(a.distortion, rel=1e-9)

    def test_joint_count_mismatch(self, front_data):
        with pytest.raises(DatasetSchemaError):
            cost(slider(), np.zeros(6), np.zeros(6), front_data)


class TestGradient:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(7)
        h = 1e-7
        for _ in range(12):
            chain = random_chain(rng, int(rng.integers(3, 9)))
            data = random_dataset(rng, chain, placements=int(rng.integers(1, 4)))
            theta_n = pack_params(chain)
            theta = theta_n + rng.normal(0, 0.05, theta_n.size)
            lam = 10 ** rng.uniform(-5, -1)
            g = cost_gradient(chain, theta, theta_n, data, lam)
            fd = np.empty_like(g)
            for j in range(theta.size):
                e = np.zeros_like(theta)
                e[j] = h
                fd[j] = (cost(chain, theta + e, theta_n, data, lam).total
                         - cost(chain, theta - e, theta_n, data, lam).total) / (2 * h)
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-5

    def test_regularizer_only(self):
        rng = np.random.default_rng(8)
        chain = random_chain(rng, 5)
        theta_n = pack_params(chain)
        theta = theta_n + rng.normal(0, 0.05, theta_n.size)
        q0, q1 = rng.normal(size=(2, chain.n))
        x0, x1 = bcp_positions(chain, theta, np.stack([q0, q1]))
        data = CalibrationDataset((ToolPlacement(np.tile(q0, (4, 1)), np.tile(q1, (3, 1)),
                                                 float(np.linalg.norm(x1 - x0))),), chain.n)
        g = cost_gradient(chain, theta, theta_n, data, lam=0.01)
        np.testing.assert_allclose(g, 2 * 0.01 * (theta - theta_n), atol=1e-12)

    def test_stationary_at_noiseless_minimum(self, front_scenario, front_data):
        sc = front_scenario
        g = cost_gradient(sc.chain, sc.theta_true, sc.theta_nominal, front_data, lam=0)
        assert np.linalg.norm(g) <= 1e-8

    def test_degenerate_means(self):
        q = np.array([[0.1], [0.2]])
        data = CalibrationDataset((ToolPlacement(q, q, 0.1),), 1)
        with pytest.raises(DegenerateGradientError):
            cost_gradient(slider(), np.zeros(6), np.zeros(6), data)


@pytest.fixture(scope="module")
def runs(front_scenario, front_data):
    sc = front_scenario
    return {lam: optimize(sc.chain, sc.theta_nominal, front_data, CalibrationOptions(lam=lam))
            for lam in (0.0, 1e-4)}


class TestOptimize:
    def test_trace_non_increasing(self, runs):
        for result in runs.values():
            totals = [c.total for c in result.trace]
            assert all(b <= a for a, b in zip(totals, totals[1:]))
            assert totals[-1] < totals[0]

    def test_result_fields(self, runs):
        r = runs[1e-4]
        assert r.converged and r.iterations == len(r.trace) - 1
        assert r.mae_after <= r.mae_before
        assert r.distortion_after <= r.distortion_before
        assert r.removed_error == removed_error_percent(r.mae_before, r.mae_after)

    def test_noiseless_inconsistency(self, runs):
        assert runs[0.0].trace[-1].inconsistency <= 1e-10
        assert runs[1e-4].trace[-1].inconsistency <= 1e-9

    def test_regularizer_keeps_closer_to_nominal(self, runs, front_scenario):
        tn = front_scenario.theta_nominal
        assert np.linalg.norm(runs[1e-4].theta_star - tn) < np.linalg.norm(runs[0.0].theta_star - tn)

    def test_already_optimal_start(self, nominal_data):
        sc, data = nominal_data
        r = optimize(sc.chain, sc.theta_nominal, data)
        assert r.iterations <= 2 and r.converged
        np.testing.assert_allclose(r.theta_star, sc.theta_nominal, atol=1e-9)

    def test_fixed_mask(self, front_scenario, front_data):
        sc = front_scenario
        mask = np.zeros(sc.chain.n_params, dtype=bool)
        mask[:6] = True
        r = optimize(sc.chain, sc.theta_nominal, front_data,
                     CalibrationOptions(fixed_parameter_mask=mask, max_iterations=20))
        np.testing.assert_array_equal(r.theta_star[:6], sc.theta_nominal[:6])
        assert np.any(r.theta_star[6:] != sc.theta_nominal[6:])

    def test_iteration_budget(self, front_scenario, front_data):
        sc = front_scenario
        r = optimize(sc.chain, sc.theta_nominal, front_data, CalibrationOptions(max_iterations=3))
        assert not r.converged and r.iterations == 3 and len(r.trace) == 4

    @pytest.mark.parametrize("kw", [dict(lam=-1.0), dict(rel_tol=0.0), dict(max_iterations=0),
                                    dict(abs_tol=-1.0)])
    def test_invalid_options(self, kw):
        with pytest.raises(ValueError):
            CalibrationOptions(**kw)

    def test_trace_csv(self, runs):
        text = trace_to_csv(runs[0.0].trace)
        lines = text.splitlines()
        assert lines[0] == "iteration,inconsistency,distortion,regularization,total"
        assert len(lines) == len(runs[0.0].trace) + 1
        assert all(line.split(",")[3] == "0.0" for line in lines[1:])


class TestMetrics:
    def test_mae_zero_when_consistent(self):
        data = CalibrationDataset((ToolPlacement([[0.25]] * 3, [[0.5]] * 3, 0.25),), 1)
        assert mean_absolute_error(slider(), np.zeros(6), data) == 0.0

    def test_mae_two_samples(self):
        data = CalibrationDataset((ToolPlacement([[0.0], [0.002]], [[0.1], [0.102]], 0.1),), 1)
        assert mean_absolute_error(slider(), np.zeros(6), data) == pytest.approx(0.001, abs=1e-15)

    def test_mae_averages_placements(self):
        a = ToolPlacement([[0.0], [0.002]], [[0.1], [0.102]], 0.1)
        b = ToolPlacement([[0.0]] * 2, [[0.1]] * 2, 0.1)
        data = CalibrationDataset((a, b), 1)
        assert mean_absolute_error(slider(), np.zeros(6), data) == pytest.approx(0.0005, abs=1e-15)
        assert placement_mae(slider(), np.zeros(6), a) == pytest.approx(0.001, abs=1e-15)

    def test_nominal_mae_is_millimeter_scale(self, front_scenario, front_data):
        mae = mean_absolute_error(front_scenario.chain, front_scenario.theta_nominal, front_data)
        assert 1e-3 <= mae <= 2e-2

    def test_removed_error_reference_rows(self):
        assert removed_error_percent(8.28e-3, 1.68e-4) == pytest.approx(97.97, abs=0.01)
        assert removed_error_percent(7.23e-4, 1.07e-4) == pytest.approx(85.20, abs=0.05)

    def test_removed_error_identities(self):
        assert removed_error_percent(0.004, 0.004) == 0.0
        rng = np.random.default_rng(9)
        for b, a in rng.uniform(1e-5, 1e-1, (50, 2)):
            assert removed_error_percent(b, a) == 100.0 * (1.0 - a / b)
        for bad in (0.0, -1e-3):
            with pytest.raises(ValueError):
                removed_error_percent(bad, 1e-4)

    def test_distortion_examples(self):
        exact = ToolPlacement([[0.0]], [[0.1]], 0.1)
        long = ToolPlacement([[0.0]], [[0.102]], 0.1)
        assert distortion_error(slider(), np.zeros(6), exact) == pytest.approx(0.0, abs=1e-16)
        assert distortion_error(slider(), np.zeros(6), long) == pytest.approx(0.002, abs=1e-15)


class TestInsertion:
    def test_perfect_model_always_succeeds(self, front_scenario):
        sc = front_scenario
        r = insertion_feasibility(sc.chain, sc.theta_true, sc.theta_true, [[0.45, 0.0, 0.1]],
                                  clearance_m=4e-4, trials=20, rng=0)
        assert (r.successes, r.trials, r.ik_failures) == (20, 20, 0)
        assert r.success_fraction == 1.0

    def test_nominal_model_fails(self, front_scenario):
        sc = front_scenario
        r = insertion_feasibility(sc.chain, sc.theta_nominal, sc.theta_true, [[0.45, 0.0, 0.1]],
                                  clearance_m=4e-4, trials=20, rng=0)
        assert r.successes == 0
        assert np.all(r.errors > 2e-4)

    def test_invalid_clearance(self, front_scenario):
        sc = front_scenario
        with pytest.raises(ValueError):
            insertion_feasibility(sc.chain, sc.theta_true, sc.theta_true, [[0.45, 0, 0.1]], 0.0)
