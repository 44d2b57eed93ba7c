import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lgpolymer.lattice import LogZLattice, dual_weights, forward_logZ, reverse_logW
from lgpolymer.polymer import (
    NumericalFailure,
    PolymerPath,
    crossing_distribution,
    dual_exit_at_least,
    dual_kernel,
    dual_path_log_probability,
    exit_distribution,
    exit_phi_expectation,
    last_run_at_least,
    last_step_probability,
    path_functionals,
    sample_dual_path,
    sample_path,
    sample_paths,
    write_distribution_csv,
    write_path_csv,
)
from lgpolymer.randenv import Environment, RngStream, build_env
from lgpolymer.specfun import ModelParams, phi

from oracles import enumerate_paths

P = ModelParams(0.8, 2.0)


def ones_env(m, n):
    return Environment(m, n, np.zeros(m), np.zeros(n), np.zeros((m, n)), True, 2.0, ModelParams(1, 2))


def path_log_weight(w, pts):
    return sum(w[i, j] for i, j in pts[1:])


def exact_path_law(env):
    w = env.full_log_weights()
    paths = enumerate_paths(env.m, env.n)
    lw = np.array([path_log_weight(w, p) for p in paths])
    return [tuple(map(tuple, p)) for p in paths], np.exp(lw - np.logaddexp.reduce(lw))


def sample_counts(lat, rng, count):
    steps = sample_paths(lat, rng, count)
    keys = Counter(map(bytes, steps))
    return keys


class TestPath:
    def test_from_steps(self):
        p = PolymerPath.from_steps([0, 0, 1, 0, 1])
        assert p.points.tolist() == [[0, 0], [1, 0], [2, 0], [2, 1], [3, 1], [3, 2]]
        assert p.exit_x == 2 and p.exit_y == 0

    def test_rejects_bad_steps(self):
        with pytest.raises(ValueError):
            PolymerPath(np.array([[0, 0], [1, 1]]))

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=40))
    def test_exactly_one_exit_nonzero(self, steps):
        p = PolymerPath.from_steps(steps)
        assert (p.exit_x == 0) != (p.exit_y == 0)


class TestSampler:
    def test_uniform_on_unit_weights(self):
        lat = forward_logZ(ones_env(2, 2))
        counts = sample_counts(lat, RngStream(1), 60000)
        assert len(counts) == 6
        for c in counts.values():
            assert abs(c / 60000 - 1 / 6) < 4 * math.sqrt((1 / 6) * (5 / 6) / 60000)

    def test_chi_square_vs_enumeration(self):
        env = build_env(2, 2, P, RngStream(2))
        lat = forward_logZ(env)
        paths, probs = exact_path_law(env)
        steps = sample_paths(lat, RngStream(3), 50000)
        observed = Counter()
        for s in steps:
            observed[tuple(map(tuple, PolymerPath.from_steps(s).points))] += 1
        obs = np.array([observed[p] for p in paths])
        assert stats.chisquare(obs, probs * obs.sum()).pvalue > 1e-3

    def test_single_path_object(self):
        env = build_env(4, 3, P, RngStream(4))
        p = sample_path(forward_logZ(env), env, RngStream(5))
        assert tuple(p.points[0]) == (0, 0) and tuple(p.points[-1]) == (4, 3)

    def test_bulk_rooted_paths(self):
        from lgpolymer.lattice import bulk_logZ
        from lgpolymer.randenv import build_bulk_env

        lat = bulk_logZ(build_bulk_env(6, 5, 1.0, RngStream(6)))
        p = sample_path(lat, None, RngStream(7))
        assert tuple(p.points[0]) == (1, 1) and tuple(p.points[-1]) == (6, 5)

    def test_exit_law_of_samples(self):
        env = build_env(50, 50, ModelParams(1.0, 2.0), RngStream(8))
        lat = forward_logZ(env)
        exd = exit_distribution(env, lat, reverse_logW(env))
        steps = sample_paths(lat, RngStream(9), 100000)
        first = steps[:, 0]
        run = np.argmax(steps != first[:, None], axis=1)
        run[np.all(steps == first[:, None], axis=1)] = steps.shape[1]
        emp_x = np.bincount(run[first == 0], minlength=51)[1:] / len(steps)
        emp_y = np.bincount(run[first == 1], minlength=51)[1:] / len(steps)
        tv = 0.5 * (np.abs(emp_x - exd.px).sum() + np.abs(emp_y - exd.py).sum())
        assert tv < 0.01


class TestDualSampler:
    def test_kernel_rows(self):
        lat = forward_logZ(build_env(6, 5, P, RngStream(10)))
        k = dual_kernel(lat)
        inner = k[:-1, :-1]
        assert np.all((inner > 0) & (inner < 1))
        assert np.all(k[:-1, -1] == 1.0) and np.all(k[-1, :-1] == 0.0)

    def test_unit_weights_two_by_two(self):
        k = dual_kernel(forward_logZ(ones_env(2, 2)))
        # from binomial Z values: Z10 = Z01 = 1, Z20 = Z02 = 1, Z11 = 2, Z21 = Z12 = 3
        assert k[0, 0] == pytest.approx(0.5)
        assert k[1, 0] == pytest.approx(2 / 3)
        assert k[0, 1] == pytest.approx(1 / 3)
        assert k[1, 1] == pytest.approx(0.5)

    def test_path_probabilities_match_product_form(self):
        env = build_env(3, 2, P, RngStream(11))
        lat = forward_logZ(env)
        dual = dual_weights(lat)
        k = dual_kernel(lat)
        total = 0.0
        for pts in enumerate_paths(3, 2):
            path = PolymerPath(np.array(pts))
            pk = 1.0
            for (i, j), (i2, _) in zip(pts[:-1], pts[1:]):
                pk *= k[i, j] if i2 > i else 1 - k[i, j]
            pq = math.exp(dual_path_log_probability(dual, lat, path))
            assert pq == pytest.approx(pk, rel=1e-10)
            total += pq
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_sampled_frequencies(self):
        env = build_env(2, 2, P, RngStream(12))
        lat = forward_logZ(env)
        dual = dual_weights(lat)
        paths = [tuple(map(tuple, p)) for p in enumerate_paths(2, 2)]
        probs = np.array([math.exp(dual_path_log_probability(dual, lat, PolymerPath(np.array(p)))) for p in paths])
        rng = RngStream(13)
        obs = Counter(tuple(map(tuple, sample_dual_path(dual, lat, rng).points)) for _ in range(20000))
        o = np.array([obs[p] for p in paths])
        assert stats.chisquare(o, probs * o.sum()).pvalue > 1e-3

    def test_dual_exit_matches_kernel(self):
        lat = forward_logZ(build_env(7, 6, P, RngStream(14)))
        k = dual_kernel(lat)
        assert dual_exit_at_least(lat, 3) == pytest.approx(k[0, 0] * k[1, 0] * k[2, 0], rel=1e-12)
        assert dual_exit_at_least(lat, 0) == 1.0 and dual_exit_at_least(lat, 8) == 0.0


class TestExitDistribution:
    def test_unit_weights_binomials(self):
        env = ones_env(3, 3)
        exd = exit_distribution(env, forward_logZ(env), reverse_logW(env))
        expect = [math.comb(3 - k + 2, 2) / math.comb(6, 3) for k in (1, 2, 3)]
        np.testing.assert_allclose(exd.px, expect, atol=1e-14)
        np.testing.assert_allclose(exd.py, expect, atol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 10**6))
    def test_normalized(self, m, n, seed):
        env = build_env(m, n, P, RngStream(seed))
        exd = exit_distribution(env, forward_logZ(env), reverse_logW(env))
        assert exd.px.sum() + exd.py.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.all(exd.px >= 0) and np.all(exd.py >= 0)

    def test_corrupted_lattice_flagged(self):
        env = build_env(5, 5, P, RngStream(15))
        lat = forward_logZ(env)
        bad = LogZLattice(lat.m, lat.n, lat.logz + 1e-3)
        with pytest.raises(NumericalFailure):
            exit_distribution(env, bad, reverse_logW(env))

    def test_degenerate_rectangles(self):
        env = build_env(1, 0, P, RngStream(16))
        exd = exit_distribution(env, forward_logZ(env), reverse_logW(env))
        assert exd.px.tolist() == [1.0] and exd.py.size == 0
        assert exit_phi_expectation(env, exd) == pytest.approx(phi(P.theta, math.exp(-env.log_u0[0])))
        assert exit_phi_expectation(env, exd, "y") == 0.0

    def test_phi_expectation_by_hand(self):
        env = build_env(4, 3, P, RngStream(17))
        exd = exit_distribution(env, forward_logZ(env), reverse_logW(env))
        ph = [phi(P.theta, math.exp(-v)) for v in env.log_u0]
        expect = sum(exd.px[k] * sum(ph[: k + 1]) for k in range(4))
        assert exit_phi_expectation(env, exd) == pytest.approx(expect, rel=1e-12)

    def test_concentrated_on_y_axis(self):
        env = build_env(6, 6, P, RngStream(18))
        # make the horizontal boundary negligible
        env = Environment(6, 6, env.log_u0 - 200, env.log_v0, env.log_y, True, env.mu, env.params)
        exd = exit_distribution(env, forward_logZ(env), reverse_logW(env))
        assert exit_phi_expectation(env, exd) < 1e-50


class TestLastStep:
    def test_in_unit_interval(self):
        for r in range(50):
            v = last_step_probability(forward_logZ(build_env(5, 5, P, RngStream(19, r))))
            assert 0 < v < 1

    def test_uniform_mean_at_symmetric_point(self):
        q = ModelParams(1.0, 2.0)
        v = np.array([last_step_probability(forward_logZ(build_env(10, 10, q, RngStream(20, r)))) for r in range(4000)])
        assert abs(v.mean() - 0.5) < 4 * math.sqrt(1 / 12 / len(v))

    def test_beta_law(self):
        v = [last_step_probability(forward_logZ(build_env(15, 12, P, RngStream(21, r)))) for r in range(2000)]
        assert stats.kstest(v, stats.beta(P.theta, P.mu - P.theta).cdf).pvalue > 1e-3

    def test_last_run_k1_is_last_step(self):
        env = build_env(6, 4, P, RngStream(22))
        lat = forward_logZ(env)
        assert last_run_at_least(env, lat, 1) == pytest.approx(last_step_probability(lat), rel=1e-12)

    def test_last_run_matches_enumeration(self):
        env = build_env(4, 3, P, RngStream(23))
        paths, probs = exact_path_law(env)
        lat = forward_logZ(env)
        for k in (1, 2, 3, 4):
            expect = sum(pr for p, pr in zip(paths, probs) if all(p[-1 - s][1] == 3 for s in range(k + 1)))
            assert last_run_at_least(env, lat, k) == pytest.approx(expect, rel=1e-10)

    def test_first_step_law_shift(self):
        # Q_{m,n}(xi_x > 0) and Q_{m+1,n}(xi_x > 1) agree in law
        a, b = [], []
        for r in range(1500):
            e1 = build_env(12, 10, P, RngStream(24, r))
            a.append(exit_distribution(e1, forward_logZ(e1), reverse_logW(e1)).px.sum())
            e2 = build_env(13, 10, P, RngStream(25, r))
            b.append(exit_distribution(e2, forward_logZ(e2), reverse_logW(e2)).px[1:].sum())
        assert stats.ks_2samp(a, b).pvalue > 1e-3


class TestCrossing:
    def test_unit_weights(self):
        env = ones_env(4, 4)
        cd = crossing_distribution(2, forward_logZ(env), reverse_logW(env))
        # paths through the edge (i,2)->(i,3): C(i+2, 2) * C(5-i, 1) out of C(8, 4)
        expect = np.array([math.comb(i + 2, 2) * (5 - i) for i in range(5)]) / 70
        np.testing.assert_allclose(cd.pv, expect, atol=1e-14)

    def test_level_zero_is_exit_law(self):
        env = build_env(9, 8, P, RngStream(26))
        lat, rev = forward_logZ(env), reverse_logW(env)
        cd = crossing_distribution(0, lat, rev)
        exd = exit_distribution(env, lat, rev)
        np.testing.assert_allclose(cd.pv[1:], exd.px, atol=1e-12)
        assert cd.pv[0] == pytest.approx(exd.py.sum(), abs=1e-12)

    def test_matches_kernel(self):
        from lgpolymer import _kernels

        env = build_env(12, 9, P, RngStream(27))
        lat, rev = forward_logZ(env), reverse_logW(env)
        for level in (0, 4, 8):
            lw = _kernels.crossing_log_weights(env.full_log_weights(), level)
            np.testing.assert_allclose(np.exp(lw - lat.log_partition), crossing_distribution(level, lat, rev).pv,
                                       atol=1e-12)

    def test_matches_sampled_paths(self):
        env = build_env(5, 4, P, RngStream(28))
        lat, rev = forward_logZ(env), reverse_logW(env)
        cd = crossing_distribution(1, lat, rev)
        paths, probs = exact_path_law(env)
        expect = np.zeros(6)
        for p, pr in zip(paths, probs):
            expect[max(i for i, j in p if j == 1)] += pr
        np.testing.assert_allclose(cd.pv, expect, atol=1e-12)

    def test_level_validation(self):
        env = ones_env(3, 3)
        with pytest.raises(ValueError):
            crossing_distribution(3, forward_logZ(env), reverse_logW(env))


class TestFunctionals:
    def test_staircase(self):
        p = PolymerPath.from_steps([0, 1] * 4)
        f = path_functionals(p)
        assert f.v.tolist() == [0, 1, 2, 3, 4] and f.vbar.tolist() == [1, 2, 3, 4, 4]

    def test_alternating_from_north(self):
        f = path_functionals(PolymerPath.from_steps([1, 0] * 3))
        assert f.v.tolist() == [0, 0, 1, 2] and f.vbar.tolist() == [0, 1, 2, 3]
        assert f.w.tolist() == [0, 1, 2, 3] and f.wbar.tolist() == [1, 2, 3, 3]
        assert f.exit_x == 0 and f.exit_y == 1

    def test_horizontal_then_vertical(self):
        f = path_functionals(PolymerPath.from_steps([0] * 5 + [1] * 3))
        assert f.exit_x == 5 and f.vbar[0] == 5 and f.exit_y == 0

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=60))
    def test_orderings(self, steps):
        f = path_functionals(PolymerPath.from_steps(steps))
        assert np.all(f.v <= f.vbar) and np.all(f.vbar[:-1] <= f.v[1:])
        assert np.all(f.w <= f.wbar) and np.all(f.wbar[:-1] <= f.w[1:])
        assert f.exit_x == (f.vbar[0] if steps[0] == 0 else 0)


class TestCsv:
    def test_path_csv(self, tmp_path):
        write_path_csv(PolymerPath.from_steps([0, 1]), tmp_path / "p.csv")
        assert (tmp_path / "p.csv").read_text().splitlines() == ["k,i,j", "0,0,0", "1,1,0", "2,1,1"]

    def test_distribution_csv(self, tmp_path):
        write_distribution_csv([0.25, 0.75], tmp_path / "d.csv", first_index=1)
        assert (tmp_path / "d.csv").read_text().splitlines() == ["index,probability", "1,0.25", "2,0.75"]
