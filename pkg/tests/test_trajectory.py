import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import random_trajectory
from oracles import affine_units, max_sync_deviation, position_at, quad_mean
from ntree.trajectory import (
    CylinderUnit,
    DegenerateSpanError,
    DistanceAvg,
    Hausdorff,
    LinearMotion,
    SpanMismatchError,
    Trajectory,
    adjust,
    avg_deviation,
    bounding_cylinder,
    cylinder_approx,
    cylinder_distances,
    discrete_hausdorff,
    distance_avg,
    douglas_peucker,
    mean_motion_distance,
    read_trajectories,
    refinement_partition,
    retime_constant_speed,
    sqrt_quadratic_mean,
    unit_avg_distance,
    write_trajectories,
)


def traj(*samples):
    """Trajectory from ``(t, x, y)`` samples."""
    a = np.array(samples, dtype=float)
    return Trajectory.from_samples(a[:, 0], a[:, 1:])


def dense_distance(U, V, ref=(0.0, 3600.0), samples=10_000):
    t, dur = ref
    ts = t + (np.arange(samples) + 0.5) * dur / samples

    def path(W):
        tt, xs, ys = [], [], []
        for s, e, p0, p1 in affine_units(W.units, t, dur):
            tt += [s, e]
            xs += [p0[0], p1[0]]
            ys += [p0[1], p1[1]]
        return np.interp(ts, tt, xs), np.interp(ts, tt, ys)

    ux, uy = path(U)
    vx, vy = path(V)
    return float(np.mean(np.hypot(ux - vx, uy - vy)))


class TestTrajectoryType:
    def test_rejects_zero_length_unit(self):
        with pytest.raises(ValueError):
            Trajectory([0.0], [0.0], [(0, 0)], [(1, 1)])

    def test_rejects_overlap(self):
        with pytest.raises(ValueError):
            Trajectory([0.0, 0.5], [1.0, 2.0], [(0, 0), (1, 1)], [(1, 1), (2, 2)])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Trajectory([], [], np.zeros((0, 2)), np.zeros((0, 2)))

    def test_gaps_allowed(self):
        U = Trajectory([0.0, 2.0], [1.0, 3.0], [(0, 0), (5, 5)], [(1, 0), (6, 5)])
        assert not U.gap_free
        t, p = U.vertices()
        assert t.tolist() == [0.0, 1.0, 2.0, 3.0]
        assert p.tolist() == [[0, 0], [1, 0], [5, 5], [6, 5]]

    def test_units_roundtrip(self):
        U = traj((0, 0, 0), (1, 1, 0), (3, 1, 2))
        assert Trajectory.from_units(U.units) == U


class TestAdjust:
    def test_single_unit(self):
        U = traj((10, 0, 0), (20, 1, 0))
        V = adjust(U, 0, 3600)
        assert V.units == [(0.0, 3600.0, (0.0, 0.0), (1.0, 0.0))]

    def test_closes_one_gap(self):
        U = Trajectory([0.0, 2.0], [1.0, 3.0], [(0, 0), (4, 0)], [(1, 0), (5, 0)])
        V = adjust(U, 0, 3)
        assert [(u.start, u.end) for u in V.units] == [(0, 1), (1, 2), (2, 3)]
        # the filler runs straight from the end of one unit to the start of the next
        assert V.units[1].p0 == (1.0, 0.0) and V.units[1].p1 == (4.0, 0.0)

    def test_scaling(self):
        # affine time map t' = 100 + (s - 0) * 6 / 4
        U = Trajectory([0.0, 1.0], [1.0, 4.0], [(0, 0), (1, 0)], [(1, 0), (2, 0)])
        V = adjust(U, 100, 6)
        assert [(u.start, u.end) for u in V.units] == [(100.0, 101.5), (101.5, 106.0)]

    def test_degenerate_span(self):
        U = traj((0, 0, 0), (1, 1, 1))
        U.end = U.start.copy()
        with pytest.raises(DegenerateSpanError):
            adjust(U, 0, 10)

    def test_non_positive_duration(self):
        with pytest.raises(ValueError):
            adjust(traj((0, 0, 0), (1, 1, 1)), 0, 0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.booleans(),
           st.floats(-1e5, 1e5), st.floats(1e-2, 1e5))
    def test_contract(self, seed, gaps, t, dur):
        U = random_trajectory(np.random.default_rng(seed), gaps=gaps)
        V = adjust(U, t, dur)
        assert V.span == (t, t + dur)
        assert V.gap_free
        # original vertices keep their coordinates, in order
        _, pu = U.vertices()
        _, pv = V.vertices()
        assert np.array_equal(pu, pv)
        # boundaries follow the affine map
        tu, _ = U.vertices()
        tv, _ = V.vertices()
        want = t + (tu - tu[0]) * dur / (tu[-1] - tu[0])
        np.testing.assert_allclose(tv, want, rtol=1e-12, atol=1e-9 * max(1.0, abs(t) + dur))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.booleans())
    def test_idempotent(self, seed, gaps):
        U = random_trajectory(np.random.default_rng(seed), gaps=gaps)
        A = adjust(U, 0, 3600)
        B = adjust(A, 0, 3600)
        np.testing.assert_allclose(B.start, A.start, atol=1e-12)
        np.testing.assert_allclose(B.end, A.end, atol=1e-12)
        assert np.array_equal(A.p0, B.p0) and np.array_equal(A.p1, B.p1)


class TestRefinementPartition:
    @staticmethod
    def on_breaks(bps):
        bps = list(bps)
        return Trajectory(bps[:-1], bps[1:], [(i, 0) for i in range(len(bps) - 1)],
                          [(i + 1, 0) for i in range(len(bps) - 1)])

    def test_figure_example(self):
        U = self.on_breaks([0, 0.3, 1])
        V = self.on_breaks([0, 0.1, 0.5, 0.7, 1])
        R = refinement_partition(U, V)
        assert [iv.start for iv in R] + [R[-1].end] == [0, 0.1, 0.3, 0.5, 0.7, 1]

    def test_identical_breaks(self):
        U = self.on_breaks([0, 1, 2, 5, 9])
        assert len(refinement_partition(U, U)) == 4

    def test_span_mismatch(self):
        with pytest.raises(SpanMismatchError):
            refinement_partition(self.on_breaks([0, 1]), self.on_breaks([0, 2]))

    def test_gaps_rejected(self):
        U = Trajectory([0.0, 2.0], [1.0, 3.0], [(0, 0), (0, 0)], [(0, 0), (0, 0)])
        with pytest.raises(SpanMismatchError):
            refinement_partition(U, self.on_breaks([0, 3]))

    def test_segments_match_units(self):
        U = self.on_breaks([0, 0.3, 1])
        V = self.on_breaks([0, 0.6, 1])
        for iv in refinement_partition(U, V):
            for t in (iv.start, 0.5 * (iv.start + iv.end), iv.end):
                np.testing.assert_allclose(iv.seg_u.at(t), position_at(U.units, t), atol=1e-12)
                np.testing.assert_allclose(iv.seg_v.at(t), position_at(V.units, t), atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.sets(st.integers(1, 999), max_size=20), st.sets(st.integers(1, 999), max_size=20))
    def test_sorted_union(self, a, b):
        U = self.on_breaks([0, *sorted(a), 1000])
        V = self.on_breaks([0, *sorted(b), 1000])
        R = refinement_partition(U, V)
        assert [iv.start for iv in R] + [R[-1].end] == sorted({0, 1000} | a | b)
        assert max(len(U), len(V)) <= len(R) <= len(U) + len(V)
        assert all(iv.start < iv.end for iv in R)


class TestUnitAvgDistance:
    def test_constant(self):
        a = LinearMotion(0, 1, (0, 0), (0, 0))
        b = LinearMotion(0, 1, (3, 4), (3, 4))
        assert unit_avg_distance(a, b) == pytest.approx(5, rel=1e-15)

    def test_linear_distance(self):
        a = LinearMotion(0, 1, (0, 0), (1, 0))
        b = LinearMotion(0, 1, (0, 0), (1, 1))
        assert unit_avg_distance(a, b) == pytest.approx(0.5, rel=1e-15)

    def test_general_case(self):
        a = LinearMotion(0, 1, (0, 0), (1, 0))
        b = LinearMotion(0, 1, (1, 1), (0, 1))
        want = (math.sqrt(2) + math.log(1 + math.sqrt(2))) / 2
        assert unit_avg_distance(a, b) == pytest.approx(want, rel=1e-14)
        assert unit_avg_distance(a, b) == pytest.approx(quad_mean(a, b), rel=1e-10)

    def test_empty_interval(self):
        a = LinearMotion(0, 1, (0, 0), (1, 0))
        with pytest.raises(ValueError):
            unit_avg_distance(a, a, (1, 1))

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    @pytest.mark.parametrize("kind", ["general", "parallel", "crossing", "static", "far"])
    def test_against_quadrature(self, rng, kind):
        for _ in range(300):
            t0 = rng.uniform(-100, 100)
            t1 = t0 + rng.uniform(0.1, 100)
            p = rng.normal(size=(4, 2)) * 50
            if kind == "parallel":
                p[3] = p[2] + (p[1] - p[0])  # same velocity: constant distance
            elif kind == "crossing":
                p[2] = p[0] + rng.normal(size=2) * 1e-3  # passes (nearly) through each other
                p[3] = p[1]
                p[3] = p[1] + (p[0] - p[2]) * rng.uniform(0.1, 2)
            elif kind == "static":
                p[1] = p[0]
                p[3] = p[2]
            elif kind == "far":
                p[2:] += 1e5
            a = LinearMotion(t0, t1, tuple(p[0]), tuple(p[1]))
            b = LinearMotion(t0, t1, tuple(p[2]), tuple(p[3]))
            got = unit_avg_distance(a, b)
            want = quad_mean(a, b)
            assert got == pytest.approx(want, rel=1e-10, abs=1e-300)

    def test_exact_zero_crossing(self):
        # distance |2t - 1| on [0, 1]: mean 1/2
        a = LinearMotion(0, 1, (-1, 0), (1, 0))
        b = LinearMotion(0, 1, (0, 0), (0, 0))
        assert unit_avg_distance(a, b) == pytest.approx(0.5, rel=1e-15)

    def test_vectorized_kernel(self, rng):
        A = rng.normal(size=(50, 2))
        B = rng.normal(size=(50, 2))
        B[::7] = 0
        out = mean_motion_distance(A, B)
        for i in range(50):
            a = LinearMotion(0, 1, (0, 0), (0, 0))
            b = LinearMotion(0, 1, tuple(-A[i]), tuple(-(A[i] + B[i])))
            assert out[i] == pytest.approx(quad_mean(a, b), rel=1e-10)


class TestSqrtQuadraticMean:
    @staticmethod
    def oracle(a, b, c, t0, t1):
        f = lambda t: math.sqrt(max(a * t * t + b * t + c, 0.0))
        pts = []
        if a > 0 and t0 < -b / (2 * a) < t1:
            pts.append(-b / (2 * a))
        if a == 0 and b != 0 and t0 < -c / b < t1:
            pts.append(-c / b)
        return quad(f, t0, t1, points=pts or None, epsabs=0, epsrel=1e-13, limit=500)[0] / (t1 - t0)

    @pytest.mark.parametrize(
        "a, b, c, t0, t1",
        [
            (0, 0, 25, 0, 1),  # constant
            (0, 2, 1, 0, 3),  # power rule
            (0, -2, 1, 0, 3),  # power rule, radicand hits zero inside
            (0, 2, -1, 0, 3),  # power rule, starts negative
            (1, -2, 1, 0, 3),  # perfect square (t - 1)^2
            (4, 0, 0, -1, 2),  # perfect square through zero
            (1, 0, 1, 0, 5),  # general
            (2, -3, 7, -4, 9),  # general, vertex inside
        ],
    )
    def test_branches(self, a, b, c, t0, t1):
        assert sqrt_quadratic_mean(a, b, c, t0, t1) == pytest.approx(self.oracle(a, b, c, t0, t1), rel=1e-10)

    def test_matches_kernel(self, rng):
        for _ in range(200):
            A, B = rng.normal(size=2), rng.normal(size=2)
            # |A + B s|^2 = |B|^2 s^2 + 2 A.B s + |A|^2
            got = sqrt_quadratic_mean(B @ B, 2 * A @ B, A @ A, 0.0, 1.0)
            assert got == pytest.approx(mean_motion_distance(A, B)[0], rel=1e-12)

    def test_negative_leading_coefficient(self):
        with pytest.raises(ValueError):
            sqrt_quadratic_mean(-1, 0, 1, 0, 1)


class TestDistanceAvg:
    def test_identity(self, make_traj):
        for _ in range(20):
            U = make_traj(gaps=True)
            assert distance_avg(U, U) == 0

    def test_constant_offset(self):
        U = traj((0, 0, 0), (10, 0, 0))
        V = traj((0, 3, 4), (10, 3, 4))
        assert distance_avg(U, V) == pytest.approx(5, rel=1e-15)

    def test_dense_sampling_oracle(self, rng):
        for _ in range(200):
            U = random_trajectory(rng, gaps=bool(rng.integers(2)))
            V = random_trajectory(rng)
            got = distance_avg(U, V)
            assert got == pytest.approx(dense_distance(U, V), rel=1e-6)

    def test_reference_interval_irrelevant_to_value(self, make_traj):
        # a uniform time rescaling does not change a time average
        U, V = make_traj(), make_traj()
        assert distance_avg(U, V, (0, 3600)) == pytest.approx(distance_avg(U, V, (-50, 7)), rel=1e-12)

    def test_metric_object(self, make_traj):
        U, V = make_traj(), make_traj()
        m = DistanceAvg(0, 100)
        assert m(U, V) == distance_avg(U, V, (0, 100))
        assert m.prepare(U).span == (0, 100)
        assert m(m.prepare(U), m.prepare(V)) == m(U, V)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_axioms(self, seed):
        rng = np.random.default_rng(seed)
        U, V, W = (random_trajectory(rng, gaps=bool(rng.integers(2))) for _ in range(3))
        uv, vw, uw = distance_avg(U, V), distance_avg(V, W), distance_avg(U, W)
        assert uv == distance_avg(V, U)
        assert uw <= (uv + vw) * (1 + 1e-9)
        assert distance_avg(U, U) < 1e-12


class TestHausdorff:
    def test_identity(self):
        A = [(0, 0), (1, 2), (3, 3)]
        assert discrete_hausdorff(A, A) == 0

    def test_singletons(self):
        assert discrete_hausdorff([(0, 0)], [(3, 4)]) == 5

    def test_asymmetric_parts(self):
        assert discrete_hausdorff([(0, 0), (10, 0)], [(0, 1)]) == pytest.approx(math.sqrt(101))

    def test_brute_force(self, rng):
        for _ in range(50):
            A = rng.normal(size=(rng.integers(1, 20), 2))
            B = rng.normal(size=(rng.integers(1, 20), 2))
            h = lambda X, Y: max(min(math.dist(x, y) for y in Y) for x in X)
            assert discrete_hausdorff(A, B) == pytest.approx(max(h(A, B), h(B, A)), rel=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            discrete_hausdorff([], [(0, 0)])

    def test_on_trajectories(self):
        U = traj((0, 0, 0), (1, 10, 0))
        V = traj((5, 0, 1), (9, 0, 2))
        assert Hausdorff()(U, V) == pytest.approx(math.sqrt(101))


def vertex_deviation(U, A):
    """Largest distance between U and A at U's unit endpoints."""
    worst = 0.0
    for s, e, p0, p1 in U.units:
        for t, p in ((s, p0), (e, p1)):
            q = position_at(A.units, t)
            worst = max(worst, math.hypot(p[0] - q[0], p[1] - q[1]))
    return worst


class TestDouglasPeucker:
    def test_straight(self):
        U = traj(*[(t, 2 * t, -t) for t in range(20)])
        for r in (1e-9, 1.0, 100.0):
            assert len(douglas_peucker(U, r)) == 1

    def test_large_radius(self, make_traj):
        U = make_traj(n_units=10)
        A1 = Trajectory.from_samples([U.span[0], U.span[1]], [U.p0[0], U.p1[-1]])
        r = vertex_deviation(U, A1)
        A = douglas_peucker(U, r)
        assert len(A) == 1 and A == A1

    def test_sawtooth(self):
        r = 3.0
        U = traj(*[(t, t, 2 * r * (t % 2)) for t in range(41)])
        A = douglas_peucker(U, r)
        assert vertex_deviation(U, A) <= r
        assert len(A) > 1

    def test_keeps_original_vertices(self, rng):
        for _ in range(100):
            U = random_trajectory(rng, n_units=int(rng.integers(2, 40)))
            r = float(rng.uniform(1, 200))
            A = douglas_peucker(U, r)
            tu, pu = U.vertices()
            ta, pa = A.vertices()
            idx = np.searchsorted(tu, ta)
            assert np.array_equal(tu[idx], ta) and np.array_equal(pu[idx], pa)
            assert ta[0] == tu[0] and ta[-1] == tu[-1]
            assert vertex_deviation(U, A) <= r * (1 + 1e-12)


class TestCylinderApprox:
    def test_straight(self):
        U = traj((0, 0, 0), (1, 1, 1), (2, 2, 2))
        c = cylinder_approx(U, 5.0)
        assert len(c.axis) == 1 and c.radius == 5.0 and c.source_span == (0, 2)
        assert avg_deviation(U, c.axis) < 2.5

    def test_falls_back_to_half_radius(self):
        # a long plateau at 0.95 r: the r-approximation is a single unit whose
        # average deviation is well above r/2
        r = 10.0
        U = traj((0, 0, 0), (1, 1, 0.95 * r), (9, 9, 0.95 * r), (10, 10, 0))
        assert len(douglas_peucker(U, r)) == 1
        assert avg_deviation(U, douglas_peucker(U, r)) >= r / 2
        c = cylinder_approx(U, r)
        assert c.axis == douglas_peucker(U, r / 2)
        assert c.radius == r

    def test_rule_on_random(self, rng):
        for _ in range(1000):
            U = adjust(random_trajectory(rng, n_units=int(rng.integers(1, 30))), 0, 3600)
            r = float(rng.uniform(5, 150))
            c = cylinder_approx(U, r)
            assert avg_deviation(U, c.axis) < r / 2
            if avg_deviation(U, douglas_peucker(U, r)) >= r / 2:
                assert c.axis == douglas_peucker(U, r / 2)
            else:
                assert c.axis == douglas_peucker(U, r)

    def test_positive_radius(self):
        with pytest.raises(ValueError):
            cylinder_approx(traj((0, 0, 0), (1, 1, 1)), 0)


class TestAvgDeviation:
    def test_self(self, make_traj):
        U = make_traj()
        assert avg_deviation(U, U) == 0

    def test_single_unit(self):
        U = traj((0, 0, 0), (3, 1, 1))
        assert avg_deviation(U, traj((0, 0, 0), (3, 1, 1))) == 0

    def test_definition(self, rng):
        for _ in range(50):
            U = random_trajectory(rng, n_units=int(rng.integers(2, 20)))
            A = douglas_peucker(U, 30.0)
            t0, t1 = U.span
            assert avg_deviation(U, A) == pytest.approx(distance_avg(U, A, (t0, t1 - t0)), rel=1e-12)

    def test_span_mismatch(self):
        with pytest.raises(SpanMismatchError):
            avg_deviation(traj((0, 0, 0), (1, 1, 1)), traj((0, 0, 0), (2, 1, 1)))


class TestBoundingCylinder:
    def test_single_unit(self):
        c = bounding_cylinder(traj((0, 0, 0), (5, 3, 3)))
        assert c.r == 0

    def test_peak(self):
        c = bounding_cylinder(traj((0, 0, 0), (1, 1, 1), (2, 2, 0)))
        assert (c.p0, c.p1, c.r) == ((0, 0), (2, 0), 1)

    def test_dense_samples(self, rng):
        for _ in range(30):
            U = random_trajectory(rng, n_units=int(rng.integers(2, 15)))
            c = bounding_cylinder(U)
            axis = [(c.start, c.end, c.p0, c.p1)]
            dense = max_sync_deviation(U.units, axis, samples=2000)
            at_vertices = max(
                math.dist(p, position_at(axis, t)) for t, p in zip(*U.vertices())
            )
            assert c.r == pytest.approx(max(dense, at_vertices), abs=1e-9)
            assert c.r >= dense - 1e-9


class TestCylinderDistances:
    def test_same(self):
        v = CylinderUnit(0, 1, (0, 0), (1, 1), 2.0)
        assert cylinder_distances(v, v) == (0, -4, 4)

    def test_parallel(self):
        v = CylinderUnit(0, 1, (0, 0), (1, 0), 2.0)
        w = CylinderUnit(0, 1, (0, 10), (1, 10), 3.0)
        d, lo, hi = cylinder_distances(v, w)
        assert d == pytest.approx(10) and lo == pytest.approx(5) and hi == pytest.approx(15)

    def test_interval_mismatch(self):
        with pytest.raises(SpanMismatchError):
            cylinder_distances(CylinderUnit(0, 1, (0, 0), (1, 0), 1), CylinderUnit(0, 2, (0, 0), (1, 0), 1))

    def test_invalid(self):
        with pytest.raises(ValueError):
            CylinderUnit(1, 1, (0, 0), (0, 0), 0)
        with pytest.raises(ValueError):
            CylinderUnit(0, 1, (0, 0), (0, 0), -1)

    def test_enclosure(self, rng):
        for _ in range(300):
            U = adjust(random_trajectory(rng, gaps=bool(rng.integers(2))), 0, 3600)
            V = adjust(random_trajectory(rng), 0, 3600)
            _, lo, hi = cylinder_distances(bounding_cylinder(U), bounding_cylinder(V))
            d = distance_avg(U, V)
            assert lo <= d * (1 + 1e-12) + 1e-9
            assert d <= hi * (1 + 1e-12) + 1e-9


class TestCSV:
    def test_roundtrip(self, tmp_path, rng):
        trajs = [random_trajectory(rng) for _ in range(5)]
        path = tmp_path / "t.csv"
        write_trajectories(path, list("abcde"), trajs)
        ids, back = read_trajectories(path)
        assert ids == list("abcde") and back == trajs

    @pytest.mark.parametrize(
        "text, msg",
        [
            ("id,x,y\n", "header"),
            ("id,t,x,y\na,0,0,0\na,1,1,1\nb,0,0,0\nb,1,0,0\na,2,2,2\n", "grouped"),
            ("id,t,x,y\na,0,0,0\na,0,1,1\n", "increasing"),
            ("id,t,x,y\na,0,0,0\n", "two samples"),
        ],
    )
    def test_errors(self, tmp_path, text, msg):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(ValueError, match=msg):
            read_trajectories(path)

    def test_spatial_only(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("id,t,x,y\na,0,0,0\na,1,3,4\na,100,3,4\na,101,3,14\n")
        _, (U,) = read_trajectories(path, spatial_only=True)
        # duplicate point dropped, times follow path length (5 + 10)
        assert U.span == (0, 1)
        np.testing.assert_allclose(U.end, [1 / 3, 1])

    def test_retime_single_point(self):
        U = retime_constant_speed([(2, 2), (2, 2)])
        assert len(U) == 1 and U.units[0].p0 == U.units[0].p1 == (2, 2)
