import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bundle_unmix.prox import (
    PenaltySpec,
    penalty_value,
    project_simplex,
    prox_group_l2,
    prox_l1,
    prox_lhalf,
    prox_tl1,
    tl1,
    tl1_threshold,
)
from oracles import prox_oracle, simplex_projection_oracle


def _obj(pen, u, v, lam):
    return lam * pen(u) + 0.5 * (u - v) ** 2


L1 = np.abs
LHALF = lambda u: np.sqrt(np.abs(u))


def TL1(b):
    return lambda u: tl1(u, b)


# frozen from prox_oracle(LHALF, 3.0, 0.1) and prox_oracle(TL1(1), 3.0, 0.1)
LHALF_3_01 = 2.9709919
TL1_3_01 = 2.9874210


class TestPenaltyValue:
    def test_l1(self):
        assert penalty_value(PenaltySpec("L1"), [1, -2, 0]) == 3

    def test_tl1_zero(self):
        assert penalty_value(PenaltySpec("TL1", b=3.0), [0.0]) == 0

    def test_tl1_large_b_is_l1(self):
        assert penalty_value(PenaltySpec("TL1", b=1e6), [1, 2]) == pytest.approx(3, rel=1e-3)

    def test_lq_power_sum(self):
        assert penalty_value(PenaltySpec("Lq", q=0.5), [4, -9]) == pytest.approx(5.0)

    def test_q_one_aliases_l1(self):
        assert PenaltySpec("Lq", q=1.0).effective_kind == "L1"

    @pytest.mark.parametrize("kw", [dict(kind="Lq", q=1.5), dict(kind="Lq", q=0.0), dict(kind="TL1", b=0.0), dict(kind="L3")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PenaltySpec(**kw)


class TestScalarProx:
    def test_l1_examples(self):
        assert prox_l1(0.0, 0.5) == 0
        assert prox_l1(2.0, 0.5) == 1.5
        assert prox_l1(-0.3, 0.5) == 0

    def test_lhalf_examples(self):
        assert prox_lhalf(0.0, 1.0) == 0
        assert prox_lhalf(0.1, 1.0) == 0
        assert prox_lhalf(3.0, 0.1) == pytest.approx(LHALF_3_01, abs=1e-6)

    def test_lhalf_frozen_value_matches_oracle(self):
        u, _ = prox_oracle(LHALF, 3.0, 0.1)
        assert u == pytest.approx(LHALF_3_01, abs=1e-6)
        u, _ = prox_oracle(LHALF, 0.1, 1.0)
        assert u == 0.0

    def test_tl1_examples(self):
        for v in (-2.0, 0.0, 0.3, 7.0):
            assert prox_tl1(v, 0.0, 1.0) == v
        assert tl1_threshold(1.0, 1.0) == pytest.approx(1.5)
        assert prox_tl1(1.0, 1.0, 1.0) == 0
        assert prox_tl1(3.0, 0.1, 1.0) == pytest.approx(TL1_3_01, abs=1e-6)

    def test_tl1_frozen_value_matches_oracle(self):
        u, _ = prox_oracle(TL1(1.0), 3.0, 0.1)
        assert u == pytest.approx(TL1_3_01, abs=1e-6)

    def test_threshold_tie_returns_zero(self):
        # exactly at the threshold both branches tie; zero wins
        assert prox_l1(0.5, 0.5) == 0
        theta = tl1_threshold(1.0, 1.0)
        assert prox_tl1(theta, 1.0, 1.0) == 0

    @pytest.mark.parametrize("fn", [
        lambda v, lam: prox_l1(v, lam),
        lambda v, lam: prox_lhalf(v, lam),
        lambda v, lam: prox_tl1(v, lam, 0.7),
    ])
    def test_odd(self, fn):
        v = np.linspace(-5, 5, 401)
        for lam in (0.1, 0.5, 1.0):
            np.testing.assert_array_equal(fn(-v, lam), -fn(v, lam))

    def test_tl1_tends_to_l1(self):
        v = np.linspace(-5, 5, 1001)
        for lam in (0.1, 0.5, 1.0):
            assert np.max(np.abs(prox_tl1(v, lam, 1e6) - prox_l1(v, lam))) <= 1e-3

    def test_vectorised_matches_scalar(self):
        v = np.array([-3.0, -0.2, 0.0, 0.4, 2.5])
        for fn in (prox_l1, prox_lhalf):
            np.testing.assert_array_equal(fn(v, 0.3), [fn(x, 0.3) for x in v])

    @settings(max_examples=60, deadline=None)
    @given(
        v=st.floats(-5, 5),
        lam=st.floats(0.01, 2),
        b=st.sampled_from([0.5, 1.0, 10.0]),
    )
    def test_never_worse_than_oracle(self, v, lam, b):
        for pen, ours in [
            (L1, prox_l1(v, lam)),
            (LHALF, prox_lhalf(v, lam)),
            (TL1(b), prox_tl1(v, lam, b)),
        ]:
            _, best = prox_oracle(pen, v, lam, n_grid=20_001)
            assert _obj(pen, float(ours), v, lam) <= best + 1e-8


class TestGroupProx:
    def test_zero_vector(self):
        for f in (PenaltySpec("L1"), PenaltySpec("TL1"), PenaltySpec("Lq")):
            np.testing.assert_array_equal(prox_group_l2([0.0, 0.0], 0.7, f), [0.0, 0.0])

    def test_l1_shrinks_norm(self):
        np.testing.assert_allclose(prox_group_l2([3.0, 4.0], 1.0, PenaltySpec("L1")), [2.4, 3.2])

    def test_tl1_matches_norm_oracle(self):
        mag, _ = prox_oracle(TL1(1.0), 5.0, 0.5)
        np.testing.assert_allclose(
            prox_group_l2([3.0, 4.0], 0.5, PenaltySpec("TL1", b=1.0)),
            [0.6 * mag, 0.8 * mag],
            atol=1e-6,
        )

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-3, 3)), st.floats(0, 2))
    def test_direction_preserved(self, v, lam):
        out = prox_group_l2(v, lam, PenaltySpec("TL1", b=0.5))
        if np.linalg.norm(v) == 0:
            assert not out.any()
            return
        # nonnegative multiple of v
        c = out @ v / (v @ v)
        assert c >= 0
        np.testing.assert_allclose(out, c * v, atol=1e-12)


class TestSimplexProjection:
    def test_examples(self):
        np.testing.assert_allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5], atol=1e-15)
        np.testing.assert_array_equal(project_simplex([2.0, 0.0]), [1.0, 0.0])
        expected = simplex_projection_oracle([0.5, 0.5, -1.0])
        np.testing.assert_allclose(expected, [0.5, 0.5, 0.0])
        np.testing.assert_allclose(project_simplex([0.5, 0.5, -1.0]), expected, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 5), elements=st.floats(-10, 10)))
    def test_nearest_point(self, v):
        ours = project_simplex(v)
        ref = simplex_projection_oracle(v)
        assert np.linalg.norm(ours - v) <= np.linalg.norm(ref - v) + 1e-10

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 200), elements=st.floats(-1e3, 1e3)))
    def test_feasible_and_idempotent(self, v):
        u = project_simplex(v)
        assert np.all(u >= 0)
        assert abs(u.sum() - 1) <= 1e-12
        np.testing.assert_allclose(project_simplex(u), u, atol=1e-14)

    def test_columnwise(self):
        rng = np.random.default_rng(3)
        V = rng.normal(size=(6, 40))
        P = project_simplex(V)
        for j in range(V.shape[1]):
            np.testing.assert_array_equal(P[:, j], project_simplex(V[:, j]))
        np.testing.assert_array_equal(project_simplex(V.T, axis=1), P.T)
