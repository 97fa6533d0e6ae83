"""Evidential algebra: combination rule, conversions, labels, colors."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evigrid.errors import FullConflictError
from evigrid.evidential import (
    CellClass,
    DgmCell,
    MeasurementCell,
    classify,
    classify_planes,
    combine_dgm_planes,
    combine_measurement_planes,
    dempster_combine,
    dgm_cell_color,
    dgm_to_measurement,
    dgm_to_measurement_planes,
)

TOL = 1e-9


def _random_simplex(rng, n):
    """Uniform point on the n-simplex (independent oracle for mass tuples)."""
    cuts = np.sort(rng.uniform(0.0, 1.0, size=n - 1))
    return np.diff(np.concatenate([[0.0], cuts, [1.0]]))


@st.composite
def measurement_cells(draw):
    b_f = draw(st.floats(0.0, 1.0, allow_nan=False))
    b_o = draw(st.floats(0.0, 1.0 - b_f, allow_nan=False))
    return MeasurementCell(b_f, b_o, max(1.0 - b_f - b_o, 0.0))


@st.composite
def dgm_cells(draw):
    masses = []
    left = 1.0
    for _ in range(5):
        m = draw(st.floats(0.0, left, allow_nan=False))
        masses.append(m)
        left = max(left - m, 0.0)
    masses.append(left)
    return DgmCell(*masses)


class TestMeasurementCell:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            MeasurementCell(0.5, 0.6, 0.2)
        with pytest.raises(ValueError):
            MeasurementCell(-0.1, 0.6, 0.5)

    def test_vacuous(self):
        c = MeasurementCell.vacuous()
        assert (c.b_f, c.b_o, c.b_fo) == (0.0, 0.0, 1.0)


class TestDempsterCombine:
    def test_vacuous_identity(self):
        a = MeasurementCell(0.3, 0.4, 0.3)
        out = dempster_combine(MeasurementCell.vacuous(), a)
        assert out.b_f == pytest.approx(0.3, abs=TOL)
        assert out.b_o == pytest.approx(0.4, abs=TOL)
        assert out.b_fo == pytest.approx(0.3, abs=TOL)

    def test_hand_evaluated_no_conflict(self):
        # Hand evaluation with K = 0:
        # b_F = 0.5*0.5 + 0.5*0.5 + 0.5*0.5 = 0.75, b_FO = 0.25.
        a = MeasurementCell(0.5, 0.0, 0.5)
        out = dempster_combine(a, a)
        assert out.b_f == pytest.approx(0.75, abs=TOL)
        assert out.b_o == pytest.approx(0.0, abs=TOL)
        assert out.b_fo == pytest.approx(0.25, abs=TOL)

    def test_full_conflict_raises(self):
        with pytest.raises(FullConflictError):
            dempster_combine(MeasurementCell(1, 0, 0), MeasurementCell(0, 1, 0))

    @given(measurement_cells(), measurement_cells())
    def test_commutative_and_normalised(self, a, b):
        try:
            ab = dempster_combine(a, b)
            ba = dempster_combine(b, a)
        except FullConflictError:
            return
        assert ab.b_f + ab.b_o + ab.b_fo == pytest.approx(1.0, abs=TOL)
        assert ab.b_f == pytest.approx(ba.b_f, abs=TOL)
        assert ab.b_o == pytest.approx(ba.b_o, abs=TOL)

    @settings(max_examples=200)
    @given(measurement_cells(), measurement_cells(), measurement_cells())
    def test_associative(self, a, b, c):
        try:
            left = dempster_combine(dempster_combine(a, b), c)
            right = dempster_combine(a, dempster_combine(b, c))
        except FullConflictError:
            return
        assert left.b_f == pytest.approx(right.b_f, abs=TOL)
        assert left.b_o == pytest.approx(right.b_o, abs=TOL)
        assert left.b_fo == pytest.approx(right.b_fo, abs=TOL)

    def test_plane_version_matches_scalar(self):
        rng = np.random.default_rng(7)
        a = np.array([_random_simplex(rng, 3) for _ in range(64)])
        b = np.array([_random_simplex(rng, 3) for _ in range(64)])
        out = combine_measurement_planes(a, b)
        for i in range(64):
            ref = dempster_combine(MeasurementCell(*a[i]), MeasurementCell(*b[i]))
            np.testing.assert_allclose(out[i], [ref.b_f, ref.b_o, ref.b_fo], atol=TOL)

    def test_plane_version_full_conflict_falls_back_to_vacuous(self):
        a = np.array([[1.0, 0.0, 0.0]])
        b = np.array([[0.0, 1.0, 0.0]])
        np.testing.assert_array_equal(combine_measurement_planes(a, b), [[0, 0, 1]])


class TestDgmToMeasurement:
    def test_pure_static_is_occupied(self):
        out = dgm_to_measurement(DgmCell(0, 0, 1, 0, 0, 0))
        assert (out.b_f, out.b_o, out.b_fo) == (0.0, 1.0, 0.0)

    def test_pure_free(self):
        out = dgm_to_measurement(DgmCell(1, 0, 0, 0, 0, 0))
        assert (out.b_f, out.b_o, out.b_fo) == (1.0, 0.0, 0.0)

    def test_mixed_direct_substitution(self):
        out = dgm_to_measurement(DgmCell(0.2, 0.3, 0, 0, 0, 0.5))
        assert out.b_f == pytest.approx(0.2, abs=TOL)
        assert out.b_o == pytest.approx(0.3, abs=TOL)
        assert out.b_fo == pytest.approx(0.5, abs=TOL)

    @given(dgm_cells())
    def test_output_valid_for_any_cell(self, c):
        out = dgm_to_measurement(c)
        assert out.b_f + out.b_o + out.b_fo == pytest.approx(1.0, abs=TOL)

    def test_conversion_exactness_vs_substitution_oracle(self):
        # Direct-substitution oracle: occupied sums the three non-free
        # hypotheses, free copies {F}, unknown is the remainder.
        rng = np.random.default_rng(123)
        masses = np.array([_random_simplex(rng, 6) for _ in range(1000)])
        out = dgm_to_measurement_planes(masses)
        oracle = np.stack(
            [
                masses[:, 0],
                masses[:, 1] + masses[:, 2] + masses[:, 4],
                masses[:, 3] + masses[:, 5],
            ],
            axis=-1,
        )
        np.testing.assert_allclose(out, oracle, atol=TOL)


class TestClassify:
    @pytest.mark.parametrize(
        "cell,expected",
        [
            ((0.7, 0.1, 0.2), CellClass.FREE),
            ((0.2, 0.6, 0.2), CellClass.OCCUPIED),
            ((0.4, 0.4, 0.2), CellClass.OCCUPIED),  # tie: OCCUPIED over FREE
            ((0.4, 0.2, 0.4), CellClass.UNKNOWN),  # tie: UNKNOWN over FREE
            ((0.0, 0.5, 0.5), CellClass.UNKNOWN),
        ],
    )
    def test_argmax_with_conservative_ties(self, cell, expected):
        assert classify(MeasurementCell(*cell)) is expected

    @given(measurement_cells(), st.floats(0.1, 10.0, allow_nan=False))
    def test_invariant_under_rescaling(self, c, scale):
        raw = np.array([c.b_f, c.b_o, c.b_fo]) * scale
        rescaled = MeasurementCell(*(raw / raw.sum()))
        assert classify(rescaled) is classify(c)

    def test_plane_version_matches_scalar(self):
        rng = np.random.default_rng(11)
        stack = np.array([_random_simplex(rng, 3) for _ in range(200)])
        got = classify_planes(stack)
        for i in range(200):
            assert got[i] == classify(MeasurementCell(*stack[i]))


class TestColors:
    def test_pure_free_is_green(self):
        c = dgm_cell_color(DgmCell(1, 0, 0, 0, 0, 0))
        assert (c.r, c.g, c.b) == (0.0, 1.0, 0.0)

    def test_pure_static_is_red(self):
        c = dgm_cell_color(DgmCell(0, 0, 1, 0, 0, 0))
        assert (c.r, c.g, c.b) == (1.0, 0.0, 0.0)

    def test_pure_dynamic_is_blue(self):
        c = dgm_cell_color(DgmCell(0, 1, 0, 0, 0, 0))
        assert (c.r, c.g, c.b) == (0.0, 0.0, 1.0)

    def test_full_ignorance_is_white(self):
        c = dgm_cell_color(DgmCell(0, 0, 0, 0, 0, 1))
        assert (c.r, c.g, c.b) == (1.0, 1.0, 1.0)

    @given(dgm_cells())
    def test_channels_in_unit_range(self, cell):
        c = dgm_cell_color(cell)
        for ch in (c.r, c.g, c.b):
            assert 0.0 <= ch <= 1.0


class TestCombineDgmPlanes:
    def test_vacuous_identity(self):
        rng = np.random.default_rng(3)
        a = np.array([_random_simplex(rng, 6) for _ in range(32)])
        vac = np.zeros_like(a)
        vac[:, 5] = 1.0
        np.testing.assert_allclose(combine_dgm_planes(a, vac), a, atol=TOL)

    def test_normalised_and_no_free_static(self):
        rng = np.random.default_rng(4)
        a = np.array([_random_simplex(rng, 6) for _ in range(128)])
        b = np.array([_random_simplex(rng, 6) for _ in range(128)])
        out = combine_dgm_planes(a, b)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=TOL)
        assert out.min() >= -TOL
        # only 6 planes exist: {F,S} is structurally absent

    def test_matches_bruteforce_rule(self):
        # Brute-force oracle over explicit hypothesis sets.
        sets = [{"F"}, {"D"}, {"S"}, {"F", "D"}, {"D", "S"}, {"F", "D", "S"}]
        rng = np.random.default_rng(5)
        a = _random_simplex(rng, 6)
        b = _random_simplex(rng, 6)
        ref = np.zeros(6)
        conflict = 0.0
        for i, si in enumerate(sets):
            for j, sj in enumerate(sets):
                inter = si & sj
                if not inter:
                    conflict += a[i] * b[j]
                else:
                    ref[sets.index(inter)] += a[i] * b[j]
        ref /= 1.0 - conflict
        out = combine_dgm_planes(a[None, :], b[None, :])[0]
        np.testing.assert_allclose(out, ref, atol=TOL)
