import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from refreshmi.data import Origin, PanelDataset, Schema
from refreshmi.mi import (
    AnalysisSpec,
    EmptyInput,
    EmptySubgroup,
    Quantity,
    analysis_table,
    ratio_estimate,
    rubin_combine,
    subgroup_proportion,
    write_analysis_csv,
)


def test_rubin_hand_arithmetic():
    est = rubin_combine([(0.4, 0.01), (0.6, 0.01)])
    assert abs(est.point - 0.5) < 1e-12
    assert abs(est.within_var - 0.01) < 1e-12
    assert abs(est.between_var - 0.02) < 1e-12
    assert abs(est.total_var - 0.04) < 1e-12
    r = 1.5 * 0.02 / 0.01
    assert est.df == pytest.approx((2 - 1) * (1 + 1 / r) ** 2, abs=1e-12)
    half = stats.t.ppf(0.975, est.df) * 0.2
    assert est.ci_low == pytest.approx(0.5 - half, abs=1e-12)


def test_rubin_zero_between():
    est = rubin_combine([(0.5, 0.01)] * 4)
    assert est.between_var == 0 and est.total_var == pytest.approx(0.01)
    assert math.isinf(est.df)
    assert est.ci_high == pytest.approx(0.5 + stats.norm.ppf(0.975) * 0.1)


def test_rubin_single_and_empty():
    with pytest.warns(UserWarning):
        est = rubin_combine([(0.3, 0.02)])
    assert est.total_var == 0.02 and math.isinf(est.df)
    with pytest.raises(EmptyInput):
        rubin_combine([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(1e-6, 1)), min_size=2, max_size=10), st.randoms())
def test_rubin_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a, b = rubin_combine(pairs), rubin_combine(shuffled)
    assert a.point == pytest.approx(b.point, abs=1e-12)
    assert a.total_var == pytest.approx(b.total_var, rel=1e-9, abs=1e-15)


def test_subgroup_proportion_examples():
    codes = np.array([[0], [1], [0], [1]])
    est, _ = subgroup_proportion(codes, 0, 1)
    assert est == 0.5
    codes = np.array([[0], [1], [1]])
    est, _ = subgroup_proportion(codes, 0, 1, weights=np.array([2.0, 1.0, 1.0]))
    assert est == 0.5


def _covariance_form(y, x, w):
    """Linearized variance from the totals' covariance matrix."""
    n = y.size
    wy, wx = w * y, w * x
    R = wy.sum() / wx.sum()
    cov = np.cov(np.stack([wy, wx]), ddof=1) * n
    return R, (cov[0, 0] - 2 * R * cov[0, 1] + R**2 * cov[1, 1]) / wx.sum() ** 2


def test_ratio_variance_fixture():
    y = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1], float)
    x = np.array([1, 1, 1, 0, 1, 1, 1, 0, 1, 1], float)
    w = np.array([1.5, 2.0, 0.5, 1.0, 3.0, 1.0, 2.5, 1.0, 0.75, 1.25])
    r, v = ratio_estimate(y * x, x, w)
    r0, v0 = _covariance_form(y * x, x, w)
    assert r == pytest.approx(r0, abs=1e-15)
    assert v == pytest.approx(v0, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.floats(0.1, 10)), min_size=3, max_size=30),
    st.integers(-8, 8),
    st.floats(0.01, 100),
)
def test_weight_scale_invariance(rows, power, c):
    y = np.array([r[0] for r in rows], float)
    x = np.array([r[1] for r in rows], float)
    w = np.array([r[2] for r in rows])
    if (w * x).sum() == 0:
        return
    base = ratio_estimate(y * x, x, w)
    # powers of two rescale without rounding
    scaled = ratio_estimate(y * x, x, w * 2.0**power)
    assert scaled == base
    other = ratio_estimate(y * x, x, w * c)
    assert other[0] == pytest.approx(base[0], rel=1e-12, abs=1e-15)
    assert other[1] == pytest.approx(base[1], rel=1e-12, abs=1e-300)


def test_empty_subgroup():
    with pytest.raises(EmptySubgroup):
        subgroup_proportion(np.array([[0], [1]]), 0, 1, subgroup=np.array([False, False]))


def _imputation(codes, origin, weights=None):
    schema = Schema.from_roles([("x", "X", 2), ("y1", "Y1", 2), ("y2", "Y2", 2)])
    n = codes.shape[0]
    return PanelDataset(schema, codes, np.zeros_like(codes, dtype=bool), np.ones(n), np.zeros(n, bool), origin, weights)


def test_analysis_table_identical_imputations():
    rng = np.random.default_rng(0)
    codes = rng.integers(0, 2, (50, 3))
    origin = np.array([Origin.PANEL] * 40 + [Origin.REFRESH] * 10)
    ds = _imputation(codes, origin)
    spec = AnalysisSpec((Quantity("y2"), Quantity("y2", contrast="y1"), Quantity("y2", filter=(("x", 1),))))
    rows = analysis_table([ds, ds], spec)
    est, var = subgroup_proportion(codes[:40], 2, 1)
    assert rows[0].estimate.point == pytest.approx(est)
    assert rows[0].estimate.total_var == pytest.approx(var)
    assert rows[0].estimate.between_var == 0
    assert rows[0].n_subgroup == 40
    assert rows[2].n_subgroup == int((codes[:40, 0] == 0).sum())


def test_difference_on_identical_waves():
    rng = np.random.default_rng(1)
    codes = rng.integers(0, 2, (30, 3))
    codes[:, 2] = codes[:, 1]
    ds = _imputation(codes, np.zeros(30, dtype=np.int8))
    rows = analysis_table([ds, ds, ds], AnalysisSpec((Quantity("y2", contrast="y1"),)))
    assert rows[0].estimate.point == 0.0
    assert rows[0].estimate.between_var == 0.0


def test_panel_population_ignores_refreshment_rows():
    rng = np.random.default_rng(2)
    codes = rng.integers(0, 2, (40, 3))
    origin = np.array([Origin.PANEL] * 30 + [Origin.REFRESH] * 10)
    altered = codes.copy()
    altered[30:] = 1 - altered[30:]
    spec = AnalysisSpec((Quantity("y2"), Quantity("y1", filter=(("x", 2),))))
    a = analysis_table([_imputation(codes, origin)] * 2, spec)
    b = analysis_table([_imputation(altered, origin)] * 2, spec)
    assert [r.estimate for r in a] == [r.estimate for r in b]


def test_weighted_analysis_scale_invariant():
    rng = np.random.default_rng(3)
    codes = rng.integers(0, 2, (25, 3))
    origin = np.zeros(25, dtype=np.int8)
    w = rng.uniform(0.5, 2.0, 25)
    spec = AnalysisSpec((Quantity("y2"),), weights="wave1")
    a = analysis_table([_imputation(codes, origin, w)] * 2, spec)[0].estimate
    b = analysis_table([_imputation(codes, origin, w * 4.0)] * 2, spec)[0].estimate
    assert a == b


def test_empty_spec_and_csv(tmp_path):
    assert analysis_table([], AnalysisSpec()) == []
    write_analysis_csv([], tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().startswith("quantity,estimate,ci_low,ci_high,n_subgroup")
    spec = AnalysisSpec.from_json({"quantities": [{"var": "y2", "level": 2, "filter": {"x": 1}}]})
    assert spec.quantities[0].label == "y2=2|x=1"
    with pytest.raises(ValueError):
        AnalysisSpec(population="everyone")
