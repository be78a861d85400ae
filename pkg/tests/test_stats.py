import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps
from statsmodels.stats.multitest import multipletests

from phonomark.phonatory import DIMENSIONS, FEATURE_NAMES
from phonomark.stats import (
    NotComputable,
    bonferroni,
    cohens_d,
    fdr_bh,
    kruskal_wallis,
    kruskal_wallis_columns,
    ks_normality,
    levene,
    mann_whitney_u,
    run_mps_protocol,
    run_phonatory_protocol,
    stars,
    t_test_independent,
)

SIZES = {"C": 24, "preHD": 16, "HD": 45}


def _labels():
    return np.repeat(list(SIZES), list(SIZES.values()))


# -- Kruskal-Wallis --------------------------------------------------------

def test_kw_hand_example():
    h, p = kruskal_wallis([1, 2, 3], [4, 5, 6], [7, 8, 9])
    assert h == pytest.approx(7.2, abs=1e-12)
    assert p == pytest.approx(np.exp(-3.6), rel=1e-12)  # chi2 sf with 2 df


def test_kw_duplicate_group():
    g = [3.0, 1.0, 4.0, 1.5, 9.0]
    assert kruskal_wallis(g, g)[0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_kw_matches_scipy_with_ties(seed):
    r = np.random.default_rng(seed)
    gs = [r.integers(0, 6, n).astype(float) for n in (7, 9, 12)]
    np.testing.assert_allclose(kruskal_wallis(*gs), tuple(sps.kruskal(*gs)), rtol=1e-12)


def test_kw_null_calibration():
    r = np.random.default_rng(0)
    ps = [kruskal_wallis(r.normal(size=60), r.normal(size=60))[1] for _ in range(100)]
    assert np.mean(np.array(ps) > 0.05) >= 0.9


def test_kw_errors():
    with pytest.raises(ValueError):
        kruskal_wallis([1, 2, 3])
    with pytest.raises(NotComputable):
        kruskal_wallis([1, 1, 1], [1, 1, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=15),
       st.lists(st.integers(-1000, 1000), min_size=3, max_size=15))
def test_kw_monotone_invariance(a, b):
    a, b = np.array(a, float), np.array(b, float)
    try:
        h = kruskal_wallis(a, b)
    except NotComputable:
        return
    f = lambda x: x**3 + 2 * x  # strictly increasing and exact on these integers
    assert kruskal_wallis(f(a), f(b)) == h


def test_kw_columns_matches_loop():
    r = np.random.default_rng(3)
    X = np.round(r.normal(size=(30, 40)), 1)
    X[:, 5] = 2.0
    labels = np.repeat(["C", "preHD", "HD"], 10)
    H, p, const = kruskal_wallis_columns(X, labels)
    assert const[5] and H[5] == 0 and p[5] == 1
    for j in (0, 7, 39):
        exp = sps.kruskal(*[X[labels == g, j] for g in ("C", "preHD", "HD")])
        assert H[j] == pytest.approx(exp.statistic, rel=1e-12)
        assert p[j] == pytest.approx(exp.pvalue, rel=1e-10)


# -- pairwise tests --------------------------------------------------------

def test_mwu_disjoint():
    u, p = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert u == 0.0
    assert mann_whitney_u([4, 5, 6], [1, 2, 3])[0] == 9.0


def test_mwu_equal_samples():
    a = [1.0, 2.0, 3.0, 4.0]
    assert mann_whitney_u(a, a)[1] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(4))
def test_mwu_matches_scipy(seed):
    r = np.random.default_rng(seed)
    a, b = r.integers(0, 8, 11).astype(float), r.integers(1, 9, 14).astype(float)
    exp = sps.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    u, p = mann_whitney_u(a, b)
    assert u == exp.statistic
    assert p == pytest.approx(exp.pvalue, rel=1e-12)


def test_mwu_shift_detected():
    r = np.random.default_rng(7)
    assert mann_whitney_u(r.normal(0, 1, 30), r.normal(2, 1, 30))[1] < 0.01


def test_t_test_identical():
    assert t_test_independent([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)
    assert t_test_independent([2, 2], [2, 2]) == (0.0, 1.0)


def test_ks_normal_calibration():
    ps = [ks_normality(np.random.default_rng(s).standard_normal(200))[1] for s in range(100)]
    assert np.mean(np.array(ps) > 0.05) >= 0.9


def test_levene_calibration():
    ps = []
    for s in range(100):
        r = np.random.default_rng(s)
        ps.append(levene(r.normal(size=30), r.normal(3, 1, size=30))[1])
    assert np.mean(np.array(ps) > 0.05) >= 0.9


def test_levene_matches_scipy():
    r = np.random.default_rng(1)
    a, b, c = r.normal(size=10), r.normal(0, 2, 12), r.normal(size=9)
    assert levene(a, b, c)[0] == pytest.approx(sps.levene(a, b, c, center="mean").statistic)


def test_cohens_d():
    assert cohens_d([1, 2, 3], [3, 4, 5]) == pytest.approx(-2.0)
    assert cohens_d([1, 2, 3], [1, 2, 3]) == 0.0
    r = np.random.default_rng(2)
    a, b = r.normal(size=12), r.normal(1, 2, size=9)
    assert cohens_d(a, b) == pytest.approx(-cohens_d(b, a))


# -- corrections -----------------------------------------------------------

def test_bonferroni_hand():
    assert bonferroni(0.01, 3) == pytest.approx(0.03)
    assert bonferroni(0.5, 7) == 1.0
    np.testing.assert_allclose(bonferroni([0.01, 0.2], 3), [0.03, 0.6])


def test_bh_hand():
    np.testing.assert_allclose(fdr_bh([0.01, 0.02, 0.03]), [0.03, 0.03, 0.03], rtol=0, atol=1e-15)
    # step-up by hand: ranks 1..4, p*4/rank = [.004,.04,.04,.2] -> monotone from the top
    np.testing.assert_allclose(fdr_bh([0.001, 0.02, 0.03, 0.2]), [0.004, 0.04, 0.04, 0.2], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40))
def test_bh_matches_statsmodels(p):
    p = np.array(p)
    exp = multipletests(p, method="fdr_bh")[1]
    got = fdr_bh(p)
    np.testing.assert_allclose(got, exp, rtol=1e-12, atol=1e-15)
    assert np.all(got >= p - 1e-15) and np.all(got <= 1)


def test_stars_thresholds():
    assert [stars(p) for p in (0.0005, 0.001, 0.005, 0.01, 0.03, 0.05, 0.051, None)] == \
        ["***", "***", "**", "**", "*", "*", "", ""]


# -- protocols -------------------------------------------------------------

def _null_values(seed):
    r = np.random.default_rng(seed)
    n = sum(SIZES.values())
    return {name: r.normal(size=n) for name in FEATURE_NAMES}


def test_null_protocol_few_significant():
    fracs = [run_phonatory_protocol(_null_values(s), _labels(), DIMENSIONS).fraction_significant() for s in range(10)]
    assert np.mean(fracs) <= 0.10


def test_planted_mpt_shift():
    vals = _null_values(11)
    labels = _labels()
    vals["mpt"] = np.where(labels == "HD", vals["mpt"] - 2.0, vals["mpt"])
    rep = run_phonatory_protocol(vals, labels, DIMENSIONS)
    assert "mpt" in rep.significant()
    mpt = next(f for f in rep.features if f.name == "mpt")
    assert abs(mpt.pairs["HD/C"].d) >= 1.0
    assert rep.n_dimensions == 7


def test_protocol_handles_missing_and_writes_table(tmp_path):
    vals = _null_values(3)
    vals["ftri"][:10] = np.nan
    vals["first_break"] = [None] * len(vals["mpt"])
    rep = run_phonatory_protocol(vals, _labels(), DIMENSIONS)
    fb = next(f for f in rep.features if f.name == "first_break")
    assert fb.p is None and fb.reason
    rep.to_csv(tmp_path / "t.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert len(rows) == 15
    mpt = next(r for r in rows if r["feature"] == "mpt")
    assert "(" in mpt["C"] and mpt["C"].endswith(")")
    assert {"HD/preHD d", "HD/C d", "preHD/C d", "stars", "H"} <= set(rows[0])
    rep.to_json(tmp_path / "t.json")


def test_protocol_needs_two_groups():
    with pytest.raises(ValueError):
        run_phonatory_protocol({"mpt": [1.0, 2.0, 3.0]}, ["C", "C", "C"])


def test_pair_test_selection():
    r = np.random.default_rng(0)
    labels = _labels()
    normal = r.normal(size=labels.size)
    skewed = r.exponential(size=labels.size) ** 3
    rep = run_phonatory_protocol({"a": normal, "b": skewed}, labels)
    a, b = rep.features
    assert a.pairs["HD/C"].test == "t-test"
    assert b.pairs["HD/C"].test == "mann-whitney"
    assert a.pairs["HD/C"].p_corrected == pytest.approx(min(1.0, 3 * a.pairs["HD/C"].p))


def test_mps_null_protocol():
    fr = []
    for s in range(3):
        X = np.random.default_rng(s).normal(size=(85, 3157))
        rep = run_mps_protocol(X, _labels())
        fr.append(rep.fraction_significant)
        assert rep.fraction_significant <= rep.fraction_significant_uncorrected
    assert max(fr) <= 0.01


def test_mps_planted_block():
    r = np.random.default_rng(4)
    X = r.normal(size=(85, 41, 77))
    labels = _labels()
    X[labels == "HD", 10:15, 30:35] += 2.0
    rep = run_mps_protocol(X.reshape(85, -1), labels)
    sig = (rep.p_adjusted <= 0.05).reshape(41, 77)
    assert sig[10:15, 30:35].mean() >= 0.8
    s = rep.summary()
    assert {"fraction_significant_fdr", "fraction_significant_uncorrected"} <= set(s)
