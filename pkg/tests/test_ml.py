import numpy as np
import pytest
from sklearn.base import clone

from phonomark.ml import (
    FEATURE_SETS,
    PHONATORY_ML_FEATURES,
    ElasticNetLinear,
    ElasticNetLogistic,
    FeatureTable,
    MeanRegressor,
    ModelHyper,
    RandomPriorClassifier,
    SubjectRecord,
    classification_metrics,
    coefficient_report,
    confusion_matrix,
    enet_linear_cd,
    enet_logistic_fista,
    regression_metrics,
    repeated_learning_testing,
)
from phonomark.phonatory import PhonatoryFeatures

SIZES = {"C": 24, "preHD": 16, "HD": 45}


def _labels():
    return np.repeat(list(SIZES), list(SIZES.values()))


def _blobs(n=100, gap=3.0, p=2, seed=0):
    r = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = r.normal(size=(n, p))
    # centres gap * sd apart along every axis
    X += gap * y[:, None]
    return X, y


# -- optimality oracles ----------------------------------------------------

def _num_grad(f, w, h=1e-6):
    g = np.zeros_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e.flat[j] = h
        g.flat[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def _subgradient_gap(g_smooth, w, l1):
    # distance of 0 from g + l1 * d|w|, per coordinate
    return np.where(w != 0, np.abs(g_smooth + l1 * np.sign(w)), np.maximum(np.abs(g_smooth) - l1, 0))


@pytest.mark.parametrize("lam, ratio", [(0.05, 0.5), (0.3, 0.9), (0.01, 0.1)])
def test_linear_kkt(lam, ratio):
    r = np.random.default_rng(1)
    X = r.normal(size=(40, 8))
    X[:, 1] = X[:, 0] + 0.1 * r.normal(size=40)
    y = X @ np.array([1.5, 0, -2, 0, 0, 0.5, 0, 0]) + 0.3 * r.normal(size=40)
    w, b, _, ok = enet_linear_cd(X, y, lam, ratio)
    assert ok
    l2 = lam * (1 - ratio)
    smooth = lambda v: np.sum((y - X @ v - b) ** 2) / (2 * len(y)) + 0.5 * l2 * v @ v
    assert np.all(_subgradient_gap(_num_grad(smooth, w), w, lam * ratio) <= 1e-4)
    # intercept optimality
    assert abs(np.mean(y - X @ w - b)) <= 1e-10


@pytest.mark.parametrize("lam, ratio", [(0.5, 0.5), (2.0, 0.9)])
def test_logistic_kkt(lam, ratio):
    r = np.random.default_rng(2)
    n, p, K = 60, 6, 3
    X = r.normal(size=(n, p))
    yi = np.argmax(X[:, :3] + 0.8 * r.normal(size=(n, 3)), axis=1)
    Y = np.eye(K)[yi]
    Wb, _, ok = enet_logistic_fista(X, Y, lam, ratio)
    assert ok
    W, b = Wb[:-1], Wb[-1]
    l2 = lam * (1 - ratio)

    def smooth(v):
        Z = X @ v.reshape(p, K) + b
        Z = Z - Z.max(axis=1, keepdims=True)
        return float(np.sum(np.log(np.exp(Z).sum(axis=1)) - np.sum(Y * Z, axis=1)) + 0.5 * l2 * np.sum(v**2))

    g = _num_grad(smooth, W.ravel().copy())
    assert np.all(_subgradient_gap(g, W.ravel(), lam * ratio) <= 1e-4)


def test_working_set_matches_full_solver():
    r = np.random.default_rng(3)
    X = r.normal(size=(50, 30))
    Y = np.eye(3)[np.argmax(X[:, :3] + r.normal(size=(50, 3)), axis=1)]
    a, _, ok_a = enet_logistic_fista(X, Y, 1.0, 0.5, working_set=True)
    b, _, ok_b = enet_logistic_fista(X, Y, 1.0, 0.5, working_set=False)
    assert ok_a and ok_b
    np.testing.assert_allclose(a, b, atol=1e-4)


def test_linear_small_lambda_recovers_slope():
    x = np.linspace(-1, 1, 50)[:, None]
    m = ElasticNetLinear(C=1e8, standardize=False).fit(x, 2 * x[:, 0])
    assert m.coef_[0] == pytest.approx(2.0, abs=1e-3)


def test_linear_large_lambda_zero():
    r = np.random.default_rng(4)
    X, y = r.normal(size=(30, 5)), r.normal(5, 2, size=30)
    m = ElasticNetLinear(C=1e-6).fit(X, y)
    assert np.all(m.coef_ == 0)
    assert m.intercept_ == y.mean()


def test_linear_matches_sklearn_objective():
    from sklearn.linear_model import ElasticNet
    r = np.random.default_rng(5)
    X = r.normal(size=(30, 6))
    y = X[:, 0] - X[:, 2] + 0.2 * r.normal(size=30)
    w, b, _, _ = enet_linear_cd(X, y, 0.1, 0.5)
    sk = ElasticNet(alpha=0.1, l1_ratio=0.5, tol=1e-12, max_iter=100000).fit(X, y)
    np.testing.assert_allclose(w, sk.coef_, atol=1e-5)


# -- logistic estimator ----------------------------------------------------

def test_logistic_separable():
    X, y = _blobs()
    m = ElasticNetLogistic().fit(X, y)
    assert np.mean(m.predict(X) == y) >= 0.95
    P = m.predict_proba(X)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_logistic_constant_y():
    with pytest.raises(ValueError):
        ElasticNetLogistic().fit(np.ones((5, 2)), np.zeros(5))


def test_logistic_sparsity_on_noise():
    r = np.random.default_rng(6)
    X = r.normal(size=(100, 21))
    y = (X[:, 0] + 0.5 * r.normal(size=100) > 0).astype(int)
    m = ElasticNetLogistic(C=0.1).fit(X, y)
    noise = m.coef_[:, 1:]
    assert np.mean(noise == 0) >= 0.5
    assert np.all(m.coef_[:, 0] != 0)


def test_scores_from_stored_standardization():
    X, y = _blobs(seed=2)
    m = ElasticNetLogistic().fit(X, y)
    Z = ((X - m.mean_) / m.scale_) @ m.coef_.T + m.intercept_
    np.testing.assert_array_equal(Z, m.decision_function(X))


def test_symmetric_point_is_uncertain():
    r = np.random.default_rng(9)
    A = r.normal(size=(50, 2))
    X = np.vstack([A + [3, 0], -A - [3, 0]])  # exactly mirrored blobs
    y = np.repeat([0, 1], 50)
    m = ElasticNetLogistic().fit(X, y)
    assert m.predict_proba([[0.0, 0.0]])[0, 0] == pytest.approx(0.5, abs=0.05)


def test_estimators_are_clonable():
    for est in (ElasticNetLogistic(C=3.0), ElasticNetLinear(l1_ratio=0.2), RandomPriorClassifier(1), MeanRegressor()):
        c = clone(est)
        assert c.get_params() == est.get_params()


def test_hyper_validation():
    with pytest.raises(ValueError):
        ModelHyper(C=0)
    with pytest.raises(ValueError):
        ModelHyper(l1_ratio=1.5)


# -- baselines and metrics -------------------------------------------------

def test_random_prior_expected_accuracy():
    y = _labels()
    m = RandomPriorClassifier(0).fit(np.zeros((85, 1)), y)
    acc = np.mean([np.mean(m.predict(np.zeros((85, 1))) == y) for _ in range(400)])
    assert acc == pytest.approx(2857 / 7225, abs=0.02)
    np.testing.assert_allclose(m.predict_proba(np.zeros((2, 1)))[0], [24 / 85, 45 / 85, 16 / 85])  # C, HD, preHD


def test_mean_regressor():
    m = MeanRegressor().fit(np.zeros((2, 1)), [0.0, 10.0])
    assert regression_metrics([0.0, 10.0], m.predict(np.zeros((2, 1))))["mae"] == 5.0
    y = np.array([1.0, 2.0, 3.0])
    assert regression_metrics(y, np.full(3, 2.0))["r2"] == 0.0


def test_metrics_hand_values():
    assert classification_metrics([0, 0, 1, 1], [0, 1, 0, 1]) == {"accuracy": 0.5, "f1_macro": 0.5}
    perf = classification_metrics(["a", "b", "c"], ["a", "b", "c"])
    assert perf == {"accuracy": 1.0, "f1_macro": 1.0}
    reg = regression_metrics([1.0, 2.0, 4.0], [1.0, 2.0, 4.0], 2.0)
    assert reg["mae"] == 0 and reg["r2"] == 1 and reg["r2_oos"] == 1


def test_confusion_rows():
    cm = confusion_matrix(["C", "C", "HD", "HD"], ["C", "HD", "HD", "HD"], ["C", "preHD", "HD"])
    np.testing.assert_allclose(cm[0], [0.5, 0, 0.5])
    assert np.all(np.isnan(cm[1]))
    np.testing.assert_allclose(cm[2], [0, 0, 1])


# -- repeated learning-testing ---------------------------------------------

def _cohort(shift, seed, p=5):
    r = np.random.default_rng(seed)
    y = _labels()
    X = r.normal(size=(y.size, p))
    X[:, 0] += shift * (y == "HD")
    X[:, 1] += shift * (y == "preHD")
    return X, y


def test_rlt_deterministic():
    X, y = _cohort(1.0, 0)
    a = repeated_learning_testing(X, y, repeats=5, seed=3, labels=["C", "preHD", "HD"])
    b = repeated_learning_testing(X, y, repeats=5, seed=3, labels=["C", "preHD", "HD"])
    assert a.to_dict() == b.to_dict()
    assert np.array_equal(a.coefs, b.coefs)
    c = repeated_learning_testing(X, y, repeats=5, seed=4, labels=["C", "preHD", "HD"])
    assert c.to_dict()["metrics"] != a.to_dict()["metrics"]


def test_rlt_planted_and_null():
    X, y = _cohort(6.0, 1)
    rep = repeated_learning_testing(X, y, repeats=20, seed=0, labels=["C", "preHD", "HD"])
    assert rep.summary()["model"]["accuracy"][0] >= 0.9
    X0, _ = _cohort(0.0, 2)
    rep0 = repeated_learning_testing(X0, y, repeats=30, seed=0, labels=["C", "preHD", "HD"])
    m, sd = rep0.summary()["model"]["accuracy"]
    bm, _ = rep0.summary()["baseline"]["accuracy"]
    assert abs(m - bm) <= 2 * sd


def test_rlt_regression_and_split_sizes():
    r = np.random.default_rng(5)
    y = _labels()
    X = r.normal(size=(85, 4))
    t = 3 * X[:, 0] + r.normal(size=85)
    rep = repeated_learning_testing(X, t, task="regress", strata=y, repeats=10, seed=0)
    assert rep.coefs.shape == (10, 1, 4)
    assert rep.summary()["model"]["r2"][0] > 0.5
    np.testing.assert_allclose(rep.baseline["r2_oos"], 0.0, atol=0.35)
    with pytest.raises(ValueError):
        repeated_learning_testing(X, t, task="regress", repeats=2)


def test_rlt_report_json(tmp_path):
    X, y = _cohort(2.0, 0)
    rep = repeated_learning_testing(X, y, repeats=3, seed=0, labels=["C", "preHD", "HD"])
    rep.to_json(tmp_path / "r.json")
    d = rep.to_dict()
    assert d["confusion"] is not None and len(d["confusion"]) == 3
    assert set(d["summary"]) == {"model", "baseline"}


# -- coefficient report ----------------------------------------------------

def test_coefficient_report_zeros_and_map():
    rep = coefficient_report(np.zeros((4, 3, 3157)), classes=["C", "preHD", "HD"])
    assert rep["sparsity"] == 1.0
    assert rep["maps"]["HD"].shape == (41, 77)
    w = np.arange(3157, dtype=float)
    m = coefficient_report(np.tile(w, (2, 1)))["maps"]["0"]
    assert m[1, 0] == 77 and m[40, 76] == 3156


def test_planted_feature_kept():
    r = np.random.default_rng(8)
    y = _labels()
    X = r.normal(size=(85, 10))
    X[:, 3] += 2.5 * (y == "HD")
    rep = repeated_learning_testing(X, y, repeats=20, seed=0, labels=["C", "preHD", "HD"])
    cr = coefficient_report(rep.coefs, [f"f{i}" for i in range(10)], rep.classes)
    hd = next(e for e in cr["per_feature"] if e["class"] == "HD" and e["feature"] == "f3")
    assert hd["nonzero_frac"] >= 0.9


# -- feature table ---------------------------------------------------------

def _record(i, group, mps=True, first_break=None):
    f = PhonatoryFeatures(**{n: float(i + k) for k, n in enumerate(PHONATORY_ML_FEATURES)},
                          details={"phonation_end": 2.5})
    f.first_break = first_break
    return SubjectRecord(f"s{i}", group, cuhdrs=None if group == "C" else 10.0 + i, tfc=None, tms=None,
                         phonatory=f, mps=np.full(3157, float(i)) if mps else None)


def test_feature_table_sets():
    t = FeatureTable([_record(0, "C"), _record(1, "HD", first_break=1.2), _record(2, "preHD", mps=False)])
    X, y, strata, names, ids = t.matrix("phonatory")
    assert X.shape == (3, 13) and names == list(PHONATORY_ML_FEATURES)
    assert "ftri" not in names and "atri" not in names
    fb = names.index("first_break")
    assert X[0, fb] == 2.5 and X[1, fb] == 1.2
    Xm, *_, ids_m = t.matrix("mps")
    assert Xm.shape == (2, 3157) and ids_m == ["s0", "s1"]
    Xc, *_ = t.matrix("combined")
    assert Xc.shape == (2, 3170)
    Xr, yr, *_ = t.matrix("phonatory", "regress", "cuhdrs")
    assert list(yr) == [11.0, 12.0]
    assert FEATURE_SETS == ("phonatory", "mps", "combined")


def test_feature_table_missing_target():
    t = FeatureTable([_record(0, "C"), _record(1, "HD")])
    with pytest.raises(ValueError):
        t.matrix("phonatory", "regress", "tms")
    with pytest.raises(ValueError):
        SubjectRecord("x", "Z")
