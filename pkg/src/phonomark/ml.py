"""ElasticNet logistic and linear models and the repeated learning-testing harness.

The multinomial logistic model minimizes the summed cross-entropy plus
``(1/C) * (l1_ratio * |W|_1 + (1 - l1_ratio) / 2 * |W|_2^2)`` by
accelerated proximal gradient (FISTA with backtracking and adaptive
restart). The linear model minimizes
``(1/2n) |y - Xw - b|^2 + lam * (l1_ratio * |w|_1 + (1 - l1_ratio) / 2 * |w|_2^2)``
with ``lam = 1/C`` by cyclic coordinate descent. Both stop when the
subgradient optimality conditions hold to ``tol`` on every coordinate.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import ElasticNet
from sklearn.metrics import accuracy_score, f1_score, mean_absolute_error, r2_score
from sklearn.metrics import confusion_matrix as _sk_confusion
from sklearn.model_selection import StratifiedShuffleSplit
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .mps import N_FEATURES as N_MPS
from .mps import N_SPECTRAL, N_TEMPORAL, MPSExtractor
from .phonatory import FEATURE_NAMES, PhonatoryFeatures

__all__ = [
    "SubjectRecord",
    "FeatureTable",
    "FEATURE_SETS",
    "PHONATORY_ML_FEATURES",
    "ModelHyper",
    "enet_linear_cd",
    "enet_logistic_fista",
    "ElasticNetLogistic",
    "ElasticNetLinear",
    "RandomPriorClassifier",
    "MeanRegressor",
    "classification_metrics",
    "regression_metrics",
    "confusion_matrix",
    "EvalReport",
    "repeated_learning_testing",
    "coefficient_report",
]

log = logging.getLogger(__name__)

GROUPS = ("C", "preHD", "HD")
TARGETS = ("cuhdrs", "tfc", "tms")
# tremor indices are kept for statistics only
PHONATORY_ML_FEATURES = tuple(n for n in FEATURE_NAMES if n not in ("ftri", "atri"))
FEATURE_SETS = ("phonatory", "mps", "combined")


@dataclass
class SubjectRecord:
    subject_id: str
    group: str
    cuhdrs: float | None = None
    tfc: float | None = None
    tms: float | None = None
    phonatory: PhonatoryFeatures | None = None
    mps: np.ndarray | None = None

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"{self.subject_id}: unknown group {self.group!r}")


@dataclass
class FeatureTable:
    """Subjects with their features; ``matrix`` selects one feature set.

    Sets: ``phonatory`` (13, tremor excluded), ``mps`` (3157) and
    ``combined`` (phonatory then MPS, 3170).
    """

    records: list

    def names(self, feature_set):
        mps_names = list(MPSExtractor().get_feature_names_out())
        if feature_set == "phonatory":
            return list(PHONATORY_ML_FEATURES)
        if feature_set == "mps":
            return mps_names
        if feature_set == "combined":
            return list(PHONATORY_ML_FEATURES) + mps_names
        raise ValueError(f"unknown feature set {feature_set!r}; choose from {FEATURE_SETS}")

    @staticmethod
    def _phon_vector(f: PhonatoryFeatures):
        vals = []
        for n in PHONATORY_ML_FEATURES:
            v = getattr(f, n)
            if v is None and n == "first_break" and f.computable(n):
                # no break: phonation ran unbroken to its end
                v = f.details.get("phonation_end")
            vals.append(np.nan if v is None else float(v))
        return np.asarray(vals)

    def matrix(self, feature_set, task="classify", target=None):
        """Feature matrix, labels/targets, strata, names and kept subject ids.

        Subjects lacking any value of the set (or the regression target) are
        dropped and logged. Regression drops Controls first.
        """
        names = self.names(feature_set)
        rows, ys, strata, ids = [], [], [], []
        for r in self.records:
            if task == "regress":
                if r.group == "C":
                    continue
                yv = getattr(r, target)
                if yv is None or not np.isfinite(yv):
                    raise ValueError(f"{r.subject_id}: missing {target} for a gene carrier")
            parts = []
            if feature_set in ("phonatory", "combined"):
                parts.append(self._phon_vector(r.phonatory) if r.phonatory is not None else np.full(len(PHONATORY_ML_FEATURES), np.nan))
            if feature_set in ("mps", "combined"):
                parts.append(np.asarray(r.mps, float) if r.mps is not None else np.full(N_MPS, np.nan))
            x = np.concatenate(parts)
            if not np.all(np.isfinite(x)):
                log.warning("dropping %s from %s: missing feature values", r.subject_id, feature_set)
                continue
            rows.append(x)
            ys.append(r.group if task == "classify" else float(getattr(r, target)))
            strata.append(r.group)
            ids.append(r.subject_id)
        X = np.vstack(rows) if rows else np.zeros((0, len(names)))
        return X, np.asarray(ys), np.asarray(strata), names, ids


@dataclass(frozen=True)
class ModelHyper:
    C: float = 1.0
    l1_ratio: float = 0.5
    max_iter: int = 10000
    tol: float = 1e-6

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if not 0 <= self.l1_ratio <= 1:
            raise ValueError("l1_ratio must lie in [0, 1]")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")


def _soft(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


# --------------------------------------------------------------------------
# linear model


def _kkt_violation(g, w, l1):
    """Max over coordinates of the distance of 0 from the subdifferential."""
    nz = w != 0
    v = np.where(nz, np.abs(g + l1 * np.sign(w)), np.maximum(np.abs(g) - l1, 0.0))
    return float(v.max()) if v.size else 0.0


def enet_linear_cd(X, y, lam, l1_ratio=0.5, max_iter=10000, tol=1e-6, w0=None):
    """Cyclic coordinate descent for the ElasticNet least-squares problem.

    The intercept is unpenalized and solved exactly by centering.

    Returns
    -------
    w, b, n_iter, converged
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, p = X.shape
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    yc = y - ym
    sq = (Xc**2).sum(axis=0) / n
    l1 = lam * l1_ratio
    l2 = lam * (1 - l1_ratio)
    w = np.zeros(p) if w0 is None else np.array(w0, float)
    r = yc - Xc @ w
    converged = False
    it = 0
    full = True
    active = np.arange(p)
    for it in range(1, max_iter + 1):
        # full sweeps alternate with sweeps over the nonzero coordinates
        for j in (range(p) if full else active):
            if sq[j] == 0:
                w[j] = 0.0
                continue
            old = w[j]
            new = _soft(Xc[:, j] @ r / n + sq[j] * old, l1) / (sq[j] + l2)
            if new != old:
                r -= Xc[:, j] * (new - old)
                w[j] = new
        g = -(Xc.T @ r) / n + l2 * w
        viol = _kkt_violation(g, w, l1)
        if viol <= tol:
            converged = True
            break
        active = np.flatnonzero(w)
        nz = w != 0
        # go back to a full sweep once the active set itself is optimal
        full = active.size == 0 or _kkt_violation(g[nz], w[nz], l1) <= tol
    b = ym - xm @ w
    return w, float(b), it, converged


# --------------------------------------------------------------------------
# multinomial logistic model


def _logistic_parts(X1, Y, Wb, l2):
    # X1 has a trailing column of ones; the last row of Wb holds intercepts
    Z = X1 @ Wb
    lse = logsumexp(Z, axis=1)
    loss = float(np.sum(lse - np.sum(Y * Z, axis=1)))
    P = np.exp(Z - lse[:, None])
    G = X1.T @ (P - Y)
    W = Wb[:-1]
    loss += 0.5 * l2 * float(np.sum(W * W))
    G[:-1] += l2 * W
    return loss, G


def _fista(X, Y, lam, l1_ratio, max_iter, tol, Wb0=None):
    n, p = X.shape
    K = Y.shape[1]
    X1 = np.hstack([X, np.ones((n, 1))])
    l1 = lam * l1_ratio
    l2 = lam * (1 - l1_ratio)
    # Hessian of the summed softmax loss is bounded by 0.5 * X1'X1 per class
    L = 0.5 * np.linalg.norm(X1, 2) ** 2 + l2
    L = max(L / 16.0, 1e-8)
    Wb = np.zeros((p + 1, K)) if Wb0 is None else np.array(Wb0, float)
    V = Wb.copy()
    t = 1.0
    converged = False
    it = 0

    def prox(M, step):
        out = M.copy()
        out[:-1] = _soft(M[:-1], step * l1)
        return out

    f_v, g_v = _logistic_parts(X1, Y, V, l2)
    for it in range(1, max_iter + 1):
        while True:
            new = prox(V - g_v / L, 1.0 / L)
            d = new - V
            f_new, g_new = _logistic_parts(X1, Y, new, l2)
            if f_new <= f_v + np.sum(g_v * d) + 0.5 * L * np.sum(d * d) + 1e-12 * abs(f_v):
                break
            L *= 2.0
        # the smooth gradient at the new point gives the optimality residual
        viol = max(_kkt_violation(g_new[:-1].ravel(), new[:-1].ravel(), l1), float(np.abs(g_new[-1]).max()))
        if viol <= tol:
            Wb = new
            converged = True
            break
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # adaptive restart when the momentum points uphill
        if np.sum((V - new) * (new - Wb)) > 0:
            t_next = 1.0
            V = new.copy()
        else:
            V = new + ((t - 1.0) / t_next) * (new - Wb)
        Wb = new
        t = t_next
        f_v, g_v = _logistic_parts(X1, Y, V, l2)
    return Wb, it, converged


def enet_logistic_fista(X, Y, lam, l1_ratio=0.5, max_iter=10000, tol=1e-6, working_set=True):
    """FISTA for summed multinomial cross-entropy with an ElasticNet penalty.

    ``Y`` is one-hot (n x K). Returns the (p + 1) x K matrix whose last row
    holds the unpenalized intercepts, the total iteration count and a
    convergence flag. Convergence means every coordinate of the full
    problem meets the subgradient condition within ``tol``.

    With ``working_set`` the solver runs on a growing subset of features:
    those with nonzero weights plus the strongest violators of the
    optimality condition at zero. Features outside the set stay exactly 0.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    n, p = X.shape
    K = Y.shape[1]
    if not working_set or l1_ratio == 0:
        return _fista(X, Y, lam, l1_ratio, max_iter, tol)
    l1 = lam * l1_ratio
    l2 = lam * (1 - l1_ratio)
    X1 = np.hstack([X, np.ones((n, 1))])
    Wb = np.zeros((p + 1, K))
    ws = np.zeros(p, dtype=bool)
    total = 0
    while total < max_iter:
        _, G = _logistic_parts(X1, Y, Wb, l2)
        # rows outside the set are zero; they violate when |g| > l1
        excess = np.maximum(np.abs(G[:-1]) - l1, 0.0).max(axis=1)
        excess[ws] = 0.0
        full_viol = max(_kkt_violation(G[:-1].ravel(), Wb[:-1].ravel(), l1), float(np.abs(G[-1]).max()))
        if full_viol <= tol:
            return Wb, total, True
        add = np.flatnonzero(excess > tol)
        if add.size:
            add = add[np.argsort(-excess[add], kind="stable")][: max(10, 2 * int(ws.sum()) + 10)]
            ws[add] = True
        idx = np.flatnonzero(ws)
        rows = np.append(idx, p)
        sub, it, _ = _fista(X[:, idx], Y, lam, l1_ratio, max_iter - total, tol, Wb0=Wb[rows])
        total += it
        Wb = np.zeros_like(Wb)
        Wb[rows] = sub
    _, G = _logistic_parts(X1, Y, Wb, l2)
    ok = max(_kkt_violation(G[:-1].ravel(), Wb[:-1].ravel(), l1), float(np.abs(G[-1]).max())) <= tol
    return Wb, total, ok


# --------------------------------------------------------------------------
# estimators


class _Standardizing:
    def _fit_scaler(self, X):
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            sd = X.std(axis=0)
            self.scale_ = np.where(sd > 0, sd, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        return (X - self.mean_) / self.scale_

    def _scaled(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model was fitted with {self.n_features_in_}")
        return (X - self.mean_) / self.scale_

    @property
    def sparsity_(self):
        check_is_fitted(self, "coef_")
        return float(np.mean(self.coef_ == 0))


class ElasticNetLogistic(_Standardizing, ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression with an ElasticNet penalty.

    Parameters
    ----------
    C : float
        Inverse penalty strength; the penalty weight is ``1/C`` against the
        summed (not averaged) cross-entropy.
    l1_ratio : float
        Share of the L1 term.
    standardize : bool
        z-score features with training statistics before fitting.

    Attributes
    ----------
    coef_ : ndarray of shape (n_classes, n_features)
        Weights on the standardized features, one row per class.
    intercept_ : ndarray of shape (n_classes,)
    mean_, scale_ : training standardization
    """

    def __init__(self, C=1.0, l1_ratio=0.5, max_iter=10000, tol=1e-6, standardize=True):
        self.C = C
        self.l1_ratio = l1_ratio
        self.max_iter = max_iter
        self.tol = tol
        self.standardize = standardize

    def fit(self, X, y):
        hyper = ModelHyper(self.C, self.l1_ratio, self.max_iter, self.tol)
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least 2 classes in y")
        self.n_features_in_ = X.shape[1]
        Xs = self._fit_scaler(X)
        Y = np.eye(self.classes_.size)[yi]
        Wb, self.n_iter_, self.converged_ = enet_logistic_fista(
            Xs, Y, 1.0 / hyper.C, hyper.l1_ratio, hyper.max_iter, hyper.tol
        )
        if not self.converged_:
            log.warning("logistic ElasticNet did not converge in %d iterations", self.n_iter_)
        self.coef_ = Wb[:-1].T.copy()
        self.intercept_ = Wb[-1].copy()
        return self

    def decision_function(self, X):
        return self._scaled(X) @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def _warm_start(X, y, lam, l1_ratio, max_iter):
    # sklearn's compiled cyclic CD minimizes the same objective; our sweeps
    # then polish its solution to the KKT tolerance
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        m = ElasticNet(alpha=lam, l1_ratio=l1_ratio, tol=1e-8, max_iter=max_iter, selection="cyclic").fit(X, y)
    return m.coef_


class ElasticNetLinear(_Standardizing, RegressorMixin, BaseEstimator):
    """Least-squares regression with an ElasticNet penalty, ``lam = 1/C``.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Weights on the standardized features.
    intercept_ : float
    """

    def __init__(self, C=1.0, l1_ratio=0.5, max_iter=10000, tol=1e-6, standardize=True):
        self.C = C
        self.l1_ratio = l1_ratio
        self.max_iter = max_iter
        self.tol = tol
        self.standardize = standardize

    def fit(self, X, y):
        hyper = ModelHyper(self.C, self.l1_ratio, self.max_iter, self.tol)
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("need at least 2 samples")
        self.n_features_in_ = X.shape[1]
        Xs = self._fit_scaler(X)
        lam = 1.0 / hyper.C
        w0 = _warm_start(Xs, y, lam, hyper.l1_ratio, hyper.max_iter)
        w, b, self.n_iter_, self.converged_ = enet_linear_cd(
            Xs, y, lam, hyper.l1_ratio, hyper.max_iter, hyper.tol, w0=w0
        )
        if not self.converged_:
            log.warning("linear ElasticNet did not converge in %d iterations", self.n_iter_)
        self.coef_ = w
        self.intercept_ = b
        return self

    def predict(self, X):
        return self._scaled(X) @ self.coef_ + self.intercept_


class RandomPriorClassifier(ClassifierMixin, BaseEstimator):
    """Predicts labels drawn at random from the training class frequencies."""

    def __init__(self, random_state=None):
        self.random_state = random_state

    def fit(self, X, y):
        y = np.asarray(y)
        if y.size == 0:
            raise ValueError("empty training set")
        self.classes_, counts = np.unique(y, return_counts=True)
        self.class_prior_ = counts / counts.sum()
        self._rng = np.random.default_rng(self.random_state)
        return self

    def predict(self, X):
        check_is_fitted(self, "class_prior_")
        n = len(X)
        return self.classes_[self._rng.choice(self.classes_.size, size=n, p=self.class_prior_)]

    def predict_proba(self, X):
        check_is_fitted(self, "class_prior_")
        return np.tile(self.class_prior_, (len(X), 1))


class MeanRegressor(RegressorMixin, BaseEstimator):
    """Predicts the training mean."""

    def fit(self, X, y):
        y = np.asarray(y, float)
        if y.size == 0:
            raise ValueError("empty training set")
        self.mean_ = float(y.mean())
        return self

    def predict(self, X):
        check_is_fitted(self, "mean_")
        return np.full(len(X), self.mean_)


# --------------------------------------------------------------------------
# metrics


def classification_metrics(y_true, y_pred, labels=None):
    """Accuracy and macro F1 (a class absent from both lists scores 0)."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.size == 0 or y_true.size != y_pred.size:
        raise ValueError("need equal, non-empty label lists")
    labels = np.unique(np.concatenate([y_true, y_pred])) if labels is None else np.asarray(labels)
    return {
        "accuracy": float(accuracy_score(y_true, y_pred)),
        "f1_macro": float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)),
    }


def regression_metrics(y_true, y_pred, y_train_mean=None):
    """MAE and R^2 = 1 - SS_res / SS_tot (SS_tot about the test mean).

    With ``y_train_mean`` also returns ``r2_oos``, where SS_tot is taken
    about the training mean instead.
    """
    y_true, y_pred = np.asarray(y_true, float), np.asarray(y_pred, float)
    if y_true.size == 0 or y_true.size != y_pred.size:
        raise ValueError("need equal, non-empty target lists")
    out = {"mae": float(mean_absolute_error(y_true, y_pred)), "r2": float(r2_score(y_true, y_pred))}
    if y_train_mean is not None:
        ss_res = float(np.sum((y_true - y_pred) ** 2))
        ss_tr = float(np.sum((y_true - y_train_mean) ** 2))
        out["r2_oos"] = 1.0 - ss_res / ss_tr if ss_tr > 0 else 0.0
    return out


def confusion_matrix(y_true, y_pred, labels):
    """Row-normalized confusion matrix; rows of classes absent from ``y_true`` are NaN."""
    cm = _sk_confusion(y_true, y_pred, labels=labels).astype(float)
    rows = cm.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, cm / np.where(rows > 0, rows, 1), np.nan)


# --------------------------------------------------------------------------
# repeated learning-testing


@dataclass
class EvalReport:
    """Per-repeat metrics for the model and its baseline, plus coefficients.

    ``coefs`` has shape (repeats, n_classes, n_features) for classification
    and (repeats, 1, n_features) for regression.
    """

    task: str
    target: str | None
    seed: int
    repeats: int
    test_frac: float
    feature_names: list
    classes: list
    metrics: dict
    baseline: dict
    confusion: np.ndarray | None
    coefs: np.ndarray
    intercepts: np.ndarray
    n_subjects: int
    hyper: dict = field(default_factory=dict)

    @staticmethod
    def _ms(v):
        v = np.asarray(v, float)
        return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0

    def summary(self):
        out = {"model": {}, "baseline": {}}
        for k, v in self.metrics.items():
            out["model"][k] = self._ms(v)
        for k, v in self.baseline.items():
            out["baseline"][k] = self._ms(v)
        return out

    def to_dict(self):
        return {
            "task": self.task,
            "target": self.target,
            "seed": self.seed,
            "repeats": self.repeats,
            "test_frac": self.test_frac,
            "n_subjects": self.n_subjects,
            "hyper": self.hyper,
            "feature_names": list(self.feature_names),
            "classes": list(self.classes),
            "summary": {g: {k: {"mean": m, "sd": s} for k, (m, s) in d.items()} for g, d in self.summary().items()},
            "metrics": {k: [float(x) for x in v] for k, v in self.metrics.items()},
            "baseline": {k: [float(x) for x in v] for k, v in self.baseline.items()},
            "confusion": None if self.confusion is None else self.confusion.tolist(),
            "sparsity": float(np.mean(self.coefs == 0)),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def repeated_learning_testing(X, y, task="classify", strata=None, hyper: ModelHyper | None = None,
                              repeats=100, test_frac=0.2, seed=0, feature_names=None, target=None,
                              labels=None) -> EvalReport:
    """Repeated stratified random splits: fit on train, score on test.

    Parameters
    ----------
    X : array (n_subjects, n_features)
    y : labels (classify) or real targets (regress)
    strata : labels used to stratify the split; defaults to ``y`` for
        classification and is required for regression.
    seed : master seed; repeat ``i`` uses the i-th child of
        ``SeedSequence(seed)`` for both the split and the baseline.

    Standardization statistics come from the training rows only (inside
    the estimators).
    """
    hyper = hyper or ModelHyper()
    X = check_array(X, dtype=float)
    y = np.asarray(y)
    if task not in ("classify", "regress"):
        raise ValueError("task must be 'classify' or 'regress'")
    if strata is None:
        if task == "regress":
            raise ValueError("regression needs strata")
        strata = y
    strata = np.asarray(strata)
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(X.shape[1])]
    classes = list(labels) if labels is not None else (list(np.unique(y)) if task == "classify" else [])
    children = np.random.SeedSequence(seed).spawn(repeats)

    metrics, base = {}, {}
    confs, coefs, inters = [], [], []
    for child in children:
        split_seed, base_seed = (int(s) for s in child.generate_state(2))
        sss = StratifiedShuffleSplit(n_splits=1, test_size=test_frac, random_state=split_seed % (2**32))
        tr, te = next(sss.split(X, strata))
        if task == "classify":
            model = ElasticNetLogistic(hyper.C, hyper.l1_ratio, hyper.max_iter, hyper.tol).fit(X[tr], y[tr])
            pred = model.predict(X[te])
            m = classification_metrics(y[te], pred, classes)
            b = classification_metrics(y[te], RandomPriorClassifier(base_seed).fit(X[tr], y[tr]).predict(X[te]), classes)
            confs.append(confusion_matrix(y[te], pred, classes))
            # pad to all classes in case a class is missing from the train split
            W = np.zeros((len(classes), X.shape[1]))
            ic = np.zeros(len(classes))
            for k, c in enumerate(model.classes_):
                W[classes.index(c)] = model.coef_[k]
                ic[classes.index(c)] = model.intercept_[k]
            coefs.append(W)
            inters.append(ic)
        else:
            yt = y.astype(float)
            model = ElasticNetLinear(hyper.C, hyper.l1_ratio, hyper.max_iter, hyper.tol).fit(X[tr], yt[tr])
            mu = yt[tr].mean()
            m = regression_metrics(yt[te], model.predict(X[te]), mu)
            b = regression_metrics(yt[te], MeanRegressor().fit(X[tr], yt[tr]).predict(X[te]), mu)
            coefs.append(model.coef_[None, :])
            inters.append(np.array([model.intercept_]))
        for k, v in m.items():
            metrics.setdefault(k, []).append(v)
        for k, v in b.items():
            base.setdefault(k, []).append(v)

    conf = None
    if confs:
        conf = np.nanmean(np.stack(confs), axis=0)
    return EvalReport(
        task, target, int(seed), int(repeats), float(test_frac), names, [str(c) for c in classes],
        {k: np.asarray(v) for k, v in metrics.items()}, {k: np.asarray(v) for k, v in base.items()},
        conf, np.stack(coefs), np.stack(inters), int(X.shape[0]),
        {"C": hyper.C, "l1_ratio": hyper.l1_ratio, "max_iter": hyper.max_iter, "tol": hyper.tol},
    )


def coefficient_report(coefs, feature_names=None, classes=None) -> dict:
    """Coefficient spread across repeats.

    Parameters
    ----------
    coefs : array (repeats, n_classes, n_features) or (repeats, n_features)

    Returns
    -------
    dict with ``sparsity`` (mean fraction of exact zeros), ``per_feature``
    (min, quartiles, max and nonzero fraction per class and feature) and,
    for 3157-wide models, ``maps``: per-class mean weights as 41 x 77.
    """
    C = np.asarray(coefs, float)
    if C.ndim == 2:
        C = C[:, None, :]
    if C.size == 0 or C.shape[0] < 1:
        raise ValueError("need at least one model")
    R, K, P = C.shape
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(P)]
    classes = list(classes) if classes else [str(k) for k in range(K)]
    per = []
    for k in range(K):
        q = np.percentile(C[:, k, :], [0, 25, 50, 75, 100], axis=0)
        nz = np.mean(C[:, k, :] != 0, axis=0)
        for j in range(P):
            per.append({
                "class": classes[k], "feature": names[j],
                "min": float(q[0, j]), "q1": float(q[1, j]), "median": float(q[2, j]),
                "q3": float(q[3, j]), "max": float(q[4, j]), "nonzero_frac": float(nz[j]),
            })
    out = {"sparsity": float(np.mean(C == 0)), "per_feature": per}
    if P == N_TEMPORAL * N_SPECTRAL:
        out["maps"] = {classes[k]: C[:, k, :].mean(axis=0).reshape(N_TEMPORAL, N_SPECTRAL) for k in range(K)}
    return out
