"""Group comparison protocol for the phonatory and MPS features.

Kruskal-Wallis across the three groups with a Bonferroni factor over the
deficit dimensions, then pairwise tests gated by normality (KS) and
homoscedasticity (Levene): t-test when both hold, Mann-Whitney otherwise.
The MPS analysis runs a vectorized Kruskal-Wallis per bin with BH-FDR.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

__all__ = [
    "NotComputable",
    "kruskal_wallis",
    "kruskal_wallis_columns",
    "mann_whitney_u",
    "t_test_independent",
    "ks_normality",
    "levene",
    "cohens_d",
    "bonferroni",
    "fdr_bh",
    "stars",
    "FeatureStats",
    "StatReport",
    "MPSStatReport",
    "run_phonatory_protocol",
    "run_mps_protocol",
    "PAIRS",
]

GROUP_ORDER = ("C", "preHD", "HD")
PAIRS = (("HD", "preHD"), ("HD", "C"), ("preHD", "C"))


class NotComputable(ValueError):
    """A statistic is undefined for the given data."""


def _clean(a):
    a = np.asarray(a, dtype=float).ravel()
    return a[np.isfinite(a)]


def kruskal_wallis(*groups):
    """Kruskal-Wallis H with tie correction and chi-square p (k - 1 df).

    Returns
    -------
    (H, p)
    """
    gs = [_clean(g) for g in groups]
    if len(gs) < 2 or any(g.size == 0 for g in gs):
        raise ValueError("need at least 2 non-empty groups")
    pooled = np.concatenate(gs)
    n = pooled.size
    if n < 5:
        raise ValueError("need at least 5 observations in total")
    ranks = sps.rankdata(pooled)
    _, counts = np.unique(pooled, return_counts=True)
    tie = 1.0 - np.sum(counts**3 - counts) / (n**3 - n)
    if tie <= 0:
        raise NotComputable("all values identical")
    h, start = 0.0, 0
    for g in gs:
        r = ranks[start : start + g.size]
        start += g.size
        h += r.sum() ** 2 / g.size
    h = (12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)) / tie
    h = max(h, 0.0)
    return float(h), float(sps.chi2.sf(h, len(gs) - 1))


def kruskal_wallis_columns(X, labels):
    """Kruskal-Wallis per column of ``X`` (subjects x bins).

    Constant columns get H = 0, p = 1 and are reported in the returned
    ``constant`` mask.

    Returns
    -------
    H, p, constant : arrays of length ``X.shape[1]``
    """
    X = np.asarray(X, float)
    labels = np.asarray(labels)
    n = X.shape[0]
    ranks = sps.rankdata(X, axis=0)
    # tie term per column from the sorted values
    Xs = np.sort(X, axis=0)
    tie_sum = np.zeros(X.shape[1])
    new = np.ones(X.shape, dtype=bool)
    new[1:] = Xs[1:] != Xs[:-1]
    for j in range(X.shape[1]):
        starts = np.flatnonzero(new[:, j])
        t = np.diff(np.append(starts, n))
        tie_sum[j] = np.sum(t**3 - t)
    tie = 1.0 - tie_sum / (n**3 - n)
    groups = np.unique(labels)
    s = np.zeros(X.shape[1])
    for g in groups:
        m = labels == g
        s += ranks[m].sum(axis=0) ** 2 / m.sum()
    constant = tie <= 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        h = (12.0 / (n * (n + 1)) * s - 3.0 * (n + 1)) / tie
    h = np.where(constant, 0.0, np.maximum(h, 0.0))
    p = np.where(constant, 1.0, sps.chi2.sf(h, len(groups) - 1))
    return h, p, constant


def mann_whitney_u(a, b):
    """Two-sided Mann-Whitney U with normal approximation, tie and continuity corrections.

    ``U`` is the statistic of ``a`` (pairs with a > b, ties counting half).
    An all-equal input gives p = 1.
    """
    a, b = _clean(a), _clean(b)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = sps.rankdata(pooled)
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    n = n1 + n2
    _, t = np.unique(pooled, return_counts=True)
    var = n1 * n2 / 12.0 * ((n + 1) - np.sum(t**3 - t) / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return float(u), 1.0
    mu = n1 * n2 / 2.0
    z = (abs(u - mu) - 0.5) / np.sqrt(var)
    p = 2.0 * sps.norm.sf(max(z, 0.0))
    return float(u), float(min(p, 1.0))


def t_test_independent(a, b):
    """Student's two-sample t-test (pooled variance), two-sided."""
    a, b = _clean(a), _clean(b)
    if a.size < 2 or b.size < 2:
        raise ValueError("need at least 2 values per sample")
    if np.var(a, ddof=1) == 0 and np.var(b, ddof=1) == 0:
        if a.mean() == b.mean():
            return 0.0, 1.0
        raise NotComputable("zero variance in both samples")
    res = sps.ttest_ind(a, b, equal_var=True)
    return float(res.statistic), float(res.pvalue)


def ks_normality(a):
    """KS test of ``a`` against a normal with the sample mean and SD."""
    a = _clean(a)
    if a.size < 5:
        raise ValueError("need at least 5 values")
    sd = np.std(a, ddof=1)
    if sd == 0:
        raise NotComputable("zero variance")
    res = sps.kstest(a, "norm", args=(a.mean(), sd))
    return float(res.statistic), float(res.pvalue)


def levene(*groups):
    """Levene's test with mean centering."""
    gs = [_clean(g) for g in groups]
    if any(g.size < 2 for g in gs):
        raise ValueError("need at least 2 values per group")
    res = sps.levene(*gs, center="mean")
    if not np.isfinite(res.pvalue):
        raise NotComputable("Levene undefined (zero spread)")
    return float(res.statistic), float(res.pvalue)


def cohens_d(a, b):
    """(mean(a) - mean(b)) / pooled SD with n - 1 weights."""
    a, b = _clean(a), _clean(b)
    if a.size < 2 or b.size < 2:
        raise ValueError("need at least 2 values per sample")
    n1, n2 = a.size, b.size
    pooled = np.sqrt(((n1 - 1) * np.var(a, ddof=1) + (n2 - 1) * np.var(b, ddof=1)) / (n1 + n2 - 2))
    diff = a.mean() - b.mean()
    if pooled == 0:
        if diff == 0:
            return 0.0
        raise NotComputable("zero pooled SD")
    return float(diff / pooled)


def bonferroni(p, m):
    """``min(1, p * m)`` elementwise; scalar in, scalar out."""
    arr = np.minimum(1.0, np.asarray(p, float) * m)
    return float(arr) if arr.ndim == 0 else arr


def fdr_bh(p):
    """Benjamini-Hochberg adjusted p-values (step-up, monotone, capped at 1)."""
    p = np.asarray(p, float)
    shape = p.shape
    p = p.ravel()
    n = p.size
    if n == 0:
        return p.reshape(shape)
    order = np.argsort(p, kind="mergesort")
    ranked = p[order] * n / np.arange(1, n + 1)
    adj = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(n)
    out[order] = np.minimum(adj, 1.0)
    return out.reshape(shape)


def stars(p):
    if p is None or not np.isfinite(p):
        return ""
    if p <= 0.001:
        return "***"
    if p <= 0.01:
        return "**"
    if p <= 0.05:
        return "*"
    return ""


# --------------------------------------------------------------------------
# protocol


@dataclass
class PairResult:
    test: str | None
    stat: float | None
    p: float | None
    p_corrected: float | None
    d: float | None
    reason: str | None = None


@dataclass
class FeatureStats:
    name: str
    n: dict
    mean: dict
    sd: dict
    H: float | None
    p: float | None
    p_corrected: float | None
    pairs: dict = field(default_factory=dict)
    reason: str | None = None


@dataclass
class StatReport:
    features: list
    n_dimensions: int
    alpha: float = 0.05

    def significant(self):
        return [f.name for f in self.features if f.p_corrected is not None and f.p_corrected <= self.alpha]

    def fraction_significant(self):
        tested = [f for f in self.features if f.p_corrected is not None]
        return len(self.significant()) / len(tested) if tested else 0.0

    def to_rows(self):
        rows = []
        for f in self.features:
            row = {"feature": f.name}
            for g in GROUP_ORDER:
                if g in f.mean:
                    m, s = f.mean[g], f.sd[g]
                    row[g] = "" if m is None else f"{m:.3f} ({s:.3f})" if s is not None else f"{m:.3f}"
            row["H"] = "" if f.H is None else f"{f.H:.3f}"
            row["p"] = "" if f.p is None else f"{f.p:.6g}"
            row["p_corrected"] = "" if f.p_corrected is None else f"{f.p_corrected:.6g}"
            row["stars"] = stars(f.p_corrected)
            for a, b in PAIRS:
                key = f"{a}/{b}"
                pr = f.pairs.get(key)
                row[f"{key} test"] = "" if pr is None or pr.test is None else pr.test
                row[f"{key} d"] = "" if pr is None or pr.d is None else f"{pr.d:.3f}{stars(pr.p_corrected)}"
                row[f"{key} p_corrected"] = "" if pr is None or pr.p_corrected is None else f"{pr.p_corrected:.6g}"
            rows.append(row)
        return rows

    def to_csv(self, path):
        rows = self.to_rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["feature"])
            w.writeheader()
            w.writerows(rows)

    def to_dict(self):
        def pair(pr):
            return pr.__dict__.copy()

        return {
            "n_dimensions": self.n_dimensions,
            "alpha": self.alpha,
            "features": [
                {**{k: v for k, v in f.__dict__.items() if k != "pairs"}, "pairs": {k: pair(v) for k, v in f.pairs.items()}}
                for f in self.features
            ],
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _compare_pair(a, b, n_pairs, gate=0.05):
    if a.size < 2 or b.size < 2:
        return PairResult(None, None, None, None, None, "fewer than 2 values in a group")
    try:
        d = cohens_d(a, b)
    except NotComputable:
        d = None
    try:
        normal = ks_normality(a)[1] > gate and ks_normality(b)[1] > gate
        equal_var = levene(a, b)[1] > gate
        use_t = normal and equal_var
    except (ValueError, NotComputable):
        use_t = False
    try:
        if use_t:
            stat, p = t_test_independent(a, b)
            name = "t-test"
        else:
            stat, p = mann_whitney_u(a, b)
            name = "mann-whitney"
    except NotComputable as exc:
        return PairResult(None, None, None, None, d, str(exc))
    return PairResult(name, stat, p, bonferroni(p, n_pairs), d)


def run_phonatory_protocol(values: dict, labels, dimensions: dict | None = None, alpha=0.05) -> StatReport:
    """Run the group protocol on each feature.

    Parameters
    ----------
    values : dict
        Feature name to per-subject values (NaN or None where missing;
        missing values are dropped per feature).
    labels : sequence
        Group label per subject.
    dimensions : dict, optional
        Feature name to dimension; the Kruskal-Wallis Bonferroni factor is
        the number of distinct dimensions. Defaults to one per feature.
    """
    labels = np.asarray(labels)
    present = [g for g in GROUP_ORDER if np.any(labels == g)]
    if len(present) < 2:
        raise ValueError("need at least 2 groups")
    dims = dimensions or {k: k for k in values}
    m = len({dims[k] for k in values})
    out = []
    for name, vals in values.items():
        v = np.array([np.nan if x is None else float(x) for x in vals])
        by = {g: v[(labels == g) & np.isfinite(v)] for g in present}
        fs = FeatureStats(
            name,
            n={g: int(by[g].size) for g in present},
            mean={g: float(by[g].mean()) if by[g].size else None for g in present},
            sd={g: float(by[g].std(ddof=1)) if by[g].size > 1 else None for g in present},
            H=None,
            p=None,
            p_corrected=None,
        )
        nonempty = [by[g] for g in present if by[g].size]
        try:
            fs.H, fs.p = kruskal_wallis(*nonempty)
            fs.p_corrected = bonferroni(fs.p, m)
        except (ValueError, NotComputable) as exc:
            fs.reason = str(exc)
        for a, b in PAIRS:
            if a in by and b in by:
                fs.pairs[f"{a}/{b}"] = _compare_pair(by[a], by[b], len(PAIRS))
        out.append(fs)
    return StatReport(out, m, alpha)


@dataclass
class MPSStatReport:
    H: np.ndarray
    p: np.ndarray
    p_adjusted: np.ndarray
    constant: np.ndarray
    alpha: float = 0.05

    @property
    def fraction_significant(self):
        return float(np.mean(self.p_adjusted <= self.alpha))

    @property
    def fraction_significant_uncorrected(self):
        return float(np.mean(self.p <= self.alpha))

    def summary(self):
        return {
            "n_bins": int(self.p.size),
            "alpha": self.alpha,
            "fraction_significant_fdr": self.fraction_significant,
            "fraction_significant_uncorrected": self.fraction_significant_uncorrected,
            "n_constant_bins": int(self.constant.sum()),
        }


def run_mps_protocol(X, labels, alpha=0.05) -> MPSStatReport:
    """Per-bin Kruskal-Wallis over subjects x bins, BH-FDR over all bins."""
    X = np.asarray(X, float)
    labels = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != labels.size:
        raise ValueError("X must be subjects x bins matching labels")
    groups, counts = np.unique(labels, return_counts=True)
    if groups.size < 2 or counts.min() < 2:
        raise ValueError("need at least 2 groups with at least 2 subjects each")
    h, p, const = kruskal_wallis_columns(X, labels)
    return MPSStatReport(h, p, fdr_bh(p), const, alpha)

