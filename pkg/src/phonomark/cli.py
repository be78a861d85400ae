"""Command-line entry point.

Subcommands: ``extract``, ``stats``, ``classify``, ``regress``, ``synth`` and
``config init``. Exit codes: 0 success (possibly with per-row warnings),
2 usage or configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import yaml

from . import __version__
from .audio_io import AudioError, load_wav
from .config import ConfigError, RunConfig, load_config
from .ml import (
    FEATURE_SETS,
    GROUPS,
    TARGETS,
    FeatureTable,
    SubjectRecord,
    coefficient_report,
    repeated_learning_testing,
)
from .mps import N_FEATURES as N_MPS
from .mps import N_SPECTRAL, N_TEMPORAL, compute_mps, mps_feature_vector, read_matrix, write_matrix
from .phonatory import DIMENSIONS, FEATURE_NAMES, PhonatoryFeatures, extract_all
from .stats import run_mps_protocol, run_phonatory_protocol
from .synth import CohortSpec, null_cohort_spec, planted_cohort_spec, synth_cohort

log = logging.getLogger("phonomark")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
MANIFEST_COLUMNS = ("path", "subject_id", "group", "cuhdrs", "tfc", "tms")
SCORE_COLUMNS = ("cuhdrs", "tfc", "tms")


class UsageError(Exception):
    """Bad arguments, configuration or manifest schema (exit 2)."""


class DataError(Exception):
    """Inputs are well formed but cannot support the analysis (exit 3)."""


# --------------------------------------------------------------------------
# io helpers


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_csv(path, rows, fieldnames):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _fmt(x):
    return "" if x is None else repr(float(x))


def _write_metadata(out, command, cfg: RunConfig, extra=None):
    meta = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "version": __version__,
    }
    meta.update(extra or {})
    _write_json(os.path.join(out, "run_metadata.json"), meta)
    cfg.dump(os.path.join(out, "config.yaml"))


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _makedirs(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from exc


# --------------------------------------------------------------------------
# manifest


def _parse_score(raw, where):
    raw = (raw or "").strip()
    if raw == "":
        return None
    try:
        v = float(raw)
    except ValueError:
        raise UsageError(f"{where}: not a number: {raw!r}") from None
    if not math.isfinite(v):
        raise UsageError(f"{where}: not a finite number: {raw!r}")
    return v


def read_manifest(path):
    """Validate and read a manifest CSV; relative paths resolve against its directory.

    Raises ``UsageError`` on schema problems (missing columns, bad group,
    duplicate subject, non-numeric score). Missing audio files are not a
    schema problem; extraction records them per row.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
    except OSError as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from exc
    missing = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing:
        raise UsageError(f"manifest {path}: missing columns {missing}")
    base = os.path.dirname(os.path.abspath(path))
    seen = set()
    out = []
    for i, row in enumerate(rows, start=2):
        where = f"manifest line {i}"
        sid = (row["subject_id"] or "").strip()
        if not sid:
            raise UsageError(f"{where}: empty subject_id")
        if sid in seen:
            raise UsageError(f"{where}: duplicate subject_id {sid!r}")
        seen.add(sid)
        group = (row["group"] or "").strip()
        if group not in GROUPS:
            raise UsageError(f"{where}: group {group!r} not in {GROUPS}")
        p = (row["path"] or "").strip()
        if not p:
            raise UsageError(f"{where}: empty path")
        rec = {
            "path": p if os.path.isabs(p) else os.path.join(base, p),
            "subject_id": sid,
            "group": group,
        }
        for s in SCORE_COLUMNS:
            rec[s] = _parse_score(row[s], f"{where}, {s}")
        out.append(rec)
    if not out:
        raise UsageError(f"manifest {path} has no rows")
    return out


# --------------------------------------------------------------------------
# extract


def _extract_one(args):
    rec, cfg = args
    try:
        clip = load_wav(rec["path"])
    except AudioError as exc:
        return rec, None, None, [("load", str(exc))]
    failures = []
    phon = extract_all(clip, cfg.pitch, cfg.phonatory)
    try:
        mps = mps_feature_vector(compute_mps(clip, cfg.mps))
    except ValueError as exc:
        mps = None
        failures.append(("mps", str(exc)))
    return rec, phon, mps, failures


def cmd_extract(args, cfg: RunConfig):
    manifest = read_manifest(args.manifest)
    out = args.out
    _makedirs(os.path.join(out, "mps"))
    jobs = [(rec, cfg) for rec in manifest]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_extract_one, jobs))
    else:
        results = [_extract_one(j) for j in jobs]

    phon_cols = list(PhonatoryFeatures().to_row().keys())
    fields = ["subject_id", "group", *SCORE_COLUMNS, *phon_cols, "mps_file"]
    rows, fails = [], []
    for rec, phon, mps, failures in results:
        for stage, reason in failures:
            log.warning("%s: %s failed: %s", rec["subject_id"], stage, reason)
            fails.append({"subject_id": rec["subject_id"], "group": rec["group"], "stage": stage, "reason": reason})
        if phon is None:
            continue
        row = {"subject_id": rec["subject_id"], "group": rec["group"]}
        row.update({s: _fmt(rec[s]) for s in SCORE_COLUMNS})
        row.update(phon.to_row())
        row["mps_file"] = ""
        if mps is not None:
            rel = os.path.join("mps", rec["subject_id"] + ".bin")
            write_matrix(os.path.join(out, rel), mps.reshape(N_TEMPORAL, N_SPECTRAL),
                         {"subject_id": rec["subject_id"], "group": rec["group"]})
            row["mps_file"] = rel
        rows.append(row)
    _write_csv(os.path.join(out, "features.csv"), rows, fields)
    _write_csv(os.path.join(out, "failures.csv"), fails, ["subject_id", "group", "stage", "reason"])
    _write_metadata(out, "extract", cfg, {
        "manifest_sha256": _sha256_file(args.manifest),
        "n_subjects": len(manifest),
        "n_rows": len(rows),
        "n_failures": len(fails),
    })
    if not rows:
        raise DataError("no recording could be read")
    if fails:
        log.warning("%d failure(s) recorded in %s", len(fails), os.path.join(out, "failures.csv"))
    return EXIT_OK


# --------------------------------------------------------------------------
# loading extracted features


def load_features(feature_dir) -> FeatureTable:
    """Rebuild a FeatureTable from an ``extract`` output directory."""
    path = os.path.join(feature_dir, "features.csv")
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    recs = []
    for row in rows:
        try:
            scores = {s: _parse_score(row.get(s), f"{path}: {row.get('subject_id')} {s}") for s in SCORE_COLUMNS}
            phon = PhonatoryFeatures.from_row(row)
            mps = None
            if row.get("mps_file"):
                arr, _ = read_matrix(os.path.join(feature_dir, row["mps_file"]))
                mps = arr.reshape(-1)
            recs.append(SubjectRecord(row["subject_id"], row["group"], phonatory=phon, mps=mps, **scores))
        except (KeyError, ValueError, OSError, UsageError) as exc:
            raise DataError(f"{path}: bad row for {row.get('subject_id')!r}: {exc}") from exc
    if not recs:
        raise DataError(f"{path} has no subjects")
    return FeatureTable(recs)


def _phonatory_columns(table: FeatureTable):
    vals = {n: [] for n in FEATURE_NAMES}
    for r in table.records:
        f = r.phonatory
        for n in FEATURE_NAMES:
            v = getattr(f, n)
            if v is None and n == "first_break" and f.computable(n):
                v = f.details.get("phonation_end")
            vals[n].append(np.nan if v is None else float(v))
    return vals


# --------------------------------------------------------------------------
# stats


def cmd_stats(args, cfg: RunConfig):
    table = load_features(args.features)
    out = args.out
    _makedirs(out)
    labels = [r.group for r in table.records]
    if len(set(labels)) < 2:
        raise DataError("need at least 2 groups")
    alpha = cfg.evaluation.alpha
    rep = run_phonatory_protocol(_phonatory_columns(table), labels, DIMENSIONS, alpha)
    rep.to_csv(os.path.join(out, "phonatory_stats.csv"))
    rep.to_json(os.path.join(out, "phonatory_stats.json"))

    extra = {"n_subjects": len(labels), "fraction_significant_phonatory": rep.fraction_significant()}
    with_mps = [r for r in table.records if r.mps is not None]
    if with_mps:
        X = np.vstack([r.mps for r in with_mps])
        y = [r.group for r in with_mps]
        try:
            mrep = run_mps_protocol(X, y, alpha)
        except ValueError as exc:
            log.warning("MPS statistics skipped: %s", exc)
        else:
            d = os.path.join(out, "mps_stats")
            _makedirs(d)
            shape = (N_TEMPORAL, N_SPECTRAL)
            write_matrix(os.path.join(d, "H.bin"), mrep.H.reshape(shape), {"quantity": "kruskal_wallis_H"})
            write_matrix(os.path.join(d, "p.bin"), mrep.p.reshape(shape), {"quantity": "p_uncorrected"})
            write_matrix(os.path.join(d, "p_fdr.bin"), mrep.p_adjusted.reshape(shape), {"quantity": "p_fdr_bh"})
            _write_json(os.path.join(d, "summary.json"), mrep.summary())
            extra["fraction_significant_mps_fdr"] = mrep.fraction_significant
    _write_metadata(out, "stats", cfg, {**extra, "features_sha256": _sha256_file(os.path.join(args.features, "features.csv"))})
    return EXIT_OK


# --------------------------------------------------------------------------
# classify / regress


def _ms(v):
    return f"{v[0]:.3f} ({v[1]:.3f})"


def _evaluate(args, cfg: RunConfig, task, target=None):
    table = load_features(args.features)
    out = args.out
    _makedirs(out)
    ev = cfg.evaluation
    summary_rows, reports = [], {}
    for fs in ev.feature_sets:
        try:
            X, y, strata, names, ids = table.matrix(fs, task, target)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        if X.shape[0] < 5:
            raise DataError(f"{fs}: only {X.shape[0]} usable subjects")
        try:
            rep = repeated_learning_testing(
                X, y, task, strata, cfg.model, ev.repeats, ev.test_frac, cfg.seed,
                feature_names=names, target=target, labels=list(GROUPS) if task == "classify" else None,
            )
        except ValueError as exc:
            raise DataError(f"{fs}: {exc}") from exc
        reports[fs] = rep
        d = os.path.join(out, fs)
        _makedirs(d)
        rep.to_json(os.path.join(d, "report.json"))
        _write_json(os.path.join(d, "subjects.json"), ids)
        if rep.confusion is not None:
            rows = [{"true": c, **{p: _fmt(rep.confusion[i, j]) for j, p in enumerate(rep.classes)}}
                    for i, c in enumerate(rep.classes)]
            _write_csv(os.path.join(d, "confusion.csv"), rows, ["true", *rep.classes])
        classes = rep.classes if task == "classify" else [target]
        cr = coefficient_report(rep.coefs, names, classes)
        cols = ["class", "feature", "min", "q1", "median", "q3", "max", "nonzero_frac"]
        _write_csv(os.path.join(d, "coefficients.csv"), cr["per_feature"], cols)
        if fs in ("mps", "combined"):
            # weight maps from the MPS block (the trailing 3157 columns)
            mean_w = rep.coefs[:, :, -N_MPS:].mean(axis=0)
            for k, c in enumerate(classes):
                write_matrix(os.path.join(d, f"weights_{c}.bin"), mean_w[k].reshape(N_TEMPORAL, N_SPECTRAL),
                             {"quantity": "mean_coefficient", "class": c, "feature_set": fs})
        if not summary_rows:
            summary_rows.append({"model": "baseline", "n_subjects": rep.n_subjects,
                                 **{k: _ms(v) for k, v in rep.summary()["baseline"].items()}})
        summary_rows.append({"model": fs, "n_subjects": rep.n_subjects,
                             **{k: _ms(v) for k, v in rep.summary()["model"].items()}, "sparsity": f"{cr['sparsity']:.3f}"})
    metric_cols = [k for k in summary_rows[0] if k not in ("model", "n_subjects")]
    _write_csv(os.path.join(out, "summary.csv"), summary_rows, ["model", "n_subjects", *metric_cols, "sparsity"])
    _write_metadata(out, task, cfg, {
        "target": target,
        "feature_sets": list(ev.feature_sets),
        "repeats": ev.repeats,
        "test_frac": ev.test_frac,
        "features_sha256": _sha256_file(os.path.join(args.features, "features.csv")),
    })
    return EXIT_OK


def cmd_classify(args, cfg):
    return _evaluate(args, cfg, "classify")


def cmd_regress(args, cfg):
    return _evaluate(args, cfg, "regress", args.target)


# --------------------------------------------------------------------------
# synth / config


def _read_spec(path):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read spec {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"spec {path} is not valid YAML/JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"spec {path}: expected a mapping")
    try:
        return CohortSpec.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"spec {path}: {exc}") from exc


def cmd_synth(args, cfg: RunConfig):
    if bool(args.spec) == bool(args.preset):
        raise UsageError("give exactly one of --spec or --preset")
    if args.spec:
        spec = _read_spec(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
    else:
        make = {"null": null_cohort_spec, "planted": planted_cohort_spec}[args.preset]
        spec = make(seed=cfg.seed)
    _makedirs(args.out)
    try:
        synth_cohort(spec, args.out)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    _write_metadata(args.out, "synth", cfg, {"cohort_seed": spec.seed, "n_subjects": sum(g.n for g in spec.groups.values())})
    return EXIT_OK


def cmd_config(args, cfg: RunConfig):
    if args.action == "init":
        if args.out == "-":
            yaml.safe_dump(cfg.to_dict(), sys.stdout, sort_keys=True, default_flow_style=False)
        else:
            cfg.dump(args.out)
    else:  # validate
        print(cfg.digest())
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(prog="phonomark", description="Phonatory and MPS voice biomarkers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="YAML run configuration (defaults when omitted)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the configured seed")

    sp = sub.add_parser("extract", help="extract phonatory and MPS features")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    common(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("stats", help="group-level statistics")
    sp.add_argument("--features", required=True, help="output directory of extract")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_stats)

    for name, func in (("classify", cmd_classify), ("regress", cmd_regress)):
        sp = sub.add_parser(name, help=f"repeated learning-testing ({name})")
        sp.add_argument("--features", required=True, help="output directory of extract")
        sp.add_argument("--out", required=True)
        sp.add_argument("--feature-set", action="append", choices=FEATURE_SETS, dest="feature_sets")
        sp.add_argument("--repeats", type=int)
        sp.add_argument("--test-frac", type=float)
        if name == "regress":
            sp.add_argument("--target", required=True, choices=TARGETS)
        common(sp)
        sp.set_defaults(func=func)

    sp = sub.add_parser("synth", help="render a synthetic cohort")
    sp.add_argument("--spec", help="cohort spec (YAML or JSON)")
    sp.add_argument("--preset", choices=("null", "planted"))
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("config", help="emit or validate a run configuration")
    sp.add_argument("action", choices=("init", "validate"))
    sp.add_argument("--out", default="-", help="destination for init ('-' for stdout)")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(
            seed=getattr(args, "seed", None),
            repeats=getattr(args, "repeats", None),
            test_frac=getattr(args, "test_frac", None),
            feature_sets=getattr(args, "feature_sets", None),
        )
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"phonomark: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"phonomark: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
