"""Command-line surface: reproducible experiments with manifests and figures.

Exit codes: 0 success, 1 runtime error, 2 usage or config error.  Every
command writes its artifacts plus a manifest recording the config hash, the
seed, and a sha256 per artifact; a failed command removes partial outputs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import explain as explain_mod
from . import gbt, metrics, nn, ood, rejection, stats, synth, tabular

DEFAULT_OUT_ENV = "ODROP_OUT"
_FALLBACK_OUT = "odrop-output"


class CliError(ValueError):
    """Config or usage problem; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: A003 - argparse hook
        print(json.dumps({"error": message, "code": 2}), file=sys.stderr)
        raise SystemExit(2)


class OutputTracker:
    """Registers written files so a failing command can remove partial output."""

    def __init__(self) -> None:
        self.dir: Path | None = None
        self.paths: list[Path] = []

    def set_dir(self, directory: str | Path) -> Path:
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir

    def path(self, name: str) -> Path:
        if self.dir is None:
            raise CliError("output directory not set")
        p = self.dir / name
        self.paths.append(p)
        return p

    def register(self, p: Path) -> Path:
        self.paths.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


def _default_out() -> str:
    return os.environ.get(DEFAULT_OUT_ENV, _FALLBACK_OUT)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(doc: dict) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True).encode("utf-8")
    ).hexdigest()


def write_manifest(out: OutputTracker, command: str, config_doc: dict,
                   seed: int | None) -> Path:
    artifacts = sorted(
        {p for p in out.paths if p.exists()}, key=lambda p: p.name
    )
    doc = {
        "format": "odrop-manifest",
        "version": 1,
        "command": command,
        "config_hash": _config_hash(config_doc),
        "seed": seed,
        "artifacts": [
            {"name": p.name, "sha256": _sha256(p), "bytes": p.stat().st_size}
            for p in artifacts
        ],
    }
    path = out.dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                repr(float(v)) if isinstance(v, (float, np.floating)) else v
                for v in row
            ])
    return path


def _table_with_label(table: tabular.Table, labels: np.ndarray) -> tabular.Table:
    values = np.column_stack([table.values, labels.astype(np.float64)])
    mask = np.column_stack([table.missing_mask,
                            np.zeros(table.n_rows, dtype=bool)])
    return tabular.Table(
        table.column_names + ["label"], table.column_kinds + [tabular.BOOLEAN],
        values, mask, dict(table.categories),
    )


def _split_label(table: tabular.Table, label_col: str) -> tuple[tabular.Table, np.ndarray]:
    j = table.column_index(label_col)
    if table.missing_mask[:, j].any():
        raise CliError(f"label column {label_col!r} has missing cells")
    labels = table.values[:, j].astype(np.int64)
    features = table.select_columns(
        [c for c in table.column_names if c != label_col]
    )
    return features, labels


def _scenario_from_args(args: argparse.Namespace, doc: dict | None) -> synth.ShiftScenario:
    base = dict(doc or {})
    for key, attr in (
        ("n_train", "n_train"), ("n_test", "n_test"), ("d", "d"),
        ("ood_fraction", "ood_fraction"), ("cov_scale", "cov_scale"),
        ("label_noise_ood", "label_noise"), ("positive_rate", "positive_rate"),
        ("seed", "seed"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            base[key] = value
    if "d" not in base:
        raise CliError("scenario needs a feature dimension d")
    if getattr(args, "shift_norm", None) is not None:
        base["mean_shift"] = synth.random_shift(
            int(base["d"]), args.shift_norm, int(base.get("seed", 0))
        ).tolist()
    if "mean_shift" not in base:
        base["mean_shift"] = [0.0] * int(base["d"])
    try:
        return synth.ShiftScenario(**base)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid scenario: {exc}") from exc


def _emit_synth(data: synth.SynthData, scenario: synth.ShiftScenario,
                out: OutputTracker) -> None:
    train_csv = out.path("train.csv")
    tabular.save_table(_table_with_label(data.train, data.train_labels), train_csv)
    out.register(tabular.sidecar_path(train_csv))
    test_csv = out.path("test.csv")
    tabular.save_table(_table_with_label(data.test, data.test_labels), test_csv)
    out.register(tabular.sidecar_path(test_csv))
    _write_csv(out.path("test_ood_mask.csv"), ["row", "ood"],
               ((i, int(v)) for i, v in enumerate(data.ood_mask)))
    scenario.to_json(out.path("scenario.json"))


def cmd_synth(args: argparse.Namespace, out: OutputTracker) -> dict:
    doc = json.loads(Path(args.scenario).read_text(encoding="utf-8")) \
        if args.scenario else None
    scenario = _scenario_from_args(args, doc)
    out.set_dir(args.out)
    data = synth.generate(scenario)
    _emit_synth(data, scenario, out)
    config = json.loads(scenario.to_json())
    write_manifest(out, "synth", config, scenario.seed)
    return config


def cmd_label(args: argparse.Namespace, out: OutputTracker) -> dict:
    out.set_dir(args.out)
    table_t = tabular.load_csv(args.year_t)
    table_t1 = tabular.load_csv(args.year_t1)
    overrides = json.loads(Path(args.criteria).read_text(encoding="utf-8")) \
        if args.criteria else {}
    try:
        criteria = tabular.DiagnosticCriteria(**overrides)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid criteria: {exc}") from exc
    if args.disease not in tabular.DISEASES:
        raise CliError(f"unknown disease {args.disease!r}")
    result = tabular.onset_labels(table_t, table_t1, criteria, args.disease,
                                  args.subject_col)
    ids = table_t.column(args.subject_col)
    _write_csv(out.path("labels.csv"), [args.subject_col, "label"],
               ((float(i), int(l)) for i, l in zip(ids, result.labels)))
    summary = {
        "disease": args.disease,
        "n_rows": int(len(result.labels)),
        "n_positive": int((result.labels == tabular.ONSET_POSITIVE).sum()),
        "n_negative": int((result.labels == tabular.ONSET_NEGATIVE).sum()),
        "n_excluded_prevalent": result.n_prevalent,
        "n_excluded_unlabelable": result.n_unlabelable,
        "n_excluded_missing_followup": result.n_missing_followup,
    }
    out.path("labels.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8"
    )
    config = {"disease": args.disease, "subject_col": args.subject_col,
              "criteria": overrides}
    write_manifest(out, "label", config, None)
    return config


def cmd_shift_test(args: argparse.Namespace, out: OutputTracker) -> dict:
    from . import plots

    out.set_dir(args.out)
    train = tabular.load_csv(args.train)
    test = tabular.load_csv(args.test)
    shared = [c for c in train.column_names if c in test.column_names]
    if not shared:
        raise CliError("the two tables share no columns")
    rows = []
    for name in shared:
        kind = train.column_kinds[train.column_index(name)]
        a = train.column(name)
        b = test.column(name)
        a = a[~np.isnan(a)]
        b = b[~np.isnan(b)]
        if a.size < 2 or b.size < 2:
            continue
        if kind == tabular.CONTINUOUS:
            result = stats.welch_t(a, b)
        else:
            # Align categorical levels by token: the two files assign integer
            # codes independently, so raw codes are not comparable.
            def levels(values, table):
                tokens = table.categories.get(name)
                if tokens:
                    return np.array([tokens[int(v)] for v in values])
                return values.astype(np.int64).astype(str)

            a_lv = levels(a, train)
            b_lv = levels(b, test)
            all_levels = sorted(set(a_lv) | set(b_lv))
            counts = np.array([
                [(a_lv == lv).sum() for lv in all_levels],
                [(b_lv == lv).sum() for lv in all_levels],
            ])
            result = stats.choose_test(counts)
        rows.append((name, result.test_kind, result.statistic,
                     "" if result.dof is None else result.dof, result.p_value))
    _write_csv(out.path("shift_tests.csv"),
               ["column", "test", "statistic", "dof", "p_value"], rows)
    out.path("shift_tests.json").write_text(
        json.dumps(
            [{"column": r[0], "test": r[1], "statistic": r[2],
              "dof": None if r[3] == "" else r[3], "p_value": r[4]}
             for r in rows],
            indent=2, sort_keys=True,
        ),
        encoding="utf-8",
    )
    kde_columns = args.kde_columns.split(",") if args.kde_columns else [
        name for name in shared
        if train.column_kinds[train.column_index(name)] == tabular.CONTINUOUS
    ]
    for name in kde_columns:
        if name not in shared:
            raise CliError(f"unknown KDE column {name!r}")
        curves = {}
        for label, table in (("train", train), ("test", test)):
            col = table.column(name)
            col = col[~np.isnan(col)]
            if np.unique(col).size >= 2:
                curves[label] = stats.kde(col)
        if not curves:
            continue
        grid_rows = []
        for label, curve in sorted(curves.items()):
            grid_rows.extend(
                (label, g, d) for g, d in zip(curve.grid, curve.density)
            )
        _write_csv(out.path(f"kde_{name}.csv"), ["dataset", "x", "density"],
                   grid_rows)
        plots.kde_plot(curves, name, out.path(f"kde_{name}.svg"))
    config = {"train": str(args.train), "test": str(args.test),
              "kde_columns": kde_columns}
    write_manifest(out, "shift-test", config, None)
    return config


def _boost_config_from_args(args: argparse.Namespace) -> gbt.BoostConfig:
    try:
        return gbt.BoostConfig(
            n_estimators=args.n_estimators, max_depth=args.max_depth,
            min_child_weight=args.min_child_weight, seed=args.seed,
        )
    except ValueError as exc:
        raise CliError(f"invalid boosting config: {exc}") from exc


def cmd_train_predictor(args: argparse.Namespace, out: OutputTracker) -> dict:
    out.set_dir(args.out)
    table = tabular.load_csv(args.train)
    features, labels = _split_label(table, args.label_col)
    x = np.where(features.missing_mask, np.nan, features.values)
    names = list(features.column_names)

    selected = None
    if args.rfe_k is not None:
        config = _boost_config_from_args(args)
        selected = gbt.rfe(x, labels, args.rfe_k, config)
        x = x[:, selected]
        names = [names[j] for j in selected]
        out.path("selected_features.json").write_text(
            json.dumps({"indices": selected.tolist(), "names": names},
                       indent=2, sort_keys=True),
            encoding="utf-8",
        )

    if args.grid:
        best, results = gbt.grid_search(x, labels, gbt.GridSpec(),
                                        k=args.folds, seed=args.seed)
        _write_csv(
            out.path("grid_results.csv"),
            ["n_estimators", "max_depth", "min_child_weight", "mean_auroc"],
            ((c.n_estimators, c.max_depth, c.min_child_weight, score)
             for c, score in results),
        )
        config = best
    else:
        config = _boost_config_from_args(args)
    forest = gbt.fit_gbt(x, labels, config, names)
    gbt.forest_to_json(forest, out.path("forest.json"))
    baseline = rejection.cv_baseline(x, labels, config, k=args.folds,
                                     seed=args.seed)
    out.path("cv_baseline.json").write_text(
        json.dumps({
            "auroc_mean": baseline.auroc_mean, "auroc_std": baseline.auroc_std,
            "prauc_mean": baseline.prauc_mean, "prauc_std": baseline.prauc_std,
        }, indent=2, sort_keys=True),
        encoding="utf-8",
    )
    config_doc = {
        "train": str(args.train), "label_col": args.label_col,
        "grid": bool(args.grid), "rfe_k": args.rfe_k,
        "n_estimators": config.n_estimators, "max_depth": config.max_depth,
        "min_child_weight": config.min_child_weight, "seed": args.seed,
    }
    write_manifest(out, "train-predictor", config_doc, args.seed)
    return config_doc


def _parse_methods(spec_text: str) -> list[str]:
    if spec_text == "all":
        return list(ood.METHODS)
    methods = [m.strip() for m in spec_text.split(",") if m.strip()]
    for m in methods:
        if m not in ood.METHODS:
            raise CliError(f"unknown OOD method {m!r}")
    if not methods:
        raise CliError("no OOD methods requested")
    return methods


def cmd_train_ood(args: argparse.Namespace, out: OutputTracker) -> dict:
    out.set_dir(args.out)
    table = tabular.load_csv(args.train)
    features, labels = _split_label(table, args.label_col)
    methods = _parse_methods(args.methods)
    pp = tabular.neural_preprocess_fit(features)
    x, _ = tabular.neural_preprocess_apply(pp, features)
    pp.to_json(out.path("preprocess.json"))
    scorers = ood.fit_all_scorers(
        x, labels,
        nn.TrainConfig.vae(args.seed, args.vae_epochs),
        nn.TrainConfig.classifier(args.seed + 1, args.classifier_epochs),
        n_members=args.members,
        methods=methods,
    )
    for method in methods:
        ood.scorer_to_json(scorers[method], out.path(f"scorer_{method}.json"))
    config = {
        "train": str(args.train), "label_col": args.label_col,
        "methods": methods, "vae_epochs": args.vae_epochs,
        "classifier_epochs": args.classifier_epochs, "members": args.members,
        "seed": args.seed,
    }
    write_manifest(out, "train-ood", config, args.seed)
    return config


def cmd_score(args: argparse.Namespace, out: OutputTracker) -> dict:
    out.set_dir(args.out)
    scorer = ood.scorer_from_json(Path(args.scorer))
    pp = tabular.NeuralPreprocess.from_json(Path(args.preprocess))
    table = tabular.load_csv(args.data)
    if args.label_col and args.label_col in table.column_names:
        table, _ = _split_label(table, args.label_col)
    x, _ = tabular.neural_preprocess_apply(pp, table)
    scores = scorer.score(x)
    _write_csv(out.path(f"scores_{scorer.method}.csv"), ["row", "score"],
               ((i, s) for i, s in enumerate(scores)))
    meta = {"method": scorer.method, "orientation_flip": scorer.orientation_flip,
            "n_rows": int(len(scores))}
    out.path(f"scores_{scorer.method}.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8"
    )
    config = {"scorer": str(args.scorer), "data": str(args.data)}
    write_manifest(out, "score", config, None)
    return config


def _read_eval_csv(path: str, methods: list[str]) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    table = tabular.load_csv(path)
    for required in ("label", "pred"):
        if required not in table.column_names:
            raise CliError(f"evaluation CSV lacks a {required!r} column")
    labels = table.column("label").astype(np.int64)
    pred = table.column("pred")
    score_cols = {}
    for m in methods:
        if m not in table.column_names:
            raise CliError(f"evaluation CSV lacks scores for method {m!r}")
        score_cols[m] = table.column(m)
    return labels, pred, score_cols


def _curves_for_methods(
    labels: np.ndarray, pred: np.ndarray, score_cols: dict[str, np.ndarray],
    metric_kinds: list[str], rate_grid: np.ndarray,
) -> dict[tuple[str, str], rejection.RejectionCurve]:
    curves = {}
    for method, scores in score_cols.items():
        for metric_kind in metric_kinds:
            curves[(method, metric_kind)] = rejection.rejection_curve(
                scores, pred, labels, metric_kind, rate_grid
            )
    return curves


def _emit_curves(
    curves: dict[tuple[str, str], rejection.RejectionCurve],
    metric_kinds: list[str],
    out: OutputTracker,
) -> None:
    from . import plots

    for (method, metric_kind), curve in sorted(curves.items()):
        _write_csv(
            out.path(f"curve_{method}_{metric_kind}.csv"),
            ["rate", "metric", "n_retained"],
            zip(curve.rates, curve.values, curve.n_retained.tolist()),
        )
    report = rejection.build_report(curves)
    report.to_json(out.path("report.json"))
    for metric_kind in metric_kinds:
        per_method = {
            method: curve for (method, mk), curve in curves.items()
            if mk == metric_kind
        }
        plots.rejection_curve_plot(per_method, metric_kind,
                                   out.path(f"curves_{metric_kind}.svg"))


def cmd_reject_curve(args: argparse.Namespace, out: OutputTracker) -> dict:
    out.set_dir(args.out)
    methods = _parse_methods(args.methods)
    metric_kinds = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for mk in metric_kinds:
        if mk not in rejection.METRIC_KINDS:
            raise CliError(f"unknown metric kind {mk!r}")
    labels, pred, score_cols = _read_eval_csv(args.eval, methods)
    grid = rejection.default_rate_grid(args.step, args.max_rate)
    try:
        curves = _curves_for_methods(labels, pred, score_cols, metric_kinds, grid)
    except metrics.UndefinedMetricError as exc:
        raise CliError(f"metric undefined: {exc}") from exc
    _emit_curves(curves, metric_kinds, out)
    config = {"eval": str(args.eval), "methods": methods,
              "metrics": metric_kinds, "step": args.step,
              "max_rate": args.max_rate}
    write_manifest(out, "reject-curve", config, None)
    return config


def cmd_explain(args: argparse.Namespace, out: OutputTracker) -> dict:
    out.set_dir(args.out)
    forest = gbt.forest_from_json(Path(args.forest))
    table = tabular.load_csv(args.data)
    if args.label_col and args.label_col in table.column_names:
        table, _ = _split_label(table, args.label_col)
    x = np.where(table.missing_mask, np.nan, table.values)
    score_table = tabular.load_csv(args.scores)
    scores = score_table.column("score")
    if len(scores) != x.shape[0]:
        raise CliError("scores row count does not match the data")
    if args.threshold is not None:
        threshold = args.threshold
    else:
        threshold = rejection.threshold_for_rate(scores, args.rate)
    shap = explain_mod.shap_matrix(forest, x, scores, threshold)
    if forest.feature_names:
        shap.feature_names = list(forest.feature_names)
    _write_csv(
        out.path("shap.csv"),
        ["row_id", "ood_flag", *shap.feature_names],
        ((rid, int(flag), *row) for rid, flag, row
         in zip(shap.row_ids, shap.ood_flags, shap.values)),
    )
    rows_d = explain_mod.cluster_rows(shap)
    cols_d = explain_mod.cluster_columns(shap)
    explain_mod.dendrogram_to_json(rows_d, out.path("dendrogram_rows.json"))
    explain_mod.dendrogram_to_json(cols_d, out.path("dendrogram_cols.json"))
    svg = out.path("heatmap.svg")
    explain_mod.heatmap_export(shap, rows_d, cols_d, svg)
    out.register(svg.with_suffix(".csv"))
    config = {"forest": str(args.forest), "data": str(args.data),
              "scores": str(args.scores), "threshold": threshold}
    write_manifest(out, "explain", config, None)
    return config


def _pipeline_config(args: argparse.Namespace) -> dict:
    doc: dict = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    doc.setdefault("seed", 0)
    doc.setdefault("predictor", {})
    doc.setdefault("ood", {})
    doc.setdefault("curve", {})
    doc.setdefault("explain", {})
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["out"] = args.out
    doc.setdefault("out", _default_out())
    scenario_doc = dict(doc.get("scenario", {}))
    doc["scenario"] = scenario_doc
    return doc


def cmd_pipeline(args: argparse.Namespace, out: OutputTracker) -> dict:
    config = _pipeline_config(args)
    seed = int(config["seed"])
    out.set_dir(config["out"])

    scenario_doc = dict(config["scenario"])
    scenario_doc.setdefault("seed", seed)
    if "d" not in scenario_doc:
        raise CliError("pipeline config needs scenario.d")
    if "shift_norm" in scenario_doc:
        norm = scenario_doc.pop("shift_norm")
        scenario_doc["mean_shift"] = synth.random_shift(
            int(scenario_doc["d"]), norm, int(scenario_doc["seed"])
        ).tolist()
    try:
        scenario = synth.ShiftScenario(**scenario_doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid scenario: {exc}") from exc
    data = synth.generate(scenario)
    _emit_synth(data, scenario, out)

    pred_cfg = config["predictor"]
    boost = gbt.BoostConfig(
        n_estimators=int(pred_cfg.get("n_estimators", 100)),
        max_depth=int(pred_cfg.get("max_depth", 4)),
        min_child_weight=float(pred_cfg.get("min_child_weight", 1.0)),
        seed=seed,
    )
    x_train = data.train.values
    if pred_cfg.get("grid_search", False):
        boost, grid_results = gbt.grid_search(
            x_train, data.train_labels, gbt.GridSpec(), k=5, seed=seed
        )
        _write_csv(
            out.path("grid_results.csv"),
            ["n_estimators", "max_depth", "min_child_weight", "mean_auroc"],
            ((c.n_estimators, c.max_depth, c.min_child_weight, score)
             for c, score in grid_results),
        )
    forest = gbt.fit_gbt(x_train, data.train_labels, boost,
                         list(data.train.column_names))
    gbt.forest_to_json(forest, out.path("forest.json"))

    ood_cfg = config["ood"]
    methods = ood_cfg.get("methods", list(ood.METHODS))
    for m in methods:
        if m not in ood.METHODS:
            raise CliError(f"unknown OOD method {m!r}")
    pp = tabular.neural_preprocess_fit(data.train)
    z_train, _ = tabular.neural_preprocess_apply(pp, data.train)
    z_test, _ = tabular.neural_preprocess_apply(pp, data.test)
    pp.to_json(out.path("preprocess.json"))
    scorers = ood.fit_all_scorers(
        z_train, data.train_labels,
        nn.TrainConfig.vae(seed, int(ood_cfg.get("vae_epochs", 400))),
        nn.TrainConfig.classifier(seed + 1,
                                  int(ood_cfg.get("classifier_epochs", 100))),
        n_members=int(ood_cfg.get("members", nn.ENSEMBLE_SIZE)),
        methods=methods,
    )
    score_cols: dict[str, np.ndarray] = {}
    for method in methods:
        ood.scorer_to_json(scorers[method], out.path(f"scorer_{method}.json"))
        score_cols[method] = scorers[method].score(z_test)

    pred = gbt.predict_proba(forest, data.test.values)
    _write_csv(
        out.path("eval.csv"),
        ["label", "pred", *methods],
        ((int(y), p, *[score_cols[m][i] for m in methods])
         for i, (y, p) in enumerate(zip(data.test_labels, pred))),
    )

    curve_cfg = config["curve"]
    metric_kinds = curve_cfg.get("metrics", list(rejection.METRIC_KINDS))
    grid = rejection.default_rate_grid(
        float(curve_cfg.get("step", 0.01)),
        float(curve_cfg.get("max_rate", rejection.MAX_REJECTION_RATE)),
    )
    curves = _curves_for_methods(data.test_labels, pred, score_cols,
                                 metric_kinds, grid)
    _emit_curves(curves, metric_kinds, out)

    explain_cfg = config["explain"]
    if explain_cfg.get("enabled", True):
        method = explain_cfg.get("method", ood.VAE_RECONSTRUCTION)
        metric_kind = explain_cfg.get("metric", rejection.AUROC)
        if (method, metric_kind) not in curves:
            raise CliError(
                f"explain step needs the ({method}, {metric_kind}) curve"
            )
        curve = curves[(method, metric_kind)]
        threshold = rejection.threshold_for_rate(score_cols[method],
                                                 curve.peak_rate)
        rows = (np.flatnonzero(data.test_labels == 1)
                if explain_cfg.get("rows", "positive") == "positive"
                else np.arange(data.test.n_rows))
        if rows.size >= 2:
            shap = explain_mod.shap_matrix(
                forest, data.test.values[rows], score_cols[method][rows],
                threshold, row_ids=rows.tolist(),
            )
            rows_d = explain_mod.cluster_rows(shap)
            cols_d = explain_mod.cluster_columns(shap)
            explain_mod.dendrogram_to_json(rows_d, out.path("dendrogram_rows.json"))
            explain_mod.dendrogram_to_json(cols_d, out.path("dendrogram_cols.json"))
            svg = out.path("heatmap.svg")
            explain_mod.heatmap_export(shap, rows_d, cols_d, svg)
            out.register(svg.with_suffix(".csv"))

    write_manifest(out, "pipeline", config, seed)
    return config


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--ood-fraction", dest="ood_fraction", type=float)
    p.add_argument("--shift-norm", dest="shift_norm", type=float)
    p.add_argument("--cov-scale", dest="cov_scale", type=float)
    p.add_argument("--label-noise", dest="label_noise", type=float)
    p.add_argument("--positive-rate", dest="positive_rate", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="odrop",
                     description="Selective prediction under dataset shift")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a paired train/test dataset")
    p.add_argument("--scenario", help="scenario JSON file")
    _add_synth_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="one-year onset labels from two yearly tables")
    p.add_argument("--year-t", required=True)
    p.add_argument("--year-t1", required=True)
    p.add_argument("--disease", required=True)
    p.add_argument("--subject-col", default="subject_id")
    p.add_argument("--criteria", help="criteria override JSON file")
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("shift-test", help="per-column shift statistics and KDE plots")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--kde-columns", help="comma-separated columns (default: all continuous)")
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_shift_test)

    p = sub.add_parser("train-predictor", help="fit the boosted-tree predictor")
    p.add_argument("--train", required=True)
    p.add_argument("--label-col", default="label")
    p.add_argument("--grid", action="store_true", help="grid search the boosting config")
    p.add_argument("--rfe-k", dest="rfe_k", type=int)
    p.add_argument("--n-estimators", dest="n_estimators", type=int, default=100)
    p.add_argument("--max-depth", dest="max_depth", type=int, default=4)
    p.add_argument("--min-child-weight", dest="min_child_weight", type=float, default=1.0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("train-ood", help="train the OOD scoring functions")
    p.add_argument("--train", required=True)
    p.add_argument("--label-col", default="label")
    p.add_argument("--methods", default="all")
    p.add_argument("--vae-epochs", dest="vae_epochs", type=int, default=400)
    p.add_argument("--classifier-epochs", dest="classifier_epochs", type=int, default=100)
    p.add_argument("--members", type=int, default=nn.ENSEMBLE_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_train_ood)

    p = sub.add_parser("score", help="score a table with a trained OOD scorer")
    p.add_argument("--scorer", required=True)
    p.add_argument("--preprocess", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label-col", default="label")
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("reject-curve", help="rejection curves from an evaluation CSV")
    p.add_argument("--eval", required=True,
                   help="CSV with label, pred, and one column per method")
    p.add_argument("--methods", default="all")
    p.add_argument("--metrics", default="auroc,prauc")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--max-rate", dest="max_rate", type=float,
                   default=rejection.MAX_REJECTION_RATE)
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_reject_curve)

    p = sub.add_parser("explain", help="attribution matrix, clustering, heatmap")
    p.add_argument("--forest", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scores", required=True, help="scores CSV from the score command")
    p.add_argument("--label-col", default="label")
    p.add_argument("--rate", type=float, default=0.3)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("pipeline", help="end-to-end run on a synthetic scenario")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = OutputTracker()
    try:
        args.func(args, out)
        return 0
    except CliError as exc:
        out.cleanup()
        print(json.dumps({"error": str(exc), "code": 2}), file=sys.stderr)
        return 2
    except (tabular.ParseError, tabular.SchemaError) as exc:
        out.cleanup()
        print(json.dumps({"error": str(exc), "code": 2}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        out.cleanup()
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}", "code": 1}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
