"""Column-typed tabular datasets: CSV ingestion, imputation, scaling, labeling, folding."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
BOOLEAN = "boolean"
COLUMN_KINDS = (CONTINUOUS, CATEGORICAL, BOOLEAN)

DIABETES = "diabetes"
DYSLIPIDEMIA = "dyslipidemia"
HYPERTENSION = "hypertension"
DISEASES = (DIABETES, DYSLIPIDEMIA, HYPERTENSION)

ONSET_NEGATIVE = 0
ONSET_POSITIVE = 1
ONSET_EXCLUDED = -1

_BOOL_TOKENS = {"true": 1.0, "false": 0.0, "1": 1.0, "0": 0.0, "1.0": 1.0, "0.0": 0.0}


class ParseError(ValueError):
    """Raised when a CSV cell or row cannot be interpreted under the schema."""


class SchemaError(ValueError):
    """Raised when two tables (or a table and a fitted transform) disagree on schema."""


@dataclass
class Table:
    """Immutable numeric matrix with per-column kinds and a missing-value mask.

    ``values`` holds NaN exactly where ``missing_mask`` is true.  Categorical
    columns store non-negative integer codes; the token behind each code is
    recorded in ``categories`` (first-appearance order).
    """

    column_names: list[str]
    column_kinds: list[str]
    values: np.ndarray
    missing_mask: np.ndarray
    categories: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D matrix")
        if self.values.shape != self.missing_mask.shape:
            raise ValueError("values and missing_mask shapes differ")
        if self.values.shape[1] != len(self.column_names):
            raise ValueError("column count does not match column_names")
        if len(self.column_kinds) != len(self.column_names):
            raise ValueError("column_kinds does not match column_names")
        for kind in self.column_kinds:
            if kind not in COLUMN_KINDS:
                raise ValueError(f"unknown column kind {kind!r}")
        if np.isnan(self.values[~self.missing_mask]).any():
            raise ValueError("NaN present where missing_mask is false")
        for j, kind in enumerate(self.column_kinds):
            if kind == CATEGORICAL:
                col = self.values[~self.missing_mask[:, j], j]
                if col.size and (np.any(col < 0) or np.any(col != np.round(col))):
                    raise ValueError(
                        f"categorical column {self.column_names[j]!r} has non-integer codes"
                    )
        self.values.flags.writeable = False
        self.missing_mask.flags.writeable = False

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise SchemaError(f"no column named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_index(name)]

    def take_rows(self, index: np.ndarray) -> Table:
        return Table(
            list(self.column_names),
            list(self.column_kinds),
            self.values[index].copy(),
            self.missing_mask[index].copy(),
            dict(self.categories),
        )

    def select_columns(self, names: list[str]) -> Table:
        idx = [self.column_index(n) for n in names]
        return Table(
            [self.column_names[j] for j in idx],
            [self.column_kinds[j] for j in idx],
            self.values[:, idx].copy(),
            self.missing_mask[:, idx].copy(),
            {n: v for n, v in self.categories.items() if n in names},
        )

    def same_schema(self, other: Table) -> bool:
        return (
            self.column_names == other.column_names
            and self.column_kinds == other.column_kinds
        )


@dataclass
class Standardizer:
    """Per-column affine scaling fitted on continuous columns only.

    Constant columns get std substituted by 1 so apply/invert stay finite.
    """

    column_names: list[str]
    column_kinds: list[str]
    mean: np.ndarray
    std: np.ndarray


@dataclass
class DiagnosticCriteria:
    """Disease thresholds and the column names they are evaluated against.

    Measurement thresholds marked "or higher" are inclusive; the HDL criterion
    is strictly below.  A true medication flag alone marks the row diseased.
    """

    hba1c_min: float = 6.5
    fasting_glucose_min: float = 126.0
    ldl_min: float = 120.0
    hdl_max_exclusive: float = 40.0
    tg_min: float = 150.0
    sbp_min: float = 140.0
    dbp_min: float = 90.0
    hba1c_col: str = "hba1c"
    fasting_glucose_col: str = "fasting_glucose"
    ldl_col: str = "ldl"
    hdl_col: str = "hdl"
    tg_col: str = "tg"
    sbp_col: str = "sbp"
    dbp_col: str = "dbp"
    diabetes_meds_col: str = "diabetes_meds"
    dyslipidemia_meds_col: str = "dyslipidemia_meds"
    hypertension_meds_col: str = "hypertension_meds"

    def __post_init__(self) -> None:
        for name in (
            "hba1c_min", "fasting_glucose_min", "ldl_min", "hdl_max_exclusive",
            "tg_min", "sbp_min", "dbp_min",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    def rules(self, disease: str) -> tuple[list[tuple[str, float, str]], str]:
        """(measurement rules, medication column) for one disease.

        Each rule is (column, threshold, op) with op one of ">=", "<".
        """
        if disease == DIABETES:
            return (
                [(self.hba1c_col, self.hba1c_min, ">="),
                 (self.fasting_glucose_col, self.fasting_glucose_min, ">=")],
                self.diabetes_meds_col,
            )
        if disease == DYSLIPIDEMIA:
            return (
                [(self.ldl_col, self.ldl_min, ">="),
                 (self.hdl_col, self.hdl_max_exclusive, "<"),
                 (self.tg_col, self.tg_min, ">=")],
                self.dyslipidemia_meds_col,
            )
        if disease == HYPERTENSION:
            return (
                [(self.sbp_col, self.sbp_min, ">="),
                 (self.dbp_col, self.dbp_min, ">=")],
                self.hypertension_meds_col,
            )
        raise ValueError(f"unknown disease {disease!r}; expected one of {DISEASES}")


@dataclass
class FoldAssignment:
    """Stratified fold index per row, values in [0, k)."""

    fold_index: np.ndarray
    k: int


@dataclass
class OnsetLabels:
    """Per-row onset label (0, 1, or ONSET_EXCLUDED) with exclusion tallies."""

    labels: np.ndarray
    n_prevalent: int
    n_unlabelable: int
    n_missing_followup: int


def _parse_cell(
    text: str, kind: str, codes: dict[str, int], row: int, col_name: str
) -> float:
    text = text.strip()
    if kind == CONTINUOUS:
        try:
            return float(text)
        except ValueError:
            raise ParseError(
                f"row {row}, column {col_name!r}: cannot parse {text!r} as a number"
            ) from None
    if kind == BOOLEAN:
        token = text.lower()
        if token in _BOOL_TOKENS:
            return _BOOL_TOKENS[token]
        raise ParseError(
            f"row {row}, column {col_name!r}: cannot parse {text!r} as a boolean"
        )
    # Categorical: stable integer codes in first-appearance order.
    if text not in codes:
        codes[text] = len(codes)
    return float(codes[text])


def _infer_kind(cells: list[str]) -> str:
    non_empty = [c.strip() for c in cells if c.strip() != ""]
    if not non_empty:
        return CONTINUOUS
    numeric = True
    values = []
    for c in non_empty:
        try:
            values.append(float(c))
        except ValueError:
            numeric = False
            break
    if not numeric:
        return CATEGORICAL
    if set(values) <= {0.0, 1.0}:
        return BOOLEAN
    return CONTINUOUS


def sidecar_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".meta.json")


def load_csv(path: str | Path, kind_overrides: dict[str, str] | None = None) -> Table:
    """Read an RFC-4180-style CSV (UTF-8, mandatory header; empty cell = missing).

    Column kinds come from the JSON sidecar when present, then from
    ``kind_overrides``, then from inference over the column's cells.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ParseError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    n_cols = len(header)
    data = rows[1:]
    for i, r in enumerate(data, start=1):
        if len(r) != n_cols:
            raise ParseError(
                f"{path}: row {i} has {len(r)} cells, expected {n_cols}"
            )

    kinds: dict[str, str] = {}
    categories: dict[str, list[str]] = {}
    meta = sidecar_path(path)
    if meta.exists():
        doc = json.loads(meta.read_text(encoding="utf-8"))
        kinds.update(doc.get("column_kinds", {}))
        categories = {k: list(v) for k, v in doc.get("categories", {}).items()}
    if kind_overrides:
        for name, kind in kind_overrides.items():
            if kind not in COLUMN_KINDS:
                raise ValueError(f"unknown column kind {kind!r} for {name!r}")
            kinds[name] = kind

    column_kinds = []
    for j, name in enumerate(header):
        if name in kinds:
            column_kinds.append(kinds[name])
        else:
            column_kinds.append(_infer_kind([r[j] for r in data]))

    code_maps: dict[str, dict[str, int]] = {
        name: {tok: i for i, tok in enumerate(categories.get(name, []))}
        for name in header
    }
    values = np.full((len(data), n_cols), np.nan)
    mask = np.zeros((len(data), n_cols), dtype=bool)
    for i, r in enumerate(data):
        for j, cell in enumerate(r):
            if cell.strip() == "":
                mask[i, j] = True
                continue
            values[i, j] = _parse_cell(
                cell, column_kinds[j], code_maps[header[j]], i + 1, header[j]
            )
    out_categories = {
        name: [tok for tok, _ in sorted(code_maps[name].items(), key=lambda kv: kv[1])]
        for name, kind in zip(header, column_kinds)
        if kind == CATEGORICAL
    }
    return Table(header, column_kinds, values, mask, out_categories)


def save_table(table: Table, path: str | Path) -> tuple[Path, Path]:
    """Write a table as CSV plus its JSON metadata sidecar; returns both paths."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.column_names)
        for i in range(table.n_rows):
            row = []
            for j, kind in enumerate(table.column_kinds):
                if table.missing_mask[i, j]:
                    row.append("")
                elif kind == CATEGORICAL:
                    tokens = table.categories.get(table.column_names[j])
                    code = int(table.values[i, j])
                    row.append(tokens[code] if tokens else str(code))
                elif kind == BOOLEAN:
                    row.append(str(int(table.values[i, j])))
                else:
                    row.append(repr(float(table.values[i, j])))
            writer.writerow(row)
    meta = sidecar_path(path)
    doc = {
        "column_kinds": dict(zip(table.column_names, table.column_kinds)),
        "categories": table.categories,
    }
    meta.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    return path, meta


def filter_columns_by_missingness(table: Table, max_missing_fraction: float) -> Table:
    """Keep columns whose missing fraction is strictly below the threshold."""
    if not 0.0 <= max_missing_fraction <= 1.0:
        raise ValueError("max_missing_fraction must be in [0, 1]")
    frac = table.missing_mask.mean(axis=0) if table.n_rows else np.zeros(table.n_cols)
    keep = [name for name, f in zip(table.column_names, frac) if f < max_missing_fraction]
    return table.select_columns(keep)


def impute_mean(table: Table, source: Table) -> Table:
    """Fill missing cells from a source table: column mean (continuous) or mode.

    Non-missing cells are untouched; the returned mask is all false.
    """
    if not table.same_schema(source):
        raise SchemaError("impute source table schema differs")
    values = table.values.copy()
    for j, kind in enumerate(table.column_kinds):
        col_missing = table.missing_mask[:, j]
        if not col_missing.any():
            continue
        src = source.values[~source.missing_mask[:, j], j]
        if src.size == 0:
            raise ValueError(
                f"column {table.column_names[j]!r} is entirely missing in the source table"
            )
        if kind == CONTINUOUS:
            fill = float(src.mean())
        else:
            codes, counts = np.unique(src, return_counts=True)
            fill = float(codes[np.argmax(counts)])  # smallest code on count ties
        values[col_missing, j] = fill
    mask = np.zeros_like(table.missing_mask)
    return Table(
        list(table.column_names), list(table.column_kinds), values, mask,
        dict(table.categories),
    )


def standardize_fit(table: Table) -> Standardizer:
    """Fit per-column mean/std on the continuous columns (population std)."""
    if table.n_rows < 2:
        raise ValueError("standardize_fit needs at least 2 rows")
    mean = np.zeros(table.n_cols)
    std = np.ones(table.n_cols)
    for j, kind in enumerate(table.column_kinds):
        if kind != CONTINUOUS:
            continue
        col = table.values[~table.missing_mask[:, j], j]
        if col.size:
            mean[j] = col.mean()
            s = col.std()
            std[j] = s if s > 0 else 1.0
    return Standardizer(list(table.column_names), list(table.column_kinds), mean, std)


def _check_standardizer_schema(s: Standardizer, table: Table) -> None:
    if s.column_names != table.column_names or s.column_kinds != table.column_kinds:
        raise SchemaError("table schema does not match the fitted standardizer")


def standardize_apply(s: Standardizer, table: Table) -> Table:
    _check_standardizer_schema(s, table)
    values = table.values.copy()
    for j, kind in enumerate(table.column_kinds):
        if kind == CONTINUOUS:
            values[:, j] = (values[:, j] - s.mean[j]) / s.std[j]
    return Table(
        list(table.column_names), list(table.column_kinds), values,
        table.missing_mask.copy(), dict(table.categories),
    )


def standardize_invert(s: Standardizer, table: Table) -> Table:
    _check_standardizer_schema(s, table)
    values = table.values.copy()
    for j, kind in enumerate(table.column_kinds):
        if kind == CONTINUOUS:
            values[:, j] = values[:, j] * s.std[j] + s.mean[j]
    return Table(
        list(table.column_names), list(table.column_kinds), values,
        table.missing_mask.copy(), dict(table.categories),
    )


def diagnose(table: Table, criteria: DiagnosticCriteria, disease: str) -> np.ndarray:
    """Per-row disease status: 1.0 diseased, 0.0 not, NaN unlabelable.

    A row is diseased iff any criterion fires (thresholds inclusive, HDL
    strictly below) or the medication flag is set.  Any missing criterion
    cell makes the row unlabelable.
    """
    rules, meds_col = criteria.rules(disease)
    cols = [c for c, _, _ in rules] + [meds_col]
    idx = [table.column_index(c) for c in cols]
    unlabelable = table.missing_mask[:, idx].any(axis=1)

    fired = np.zeros(table.n_rows, dtype=bool)
    for col_name, threshold, op in rules:
        v = table.column(col_name)
        with np.errstate(invalid="ignore"):
            hit = v >= threshold if op == ">=" else v < threshold
        fired |= np.where(np.isnan(v), False, hit)
    fired |= np.where(np.isnan(table.column(meds_col)), False, table.column(meds_col) >= 1)

    out = fired.astype(np.float64)
    out[unlabelable] = np.nan
    return out


def onset_labels(
    table_year_t: Table,
    table_year_t1: Table,
    criteria: DiagnosticCriteria,
    disease: str,
    subject_col: str = "subject_id",
) -> OnsetLabels:
    """One-year onset labels for rows of the year-t table.

    1 = healthy at t, diseased at t+1; 0 = healthy at both; excluded when
    already diseased at t, unlabelable in either year, or absent at t+1.
    """
    ids_t = table_year_t.column(subject_col)
    ids_t1 = table_year_t1.column(subject_col)
    for name, ids in ((("year t"), ids_t), (("year t+1"), ids_t1)):
        if np.isnan(ids).any():
            raise ValueError(f"missing subject ids in {name} table")
        if len(np.unique(ids)) != len(ids):
            raise ValueError(f"duplicate subject ids in {name} table")

    status_t = diagnose(table_year_t, criteria, disease)
    status_t1 = diagnose(table_year_t1, criteria, disease)
    lookup = {float(s): i for i, s in enumerate(ids_t1)}

    labels = np.full(table_year_t.n_rows, ONSET_EXCLUDED, dtype=np.int8)
    n_prevalent = n_unlabelable = n_missing = 0
    for i in range(table_year_t.n_rows):
        if np.isnan(status_t[i]):
            n_unlabelable += 1
            continue
        if status_t[i] == 1.0:
            n_prevalent += 1
            continue
        row_t1 = lookup.get(float(ids_t[i]))
        if row_t1 is None:
            n_missing += 1
            continue
        if np.isnan(status_t1[row_t1]):
            n_unlabelable += 1
            continue
        labels[i] = ONSET_POSITIVE if status_t1[row_t1] == 1.0 else ONSET_NEGATIVE
    return OnsetLabels(labels, n_prevalent, n_unlabelable, n_missing)


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> FoldAssignment:
    """Deterministic stratified k-fold assignment (round-robin within class)."""
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("both classes must be present")
    rng = np.random.default_rng(seed)
    fold = np.full(len(labels), -1, dtype=np.int64)
    offset = 0
    for c in classes:
        rows = np.flatnonzero(labels == c)
        if len(rows) < k:
            raise ValueError(
                f"class {c} has {len(rows)} members, fewer than k={k}"
            )
        rows = rows[rng.permutation(len(rows))]
        fold[rows] = (np.arange(len(rows)) + offset) % k
        offset += len(rows)  # stagger classes so fold sizes stay balanced
    return FoldAssignment(fold, k)


@dataclass
class NeuralPreprocess:
    """Frozen imputation fills plus scaling, replayable on new tables."""

    column_names: list[str]
    column_kinds: list[str]
    fill_values: list[float]
    mean: list[float]
    std: list[float]
    categories: dict[str, list[str]]

    def to_json(self, path: str | Path | None = None) -> str:
        doc = {"format": "odrop-preprocess", "version": 1, **asdict(self)}
        text = json.dumps(doc, sort_keys=True)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> NeuralPreprocess:
        if isinstance(source, Path):
            text = source.read_text(encoding="utf-8")
        elif str(source).lstrip().startswith("{"):
            text = str(source)
        else:
            text = Path(source).read_text(encoding="utf-8")
        doc = json.loads(text)
        if doc.get("format") != "odrop-preprocess":
            raise ValueError("expected an odrop-preprocess document")
        return cls(
            doc["column_names"], doc["column_kinds"], doc["fill_values"],
            doc["mean"], doc["std"], doc["categories"],
        )


def neural_preprocess_fit(table: Table) -> NeuralPreprocess:
    """Learn imputation fills and continuous-column scaling from one table."""
    fills = []
    for j, kind in enumerate(table.column_kinds):
        col = table.values[~table.missing_mask[:, j], j]
        if col.size == 0:
            raise ValueError(
                f"column {table.column_names[j]!r} is entirely missing"
            )
        if kind == CONTINUOUS:
            fills.append(float(col.mean()))
        else:
            codes, counts = np.unique(col, return_counts=True)
            fills.append(float(codes[np.argmax(counts)]))
    imputed = _fill_missing(table, fills)
    s = standardize_fit(imputed)
    return NeuralPreprocess(
        list(table.column_names), list(table.column_kinds), fills,
        [float(v) for v in s.mean], [float(v) for v in s.std],
        dict(table.categories),
    )


def _fill_missing(table: Table, fills: list[float]) -> Table:
    values = table.values.copy()
    for j, fill in enumerate(fills):
        values[table.missing_mask[:, j], j] = fill
    return Table(
        list(table.column_names), list(table.column_kinds), values,
        np.zeros_like(table.missing_mask), dict(table.categories),
    )


def neural_preprocess_apply(pp: NeuralPreprocess, table: Table) -> tuple[np.ndarray, list[str]]:
    """Impute with the stored fills, scale, and one-hot expand."""
    if (table.column_names != pp.column_names
            or table.column_kinds != pp.column_kinds):
        raise SchemaError("table schema does not match the fitted preprocess")
    filled = _fill_missing(table, pp.fill_values)
    s = Standardizer(list(pp.column_names), list(pp.column_kinds),
                     np.asarray(pp.mean), np.asarray(pp.std))
    scaled = standardize_apply(s, filled)
    if pp.categories:
        scaled = Table(
            list(scaled.column_names), list(scaled.column_kinds),
            scaled.values.copy(), scaled.missing_mask.copy(), dict(pp.categories),
        )
    return neural_matrix(scaled)


def neural_matrix(table: Table) -> tuple[np.ndarray, list[str]]:
    """Dense design matrix for neural consumers: one-hot categoricals, 0/1 booleans.

    Missing cells must already be imputed.
    """
    if table.missing_mask.any():
        raise ValueError("neural_matrix requires an imputed table (no missing cells)")
    blocks: list[np.ndarray] = []
    names: list[str] = []
    for j, (name, kind) in enumerate(zip(table.column_names, table.column_kinds)):
        col = table.values[:, j]
        if kind == CATEGORICAL:
            tokens = table.categories.get(name)
            n_codes = len(tokens) if tokens else int(col.max()) + 1 if col.size else 0
            onehot = np.zeros((table.n_rows, n_codes))
            onehot[np.arange(table.n_rows), col.astype(int)] = 1.0
            blocks.append(onehot)
            names.extend(
                f"{name}={tokens[c] if tokens else c}" for c in range(n_codes)
            )
        else:
            blocks.append(col[:, None])
            names.append(name)
    return np.hstack(blocks) if blocks else np.zeros((table.n_rows, 0)), names
