"""Cohort ingestion, feature encoding, normalization, SMOTE and synthetic data.

CSV layout (UTF-8, comma separated, header row)::

    patient_id, first_icu_stay, gender, age, weight_kg, height_cm,
    bicarbonate, chloride, creatinine, glucose, magnesium, potassium,
    sodium, [urea_nitrogen,] hemoglobin, platelet_count, white_blood_cells, aki

``urea_nitrogen`` is absent in the eICU variant. Missing values are empty
fields. Files written by :func:`write_csv` with ``include_derived=True``
additionally carry ``bmi_group`` and ``synthetic`` columns so SMOTE rows
survive a round trip unchanged.
"""
from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError, ResamplingError, SchemaError
from .seeding import rng_for

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

BMI_CODES = (0, 1, 2, 3)
GENDER_CODES = {"M": 0, "F": 1}

LAB_FEATURES = (
    "bicarbonate", "chloride", "creatinine", "glucose", "magnesium", "potassium",
    "sodium", "urea_nitrogen", "hemoglobin", "platelet_count", "white_blood_cells",
)
ID_COL, STAY_COL, LABEL_COL = "patient_id", "first_icu_stay", "aki"
OPTIONAL_COLS = ("bmi_group", "synthetic")


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = CONTINUOUS
    column: str | None = None  # CSV column; None for derived features
    codes: tuple[int, ...] = ()


_DEMOGRAPHICS = (
    Feature("gender", CATEGORICAL, "gender", (0, 1)),
    Feature("age", CONTINUOUS, "age"),
    Feature("weight", CONTINUOUS, "weight_kg"),
    Feature("height", CONTINUOUS, "height_cm"),
    Feature("bmi_group", CATEGORICAL, None, BMI_CODES),
)


@dataclass(frozen=True)
class FeatureSchema:
    variant: str
    features: tuple[Feature, ...]

    @property
    def width(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([f.kind == CATEGORICAL for f in self.features])

    @property
    def lab_features(self) -> list[str]:
        return [f.name for f in self.features if f.name in LAB_FEATURES]

    @property
    def csv_columns(self) -> list[str]:
        cols = [ID_COL, STAY_COL] + [f.column for f in self.features if f.column]
        return cols + [LABEL_COL]

    def index(self, name: str) -> int:
        return self.names.index(name)


def _schema(variant: str, labs: Iterable[str]) -> FeatureSchema:
    labs = set(labs)
    lab_feats = tuple(Feature(n, CONTINUOUS, n) for n in LAB_FEATURES if n in labs)
    return FeatureSchema(variant, _DEMOGRAPHICS + lab_feats)


MIMIC = _schema("mimic", LAB_FEATURES)
EICU = _schema("eicu", [n for n in LAB_FEATURES if n != "urea_nitrogen"])


def schema_for(variant: str) -> FeatureSchema:
    v = variant.lower()
    if v == "mimic":
        return MIMIC
    if v == "eicu":
        return EICU
    raise SchemaError(f"unknown schema variant {variant!r}; choose mimic or eicu")


def demographics_schema(variant: str) -> FeatureSchema:
    """The variant with no lab features; the minimum a raw extract must carry."""
    return _schema(schema_for(variant).variant, ())


@dataclass(frozen=True)
class PatientRecord:
    id: str
    features: tuple[float, ...]
    label: int
    synthetic: bool = False


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    continuous: np.ndarray
    source: str
    n: int

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "continuous": [bool(v) for v in self.continuous],
            "source": self.source,
            "n": int(self.n),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            np.array(d["mean"], dtype=np.float64),
            np.array(d["std"], dtype=np.float64),
            np.array(d["continuous"], dtype=bool),
            d["source"],
            d["n"],
        )


@dataclass
class Dataset:
    schema: FeatureSchema
    records: list[PatientRecord]
    normalization_stats: NormalizationStats | None = None

    def __post_init__(self):
        for r in self.records:
            if len(r.features) != self.schema.width:
                raise SchemaError(
                    f"record {r.id} has {len(r.features)} features, schema width is {self.schema.width}"
                )
            if r.label not in (0, 1):
                raise DataError(f"record {r.id}: label must be 0 or 1, got {r.label}")

    def __len__(self):
        return len(self.records)

    @property
    def X(self) -> np.ndarray:
        return feature_matrix(self.records, self.schema.width)

    @property
    def y(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def class_counts(self) -> dict[int, int]:
        y = self.y
        return {0: int((y == 0).sum()), 1: int((y == 1).sum())}

    def subset(self, idx) -> "Dataset":
        return Dataset(self.schema, [self.records[i] for i in idx])


def feature_matrix(records, width: int | None = None) -> np.ndarray:
    if isinstance(records, Dataset):
        return records.X
    if isinstance(records, np.ndarray):
        return np.asarray(records, dtype=np.float64)
    if not records:
        return np.zeros((0, width or 0))
    return np.array([r.features for r in records], dtype=np.float64)


# ---------------------------------------------------------------- BMI

def derive_bmi_group(weight_kg: float, height_cm: float) -> int:
    """WHO adult bands: 0 underweight, 1 normal, 2 overweight, 3 obese."""
    if not (weight_kg > 0 and height_cm > 0):
        raise ValueError(f"weight and height must be positive, got {weight_kg}, {height_cm}")
    bmi = weight_kg / (height_cm / 100.0) ** 2
    if bmi < 18.5:
        return 0
    if bmi < 25.0:
        return 1
    if bmi < 30.0:
        return 2
    return 3


# ---------------------------------------------------------------- CSV

RawRow = dict


def _parse_float(value: str, line: int, col: str) -> float | None:
    value = value.strip()
    if value == "":
        return None
    try:
        v = float(value)
    except ValueError:
        raise DataError(f"line {line}: column {col!r}: cannot parse {value!r} as a number") from None
    if not math.isfinite(v):
        raise DataError(f"line {line}: column {col!r}: non-finite value {value!r}")
    return v


def read_table(path, schema: FeatureSchema) -> list[RawRow]:
    """Parse a cohort CSV into raw rows without dropping anything.

    Values are floats or None (missing); ``gender`` stays 'M'/'F'. Known lab
    columns beyond the schema are parsed too so the prevalence filter can see
    them.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        missing = [c for c in schema.csv_columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")
        numeric = [c for c in header if c in LAB_FEATURES or c in ("age", "weight_kg", "height_cm")]
        own_output = "synthetic" in header
        rows = []
        for line, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise DataError(f"line {line}: expected {len(header)} fields, found {len(cells)}")
            raw = dict(zip(header, cells))
            row = {"_line": line, ID_COL: raw[ID_COL].strip()}
            for c in numeric:
                row[c] = _parse_float(raw[c], line, c)
            stay = _parse_float(raw[STAY_COL], line, STAY_COL)
            if stay not in (None, 0.0, 1.0):
                raise DataError(f"line {line}: first_icu_stay must be 0 or 1, got {raw[STAY_COL]!r}")
            row[STAY_COL] = None if stay is None else int(stay)
            g = raw["gender"].strip().upper()
            if g not in ("", "M", "F"):
                raise DataError(f"line {line}: gender must be M or F, got {raw['gender']!r}")
            row["gender"] = g or None
            label = raw[LABEL_COL].strip()
            if label not in ("0", "1"):
                raise DataError(f"line {line}: aki must be 0 or 1, got {label!r}")
            row[LABEL_COL] = int(label)
            # only files written by preprocessing carry bmi_group; raw extracts always derive it
            if own_output and raw.get("bmi_group", "").strip():
                b = _parse_float(raw["bmi_group"], line, "bmi_group")
                if b not in BMI_CODES:
                    raise DataError(f"line {line}: bmi_group must be one of {BMI_CODES}, got {b}")
                row["bmi_group"] = int(b)
            if "synthetic" in raw:
                row["synthetic"] = raw["synthetic"].strip() == "1"
            rows.append(row)
    return rows


def _feature_value(row: RawRow, feat: Feature):
    if feat.name == "gender":
        g = row.get("gender")
        return None if g is None else float(GENDER_CODES[g])
    if feat.name == "bmi_group":
        if row.get("bmi_group") is not None:
            return float(row["bmi_group"])
        w, h = row.get("weight_kg"), row.get("height_cm")
        if w is None or h is None or w <= 0 or h <= 0:
            return None
        return float(derive_bmi_group(w, h))
    return row.get(feat.column)


def encode_rows(rows: Sequence[RawRow], schema: FeatureSchema, impute: bool = False):
    """Encode raw rows into records. Returns ``(records, n_missing_dropped)``.

    By default rows missing any schema feature are dropped. With ``impute``
    continuous gaps take the column median and categorical gaps the mode
    (``bmi_group`` is re-derived from the imputed anthropometry).
    """
    fill = {}
    if impute:
        for feat in schema.features:
            if feat.column is None:
                continue
            vals = [_feature_value(r, feat) for r in rows]
            vals = [v for v in vals if v is not None]
            if not vals:
                continue
            if feat.kind == CATEGORICAL:
                fill[feat.column] = max(set(vals), key=lambda v: (vals.count(v), -v))
            else:
                fill[feat.column] = float(np.median(vals))
    records, dropped = [], 0
    inv_gender = {v: k for k, v in GENDER_CODES.items()}
    for r in rows:
        if fill:
            r = dict(r)
            for col, v in fill.items():
                if r.get(col) is None:
                    r[col] = inv_gender[int(v)] if col == "gender" else v
        values = [_feature_value(r, f) for f in schema.features]
        if any(v is None for v in values):
            dropped += 1
            continue
        records.append(PatientRecord(r[ID_COL], tuple(values), r[LABEL_COL], bool(r.get("synthetic", False))))
    return records, dropped


def infer_schema(path, variant: str | None = None) -> FeatureSchema:
    """Schema for a CSV file from its header.

    Without ``variant`` the file is taken as MIMIC when it has a
    ``urea_nitrogen`` column and eICU otherwise. Files written by
    preprocessing (they carry a ``synthetic`` column) keep only the lab
    columns that survived the prevalence filter, so their schema is
    narrowed to the labs present.
    """
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    if variant is None:
        variant = "mimic" if "urea_nitrogen" in header else "eicu"
    full = schema_for(variant)
    if "synthetic" in header:
        return _schema(full.variant, [n for n in full.lab_features if n in header])
    return full


def load_csv(path, schema: FeatureSchema, impute: bool = False) -> Dataset:
    rows = read_table(path, schema)
    records, _ = encode_rows(rows, schema, impute)
    return Dataset(schema, records)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(path, dataset: Dataset, include_derived: bool = False) -> None:
    schema = dataset.schema
    cols = schema.csv_columns
    if include_derived:
        cols = cols + list(OPTIONAL_COLS)
    idx = {f.name: i for i, f in enumerate(schema.features)}
    inv_gender = {v: k for k, v in GENDER_CODES.items()}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in dataset.records:
            out = []
            for c in cols:
                if c == ID_COL:
                    out.append(r.id)
                elif c == STAY_COL:
                    out.append("1")
                elif c == LABEL_COL:
                    out.append(str(r.label))
                elif c == "gender":
                    out.append(inv_gender[int(r.features[idx["gender"]])])
                elif c == "bmi_group":
                    out.append(str(int(r.features[idx["bmi_group"]])))
                elif c == "synthetic":
                    out.append("1" if r.synthetic else "0")
                else:
                    name = next(f.name for f in schema.features if f.column == c)
                    out.append(_fmt(r.features[idx[name]]))
            w.writerow(out)


# ---------------------------------------------------------------- cohort funnel

FUNNEL_STAGES = ("not_first_icu_stay", "age_outside_18_89", "missing_height_or_weight")


def apply_inclusion(rows: Sequence[RawRow]):
    """Filter rows through the inclusion criteria in funnel order.

    Returns ``(kept, tally)`` where ``tally`` maps each stage to the number of
    rows it removed. Ages are inclusive on both ends.
    """
    tally = OrderedDict((s, 0) for s in FUNNEL_STAGES)
    kept = []
    for r in rows:
        if r.get(STAY_COL) != 1:
            tally["not_first_icu_stay"] += 1
            continue
        age = r.get("age")
        if age is None or not 18 <= age <= 89:
            tally["age_outside_18_89"] += 1
            continue
        w, h = r.get("weight_kg"), r.get("height_cm")
        if w is None or h is None or w <= 0 or h <= 0:
            tally["missing_height_or_weight"] += 1
            continue
        kept.append(r)
    return kept, tally


def prevalence_filter(rows: Sequence[RawRow], variant: str = "mimic", threshold: float = 0.2,
                      candidates: Sequence[str] = LAB_FEATURES) -> FeatureSchema:
    """Drop lab features measured in fewer than ``threshold`` of the rows.

    A candidate column absent from the table counts as never measured.
    """
    n = len(rows)
    retained = []
    for name in candidates:
        present = sum(1 for r in rows if r.get(name) is not None)
        # present / n < threshold, compared exactly
        if n > 0 and Fraction(present, n) >= Fraction(threshold).limit_denominator(10**9):
            retained.append(name)
    return _schema(variant, retained)


@dataclass
class FunnelReport:
    input_rows: int
    excluded: dict
    kept: int
    retained_features: list
    class_counts_before: dict
    synthetic_added: int = 0
    class_counts_after: dict = field(default_factory=dict)

    @property
    def output_rows(self) -> int:
        return self.kept + self.synthetic_added

    def to_dict(self) -> dict:
        return {
            "input_rows": self.input_rows,
            "excluded": dict(self.excluded),
            "kept": self.kept,
            "retained_features": list(self.retained_features),
            "class_counts_before": {str(k): v for k, v in self.class_counts_before.items()},
            "synthetic_added": self.synthetic_added,
            "class_counts_after": {str(k): v for k, v in self.class_counts_after.items()},
            "output_rows": self.output_rows,
        }


def preprocess(rows: Sequence[RawRow], variant: str, impute: bool = False, smote: bool = True,
               k: int = 5, seed: int = 0, threshold: float = 0.2):
    """Inclusion -> prevalence filter -> encoding -> SMOTE. Returns ``(dataset, report)``."""
    kept, tally = apply_inclusion(rows)
    schema = prevalence_filter(kept, variant, threshold)
    records, dropped = encode_rows(kept, schema, impute)
    tally["missing_selected_feature"] = dropped
    data = Dataset(schema, records)
    report = FunnelReport(len(rows), tally, len(records), schema.names, data.class_counts())
    if smote and len(data) > 0:
        data = smote_oversample(data, k=k, seed=seed)
    report.synthetic_added = sum(r.synthetic for r in data.records)
    report.class_counts_after = data.class_counts()
    return data, report


# ---------------------------------------------------------------- normalization

def fit_normalization(data, schema: FeatureSchema | None = None, source: str = "train") -> NormalizationStats:
    """Per-feature mean and population std of continuous features.

    Categorical features get mean 0 and std 1 so they pass through unscaled.
    """
    if isinstance(data, Dataset):
        schema = data.schema
    X = feature_matrix(data)
    if schema is None:
        raise SchemaError("fit_normalization needs a schema for a bare matrix")
    cont = ~schema.categorical_mask
    mean = np.zeros(X.shape[1])
    std = np.ones(X.shape[1])
    if len(X):
        mean[cont] = X[:, cont].mean(axis=0)
        std[cont] = X[:, cont].std(axis=0)
    return NormalizationStats(mean, std, cont, source, len(X))


def apply_normalization(data, stats: NormalizationStats) -> np.ndarray:
    """Z-score continuous columns with ``stats``; zero-variance columns map to 0."""
    X = feature_matrix(data)
    if X.shape[1] != len(stats.mean):
        raise SchemaError(f"data has {X.shape[1]} features, stats cover {len(stats.mean)}")
    Z = X.copy()
    live = stats.continuous & (stats.std > 0)
    Z[:, live] = (X[:, live] - stats.mean[live]) / stats.std[live]
    Z[:, stats.continuous & ~(stats.std > 0)] = 0.0
    return Z


# ---------------------------------------------------------------- SMOTE

def minority_neighbors(Z: np.ndarray, k: int, chunk: int = 2048) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of ``Z`` (Euclidean).

    Ties in distance go to the lower row index.
    """
    m = len(Z)
    out = np.empty((m, k), dtype=np.int64)
    for start in range(0, m, chunk):
        D = cdist(Z[start:start + chunk], Z, "sqeuclidean")
        rows = np.arange(D.shape[0])
        D[rows, start + rows] = np.inf
        if k < m - 1:
            kth = np.partition(D, k - 1, axis=1)[:, k - 1]
        else:
            kth = np.full(D.shape[0], np.inf)
        for r in range(D.shape[0]):
            cand = np.flatnonzero(D[r] <= kth[r])
            cand = cand[np.lexsort((cand, D[r, cand]))]
            out[start + r] = cand[:k]
    return out


def _round_to_codes(values: np.ndarray, codes: Sequence[int]) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    # nearest code, ties to the lower code
    return codes[np.argmin(np.abs(values[:, None] - codes[None, :]), axis=1)]


def smote_oversample(dataset: Dataset, k: int = 5, seed: int = 0) -> Dataset:
    """Balance classes by interpolating new minority rows toward minority neighbors.

    Each synthetic row is ``x + u * (x_nn - x)`` with one ``u ~ U(0, 1)`` shared
    by every coordinate, ``x`` a uniformly drawn minority row and ``x_nn`` one
    of its ``k`` nearest minority neighbors (distance on z-scored continuous
    features). Categorical coordinates are rounded to the nearest valid code.
    Originals are kept first and in order.
    """
    counts = dataset.class_counts()
    if counts[0] == counts[1]:
        return Dataset(dataset.schema, list(dataset.records))
    minority = 0 if counts[0] < counts[1] else 1
    n_new = abs(counts[1] - counts[0])
    X = dataset.X
    y = dataset.y
    midx = np.flatnonzero(y == minority)
    m = len(midx)
    if m < 2:
        raise ResamplingError(f"SMOTE needs at least 2 minority rows, found {m}")
    k = min(k, m - 1)
    if k < 1:
        raise ResamplingError("SMOTE needs k >= 1")
    schema = dataset.schema
    cat = schema.categorical_mask
    stats = fit_normalization(dataset, source="smote-distance")
    Z = apply_normalization(X[midx], stats)[:, ~cat]
    nn = minority_neighbors(Z, k)

    rng = rng_for(seed, "smote")
    base = rng.integers(0, m, size=n_new)
    pick = rng.integers(0, k, size=n_new)
    u = rng.random(n_new)
    Xm = X[midx]
    a = Xm[base]
    b = Xm[nn[base, pick]]
    new = a + u[:, None] * (b - a)
    for j, feat in enumerate(schema.features):
        if feat.kind == CATEGORICAL:
            new[:, j] = _round_to_codes(new[:, j], feat.codes)
    synth = [
        PatientRecord(f"smote-{i:06d}", tuple(float(v) for v in row), minority, True)
        for i, row in enumerate(new)
    ]
    return Dataset(schema, list(dataset.records) + synth)


# ---------------------------------------------------------------- synthetic cohorts

# (mean, sd) on clinical scales; used only to make synthetic rows look plausible
LAB_SCALES = {
    "bicarbonate": (24.0, 4.0),
    "chloride": (104.0, 5.0),
    "creatinine": (1.2, 0.5),
    "glucose": (130.0, 40.0),
    "magnesium": (2.0, 0.3),
    "potassium": (4.2, 0.6),
    "sodium": (139.0, 4.0),
    "urea_nitrogen": (22.0, 10.0),
    "hemoglobin": (11.5, 2.0),
    "platelet_count": (220.0, 80.0),
    "white_blood_cells": (10.0, 4.0),
}
# direction of the linear class shift (AKI raises creatinine and urea, lowers bicarbonate)
LINEAR_SIGNAL = {
    "creatinine": 1.0, "urea_nitrogen": 1.0, "bicarbonate": -1.0,
    "potassium": 0.5, "hemoglobin": -0.5, "chloride": 0.5,
}
XOR_PAIRS = (("glucose", "sodium"), ("magnesium", "platelet_count"))


def class_sizes(n: int, ratio: tuple[int, int]) -> tuple[int, int]:
    """Split ``n`` into (positive, negative) by ``ratio``, rounding toward the majority."""
    a, b = ratio
    if a < 0 or b < 0 or a + b == 0:
        raise DataError(f"invalid class ratio {ratio}")
    exact = Fraction(n * a, a + b)
    pos = math.ceil(exact) if a >= b else math.floor(exact)
    return pos, n - pos


def synth_generate(schema: FeatureSchema, n: int, imbalance_ratio=(1, 1), separation: float = 2.0,
                   seed: int = 0, nonlinear: float | None = None) -> Dataset:
    """Gaussian-mixture cohort with a linear shift plus an XOR label component.

    ``separation`` is the distance between class means along the linear
    signal direction, in latent standard-deviation units. ``nonlinear`` is the
    probability that each XOR feature pair has its sign product tied to the
    label; it defaults to ``tanh(separation)`` so that ``separation=0`` gives
    labels independent of the features. ``imbalance_ratio`` is
    (positive, negative).
    """
    if n < 10:
        raise DataError("synth_generate needs n >= 10")
    if separation < 0:
        raise DataError("separation must be nonnegative")
    q = math.tanh(separation) if nonlinear is None else float(nonlinear)
    if not 0 <= q <= 1:
        raise DataError("nonlinear must lie in [0, 1]")
    rng = rng_for(seed, "synth", schema.variant, n)
    n_pos, n_neg = class_sizes(n, tuple(imbalance_ratio))
    y = np.array([1] * n_pos + [0] * n_neg)
    rng.shuffle(y)
    s = np.where(y == 1, 1.0, -1.0)

    labs = [f for f in LAB_SCALES]
    z = rng.standard_normal((n, len(labs)))
    direction = np.array([LINEAR_SIGNAL.get(name, 0.0) for name in labs])
    direction /= np.linalg.norm(direction)
    z += 0.5 * separation * s[:, None] * direction[None, :]
    col = {name: i for i, name in enumerate(labs)}
    for pa, pb in XOR_PAIRS:
        tie = rng.random(n) < q
        za, zb = z[:, col[pa]], z[:, col[pb]]
        flip = tie & (np.sign(za) * np.sign(zb) != s)
        zb[flip] = -zb[flip]

    gender = (rng.random(n) < 0.43).astype(float)
    age = np.clip(np.round(rng.normal(64, 16, n)), 18, 89)
    height = np.round(np.clip(rng.normal(169, 10, n), 135, 210), 1)
    weight = np.round(np.clip(rng.normal(80, 18, n), 35, 250), 1)
    lab_vals = {}
    for name in labs:
        mu, sd = LAB_SCALES[name]
        lab_vals[name] = np.round(np.maximum(mu + sd * z[:, col[name]], 0.05 * mu), 2)

    records = []
    for i in range(n):
        values = []
        for f in schema.features:
            if f.name == "gender":
                values.append(gender[i])
            elif f.name == "age":
                values.append(age[i])
            elif f.name == "weight":
                values.append(weight[i])
            elif f.name == "height":
                values.append(height[i])
            elif f.name == "bmi_group":
                values.append(float(derive_bmi_group(weight[i], height[i])))
            else:
                values.append(lab_vals[f.name][i])
        records.append(PatientRecord(f"P{i:06d}", tuple(float(v) for v in values), int(y[i])))
    return Dataset(schema, records)
