"""Ingestion and preprocessing of the three educational datasets.

Each loader reads the raw distribution files, drops rows with missing
values, encodes features into [0,1] (binary 0/1, ordinals equally spaced,
categoricals one-hot, numerics min-max), binarizes the label, and registers
the sensitive attributes. Loaders are deterministic: the same file always
yields a bit-identical dataset.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError

MISSING = {"", "?", "na", "n/a"}

CACHE_MAGIC = b"FFDS"
CACHE_VERSION = 1


@dataclass(frozen=True)
class TabularDataset:
    features: np.ndarray  # (n, D) float64 in [0, 1]
    labels: np.ndarray  # (n,) int
    feature_names: tuple[str, ...]
    sensitive: dict[str, np.ndarray]  # name -> (n,) values in {0, 1}
    num_classes: int

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        sens = {}
        for name, vals in self.sensitive.items():
            arr = np.ascontiguousarray(vals, dtype=np.int8)
            if arr.shape != (feats.shape[0],):
                raise ConfigurationError(f"sensitive attribute {name!r} has wrong length")
            if not np.isin(arr, (0, 1)).all():
                raise ConfigurationError(f"sensitive attribute {name!r} has values outside {{0,1}}")
            arr.setflags(write=False)
            sens[name] = arr
        object.__setattr__(self, "sensitive", sens)
        if feats.shape[1] != len(self.feature_names):
            raise ConfigurationError("feature_names length does not match feature matrix")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ConfigurationError("labels outside [0, num_classes)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GroupPartition:
    attribute: str
    s1_indices: np.ndarray  # attribute value 0
    s2_indices: np.ndarray  # attribute value 1
    degenerate: bool

    @property
    def n1(self) -> int:
        return self.s1_indices.size

    @property
    def n2(self) -> int:
        return self.s2_indices.size


@dataclass(frozen=True)
class SplitSpec:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int
    train_fraction: float


def normalize_columns(features: np.ndarray) -> np.ndarray:
    """Min-max map each column into [0,1]; constant columns become 0. Idempotent."""
    feats = np.array(features, dtype=np.float64)
    lo = feats.min(axis=0)
    hi = feats.max(axis=0)
    span = hi - lo
    const = span == 0
    span[const] = 1.0
    out = (feats - lo) / span
    out[:, const] = 0.0
    return out


def partition_by_sensitive(ds: TabularDataset, attribute: str) -> GroupPartition:
    """Split sample indices into the two groups of one sensitive attribute."""
    if attribute not in ds.sensitive:
        raise KeyError(
            f"unknown sensitive attribute {attribute!r}; registered: {sorted(ds.sensitive)}"
        )
    vals = ds.sensitive[attribute]
    s1 = np.flatnonzero(vals == 0)
    s2 = np.flatnonzero(vals == 1)
    return GroupPartition(attribute, s1, s2, degenerate=(s1.size == 0 or s2.size == 0))


def split(ds: TabularDataset, fraction: float, seed: int) -> SplitSpec:
    """Deterministic stratified-by-label shuffled split."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"train fraction must be in (0,1), got {fraction}")
    rng = np.random.default_rng(seed)
    target_train = int(round(ds.n * fraction))
    per_class = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        rng.shuffle(idx)
        per_class.append(idx)
    base = [int(np.floor(idx.size * fraction)) for idx in per_class]
    remainders = [idx.size * fraction - b for idx, b in zip(per_class, base)]
    short = target_train - sum(base)
    for c in sorted(range(ds.num_classes), key=lambda c: -remainders[c])[: max(short, 0)]:
        base[c] += 1
    train = np.concatenate([idx[:k] for idx, k in zip(per_class, base)])
    test = np.concatenate([idx[k:] for idx, k in zip(per_class, base)])
    return SplitSpec(np.sort(train), np.sort(test), seed=seed, train_fraction=fraction)


# ---------------------------------------------------------------------------
# column encoding machinery shared by the three loaders

def _clean(value: str) -> str:
    return value.strip().strip('"')


def _is_missing(value: str) -> bool:
    return _clean(value).lower() in MISSING


def _read_rows(path: Path, delimiter: str = ",") -> list[tuple[int, dict]]:
    """All rows of a delimited file as (line_number, dict), dropping none."""
    if not path.is_file():
        raise IngestionError(f"missing raw file: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise IngestionError(f"{path}: empty file")
        reader.fieldnames = [_clean(c) for c in reader.fieldnames]
        for row in reader:
            if None in row or any(v is None for v in row.values()):
                raise IngestionError(f"{path}: malformed row at line {reader.line_num}")
            rows.append((reader.line_num, {k: _clean(v) for k, v in row.items()}))
    return rows


def _float(path: Path, line: int, name: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise IngestionError(
            f"{path}: line {line}: cannot parse {name}={value!r} as a number"
        ) from None


def _encode_columns(
    path: Path,
    rows: list[tuple[int, dict]],
    numeric: list[str],
    binary: dict[str, dict[str, int]],
    onehot: list[str],
) -> tuple[np.ndarray, list[str]]:
    """Assemble the feature matrix: numerics min-maxed, binaries 0/1, one-hots expanded."""
    cols: list[np.ndarray] = []
    names: list[str] = []
    for name in numeric:
        vals = np.array([_float(path, ln, name, r[name]) for ln, r in rows])
        cols.append(vals)
        names.append(name)
    for name, mapping in binary.items():
        vals = np.empty(len(rows))
        for i, (ln, r) in enumerate(rows):
            if r[name] not in mapping:
                raise IngestionError(
                    f"{path}: line {ln}: unexpected {name}={r[name]!r}; expected {sorted(mapping)}"
                )
            vals[i] = mapping[r[name]]
        cols.append(vals)
        names.append(name)
    for name in onehot:
        levels = sorted({r[name] for _, r in rows})
        for level in levels:
            cols.append(np.array([1.0 if r[name] == level else 0.0 for _, r in rows]))
            names.append(f"{name}={level}")
    matrix = normalize_columns(np.column_stack(cols))
    return matrix, names


# ---------------------------------------------------------------------------
# OULAD

OULAD_INFO_FILE = "studentInfo.csv"
OULAD_VLE_FILE = "studentVle.csv"

_AGE_BANDS = {"0-35": 0.0, "35-55": 1.0, "55<=": 2.0}
_EDUCATION_LEVELS = {
    "No Formal quals": 0.0,
    "Lower Than A Level": 1.0,
    "A Level or Equivalent": 2.0,
    "HE Qualification": 3.0,
    "Post Graduate Qualification": 4.0,
}
# deprivation bands, most deprived first
_IMD_BANDS = ["0-10%", "10-20", "20-30%", "30-40%", "40-50%",
              "50-60%", "60-70%", "70-80%", "80-90%", "90-100%"]
_PASS_RESULTS = {"Pass", "Distinction"}
_FAIL_RESULTS = {"Fail", "Withdrawn"}


def _imd_index(path: Path, line: int, value: str) -> int:
    norm = value.replace("%", "")
    for i, band in enumerate(_IMD_BANDS):
        if band.replace("%", "") == norm:
            return i
    raise IngestionError(f"{path}: line {line}: unexpected imd_band {value!r}")


def load_oulad(raw_dir: str | Path) -> TabularDataset:
    """One row per distinct student from the OULAD distribution tables.

    Joins studentVle onto studentInfo to build the total-clicks feature,
    drops rows with missing values, keeps each student's first enrollment,
    and binarizes the deprivation band into a poverty flag at the median
    band. Sensitive attributes: gender, poverty, disability.
    """
    raw_dir = Path(raw_dir)
    info_path = raw_dir / OULAD_INFO_FILE
    vle_path = raw_dir / OULAD_VLE_FILE

    clicks: dict[tuple[str, str, str], float] = {}
    for ln, row in _read_rows(vle_path):
        key = (row["code_module"], row["code_presentation"], row["id_student"])
        clicks[key] = clicks.get(key, 0.0) + _float(vle_path, ln, "sum_click", row["sum_click"])

    kept: list[tuple[int, dict]] = []
    seen: set[str] = set()
    for ln, row in _read_rows(info_path):
        if any(_is_missing(v) for v in row.values()):
            continue
        sid = row["id_student"]
        if sid in seen:
            continue
        seen.add(sid)
        kept.append((ln, row))
    if not kept:
        raise IngestionError(f"{info_path}: no usable rows after dropping missing values")

    n = len(kept)
    gender = np.empty(n)
    age = np.empty(n)
    disability = np.empty(n)
    education = np.empty(n)
    imd = np.empty(n, dtype=np.int64)
    prev_attempts = np.empty(n)
    credits = np.empty(n)
    sum_click = np.empty(n)
    labels = np.empty(n, dtype=np.int64)
    for i, (ln, row) in enumerate(kept):
        if row["gender"] not in ("F", "M"):
            raise IngestionError(f"{info_path}: line {ln}: unexpected gender {row['gender']!r}")
        gender[i] = 0.0 if row["gender"] == "F" else 1.0
        if row["age_band"] not in _AGE_BANDS:
            raise IngestionError(f"{info_path}: line {ln}: unexpected age_band {row['age_band']!r}")
        age[i] = _AGE_BANDS[row["age_band"]]
        if row["disability"] not in ("N", "Y"):
            raise IngestionError(
                f"{info_path}: line {ln}: unexpected disability {row['disability']!r}"
            )
        disability[i] = 0.0 if row["disability"] == "N" else 1.0
        if row["highest_education"] not in _EDUCATION_LEVELS:
            raise IngestionError(
                f"{info_path}: line {ln}: unexpected highest_education "
                f"{row['highest_education']!r}"
            )
        education[i] = _EDUCATION_LEVELS[row["highest_education"]]
        imd[i] = _imd_index(info_path, ln, row["imd_band"])
        prev_attempts[i] = _float(info_path, ln, "num_of_prev_attempts",
                                  row["num_of_prev_attempts"])
        credits[i] = _float(info_path, ln, "studied_credits", row["studied_credits"])
        key = (row["code_module"], row["code_presentation"], row["id_student"])
        sum_click[i] = clicks.get(key, 0.0)
        result = row["final_result"]
        if result in _PASS_RESULTS:
            labels[i] = 1
        elif result in _FAIL_RESULTS:
            labels[i] = 0
        else:
            raise IngestionError(f"{info_path}: line {ln}: unexpected final_result {result!r}")

    # band below the median deprivation band counts as poverty
    poverty = (imd < np.median(imd)).astype(np.float64)
    raw = np.column_stack(
        [gender, age, disability, education, poverty, prev_attempts, credits, sum_click]
    )
    features = normalize_columns(raw)
    names = ("gender", "age", "disability", "highest_education", "poverty",
             "num_of_prev_attempts", "studied_credits", "sum_click")
    sensitive = {
        "gender": gender.astype(np.int8),
        "poverty": poverty.astype(np.int8),
        "disability": disability.astype(np.int8),
    }
    return TabularDataset(features, labels, names, sensitive, num_classes=2)


# ---------------------------------------------------------------------------
# Student Performance (Portuguese course file)

_SP_NUMERIC = ["age", "Medu", "Fedu", "traveltime", "studytime", "failures",
               "famrel", "freetime", "goout", "Dalc", "Walc", "health",
               "absences", "G1", "G2"]
_SP_BINARY = ["school", "sex", "address", "famsize", "Pstatus", "schoolsup",
              "famsup", "paid", "activities", "nursery", "higher", "internet",
              "romantic"]
_SP_ONEHOT = ["Mjob", "Fjob", "reason", "guardian"]


def load_student_performance(file: str | Path) -> TabularDataset:
    """The Portuguese-course file; label High iff final grade G3 > 10.

    G3 is excluded from the features. Two-valued columns map onto {0,1} in
    sorted value order (so sex: F=0, M=1), multi-valued ones are one-hot.
    """
    path = Path(file)
    rows = [(ln, r) for ln, r in _read_rows(path, delimiter=";")
            if not any(_is_missing(v) for v in r.values())]
    if not rows:
        raise IngestionError(f"{path}: no usable rows after dropping missing values")
    binary = {}
    for name in _SP_BINARY:
        levels = sorted({r[name] for _, r in rows})
        if len(levels) > 2:
            raise IngestionError(f"{path}: column {name} has {len(levels)} levels, expected 2")
        binary[name] = {lv: i for i, lv in enumerate(levels)}
    features, names = _encode_columns(path, rows, _SP_NUMERIC, binary, _SP_ONEHOT)
    labels = np.array(
        [1 if _float(path, ln, "G3", r["G3"]) > 10 else 0 for ln, r in rows], dtype=np.int64
    )
    sex_col = names.index("sex")
    sensitive = {"sex": features[:, sex_col].astype(np.int8)}
    return TabularDataset(features, labels, tuple(names), sensitive, num_classes=2)


# ---------------------------------------------------------------------------
# xAPI-Edu-Data

_XAPI_NUMERIC = ["raisedhands", "VisITedResources", "AnnouncementsView", "Discussion"]
_XAPI_BINARY = ["gender", "Semester", "Relation", "ParentAnsweringSurvey",
                "ParentschoolSatisfaction", "StudentAbsenceDays"]
_XAPI_ONEHOT = ["NationalITy", "PlaceofBirth", "StageID", "GradeID", "SectionID", "Topic"]


def load_xapi(file: str | Path) -> TabularDataset:
    """xAPI-Edu-Data; label 0 for class 'L', 1 for 'M' or 'H'. Sensitive: gender."""
    path = Path(file)
    rows = [(ln, r) for ln, r in _read_rows(path)
            if not any(_is_missing(v) for v in r.values())]
    if not rows:
        raise IngestionError(f"{path}: no usable rows after dropping missing values")
    binary = {}
    for name in _XAPI_BINARY:
        levels = sorted({r[name] for _, r in rows})
        if len(levels) > 2:
            raise IngestionError(f"{path}: column {name} has {len(levels)} levels, expected 2")
        binary[name] = {lv: i for i, lv in enumerate(levels)}
    features, names = _encode_columns(path, rows, _XAPI_NUMERIC, binary, _XAPI_ONEHOT)
    labels = np.empty(len(rows), dtype=np.int64)
    for i, (ln, r) in enumerate(rows):
        cls = r["Class"]
        if cls not in ("L", "M", "H"):
            raise IngestionError(f"{path}: line {ln}: unexpected Class {cls!r}")
        labels[i] = 0 if cls == "L" else 1
    gender_col = names.index("gender")
    sensitive = {"gender": features[:, gender_col].astype(np.int8)}
    return TabularDataset(features, labels, tuple(names), sensitive, num_classes=2)


# ---------------------------------------------------------------------------
# binary cache file
#
# Layout (little-endian):
#   4s  magic "FFDS"
#   u32 version
#   u64 n, u64 D, u64 C
#   D x (u16 length + utf-8 bytes)        feature names
#   n*D f64                               features, row-major
#   n   i32                               labels
#   u32 number of sensitive attributes
#   per attribute: u16 length + utf-8 name, n x u8 group ids

def save_dataset(ds: TabularDataset, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", CACHE_VERSION))
        fh.write(struct.pack("<QQQ", ds.n, ds.d, ds.num_classes))
        for name in ds.feature_names:
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<i4").tobytes())
        fh.write(struct.pack("<I", len(ds.sensitive)))
        for name in sorted(ds.sensitive):
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.ascontiguousarray(ds.sensitive[name], dtype=np.uint8).tobytes())


def load_dataset(path: str | Path) -> TabularDataset:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing dataset cache: {path}")
    with open(path, "rb") as fh:
        if fh.read(4) != CACHE_MAGIC:
            raise IngestionError(f"{path}: not a dataset cache file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CACHE_VERSION:
            raise IngestionError(f"{path}: unsupported cache version {version}")
        n, d, c = struct.unpack("<QQQ", fh.read(24))
        names = []
        for _ in range(d):
            (ln,) = struct.unpack("<H", fh.read(2))
            names.append(fh.read(ln).decode())
        feats = np.frombuffer(fh.read(n * d * 8), dtype="<f8").reshape(n, d).astype(np.float64)
        labels = np.frombuffer(fh.read(n * 4), dtype="<i4").astype(np.int64)
        (n_sens,) = struct.unpack("<I", fh.read(4))
        sensitive = {}
        for _ in range(n_sens):
            (ln,) = struct.unpack("<H", fh.read(2))
            name = fh.read(ln).decode()
            sensitive[name] = np.frombuffer(fh.read(n), dtype=np.uint8).astype(np.int8)
    return TabularDataset(feats, labels, tuple(names), sensitive, num_classes=int(c))


LOADERS = {
    "oulad": lambda p: load_oulad(p),
    "student-performance": lambda p: load_student_performance(p),
    "xapi": lambda p: load_xapi(p),
}


def load_by_name(name: str, path: str | Path) -> TabularDataset:
    if name not in LOADERS:
        raise ConfigurationError(f"unknown dataset {name!r}; expected one of {sorted(LOADERS)}")
    return LOADERS[name](path)


def subsample(ds: TabularDataset, n: int, seed: int) -> TabularDataset:
    """Label-stratified random subset of the dataset (for desk-scale runs)."""
    if n >= ds.n:
        return ds
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        k = int(round(n * idx.size / ds.n))
        rng.shuffle(idx)
        chosen.append(idx[:k])
    keep = np.sort(np.concatenate(chosen))
    return TabularDataset(
        ds.features[keep],
        ds.labels[keep],
        ds.feature_names,
        {name: vals[keep] for name, vals in ds.sensitive.items()},
        ds.num_classes,
    )
