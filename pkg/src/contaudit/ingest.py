"""Load raw payment CSVs and encode them into fixed-width numeric matrices.

Pipeline: load_csv -> select_top_departments -> sample_per_department ->
build_vocab -> encode. Categorical columns become one-hot groups (global
vocabulary, so the encoded width stays constant across a whole experience
stream); numerical columns are min-max scaled into [0, 1] with statistics
frozen over the sampled population.
"""

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from contaudit.errors import InputError
from contaudit.seeding import derived_rng

log = logging.getLogger(__name__)

MISSING = "⟨MISSING⟩"  # sentinel for absent categorical values


@dataclass
class CsvDialect:
    delimiter: str = ","
    quotechar: str = '"'
    has_header: bool = True


@dataclass
class SchemaConfig:
    categorical_columns: list[str]
    numerical_columns: list[str]
    department_column: str
    dialect: CsvDialect = field(default_factory=CsvDialect)

    def __post_init__(self):
        overlap = set(self.categorical_columns) & set(self.numerical_columns)
        if overlap:
            raise InputError(f"columns appear as both categorical and numerical: {sorted(overlap)}")
        if not self.categorical_columns and not self.numerical_columns:
            raise InputError("schema needs at least one column")

    @property
    def columns(self) -> list[str]:
        cols = list(self.categorical_columns) + list(self.numerical_columns)
        if self.department_column not in cols:
            cols.append(self.department_column)
        return cols

    @classmethod
    def from_json(cls, path: str | Path) -> "SchemaConfig":
        path = Path(path)
        if not path.exists():
            raise InputError(f"schema file not found: {path}")
        raw = json.loads(path.read_text())
        dialect = CsvDialect(**raw.get("csv_dialect", {}))
        try:
            return cls(
                categorical_columns=list(raw["categorical_columns"]),
                numerical_columns=list(raw["numerical_columns"]),
                department_column=raw["department_column"],
                dialect=dialect,
            )
        except KeyError as exc:
            raise InputError(f"schema file {path} is missing key {exc}") from exc


@dataclass
class RawPayment:
    categorical: dict[str, str]
    numerical: dict[str, float]
    department: str


def load_csv(path: str | Path, schema: SchemaConfig) -> list[RawPayment]:
    """One RawPayment per well-formed data row; malformed rows are skipped.

    A row is malformed when its field count does not match the header or a
    numerical cell fails to parse. Empty categorical cells become the
    MISSING sentinel.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"CSV file not found: {path}")
    dialect = schema.dialect
    records: list[RawPayment] = []
    malformed = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=dialect.delimiter, quotechar=dialect.quotechar)
        try:
            first = next(reader)
        except StopIteration:
            raise InputError(f"CSV file is empty: {path}")
        if dialect.has_header:
            header = [h.strip() for h in first]
        else:
            header = [f"col{i}" for i in range(len(first))]
        positions = {}
        for col in schema.columns:
            try:
                positions[col] = header.index(col)
            except ValueError:
                raise InputError(f"schema column {col!r} not found in {path}")
        rows = reader if dialect.has_header else _chain_first(first, reader)
        for row in rows:
            if len(row) != len(header):
                malformed += 1
                continue
            categorical = {}
            for col in schema.categorical_columns:
                value = row[positions[col]].strip()
                categorical[col] = value if value else MISSING
            numerical = {}
            bad = False
            for col in schema.numerical_columns:
                cell = row[positions[col]].strip().replace(",", "")
                try:
                    numerical[col] = float(cell)
                except ValueError:
                    bad = True
                    break
            if bad:
                malformed += 1
                continue
            department = row[positions[schema.department_column]].strip() or MISSING
            records.append(RawPayment(categorical, numerical, department))
    log.info("loaded %d records from %s", len(records), path)
    if malformed:
        log.warning("skipped %d malformed rows in %s", malformed, path)
    return records


def _chain_first(first, rest):
    yield first
    yield from rest


def select_top_departments(records: list[RawPayment], tau: int = 10) -> list[str]:
    """The tau departments with the most records, ties broken lexicographically."""
    if not records:
        raise InputError("no records to select departments from")
    counts = Counter(r.department for r in records)
    if len(counts) < tau:
        raise InputError(f"only {len(counts)} distinct departments, need {tau}")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [name for name, _ in ranked[:tau]]


def sample_per_department(
    records: list[RawPayment], departments: list[str], eta: int, seed: int
) -> list[RawPayment]:
    """Exactly eta uniformly sampled records per department, deterministic per seed.

    Departments with fewer than eta records fall back to sampling with
    replacement (logged).
    """
    if eta < 1:
        raise InputError("eta must be >= 1")
    by_dept: dict[str, list[RawPayment]] = defaultdict(list)
    for record in records:
        if record.department in departments:
            by_dept[record.department].append(record)
    rng = derived_rng(seed)
    sampled: list[RawPayment] = []
    for dept in departments:
        pool = by_dept.get(dept, [])
        if not pool:
            raise InputError(f"department {dept!r} has no records")
        if len(pool) >= eta:
            idx = rng.permutation(len(pool))[:eta]
        else:
            log.warning(
                "department %r has %d records < eta=%d; sampling with replacement",
                dept, len(pool), eta,
            )
            idx = rng.integers(0, len(pool), size=eta)
        sampled.extend(pool[i] for i in idx)
    return sampled


@dataclass
class Vocabulary:
    """Per categorical column: lexicographically ordered distinct values."""

    columns: dict[str, list[str]]
    _index: dict[str, dict[str, int]] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {col: {v: i for i, v in enumerate(vals)} for col, vals in self.columns.items()}

    def size(self, column: str) -> int:
        return len(self.columns[column])

    def index(self, column: str, value: str) -> int:
        table = self._index[column]
        if value in table:
            return table[value]
        if MISSING in table:
            return table[MISSING]
        raise InputError(
            f"value {value!r} not in vocabulary for column {column!r} and no sentinel slot"
        )

    def value(self, column: str, index: int) -> str:
        return self.columns[column][index]


def build_vocab(records: list[RawPayment], schema: SchemaConfig) -> Vocabulary:
    """Sorted distinct values per categorical column over all given records."""
    if not records:
        raise InputError("no records to build a vocabulary from")
    seen: dict[str, set[str]] = {col: set() for col in schema.categorical_columns}
    for record in records:
        for col in schema.categorical_columns:
            seen[col].add(record.categorical[col])
    return Vocabulary({col: sorted(values) for col, values in seen.items()})


@dataclass
class EncodedDataset:
    """One-hot + min-max encoded matrix with the statistics that produced it."""

    rows: np.ndarray  # (n, d) float64
    department_index: np.ndarray  # (n,) int32
    departments: list[str]  # department id -> name
    vocab: Vocabulary
    minmax: dict[str, tuple[float, float]]
    categorical_columns: list[str]
    numerical_columns: list[str]
    department_column: str
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def group_slices(self) -> list[tuple[str, int, int]]:
        """(column, start, stop) for each one-hot group, then each numerical column."""
        out = []
        offset = 0
        for col in self.categorical_columns:
            width = self.vocab.size(col)
            out.append((col, offset, offset + width))
            offset += width
        for col in self.numerical_columns:
            out.append((col, offset, offset + 1))
            offset += 1
        return out

    def rows_of_department(self, dept_id: int) -> np.ndarray:
        return self.rows[self.department_index == dept_id]

    def save(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(self.rows, dtype=np.float64).tofile(out_dir / "rows.f64")
        meta = {
            "n": int(self.n),
            "d": int(self.d),
            "departments": self.departments,
            "department_index": self.department_index.tolist(),
            "vocab": self.vocab.columns,
            "minmax": {k: list(v) for k, v in self.minmax.items()},
            "categorical_columns": self.categorical_columns,
            "numerical_columns": self.numerical_columns,
            "department_column": self.department_column,
            "meta": self.meta,
        }
        (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
        return out_dir

    @classmethod
    def load(cls, in_dir: str | Path) -> "EncodedDataset":
        in_dir = Path(in_dir)
        meta_path = in_dir / "meta.json"
        if not meta_path.exists():
            raise InputError(f"not a dataset directory (no meta.json): {in_dir}")
        meta = json.loads(meta_path.read_text())
        rows = np.fromfile(in_dir / "rows.f64", dtype=np.float64).reshape(meta["n"], meta["d"])
        return cls(
            rows=rows,
            department_index=np.asarray(meta["department_index"], dtype=np.int32),
            departments=meta["departments"],
            vocab=Vocabulary({k: list(v) for k, v in meta["vocab"].items()}),
            minmax={k: (v[0], v[1]) for k, v in meta["minmax"].items()},
            categorical_columns=meta["categorical_columns"],
            numerical_columns=meta["numerical_columns"],
            department_column=meta["department_column"],
            meta=meta.get("meta", {}),
        )


def compute_minmax(records: list[RawPayment], numerical_columns: list[str]) -> dict[str, tuple[float, float]]:
    minmax = {}
    for col in numerical_columns:
        values = [r.numerical[col] for r in records]
        minmax[col] = (min(values), max(values))
    return minmax


def encode(
    records: list[RawPayment],
    vocab: Vocabulary,
    minmax_source,
    schema: SchemaConfig,
    meta: dict | None = None,
) -> EncodedDataset:
    """Encode records into the fixed row layout.

    Row layout: one-hot groups in categorical column order, then scaled
    numerical columns. minmax_source is either a record list (statistics
    computed here) or a precomputed {column: (min, max)} dict.
    """
    if not records:
        raise InputError("no records to encode")
    if isinstance(minmax_source, dict):
        minmax = {k: (float(v[0]), float(v[1])) for k, v in minmax_source.items()}
    else:
        minmax = compute_minmax(minmax_source, schema.numerical_columns)
    for col, (lo, hi) in minmax.items():
        if hi == lo:
            log.warning("numerical column %r has max == min; encoding as 0.0", col)

    cat_cols = list(schema.categorical_columns)
    num_cols = list(schema.numerical_columns)
    widths = [vocab.size(c) for c in cat_cols]
    d = sum(widths) + len(num_cols)
    departments = sorted({r.department for r in records})
    dept_ids = {name: i for i, name in enumerate(departments)}

    rows = np.zeros((len(records), d), dtype=np.float64)
    dept_index = np.empty(len(records), dtype=np.int32)
    for i, record in enumerate(records):
        offset = 0
        for col, width in zip(cat_cols, widths):
            rows[i, offset + vocab.index(col, record.categorical[col])] = 1.0
            offset += width
        for col in num_cols:
            lo, hi = minmax[col]
            if hi == lo:
                scaled = 0.0
            else:
                scaled = (record.numerical[col] - lo) / (hi - lo)
            rows[i, offset] = min(max(scaled, 0.0), 1.0)
            offset += 1
        dept_index[i] = dept_ids[record.department]

    return EncodedDataset(
        rows=rows,
        department_index=dept_index,
        departments=departments,
        vocab=vocab,
        minmax=minmax,
        categorical_columns=cat_cols,
        numerical_columns=num_cols,
        department_column=schema.department_column,
        meta=meta or {},
    )


def decode_row(dataset: EncodedDataset, row: np.ndarray) -> tuple[dict[str, str], dict[str, float]]:
    """Invert one encoded row back to categorical values and raw numericals."""
    categorical = {}
    numerical = {}
    for col, start, stop in dataset.group_slices():
        if col in dataset.minmax:
            lo, hi = dataset.minmax[col]
            numerical[col] = row[start] * (hi - lo) + lo
        else:
            categorical[col] = dataset.vocab.value(col, int(np.argmax(row[start:stop])))
    return categorical, numerical


def prepare_dataset(
    csv_path: str | Path,
    schema: SchemaConfig,
    tau: int = 10,
    eta: int = 10_000,
    seed: int = 0,
) -> EncodedDataset:
    """The full preparation chain from a raw CSV to an EncodedDataset."""
    records = load_csv(csv_path, schema)
    departments = select_top_departments(records, tau)
    sampled = sample_per_department(records, departments, eta, seed)
    vocab = build_vocab(sampled, schema)
    dataset = encode(
        sampled,
        vocab,
        sampled,
        schema,
        meta={"tau": tau, "eta": eta, "seed": seed, "source": str(csv_path)},
    )
    log.info(
        "prepared dataset: %d rows, %d departments, encoded width d=%d",
        dataset.n, len(dataset.departments), dataset.d,
    )
    return dataset
