"""Experience streams and the two audit scenarios.

A stream splits an encoded dataset into M disjoint experiences, the last
one being the in-scope audit period. The discontinued-operations scenario
decays one target department across the stream (linear, exponential or
instant); the anomalous-postings scenario appends labeled global anomalies
(rare marginal values, extreme amounts) and local anomalies (common values
in a joint combination absent from the source data) to the final
experience.
"""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from contaudit.errors import InputError
from contaudit.ingest import EncodedDataset
from contaudit.seeding import derived_rng

log = logging.getLogger(__name__)

NORMAL = 0
GLOBAL_ANOMALY = 1
LOCAL_ANOMALY = 2
LABEL_NAMES = {NORMAL: "normal", GLOBAL_ANOMALY: "global_anomaly", LOCAL_ANOMALY: "local_anomaly"}

SCHEDULE_KINDS = ("none", "linear", "exponential", "instant")

# seed derivation tags, recorded implicitly through ExperienceStream.seeds
_DECAY_TAG = 101
_GLOBAL_TAG = 102
_LOCAL_TAG = 103


@dataclass(frozen=True)
class DecaySchedule:
    """Retention weight w(i) in [0, 1], non-increasing, w(1) = 1."""

    kind: str = "none"
    gamma: float = 0.5  # exponential decay factor
    cutoff: int | None = None  # instant: first experience index with zero rows

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise InputError(f"unknown decay kind {self.kind!r}; choose from {SCHEDULE_KINDS}")
        if self.kind == "exponential" and not 0.0 < self.gamma < 1.0:
            raise InputError("exponential decay factor must lie in (0, 1)")

    def weight(self, index: int, total: int) -> float:
        if self.kind == "none":
            return 1.0
        if self.kind == "linear":
            return (total - index) / (total - 1)
        if self.kind == "exponential":
            return self.gamma ** (index - 1)
        cutoff = self.cutoff if self.cutoff is not None else math.ceil(total / 2)
        return 1.0 if index < cutoff else 0.0

    def to_json(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma, "cutoff": self.cutoff}

    @classmethod
    def from_json(cls, raw: dict) -> "DecaySchedule":
        return cls(
            kind=raw.get("kind", "none"),
            gamma=raw.get("gamma", 0.5),
            cutoff=raw.get("cutoff"),
        )


@dataclass
class Experience:
    """One chunk of the stream; anomalies only ever live in the final one."""

    index: int  # 1-based
    rows: np.ndarray
    department_index: np.ndarray
    anomaly_label: np.ndarray  # int8, values in LABEL_NAMES
    shadow_rows: np.ndarray | None = None  # decay-removed target rows, eval-only
    shadow_department: int | None = None

    def __post_init__(self):
        if len(self.anomaly_label) != len(self.rows) or len(self.department_index) != len(self.rows):
            raise InputError("label and department vectors must match the row count")

    @property
    def n(self) -> int:
        return len(self.rows)

    def normal_mask(self) -> np.ndarray:
        return self.anomaly_label == NORMAL


@dataclass
class ExperienceStream:
    experiences: list[Experience]
    departments: list[str]
    d: int
    target_department: int | None = None
    schedule: DecaySchedule | None = None
    seeds: dict[str, int] = field(default_factory=dict)
    source: EncodedDataset | None = None  # needed for anomaly injection

    @property
    def m(self) -> int:
        return len(self.experiences)

    @property
    def final(self) -> Experience:
        return self.experiences[-1]

    def department_id(self, department: int | str) -> int:
        if isinstance(department, str):
            try:
                return self.departments.index(department)
            except ValueError:
                raise InputError(f"unknown department {department!r}")
        if not 0 <= department < len(self.departments):
            raise InputError(f"department id {department} out of range")
        return department


def build_stream(
    dataset: EncodedDataset,
    m: int = 10,
    rho_range: tuple[float, float] = (0.9, 1.0),
    seed: int = 0,
) -> ExperienceStream:
    """Split the dataset into m disjoint experiences.

    For each experience and department, a fraction rho ~ U(rho_range) of
    the department's per-experience share (its row count / m) is drawn
    without replacement from the department's remaining pool.
    """
    if m < 2:
        raise InputError("a stream needs at least 2 experiences")
    lo, hi = rho_range
    if not (0.0 < lo <= hi <= 1.0):
        raise InputError("rho_range must satisfy 0 < lo <= hi <= 1")
    rng = derived_rng(seed)
    pools = {}
    cursors = {}
    for dept_id in range(len(dataset.departments)):
        idx = np.flatnonzero(dataset.department_index == dept_id)
        pools[dept_id] = idx[rng.permutation(len(idx))]
        cursors[dept_id] = 0

    experiences = []
    for i in range(1, m + 1):
        taken = []
        for dept_id in range(len(dataset.departments)):
            pool = pools[dept_id]
            share = len(pool) / m
            rho = rng.uniform(lo, hi)
            count = int(math.floor(rho * share))
            cur = cursors[dept_id]
            if cur + count <= len(pool):
                chosen = pool[cur : cur + count]
                cursors[dept_id] = cur + count
            else:
                log.warning(
                    "department %s pool exhausted at experience %d; sampling with replacement",
                    dataset.departments[dept_id], i,
                )
                chosen = rng.choice(pool, size=count, replace=True)
            taken.append(chosen)
        idx = np.concatenate(taken) if taken else np.empty(0, dtype=int)
        experiences.append(
            Experience(
                index=i,
                rows=dataset.rows[idx].copy(),
                department_index=dataset.department_index[idx].copy(),
                anomaly_label=np.zeros(len(idx), dtype=np.int8),
            )
        )
    return ExperienceStream(
        experiences=experiences,
        departments=list(dataset.departments),
        d=dataset.d,
        seeds={"stream": seed},
        source=dataset,
    )


def apply_decay(
    stream: ExperienceStream,
    target: int | str,
    schedule: DecaySchedule,
    seed: int | None = None,
) -> ExperienceStream:
    """Subsample the target department per experience according to the schedule.

    Experience i keeps floor(w(i) * c_i) of the target's c_i rows; the
    removed rows are kept aside as a shadow evaluation set so the target
    can still be scored when a schedule reaches zero. Other departments
    are untouched.
    """
    target_id = stream.department_id(target)
    if schedule.kind == "none":
        return replace(stream, target_department=target_id, schedule=schedule)
    if seed is None:
        seed = stream.seeds.get("stream", 0)
    rng = derived_rng(seed, _DECAY_TAG)
    experiences = []
    for exp in stream.experiences:
        mask = exp.department_index == target_id
        count = int(mask.sum())
        keep = int(math.floor(schedule.weight(exp.index, stream.m) * count))
        if keep >= count:
            experiences.append(exp)
            continue
        target_pos = np.flatnonzero(mask)
        kept = rng.permutation(count)[:keep]
        kept_pos = np.sort(target_pos[kept])
        removed_pos = np.setdiff1d(target_pos, kept_pos)
        select = np.ones(exp.n, dtype=bool)
        select[removed_pos] = False
        experiences.append(
            Experience(
                index=exp.index,
                rows=exp.rows[select],
                department_index=exp.department_index[select],
                anomaly_label=exp.anomaly_label[select],
                shadow_rows=exp.rows[removed_pos].copy(),
                shadow_department=target_id,
            )
        )
    seeds = dict(stream.seeds)
    seeds["decay"] = seed
    return ExperienceStream(
        experiences=experiences,
        departments=stream.departments,
        d=stream.d,
        target_department=target_id,
        schedule=schedule,
        seeds=seeds,
        source=stream.source,
    )


def _require_source(stream: ExperienceStream) -> EncodedDataset:
    if stream.source is None:
        raise InputError("stream has no source dataset attached; inject before saving")
    return stream.source


def _categorical_slices(dataset: EncodedDataset) -> list[tuple[str, int, int]]:
    return [(col, start, stop) for col, start, stop in dataset.group_slices()
            if col not in dataset.minmax]


def _numerical_slices(dataset: EncodedDataset) -> list[tuple[str, int]]:
    return [(col, start) for col, start, stop in dataset.group_slices()
            if col in dataset.minmax]


def _value_counts(dataset: EncodedDataset, start: int, stop: int) -> np.ndarray:
    return dataset.rows[:, start:stop].sum(axis=0)


def _append_to_final(stream: ExperienceStream, rows, depts, labels) -> ExperienceStream:
    final = stream.final
    new_final = Experience(
        index=final.index,
        rows=np.vstack([final.rows] + rows),
        department_index=np.concatenate([final.department_index, np.asarray(depts, dtype=np.int32)]),
        anomaly_label=np.concatenate([final.anomaly_label, np.asarray(labels, dtype=np.int8)]),
        shadow_rows=final.shadow_rows,
        shadow_department=final.shadow_department,
    )
    return replace(stream, experiences=stream.experiences[:-1] + [new_final])


def inject_global_anomalies(
    stream: ExperienceStream, alpha2: int = 10, seed: int = 0, n_perturb: int = 2
) -> ExperienceStream:
    """Append alpha2 global anomalies to the final experience.

    Each anomaly copies a random normal row, re-assigns n_perturb
    categorical columns to one of that column's three rarest values
    (population frequency over the source dataset) and forces numerical
    columns to an extreme quantile (q0.001 or q0.999).
    """
    if alpha2 < 1:
        raise InputError("alpha2 must be >= 1")
    dataset = _require_source(stream)
    rng = derived_rng(seed, _GLOBAL_TAG)
    cat_slices = _categorical_slices(dataset)
    if n_perturb > len(cat_slices):
        log.warning(
            "only %d categorical columns available; perturbing all of them", len(cat_slices)
        )
        n_perturb = len(cat_slices)
    rare_choices = {}
    for col, start, stop in cat_slices:
        counts = _value_counts(dataset, start, stop)
        order = np.lexsort((np.arange(len(counts)), counts))  # count asc, value index asc
        rare_choices[col] = order[: min(3, len(order))]
    quantiles = {
        col: (float(np.quantile(dataset.rows[:, pos], 0.001)),
              float(np.quantile(dataset.rows[:, pos], 0.999)))
        for col, pos in _numerical_slices(dataset)
    }
    final = stream.final
    normal_pos = np.flatnonzero(final.normal_mask())
    if len(normal_pos) == 0:
        raise InputError("final experience has no normal rows to perturb")

    rows, depts = [], []
    for _ in range(alpha2):
        base_pos = int(rng.choice(normal_pos))
        row = final.rows[base_pos].copy()
        chosen = rng.choice(len(cat_slices), size=n_perturb, replace=False)
        for ci in chosen:
            col, start, stop = cat_slices[ci]
            value = int(rng.choice(rare_choices[col]))
            row[start:stop] = 0.0
            row[start + value] = 1.0
        for col, pos in _numerical_slices(dataset):
            lo_q, hi_q = quantiles[col]
            row[pos] = lo_q if rng.uniform() < 0.5 else hi_q
        rows.append(row)
        depts.append(final.department_index[base_pos])
    out = _append_to_final(stream, [np.vstack(rows)], depts, [GLOBAL_ANOMALY] * alpha2)
    out.seeds = dict(out.seeds)
    out.seeds["global_anomalies"] = seed
    return out


def inject_local_anomalies(
    stream: ExperienceStream,
    alpha1: int = 10,
    seed: int = 0,
    top_k: int = 5,
    max_tries: int = 1000,
) -> ExperienceStream:
    """Append alpha1 local anomalies to the final experience.

    Each anomaly combines per-column COMMON values (top-5 by population
    frequency) into a joint combination that never occurs in the source
    dataset (rejection sampling, relaxed to the least frequent combination
    found after max_tries); numerical values are drawn uniformly from the
    interquartile range.
    """
    if alpha1 < 1:
        raise InputError("alpha1 must be >= 1")
    dataset = _require_source(stream)
    rng = derived_rng(seed, _LOCAL_TAG)
    cat_slices = _categorical_slices(dataset)
    common_choices = {}
    for col, start, stop in cat_slices:
        counts = _value_counts(dataset, start, stop)
        order = np.lexsort((np.arange(len(counts)), -counts))  # count desc, value index asc
        common_choices[col] = order[: min(top_k, len(order))]

    # joint combination index over the source rows
    combo_matrix = np.stack(
        [np.argmax(dataset.rows[:, start:stop], axis=1) for _, start, stop in cat_slices],
        axis=1,
    )
    combo_counts = Counter(map(tuple, combo_matrix))

    iqr = {
        col: (float(np.quantile(dataset.rows[:, pos], 0.25)),
              float(np.quantile(dataset.rows[:, pos], 0.75)))
        for col, pos in _numerical_slices(dataset)
    }
    dept_col = dataset.department_column
    dept_col_index = next(
        (i for i, (col, _, _) in enumerate(cat_slices) if col == dept_col), None
    )

    rows, depts = [], []
    for _ in range(alpha1):
        best_combo = None
        best_count = None
        for _try in range(max_tries):
            combo = tuple(int(rng.choice(common_choices[col])) for col, _, _ in cat_slices)
            count = combo_counts.get(combo, 0)
            if best_count is None or count < best_count:
                best_combo, best_count = combo, count
            if count == 0:
                break
        if best_count > 0:
            log.warning(
                "no unseen combination found in %d tries; using one occurring %d time(s)",
                max_tries, best_count,
            )
        row = np.zeros(dataset.d)
        for (col, start, stop), value in zip(cat_slices, best_combo):
            row[start + value] = 1.0
        for col, pos in _numerical_slices(dataset):
            lo_q, hi_q = iqr[col]
            row[pos] = rng.uniform(lo_q, hi_q)
        rows.append(row)
        if dept_col_index is not None:
            dept_value = dataset.vocab.value(dept_col, best_combo[dept_col_index])
            dept_id = (
                dataset.departments.index(dept_value)
                if dept_value in dataset.departments
                else int(rng.integers(len(dataset.departments)))
            )
        else:
            dept_id = int(rng.integers(len(dataset.departments)))
        depts.append(dept_id)
    out = _append_to_final(stream, [np.vstack(rows)], depts, [LOCAL_ANOMALY] * alpha1)
    out.seeds = dict(out.seeds)
    out.seeds["local_anomalies"] = seed
    return out


def save_stream(
    stream: ExperienceStream, out_dir: str | Path, extra_meta: dict | None = None
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    exp_meta = []
    for exp in stream.experiences:
        np.ascontiguousarray(exp.rows, dtype=np.float64).tofile(
            out_dir / f"exp_{exp.index:03d}.f64"
        )
        entry = {
            "index": exp.index,
            "n": exp.n,
            "department_index": exp.department_index.tolist(),
            "anomaly_label": exp.anomaly_label.tolist(),
            "shadow_n": 0,
            "shadow_department": exp.shadow_department,
        }
        if exp.shadow_rows is not None and len(exp.shadow_rows):
            np.ascontiguousarray(exp.shadow_rows, dtype=np.float64).tofile(
                out_dir / f"exp_{exp.index:03d}_shadow.f64"
            )
            entry["shadow_n"] = len(exp.shadow_rows)
        exp_meta.append(entry)
    meta = {
        "m": stream.m,
        "d": stream.d,
        "departments": stream.departments,
        "target_department": stream.target_department,
        "schedule": stream.schedule.to_json() if stream.schedule else None,
        "seeds": stream.seeds,
        "experiences": exp_meta,
        "meta": extra_meta or {},
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return out_dir


def load_stream(in_dir: str | Path) -> ExperienceStream:
    in_dir = Path(in_dir)
    meta_path = in_dir / "meta.json"
    if not meta_path.exists():
        raise InputError(f"not a stream directory (no meta.json): {in_dir}")
    meta = json.loads(meta_path.read_text())
    d = meta["d"]
    experiences = []
    for entry in meta["experiences"]:
        rows = np.fromfile(in_dir / f"exp_{entry['index']:03d}.f64", dtype=np.float64)
        rows = rows.reshape(entry["n"], d)
        shadow = None
        if entry["shadow_n"]:
            shadow = np.fromfile(
                in_dir / f"exp_{entry['index']:03d}_shadow.f64", dtype=np.float64
            ).reshape(entry["shadow_n"], d)
        experiences.append(
            Experience(
                index=entry["index"],
                rows=rows,
                department_index=np.asarray(entry["department_index"], dtype=np.int32),
                anomaly_label=np.asarray(entry["anomaly_label"], dtype=np.int8),
                shadow_rows=shadow,
                shadow_department=entry["shadow_department"],
            )
        )
    return ExperienceStream(
        experiences=experiences,
        departments=meta["departments"],
        d=d,
        target_department=meta["target_department"],
        schedule=DecaySchedule.from_json(meta["schedule"]) if meta["schedule"] else None,
        seeds=meta["seeds"],
        source=None,
    )
