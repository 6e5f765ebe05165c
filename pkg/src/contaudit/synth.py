"""Synthetic city-payment data for demos and tests.

Generates departments with department-specific, strongly correlated
vendor/account/doc-type patterns; two high-index departments draw their
attributes independently from wide flat pools, making them intrinsically
hard to reconstruct. Every categorical column also gets three planted
near-singleton rare values. Real payment extracts are not shipped with the
package; this generator stands in for them at desk scale.
"""

import csv
from pathlib import Path

import numpy as np

from contaudit.ingest import CsvDialect, SchemaConfig
from contaudit.seeding import derived_rng

COLUMNS = ["department", "vendor", "account", "doc_type", "channel", "amount"]

SHARED_VENDORS = ["SHARED_FLEET", "SHARED_IT", "SHARED_SUPPLY"]
ACCOUNTS = [f"A{i:02d}" for i in range(12)]
DOC_TYPES = [f"DT{i}" for i in range(6)]
CHANNELS = ["ACH", "CHECK", "WIRE"]

RARE_VENDORS = ["RARE_VENDOR_A", "RARE_VENDOR_B", "RARE_VENDOR_C"]
RARE_ACCOUNTS = ["A_ESCHEAT", "A_SUSPENSE", "A_WRITEOFF"]
RARE_DOC_TYPES = ["DT_MANUAL", "DT_REVERSAL", "DT_VOID"]
RARE_CHANNELS = ["BARTER", "CASH", "SCRIP"]

RARE_PLANTS = 4  # occurrences of each rare value planted into the whole file
HARD_DEPARTMENTS = (8, 9)  # draw attributes independently from flat pools


def payment_schema() -> SchemaConfig:
    return SchemaConfig(
        categorical_columns=["department", "vendor", "account", "doc_type", "channel"],
        numerical_columns=["amount"],
        department_column="department",
        dialect=CsvDialect(),
    )


def _department_profile(k: int):
    hard = k in HARD_DEPARTMENTS
    vendors = [f"V{k:02d}_{j}" for j in range(3 + k)]
    accounts = [ACCOUNTS[(3 * k + j) % 12] for j in range(2 + k // 2)]
    mu = 3.0 + 0.35 * k
    sigma = 0.9 if hard else 0.25 + 0.05 * k
    return hard, vendors, accounts, mu, sigma


def _make_row(rng, k, dept, hard, vendors, accounts, mu, sigma):
    if hard:
        # independent flat draws: no structure for a model to compress
        vendor = vendors[int(rng.integers(len(vendors)))]
        account = ACCOUNTS[int(rng.integers(len(ACCOUNTS)))]
        doc_type = DOC_TYPES[int(rng.integers(len(DOC_TYPES)))]
        channel = CHANNELS[int(rng.integers(len(CHANNELS)))]
    else:
        v_idx = int(rng.integers(len(vendors)))
        if rng.uniform() < 0.06:
            vendor = SHARED_VENDORS[int(rng.integers(len(SHARED_VENDORS)))]
        else:
            vendor = vendors[v_idx]
        # vendor pins account and document type, with light noise
        if rng.uniform() < 0.1:
            account = accounts[int(rng.integers(len(accounts)))]
        else:
            account = accounts[v_idx % len(accounts)]
        if rng.uniform() < 0.15:
            doc_type = DOC_TYPES[int(rng.integers(len(DOC_TYPES)))]
        else:
            doc_type = DOC_TYPES[(k + v_idx) % len(DOC_TYPES)]
        channel = CHANNELS[rng.choice(3, p=[0.7, 0.25, 0.05])]
    amount = round(float(rng.lognormal(mu, sigma)), 2)
    return [dept, vendor, account, doc_type, channel, amount]


def generate_rows(seed: int, n_departments: int = 10, rows_per_department: int = 2000):
    """Return shuffled [department, vendor, account, doc_type, channel, amount] rows.

    Adds two under-sized extra departments so top-department selection has
    something to drop, and plants each rare value into a few rows.
    """
    rng = derived_rng(seed)
    sizes = [
        (f"D{k:02d}", rows_per_department + int(rng.integers(-rows_per_department // 5,
                                                             rows_per_department // 5)))
        for k in range(n_departments)
    ]
    sizes += [("TINY_X", 30), ("TINY_Y", 25)]
    rows = []
    for k, (dept, size) in enumerate(sizes):
        hard, vendors, accounts, mu, sigma = _department_profile(k)
        for _ in range(size):
            rows.append(_make_row(rng, k, dept, hard, vendors, accounts, mu, sigma))

    # plant near-singleton rare values so every column's three rarest values
    # are genuinely anomalous
    rare_edits = [(1, v) for v in RARE_VENDORS]
    rare_edits += [(2, v) for v in RARE_ACCOUNTS]
    rare_edits += [(3, v) for v in RARE_DOC_TYPES]
    rare_edits += [(4, v) for v in RARE_CHANNELS]
    for column, value in rare_edits:
        for i in rng.choice(len(rows), size=RARE_PLANTS, replace=False):
            rows[i][column] = value

    order = rng.permutation(len(rows))
    return [rows[i] for i in order]


def generate_payments_csv(
    path: str | Path, seed: int = 0, n_departments: int = 10, rows_per_department: int = 2000
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        writer.writerows(generate_rows(seed, n_departments, rows_per_department))
    return path
