import pytest

from contaudit.ingest import prepare_dataset
from contaudit.synth import generate_payments_csv, payment_schema


@pytest.fixture(scope="session")
def synth_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "payments.csv"
    generate_payments_csv(path, seed=20, n_departments=10, rows_per_department=600)
    return path


@pytest.fixture(scope="session")
def small_dataset(synth_csv):
    """Encoded synthetic dataset shared by fast tests (tau=10, eta=300)."""
    return prepare_dataset(synth_csv, payment_schema(), tau=10, eta=300, seed=7)
