from pathlib import Path

import pytest

from artdiff.schedule import linear_schedule

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def default_schedule():
    return linear_schedule()


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR
