import pytest

from intensity_lab.metrics import build_level_table, read_counts_csv
from intensity_lab.objects import default_object_spec
from intensity_lab.replay import data_path


@pytest.fixture(scope="session")
def spec():
    return default_object_spec()


@pytest.fixture(scope="session")
def inc_counts():
    return read_counts_csv(data_path("table1_g4.csv"))


@pytest.fixture(scope="session")
def dec_counts():
    return read_counts_csv(data_path("table2_g5.csv"))


@pytest.fixture(scope="session")
def inc_table(inc_counts):
    return build_level_table(inc_counts)


@pytest.fixture(scope="session")
def dec_table(dec_counts):
    return build_level_table(dec_counts)
