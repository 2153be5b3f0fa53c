import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from homecast.features import cluster_checkins, extract_dataset, group_by_user, label_homes  # noqa: E402
from homecast.synthetic import GeneratorConfig, generate  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def build_dataset(cfg: GeneratorConfig):
    checkins, truth = generate(cfg)
    labels = cluster_checkins(checkins)
    homes = label_homes(group_by_user(checkins, labels), truth)
    return checkins, truth, labels, extract_dataset(checkins, labels, homes)


@pytest.fixture(scope="session")
def small_world():
    """60 users over 60 days: enough structure for pipeline tests, fast to build."""
    return build_dataset(GeneratorConfig(n_users=60, days=60, seed=7))


@pytest.fixture(scope="session")
def small_dataset(small_world):
    return small_world[3]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
