import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mixrrm.dataset import ChoiceDataset, ChoiceSituation, IndividualBlock


def make_situation(sid, alternatives):
    """alternatives: list of (alt_id, attribute list, chosen flag)."""
    return ChoiceSituation(
        sid,
        tuple((a, np.asarray(x, dtype=float), bool(c)) for a, x, c in alternatives),
    )


def make_dataset(individuals, attr_names):
    """individuals: dict id -> dict sid -> list of (alt, attrs, chosen)."""
    blocks = []
    labels = set()
    for ind_id in sorted(individuals):
        sits = []
        for sid in sorted(individuals[ind_id]):
            sit = make_situation(sid, individuals[ind_id][sid])
            labels.update(a for a, _, _ in sit.alternatives)
            sits.append(sit)
        blocks.append(IndividualBlock(ind_id, tuple(sits)))
    return ChoiceDataset(tuple(blocks), tuple(attr_names), tuple(sorted(labels)))


def random_dataset(rng, n_individuals=3, n_situations=2, n_alternatives=3,
                   n_attrs=2, scale=1.0):
    """Small random panel; choices drawn uniformly (labels only matter)."""
    individuals = {}
    for n in range(1, n_individuals + 1):
        sits = {}
        for s in range(1, n_situations + 1):
            chosen = int(rng.integers(n_alternatives))
            sits[s] = [
                (j + 1, (scale * rng.normal(size=n_attrs)).tolist(), j == chosen)
                for j in range(n_alternatives)
            ]
        individuals[n] = sits
    return make_dataset(
        individuals, [f"x{m}" for m in range(n_attrs)]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_runtest_logreport(report):
    """One visible PASS/FAIL line per release criterion, capture or not."""
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    from test_acceptance import CRITERIA

    test_name = report.nodeid.split("::")[-1].split("[")[0]
    name = CRITERIA.get(test_name)
    if name:
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {name}: {outcome}", flush=True)
