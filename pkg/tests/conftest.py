import csv
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from edgemark.dataset import load_dataset


@pytest.fixture
def make_dataset_csv(tmp_path):
    """Factory writing a dataset CSV and returning its path."""

    counter = {"n": 0}

    def _make(rows, name=None):
        counter["n"] += 1
        path = tmp_path / (name or f"dataset{counter['n']}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "text", "label"])
            writer.writerows(rows)
        return path

    return _make


@pytest.fixture
def small_dataset(make_dataset_csv):
    path = make_dataset_csv(
        [
            ["t1", "great product, love it", "positive"],
            ["t2", "meh, nothing special", "neutral"],
            ["t3", "terrible support!!!", "negative"],
            ["t4", "works fine", "positive"],
            ["t5", "not sure yet", "neutral"],
            ["t6", "broke after a day", "negative"],
        ]
    )
    return load_dataset(path, labels=("positive", "neutral", "negative"))
