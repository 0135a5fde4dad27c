import csv
import os
from pathlib import Path

import numpy as np
import pytest

TOPICS = [
    "stocks shares market profit investors bank earnings trade economy prices rally".split(),
    "team match season coach player win league goal championship score cup".split(),
    "software chip computer internet phone users data device launch network app".split(),
    "storm minister election war police government president troops vote flood rebels".split(),
]
FILLER = "the a of to in on for with said new after over by at from as its".split()


def synthetic_rows(n_per_class: int, seed: int = 0, n_classes: int = 4) -> list[tuple[str, int]]:
    """Topical texts: each class draws most of its words from its own list."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_per_class * n_classes):
        label = i % n_classes
        words = []
        for _ in range(int(rng.integers(6, 24))):
            pool = TOPICS[label] if rng.random() < 0.55 else FILLER + TOPICS[int(rng.integers(n_classes))]
            words.append(pool[int(rng.integers(len(pool)))])
        rows.append((" ".join(words), label))
    order = rng.permutation(len(rows))
    return [rows[i] for i in order]


def write_ag_news_csv(path, rows) -> None:
    """Write rows in the AG News layout: "label(1-based)","title","description"."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_ALL)
        for text, label in rows:
            words = text.split()
            w.writerow([label + 1, " ".join(words[:3]), " ".join(words[3:])])


DATASET_ENV = {"ag_news": "WAVENET_AG_NEWS", "imdb": "WAVENET_IMDB"}
DATASET_DEFAULT = {"ag_news": "data/ag_news_csv", "imdb": "data/imdb_csv"}


def dataset_dir(name: str) -> Path:
    """Directory holding train.csv/test.csv for a public dataset (may not exist)."""
    root = Path(__file__).resolve().parent.parent
    return Path(os.environ.get(DATASET_ENV[name], root / DATASET_DEFAULT[name]))


def have_dataset(name: str) -> bool:
    d = dataset_dir(name)
    return (d / "train.csv").is_file() and (d / "test.csv").is_file()


@pytest.fixture
def toy_rows():
    return [
        ("the stocks rallied today", 0),
        ("team wins the final match", 1),
        ("new phone chip released", 2),
        ("storm hits the coast", 3),
        ("markets fell on rate fears", 0),
        ("coach fired after loss", 1),
        ("software update fixes bug", 2),
        ("floods displace thousands", 3),
    ]


@pytest.fixture
def synthetic_dir(tmp_path):
    d = tmp_path / "synth"
    d.mkdir()
    write_ag_news_csv(d / "train.csv", synthetic_rows(60, seed=1))
    write_ag_news_csv(d / "test.csv", synthetic_rows(25, seed=2))
    return d


# -- acceptance summary: one line per criterion --------------------------------

_criteria: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _criteria.append((name, report.outcome.upper()))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _criteria:
        label = {"PASSED": "PASS", "FAILED": "FAIL", "SKIPPED": "SKIP"}.get(outcome, outcome)
        terminalreporter.write_line(f"[{label}] {name}")
