import numpy as np
import pytest

from metagap.store import SplitId, MethodRun, store_from_runs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_store(rows):
    """rows: (dataset, repeat, fold, method, subtype, val, test)"""
    return store_from_runs(MethodRun(d, SplitId(r, f), m, s, v, t) for d, r, f, m, s, v, t in rows)


def random_store(gen, n_datasets=4, methods=("a1", "a2", "b1", "b2", "c1"), n_splits=3, drop=0.1):
    rows = []
    for d in range(n_datasets):
        for k in range(n_splits):
            for m in methods:
                for sub in ("default", "tuned"):
                    if gen.random() < drop:
                        continue
                    rows.append((f"d{d}", k, 0, m, sub, float(gen.random()), float(gen.random())))
    return make_store(rows)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
