import numpy as np
import pytest
import torch

from scfnet.core import Dataset, Segment


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    torch.set_num_threads(1)


def make_dataset(n_segments=6, n_channels=2, window=4, n_classes=3, n_patients=3, seed=0):
    rng = np.random.default_rng(seed)
    segs = []
    for i in range(n_segments):
        votes = rng.integers(0, 5, size=n_classes)
        votes[rng.integers(n_classes)] += 1
        segs.append(
            Segment(
                id=f"s{i:06d}",
                patient_id=f"p{i % n_patients:03d}",
                data=rng.standard_normal((n_channels, window)).astype(np.float32),
                votes=votes.tolist(),
                channel_names=[f"c{j}" for j in range(n_channels)],
            )
        )
    return Dataset(
        sample_rate_hz=200,
        window_samples=window,
        channel_names=[f"c{j}" for j in range(n_channels)],
        class_names=[f"k{j}" for j in range(n_classes)],
        segments=segs,
    )


@pytest.fixture
def small_dataset():
    return make_dataset()


ACCEPTANCE_LINES = []


def pytest_runtest_makereport(item, call):
    criterion = item.get_closest_marker("criterion")
    if criterion is None or call.when != "call":
        return
    number, title = criterion.args
    status = "PASS" if call.excinfo is None else "FAIL"
    ACCEPTANCE_LINES.append((number, f"[{status}] criterion {number:>2}: {title}"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
