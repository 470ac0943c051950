import pytest

from lsslab.harness.config import TrainConfig
from lsslab.harness.synth import make_corpus


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Ten 32x32 phantoms with masks, reports and a manifest."""
    return make_corpus(tmp_path_factory.mktemp("corpus"), 10, seed=1, size=32)


@pytest.fixture
def small_cfg():
    return TrainConfig(image_size=32, max_epochs=3, patience=2, seed=5)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; the lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
