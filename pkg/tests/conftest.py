import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def report_line(request):
    """Record one acceptance verdict line; all lines are echoed in the terminal summary."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def emit(text: str) -> None:
        lines.append(text)
        print(text)

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
