import pytest
from hypothesis import HealthCheck, settings

from eogym.harness.fixtures import FixtureSpec, gen_fixtures
from eogym.harness.runner import load_environment

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Acceptance lines collected during the session and echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixtures")
    gen_fixtures(FixtureSpec(), out)
    return out


@pytest.fixture(scope="session")
def env(fixture_dir):
    return load_environment(fixture_dir)


@pytest.fixture(scope="session")
def tasks(env):
    return list(env.tasks.values())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
