import os
import sys

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """The shipped synthetic dataset, run once through the whole pipeline."""
    from esvkit.pipeline import RunConfig, run_pipeline
    from esvkit.synthetic import write_demo

    root = tmp_path_factory.mktemp("demo")
    config = RunConfig.load(write_demo(root))
    failures = run_pipeline(config)
    return root, root / "out", config, failures


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance.RESULTS:
            terminalreporter.write_line(line)
