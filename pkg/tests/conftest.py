import pytest

from cdrsynth.core import PipelineConfig, seeded_rng
from cdrsynth.refdata import bootstrap_ref


@pytest.fixture(scope="session")
def boot_ref(tmp_path_factory):
    """Default bootstrap: 500 users over four weeks, also written to CSV."""
    cfg = PipelineConfig()
    path = tmp_path_factory.mktemp("ref") / "ref.csv"
    per_user, truth = bootstrap_ref(cfg, seeded_rng(42, "bootstrap"), path)
    return cfg, per_user, truth, path


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
