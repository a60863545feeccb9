import pytest

from raftsplit.raft_sim import SimConfig, run_batch

REFERENCE_SEED = 20180627


@pytest.fixture(scope="session")
def reference_config():
    return SimConfig.for_timeout_steps(5, 0.3, (3,), trials=10_000, master_seed=REFERENCE_SEED)


@pytest.fixture(scope="session")
def reference_batch(reference_config):
    """10,000 lockstep trials at N=5, K=3, p=0.3."""
    return run_batch(reference_config)


def pytest_terminal_summary(terminalreporter, config):
    from test_acceptance import ACCEPTANCE_KEY

    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
