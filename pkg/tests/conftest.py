import torch

torch.set_num_threads(1)

VERDICTS = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains full-size models (tens of CPU-minutes)")


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
