import sys


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criterion verdict lines after the test run."""
    for name, module in sys.modules.items():
        if name.rpartition(".")[2] == "test_acceptance" and \
                getattr(module, "LINES", None):
            terminalreporter.section("acceptance criteria")
            for line in module.LINES:
                terminalreporter.write_line(line)
            return
