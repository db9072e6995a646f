def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_aanet_acceptance", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
