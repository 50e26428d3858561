ACCEPTANCE = {}


def record(key, ok, detail):
    """Store one acceptance verdict; the summary hook prints them in order."""
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
