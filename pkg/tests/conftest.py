import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(results):
        ok, detail = results[crit]
        terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
