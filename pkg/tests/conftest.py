from __future__ import annotations

# criterion number -> (passed, description, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc, detail = ACCEPTANCE[n]
        terminalreporter.write_line(
            f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {desc}" + (f" ({detail})" if detail else ""))
