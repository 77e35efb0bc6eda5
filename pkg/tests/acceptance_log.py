"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES = []


def verdict(number: int, title: str, checks: dict, detail: str = "") -> None:
    """Record a PASS/FAIL line for ``number`` and fail the test on any false check."""
    failed = [name for name, ok in checks.items() if not ok]
    status = "FAIL" if failed else "PASS"
    line = f"criterion {number:2d} {status}  {title}"
    if detail:
        line += f"  [{detail}]"
    if failed:
        line += f"  failed: {', '.join(failed)}"
    LINES.append((number, line))
    print(line)
    assert not failed, line
