"""Collects one line per acceptance criterion for the terminal summary."""

LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"
    LINES.append(line)
    print(line)
    return passed
