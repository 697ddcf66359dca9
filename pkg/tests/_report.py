"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES = {}


def record(criterion, passed, detail):
    status = "PASS" if passed else "FAIL"
    line = f"CRITERION {criterion:>2}: {status}  {detail}"
    LINES[criterion] = line
    print(line)
    return passed


def note(key, text):
    LINES[key] = f"         {key}: {text}"
    print(LINES[key])
