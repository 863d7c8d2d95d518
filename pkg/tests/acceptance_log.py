"""Shared store for acceptance verdict lines (criterion number -> line)."""
LINES = {}


def record(number, passed, detail):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
    LINES[number] = line
    print(line)
    return line
