"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

CRITERIA = {
    1: "gradient fidelity",
    2: "CAM identity",
    3: "general fusion equals the three-class form",
    4: "metric reproduction",
    5: "CEA loss values",
    6: "transfer identity",
    7: "augmentation alignment",
    8: "overfit sanity",
    9: "desk-scale end-to-end",
    10: "variant coverage",
    11: "reproducibility",
}

RESULTS = {}


def record(number: int, ok: bool, detail: str = ""):
    """Store the outcome, echo it, and fail the calling test when ``ok`` is false."""
    RESULTS[number] = (bool(ok), detail)
    print(line(number))
    assert ok, line(number)


def line(number: int) -> str:
    if number not in RESULTS:
        return f"FAIL  [{number:2d}] {CRITERIA[number]}: did not run to completion"
    ok, detail = RESULTS[number]
    return f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {CRITERIA[number]}: {detail}"
