import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


class Verdict:
    """Collects the sub-checks of one acceptance criterion and renders its PASS/FAIL line."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.items: list[tuple[str, bool]] = []

    def check(self, label: str, value, ok) -> bool:
        shown = f"{value:.6g}" if isinstance(value, float) else str(value)
        self.items.append((f"{label}={shown}", bool(ok)))
        return bool(ok)

    def within(self, label: str, value: float, lo: float | None = None, hi: float | None = None) -> bool:
        ok = (lo is None or value >= lo) and (hi is None or value <= hi)
        band = f"[{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}]"
        shown = f"{value:.6g}"
        self.items.append((f"{label}={shown} in {band}", bool(ok)))
        return bool(ok)

    @property
    def passed(self) -> bool:
        return bool(self.items) and all(ok for _, ok in self.items)

    def line(self) -> str:
        parts = "; ".join(text + ("" if ok else " <-- out") for text, ok in self.items)
        return f"{'PASS' if self.passed else 'FAIL'} criterion {self.number:2d} ({self.title}): {parts}"

    def conclude(self) -> None:
        line = self.line()
        ACCEPTANCE_LINES[self.number] = line
        print(line)
        assert self.passed, line


@pytest.fixture
def verdict():
    return Verdict


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
