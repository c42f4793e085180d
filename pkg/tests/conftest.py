import pytest

from contact_quality.cli import main

_ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """Default synthetic dataset generated once per session through the CLI."""
    out = tmp_path_factory.mktemp("dataset")
    assert main(["generate", "--out", str(out), "--seed", "0"]) == 0
    return out


@pytest.fixture(scope="session")
def acceptance():
    """``record(n, title, ok, detail)`` stores one criterion result for the summary."""

    def record(n: int, title: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE[n] = (bool(ok), title, detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, title, detail = _ACCEPTANCE[n]
        line = f"{'PASS' if ok else 'FAIL'} {n:2d} {title}"
        terminalreporter.write_line(line + (f" | {detail}" if detail else ""))
