import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    selected = {item.nodeid for item in getattr(terminalreporter, "_acceptance_items", [])}
    if not acceptance_log.RESULTS and not selected:
        return
    terminalreporter.section("acceptance criteria")
    for n in acceptance_log.CRITERIA:
        if n in acceptance_log.RESULTS or any(f"criterion_{n:02d}" in i for i in selected):
            terminalreporter.write_line(acceptance_log.line(n))


def pytest_collection_finish(session):
    picked = [i for i in session.items if "test_acceptance" in i.nodeid]
    reporter = session.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None:
        reporter._acceptance_items = picked
