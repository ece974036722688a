from pathlib import Path

import pytest

from jumpmfg.model import make_model
from jumpmfg.modelfile import load_model

MODELS = Path(__file__).resolve().parent.parent / "models"
CORPUS = ("constant", "imitation", "crowd", "cycle3")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): headline acceptance criterion")
    config._acceptance = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("acceptance")
    if mark is None or call.when != "call":
        return
    number, title = mark.args
    failed = call.excinfo is not None
    detail = dict(item.user_properties).get("detail", "")
    seen = item.config._acceptance.setdefault(number, [title, True, []])
    seen[1] = seen[1] and not failed
    if detail:
        seen[2].append(detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results, key=int):
        title, ok, details = results[number]
        extra = f"  [{'; '.join(details)}]" if details else ""
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}{extra}")


@pytest.fixture(scope="session")
def corpus():
    return {name: load_model(MODELS / f"{name}.mfg") for name in CORPUS}


def constant_model(J=None, upper=(1.0, 1.0), terminal=(0.0, 0.0)):
    return make_model(2, 1.0, {(0, 1): "1", (1, 0): "1"}, [0, 0], list(upper), cost=J,
                      terminal=list(terminal), bound=1.0)


def imitation_model(J=None, terminal=(0.0, 0.0)):
    return make_model(2, 1.0, {(0, 1): "x2", (1, 0): "x1"}, [0, 0], [1, 1], cost=J,
                      terminal=list(terminal), bound=1.0)


@pytest.fixture
def const2():
    return constant_model()


@pytest.fixture
def imit2():
    return imitation_model()
