import numpy as np
import pytest

from lipsort import _reference

try:
    from lipsort import _kernels
except ImportError:  # pure-python install
    _kernels = None

BACKENDS = [pytest.param(_reference, id="python")]
if _kernels is not None:
    BACKENDS.append(pytest.param(_kernels, id="compiled"))


@pytest.fixture(params=BACKENDS)
def kernels(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def central_diff(fn, x, h=1e-6):
    """Gradient of scalar ``fn`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = fn(x)
        x[i] = old - h
        down = fn(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


# -- acceptance reporting ---------------------------------------------------------

CRITERIA = {}


class Criterion:
    """Collects one pass/fail verdict per acceptance criterion; a criterion
    checked by several tests passes only if all of them do."""

    def __init__(self, number, title):
        self.number, self.title, self.notes = number, title, []

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        passed = exc_type is None
        entry = CRITERIA.setdefault(self.number, [self.title, True, []])
        entry[1] = entry[1] and passed
        entry[2].extend(self.notes)
        if not passed and exc is not None:
            entry[2].append(str(exc).splitlines()[0][:160] if str(exc) else exc_type.__name__)
        line = f"criterion {self.number:>2} {'PASS' if passed else 'FAIL'}: {self.title}"
        if self.notes:
            line += " | " + "; ".join(self.notes)
        print(line)
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, passed, notes = CRITERIA[number]
        detail = " | " + "; ".join(notes) if notes else ""
        terminalreporter.write_line(f"{number:>2}. {'PASS' if passed else 'FAIL'}  {title}{detail}")
