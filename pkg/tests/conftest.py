import numpy as np
import pytest

from amaudit.fixture import build_synthetic_fixture, save_fixture

# PASS/FAIL lines from the acceptance tests, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixture():
    """The seed-0 synthetic fixture, trained once per test session."""
    return build_synthetic_fixture(0)


@pytest.fixture(scope="session")
def fixture_dir(fixture, tmp_path_factory):
    return save_fixture(fixture, tmp_path_factory.mktemp("fixture"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference(f, x: np.ndarray, index: tuple, h: float = 1e-3) -> float:
    xp = x.copy()
    xm = x.copy()
    xp[index] += h
    xm[index] -= h
    return (f(xp) - f(xm)) / (2 * h)


# central differences with h=1e-3 on O(10) logits cannot resolve smaller slopes
GRAD_FLOOR = 1e-8


def probe_indices(rng, grad: np.ndarray, floor: float = GRAD_FLOOR) -> tuple[tuple, tuple | None]:
    """One random coordinate with a resolvable gradient and one (if any) below the floor."""
    big = np.argwhere(np.abs(grad) >= floor)
    small = np.argwhere(np.abs(grad) < floor)
    pick = tuple(int(v) for v in big[rng.integers(len(big))])
    tiny = tuple(int(v) for v in small[rng.integers(len(small))]) if len(small) else None
    return pick, tiny


def relative_error(estimate: float, exact: float) -> float:
    if exact == 0.0:
        return abs(estimate)
    return abs(estimate - exact) / abs(exact)
