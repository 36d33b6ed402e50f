import pytest
from hypothesis import HealthCheck, settings

from geotwin.scene import Band, Material, Scene, Wall

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion and assert it."""

    def check(number: int, ok: bool, detail: str) -> None:
        record_acceptance(number, bool(ok), detail)
        assert ok, detail

    return check


@pytest.fixture
def small_band():
    return Band(2e9, 10e9, 801)


@pytest.fixture
def one_wall_scene():
    """A long wall along y=0 with rx and tx above it."""
    return Scene(
        walls=(Wall((-1000.0, 0.0), (1000.0, 0.0), "brick"),),
        materials=(Material("brick", 3.91),),
        rx=(0.0, 5.0),
        tx_positions=((10.0, 5.0), (-7.0, 12.0)),
        band=Band(2e9, 10e9, 801),
    )


@pytest.fixture
def box_scene():
    """Closed 20 x 10 room, rx and two tx inside."""
    pts = [(0.0, 0.0), (20.0, 0.0), (20.0, 10.0), (0.0, 10.0)]
    walls = tuple(Wall(pts[i], pts[(i + 1) % 4], "brick") for i in range(4))
    return Scene(walls, (Material("brick", 3.91),), (5.0, 4.0), ((15.0, 6.0), (12.0, 2.5)), Band(2e9, 10e9, 801))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
