import math

import numpy as np
import pytest

from precisegrasp.parts import Part, generate_part

_ACCEPTANCE = []


def rect_part(w=0.06, h=0.02, height=0.02, part_id=1):
    ring = np.array([[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]])
    return Part(ring, (), height, part_id, "slotted_bar")


def disk_part(r=0.02, n=128, height=0.02, part_id=2):
    a = 2 * math.pi * np.arange(n) / n
    return Part(np.column_stack([r * np.cos(a), r * np.sin(a)]), (), height, part_id, "ellipse")


@pytest.fixture
def acceptance():
    """Record one acceptance line; the terminal summary prints them all."""
    def record(number: int, name: str, passed: bool, detail: str = ""):
        _ACCEPTANCE.append((number, name, passed, detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number} {name}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def sample_parts():
    return [generate_part(s, f) for s in (11, 12) for f in ("ngon", "gear", "lbracket", "slotted_bar", "ellipse")]


AFFINE = np.array([[0.2, 0.1, 0.0], [-0.1, 0.3, 0.1], [0.0, 0.1, -0.2], [2.0, -1.0, 1.0]])
OFFSET = np.array([0.001, -0.002, 0.0, 0.01])


def heteroscedastic_task(n, rng, sds=(0.004, 0.012), discrete=True, size=16):
    """Flat images; grasp displacement affine in (gx, gy, gz) plus noise whose
    scale is sds[0] where gx > 0 and sds[1] elsewhere (ten times that for the angle).

    Returns (images, grasps, dg, true mean, per-row noise scale).
    """
    imgs = 0.7 + rng.normal(0, 0.002, (n, size, size))
    gx = rng.choice([-0.04, 0.04], n) if discrete else rng.uniform(-0.05, 0.05, n)
    g = np.column_stack([gx, rng.uniform(-0.02, 0.02, n), rng.uniform(0, 0.02, n), np.zeros(n)])
    mean = g[:, :3] @ AFFINE.T + OFFSET
    sd = np.where(g[:, 0] > 0, sds[0], sds[1])
    dg = mean + rng.normal(size=(n, 4)) * sd[:, None] * [1, 1, 1, 10]
    return imgs, g, dg, mean, sd
