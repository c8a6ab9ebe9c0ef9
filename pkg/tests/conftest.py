from contextlib import contextmanager

import pytest

from wearmocap.body_model import NUM_JOINTS, Pose, default_mesh, default_tree
from wearmocap.rotmath import matrix_to_rot6d, rotvec_to_matrix


@pytest.fixture(scope="session")
def tree():
    return default_tree()


@pytest.fixture(scope="session")
def mesh():
    return default_mesh()


def random_pose(rng, frames=None, scale=0.6):
    """Pose with random local rotations of moderate size and a random root translation."""
    shape = (NUM_JOINTS,) if frames is None else (frames, NUM_JOINTS)
    rot = matrix_to_rot6d(rotvec_to_matrix(rng.normal(scale=scale, size=shape + (3,))))
    trans = rng.normal(size=shape[:-1] + (3,))
    return Pose(trans, rot)


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE_RESULTS = {}


@contextmanager
def criterion(number, title):
    """Record one acceptance criterion as PASS or FAIL depending on whether the block raises."""
    res = {"detail": ""}
    try:
        yield res
    except BaseException as e:
        ACCEPTANCE_RESULTS[number] = (title, False, f"{type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}")
        raise
    else:
        ACCEPTANCE_RESULTS[number] = (title, True, res["detail"])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip())
