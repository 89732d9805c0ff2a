import pytest

from rayworld.tokenizer import ScaleSchedule, TokenizerNet
from rayworld.toyworld import RigSpec, default_trajectories, random_scene


@pytest.fixture(scope="session")
def sched():
    return ScaleSchedule()


@pytest.fixture(scope="session")
def tiny_tok(sched):
    """Untrained tokenizer: structurally valid tokens, fast to build."""
    return TokenizerNet(sched, hidden=16, seed=0)


@pytest.fixture(scope="session")
def rig():
    return RigSpec()


@pytest.fixture(scope="session")
def scene():
    return random_scene(7)


@pytest.fixture(scope="session")
def traj():
    return default_trajectories()["straight"]


@pytest.fixture(scope="session")
def frame_images(scene, rig, traj):
    from rayworld.toyworld import render_frame
    return render_frame(scene, rig, traj, 0.5)
