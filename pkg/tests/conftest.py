"""Shared fixtures and the slow-test gate."""

import os

import numpy as np
import pytest

from bloomgs.config import parse_run_config
from bloomgs.services.scene_core import Camera


def pytest_collection_modifyitems(config, items):
    if os.environ.get("BLOOMGS_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set BLOOMGS_RUN_SLOW=1 to run end-to-end tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_camera(width: int = 16, height: int = 16, focal: float = 20.0,
                rotation=None, translation=None) -> Camera:
    k = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
    r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    t = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
    return Camera(k, np.hstack([r, t[:, None]]), width, height)


@pytest.fixture
def camera() -> Camera:
    return make_camera()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


TINY_CONFIG = """
[run]
seed = 3
width = 16
height = 16
fov_degrees = 60
provider = synthetic:room

[trajectory]
num_cameras = 3
rotation_step = 0.3
support_count = 4
min_overlap = 8

[scc]
feature_dim = 4
offsets_per_anchor = 2
hash_resolutions = 2, 4
hash_table_size = 64
hash_features = 2
hidden_width = 4

[train]
iterations = 4
log_every = 1
checkpoint_every = 2
max_anchors = 24
holdout_every = 2
pixel_chunk = 64
"""


@pytest.fixture
def tiny_config():
    return parse_run_config(TINY_CONFIG)
