import numpy as np
import pytest

from fcdlif.data import FrameSchedule
from fcdlif.model import SfeConfig, TfeConfig, FcDlifModel
from fcdlif.phantom import FengParams, make_mouse_phantom, render_phantom


@pytest.fixture(scope="session")
def default_schedule():
    return FrameSchedule.default()


@pytest.fixture(scope="session")
def feng_typical():
    return FengParams.typical()


@pytest.fixture(scope="session")
def desk_model():
    """Desk-scale predictor shared across read-only tests."""
    from fcdlif.model import build_desk_fcdlif
    return build_desk_fcdlif(seed=11)


@pytest.fixture(scope="session")
def tiny_model():
    """Micro model for composed gradient checks: 4x4x4 volumes, 2 stages."""
    sfe = SfeConfig(spatial_shape=(4, 4, 4), channels=(2, 4),
                    final_kernel=(2, 2, 2), embedding_dim=4)
    tfe = TfeConfig(in_channels=4, channels=(2, 1), kernel_sizes=(3, 3))
    return FcDlifModel(sfe, tfe, seed=5)


@pytest.fixture(scope="session")
def desk_pair(default_schedule, feng_typical):
    """One rendered desk-scale (image, AIF) pair with mild noise."""
    phantom = make_mouse_phantom()
    return render_phantom(phantom, default_schedule, feng_typical, seed=3,
                          count_scale=200.0)


def make_tiny_model(seed):
    sfe = SfeConfig(spatial_shape=(4, 4, 4), channels=(2, 4),
                    final_kernel=(2, 2, 2), embedding_dim=4)
    tfe = TfeConfig(in_channels=4, channels=(2, 1), kernel_sizes=(3, 3))
    return FcDlifModel(sfe, tfe, seed=seed)


def distinct_volume(rng, shape, scale=0.05):
    """Random volume with all-distinct values (safe for pooling argmax)."""
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) * scale).astype(np.float32)
