"""Shared fixtures: one small simulated wardrobe reused across the suite.

Session scope keeps the expensive pieces (cloth settling, short training
runs) to a single build; tests treat them as read-only.
"""

import numpy as np
import pytest

from unic.estimator import GarmentDeformationRegressor
from unic.oracle import (build_capsule_body, build_skeleton,
                         generate_motion_clip, simulate_sequence)
from unic.oracle.garments import make_skirt
from unic.profiles import Hyper

TINY = dict(latent_channels=8, latent_categories=4, encoder_hidden=32,
            field_hidden=24)


@pytest.fixture(scope="session")
def skeleton():
    return build_skeleton()


@pytest.fixture(scope="session")
def capsule_body(skeleton):
    return build_capsule_body(skeleton)


@pytest.fixture(scope="session")
def tiny_skirt(skeleton):
    return make_skirt(skeleton, rings=6, segments=8)


@pytest.fixture(scope="session")
def tiny_hyper():
    return Hyper(**TINY)


@pytest.fixture(scope="session")
def idle_ds(skeleton, capsule_body, tiny_skirt):
    _, poses = generate_motion_clip("idle", 1.2, fps=30, seed=3)
    return simulate_sequence(skeleton, poses, tiny_skirt, capsule_body,
                             garment_name="skirt", kind="idle", seed=3)


@pytest.fixture(scope="session")
def walk_ds(skeleton, capsule_body, tiny_skirt):
    _, poses = generate_motion_clip("walk", 2.0, fps=30, seed=5)
    return simulate_sequence(skeleton, poses, tiny_skirt, capsule_body,
                             garment_name="skirt", kind="walk", seed=5)


@pytest.fixture(scope="session")
def fitted(idle_ds):
    est = GarmentDeformationRegressor(epochs=10, seed=0, val_every=10 ** 9,
                                      **TINY)
    est.fit(idle_ds)
    return est


@pytest.fixture(scope="session")
def fitted_ckpt(fitted, tmp_path_factory):
    from unic.dataio import save_checkpoint
    from unic.train import optimizer_state_arrays

    path = tmp_path_factory.mktemp("ckpt") / "fitted.unicckpt"
    save_checkpoint(str(path), fitted.model_, step=10,
                    optimizer_state=optimizer_state_arrays(fitted.optimizer_))
    return str(path)


@pytest.fixture(scope="session")
def idle_ds_path(idle_ds, tmp_path_factory):
    from unic.dataio import write_dataset

    path = tmp_path_factory.mktemp("data") / "idle.unicdata"
    write_dataset(str(path), idle_ds)
    return str(path)


def rng(a=0, b=0):
    return np.random.Generator(np.random.Philox(key=[a, b]))
