from pathlib import Path

import numpy as np
import pytest

from demorphlab.synthetic import build_synthetic_dataset, synthetic_face


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    """Small on-disk dataset: 4 morphs + 3 non-morphed from 5 subjects, 32px."""
    root = tmp_path_factory.mktemp("dataset")
    train_m, test_m = build_synthetic_dataset(
        root, n_subjects=5, n_morphs=4, image_size=(32, 32), seed=11, n_nonmorphed=3
    )
    return {"root": Path(root), "train": train_m, "test": test_m}


@pytest.fixture(scope="session")
def face_pair():
    img1, lm1 = synthetic_face(101, (64, 64))
    img2, lm2 = synthetic_face(202, (64, 64))
    return img1, lm1, img2, lm2


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
