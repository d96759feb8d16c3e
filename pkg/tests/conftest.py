import numpy as np
import pytest

from cilbench.manifest import DatasetManifest, SampleRecord


def make_manifest(num_classes=4, train_per_class=3, test_per_class=2,
                  grouping=None):
    samples = []
    for c in range(num_classes):
        for i in range(train_per_class):
            samples.append(SampleRecord(f"c{c}_tr{i}", f"img_{c}_{i}.npy", c, "train"))
        for i in range(test_per_class):
            samples.append(SampleRecord(f"c{c}_te{i}", f"img_{c}_t{i}.npy", c, "test"))
    names = {c: f"class_{c}" for c in range(num_classes)}
    return DatasetManifest(samples, names, grouping)


@pytest.fixture
def manifest4():
    return make_manifest()


def random_image(rng, h=16, w=16):
    return rng.uniform(0.0, 1.0, size=(h, w, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
