import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from petsynth import datasets, phantoms

torch.manual_seed(0)


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    """4 paired + 4 unpaired subjects at 16x16: cheap enough for trainer tests."""
    root = tmp_path_factory.mktemp("micro_corpus")
    return phantoms.generate_corpus(4, 4, base_seed=3, out_dir=root, grid=(16, 16))


@pytest.fixture(scope="session")
def micro_handle(micro_corpus):
    return datasets.load_manifest(micro_corpus.path)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 paired + 4 unpaired subjects at 32x32."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    return phantoms.generate_corpus(4, 4, base_seed=7, out_dir=root, grid=(32, 32))


@pytest.fixture(scope="session")
def tiny_handle(tiny_corpus):
    return datasets.load_manifest(tiny_corpus.path)


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """The acceptance corpus: 8 paired + 16 unpaired subjects at 64x64, seed 11."""
    root = tmp_path_factory.mktemp("desk_corpus")
    return phantoms.generate_corpus(8, 16, base_seed=11, out_dir=root, grid=(64, 64))


@pytest.fixture(scope="session")
def desk_handle(desk_corpus):
    return datasets.load_manifest(desk_corpus.path)
