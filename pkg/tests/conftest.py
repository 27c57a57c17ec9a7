import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for space_gen

from archspace.dsl import parse

# The running example: a small convolutional space with 24 models.
SPACE_24 = """\
(Concat
    (Conv2D [32, 64] [3, 5] [1])
    (MaybeSwap BatchNormalization ReLU)
    (Optional (Dropout [0.5, 0.9]))
    (Affine [10]))
"""

IMAGE_SHAPE = (32, 32, 3)


@pytest.fixture(scope="session")
def space24():
    return parse(SPACE_24)


@pytest.fixture
def space24_file(tmp_path):
    target = tmp_path / "space24.arch"
    target.write_text(SPACE_24, encoding="utf-8")
    return target
