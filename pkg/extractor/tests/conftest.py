import os

import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    """A handful of deterministic synthetic photos."""
    rng = np.random.default_rng(42)
    root = tmp_path_factory.mktemp("images")
    for i, size in enumerate(((400, 300), (322, 322), (640, 480))):
        arr = rng.integers(0, 255, (size[1], size[0], 3), dtype=np.uint8)
        Image.fromarray(arr).save(root / f"img{i}.png")
    return root


@pytest.fixture(scope="session")
def manifest(image_dir):
    path = image_dir / "input.tsv"
    lines = [f"img{i}\t{45.0 + i * 0.001}\t7.0\t{image_dir}/img{i}.png"
             for i in range(3)]
    path.write_text("\n".join(lines) + "\n")
    return path
