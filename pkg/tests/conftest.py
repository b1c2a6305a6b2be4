import numpy as np
import pytest

from lesionforge.synthetic import write_texture_dataset


@pytest.fixture(scope="session")
def texture_root(tmp_path_factory):
    """Small shared 3-class texture dataset (30 per class, 32x32)."""
    root = tmp_path_factory.mktemp("textures")
    manifest = write_texture_dataset(root, n_per_class=30, size=32, seed=0)
    return root, manifest


def make_config(path, manifest, out, **overrides):
    pairs = {
        "manifest": str(manifest),
        "out": str(out),
        "image_size": "32",
        "seed": "0",
        "train.epochs": "10",
        "timing.enabled": "false",
    }
    pairs.update({k: str(v) for k, v in overrides.items()})
    path.write_text("\n".join(f"{k} = {v}" for k, v in pairs.items()) + "\n",
                    encoding="utf-8")
    return path
