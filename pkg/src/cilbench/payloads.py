"""Image payload loading.

A manifest uri is either a path to a .npy file holding one H x W x 3 float
image in [0, 1], or "bundle.npz#key" addressing one image inside an npz
bundle. Bundles are memoized per path since manifests typically point every
sample at the same file.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .augment import check_image
from .errors import DataError

_BUNDLE_CACHE: dict[str, dict[str, np.ndarray]] = {}


def load_image(uri: str, base_dir=None) -> np.ndarray:
    base = Path(base_dir) if base_dir else Path(".")
    if "#" in uri:
        path_part, key = uri.split("#", 1)
        path = str((base / path_part).resolve())
        bundle = _BUNDLE_CACHE.get(path)
        if bundle is None:
            with np.load(path) as data:
                bundle = {k: np.asarray(data[k], dtype=np.float64) for k in data.files}
            _BUNDLE_CACHE[path] = bundle
        if key not in bundle:
            raise DataError(f"{path}: no image named {key!r} in bundle")
        return check_image(bundle[key])
    return check_image(np.load(base / uri))


def clear_cache() -> None:
    _BUNDLE_CACHE.clear()
