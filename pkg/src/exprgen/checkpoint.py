"""Model container: an ``.npz`` archive of named arrays plus a JSON manifest.

Each array keeps its own shape header (the ``.npy`` format), so values
round-trip bit-exactly. The manifest records the model kind, a format version
and whatever the owning module needs to rebuild the model without outside
metadata.
"""
import json
from pathlib import Path

import numpy as np

from .errors import FormatError

FORMAT_VERSION = 1
_MANIFEST_KEY = "__manifest__"


def save(path, kind, arrays, **manifest):
    path = Path(path)
    header = {"format": "exprgen-checkpoint", "version": FORMAT_VERSION, "kind": kind, **manifest}
    payload = {name: np.ascontiguousarray(value) for name, value in arrays.items()}
    payload[_MANIFEST_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load(path, kind=None):
    """Return ``(manifest, arrays)``; raises FormatError on a foreign or mismatched file."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {name: npz[name] for name in npz.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: not a checkpoint ({exc})") from exc
    if _MANIFEST_KEY not in arrays:
        raise FormatError(f"{path}: checkpoint manifest missing")
    manifest = json.loads(arrays.pop(_MANIFEST_KEY).tobytes().decode())
    if manifest.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    if kind is not None and manifest.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind!r} checkpoint, found {manifest.get('kind')!r}")
    return manifest, arrays
