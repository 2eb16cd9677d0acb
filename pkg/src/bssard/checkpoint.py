"""Checkpoints: named float32 parameter tables plus a JSON metadata header.

Stored as an npz archive whose keys are the flat parameter names (model
groups and optimizer moments prefixed, e.g. "backbone.start_head.weight",
"opt.disc.m.<param>"); the metadata dict rides along as UTF-8 bytes under
a reserved key.  Training runs in float32, so save/load round-trips are
bit-exact and resumed runs replay the original.
"""

from __future__ import annotations

import json

import numpy as np

META_KEY = "__metadata__"


def save_checkpoint(path, metadata, arrays):
    for key, arr in arrays.items():
        if key == META_KEY:
            raise ValueError(f"array key {META_KEY!r} is reserved")
        if not np.issubdtype(np.asarray(arr).dtype, np.floating):
            raise ValueError(f"checkpoint table {key!r} is not float data")
    payload = {k: np.ascontiguousarray(v, dtype="<f4")
               for k, v in arrays.items()}
    meta_bytes = json.dumps(metadata, sort_keys=True).encode("utf-8")
    payload[META_KEY] = np.frombuffer(meta_bytes, dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path):
    with np.load(path) as archive:
        if META_KEY not in archive:
            raise ValueError(f"{path} is not a checkpoint (missing metadata)")
        metadata = json.loads(bytes(archive[META_KEY].tobytes())
                              .decode("utf-8"))
        arrays = {k: archive[k].astype(np.float32)
                  for k in archive.files if k != META_KEY}
    return metadata, arrays


def split_namespace(arrays, prefix):
    """Sub-dict of arrays under 'prefix.', with the prefix stripped."""
    lead = prefix + "."
    return {k[len(lead):]: v for k, v in arrays.items() if k.startswith(lead)}
