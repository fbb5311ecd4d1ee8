"""
Parameter Checkpoints
Versioned binary blobs (layout header + flat float64 payload) and text dumps
"""

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.error_handling import AutodiffError
from src.ml.parameters import ParameterLayout, ParameterVector

MAGIC = b"LR2P"
FORMAT_VERSION = 1


def save_blob(params: ParameterVector, path: Union[str, Path]) -> Path:
    """One unbatched parameter vector per file"""
    if params.lead_shape:
        raise AutodiffError(f"Checkpoint blobs hold a single vector; got leading axes {params.lead_shape}")
    header = json.dumps({"blocks": params.layout.describe(), "size": params.layout.size}).encode("utf-8")
    payload = params.values.astype("<f8").tobytes()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
        f.write(header)
        f.write(payload)
    return path


def load_blob(path: Union[str, Path]) -> ParameterVector:
    with open(path, "rb") as f:
        data = f.read()

    if data[:4] != MAGIC:
        raise AutodiffError(f"{path} is not a parameter checkpoint")
    version, header_length = struct.unpack("<HI", data[4:10])
    if version != FORMAT_VERSION:
        raise AutodiffError(f"Unsupported checkpoint version {version} in {path}")

    header = json.loads(data[10:10 + header_length].decode("utf-8"))
    layout = ParameterLayout(tuple((block["name"], tuple(block["shape"])) for block in header["blocks"]))
    values = np.frombuffer(data[10 + header_length:], dtype="<f8").astype(np.float64)
    if values.size != layout.size:
        raise AutodiffError(f"Checkpoint {path} payload has {values.size} values, layout needs {layout.size}")
    return ParameterVector(layout, values)


def dump_text(params: ParameterVector, path: Union[str, Path]) -> Path:
    """Human-readable dump for debugging"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for name, values in params.items():
            f.write(f"# {name} shape={list(values.shape)}\n")
            f.write(" ".join(f"{x:.17g}" for x in np.ravel(values)) + "\n")
    return path
