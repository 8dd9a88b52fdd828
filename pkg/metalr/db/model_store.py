# metalr/db/model_store.py
"""
Flat binary model files:

    b"MLRM" | uint32 LE header length | UTF-8 JSON header | little-endian float64 payload

The header holds the ModelSpec (layers, input shape, seed) and the (layer, key, shape)
of every tensor in payload order.
"""
import json
import logging
from pathlib import Path
from typing import Union

import numpy as np

from metalr.core.errors import MalformedHeaderError, ReportIOError, TruncatedPayloadError
from metalr.models.networks import ModelSpec, Network, build_network

logger = logging.getLogger(__name__)

MAGIC = b"MLRM"
FORMAT_VERSION = 1


def save_model(model: Network, path: Union[str, Path]) -> Path:
    path = Path(path)
    tensors = []
    chunks = []
    for name, params in model.parameters().items():
        for key in sorted(params):
            tensors.append({"layer": name, "key": key, "shape": list(params[key].shape)})
            chunks.append(np.ascontiguousarray(params[key], dtype="<f8").tobytes())
    header = json.dumps(
        {"format": FORMAT_VERSION, "spec": model.spec.model_dump(mode="json"), "tensors": tensors},
        sort_keys=True,
    ).encode("utf-8")
    blob = MAGIC + np.uint32(len(header)).astype("<u4").tobytes() + header + b"".join(chunks)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
    except OSError as e:
        logger.error(f"Failed to save model to {path}: {e}", exc_info=True)
        raise ReportIOError(str(path), f"cannot write model file: {e}") from e
    logger.debug(f"Saved {model} to {path}")
    return path


def load_model(path: Union[str, Path]) -> Network:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        logger.error(f"Failed to read model from {path}: {e}")
        raise ReportIOError(str(path), f"cannot read model file: {e}") from e
    if len(data) < 8 or data[:4] != MAGIC:
        raise MalformedHeaderError(f"{path}: not a model file (bad magic)")
    header_len = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
    if len(data) < 8 + header_len:
        raise MalformedHeaderError(f"{path}: header declares {header_len} bytes but file is shorter")
    try:
        header = json.loads(data[8:8 + header_len].decode("utf-8"))
        spec = ModelSpec.model_validate(header["spec"])
        entries = header["tensors"]
    except (ValueError, KeyError) as e:
        raise MalformedHeaderError(f"{path}: unreadable header: {e}") from e
    if header.get("format") != FORMAT_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported format {header.get('format')}")

    payload = data[8 + header_len:]
    expected = sum(int(np.prod(entry["shape"])) for entry in entries) * 8
    if len(payload) != expected:
        raise TruncatedPayloadError(f"{path}: expected {expected} payload bytes, got {len(payload)}")

    params = {}
    offset = 0
    for entry in entries:
        count = int(np.prod(entry["shape"]))
        values = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(entry["shape"])
        params.setdefault(entry["layer"], {})[entry["key"]] = values.astype(np.float64)
        offset += count * 8
    model = build_network(spec).with_parameters(params)
    logger.debug(f"Loaded {model} from {path}")
    return model
