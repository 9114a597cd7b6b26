"""Binary container shared by checkpoints, prompt files and dataset files.

Layout (little-endian):
    magic        8 bytes, identifies the artifact kind
    header_len   u32
    header       JSON: {"format_version", "meta", "arrays": [manifest...]}
    blobs        raw arrays in manifest order (f32 for floats, u32 for ints)
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import structlog

from errors import ArtifactError

log = structlog.get_logger(__name__)

FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"SEPCKPT1"
PROMPTS_MAGIC = b"SEPPRMT1"
DATASET_MAGIC = b"SEPDATA1"

_HEADER_LEN = struct.Struct("<I")
_STORED_DTYPES = {"f": "<f4", "i": "<u4", "u": "<u4"}
_LOADED_DTYPES = {"<f4": np.float64, "<u4": np.int64}


@dataclass
class Container:
    meta: dict[str, Any]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def encode_container(
    magic: bytes, meta: dict[str, Any], arrays: dict[str, np.ndarray]
) -> bytes:
    manifest = []
    blobs = []
    offset = 0
    for name, array in arrays.items():
        array = np.asarray(array)
        stored = _STORED_DTYPES.get(array.dtype.kind)
        if stored is None:
            raise ArtifactError(f"array '{name}' has unsupported dtype {array.dtype}")
        if stored == "<u4" and array.size and array.min() < 0:
            raise ArtifactError(f"array '{name}' holds negative integers")
        blob = np.ascontiguousarray(array, dtype=stored).tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": stored,
                "shape": list(array.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "arrays": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    return magic + _HEADER_LEN.pack(len(header)) + header + b"".join(blobs)


def write_container(
    path: Path, magic: bytes, meta: dict[str, Any], arrays: dict[str, np.ndarray]
) -> None:
    payload = encode_container(magic, meta, arrays)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    log.info(
        "container_written", path=str(path), kind=magic.decode(), nbytes=len(payload)
    )


def decode_container(
    payload: bytes, magic: bytes, source: str = "<bytes>"
) -> Container:
    prefix = len(magic) + _HEADER_LEN.size
    if len(payload) < prefix:
        raise ArtifactError(f"{source}: truncated before header")
    if payload[: len(magic)] != magic:
        raise ArtifactError(
            f"{source}: bad magic {payload[: len(magic)]!r}, expected {magic!r}"
        )
    (header_len,) = _HEADER_LEN.unpack_from(payload, len(magic))
    if len(payload) < prefix + header_len:
        raise ArtifactError(f"{source}: truncated inside header")
    try:
        header = json.loads(payload[prefix : prefix + header_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArtifactError(f"{source}: header is not valid JSON ({e})") from e

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ArtifactError(
            f"{source}: format version {version} is not supported "
            f"(expected {FORMAT_VERSION})"
        )

    body = memoryview(payload)[prefix + header_len :]
    arrays: dict[str, np.ndarray] = {}
    for entry in header.get("arrays", []):
        name, dtype, shape = entry["name"], entry["dtype"], tuple(entry["shape"])
        if dtype not in _LOADED_DTYPES:
            raise ArtifactError(f"{source}: array '{name}' has unknown dtype {dtype}")
        start, nbytes = entry["offset"], entry["nbytes"]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * 4:
            raise ArtifactError(
                f"{source}: array '{name}' size disagrees with its shape"
            )
        if start + nbytes > len(body):
            raise ArtifactError(f"{source}: truncated inside array '{name}'")
        raw = np.frombuffer(body[start : start + nbytes], dtype=dtype)
        arrays[name] = raw.astype(_LOADED_DTYPES[dtype]).reshape(shape)

    return Container(meta=header.get("meta", {}), arrays=arrays)


def read_container(path: Path, magic: bytes) -> Container:
    if not path.is_file():
        raise ArtifactError(f"{path}: file not found")
    return decode_container(path.read_bytes(), magic, source=str(path))
