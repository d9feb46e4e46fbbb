import json
import struct
from pathlib import Path

import numpy as np

from .sequenceTensors import BinarySequenceTensor, LatentSequenceTensor

'''
TENSOR FILE ANNOTATION:

On-disk layout (all integers little-endian):

    8 bytes   magic "FGSIMT01"
    24 bytes  N, T, D as unsigned 64-bit
    1 byte    flag: 0 = packed bits, 1 = float64
    payload   ceil(N*T*D / 8) bytes (np.packbits, MSB first) or N*T*D * 8 bytes
    N bytes   labels

Parameter checkpoints reuse the container with N = T = 1 and D = total
parameter count; a JSON manifest next to the file lists names and shapes.
'''

MAGIC = b"FGSIMT01"
HEADER = struct.Struct("<QQQB")
FLAG_PACKED_BITS = 0
FLAG_FLOAT64 = 1
MAX_ELEMENTS = 2 ** 62


class FormatError(ValueError):
    """Raised for malformed tensor files."""


def packedSize(numElements):
    return (numElements + 7) // 8


def writeTensor(path, tensor):
    """
    Write a BinarySequenceTensor (packed bits) or LatentSequenceTensor (float64).

    Returns the number of bytes written.
    """
    numSamples, numSteps, width = tensor.data.shape
    if isinstance(tensor, BinarySequenceTensor):
        flag = FLAG_PACKED_BITS
        payload = np.packbits(tensor.data.reshape(-1)).tobytes()
    else:
        flag = FLAG_FLOAT64
        payload = np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
    blob = MAGIC + HEADER.pack(numSamples, numSteps, width, flag) + payload + tensor.labels.astype(np.uint8).tobytes()
    Path(path).write_bytes(blob)
    return len(blob)


def readTensor(path):
    """
    Read a tensor file, validating magic, flag and payload length.

    Raises FormatError on any inconsistency.
    """
    blob = Path(path).read_bytes()
    headerEnd = len(MAGIC) + HEADER.size
    if len(blob) < headerEnd:
        raise FormatError(f"{path}: file too short for a tensor header ({len(blob)} bytes)")
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:len(MAGIC)]!r}")
    numSamples, numSteps, width, flag = HEADER.unpack(blob[len(MAGIC):headerEnd])

    numElements = numSamples * numSteps * width
    if numElements > MAX_ELEMENTS or numSamples > MAX_ELEMENTS:
        raise FormatError(f"{path}: dims ({numSamples}, {numSteps}, {width}) overflow")
    if flag == FLAG_PACKED_BITS:
        payloadSize = packedSize(numElements)
    elif flag == FLAG_FLOAT64:
        payloadSize = numElements * 8
    else:
        raise FormatError(f"{path}: unknown payload flag {flag}")

    expected = headerEnd + payloadSize + numSamples
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)} (truncated or padded)")

    payload = blob[headerEnd:headerEnd + payloadSize]
    labels = np.frombuffer(blob[headerEnd + payloadSize:], dtype=np.uint8).copy()
    shape = (numSamples, numSteps, width)
    if flag == FLAG_PACKED_BITS:
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=numElements)
        return BinarySequenceTensor(bits.reshape(shape), labels)
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return LatentSequenceTensor(data, labels)


def writeCheckpoint(path, namedArrays, extra=None):
    """
    Save named parameter arrays as one float64 tensor plus a JSON manifest.

    Returns the manifest path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flat = np.concatenate([np.asarray(array, dtype=np.float64).ravel() for array in namedArrays.values()])
    writeTensor(path, LatentSequenceTensor(flat.reshape(1, 1, -1), np.zeros(1, dtype=np.uint8)))
    manifest = {
        "layers": [{"name": name, "shape": list(np.shape(array))} for name, array in namedArrays.items()],
        "extra": extra or {},
    }
    manifestPath = path.with_suffix(".json")
    manifestPath.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifestPath


def readCheckpoint(path):
    """Load a checkpoint written by writeCheckpoint as {name: array}."""
    path = Path(path)
    flat = readTensor(path).data.reshape(-1)
    manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    arrays = {}
    offset = 0
    for entry in manifest["layers"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arrays[entry["name"]] = flat[offset:offset + size].reshape(entry["shape"])
        offset += size
    if offset != flat.shape[0]:
        raise FormatError(f"{path}: manifest lists {offset} values, payload has {flat.shape[0]}")
    return arrays
