"""Parameter container file: a JSON header line plus a float64 blob.

The header records the format tag, tensor names with shapes in order, and
a SHA-256 checksum of the blob; the blob is the little-endian float64 bytes
of every tensor concatenated in header order. Loading verifies the checksum
and reshapes, so a round trip is bit-exact.
"""

import hashlib
import json

import numpy as np

from .errors import DataValidationError, IntegrityError

_FORMAT = "attention-params"
_VERSION = 1


def save_params(path, arrays):
    """arrays: mapping name -> ndarray, saved in iteration order."""
    entries = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": str(name), "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    blob = b"".join(chunks)
    header = {
        "format": _FORMAT,
        "version": _VERSION,
        "tensors": entries,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_params(path):
    """Returns an ordered name -> ndarray dict; checksum failures raise."""
    try:
        with open(path, "rb") as fh:
            header_line = fh.readline()
            blob = fh.read()
    except OSError as err:
        raise DataValidationError(f"cannot read parameters {path}: {err}") from err
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataValidationError(f"{path}: malformed parameter header") from None
    if header.get("format") != _FORMAT:
        raise DataValidationError(f"{path}: not a parameter container")
    if header.get("version") != _VERSION:
        raise DataValidationError(f"{path}: unsupported version {header.get('version')}")
    digest = hashlib.sha256(blob).hexdigest()
    if digest != header.get("sha256"):
        raise IntegrityError(f"{path}: parameter blob checksum mismatch")
    out = {}
    offset = 0
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.intp)) if entry["shape"] else 1
        nbytes = size * 8
        if offset + nbytes > len(blob):
            raise DataValidationError(f"{path}: blob shorter than header claims")
        flat = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        out[entry["name"]] = flat.reshape(entry["shape"]).astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise DataValidationError(f"{path}: blob longer than header claims")
    return out
