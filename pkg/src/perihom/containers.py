"""Binary container with a JSON header for hierarchies, solutions and reports.

Layout: magic ``PHC1``, uint32 little-endian header length, UTF-8 JSON header,
then the raw little-endian array payloads back to back, in the order listed
in the header.  Reloading is bit-identical; loaders validate the format
version and (where applicable) the coefficient-field fingerprint.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .cell import FORMAT_VERSION, CorrectorHierarchy
from .polynomials import HomogenizedTensorSequence, Polynomial
from .tensors import SymTensor, multi_indices

__all__ = [
    "ContainerFormatError",
    "save_container",
    "load_container",
    "save_hierarchy",
    "load_hierarchy",
    "save_het_polynomial",
    "load_het_polynomial",
    "save_box_sample",
    "load_box_sample",
]

MAGIC = b"PHC1"


class ContainerFormatError(ValueError):
    """Bad magic, version, fingerprint or truncated payload."""


def save_container(path, meta: dict, arrays: dict):
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = dict(meta)
    header["format_version"] = FORMAT_VERSION
    header["arrays"] = entries
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_container(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ContainerFormatError(f"bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ContainerFormatError(
                f"format version {header.get('format_version')} != {FORMAT_VERSION}")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            blob = fh.read(count * 8)
            if len(blob) != count * 8:
                raise ContainerFormatError(f"truncated payload for array '{entry['name']}'")
            arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
        meta = {k: v for k, v in header.items() if k != "arrays"}
    return meta, arrays


# ---------------------------------------------------------------------------
# hierarchies


def save_hierarchy(path, h: CorrectorHierarchy):
    arrays = {}
    for k, vals in h.phi.items():
        arrays[f"phi_{k}"] = vals
    for k in range(2, h.order + 1):
        arrays[f"abar_{k}"] = h.tensors.tensor(k).to_array()
    meta = {"kind": "corrector_hierarchy", **h.meta}
    save_container(path, meta, arrays)


def load_hierarchy(path, gridfield=None) -> CorrectorHierarchy:
    meta, arrays = load_container(path)
    if meta.get("kind") != "corrector_hierarchy":
        raise ContainerFormatError(f"not a hierarchy container: kind={meta.get('kind')}")
    if gridfield is not None and gridfield.fingerprint() != meta["fingerprint"]:
        raise ContainerFormatError("coefficient-field fingerprint does not match the cache")
    d = meta["d"]
    order = meta["order"]
    phi = {k: arrays[f"phi_{k}"] for k in range(order + 1)}
    tensors = {k: SymTensor.from_array(d, k, arrays[f"abar_{k}"])
               for k in range(2, order + 1)}
    meta = {k: v for k, v in meta.items() if k != "kind"}
    return CorrectorHierarchy(gridfield, order, phi,
                              HomogenizedTensorSequence(d, tensors), meta)


# ---------------------------------------------------------------------------
# heterogeneous polynomials


def save_het_polynomial(path, psi):
    q = psi.q
    arrays = {}
    for k in range(q.degree + 1):
        arrays[f"taylor_{k}"] = q.grad_tensor(k).to_array()
    meta = {
        "kind": "het_polynomial",
        "fingerprint": psi.hierarchy.fingerprint,
        "d": q.dim,
        "degree": q.degree,
    }
    save_container(path, meta, arrays)


def load_het_polynomial(path, hierarchy):
    from .hetpoly import HetPolynomial
    meta, arrays = load_container(path)
    if meta.get("kind") != "het_polynomial":
        raise ContainerFormatError(f"not a het-polynomial container: kind={meta.get('kind')}")
    if meta["fingerprint"] != hierarchy.fingerprint:
        raise ContainerFormatError("refusing to load against a mismatched hierarchy")
    d = meta["d"]
    tensors = [SymTensor.from_array(d, k, arrays[f"taylor_{k}"])
               for k in range(meta["degree"] + 1)]
    return HetPolynomial(hierarchy, Polynomial.from_taylor(d, tensors))


# ---------------------------------------------------------------------------
# cube samples


def save_box_sample(path, sample, meta=None):
    grid = sample.grid
    header = {
        "kind": "box_sample",
        "d": grid.dim,
        "lo": list(grid.lo),
        "ncells": list(grid.ncells),
        "h": grid.h,
        **(meta or {}),
    }
    save_container(path, header, {"values": sample.values})


def load_box_sample(path):
    from ._stencil import BoxGrid
    from .hetpoly import BoxSample
    meta, arrays = load_container(path)
    if meta.get("kind") != "box_sample":
        raise ContainerFormatError(f"not a box-sample container: kind={meta.get('kind')}")
    grid = BoxGrid(meta["d"], meta["lo"], meta["ncells"], meta["h"])
    return BoxSample(grid, arrays["values"]), meta
