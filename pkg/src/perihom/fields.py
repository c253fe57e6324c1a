"""Gallery, sampling and validation of Z^d-periodic uniformly elliptic coefficient fields.

Fields are normalized at construction so that the measured lower ellipticity
bound equals 1 (the scale factor is recorded in the metadata); after that the
single structural parameter is the upper bound ``Lambda``.

Coefficients are sampled at cell centers ``(i + 1/2) / N`` of the unit cell;
rough fields must be supplied already grid-aligned.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CoefficientField",
    "GridField",
    "EllipticityError",
    "gallery_field",
    "sample_field",
    "ellipticity_bounds",
    "load_field_spec",
    "field_from_grid_data",
]

GALLERY_NAMES = ("constant", "laminate1d", "trig2d", "rotating")


class EllipticityError(ValueError):
    """Raised when a coefficient field violates the uniform ellipticity bounds."""


@dataclass
class CoefficientField:
    """Z^d-periodic matrix field, defined by its values on the unit cell."""

    dim: int
    evaluator: object  # callable: (npts, d) array in [0,1)^d -> (npts, d, d)
    name: str = "custom"
    params: dict = field(default_factory=dict)
    scale: float = 1.0  # 1/lambda_min applied at construction
    monotone_compatible: bool = False

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.mod(x.reshape(-1, self.dim), 1.0)
        vals = np.asarray(self.evaluator(pts), dtype=float)
        if vals.shape != (pts.shape[0], self.dim, self.dim):
            raise ValueError(f"evaluator returned shape {vals.shape}")
        return vals[0] if single else vals

    def metadata(self):
        return {"name": self.name, "d": self.dim, "params": self.params, "scale": self.scale}


@dataclass
class GridField:
    """Unit-cell sample of a coefficient field at cell centers.

    values has shape (N, ..., N, d, d) with one d x d block per cell.
    """

    dim: int
    resolution: int
    values: np.ndarray
    lambda_min: float = 0.0
    lambda_max: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = tuple([self.resolution] * self.dim) + (self.dim, self.dim)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape}, expected {expected}")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")

    @property
    def spacing(self):
        return 1.0 / self.resolution

    def cell_count(self):
        return self.resolution ** self.dim

    def flat_values(self):
        return self.values.reshape(-1, self.dim, self.dim)

    def is_symmetric(self, tol=1e-12):
        v = self.flat_values()
        return bool(np.max(np.abs(v - np.swapaxes(v, 1, 2))) <= tol)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"d": self.dim, "N": self.resolution,
                             "meta": self.metadata}, sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        return h.hexdigest()

    def node_values(self):
        """Coefficient resampled at grid nodes (mean of the adjacent cells).

        Used only by the strong-form diagnostics; the solvers consume the
        cell-center samples directly.
        """
        v = self.values
        out = v.copy()
        for axis in range(self.dim):
            out = 0.5 * (out + np.roll(out, 1, axis=axis))
        return out


def _sym_eig_bounds(blocks: np.ndarray):
    """(min eigenvalue of symmetric part, max operator norm) over all cells."""
    if not np.all(np.isfinite(blocks)):
        raise EllipticityError("non-finite matrix entries in field sample")
    sym = 0.5 * (blocks + np.swapaxes(blocks, 1, 2))
    eigs = np.linalg.eigvalsh(sym)
    lam_min = float(eigs[:, 0].min())
    svals = np.linalg.svd(blocks, compute_uv=False)
    lam_max = float(svals.max())
    return lam_min, lam_max


def _midpoints(n):
    return (np.arange(n) + 0.5) / n


def _cell_center_grid(dim, n):
    axes = [_midpoints(n)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


_PROBE = {1: 4096, 2: 512, 3: 64}


def _node_grid(dim, n):
    axes = [np.arange(n) / n] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _normalize(dim, evaluator, name, params, monotone):
    # probe at nodes: the standard trigonometric profiles attain their
    # extrema on the node lattice, so the recorded scale is exact for them
    pts = _node_grid(dim, _PROBE[dim])
    vals = np.asarray(evaluator(pts), dtype=float)
    lam_min, lam_max = _sym_eig_bounds(vals)
    if lam_min <= 0:
        raise EllipticityError(f"field '{name}' is not uniformly elliptic: "
                               f"probe lambda_min = {lam_min:.3e}")
    scale = 1.0 / lam_min
    scaled = (lambda x, ev=evaluator, s=scale: s * np.asarray(ev(x), dtype=float))
    return CoefficientField(dim, scaled, name=name, params=dict(params), scale=scale,
                            monotone_compatible=monotone)


def _profile(params):
    """Scalar 1-periodic profile t -> mean + amplitude * cos(2 pi freq t)."""
    kind = params.get("profile", "cosine")
    if kind != "cosine":
        raise ValueError(f"unknown profile '{kind}'")
    mean = float(params.get("mean", 2.0))
    amp = float(params.get("amplitude", 1.0))
    freq = int(params.get("frequency", 1))
    return lambda t: mean + amp * np.cos(2 * np.pi * freq * t)


def gallery_field(name: str, params: dict | None = None) -> CoefficientField:
    """Construct a named field from the gallery; see GALLERY_NAMES.

    constant:   fixed matrix (param "matrix", default identity); any d.
    laminate1d: scalar profile along one axis times the identity (params
                "mean", "amplitude", "axis", "d").
    trig2d:     (mean + amplitude * cos(2 pi x1) cos(2 pi x2)) * Id, d = 2.
    rotating:   scalar laminate plus a bounded skew off-diagonal part, d = 2.
    """
    params = dict(params or {})
    if name == "constant":
        mat = np.asarray(params.get("matrix", np.eye(int(params.get("d", 2)))), dtype=float)
        d = mat.shape[0]
        if mat.shape != (d, d):
            raise ValueError(f"matrix must be square, got {mat.shape}")
        params["matrix"] = mat.tolist()
        ev = lambda x: np.broadcast_to(mat, (x.shape[0], d, d)).copy()
        scalar = np.allclose(mat, mat[0, 0] * np.eye(d))
        return _normalize(d, ev, "constant", params, monotone=scalar and d <= 2)
    if name == "laminate1d":
        d = int(params.get("d", 1))
        axis = int(params.get("axis", 0))
        if not 0 <= axis < d:
            raise ValueError(f"axis {axis} out of range for d={d}")
        prof = _profile(params)
        def ev(x, prof=prof, axis=axis, d=d):
            s = prof(x[:, axis])
            return s[:, None, None] * np.eye(d)
        return _normalize(d, ev, "laminate1d", params, monotone=d <= 2)
    if name == "trig2d":
        amp = float(params.get("amplitude", 1.0))
        mean = float(params.get("mean", 2.0))
        if mean - abs(amp) <= 0:
            raise EllipticityError("trig2d parameters violate ellipticity")
        def ev(x, amp=amp, mean=mean):
            s = mean + amp * np.cos(2 * np.pi * x[:, 0]) * np.cos(2 * np.pi * x[:, 1])
            return s[:, None, None] * np.eye(2)
        return _normalize(2, ev, "trig2d", params, monotone=True)
    if name == "rotating":
        # scalar base with a skew part; the skew part never affects x.a(x)x
        base_mean = float(params.get("mean", 2.0))
        base_amp = float(params.get("amplitude", 1.0))
        skew = float(params.get("skew", 0.5))
        if base_mean - abs(base_amp) <= 0:
            raise EllipticityError("rotating parameters violate ellipticity")
        def ev(x, m=base_mean, a=base_amp, s=skew):
            n = x.shape[0]
            out = np.zeros((n, 2, 2))
            diag = m + a * np.cos(2 * np.pi * x[:, 0])
            off = s * np.sin(2 * np.pi * x[:, 1])
            out[:, 0, 0] = diag
            out[:, 1, 1] = diag
            out[:, 0, 1] = off
            out[:, 1, 0] = -off
            return out
        return _normalize(2, ev, "rotating", params, monotone=False)
    raise ValueError(f"unknown gallery field '{name}'; choose from {GALLERY_NAMES}")


def sample_field(f: CoefficientField, n: int) -> GridField:
    """Midpoint sample on an N^d cell grid, with measured ellipticity bounds."""
    if n < 2:
        raise ValueError("resolution must be >= 2")
    pts = _cell_center_grid(f.dim, n)
    vals = f.evaluator(pts).reshape(tuple([n] * f.dim) + (f.dim, f.dim))
    lam_min, lam_max = _sym_eig_bounds(vals.reshape(-1, f.dim, f.dim))
    return GridField(f.dim, n, vals, lam_min, lam_max, metadata=f.metadata())


def ellipticity_bounds(g: GridField):
    """(lambda_min, Lambda_est): extreme symmetric-part eigenvalue and operator norm."""
    return _sym_eig_bounds(g.flat_values())


def field_from_grid_data(dim: int, n: int, blocks: np.ndarray, metadata=None) -> GridField:
    """Wrap raw per-cell d x d blocks (row-major cell order) as a GridField."""
    blocks = np.asarray(blocks, dtype=float).reshape(tuple([n] * dim) + (dim, dim))
    lam_min, lam_max = _sym_eig_bounds(blocks.reshape(-1, dim, dim))
    if lam_min <= 0:
        raise EllipticityError(f"grid data not elliptic: lambda_min = {lam_min:.3e}")
    scale = 1.0 / lam_min
    meta = dict(metadata or {})
    meta.setdefault("name", "grid")
    meta["scale"] = scale
    return GridField(dim, n, scale * blocks, 1.0, scale * lam_max, metadata=meta)


def load_field_spec(spec, resolution=None):
    """Load a field from a JSON document (path, string or dict).

    Gallery form:  {"name": ..., "d": ..., "params": {...}}
    Grid form:     {"grid": {"N": ..., "d": ..., "data_path": ...}} where the
    file holds raw little-endian float64 d x d blocks in row-major cell order.

    Returns a CoefficientField for the gallery form and a GridField for the
    grid form (or, with ``resolution`` given, always a GridField).
    """
    if isinstance(spec, (str, bytes)):
        import os
        if os.path.exists(spec):
            with open(spec) as fh:
                spec = json.load(fh)
        else:
            spec = json.loads(spec)
    if "grid" in spec:
        g = spec["grid"]
        raw = np.fromfile(g["data_path"], dtype="<f8")
        n, d = int(g["N"]), int(g["d"])
        expected = n ** d * d * d
        if raw.size != expected:
            raise ValueError(f"grid file has {raw.size} floats, expected {expected}")
        return field_from_grid_data(d, n, raw, metadata={"name": "grid", "source": g["data_path"]})
    params = dict(spec.get("params", {}))
    if "d" in spec:
        params.setdefault("d", spec["d"])
    f = gallery_field(spec["name"], params)
    if resolution is not None:
        return sample_field(f, resolution)
    return f
