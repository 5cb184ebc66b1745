"""Eigendecomposition, separated-band certification, projectors and eigenvector tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import OperatorTriple, as_point, assemble, assemble_many

OVERLAP_MIN = 0.9
SIMPLE_RTOL = 1e-8


class SpectralError(RuntimeError):
    pass


class GapNotCertified(SpectralError):
    def __init__(self, msg, worst_point=None, margin=None):
        super().__init__(msg)
        self.worst_point = worst_point
        self.margin = margin


class DegenerateAlongCurve(SpectralError):
    def __init__(self, index, parameter, gap):
        super().__init__(f"level {index} not simple at curve parameter {parameter} (gap {gap:.3e})")
        self.index = index
        self.parameter = parameter
        self.gap = gap


class TrackingLost(SpectralError):
    def __init__(self, parameter, overlap):
        super().__init__(f"eigenvector tracking lost at curve parameter {parameter}: |overlap| = {overlap:.4f}")
        self.parameter = parameter
        self.overlap = overlap


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-|.| component of each column positive (first index wins ties).

    Works on a single (d, k) matrix or a stack (m, d, k).
    """
    v = np.asarray(vectors)
    idx = np.argmax(np.abs(v), axis=-2)
    lead = np.take_along_axis(v, idx[..., None, :], axis=-2)
    sign = np.where(lead < 0, -1.0, 1.0)
    return v * sign


@dataclass(frozen=True, eq=False)
class EigenSystem:
    values: np.ndarray
    vectors: np.ndarray
    u: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def gap(self, j: int) -> float:
        return float(self.values[j + 1] - self.values[j])

    def vector(self, i: int) -> np.ndarray:
        return self.vectors[:, i]


def eigensystem(model: OperatorTriple, u) -> EigenSystem:
    u = as_point(u)
    h = assemble(model, u)
    if not np.all(np.isfinite(h)):
        raise SpectralError(f"non-finite Hamiltonian at u={u}")
    w, v = np.linalg.eigh(h)
    return EigenSystem(w, fix_signs(v), u)


def eigvals_many(model: OperatorTriple, us) -> np.ndarray:
    return np.linalg.eigvalsh(assemble_many(model, us))


def eigh_many(model: OperatorTriple, us) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(assemble_many(model, us))
    return w, fix_signs(v)


# ---------------------------------------------------------------------------
# control-space regions

@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    def contains(self, u, pad: float = 0.0) -> bool:
        return float(np.hypot(*(as_point(u) - np.asarray(self.center)))) <= self.radius + pad

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def bounds(self):
        cx, cy = self.center
        r = self.radius
        return (cx - r, cx + r), (cy - r, cy + r)

    def to_json(self) -> dict:
        return {"kind": "disc", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Rect:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def contains(self, u, pad: float = 0.0) -> bool:
        p = as_point(u)
        return bool(np.all(p >= np.asarray(self.lo) - pad) and np.all(p <= np.asarray(self.hi) + pad))

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.hi[0] - self.lo[0], self.hi[1] - self.lo[1]))

    def bounds(self):
        return (self.lo[0], self.hi[0]), (self.lo[1], self.hi[1])

    def to_json(self) -> dict:
        return {"kind": "rect", "lo": list(self.lo), "hi": list(self.hi)}


def region_from_json(data: dict):
    if data["kind"] == "disc":
        return Disc(tuple(data["center"]), float(data["radius"]))
    if data["kind"] == "rect":
        return Rect(tuple(data["lo"]), tuple(data["hi"]))
    raise ValueError(f"unknown region kind {data['kind']!r}")


def region_grid(region, density: float) -> tuple[np.ndarray, float]:
    """Square grid with spacing 1/density covering the bounding box of ``region``.

    Every point of the region lies within h/sqrt(2) of a grid node.
    """
    h = 1.0 / density
    (x0, x1), (y0, y1) = region.bounds()
    nx = max(int(math.ceil((x1 - x0) / h)), 1)
    ny = max(int(math.ceil((y1 - y0) / h)), 1)
    xs = x0 + h * np.arange(nx + 1)
    ys = y0 + h * np.arange(ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), h


# ---------------------------------------------------------------------------
# separated bands

@dataclass(frozen=True)
class Band:
    lo: int
    hi: int
    gamma: float
    region: object = None
    grid_density: float | None = None
    unbounded: bool = False

    def __post_init__(self):
        if not (0 <= self.lo <= self.hi):
            raise ValueError(f"invalid band indices [{self.lo}, {self.hi}]")
        if not self.gamma > 0:
            raise ValueError("band gap gamma must be positive")

    @property
    def indices(self) -> list[int]:
        return list(range(self.lo, self.hi + 1))

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def to_json(self) -> dict:
        return {
            "indices": self.indices,
            "region": None if self.region is None else self.region.to_json(),
            "gamma": None if self.unbounded else self.gamma,
            "unbounded": self.unbounded,
            "grid_density": self.grid_density,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Band":
        idx = data["indices"]
        region = None if data.get("region") is None else region_from_json(data["region"])
        unbounded = bool(data.get("unbounded")) or data.get("gamma") is None
        return cls(min(idx), max(idx), math.inf if unbounded else float(data["gamma"]),
                   region, data.get("grid_density"), unbounded)


def _band_bounds(band_indices) -> tuple[int, int]:
    idx = sorted(int(i) for i in band_indices)
    if not idx or idx != list(range(idx[0], idx[-1] + 1)):
        raise ValueError(f"band indices must be a contiguous range, got {band_indices}")
    return idx[0], idx[-1]


def band_margin(values: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Distance of the complement spectrum to [min band, max band]; works on (..., dim)."""
    below = values[..., lo] - values[..., lo - 1] if lo > 0 else np.full(values.shape[:-1], np.inf)
    above = values[..., hi + 1] - values[..., hi] if hi + 1 < values.shape[-1] else np.full(values.shape[:-1], np.inf)
    return np.minimum(below, above)


def certify_band(model: OperatorTriple, band_indices: Sequence[int], region, grid_density: float) -> Band:
    """Certify that the band is separated from the rest of the spectrum on ``region``.

    gamma = min over grid of the band margin minus the Lipschitz allowance
    sqrt(2) * (||H1|| + ||H2||) * h, where h is the grid spacing.
    """
    if grid_density < 2:
        raise ValueError("grid_density must be >= 2 points per unit length")
    lo, hi = _band_bounds(band_indices)
    if hi >= model.dim:
        raise ValueError(f"band index {hi} out of range for dim {model.dim}")
    if lo == 0 and hi == model.dim - 1:
        return Band(lo, hi, math.inf, region, grid_density, unbounded=True)
    pts, h = region_grid(region, grid_density)
    values = eigvals_many(model, pts)
    margins = band_margin(values, lo, hi)
    k = int(np.argmin(margins))
    allowance = math.sqrt(2.0) * model.lipschitz() * h
    gamma = float(margins[k]) - allowance
    if not gamma > 0:
        raise GapNotCertified(
            f"band {lo}..{hi} not certified: worst grid point {pts[k].tolist()} has margin "
            f"{margins[k]:.4e} <= Lipschitz allowance {allowance:.4e}",
            worst_point=pts[k], margin=float(margins[k]))
    return Band(lo, hi, gamma, region, grid_density)


def projector(es: EigenSystem, band) -> np.ndarray:
    """Spectral projector sum_{i in band} v_i v_i^T."""
    idx = band.indices if isinstance(band, Band) else sorted(band)
    v = es.vectors[:, idx]
    p = v @ v.T
    return 0.5 * (p + p.T)


# ---------------------------------------------------------------------------
# tracking along sampled curves

@dataclass(frozen=True, eq=False)
class TrackedFrame:
    eig: EigenSystem
    parameter: float
    signs: np.ndarray = field(repr=False)
    indices: tuple = ()

    @property
    def vectors(self) -> np.ndarray:
        """Sign-aligned eigenvectors of the tracked indices (columns)."""
        return self.eig.vectors[:, list(self.indices)] * self.signs


def simple_tolerance(model: OperatorTriple, h: np.ndarray) -> float:
    return SIMPLE_RTOL * max(float(np.linalg.norm(h, 2)), model.lipschitz())


def track_along(model: OperatorTriple, samples, band, parameters=None,
                simple_tol: float | None = None, overlap_min: float = OVERLAP_MIN) -> list[TrackedFrame]:
    """Eigenpairs of ``band`` along curve samples with signs aligned step to step.

    Raises DegenerateAlongCurve if a tracked level is not simple and
    TrackingLost if consecutive same-index overlaps drop to ``overlap_min``.
    """
    idx = band.indices if isinstance(band, Band) else sorted(int(i) for i in band)
    pts = np.asarray(samples, dtype=float).reshape(-1, 2)
    params = np.arange(len(pts), dtype=float) if parameters is None else np.asarray(parameters, float)
    hs = assemble_many(model, pts)
    w, v = np.linalg.eigh(hs)
    v = fix_signs(v)
    frames: list[TrackedFrame] = []
    prev = None
    for k in range(len(pts)):
        tol = simple_tolerance(model, hs[k]) if simple_tol is None else simple_tol
        for i in idx:
            gaps = []
            if i > 0:
                gaps.append(w[k, i] - w[k, i - 1])
            if i + 1 < model.dim:
                gaps.append(w[k, i + 1] - w[k, i])
            g = min(gaps) if gaps else math.inf
            if not g > tol:
                raise DegenerateAlongCurve(i, float(params[k]), float(g))
        cur = v[k][:, idx]
        signs = np.ones(len(idx))
        if prev is not None:
            ov = np.einsum("ij,ij->j", prev, cur)
            worst = int(np.argmin(np.abs(ov)))
            if abs(ov[worst]) <= overlap_min:
                raise TrackingLost(float(params[k]), float(abs(ov[worst])))
            signs = np.where(ov < 0, -1.0, 1.0)
        es = EigenSystem(w[k], v[k], pts[k])
        frame = TrackedFrame(es, float(params[k]), signs, tuple(idx))
        frames.append(frame)
        prev = cur * signs
    return frames
