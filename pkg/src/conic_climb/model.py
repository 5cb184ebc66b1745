"""Finite-dimensional two-control Hamiltonian families H(u) = H0 + u1*H1 + u2*H2.

Models are stored as dense real symmetric matrices.  Besides the three
builtin families, models can be assembled from sampled potentials on
[0, pi] via a Dirichlet sine-basis Galerkin projection, or loaded from
the JSON ``ModelFile`` format::

    {"schema": "conic-climb/model/1", "dim": n,
     "h0": [...n*n...], "h1": [...], "h2": [...], "metadata": {...}}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy.integrate import simpson

SCHEMA = "conic-climb/model/1"
SYMMETRY_RTOL = 1e-12

Potential = Union[None, float, np.ndarray, Sequence[float], Callable[[np.ndarray], np.ndarray]]


class ModelError(ValueError):
    """Invalid model data (shape, symmetry, parse or sampling errors)."""


@dataclass(frozen=True)
class ControlPoint:
    u1: float
    u2: float

    def __post_init__(self):
        if not (math.isfinite(self.u1) and math.isfinite(self.u2)):
            raise ModelError(f"control point must be finite, got ({self.u1}, {self.u2})")

    def __array__(self, dtype=None, copy=None):
        return np.array([self.u1, self.u2], dtype=dtype)

    def __iter__(self):
        yield self.u1
        yield self.u2


def as_point(u) -> np.ndarray:
    """Coerce a ControlPoint / pair / array into a float array of shape (2,)."""
    arr = np.asarray(u, dtype=float).reshape(-1)
    if arr.shape != (2,):
        raise ModelError(f"control point must have two components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError("control point must be finite")
    return arr


def _check_symmetric(name: str, mat: np.ndarray) -> None:
    scale = max(float(np.max(np.abs(mat))), 1.0)
    asym = float(np.max(np.abs(mat - mat.T))) if mat.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        raise ModelError(f"matrix {name} is not symmetric (max |{name} - {name}^T| = {asym:.3e})")


@dataclass(frozen=True, eq=False)
class OperatorTriple:
    """Real symmetric triple (H0, H1, H2) of size dim x dim, immutable after construction."""

    h0: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        mats = []
        for label in ("h0", "h1", "h2"):
            m = np.array(getattr(self, label), dtype=float, copy=True)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ModelError(f"matrix {label} must be square, got shape {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ModelError(f"matrix {label} has non-finite entries")
            mats.append(m)
        dims = {m.shape[0] for m in mats}
        if len(dims) != 1:
            raise ModelError(f"dimension mismatch between h0, h1, h2: {[m.shape for m in mats]}")
        if mats[0].shape[0] < 2:
            raise ModelError("dim must be at least 2")
        for label, m in zip(("h0", "h1", "h2"), mats):
            _check_symmetric(label, m)
            m.setflags(write=False)
            object.__setattr__(self, label, m)

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def controls(self) -> tuple[np.ndarray, np.ndarray]:
        return self.h1, self.h2

    def lipschitz(self) -> float:
        """Eigenvalue Lipschitz constant ||H1||_2 + ||H2||_2 w.r.t. |du|."""
        return float(np.linalg.norm(self.h1, 2) + np.linalg.norm(self.h2, 2))

    def perturbed(self, d0, d1, d2, name: str | None = None) -> "OperatorTriple":
        return OperatorTriple(self.h0 + d0, self.h1 + d1, self.h2 + d2,
                              name=name or f"{self.name}~", metadata=dict(self.metadata))

    def __eq__(self, other):
        if not isinstance(other, OperatorTriple):
            return NotImplemented
        return (self.dim == other.dim and np.array_equal(self.h0, other.h0)
                and np.array_equal(self.h1, other.h1) and np.array_equal(self.h2, other.h2))

    def __hash__(self):
        return hash((self.dim, self.h0.tobytes(), self.h1.tobytes(), self.h2.tobytes()))

    def __repr__(self):
        return f"OperatorTriple(name={self.name!r}, dim={self.dim})"


def assemble(model: OperatorTriple, u) -> np.ndarray:
    """Return H0 + u1*H1 + u2*H2."""
    u1, u2 = as_point(u)
    return model.h0 + u1 * model.h1 + u2 * model.h2


def assemble_many(model: OperatorTriple, us: np.ndarray) -> np.ndarray:
    """Batched assemble for points of shape (m, 2); returns (m, dim, dim)."""
    us = np.asarray(us, dtype=float).reshape(-1, 2)
    return (model.h0[None]
            + us[:, 0, None, None] * model.h1[None]
            + us[:, 1, None, None] * model.h2[None])


# ---------------------------------------------------------------------------
# Galerkin projection on [0, pi] with Dirichlet boundary conditions

def _sample(v: Potential, x: np.ndarray, label: str) -> np.ndarray:
    if v is None:
        return np.zeros_like(x)
    if callable(v):
        out = np.broadcast_to(np.asarray(v(x), dtype=float), x.shape).copy()
    elif np.isscalar(v):
        out = np.full_like(x, float(v))
    else:
        out = np.asarray(v, dtype=float).reshape(-1)
        if out.shape != x.shape:
            raise ModelError(f"potential {label} has {out.size} samples, expected {x.size} "
                             "(uniform grid on [0, pi] including endpoints)")
    if not np.all(np.isfinite(out)):
        raise ModelError(f"potential {label} has non-finite samples")
    return out


def build_galerkin(n_modes: int, v0: Potential = None, v1: Potential = None, v2: Potential = None,
                   quad_points: int | None = None, name: str = "galerkin") -> OperatorTriple:
    """Project -d2/dx2 + V0 + u1*V1 + u2*V2 on the first ``n_modes`` Dirichlet sine modes.

    Potentials are samples on the uniform grid ``linspace(0, pi, quad_points)``
    (callables and constants are sampled on that grid).  Matrix elements
    <chi_j, V chi_k> with chi_k = sqrt(2/pi) sin(kx) use composite Simpson
    quadrature; the results are symmetrized by averaging.
    """
    if n_modes < 2:
        raise ModelError("n_modes must be >= 2")
    if quad_points is None:
        lengths = [np.size(v) for v in (v0, v1, v2)
                   if v is not None and not callable(v) and not np.isscalar(v)]
        quad_points = lengths[0] if lengths else 64 * n_modes + 1
    if quad_points < 4 * n_modes:
        raise ModelError(f"quad_points={quad_points} too small; need >= 4*n_modes = {4 * n_modes}")
    x = np.linspace(0.0, np.pi, quad_points)
    k = np.arange(1, n_modes + 1)
    chi = np.sqrt(2.0 / np.pi) * np.sin(np.outer(k, x))  # (n, q)

    def project(v):
        integrand = chi[:, None, :] * chi[None, :, :] * v[None, None, :]
        m = simpson(integrand, x=x, axis=-1)
        return 0.5 * (m + m.T)

    pots = [_sample(v, x, lbl) for v, lbl in ((v0, "v0"), (v1, "v1"), (v2, "v2"))]
    h0 = np.diag(k.astype(float) ** 2) + project(pots[0])
    meta = {"n_modes": int(n_modes), "quad_points": int(quad_points), "domain": [0.0, math.pi]}
    return OperatorTriple(h0, project(pots[1]), project(pots[2]), name=name, metadata=meta)


# ---------------------------------------------------------------------------
# builtin families

def _pauli2() -> OperatorTriple:
    sz = np.diag([1.0, -1.0])
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    return OperatorTriple(np.zeros((2, 2)), sz, sx, name="pauli2",
                          metadata={"description": "u1*sigma_z + u2*sigma_x, conical at the origin"})


def _three_level() -> OperatorTriple:
    # On the u1 axis H is diagonal with entries (-u1, 0, u1/2 - 2): levels (a, b)
    # cross at u1 = 0 (upper pair) and (a, c) at u1 = 4/3 (lower pair).  H2 couples
    # all pairs, and with equal nonzero off-diagonals no degeneracy exists off-axis.
    h0 = np.diag([0.0, 0.0, -2.0])
    h1 = np.diag([-1.0, 0.0, 0.5])
    h2 = np.ones((3, 3)) - np.eye(3)
    return OperatorTriple(h0, h1, h2, name="three_level",
                          metadata={"description": "3-level family; (l0,l1) crossing near (4/3,0), "
                                                   "(l1,l2) crossing near (0,0)"})


def _galerkin_demo() -> OperatorTriple:
    return build_galerkin(
        6,
        v0=lambda x: 0.5 * np.cos(2 * x),
        v1=lambda x: 3.0 * np.cos(x),
        v2=lambda x: 3.0 * (x / np.pi - 0.5) ** 2,
        quad_points=1025,
        name="galerkin_demo",
    )


BUILTINS: dict[str, Callable[[], OperatorTriple]] = {
    "pauli2": _pauli2,
    "three_level": _three_level,
    "galerkin_demo": _galerkin_demo,
}


def builtin(name: str) -> OperatorTriple:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ModelError(f"unknown builtin model {name!r}; available: {sorted(BUILTINS)}") from None
    return factory()


def resolve(ref: str) -> OperatorTriple:
    """Resolve ``builtin:<name>`` or a path to a model file."""
    if ref.startswith("builtin:"):
        return builtin(ref.split(":", 1)[1])
    if ref in BUILTINS:
        return builtin(ref)
    return load_model(ref)


# ---------------------------------------------------------------------------
# ModelFile I/O

def model_to_dict(model: OperatorTriple) -> dict:
    meta = dict(model.metadata)
    if model.name:
        meta.setdefault("name", model.name)
    return {
        "schema": SCHEMA,
        "dim": model.dim,
        "h0": model.h0.ravel().tolist(),
        "h1": model.h1.ravel().tolist(),
        "h2": model.h2.ravel().tolist(),
        "metadata": meta,
    }


def model_from_dict(data: dict, source: str = "<dict>") -> OperatorTriple:
    if not isinstance(data, dict):
        raise ModelError(f"{source}: top level must be a JSON object")
    if data.get("schema") != SCHEMA:
        raise ModelError(f"{source}: field 'schema' must be {SCHEMA!r}, got {data.get('schema')!r}")
    dim = data.get("dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 2:
        raise ModelError(f"{source}: field 'dim' must be an integer >= 2, got {dim!r}")
    mats = {}
    for label in ("h0", "h1", "h2"):
        if label not in data:
            raise ModelError(f"{source}: missing field {label!r}")
        raw = data[label]
        if not isinstance(raw, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                for v in raw):
            raise ModelError(f"{source}: field {label!r} must be a flat array of numbers")
        if len(raw) != dim * dim:
            raise ModelError(f"{source}: field {label!r} has length {len(raw)}, expected dim^2 = {dim * dim}")
        mats[label] = np.array(raw, dtype=float).reshape(dim, dim)
    meta = data.get("metadata") or {}
    if not isinstance(meta, dict):
        raise ModelError(f"{source}: field 'metadata' must be an object")
    try:
        return OperatorTriple(mats["h0"], mats["h1"], mats["h2"], name=str(meta.get("name", "")),
                              metadata=meta)
    except ModelError as exc:
        raise ModelError(f"{source}: {exc}") from None


def save_model(model: OperatorTriple, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1), encoding="utf-8")


def load_model(path) -> OperatorTriple:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return model_from_dict(data, source=str(path))
