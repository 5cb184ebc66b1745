"""Conicity matrix, conical-intersection certificates and the rotation law Xi(alpha).

For an orthonormal pair (psi1, psi2) the conicity matrix is

    M = [[<psi1,H1 psi2>, (<psi2,H1 psi2> - <psi1,H1 psi1>)/2],
         [<psi1,H2 psi2>, (<psi2,H2 psi2> - <psi1,H2 psi1>)/2]]

and a double eigenvalue is conical iff det M != 0.  Approaching the
intersection along direction alpha, the limiting eigenbasis is the
reference basis rotated by Xi(alpha), where Xi solves

    (cos a, sin a) . M . (cos 2Xi, sin 2Xi)^T = 0,   Xi(0) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .model import OperatorTriple, as_point, assemble
from .spectral import Disc, eigensystem, fix_signs

ORTHONORMAL_TOL = 1e-10
DEGENERACY_RTOL = 1e-8
CONICAL_RTOL = 1e-6
TWO_PI = 2.0 * math.pi


class ConicalError(RuntimeError):
    pass


class NotDegenerate(ConicalError):
    def __init__(self, gap, tol):
        super().__init__(f"not a degeneracy: gap {gap:.3e} >= degeneracy_tol {tol:.3e}")
        self.gap = gap
        self.tol = tol


class NotConical(ConicalError):
    def __init__(self, abs_det, tol):
        super().__init__(f"intersection is not conical: |det M| = {abs_det:.3e} <= conical_tol {tol:.3e}")
        self.abs_det = abs_det
        self.tol = tol


class LeftRegion(ConicalError):
    def __init__(self, point):
        super().__init__(f"trajectory left the region at u = {np.asarray(point).tolist()}")
        self.point = np.asarray(point)


class NoDescent(ConicalError):
    def __init__(self, point, rate):
        super().__init__(f"no gap descent at u = {np.asarray(point).tolist()} (F = {rate:.3e})")
        self.point = np.asarray(point)
        self.rate = rate


class MaxSteps(ConicalError):
    pass


@dataclass(frozen=True)
class ConicityMatrix:
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(2, 2)
        if not np.all(np.isfinite(m)):
            raise ValueError("conicity matrix has non-finite entries")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @property
    def det(self) -> float:
        m = self.m
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    def smallest_singular_value(self) -> float:
        return float(np.linalg.svd(self.m, compute_uv=False)[-1])


def _conicity(h1, h2, psi1, psi2) -> np.ndarray:
    def row(h):
        hp2 = h @ psi2
        return [psi1 @ hp2, 0.5 * (psi2 @ hp2 - psi1 @ (h @ psi1))]
    return np.array([row(h1), row(h2)])


def conicity_matrix(model: OperatorTriple, psi1, psi2) -> ConicityMatrix:
    psi1 = np.asarray(psi1, dtype=float).reshape(-1)
    psi2 = np.asarray(psi2, dtype=float).reshape(-1)
    if psi1.shape != (model.dim,) or psi2.shape != (model.dim,):
        raise ValueError(f"vectors must have length {model.dim}")
    gram = np.array([[psi1 @ psi1, psi1 @ psi2], [psi2 @ psi1, psi2 @ psi2]])
    err = float(np.max(np.abs(gram - np.eye(2))))
    if err > ORTHONORMAL_TOL:
        raise ValueError(f"psi1, psi2 are not orthonormal (Gram deviation {err:.3e})")
    return ConicityMatrix(_conicity(model.h1, model.h2, psi1, psi2))


def degeneracy_tol(model: OperatorTriple, u) -> float:
    # ||H(u)|| vanishes at the origin of pauli2, so the control scale is a floor
    return DEGENERACY_RTOL * max(float(np.linalg.norm(assemble(model, u), 2)), model.lipschitz())


def conical_tol(model: OperatorTriple) -> float:
    return CONICAL_RTOL * model.lipschitz() ** 2


# ---------------------------------------------------------------------------
# pair data shared with the non-mixing field

@dataclass(frozen=True, eq=False)
class PairData:
    """Local data of the level pair (j, j+1) at a regular point u."""

    u: np.ndarray
    gap: float
    phi_j: np.ndarray
    phi_k: np.ndarray
    m: np.ndarray
    field: np.ndarray  # gap-decreasing non-mixing vector
    rate: float        # F(u) = -(d gap / dt) along ``field``


def pair_data(model: OperatorTriple, j: int, u) -> PairData:
    es = eigensystem(model, u)
    a, b = es.vectors[:, j], es.vectors[:, j + 1]
    m = _conicity(model.h1, model.h2, a, b)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    raw = np.array([-m[1, 0], m[0, 0]])
    # d(gap) along raw equals 2 det M; flip so that the gap decreases
    sign = -1.0 if det > 0 else 1.0
    return PairData(es.u, es.gap(j), a, b, m, sign * raw, 2.0 * abs(det))


# ---------------------------------------------------------------------------
# certified intersections

@dataclass(frozen=True, eq=False)
class Intersection:
    point: np.ndarray
    j: int
    cone_constant: float
    limit_basis: np.ndarray  # (dim, 2): phi0_j, phi0_{j+1}
    conicity: ConicityMatrix
    branch: int = 1
    gap: float = 0.0
    ident: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def band(self) -> tuple[int, int]:
        return (self.j, self.j + 1)

    @property
    def det(self) -> float:
        return self.conicity.det

    # -- rotation law -----------------------------------------------------
    def _w(self, alpha):
        a = np.asarray(alpha, dtype=float)
        return np.stack([np.cos(a), np.sin(a)], axis=-1) @ self.conicity.m

    def xi(self, alpha):
        """Xi(alpha), continuous branch with Xi(0)=0; range [0,pi) if det M > 0 else (-pi,0]."""
        a = np.mod(np.asarray(alpha, dtype=float), TWO_PI)
        w0 = self._w(0.0)
        w = self._w(a)
        cross = w0[0] * w[..., 1] - w0[1] * w[..., 0]
        dot = w0[0] * w[..., 0] + w0[1] * w[..., 1]
        d = np.arctan2(cross, dot)
        if self.det > 0:
            d = np.mod(d, TWO_PI)
            near_wrap = d > TWO_PI - 1e-9
            d = np.where(near_wrap & (a < math.pi), 0.0, d)
        else:
            d = np.mod(d, -TWO_PI)
            near_wrap = d < -TWO_PI + 1e-9
            d = np.where(near_wrap & (a < math.pi), 0.0, d)
        out = 0.5 * d
        return float(out) if np.ndim(out) == 0 else out

    def xi_range(self) -> tuple[float, float]:
        return (0.0, math.pi) if self.det > 0 else (-math.pi, 0.0)

    def xi_inv(self, x):
        """Inverse of Xi; ``x`` is reduced into the branch range modulo pi first."""
        x = np.asarray(x, dtype=float)
        lo, _ = self.xi_range()
        x = lo + np.mod(x - lo, math.pi)
        w0 = self._w(0.0)
        c, s = np.cos(2 * x), np.sin(2 * x)
        rot = np.stack([c * w0[0] - s * w0[1], s * w0[0] + c * w0[1]], axis=-1)
        v = rot @ np.linalg.inv(self.conicity.m)  # solves M^T v = rot
        out = np.mod(np.arctan2(v[..., 1], v[..., 0]), TWO_PI)
        out = np.where(out >= TWO_PI, 0.0, out)
        return float(out) if np.ndim(out) == 0 else out

    def xi_residual(self, alpha) -> np.ndarray:
        a = np.asarray(alpha, dtype=float)
        t = 2.0 * np.asarray(self.xi(a))
        w = self._w(a)
        return w[..., 0] * np.cos(t) + w[..., 1] * np.sin(t)

    def limit_basis_at(self, alpha) -> tuple[np.ndarray, np.ndarray]:
        x = self.xi(alpha)
        p, q = self.limit_basis[:, 0], self.limit_basis[:, 1]
        c, s = math.cos(x), math.sin(x)
        return c * p + s * q, -s * p + c * q

    def with_branch(self, branch: int) -> "Intersection":
        if branch == self.branch:
            return self
        basis = self.limit_basis.copy()
        basis[:, 1] *= -1.0
        m = self.conicity.m.copy()
        m[:, 0] *= -1.0
        return Intersection(self.point, self.j, self.cone_constant, basis, ConicityMatrix(m),
                            branch, self.gap, self.ident, dict(self.meta))

    def to_json(self) -> dict:
        return {
            "id": self.ident,
            "point": self.point.tolist(),
            "band": list(self.band),
            "det_M": self.det,
            "conicity": self.conicity.m.tolist(),
            "cone_constant": self.cone_constant,
            "limit_basis": self.limit_basis.T.tolist(),
            "branch": self.branch,
            "gap": self.gap,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Intersection":
        return cls(np.asarray(data["point"], float), int(data["band"][0]), float(data["cone_constant"]),
                   np.asarray(data["limit_basis"], float).T, ConicityMatrix(np.asarray(data["conicity"])),
                   int(data.get("branch", 1)), float(data.get("gap", 0.0)), data.get("id", ""))


def _limit_basis(model: OperatorTriple, vectors: np.ndarray, branch: int):
    """Basis of the degenerate plane anchored to the alpha = 0 ray (diagonalizes H1 there)."""
    r = vectors.T @ model.h1 @ vectors
    _, c = np.linalg.eigh(0.5 * (r + r.T))
    basis = vectors @ c
    basis[:, :1] = fix_signs(basis[:, :1])
    m = _conicity(model.h1, model.h2, basis[:, 0], basis[:, 1])
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if (det > 0) != (branch > 0):
        basis[:, 1] *= -1.0
        m[:, 0] *= -1.0
    return basis, ConicityMatrix(m)


def cone_constant(model: OperatorTriple, point, j: int, radii=None, rays: int = 64) -> float:
    """Empirical lower bound c of gap(u + r v) / r over sampled rays and radii."""
    u = as_point(point)
    radii = np.geomspace(1e-4, 1e-2, 5) if radii is None else np.atleast_1d(radii)

    def slope(theta, r):
        es = eigensystem(model, u + r * np.array([math.cos(theta), math.sin(theta)]))
        return es.gap(j) / r

    best = math.inf
    thetas = np.linspace(0.0, TWO_PI, rays, endpoint=False)
    step = TWO_PI / rays
    for r in radii:
        vals = [slope(t, r) for t in thetas]
        k = int(np.argmin(vals))
        res = minimize_scalar(lambda t: slope(t, r), bounds=(thetas[k] - step, thetas[k] + step),
                              method="bounded", options={"xatol": 1e-10})
        best = min(best, min(vals), float(res.fun))
    return best


def is_conical(model: OperatorTriple, point, j: int | None = None, branch: int = 1,
               cone_radii=None, ident: str = "") -> Intersection:
    """Certify a candidate degeneracy of levels (j, j+1) and return the Intersection."""
    u = as_point(point)
    es = eigensystem(model, u)
    gaps = np.diff(es.values)
    if j is None:
        j = int(np.argmin(gaps))
    if not 0 <= j < model.dim - 1:
        raise ValueError(f"pair index j={j} out of range for dim {model.dim}")
    tol = degeneracy_tol(model, u)
    if not gaps[j] < tol:
        raise NotDegenerate(float(gaps[j]), tol)
    basis, cm = _limit_basis(model, es.vectors[:, j:j + 2], branch)
    ctol = conical_tol(model)
    if not abs(cm.det) > ctol:
        raise NotConical(abs(cm.det), ctol)
    c = cone_constant(model, u, j, radii=cone_radii)
    return Intersection(u, j, c, basis, cm, 1 if branch > 0 else -1, float(gaps[j]), ident)


# ---------------------------------------------------------------------------
# locating intersections

def newton_polish(model: OperatorTriple, j: int, u, tol: float, max_iter: int = 50, extra: int = 3):
    """Newton iteration on the 2x2 block: solve M^T du = (0, -gap/2) in the current eigenbasis.

    After the gap drops below ``tol`` a few extra steps are taken (while the gap
    keeps decreasing) so the point is accurate to rounding level.
    """
    u = as_point(u)
    best_u, best_gap = u, math.inf
    done = 0
    for _ in range(max_iter):
        pd = pair_data(model, j, u)
        if pd.gap < best_gap:
            best_u, best_gap = u, pd.gap
        elif best_gap < tol:
            break
        if best_gap < tol:
            done += 1
            if done > extra:
                break
        if pd.rate <= 0:
            if best_gap < tol:
                break
            raise NoDescent(u, pd.rate)
        u = u + np.linalg.solve(pd.m.T, np.array([0.0, -0.5 * pd.gap]))
    if best_gap < tol:
        return best_u, best_gap
    raise MaxSteps(f"Newton polish did not reach gap < {tol:.3e} (gap {best_gap:.3e})")


def locate_intersection(model: OperatorTriple, j: int, seed, region=None, max_steps: int = 100000,
                        switch_gap: float | None = None, branch: int = 1, ident: str = "",
                        rate_floor: float | None = None) -> Intersection:
    """Follow the non-mixing flow from ``seed`` down the gap, then polish by Newton."""
    u0 = as_point(seed)
    if region is None:
        region = Disc(tuple(u0), 1.0)
    if not region.contains(u0):
        raise LeftRegion(u0)
    scale = model.lipschitz()
    switch_gap = 1e-3 * scale if switch_gap is None else switch_gap
    rate_floor = 1e-12 * scale ** 2 if rate_floor is None else rate_floor
    tol = degeneracy_tol(model, u0)
    pd = pair_data(model, j, u0)
    if pd.rate <= rate_floor:
        raise NoDescent(u0, pd.rate)
    u = u0
    if pd.gap > switch_gap:
        def rhs(_t, y):
            d = pair_data(model, j, y)
            if d.rate <= rate_floor:
                raise NoDescent(y, d.rate)
            return d.field / d.rate  # unit gap decrease per unit time

        def reached(_t, y):
            return pair_data(model, j, y).gap - switch_gap
        reached.terminal = True
        reached.direction = -1

        def outside(_t, y):
            return 1.0 if region.contains(y) else -1.0
        outside.terminal = True

        t_max = 2.0 * pd.gap
        sol = solve_ivp(rhs, (0.0, t_max), u0, method="RK45", rtol=1e-8, atol=1e-10,
                        events=(reached, outside), max_step=max(t_max / 20, 1e-6))
        if sol.status == -1:
            raise MaxSteps(sol.message)
        if sol.t_events[1].size:
            raise LeftRegion(sol.y_events[1][0])
        if sol.y.shape[1] > max_steps:
            raise MaxSteps(f"flow exceeded {max_steps} steps")
        u = sol.y_events[0][0] if sol.t_events[0].size else sol.y[:, -1]
    u, _ = newton_polish(model, j, u, tol)
    if not region.contains(u):
        raise LeftRegion(u)
    return is_conical(model, u, j, branch=branch, ident=ident)


# ---------------------------------------------------------------------------
# structural stability

@dataclass
class StabilityReport:
    delta: float
    trials: int
    displacements: list
    abs_dets: list
    failures: list

    @property
    def success(self) -> bool:
        return not self.failures and len(self.displacements) == self.trials

    @property
    def max_displacement(self) -> float:
        return max(self.displacements) if self.displacements else math.nan

    @property
    def min_abs_det(self) -> float:
        return min(self.abs_dets) if self.abs_dets else math.nan

    def to_json(self) -> dict:
        return {"delta": self.delta, "trials": self.trials, "success": self.success,
                "max_displacement": self.max_displacement, "min_abs_det": self.min_abs_det,
                "failures": self.failures}


def random_symmetric(rng: np.random.Generator, dim: int, norm: float) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    a = a + a.T
    n = np.linalg.norm(a, 2)
    return a * (norm / n) if n > 0 else a


def stability_probe(model: OperatorTriple, intersection: Intersection, delta: float, trials: int,
                    seed: int = 0, region=None) -> StabilityReport:
    """Relocate the intersection under random symmetric perturbations of norm delta."""
    rng = np.random.default_rng(seed)
    if region is None:
        region = Disc(tuple(intersection.point), max(0.5, 100.0 * delta))
    disp, dets, fails = [], [], []
    for t in range(trials):
        d = [random_symmetric(rng, model.dim, delta) for _ in range(3)] if delta > 0 \
            else [np.zeros((model.dim, model.dim))] * 3
        pert = model.perturbed(*d)
        try:
            hit = locate_intersection(pert, intersection.j, intersection.point, region)
        except (ConicalError, ValueError) as exc:
            fails.append({"trial": t, "error": type(exc).__name__, "message": str(exc)})
            continue
        disp.append(float(np.hypot(*(hit.point - intersection.point))))
        dets.append(abs(hit.det))
    return StabilityReport(delta, trials, disp, dets, fails)
