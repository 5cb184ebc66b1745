"""The non-mixing vector field and its integral curves through conical intersections.

Along integral curves of the field the eigenvector of one level of the pair
(j, j+1) never picks up a component along the other, so the two-level
effective Hamiltonian stays diagonal.  Near an intersection u_bar the flow is
integrated in polar coordinates u = u_bar + rho (cos theta, sin theta), where
d theta / d rho is regular down to rho = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .conical import (ConicalError, Intersection, LeftRegion, MaxSteps, NoDescent, is_conical,
                      newton_polish, degeneracy_tol, pair_data)
from .model import OperatorTriple, as_point
from .spectral import eigensystem, eigvals_many

DEFAULT_SAMPLES = 10_000
KINDS = ("connector", "incoming", "outgoing")


class Degenerate(ConicalError):
    def __init__(self, point, gap):
        super().__init__(f"too close to a degeneracy at u = {np.asarray(point).tolist()} (gap {gap:.3e})")
        self.point = np.asarray(point)
        self.gap = gap


class PolarBreakdown(ConicalError):
    """The curve stopped moving radially, so the polar chart cannot continue it."""


# ---------------------------------------------------------------------------
# sampled curves

class CurveSegment:
    """Planar curve stored as arc-length samples with a cubic-spline interpolant."""

    def __init__(self, kind: str, s, points, end_data: dict | None = None):
        if kind not in KINDS:
            raise ValueError(f"segment kind must be one of {KINDS}, got {kind!r}")
        s = np.asarray(s, dtype=float).reshape(-1)
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if s.shape[0] != pts.shape[0] or s.shape[0] < 1:
            raise ValueError("samples and parameters must have equal nonzero length")
        if s.shape[0] > 1 and not np.all(np.diff(s) > 0):
            raise ValueError("segment parameters must be strictly increasing")
        self.kind = kind
        self.s = s - s[0]
        self.points = pts
        self.end_data = dict(end_data or {})
        self._spline = CubicSpline(self.s, pts, axis=0) if len(s) > 1 else None

    @classmethod
    def from_points(cls, kind: str, points, n_samples: int | None = None, end_data=None,
                    bc_type="not-a-knot") -> "CurveSegment":
        """Chord-length parametrized curve through ``points``, optionally resampled uniformly."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        keep = np.r_[True, np.hypot(*np.diff(pts, axis=0).T) > 1e-14]
        pts = pts[keep]
        if len(pts) == 1:
            return cls(kind, [0.0], pts, end_data)
        s = np.r_[0.0, np.cumsum(np.hypot(*np.diff(pts, axis=0).T))]
        if n_samples is None or len(pts) < 4:
            return cls(kind, s, pts, end_data)
        spl = CubicSpline(s, pts, axis=0, bc_type=bc_type)
        grid = np.linspace(0.0, s[-1], n_samples)
        new = spl(grid)
        new[0], new[-1] = pts[0], pts[-1]
        s2 = np.r_[0.0, np.cumsum(np.hypot(*np.diff(new, axis=0).T))]
        return cls(kind, s2, new, end_data)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def point(self, s):
        if self._spline is None:
            return np.broadcast_to(self.points[0], np.shape(s) + (2,)).copy()
        return self._spline(np.clip(s, 0.0, self.length))

    def derivative(self, s, nu: int = 1):
        if self._spline is None:
            return np.zeros(np.shape(s) + (2,))
        return self._spline(np.clip(s, 0.0, self.length), nu)

    def unit_tangent(self, s):
        d = np.asarray(self.derivative(s))
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def reversed(self, kind: str | None = None) -> "CurveSegment":
        return CurveSegment(kind or self.kind, self.length - self.s[::-1], self.points[::-1], self.end_data)

    def to_json(self) -> dict:
        return {"kind": self.kind, "s": self.s.tolist(), "points": self.points.tolist(),
                "end_data": self.end_data}

    @classmethod
    def from_json(cls, data: dict) -> "CurveSegment":
        return cls(data["kind"], data["s"], data["points"], data.get("end_data"))

    def __repr__(self):
        return f"CurveSegment({self.kind!r}, n={len(self.s)}, length={self.length:.4g})"


# ---------------------------------------------------------------------------
# the field

@dataclass(frozen=True, eq=False)
class NonMixingField:
    model: OperatorTriple
    j: int
    region: object = None
    min_gap: float | None = None
    sabotage: bool = False  # flips the field (negative control for test harnesses)
    meta: dict = field(default_factory=dict)

    def gap_floor(self) -> float:
        return 1e-6 * self.model.lipschitz() if self.min_gap is None else self.min_gap

    def data(self, u):
        pd = pair_data(self.model, self.j, u)
        if pd.gap < self.gap_floor():
            raise Degenerate(u, pd.gap)
        return pd

    def rate(self, u) -> float:
        return self.data(u).rate

    def __call__(self, u) -> np.ndarray:
        return field_eval(self, u)


def field_eval(fld: NonMixingField, u) -> np.ndarray:
    """Gap-decreasing field -sign(det M) * (-<phi_j,H2 phi_k>, <phi_j,H1 phi_k>), k = j+1.

    d(gap)/dt along the returned vector equals -F(u) with F = 2|det M(phi_j, phi_k)|.
    The vector is invariant under sign flips of the eigenvectors.
    """
    v = fld.data(u).field
    return -v if fld.sabotage else v


def gap_derivative(model: OperatorTriple, j: int, u, v) -> float:
    """Directional derivative of lambda_{j+1} - lambda_j along v (first-order perturbation)."""
    es = eigensystem(model, u)
    dh = v[0] * model.h1 + v[1] * model.h2
    a, b = es.vectors[:, j], es.vectors[:, j + 1]
    return float(b @ dh @ b - a @ dh @ a)


def _outside(region, y) -> bool:
    return region is not None and not region.contains(y)


def _pair_isolation(fld: NonMixingField, y) -> float:
    """Smallest of the pair gap and the gaps to the levels just outside the pair."""
    w = eigvals_many(fld.model, np.asarray(y, float)[None])[0]
    j = fld.j
    gaps = [w[j + 1] - w[j]]
    if j > 0:
        gaps.append(w[j] - w[j - 1])
    if j + 2 < len(w):
        gaps.append(w[j + 2] - w[j + 1])
    return float(min(gaps))


def integral_curve(fld: NonMixingField, start, t_max: float, n_out: int = 200, rtol=1e-10, atol=1e-12):
    """Integrate du/dt = X_P(u) for t in [0, t_max].

    Stops early at the region boundary or when the pair gap, or the gap to a
    neighbouring level, falls to twice the gap floor.
    """
    u0 = as_point(start)

    def rhs(_t, y):
        return field_eval(fld, y)

    def floor(_t, y):
        return _pair_isolation(fld, y) - 2.0 * fld.gap_floor()
    floor.terminal = True

    def leave(_t, y):
        return -1.0 if _outside(fld.region, y) else 1.0
    leave.terminal = True

    sol = solve_ivp(rhs, (0.0, t_max), u0, method="DOP853", rtol=rtol, atol=atol,
                    events=(floor, leave), dense_output=True)
    t_end = sol.t[-1]
    ts = np.linspace(0.0, t_end, n_out)
    return ts, sol.sol(ts).T


# ---------------------------------------------------------------------------
# polar chart around an intersection

def _polar_slope(model: OperatorTriple, j: int, ubar: np.ndarray, rho: float, theta: float):
    """Return (d theta/d rho, D) from the polar form of the field at radius rho."""
    c, s = math.cos(theta), math.sin(theta)
    es = eigensystem(model, ubar + rho * np.array([c, s]))
    a, b = es.vectors[:, j], es.vectors[:, j + 1]
    h1b, h2b = model.h1 @ b, model.h2 @ b
    n = c * (a @ h1b) + s * (a @ h2b)
    d = s * (a @ h1b) - c * (a @ h2b)
    return n / (rho * d), d


def _polar_curve(model, j, ubar, theta0, rho_from, rho_to, d_floor, n_out, region=None, length=None):
    """Integrate d theta/d rho from rho_from to rho_to; optionally stop at arc length ``length``."""

    def rhs(rho, y):
        slope, d = _polar_slope(model, j, ubar, rho, y[0])
        if abs(d) < d_floor:
            raise PolarBreakdown(f"radial speed vanished at rho={rho:.4g} (D={d:.3e})")
        return [slope, math.sqrt(1.0 + (rho * slope) ** 2)]

    events = []
    if length is not None:
        def long_enough(_rho, y):
            return y[1] - length
        long_enough.terminal = True
        events.append(long_enough)
    if region is not None:
        def leave(rho, y):
            return -1.0 if _outside(region, ubar + rho * np.array([math.cos(y[0]), math.sin(y[0])])) else 1.0
        leave.terminal = True
        events.append(leave)
    sol = solve_ivp(rhs, (rho_from, rho_to), [theta0, 0.0], method="DOP853", rtol=1e-11, atol=1e-13,
                    dense_output=True, events=events or None)
    if sol.status == -1:
        raise MaxSteps(sol.message)
    rho_end = sol.t[-1]
    rhos = np.linspace(rho_from, rho_end, n_out)
    y = sol.sol(rhos)
    pts = ubar + rhos[:, None] * np.stack([np.cos(y[0]), np.sin(y[0])], axis=1)
    left = region is not None and len(sol.t_events) and sol.t_events[-1].size > 0
    return rhos, y[0], y[1], pts, left


def _d_floor(model: OperatorTriple, inter: Intersection) -> float:
    return 1e-3 * inter.conicity.smallest_singular_value()


def integrate_to_singularity(fld: NonMixingField, start, intersection: Intersection | None = None,
                             switch_radius: float | None = None, n_samples: int = DEFAULT_SAMPLES,
                             rho_min: float = 1e-5, max_steps: int = 200_000):
    """Follow the field from ``start`` into the intersection it flows to.

    Returns (segment, intersection, alpha_minus); the incoming unit tangent at the
    singularity is -(cos alpha_minus, sin alpha_minus).
    """
    model, j = fld.model, fld.j
    u0 = as_point(start)
    if _outside(fld.region, u0):
        raise LeftRegion(u0)
    if switch_radius is None:
        diam = fld.region.diameter if fld.region is not None else 1.0
        switch_radius = 1e-3 * diam
    scale = model.lipschitz()
    sgn = -1.0 if fld.sabotage else 1.0
    pd0 = fld.data(u0)

    # Cartesian phase, arc-length parametrized: du/ds = X / |X|
    def rhs(_s, y):
        d = pair_data(model, j, y)
        if d.rate <= 1e-14 * scale ** 2:
            raise NoDescent(y, d.rate)
        v = sgn * d.field
        return v / np.linalg.norm(v)

    # gap >= c*rho near a conical point, so a gap threshold bounds the distance
    switch_gap = max(switch_radius * 0.5 * pd0.rate / scale, 10.0 * fld.gap_floor())

    def reached(_s, y):
        return pair_data(model, j, y).gap - switch_gap
    reached.terminal = True

    def leave(_s, y):
        return -1.0 if _outside(fld.region, y) else 1.0
    leave.terminal = True

    s_max = 4.0 * pd0.gap / max(pd0.rate / scale, 1e-12)
    pts = [u0[None, :]]
    if pd0.gap > switch_gap:
        sol = solve_ivp(rhs, (0.0, s_max), u0, method="DOP853", rtol=1e-10, atol=1e-12,
                        events=(reached, leave), dense_output=True)
        if sol.status == -1 or sol.t.size > max_steps:
            raise MaxSteps(f"flow did not reach the switch gap: {sol.message}")
        if sol.t_events[1].size:
            raise LeftRegion(sol.y_events[1][0])
        if not sol.t_events[0].size:
            raise MaxSteps("flow did not approach a degeneracy within the arc-length budget")
        s_end = sol.t_events[0][0]
        ss = np.linspace(0.0, s_end, 4000)
        pts.append(sol.sol(ss).T[1:])
    u_sw = pts[-1][-1]

    if intersection is None:
        ubar, _ = newton_polish(model, j, u_sw, degeneracy_tol(model, u_sw))
        intersection = is_conical(model, ubar, j)
    ubar = intersection.point

    # polar phase from rho_sw down to rho_min, then extrapolate theta to rho = 0
    rel = u_sw - ubar
    rho_sw = float(np.hypot(*rel))
    theta_sw = math.atan2(rel[1], rel[0])
    rhos, thetas, _, ppts, _ = _polar_curve(model, j, ubar, theta_sw, rho_sw, rho_min,
                                            _d_floor(model, intersection), 2000)
    slope, _ = _polar_slope(model, j, ubar, rho_min, thetas[-1])
    alpha_minus = float(np.mod(thetas[-1] - rho_min * slope, 2 * math.pi))
    pts.append(ppts[1:])
    pts.append(ubar[None, :])
    allpts = np.concatenate(pts)
    seg = CurveSegment.from_points("incoming", allpts, n_samples,
                                   end_data={"intersection": intersection.ident, "alpha_minus": alpha_minus})
    return seg, intersection, alpha_minus


def exit_curve(fld: NonMixingField, intersection: Intersection, alpha_plus: float, length: float,
               n_samples: int = DEFAULT_SAMPLES, rho0: float = 1e-5) -> CurveSegment:
    """Integral curve of -X_P leaving the intersection with unit tangent (cos a+, sin a+)."""
    model, j = fld.model, fld.j
    ubar = intersection.point
    rho_max = 4.0 * length + 1.0
    floor = _d_floor(model, intersection)
    theta0 = float(alpha_plus) + rho0 * _polar_slope(model, j, ubar, rho0, float(alpha_plus))[0]
    rhos, thetas, arcs, pts, left = _polar_curve(model, j, ubar, theta0, rho0, rho_max,
                                                 floor, 4000,
                                                 region=fld.region, length=length)
    if left or arcs[-1] < length * (1 - 1e-9):
        raise LeftRegion(pts[-1])
    allpts = np.concatenate([ubar[None, :], pts])
    return CurveSegment.from_points("outgoing", allpts, n_samples,
                                    end_data={"intersection": intersection.ident,
                                              "alpha_plus": float(np.mod(alpha_plus, 2 * math.pi))})


# ---------------------------------------------------------------------------
# 2-jets at the singular end

def two_jet(segment: CurveSegment, at_singularity: bool = True, h: float | None = None):
    """(tangent, second derivative) w.r.t. arc length at the singular endpoint.

    For incoming segments the singular end is the final sample and the tangent
    points along the direction of travel (into the singularity).  Uses one-sided
    second-order differences at steps h and h/2 combined by Richardson extrapolation.
    """
    if len(segment.s) < 5:
        raise ValueError("two_jet needs at least 5 samples")
    L = segment.length
    at_end = (segment.kind == "incoming") == at_singularity
    if h is None:
        h = min(0.02 * L, max(50.0 * L / len(segment.s), 1e-4 * L))

    def pts(step):
        k = np.arange(4) * step
        return segment.point(L - k) if at_end else segment.point(k)

    def jet(step):
        p = pts(step)
        d1 = (-3 * p[0] + 4 * p[1] - p[2]) / (2 * step)
        d2 = (2 * p[0] - 5 * p[1] + 4 * p[2] - p[3]) / step ** 2
        return d1, d2

    d1h, d2h = jet(h)
    d1q, d2q = jet(h / 2)
    t = (4 * d1q - d1h) / 3
    k = (4 * d2q - d2h) / 3
    if at_end:
        t = -t  # differences were taken moving backwards along the curve
    return t, k
