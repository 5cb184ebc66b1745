"""Control paths that climb a ladder of conical intersections.

A plan for target moduli p = (p_0, ..., p_k) is the concatenation

    connector -> incoming_0 -> outgoing_0 -> connector -> incoming_1 -> ... -> connector

where incoming/outgoing pieces are integral curves of the non-mixing field
meeting at the intersection u_j.  The angle jump at u_j is chosen so that
|cos(Xi(a+) - Xi(a-))| = cos(beta_j), which keeps p_j on level j and pushes
the rest of the amplitude to level j+1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BPoly, make_interp_spline

from .conical import ConicalError, Intersection
from .model import OperatorTriple, as_point
from .nonmixing import (DEFAULT_SAMPLES, CurveSegment, NonMixingField, PolarBreakdown, exit_curve,
                        integrate_to_singularity, two_jet)
from .spectral import Disc, eigvals_many, region_grid

PATH_SCHEMA = "conic-climb/path/1"
TWO_PI = 2.0 * math.pi


class PlanError(RuntimeError):
    pass


class InconsistentTarget(PlanError):
    pass


class NoSimplePathFound(PlanError):
    def __init__(self, msg, blocking_point=None):
        super().__init__(msg)
        self.blocking_point = blocking_point


@dataclass(frozen=True)
class SpreadTarget:
    p: tuple

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if p.size < 2:
            raise ValueError("a spread target needs at least two levels")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValueError(f"spread target entries must lie in [0, 1], got {p.tolist()}")
        norm = float(np.sum(p ** 2))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"spread target must satisfy sum p_l^2 = 1, got {norm:.15g}")
        object.__setattr__(self, "p", tuple(float(x) for x in p))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.p)

    @property
    def top_level(self) -> int:
        """Highest level with nonzero target mass."""
        return int(np.nonzero(self.array > 0)[0][-1])

    @classmethod
    def normalized(cls, p) -> "SpreadTarget":
        p = np.asarray(p, dtype=float)
        return cls(tuple(p / np.sqrt(np.sum(p ** 2))))


def splitting_betas(target: SpreadTarget, n_vertices: int) -> list[float]:
    """beta_j = atan2(sqrt(1 - sum_{l<=j} p_l^2), p_j) for j < n_vertices."""
    p = target.array
    out = []
    for j in range(n_vertices):
        # tail norm instead of 1 - head sum: avoids sqrt of roundoff
        rest = float(np.linalg.norm(p[j + 1:]))
        out.append(math.atan2(rest, p[j]))
    return out


def planned_amplitudes(betas, dim: int) -> np.ndarray:
    """Apply the vertex rotations for ``betas`` to (1, 0, ..., 0); returns moduli."""
    c = np.zeros(dim)
    c[0] = 1.0
    for j, b in enumerate(betas):
        x, y = c[j], c[j + 1]
        c[j], c[j + 1] = math.cos(b) * x - math.sin(b) * y, math.sin(b) * x + math.cos(b) * y
    return np.abs(c)


def splitting_angles(intersection: Intersection, alpha_minus: float, beta: float) -> tuple[float, float]:
    """Both outgoing angles a+ = Xi^-1(+-beta + Xi(a-) + k pi)."""
    if not (0.0 <= beta <= math.pi / 2 + 1e-15):
        raise ValueError(f"beta must lie in [0, pi/2], got {beta}")
    am = float(np.mod(alpha_minus, TWO_PI))
    if beta == 0.0:
        return am, am
    if abs(beta - math.pi / 2) < 1e-15:
        ap = float(np.mod(am + math.pi, TWO_PI))
        return ap, ap
    x = intersection.xi(am)
    return intersection.xi_inv(x + beta), intersection.xi_inv(x - beta)


# ---------------------------------------------------------------------------
# connectors

def min_band_gap(model: OperatorTriple, points, levels) -> tuple[float, int]:
    """Smallest gap between consecutive levels touching ``levels`` and its sample index."""
    lo, hi = min(levels), max(levels)
    w = eigvals_many(model, points)
    cols = [w[:, i + 1] - w[:, i] for i in range(max(lo - 1, 0), min(hi + 1, model.dim - 1))]
    g = np.min(np.stack(cols, axis=1), axis=1)
    k = int(np.argmin(g))
    return float(g[k]), k


def _spline_curve(waypoints, start_jet, end_jet, n):
    """Quintic interpolating spline through waypoints (chord-length parameter).

    A jet (tangent, second derivative) clamps an end so the junction with the
    neighbouring curve is C2; a free end gets zero second and third derivatives.
    """
    pts = np.asarray(waypoints, dtype=float)
    s = np.r_[0.0, np.cumsum(np.hypot(*np.diff(pts, axis=0).T))]
    free = [(2, np.zeros(2)), (3, np.zeros(2))]

    def clamp(jet):
        return free if jet is None else [(1, np.asarray(jet[0], float)), (2, np.asarray(jet[1], float))]
    spl = make_interp_spline(s, pts, k=5, bc_type=(clamp(start_jet), clamp(end_jet)), axis=0)
    return spl(np.linspace(0.0, s[-1], n))


def _jet(tangent, curvature):
    if tangent is None:
        return None
    t = np.asarray(tangent, dtype=float)
    t = t / np.linalg.norm(t)
    k = np.zeros(2) if curvature is None else np.asarray(curvature, dtype=float)
    return t, k


def connector(model: OperatorTriple, levels, start, end, region=None, start_tangent=None,
              end_tangent=None, gap_tol: float | None = None, max_retries: int = 200, seed: int = 0,
              n_samples: int = DEFAULT_SAMPLES, check_points: int = 400, start_curvature=None,
              end_curvature=None) -> CurveSegment:
    """Smooth spline from ``start`` to ``end`` along which the levels stay simple.

    Optional unit tangents (and second derivatives, default zero) clamp the
    ends so junctions with neighbouring curves are C2.  If the direct curve is
    blocked, random waypoints drawn from a precomputed gap map are tried and
    the shortest admissible detour is kept.
    """
    a, b = as_point(start), as_point(end)
    levels = sorted(levels)
    if gap_tol is None:
        gap_tol = 1e-2 * model.lipschitz()
    chord = float(np.hypot(*(b - a)))
    if chord < 1e-14:
        return CurveSegment("connector", [0.0], a[None, :])
    j0 = _jet(start_tangent, start_curvature)
    j1 = _jet(end_tangent, end_curvature)

    def ok(waypoints):
        pts = _spline_curve(waypoints, j0, j1, check_points)
        if region is not None and not all(region.contains(p) for p in pts):
            return False, pts, -math.inf, 0
        g, k = min_band_gap(model, pts, levels)
        return g > gap_tol, pts, g, k

    good, pts, g, k = ok([a, b])
    blocking = pts[k]
    if not good:
        rng = np.random.default_rng(seed)
        pad = 0.5 * chord + 0.2
        lo = np.minimum(a, b) - pad
        hi = np.maximum(a, b) + pad
        box = _Box(lo, hi)
        grid, _ = region_grid(box, max(2.0, 40.0 / float(np.max(hi - lo))))
        gmap, _ = min_band_gap_map(model, grid, levels)
        allowed = grid[(gmap > 3 * gap_tol)
                       & np.array([region is None or region.contains(p) for p in grid])]
        if len(allowed) == 0:
            raise NoSimplePathFound(f"no grid point with gap > {3 * gap_tol:.3e} near the connector", blocking)
        best, best_len, found = None, math.inf, 0
        for _ in range(max_retries):
            n_way = int(rng.integers(1, 3))
            way = allowed[rng.integers(0, len(allowed), size=n_way)]
            # order waypoints by projection on the chord to avoid loops
            proj = (way - a) @ (b - a)
            way = way[np.argsort(proj)]
            cand = [a, *way, b]
            good, pts, gc, _ = ok(cand)
            if good:
                length = float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))
                if length < best_len:
                    best, best_len, g = cand, length, gc
                found += 1
                if found >= 10:
                    break
        if best is None:
            raise NoSimplePathFound(
                f"no simple-spectrum connector from {a.tolist()} to {b.tolist()} after {max_retries} "
                f"detours (straight path blocked near {np.round(blocking, 6).tolist()})", blocking)
        waypoints = best
    else:
        waypoints = [a, b]
    dense = _spline_curve(waypoints, j0, j1, max(n_samples, 4))
    dense[0], dense[-1] = a, b
    return CurveSegment.from_points("connector", dense, None,
                                    end_data={"waypoints": np.asarray(waypoints).tolist(),
                                              "min_gap": g})


@dataclass(frozen=True)
class _Box:
    lo: np.ndarray
    hi: np.ndarray

    def bounds(self):
        return (self.lo[0], self.hi[0]), (self.lo[1], self.hi[1])


def min_band_gap_map(model: OperatorTriple, points, levels):
    lo, hi = min(levels), max(levels)
    w = eigvals_many(model, points)
    cols = [w[:, i + 1] - w[:, i] for i in range(max(lo - 1, 0), min(hi + 1, model.dim - 1))]
    g = np.min(np.stack(cols, axis=1), axis=1)
    return g, int(np.argmin(g))


# ---------------------------------------------------------------------------
# control paths

class ControlPath:
    """Ordered curve segments with a global parameter tau in [0, 1] proportional to arc length."""

    def __init__(self, segments: list[CurveSegment], vertices: list[dict] | None = None, meta: dict | None = None):
        if not segments:
            raise ValueError("a control path needs at least one segment")
        for k in range(1, len(segments)):
            gap = float(np.hypot(*(segments[k].start - segments[k - 1].end)))
            if gap > 1e-8:
                raise ValueError(f"segments {k - 1} and {k} do not join (distance {gap:.3e})")
        self.segments = list(segments)
        self.vertices = list(vertices or [])
        self.meta = dict(meta or {})
        lengths = np.array([s.length for s in segments])
        self.total_length = float(lengths.sum())
        cum = np.r_[0.0, np.cumsum(lengths)]
        self.knots = cum / self.total_length if self.total_length > 0 else np.linspace(0, 1, len(cum))

    @property
    def start(self) -> np.ndarray:
        return self.segments[0].start

    @property
    def end(self) -> np.ndarray:
        return self.segments[-1].end

    def locate(self, tau):
        tau = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
        idx = np.searchsorted(self.knots, tau, side="right") - 1
        idx = np.clip(idx, 0, len(self.segments) - 1)
        local = (tau - self.knots[idx]) * self.total_length
        return idx, local

    def _eval(self, tau, nu):
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        idx, local = self.locate(tau)
        out = np.empty(tau.shape + (2,))
        for k in np.unique(idx):
            sel = idx == k
            seg = self.segments[k]
            out[sel] = seg.point(local[sel]) if nu == 0 else seg.derivative(local[sel], nu)
        return out

    def point(self, tau):
        return self._eval(tau, 0)

    def velocity(self, tau):
        """d gamma / d tau."""
        return self.total_length * self._eval(tau, 1)

    def acceleration(self, tau):
        return self.total_length ** 2 * self._eval(tau, 2)

    def vertex_taus(self) -> list[float]:
        return [float(self.knots[v["segment"]]) for v in self.vertices]

    def segment_taus(self, k: int) -> tuple[float, float]:
        return float(self.knots[k]), float(self.knots[k + 1])

    def to_json(self) -> dict:
        return {"schema": PATH_SCHEMA, "segments": [s.to_json() for s in self.segments],
                "vertices": self.vertices, "knots": self.knots.tolist(), "meta": self.meta}

    @classmethod
    def from_json(cls, data: dict) -> "ControlPath":
        if data.get("schema") != PATH_SCHEMA:
            raise ValueError(f"path schema must be {PATH_SCHEMA!r}")
        return cls([CurveSegment.from_json(s) for s in data["segments"]], data.get("vertices"),
                   data.get("meta"))


def _end_tangent(seg: CurveSegment):
    if seg.length == 0:
        return None
    return seg.unit_tangent(seg.length)


def _start_tangent(seg: CurveSegment):
    if seg.length == 0:
        return None
    return seg.unit_tangent(0.0)


def plan(model: OperatorTriple, intersections: list[Intersection], u0, u1, target: SpreadTarget,
         levels=None, radius: float = 0.3, exit_length: float | None = None, approach_angles=None,
         region=None, n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
         connector_gap_tol: float | None = None, branch_preference=None) -> ControlPath:
    """Synthesize the climbing path from u0 to u1 realizing ``target`` from level 0."""
    p = target.array
    top = target.top_level
    if top > len(intersections):
        raise InconsistentTarget(
            f"target has mass on level {top} but only {len(intersections)} intersections were given")
    n_vert = max(top, 1)
    if n_vert > len(intersections):
        raise InconsistentTarget("a vertex is required but no intersection was given")
    for k, x in enumerate(intersections[:n_vert]):
        if x.j != k:
            raise InconsistentTarget(f"intersection {k} joins levels {x.band}, expected ({k}, {k + 1})")
    levels = list(range(len(p))) if levels is None else sorted(levels)
    exit_length = radius if exit_length is None else exit_length
    betas = splitting_betas(target, n_vert)
    cur = as_point(u0)
    cur_tangent = cur_curv = None
    segments: list[CurveSegment] = []
    vertices: list[dict] = []
    for k in range(n_vert):
        inter = intersections[k]
        ubar = inter.point
        ident = inter.ident or f"x{k}"
        if approach_angles is not None and approach_angles[k] is not None:
            am0 = float(approach_angles[k])
        else:
            d = cur - ubar
            am0 = math.atan2(d[1], d[0]) if np.hypot(*d) > 1e-12 else 0.0
        fld = NonMixingField(model, inter.j, Disc(tuple(ubar), 2.5 * max(radius, exit_length)))
        p_in = ubar + radius * np.array([math.cos(am0), math.sin(am0)])
        incoming, _, alpha_minus = integrate_to_singularity(fld, p_in, intersection=inter, n_samples=n_samples)
        incoming.end_data["intersection"] = ident
        conn = connector(model, levels, cur, incoming.start, region, cur_tangent, _start_tangent(incoming),
                         gap_tol=connector_gap_tol, seed=seed + k, n_samples=n_samples,
                         start_curvature=cur_curv, end_curvature=incoming.derivative(0.0, 2))
        opts = splitting_angles(inter, alpha_minus, betas[k])
        order = [0, 1] if (branch_preference is None or branch_preference[k] in (None, 1)) else [1, 0]
        outgoing, used, last_exc = None, None, None
        for o in order:
            try:
                outgoing = exit_curve(fld, inter, opts[o], exit_length, n_samples=n_samples)
                used = o + 1
                break
            except (ConicalError, PolarBreakdown) as exc:
                last_exc = exc
        if outgoing is None:
            raise PlanError(f"no exit curve for vertex {k}: {last_exc}")
        outgoing.end_data["intersection"] = ident
        segments += [conn, incoming]
        vertices.append({
            "intersection": ident, "index": k, "j": inter.j, "point": ubar.tolist(),
            "segment": len(segments), "alpha_minus": alpha_minus, "alpha_plus": opts[used - 1],
            "alpha_plus_options": list(opts), "option": used, "beta": betas[k],
            "xi_minus": inter.xi(alpha_minus), "xi_plus": inter.xi(opts[used - 1]),
        })
        segments.append(outgoing)
        cur = outgoing.end
        cur_tangent = _end_tangent(outgoing)
        cur_curv = outgoing.derivative(outgoing.length, 2)
    final = connector(model, levels, cur, u1, region, cur_tangent, None,
                      gap_tol=connector_gap_tol, seed=seed + n_vert, n_samples=n_samples,
                      start_curvature=cur_curv)
    segments.append(final)
    meta = {"target": list(target.p), "levels": levels, "radius": radius, "exit_length": exit_length,
            "u0": as_point(u0).tolist(), "u1": as_point(u1).tolist(),
            "intersections": [x.to_json() | {"id": x.ident or f"x{k}"} for k, x in enumerate(intersections[:n_vert])]}
    return ControlPath(segments, vertices, meta)


# ---------------------------------------------------------------------------
# variants that pass through the vertices with generic or matched 2-jets

def _hermite_piece(v, d0, k0, p1, d1, k1, length, n):
    """Quintic q on [0, L] matching value, first and second derivative at both ends."""
    poly = BPoly.from_derivatives([0.0, length], [[v, d0, k0], [p1, d1, k1]])
    return poly(np.linspace(0.0, length, n))


def _rot90(v):
    return np.array([-v[1], v[0]])


def vertexless_variants(path: ControlPath, mode: str, curvature: float | None = None,
                        n_samples: int = DEFAULT_SAMPLES) -> ControlPath:
    """Replace each incoming/outgoing pair by quintic Hermite pieces through the vertex.

    ``jet_matched`` copies the one-sided 2-jets of the non-mixing curves.
    ``generic_c2`` keeps the tangents but shifts the second derivative by
    ``curvature`` (default 0.5 / diameter of the disc swept by the pair) along
    the left normal of the outgoing direction.  The far ends match the
    neighbouring curves to second order.
    """
    if mode not in ("generic_c2", "jet_matched"):
        raise ValueError(f"mode must be 'generic_c2' or 'jet_matched', got {mode!r}")
    segs = list(path.segments)
    new_vertices = []
    for vtx in path.vertices:
        k = vtx["segment"]
        inc, out = segs[k - 1], segs[k]
        if inc.kind != "incoming" or out.kind != "outgoing":
            raise ValueError("vertex record does not point at an incoming/outgoing pair")
        ubar = np.asarray(vtx["point"])
        t_in, k_in = two_jet(inc)
        t_out, k_out = two_jet(out)
        t_in, t_out = t_in / np.linalg.norm(t_in), t_out / np.linalg.norm(t_out)
        if mode == "generic_c2":
            diam = 2.0 * max(inc.length, out.length)
            kap = 0.5 / diam if curvature is None else curvature
            k_in = k_in + kap * _rot90(t_in)
            k_out = k_out + kap * _rot90(t_out)
        # incoming piece, parametrized from the vertex backwards
        q_in = _hermite_piece(ubar, -t_in, k_in, inc.start, -inc.unit_tangent(0.0), inc.derivative(0.0, 2),
                              inc.length, n_samples)
        q_out = _hermite_piece(ubar, t_out, k_out, out.end, out.unit_tangent(out.length),
                               out.derivative(out.length, 2), out.length, n_samples)
        ed_in = dict(inc.end_data, variant=mode)
        ed_out = dict(out.end_data, variant=mode)
        segs[k - 1] = CurveSegment.from_points("incoming", q_in[::-1], None, ed_in)
        segs[k] = CurveSegment.from_points("outgoing", q_out, None, ed_out)
        new_vertices.append(dict(vtx, variant=mode))
    meta = dict(path.meta, variant=mode)
    return ControlPath(segs, new_vertices, meta)
