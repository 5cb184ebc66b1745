"""Propagators for i eps d psi/d tau = H(gamma(tau)) psi on tau in [0, 1].

* ``propagate_full``: exponential midpoint rule on the full Hamiltonian.
* ``propagate_adiabatic``: the dynamics with all couplings between blocks of a
  band partition removed, integrated in the moving eigenframe.
* ``propagate_effective``: the 2x2 system on a level pair, with diagonal
  a(tau) = (l_{j+1} - l_j)/2 and coupling b(tau) = <phi_{j+1}, d phi_j/d tau>,
  and the basis rotation Xi(a+) - Xi(a-) applied at each vertex.

Error metrics use overlap moduli only; the phases of the final amplitudes are
not predicted.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .conical import Intersection
from .model import OperatorTriple, as_point, assemble_many
from .planner import ControlPath
from .spectral import SIMPLE_RTOL, TrackingLost, eigensystem, eigh_many

CSV_SCHEMA = "conic-climb/simulation/1"
NORM_TOL = 1e-9
DEFAULT_MAX_STEPS = 10 ** 8
CHUNK = 4096


class PropagationError(RuntimeError):
    pass


class StepBudgetExceeded(PropagationError):
    pass


class NormDrift(PropagationError):
    pass


class CouplingViolation(PropagationError):
    """b(tau) is not negligible on a segment that should be non-mixing."""


@dataclass(frozen=True, eq=False)
class QuantumState:
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex).reshape(-1)
        n = float(np.linalg.norm(a))
        if abs(n - 1.0) > NORM_TOL:
            raise ValueError(f"state must be normalized to 1e-9, got norm {n:.12g}")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def eigenstate(cls, model: OperatorTriple, u, level: int = 0) -> "QuantumState":
        return cls(eigensystem(model, u).vectors[:, level].astype(complex))


def _as_state(psi, model: OperatorTriple) -> np.ndarray:
    a = psi.amplitudes if isinstance(psi, QuantumState) else QuantumState(psi).amplitudes
    if a.shape != (model.dim,):
        raise ValueError(f"state has length {a.shape[0]}, model dim is {model.dim}")
    return np.array(a)


def overlaps(model: OperatorTriple, u, psi, levels=None):
    """Moduli |<phi_l(u), psi>| for ``levels`` and the leaked mass 1 - sum of squares."""
    es = eigensystem(model, u)
    levels = list(range(model.dim)) if levels is None else list(levels)
    if any(not 0 <= lvl < model.dim for lvl in levels):
        raise ValueError(f"levels {levels} out of range for dim {model.dim}")
    tol = SIMPLE_RTOL * max(float(np.max(np.abs(es.values))), model.lipschitz())
    for lvl in levels:
        near = [es.values[i] for i in (lvl - 1, lvl + 1) if 0 <= i < model.dim]
        if near and min(abs(es.values[lvl] - x) for x in near) <= tol:
            raise ValueError(f"level {lvl} is degenerate at u = {as_point(u).tolist()}")
    psi = np.asarray(psi.amplitudes if isinstance(psi, QuantumState) else psi, dtype=complex)
    mod = np.abs(es.vectors[:, levels].T @ psi)
    leak = max(float(np.vdot(psi, psi).real - np.sum(mod ** 2)), 0.0)
    return mod, leak


def spread_error(moduli, leak, p) -> float:
    """||moduli - p||_2 + leak (moduli are sign-free, so no sign search is needed)."""
    return float(np.linalg.norm(np.asarray(moduli) - np.asarray(p)) + leak)


@dataclass
class SimulationResult:
    epsilon: float
    method: str
    final_state: np.ndarray
    overlaps: np.ndarray
    leak: float
    target: np.ndarray | None
    steps: int
    seconds: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if float(np.sum(self.overlaps ** 2)) > 1 + 1e-8:
            raise PropagationError("overlap moduli exceed unit mass")

    @property
    def error(self) -> float:
        if self.target is None:
            return math.nan
        return spread_error(self.overlaps, self.leak, self.target)

    @property
    def populations(self) -> np.ndarray:
        return self.overlaps ** 2

    def row(self, timing: bool = True) -> dict:
        out = {"schema": CSV_SCHEMA, "epsilon": repr(float(self.epsilon)), "method": self.method,
               "error": repr(self.error)}
        for i, v in enumerate(self.overlaps):
            out[f"overlap_{i}"] = repr(float(v))
        out["leak"] = repr(float(self.leak))
        out["steps"] = str(self.steps)
        out["seconds"] = f"{self.seconds:.3f}" if timing else ""
        return out

    def to_json(self, dump_state: bool = False, timing: bool = True) -> dict:
        out = {"schema": CSV_SCHEMA, "epsilon": self.epsilon, "method": self.method, "error": self.error,
               "overlaps": self.overlaps.tolist(), "leak": self.leak, "steps": self.steps,
               "target": None if self.target is None else list(map(float, self.target))}
        if timing:
            out["seconds"] = self.seconds
        if dump_state:
            out["final_state"] = {"real": self.final_state.real.tolist(), "imag": self.final_state.imag.tolist()}
        return out


def results_to_csv(results, timing: bool = True) -> str:
    rows = [r.row(timing) for r in results]
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\r\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# tau grids

def path_hmax(model: OperatorTriple, path: ControlPath) -> float:
    pts = np.concatenate([s.points for s in path.segments])
    w = np.linalg.eigvalsh(assemble_many(model, pts))
    return float(np.max(np.abs(w)))


def tau_grid(path: ControlPath, dtau: float) -> np.ndarray:
    """Nodes on [0, 1] with every segment junction included and spacing <= dtau."""
    nodes = [np.array([0.0])]
    for a, b in zip(path.knots[:-1], path.knots[1:]):
        if b <= a:
            continue
        n = max(int(math.ceil((b - a) / dtau)), 1)
        nodes.append(np.linspace(a, b, n + 1)[1:])
    out = np.concatenate(nodes)
    out[-1] = 1.0
    return out


def _step_size(model, path, epsilon, c_step, dtau_max):
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    hmax = path_hmax(model, path)
    dt = c_step * epsilon / hmax if hmax > 0 else dtau_max
    return min(dt, dtau_max)


def _check_budget(n, max_steps):
    if n > max_steps:
        raise StepBudgetExceeded(f"{n} steps requested, budget is {max_steps}")


# ---------------------------------------------------------------------------
# full propagator

def propagate_full(model: OperatorTriple, path: ControlPath, epsilon: float, psi0=None, target=None,
                   levels=None, c_step: float = 0.1, dtau_max: float = 1e-3,
                   max_steps: int = DEFAULT_MAX_STEPS) -> SimulationResult:
    """Exponential midpoint rule psi <- exp(-i dtau/eps H(gamma(tau_mid))) psi."""
    t_start = time.perf_counter()
    psi = _as_state(QuantumState.eigenstate(model, path.start, 0) if psi0 is None else psi0, model)
    nodes = tau_grid(path, _step_size(model, path, epsilon, c_step, dtau_max))
    _check_budget(len(nodes) - 1, max_steps)
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    dts = np.diff(nodes)
    for lo in range(0, len(mids), CHUNK):
        hs = assemble_many(model, path.point(mids[lo:lo + CHUNK]))
        w, v = np.linalg.eigh(hs)
        ph = np.exp(-1j * w * (dts[lo:lo + CHUNK, None] / epsilon))
        steps = np.einsum("nab,nb,ncb->nac", v, ph, v)
        psi = ordered_product(steps) @ psi
    norm = float(np.linalg.norm(psi))
    if abs(norm - 1.0) > NORM_TOL:
        raise NormDrift(f"norm drifted to {norm:.12g}")
    return _result(model, path, epsilon, "full", psi, target, levels, len(mids), t_start)


def ordered_product(mats: np.ndarray) -> np.ndarray:
    """mats[n-1] @ ... @ mats[1] @ mats[0] by pairwise reduction."""
    m = mats
    while m.shape[0] > 1:
        if m.shape[0] % 2:
            m = np.concatenate([m, np.eye(m.shape[1], dtype=m.dtype)[None]])
        m = m[1::2] @ m[0::2]
    return m[0]


def _result(model, path, epsilon, method, psi, target, levels, steps, t_start, extra=None):
    p = None if target is None else np.asarray(getattr(target, "p", target), dtype=float)
    if levels is None:
        levels = list(range(len(p))) if p is not None else list(range(model.dim))
    mod, leak = overlaps(model, path.end, psi, levels)
    return SimulationResult(epsilon, method, psi, mod, leak, p, steps, time.perf_counter() - t_start, extra or {})


# ---------------------------------------------------------------------------
# moving eigenframes

def _intersections(path: ControlPath) -> dict:
    out = {}
    for d in path.meta.get("intersections", []):
        x = Intersection.from_json(d)
        out[d.get("id") or x.ident] = x
    return out


def _vertex_nodes(path: ControlPath, nodes: np.ndarray):
    inter = _intersections(path)
    out = {}
    for v in path.vertices:
        tv = path.knots[v["segment"]]
        n = int(np.argmin(np.abs(nodes - tv)))
        if abs(nodes[n] - tv) > 1e-12:
            raise PropagationError("vertex is not a grid node")
        x = inter.get(v["intersection"])
        if x is None:
            raise PropagationError(f"path has no certificate for intersection {v['intersection']!r}")
        out[n] = (v, x)
    return out


def _align(prev: np.ndarray, cur: np.ndarray, tau: float, check: bool = True) -> np.ndarray:
    ov = np.einsum("ij,ij->j", prev, cur)
    if check:
        worst = float(np.min(np.abs(ov)))
        if worst <= 0.9:
            raise TrackingLost(tau, worst)
    return cur * np.where(ov < 0, -1.0, 1.0)


def eigenframes(model: OperatorTriple, path: ControlPath, nodes: np.ndarray):
    """Sign-continuous eigenframes at ``nodes``.

    Returns (values, frames_minus, frames_plus, vertex_nodes); the two frame
    arrays differ only at vertex nodes, where the pair columns are the limit
    bases for the incoming and outgoing directions.
    """
    pts = path.point(nodes)
    w, v = eigh_many(model, pts)
    vnodes = _vertex_nodes(path, nodes)
    vm = v.copy()
    vp = v.copy()
    for n in range(len(nodes)):
        if n in vnodes:
            vert, x = vnodes[n]
            j = x.j
            a_lo, a_hi = x.limit_basis_at(vert["alpha_minus"])
            b_lo, b_hi = x.limit_basis_at(vert["alpha_plus"])
            cur = v[n].copy()
            cur[:, j], cur[:, j + 1] = a_lo, a_hi
            vm[n] = _align(vp[n - 1], cur, nodes[n]) if n > 0 else cur
            nxt = vm[n].copy()
            nxt[:, j], nxt[:, j + 1] = b_lo, b_hi
            vp[n] = nxt
            w[n, j] = w[n, j + 1] = 0.5 * (w[n, j] + w[n, j + 1])
        else:
            vm[n] = _align(vp[n - 1], v[n], nodes[n]) if n > 0 else v[n]
            vp[n] = vm[n]
    return w, vm, vp, vnodes


def _polar(a: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(a)
    return u @ vt


def default_partition(path: ControlPath, dim: int):
    """Per segment: singleton blocks, with the vertex pair merged on its incoming/outgoing curves."""
    parts = []
    pair_of = {}
    for v in path.vertices:
        pair_of[v["segment"] - 1] = v["j"]
        pair_of[v["segment"]] = v["j"]
    for k, _seg in enumerate(path.segments):
        j = pair_of.get(k)
        blocks = [[i] for i in range(dim) if j is None or i not in (j, j + 1)]
        if j is not None:
            blocks.append([j, j + 1])
        parts.append(sorted(blocks))
    return parts


def propagate_adiabatic(model: OperatorTriple, path: ControlPath, epsilon: float, psi0=None, partition=None,
                        target=None, levels=None, c_step: float = 0.1, dtau_max: float = 1e-3,
                        max_steps: int = DEFAULT_MAX_STEPS) -> SimulationResult:
    """Evolution under h - i eps sum_a P_a dP_a/dtau for a band partition.

    In the moving eigenframe only couplings inside a block survive.  One step is
    half phase, block transport by the orthogonal polar factor of the frame
    overlap, half phase.  Block occupations are conserved exactly.
    """
    t_start = time.perf_counter()
    psi = _as_state(QuantumState.eigenstate(model, path.start, 0) if psi0 is None else psi0, model)
    nodes = tau_grid(path, _step_size(model, path, epsilon, c_step, dtau_max))
    _check_budget(len(nodes) - 1, max_steps)
    parts = default_partition(path, model.dim) if partition is None else partition
    if parts and isinstance(parts[0][0], int):
        parts = [parts] * len(path.segments)
    w, vm, vp, vnodes = eigenframes(model, path, nodes)
    seg_of_step, _ = path.locate(0.5 * (nodes[1:] + nodes[:-1]))
    c = vp[0].T @ psi
    occ0 = None
    for n in range(len(nodes) - 1):
        dt = nodes[n + 1] - nodes[n]
        blocks = parts[seg_of_step[n]]
        c = np.exp(-0.5j * w[n] * dt / epsilon) * c
        ov = vm[n + 1].T @ vp[n]
        t = np.zeros_like(ov)
        for b in blocks:
            t[np.ix_(b, b)] = _polar(ov[np.ix_(b, b)])
        c = t @ c
        c = np.exp(-0.5j * w[n + 1] * dt / epsilon) * c
        if n + 1 in vnodes:
            j = vnodes[n + 1][1].j
            rot = vp[n + 1].T @ vm[n + 1]
            blk = [j, j + 1]
            t = np.eye(model.dim)
            t[np.ix_(blk, blk)] = _polar(rot[np.ix_(blk, blk)])
            c = t @ c
        if occ0 is None:
            occ0 = [float(np.sum(np.abs(c[b]) ** 2)) for b in blocks]
    psi = vp[-1] @ c
    norm = float(np.linalg.norm(psi))
    if abs(norm - 1.0) > NORM_TOL:
        raise NormDrift(f"norm drifted to {norm:.12g}")
    return _result(model, path, epsilon, "adiabatic", psi, target, levels, len(nodes) - 1, t_start)


def block_occupations(model: OperatorTriple, path: ControlPath, epsilon: float, psi0=None, partition=None,
                      c_step: float = 0.1, dtau_max: float = 1e-3):
    """Occupations of the partition blocks after every step (diagnostic for the adiabatic propagator)."""
    psi = _as_state(QuantumState.eigenstate(model, path.start, 0) if psi0 is None else psi0, model)
    nodes = tau_grid(path, _step_size(model, path, epsilon, c_step, dtau_max))
    parts = default_partition(path, model.dim) if partition is None else partition
    if parts and isinstance(parts[0][0], int):
        parts = [parts] * len(path.segments)
    w, vm, vp, vnodes = eigenframes(model, path, nodes)
    seg_of_step, _ = path.locate(0.5 * (nodes[1:] + nodes[:-1]))
    c = vp[0].T @ psi
    hist = []
    for n in range(len(nodes) - 1):
        dt = nodes[n + 1] - nodes[n]
        blocks = parts[seg_of_step[n]]
        before = [float(np.sum(np.abs(c[b]) ** 2)) for b in blocks]
        c = np.exp(-0.5j * w[n] * dt / epsilon) * c
        ov = vm[n + 1].T @ vp[n]
        t = np.zeros_like(ov)
        for b in blocks:
            t[np.ix_(b, b)] = _polar(ov[np.ix_(b, b)])
        c = np.exp(-0.5j * w[n + 1] * dt / epsilon) * (t @ c)
        after = [float(np.sum(np.abs(c[b]) ** 2)) for b in blocks]
        hist.append(np.max(np.abs(np.subtract(after, before))))
        if n + 1 in vnodes:
            j = vnodes[n + 1][1].j
            rot = vp[n + 1].T @ vm[n + 1]
            blk = [j, j + 1]
            t = np.eye(model.dim)
            t[np.ix_(blk, blk)] = _polar(rot[np.ix_(blk, blk)])
            c = t @ c
    return np.array(hist)


# ---------------------------------------------------------------------------
# effective two-level propagator

def effective_coefficients(model: OperatorTriple, path: ControlPath, nodes: np.ndarray, j: int):
    """a(tau), b(tau) and the pair frames on the interleaved grid nodes + midpoints."""
    fine = np.empty(2 * len(nodes) - 1)
    fine[0::2] = nodes
    fine[1::2] = 0.5 * (nodes[1:] + nodes[:-1])
    w, vm, vp, vnodes = eigenframes(model, path, fine)
    mids = fine[1::2]
    vel = path.velocity(mids)
    wm = w[1::2]
    fm = vm[1::2]
    a = 0.5 * (wm[:, j + 1] - wm[:, j])
    pj, pk = fm[:, :, j], fm[:, :, j + 1]
    hj = vel[:, 0, None] * np.einsum("ab,nb->na", model.h1, pj) + vel[:, 1, None] * np.einsum("ab,nb->na", model.h2, pj)
    b = np.einsum("na,na->n", pk, hj) / (wm[:, j] - wm[:, j + 1])
    return fine, w, vm, vp, vnodes, a, b


def propagate_effective(model: OperatorTriple, path: ControlPath, epsilon: float, c0=(1.0, 0.0), j: int | None = None,
                        coupling: bool = True, target=None, c_step: float = 0.1, dtau_max: float = 1e-3,
                        b_tol: float | None = None, max_steps: int = DEFAULT_MAX_STEPS) -> SimulationResult:
    """Integrate i eps dz/dtau = [[-a, i eps b], [-i eps b, a]] z on the pair (j, j+1).

    Amplitudes are taken in the sign-continuous eigenframe; the vertex rotation
    is the overlap of the incoming and outgoing limit bases.  With
    ``coupling=False`` b is dropped everywhere (the adiabatic reduction).
    On incoming/outgoing non-mixing curves |b| / speed must stay below ``b_tol``.
    """
    t_start = time.perf_counter()
    if j is None:
        js = {v["j"] for v in path.vertices}
        if len(js) > 1:
            raise ValueError("path visits several level pairs; pass j explicitly")
        j = js.pop() if js else 0
    z = np.asarray(c0, dtype=complex).reshape(2)
    if abs(np.linalg.norm(z) - 1.0) > NORM_TOL:
        raise ValueError("c0 must be normalized")
    nodes = tau_grid(path, _step_size(model, path, epsilon, c_step, dtau_max))
    _check_budget(len(nodes) - 1, max_steps)
    fine, w, vm, vp, vnodes, a, b = effective_coefficients(model, path, nodes, j)
    seg_of_step, _ = path.locate(fine[1::2])
    speed = np.linalg.norm(path.velocity(fine[1::2]), axis=1)
    gap = 2.0 * a
    lip = model.lipschitz()
    max_nm_b = 0.0
    for k, seg in enumerate(path.segments):
        if seg.kind == "connector" or seg.end_data.get("variant"):
            continue
        sel = seg_of_step == k
        if not np.any(sel):
            continue
        rel = np.abs(b[sel]) / np.maximum(speed[sel], 1e-300)
        tol = 1e-4 * lip / float(np.min(gap[sel])) if b_tol is None else b_tol
        max_nm_b = max(max_nm_b, float(np.max(rel)))
        if np.max(rel) >= tol:
            raise CouplingViolation(f"|b|/speed = {np.max(rel):.3e} >= b_tol {tol:.3e} on segment {k} ({seg.kind})")
    bb = b if coupling else np.zeros_like(b)
    dts = np.diff(nodes)
    # exact exponential of the 2x2 midpoint generator K = [[-a, i eps b], [-i eps b, a]] / eps
    om = np.sqrt(a ** 2 + (epsilon * bb) ** 2)
    theta = om * dts / epsilon
    for n in range(len(dts)):
        c, s = math.cos(theta[n]), math.sin(theta[n])
        if om[n] > 0:
            kx = np.array([[-a[n], 1j * epsilon * bb[n]], [-1j * epsilon * bb[n], a[n]]]) / om[n]
            u = c * np.eye(2) - 1j * s * kx
        else:
            u = np.eye(2)
        z = u @ z
        node = 2 * (n + 1)
        if node in vnodes:
            rot = vp[node][:, [j, j + 1]].T @ vm[node][:, [j, j + 1]]
            z = _polar(rot) @ z
    mod = np.abs(z)
    leak = max(1.0 - float(np.sum(mod ** 2)), 0.0)
    p = None if target is None else np.asarray(getattr(target, "p", target), dtype=float)
    return SimulationResult(epsilon, "effective" if coupling else "effective_adiabatic", z, mod, leak, p,
                            len(dts), time.perf_counter() - t_start, {"max_nonmixing_b": max_nm_b})
