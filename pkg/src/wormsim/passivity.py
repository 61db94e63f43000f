"""Numerical passivity audits along simulated trajectories.

Each feedback block carries a storage function that is zero at equilibrium
and nonnegative along feasible motion; passivity means its growth never
exceeds the supply rate u'y. The audit reconstructs every block's input
and output from a recorded trace (equilibrium taken from the converged
tail), evaluates the storage by quadrature, and reports the worst
violation of the per-step inequality dV/dt <= u'y + tol. The tolerance
scales with dt because the trajectories are explicit-Euler.

Audited blocks:
  flow        -- allocation dynamics; storage q*'(r - r*), supply exact.
  link_delay  -- static link laws; storage is the shifted antiderivative.
  leash       -- leash-added delay laws, same construction.
  inband      -- tunnel-delay block in capture-fraction mode; a two-part
                 storage whose cross term dissipates along capture ascent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from .errors import AuditError
from .leash import leash_drop_prob
from .topology import IB_WORMHOLE, OOB_WORMHOLE, VALID


@dataclass
class StorageEval:
    """Sampled storage values and the audit verdict for one block."""

    block: str
    V: np.ndarray
    supply: np.ndarray            # per-step supply rate
    max_violation: float
    violations: int
    tol: float
    min_storage: float
    dissipation: Optional[np.ndarray] = None
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.violations == 0


def v1_storage(q_star: np.ndarray, r: np.ndarray,
               r_star: np.ndarray) -> float:
    """Linear storage of the allocation block: q*'(r - r*)."""
    return float(np.dot(np.asarray(q_star), np.asarray(r) - np.asarray(r_star)))


def v2_storage(law: Callable, z: float, z_star: float,
               quad_tol: float = 1e-8) -> float:
    """Shifted antiderivative of a nondecreasing delay law.

    Integral of f(s + z*) - f(z*) over [0, z - z*]; nonnegative whenever
    f is nondecreasing.
    """
    f_star = float(law(z_star))
    val, _ = quad(lambda s: float(law(s + z_star)) - f_star, 0.0,
                  z - z_star, epsabs=quad_tol, epsrel=quad_tol, limit=200)
    return val


def v3_storage(leash_law: Callable, r: float, r_star: float,
               quad_tol: float = 1e-8) -> float:
    """Same construction applied to the leash-added delay law."""
    g_star = float(leash_law(r_star))
    val, _ = quad(lambda s: float(leash_law(s)) - g_star, r_star, r,
                  epsabs=quad_tol, epsrel=quad_tol, limit=200)
    return val


def vl_inband_storage(curve, f_law: Callable, r: float, r_star: float,
                      x: float, x_star: float, penalty: float = 0.0,
                      penalty_star: float = 0.0,
                      quad_tol: float = 1e-8) -> float:
    """Two-part storage of the in-band tunnel block.

    First part integrates the shifted tunnel delay over the rate gap at
    the current capture fraction; the second credits the tunnel-length
    drop between x* and x with the antiderivative of the one-hop law at
    the equilibrium rate.
    """
    h_to_r, _ = quad(lambda s: float(f_law(s)), r_star, r,
                     epsabs=quad_tol, epsrel=quad_tol, limit=200)
    h_star, _ = quad(lambda s: float(f_law(s)), 0.0, r_star,
                     epsabs=quad_tol, epsrel=quad_tol, limit=200)
    beta_x = curve.value(x)
    beta_star = curve.value(x_star)
    f_at_star = float(f_law(r_star))
    first = (beta_x * h_to_r - beta_star * f_at_star * (r - r_star)
             + (penalty - penalty_star) * (r - r_star))
    second = h_star * (beta_x - beta_star)
    return first + second


def _grid_antiderivative(law: Callable, z_max: float, n: int = 8001):
    grid = np.linspace(0.0, max(z_max, 1e-9) * 1.02, n)
    vals = np.asarray(law(grid), dtype=float)
    H = np.concatenate([[0.0], cumulative_trapezoid(vals, grid)])
    return grid, vals, H


class _LeashLaw:
    """Leash-added delay as a plain function of the link rate."""

    def __init__(self, base_law, policy, alpha, slack, kind_tag):
        self.base_law = base_law
        self.policy = policy
        self.alpha = alpha
        self.slack = slack
        self.kind_tag = kind_tag

    def __call__(self, z):
        arr = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.empty_like(arr)
        base = np.atleast_1d(np.asarray(self.base_law(arr), dtype=float))
        for i, (zz, bb) in enumerate(zip(arr, base)):
            p = leash_drop_prob(self.kind_tag, zz, self.policy, self.alpha,
                                self.slack)
            out[i] = math.inf if p >= 1.0 else (1.0 / (1.0 - p) - 1.0) * bb
        return out if np.ndim(z) else float(out[0])


def _rate_and_price(trace):
    rate_cols = [c for c in trace.columns if c.startswith("r_s")]
    q_cols = [c for c in trace.columns if c.startswith("q_s")]
    r = np.column_stack([trace.data[c] for c in rate_cols])
    q = np.column_stack([trace.data[c] for c in q_cols])
    return r, q


def audit_flow_block(trace, tol: float) -> StorageEval:
    """Allocation block: dV/dt - u'y reduces to q'(dr/dt), exact per step."""
    r, q = _rate_and_price(trace)
    dt = trace.dt
    r_star, q_star = r[-1], q[-1]
    V = (q_star * (r - r_star)).sum(axis=1)
    y = np.diff(r, axis=0) / dt
    supply = (-(q[:-1] - q_star) * y).sum(axis=1)
    dV = np.diff(V) / dt
    viol = dV - supply
    margin = -(q[:-1] * y).sum(axis=1)  # dissipation rate, >= 0 expected
    return StorageEval("flow", V, supply, float(viol.max(initial=0.0)),
                       int((viol > tol).sum()), tol, float(V.min()),
                       dissipation=margin)


def _shifted_block(name, z_cols, laws, dt, tol):
    """Shared audit for blocks with storage H(z) - H(z*) - f(z*)(z - z*).

    These blocks are pure integrators whose output is a static function of
    the state, so u'y integrated over one step along the piecewise-linear
    state path equals the increment of the antiderivative; the supply is
    evaluated in exactly that form. A left-endpoint supply would charge
    the block for quadrature error whenever the state moves fast, which
    is discretization noise rather than a passivity violation.
    """
    n_rows = z_cols[0].shape[0]
    V = np.zeros(n_rows)
    supply = np.zeros(n_rows - 1)
    for z, law in zip(z_cols, laws):
        grid, _, H = _grid_antiderivative(law, float(z.max()))
        Hz = np.interp(z, grid, H)
        f_vals = np.asarray(law(z), dtype=float)
        z_star, f_star = z[-1], f_vals[-1]
        H_star = np.interp(z_star, grid, H)
        V += Hz - H_star - f_star * (z - z_star)
        supply += (np.diff(Hz) - f_star * np.diff(z)) / dt
    dV = np.diff(V) / dt
    viol = dV - supply
    return StorageEval(name, V, supply, float(viol.max(initial=0.0)),
                       int((viol > tol).sum()), tol, float(V.min()))


def audit_link_delay_block(trace, assembly, tol: float) -> StorageEval:
    """Static-law links: valid links plus a profile-mode tunnel."""
    z_cols, laws = [], []
    for j, link in enumerate(assembly.spec.links):
        if link.kind == VALID:
            laws.append(assembly.base_laws[j])
        elif link.kind == OOB_WORMHOLE and assembly.oob.mode == "profile":
            laws.append(assembly.base_laws[j])
        else:
            continue
        z_cols.append(trace.data[f"rl_{link.id}"])
    if not z_cols:
        raise AuditError("no static-law links to audit")
    return _shifted_block("link_delay", z_cols, laws, trace.dt, tol)


def audit_leash_block(trace, assembly, tol: float) -> StorageEval:
    if assembly.leash is None:
        raise AuditError("trace was produced without a leash")
    z_cols, laws = [], []
    for j, link in enumerate(assembly.spec.links):
        if not assembly.leash_mask[j]:
            continue
        if link.kind == OOB_WORMHOLE and assembly.oob.mode != "profile":
            raise AuditError("threshold-mode tunnel law is time-varying")
        kind_tag = "valid" if link.kind == VALID else "wormhole"
        laws.append(_LeashLaw(assembly.base_laws[j], assembly.leash,
                              link.alpha, link.slack, kind_tag))
        z_cols.append(trace.data[f"rl_{link.id}"])
    if not z_cols:
        raise AuditError("no leashed links to audit")
    return _shifted_block("leash", z_cols, laws, trace.dt, tol)


def audit_inband_block(trace, assembly, tol: float) -> StorageEval:
    if assembly.ib is None or assembly.ib.mode != "beta":
        raise AuditError("in-band storage needs a capture-fraction run")
    link_id = assembly.ib.link_id
    j = assembly.inc.link_index[link_id]
    f_law = assembly.base_laws[j]
    curve = assembly.ib.curve
    z = trace.data[f"rl_{link_id}"]
    x = trace.data["x_compromise"]
    K = trace.meta.get("penalty", 0.0)
    pen = K * trace.data[f"detect_{link_id}"]
    dt = trace.dt

    grid, _, H = _grid_antiderivative(f_law, float(z.max()))
    Hz = np.interp(z, grid, H)
    z_star, x_star, pen_star = z[-1], x[-1], pen[-1]
    H_star = np.interp(z_star, grid, H)
    f_vals = np.asarray(f_law(z), dtype=float)
    f_at_star = f_vals[-1]
    beta = np.array([curve.value(v) for v in x])
    beta_star = beta[-1]

    V = (beta * (Hz - H_star) - beta_star * f_at_star * (z - z_star)
         + (pen - pen_star) * (z - z_star)
         + H_star * (beta - beta_star))
    # supply: step integral of u'y along the rate path with the capture
    # fraction held at its step value; the storage change additionally
    # carries the tunnel-shortening term, which only dissipates.
    supply = (beta[:-1] * np.diff(Hz)
              + (pen[:-1] - pen_star - beta_star * f_at_star)
              * np.diff(z)) / dt
    dV = np.diff(V) / dt
    viol = dV - supply
    return StorageEval("inband", V, supply, float(viol.max(initial=0.0)),
                       int((viol > tol).sum()), tol, float(V.min()))


def audit_trajectory(trace, assembly, block: str,
                     tol: Optional[float] = None) -> StorageEval:
    """Audit one block on a trace; tol defaults to 10 * dt."""
    tol = 10.0 * trace.dt if tol is None else tol
    if block == "flow":
        return audit_flow_block(trace, tol)
    if block == "link_delay":
        return audit_link_delay_block(trace, assembly, tol)
    if block == "leash":
        return audit_leash_block(trace, assembly, tol)
    if block == "inband":
        return audit_inband_block(trace, assembly, tol)
    raise AuditError(f"unknown block {block!r}")


def applicable_blocks(assembly) -> list:
    blocks = ["flow"]
    has_static = any(
        l.kind == VALID or (l.kind == OOB_WORMHOLE
                            and assembly.oob.mode == "profile")
        for l in assembly.spec.links)
    if has_static:
        blocks.append("link_delay")
    if assembly.leash is not None and not (
            assembly.oob is not None and assembly.oob.mode == "threshold"):
        blocks.append("leash")
    if assembly.ib is not None and assembly.ib.mode == "beta":
        blocks.append("inband")
    return blocks


def composite_storage_check(evals, dt: float,
                            tol: Optional[float] = None) -> StorageEval:
    """Summed block storages must be nonincreasing along the run."""
    tol = 10.0 * dt if tol is None else tol
    V = sum(e.V for e in evals)
    dV = np.diff(V) / dt
    viol = dV  # supply of the closed loop is zero
    return StorageEval("composite", V, np.zeros(len(V) - 1),
                       float(viol.max(initial=0.0)),
                       int((viol > tol).sum()), tol, float(V.min()))


def audit_report(trace, assembly, tol: Optional[float] = None) -> list:
    """Audit every applicable block plus the composite storage."""
    evals = [audit_trajectory(trace, assembly, b, tol)
             for b in applicable_blocks(assembly)]
    covered = all(
        l.kind != IB_WORMHOLE or (assembly.ib and assembly.ib.mode == "beta")
        for l in assembly.spec.links)
    if covered:
        evals.append(composite_storage_check(evals, trace.dt, tol))
    return evals
