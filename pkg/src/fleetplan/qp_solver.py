"""First-order operator-splitting solver for sparse convex QPs.

Solves

    minimize    0.5 x'Px + q'x
    subject to  l <= Ax <= u

after stacking a :class:`~fleetplan.qp_model.QuadraticProgram`'s equality
rows, inequality rows, and variable bounds into one two-sided constraint
block.  The ADMM iteration follows the standard quasi-definite KKT splitting:
a single sparse LU factorization is reused across iterations, rows holding
equalities get a stiffer penalty, and Ruiz equilibration tames the wide
coefficient ranges produced by delay curves.  An optional polishing step
re-solves the KKT system restricted to the detected active set, which
typically recovers solutions accurate to machine precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .qp_model import QuadraticProgram

SOLVED = "solved"
SOLVED_INACCURATE = "solved_inaccurate"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
ITERATION_LIMIT = "iteration_limit"

_EQ_TOL = 1e-12
_RHO_EQ_FACTOR = 1e3
_RHO_MIN, _RHO_MAX = 1e-6, 1e6
# Sign-correcting the polished duals is a bounded least-squares solve; past
# this active-set size it costs more than the accuracy is worth.
_RESIGN_ROW_LIMIT = 5000


@dataclass
class SolverSettings:
    """Tuning knobs; the defaults solve desk-scale network QPs well inside budget."""

    max_iterations: int = 200_000
    eps_primal: float = 1e-6
    eps_dual: float = 1e-6
    rho: float = 0.1
    alpha_relax: float = 1.6
    sigma: float = 1e-6
    adaptive_rho: bool = True
    adapt_interval: int = 50
    check_interval: int = 25
    scaling_iterations: int = 10
    polish: bool = True
    polish_delta: float = 1e-8
    eps_infeasible: float = 1e-4
    seed: int = 0  # unused in deterministic mode; kept for interface stability
    log_stream: IO[str] | None = None

    def __post_init__(self):
        if self.eps_primal <= 0 or self.eps_dual <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.alpha_relax < 2:
            raise ValueError(f"relaxation must lie in (0, 2), got {self.alpha_relax}")
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


@dataclass
class SolverResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status in (SOLVED, SOLVED_INACCURATE)


def stack_constraints(program: QuadraticProgram) -> tuple[sp.csc_matrix, np.ndarray, np.ndarray]:
    """Stack equalities, inequalities, and bounds into one l <= Ax <= u block."""
    n = program.n_vars
    blocks = [program.A_eq, program.A_ineq, sp.identity(n, format="csc")]
    A = sp.vstack(blocks, format="csc")
    l = np.concatenate([program.b_eq, program.l_ineq, program.lb])
    u = np.concatenate([program.b_eq, program.u_ineq, program.ub])
    return A, l, u


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


class _Scaling:
    """Ruiz equilibration of the stacked problem, plus cost normalization."""

    def __init__(self, P, q, A, l, u, iterations: int):
        n, m = q.shape[0], A.shape[0]
        d = np.ones(n)
        e = np.ones(m)
        c = 1.0
        Pb, qb, Ab = P.copy(), q.copy(), A.copy()
        for _ in range(iterations):
            col_p = _colnorms(Pb)
            col_a = _colnorms(Ab)
            dd = np.sqrt(np.maximum(np.maximum(col_p, col_a), 1e-10))
            dd = 1.0 / dd
            row_a = _colnorms(Ab.T) if m else np.ones(0)
            ee = 1.0 / np.sqrt(np.maximum(row_a, 1e-10)) if m else np.ones(0)
            Dd = sp.diags(dd)
            Pb = (Dd @ Pb @ Dd).tocsc()
            qb = dd * qb
            if m:
                Ab = (sp.diags(ee) @ Ab @ Dd).tocsc()
                e *= ee
            d *= dd
            gamma = max(np.mean(_colnorms(Pb)) if Pb.nnz else 0.0, _inf_norm(qb))
            gamma = 1.0 / max(gamma, 1e-10)
            Pb = (Pb * gamma).tocsc()
            qb = qb * gamma
            c *= gamma
        self.d, self.e, self.c = d, e, c
        self.P, self.q, self.A = Pb, qb, Ab
        with np.errstate(invalid="ignore"):
            self.l = np.where(np.isfinite(l), e * l, l)
            self.u = np.where(np.isfinite(u), e * u, u)

    def unscale_x(self, x: np.ndarray) -> np.ndarray:
        return self.d * x

    def unscale_y(self, y: np.ndarray) -> np.ndarray:
        return self.e * y / self.c


def _colnorms(M: sp.spmatrix) -> np.ndarray:
    if M.shape[1] == 0:
        return np.ones(0)
    M = abs(M.tocsc())
    out = np.asarray(M.max(axis=0).todense()).ravel()
    return out


def _factor_quasi_definite(kkt: sp.csc_matrix):
    """LU-factor a quasi-definite KKT matrix.

    Symmetric mode with a minimum-degree ordering keeps fill-in small on
    network programs (the default column ordering can blow the factors up by
    orders of magnitude here).  Falls back to plain LU if the pivot-free
    factorization degenerates numerically.
    """
    factor = spla.splu(
        kkt,
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )
    probe = factor.solve(np.ones(kkt.shape[0]))
    if not np.all(np.isfinite(probe)):
        factor = spla.splu(kkt)
    return factor


class _KKTSolver:
    def __init__(self, P, A, sigma: float, rho_vec: np.ndarray):
        n = P.shape[0]
        m = A.shape[0]
        upper = sp.hstack([P + sigma * sp.identity(n), A.T], format="csc")
        lower = sp.hstack([A, -sp.diags(1.0 / rho_vec) if m else sp.csc_matrix((0, 0))], format="csc")
        kkt = sp.vstack([upper, lower], format="csc") if m else upper.tocsc()
        self.n, self.m = n, m
        self.factor = _factor_quasi_definite(kkt)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.factor.solve(rhs)


def _rho_vector(rho: float, l: np.ndarray, u: np.ndarray) -> np.ndarray:
    rho_vec = np.full(l.shape[0], rho)
    with np.errstate(invalid="ignore"):
        eq = np.isfinite(l) & np.isfinite(u) & (np.abs(u - l) <= _EQ_TOL)
    rho_vec[eq] = min(rho * _RHO_EQ_FACTOR, _RHO_MAX)
    return rho_vec


def _proj(z: np.ndarray, l: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum(np.maximum(z, l), u)


def solve_qp(program: QuadraticProgram, settings: SolverSettings | None = None) -> SolverResult:
    """Solve a convex QP; returns primal/dual vectors with certificate residuals."""
    settings = settings or SolverSettings()
    A0, l0, u0 = stack_constraints(program)
    P0 = program.P.tocsc()
    q0 = program.q
    n, m = q0.shape[0], A0.shape[0]

    scale = _Scaling(P0, q0, A0, l0, u0, settings.scaling_iterations)
    P, q, A, l, u = scale.P, scale.q, scale.A, scale.l, scale.u

    rho = settings.rho
    rho_vec = _rho_vector(rho, l, u)
    kkt = _KKTSolver(P, A, settings.sigma, rho_vec)

    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    alpha = settings.alpha_relax
    status = ITERATION_LIMIT
    iteration = 0
    pri_res = dua_res = np.inf
    # Penalty refits back off geometrically; otherwise two residuals can
    # chase each other around a limit cycle forever.
    next_adapt = settings.adapt_interval

    d_inv = 1.0 / scale.d
    e_inv = 1.0 / scale.e

    for iteration in range(1, settings.max_iterations + 1):
        x_prev, y_prev = x, y
        rhs = np.concatenate([settings.sigma * x - q, z - y / rho_vec])
        sol = kkt.solve(rhs)
        x_tilde = sol[:n]
        z_tilde = z + (sol[n:] - y) / rho_vec
        x = alpha * x_tilde + (1 - alpha) * x_prev
        z_relaxed = alpha * z_tilde + (1 - alpha) * z
        z_new = _proj(z_relaxed + y / rho_vec, l, u)
        y = y + rho_vec * (z_relaxed - z_new)
        z = z_new

        if iteration % settings.check_interval != 0 and iteration != settings.max_iterations:
            continue

        # Unscaled residuals and relative tolerances.
        Ax = A @ x
        Px = P @ x
        Aty = A.T @ y
        pri_res = _inf_norm(e_inv * (Ax - z)) if m else 0.0
        dua_res = _inf_norm(d_inv * (Px + q + Aty)) / scale.c
        pri_rel = max(_inf_norm(e_inv * Ax), _inf_norm(e_inv * z)) if m else 0.0
        dua_rel = max(
            _inf_norm(d_inv * Px), _inf_norm(d_inv * Aty), _inf_norm(d_inv * q)
        ) / scale.c
        eps_pri = settings.eps_primal * (1.0 + pri_rel)
        eps_dua = settings.eps_dual * (1.0 + dua_rel)

        if settings.log_stream is not None:
            obj_now = 0.5 * float(x @ (P @ x)) + float(q @ x)
            settings.log_stream.write(
                json.dumps(
                    {
                        "iteration": iteration,
                        "primal_residual": pri_res,
                        "dual_residual": dua_res,
                        "objective": obj_now / scale.c,
                    }
                )
                + "\n"
            )

        if pri_res <= eps_pri and dua_res <= eps_dua:
            status = SOLVED
            break

        delta_y = scale.e * (y - y_prev) / scale.c
        if m and _is_primal_infeasible(A0, l0, u0, delta_y, scale.d, settings.eps_infeasible):
            status = PRIMAL_INFEASIBLE
            break
        delta_x = scale.d * (x - x_prev)
        if _is_dual_infeasible(P0, q0, A0, l0, u0, delta_x, scale.e, settings.eps_infeasible):
            status = DUAL_INFEASIBLE
            break

        if (
            settings.adaptive_rho
            and iteration >= next_adapt
            and pri_res > 0
            and dua_res > 0
        ):
            next_adapt *= 2
            ratio = np.sqrt(
                (pri_res / max(pri_rel, 1e-10)) / max(dua_res / max(dua_rel, 1e-10), 1e-16)
            )
            rho_new = float(np.clip(rho * ratio, _RHO_MIN, _RHO_MAX))
            if rho_new > 5 * rho or rho_new < rho / 5:
                rho = rho_new
                rho_vec = _rho_vector(rho, l, u)
                kkt = _KKTSolver(P, A, settings.sigma, rho_vec)

    x_out = scale.unscale_x(x)
    y_out = scale.unscale_y(y)

    if status == ITERATION_LIMIT and pri_res <= 100 * settings.eps_primal and dua_res <= 100 * settings.eps_dual:
        status = SOLVED_INACCURATE

    polished = False
    if status == SOLVED and settings.polish:
        for prim_tol in (0.0, 10.0 * max(pri_res, settings.eps_primal)):
            pol = _polish(P0, q0, A0, l0, u0, x_out, y_out, settings.polish_delta, prim_tol)
            if pol is None:
                continue
            x_pol, y_pol, pol_pri, pol_dua = pol
            if pol_pri <= max(pri_res, settings.eps_primal) and pol_dua <= max(
                dua_res, settings.eps_dual
            ):
                x_out, y_out = x_pol, y_pol
                pri_res, dua_res = pol_pri, pol_dua
                polished = True
                break

    if status in (PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
        objective = np.inf if status == PRIMAL_INFEASIBLE else -np.inf
    else:
        objective = 0.5 * float(x_out @ (P0 @ x_out)) + float(q0 @ x_out)

    return SolverResult(
        status=status,
        x=x_out,
        y=y_out,
        objective=objective,
        primal_residual=float(pri_res),
        dual_residual=float(dua_res),
        iterations=iteration,
        polished=polished,
    )


def _is_primal_infeasible(A0, l0, u0, delta_y, d, eps) -> bool:
    norm = _inf_norm(delta_y)
    if norm <= eps:
        return False
    v = delta_y / norm
    up = np.maximum(v, 0.0)
    lo = np.minimum(v, 0.0)
    # Components pushing on an infinite bound must vanish for a certificate.
    if np.any(up[~np.isfinite(u0)] > eps) or np.any(-lo[~np.isfinite(l0)] > eps):
        return False
    finite_u = np.isfinite(u0)
    finite_l = np.isfinite(l0)
    support = float(u0[finite_u] @ up[finite_u] + l0[finite_l] @ lo[finite_l])
    if support >= -eps:
        return False
    return _inf_norm(d * (A0.T @ v)) <= eps


def _is_dual_infeasible(P0, q0, A0, l0, u0, delta_x, e, eps) -> bool:
    norm = _inf_norm(delta_x)
    if norm <= eps:
        return False
    v = delta_x / norm
    if float(q0 @ v) >= -eps:
        return False
    if _inf_norm(P0 @ v) > eps:
        return False
    Av = A0 @ v
    ok_up = np.all(Av[np.isfinite(u0)] <= eps)
    ok_lo = np.all(Av[np.isfinite(l0)] >= -eps)
    return bool(ok_up and ok_lo)


def _polish(P0, q0, A0, l0, u0, x, y, delta, prim_tol=0.0):
    """Re-solve on the active set detected from dual signs; None if it fails.

    Equality rows always stay active regardless of their multiplier.  A
    positive ``prim_tol`` additionally marks rows whose value sits within it
    of a bound, which catches degenerate actives whose multiplier is zero.
    """
    with np.errstate(invalid="ignore"):
        is_eq = np.isfinite(l0) & np.isfinite(u0) & (np.abs(u0 - l0) <= _EQ_TOL)
    y_tol = 1e-12 * max(1.0, _inf_norm(y))
    act_low = (y < -y_tol) | is_eq
    act_upp = (y > y_tol) & ~is_eq
    if prim_tol > 0:
        Ax0 = A0 @ x
        with np.errstate(invalid="ignore"):
            near_low = np.isfinite(l0) & (Ax0 - l0 <= prim_tol) & ~is_eq
            near_upp = np.isfinite(u0) & (u0 - Ax0 <= prim_tol) & ~is_eq & ~near_low
        act_low = act_low | near_low
        act_upp = (act_upp | near_upp) & ~act_low
    rows = np.where(act_low | act_upp)[0]
    if rows.size == 0:
        return None
    out = _polish_solve(P0, q0, A0, l0, u0, rows, act_low, delta)
    if out is None:
        return None
    x_pol, y_pol, pri, dua = out
    # On a degenerate active set the KKT solve may hand pinned rows
    # wrong-signed multipliers; a sign-correct decomposition then exists and
    # bounded least squares recovers it without touching the primal point.
    sign_tol = 1e-9 * max(1.0, _inf_norm(y_pol))
    wrong = ((y_pol > sign_tol) & act_low & ~is_eq) | ((y_pol < -sign_tol) & act_upp)
    if wrong.any() and rows.size <= _RESIGN_ROW_LIMIT:
        y_fix = _resign_duals(P0, q0, A0, rows, act_low[rows], is_eq[rows], x_pol)
        if y_fix is not None:
            dua_fix = _inf_norm(P0 @ x_pol + q0 + A0.T @ y_fix)
            if dua_fix <= max(dua, 1e-9):
                y_pol, dua = y_fix, dua_fix
    return x_pol, y_pol, pri, dua


def _resign_duals(P0, q0, A0, rows, row_is_low, row_is_eq, x_pol):
    """Sign-constrained multipliers for the active rows via bounded LSQ."""
    from scipy.optimize import lsq_linear

    gradient = P0 @ x_pol + q0
    A_red_T = A0[rows].T.tocsc()
    lb = np.where(row_is_eq, -np.inf, np.where(row_is_low, -np.inf, 0.0))
    ub = np.where(row_is_eq, np.inf, np.where(row_is_low, 0.0, np.inf))
    try:
        fit = lsq_linear(A_red_T, -gradient, bounds=(lb, ub), tol=1e-12)
    except Exception:
        return None
    if not np.all(np.isfinite(fit.x)):
        return None
    y = np.zeros(A0.shape[0])
    y[rows] = fit.x
    return y


def _polish_solve(P0, q0, A0, l0, u0, rows, act_low, delta):
    A_red = A0[rows]
    b_red = np.where(act_low[rows], l0[rows], u0[rows])
    if not np.all(np.isfinite(b_red)):
        return None
    n = P0.shape[0]
    k = rows.size
    kkt = sp.vstack(
        [
            sp.hstack([P0 + delta * sp.identity(n), A_red.T], format="csc"),
            sp.hstack([A_red, -delta * sp.identity(k)], format="csc"),
        ],
        format="csc",
    )
    rhs = np.concatenate([-q0, b_red])
    try:
        factor = _factor_quasi_definite(kkt)
    except RuntimeError:
        return None
    t = factor.solve(rhs)
    # Iterative refinement against the unregularized KKT system.
    kkt_exact = sp.vstack(
        [
            sp.hstack([P0, A_red.T], format="csc"),
            sp.hstack([A_red, sp.csc_matrix((k, k))], format="csc"),
        ],
        format="csc",
    )
    for _ in range(3):
        t = t + factor.solve(rhs - kkt_exact @ t)
    x_pol = t[:n]
    y_pol = np.zeros(A0.shape[0])
    y_pol[rows] = t[n:]
    if not np.all(np.isfinite(x_pol)):
        return None
    Ax = A0 @ x_pol
    viol_low = np.where(np.isfinite(l0), np.maximum(l0 - Ax, 0.0), 0.0)
    viol_upp = np.where(np.isfinite(u0), np.maximum(Ax - u0, 0.0), 0.0)
    pri = max(_inf_norm(viol_low), _inf_norm(viol_upp))
    dua = _inf_norm(P0 @ x_pol + q0 + A0.T @ y_pol)
    return x_pol, y_pol, pri, dua


def kkt_residuals(
    program: QuadraticProgram, x: np.ndarray, y: np.ndarray
) -> tuple[float, float, float]:
    """Independent optimality certificate for any candidate primal/dual pair.

    Returns (primal violation, dual stationarity residual, complementarity
    residual), each as an infinity norm.  Only the program data is used, so
    externally produced candidates can be validated too.
    """
    A, l, u = stack_constraints(program)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] != program.n_vars or y.shape[0] != A.shape[0]:
        raise ValueError("candidate dimensions do not match the program")
    Ax = A @ x
    viol_low = np.where(np.isfinite(l), np.maximum(l - Ax, 0.0), 0.0)
    viol_upp = np.where(np.isfinite(u), np.maximum(Ax - u, 0.0), 0.0)
    r_primal = max(_inf_norm(viol_low), _inf_norm(viol_upp))
    r_dual = _inf_norm(program.P @ x + program.q + A.T @ y)
    y_neg = np.minimum(y, 0.0)
    y_pos = np.maximum(y, 0.0)
    l_fin = np.where(np.isfinite(l), l, 0.0)
    u_fin = np.where(np.isfinite(u), u, 0.0)
    comp_low = np.where(np.isfinite(l), np.abs(y_neg * (Ax - l_fin)), np.abs(y_neg))
    comp_upp = np.where(np.isfinite(u), np.abs(y_pos * (u_fin - Ax)), np.abs(y_pos))
    r_comp = max(_inf_norm(comp_low), _inf_norm(comp_upp))
    return float(r_primal), float(r_dual), float(r_comp)
