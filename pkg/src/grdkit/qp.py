"""Convex quadratic programming.

Problems have the form::

    minimise    1/2 v^T P v + q^T v
    subject to  A v <= b,   E v = e

Two backends are provided.  ``ipm`` (default) is a Mehrotra
predictor-corrector interior-point method on a Ruiz-equilibrated copy of
the problem.  ``admm`` is an operator-splitting method of the OSQP family.
Both finish with an active-set polishing step that solves the equality
system of the detected active constraints, or failing that with a snap of
near-tight bound rows onto their bounds, so that slack-like variables end
exactly on their bounds.

Reported residuals are scaled: primal and complementarity by one plus the
magnitude of the terms they are computed from, the dual residual per
component (see ``kkt_residuals``).  ``Solved`` requires all three within
tolerance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog, nnls

SOLVED = "Solved"
MAX_ITERATIONS = "MaxIterations"
INFEASIBLE = "Infeasible"

DENSE_LIMIT = 400


@dataclass
class QPSolution:
    v: np.ndarray
    status: str
    objective: float
    primal_residual: float
    dual_residual: float
    complementarity: float
    iterations: int
    y_in: np.ndarray | None = None
    y_eq: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


@dataclass
class _Problem:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    E: sp.csr_matrix
    e: np.ndarray


def _standardise(problem) -> _Problem:
    n = problem.P.shape[0]
    P = sp.csc_matrix(problem.P, dtype=float)
    A = sp.csr_matrix(problem.A, dtype=float) if problem.A is not None else sp.csr_matrix((0, n))
    E = getattr(problem, "E", None)
    e = getattr(problem, "e", None)
    E = sp.csr_matrix(E, dtype=float) if E is not None else sp.csr_matrix((0, n))
    e = np.asarray(e, dtype=float) if e is not None else np.zeros(0)
    b = np.asarray(problem.b, dtype=float).reshape(-1) if problem.b is not None else np.zeros(0)
    q = np.asarray(problem.q, dtype=float).reshape(n)
    if A.shape != (len(b), n) or E.shape != (len(e), n) or P.shape != (n, n):
        raise ValueError("inconsistent problem dimensions")
    return _Problem(P, q, A, b, E, e)


def _inf(x) -> float:
    x = np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0


def _residuals(pb: _Problem, v, y, mu, scaled: bool = True):
    Av = pb.A @ v
    Ev = pb.E @ v
    Pv = pb.P @ v
    viol = np.maximum(Av - pb.b, 0.0)
    primal = max(_inf(viol), _inf(Ev - pb.e))
    Aty = pb.A.T @ y
    Etm = pb.E.T @ mu
    dual = _inf(Pv + pb.q + Aty + Etm)
    # violations are counted by the primal residual
    comp = _inf(y * np.maximum(pb.b - Av, 0.0)) if len(y) else 0.0
    if scaled:
        primal /= 1.0 + max(_inf(Av), _inf(pb.b), _inf(Ev), _inf(pb.e))
        dual = _dual_scaled(Pv + pb.q + Aty + Etm, Pv, pb.q, Aty + Etm)
        comp /= 1.0 + abs(float(0.5 * v @ Pv + pb.q @ v))
    return primal, dual, comp


def _dual_scaled(rd, Pv, q, Aty) -> float:
    # per component, so large cost entries on some variables do not hide
    # stationarity errors on the others
    if not len(rd):
        return 0.0
    ref = 1.0 + np.maximum(np.maximum(np.abs(Pv), np.abs(q)), np.abs(Aty))
    return float(np.max(np.abs(rd) / ref))


def estimate_multipliers(problem, v, active_tol: float = 1e-7):
    """Least-squares multipliers for ``v``: ``y >= 0`` on near-active rows.

    Solves ``min ||P v + q + A_act^T y + E^T mu||`` with ``y >= 0`` by
    non-negative least squares.
    """
    pb = _standardise(problem)
    v = np.asarray(v, dtype=float)
    slack = pb.b - pb.A @ v
    act = np.flatnonzero(slack <= active_tol * (1.0 + np.abs(pb.b)))
    g = pb.P @ v + pb.q
    y = np.zeros(len(pb.b))
    mu = np.zeros(len(pb.e))
    if len(act) == 0 and len(pb.e) == 0:
        return y, mu
    At = pb.A[act].T.toarray()
    Et = pb.E.T.toarray()
    M = np.hstack([At, Et, -Et])
    sol, _ = nnls(M, -g, maxiter=50 * M.shape[1] + 100)
    y[act] = sol[: len(act)]
    mu = sol[len(act): len(act) + len(pb.e)] - sol[len(act) + len(pb.e):]
    return y, mu


def kkt_residuals(problem, v, y_in=None, y_eq=None, scaled: bool = False):
    """Primal, dual and complementarity residuals at ``v``.

    Absolute definitions (``scaled=False``):

    * primal: ``max(max(A v - b, 0), |E v - e|)``
    * dual: ``||P v + q + A^T y + E^T mu||_inf``
    * complementarity: ``max |y_i max(b - A v, 0)_i|``

    When multipliers are not given they are estimated with
    ``estimate_multipliers``.  With ``scaled=True`` each quantity is divided
    by one plus the magnitude of its ingredients; the dual residual is
    scaled component by component.
    """
    pb = _standardise(problem)
    v = np.asarray(v, dtype=float)
    if y_in is None or (y_eq is None and len(pb.e)):
        y_est, mu_est = estimate_multipliers(problem, v)
        y_in = y_est if y_in is None else y_in
        y_eq = mu_est if y_eq is None else y_eq
    y_in = np.asarray(y_in, dtype=float)
    y_eq = np.zeros(len(pb.e)) if y_eq is None else np.asarray(y_eq, dtype=float)
    return _residuals(pb, v, y_in, y_eq, scaled=scaled)


# scaling -------------------------------------------------------------------

def _col_inf(M: sp.spmatrix) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_inf(M: sp.spmatrix) -> np.ndarray:
    if M.shape[1] == 0 or M.shape[0] == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


def _safe_inv_sqrt(x: np.ndarray) -> np.ndarray:
    out = np.ones_like(x)
    ok = x > 1e-12
    out[ok] = 1.0 / np.sqrt(x[ok])
    return out


@dataclass
class _Scaling:
    D: np.ndarray
    Ea: np.ndarray
    Ee: np.ndarray
    c: float


def _equilibrate(pb: _Problem, iters: int = 15) -> tuple[_Problem, _Scaling]:
    """Modified Ruiz equilibration of the KKT matrix plus a cost scaling."""
    n = pb.P.shape[0]
    P = pb.P.tocoo()
    A = pb.A.tocoo()
    E = pb.E.tocoo()
    pv, av, ev = np.abs(P.data), np.abs(A.data), np.abs(E.data)
    D = np.ones(n)
    Ea = np.ones(pb.A.shape[0])
    Ee = np.ones(pb.E.shape[0])

    def colmax(rows, cols, vals, size, by_col=True):
        out = np.zeros(size)
        np.maximum.at(out, cols if by_col else rows, vals)
        return out

    for _ in range(iters):
        cn = np.maximum(np.maximum(colmax(P.row, P.col, pv, n), colmax(A.row, A.col, av, n)),
                        colmax(E.row, E.col, ev, n))
        dd = _safe_inv_sqrt(cn)
        da = _safe_inv_sqrt(colmax(A.row, A.col, av, len(Ea), by_col=False))
        de = _safe_inv_sqrt(colmax(E.row, E.col, ev, len(Ee), by_col=False))
        pv = pv * dd[P.row] * dd[P.col]
        av = av * da[A.row] * dd[A.col]
        ev = ev * de[E.row] * dd[E.col]
        D *= dd
        Ea *= da
        Ee *= de
    Ps = sp.csc_matrix((P.data * D[P.row] * D[P.col], (P.row, P.col)), shape=P.shape)
    As = sp.csr_matrix((A.data * Ea[A.row] * D[A.col], (A.row, A.col)), shape=A.shape)
    Es = sp.csr_matrix((E.data * Ee[E.row] * D[E.col], (E.row, E.col)), shape=E.shape)
    q = D * pb.q
    pcol = colmax(P.row, P.col, np.abs(Ps.tocoo().data) if Ps.nnz else np.zeros(0), n) if P.nnz else np.zeros(n)
    # cost scale from the curvature of P alone; large linear costs (exact
    # penalties) would otherwise swamp the optimality tolerances
    scale = float(np.mean(pcol)) if n and np.any(pcol > 0) else _inf(q)
    c = 1.0 / scale if scale > 1e-12 else 1.0
    c = min(c, 1e6)
    out = _Problem((c * Ps).tocsc(), c * q, As, Ea * pb.b, Es, Ee * pb.e)
    return out, _Scaling(D, Ea, Ee, c)


# linear algebra --------------------------------------------------------------

class _KKTPattern:
    """Fixed sparsity pattern of ``[[P + A^T W A + dI, E^T], [E, -dI]]``.

    The matrix is rebuilt every interior-point iteration; precomputing the
    pattern turns each rebuild into one ``bincount``.
    """

    def __init__(self, P: sp.spmatrix, A: sp.spmatrix, E: sp.spmatrix):
        n, p = P.shape[0], E.shape[0]
        self.n, self.p = n, p
        N = n + p
        self.N = N
        self.dense = N <= DENSE_LIMIT
        Pc = P.tocoo()
        Ar = sp.csr_matrix(A)
        Ec = E.tocoo()
        # pairs (c_i, c_j) of every row of A
        counts = np.diff(Ar.indptr)
        rows_rep = np.repeat(np.arange(Ar.shape[0]), counts * counts)
        pi, pj, pv = [], [], []
        for r in range(Ar.shape[0]):
            lo, hi = Ar.indptr[r], Ar.indptr[r + 1]
            c = Ar.indices[lo:hi]
            v = Ar.data[lo:hi]
            pi.append(np.repeat(c, len(c)))
            pj.append(np.tile(c, len(c)))
            pv.append(np.outer(v, v).ravel())
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)  # noqa: E731
        pi, pj, pv = cat(pi, int), cat(pj, int), cat(pv, float)
        diag = np.arange(N)
        self.rows = np.concatenate([Pc.row, pi, diag, n + Ec.row, Ec.col])
        self.cols = np.concatenate([Pc.col, pj, diag, Ec.col, n + Ec.row])
        self._pv = Pc.data.astype(float)
        self._pairv = pv
        self._pair_rows = rows_rep
        self._ev = Ec.data.astype(float)
        if self.dense:
            self.key = self.rows * N + self.cols
        else:
            key = self.cols * N + self.rows
            uniq, self.inv = np.unique(key, return_inverse=True)
            self.indices = (uniq % N).astype(np.int32)
            colc = np.bincount(uniq // N, minlength=N)
            self.indptr = np.concatenate([[0], np.cumsum(colc)]).astype(np.int32)
            self.nnz = len(uniq)

    def values(self, w, delta):
        reg = np.concatenate([np.full(self.n, delta), np.full(self.p, -delta)])
        return np.concatenate([self._pv, self._pairv * w[self._pair_rows], reg, self._ev, self._ev]), reg

    def factor(self, w, delta, refine: int = 2) -> "_KKT":
        vals, reg = self.values(w, delta)
        if self.dense:
            K = np.bincount(self.key, weights=vals, minlength=self.N * self.N).reshape(self.N, self.N)
        else:
            data = np.bincount(self.inv, weights=vals, minlength=self.nnz)
            K = sp.csc_matrix((data, self.indices, self.indptr), shape=(self.N, self.N))
        return _KKT(K, reg, self.p == 0, refine)


class _KKT:
    """Factorisation of a regularised KKT matrix with iterative refinement.

    Refinement is done against the unregularised matrix ``K - diag(reg)``.
    """

    def __init__(self, K, reg, spd: bool, refine: int = 2):
        self.K = K
        self.reg = reg
        self.refine = refine
        self.dense = isinstance(K, np.ndarray)
        if self.dense:
            self._chol = None
            if spd:
                try:
                    self._chol = la.cho_factor(K, lower=True, check_finite=False)
                except la.LinAlgError:
                    self._chol = None
            if self._chol is None:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", la.LinAlgWarning)
                    self._lu = la.lu_factor(K, check_finite=False)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self._splu = spla.splu(K, permc_spec="MMD_AT_PLUS_A",
                                       options=dict(SymmetricMode=True), diag_pivot_thresh=0.0)
            if not np.all(np.isfinite(self._splu.U.diagonal())):
                raise np.linalg.LinAlgError("singular KKT system")

    def _raw(self, r):
        if self.dense:
            if self._chol is not None:
                return la.cho_solve(self._chol, r, check_finite=False)
            return la.lu_solve(self._lu, r, check_finite=False)
        return self._splu.solve(r)

    def solve(self, r):
        x = self._raw(r)
        for _ in range(self.refine):
            res = r - (self.K @ x - self.reg * x)
            x = x + self._raw(res)
        return x


# polishing -------------------------------------------------------------------

def _polish(pb: _Problem, x, y, mu, active: np.ndarray, delta: float = 1e-9, refine: int = 8):
    """Solve the equality-constrained problem of the active set."""
    n = pb.P.shape[0]
    Aact = pb.A[active]
    C = sp.vstack([Aact, pb.E]).tocsr() if pb.E.shape[0] else Aact
    k = C.shape[0]
    K0 = sp.bmat([[pb.P, C.T], [C, None]], format="csc") if k else pb.P.tocsc()
    reg = np.concatenate([np.full(n, delta), np.full(k, -delta)])
    K = (K0 + sp.diags(reg)).tocsc()
    rhs = np.concatenate([-pb.q, pb.b[active], pb.e])
    try:
        if n + k <= DENSE_LIMIT:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", la.LinAlgWarning)
                lu = la.lu_factor(K.toarray(), check_finite=False)
            raw = lambda r: la.lu_solve(lu, r, check_finite=False)  # noqa: E731
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                f = spla.splu(K, permc_spec="MMD_AT_PLUS_A")
            raw = f.solve
        sol = raw(rhs)
        for _ in range(refine):
            sol = sol + raw(rhs - K0 @ sol)
    except (np.linalg.LinAlgError, RuntimeError, ValueError):
        return None
    if not np.all(np.isfinite(sol)):
        return None
    xp = sol[:n]
    yp = np.zeros(len(pb.b))
    yp[active] = sol[n: n + len(active)]
    mup = sol[n + len(active):]
    if np.any(yp < 0):
        yp = np.maximum(yp, 0.0)
    # bound rows (single non-zero) on the active set are met exactly
    _snap_bounds(pb, xp, active)
    return xp, yp, mup


def _snap_bounds(pb: _Problem, x, active):
    A = pb.A
    nnz = np.diff(A.indptr)
    for r in active:
        if nnz[r] == 1:
            j = A.indices[A.indptr[r]]
            a = A.data[A.indptr[r]]
            if a != 0.0:
                target = pb.b[r] / a
                if abs(x[j] - target) <= 1e-9 * (1.0 + abs(target)):
                    x[j] = target


# interior point ----------------------------------------------------------------

def _ipm(sc: _Problem, tol: float, max_iter: int, x0=None):
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return _ipm_loop(sc, tol, max_iter, x0)


def _ipm_loop(sc: _Problem, tol: float, max_iter: int, x0=None):
    P, q, A, b, E, e = sc.P, sc.q, sc.A, sc.b, sc.E, sc.e
    n, m, p = P.shape[0], A.shape[0], E.shape[0]
    delta = 1e-10
    ones = np.ones(m)
    pattern = _KKTPattern(P, A, E)
    # start at the origin with multipliers of the size of the linear cost;
    # a least-squares start is thrown far off by large exact penalties
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = np.zeros(p)
    s = b - A @ x
    z = np.full(m, max(1.0, _inf(q)))
    if m:
        ds = max(-1.5 * s.min(), 0.0)
        s = s + ds
        s_dot_z = s @ z
        s = s + 0.5 * s_dot_z / z.sum()
        z = z + 0.5 * s_dot_z / max(s.sum(), 1e-300)
        s = np.maximum(s, 1e-8)
    best = None
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        rd = P @ x + q + A.T @ z + E.T @ y
        rp = A @ x + s - b
        re = E @ x - e
        mu = (s @ z) / m if m else 0.0
        obj = 0.5 * x @ (P @ x) + q @ x
        pr = max(_inf(rp), _inf(re)) / (1.0 + max(_inf(b), _inf(e), _inf(A @ x)))
        du = _dual_scaled(rd, P @ x, q, A.T @ z + E.T @ y)
        gap = (s @ z) / (1.0 + abs(obj)) if m else 0.0
        merit = max(pr, du, gap)
        if best is None or merit < 0.5 * best[0]:
            best = (merit, x.copy(), s.copy(), z.copy(), y.copy())
            stall = 0
        else:
            stall += 1
        if pr <= tol and du <= tol and gap <= tol:
            return x, s, z, y, it, True
        if stall >= 25 or not np.all(np.isfinite(x)) or _inf(x) > 1e30:
            break
        w = z / s
        try:
            kkt = pattern.factor(w, delta)
        except (np.linalg.LinAlgError, RuntimeError):
            delta *= 100
            if delta > 1e-2:
                break
            continue

        def reduced(rd_, rp_, re_, rc_):
            t = (z * rp_ - rc_) / s
            sol = kkt.solve(np.concatenate([-rd_ - A.T @ t, -re_]))
            dx = sol[:n]
            return dx, -rp_ - A @ dx, w * (A @ dx) + t, sol[n:]

        def direction(rc):
            # refine against the full Newton system: the reduced matrix loses
            # accuracy once z / s spans many orders of magnitude
            d = reduced(rd, rp, re, rc)
            for _ in range(2):
                dx, dsv, dz, dy = d
                ed = rd + P @ dx + A.T @ dz + E.T @ dy
                ep = rp + A @ dx + dsv
                ee = re + E @ dx
                ec = rc + z * dsv + s * dz
                if max(_inf(ed), _inf(ep), _inf(ee), _inf(ec)) == 0.0:
                    break
                c = reduced(ed, ep, ee, ec)
                d = tuple(u + v for u, v in zip(d, c))
            return d

        def max_step(u, du):
            neg = du < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-u[neg] / du[neg])))

        if m:
            dx, dsv, dz, dy = direction(s * z)
            a_aff = min(max_step(s, dsv), max_step(z, dz))
            mu_aff = ((s + a_aff * dsv) @ (z + a_aff * dz)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            rc = s * z + dsv * dz - sigma * mu * ones
            dx, dsv, dz, dy = direction(rc)
            alpha = min(1.0, 0.995 * min(max_step(s, dsv), max_step(z, dz)))
        else:
            dx, dsv, dz, dy = direction(np.zeros(0))
            alpha = 1.0
        x = x + alpha * dx
        s = s + alpha * dsv
        z = z + alpha * dz
        y = y + alpha * dy
        if m:
            s = np.maximum(s, 1e-300)
            z = np.maximum(z, 1e-300)
    _, x, s, z, y = best
    return x, s, z, y, it, False


# ADMM ---------------------------------------------------------------------------

def _admm(sc: _Problem, tol: float, max_iter: int, x0=None, sigma: float = 1e-6, alpha: float = 1.6):
    P, q = sc.P, sc.q
    C = sp.vstack([sc.A, sc.E]).tocsr()
    m, p = sc.A.shape[0], sc.E.shape[0]
    n = P.shape[0]
    lo = np.concatenate([np.full(m, -np.inf), sc.e])
    hi = np.concatenate([sc.b, sc.e])
    rho_base = 0.1
    rho_vec = np.concatenate([np.full(m, rho_base), np.full(p, 1e3 * rho_base)])

    def factor(rv):
        H = (P + sigma * sp.identity(n) + C.T @ sp.diags(rv) @ C).tocsc()
        if n <= DENSE_LIMIT:
            cf = la.cho_factor(H.toarray(), lower=True, check_finite=False)
            return lambda r: la.cho_solve(cf, r, check_finite=False)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            f = spla.splu(H, permc_spec="MMD_AT_PLUS_A")
        return f.solve

    solve_h = factor(rho_vec)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    zc = np.clip(C @ x, lo, hi)
    y = np.zeros(m + p)
    it = 0
    for it in range(1, max_iter + 1):
        xt = solve_h(sigma * x - q + C.T @ (rho_vec * zc - y))
        zt = C @ xt
        x_new = alpha * xt + (1 - alpha) * x
        z_rel = alpha * zt + (1 - alpha) * zc
        z_new = np.clip(z_rel + y / rho_vec, lo, hi)
        y = y + rho_vec * (z_rel - z_new)
        x, zc = x_new, z_new
        if it % 10 == 0 or it == max_iter:
            Cx = C @ x
            pr = _inf(Cx - zc) / (1.0 + max(_inf(Cx), _inf(zc)))
            Px = P @ x
            Cty = C.T @ y
            du = _inf(Px + q + Cty) / (1.0 + max(_inf(Px), _inf(q), _inf(Cty)))
            if pr <= tol and du <= tol:
                return x, y[:m], y[m:], it, True
            if it % 50 == 0 and du > 0 and pr > 0:
                ratio = np.sqrt((pr / du))
                if ratio > 5 or ratio < 0.2:
                    rho_vec = np.clip(rho_vec * ratio, 1e-6, 1e6)
                    solve_h = factor(rho_vec)
    return x, y[:m], y[m:], it, False


# driver ---------------------------------------------------------------------------

def _certify_infeasible(pb: _Problem) -> bool:
    n = pb.P.shape[0]
    if pb.A.shape[0] == 0 and pb.E.shape[0] == 0:
        return False
    res = linprog(
        np.zeros(n),
        A_ub=pb.A if pb.A.shape[0] else None,
        b_ub=pb.b if pb.A.shape[0] else None,
        A_eq=pb.E if pb.E.shape[0] else None,
        b_eq=pb.e if pb.E.shape[0] else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    return res.status == 2


def _worst_rows(pb: _Problem, x, tags, count: int = 5):
    viol = pb.A @ x - pb.b
    order = np.argsort(-viol)[:count]
    out = []
    for r in order:
        if viol[r] <= 0:
            break
        out.append({"row": int(r), "violation": float(viol[r]),
                    "tag": tags[r] if tags is not None and r < len(tags) else None})
    return out


def solve(problem, tol_primal: float = 1e-8, tol_dual: float = 1e-8, max_iter: int = 10**6,
          method: str = "ipm", x0=None, polish: bool = True) -> QPSolution:
    """Solve a convex QP to the requested scaled KKT tolerances.

    Args:
        problem: object with ``P, q, A, b`` and optionally ``E, e, tags``
            (for example ``assembly.QuadraticProgram``).
        tol_primal, tol_dual: scaled residual tolerances.
        max_iter: iteration cap.  The interior-point method stops earlier
            when it stops making progress.
        method: ``"ipm"`` or ``"admm"``.
        x0: optional initial iterate.
        polish: run the active-set polishing step.

    Returns:
        QPSolution.  ``Infeasible`` is only reported after a linear
        feasibility problem confirms that no feasible point exists; the
        ``info["worst_rows"]`` entry then lists the most violated tagged rows.
    """
    pb = _standardise(problem)
    tags = getattr(problem, "tags", None)
    n, m, p = pb.P.shape[0], pb.A.shape[0], pb.E.shape[0]
    tol = min(tol_primal, tol_dual)
    sc, scal = _equilibrate(pb)
    inner_tol = max(tol * 1e-2, 1e-13)

    if m == 0:
        x, y_in, mu, iters, ok = _solve_equality(pb)
    elif method == "ipm":
        xs, s, zs, ys, iters, ok = _ipm(sc, inner_tol if polish else tol * 0.1, min(max_iter, 500),
                                        None if x0 is None else np.asarray(x0) / scal.D)
        x = scal.D * xs
        y_in = scal.Ea * zs / scal.c
        mu = scal.Ee * ys / scal.c
    elif method == "admm":
        xs, ya, ye, iters, ok = _admm(sc, tol * 0.1, max_iter, None if x0 is None else np.asarray(x0) / scal.D)
        x = scal.D * xs
        y_in = np.maximum(scal.Ea * ya / scal.c, 0.0)
        mu = scal.Ee * ye / scal.c
    else:
        raise ValueError(f"unknown method {method!r}")

    pr, du, co = _residuals(pb, x, y_in, mu)
    info = {"method": method, "polished": False}
    if polish and m and np.all(np.isfinite(x)):
        slack = pb.b - pb.A @ x

        def try_polish():
            active = np.flatnonzero(y_in > np.maximum(slack, 0.0))
            pol = _polish(pb, x, y_in, mu, active)
            if pol is None:
                return None
            xp, yp, mp = pol
            r2 = _residuals(pb, xp, yp, mp)
            obj_ipm = 0.5 * x @ (pb.P @ x) + pb.q @ x
            obj_pol = 0.5 * xp @ (pb.P @ xp) + pb.q @ xp
            if (r2[0] <= tol_primal and r2[1] <= tol_dual and r2[2] <= tol_dual
                    and obj_pol <= obj_ipm + 1e-9 * (1.0 + abs(obj_ipm))):
                return xp, yp, mp, r2
            return None

        def try_snap():
            # move near-tight bound rows exactly onto their bound
            xs_ = x.copy()
            _snap_bounds(pb, xs_, np.flatnonzero(slack <= tol_primal * (1.0 + np.abs(pb.b))))
            r3 = _residuals(pb, xs_, y_in, mu)
            if r3[0] <= tol_primal and r3[1] <= tol_dual and r3[2] <= tol_dual:
                return xs_, y_in, mu, r3
            return None

        # the active-set solve is only worth its cost on small problems
        order = ((try_polish, "polished"), (try_snap, "snapped"))
        if n > DENSE_LIMIT:
            order = order[::-1]
        for attempt, key in order:
            res = attempt()
            if res is not None:
                x, y_in, mu, (pr, du, co) = res
                info[key] = True
                break
    info["abs_residuals"] = _residuals(pb, x, y_in, mu, scaled=False)
    status = SOLVED if (pr <= tol_primal and du <= tol_dual and co <= tol_dual) else MAX_ITERATIONS
    if status != SOLVED and (m or p) and _certify_infeasible(pb):
        status = INFEASIBLE
        info["worst_rows"] = _worst_rows(pb, x, tags)
    obj = float(0.5 * x @ (pb.P @ x) + pb.q @ x + getattr(problem, "const", 0.0))
    return QPSolution(x, status, obj, pr, du, co, iters, y_in, mu, info)


def _solve_equality(pb: _Problem):
    """No inequality rows: solve the KKT system directly (least squares fallback)."""
    n, p = pb.P.shape[0], pb.E.shape[0]
    K = sp.bmat([[pb.P, pb.E.T], [pb.E, None]], format="csc") if p else pb.P.tocsc()
    rhs = np.concatenate([-pb.q, pb.e])
    sol = None
    with warnings.catch_warnings():
        warnings.simplefilter("error", la.LinAlgWarning)
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            if n + p <= 2000:
                Kd = K.toarray()
                sol = la.solve(Kd, rhs, assume_a="sym", check_finite=False)
                for _ in range(3):
                    sol = sol + la.solve(Kd, rhs - Kd @ sol, assume_a="sym", check_finite=False)
            else:
                f = spla.splu(K, permc_spec="MMD_AT_PLUS_A")
                sol = f.solve(rhs)
                for _ in range(3):
                    sol = sol + f.solve(rhs - K @ sol)
        except (la.LinAlgError, la.LinAlgWarning, RuntimeError, spla.MatrixRankWarning):
            sol = None
    if sol is None or not np.all(np.isfinite(sol)):
        sol = la.lstsq(K.toarray(), rhs)[0]
    return sol[:n], np.zeros(0), sol[n:], 1, True
