"""Small dense semidefinite programs by a primal-dual interior-point method.

Problems are stated over Hermitian (or real symmetric) blocks::

    maximize    sum_j <C_j, X_j>
    subject to  sum_j <A_ij, X_j>  (<=, >=, ==)  b_i,   i = 1..m
                X_j PSD

with <A, X> = Re tr(A^H X). Internally complex blocks are embedded as real
symmetric blocks of twice the size, inequalities get nonnegative slack
scalars, and the resulting standard-form pair

    min <c, x>  s.t. A x = b, x in K        max b^T y  s.t. c - A^T y = z in K

is solved from a strictly feasible start. Strict feasibility comes from a
big-M artificial column (primal) and a trace bound (dual); the artificials are
driven to zero at optimality, and their survival flags infeasibility or
unboundedness. Search directions use Nesterov-Todd scaling with a Mehrotra
predictor-corrector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

RELATIONS = ("<=", ">=", "==")

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"

_STEP_FRACTION = 0.98
_BIG_M_LADDER = (1e4, 1e8, 1e12)
_BOUND_LADDER = (1e3, 1e7, 1e11)


@dataclass
class Constraint:
    """One affine constraint; ``coeffs[j]`` multiplies block ``j`` (``None`` means zero)."""

    coeffs: Sequence[np.ndarray | None]
    relation: str
    rhs: float


@dataclass
class ConicProgram:
    blocks: list[int]
    objective: list[np.ndarray | None]
    constraints: list[Constraint]

    def validate(self) -> None:
        nb = len(self.blocks)
        if nb == 0:
            raise ValueError("program needs at least one block")
        if len(self.objective) != nb:
            raise ValueError("one objective matrix per block is required")
        if not self.constraints:
            raise ValueError("program needs at least one constraint")
        for j, C in enumerate(self.objective):
            if C is not None:
                _check_hermitian(C, self.blocks[j], f"objective block {j}")
        for i, con in enumerate(self.constraints):
            if con.relation not in RELATIONS:
                raise ValueError(f"constraint {i}: relation must be one of {RELATIONS}")
            if len(con.coeffs) != nb:
                raise ValueError(f"constraint {i}: expected {nb} coefficient blocks")
            if not math.isfinite(con.rhs):
                raise ValueError(f"constraint {i}: right-hand side must be finite")
            for j, A in enumerate(con.coeffs):
                if A is not None:
                    _check_hermitian(A, self.blocks[j], f"constraint {i} block {j}")


@dataclass
class ConicSolution:
    status: str
    X: list[np.ndarray]
    y: np.ndarray
    Z: list[np.ndarray]
    slacks: np.ndarray
    objective: float
    dual_objective: float
    kkt_residuals: dict[str, float]
    iterations: int
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _check_hermitian(H: np.ndarray, n: int, what: str) -> None:
    H = np.asarray(H)
    if H.shape != (n, n):
        raise ValueError(f"{what}: expected shape {(n, n)}, got {H.shape}")
    if np.linalg.norm(H - H.conj().T) > 1e-10 * max(1.0, np.linalg.norm(H)):
        raise ValueError(f"{what}: matrix is not Hermitian")


def hermitian_embed(H: np.ndarray) -> np.ndarray:
    """Real symmetric image [[Re H, -Im H], [Im H, Re H]] of a Hermitian matrix.

    The map preserves positive semidefiniteness in both directions and doubles
    inner products: <embed(A), embed(B)> = 2 Re tr(A^H B).
    """
    H = np.asarray(H)
    n = H.shape[0]
    _check_hermitian(H, n, "hermitian_embed")
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def hermitian_unembed(S: np.ndarray) -> np.ndarray:
    """Hermitian matrix whose embedding is the J-symmetrization of ``S``."""
    n = S.shape[0] // 2
    re = 0.5 * (S[:n, :n] + S[n:, n:])
    im = 0.5 * (S[n:, :n] - S[:n, n:])
    X = re + 1j * im
    return 0.5 * (X + X.conj().T)


def min_rank_extract(X: np.ndarray, tol: float = 1e-6) -> tuple[int, float, np.ndarray]:
    """Numerical rank and leading eigenpair of a PSD matrix.

    Rank counts eigenvalues above ``tol * lambda_max``; a matrix with no positive
    eigenvalue has rank 0. ``sqrt(lambda_max) * v_max`` is the rank-one factor.
    """
    X = np.asarray(X)
    X = 0.5 * (X + X.conj().T)
    lam, V = np.linalg.eigh(X)
    lam_max = float(lam[-1])
    if lam_max <= 0.0:
        return 0, max(lam_max, 0.0), V[:, -1]
    rank = int(np.sum(lam > tol * lam_max))
    return rank, lam_max, V[:, -1]


# ---- standard form --------------------------------------------------------------


@dataclass
class _StdForm:
    # min <c, x>  s.t.  A x = b,  x = (symmetric blocks, nonnegative vector)
    c_blocks: list[np.ndarray]
    c_lin: np.ndarray
    A_blocks: list[np.ndarray]  # each (m, n, n)
    A_lin: np.ndarray  # (m, n_lin)
    b: np.ndarray

    @property
    def m(self) -> int:
        return self.b.shape[0]

    def apply(self, Xs, x) -> np.ndarray:
        out = self.A_lin @ x
        for A, X in zip(self.A_blocks, Xs):
            out = out + np.einsum("kij,ij->k", A, X)
        return out

    def adjoint(self, y) -> tuple[list[np.ndarray], np.ndarray]:
        return [np.einsum("k,kij->ij", y, A) for A in self.A_blocks], self.A_lin.T @ y

    def pobj(self, Xs, x) -> float:
        return float(sum(np.vdot(C, X) for C, X in zip(self.c_blocks, Xs)) + self.c_lin @ x)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _max_step_block(lam: np.ndarray, d: np.ndarray) -> float:
    r = 1.0 / np.sqrt(lam)
    e = np.linalg.eigvalsh(_sym(d * r[:, None] * r[None, :]))[0]
    return -1.0 / e if e < 0 else math.inf


def _max_step_lin(lam: np.ndarray, d: np.ndarray) -> float:
    neg = d < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-lam[neg] / d[neg]))


class _Divergence(RuntimeError):
    pass


def _interior_point(sf: _StdForm, Xs, x, y, Zs, z, tol, max_iter, on_iter=None):
    """Feasible-start NT predictor-corrector; returns the final iterate and iteration count."""
    nb = len(Xs)
    N = sum(X.shape[0] for X in Xs) + x.shape[0]
    bnorm = 1.0 + np.linalg.norm(sf.b)
    cnorm = 1.0 + math.sqrt(sum(np.sum(C * C) for C in sf.c_blocks) + float(sf.c_lin @ sf.c_lin))
    history = []
    for it in range(max_iter + 1):
        rp = sf.b - sf.apply(Xs, x)
        AtY, aty = sf.adjoint(y)
        rd = [sf.c_blocks[j] - AtY[j] - Zs[j] for j in range(nb)]
        rdl = sf.c_lin - aty - z
        pobj = sf.pobj(Xs, x)
        dobj = float(sf.b @ y)
        comp = sum(float(np.vdot(X, Z)) for X, Z in zip(Xs, Zs)) + float(x @ z)
        mu = comp / N
        pres = np.linalg.norm(rp) / bnorm
        dres = math.sqrt(sum(np.sum(R * R) for R in rd) + float(rdl @ rdl)) / cnorm
        gap = pobj - dobj
        history.append({"iter": it, "pobj": pobj, "dobj": dobj, "gap": gap, "mu": mu, "pres": pres, "dres": dres})
        if on_iter is not None:
            on_iter(history[-1])
        if max(pres, dres) < tol and abs(gap) < tol * (1.0 + abs(pobj)) and comp < tol * (1.0 + abs(pobj)):
            return Xs, x, y, Zs, z, it, history, True
        if it == max_iter:
            break

        # Nesterov-Todd scaling: G^T Z G = G^{-1} X G^{-T} = diag(lam)
        Gs, Gis, lams, Ws = [], [], [], []
        try:
            for X, Z in zip(Xs, Zs):
                Lx = np.linalg.cholesky(X)
                Lz = np.linalg.cholesky(Z)
                U, s, Vt = np.linalg.svd(Lz.T @ Lx)
                rs = 1.0 / np.sqrt(s)
                G = (Lx @ Vt.T) * rs[None, :]
                Gi = (U.T @ Lz.T) * rs[:, None]
                Gs.append(G)
                Gis.append(Gi)
                lams.append(s)
                Ws.append(G @ G.T)
        except np.linalg.LinAlgError as exc:
            raise _Divergence("lost positive definiteness") from exc
        wl = np.sqrt(x / z)
        laml = np.sqrt(x * z)

        H = (sf.A_lin * (wl * wl)[None, :]) @ sf.A_lin.T
        for A, W in zip(sf.A_blocks, Ws):
            WAW = np.einsum("ij,kjl,lm->kim", W, A, W)
            H = H + np.einsum("kij,lij->kl", A, WAW)
        H = 0.5 * (H + H.T)
        try:
            Lh = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            Lh = np.linalg.cholesky(H + 1e-14 * np.trace(H) * np.eye(sf.m))

        WrdW = [W @ R @ W for W, R in zip(Ws, rd)]
        base_rhs = rp + sf.apply(WrdW, wl * wl * rdl)

        def direction(Rs, Rl):
            Ss = [2.0 * R / (lam[:, None] + lam[None, :]) for R, lam in zip(Rs, lams)]
            Sl = Rl / laml
            GSG = [G @ S @ G.T for G, S in zip(Gs, Ss)]
            rhs = base_rhs - sf.apply(GSG, wl * Sl)
            dy = np.linalg.solve(Lh.T, np.linalg.solve(Lh, rhs))
            AtD, atd = sf.adjoint(dy)
            dZ = [_sym(R - D) for R, D in zip(rd, AtD)]
            dz = rdl - atd
            dzt = [_sym(G.T @ D @ G) for G, D in zip(Gs, dZ)]
            dztl = wl * dz
            dxt = [S - D for S, D in zip(Ss, dzt)]
            dxtl = Sl - dztl
            dX = [_sym(G @ D @ G.T) for G, D in zip(Gs, dxt)]
            dx = wl * dxtl
            return dX, dx, dy, dZ, dz, dxt, dxtl, dzt, dztl

        def steps(dxt, dxtl, dzt, dztl):
            ap = min([_max_step_lin(laml, dxtl)] + [_max_step_block(l, d) for l, d in zip(lams, dxt)])
            ad = min([_max_step_lin(laml, dztl)] + [_max_step_block(l, d) for l, d in zip(lams, dzt)])
            return ap, ad

        # predictor
        Rs = [-np.diag(lam * lam) for lam in lams]
        Rl = -laml * laml
        _, _, _, _, _, dxt_a, dxtl_a, dzt_a, dztl_a = direction(Rs, Rl)
        ap, ad = steps(dxt_a, dxtl_a, dzt_a, dztl_a)
        ap, ad = min(1.0, ap), min(1.0, ad)
        comp_aff = float(
            sum(np.vdot(np.diag(l) + ap * dx_, np.diag(l) + ad * dz_) for l, dx_, dz_ in zip(lams, dxt_a, dzt_a))
            + (laml + ap * dxtl_a) @ (laml + ad * dztl_a)
        )
        sigma = min(1.0, max(comp_aff / comp, 0.0) ** 3)

        # corrector
        Rs = []
        for lam, dxa, dza in zip(lams, dxt_a, dzt_a):
            R = -np.diag(lam * lam) - 0.5 * (dxa @ dza + dza @ dxa)
            R[np.diag_indices_from(R)] += sigma * mu
            Rs.append(R)
        Rl = sigma * mu - laml * laml - dxtl_a * dztl_a
        dX, dx, dy, dZ, dz, dxt, dxtl, dzt, dztl = direction(Rs, Rl)
        ap, ad = steps(dxt, dxtl, dzt, dztl)
        ap = min(1.0, _STEP_FRACTION * ap)
        ad = min(1.0, _STEP_FRACTION * ad)
        history[-1].update(alpha_p=ap, alpha_d=ad, sigma=sigma)
        if ap < 1e-14 and ad < 1e-14:
            raise _Divergence("step length collapsed")

        Xs = [_sym(X + ap * D) for X, D in zip(Xs, dX)]
        x = x + ap * dx
        y = y + ad * dy
        Zs = [_sym(Z + ad * D) for Z, D in zip(Zs, dZ)]
        z = z + ad * dz
    return Xs, x, y, Zs, z, max_iter, history, False


# ---- user-facing solve ----------------------------------------------------------


def _inner(A: np.ndarray, X: np.ndarray) -> float:
    return float(np.sum(A.conj() * X).real)


def _build(program: ConicProgram):
    nb = len(program.blocks)
    complex_block = []
    for j in range(nb):
        mats = [program.objective[j]] + [con.coeffs[j] for con in program.constraints]
        complex_block.append(any(M is not None and np.iscomplexobj(M) and np.any(np.imag(M) != 0) for M in mats))
    dims = [2 * n if cb else n for n, cb in zip(program.blocks, complex_block)]

    def real_image(M, j):
        if M is None:
            return np.zeros((dims[j], dims[j]))
        M = np.asarray(M)
        if complex_block[j]:
            return 0.5 * hermitian_embed(0.5 * (M + M.conj().T))
        return np.real(0.5 * (M + M.conj().T)).astype(float)

    m = len(program.constraints)
    ineq = [i for i, con in enumerate(program.constraints) if con.relation != "=="]
    A_blocks = [np.stack([real_image(con.coeffs[j], j) for con in program.constraints]) for j in range(nb)]
    A_lin = np.zeros((m, len(ineq)))
    for col, i in enumerate(ineq):
        A_lin[i, col] = 1.0 if program.constraints[i].relation == "<=" else -1.0
    b = np.array([float(con.rhs) for con in program.constraints])

    row_norm = np.sqrt(sum(np.sum(A * A, axis=(1, 2)) for A in A_blocks) + np.sum(A_lin * A_lin, axis=1))
    row_norm[row_norm == 0.0] = 1.0
    A_blocks = [A / row_norm[:, None, None] for A in A_blocks]
    A_lin = A_lin / row_norm[:, None]
    b = b / row_norm

    c_blocks = [-real_image(program.objective[j], j) for j in range(nb)]
    c_scale = math.sqrt(sum(np.sum(C * C) for C in c_blocks))
    if c_scale == 0.0:
        c_scale = 1.0
    c_blocks = [C / c_scale for C in c_blocks]
    sf = _StdForm(c_blocks, np.zeros(len(ineq)), A_blocks, A_lin, b)
    return sf, complex_block, ineq, row_norm, c_scale


def _augment(sf: _StdForm, big_m: float, bound: float):
    """Add the big-M column and trace-bound row; return the program and a strictly feasible start."""
    dims = [C.shape[0] for C in sf.c_blocks]
    n_lin = sf.c_lin.shape[0]
    N = sum(dims) + n_lin
    U = bound * max(1.0, N)
    r = sf.b - sf.apply([np.eye(n) for n in dims], np.ones(n_lin))
    m = sf.m
    A_blocks = [np.concatenate([A, np.eye(n)[None]], axis=0) for A, n in zip(sf.A_blocks, dims)]
    A_lin = np.zeros((m + 1, n_lin + 2))
    A_lin[:m, :n_lin] = sf.A_lin
    A_lin[m, :n_lin] = 1.0
    A_lin[:m, n_lin] = r  # artificial
    A_lin[m, n_lin + 1] = 1.0  # bound slack
    b = np.concatenate([sf.b, [U]])
    c_lin = np.concatenate([sf.c_lin, [big_m, 0.0]])
    aug = _StdForm(sf.c_blocks, c_lin, A_blocks, A_lin, b)

    Xs = [np.eye(n) for n in dims]
    x = np.concatenate([np.ones(n_lin), [1.0, U - N]])
    low = min([float(np.linalg.eigvalsh(C)[0]) for C in sf.c_blocks] + [float(np.min(sf.c_lin, initial=0.0))])
    y0 = -(1.0 + max(0.0, -low))
    y = np.zeros(m + 1)
    y[m] = y0
    Zs = [C - y0 * np.eye(n) for C, n in zip(sf.c_blocks, dims)]
    z = np.concatenate([sf.c_lin - y0, [big_m, -y0]])
    return aug, (Xs, x, y, Zs, z), r, U


def solve(
    program: ConicProgram,
    tol: float = 1e-8,
    max_iter: int = 200,
    trace: IO[str] | None = None,
) -> ConicSolution:
    """Solve ``program`` to relative duality gap ``tol``.

    Parameters
    ----------
    program : ConicProgram
        Maximization problem over Hermitian blocks.
    tol : float
        Relative tolerance on gap, complementarity and residuals.
    max_iter : int
        Interior-point iteration cap per attempt.
    trace : text stream, optional
        When given, one JSON object per iterate is written to it.

    Returns
    -------
    ConicSolution
        ``status`` is ``optimal``, ``infeasible`` (with a certificate residual in
        ``info``) or ``numerical-failure``; results are never silently wrong.
    """
    program.validate()
    sf, complex_block, ineq, row_norm, c_scale = _build(program)
    n_lin = sf.c_lin.shape[0]

    def emit(rec):
        if trace is not None:
            trace.write(json.dumps(rec) + "\n")

    total_iters = 0
    history: list[dict] = []
    last = None
    status = NUMERICAL_FAILURE
    reason = ""
    for big_m in _BIG_M_LADDER:
        bound_ok = False
        for bound in _BOUND_LADDER:
            aug, start, r, U = _augment(sf, big_m, bound)
            try:
                Xs, x, y, Zs, z, its, hist, converged = _interior_point(
                    aug, *start, tol=min(tol, 1e-9) * 0.1, max_iter=max_iter, on_iter=emit
                )
            except _Divergence as exc:
                reason = str(exc)
                total_iters += max_iter
                last = None
                break
            total_iters += its
            history = hist
            last = (Xs, x, y, Zs, z, r, U, converged)
            theta = x[n_lin + 1]
            if theta > 1e-3 * U:
                bound_ok = True
                break
        if last is None:
            continue
        Xs, x, y, Zs, z, r, U, converged = last
        xi = x[n_lin]
        artificial_small = xi * np.linalg.norm(r) <= 0.1 * tol * (1.0 + np.linalg.norm(sf.b))
        if not bound_ok:
            status, reason = INFEASIBLE, "dual infeasible (primal unbounded)"
            break
        if artificial_small:
            status = OPTIMAL if converged else NUMERICAL_FAILURE
            reason = "" if converged else "iteration limit reached"
            break
        status, reason = INFEASIBLE, "primal infeasible"

    if last is None:
        m = len(program.constraints)
        empty = [np.zeros((n, n), complex if cb else float) for n, cb in zip(program.blocks, complex_block)]
        return ConicSolution(
            NUMERICAL_FAILURE, empty, np.full(m, np.nan), empty, np.zeros(len(ineq)),
            math.nan, math.nan, {"primal": math.inf, "dual": math.inf, "gap": math.inf},
            total_iters, {"reason": reason},
        )

    Xs, x, y, Zs, z, r, U, converged = last
    m = len(program.constraints)
    y_std = y[:m]
    X_user = []
    for j, X in enumerate(Xs):
        X_user.append(hermitian_unembed(X) if complex_block[j] else _sym(X))
    slacks = np.zeros(n_lin)
    # multipliers in the user's orientation: sum_i y_i A_i - C is PSD at optimality
    y_user = -y_std * c_scale / row_norm

    # slack values recomputed from the user data so that equalities hold exactly in the report
    lhs = np.array([
        sum(_inner(np.asarray(A), X) for A, X in zip(con.coeffs, X_user) if A is not None)
        for con in program.constraints
    ])
    rhs = np.array([con.rhs for con in program.constraints], dtype=float)
    for col, i in enumerate(ineq):
        slacks[col] = max(lhs[i] - rhs[i], 0.0) if program.constraints[i].relation == ">=" else max(rhs[i] - lhs[i], 0.0)

    Z_user, kkt, pobj, dobj = _kkt(program, X_user, y_user, slacks, ineq, lhs)
    info = {
        "reason": reason,
        "artificial": float(x[n_lin]),
        "bound_slack": float(x[n_lin + 1]),
        "history": [
            {**h, "pobj_user": -h["pobj"] * c_scale, "dobj_user": -h["dobj"] * c_scale} for h in history
        ],
    }
    if status == INFEASIBLE:
        info["certificate_residual"] = _certificate_residual(program, y_user, ineq, kind=reason)
    return ConicSolution(status, X_user, y_user, Z_user, slacks, pobj, dobj, kkt, total_iters, info)


def _kkt(program, X_user, y_user, slacks, ineq, lhs):
    rhs = np.array([con.rhs for con in program.constraints], dtype=float)
    signed = lhs.copy()
    for col, i in enumerate(ineq):
        signed[i] += slacks[col] if program.constraints[i].relation == "<=" else -slacks[col]
    primal = float(np.linalg.norm(signed - rhs) / (1.0 + np.linalg.norm(rhs)))
    # X feasibility in the cone
    for X in X_user:
        lam_min = float(np.linalg.eigvalsh(X)[0])
        primal = max(primal, max(0.0, -lam_min) / (1.0 + float(np.trace(X).real)))

    Z_user = []
    dual = 0.0
    cnorm = 1.0 + math.sqrt(sum(np.linalg.norm(C) ** 2 for C in program.objective if C is not None))
    for j, n in enumerate(program.blocks):
        Zj = np.zeros((n, n), dtype=complex)
        for yi, con in zip(y_user, program.constraints):
            if con.coeffs[j] is not None:
                Zj = Zj + yi * np.asarray(con.coeffs[j])
        if program.objective[j] is not None:
            Zj = Zj - np.asarray(program.objective[j])
        Zj = 0.5 * (Zj + Zj.conj().T)
        if not np.iscomplexobj(X_user[j]):
            Zj = Zj.real
        Z_user.append(Zj)
        dual = max(dual, max(0.0, -float(np.linalg.eigvalsh(Zj)[0])) / cnorm)
    # sign conditions on multipliers of inequality rows
    for i in ineq:
        rel = program.constraints[i].relation
        bad = y_user[i] if rel == ">=" else -y_user[i]
        dual = max(dual, max(0.0, bad) / cnorm)

    pobj = sum(_inner(np.asarray(C), X) for C, X in zip(program.objective, X_user) if C is not None)
    dobj = float(rhs @ y_user)
    comp = sum(_inner(Z, X) for Z, X in zip(Z_user, X_user))
    for col, i in enumerate(ineq):
        comp += abs(y_user[i] * slacks[col])
    gap = max(abs(dobj - pobj), abs(comp)) / (1.0 + abs(pobj))
    return Z_user, {"primal": primal, "dual": dual, "gap": float(gap)}, float(pobj), dobj


def _certificate_residual(program, y_user, ineq, kind: str) -> float:
    """Violation of the normalized Farkas ray built from the final multipliers."""
    if not kind.startswith("primal"):
        return math.nan
    rhs = np.array([con.rhs for con in program.constraints], dtype=float)
    scale = float(rhs @ y_user)
    if scale == 0.0:
        return math.inf
    # ray: sum_i t_i A_i PSD with b^T t < 0 proves infeasibility of the primal
    t = y_user / abs(scale)
    worst = 0.0
    for j, n in enumerate(program.blocks):
        S = np.zeros((n, n), dtype=complex)
        for ti, con in zip(t, program.constraints):
            if con.coeffs[j] is not None:
                S = S + ti * np.asarray(con.coeffs[j])
        worst = max(worst, max(0.0, -float(np.linalg.eigvalsh(0.5 * (S + S.conj().T))[0])))
    for i in ineq:
        rel = program.constraints[i].relation
        worst = max(worst, max(0.0, t[i] if rel == ">=" else -t[i]))
    return float(worst + max(0.0, float(rhs @ t) + 1.0))
