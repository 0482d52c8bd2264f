"""Transmit design: the SCA loop for the proposed scheme and the three benchmarks.

Every design maximizes (a monotone image of) gamma_c^2 + 2 gamma_s subject to
the CU SINR target and the power budget. With A = a* a^T and t = tr(W A),
s = tr(R0 A), the objective in physical units is

    F(W, R0) = k t^2 + 2 s,   k = M_r |alpha|^2 / sigma_s^2,

and gamma_c^2 + 2 gamma_s = k F. The convex t^2 term is handled by successive
linearization, one semidefinite program per iteration.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .detector import ts_pd_given_pfa
from .model import BeamformerDesign, ChannelSet, OperatingPoint, SystemConfig, sensing_snrs
from .sdp import Constraint, ConicProgram, min_rank_extract, solve

MAX_SCA_ITERATIONS = 50
SCA_RTOL = 1e-7
RANK_TOL = 1e-6
SOLVER_TOL = 1e-9
# a W block whose trace is below this fraction of P is treated as the zero matrix
ZERO_TRACE_FRACTION = 1e-8
ENDPOINT_TIE_RTOL = 1e-9


class InfeasibleDesign(ValueError):
    """The SINR target exceeds what full-power MRT can deliver."""

    def __init__(self, message: str, max_sinr: float):
        super().__init__(message)
        self.max_sinr = max_sinr


class ScaError(RuntimeError):
    """The per-iteration program could not be solved."""


@dataclass
class DesignProblem:
    config: SystemConfig
    channels: ChannelSet
    p_fa: float = 1e-4

    def __post_init__(self):
        if self.channels.M_t != self.config.M_t or self.channels.M_r != self.config.M_r:
            raise ValueError("channel dimensions do not match the system configuration")
        if not 0.0 < self.p_fa < 1.0:
            raise ValueError("p_fa must lie in (0, 1)")

    @property
    def k(self) -> float:
        return self.config.M_r * abs(self.channels.alpha) ** 2 / self.config.sigma_s2


@dataclass
class ScaState:
    k: int
    W: np.ndarray
    R0: np.ndarray
    objective: float
    rank_ratio: float = 0.0
    solver_status: str = ""
    kkt: float = 0.0


@dataclass
class Diagnostics:
    start: str = ""
    objectives: list[float] = field(default_factory=list)
    rank_ratios: list[float] = field(default_factory=list)
    solver_statuses: list[str] = field(default_factory=list)
    kkt_residuals: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    max_sinr: float = math.nan
    starts: dict[str, float] = field(default_factory=dict)
    # worst case over every SCA run, not only the kept one
    worst: dict[str, float] = field(default_factory=dict)
    note: str = ""

    @property
    def max_rank_ratio(self) -> float:
        return max(self.rank_ratios, default=0.0)

    @property
    def max_kkt(self) -> float:
        return max(self.kkt_residuals, default=0.0)

    def monotone(self, slack: float = 1e-9) -> bool:
        obj = self.objectives
        return all(b >= a - slack * max(abs(a), 1e-300) for a, b in zip(obj, obj[1:]))

    def to_json(self) -> str:
        d = asdict(self)
        d["max_rank_ratio"] = self.max_rank_ratio
        d["max_kkt"] = self.max_kkt
        return json.dumps(d, sort_keys=True)


# ---- objective pieces -----------------------------------------------------------


def _aa(a: np.ndarray) -> np.ndarray:
    return np.outer(a.conj(), a)


def _quad(M: np.ndarray, a: np.ndarray) -> float:
    # tr(M a* a^T) = a^T M a*
    return float((a @ M @ a.conj()).real)


def surrogate_objective(W: np.ndarray, W_k: np.ndarray, a: np.ndarray) -> float:
    """First-order lower bound of tr^2(W a* a^T) around ``W_k``."""
    tk = _quad(W_k, a)
    return 2.0 * tk * _quad(W, a) - tk * tk


def design_objective(W: np.ndarray, R0: np.ndarray, problem: DesignProblem) -> float:
    """k tr^2(W A) + 2 tr(R0 A); equals (gamma_c^2 + 2 gamma_s) / k."""
    a = problem.channels.a
    t = _quad(W, a)
    return problem.k * t * t + 2.0 * _quad(R0, a)


def feasibility_check(problem: DesignProblem) -> dict:
    cfg = problem.config
    h = problem.channels.h
    max_sinr = cfg.P * float(np.vdot(h, h).real) / cfg.sigma_c2
    return {"feasible": bool(cfg.gamma_0 <= max_sinr), "max_sinr": max_sinr}


def _require_feasible(problem: DesignProblem) -> float:
    fc = feasibility_check(problem)
    if not fc["feasible"]:
        raise InfeasibleDesign(
            f"SINR target {problem.config.gamma_0:.6g} exceeds the maximum achievable {fc['max_sinr']:.6g}",
            fc["max_sinr"],
        )
    return fc["max_sinr"]


def _mrt(problem: DesignProblem, power: float) -> np.ndarray:
    h = problem.channels.h
    nh = np.linalg.norm(h)
    if nh == 0.0:
        return np.zeros_like(h)
    return math.sqrt(max(power, 0.0)) * h / nh


def _steered_covariance(problem: DesignProblem, power: float) -> np.ndarray:
    a = problem.channels.a
    return max(power, 0.0) * _aa(a) / float(np.vdot(a, a).real)


def _min_power_mrt(problem: DesignProblem, R0: np.ndarray) -> np.ndarray:
    """Smallest-norm w meeting the SINR target with equality given interference from ``R0``."""
    cfg = problem.config
    h = problem.channels.h
    need = cfg.gamma_0 * (float(np.vdot(h, R0 @ h).real) + cfg.sigma_c2)
    hh = float(np.vdot(h, h).real)
    return _mrt(problem, need / hh if hh > 0 else 0.0)


def _boundary_design(problem: DesignProblem, max_sinr: float) -> BeamformerDesign | None:
    # at gamma_0 = max_sinr the feasible set is the single full-power MRT point
    if problem.config.gamma_0 >= max_sinr * (1.0 - 1e-9) and problem.config.gamma_0 > 0:
        M = problem.config.M_t
        return BeamformerDesign(_mrt(problem, problem.config.P), np.zeros((M, M), complex))
    return None


# ---- scaled per-iteration programs ----------------------------------------------


def _scaled_data(problem: DesignProblem):
    cfg = problem.config
    hs = problem.channels.h * math.sqrt(cfg.P / cfg.sigma_c2)
    return _aa(problem.channels.a), np.outer(hs, hs.conj())


def _constraints(problem: DesignProblem, include_r0: bool = True) -> list[Constraint]:
    # variables are W / P and R0 / P; SINR row reads tr(W' H') - g0 tr(R0' H') >= g0
    g0 = problem.config.gamma_0
    _, Hs = _scaled_data(problem)
    M = problem.config.M_t
    eye = np.eye(M)
    if include_r0:
        return [
            Constraint([Hs, -g0 * Hs], ">=", g0),
            Constraint([eye, eye], "<=", 1.0),
        ]
    return [Constraint([Hs], ">=", g0), Constraint([eye], "<=", 1.0)]


def _solve_or_raise(prog: ConicProgram, context: str):
    sol = solve(prog, tol=SOLVER_TOL)
    if not sol.optimal:
        raise ScaError(f"{context}: solver returned {sol.status} ({sol.info.get('reason', '')})")
    return sol


def _rank_ratio(W: np.ndarray, P: float) -> float:
    if float(np.trace(W).real) <= ZERO_TRACE_FRACTION * P:
        return 0.0
    lam = np.linalg.eigvalsh(0.5 * (W + W.conj().T))
    return float(max(lam[-2], 0.0) / lam[-1]) if lam.shape[0] > 1 else 0.0


def sca_iteration(state: ScaState, problem: DesignProblem) -> ScaState:
    """Solve the program linearized at ``state`` and return the next iterate."""
    P = problem.config.P
    A, _ = _scaled_data(problem)
    t_k = _quad(state.W, problem.channels.a) / P
    # objective of the linearized program divided by P^2 (constant term dropped)
    prog = ConicProgram(
        blocks=[problem.config.M_t, problem.config.M_t],
        objective=[2.0 * problem.k * P * t_k * A, 2.0 * A],
        constraints=_constraints(problem),
    )
    sol = _solve_or_raise(prog, f"SCA iteration {state.k + 1}")
    W = P * sol.X[0]
    R0 = P * sol.X[1]
    W = 0.5 * (W + W.conj().T)
    R0 = 0.5 * (R0 + R0.conj().T)
    return ScaState(
        k=state.k + 1,
        W=W,
        R0=R0,
        objective=design_objective(W, R0, problem),
        rank_ratio=_rank_ratio(W, P),
        solver_status=sol.status,
        kkt=max(sol.kkt_residuals.values()),
    )


def _initial_split(problem: DesignProblem) -> ScaState:
    """MRT meeting the SINR target with equality, the remaining power steered to the target."""
    cfg = problem.config
    h, a = problem.channels.h, problem.channels.a
    hh = float(np.vdot(h, h).real)
    leak = abs(np.vdot(h, a.conj())) ** 2 / float(np.vdot(a, a).real)
    # SINR(p_w) = p_w hh / ((P - p_w) leak + sigma^2) is increasing in p_w; equality is linear
    p_w = cfg.gamma_0 * (cfg.P * leak + cfg.sigma_c2) / (hh + cfg.gamma_0 * leak)
    p_w = min(p_w, cfg.P)
    w = _mrt(problem, p_w)
    W = np.outer(w, w.conj())
    R0 = _steered_covariance(problem, cfg.P - p_w)
    return ScaState(0, W, R0, design_objective(W, R0, problem))


def _run_sca(problem: DesignProblem, state: ScaState, diag: Diagnostics) -> ScaState:
    diag.objectives = [state.objective]
    diag.rank_ratios = []
    diag.solver_statuses = []
    diag.kkt_residuals = []
    diag.converged = False
    for _ in range(MAX_SCA_ITERATIONS):
        new = sca_iteration(state, problem)
        diag.objectives.append(new.objective)
        diag.rank_ratios.append(new.rank_ratio)
        diag.solver_statuses.append(new.solver_status)
        diag.kkt_residuals.append(new.kkt)
        change = abs(new.objective - state.objective) / max(abs(state.objective), 1e-300)
        state = new
        if change < SCA_RTOL:
            diag.converged = True
            break
    diag.iterations = state.k
    return state


def _extract_w(W: np.ndarray, P: float) -> np.ndarray:
    if float(np.trace(W).real) <= ZERO_TRACE_FRACTION * P:
        return np.zeros(W.shape[0], complex)
    _, lam, v = min_rank_extract(W, RANK_TOL)
    return math.sqrt(lam) * v


def optimize_proposed(problem: DesignProblem) -> tuple[BeamformerDesign, OperatingPoint, Diagnostics]:
    """Superimposed design maximizing gamma_c^2 + 2 gamma_s by SCA.

    SCA is run from three feasible starts (the MRT/steered split, the Gaussian-only
    design and the deterministic-first design) and the best stationary point is
    kept, so the result never falls below either benchmark. Near-ties are broken
    toward more deterministic power.
    """
    cfg, ch = problem.config, problem.channels
    max_sinr = _require_feasible(problem)
    M = cfg.M_t
    if not np.any(ch.a) or ch.alpha == 0:
        warnings.warn("no target path: returning the pure communication design", RuntimeWarning, stacklevel=2)
        design = BeamformerDesign(_mrt(problem, cfg.P), np.zeros((M, M), complex))
        diag = Diagnostics(start="communication-only", max_sinr=max_sinr, converged=True, note="degenerate target channel")
        return design, sensing_snrs(design, ch.alpha, ch.a, cfg), diag

    boundary = _boundary_design(problem, max_sinr)
    if boundary is not None:
        W = np.outer(boundary.w, boundary.w.conj())
        obj = design_objective(W, boundary.R0, problem)
        diag = Diagnostics(start="boundary", objectives=[obj], max_sinr=max_sinr, converged=True,
                           note="SINR target equals the MRT maximum")
        return boundary, sensing_snrs(boundary, ch.alpha, ch.a, cfg), diag

    starts = {"split": _initial_split(problem)}
    g = optimize_gaussian_only(problem)
    starts["gaussian-only"] = ScaState(0, np.outer(g.w, g.w.conj()), g.R0, 0.0)
    m = optimize_mf_superimposed(problem)
    starts["mf-superimposed"] = ScaState(0, np.outer(m.w, m.w.conj()), m.R0, 0.0)

    best = None
    values = {}
    worst = {"rank_ratio": 0.0, "kkt": 0.0, "monotone": 1.0, "solves": 0.0}
    for name, st in starts.items():
        st.objective = design_objective(st.W, st.R0, problem)
        d = Diagnostics(start=name, max_sinr=max_sinr)
        final = _run_sca(problem, st, d)
        worst["rank_ratio"] = max(worst["rank_ratio"], d.max_rank_ratio)
        worst["kkt"] = max(worst["kkt"], d.max_kkt)
        worst["monotone"] = min(worst["monotone"], float(d.monotone()))
        worst["solves"] += len(d.kkt_residuals)
        w = _extract_w(final.W, cfg.P)
        design = BeamformerDesign(w, final.R0)
        value = design_objective(np.outer(w, w.conj()), final.R0, problem)
        if best is None:
            best = (value, design, d)
        else:
            b_val, b_design, _ = best
            if value > b_val * (1.0 + ENDPOINT_TIE_RTOL) or (
                value >= b_val * (1.0 - ENDPOINT_TIE_RTOL) and design.sensing_power > b_design.sensing_power
            ):
                best = (value, design, d)
        values[name] = float(value)
    value, design, diag = best
    diag.starts = dict(sorted(values.items()))
    diag.worst = worst
    return design, sensing_snrs(design, ch.alpha, ch.a, cfg), diag


def optimize_gaussian_only(problem: DesignProblem) -> BeamformerDesign:
    """Benchmark without deterministic signals: maximize tr(W A) under SINR and power."""
    cfg = problem.config
    max_sinr = _require_feasible(problem)
    M = cfg.M_t
    boundary = _boundary_design(problem, max_sinr)
    if boundary is not None:
        return boundary
    A, _ = _scaled_data(problem)
    prog = ConicProgram([M], [A], _constraints(problem, include_r0=False))
    sol = _solve_or_raise(prog, "gaussian-only design")
    return BeamformerDesign(_extract_w(cfg.P * sol.X[0], cfg.P), np.zeros((M, M), complex))


def optimize_mf_superimposed(problem: DesignProblem) -> BeamformerDesign:
    """Benchmark steering all spare power into deterministic signals.

    Maximizes tr(R0 A); the information beamformer is then the minimum-power MRT
    that meets the SINR target against the resulting interference.
    """
    cfg = problem.config
    max_sinr = _require_feasible(problem)
    M = cfg.M_t
    boundary = _boundary_design(problem, max_sinr)
    if boundary is not None:
        return boundary
    A, _ = _scaled_data(problem)
    prog = ConicProgram([M, M], [None, A], _constraints(problem))
    sol = _solve_or_raise(prog, "mf-superimposed design")
    R0 = cfg.P * sol.X[1]
    return BeamformerDesign(_min_power_mrt(problem, R0), R0)


def plan_time_switching(problem: DesignProblem, rate_threshold: float) -> tuple[int, int, float]:
    """Split the frame into L_c full-power MRT slots and L_s steered sensing slots.

    Returns ``(L_s, L_c, p_d)`` where ``p_d`` is the coherent detection probability
    of the sensing slots at the problem's false-alarm probability.
    """
    if not rate_threshold >= 0:
        raise ValueError("rate threshold must be nonnegative")
    cfg = problem.config
    max_sinr = feasibility_check(problem)["max_sinr"]
    rate = math.log2(1.0 + max_sinr)
    if rate_threshold > rate * (1.0 + 1e-12):
        raise InfeasibleDesign(
            f"rate threshold {rate_threshold:.6g} exceeds the full-power rate {rate:.6g}", max_sinr
        )
    if rate_threshold == 0.0:
        L_c = 0
    else:
        # a hair of slack so that exact fractions (e.g. R/2) do not round up an extra slot
        L_c = math.ceil(cfg.L * rate_threshold / rate - 1e-9)
    L_c = min(max(L_c, 0), cfg.L)
    L_s = cfg.L - L_c
    gamma_s = problem.k * cfg.P * float(np.vdot(problem.channels.a, problem.channels.a).real)
    return L_s, L_c, ts_pd_given_pfa(problem.p_fa, L_s, gamma_s)
