"""Lyapunov machinery and numerical verification along sampled states/arcs.

W measures the network error (plain norm for Try-Once-Discard, a weighted
norm for Round-Robin whose squared weights count how many scheduler steps a
block survives).  V measures the plant state (quadratic).  The composite

    U(xi) = V(x) + gamma * phi(tau) * W(kappa, e)^2

uses the Riccati decay profile phi tabulated once per parameter set; U must
decrease strictly along flow and not increase in expectation across jumps
whenever the transmission interval stays below the MATI bound.  The checks
here verify those properties empirically on random samples and on simulated
arcs, and l2_gain provides the induced-gain constant for linear loops.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .core_sim import HybridArc, HybridState
from .mati_bounds import ProtocolConstants, StabilityCertificate, contraction_rate
from .protocols import (
    DimensionError,
    DropoutModel,
    ProtocolSpec,
    block_slices,
    deterministic_update,
    scheduler_choice,
)


class NotHurwitzError(ValueError):
    """The flow matrix has eigenvalues off the open left half-plane."""


class CoefficientInequalityError(ValueError):
    """Quadratic-form certificate check failed; carries a witness point."""

    def __init__(self, message: str, witness: np.ndarray):
        super().__init__(message)
        self.witness = witness


# ---------------------------------------------------------------------------
# W functions


@dataclass(frozen=True)
class WFunction:
    """Protocol Lyapunov function.

    tod-norm:    W(kappa, e) = |e|
    rr-weighted: W(kappa, e)^2 = sum_j a_j^2(kappa) |e_j|^2 with
                 a_j^2(kappa) = (steps until node j is serviced) + 1,
                 so |e| <= W <= sqrt(ell) |e|.
    """

    kind: str  # "tod-norm" | "rr-weighted"
    partition: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in ("tod-norm", "rr-weighted"):
            raise ValueError(f"unknown W kind {self.kind!r}")

    @classmethod
    def tod(cls, partition):
        return cls("tod-norm", tuple(partition))

    @classmethod
    def rr(cls, partition):
        return cls("rr-weighted", tuple(partition))

    @property
    def ell(self) -> int:
        return len(self.partition)

    @property
    def alpha1w(self) -> float:
        return 1.0

    @property
    def alpha2w(self) -> float:
        return 1.0 if self.kind == "tod-norm" else math.sqrt(self.ell)


def rr_weights_squared(kappa: int, ell: int) -> np.ndarray:
    """Squared weights a_j^2(kappa): node j due in ((j-1-kappa) mod ell) steps."""
    j = np.arange(ell)
    return ((j - int(kappa)) % ell) + 1.0


def w_eval(w: WFunction, kappa: int, e: np.ndarray) -> float:
    e = np.asarray(e, dtype=float)
    if e.shape[0] != sum(w.partition):
        raise DimensionError("error vector does not match the node partition")
    if w.kind == "tod-norm":
        return float(np.linalg.norm(e))
    a2 = rr_weights_squared(kappa, w.ell)
    total = 0.0
    for coeff, s in zip(a2, block_slices(w.partition)):
        total += coeff * float(e[s] @ e[s])
    return math.sqrt(total)


def _w_eval_sq_blocks(w: WFunction, kappa: int, e_rows: np.ndarray) -> np.ndarray:
    """Vectorized W^2 over rows of e at a fixed kappa."""
    if w.kind == "tod-norm":
        return np.einsum("ij,ij->i", e_rows, e_rows)
    a2 = rr_weights_squared(kappa, w.ell)
    weights = np.repeat(a2, w.partition)
    return np.einsum("ij,ij->i", e_rows * weights, e_rows)


# ---------------------------------------------------------------------------
# Induced L2 gain for linear flows


def _hamiltonian_has_imag_eig(A, B, C, gamma: float, tol: float = 1e-8) -> bool:
    n = A.shape[0]
    M = np.block([[A, (B @ B.T) / gamma], [-(C.T @ C) / gamma, -A.T]])
    ev = np.linalg.eigvals(M)
    return bool(np.any(np.abs(ev.real) <= tol * np.maximum(1.0, np.abs(ev))))


def l2_gain(A, B, C, tol: float = 1e-6) -> float:
    """H-infinity norm of C (sI - A)^{-1} B by bisection on gamma, using the
    imaginary-axis eigenvalue test of the associated Hamiltonian matrix.

    Requires A Hurwitz (the emulated closed loop must be stable).  tol is
    relative.  B = 0 or C = 0 gives 0.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if np.max(np.linalg.eigvals(A).real) >= 0:
        raise NotHurwitzError("flow matrix is not Hurwitz")
    if not (np.any(B) and np.any(C)):
        return 0.0
    hi = 1.0
    while _hamiltonian_has_imag_eig(A, B, C, hi):
        hi *= 2.0
        if hi > 1e15:
            raise ArithmeticError("bisection upper bracket not found")
    lo = hi / 2.0 if hi > 1.0 else 0.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if _hamiltonian_has_imag_eig(A, B, C, mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bounded_real_quadratic(A, B, C, gamma: float, margin: float = 1e-6) -> np.ndarray:
    """Stabilizing solution P of A'P + PA + C'C + margin*I + P B B' P / gamma^2 = 0.

    V(x) = x' P x then satisfies
    dV/dt <= -|Cx|^2 - margin |x|^2 + gamma^2 |e|^2 along dx = Ax + Be, which
    is the quadratic certificate used for linear loops.  Needs gamma above
    the induced gain of the margin-augmented output.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    Q = C.T @ C + margin * np.eye(n)
    M = np.block([[A, (B @ B.T) / gamma**2], [-Q, -A.T]])
    # stable invariant subspace via ordered real Schur
    T, Z, _ = scipy.linalg.schur(M, output="real", sort=lambda re, im: re < 0)
    U1 = Z[:n, :n]
    U2 = Z[n:, :n]
    P = np.real(U2 @ np.linalg.inv(U1))
    P = 0.5 * (P + P.T)
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise ArithmeticError("Riccati solution not positive definite; gamma too small?")
    return P


# ---------------------------------------------------------------------------
# Quadratic V and the composite U


@dataclass(frozen=True)
class QuadraticV:
    """V(x) = x' P x, with optional bookkeeping scalars from the certificate
    construction (eta split parameter, strict margin eps, sector bound)."""

    P: np.ndarray
    eta: float = 0.0
    eps: float = 0.0
    sector: float = 0.0

    @classmethod
    def from_coefficients(cls, a: float, b: float, c: float, **kw):
        """Planar form a x1^2 + b x1 x2 + c x2^2."""
        return cls(P=np.array([[a, b / 2.0], [b / 2.0, c]]), **kw)

    def __post_init__(self):
        ev = np.linalg.eigvalsh(self.P)
        if ev[0] <= 0:
            raise ValueError("P must be positive definite")

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)

    def value_rows(self, x_rows: np.ndarray) -> np.ndarray:
        return np.einsum("ij,jk,ik->i", x_rows, self.P, x_rows)

    @property
    def alpha1v(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[0])

    @property
    def alpha2v(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[-1])


def tabulate_phi(
    L: float,
    gamma: float,
    rho: float,
    tau_max: float,
    max_interp_err: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray]:
    """Dense RK4 tabulation of the Riccati decay phi on [0, tau_max], with the
    grid spacing chosen so linear interpolation stays below max_interp_err.
    phi(0) = 1/rho.
    """
    phi0 = 1.0 / rho
    # |phi''| <= (2L + 2 gamma phi0) * max|phi'| bounds the interpolation error h^2/8
    dmax = 2.0 * L * phi0 + gamma * (phi0**2 + 1.0)
    d2max = (2.0 * L + 2.0 * gamma * phi0) * dmax
    h = math.sqrt(8.0 * max_interp_err / d2max) if d2max > 0 else tau_max
    n = max(2, math.ceil(tau_max / h) + 1)
    taus = np.linspace(0.0, tau_max, n)
    step = taus[1] - taus[0]
    phis = np.empty(n)
    phis[0] = phi0
    rhs = lambda p: -2.0 * L * p - gamma * (p * p + 1.0)
    p = phi0
    for k in range(1, n):
        k1 = rhs(p)
        k2 = rhs(p + 0.5 * step * k1)
        k3 = rhs(p + 0.5 * step * k2)
        k4 = rhs(p + step * k3)
        p = p + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        phis[k] = p
    return taus, phis


@dataclass(frozen=True)
class UFunction:
    """U(xi) = V(x) + gamma * phi(tau) * W(kappa, e)^2 with phi interpolated
    from a dense tabulation."""

    V: QuadraticV
    w: WFunction
    gamma: float
    rho: float
    taus: np.ndarray
    phis: np.ndarray
    consts: Optional[ProtocolConstants] = None
    ps: float = 1.0

    @classmethod
    def build(
        cls,
        V: QuadraticV,
        w: WFunction,
        consts: ProtocolConstants,
        cert: StabilityCertificate,
        tau_max: float,
        ps: float = 1.0,
    ):
        if tau_max <= 0:
            raise ValueError("tau_max must be positive")
        taus, phis = tabulate_phi(cert.L, cert.gamma, consts.rho, tau_max)
        return cls(
            V=V, w=w, gamma=cert.gamma, rho=consts.rho,
            taus=taus, phis=phis, consts=consts, ps=ps,
        )

    @property
    def tau_max(self) -> float:
        return float(self.taus[-1])

    def phi(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < -1e-15) or np.any(tau > self.tau_max * (1.0 + 1e-12) + 1e-15):
            raise ValueError(f"tau outside tabulated range [0, {self.tau_max:.6g}]")
        return np.interp(tau, self.taus, self.phis)

    def alpha1(self, v: float) -> float:
        """Lower class-K bound on U at distance v from the attractor."""
        sigma = contraction_rate(self.consts, self.ps)
        phi0 = 1.0 / self.rho
        return min(
            self.V.alpha1v * (v / 2.0) ** 2,
            sigma * self.gamma * phi0 * (self.consts.alpha1w * v / 2.0) ** 2,
        )

    def alpha2(self, v: float) -> float:
        phi0 = 1.0 / self.rho
        return max(self.V.alpha2v * v**2, self.gamma * phi0 * (self.consts.alpha2w * v) ** 2)


def u_eval(u: UFunction, state: HybridState) -> float:
    wv = w_eval(u.w, state.kappa, state.e)
    return u.V.value(state.x) + u.gamma * float(u.phi(state.tau)) * wv * wv


def u_eval_segment(u: UFunction, x_rows, e_rows, tau_arr, kappa: int) -> np.ndarray:
    """Vectorized U along one flow segment (fixed kappa)."""
    w2 = _w_eval_sq_blocks(u.w, kappa, np.asarray(e_rows, dtype=float))
    return u.V.value_rows(np.asarray(x_rows, dtype=float)) + u.gamma * u.phi(tau_arr) * w2


# ---------------------------------------------------------------------------
# Empirical checks


@dataclass
class CheckReport:
    check: str
    quantity: str
    bound: float
    observed: float
    passed: bool
    detail: dict = field(default_factory=dict)


def write_reports_csv(reports: Sequence[CheckReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "quantity", "bound", "observed", "pass"])
        for r in reports:
            writer.writerow([r.check, r.quantity, repr(r.bound), repr(r.observed), r.passed])


def verify_w_conditions(
    w: WFunction,
    spec: ProtocolSpec,
    declared: ProtocolConstants,
    n_samples: int,
    rng: np.random.Generator,
    slack: float = 1e-9,
) -> tuple[CheckReport, CheckReport]:
    """Max observed per-jump ratios of W across random (kappa, e) samples:
    success case against rho, dropout case against lam."""
    rho_hat = 0.0
    lam_hat = 0.0
    n_e = sum(w.partition)
    for _ in range(n_samples):
        kappa = int(rng.integers(0, 10 * w.ell))
        e = rng.standard_normal(n_e)
        w0 = w_eval(w, kappa, e)
        if w0 == 0.0:
            continue
        h_e, _ = deterministic_update(spec, e, kappa)
        rho_hat = max(rho_hat, w_eval(w, kappa + 1, h_e) / w0)
        # dropout leaves e unchanged for the couplings implemented here
        lam_hat = max(lam_hat, w_eval(w, kappa + 1, e) / w0)
    return (
        CheckReport(
            "w-success-contraction", "max W(k+1,h(k,e))/W(k,e)",
            declared.rho, rho_hat, rho_hat <= declared.rho + slack,
        ),
        CheckReport(
            "w-dropout-expansion", "max W(k+1,e)/W(k,e)",
            declared.lam, lam_hat, lam_hat <= declared.lam + slack,
        ),
    )


def check_jump_expectation(
    w: WFunction,
    consts: ProtocolConstants,
    dropout: DropoutModel,
    spec: ProtocolSpec,
    e_samples: Sequence[np.ndarray],
    n_draws: int,
    rng: np.random.Generator,
) -> CheckReport:
    """Monte Carlo check of the expected per-jump contraction of W.

    Per sampled state, E[W after jump] must stay below rho_bar * W + 3 SE,
    with rho_bar = lam * P_f + rho * P_s evaluated at the success
    probability of the node the scheduler actually picks.
    """
    if n_draws < 1000:
        raise ValueError("need at least 1000 draws per state")
    worst = -math.inf
    prev = dropout.initial_success
    for idx, e in enumerate(e_samples):
        e = np.asarray(e, dtype=float)
        kappa = idx  # vary the scheduler phase across samples
        w0 = w_eval(w, kappa, e)
        if w0 == 0.0:
            continue
        node = scheduler_choice(spec, e, kappa)
        p = dropout.node_success_prob(node, prev)
        h_e, _ = deterministic_update(spec, e, kappa)
        w_succ = w_eval(w, kappa + 1, h_e)
        w_fail = w_eval(w, kappa + 1, e)
        if dropout.kind == "csma-two-reason":
            hits = (rng.random((n_draws, 2)) < [dropout.p1, dropout.p2]).all(axis=1)
        else:
            hits = rng.random(n_draws) < p
        p_hat = float(hits.mean())
        est = p_hat * w_succ + (1.0 - p_hat) * w_fail
        se = abs(w_succ - w_fail) * math.sqrt(max(p_hat * (1.0 - p_hat), 1e-12) / n_draws)
        rho_bar = consts.lam * (1.0 - p) + consts.rho * p
        worst = max(worst, est - (rho_bar * w0 + 3.0 * se))
    return CheckReport(
        "jump-expectation", "max E[W+] - (rho_bar W + 3 SE)", 0.0, worst, worst <= 0.0
    )


def check_flow_decrease(
    u: UFunction, arc: HybridArc, tol: float = 1e-6
) -> CheckReport:
    """Forward differences of U along each flow segment must stay below
    tol * (1 + U); the report carries the worst difference ratio and the
    largest finite-difference derivative."""
    worst_ratio = -math.inf
    worst_deriv = -math.inf
    for seg in arc.segments:
        if seg.t.shape[0] < 2:
            continue
        uu = u_eval_segment(u, seg.x, seg.e, seg.tau, seg.j)
        du = np.diff(uu)
        dt = np.diff(seg.t)
        ratio = du / (1.0 + uu[:-1])
        worst_ratio = max(worst_ratio, float(ratio.max()))
        worst_deriv = max(worst_deriv, float((du / dt).max()))
    return CheckReport(
        "flow-decrease",
        "max dU / (1 + U) per step",
        tol,
        worst_ratio,
        worst_ratio <= tol,
        detail={"max_derivative": worst_deriv},
    )


def check_jump_supermartingale(
    u: UFunction,
    arc: HybridArc,
    dropout: DropoutModel,
    spec: ProtocolSpec,
    n_draws: int,
    rng: np.random.Generator,
) -> CheckReport:
    """At every jump state of the arc, the resampled mean of U after the jump
    must not exceed U before the jump by more than 3 standard errors."""
    worst = -math.inf
    prev = dropout.initial_success
    for k, jump in enumerate(arc.jumps):
        seg = arc.segments[k]
        x = seg.x[-1]
        e = seg.e[-1]
        tau = float(seg.tau[-1])
        kappa = seg.j
        u_pre = u_eval(u, HybridState(x, e, tau, kappa))
        node = scheduler_choice(spec, e, kappa)
        p = dropout.node_success_prob(node, prev)
        h_e, _ = deterministic_update(spec, e, kappa)
        u_succ = u_eval(u, HybridState(x, h_e, 0.0, kappa + 1))
        u_fail = u_eval(u, HybridState(x, e, 0.0, kappa + 1))
        hits = rng.random(n_draws) < p
        p_hat = float(hits.mean())
        mean_post = p_hat * u_succ + (1.0 - p_hat) * u_fail
        se = abs(u_succ - u_fail) * math.sqrt(max(p_hat * (1.0 - p_hat), 1e-12) / n_draws)
        worst = max(worst, mean_post - (u_pre + 3.0 * se))
        prev = jump.success
    return CheckReport(
        "jump-supermartingale", "max E[U+] - (U + 3 SE)", 0.0, worst, worst <= 0.0
    )


# ---------------------------------------------------------------------------
# Robot-arm certificate


@dataclass(frozen=True)
class RobotArmCertificate:
    cert: StabilityCertificate
    V: QuadraticV
    D: float
    M: float
    check_holds: bool
    witness: Optional[np.ndarray]


def robot_arm_certificate(
    a: float,
    b: float,
    coeffs: tuple[float, float, float],
    eta: float,
    eps: float,
    M: float,
    D: Optional[float] = None,
    strict: bool = False,
    n_check: int = 4096,
) -> RobotArmCertificate:
    """Certificate constants for the single-link arm:

        D = sqrt(3) max(1 + a, b),  L = M D,  gamma = sqrt(eta D^2 / 2 + eps),
        H(x) = M (2.5 |x2| + |x1 + x2|),  theta(s) = eps s^2.

    The quadratic-form inequality coupling (a,b,c) to H and eta is checked on
    a dense unit circle (both sides are homogeneous of degree two).  With
    strict=True a violation raises CoefficientInequalityError carrying a
    witness; otherwise the certificate is returned with check_holds=False.
    """
    if a <= 0 or b <= 0:
        raise ValueError("arm parameters a, b must be positive")
    aa, bb, cc = coeffs
    if D is None:
        D = math.sqrt(3.0) * max(1.0 + a, b)
    L = M * D
    gamma = math.sqrt(eta * D * D / 2.0 + eps)
    H = lambda x: M * (2.5 * abs(x[1]) + abs(x[0] + x[1]))
    V = QuadraticV.from_coefficients(aa, bb, cc, eta=eta, eps=eps, sector=a)

    theta = np.linspace(0.0, 2.0 * math.pi, n_check, endpoint=False)
    xs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    lhs = -eps - np.array([H(x) ** 2 for x in xs])
    rhs = (
        -bb * xs[:, 0] ** 2
        - (2.0 * cc - bb) * xs[:, 1] ** 2
        + (2.0 * aa - 2.0 * cc - bb) * xs[:, 0] * xs[:, 1]
        + (2.0 * cc * xs[:, 1] + bb * xs[:, 0]) ** 2 / (2.0 * eta)
    )
    gap = lhs - rhs
    holds = bool(np.all(gap >= 0.0))
    witness = None if holds else xs[int(np.argmin(gap))]
    if strict and not holds:
        raise CoefficientInequalityError(
            f"coefficient inequality fails by {float(gap.min()):.4g} at x={witness}",
            witness,
        )
    cert = StabilityCertificate(
        L=L,
        gamma=gamma,
        H=H,
        V=V.value,
        theta=lambda s: eps * s * s,
        rho_margin=lambda x: eps * float(np.dot(x, x)),
        alpha1v=V.alpha1v,
        alpha2v=V.alpha2v,
    )
    return RobotArmCertificate(cert=cert, V=V, D=D, M=M, check_holds=holds, witness=witness)
