"""Maximum allowable transmission interval (MATI) under random dropouts.

The bound tau* is the time it takes the scalar Riccati flow

    dphi/dtau = -2 L phi - gamma (phi^2 + 1),   phi(0) = 1/rho,

to decay to rho' := (rho^2 P_s + lambda^2 P_f) / rho.  Closed forms exist in
all three gamma-vs-L regimes (arctan / rational / arctanh); tau_star_ode
integrates the flow directly and serves as an independent oracle for the
closed form.  Existence requires rho^2 P_s + lambda^2 P_f < 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

BRANCH_TOL = 1e-12  # |gamma/L - 1| below this routes to the gamma=L formula


class InfeasibleError(ValueError):
    """The contraction condition rho^2 P_s + lambda^2 P_f < 1 fails."""


class ArctanhDomainError(ArithmeticError):
    """The arctanh argument reached 1 in the gamma < L branch."""


@dataclass(frozen=True)
class ProtocolConstants:
    """Per-jump behaviour of the protocol's Lyapunov function W:
    contraction rho on success, expansion lam on dropout, and the linear
    norm-equivalence coefficients alpha1w |e| <= W <= alpha2w |e|."""

    rho: float
    lam: float
    alpha1w: float = 1.0
    alpha2w: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0 <= self.lam:
            raise ValueError("need 0 <= rho < 1 <= lam")
        if not 0.0 < self.alpha1w <= self.alpha2w:
            raise ValueError("need 0 < alpha1w <= alpha2w")


@dataclass(frozen=True)
class StabilityCertificate:
    """Constants and functions tying the protocol to the plant: growth rate L
    of W along the flow, gain gamma from W into H, and (optionally) the
    Lyapunov data V, H, theta with quadratic class-K bounds."""

    L: float
    gamma: float
    H: Optional[Callable] = None
    V: Optional[Callable] = None
    theta: Optional[Callable] = None
    rho_margin: Optional[Callable] = None
    alpha1v: Optional[float] = None  # alpha1v * |x|^2 <= V(x)
    alpha2v: Optional[float] = None  # V(x) <= alpha2v * |x|^2

    def __post_init__(self):
        if self.L < 0 or self.gamma <= 0:
            raise ValueError("need L >= 0 and gamma > 0")


@dataclass(frozen=True)
class MatiResult:
    tau_star: float
    branch: str          # "gamma>L" | "gamma=L" | "gamma<L"
    rho_prime: float
    r: Optional[float]   # sqrt((gamma/L)^2 - 1), None on the gamma=L branch
    feasible: bool


def contraction_rate(consts: ProtocolConstants, ps: float) -> float:
    """Expected squared per-jump factor rho^2 P_s + lambda^2 P_f."""
    return consts.rho**2 * ps + consts.lam**2 * (1.0 - ps)


def _branch(gamma: float, L: float) -> str:
    if L > 0 and abs(gamma / L - 1.0) <= BRANCH_TOL:
        return "gamma=L"
    return "gamma>L" if gamma > L else "gamma<L"


def tau_star(
    consts: ProtocolConstants, cert: StabilityCertificate, ps: float
) -> MatiResult:
    """Closed-form MATI bound; infeasible inputs give tau_star = nan."""
    if not 0.0 < ps <= 1.0:
        raise ValueError("ps must lie in (0, 1]")
    if not 0.0 < consts.rho < 1.0:
        raise ValueError("the closed form needs rho strictly inside (0, 1)")
    rho, lam = consts.rho, consts.lam
    gamma, L = cert.gamma, cert.L
    sigma = contraction_rate(consts, ps)
    rho_p = sigma / rho
    branch = _branch(gamma, L)
    r = None if branch == "gamma=L" else math.sqrt(abs((gamma / L) ** 2 - 1.0)) if L > 0 else math.inf
    if sigma >= 1.0:
        return MatiResult(math.nan, branch, rho_p, r, feasible=False)

    if branch == "gamma=L":
        tau = (1.0 - rho * rho_p) / (L * (1.0 + rho) * (1.0 + rho_p))
    else:
        # s = L*r stays finite for L -> 0 in the gamma > L branch
        s = math.sqrt(abs(gamma**2 - L**2))
        arg = (1.0 - rho * rho_p) * s / (gamma * (rho + rho_p) + L * (1.0 + rho * rho_p))
        if branch == "gamma>L":
            tau = math.atan(arg) / s
        else:
            if arg >= 1.0:
                raise ArctanhDomainError(
                    f"arctanh argument {arg:.6g} >= 1 for gamma={gamma}, L={L}, "
                    f"rho={rho}, rho'={rho_p}"
                )
            tau = math.atanh(arg) / s
    return MatiResult(tau, branch, rho_p, r, feasible=True)


def _phi_rhs(L: float, gamma: float):
    def rhs(phi: float) -> float:
        return -2.0 * L * phi - gamma * (phi * phi + 1.0)

    return rhs


def _rk4_scalar(rhs, y: float, h: float) -> float:
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _crossing_time(rhs, phi0: float, target: float, h: float, t_max: float) -> float:
    """First time phi drops to the target level, via fixed-step RK4 plus
    bisection of the final step."""
    t, phi = 0.0, phi0
    while phi > target:
        if t > t_max:
            raise InfeasibleError("phi failed to reach rho' within the safety horizon")
        phi_next = _rk4_scalar(rhs, phi, h)
        if phi_next > target:
            t, phi = t + h, phi_next
            continue
        lo, hi = 0.0, h
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if _rk4_scalar(rhs, phi, mid) > target:
                lo = mid
            else:
                hi = mid
        return t + 0.5 * (lo + hi)
    return t


def tau_star_ode(
    consts: ProtocolConstants,
    cert: StabilityCertificate,
    ps: float,
    tol: float = 1e-10,
) -> float:
    """Independent oracle: integrate the phi flow until it crosses rho'.

    The step is halved until two successive crossing times agree within tol.
    Since d(arctan phi)/dt <= -gamma, the crossing must occur before
    (arctan(1/rho) - arctan(rho')) / gamma; exceeding that horizon signals
    infeasibility.
    """
    rho, gamma, L = consts.rho, cert.gamma, cert.L
    sigma = contraction_rate(consts, ps)
    if sigma >= 1.0:
        raise InfeasibleError(f"rho^2 ps + lam^2 (1-ps) = {sigma:.6g} >= 1")
    phi0 = 1.0 / rho
    target = sigma / rho
    t_bound = (math.atan(phi0) - math.atan(target)) / gamma
    rhs = _phi_rhs(L, gamma)
    h = t_bound / 64.0
    prev = _crossing_time(rhs, phi0, target, h, 2.0 * t_bound)
    for _ in range(40):
        h *= 0.5
        cur = _crossing_time(rhs, phi0, target, h, 2.0 * t_bound)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    return prev


def ugasp_protocol_check(consts: ProtocolConstants, ps: float) -> tuple[float, bool]:
    """Expected per-jump factor rho_bar = lam P_f + rho P_s; the protocol is
    uniformly globally asymptotically stable in probability iff rho_bar < 1."""
    rho_bar = consts.lam * (1.0 - ps) + consts.rho * ps
    return rho_bar, rho_bar < 1.0


def prop5_constants(
    scheduler: str, ell: int, b_norm: float
) -> tuple[ProtocolConstants, float]:
    """Protocol constants and flow growth rate L for the linear loop, in
    terms of the operator norm of the matrix coupling e into de/dt.

    round-robin:      alphas (1, sqrt(ell)), rho = sqrt((ell-1)/ell),
                      lam = sqrt(ell), L = sqrt(ell) * b_norm
    try-once-discard: alphas (1, 1), same rho, lam = 1, L = b_norm
    """
    if ell < 1:
        raise ValueError("need at least one node")
    if b_norm < 0:
        raise ValueError("matrix norm must be nonnegative")
    rho = math.sqrt((ell - 1) / ell)
    if scheduler in ("rr", "round-robin"):
        consts = ProtocolConstants(rho=rho, lam=math.sqrt(ell), alpha1w=1.0, alpha2w=math.sqrt(ell))
        return consts, math.sqrt(ell) * b_norm
    if scheduler in ("tod", "try-once-discard"):
        consts = ProtocolConstants(rho=rho, lam=1.0, alpha1w=1.0, alpha2w=1.0)
        return consts, b_norm
    raise ValueError(f"unknown scheduler {scheduler!r}")


@dataclass(frozen=True)
class PsSweepPoint:
    ps: float
    result: MatiResult


def sweep_ps(
    consts: ProtocolConstants, cert: StabilityCertificate, ps_grid: Sequence[float]
) -> list[PsSweepPoint]:
    if any(not 0.0 < p <= 1.0 for p in ps_grid):
        raise ValueError("ps grid must lie in (0, 1]")
    return [PsSweepPoint(float(p), tau_star(consts, cert, float(p))) for p in ps_grid]


@dataclass(frozen=True)
class LrSweepPoint:
    lam: float
    rho: float
    result: MatiResult


def sweep_lambda_rho(
    cert: StabilityCertificate,
    ps: float,
    lambda_grid: Sequence[float],
    rho_grid: Sequence[float],
) -> list[LrSweepPoint]:
    out = []
    for lam in lambda_grid:
        for rho in rho_grid:
            consts = ProtocolConstants(rho=float(rho), lam=float(lam))
            out.append(LrSweepPoint(float(lam), float(rho), tau_star(consts, cert, ps)))
    return out


def write_ps_sweep_csv(points: Sequence[PsSweepPoint], path) -> None:
    """Header ps,tau_star; infeasible points leave the tau_star cell empty."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ps", "tau_star"])
        for pt in points:
            cell = repr(pt.result.tau_star) if pt.result.feasible else ""
            writer.writerow([repr(pt.ps), cell])


def write_lr_sweep_csv(points: Sequence[LrSweepPoint], path) -> None:
    """Header lambda,rho,tau_star with empty cells for infeasible points."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "rho", "tau_star"])
        for pt in points:
            cell = repr(pt.result.tau_star) if pt.result.feasible else ""
            writer.writerow([repr(pt.lam), repr(pt.rho), cell])
