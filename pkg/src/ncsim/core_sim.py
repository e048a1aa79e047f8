"""Stochastic hybrid simulation of a networked control loop.

Between transmissions the augmented state (x, e, tau, kappa) flows with
(dx, de, dtau, dkappa) = (f(x,e), g(x,e), 1, 0); at each transmission time
the error jumps through the randomized protocol map, tau resets to 0 and
kappa increments.  Transmission times are deterministic and spaced inside
[tau_miati, tau_mati]; only the jump outcomes are random.

Integration is fixed-step classical RK4 with the step chosen so substeps
land exactly on each transmission time, which keeps sample paths bitwise
reproducible for a given seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .protocols import (
    DimensionError,
    DropoutModel,
    ProtocolSpec,
    sample_upsilon,
    scheduler_choice,
    stochastic_jump,
    upsilon_bar,
)

DIVERGENCE_LIMIT = 1e12  # abort a sample path once any component passes this
MAX_FLOW_STEP = 1e-3     # seconds; cap on the RK4 substep


class DivergenceError(RuntimeError):
    """A sample path blew up (non-finite or beyond DIVERGENCE_LIMIT)."""

    def __init__(self, message: str, time: Optional[float] = None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class HybridState:
    """Plant+controller state x, network error e, clock tau, jump count kappa."""

    x: np.ndarray
    e: np.ndarray
    tau: float
    kappa: int


@dataclass(frozen=True)
class NcsSystem:
    """Flow dynamics of the closed loop: linear matrix quadruple or a
    nonlinear (f, g) pair, plus the per-node partition of the error vector."""

    kind: str  # "linear" | "nonlinear"
    n_x: int
    n_e: int
    partition: tuple[int, ...]
    A1: Optional[np.ndarray] = None
    B1: Optional[np.ndarray] = None
    A2: Optional[np.ndarray] = None
    B2: Optional[np.ndarray] = None
    f: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    g: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    # optional fused right-hand side on z = (x, e); saves allocations in the
    # integrator's inner loop
    flow_z: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""

    def __post_init__(self):
        if sum(self.partition) != self.n_e:
            raise DimensionError("node partition must sum to n_e")
        if self.kind == "linear":
            shapes = {
                "A1": (self.n_x, self.n_x),
                "B1": (self.n_x, self.n_e),
                "A2": (self.n_e, self.n_x),
                "B2": (self.n_e, self.n_e),
            }
            for attr, want in shapes.items():
                got = getattr(self, attr)
                if got is None or got.shape != want:
                    raise DimensionError(f"{attr} must have shape {want}")

    @classmethod
    def linear(cls, A1, B1, A2, B2, partition, name=""):
        A1, B1, A2, B2 = (np.asarray(m, dtype=float) for m in (A1, B1, A2, B2))
        return cls(
            kind="linear",
            n_x=A1.shape[0],
            n_e=B2.shape[0],
            partition=tuple(partition),
            A1=A1,
            B1=B1,
            A2=A2,
            B2=B2,
            name=name,
        )

    @classmethod
    def nonlinear(cls, f, g, n_x, n_e, partition, flow_z=None, name=""):
        return cls(
            kind="nonlinear",
            n_x=n_x,
            n_e=n_e,
            partition=tuple(partition),
            f=f,
            g=g,
            flow_z=flow_z,
            name=name,
        )

    def flow(self, x: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "linear":
            return self.A1 @ x + self.B1 @ e, self.A2 @ x + self.B2 @ e
        return self.f(x, e), self.g(x, e)

    def combined_rhs(self) -> Callable[[np.ndarray], np.ndarray]:
        """RHS on the stacked state z = (x, e)."""
        if self.flow_z is not None:
            return self.flow_z
        if self.kind == "linear":
            M = np.block([[self.A1, self.B1], [self.A2, self.B2]])
            return lambda z: M @ z
        n_x = self.n_x

        def rhs(z):
            dx, de = self.flow(z[:n_x], z[n_x:])
            return np.concatenate([dx, de])

        return rhs


@dataclass(frozen=True)
class TransmissionSchedule:
    """Bounds on consecutive transmission times and the policy generating them."""

    tau_miati: float
    tau_mati: float
    policy: str = "constant-at-mati"  # or "uniform-random"

    def __post_init__(self):
        if not 0.0 < self.tau_miati <= self.tau_mati:
            raise ValueError("need 0 < tau_miati <= tau_mati")
        if self.policy not in ("constant-at-mati", "uniform-random"):
            raise ValueError(f"unknown policy {self.policy!r}")


def next_interval(schedule: TransmissionSchedule, rng: np.random.Generator) -> float:
    """Next inter-transmission interval; always within [tau_miati, tau_mati]."""
    if schedule.policy == "constant-at-mati":
        return schedule.tau_mati
    return float(rng.uniform(schedule.tau_miati, schedule.tau_mati))


@dataclass
class JumpRecord:
    t: float
    node: int           # scheduler-chosen node, 1-based
    success: bool       # did the chosen node's packet go through
    upsilon: np.ndarray


@dataclass
class ArcSegment:
    """Samples of one inter-jump flow interval; kappa == j throughout."""

    j: int
    t: np.ndarray       # (n,), strictly increasing
    x: np.ndarray       # (n, n_x)
    e: np.ndarray       # (n, n_e)
    tau: np.ndarray     # (n,)


@dataclass
class HybridArc:
    segments: list[ArcSegment] = field(default_factory=list)
    jumps: list[JumpRecord] = field(default_factory=list)

    @property
    def jump_count(self) -> int:
        return len(self.jumps)

    def final_state(self) -> HybridState:
        seg = self.segments[-1]
        return HybridState(seg.x[-1].copy(), seg.e[-1].copy(), float(seg.tau[-1]), seg.j)

    def to_csv(self, path) -> None:
        """One row per stored sample: t,j,x1..xn,e1..em,tau,kappa.  Jump rows
        appear twice (pre- and post-jump states at the same t)."""
        n_x = self.segments[0].x.shape[1]
        n_e = self.segments[0].e.shape[1]
        header = (
            ["t", "j"]
            + [f"x{i + 1}" for i in range(n_x)]
            + [f"e{i + 1}" for i in range(n_e)]
            + ["tau", "kappa"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for seg in self.segments:
                for k in range(seg.t.shape[0]):
                    row = (
                        [repr(float(seg.t[k])), seg.j]
                        + [repr(float(v)) for v in seg.x[k]]
                        + [repr(float(v)) for v in seg.e[k]]
                        + [repr(float(seg.tau[k])), seg.j]
                    )
                    writer.writerow(row)


def _check_finite(x: np.ndarray, e: np.ndarray, t: float) -> None:
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(e))):
        raise DivergenceError(f"non-finite state at t={t:.6g}", time=t)
    m = max(np.max(np.abs(x), initial=0.0), np.max(np.abs(e), initial=0.0))
    if m > DIVERGENCE_LIMIT:
        raise DivergenceError(f"state magnitude {m:.3g} exceeds cutoff at t={t:.6g}", time=t)


def flow_step(
    system: NcsSystem,
    state: HybridState,
    h: float,
    max_substep: Optional[float] = MAX_FLOW_STEP,
) -> HybridState:
    """Advance the flow by h with classical RK4; kappa unchanged, tau += h.

    Long flows are subdivided into equal substeps no larger than
    max_substep, keeping the result at simulator accuracy; pass
    max_substep=None for a single raw RK4 step.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    n_sub = 1 if max_substep is None else max(1, math.ceil(h / max_substep))
    hs = h / n_sub
    x, e = state.x, state.e
    for _ in range(n_sub):
        k1x, k1e = system.flow(x, e)
        k2x, k2e = system.flow(x + 0.5 * hs * k1x, e + 0.5 * hs * k1e)
        k3x, k3e = system.flow(x + 0.5 * hs * k2x, e + 0.5 * hs * k2e)
        k4x, k4e = system.flow(x + hs * k3x, e + hs * k3e)
        x = x + (hs / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        e = e + (hs / 6.0) * (k1e + 2.0 * k2e + 2.0 * k3e + k4e)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(e))):
        raise DivergenceError("non-finite state after flow step", time=None)
    return HybridState(x, e, state.tau + h, state.kappa)


def simulate_trajectory(
    system: NcsSystem,
    protocol: ProtocolSpec,
    dropout: DropoutModel,
    schedule: TransmissionSchedule,
    x0: Sequence[float],
    e0: Sequence[float],
    t_end: float,
    seed: int,
) -> HybridArc:
    """Integrate one sample path on [0, t_end].

    Fully deterministic given all arguments: the RNG stream is derived from
    the seed alone and is consumed only at transmission times (interval
    draws under the random policy, then the dropout bits).
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    x = np.asarray(x0, dtype=float).copy()
    e = np.asarray(e0, dtype=float).copy()
    if x.shape != (system.n_x,) or e.shape != (system.n_e,):
        raise DimensionError(
            f"initial condition dims {x.shape}/{e.shape} do not match system "
            f"({system.n_x},)/({system.n_e},)"
        )
    if protocol.partition != system.partition and protocol.coupling != "wirelesshart":
        raise DimensionError("protocol and system partitions disagree")

    rng = np.random.default_rng(seed)
    h_max = min(schedule.tau_miati / 10.0, MAX_FLOW_STEP)
    boundary_tol = 1e-9 * max(1.0, t_end)
    rhs = system.combined_rhs()
    n_x = system.n_x

    arc = HybridArc()
    t = 0.0
    tau = 0.0
    kappa = 0
    z = np.concatenate([x, e])
    prev_success: Optional[bool] = dropout.initial_success

    def flow_to(t_target: float) -> None:
        """Advance (z, tau) to t_target, recording substep samples."""
        nonlocal t, tau, z
        span = t_target - t
        n_sub = max(1, math.ceil(span / h_max)) if span > 0 else 0
        zs = np.empty((n_sub + 1, z.shape[0]))
        zs[0] = z
        if n_sub:
            h = span / n_sub
            for k in range(n_sub):
                k1 = rhs(z)
                k2 = rhs(z + 0.5 * h * k1)
                k3 = rhs(z + 0.5 * h * k2)
                k4 = rhs(z + h * k3)
                z = z + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
                zs[k + 1] = z
                m = float(np.max(np.abs(z)))
                if m > DIVERGENCE_LIMIT or m != m:  # magnitude cutoff or NaN
                    t_bad = t + (k + 1) * h
                    raise DivergenceError(
                        f"state magnitude {m:.3g} beyond cutoff at t={t_bad:.6g}",
                        time=t_bad,
                    )
        times = t + (t_target - t) * np.arange(n_sub + 1) / max(n_sub, 1)
        arc.segments.append(
            ArcSegment(
                j=kappa,
                t=times,
                x=zs[:, :n_x],
                e=zs[:, n_x:],
                tau=tau + times - t,
            )
        )
        tau += t_target - t
        t = t_target

    while True:
        t_next = t + next_interval(schedule, rng)
        if t_next > t_end + boundary_tol:
            flow_to(t_end)
            break
        flow_to(t_next)
        e = z[n_x:]
        node = scheduler_choice(protocol, e, kappa)
        ups = sample_upsilon(dropout, node, rng, prev=prev_success)
        success = bool(upsilon_bar(ups, dropout.ell, dropout.reasons)[node - 1] > 0)
        z = np.concatenate([z[:n_x], stochastic_jump(e, kappa, ups, protocol)])
        tau = 0.0
        kappa += 1
        prev_success = success
        arc.jumps.append(JumpRecord(t=t, node=node, success=success, upsilon=ups))
        if t_end - t <= boundary_tol:
            # the jump landed on the horizon: close with a one-sample segment
            flow_to(t)
            break
    return arc
