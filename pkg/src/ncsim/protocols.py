"""Scheduling protocols, randomized jump maps, and packet-dropout models.

The network has ``ell`` nodes; the error vector ``e`` is partitioned into one
block per node.  At each transmission time exactly one node is granted the
channel.  Whether its packet goes through is random: a binary vector
``upsilon`` (``m`` independent failure reasons per node) records the outcome,
and the selection matrix ``S(upsilon)`` is the block-diagonal 0/1 matrix of
the nodes that transmitted successfully.  The error update is

    e+ = (I - S(upsilon)) e + coupling(h_inner(kappa, e), S(upsilon)),

where ``h_inner`` is the deterministic scheduler update (Round-Robin or
Try-Once-Discard) and ``coupling`` is one of the concrete coupling forms
implemented here (``product-form``, ``ethernet-zero``, ``wirelesshart``).

At most one node may succeed per jump; a dropout leaves ``e`` unchanged for
every coupling implemented here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

SCHEDULERS = ("round-robin", "try-once-discard")
COUPLINGS = ("product-form", "ethernet-zero", "wirelesshart")
DROPOUT_KINDS = ("bernoulli-per-node", "csma-two-reason", "markov", "iid-uniform-grant")


class DimensionError(ValueError):
    """Vector/partition sizes do not match."""


def block_slices(partition: Sequence[int]) -> list[slice]:
    """Slices of the error vector corresponding to each node block."""
    offsets = np.concatenate([[0], np.cumsum(partition)])
    return [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])]


def _check_partition(e: np.ndarray, partition: Sequence[int]) -> None:
    if sum(partition) != e.shape[0]:
        raise DimensionError(
            f"partition {tuple(partition)} does not sum to len(e)={e.shape[0]}"
        )


@dataclass(frozen=True)
class ProtocolSpec:
    """A scheduler (which node gets the channel) plus a coupling form
    (how the randomized update composes with the scheduler update)."""

    scheduler: str
    coupling: str
    partition: tuple[int, ...]
    reasons: int = 1  # failure reasons per node (m)
    # wirelesshart only: field-device counts on each network side
    ell_y: int = 0
    ell_u: int = 0

    def __post_init__(self):
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if any(n <= 0 for n in self.partition):
            raise ValueError("partition blocks must be positive")

    @property
    def ell(self) -> int:
        return len(self.partition)


def upsilon_bar(upsilon: np.ndarray, ell: int, reasons: int = 1) -> np.ndarray:
    """Per-node success flags: node l succeeds iff all its reason bits are 1."""
    ups = np.asarray(upsilon).reshape(ell, reasons)
    return ups.min(axis=1)


def selection_matrix(
    upsilon: np.ndarray, partition: Sequence[int], reasons: int = 1
) -> np.ndarray:
    """Block-diagonal selection matrix S(upsilon), idempotent by construction."""
    bar = upsilon_bar(upsilon, len(partition), reasons)
    return np.diag(np.repeat(bar, partition).astype(float))


def _expand_bar(bar: np.ndarray, partition: Sequence[int]) -> np.ndarray:
    return np.repeat(bar, partition).astype(float)


def tod_update(e: np.ndarray, partition: Sequence[int]) -> tuple[np.ndarray, int]:
    """Try-Once-Discard: zero the node block with the largest Euclidean norm.

    Ties go to the lowest node index.  Returns (updated error, 1-based node).
    """
    e = np.asarray(e, dtype=float)
    _check_partition(e, partition)
    norms = [np.linalg.norm(e[s]) for s in block_slices(partition)]
    node = int(np.argmax(norms)) + 1
    out = e.copy()
    out[block_slices(partition)[node - 1]] = 0.0
    return out, node


def rr_update(
    e: np.ndarray, kappa: int, partition: Sequence[int]
) -> tuple[np.ndarray, int]:
    """Round-Robin: zero node ((kappa mod ell) + 1); deterministic in kappa."""
    e = np.asarray(e, dtype=float)
    _check_partition(e, partition)
    node = (int(kappa) % len(partition)) + 1
    out = e.copy()
    out[block_slices(partition)[node - 1]] = 0.0
    return out, node


def scheduler_choice(spec: ProtocolSpec, e: np.ndarray, kappa: int) -> int:
    """Node granted the channel at this transmission (1-based).

    For the wirelesshart coupling the channel is granted per upsilon
    component (field devices plus the two handoffs), cycled round-robin.
    """
    if spec.coupling == "wirelesshart":
        return (int(kappa) % (spec.ell_y + spec.ell_u + 2)) + 1
    if spec.scheduler == "round-robin":
        return (int(kappa) % spec.ell) + 1
    norms = [np.linalg.norm(np.asarray(e)[s]) for s in block_slices(spec.partition)]
    return int(np.argmax(norms)) + 1


def deterministic_update(
    spec: ProtocolSpec, e: np.ndarray, kappa: int
) -> tuple[np.ndarray, int]:
    """The dropout-free scheduler update h(kappa, e)."""
    if spec.scheduler == "round-robin":
        return rr_update(e, kappa, spec.partition)
    return tod_update(e, spec.partition)


def stochastic_jump(
    e: np.ndarray, kappa: int, upsilon: np.ndarray, spec: ProtocolSpec
) -> np.ndarray:
    """Randomized error update (I - S(upsilon)) e + coupling(h(kappa,e), S(upsilon)).

    ethernet-zero drops the coupling term entirely; product-form adds
    S(upsilon) h(kappa, e).  For every coupling, S(upsilon) = 0 (dropout)
    returns e unchanged, and a success on the scheduled node reproduces the
    deterministic scheduler update.
    """
    e = np.asarray(e, dtype=float)
    if spec.coupling == "wirelesshart":
        return wirelesshart_jump(e, upsilon, spec.ell_y, spec.ell_u)
    _check_partition(e, spec.partition)
    bar = upsilon_bar(np.asarray(upsilon), spec.ell, spec.reasons)
    if bar.sum() > 1:
        raise ValueError("at most one node may transmit successfully per jump")
    mask = _expand_bar(bar, spec.partition)
    kept = (1.0 - mask) * e
    if spec.coupling == "ethernet-zero":
        return kept
    inner, _ = deterministic_update(spec, e, kappa)
    return kept + mask * inner


def wirelesshart_jump(
    e: np.ndarray,
    upsilon: np.ndarray,
    ell_y: int,
    ell_u: int,
    block_y: int = 1,
    block_u: int = 1,
) -> np.ndarray:
    """Relay-network error update with coupled reception/transmission blocks.

    The error is laid out as (y-reception, y-transmission, u-reception,
    u-transmission), each half holding one block per field device.  upsilon
    has ell_y + ell_u + 2 components: one per field device plus one handoff
    indicator per side; at most one component may be active per jump.  An
    active device component zeroes that device's reception block and shifts
    it into the transmission chain of the next hop.
    """
    e = np.asarray(e, dtype=float)
    upsilon = np.asarray(upsilon, dtype=float)
    n_y, n_u = 2 * ell_y * block_y, 2 * ell_u * block_u
    if e.shape[0] != n_y + n_u:
        raise DimensionError(
            f"expected len(e)={n_y + n_u} for ell_y={ell_y}, ell_u={ell_u}"
        )
    if upsilon.shape[0] != ell_y + ell_u + 2:
        raise DimensionError(f"expected len(upsilon)={ell_y + ell_u + 2}")
    if upsilon.sum() > 1:
        raise ValueError("at most one upsilon component may be active per jump")

    ups_y = upsilon[:ell_y]
    ups_u = upsilon[ell_y : ell_y + ell_u]
    extra_y, extra_u = upsilon[ell_y + ell_u], upsilon[ell_y + ell_u + 1]

    def side(e_side, ups, extra, ell, bs):
        top = e_side[: ell * bs].reshape(ell, bs)
        bot = e_side[ell * bs :].reshape(ell, bs)
        nxt = np.append(ups[1:], extra)
        new_top = (1.0 - ups)[:, None] * top
        # bottom half: (1 - ups + (ups - nxt)) e_bot + ups e_top + subdiagonal
        new_bot = (1.0 - nxt)[:, None] * bot + ups[:, None] * top
        new_bot[1:] += ups[1:, None] * bot[:-1]
        return np.concatenate([new_top.ravel(), new_bot.ravel()])

    out_y = side(e[:n_y], ups_y, extra_y, ell_y, block_y) if ell_y else e[:0]
    out_u = side(e[n_y:], ups_u, extra_u, ell_u, block_u) if ell_u else e[:0]
    return np.concatenate([out_y, out_u])


# ---------------------------------------------------------------------------
# Dropout models


@dataclass(frozen=True)
class DropoutModel:
    """Per-transmission success/failure generator with closed-form algebra.

    kinds:
      bernoulli-per-node   one success probability per node, i.i.d. draws
      csma-two-reason      two independent failure reasons shared by all nodes
      markov               success/recovery rates per node, conditioned on the
                           outcome of the previous transmission
      iid-uniform-grant    single overall success probability
    """

    kind: str
    ell: int
    reasons: int = 1
    probs: tuple[float, ...] = ()      # bernoulli p_l / markov q_l
    recovery: tuple[float, ...] = ()   # markov p_l
    p1: float = 0.0                    # csma reason probabilities
    p2: float = 0.0
    ps: float = 1.0                    # iid overall success
    composition: str = "any-node"      # bernoulli closed form: any-node|chosen-node
    initial_success: bool = True       # markov chain start state

    def __post_init__(self):
        if self.kind not in DROPOUT_KINDS:
            raise ValueError(f"unknown dropout kind {self.kind!r}")
        unit = lambda v: 0.0 < v <= 1.0
        if self.kind == "bernoulli-per-node" and not all(map(unit, self.probs)):
            raise ValueError("node probabilities must lie in (0, 1]")
        if self.kind == "csma-two-reason" and not (unit(self.p1) and unit(self.p2)):
            raise ValueError("reason probabilities must lie in (0, 1]")
        if self.kind == "markov" and not (
            all(map(unit, self.probs)) and all(map(unit, self.recovery))
        ):
            raise ValueError("markov rates must lie in (0, 1]")
        if self.kind == "iid-uniform-grant" and not unit(self.ps):
            raise ValueError("overall success probability must lie in (0, 1]")

    @classmethod
    def bernoulli(cls, probs: Sequence[float], composition: str = "any-node"):
        return cls(
            kind="bernoulli-per-node",
            ell=len(probs),
            probs=tuple(float(p) for p in probs),
            composition=composition,
        )

    @classmethod
    def csma(cls, p1: float, p2: float, ell: int):
        return cls(kind="csma-two-reason", ell=ell, reasons=2, p1=float(p1), p2=float(p2))

    @classmethod
    def markov(
        cls,
        success_rates: Sequence[float],
        recovery_rates: Sequence[float],
        initial_success: bool = True,
    ):
        if len(success_rates) != len(recovery_rates):
            raise DimensionError("success and recovery rates must align per node")
        return cls(
            kind="markov",
            ell=len(success_rates),
            probs=tuple(float(q) for q in success_rates),
            recovery=tuple(float(p) for p in recovery_rates),
            initial_success=initial_success,
        )

    @classmethod
    def iid(cls, ps: float, ell: int):
        return cls(kind="iid-uniform-grant", ell=ell, ps=float(ps))

    def node_success_prob(self, node: int, prev: Optional[bool] = None) -> float:
        """Probability that the packet of the scheduled node goes through."""
        if self.kind == "bernoulli-per-node":
            return self.probs[node - 1]
        if self.kind == "csma-two-reason":
            return self.p1 * self.p2
        if self.kind == "iid-uniform-grant":
            return self.ps
        if prev is None:
            raise ValueError("markov model needs the previous success state")
        return self.probs[node - 1] if prev else self.recovery[node - 1]


def sample_upsilon(
    model: DropoutModel,
    node: int,
    rng: np.random.Generator,
    prev: Optional[bool] = None,
) -> np.ndarray:
    """Draw the reason bits for the scheduled node; all other nodes stay clear
    so that no second node can transmit."""
    if not 1 <= node <= model.ell:
        raise DimensionError(f"node {node} outside 1..{model.ell}")
    ups = np.zeros(model.ell * model.reasons)
    i0 = (node - 1) * model.reasons
    if model.kind == "csma-two-reason":
        ups[i0] = float(rng.random() < model.p1)
        ups[i0 + 1] = float(rng.random() < model.p2)
    else:
        p = model.node_success_prob(node, prev)
        ups[i0] = float(rng.random() < p)
    return ups


def markov_stationary(q: float, p: float) -> float:
    """Stationary success probability of the 2-state success/failure chain
    with P(success|success) = q and P(success|failure) = p."""
    if not (0.0 < q < 1.0 and 0.0 < p < 1.0):
        raise ValueError("rates must lie strictly inside (0, 1)")
    return p / (1.0 - q + p)


def success_probability(model: DropoutModel) -> tuple[float, float]:
    """Closed-form per-transmission (P_s, P_f) for every model kind.

    bernoulli: 'any-node' counts a transmission as failed only when every
    node's indicator is down; 'chosen-node' takes the worst case over the
    scheduled node of (node fails) * (all other nodes up).  For csma the
    failure combines the chosen node's two reasons with all other nodes
    clear.  markov returns the stationary probability of the chain averaged
    over a uniformly chosen node.
    """
    if model.kind == "iid-uniform-grant":
        return model.ps, 1.0 - model.ps
    if model.kind == "csma-two-reason":
        ps_node = model.p1 * model.p2
        pf = (1.0 - ps_node) * ps_node ** (model.ell - 1)
        return 1.0 - pf, pf
    if model.kind == "bernoulli-per-node":
        if model.composition == "any-node":
            pf = math.prod(1.0 - p for p in model.probs)
        else:
            pf = max(
                (1.0 - pl) * math.prod(pk for k, pk in enumerate(model.probs) if k != l)
                for l, pl in enumerate(model.probs)
            )
        return 1.0 - pf, pf
    q_bar = sum(model.probs) / model.ell
    p_bar = sum(model.recovery) / model.ell
    ps = p_bar / (1.0 - q_bar + p_bar)  # stationary split, valid for p_bar > 0
    return ps, 1.0 - ps
