"""Render publication-style figures from the simulator's CSV outputs.

Three figure kinds:

  ps-sweep      interval bound vs success probability, one curve per input
                CSV (header ps,tau_star); infeasible rows have an empty
                tau_star cell and appear as gaps; each curve's value at
                ps = 1 is drawn as a dotted reference line (the
                dropout-free bound).
  lr-sweep      interval bound vs the per-success contraction, one line per
                expansion value (header lambda,rho,tau_star).
  trajectories  overlaid state-norm traces of a seeded ensemble
                (header t,run,x_norm).

Inputs are read-only; rendering the same CSVs twice produces identical
files (fixed palette, fixed svg hash salt, no timestamps).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "figure-plots"

import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = ("ps-sweep", "lr-sweep", "trajectories")

EXPECTED_HEADERS = {
    "ps-sweep": ["ps", "tau_star"],
    "lr-sweep": ["lambda", "rho", "tau_star"],
    "trajectories": ["t", "run", "x_norm"],
}

# Okabe-Ito palette: colorblind-safe, fixed order
PALETTE = ["#0072B2", "#D55E00", "#009E73", "#CC79A7", "#E69F00", "#56B4E9", "#000000"]


class FigureError(ValueError):
    """Missing, empty, or malformed figure input."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[Path, ...]
    output: Path

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise FigureError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise FigureError("at least one input CSV is required")
        if Path(self.output).suffix.lower() not in (".png", ".svg"):
            raise FigureError("output must be a .png or .svg file")


def _read_rows(path: Path, kind: str) -> list[list[str]]:
    path = Path(path)
    if not path.exists():
        raise FigureError(f"input not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != EXPECTED_HEADERS[kind]:
        raise FigureError(
            f"{path}: expected header {EXPECTED_HEADERS[kind]}, got {rows[0] if rows else 'empty file'}"
        )
    if len(rows) < 2:
        raise FigureError(f"{path}: no data rows")
    return rows[1:]


def load_ps_curve(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """ps and tau_star arrays; infeasible (empty) cells become NaN gaps."""
    body = _read_rows(path, "ps-sweep")
    ps = np.array([float(r[0]) for r in body])
    tau = np.array([float(r[1]) if r[1] != "" else math.nan for r in body])
    return ps, tau


def load_lr_table(path: Path) -> dict[float, tuple[np.ndarray, np.ndarray]]:
    """Per-lambda (rho, tau_star) series with NaN gaps."""
    body = _read_rows(path, "lr-sweep")
    table: dict[float, list[tuple[float, float]]] = {}
    for lam_s, rho_s, tau_s in body:
        lam = float(lam_s)
        table.setdefault(lam, []).append(
            (float(rho_s), float(tau_s) if tau_s != "" else math.nan)
        )
    out = {}
    for lam, pairs in table.items():
        pairs.sort()
        out[lam] = (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
    return out


def load_trajectories(path: Path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    body = _read_rows(path, "trajectories")
    runs: dict[int, list[tuple[float, float]]] = {}
    for t_s, run_s, norm_s in body:
        runs.setdefault(int(run_s), []).append((float(t_s), float(norm_s)))
    out = {}
    for run, pairs in runs.items():
        pairs.sort()
        out[run] = (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
    return out


def _curve_label(path: Path) -> str:
    stem = Path(path).stem
    for token in ("tod", "rr"):
        if stem.endswith(f"_{token}") or stem == token:
            return token.upper()
    return stem


def render(spec: FigureSpec) -> Path:
    """Render one figure; returns the written path."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=150)
    if spec.kind == "ps-sweep":
        for i, src in enumerate(spec.inputs):
            ps, tau = load_ps_curve(src)
            color = PALETTE[i % len(PALETTE)]
            ax.plot(ps, tau, color=color, label=_curve_label(src))
            at_one = tau[np.isclose(ps, 1.0)]
            if at_one.size and np.isfinite(at_one[-1]):
                ax.axhline(at_one[-1], color=color, linestyle=":", linewidth=1.0)
        ax.set_xlabel("success probability")
        ax.set_ylabel("transmission interval bound [s]")
        ax.legend()
    elif spec.kind == "lr-sweep":
        for i, src in enumerate(spec.inputs):
            table = load_lr_table(src)
            prefix = f"{_curve_label(src)}: " if len(spec.inputs) > 1 else ""
            for k, lam in enumerate(sorted(table)):
                rho, tau = table[lam]
                ax.plot(
                    rho, tau,
                    color=PALETTE[(i + k) % len(PALETTE)],
                    linestyle=["-", "--", "-.", ":"][i % 4],
                    label=f"{prefix}expansion {lam:g}",
                )
        ax.set_xlabel("per-success contraction")
        ax.set_ylabel("transmission interval bound [s]")
        ax.legend(fontsize=7)
    else:
        for src in spec.inputs:
            runs = load_trajectories(src)
            for k, run in enumerate(sorted(runs)):
                t, norm = runs[run]
                ax.plot(t, norm, color=PALETTE[k % len(PALETTE)], alpha=0.7, linewidth=0.9)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("|x(t)|")
    ax.grid(True, alpha=0.3)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Date": None} if out.suffix.lower() == ".svg" else {}
    fig.savefig(out, metadata=metadata)
    plt.close(fig)
    return out
