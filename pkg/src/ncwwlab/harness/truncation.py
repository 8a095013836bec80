"""Projection-truncation search: the finite-dimensional stand-in for the
"small trace complement" projections in almost-uniform convergence."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import BudgetTooSmall
from ..tracealg import AlgElement, lp_norm

TIE_TOL = 1e-14
MODES = ("bilateral", "right")


@dataclass(frozen=True)
class TruncationResult:
    e: AlgElement
    tau_perp: float
    achieved_sup: float
    threshold: float
    mode: str
    trivial: bool          # True when no cut fit the budget and e = 1 was returned

    def apply(self, y: AlgElement) -> AlgElement:
        return truncate(y, self.e, self.mode)


def truncate(y: AlgElement, e: AlgElement, mode: str = "bilateral") -> AlgElement:
    return e @ y @ e if mode == "bilateral" else y @ e


def envelope(orbitvals: Sequence[AlgElement], mode: str = "bilateral",
             weights: Sequence[float] | None = None) -> AlgElement:
    """``s = sum_n w_n |y_n|`` (bilateral mode symmetrizes with ``|y_n*|``)."""
    alg = orbitvals[0].algebra
    if weights is None:
        weights = [2.0 ** (-n - 1) for n in range(len(orbitvals))]
    s = alg.zero()
    for w, y in zip(weights, orbitvals):
        m = y.modulus()
        if mode == "bilateral":
            m = 0.5 * (m + y.adjoint().modulus())
        s = s + w * m
    return s


def truncation_search(orbitvals: Sequence[AlgElement], epsilon: float, mode: str = "bilateral",
                      weights: Sequence[float] | None = None,
                      allow_trivial: bool = True) -> TruncationResult:
    """Cut the largest eigenvalues of the envelope while ``tau(1 - e) <= epsilon``.

    The reported ``achieved_sup`` is evaluated directly on every orbit value, so it
    is an actual upper bound for the chosen ``e``, not an estimate.
    """
    if not orbitvals:
        raise ValueError("orbitvals must be nonempty")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    alg = orbitvals[0].algebra
    if not 0 < epsilon < alg.total_trace:
        raise ValueError(f"trace budget must lie in (0, tau(1)={alg.total_trace}), got {epsilon}")
    s = envelope(orbitvals, mode, weights)
    spectra = []
    for m in s.data:
        spectra.append(np.linalg.eigh(0.5 * (m + m.conj().T)))
    entries = sorted(
        ((float(val), bi) for bi, (w, _) in enumerate(spectra) for val in w),
        key=lambda t: -t[0],
    )
    # group ties so a cut never splits an eigenspace
    groups: list[tuple[float, float]] = []
    for val, bi in entries:
        mass = alg.blocks[bi].weight
        if groups and abs(groups[-1][0] - val) <= TIE_TOL * max(1.0, abs(val)):
            groups[-1] = (groups[-1][0], groups[-1][1] + mass)
        else:
            groups.append((val, mass))
    cut_mass, threshold = 0.0, math.inf
    positive = [g for g in groups if g[0] > TIE_TOL]
    for val, mass in positive:
        if cut_mass + mass > epsilon:
            break
        cut_mass += mass
        threshold = val
    trivial = False
    if positive and cut_mass == 0.0:
        if not allow_trivial:
            raise BudgetTooSmall(
                f"budget {epsilon} is below the trace {positive[0][1]} of the top spectral cut")
        trivial = True
    if cut_mass == 0.0:
        e = alg.identity()
        threshold = math.inf
    else:
        blocks = []
        for w, v in spectra:
            keep = w < threshold - TIE_TOL * max(1.0, abs(threshold))
            vk = v[:, keep]
            blocks.append(vk @ vk.conj().T)
        e = AlgElement(alg, blocks)
    tau_perp = float(sum(b.weight * (b.dim - np.trace(m).real) for b, m in zip(alg.blocks, e.data)))
    sup = max(lp_norm(truncate(y, e, mode), math.inf) for y in orbitvals)
    return TruncationResult(e, max(tau_perp, 0.0), sup, threshold, mode, trivial)
