"""Experiment procedures built on the stream engines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DecompositionDegenerate, NotL2Contraction, NotPowerBounded, UnimodularGap
from ..spectral import eigen_projection, jdlg_split
from ..superop import SuperOperator
from ..tracealg import AlgElement, lp_norm
from ..weights import (
    SubsequenceRule,
    WeightSequence,
    exp_unimodular,
    gen_ergodic_sample,
    gen_random_phase,
    gen_trig_poly,
    hartman_coefficient,
    indicator,
    w_r_seminorm,
)
from .streams import (
    DEFAULT_BUDGET_FRACTION,
    EXTENDED_FACTOR,
    ConvergenceDiagnostics,
    _check_checkpoints,
    _needed,
    multi_weighted_stream,
    subsequence_average_stream,
    weighted_averages,
)
from .truncation import TruncationResult, truncate, truncation_search


# -- uniform Wiener-Wintner scan ------------------------------------------------
def random_weight_family(size: int, seed: int, max_terms: int = 4) -> list[WeightSequence]:
    """Alternating random trigonometric polynomials and random-phase sequences."""
    family = []
    for i in range(size):
        rng = np.random.default_rng([seed, i])
        if i % 2 == 0:
            terms = int(rng.integers(1, max_terms + 1))
            coeffs = [(complex(rng.standard_normal(), rng.standard_normal()), exp_unimodular(rng.random()))
                      for _ in range(terms)]
            family.append(gen_trig_poly(coeffs, name=f"trig_poly[{i}]"))
        else:
            family.append(gen_random_phase(int(rng.integers(2**31)), name=f"random_phase[{i}]"))
    return family


def rescale_family(family: Sequence[WeightSequence], r: float, b: float, horizon: int) -> list[WeightSequence]:
    """Rescale each weight so its measured ``|alpha|_{W_r}`` equals ``b``."""
    out = []
    for a in family:
        s = w_r_seminorm(a, r, max(horizon, 10)).sup_estimate
        out.append(a if s == 0 else a.scaled(b / s, name=a.name))
    return out


@dataclass
class UniformScanResult:
    checkpoints: list
    sup_trunc_inf: list        # sup over the family of ||e (M_n - L) e||_inf
    sup_inf: list              # same with e = 1
    sup_2: list
    sup_cauchy_2: list
    sup_cauchy_inf: list
    truncation: TruncationResult | None
    weights: list
    limit_source: str


def _eigen_components(T: SuperOperator, x: AlgElement):
    """``[(nu, E(nu) x)]`` over the unimodular eigenvalues, or None if unavailable."""
    try:
        if float(np.linalg.norm(T.hs_matrix, 2)) > 1 + 1e-8:
            raise NotL2Contraction("T is not an L_2 contraction")
        split = jdlg_split(T)
    except (NotL2Contraction, UnimodularGap, DecompositionDegenerate, NotPowerBounded):
        return None
    return [(nu, eigen_projection(T, nu)(x)) for nu in split.eigenvalues]


def uniform_ww_scan(T: SuperOperator, x: AlgElement, r: float, b: float, family_size: int,
                    seed: int, checkpoints: Sequence[int], family: Sequence[WeightSequence] | None = None,
                    epsilon: float | None = None, mode: str = "bilateral",
                    n_coeff: int | None = None) -> UniformScanResult:
    """Sup over a family with ``|alpha|_{W_r} <= b`` of truncated residuals, one orbit pass."""
    if not b > 0:
        raise ValueError("b must be > 0")
    if not r > 1:
        raise ValueError("r must lie in (1, inf]")
    cps = _check_checkpoints(checkpoints)
    n_max = cps[-1]
    base = list(family) if family is not None else random_weight_family(family_size, seed)
    alphas = rescale_family(base, r, b, n_max)
    alg = x.algebra
    n_coeff = max(EXTENDED_FACTOR * n_max, 10_000) if n_coeff is None else n_coeff
    comps = _eigen_components(T, x)
    counts = _needed(cps)
    if comps is None:
        counts = counts + [EXTENDED_FACTOR * n_max]
    values = weighted_averages(T, x, alphas, counts)
    limits = []
    for a, vals in zip(alphas, values):
        if comps is None:
            limits.append(alg.unvec(vals[EXTENDED_FACTOR * n_max]))
            continue
        lim = alg.zero()
        for nu, ex in comps:
            lim = lim + hartman_coefficient(a, nu.conjugate(), n_coeff).estimate * ex
        limits.append(lim)
    source = "spectral" if comps is not None else f"extended:{EXTENDED_FACTOR * n_max}"
    resid = [[alg.unvec(vals[n]) - lim for n in cps] for vals, lim in zip(values, limits)]
    J = len(alphas)
    flat, wts = [], []
    for i, _ in enumerate(cps):
        for j in range(J):
            flat.append(resid[j][i])
            wts.append(2.0 ** (-i - 1) / J)
    eps = DEFAULT_BUDGET_FRACTION * alg.total_trace if epsilon is None else epsilon
    trunc = truncation_search(flat, eps, mode, weights=wts)
    st, si, s2, c2, ci = [], [], [], [], []
    for i, n in enumerate(cps):
        st.append(max(lp_norm(truncate(resid[j][i], trunc.e, mode), math.inf) for j in range(J)))
        si.append(max(lp_norm(resid[j][i], math.inf) for j in range(J)))
        s2.append(max(lp_norm(resid[j][i], 2) for j in range(J)))
        diffs = [alg.unvec(values[j][n] - values[j][max(n // 2, 1)]) for j in range(J)]
        c2.append(max(lp_norm(d, 2) for d in diffs))
        ci.append(max(lp_norm(d, math.inf) for d in diffs))
    return UniformScanResult(cps, st, si, s2, c2, ci, trunc, [a.name for a in alphas], source)


# -- return times ------------------------------------------------------------------
def visit_indices(theta: float, omega: float, interval: tuple[float, float], count: int,
                  chunk: int = 1 << 16) -> np.ndarray:
    """First ``count`` indices ``k`` with ``(omega + k theta) mod 1`` in ``[a, b)``."""
    a, b = interval
    out, start, have = [], 0, 0
    while have < count:
        k = np.arange(start, start + chunk, dtype=np.int64)
        t = np.mod(omega + k.astype(float) * theta, 1.0)
        sel = k[(t >= a) & (t < b)]
        out.append(sel)
        have += len(sel)
        start += chunk
    return np.concatenate(out)[:count]


@dataclass
class ReturnTimeSample:
    omega: float
    weighted: ConvergenceDiagnostics
    visits: ConvergenceDiagnostics
    visit_frequency: float


def return_time_experiment(theta: float, omega_samples, interval: tuple[float, float],
                           T: SuperOperator, x: AlgElement, checkpoints: Sequence[int],
                           seed: int = 0, epsilon: float | None = None,
                           mode: str = "bilateral") -> list[ReturnTimeSample]:
    """Weights ``1_E((omega + k theta) mod 1)`` and the matching visit-time subsequence.

    ``omega_samples`` is a list of starting points or a count drawn with ``seed``.
    """
    a, b = (float(v) for v in interval)
    if not (0 <= a < b <= 1):
        raise ValueError("E must be a nonempty subinterval [a, b) of [0, 1)")
    cps = _check_checkpoints(checkpoints)
    if isinstance(omega_samples, (int, np.integer)):
        omegas = list(np.random.default_rng(seed).random(int(omega_samples)))
    else:
        omegas = [float(w) for w in omega_samples]
    out = []
    for omega in omegas:
        alpha = gen_ergodic_sample(theta, omega, indicator(a, b), name=f"return_time(omega={omega:.6g})")
        wdiag = multi_weighted_stream(T, x, [alpha], cps, epsilon=epsilon, mode=mode)[0]
        idx = visit_indices(theta, omega, (a, b), EXTENDED_FACTOR * cps[-1])
        _, vdiag = subsequence_average_stream(T, x, SubsequenceRule("explicit", idx), cps,
                                              epsilon=epsilon, mode=mode, label="visits")
        freq = float(np.mean(alpha.values(cps[-1]).real))
        out.append(ReturnTimeSample(float(omega), wdiag, vdiag, freq))
    return out


# -- Banach-principle probe -----------------------------------------------------------
@dataclass
class StabilityReport:
    distances: list            # ||x_j - x||_p
    residuals: list            # sup_{alpha, n} ||e M_n^alpha(x_j - x) e||_inf
    residuals_untruncated: list
    ratios: list               # residual / (|alpha|_{W_1} ||x_j - x||_p), worst alpha
    constant: float            # max ratio: measured constant C_alg in h(s) = C s
    seminorms: list            # |alpha|_{W_1} sup-estimates
    p: float
    truncation: TruncationResult | None
    extras: dict = field(default_factory=dict)


def approximation_stability_probe(T: SuperOperator, x: AlgElement, x_sequence: Sequence[AlgElement],
                                  alpha_family: Sequence[WeightSequence], checkpoints: Sequence[int],
                                  p: float = math.inf, epsilon: float | None = None,
                                  mode: str = "bilateral") -> StabilityReport:
    """Measure ``sup_{alpha,n} ||e M_n^alpha(x_j - x) e|| / (|alpha|_{W_1} ||x_j - x||_p)``.

    The projection ``e`` is found once from the averages of ``x`` and reused for
    every ``j``, so residuals are comparable across the sequence.
    """
    if not alpha_family:
        raise ValueError("alpha_family must be nonempty")
    if not x_sequence:
        raise ValueError("x_sequence must be nonempty")
    cps = _check_checkpoints(checkpoints)
    alg = x.algebra
    horizon = max(cps[-1], 10)
    norms = [w_r_seminorm(a, 1, horizon).sup_estimate for a in alpha_family]
    base = weighted_averages(T, x, alpha_family, cps)
    eps = DEFAULT_BUDGET_FRACTION * alg.total_trace if epsilon is None else epsilon
    trunc = truncation_search([alg.unvec(v[n]) for v in base for n in cps], eps, mode)
    dists, res, res1, ratios = [], [], [], []
    for xj in x_sequence:
        d = xj - x
        dist = lp_norm(d, p)
        vals = weighted_averages(T, d, alpha_family, cps)
        worst, worst1, worst_ratio = 0.0, 0.0, 0.0
        for s, v in zip(norms, vals):
            for n in cps:
                m = alg.unvec(v[n])
                t = lp_norm(truncate(m, trunc.e, mode), math.inf)
                worst = max(worst, t)
                worst1 = max(worst1, lp_norm(m, math.inf))
                if dist > 0 and s > 0:
                    worst_ratio = max(worst_ratio, t / (s * dist))
        dists.append(dist)
        res.append(worst)
        res1.append(worst1)
        ratios.append(worst_ratio)
    return StabilityReport(dists, res, res1, ratios, max(ratios), norms, p, trunc)
