"""Average engines and convergence diagnostics.

All engines run on Hilbert-Schmidt vectors. One sequential pass over the
orbit ``k -> T^k x`` feeds any number of weighted accumulators (orbit
sharing); the orbit is produced in chunks ``Y[i] = A^i y`` from a cached
stack of matrix powers, so the Python loop runs once per chunk rather than
once per step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from ..errors import (
    AlgebraMismatch,
    DecompositionDegenerate,
    InvalidWindow,
    NotL2Contraction,
    NotPowerBounded,
    UnimodularGap,
)
from ..primes import PRIMES
from ..spectral import eigen_projection, jdlg_split, spectral_weighted_limit
from ..superop import SuperOperator
from ..tracealg import AlgElement, lp_norm
from ..weights import MovingWindow, SubsequenceRule, WeightSequence, gen_von_mangoldt
from .truncation import TruncationResult, truncate, truncation_search

#: Budget for the power stack, in complex entries.
POWER_STACK_ENTRIES = 1 << 22
MAX_CHUNK = 1024
DEFAULT_N_MAX = 1 << 17
DEFAULT_BUDGET_FRACTION = 0.05
DECAY_THRESHOLD = 1e-2
#: Absolute round-off allowance in the monotone-tail test.
MONOTONE_SLACK = 1e-12
EXTENDED_FACTOR = 4
#: Weight classes for which the spectral prediction of the limit is used.
HARTMAN_CLASSES = ("constant", "convergent", "rotation", "trig_poly", "besicovich",
                   "ergodic_sample", "von_mangoldt")

Window = Callable[[int, int], np.ndarray]


def dyadic_checkpoints(n_max: int = DEFAULT_N_MAX, start: int = 2) -> list[int]:
    out, n = [], start
    while n <= n_max:
        out.append(n)
        n *= 2
    return out


def _same_algebra(T: SuperOperator, x: AlgElement) -> None:
    if T.algebra != x.algebra:
        raise AlgebraMismatch("operator and initial element live in different algebras")


def _check_checkpoints(checkpoints: Sequence[int]) -> list[int]:
    cps = [int(c) for c in checkpoints]
    if not cps:
        raise ValueError("checkpoints must be nonempty")
    if cps[0] < 1 or any(b <= a for a, b in zip(cps, cps[1:])):
        raise ValueError("checkpoints must be positive and strictly increasing")
    return cps


# -- orbit engine ---------------------------------------------------------------
class OrbitSums:
    """Sequential accumulation of ``S_j(m) = sum_{k<m} w_j(k) T^k x``.

    Memory is one orbit chunk plus one accumulator per weight, independent of
    how far the pass runs.
    """

    def __init__(self, T: SuperOperator, x: AlgElement, windows: Sequence[Window],
                 chunk: int | None = None):
        if x.algebra != T.algebra:
            raise AlgebraMismatch("operator and initial element live in different algebras")
        self.A = T.hs_matrix
        D = self.A.shape[0]
        if chunk is None:
            chunk = max(1, min(MAX_CHUNK, POWER_STACK_ENTRIES // (D * D)))
        self.chunk = chunk
        powers = np.empty((chunk, D, D), dtype=complex)
        powers[0] = np.eye(D)
        for i in range(1, chunk):
            powers[i] = self.A @ powers[i - 1]
        self._powers = powers
        self.windows = list(windows)
        self.y = x.vec().astype(complex)
        self.acc = np.zeros((len(self.windows), D), dtype=complex)
        self.k = 0
        self.applications = 0

    def advance_to(self, m: int) -> np.ndarray:
        """Run the orbit up to index ``m`` (exclusive) and return a copy of the sums."""
        if m < self.k:
            raise ValueError("orbit passes only move forward")
        while self.k < m:
            c = min(self.chunk, m - self.k)
            Y = self._powers[:c] @ self.y
            W = np.array([w(self.k, self.k + c) for w in self.windows]).reshape(len(self.windows), c)
            self.acc += W @ Y
            self.y = self.A @ Y[c - 1]
            self.k += c
            self.applications += c
        return self.acc.copy()


def _weight_window(alpha: WeightSequence) -> Window:
    return alpha.window


def _index_window(indices: np.ndarray) -> Window:
    """Indicator window of a strictly increasing index set."""
    def window(a, b):
        lo, hi = np.searchsorted(indices, [a, b])
        out = np.zeros(b - a)
        out[indices[lo:hi] - a] = 1.0
        return out
    return window


def _prime_window(a: int, b: int) -> np.ndarray:
    return PRIMES.is_prime(a, b).astype(float)


def _ones_window(a: int, b: int) -> np.ndarray:
    return np.ones(b - a)


# -- diagnostics --------------------------------------------------------------------
@dataclass
class ConvergenceDiagnostics:
    checkpoints: list
    averages: list                      # AlgElement M_n per checkpoint
    residual_cauchy_2: list
    residual_cauchy_inf: list
    estimated_limit: AlgElement | None
    limit_source: str
    residual_to_limit_2: list
    residual_to_limit_inf: list
    truncation: TruncationResult | None
    trunc_residual_inf: list
    label: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def final_average(self) -> AlgElement:
        return self.averages[-1]

    def verdict(self, threshold: float = DECAY_THRESHOLD) -> str:
        return verdict(self, threshold)


def verdict(diag: ConvergenceDiagnostics, threshold: float = DECAY_THRESHOLD) -> str:
    """``decayed`` | ``plateaued`` | ``diverged``.

    decayed: final truncated residual <= threshold and the last three Cauchy
    residuals are nonincreasing (up to MONOTONE_SLACK round-off). diverged: final
    residual above threshold and the last Cauchy residual at least the largest
    one over the first half of the checkpoints. Anything else plateaued.
    """
    final = _final_residual(diag)
    cauchy = diag.residual_cauchy_2
    tail = cauchy[-3:]
    monotone = all(b <= a + MONOTONE_SLACK for a, b in zip(tail, tail[1:]))
    if final <= threshold and monotone:
        return "decayed"
    head = cauchy[:max(1, len(cauchy) // 2)]
    if not final <= threshold and len(cauchy) > 1 and cauchy[-1] >= max(head) > 0:
        return "diverged"
    return "plateaued"


def _final_residual(diag: ConvergenceDiagnostics) -> float:
    for series in (diag.trunc_residual_inf, diag.residual_to_limit_inf, diag.residual_cauchy_inf):
        if series and not math.isnan(series[-1]):
            return series[-1]
    return math.nan


def build_diagnostics(algebra, checkpoints: Sequence[int], values: dict, limit: AlgElement | None,
                      limit_source: str, epsilon: float | None = None,
                      mode: str = "bilateral", label: str = "") -> ConvergenceDiagnostics:
    """Assemble diagnostics from HS vectors ``values[n]`` (must include ``n // 2``)."""
    epsilon = DEFAULT_BUDGET_FRACTION * algebra.total_trace if epsilon is None else epsilon
    avgs = {n: algebra.unvec(v) for n, v in values.items()}
    cps = list(checkpoints)
    c2, cinf, l2, linf = [], [], [], []
    for n in cps:
        prev = avgs[max(n // 2, 1)]
        d = avgs[n] - prev
        c2.append(lp_norm(d, 2))
        cinf.append(lp_norm(d, math.inf))
        if limit is None:
            l2.append(math.nan)
            linf.append(math.nan)
        else:
            r = avgs[n] - limit
            l2.append(lp_norm(r, 2))
            linf.append(lp_norm(r, math.inf))
    trunc, tres = None, []
    if limit is not None:
        resid = [avgs[n] - limit for n in cps]
        trunc = truncation_search(resid, epsilon, mode)
        tres = [lp_norm(truncate(r, trunc.e, mode), math.inf) for r in resid]
    else:
        tres = [math.nan] * len(cps)
    return ConvergenceDiagnostics(cps, [avgs[n] for n in cps], c2, cinf, limit, limit_source,
                                  l2, linf, trunc, tres, label)


def _needed(checkpoints: Sequence[int]) -> list[int]:
    return sorted({n for n in checkpoints} | {max(n // 2, 1) for n in checkpoints})


# -- weighted streams -----------------------------------------------------------------
def weighted_averages(T: SuperOperator, x: AlgElement, alphas: Sequence[WeightSequence],
                      counts: Sequence[int]) -> list[dict]:
    """``M_n^{alpha_j}`` as HS vectors for each weight and each ``n`` in ``counts`` (one orbit pass)."""
    counts = sorted(set(int(n) for n in counts))
    orbit = OrbitSums(T, x, [_weight_window(a) for a in alphas])
    out = [dict() for _ in alphas]
    for n in counts:
        sums = orbit.advance_to(n)
        for j in range(len(alphas)):
            out[j][n] = sums[j] / n
    return out


def predicted_limit(T: SuperOperator, x: AlgElement, alpha: WeightSequence, n_coeff: int,
                    policy: str = "auto") -> tuple[AlgElement | None, str]:
    """Spectral prediction of the weighted limit, or ``(None, reason)`` when unavailable."""
    if policy == "none":
        return None, "none"
    if policy == "auto" and alpha.declared_class not in HARTMAN_CLASSES:
        return None, "not_hartman"
    try:
        split = jdlg_split(T)
        return spectral_weighted_limit(T, alpha, x, split.eigenvalues, n_coeff), "spectral"
    except (NotL2Contraction, UnimodularGap, DecompositionDegenerate, NotPowerBounded) as exc:
        return None, f"unavailable:{type(exc).__name__}"


def multi_weighted_stream(T: SuperOperator, x: AlgElement, alphas: Sequence[WeightSequence],
                          checkpoints: Sequence[int], limit: str = "auto",
                          epsilon: float | None = None, mode: str = "bilateral",
                          n_coeff: int | None = None) -> list[ConvergenceDiagnostics]:
    """Diagnostics for several weights sharing one orbit pass.

    ``limit``: ``auto`` (spectral prediction for Hartman-type weights, else the
    average at an extended horizon), ``spectral``, ``extended`` or ``none``.
    """
    _same_algebra(T, x)
    cps = _check_checkpoints(checkpoints)
    if limit not in ("auto", "spectral", "extended", "none"):
        raise ValueError(f"unknown limit policy {limit!r}")
    n_max = cps[-1]
    n_ext = EXTENDED_FACTOR * n_max
    n_coeff = max(n_ext, 10_000) if n_coeff is None else n_coeff
    limits, sources = [], []
    for a in alphas:
        if limit == "extended":
            limits.append(None)
            sources.append("extended")
            continue
        lim, src = predicted_limit(T, x, a, n_coeff, limit)
        if lim is None and limit == "auto":
            src = "extended"
        limits.append(lim)
        sources.append(src)
    counts = _needed(cps)
    if "extended" in sources:
        counts.append(n_ext)
    values = weighted_averages(T, x, alphas, counts)
    out = []
    for a, lim, src, vals in zip(alphas, limits, sources, values):
        if src == "extended":
            lim = x.algebra.unvec(vals[n_ext])
            src = f"extended:{n_ext}"
        out.append(build_diagnostics(x.algebra, cps, vals, lim, src, epsilon, mode, a.name))
    return out


class StreamResult(NamedTuple):
    stream: "AverageStream | MovingStream"
    diagnostics: ConvergenceDiagnostics


@dataclass
class AverageStream:
    """Single-owner incremental stream of ``M_n``; O(1) memory in ``n``."""
    operator: SuperOperator
    x: AlgElement
    mode: str
    orbit: OrbitSums
    count_to_index: Callable[[int], int]
    normalizer: Callable[[int], float]
    n: int = 0

    def advance_to(self, n: int) -> AlgElement:
        if n < 1:
            raise ValueError("n must be >= 1")
        sums = self.orbit.advance_to(self.count_to_index(n))
        self.n = n
        return self.x.algebra.unvec(sums[0] / self.normalizer(n))

    @property
    def applications(self) -> int:
        return self.orbit.applications


def weighted_average_stream(T: SuperOperator, x: AlgElement, alpha: WeightSequence,
                            checkpoints: Sequence[int], **kw) -> StreamResult:
    """``M_n = (1/n) sum_{k<n} alpha_k T^k x``."""
    diag = multi_weighted_stream(T, x, [alpha], checkpoints, **kw)[0]
    stream = AverageStream(T, x, "weighted", OrbitSums(T, x, [alpha.window]), lambda n: n, float)
    return StreamResult(stream, diag)


def mangoldt_average_stream(T: SuperOperator, x: AlgElement, checkpoints: Sequence[int], **kw):
    """Weighted stream with the von Mangoldt weights."""
    return weighted_average_stream(T, x, gen_von_mangoldt(), checkpoints, **kw)


# -- subsequence streams ----------------------------------------------------------------
def subsequence_averages(T: SuperOperator, x: AlgElement, indices: np.ndarray,
                         counts: Sequence[int], window: Window | None = None) -> dict:
    """``(1/n) sum_{j<n} T^{k_j} x`` for each ``n`` in ``counts``."""
    counts = sorted(set(int(n) for n in counts))
    if len(indices) < counts[-1]:
        raise ValueError("not enough subsequence indices")
    orbit = OrbitSums(T, x, [window or _index_window(np.asarray(indices))])
    out = {}
    for n in counts:
        out[n] = orbit.advance_to(int(indices[n - 1]) + 1)[0] / n
    return out


def subsequence_average_stream(T: SuperOperator, x: AlgElement, rule: SubsequenceRule,
                               checkpoints: Sequence[int], limit: str = "extended",
                               epsilon: float | None = None, mode: str = "bilateral",
                               label: str | None = None):
    cps = _check_checkpoints(checkpoints)
    n_ext = EXTENDED_FACTOR * cps[-1]
    counts = _needed(cps) + ([n_ext] if limit == "extended" else [])
    idx = rule.indices(max(counts))
    window = _prime_window if rule.kind == "primes" else None
    vals = subsequence_averages(T, x, idx, counts, window)
    lim, src = None, "none"
    if limit == "extended":
        lim, src = x.algebra.unvec(vals[n_ext]), f"extended:{n_ext}"
    diag = build_diagnostics(x.algebra, cps, vals, lim, src, epsilon, mode, label or rule.kind)
    stream = AverageStream(T, x, f"subsequence:{rule.kind}",
                           OrbitSums(T, x, [window or _index_window(np.asarray(idx))]),
                           lambda n: int(idx[n - 1]) + 1, float)
    return StreamResult(stream, diag)


def prime_average_stream(T: SuperOperator, x: AlgElement, checkpoints: Sequence[int], **kw):
    """``(1/n) sum_{k<n} T^{p_k} x`` with ``p_0 = 2``."""
    return subsequence_average_stream(T, x, SubsequenceRule("primes"), checkpoints,
                                      label="primes", **kw)


# -- moving averages ----------------------------------------------------------------------
def moving_averages(T: SuperOperator, x: AlgElement, w: MovingWindow, counts: Sequence[int]) -> dict:
    """``(1/k_n) sum_{j<k_n} T^{m_n+j} x`` from orbit prefix sums at the needed indices."""
    pairs = {n: w.pair(n) for n in sorted(set(int(c) for c in counts))}
    for n, (k, m) in pairs.items():
        if k <= 0 or m < 0:
            raise InvalidWindow(f"window at n={n} is (k={k}, m={m})")
    marks = sorted({m for k, m in pairs.values()} | {m + k for k, m in pairs.values()})
    orbit = OrbitSums(T, x, [_ones_window])
    prefix = {mark: orbit.advance_to(mark)[0] for mark in marks}
    return {n: (prefix[m + k] - prefix[m]) / k for n, (k, m) in pairs.items()}


def moving_average_stream(T: SuperOperator, x: AlgElement, w: MovingWindow,
                          checkpoints: Sequence[int], limit: str = "auto",
                          epsilon: float | None = None, mode: str = "bilateral",
                          validate: bool = True, k_threshold: int | None = None):
    """Moving averages along ``w``; the limit is the fixed-point projection ``E(1) x``."""
    _same_algebra(T, x)
    cps = _check_checkpoints(checkpoints)
    if validate:
        w.validate(cps[-1], k_threshold)
    counts = _needed(cps)
    lim, src = None, "none"
    if limit in ("auto", "spectral"):
        try:
            if float(np.linalg.norm(T.hs_matrix, 2)) > 1 + 1e-8:
                raise NotL2Contraction("T is not an L_2 contraction")
            lim, src = eigen_projection(T, 1.0)(x), "spectral"
        except NotL2Contraction as exc:
            src = f"unavailable:{type(exc).__name__}"
    n_ext = EXTENDED_FACTOR * cps[-1]
    if limit == "extended" or (limit == "auto" and lim is None):
        counts = counts + [n_ext]
    vals = moving_averages(T, x, w, counts)
    if lim is None and n_ext in vals:
        lim, src = x.algebra.unvec(vals[n_ext]), f"extended:{n_ext}"
    diag = build_diagnostics(x.algebra, cps, vals, lim, src, epsilon, mode, "moving")
    return StreamResult(MovingStream(T, x, w), diag)


class MovingStream:
    """Incremental moving averages; reuses the orbit while ``m_n`` is nondecreasing."""

    def __init__(self, T: SuperOperator, x: AlgElement, w: MovingWindow):
        self.operator, self.x, self.window = T, x, w
        self._orbit = OrbitSums(T, x, [_ones_window])
        self.n = 0
        self.restarts = 0

    def advance_to(self, n: int) -> AlgElement:
        k, m = self.window.pair(n)
        if k <= 0 or m < 0:
            raise InvalidWindow(f"window at n={n} is (k={k}, m={m})")
        if m < self._orbit.k:
            self._orbit = OrbitSums(self.operator, self.x, [_ones_window])
            self.restarts += 1
        lo = self._orbit.advance_to(m)[0]
        hi = self._orbit.advance_to(m + k)[0]
        self.n = n
        return self.x.algebra.unvec((hi - lo) / k)
