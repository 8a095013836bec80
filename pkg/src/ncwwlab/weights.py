"""Weight sequences, subsequence rules, moving windows and their estimators.

Every :class:`WeightSequence` is produced chunk by chunk by a deterministic
rule and memoized, so ``seq[k]`` is bit-identical no matter how, or in which
order, the sequence is queried.
"""
from __future__ import annotations

import cmath
import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import (
    ClassMismatch,
    DriftWarning,
    InvalidExponent,
    InvalidHorizon,
    InvalidWindow,
    NotUnimodular,
)
from .primes import PRIMES

UNIMODULAR_TOL = 1e-12
#: Rotation sequences are renormalized to the unit circle this often.
RENORM_EVERY = 1024
#: Memoization granularity; a multiple of RENORM_EVERY.
CACHE_CHUNK = 1 << 14
#: Default tail fraction used as the limsup proxy.
DEFAULT_WINDOW = 0.1

WEIGHT_CLASSES = (
    "constant", "convergent", "rotation", "trig_poly", "besicovich",
    "ergodic_sample", "von_mangoldt", "custom",
)

BlockRule = Callable[[int, int], np.ndarray]


def check_unimodular(lam: complex, what: str = "lambda") -> complex:
    lam = complex(lam)
    if abs(abs(lam) - 1.0) > UNIMODULAR_TOL:
        raise NotUnimodular(f"{what}={lam!r} is not on the unit circle (|.|={abs(lam)!r})")
    return lam


class WeightSequence:
    """Deterministic complex sequence ``k -> alpha_k``, ``k = 0, 1, ...``.

    ``rule(start, stop)`` must return the values on ``[start, stop)``. It is
    only ever called on consecutive chunk-aligned ranges, in increasing order,
    which lets stateful rules (rotations) carry their state forward.
    """

    def __init__(self, rule: BlockRule, declared_class: str, params: dict | None = None,
                 name: str | None = None, cache_policy: str = "chunked"):
        if declared_class not in WEIGHT_CLASSES:
            raise ValueError(f"unknown weight class {declared_class!r}")
        self._rule = rule
        self.declared_class = declared_class
        self.params = dict(params or {})
        self.name = name or declared_class
        self.cache_policy = cache_policy
        self._cache = np.zeros(0, dtype=complex)
        self._lock = threading.Lock()

    def __repr__(self):
        return f"WeightSequence({self.name!r}, class={self.declared_class})"

    def _extend(self, n: int) -> None:
        if n <= len(self._cache):
            return
        with self._lock:
            have = len(self._cache)
            if n <= have:
                return
            target = -(-n // CACHE_CHUNK) * CACHE_CHUNK
            parts = [self._cache]
            for start in range(have, target, CACHE_CHUNK):
                block = np.asarray(self._rule(start, start + CACHE_CHUNK), dtype=complex)
                if block.shape != (CACHE_CHUNK,):
                    raise ValueError(f"weight rule returned shape {block.shape}")
                parts.append(block)
            cache = np.concatenate(parts)
            cache.flags.writeable = False
            self._cache = cache

    def values(self, n: int) -> np.ndarray:
        """The first ``n`` values as a read-only array."""
        self._extend(n)
        return self._cache[:n]

    def window(self, start: int, stop: int) -> np.ndarray:
        self._extend(stop)
        return self._cache[start:stop]

    def __getitem__(self, k: int) -> complex:
        if k < 0:
            raise IndexError("weights are indexed from 0")
        self._extend(k + 1)
        return complex(self._cache[k])

    def scaled(self, c: complex, name: str | None = None) -> "WeightSequence":
        base = self
        return WeightSequence(lambda a, b: c * base.window(a, b), self.declared_class,
                              {**self.params, "scale": c}, name or f"{self.name}*{c:g}")

    def __sub__(self, other: "WeightSequence") -> "WeightSequence":
        a, b = self, other
        return WeightSequence(lambda s, t: a.window(s, t) - b.window(s, t), "custom",
                              {"difference": (a.name, b.name)}, f"{a.name}-{b.name}")


class _RotationRule:
    def __init__(self, mu: complex):
        self.mu = mu
        pows = np.empty(RENORM_EVERY, dtype=complex)
        pows[0] = 1.0
        for j in range(1, RENORM_EVERY):
            pows[j] = pows[j - 1] * mu
        self.pows = pows
        self.step = pows[-1] * mu
        self.anchor = complex(1.0)
        self.next = 0

    def __call__(self, start: int, stop: int) -> np.ndarray:
        if start != self.next:
            raise RuntimeError("rotation rule queried out of order")
        out = np.empty(stop - start, dtype=complex)
        for s in range(0, stop - start, RENORM_EVERY):
            out[s:s + RENORM_EVERY] = self.anchor * self.pows
            a = self.anchor * self.step
            self.anchor = a / abs(a)
        self.next = stop
        return out


def gen_rotation(mu: complex, name: str | None = None) -> WeightSequence:
    """``alpha_k = mu**k`` for unimodular ``mu``."""
    mu = check_unimodular(mu, "mu")
    return WeightSequence(_RotationRule(mu), "rotation", {"mu": mu}, name or f"rotation({mu:.6g})")


def gen_constant(c: complex, name: str | None = None) -> WeightSequence:
    c = complex(c)
    return WeightSequence(lambda a, b: np.full(b - a, c, dtype=complex), "constant",
                          {"value": c}, name or f"constant({c:g})")


def gen_trig_poly(coeffs: Sequence[tuple[complex, complex]], name: str | None = None) -> WeightSequence:
    """``alpha_k = sum_j r_j lam_j**k``."""
    terms = [(complex(r), check_unimodular(lam, "lambda_j")) for r, lam in coeffs]
    rots = [gen_rotation(lam) for _, lam in terms]

    def rule(a, b):
        out = np.zeros(b - a, dtype=complex)
        for (r, _), rot in zip(terms, rots):
            out += r * rot.window(a, b)
        return out

    return WeightSequence(rule, "trig_poly", {"coeffs": terms}, name or "trig_poly")


def _vectorize_rule(rule: Callable) -> BlockRule:
    def block(a, b):
        k = np.arange(a, b)
        try:
            out = np.asarray(rule(k), dtype=complex)
            if out.shape == k.shape:
                return out
        except (TypeError, ValueError):
            pass
        return np.fromiter((complex(rule(int(i))) for i in k), dtype=complex, count=b - a)
    return block


def gen_convergent(rule: Callable, limit: complex, name: str | None = None,
                   drift_horizon: int = 4096, drift_tol: float = 1e-2) -> WeightSequence:
    """Sequence declared to converge to ``limit``.

    Convergence is not verified; a finite-prefix drift check
    ``max_{N/2 <= k < N} |alpha_k - limit|`` sets ``params['drift_warning']``
    and emits a :class:`DriftWarning` when it exceeds ``drift_tol``.
    """
    seq = WeightSequence(_vectorize_rule(rule), "convergent", {"limit": complex(limit)},
                         name or "convergent")
    tail = seq.window(drift_horizon // 2, drift_horizon)
    drift = float(np.max(np.abs(tail - complex(limit))))
    seq.params["drift"] = drift
    seq.params["drift_warning"] = drift > drift_tol
    if drift > drift_tol:
        warnings.warn(f"{seq.name}: prefix drift {drift:.3g} from declared limit {limit}",
                      DriftWarning, stacklevel=2)
    return seq


def gen_custom(rule: Callable, name: str = "custom", params: dict | None = None) -> WeightSequence:
    return WeightSequence(_vectorize_rule(rule), "custom", params, name)


# -- circle-rotation samples --------------------------------------------------
def indicator(a: float, b: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda t: ((t >= a) & (t < b)).astype(float)


def character(m: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda t: np.exp(2j * np.pi * m * t)


def gen_ergodic_sample(theta: float, omega: float, f: Callable[[np.ndarray], np.ndarray],
                       f_class: float = math.inf, name: str | None = None) -> WeightSequence:
    """``alpha_k = f((omega + k theta) mod 1)``; ``f`` must accept arrays."""
    theta, omega = float(theta), float(omega)

    def rule(a, b):
        t = np.mod(omega + np.arange(a, b, dtype=float) * theta, 1.0)
        return np.asarray(f(t), dtype=complex) * np.ones(b - a)

    return WeightSequence(rule, "ergodic_sample",
                          {"theta": theta, "omega": omega, "f_class": f_class},
                          name or f"ergodic_sample(theta={theta:.6g}, omega={omega:.6g})")


def gen_von_mangoldt() -> WeightSequence:
    return WeightSequence(lambda a, b: PRIMES.mangoldt(a, b).astype(complex),
                          "von_mangoldt", {}, "von_mangoldt")


def gen_random_phase(seed: int, name: str | None = None) -> WeightSequence:
    """Unimodular weights with i.i.d. uniform phases, reproducible per chunk."""
    def rule(a, b):
        rng = np.random.default_rng([seed, a // CACHE_CHUNK])
        return np.exp(2j * np.pi * rng.random(b - a))
    return WeightSequence(rule, "custom", {"random_phase_seed": seed}, name or f"random_phase({seed})")


# -- subsequences and windows -------------------------------------------------
@dataclass
class SubsequenceRule:
    """Strictly increasing index sequence ``k_0 < k_1 < ...``."""
    kind: str
    data: Any = None

    def __post_init__(self):
        if self.kind not in ("primes", "explicit", "density_one_mask"):
            raise ValueError(f"unknown subsequence kind {self.kind!r}")
        if self.kind == "explicit":
            idx = np.asarray(self.data, dtype=np.int64)
            if idx.ndim != 1 or (idx.size and idx[0] < 0) or np.any(np.diff(idx) <= 0):
                raise ValueError("explicit indices must be nonnegative and strictly increasing")
            self.data = idx

    def indices(self, n: int) -> np.ndarray:
        if self.kind == "primes":
            return PRIMES.first_primes(n)
        if self.kind == "explicit":
            if n > len(self.data):
                raise ValueError(f"only {len(self.data)} explicit indices, {n} requested")
            return self.data[:n]
        keep = self.data
        out, start = [], 0
        count = 0
        while count < n:
            k = np.arange(start, start + max(2 * n, 1024))
            sel = k[np.asarray(keep(k), dtype=bool)]
            out.append(sel)
            count += len(sel)
            start = int(k[-1]) + 1
        return np.concatenate(out)[:n]


def primes(rule: SubsequenceRule, j: int) -> int:
    if rule.kind != "primes":
        raise ValueError("rule is not the prime enumeration")
    return PRIMES.nth_prime(j)


def not_a_square(k: np.ndarray) -> np.ndarray:
    r = np.floor(np.sqrt(k)).astype(np.int64)
    return r * r != k


@dataclass
class MovingWindow:
    """``n -> (k_n, m_n)`` with ``k_n = max(1, floor(k_scale n**k_power))``
    and ``m_n = floor(m_scale n**m_power) + m_offset``, unless ``rule`` is given."""
    k_scale: float = 1.0
    k_power: float = 1.0
    m_scale: float = 0.0
    m_power: float = 1.0
    m_offset: int = 0
    rule: Callable[[int], tuple[int, int]] | None = field(default=None, repr=False)

    def pair(self, n: int) -> tuple[int, int]:
        if self.rule is not None:
            k, m = self.rule(n)
            return int(k), int(m)
        k = max(1, int(math.floor(self.k_scale * n ** self.k_power)))
        m = int(math.floor(self.m_scale * n ** self.m_power)) + int(self.m_offset)
        return k, m

    def validate(self, horizon: int, k_threshold: int | None = None) -> None:
        """Check ``k_n >= 1``, ``m_n >= 0`` on ``1..horizon`` and the growth heuristic
        ``min_{horizon/2 <= n <= horizon} k_n >= ceil(log2 horizon)``."""
        if k_threshold is None:
            k_threshold = math.ceil(math.log2(max(horizon, 2)))
        tail_min = None
        for n in range(1, horizon + 1):
            k, m = self.pair(n)
            if k <= 0 or m < 0:
                raise InvalidWindow(f"window at n={n} is (k={k}, m={m})")
            if 2 * n >= horizon:
                tail_min = k if tail_min is None else min(tail_min, k)
        if tail_min is not None and tail_min < k_threshold:
            raise InvalidWindow(f"k_n does not grow: min over tail is {tail_min} < {k_threshold}")


# -- estimators ---------------------------------------------------------------
@dataclass(frozen=True)
class SeminormEstimate:
    limsup_estimate: float
    sup_estimate: float
    r: float
    horizon: int
    window: float


def _check_horizon(n: int, window: float = DEFAULT_WINDOW):
    if int(n) != n or n < 10:
        raise InvalidHorizon(f"horizon must be an integer >= 10, got {n!r}")
    if not 0 < window <= 1:
        raise InvalidHorizon(f"window must lie in (0, 1], got {window!r}")


def w_r_seminorm(alpha: WeightSequence, r: float, horizon: int,
                 window: float = DEFAULT_WINDOW) -> SeminormEstimate:
    """Finite-horizon proxies for ``||alpha||_{W_r}`` (limsup) and ``|alpha|_{W_r}`` (sup)."""
    if not (r >= 1):
        raise InvalidExponent(f"r must be >= 1 or inf, got {r!r}")
    _check_horizon(horizon, window)
    a = np.abs(alpha.values(horizon))
    if r == math.inf:
        m = float(a.max())
        return SeminormEstimate(m, m, r, horizon, window)
    means = np.cumsum(a ** r) / np.arange(1, horizon + 1)
    start = math.ceil((1 - window) * horizon)
    tail = means[max(start, 1) - 1:]
    return SeminormEstimate(float(tail.max() ** (1 / r)), float(means.max() ** (1 / r)),
                            r, horizon, window)


@dataclass(frozen=True)
class HartmanEstimate:
    estimate: complex
    tail_drift: float
    horizon: int
    convention: str = "c(lam) = lim (1/n) sum_k alpha_k conj(lam)^k"


def hartman_coefficient(alpha: WeightSequence, lam: complex, horizon: int) -> HartmanEstimate:
    lam = check_unimodular(lam)
    _check_horizon(horizon)
    terms = alpha.values(horizon) * gen_rotation(lam.conjugate()).values(horizon)
    running = np.cumsum(terms) / np.arange(1, horizon + 1)
    start = math.ceil(0.9 * horizon)
    final = running[-1]
    drift = float(np.max(np.abs(running[start - 1:] - final)))
    return HartmanEstimate(complex(final), drift, horizon)


def besicovich_distance(alpha: WeightSequence, poly: WeightSequence, r: float, horizon: int,
                        window: float = DEFAULT_WINDOW) -> float:
    """W_r distance proxy between ``alpha`` and a trigonometric polynomial."""
    if poly.declared_class not in ("trig_poly", "rotation", "constant"):
        raise ClassMismatch(f"{poly.name} is a {poly.declared_class}, not a trigonometric polynomial")
    return w_r_seminorm(alpha - poly, r, horizon, window).limsup_estimate


def exp_unimodular(turns: float) -> complex:
    """``exp(2 pi i turns)``."""
    return cmath.exp(2j * math.pi * turns)
