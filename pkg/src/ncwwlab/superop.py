"""Positive Dunford-Schwartz operators on tracial algebras and their checks.

A :class:`SuperOperator` keeps a structural description (used for fast
application and for proof tags) next to its matrix ``A`` in the orthonormal
Hilbert-Schmidt coordinates of :mod:`ncwwlab.tracealg`.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    AlgebraMismatch,
    IncompatibleSubalgebra,
    NonpositiveTime,
    NotAutomorphism,
    NotContraction,
    NotCoprime,
    NotProbability,
)
from .tracealg import AlgElement, TracialAlgebra, is_positive, lp_norm, trace

#: Proof tags meaning "positive Dunford-Schwartz by construction".
DS_TAGS = frozenset({"positive", "l1_contraction", "linf_contraction"})

CHECK_TOL = 1e-10


class SuperOperator:
    """Linear map on the elements of one algebra."""

    def __init__(self, algebra: TracialAlgebra, kind: str, params: dict | None = None, *,
                 apply_fn: Callable[[AlgElement], AlgElement] | None = None,
                 hs_matrix: np.ndarray | None = None,
                 proof_tags: Iterable[str] = (), disclosures: Sequence[str] = ()):
        if apply_fn is None and hs_matrix is None:
            raise ValueError("need a structural apply or an HS matrix")
        if hs_matrix is not None:
            hs_matrix = np.array(hs_matrix, dtype=complex)
            if hs_matrix.shape != (algebra.hs_dim, algebra.hs_dim):
                raise AlgebraMismatch(f"HS matrix must be {algebra.hs_dim}x{algebra.hs_dim}")
            hs_matrix.flags.writeable = False
        self.algebra = algebra
        self.kind = kind
        self.params = dict(params or {})
        self.proof_tags = frozenset(proof_tags)
        self.disclosures = tuple(disclosures)
        self._apply_fn = apply_fn
        self._hs = hs_matrix
        self._lock = threading.Lock()

    def __repr__(self):
        return f"SuperOperator({self.kind}, hs_dim={self.algebra.hs_dim}, tags={sorted(self.proof_tags)})"

    @property
    def hs_matrix(self) -> np.ndarray:
        if self._hs is None:
            with self._lock:
                if self._hs is None:
                    eye = np.eye(self.algebra.hs_dim, dtype=complex)
                    cols = [self._apply_fn(self.algebra.unvec(eye[j])).vec()
                            for j in range(self.algebra.hs_dim)]
                    hs = np.array(cols).T
                    hs.flags.writeable = False
                    self._hs = hs
        return self._hs

    @property
    def has_fast_path(self) -> bool:
        return self._apply_fn is not None

    def apply(self, x: AlgElement) -> AlgElement:
        if x.algebra != self.algebra:
            raise AlgebraMismatch("operator and element live in different algebras")
        if self._apply_fn is not None:
            return self._apply_fn(x)
        return self.algebra.unvec(self.hs_matrix @ x.vec())

    __call__ = apply

    @property
    def is_ds_by_construction(self) -> bool:
        return DS_TAGS <= self.proof_tags


def apply(T: SuperOperator, x: AlgElement) -> AlgElement:
    return T.apply(x)


def _block_kron_conjugation(algebra: TracialAlgebra, mats: Sequence[np.ndarray]) -> np.ndarray:
    """HS matrix of ``x -> u* x u`` (row-major vec: ``vec(A X B) = (A kron B^T) vec X``)."""
    out = np.zeros((algebra.hs_dim, algebra.hs_dim), dtype=complex)
    for sl, u in zip(algebra.block_slices(), mats):
        out[sl, sl] = np.kron(u.conj().T, u.T)
    return out


# -- constructors --------------------------------------------------------------
def make_conjugation(u: AlgElement) -> SuperOperator:
    """``T_u(x) = u* x u`` for a contraction ``u``."""
    norm = lp_norm(u, math.inf)
    if norm > 1 + 1e-12:
        raise NotContraction(f"||u||_inf = {norm:.6g} > 1")
    mats = u.data
    algebra = u.algebra
    normal = all(np.linalg.norm(m @ m.conj().T - m.conj().T @ m, 2) <= 1e-12 for m in mats)
    tags = set(DS_TAGS)
    if normal:
        tags.add("l2_normal")
    if all(np.linalg.norm(m - m.conj().T, 2) <= 1e-12 for m in mats):
        tags.add("l2_self_adjoint")

    def fn(x: AlgElement) -> AlgElement:
        return AlgElement(algebra, [m.conj().T @ a @ m for m, a in zip(mats, x.data)])

    return SuperOperator(algebra, "conjugation", {"u": u}, apply_fn=fn,
                         hs_matrix=_block_kron_conjugation(algebra, mats), proof_tags=tags)


def identity_operator(algebra: TracialAlgebra) -> SuperOperator:
    T = make_conjugation(algebra.identity())
    T.proof_tags = T.proof_tags | {"l2_positive", "unital", "trace_preserving"}
    return T


def make_matrix(algebra: TracialAlgebra, data) -> SuperOperator:
    """Generic operator given by its HS matrix; no proof tags."""
    return SuperOperator(algebra, "matrix", {}, hs_matrix=np.asarray(data, dtype=complex))


def _automorphism_check(phi: SuperOperator, tol: float = CHECK_TOL) -> None:
    alg = phi.algebra
    A = phi.hs_matrix
    D = alg.hs_dim
    if np.linalg.norm(A.conj().T @ A - np.eye(D), 2) > tol:
        raise NotAutomorphism("Phi is not invertible and isometric on L_2")
    one = alg.identity()
    if lp_norm(phi.apply(one) - one, math.inf) > tol:
        raise NotAutomorphism("Phi is not unital")
    if np.linalg.norm(A.conj().T @ one.vec() - one.vec()) > tol * max(1.0, alg.total_trace):
        raise NotAutomorphism("Phi is not trace-preserving")
    rng = np.random.default_rng(20211123)
    for _ in range(3):
        x, y = alg.random_element(rng), alg.random_element(rng)
        scale = lp_norm(x, math.inf) * lp_norm(y, math.inf)
        if lp_norm(phi.apply(x @ y) - phi.apply(x) @ phi.apply(y), math.inf) > tol * scale:
            raise NotAutomorphism("Phi is not multiplicative")
        if lp_norm(phi.apply(x.adjoint()) - phi.apply(x).adjoint(), math.inf) > tol * scale:
            raise NotAutomorphism("Phi does not commute with the adjoint")


def _normalize_measure(mu) -> list[tuple[int, float]]:
    items = sorted(mu.items()) if isinstance(mu, dict) else sorted((int(n), float(w)) for n, w in mu)
    merged: dict[int, float] = {}
    for n, w in items:
        if w < 0:
            raise NotProbability(f"negative mass {w} at {n}")
        merged[int(n)] = merged.get(int(n), 0.0) + float(w)
    total = sum(merged.values())
    if not merged or abs(total - 1.0) > 1e-12:
        raise NotProbability(f"masses sum to {total}, not 1")
    return [(n, w) for n, w in sorted(merged.items()) if w > 0]


def make_convolution(phi: SuperOperator, mu) -> SuperOperator:
    """``T = sum_n mu({n}) Phi^n`` for a trace-preserving *-automorphism ``Phi``."""
    _automorphism_check(phi)
    measure = _normalize_measure(mu)
    alg = phi.algebra
    symmetric = all(abs(dict(measure).get(-n, 0.0) - w) <= 1e-15 for n, w in measure)
    tags = set(DS_TAGS) | {"unital", "trace_preserving"}
    if symmetric:
        tags |= {"l2_self_adjoint", "l2_normal"}
    params = {"phi": phi, "mu": measure}
    if phi.kind == "conjugation":
        u = phi.params["u"].data
        terms = []
        for n, w in measure:
            base = u if n >= 0 else tuple(m.conj().T for m in u)
            terms.append((w, [np.linalg.matrix_power(m, abs(n)) for m in base]))

        def fn(x: AlgElement) -> AlgElement:
            out = [np.zeros_like(a) for a in x.data]
            for w, us in terms:
                for i, (m, a) in enumerate(zip(us, x.data)):
                    out[i] = out[i] + w * (m.conj().T @ a @ m)
            return AlgElement(alg, out)

        hs = sum(w * _block_kron_conjugation(alg, us) for w, us in terms)
        return SuperOperator(alg, "convolution", params, apply_fn=fn, hs_matrix=hs, proof_tags=tags)
    A = phi.hs_matrix
    hs = np.zeros_like(A)
    for n, w in measure:
        hs = hs + w * np.linalg.matrix_power(A if n >= 0 else A.conj().T, abs(n))
    return SuperOperator(alg, "convolution", params, hs_matrix=hs, proof_tags=tags)


# -- conditional expectations --------------------------------------------------
def _expectation(alg: TracialAlgebra, spec) -> Callable[[AlgElement], AlgElement]:
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    only = spec.get("block")

    def per_block(f):
        def fn(x):
            return AlgElement(alg, [f(a, i) if only is None or i == only else a
                                    for i, a in enumerate(x.data)])
        return fn

    if kind == "diagonal":
        return per_block(lambda a, i: np.diag(np.diag(a)))
    if kind == "center":
        return per_block(lambda a, i: np.trace(a) / a.shape[0] * np.eye(a.shape[0]))
    if kind == "scalars":
        return lambda x: alg.scalar(trace(x) / alg.total_trace)
    if kind == "partition":
        sizes = [int(s) for s in spec["sizes"]]
        for i, d in enumerate(alg.dims):
            if (only is None or i == only) and sum(sizes) != d:
                raise IncompatibleSubalgebra(f"partition {sizes} does not fit block {i} of dim {d}")
        mask_cache = {}

        def part(a, i):
            d = a.shape[0]
            if d not in mask_cache:
                labels = np.repeat(np.arange(len(sizes)), sizes)
                mask_cache[d] = labels[:, None] == labels[None, :]
            return np.where(mask_cache[d], a, 0)
        return per_block(part)
    if kind == "tensor_factor":
        d1, d2 = (int(v) for v in spec["dims"])
        keep = int(spec.get("keep", 0))
        for i, d in enumerate(alg.dims):
            if (only is None or i == only) and d != d1 * d2:
                raise IncompatibleSubalgebra(f"tensor dims {d1}x{d2} do not fit block {i} of dim {d}")

        def tens(a, i):
            t = a.reshape(d1, d2, d1, d2)
            if keep == 0:
                return np.kron(np.einsum("ajbj->ab", t) / d2, np.eye(d2))
            return np.kron(np.eye(d1), np.einsum("jajb->ab", t) / d1)
        return per_block(tens)
    if kind == "state":
        omega = np.asarray(spec["weights"], dtype=float)
        if omega.shape != (len(alg.blocks),) or np.any(omega < 0):
            raise IncompatibleSubalgebra("state weights must be one nonnegative number per block")
        norm = float(sum(o * d for o, d in zip(omega, alg.dims)))
        return lambda x: alg.scalar(sum(o * np.trace(a) for o, a in zip(omega, x.data)) / norm)
    raise IncompatibleSubalgebra(f"unknown subalgebra spec {spec!r}")


def make_expectation_product(algebra: TracialAlgebra, subalgebras: Sequence) -> SuperOperator:
    """``T = E_1 o ... o E_d`` (``E_d`` applied first)."""
    if not subalgebras:
        raise IncompatibleSubalgebra("need at least one subalgebra")
    maps = [_expectation(algebra, s) for s in subalgebras]
    one = algebra.identity().vec()
    for s, E in zip(subalgebras, maps):
        single = SuperOperator(algebra, "expectation", apply_fn=E)
        if np.linalg.norm(single.hs_matrix.conj().T @ one - one) > CHECK_TOL * max(1.0, algebra.total_trace):
            raise IncompatibleSubalgebra(f"expectation {s!r} does not preserve the trace")

    def fn(x: AlgElement) -> AlgElement:
        for E in reversed(maps):
            x = E(x)
        return x

    tags = set(DS_TAGS) | {"unital", "trace_preserving"}
    if len(maps) == 1:
        tags |= {"l2_self_adjoint", "l2_positive", "l2_normal"}
    return SuperOperator(algebra, "expectation_product", {"subalgebras": list(subalgebras)},
                         apply_fn=fn, proof_tags=tags)


# -- rational noncommutative torus ------------------------------------------------
def clock_shift(q: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Clock ``u`` and shift ``v`` with ``v u = exp(2 pi i p/q) u v``."""
    omega = np.exp(2j * np.pi * p / q)
    u = np.diag(omega ** np.arange(q))
    v = np.zeros((q, q), dtype=complex)
    v[np.arange(q), (np.arange(q) + 1) % q] = 1.0
    return u, v


def heat_multiplier(q: int, t: float) -> np.ndarray:
    """``exp(-t (4 sin^2(pi m/q) + 4 sin^2(pi n/q)))`` indexed ``[m, n]``."""
    s = 4 * np.sin(np.pi * np.arange(q) / q) ** 2
    return np.exp(-t * (s[:, None] + s[None, :]))


def make_nc_torus_heat(q: int, p: int, t: float) -> SuperOperator:
    """Discrete heat semigroup at time ``t`` on the rational torus ``M_q``."""
    if q < 2 or math.gcd(p, q) != 1:
        raise NotCoprime(f"need q >= 2 and gcd(p, q) = 1, got p={p}, q={q}")
    if not t > 0:
        raise NonpositiveTime(f"t must be > 0, got {t!r}")
    alg = TracialAlgebra([(q, 1.0 / q)])
    u, v = clock_shift(q, p)
    basis = np.empty((q * q, q * q), dtype=complex)
    um = np.eye(q, dtype=complex)
    for m in range(q):
        w = um.copy()
        for n in range(q):
            basis[:, m * q + n] = alg.element([w]).vec()
            w = w @ v
        um = um @ u
    mult = heat_multiplier(q, t).ravel()
    hs = (basis * mult) @ basis.conj().T

    def fn(x: AlgElement) -> AlgElement:
        return alg.unvec(basis @ (mult * (basis.conj().T @ x.vec())))

    tags = set(DS_TAGS) | {"unital", "trace_preserving", "l2_self_adjoint", "l2_positive", "l2_normal"}
    return SuperOperator(
        alg, "nc_torus_heat", {"q": q, "p": p, "t": t, "multiplier": mult.reshape(q, q)},
        apply_fn=fn, hs_matrix=hs, proof_tags=tags,
        disclosures=("rational theta = p/q clock-shift model; continuous Laplacian "
                     "-4 pi^2 (m^2 + n^2) replaced by 4 sin^2(pi m/q) + 4 sin^2(pi n/q)",),
    )


def power(T: SuperOperator, k: int) -> SuperOperator:
    if k < 1:
        raise ValueError("power needs k >= 1")
    if k == 1:
        return T
    if T.kind == "conjugation":
        u = T.params["u"]
        uk = T.algebra.element([np.linalg.matrix_power(m, k) for m in u.data])
        out = make_conjugation(uk)
    elif T.kind == "nc_torus_heat":
        out = make_nc_torus_heat(T.params["q"], T.params["p"], k * T.params["t"])
    elif T.kind == "convolution":
        measure = {0: 1.0}
        base = dict(T.params["mu"])
        for _ in range(k):
            nxt: dict[int, float] = {}
            for a, wa in measure.items():
                for b, wb in base.items():
                    nxt[a + b] = nxt.get(a + b, 0.0) + wa * wb
            measure = nxt
        total = sum(measure.values())
        out = make_convolution(T.params["phi"], {n: w / total for n, w in measure.items()})
    else:
        keep = T.proof_tags & (DS_TAGS | {"unital", "trace_preserving", "l2_self_adjoint", "l2_normal"})
        out = SuperOperator(T.algebra, "power", {"base": T, "k": k},
                            hs_matrix=np.linalg.matrix_power(T.hs_matrix, k), proof_tags=keep)
    if "l2_self_adjoint" in T.proof_tags and k % 2 == 0:
        out.proof_tags = out.proof_tags | {"l2_positive"}
    return out


# -- Hilbert-space diagnostics ---------------------------------------------------
@dataclass(frozen=True)
class L2Properties:
    self_adjoint: float
    positive: float
    normal: float


def l2_properties(T: SuperOperator) -> L2Properties:
    A = T.hs_matrix
    Ah = A.conj().T
    herm = 0.5 * (A + Ah)
    return L2Properties(
        self_adjoint=float(np.linalg.norm(A - Ah, 2)),
        positive=float(np.linalg.eigvalsh(herm).min()),
        normal=float(np.linalg.norm(A @ Ah - Ah @ A, 2)),
    )


def field_of_values_boundary(A: np.ndarray, angles: int = 720) -> list[complex]:
    if angles < 3:
        raise ValueError("need at least 3 angles")
    pts = []
    for j in range(angles):
        rot = np.exp(2j * np.pi * j / angles)
        B = rot * A
        _, vecs = np.linalg.eigh(0.5 * (B + B.conj().T))
        xi = vecs[:, -1]
        pts.append(complex(np.vdot(xi, A @ xi)))
    return pts


def numerical_range_boundary(T: SuperOperator, angles: int = 720) -> list[complex]:
    """Support points of the field of values of the HS representation of ``T``."""
    return field_of_values_boundary(T.hs_matrix, angles)


@dataclass(frozen=True)
class StoltzResult:
    verdict: bool
    worst_point: complex | None
    margin: float


def stoltz_check(points: Sequence[complex], delta: float, vertex: complex = 1.0) -> StoltzResult:
    """Is every point in ``vertex * D_delta`` (or the vertex itself)?"""
    if not delta > 0:
        raise ValueError("delta must be > 0")
    worst, worst_margin = None, -math.inf
    for z in points:
        if z == vertex:
            continue
        margin = abs(vertex - z) - delta * (1 - abs(z))
        if margin > worst_margin:
            worst, worst_margin = z, margin
    ok = worst_margin < 1e-10
    return StoltzResult(ok, worst, float(worst_margin) if worst is not None else 0.0)


def minimal_stoltz_delta(points: Sequence[complex], vertex: complex = 1.0,
                         vertex_tol: float = 1e-9) -> float:
    """Smallest ``delta`` putting every point (other than ~vertex) in the Stoltz region."""
    best = 0.0
    for z in points:
        if abs(z - vertex) <= vertex_tol:
            continue
        gap = 1 - abs(z)
        if gap <= 1e-12:
            return math.inf
        best = max(best, abs(vertex - z) / gap)
    return best


# -- DS validation ------------------------------------------------------------------
@dataclass(frozen=True)
class Verdict:
    verdict: str               # "pass" | "fail" | "sampled"
    value: float               # witness (positivity) or bound estimate (contractions)
    tol: float
    by_tag: bool = False

    @property
    def ok(self) -> bool:
        return self.verdict in ("pass", "sampled")


@dataclass(frozen=True)
class ValidationReport:
    positivity: Verdict
    l1_contraction: Verdict
    linf_contraction: Verdict
    lp_bounds: dict
    l2_restriction: L2Properties
    numerical_range: list
    stoltz: dict
    tol: float
    samples: int
    proof_tags: frozenset = field(default_factory=frozenset)

    def failures(self) -> list[str]:
        return [name for name in ("positivity", "l1_contraction", "linf_contraction")
                if getattr(self, name).verdict == "fail"]


def _contraction_verdict(tagged: bool, bound: float, tol: float) -> Verdict:
    if bound > 1 + tol:
        return Verdict("fail", bound, tol, tagged)
    return Verdict("pass" if tagged else "sampled", bound, tol, tagged)


def validate_ds(T: SuperOperator, samples: int = 100, seed: int = 0, tol: float = CHECK_TOL,
                angles: int = 64, exponents: Sequence[float] = (1, 2, 4, math.inf)) -> ValidationReport:
    """Check positivity and L_p contractivity; proof-tagged claims are re-sampled too."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    alg = T.algebra
    rng = np.random.default_rng(seed)
    min_eig = math.inf
    ratios = {p: 0.0 for p in exponents}
    for i in range(samples):
        x = alg.random_element(rng)
        y = T.apply(x.adjoint() @ x)
        scale = max(lp_norm(x, math.inf) ** 2, 1.0)
        herm_err = lp_norm(y - y.adjoint(), math.inf) / scale
        eig = min(float(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min()) for m in y.data) / scale
        min_eig = min(min_eig, eig if herm_err <= tol else -herm_err)
        z = x if i % 2 == 0 else x.adjoint() @ x
        Tz = T.apply(z)
        for p in exponents:
            ratios[p] = max(ratios[p], lp_norm(Tz, p) / lp_norm(z, p))
    pos_tag = "positive" in T.proof_tags
    if min_eig < -tol:
        positivity = Verdict("fail", min_eig, tol, pos_tag)
    else:
        positivity = Verdict("pass" if pos_tag else "sampled", min_eig, tol, pos_tag)
    l1 = _contraction_verdict("l1_contraction" in T.proof_tags, ratios.get(1, 0.0), tol)
    linf = _contraction_verdict("linf_contraction" in T.proof_tags, ratios.get(math.inf, 0.0), tol)
    pts = numerical_range_boundary(T, angles)
    delta = minimal_stoltz_delta(pts)
    return ValidationReport(
        positivity=positivity, l1_contraction=l1, linf_contraction=linf,
        lp_bounds=dict(ratios), l2_restriction=l2_properties(T), numerical_range=pts,
        stoltz={"delta": delta, "verdict": math.isfinite(delta)},
        tol=tol, samples=samples, proof_tags=T.proof_tags,
    )


def positivity_witness(T: SuperOperator, x: AlgElement, tol: float = CHECK_TOL) -> bool:
    return is_positive(T.apply(x.adjoint() @ x), tol)
