"""Jacobs-de Leeuw-Glicksberg split of the L_2 representation and the
spectral prediction of weighted ergodic limits.

Everything works on the Hilbert-Schmidt matrix ``A`` of a
:class:`~ncwwlab.superop.SuperOperator`. The reversible part is spanned by the
eigenvectors for unimodular eigenvalues; the flight part is the complementary
invariant subspace where all eigenvalues have modulus < 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DecompositionDegenerate,
    NotL2Contraction,
    NotPowerBounded,
    UnimodularGap,
)
from .superop import SuperOperator
from .tracealg import AlgElement
from .weights import WeightSequence, check_unimodular, hartman_coefficient

DEFAULT_UNIMODULAR_TOL = 1e-8
#: Flight eigenvalues must satisfy |lambda| <= 1 - GAP_FACTOR * unimodular_tol.
GAP_FACTOR = 100.0
POWER_BOUND_TOL = 1e-8
NULL_TOL = 1e-7
NORMAL_TOL = 1e-10
ZERO_RADIUS = 1e-14


@dataclass(frozen=True)
class JdlgSplit:
    reversible_basis: list
    flight_basis: list
    proj_reversible: np.ndarray
    proj_flight: np.ndarray
    unimodular_eigenpairs: list        # [(lam, [AlgElement, ...]), ...]
    flight_spectral_radius: float
    flight_block: np.ndarray           # F* A F in the orthonormal flight basis
    normal: bool
    projection_condition: float
    unimodular_tol: float

    @property
    def eigenvalues(self) -> list[complex]:
        return [lam for lam, _ in self.unimodular_eigenpairs]

    def reversible_part(self, x: AlgElement) -> AlgElement:
        return x.algebra.unvec(self.proj_reversible @ x.vec())

    def flight_part(self, x: AlgElement) -> AlgElement:
        return x.algebra.unvec(self.proj_flight @ x.vec())


def _null_pair(A: np.ndarray, lam: complex, k: int):
    """Right and left null vectors (``k`` of each) of ``A - lam``; also the k-th smallest singular value."""
    D = A.shape[0]
    u, s, vh = np.linalg.svd(A - lam * np.eye(D))
    X = vh[D - k:].conj().T
    Y = u[:, D - k:]
    return X, Y, float(s[D - k])


def _cluster(values: np.ndarray, tol: float) -> list[list[int]]:
    groups: list[list[int]] = []
    for i in np.argsort(np.angle(values), kind="stable"):
        for g in groups:
            if abs(values[g[0]] - values[i]) <= tol:
                g.append(int(i))
                break
        else:
            groups.append([int(i)])
    return groups


def _orthonormal_columns(M: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    if M.shape[1] == 0:
        return M
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    return u[:, s > tol * max(1.0, s[0])]


def jdlg_split(T: SuperOperator, unimodular_tol: float = DEFAULT_UNIMODULAR_TOL) -> JdlgSplit:
    """Split the HS space into reversible and flight parts.

    Eigenvalues with ``|1 - |lam|| <= unimodular_tol`` are unimodular, those with
    ``|lam| <= 1 - GAP_FACTOR * unimodular_tol`` are flight, anything in between
    raises :class:`UnimodularGap`.
    """
    A = T.hs_matrix
    D = A.shape[0]
    alg = T.algebra
    ev = np.linalg.eigvals(A)
    mods = np.abs(ev)
    if mods.max() > 1 + POWER_BOUND_TOL:
        raise NotPowerBounded(f"spectral radius {mods.max():.12g} exceeds 1")
    uni = np.abs(1 - mods) <= unimodular_tol
    gap = mods[~uni & (mods > 1 - GAP_FACTOR * unimodular_tol)]
    if gap.size:
        raise UnimodularGap(f"eigenvalue modulus {gap.max():.15g} is too close to 1 to classify; "
                            "adjust unimodular_tol")
    pairs, Xs, Ys = [], [], []
    for group in _cluster(ev[uni], 1e-6):
        lam = complex(np.mean(ev[uni][group]))
        lam /= abs(lam)
        X, Y, smax = _null_pair(A, lam, len(group))
        if smax > NULL_TOL * max(1.0, float(np.linalg.norm(A, 2))):
            raise NotPowerBounded(f"unimodular eigenvalue {lam:.6g} is defective (Jordan block)")
        pairs.append((lam, [alg.unvec(X[:, j]) for j in range(X.shape[1])]))
        Xs.append(X)
        Ys.append(Y)
    if Xs:
        X = np.concatenate(Xs, axis=1)
        Y = np.concatenate(Ys, axis=1)
        G = Y.conj().T @ X
        cond = float(np.linalg.cond(G))
        if not math.isfinite(cond) or cond > 1e12:
            raise DecompositionDegenerate("left and right unimodular eigenvectors are nearly orthogonal")
        P_rev = X @ np.linalg.solve(G, Y.conj().T)
        # flight space = common kernel of the left unimodular eigenvectors (A-invariant)
        _, s, vh = np.linalg.svd(Y.conj().T)
        F = vh[X.shape[1]:].conj().T
    else:
        X = np.zeros((D, 0), dtype=complex)
        P_rev = np.zeros((D, D), dtype=complex)
        F = np.eye(D, dtype=complex)
        cond = 1.0
    B = F.conj().T @ A @ F
    rho = float(np.abs(np.linalg.eigvals(B)).max()) if B.size else 0.0
    if rho <= ZERO_RADIUS:
        rho = 0.0          # round-off of a nilpotent flight block
    if rho >= 1 - 1e-10:
        raise DecompositionDegenerate(f"flight spectral radius {rho:.12g} is not < 1")
    normal = float(np.linalg.norm(A @ A.conj().T - A.conj().T @ A, 2)) <= NORMAL_TOL
    rev_basis = _orthonormal_columns(X)
    return JdlgSplit(
        reversible_basis=[alg.unvec(rev_basis[:, j]) for j in range(rev_basis.shape[1])],
        flight_basis=[alg.unvec(F[:, j]) for j in range(F.shape[1])],
        proj_reversible=P_rev,
        proj_flight=np.eye(D) - P_rev,
        unimodular_eigenpairs=pairs,
        flight_spectral_radius=rho,
        flight_block=B,
        normal=normal,
        projection_condition=cond,
        unimodular_tol=unimodular_tol,
    )


@dataclass(frozen=True)
class EigenProjection:
    matrix: np.ndarray
    rank: int
    oblique: bool

    def __call__(self, x: AlgElement) -> AlgElement:
        return x.algebra.unvec(self.matrix @ x.vec())


def eigen_projection(T: SuperOperator, lam: complex) -> EigenProjection:
    """Projection onto ``ker(A - lam)`` along ``range(A - lam)``; orthogonal when ``A`` is normal."""
    lam = check_unimodular(lam)
    A = T.hs_matrix
    D = A.shape[0]
    u, s, vh = np.linalg.svd(A - lam * np.eye(D))
    k = int(np.sum(s <= NULL_TOL * max(1.0, float(s[0]))))
    if k == 0:
        return EigenProjection(np.zeros((D, D), dtype=complex), 0, False)
    X = vh[D - k:].conj().T
    Y = u[:, D - k:]
    normal = float(np.linalg.norm(A @ A.conj().T - A.conj().T @ A, 2)) <= NORMAL_TOL
    if normal:
        return EigenProjection(X @ X.conj().T, k, False)
    P = X @ np.linalg.pinv(Y.conj().T @ X) @ Y.conj().T
    oblique = float(np.linalg.norm(P - P.conj().T, 2)) > NORMAL_TOL
    return EigenProjection(P, k, oblique)


@dataclass(frozen=True)
class LimitTerm:
    eigenvalue: complex       # nu, an eigenvalue of T
    coefficient: complex      # c_alpha(conj(nu)) = lim (1/n) sum alpha_k nu^k
    tail_drift: float
    component: AlgElement     # E(nu) x


def spectral_limit_terms(T: SuperOperator, alpha: WeightSequence, x: AlgElement,
                         lam_set=None, n_coeff: int = 100_000) -> list[LimitTerm]:
    A = T.hs_matrix
    if float(np.linalg.norm(A, 2)) > 1 + 1e-8:
        raise NotL2Contraction("T is not a contraction on L_2")
    if lam_set is None:
        lam_set = jdlg_split(T).eigenvalues
    terms = []
    for nu in lam_set:
        nu = complex(nu) / abs(complex(nu))
        h = hartman_coefficient(alpha, nu.conjugate(), n_coeff)
        terms.append(LimitTerm(nu, h.estimate, h.tail_drift, eigen_projection(T, nu)(x)))
    return terms


def spectral_weighted_limit(T: SuperOperator, alpha: WeightSequence, x: AlgElement,
                            lam_set=None, n_coeff: int = 100_000) -> AlgElement:
    """Predicted limit of ``(1/n) sum_k alpha_k T^k x``.

    For an eigenvector with ``T x = nu x`` the average is ``((1/n) sum alpha_k nu^k) x``,
    so the prediction is ``sum_nu c_alpha(conj nu) E(nu) x`` with
    ``c_alpha(lam) = lim (1/n) sum alpha_k conj(lam)^k``.
    """
    out = x.algebra.zero()
    for term in spectral_limit_terms(T, alpha, x, lam_set, n_coeff):
        out = out + term.coefficient * term.component
    return out


def flight_similarity_constant(split: JdlgSplit) -> float:
    """``cond(V)`` for an eigenbasis ``V`` of the flight block (1 when it is normal)."""
    B = split.flight_block
    if B.size == 0:
        return 1.0
    if float(np.linalg.norm(B @ B.conj().T - B.conj().T @ B, 2)) <= NORMAL_TOL:
        return 1.0
    _, V = np.linalg.eig(B)
    c = float(np.linalg.cond(V))
    return c if math.isfinite(c) and c < 1e12 else math.inf


def flight_decay_bound(split: JdlgSplit, n: int) -> float:
    """Upper bound for ``||T^n x||_2 / ||x||_2`` over flight vectors ``x``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    B = split.flight_block
    if B.size == 0:
        return 0.0
    C = flight_similarity_constant(split)
    if math.isfinite(C):
        return C * split.flight_spectral_radius ** n
    # defective flight block: fall back to the exact power norm
    return float(np.linalg.norm(np.linalg.matrix_power(B, n), 2))
