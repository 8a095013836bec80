"""Finite-dimensional tracial algebras.

An algebra is a direct sum of full matrix blocks ``M_{d_1} + ... + M_{d_m}``
with trace ``tau(x) = sum_b w_b Tr(x_b)``, ``w_b > 0``. Elements are stored
block by block. The Hilbert-Schmidt coordinates used throughout the package
are ``vec(x) = concat_b sqrt(w_b) * x_b.ravel()``, which turns the inner
product ``tau(y* x)`` into the standard one on ``C^D``, ``D = sum_b d_b**2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AlgebraMismatch,
    EmptyBlockList,
    InvalidExponent,
    NonpositiveDim,
    NonpositiveWeight,
    NotSelfAdjoint,
)

#: Tolerance, in operator norm, for "self-adjoint" and "projection".
STRUCTURE_TOL = 1e-10


@dataclass(frozen=True)
class Block:
    dim: int
    weight: float


class TracialAlgebra:
    """Direct sum of matrix blocks with a faithful weighted trace."""

    def __init__(self, blocks: Iterable[tuple[int, float]]):
        parsed = []
        for dim, weight in blocks:
            if int(dim) != dim or dim < 1:
                raise NonpositiveDim(f"block dimension must be a positive integer, got {dim!r}")
            if not (weight > 0) or not math.isfinite(weight):
                raise NonpositiveWeight(f"block weight must be > 0, got {weight!r}")
            parsed.append(Block(int(dim), float(weight)))
        if not parsed:
            raise EmptyBlockList("an algebra needs at least one block")
        self.blocks: tuple[Block, ...] = tuple(parsed)
        self.total_trace = float(sum(b.weight * b.dim for b in self.blocks))
        self.hs_dim = sum(b.dim * b.dim for b in self.blocks)
        offsets = [0]
        for b in self.blocks:
            offsets.append(offsets[-1] + b.dim * b.dim)
        self._offsets = tuple(offsets)
        self._sqrt_w = tuple(math.sqrt(b.weight) for b in self.blocks)

    # -- identity / equality -------------------------------------------------
    def __eq__(self, other):
        return isinstance(other, TracialAlgebra) and self.blocks == other.blocks

    def __hash__(self):
        return hash(self.blocks)

    def __repr__(self):
        inner = ", ".join(f"({b.dim}, {b.weight:g})" for b in self.blocks)
        return f"TracialAlgebra([{inner}])"

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(b.dim for b in self.blocks)

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(b.weight for b in self.blocks)

    @property
    def min_weight(self) -> float:
        return min(self.weights)

    # -- constructors for elements -------------------------------------------
    def element(self, data: Sequence[np.ndarray]) -> "AlgElement":
        return AlgElement(self, data)

    def diag(self, values: Sequence[complex]) -> "AlgElement":
        """Diagonal element from a flat list of entries, filled block by block."""
        values = np.asarray(values, dtype=complex)
        if values.size != sum(self.dims):
            raise AlgebraMismatch(f"expected {sum(self.dims)} diagonal entries, got {values.size}")
        out, pos = [], 0
        for d in self.dims:
            out.append(np.diag(values[pos:pos + d]))
            pos += d
        return AlgElement(self, out)

    def identity(self) -> "AlgElement":
        return AlgElement(self, [np.eye(d, dtype=complex) for d in self.dims])

    def zero(self) -> "AlgElement":
        return AlgElement(self, [np.zeros((d, d), dtype=complex) for d in self.dims])

    def scalar(self, c: complex) -> "AlgElement":
        return AlgElement(self, [c * np.eye(d, dtype=complex) for d in self.dims])

    def random_element(self, rng: np.random.Generator) -> "AlgElement":
        return AlgElement(self, [
            rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)) for d in self.dims
        ])

    def random_hermitian(self, rng: np.random.Generator) -> "AlgElement":
        x = self.random_element(rng)
        return 0.5 * (x + x.adjoint())

    def random_positive(self, rng: np.random.Generator) -> "AlgElement":
        x = self.random_element(rng)
        return x.adjoint() @ x

    def random_unitary(self, rng: np.random.Generator) -> "AlgElement":
        out = []
        for d in self.dims:
            z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            q, r = np.linalg.qr(z)
            ph = np.diag(r) / np.abs(np.diag(r))
            out.append(q * ph)
        return AlgElement(self, out)

    def random_contraction(self, rng: np.random.Generator) -> "AlgElement":
        x = self.random_element(rng)
        return (1.0 / max(lp_norm(x, math.inf), 1e-300)) * x

    # -- Hilbert-Schmidt coordinates -----------------------------------------
    def unvec(self, v: np.ndarray) -> "AlgElement":
        v = np.asarray(v)
        if v.shape != (self.hs_dim,):
            raise AlgebraMismatch(f"vector of length {self.hs_dim} expected, got shape {v.shape}")
        out = []
        for i, b in enumerate(self.blocks):
            seg = v[self._offsets[i]:self._offsets[i + 1]]
            out.append(seg.reshape(b.dim, b.dim) / self._sqrt_w[i])
        return AlgElement(self, out)

    def unvec_many(self, vs: np.ndarray) -> list[np.ndarray]:
        """Split a stack of HS vectors (rows) into per-block matrix stacks (unscaled by weight)."""
        vs = np.atleast_2d(vs)
        return [
            vs[:, self._offsets[i]:self._offsets[i + 1]].reshape(-1, b.dim, b.dim) / self._sqrt_w[i]
            for i, b in enumerate(self.blocks)
        ]

    def hs_basis(self) -> list["AlgElement"]:
        """Orthonormal basis for ``tau(y* x)``: scaled matrix units, in vec order."""
        eye = np.eye(self.hs_dim, dtype=complex)
        return [self.unvec(eye[j]) for j in range(self.hs_dim)]

    def block_slices(self) -> list[slice]:
        return [slice(self._offsets[i], self._offsets[i + 1]) for i in range(len(self.blocks))]


class AlgElement:
    """Immutable block-diagonal element of a :class:`TracialAlgebra`."""

    __slots__ = ("algebra", "data")

    def __init__(self, algebra: TracialAlgebra, data: Sequence[np.ndarray]):
        data = tuple(np.array(m, dtype=complex) for m in data)
        if len(data) != len(algebra.blocks):
            raise AlgebraMismatch(f"{len(data)} blocks given, algebra has {len(algebra.blocks)}")
        for m, b in zip(data, algebra.blocks):
            if m.shape != (b.dim, b.dim):
                raise AlgebraMismatch(f"block shape {m.shape} does not match dim {b.dim}")
            m.flags.writeable = False
        self.algebra = algebra
        self.data = data

    def _check(self, other: "AlgElement"):
        if not isinstance(other, AlgElement):
            return NotImplemented
        if other.algebra != self.algebra:
            raise AlgebraMismatch("elements live in different algebras")
        return None

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return AlgElement(self.algebra, [a + b for a, b in zip(self.data, other.data)])

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return AlgElement(self.algebra, [a - b for a, b in zip(self.data, other.data)])

    def __neg__(self):
        return AlgElement(self.algebra, [-a for a in self.data])

    def __mul__(self, c):
        if isinstance(c, AlgElement):
            return NotImplemented
        return AlgElement(self.algebra, [c * a for a in self.data])

    __rmul__ = __mul__

    def __matmul__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return AlgElement(self.algebra, [a @ b for a, b in zip(self.data, other.data)])

    def __repr__(self):
        return f"AlgElement({self.algebra!r}, blocks={[m.tolist() for m in self.data]})"

    def adjoint(self) -> "AlgElement":
        return AlgElement(self.algebra, [a.conj().T for a in self.data])

    def modulus(self) -> "AlgElement":
        """``|x| = (x* x)^{1/2}`` via the SVD of each block."""
        out = []
        for a in self.data:
            _, s, vh = np.linalg.svd(a)
            out.append((vh.conj().T * s) @ vh)
        return AlgElement(self.algebra, out)

    def vec(self) -> np.ndarray:
        return np.concatenate([
            sw * a.ravel() for sw, a in zip(self.algebra._sqrt_w, self.data)
        ])

    def trace(self) -> complex:
        return trace(self)

    def norm(self, p: float = 2.0) -> float:
        return lp_norm(self, p)

    def allclose(self, other: "AlgElement", atol: float = 1e-10) -> bool:
        self._check(other)
        return lp_norm(self - other, math.inf) <= atol


@dataclass(frozen=True)
class SingularProfile:
    """Exact step-function form of ``t -> mu_t(x)``.

    ``steps`` holds ``(value, length)`` pairs with strictly decreasing
    positive values; ``mu_t`` is zero past the total length.
    """
    steps: tuple[tuple[float, float], ...]

    def mu(self, t: float) -> float:
        acc = 0.0
        for value, length in self.steps:
            acc += length
            if t < acc:
                return value
        return 0.0

    def integral(self) -> float:
        return float(sum(v * l for v, l in self.steps))

    @property
    def support(self) -> float:
        return float(sum(l for _, l in self.steps))


def new_algebra(blocks: Iterable[tuple[int, float]]) -> TracialAlgebra:
    return TracialAlgebra(blocks)


def _same(x: AlgElement, y: AlgElement):
    if x.algebra != y.algebra:
        raise AlgebraMismatch("elements live in different algebras")


def trace(x: AlgElement) -> complex:
    return complex(sum(b.weight * np.trace(m) for b, m in zip(x.algebra.blocks, x.data)))


def hs_inner(x: AlgElement, y: AlgElement) -> complex:
    """``tau(y* x)``; linear in ``x``, conjugate-linear in ``y``."""
    _same(x, y)
    return complex(np.vdot(y.vec(), x.vec()))


def block_singular_values(x: AlgElement) -> list[np.ndarray]:
    return [np.linalg.svd(m, compute_uv=False) for m in x.data]


def lp_norm(x: AlgElement, p: float) -> float:
    if p == math.inf:
        return float(max(s.max(initial=0.0) for s in block_singular_values(x)))
    if not p >= 1:
        raise InvalidExponent(f"p must be >= 1 or inf, got {p!r}")
    if p == 2:
        return float(np.linalg.norm(x.vec()))
    total = sum(b.weight * np.sum(s ** p) for b, s in zip(x.algebra.blocks, block_singular_values(x)))
    return float(total ** (1.0 / p))


def singular_profile(x: AlgElement) -> SingularProfile:
    pairs = []
    for b, s in zip(x.algebra.blocks, block_singular_values(x)):
        pairs.extend((float(v), b.weight) for v in s if v > 0)
    pairs.sort(key=lambda vl: -vl[0])
    steps: list[list[float]] = []
    for v, l in pairs:
        if steps and steps[-1][0] == v:
            steps[-1][1] += l
        else:
            steps.append([v, l])
    return SingularProfile(tuple((v, l) for v, l in steps))


def self_adjoint_residual(x: AlgElement) -> float:
    return lp_norm(x - x.adjoint(), math.inf)


def is_positive(x: AlgElement, tol: float = STRUCTURE_TOL) -> bool:
    if self_adjoint_residual(x) > tol:
        return False
    return all(
        np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() >= -tol for m in x.data
    )


def is_projection(e: AlgElement, tol: float = STRUCTURE_TOL) -> bool:
    return lp_norm(e @ e - e, math.inf) <= tol and self_adjoint_residual(e) <= tol


def eigh_blocks(x: AlgElement, tol: float = STRUCTURE_TOL) -> list[tuple[np.ndarray, np.ndarray]]:
    if self_adjoint_residual(x) > tol:
        raise NotSelfAdjoint("element is not self-adjoint within tolerance")
    return [np.linalg.eigh(0.5 * (m + m.conj().T)) for m in x.data]


def spectral_projection(x: AlgElement, interval: tuple[float, float]) -> AlgElement:
    """Projection onto the eigenvectors of ``x`` with eigenvalue in ``[a, b]``."""
    a, b = interval
    out = []
    for w, v in eigh_blocks(x):
        keep = (w >= a) & (w <= b)
        vk = v[:, keep]
        out.append(vk @ vk.conj().T)
    return AlgElement(x.algebra, out)
