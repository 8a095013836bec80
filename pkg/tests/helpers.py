"""Shared hypothesis strategies and fixture builders."""
import numpy as np
from hypothesis import strategies as st

from ncwwlab.tracealg import TracialAlgebra


@st.composite
def algebras(draw, max_blocks=3, max_dim=4):
    n = draw(st.integers(1, max_blocks))
    blocks = [(draw(st.integers(1, max_dim)), draw(st.floats(0.1, 3.0))) for _ in range(n)]
    return TracialAlgebra(blocks)


seeds = st.integers(0, 2**32 - 1)


def random_algebra(rng, max_blocks=3, max_dim=4):
    n = int(rng.integers(1, max_blocks + 1))
    return TracialAlgebra([(int(rng.integers(1, max_dim + 1)), float(rng.uniform(0.1, 3.0)))
                           for _ in range(n)])


def hausdorff(a, b):
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    d = np.abs(a[:, None] - b[None, :])
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def shift_automorphism(q):
    from ncwwlab.superop import clock_shift, make_conjugation
    _, v = clock_shift(q, 1)
    return make_conjugation(TracialAlgebra([(q, 1.0 / q)]).element([v]))


def symmetric_measure(rng, max_n=3):
    n = int(rng.integers(1, max_n + 1))
    w = rng.random(n + 1) + 0.05
    w = w / w.sum()
    mu = [(0, float(w[0]))]
    for k in range(1, n + 1):
        mu += [(k, float(w[k]) / 2), (-k, float(w[k]) / 2)]
    return mu


def ds_fixtures(seed=0):
    """Structured DS+ operators: (name, operator)."""
    from ncwwlab.superop import (make_conjugation, make_convolution, make_expectation_product,
                                 make_nc_torus_heat)
    rng = np.random.default_rng(seed)
    alg = TracialAlgebra([(3, 0.5), (2, 1.0)])
    alg4 = TracialAlgebra([(4, 0.25)])
    return [
        ("conjugation_contraction", make_conjugation(alg.random_contraction(rng))),
        ("conjugation_unitary", make_conjugation(alg.random_unitary(rng))),
        ("convolution_symmetric", make_convolution(shift_automorphism(4), symmetric_measure(rng))),
        ("convolution_unitary", make_convolution(make_conjugation(alg.random_unitary(rng)),
                                                 [(1, 0.3), (2, 0.7)])),
        ("expectation_diag_scalars", make_expectation_product(alg, ["diagonal", "center"])),
        ("expectation_partition", make_expectation_product(alg4, [{"kind": "partition", "sizes": [2, 2]},
                                                                  {"kind": "tensor_factor", "dims": [2, 2]}])),
        ("heat", make_nc_torus_heat(3, 1, 0.1)),
        ("heat_q5", make_nc_torus_heat(5, 2, 0.05)),
    ]


def hartman_limit_fixture(seed):
    """(T, alpha, x, K) with T a normal contraction and alpha a trig poly on a 0.1-turn grid."""
    from ncwwlab.superop import make_conjugation, make_convolution, make_nc_torus_heat
    from ncwwlab.tracealg import lp_norm
    from ncwwlab.weights import exp_unimodular, gen_trig_poly
    rng = np.random.default_rng(seed)
    kind = seed % 4
    alg = TracialAlgebra([(3, 0.5), (2, 1.0)])
    if kind == 0:
        phases = rng.integers(0, 10, 5) / 10
        T = make_conjugation(alg.diag(np.exp(2j * np.pi * phases)))
    elif kind == 1:
        T = make_nc_torus_heat(3, 1, float(rng.uniform(0.05, 0.5)))
        alg = T.algebra
    elif kind == 2:
        T = make_convolution(shift_automorphism(5), [(1, 0.5), (-1, 0.5)])
        alg = T.algebra
    else:
        phases = rng.integers(0, 10, 5) / 10
        radii = np.where(rng.random(5) < 0.5, 1.0, rng.uniform(0, 0.9, 5))
        T = make_conjugation(alg.diag(radii * np.exp(2j * np.pi * phases)))
    terms = int(rng.integers(1, 4))
    freqs = rng.choice(10, terms, replace=False) / 10
    coeffs = [(complex(rng.standard_normal(), rng.standard_normal()), exp_unimodular(f)) for f in freqs]
    alpha = gen_trig_poly(coeffs)
    x = alg.random_element(rng)
    nus = np.linalg.eigvals(T.hs_matrix)
    worst = 0.0
    for _, lam in coeffs:
        for nu in nus:
            gap = abs(1 - lam * nu)
            if gap > 1e-9:
                worst = max(worst, 4 / gap)
    K = sum(abs(r) for r, _ in coeffs) * worst * lp_norm(x, 2)
    return T, alpha, x, K
