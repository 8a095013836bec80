import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncwwlab.errors import AlgebraMismatch, BudgetTooSmall, InvalidWindow
from ncwwlab.harness import (
    OrbitSums,
    approximation_stability_probe,
    dyadic_checkpoints,
    envelope,
    mangoldt_average_stream,
    moving_average_stream,
    multi_weighted_stream,
    prime_average_stream,
    return_time_experiment,
    subsequence_average_stream,
    truncate,
    truncation_search,
    uniform_ww_scan,
    verdict,
    visit_indices,
    weighted_average_stream,
    weighted_averages,
)
from ncwwlab.primes import PRIMES
from ncwwlab.spectral import flight_decay_bound, jdlg_split
from ncwwlab.superop import identity_operator, make_conjugation, make_matrix, make_nc_torus_heat
from ncwwlab.tracealg import TracialAlgebra, lp_norm
from ncwwlab.weights import (
    MovingWindow,
    SubsequenceRule,
    exp_unimodular,
    gen_constant,
    gen_custom,
    gen_random_phase,
    gen_rotation,
    gen_trig_poly,
    w_r_seminorm,
)

from .helpers import ds_fixtures, seeds
from .oracles import sieve_oracle

M2 = TracialAlgebra([(2, 1.0)])
E12 = M2.element([np.array([[0, 1], [0, 0]], dtype=complex)])


def eigen_fixture(lam):
    """``T x = lam x`` with ``x = e_12``."""
    return make_conjugation(M2.diag([1, lam])), E12


def heat_flight():
    T = make_nc_torus_heat(3, 1, 0.1)
    s = jdlg_split(T)
    x = s.flight_part(T.algebra.random_element(np.random.default_rng(0)))
    return T, x, s


def scalar_of(avg, x=E12):
    return complex(avg.data[0][0, 1] / x.data[0][0, 1])


def generic_fixture(seed):
    rng = np.random.default_rng(seed)
    alg = TracialAlgebra([(2, 0.5), (1, 2.0)])
    A = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    T = make_matrix(alg, A / np.linalg.norm(A, 2))
    return T, alg.random_element(rng)


def direct_orbit(T, x, n):
    out, y = [], x
    for _ in range(n):
        out.append(y)
        y = T(y)
    return out


class TestFormulaAgreement:
    @given(seeds)
    @settings(max_examples=20)
    def test_weighted(self, seed):
        T, x = generic_fixture(seed)
        alpha = gen_random_phase(seed % 1000)
        counts = list(range(1, 65))
        vals = weighted_averages(T, x, [alpha], counts)[0]
        orbit = direct_orbit(T, x, 64)
        a = alpha.values(64)
        for n in counts:
            direct = x.algebra.zero()
            for k in range(n):
                direct = direct + a[k] * orbit[k]
            assert lp_norm(x.algebra.unvec(vals[n]) - (1 / n) * direct, 2) <= 1e-9

    def test_small_chunks_agree(self):
        T, x = generic_fixture(5)
        alpha = gen_rotation(exp_unimodular(0.3))
        big = OrbitSums(T, x, [alpha.window]).advance_to(300)
        small = OrbitSums(T, x, [alpha.window], chunk=7)
        small.advance_to(13)
        assert np.allclose(small.advance_to(300), big, atol=1e-12)
        assert small.applications >= 300

    def test_primes(self):
        T, x = generic_fixture(3)
        cps = [2, 4, 8, 16, 32, 64]
        _, diag = prime_average_stream(T, x, cps)
        p = [sieve_oracle.nth_prime(j) for j in range(64)]
        orbit = direct_orbit(T, x, p[-1] + 1)
        for n, avg in zip(cps, diag.averages):
            direct = x.algebra.zero()
            for j in range(n):
                direct = direct + orbit[p[j]]
            assert lp_norm(avg - (1 / n) * direct, 2) <= 1e-9

    def test_moving(self):
        T, x = generic_fixture(4)
        w = MovingWindow(k_scale=1, k_power=0.5, m_scale=1, m_power=1)
        cps = list(range(2, 65, 7))
        _, diag = moving_average_stream(T, x, w, cps, validate=False)
        orbit = direct_orbit(T, x, 200)
        for n, avg in zip(cps, diag.averages):
            k, m = w.pair(n)
            direct = x.algebra.zero()
            for j in range(k):
                direct = direct + orbit[m + j]
            assert lp_norm(avg - (1 / k) * direct, 2) <= 1e-9

    def test_incremental_streams(self):
        T, x = generic_fixture(6)
        alpha = gen_random_phase(3)
        stream, diag = weighted_average_stream(T, x, alpha, [4, 8, 16])
        for n, avg in zip([4, 8, 16], diag.averages):
            assert stream.advance_to(n).allclose(avg, atol=1e-12)
        w = MovingWindow(k_scale=2, k_power=1, m_scale=1, m_power=1)
        mstream, mdiag = moving_average_stream(T, x, w, [4, 8, 16], validate=False)
        for n, avg in zip([4, 8, 16], mdiag.averages):
            assert mstream.advance_to(n).allclose(avg, atol=1e-12)
        back = MovingWindow(rule=lambda n: (3, 10 - n))
        mstream = moving_average_stream(T, x, back, [2, 4], validate=False).stream
        mstream.advance_to(2)
        mstream.advance_to(4)
        assert mstream.restarts == 1

    def test_algebra_mismatch(self):
        with pytest.raises(AlgebraMismatch):
            weighted_average_stream(identity_operator(M2), TracialAlgebra([(3, 1.0)]).identity(),
                                    gen_constant(1), [2])


class TestWeightedExamples:
    def test_minus_one_constant(self):
        T, x = eigen_fixture(-1)
        _, diag = weighted_average_stream(T, x, gen_constant(1), [2, 4])
        assert lp_norm(diag.averages[0], 2) <= 1e-15

    def test_identity_scales_x(self, rng):
        x = M2.random_element(rng)
        alpha = gen_random_phase(9)
        _, diag = weighted_average_stream(identity_operator(M2), x, alpha, [8, 64])
        for n, avg in zip([8, 64], diag.averages):
            assert avg.allclose(complex(alpha.values(n).mean()) * x, atol=1e-12)

    @pytest.mark.parametrize("turns", [0.1, 0.25, math.sqrt(2) - 1])
    def test_matched_rotation_is_exact(self, turns):
        lam = exp_unimodular(turns)
        T = make_conjugation(M2.diag([1, np.conj(lam)]))
        _, diag = weighted_average_stream(T, E12, gen_rotation(lam), dyadic_checkpoints(1024))
        for avg in diag.averages:
            assert avg.allclose(E12, atol=1e-10)
        assert diag.limit_source == "spectral"


    @pytest.mark.xfail(strict=True, reason="with T x = lam x and alpha_k = lam^k the terms are lam^(2k) x; "
                       "the exact identity needs T x = conj(lam) x (tested above)")
    def test_matched_rotation_literal_example(self):
        lam = exp_unimodular(0.1)
        T, x = eigen_fixture(lam)
        _, diag = weighted_average_stream(T, x, gen_rotation(lam), [16])
        assert diag.averages[-1].allclose(x, atol=1e-10)


class TestEigenvectorExactness:
    @pytest.mark.parametrize("turns", [0.5, 0.2, 0.37])
    def test_all_engines(self, turns):
        lam = exp_unimodular(turns)
        T, x = eigen_fixture(lam)
        cps = [16, 128, 1024]
        alpha = gen_random_phase(1)
        a = alpha.values(1024)
        pw = lam ** np.arange(5000)
        _, d = weighted_average_stream(T, x, alpha, cps)
        for n, avg in zip(cps, d.averages):
            assert abs(scalar_of(avg) - np.mean(a[:n] * pw[:n])) <= 1e-10
        _, d = mangoldt_average_stream(T, x, cps)
        lamb = PRIMES.mangoldt(0, 1024)
        for n, avg in zip(cps, d.averages):
            assert abs(scalar_of(avg) - np.mean(lamb[:n] * pw[:n])) <= 1e-10
        _, d = prime_average_stream(T, x, cps)
        p = np.array([sieve_oracle.nth_prime(j) for j in range(1024)])
        for n, avg in zip(cps, d.averages):
            assert abs(scalar_of(avg) - np.mean(lam ** p[:n])) <= 1e-10
        w = MovingWindow(k_scale=1, k_power=0.5, m_scale=1, m_power=1)
        _, d = moving_average_stream(T, x, w, cps)
        for n, avg in zip(cps, d.averages):
            k, m = w.pair(n)
            assert abs(scalar_of(avg) - np.mean(pw[m:m + k])) <= 1e-10


class TestPrimeAndMangoldt:
    def test_minus_one_prime_average(self):
        T, x = eigen_fixture(-1)
        _, d = prime_average_stream(T, x, [100, 10_000])
        for n, avg in zip([100, 10_000], d.averages):
            assert abs(scalar_of(avg) - (2 - n) / n) <= 1e-12
        assert scalar_of(d.averages[0]) == pytest.approx(-0.98, abs=1e-12)

    def test_identity_prime_average(self, rng):
        x = M2.random_element(rng)
        _, d = prime_average_stream(identity_operator(M2), x, [10, 100])
        assert all(avg.allclose(x) for avg in d.averages)

    def test_heat_flight_prime_bound(self):
        T, x, s = heat_flight()
        rho = s.flight_spectral_radius
        cps = [16, 64, 256]
        _, d = prime_average_stream(T, x, cps)
        for n, avg in zip(cps, d.averages):
            assert lp_norm(avg, 2) <= rho ** 2 / (1 - rho) / n * lp_norm(x, 2) + 1e-12

    def test_mangoldt_zero(self):
        _, d = mangoldt_average_stream(identity_operator(M2), M2.zero(), [4, 8])
        assert all(lp_norm(a, 2) == 0 for a in d.averages)

    def test_mangoldt_alternating(self):
        T, x = eigen_fixture(-1)
        n = 1_000_000
        _, d = mangoldt_average_stream(T, x, [n])
        s = scalar_of(d.averages[0])
        assert abs(s.imag) <= 1e-12
        psi = sum(sieve_oracle.mangoldt_table(n)) / n
        assert abs(s.real + psi) <= 2 * math.log(2) * math.log2(n) / n


class TestMoving:
    def test_cesaro_window(self, rng):
        T, x = generic_fixture(8)
        cps = dyadic_checkpoints(1024)
        _, md = moving_average_stream(T, x, MovingWindow(k_scale=1, k_power=1), cps)
        _, wd = weighted_average_stream(T, x, gen_constant(1), cps)
        for a, b in zip(md.averages, wd.averages):
            assert lp_norm(a - b, 2) <= 1e-10

    def test_identity(self, rng):
        x = M2.random_element(rng)
        _, d = moving_average_stream(identity_operator(M2), x, MovingWindow(2, 0.7, 3, 1.2), [8, 64])
        assert all(a.allclose(x) for a in d.averages)

    def test_flight_bound(self):
        T, x, s = heat_flight()
        rho = s.flight_spectral_radius
        w = MovingWindow(k_scale=2, k_power=0.5, m_scale=1, m_power=1)
        cps = [4, 16, 64]
        _, d = moving_average_stream(T, x, w, cps)
        for n, avg in zip(cps, d.averages):
            k, m = w.pair(n)
            bound = sum(flight_decay_bound(s, m + j) for j in range(k)) / k
            assert lp_norm(avg, 2) <= bound * lp_norm(x, 2) + 1e-12

    def test_invalid_window(self):
        with pytest.raises(InvalidWindow):
            moving_average_stream(identity_operator(M2), E12, MovingWindow(m_offset=-1), [4])
        with pytest.raises(InvalidWindow):
            moving_average_stream(identity_operator(M2), E12, MovingWindow(k_scale=1, k_power=0), [64])
        moving_average_stream(identity_operator(M2), E12, MovingWindow(k_scale=1, k_power=0), [64],
                              k_threshold=1)


class TestTruncation:
    def test_all_zero(self):
        res = truncation_search([M2.zero(), M2.zero()], 0.5)
        assert res.e.allclose(M2.identity()) and res.achieved_sup == 0

    def test_cut_big_eigenvalue(self):
        for alg in (TracialAlgebra([(2, 1.0)]), TracialAlgebra([(1, 1.0), (1, 1.0)])):
            y = alg.diag([100.0, 0.01])
            res = truncation_search([y], 1.0)
            assert res.e.allclose(alg.diag([0, 1]))
            assert res.achieved_sup == pytest.approx(0.01)
            assert res.tau_perp == 1.0

    def test_budget_precondition(self):
        with pytest.raises(ValueError):
            truncation_search([M2.identity()], 2.0)
        with pytest.raises(ValueError):
            truncation_search([], 0.5)
        with pytest.raises(ValueError):
            truncation_search([M2.identity()], 0.5, mode="left")

    def test_budget_too_small(self):
        y = M2.diag([1.0, 0.5])
        with pytest.raises(BudgetTooSmall):
            truncation_search([y], 0.5, allow_trivial=False)
        assert truncation_search([y], 0.5).trivial

    def test_right_mode(self):
        y = M2.element([np.array([[0, 5.0], [0, 0]])])
        res = truncation_search([y], 1.0, mode="right")
        assert lp_norm(truncate(y, res.e, "right"), math.inf) == pytest.approx(res.achieved_sup)

    @given(seeds, st.integers(1, 6), st.floats(0.05, 0.95), st.sampled_from(["bilateral", "right"]))
    def test_soundness(self, seed, count, frac, mode):
        rng = np.random.default_rng(seed)
        alg = TracialAlgebra([(3, 0.4), (2, 1.0), (1, 0.2)])
        vals = [alg.random_element(rng) * float(rng.exponential()) for _ in range(count)]
        eps = frac * alg.total_trace
        res = truncation_search(vals, eps, mode)
        assert res.tau_perp <= eps + 1e-12
        direct = max(lp_norm(truncate(v, res.e, mode), math.inf) for v in vals)
        assert direct <= res.achieved_sup + 1e-12
        assert res.e.allclose(res.e @ res.e) and res.e.allclose(res.e.adjoint())

    def test_envelope_positive(self, rng):
        vals = [M2.random_element(rng) for _ in range(3)]
        s = envelope(vals)
        assert np.linalg.eigvalsh(s.data[0]).min() >= -1e-12


class TestDiagnostics:
    def test_residuals_nonnegative_and_verdicts(self):
        T, x, _ = heat_flight()
        d = multi_weighted_stream(T, x, [gen_constant(1)], dyadic_checkpoints(4096))[0]
        assert all(v >= 0 for v in d.residual_cauchy_2 + d.residual_to_limit_2 + d.trunc_residual_inf)
        assert verdict(d) == "decayed"
        assert d.checkpoints == sorted(set(d.checkpoints))

    def test_plateau_and_divergence(self):
        T, x = eigen_fixture(-1)
        d = multi_weighted_stream(T, x, [gen_random_phase(2)], dyadic_checkpoints(64), limit="none")[0]
        assert math.isnan(d.residual_to_limit_2[0])
        # a growing weight never settles
        grow = gen_custom(lambda k: np.asarray(k, dtype=float))
        d = multi_weighted_stream(identity_operator(M2), E12, [grow], dyadic_checkpoints(1024), limit="none")[0]
        assert verdict(d) == "diverged"

    def test_cesaro_nullity(self):
        rho = 0.8
        for n in (10, 100, 1000):
            mean = sum(rho ** k for k in range(n)) / n
            assert mean <= 1 / ((1 - rho) * n)

    @pytest.mark.parametrize("name,T", ds_fixtures(), ids=[n for n, _ in ds_fixtures()])
    def test_limit_membership(self, name, T):
        rng = np.random.default_rng(11)
        x = T.algebra.random_element(rng)
        alphas = [gen_trig_poly([(0.7, exp_unimodular(0.2)), (0.4j, 1.0)]), gen_rotation(exp_unimodular(0.3)),
                  gen_constant(1)]
        for alpha, d in zip(alphas, multi_weighted_stream(T, x, alphas, [64, 128], limit="spectral")):
            w1 = w_r_seminorm(alpha, 1, 10_000).sup_estimate
            for p in (1, 2, math.inf):
                assert lp_norm(d.estimated_limit, p) <= w1 * lp_norm(x, p) + 1e-8


class TestUniformScan:
    def test_zero(self):
        T, _, _ = heat_flight()
        res = uniform_ww_scan(T, T.algebra.zero(), 2, 1.0, 4, seed=0, checkpoints=[8, 64])
        assert max(res.sup_trunc_inf + res.sup_inf + res.sup_2) == 0

    def test_constant_weight_is_scaled_plain(self):
        T, x, _ = heat_flight()
        cps = [8, 64, 512]
        res = uniform_ww_scan(T, x, 2, 0.5, 1, seed=0, checkpoints=cps, family=[gen_constant(1)])
        plain = multi_weighted_stream(T, x, [gen_constant(1)], cps)[0]
        for a, b in zip(res.sup_2, plain.residual_to_limit_2):
            assert a == pytest.approx(0.5 * b, abs=1e-10)

    def test_flight_rotations_decay(self):
        T, x, s = heat_flight()
        cps = [16, 128, 1024]
        fam = [gen_rotation(exp_unimodular(t)) for t in (0.0, 0.1, 0.37, 0.5)]
        res = uniform_ww_scan(T, x, 2, 1.0, len(fam), seed=0, checkpoints=cps, family=fam)
        orbit_norms = [lp_norm(y, math.inf) for y in direct_orbit(T, x, 1024)]
        for n, v in zip(cps, res.sup_inf):
            assert v <= sum(orbit_norms[:n]) / n + 1e-12
        assert res.sup_trunc_inf[-1] < res.sup_trunc_inf[0]

    def test_rejects_bad_params(self):
        T, x, _ = heat_flight()
        with pytest.raises(ValueError):
            uniform_ww_scan(T, x, 2, 0, 2, 0, [4])
        with pytest.raises(ValueError):
            uniform_ww_scan(T, x, 1, 1, 2, 0, [4])


class TestReturnTimes:
    def test_full_interval_is_plain(self, rng):
        T, x = generic_fixture(1)
        res = return_time_experiment(0.3819660112501051, [0.2], (0, 1), T, x, [8, 64])
        plain = multi_weighted_stream(T, x, [gen_constant(1)], [8, 64])[0]
        for a, b in zip(res[0].weighted.averages, plain.averages):
            assert a.allclose(b, atol=1e-12)
        assert res[0].visit_frequency == 1.0

    def test_identity_half_interval(self, rng):
        x = M2.random_element(rng)
        theta = math.sqrt(2) - 1
        n = 100_000
        res = return_time_experiment(theta, [0.0], (0, 0.5), identity_operator(M2), x, [n])[0]
        freq = sieve_oracle.visit_frequency(theta, 0.0, 0.0, 0.5, n)
        assert res.weighted.averages[-1].allclose(freq * x, atol=1e-12)
        assert res.visits.averages[-1].allclose(x)

    def test_visit_indices(self):
        idx = visit_indices(0.3, 0.0, (0, 0.5), 5)
        assert list(idx) == [k for k in range(40) if (k * 0.3) % 1 < 0.5][:5]

    def test_flight_samples_decay(self):
        T, x, _ = heat_flight()
        res = return_time_experiment(math.sqrt(2) - 1, 3, (0.1, 0.6), T, x, dyadic_checkpoints(4096), seed=4)
        assert len(res) == 3
        for r in res:
            assert r.weighted.trunc_residual_inf[-1] <= 1e-2
            assert r.visits.trunc_residual_inf[-1] <= 1e-2

    def test_rejects_bad_interval(self):
        with pytest.raises(ValueError):
            return_time_experiment(0.3, [0.0], (0.5, 0.5), identity_operator(M2), E12, [4])


class TestStabilityProbe:
    def test_no_perturbation(self, rng):
        T, x = generic_fixture(2)
        rep = approximation_stability_probe(T, x, [x, x], [gen_constant(1)], [8, 16])
        assert rep.residuals == [0, 0] and rep.constant == 0

    def test_linear_scaling(self, rng):
        T, x = generic_fixture(3)
        y = x.algebra.random_element(rng)
        xs = [x + s * y for s in (1e-1, 1e-2, 1e-3)]
        fam = [gen_constant(1), gen_random_phase(5), gen_rotation(exp_unimodular(0.2))]
        rep = approximation_stability_probe(T, x, xs, fam, [8, 64, 256])
        for (a, b), (da, db) in zip(zip(rep.residuals, rep.residuals[1:]), zip(rep.distances, rep.distances[1:])):
            assert 0.5 <= (a / b) / (da / db) <= 2
        assert math.isfinite(rep.constant) and rep.constant > 0
        for s, r in zip(rep.distances, rep.residuals):
            assert r <= rep.constant * max(rep.seminorms) * s * (1 + 1e-12)

    def test_empty_family(self):
        with pytest.raises(ValueError):
            approximation_stability_probe(identity_operator(M2), E12, [E12], [], [4])
