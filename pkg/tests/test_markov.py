import itertools
import math

import numpy as np
import pytest

from lorentzmix import markov
from lorentzmix.stats import RngSpec, empirical_cell_prob


@pytest.fixture(scope="module")
def srw():
    return markov.srw()


@pytest.fixture(scope="module")
def three_state():
    return markov.random_extension(3, seed=7)


class TestConstruction:
    def test_row_sums_checked(self):
        with pytest.raises(ValueError):
            markov.MarkovExtension({(0, 0): np.array([[0.5]])})

    def test_stationarity_checked(self):
        with pytest.raises(ValueError):
            markov.MarkovExtension(
                {(0, 0): np.array([[0.7, 0.3], [0.6, 0.4]])},
                pi=np.array([0.5, 0.5]),
            )

    def test_periods(self, srw, three_state):
        assert srw.lattice_period == 2
        assert markov.lazy_srw().lattice_period == 1
        assert three_state.lattice_period == 1

    def test_periodic_rejected_by_default(self):
        q = np.array([[0.25]])
        with pytest.raises(markov.PeriodicityError):
            markov.MarkovExtension(
                {(1, 0): q, (-1, 0): q, (0, 1): q, (0, -1): q}
            )


class TestExactDistribution:
    def test_one_step(self, srw):
        d = markov.exact_distribution(srw, 1)
        assert d.q((1, 0)) == 0.25
        assert d.q((0, 0)) == 0.0

    def test_two_step_return(self, srw):
        assert abs(markov.exact_distribution(srw, 2).q((0, 0)) - 0.25) < 1e-15

    def test_matches_exhaustive_enumeration_small_n(self, three_state):
        """Brute-force path sum oracle, n <= 5, equality to 1e-14."""
        jumps = sorted(three_state.kernels)
        n = 4
        probs = {}
        states = range(3)
        for path in itertools.product(
            *[[(j, b) for j in jumps for b in states]] * n
        ):
            for a in states:
                p = three_state.pi[a]
                cur = a
                cell = (0, 0)
                for j, b in path:
                    p *= three_state.kernels[j][cur, b]
                    cur = b
                    cell = (cell[0] + j[0], cell[1] + j[1])
                if p:
                    probs[cell] = probs.get(cell, 0.0) + p
        dist = markov.exact_distribution(three_state, n)
        for cell, p in probs.items():
            assert abs(dist.q(cell) - p) < 1e-14

    def test_total_mass_one(self, three_state):
        d = markov.exact_distribution(three_state, 60)
        assert abs(d.total() - 1.0) < 1e-10

    def test_closed_form_srw(self, srw):
        d = markov.exact_distribution(srw, 200)
        for cell in [(0, 0), (4, 2), (10, 0), (7, 7)]:
            assert abs(d.q(cell) - markov.srw_q_exact(200, cell)) < 1e-14

    def test_zero_sequence_matches(self, srw):
        q = markov.exact_zero_sequence(srw, 64)
        d = markov.exact_distribution(srw, 64)
        assert q[64] == d.q((0, 0))
        assert q[0] == 1.0

    def test_memory_bound(self, srw):
        with pytest.raises(markov.MemoryBound):
            markov.exact_distribution(srw, 4000, cell_budget=1000)


class TestOperators:
    def test_q0_is_identity(self, three_state):
        eye = np.eye(3)
        assert (markov.operator_Q(three_state, 0, (0, 0)) == eye).all()
        assert (markov.operator_Q(three_state, 0, (1, 0)) == 0).all()

    def test_q_consistency_with_marginal(self, three_state):
        n = 6
        kern = markov.lattice_kernels(three_state, n)
        dist = markov.exact_distribution(three_state, n)
        for cell in [(0, 0), (1, 0), (2, -1)]:
            q_op = markov.operator_Q(three_state, n, cell)
            mass = float(three_state.pi @ q_op @ np.ones(3))
            # pi-mean of Q 1 equals the cell marginal
            assert abs(mass - dist.q(cell)) < 1e-13
            assert abs(kern.q(cell) - dist.q(cell)) < 1e-13

    def test_chapman_kolmogorov(self, three_state):
        n, m = 3, 4
        kn = markov.lattice_kernels(three_state, n)
        km = markov.lattice_kernels(three_state, m)
        knm = markov.lattice_kernels(three_state, n + m)
        for cell in [(0, 0), (1, 1), (-2, 0)]:
            acc = np.zeros((3, 3))
            for j, mat in kn.kernels.items():
                rest = (cell[0] - j[0], cell[1] - j[1])
                acc += markov.transfer(
                    three_state.pi, km.mass(rest)
                ) @ markov.transfer(three_state.pi, mat)
            expect = markov.transfer(three_state.pi, knm.mass(cell))
            assert np.abs(acc - expect).max() < 1e-13

    def test_rank_one_limit_srw(self, srw):
        # n Q_{n,0} approaches (lattice period) * Phi_B(0) * E_pi projection
        n = 500
        q = markov.exact_zero_sequence(srw, n)[n]
        assert abs(n * q - 2.0 / math.pi) <= 0.02

    def test_renewal_TR(self, srw, three_state):
        for sys in (srw, three_state):
            T, R, resid = markov.operator_TR(sys, 50)
            assert resid <= 1e-12
            assert np.abs(T[1] - R[1]).max() < 1e-15

    def test_srw_R_values(self, srw):
        _, R, _ = markov.operator_TR(srw, 8)
        assert float(R[1][0, 0]) == 0.0
        assert abs(float(srw.pi @ R[2] @ np.ones(1)) - 0.25) < 1e-15

    def test_renewal_U(self, srw, three_state):
        assert markov.operator_U_check(srw, 50) <= 1e-12
        assert markov.operator_U_check(three_state, 50) <= 1e-12

    def test_srw_U2_mass(self, srw):
        _, U = markov.taboo_kernels(srw, 2)
        mass = float(srw.pi @ U[2] @ np.ones(1))
        assert abs(mass - 0.75) < 1e-15


class TestReturnTail:
    def test_srw_values(self, srw):
        tail = markov.exact_return_tail(srw, 64)
        assert tail.tail[1] == 1.0
        assert abs(tail.tail[2] - 0.75) < 1e-14
        assert (np.diff(tail.tail) <= 1e-15).all()

    def test_scalar_renewal_consistency(self, srw):
        tail = markov.exact_return_tail(srw, 128)
        assert tail.consistency_residual <= 1e-10

    def test_multistate_matrix_consistency(self, three_state):
        tail = markov.exact_return_tail(three_state, 60)
        assert tail.consistency_residual <= 1e-12
        assert (tail.f[1:] >= -1e-15).all()

    def test_slow_decay_fixture_srw(self, srw):
        """P(phi > n) log n drifts slowly upward; regression-pinned window."""
        n_max = 30_000
        q = np.array([markov.srw_q_exact(n, (0, 0)) for n in range(n_max + 1)])
        tail = markov.exact_return_tail(srw, n_max, q=q)
        v1 = tail.tail[10_000] * math.log(10_000)
        v2 = tail.tail[30_000] * math.log(30_000)
        # recorded values: pi-ish scale, slow drift
        assert 2.5 < v1 < 3.5 and 2.5 < v2 < 3.5
        assert abs(v2 - v1) < 0.2


class TestSimulation:
    def test_step_distribution(self, srw):
        gen = RngSpec(5).generator()
        batch = srw.sample_batch(200_000, gen)
        _, jumps = srw.step_batch(batch, gen)
        for j in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
            p = ((jumps[:, 0] == j[0]) & (jumps[:, 1] == j[1])).mean()
            assert abs(p - 0.25) <= 4 * math.sqrt(0.25 * 0.75 / 200_000)

    def test_estimator_cross_validation(self, three_state):
        """Monte Carlo cell probability vs exact marginal at n in {10, 100}."""
        for n in (10, 100):
            exact = markov.exact_distribution(three_state, n).q((0, 0))
            est = empirical_cell_prob(three_state, n, (0, 0), 100_000, RngSpec(21, n))
            assert abs(est.value - exact) <= 4 * est.stderr

    def test_jump_moments_srw(self, srw):
        mean, cov = markov.jump_moments(srw)
        assert np.abs(mean).max() < 1e-15
        assert np.abs(cov - np.diag([0.5, 0.5])).max() < 1e-15
