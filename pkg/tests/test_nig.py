import unittest
import sys
import os

# Add the src directory to the path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'src')))

import numpy as np

from estimation import nig
from estimation.errors import (
    DegenerateUpdateError,
    InvalidObservationError,
    InvalidParameterError,
    InvalidStatisticsError,
    SingularStatisticsError,
)
from estimation.nig import NigCForm, NigVForm, Observation


def random_spd(rng, n, low=0.5, high=2.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = q @ np.diag(rng.uniform(low, high, size=n)) @ q.T
    return (A + A.T) / 2


def random_cform(rng, n):
    return NigCForm(
        random_spd(rng, n),
        rng.standard_normal(n),
        rng.uniform(0.0, 1.0),
        rng.uniform(1.0, 10.0),
    )


def vform_lambda(V):
    V_ypsi, V_psi = V[1:, 0], V[1:, 1:]
    return V[0, 0] - V_ypsi @ np.linalg.solve(V_psi, V_ypsi)


def printed_lambda_increment(cf, obs, c):
    """Residual increment exactly as printed in the proposition statement."""
    denominator = 1 + c * obs.psi @ cf.C @ obs.psi
    return (c * obs.y + c * obs.psi @ cf.theta_hat) ** 2 / denominator


def proof_lambda_increment(cf, obs, c):
    """Residual increment as printed on the last line of its derivation."""
    denominator = 1 + c * obs.psi @ cf.C @ obs.psi
    return (c * obs.y - c * obs.psi @ cf.theta_hat) ** 2 / denominator


class TestVForm(unittest.TestCase):
    def test_init(self):
        s = nig.nig_init(1, eps=1e-3, nu0=1)
        np.testing.assert_array_equal(s.V, np.diag([1e-3, 1e-3]))
        self.assertEqual(s.nu, 1.0)
        s = nig.nig_init(2, eps=1.0, nu0=2)
        np.testing.assert_array_equal(s.V, np.eye(3))
        self.assertEqual(s.nu, 2.0)

    def test_init_default_nu0(self):
        self.assertEqual(nig.nig_init(3).nu, 5.0)

    def test_init_rejects_bad_parameters(self):
        with self.assertRaises(InvalidParameterError):
            nig.nig_init(1, eps=0.0)
        with self.assertRaises(InvalidParameterError):
            nig.nig_init(0)

    def test_asymmetric_v_rejected(self):
        with self.assertRaises(InvalidStatisticsError):
            NigVForm([[1.0, 2.0], [0.0, 1.0]], 1.0)

    def test_bayes_update_sequence(self):
        s = NigVForm(np.zeros((2, 2)), 0.0)
        s = nig.bayes_update(s, Observation(1.0, [1.0]))
        np.testing.assert_array_equal(s.V, [[1, 1], [1, 1]])
        self.assertEqual(s.nu, 1.0)
        s = nig.bayes_update(s, Observation(2.0, [1.0]))
        np.testing.assert_array_equal(s.V, [[5, 3], [3, 2]])
        self.assertEqual(s.nu, 2.0)

    def test_bayes_update_zero_observation(self):
        s = nig.nig_init(2)
        updated = nig.bayes_update(s, Observation(0.0, [0.0, 0.0]))
        np.testing.assert_array_equal(updated.V, s.V)
        self.assertEqual(updated.nu, s.nu + 1)

    def test_bayes_update_dimension_mismatch(self):
        with self.assertRaises(InvalidObservationError):
            nig.bayes_update(nig.nig_init(2), Observation(1.0, [1.0]))

    def test_point_estimate(self):
        s = NigVForm([[5.0, 3.0], [3.0, 2.0]], 2.0)
        np.testing.assert_allclose(nig.point_estimate_theta(s), [1.5])
        np.testing.assert_array_equal(nig.point_estimate_theta(nig.nig_init(3)), np.zeros(3))

    def test_point_estimate_noiseless_data(self):
        rng = np.random.default_rng(11)
        theta = np.array([0.3, -0.7])
        s = nig.nig_init(2, eps=1e-9)
        psis = rng.standard_normal((100, 2))
        for psi in psis:
            s = nig.bayes_update(s, Observation(psi @ theta, psi))
        oracle = np.linalg.solve(psis.T @ psis, psis.T @ (psis @ theta))
        np.testing.assert_allclose(nig.point_estimate_theta(s), oracle, atol=1e-6)
        np.testing.assert_allclose(nig.point_estimate_theta(s), theta, atol=1e-6)

    def test_point_estimate_singular(self):
        s = NigVForm([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 1.0, 1.0]], 1.0)
        with self.assertRaises(SingularStatisticsError) as ctx:
            nig.point_estimate_theta(s)
        self.assertGreater(ctx.exception.condition, 1e12)

    def test_noise_variance(self):
        self.assertAlmostEqual(
            nig.estimate_noise_variance(NigVForm([[5.0, 3.0], [3.0, 2.0]], 2.0)), 0.25
        )
        self.assertAlmostEqual(nig.estimate_noise_variance(NigVForm(np.diag([4.0, 1.0]), 4.0)), 1.0)

    def test_noise_variance_vanishes_on_exact_fit(self):
        rng = np.random.default_rng(3)
        theta = np.array([1.0, -2.0])
        for eps in (1e-2, 1e-4, 1e-6):
            s = nig.nig_init(2, eps=eps)
            for psi in rng.standard_normal((30, 2)):
                s = nig.bayes_update(s, Observation(psi @ theta, psi))
            self.assertLess(nig.estimate_noise_variance(s), 10 * eps)

    def test_noise_variance_needs_positive_nu(self):
        with self.assertRaises(InvalidStatisticsError):
            nig.estimate_noise_variance(NigVForm(np.eye(2), 0.0))


class TestReparameterization(unittest.TestCase):
    def test_reparameterize_small(self):
        cf = nig.reparameterize(NigVForm([[5.0, 3.0], [3.0, 2.0]], 2.0))
        np.testing.assert_allclose(cf.C, [[0.5]])
        np.testing.assert_allclose(cf.theta_hat, [1.5])
        self.assertAlmostEqual(cf.lambda_, 0.5)
        self.assertEqual(cf.nu, 2.0)

    def test_reparameterize_identity(self):
        cf = nig.reparameterize(NigVForm(np.eye(3), 1.0))
        np.testing.assert_array_equal(cf.C, np.eye(2))
        np.testing.assert_array_equal(cf.theta_hat, np.zeros(2))
        self.assertEqual(cf.lambda_, 1.0)

    def test_compose_small(self):
        s = nig.compose(NigCForm([[0.5]], [1.5], 0.5, 2.0))
        np.testing.assert_allclose(s.V, [[5.0, 3.0], [3.0, 2.0]])
        np.testing.assert_array_equal(nig.compose(NigCForm(np.eye(2), np.zeros(2), 1.0, 1.0)).V, np.eye(3))

    def test_compose_rejects_indefinite(self):
        with self.assertRaises(InvalidStatisticsError):
            nig.compose(NigCForm([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0], 1.0, 1.0))

    def test_round_trips(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            V = random_spd(rng, 4, 0.5, 3.0)
            s = NigVForm(V, 3.0)
            np.testing.assert_allclose(nig.compose(nig.reparameterize(s)).V, s.V, rtol=1e-10, atol=1e-12)

            cf = random_cform(rng, 3)
            back = nig.reparameterize(nig.compose(cf))
            np.testing.assert_allclose(back.C, cf.C, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(back.theta_hat, cf.theta_hat, rtol=1e-10, atol=1e-12)
            self.assertAlmostEqual(back.lambda_, cf.lambda_, delta=1e-10 * max(1.0, cf.lambda_))
            self.assertEqual(back.nu, cf.nu)


class TestShermanMorrison(unittest.TestCase):
    def test_unit_vector(self):
        result = nig.sherman_morrison(np.eye(2), [1.0, 0.0], [1.0, 0.0])
        np.testing.assert_allclose(result, np.diag([0.5, 1.0]))

    def test_zero_vector(self):
        Ainv = np.array([[2.0, 0.5], [0.5, 1.0]])
        np.testing.assert_array_equal(nig.sherman_morrison(Ainv, [0.0, 0.0], [0.0, 0.0]), Ainv)

    def test_against_direct_inverse(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            A = random_spd(rng, 4)
            u = rng.standard_normal(4)
            result = nig.sherman_morrison(np.linalg.inv(A), u, u)
            np.testing.assert_allclose(result @ (A + np.outer(u, u)), np.eye(4), atol=1e-10)

    def test_degenerate(self):
        with self.assertRaises(DegenerateUpdateError):
            nig.sherman_morrison(np.eye(1), [1.0], [-1.0])


class TestCFormUpdate(unittest.TestCase):
    def test_single_update_matches_vform(self):
        cf = NigCForm([[1.0]], [0.0], 0.0, 0.0)
        updated = nig.cform_rank_one_update(cf, Observation(1.0, [1.0]), 1.0)
        np.testing.assert_allclose(updated.C, [[0.5]])
        np.testing.assert_allclose(updated.theta_hat, [0.5])
        self.assertAlmostEqual(updated.lambda_, 0.5)
        self.assertEqual(updated.nu, 1.0)

        oracle = nig.reparameterize(nig.bayes_update(NigVForm([[0.0, 0.0], [0.0, 1.0]], 0.0),
                                                     Observation(1.0, [1.0])))
        np.testing.assert_allclose(oracle.C, updated.C)
        np.testing.assert_allclose(oracle.theta_hat, updated.theta_hat)
        self.assertAlmostEqual(oracle.lambda_, updated.lambda_)

    def test_zero_weight_is_noop(self):
        cf = random_cform(np.random.default_rng(4), 3)
        updated = nig.cform_rank_one_update(cf, Observation(2.0, [1.0, -1.0, 0.5]), 0.0)
        np.testing.assert_array_equal(updated.C, cf.C)
        np.testing.assert_array_equal(updated.theta_hat, cf.theta_hat)
        self.assertEqual(updated.lambda_, cf.lambda_)
        self.assertEqual(updated.nu, cf.nu)

    def test_zero_regressor(self):
        cf = random_cform(np.random.default_rng(5), 2)
        updated = nig.cform_rank_one_update(cf, Observation(3.0, [0.0, 0.0]), 0.4)
        np.testing.assert_array_equal(updated.C, cf.C)
        np.testing.assert_array_equal(updated.theta_hat, cf.theta_hat)
        self.assertAlmostEqual(updated.lambda_, cf.lambda_ + 0.4 * 9.0)
        self.assertAlmostEqual(updated.nu, cf.nu + 0.4)

    def test_dimension_mismatch(self):
        with self.assertRaises(InvalidObservationError):
            nig.cform_rank_one_update(random_cform(np.random.default_rng(0), 2),
                                      Observation(1.0, [1.0]), 0.5)

    def test_lambda_increment_oracle(self):
        rng = np.random.default_rng(29)
        printed_mismatches = proof_mismatches = 0
        for _ in range(1000):
            n = int(rng.integers(1, 5))
            cf = random_cform(rng, n)
            obs = Observation(rng.standard_normal(), rng.standard_normal(n))
            c = rng.uniform(0.05, 0.95)

            V = nig.compose(cf).V
            z = obs.extended
            oracle = vform_lambda(V + c * np.outer(z, z)) - vform_lambda(V)
            increment = nig.cform_rank_one_update(cf, obs, c).lambda_ - cf.lambda_
            np.testing.assert_allclose(increment, oracle, rtol=1e-10, atol=1e-12)

            scale = max(abs(oracle), 1e-12)
            printed_mismatches += abs(printed_lambda_increment(cf, obs, c) - oracle) > 1e-8 * scale
            proof_mismatches += abs(proof_lambda_increment(cf, obs, c) - oracle) > 1e-8 * scale

        print(f"\nresidual increment as printed disagrees in {printed_mismatches}/1000 cases; "
              f"derivation variant disagrees in {proof_mismatches}/1000 cases")
        self.assertGreater(printed_mismatches, 900)
        self.assertGreater(proof_mismatches, 900)

    def test_form_equivalence_and_invariants(self):
        rng = np.random.default_rng(31)
        for _ in range(30):
            n = int(rng.integers(1, 5))
            s = nig.nig_init(n, eps=rng.uniform(0.1, 2.0))
            cf = nig.reparameterize(s)
            for _ in range(40):
                obs = Observation(rng.standard_normal(), rng.standard_normal(n))
                c = rng.uniform(0.0, 1.0)
                previous_lambda = cf.lambda_
                s = nig.weighted_update(s, obs, c)
                cf = nig.cform_rank_one_update(cf, obs, c)
                self.assertGreaterEqual(cf.lambda_, previous_lambda)
                np.testing.assert_array_equal(cf.C, cf.C.T)
                self.assertGreater(np.linalg.eigvalsh(cf.C)[0], 0.0)
            oracle = nig.reparameterize(s)
            np.testing.assert_allclose(cf.C, oracle.C, rtol=1e-8, atol=1e-12)
            np.testing.assert_allclose(cf.theta_hat, oracle.theta_hat, rtol=1e-8, atol=1e-10)
            self.assertAlmostEqual(cf.lambda_, oracle.lambda_, delta=1e-8 * max(1.0, oracle.lambda_))
            self.assertAlmostEqual(cf.nu, oracle.nu, delta=1e-10)

    def test_update_order_invariance(self):
        rng = np.random.default_rng(37)
        n = 3
        prior = nig.reparameterize(nig.nig_init(n, eps=0.5))
        batch = [(Observation(rng.standard_normal(), rng.standard_normal(n)), rng.uniform())
                 for _ in range(6)]
        results = []
        for order in (range(6), reversed(range(6)), rng.permutation(6)):
            cf = prior
            for i in order:
                cf = nig.cform_rank_one_update(cf, *batch[i])
            results.append(cf)
        for other in results[1:]:
            np.testing.assert_allclose(other.theta_hat, results[0].theta_hat, rtol=1e-8, atol=1e-12)
            np.testing.assert_allclose(other.C, results[0].C, rtol=1e-8, atol=1e-14)
            self.assertAlmostEqual(other.lambda_, results[0].lambda_, delta=1e-8 * results[0].lambda_)


class TestAuxiliary(unittest.TestCase):
    def test_parameter_covariance(self):
        cf = NigCForm(np.diag([2.0, 4.0]), [0.0, 0.0], 3.0, 6.0)
        np.testing.assert_allclose(nig.parameter_covariance(cf), np.diag([1.0, 2.0]))

    def test_statistics_text(self):
        s = nig.bayes_update(nig.nig_init(2), Observation(0.1, [1.0 / 3.0, -2.0]))
        text = nig.dump_statistics(s)
        self.assertEqual(text.splitlines()[0], "2 5")
        loaded = nig.load_statistics(text)
        np.testing.assert_array_equal(loaded.V, s.V)
        self.assertEqual(loaded.nu, s.nu)

    def test_statistics_text_malformed(self):
        with self.assertRaises(InvalidStatisticsError):
            nig.load_statistics("2 5\n1 0\n0 1\n")
        with self.assertRaises(InvalidStatisticsError):
            nig.load_statistics("")


class TestStackedOperations(unittest.TestCase):
    def test_stack_matches_single_matrices(self):
        rng = np.random.default_rng(41)
        V = np.stack([random_spd(rng, 4, 0.5, 3.0) for _ in range(6)])
        theta_hat, lambda_ = nig.estimate_stack(V)
        for i in range(6):
            s = NigVForm(V[i], 2.0)
            np.testing.assert_array_equal(theta_hat[i], nig.point_estimate_theta(s))
            self.assertEqual(lambda_[i], nig.residual_lambda(s))

    def test_singular_entry_is_located(self):
        V = np.stack([np.eye(3), np.eye(3), np.zeros((3, 3))])
        with self.assertRaises(SingularStatisticsError) as ctx:
            nig.estimate_stack(V)
        self.assertEqual(ctx.exception.index, 2)
        self.assertEqual(ctx.exception.condition, np.inf)
        with self.assertRaises(SingularStatisticsError) as ctx:
            nig.point_estimate_theta(NigVForm(np.zeros((3, 3)), 1.0))
        self.assertIsNone(ctx.exception.index)

    def test_point_estimates(self):
        s = NigVForm([[5.0, 3.0], [3.0, 2.0]], 2.0)
        theta_hat, sigma2_hat = nig.point_estimates(s)
        np.testing.assert_allclose(theta_hat, [1.5])
        self.assertAlmostEqual(sigma2_hat, 0.25)
        with self.assertRaises(InvalidStatisticsError):
            nig.point_estimates(NigVForm(np.eye(2), 0.0))

    def test_batch_update_matches_sequential(self):
        rng = np.random.default_rng(43)
        rows = rng.standard_normal((7, 3))
        s = nig.nig_init(2)
        sequential = s
        for z in rows:
            sequential = nig.bayes_update(sequential, Observation(z[0], z[1:]))
        batched = nig.batch_update(s, rows)
        np.testing.assert_allclose(batched.V, sequential.V, rtol=1e-13)
        np.testing.assert_array_equal(batched.V, batched.V.T)
        self.assertEqual(batched.nu, s.nu + 7)
        single = nig.batch_update(s, rows[:1])
        np.testing.assert_array_equal(single.V, nig.bayes_update(s, Observation(rows[0, 0], rows[0, 1:])).V)
        with self.assertRaises(InvalidObservationError):
            nig.batch_update(s, rng.standard_normal((2, 4)))

    def test_rank_one_stack_rows_are_independent(self):
        rng = np.random.default_rng(47)
        forms = [random_cform(rng, 3) for _ in range(4)]
        observations = [Observation(rng.standard_normal(), rng.standard_normal(3)) for _ in range(4)]
        c = np.array([0.3, 0.0, 1.0, 0.7])
        C, theta_hat, lambda_, nu = nig.rank_one_stack(
            np.stack([(cf.C + cf.C.T) / 2 for cf in forms]),
            np.stack([cf.theta_hat for cf in forms]),
            np.array([cf.lambda_ for cf in forms]),
            np.array([cf.nu for cf in forms]),
            np.array([obs.y for obs in observations]),
            np.stack([obs.psi for obs in observations]),
            c,
        )
        for i, (cf, obs) in enumerate(zip(forms, observations)):
            symmetric = NigCForm((cf.C + cf.C.T) / 2, cf.theta_hat, cf.lambda_, cf.nu)
            expected = nig.cform_rank_one_update(symmetric, obs, c[i])
            np.testing.assert_array_equal(C[i], expected.C)
            np.testing.assert_array_equal(theta_hat[i], expected.theta_hat)
            self.assertEqual(lambda_[i], expected.lambda_)
            self.assertEqual(nu[i], expected.nu)
        # a zero weight leaves its row untouched
        np.testing.assert_array_equal(theta_hat[1], forms[1].theta_hat)
        self.assertEqual(lambda_[1], forms[1].lambda_)

    def test_trusted_constructor(self):
        V = np.diag([2.0, 1.0])
        s = NigVForm.from_symmetric(V, 3)
        self.assertIs(s.V, V)
        self.assertEqual(s.nu, 3.0)
        self.assertEqual(s.order, 1)


if __name__ == '__main__':
    unittest.main()
