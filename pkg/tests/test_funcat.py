"""Script to test the catalog of parameter functions."""
import math
import unittest

import numpy as np

import frobinv.datatypes as dt
from frobinv import funcat
from frobinv.errors import ContractError, FamilyConstructionError


class CatalogFunctionTest(unittest.TestCase):
    def test_constant(self):
        """Asserts that a constant has vanishing derivatives."""
        fn = funcat.TimeFunction(kind="constant", params=(2.5,))
        self.assertEqual(2.5, fn.eval(3.0))
        self.assertEqual(0.0, fn.eval(3.0, 3))
        self.assertTrue(fn.is_constant)

    def test_polynomial(self):
        """Asserts that a polynomial and its derivatives are evaluated exactly."""
        fn = funcat.TimeFunction(kind="polynomial", params=(1.0, 0.0, 0.1))
        self.assertAlmostEqual(1.4, fn.eval(2.0), places=14)
        self.assertAlmostEqual(0.4, fn.eval(2.0, 1), places=14)
        self.assertAlmostEqual(0.2, fn.eval(2.0, 2), places=14)
        self.assertEqual(0.0, fn.eval(2.0, 3))
        self.assertFalse(fn.is_constant)

    def test_trigonometric(self):
        """Asserts the derivatives of 2 + cos(t)."""
        fn = funcat.TimeFunction(kind="trigonometric", params=(2.0, 1.0, 1.0, 0.0))
        t = 0.7
        expected = [2.0 + math.cos(t), -math.sin(t), -math.cos(t), math.sin(t)]
        np.testing.assert_allclose(expected, [fn.eval(t, n) for n in range(4)], rtol=1e-14)

    def test_exponential(self):
        """Asserts the derivatives of 3 exp(-t/2)."""
        fn = funcat.TimeFunction(kind="exponential", params=(3.0, -0.5))
        self.assertAlmostEqual(3.0 * math.exp(-0.5), fn.eval(1.0), places=14)
        self.assertAlmostEqual(0.75 * math.exp(-0.5), fn.eval(1.0, 2), places=14)

    def test_array_input(self):
        """Asserts that arrays are evaluated elementwise, also for constants."""
        times = np.linspace(0.0, 1.0, 5)
        constant = funcat.TimeFunction(kind="constant", params=(1.0,))
        np.testing.assert_array_equal(np.ones(5), constant.eval(times))
        cosine = funcat.TimeFunction(kind="trigonometric", params=(0.0, 1.0, 1.0, 0.0))
        np.testing.assert_allclose(np.cos(times), cosine.eval(times))

    def test_scalar_output(self):
        """Asserts that a scalar input returns a float."""
        fn = funcat.SpaceProfile(kind="polynomial", params=(0.0, 0.0, 0.5))
        self.assertIsInstance(fn.eval(1.0), float)

    def test_order_too_high(self):
        """Asserts that derivatives beyond the supported order are rejected."""
        profile = funcat.SpaceProfile(kind="polynomial", params=(0.0, 1.0))
        self.assertRaises(ContractError, profile.eval, 1.0, 3)
        self.assertRaises(ContractError, funcat.evaluate, profile, 1.0, -1)

    def test_wrong_param_count(self):
        """Asserts that parameter lists of the wrong length are rejected."""
        self.assertRaises(
            ValueError, funcat.TimeFunction, kind="trigonometric", params=(1.0, 2.0)
        )

    def test_constant_kinds(self):
        """Asserts that degenerate trigonometric and exponential members count as constant."""
        self.assertTrue(funcat.TimeFunction(kind="trigonometric", params=(1.0, 0.0, 2.0, 0.0)).is_constant)
        self.assertTrue(funcat.TimeFunction(kind="exponential", params=(1.0, 0.0)).is_constant)
        self.assertFalse(funcat.TimeFunction(kind="exponential", params=(1.0, 0.2)).is_constant)

    def test_from_spec(self):
        """Asserts that a validated FunctionSpec creates the same function."""
        spec = dt.FunctionSpec(kind="trigonometric", params=[2.0, 1.0, 1.0, 0.0])
        fn = funcat.TimeFunction.from_spec(spec)
        self.assertEqual(funcat.TimeFunction(kind="trigonometric", params=(2.0, 1.0, 1.0, 0.0)), fn)


class FiniteDifferenceTest(unittest.TestCase):
    MEMBERS = {
        "constant": (2.5,),
        "polynomial": (1.0, -0.5, 0.3, 0.1),
        "trigonometric": (2.0, 1.5, 1.3, 0.4),
        "exponential": (3.0, -0.5),
    }

    def assertDerivatives(self, fn, h=1e-5, tolerance=1e-7):
        points = np.random.default_rng(0).uniform(-5.0, 5.0, 100)
        for order in range(fn.max_order):
            with self.subTest(kind=fn.kind.value, order=order + 1):
                central = (fn.eval(points + h, order) - fn.eval(points - h, order)) / (2.0 * h)
                exact = fn.eval(points, order + 1)
                error = np.abs(central - exact) / np.maximum(1.0, np.abs(exact))
                self.assertLess(error.max(), tolerance)

    def test_time_functions(self):
        """Asserts that every derivative up to order 3 matches a central difference of the order below."""
        for kind, params in self.MEMBERS.items():
            self.assertDerivatives(funcat.TimeFunction(kind=kind, params=params))

    def test_space_profiles(self):
        """Asserts that every derivative up to order 2 matches a central difference of the order below."""
        for kind, params in self.MEMBERS.items():
            self.assertDerivatives(funcat.SpaceProfile(kind=kind, params=params))


class CheckNonzeroTest(unittest.TestCase):
    def test_rho_away_from_zero(self):
        """Asserts that 2 + cos(t) passes the check on [0, 10]."""
        rho = funcat.TimeFunction(kind="trigonometric", params=(2.0, 1.0, 1.0, 0.0))
        funcat.check_nonzero(rho, (0.0, 10.0))

    def test_rho_crossing_zero(self):
        """Asserts that cos(t) fails the check on [0, 10] and passes it on [0, 1]."""
        rho = funcat.TimeFunction(kind="trigonometric", params=(0.0, 1.0, 1.0, 0.0))
        self.assertRaises(FamilyConstructionError, funcat.check_nonzero, rho, (0.0, 10.0))
        funcat.check_nonzero(rho, (0.0, 1.0))


if __name__ == "__main__":
    unittest.main()
