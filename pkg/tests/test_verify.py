"""Script to test the verification checks."""
import math
import unittest

import numpy as np
import pandas as pd

import frobinv.datatypes as dt
from frobinv import families, fields, numerics, verify
from frobinv.errors import ContractError, DegenerateScanError, UnsupportedCheckError
from frobinv.fields import PhaseState
from frobinv.funcat import SpaceProfile, TimeFunction

ONE = TimeFunction(kind="constant", params=(1.0,))
ZERO = TimeFunction(kind="constant", params=(0.0,))
COS = TimeFunction(kind="trigonometric", params=(0.0, 1.0, 1.0, 0.0))
TWO_PLUS_COS = TimeFunction(kind="trigonometric", params=(2.0, 1.0, 1.0, 0.0))
HALF = TimeFunction(kind="constant", params=(0.5,))
U_HARMONIC = SpaceProfile(kind="polynomial", params=(0.0, 0.0, 0.5))
U_QUARTIC = SpaceProfile(kind="polynomial", params=(0.0, 0.0, 0.0, 0.0, 0.25))

SMALL_GRID = dt.GridSpec(
    q=dt.AxisSpec(min=-1.0, max=1.0, count=4),
    p=dt.AxisSpec(min=-1.0, max=1.0, count=4),
    t=dt.AxisSpec(min=0.0, max=1.0, count=3),
)


def harmonic():
    return families.forced_oscillator(COS, ZERO, (0.0, 1.0))


class GridTest(unittest.TestCase):
    def test_grid_order(self):
        """Asserts that grid points are ordered by q, then p, then t."""
        states = verify.grid_states(SMALL_GRID)
        self.assertEqual(48, len(states))
        self.assertEqual(PhaseState(-1.0, -1.0, 0.0), states[0])
        self.assertEqual(PhaseState(-1.0, -1.0, 0.5), states[1])
        self.assertEqual(PhaseState(-1.0, -1.0 + 2.0 / 3.0, 0.0), states[3])

    def test_single_point_axis(self):
        """Asserts that an axis with one point uses its minimum."""
        grid = dt.GridSpec(t=dt.AxisSpec(min=0.25, max=1.0, count=1))
        self.assertEqual({0.25}, {x.t for x in verify.grid_states(grid)})


class ResidualScanTest(unittest.TestCase):
    def test_harmonic(self):
        """Asserts that the forced oscillator passes the scan on the standard grid."""
        report = verify.residual_scan(harmonic(), dt.GridSpec(), threshold=1e-8)
        self.assertTrue(report.passed)
        self.assertEqual(1000, report.included)
        self.assertEqual(["q", "p", "t", "residual", "included"], list(report.table.columns))
        self.assertIn("q99", report.metrics())

    def test_free_particle_vanishes(self):
        """Asserts that V = 0 and C = 0 give exactly vanishing residuals."""
        report = verify.residual_scan(families.forced_oscillator(ONE, ZERO), SMALL_GRID, 1e-6)
        self.assertEqual(0.0, report.max_abs)

    def test_abel(self):
        """Asserts that the abel family with rho = 1 and k = 1 passes the scan."""
        fam = families.abel_family(ONE, 1.0, U_HARMONIC, (0.0, 1.0))
        report = verify.residual_scan(fam, SMALL_GRID, threshold=1e-6)
        self.assertLess(report.max_abs, 1e-6)

    def test_guard_accounting(self):
        """Asserts that grid points on the wrong side of q = sigma are flagged as excluded."""
        fam = families.sarlet(ONE, ONE, TimeFunction(kind="polynomial", params=(0.5, 0.1)), (0.0, 1.0))
        grid = dt.GridSpec(
            q=dt.AxisSpec(min=-1.0, max=3.0, count=5),
            p=dt.AxisSpec(min=-1.0, max=1.0, count=3),
            t=dt.AxisSpec(min=0.0, max=1.0, count=2),
        )
        report = verify.residual_scan(fam, grid, threshold=1e-6)
        table = report.table
        self.assertTrue((table.loc[table["q"] <= 1.0, "included"] == 0).all())
        self.assertTrue((table.loc[table["q"] > 1.0, "included"] == 1).all())
        self.assertTrue(table.loc[table["included"] == 0, "residual"].isna().all())
        self.assertEqual(18, report.excluded)
        self.assertTrue(report.passed)

    def test_degenerate(self):
        """Asserts that a grid entirely outside the guards raises a DegenerateScanError."""
        fam = families.sarlet(ONE, ONE, TimeFunction(kind="polynomial", params=(0.5, 0.1)), (0.0, 1.0))
        grid = dt.GridSpec(q=dt.AxisSpec(min=-1.0, max=0.5, count=3))
        self.assertRaises(DegenerateScanError, verify.residual_scan, fam, grid, 1e-6)

    def test_threads(self):
        """Asserts that parallel scans return the same table as serial scans."""
        fam = families.quadratic(TWO_PLUS_COS, ZERO, U_QUARTIC)
        serial = verify.residual_scan(fam, SMALL_GRID, 1e-6, threads=1)
        parallel = verify.residual_scan(fam, SMALL_GRID, 1e-6, threads=4)
        pd.testing.assert_frame_equal(serial.table, parallel.table)

    def test_finite_difference_agreement(self):
        """Asserts that the finite-difference residual agrees with the analytic one."""
        fam = families.quadratic(TWO_PLUS_COS, ZERO, U_QUARTIC)
        for x in (PhaseState(0.5, 1.0, 0.3), PhaseState(-1.0, 0.7, 2.0)):
            self.assertLess(abs(verify.finite_difference_residual(fam, x)), verify.FD_THRESHOLD)


class SamplingTest(unittest.TestCase):
    def test_reproducible(self):
        """Asserts that the same seed draws the same states."""
        bounds = [(-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0)]
        first = verify.sample_states(lambda x: x.q > 0.0, bounds, 10, seed=3)
        second = verify.sample_states(lambda x: x.q > 0.0, bounds, 10, seed=3)
        self.assertEqual(first, second)
        self.assertTrue(all(x.q > 0.0 for x in first))

    def test_retries_exhausted(self):
        """Asserts that a predicate nobody satisfies raises a DegenerateScanError."""
        bounds = [(0.0, 1.0)] * 3
        self.assertRaises(
            DegenerateScanError,
            verify.sample_states,
            lambda x: False,
            bounds,
            1,
            42,
            100,
        )

    def test_initial_states(self):
        """Asserts that explicit states come first and random states start at the window start."""
        conditions = dt.InitialConditions(count=4, states=[dt.StateSpec(q=1.0, p=0.0, t=0.0)])
        states = verify.initial_states(harmonic(), SMALL_GRID, conditions, seed=42)
        self.assertEqual(5, len(states))
        self.assertEqual(PhaseState(1.0, 0.0, 0.0), states[0])
        self.assertTrue(all(x.t == 0.0 for x in states))


class DriftCheckTest(unittest.TestCase):
    def test_forced_oscillators(self):
        """Asserts the drift of the linear invariant for several rho and F."""
        cases = [
            (ONE, (0.0, 10.0)),
            (COS, (0.0, 1.0)),
            (TWO_PLUS_COS, (0.0, 10.0)),
        ]
        force = TimeFunction(kind="polynomial", params=(0.0, 1.0))
        conditions = dt.InitialConditions(count=5)
        for rho, window in cases:
            with self.subTest(rho=rho):
                fam = families.forced_oscillator(rho, force, window)
                inits = verify.initial_states(fam, SMALL_GRID, conditions, seed=42)
                report = verify.drift_check(fam, inits, window[1], dt.IntegratorConfig(), 1e-6)
                self.assertTrue(report.passed)
                self.assertEqual(5, report.metrics()["trajectories"])

    def test_vanishing_invariant(self):
        """Asserts that I = 0 along the harmonic solution from (1, 0, 0)."""
        report = verify.drift_check(
            harmonic(), [PhaseState(1.0, 0.0, 0.0)], 1.0, dt.IntegratorConfig(), 1e-6
        )
        self.assertLess(report.table["I"].abs().max(), 1e-8)
        self.assertLess(report.worst, 1e-8)

    def test_quadratic(self):
        """Asserts the drift of the quadratic invariant for rho = 2 + cos(t), sigma = sin(t)."""
        sigma = TimeFunction(kind="trigonometric", params=(0.0, 1.0, 1.0, -math.pi / 2.0))
        fam = families.quadratic(TWO_PLUS_COS, sigma, SpaceProfile(kind="polynomial", params=(0, 0, 0, 0, 1)))
        inits = verify.initial_states(fam, SMALL_GRID, dt.InitialConditions(count=3), seed=42)
        report = verify.drift_check(fam, inits, 3.0, dt.IntegratorConfig(), 1e-6)
        self.assertTrue(report.passed)

    def test_giacomini_constant_speed(self):
        """Asserts the drift of (p - c)^2/2 + V for a constant C2."""
        fam = families.giacomini(
            SpaceProfile(kind="constant", params=(0.5,)), U_HARMONIC, (0.0, 3.0)
        )
        inits = verify.initial_states(fam, SMALL_GRID, dt.InitialConditions(count=3), seed=42)
        report = verify.drift_check(fam, inits, 3.0, dt.IntegratorConfig(), 1e-6)
        self.assertTrue(report.passed)

    def test_sarlet(self):
        """Asserts that I = t - q/(p - 1/q) drifts by less than 1e-7 for rho = 1, sigma = 0, gamma = 1."""
        fam = families.sarlet(ONE, ZERO, ONE, (0.0, 2.0))
        cfg = dt.IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)
        report = verify.drift_check(fam, [PhaseState(1.0, 2.0, 0.0)], 2.0, cfg, 1e-7)
        self.assertAlmostEqual(-1.0, report.table["I"].iloc[0], places=14)
        self.assertLess(report.worst, 1e-7)
        self.assertEqual(0, report.guard_exits)

    def test_undefined_invariant(self):
        """Asserts that a trajectory on which the invariant is undefined fails the check."""
        # D = rho w - rho' y - gamma rho/y vanishes at (2, 0.5, 0)
        fam = families.sarlet(TWO_PLUS_COS, ONE, HALF, (0.0, 1.0))
        start = PhaseState(2.0, 0.5, 0.0)
        self.assertFalse(fam.invariant_inside(start))
        report = verify.drift_check(fam, [start], 1.0, dt.IntegratorConfig(), 1e-6)
        self.assertTrue(report.table["drift_rel"].isna().all())
        self.assertEqual(len(report.table), report.undefined)
        self.assertTrue(math.isnan(report.worst))
        self.assertFalse(report.passed)

    def test_explicit_state_outside_invariant(self):
        """Asserts that explicit states outside the domain of the invariant are dropped."""
        fam = families.sarlet(TWO_PLUS_COS, ONE, HALF, (0.0, 1.0))
        conditions = dt.InitialConditions(
            count=0,
            states=[dt.StateSpec(q=2.0, p=0.5, t=0.0), dt.StateSpec(q=2.0, p=1.5, t=0.0)],
        )
        states = verify.initial_states(fam, SMALL_GRID, conditions, seed=42)
        self.assertEqual([PhaseState(2.0, 1.5, 0.0)], states)
        self.assertRaises(
            DegenerateScanError, verify.drift_check, fam, [], 1.0, dt.IntegratorConfig(), 1e-6
        )

    def test_threads(self):
        """Asserts that parallel drift checks are merged in trajectory order."""
        fam = harmonic()
        inits = verify.initial_states(fam, SMALL_GRID, dt.InitialConditions(count=4), seed=1)
        serial = verify.drift_check(fam, inits, 1.0, dt.IntegratorConfig(), 1e-6, threads=1)
        parallel = verify.drift_check(fam, inits, 1.0, dt.IntegratorConfig(), 1e-6, threads=3)
        pd.testing.assert_frame_equal(serial.table, parallel.table)

    def test_without_invariant(self):
        """Asserts that a family without invariant cannot be drift-checked."""
        fam = families.abel_family(ONE, 1.0, U_HARMONIC, (0.0, 1.0))
        self.assertRaises(
            UnsupportedCheckError,
            verify.drift_check,
            fam,
            [PhaseState(0.5, 1.0, 0.0)],
            1.0,
            dt.IntegratorConfig(),
            1e-6,
        )


class RiccatiTest(unittest.TestCase):
    def trajectory(self, fam):
        cfg = dt.IntegratorConfig(dense_output=True)
        return numerics.integrate(fam.potential, PhaseState(2.0, 0.5, 0.0), 2.0, cfg)

    def test_sarlet(self):
        """Asserts that the Sarlet surface f obeys its Riccati equation."""
        fam = families.sarlet(TWO_PLUS_COS, ONE, HALF, (0.0, 2.0))
        report = verify.riccati_consistency(fam, self.trajectory(fam), threshold=1e-5)
        self.assertTrue(report.passed)
        self.assertEqual(verify.DERIVATIVE_POINTS, report.metrics()["points"])

    def test_printed_quadratic_term(self):
        """Asserts that the printed quadratic term with sigma = 1 violates the Riccati equation."""
        fam = families.sarlet(TWO_PLUS_COS, ONE, HALF, (0.0, 2.0), printed_quadratic_term=True)
        report = verify.riccati_consistency(fam, self.trajectory(fam), threshold=1e-5)
        self.assertFalse(report.passed)
        self.assertGreater(report.max_abs, 1e-2)

    def test_forced_oscillator(self):
        """Asserts the linear reduction of the forced oscillator."""
        fam = families.forced_oscillator(TWO_PLUS_COS, TimeFunction(kind="polynomial", params=(0, 0, 1)))
        report = verify.riccati_consistency(fam, self.trajectory(fam), threshold=1e-5)
        self.assertTrue(report.passed)

    def test_truncated_trajectory(self):
        """Asserts that stencils next to a guard exit are dropped when f = 1/(t - 2/3) blows up."""
        fam = families.sarlet(ONE, ZERO, HALF, (0.0, 2.0))
        cfg = dt.IntegratorConfig(dense_output=True)
        traj = numerics.integrate(fam.potential, PhaseState(1.0, -1.0, 0.0), 2.0, cfg)
        self.assertTrue(traj.guard_exit)
        self.assertAlmostEqual(2.0 / 3.0, traj.t[-1], delta=1e-3)
        report = verify.riccati_consistency(fam, traj, threshold=1e-5)
        self.assertTrue(report.truncated)
        self.assertTrue(report.passed)
        limit = traj.t[-1] - (2.0 + verify.EXIT_MARGIN_STEPS) * verify.DERIVATIVE_STEP
        self.assertLessEqual(report.table["t"].max(), limit + 1e-12)
        np.testing.assert_allclose(
            1.0 / (report.table["t"] - 2.0 / 3.0), report.table["f"], rtol=1e-6
        )

    def test_residual_follows_tolerance(self):
        """Asserts that tightening the integrator tolerances by 100 cuts the residual by at least 10."""
        fam = families.forced_oscillator(TWO_PLUS_COS, TimeFunction(kind="polynomial", params=(0, 0, 1)))
        residuals = []
        for rel_tol in (1e-8, 1e-10):
            cfg = dt.IntegratorConfig(rel_tol=rel_tol, abs_tol=1e-2 * rel_tol, dense_output=True)
            traj = numerics.integrate(fam.potential, PhaseState(2.0, 0.5, 0.0), 2.0, cfg)
            residuals.append(verify.riccati_consistency(fam, traj, 1e-5, h=1e-3).max_abs)
        self.assertGreaterEqual(residuals[0] / max(residuals[1], 1e-300), 10.0)

    def test_needs_dense_output(self):
        """Asserts that a trajectory without dense output is rejected."""
        fam = harmonic()
        traj = numerics.integrate(fam.potential, PhaseState(1.0, 0.0, 0.0), 1.0)
        self.assertRaises(ContractError, verify.riccati_consistency, fam, traj, 1e-5)

    def test_without_reduction(self):
        """Asserts that a family without reduction cannot be checked."""
        fam = families.abel_family(ONE, 1.0, U_HARMONIC, (0.0, 1.0))
        traj = numerics.integrate(
            fam.potential, PhaseState(0.5, 1.0, 0.0), 1.0, dt.IntegratorConfig(dense_output=True)
        )
        self.assertRaises(UnsupportedCheckError, verify.riccati_consistency, fam, traj, 1e-5)


class AbelCheckTest(unittest.TestCase):
    def test_constant_rho(self):
        """Asserts that the field characteristics follow the Abel equation for rho = 1."""
        fam = families.abel_family(ONE, 1.0, U_HARMONIC, (0.0, 1.0))
        report = verify.abel_characteristic_check(fam, 0.5, (0.2, 1.5), 1e-6, (3.0, 4.0))
        self.assertTrue(report.passed)
        self.assertEqual(2 * verify.ABEL_POINTS, len(report.table))
        self.assertFalse(report.paths.empty)

    def test_varying_rho(self):
        """Asserts the agreement for rho = 2 + cos(t), where the rho'' term is active."""
        fam = families.abel_family(TWO_PLUS_COS, 1.0, U_HARMONIC, (0.0, 1.0))
        report = verify.abel_characteristic_check(fam, 0.5, (0.2, 1.5), 1e-6, (3.0, 4.0))
        self.assertLess(report.max_slope_error, 1e-6)
        self.assertTrue(report.passed)

    def test_field_slope(self):
        """Asserts that the traced slope equals the closed form at a single point."""
        fam = families.abel_family(ONE, 1.0, U_HARMONIC, (0.0, 1.0))
        self.assertAlmostEqual(-1.25, verify.field_slope(fam, 0.5, 2.0, 0.7), places=10)

    def test_other_family(self):
        """Asserts that the check only applies to the abel family."""
        self.assertRaises(
            UnsupportedCheckError, verify.abel_characteristic_check, harmonic(), 0.0, (0.2, 1.5), 1e-6
        )


class InverseTest(unittest.TestCase):
    def sample(self, predicate, count=200):
        bounds = [(-2.0, 2.0), (-2.0, 2.0), (0.0, 1.0)]
        return verify.sample_states(predicate, bounds, count, seed=42)

    def test_harmonic(self):
        """Asserts the round trip for V = q^2/2 and J = (p^2 + q^2)/2."""
        V = fields.autonomous_potential(U_HARMONIC)
        J = fields.energy_invariant(U_HARMONIC)
        report = verify.inverse_roundtrip(V, J, self.sample(lambda x: abs(x.p) > 0.2), 1e-9)
        self.assertLess(report.max_residual, 1e-9)
        self.assertLess(report.max_tangency, 1e-9)

    def test_quartic(self):
        """Asserts the round trip for V = q^4/4 and J = p^2/2 + q^4/4."""
        V = fields.autonomous_potential(U_QUARTIC)
        J = fields.energy_invariant(U_QUARTIC)
        report = verify.inverse_roundtrip(V, J, self.sample(lambda x: abs(x.p) > 0.2), 1e-9)
        self.assertTrue(report.passed)

    def test_forced_oscillator(self):
        """Asserts the round trip for the invariant of the forced oscillator with rho = cos(t)."""
        fam = harmonic()
        report = verify.inverse_roundtrip(fam.potential, fam.invariant, self.sample(fam.inside), 1e-8)
        self.assertLess(report.max_residual, 1e-8)

    def assertFamilyRoundtrip(self, fam, bounds, threshold=1e-6):
        """Asserts the round trip C = -I_q/I_p for the invariant of a family."""
        I = fam.invariant

        def regular(x):
            return fam.invariant_inside(x) and abs(I.d_p(x.q, x.p, x.t)) > 0.2 and abs(I(x)) < 50.0

        sample = verify.sample_states(regular, bounds, 100, seed=42)
        report = verify.inverse_roundtrip(fam.potential, I, sample, threshold)
        self.assertEqual(0, report.excluded)
        self.assertTrue(report.passed)

    def test_sarlet(self):
        """Asserts the round trip for the sarlet invariant with sigma = sin(t) and gamma = 1/2."""
        sigma = TimeFunction(kind="trigonometric", params=(0.0, 1.0, 1.0, -math.pi / 2.0))
        fam = families.sarlet(TWO_PLUS_COS, sigma, HALF, (0.0, 1.0))
        self.assertFamilyRoundtrip(fam, [(1.5, 3.0), (-2.0, 2.0), (0.0, 1.0)])

    def test_quadratic(self):
        """Asserts the round trip for the quadratic invariant with U = x^4/4."""
        sigma = TimeFunction(kind="trigonometric", params=(0.0, 1.0, 1.0, -math.pi / 2.0))
        fam = families.quadratic(TWO_PLUS_COS, sigma, U_QUARTIC, (0.0, 1.0))
        self.assertFamilyRoundtrip(fam, [(-2.0, 2.0), (-2.0, 2.0), (0.0, 1.0)])

    def test_giacomini(self):
        """Asserts the round trip for (p - c)^2/2 + V with a constant C2 = c."""
        fam = families.giacomini(SpaceProfile(kind="constant", params=(0.5,)), U_QUARTIC, (0.0, 1.0))
        self.assertFamilyRoundtrip(fam, [(-2.0, 2.0), (-2.0, 2.0), (0.0, 1.0)])

    def test_guarded_samples(self):
        """Asserts that samples with |J_p| below delta_p are excluded."""
        V = fields.autonomous_potential(U_HARMONIC)
        J = fields.energy_invariant(U_HARMONIC)
        sample = [PhaseState(1.0, 0.0, 0.0), PhaseState(1.0, 1.0, 0.0)]
        report = verify.inverse_roundtrip(V, J, sample, 1e-9)
        self.assertEqual(1, report.excluded)
        self.assertRaises(DegenerateScanError, verify.inverse_roundtrip, V, J, sample[:1], 1e-9)

    def test_tangency(self):
        """Asserts that the family field is tangent to the family invariant."""
        sigma = TimeFunction(kind="trigonometric", params=(0.0, 1.0, 1.0, -math.pi / 2.0))
        fam = families.quadratic(TWO_PLUS_COS, sigma, U_QUARTIC)
        sample = verify.family_sample(fam, SMALL_GRID, 100, seed=42)
        report = verify.tangency_scan(fam, sample, 1e-8)
        self.assertTrue(report.passed)
        np.testing.assert_array_equal(np.ones(100), report.table["included"].to_numpy())


if __name__ == "__main__":
    unittest.main()
