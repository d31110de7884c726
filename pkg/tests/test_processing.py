import json
import math
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

import frobinv.datatypes as dt
from frobinv import families, numerics, processing
from frobinv.errors import DomainError
from frobinv.families import FamilyInstance
from frobinv.fields import PhaseState
from frobinv.funcat import SpaceProfile, TimeFunction

ONE = TimeFunction(kind="constant", params=(1.0,))
HALF = TimeFunction(kind="constant", params=(0.5,))
TWO_PLUS_COS = TimeFunction(kind="trigonometric", params=(2.0, 1.0, 1.0, 0.0))
U_HARMONIC = SpaceProfile(kind="polynomial", params=(0.0, 0.0, 0.5))


def make_result(passed: bool) -> dt.RunResult:
    checks = [
        dt.CheckResult(name="residual", passed=True, metrics={"max_abs": 1.5e-12, "included": 48.0}),
        dt.CheckResult(
            name="drift", passed=passed, metrics={"max_drift": 2e-3}, message="" if passed else "too large"
        ),
    ]
    return dt.RunResult(
        scenario="harmonic", command="verify", passed=passed, checks=checks, duration_s=0.5
    )


class WriteCsvTest(unittest.TestCase):
    def setUp(self):
        self.folder = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.folder)

    def test_lossless_floats(self):
        """Asserts that doubles are written with 17 significant digits and read back exactly."""
        frame = pd.DataFrame({"t": [0.1, 1.0 / 3.0], "q": [math.pi, -1e-300]})
        processing.write_csv(frame, self.folder / "table.csv")
        lines = (self.folder / "table.csv").read_text().splitlines()
        self.assertEqual("t,q", lines[0])
        self.assertEqual("0.10000000000000001,3.1415926535897931", lines[1])
        pd.testing.assert_frame_equal(frame, pd.read_csv(self.folder / "table.csv", float_precision="round_trip"))

    def test_reports(self):
        """Asserts that the summary and the JSON result are written to the output directory."""
        result = make_result(passed=True)
        processing.write_reports(result, self.folder)
        summary = (self.folder / processing.SUMMARY_FILE).read_text()
        self.assertEqual(processing.format_summary(result), summary)
        data = json.loads((self.folder / processing.RESULT_FILE).read_text())
        self.assertEqual("verify", data["command"])
        self.assertEqual(["residual", "drift"], [check["name"] for check in data["checks"]])


class SummaryTest(unittest.TestCase):
    def test_passed(self):
        """Asserts the layout of a passed summary."""
        expected = (
            "verify 'harmonic': PASSED (0.50 s)\n"
            "  [pass] residual: max_abs=1.500000e-12, included=48\n"
            "  [pass] drift: max_drift=2.000000e-03\n"
        )
        self.assertEqual(expected, processing.format_summary(make_result(passed=True)))

    def test_failed(self):
        """Asserts that a failed check is marked and shows its message."""
        summary = processing.format_summary(make_result(passed=False))
        self.assertTrue(summary.startswith("verify 'harmonic': FAILED"))
        self.assertIn("  [FAIL] drift: max_drift=2.000000e-03 (too large)", summary)


class TrajectoryFrameTest(unittest.TestCase):
    def test_sarlet_columns(self):
        """Asserts the column order for a family with an invariant and a co-integrated T."""
        fam = families.sarlet(TWO_PLUS_COS, ONE, HALF, (0.0, 1.0))
        traj = numerics.integrate(fam.potential, PhaseState(2.0, 1.5, 0.0), 1.0, aux=fam.aux_odes)
        frame = processing.trajectory_frame(fam, traj)
        self.assertEqual(["t", "q", "p", "I", "inside", "drift_rel", "T", "f"], list(frame.columns))
        self.assertTrue((frame["inside"] == 1).all())
        self.assertEqual(0.0, frame["drift_rel"].iloc[0])
        self.assertLess(frame["drift_rel"].max(), 1e-6)

    def test_start_outside_invariant(self):
        """Asserts that samples outside the domain of the invariant are flagged and left undefined."""
        fam = families.sarlet(TWO_PLUS_COS, ONE, HALF, (0.0, 1.0))
        traj = numerics.integrate(fam.potential, PhaseState(2.0, 0.5, 0.0), 1.0)
        with self.assertLogs(level="WARNING"):
            frame = processing.trajectory_frame(fam, traj)
        self.assertEqual(0, frame["inside"].iloc[0])
        self.assertTrue(math.isnan(frame["I"].iloc[0]))
        self.assertTrue(frame["drift_rel"].isna().all())
        self.assertTrue(frame["I"].isna().equals(frame["inside"] == 0))

    def test_abel_columns(self):
        """Asserts that the abel family dumps its coefficients next to the state."""
        fam = families.abel_family(ONE, 1.0, U_HARMONIC, (0.0, 1.0))
        traj = numerics.integrate(fam.potential, PhaseState(0.5, 1.0, 0.0), 1.0, aux=fam.aux_odes)
        frame = processing.trajectory_frame(fam, traj)
        self.assertEqual(
            ["t", "q", "p", "T", "S", "E", "Gamma", "Q", "q_bar", "p_bar"], list(frame.columns)
        )
        np.testing.assert_allclose(frame["t"].to_numpy(), frame["T"].to_numpy(), atol=1e-9)

    def test_aux_outside_guard(self):
        """Asserts that auxiliaries that cannot be evaluated are stored as NaN."""
        free = families.forced_oscillator(ONE, TimeFunction(kind="constant", params=(0.0,)))

        def positive_q(q, p, t):
            if q <= 1.0:
                raise DomainError("q must be larger than 1")
            return math.log(q - 1.0)

        fam = FamilyInstance(
            label=free.label,
            potential=free.potential,
            compat=free.compat,
            aux={"log_q": positive_q},
            window=free.window,
        )
        cfg = dt.IntegratorConfig(max_step=0.1)
        traj = numerics.integrate(fam.potential, PhaseState(0.0, 1.0, 0.0), 2.0, cfg)
        frame = processing.trajectory_frame(fam, traj)
        self.assertTrue(frame.loc[frame["q"] <= 1.0, "log_q"].isna().all())
        self.assertFalse(frame.loc[frame["q"] > 1.0, "log_q"].isna().any())


if __name__ == "__main__":
    unittest.main()
