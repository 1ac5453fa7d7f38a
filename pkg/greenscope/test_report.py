import json
import os
import tempfile
import unittest
import pandas as pd
from greenscope import report
from greenscope.critpoint import Classification, CriticalPoint, hopf_check
from greenscope.report import Relation


def _saddle() -> CriticalPoint:
    return CriticalPoint(
        position=(0.0, 3.14159),
        value=-0.055157,
        grad_residual=1e-12,
        hessian_eigenvalues=(-0.08, 0.08),
        classification=Classification.NONDEGENERATE,
        morse_index=1,
    )


def _bundle() -> report.ReportBundle:
    bundle = report.ReportBundle(name="cylinder", config={"h": 0.05, "seed": 0})
    bundle.census = [_saddle()]
    bundle.hopf = hopf_check(bundle.census, genus=0, ends=2)
    bundle.levels = pd.DataFrame(
        [{"requested": -0.06, "level": -0.06, "components": 1}]
    )
    bundle.results["saddle_value"] = -0.055157
    bundle.add(report.check("census_size", 1, 1, Relation.EQUAL))
    return bundle


class CheckTests(unittest.TestCase):

    def test_relations(self) -> None:
        self.assertTrue(report.check("a", 0.01, 0.02).passed)
        self.assertFalse(report.check("b", 0.03, 0.02).passed)
        self.assertTrue(report.check("c", 3, 2, Relation.AT_LEAST).passed)
        self.assertFalse(report.check("d", 1, 2, Relation.EQUAL).passed)

    def test_record(self) -> None:
        result = report.check("flux_error", 0.01, 0.02)

        self.assertEqual(result.relation, "<=")
        self.assertEqual(result.threshold, 0.02)

    def test_bundle_failures(self) -> None:
        bundle = _bundle()

        bundle.add(report.check("undecided_fraction", 0.1, 0.0))

        self.assertFalse(bundle.passed)
        self.assertEqual([c.name for c in bundle.failures()], ["undecided_fraction"])


class WriteBundleTests(unittest.TestCase):

    def test_layout(self) -> None:
        with tempfile.TemporaryDirectory() as out:
            report.write_bundle(_bundle(), out)

            for name in ["census.csv", "census.json", "hopf.json", "levels.csv", "checks.json"]:
                self.assertTrue(os.path.exists(os.path.join(out, name)), name)
            with open(os.path.join(out, "hopf.json")) as fh:
                hopf = json.load(fh)
            with open(os.path.join(out, "census.json")) as fh:
                census = json.load(fh)

        self.assertEqual(hopf["identity_residual"], 0)
        self.assertTrue(hopf["within_bound"])
        self.assertEqual(census[0]["classification"], "nondegenerate")
        self.assertEqual(census[0]["index"], -1)

    def test_deterministic(self) -> None:
        contents = []
        for _ in range(2):
            with tempfile.TemporaryDirectory() as out:
                report.write_bundle(_bundle(), out)
                files = {}
                for name in ["census.csv", "census.json", "checks.json", "metadata.json"]:
                    with open(os.path.join(out, name), "rb") as fh:
                        files[name] = fh.read()
                contents.append(files)

        self.assertEqual(contents[0], contents[1])
