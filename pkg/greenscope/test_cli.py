import json
import unittest
from click.testing import CliRunner
from greenscope import cli


class CliTests(unittest.TestCase):

    def test_list(self) -> None:
        result = CliRunner().invoke(cli.main, ["list"])

        self.assertEqual(result.exit_code, 0)
        self.assertIn("torus_tube_N2", result.output)

    def test_unknown_experiment_diagnostic(self) -> None:
        result = CliRunner(mix_stderr=False).invoke(cli.main, ["experiment", "nosuch"])

        self.assertEqual(result.exit_code, cli.EXIT_ERROR)
        diagnostic = json.loads(result.stderr.strip().splitlines()[-1])
        self.assertEqual(diagnostic["error"], "ParameterError")

    def test_experiment_needs_a_name(self) -> None:
        result = CliRunner().invoke(cli.main, ["experiment"])

        self.assertNotEqual(result.exit_code, 0)

    def test_bad_spacing(self) -> None:
        result = CliRunner(mix_stderr=False).invoke(
            cli.main, ["experiment", "blowup", "--h", "-1"]
        )

        self.assertEqual(result.exit_code, cli.EXIT_ERROR)
