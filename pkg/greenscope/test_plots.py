import unittest
import pandas as pd
from greenscope import plots


class BarLookupTests(unittest.TestCase):

    def test_nearest_bar(self) -> None:
        lookup = plots.bar_lookup(["-0.0500", "-0.0552", "-0.0600"])

        self.assertEqual(lookup(0.4), "-0.0500")
        self.assertEqual(lookup(1.2), "-0.0552")
        self.assertEqual(lookup(1.6), "-0.0600")

    def test_clamped_to_the_ends(self) -> None:
        lookup = plots.bar_lookup(["a", "b"])

        self.assertEqual(lookup(-3.0), "a")
        self.assertEqual(lookup(9.0), "b")

    def test_empty(self) -> None:
        with self.assertRaises(ValueError):
            plots.bar_lookup([])


class LevelScanFigureTests(unittest.TestCase):

    def test_coordinate_readout(self) -> None:
        table = pd.DataFrame({"level": [-0.05, -0.06], "components": [2, 1]})

        fig = plots.level_scan_figure(table, "scan")

        ax = fig.axes[0]
        self.assertEqual(ax.get_title(), "scan")
        self.assertEqual(ax.format_coord(1.1, 1.0), "level=-0.0600, components=1")
        plots.close([fig])
