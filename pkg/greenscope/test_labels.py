import math
import unittest
from greenscope import labels
from greenscope.critpoint import Classification, CriticalPoint


def _point(classification: Classification, **kwargs: object) -> CriticalPoint:
    return CriticalPoint(
        position=(0.0, math.pi),
        value=-0.055,
        grad_residual=1e-12,
        hessian_eigenvalues=(-0.1, 0.1),
        classification=classification,
        **kwargs,  # type: ignore[arg-type]
    )


class LabelTests(unittest.TestCase):

    def test_critical_labels(self) -> None:
        morse = _point(Classification.NONDEGENERATE, morse_index=1)
        monkey = _point(Classification.DEGENERATE, order=3)
        odd = _point(Classification.UNCLASSIFIED, suspect=True)

        self.assertEqual(labels.critical_label(morse), "Morse 1")
        self.assertEqual(labels.critical_label(monkey), "m=3")
        self.assertEqual(labels.critical_label(odd), "? (suspect)")

    def test_level_label(self) -> None:
        self.assertEqual(labels.level_label(-0.055157), "-0.0552")
        self.assertEqual(labels.level_label(2.5e-5), "2.500e-05")
