import unittest
from greenscope import parse
from greenscope.errors import ParameterError


class ParsePointTests(unittest.TestCase):

    def test_parse_valid_point(self) -> None:
        result = parse.parse_point("0, 3.14159")

        self.assertEqual(result, (0.0, 3.14159))

    def test_parse_point_scientific(self) -> None:
        result = parse.parse_point("1e-3,-2.5E1,.5", dimension=3)

        self.assertEqual(result, (0.001, -25.0, 0.5))

    def test_parse_point_wrong_dimension(self) -> None:
        with self.assertRaises(ParameterError):
            parse.parse_point("1,2", dimension=3)

    def test_parse_point_single(self) -> None:
        with self.assertRaises(ParameterError):
            parse.parse_point("1")

    def test_parse_point_not_numeric(self) -> None:
        with self.assertRaises(ParameterError):
            parse.parse_point("x,y")


class ParseScheduleTests(unittest.TestCase):

    def test_parse_valid_schedule(self) -> None:
        result = parse.parse_schedule("4,8,16")

        self.assertEqual(result, (4.0, 8.0, 16.0))

    def test_parse_schedule_too_short(self) -> None:
        with self.assertRaises(ParameterError):
            parse.parse_schedule("4,8")

    def test_parse_schedule_backwards(self) -> None:
        with self.assertRaises(ParameterError):
            parse.parse_schedule("4,16,8")


class ParseLevelsTests(unittest.TestCase):

    def test_parse_level_list(self) -> None:
        result = parse.parse_levels("-0.05,0.1")

        self.assertEqual(result, (-0.05, 0.1))

    def test_parse_level_range(self) -> None:
        result = parse.parse_levels("0:1:5")

        self.assertEqual(result, (0.0, 0.25, 0.5, 0.75, 1.0))

    def test_parse_level_range_empty(self) -> None:
        with self.assertRaises(ParameterError):
            parse.parse_levels("1:0:5")
