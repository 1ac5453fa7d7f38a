import re
from greenscope.errors import ParameterError

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_LIST = re.compile(f"^\\s*{_NUMBER}(?:\\s*,\\s*{_NUMBER})*\\s*$")
_RANGE = re.compile(f"^\\s*({_NUMBER})\\s*:\\s*({_NUMBER})\\s*:\\s*(\\d+)\\s*$")


def _numbers(text: str, what: str) -> list[float]:
    if _LIST.match(text) is None:
        raise ParameterError(f"Invalid {what}: {text!r}")
    return [float(x) for x in text.split(",")]


def parse_point(text: str, dimension: int = 0) -> tuple[float, ...]:
    """'0,3.14159' -> (0.0, 3.14159); checks the dimension when one is given."""
    point = tuple(_numbers(text, "point"))
    if dimension and len(point) != dimension:
        raise ParameterError(f"Expected a {dimension}D point: {text!r}")
    if len(point) not in (2, 3):
        raise ParameterError(f"Points are 2D or 3D: {text!r}")
    return point


def parse_schedule(text: str) -> tuple[float, ...]:
    """Strictly increasing positive exhaustion radii, at least three."""
    schedule = tuple(_numbers(text, "schedule"))
    if len(schedule) < 3:
        raise ParameterError(f"Exhaustion schedule needs at least 3 stages: {text!r}")
    if schedule[0] <= 0 or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ParameterError(f"Exhaustion schedule must increase from 0: {text!r}")
    return schedule


def parse_levels(text: str) -> tuple[float, ...]:
    """A comma list '0.1,0.2' or an inclusive range 'lo:hi:count'."""
    match = _RANGE.match(text)
    if match is None:
        return tuple(_numbers(text, "levels"))
    lo, hi, count = float(match.group(1)), float(match.group(2)), int(match.group(3))
    if count < 2 or hi <= lo:
        raise ParameterError(f"Invalid level range: {text!r}")
    step = (hi - lo) / (count - 1)
    return tuple(lo + k * step for k in range(count))
