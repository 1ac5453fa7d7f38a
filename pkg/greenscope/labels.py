import math
from greenscope.critpoint import Classification, CriticalPoint


def critical_label(point: CriticalPoint) -> str:
    if point.classification == Classification.NONDEGENERATE:
        text = f"Morse {point.morse_index}"
    elif point.classification == Classification.DEGENERATE:
        text = f"m={point.order}"
    else:
        text = "?"
    return text + " (suspect)" if point.suspect else text


def level_label(level: float) -> str:
    if level == 0 or 1e-3 <= abs(level) < 1e4:
        return f"{level:.4f}"
    return f"{level:.3e}"


def angle_label(theta: float) -> str:
    """Angle as a multiple of pi."""
    return f"{theta / math.pi:.3f}π"
