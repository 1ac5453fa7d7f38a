from dataclasses import dataclass, field
import enum
import functools
import logging
import math
import typing
import numpy as np
import numpy.typing as npt
from scipy import spatial  # type: ignore[import-untyped]
from greenscope.errors import ParameterError

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]
ScalarMap = typing.Callable[[Array], Array]
VectorMap = typing.Callable[[Array], Array]

ROTATION_SAMPLES = 64
_FD_STEP = 1e-7


def as_points(points: npt.ArrayLike, dimension: int) -> Array:
    result = np.atleast_2d(np.asarray(points, dtype=np.float64))
    assert (
        result.shape[-1] == dimension
    ), f"Expected {dimension}-dimensional points, got shape {result.shape}"
    return result.reshape(-1, dimension)


def smoothstep(t: Array) -> Array:
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def smoothstep_derivative(t: Array) -> Array:
    inside = (t > 0.0) & (t < 1.0)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * t * t * (1.0 - t) ** 2, 0.0)


def smoothstep_second_derivative(t: Array) -> Array:
    inside = (t > 0.0) & (t < 1.0)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t), 0.0)


class SymmetryKind(enum.Enum):
    REFLECTION = "reflection"
    AXIS_ROTATION = "axis_rotation"


@dataclass(frozen=True)
class Symmetry:
    kind: SymmetryKind
    # Normal axis for a reflection, rotation axis for an axis rotation
    axis: int

    def matrix(self, dimension: int, angle: float = 0.0) -> Array:
        m = np.eye(dimension)
        if self.kind == SymmetryKind.REFLECTION:
            m[self.axis, self.axis] = -1.0
            return m
        assert dimension == 3, "Axis rotations are only defined in 3D"
        i, k = [a for a in range(3) if a != self.axis]
        c, s = math.cos(angle), math.sin(angle)
        m[i, i], m[i, k], m[k, i], m[k, k] = c, -s, s, c
        return m


def reflection(axis: int) -> Symmetry:
    return Symmetry(kind=SymmetryKind.REFLECTION, axis=axis)


def axis_rotation(axis: int) -> Symmetry:
    return Symmetry(kind=SymmetryKind.AXIS_ROTATION, axis=axis)


def group_elements(
    symmetries: typing.Sequence[Symmetry],
    dimension: int,
    rotation_samples: int = ROTATION_SAMPLES,
) -> list[Array]:
    """
    Matrices of the finite group generated by the declared reflections, times
    `rotation_samples` equally spaced rotations when an axis rotation is declared.
    The rotation angles are built so that the sample set is closed under
    negation bit for bit.
    """
    elements = [np.eye(dimension)]
    for s in symmetries:
        if s.kind == SymmetryKind.REFLECTION:
            r = s.matrix(dimension)
            elements = elements + [r @ e for e in elements]
    rotations = [s for s in symmetries if s.kind == SymmetryKind.AXIS_ROTATION]
    assert len(rotations) <= 1, "At most one rotation axis is supported"
    if rotations:
        rot = rotations[0]
        i, k = [a for a in range(3) if a != rot.axis]
        mats = []
        for step in range(rotation_samples):
            mirror = rotation_samples - step
            if 2 * step == rotation_samples:
                c, s = -1.0, 0.0
            elif 2 * step < rotation_samples:
                angle = 2.0 * math.pi * step / rotation_samples
                c, s = math.cos(angle), math.sin(angle)
            else:
                angle = 2.0 * math.pi * mirror / rotation_samples
                c, s = math.cos(angle), -math.sin(angle)
            m = np.eye(3)
            m[i, i], m[i, k], m[k, i], m[k, k] = c, -s, s, c
            mats.append(m)
        elements = [m @ e for m in mats for e in elements]
    return elements


@dataclass(frozen=True, eq=False)
class Domain:
    dimension: int
    # Negative inside, zero on the boundary
    implicit_fn: ScalarMap
    bbox: tuple[tuple[float, float], ...]
    periodic: tuple[bool, ...]
    boundary_components: int
    label: str
    witness: tuple[float, ...]
    symmetries: tuple[Symmetry, ...] = ()
    # Lower face of the axis is a symmetry plane (half-space grids)
    reflecting: tuple[bool, ...] = ()
    # Exact Euclidean distance to the closed domain, zero inside
    distance_fn: typing.Optional[ScalarMap] = None

    def implicit(self, points: npt.ArrayLike) -> Array:
        return self.implicit_fn(as_points(points, self.dimension))

    def contains(self, points: npt.ArrayLike) -> npt.NDArray[np.bool_]:
        return self.implicit(points) < 0.0

    def periods(self) -> tuple[typing.Optional[float], ...]:
        return tuple(
            (hi - lo) if p else None for (lo, hi), p in zip(self.bbox, self.periodic)
        )

    def reflecting_axes(self) -> tuple[bool, ...]:
        return self.reflecting or (False,) * self.dimension


@dataclass(frozen=True, eq=False)
class ConformalMetric:
    dimension: int
    factor: ScalarMap
    factor_gradient: VectorMap
    symmetries: tuple[Symmetry, ...] = ()
    label: str = "euclidean"

    def coefficient(self, points: npt.ArrayLike) -> Array:
        """The divergence-form coefficient a = factor^((n-2)/2)."""
        p = as_points(points, self.dimension)
        if self.dimension == 2:
            return np.ones(len(p))
        return np.asarray(self.factor(p) ** ((self.dimension - 2) / 2.0))

    def coefficient_gradient(self, points: npt.ArrayLike) -> Array:
        p = as_points(points, self.dimension)
        if self.dimension == 2:
            return np.zeros_like(p)
        exponent = (self.dimension - 2) / 2.0
        phi = self.factor(p)
        return np.asarray(
            (exponent * phi ** (exponent - 1.0))[:, None] * self.factor_gradient(p)
        )


def euclidean_metric(dimension: int) -> ConformalMetric:
    symmetries: tuple[Symmetry, ...] = tuple(reflection(k) for k in range(dimension))
    if dimension == 3:
        symmetries = symmetries + (axis_rotation(0),)
    return ConformalMetric(
        dimension=dimension,
        factor=lambda p: np.ones(len(p)),
        factor_gradient=lambda p: np.zeros_like(p),
        symmetries=symmetries,
        label="euclidean",
    )


def _radius(points: Array, center: Array) -> Array:
    return np.asarray(np.linalg.norm(points - center, axis=1))


def _fourier_radius(
    base: float, modes: typing.Sequence[typing.Sequence[float]]
) -> typing.Callable[[Array], Array]:
    coefficients = [(float(a), float(b)) for a, b in modes]

    def fn(theta: Array) -> Array:
        r = np.ones_like(theta)
        for k, (a, b) in enumerate(coefficients, start=1):
            r = r + a * np.cos(k * theta) + b * np.sin(k * theta)
        return base * r

    return fn


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ParameterError(message)


def _disk(params: typing.Mapping[str, typing.Any]) -> Domain:
    radius = float(params.get("radius", 1.0))
    center = np.asarray(params.get("center", (0.0, 0.0)), dtype=np.float64)
    _require(radius > 0, f"Degenerate disk radius: {radius}")
    at_origin = bool(np.all(center == 0.0))
    return Domain(
        dimension=2,
        implicit_fn=lambda p: _radius(p, center) - radius,
        bbox=tuple((c - radius, c + radius) for c in center),
        periodic=(False, False),
        boundary_components=1,
        label=f"disk(r={radius:g})",
        witness=tuple(center),
        symmetries=(reflection(0), reflection(1)) if at_origin else (),
        distance_fn=lambda p: np.maximum(_radius(p, center) - radius, 0.0),
    )


def _ball(params: typing.Mapping[str, typing.Any]) -> Domain:
    radius = float(params.get("radius", 1.0))
    center = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=np.float64)
    _require(radius > 0, f"Degenerate ball radius: {radius}")
    symmetries: tuple[Symmetry, ...] = ()
    if bool(np.all(center == 0.0)):
        symmetries = (reflection(0), reflection(1), reflection(2), axis_rotation(0))
    return Domain(
        dimension=3,
        implicit_fn=lambda p: _radius(p, center) - radius,
        bbox=tuple((c - radius, c + radius) for c in center),
        periodic=(False, False, False),
        boundary_components=1,
        label=f"ball(r={radius:g})",
        witness=tuple(center),
        symmetries=symmetries,
        distance_fn=lambda p: np.maximum(_radius(p, center) - radius, 0.0),
    )


def _annulus(params: typing.Mapping[str, typing.Any]) -> Domain:
    inner = float(params["inner"])
    outer = float(params["outer"])
    dimension = int(params.get("dimension", 2))
    inner_modes = params.get("inner_modes", [])
    outer_modes = params.get("outer_modes", [])
    _require(dimension in (2, 3), f"Unsupported annulus dimension: {dimension}")
    _require(0 < inner < outer, f"Degenerate annulus radii: {inner}, {outer}")
    origin = np.zeros(dimension)
    perturbed = len(inner_modes) > 0 or len(outer_modes) > 0

    if not perturbed:
        symmetries: tuple[Symmetry, ...] = tuple(
            reflection(k) for k in range(dimension)
        )
        if dimension == 3:
            symmetries = symmetries + (axis_rotation(0),)
        return Domain(
            dimension=dimension,
            implicit_fn=lambda p: np.maximum(
                _radius(p, origin) - outer, inner - _radius(p, origin)
            ),
            bbox=((-outer, outer),) * dimension,
            periodic=(False,) * dimension,
            boundary_components=2,
            label=f"annulus({inner:g}, {outer:g})",
            witness=(0.5 * (inner + outer),) + (0.0,) * (dimension - 1),
            symmetries=symmetries,
            distance_fn=lambda p: np.maximum(
                np.maximum(_radius(p, origin) - outer, inner - _radius(p, origin)),
                0.0,
            ),
        )

    _require(dimension == 2, "Boundary perturbations are only supported in 2D")
    r_in = _fourier_radius(inner, inner_modes)
    r_out = _fourier_radius(outer, outer_modes)
    theta = np.linspace(0.0, 2.0 * math.pi, 4096, endpoint=False)
    if np.min(r_in(theta)) <= 0 or np.min(r_out(theta) - r_in(theta)) <= 0:
        raise ParameterError("Perturbed annulus boundary self-intersects")

    def implicit(p: Array) -> Array:
        r = _radius(p, origin)
        angle = np.arctan2(p[:, 1], p[:, 0])
        return np.maximum(r - r_out(angle), r_in(angle) - r)

    extent = float(np.max(r_out(theta)))
    zero = np.zeros(1)
    return Domain(
        dimension=2,
        implicit_fn=implicit,
        bbox=((-extent, extent), (-extent, extent)),
        periodic=(False, False),
        boundary_components=2,
        label=f"annulus({inner:g}, {outer:g}, perturbed)",
        witness=(0.5 * float(r_in(zero)[0] + r_out(zero)[0]), 0.0),
    )


def _multiply_connected_planar(params: typing.Mapping[str, typing.Any]) -> Domain:
    outer = float(params["outer"])
    holes = [
        (np.asarray(h["center"], dtype=np.float64), float(h["radius"]))
        for h in params.get("holes", [])
    ]
    _require(outer > 0, f"Degenerate outer radius: {outer}")
    for i, (c, r) in enumerate(holes):
        _require(r > 0, f"Degenerate hole radius: {r}")
        _require(
            float(np.linalg.norm(c)) + r < outer, f"Hole {i} is not interior: {c}"
        )
        for k in range(i):
            other_c, other_r = holes[k]
            _require(
                float(np.linalg.norm(c - other_c)) > r + other_r,
                f"Holes {k} and {i} overlap",
            )
    origin = np.zeros(2)

    def implicit(p: Array) -> Array:
        value = _radius(p, origin) - outer
        for c, r in holes:
            value = np.maximum(value, r - _radius(p, c))
        return value

    def mirrored(axis: int) -> bool:
        flip = np.ones(2)
        flip[axis] = -1.0
        return all(
            any(
                np.allclose(c * flip, oc, atol=1e-12) and abs(r - orr) < 1e-12
                for oc, orr in holes
            )
            for c, r in holes
        )

    candidates = [
        np.array([outer * s * math.cos(t), outer * s * math.sin(t)])
        for s in (0.0, 0.25, 0.5, 0.75, 0.9)
        for t in np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)
    ]
    values = implicit(np.asarray(candidates))
    witness = candidates[int(np.argmin(values))]
    return Domain(
        dimension=2,
        implicit_fn=implicit,
        bbox=((-outer, outer), (-outer, outer)),
        periodic=(False, False),
        boundary_components=1 + len(holes),
        label=f"disk(r={outer:g}) minus {len(holes)} holes",
        witness=(float(witness[0]), float(witness[1])),
        symmetries=tuple(reflection(k) for k in range(2) if mirrored(k)),
        distance_fn=lambda p: np.maximum(implicit(p), 0.0),
    )


def _box(params: typing.Mapping[str, typing.Any]) -> Domain:
    lo = np.asarray(params["lo"], dtype=np.float64)
    hi = np.asarray(params["hi"], dtype=np.float64)
    _require(lo.shape == hi.shape and len(lo) in (2, 3), "Box corners mismatch")
    _require(bool(np.all(lo < hi)), f"Degenerate box: {lo} to {hi}")

    def outside(p: Array) -> Array:
        return np.maximum(lo - p, p - hi)

    return Domain(
        dimension=len(lo),
        implicit_fn=lambda p: np.max(outside(p), axis=1),
        bbox=tuple((float(a), float(b)) for a, b in zip(lo, hi)),
        periodic=(False,) * len(lo),
        boundary_components=1,
        label=f"box({lo.tolist()}, {hi.tolist()})",
        witness=tuple(0.5 * (lo + hi)),
        symmetries=tuple(
            reflection(k) for k in range(len(lo)) if lo[k] == -hi[k]
        ),
        distance_fn=lambda p: np.asarray(
            np.linalg.norm(np.maximum(outside(p), 0.0), axis=1)
        ),
    )


def _truncated_cylinder(params: typing.Mapping[str, typing.Any]) -> Domain:
    half_length = float(params["half_length"])
    _require(half_length > 0, f"Degenerate cylinder length: {half_length}")
    return Domain(
        dimension=2,
        implicit_fn=lambda p: np.abs(p[:, 0]) - half_length,
        bbox=((-half_length, half_length), (0.0, 2.0 * math.pi)),
        periodic=(False, True),
        boundary_components=2,
        label=f"cylinder(L={half_length:g})",
        witness=(0.0, math.pi),
        symmetries=(reflection(0),),
        distance_fn=lambda p: np.maximum(np.abs(p[:, 0]) - half_length, 0.0),
    )


def torus_polynomial(x1: Array, x2: Array, rings: int) -> Array:
    q = np.ones_like(x1)
    for k in range(rings):
        q = q * ((x1 - 2 * k - 1) ** 2 + x2**2 - 1.0) ** 2
    return q


def torus_domain(rings: int, a: float, mirrored: bool = False) -> Domain:
    """
    Tubular neighbourhood {Q(x1, x2) + x3^2 < a, x1 > 0} of `rings` unit circles
    centred at (2k+1, 0). With `mirrored` the reflected copy in x1 < 0 is added,
    which puts the origin inside the tube where the innermost circles touch.
    """
    if rings < 1:
        raise ParameterError(f"Torus needs at least one ring: {rings}")
    if not 0 < a < 0.25:
        raise ParameterError(f"Torus thickness must lie in (0, 1/4): {a}")

    if mirrored:

        def implicit(p: Array) -> Array:
            return np.asarray(
                torus_polynomial(np.abs(p[:, 0]), p[:, 1], rings) + p[:, 2] ** 2 - a
            )

    else:

        def implicit(p: Array) -> Array:
            return np.maximum(
                torus_polynomial(p[:, 0], p[:, 1], rings) + p[:, 2] ** 2 - a, -p[:, 0]
            )

    reach = math.sqrt(1.0 + math.sqrt(a)) + 0.05
    x1_hi = 2 * (rings - 1) + 1 + reach
    symmetries = (reflection(1), reflection(2))
    if mirrored:
        symmetries = (reflection(0),) + symmetries
    return Domain(
        dimension=3,
        implicit_fn=implicit,
        bbox=(
            (-x1_hi if mirrored else 0.0, x1_hi),
            (-reach, reach),
            (-math.sqrt(a) - 0.05, math.sqrt(a) + 0.05),
        ),
        periodic=(False, False, False),
        boundary_components=1,
        label=f"torus(N={rings}, a={a:g}{', mirrored' if mirrored else ''})",
        witness=(2.0, 0.0, 0.0),
        symmetries=symmetries,
    )


def make_domain(kind: str, params: typing.Mapping[str, typing.Any]) -> Domain:
    if kind == "disk":
        return _disk(params)
    if kind == "annulus":
        return _annulus(params)
    if kind == "multiply_connected_planar":
        return _multiply_connected_planar(params)
    if kind == "ball":
        return _ball(params)
    if kind == "box":
        return _box(params)
    if kind == "truncated_cylinder":
        return _truncated_cylinder(params)
    if kind == "torus_tube":
        return torus_domain(
            int(params["rings"]),
            float(params["a"]),
            mirrored=bool(params.get("mirrored", False)),
        )
    raise ParameterError(f"Unknown domain kind: {kind}")


def boundary_samples(domain: Domain, spacing: float) -> Array:
    """
    Points on the zero set of the implicit function, found by linear root
    finding along the edges of a lattice with the given spacing.
    """
    axes = []
    for (lo, hi), periodic in zip(domain.bbox, domain.periodic):
        if periodic:
            count = max(int(round((hi - lo) / spacing)), 8)
            axes.append(lo + (np.arange(count) + 0.5) * (hi - lo) / count)
        else:
            count = int(math.ceil((hi - lo) / spacing)) + 5
            centre = 0.5 * (lo + hi)
            axes.append(centre + (np.arange(count) - 0.5 * (count - 1)) * spacing)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    values = domain.implicit(nodes).reshape(mesh[0].shape)
    inside = values < 0.0
    found = []
    for axis, periodic in enumerate(domain.periodic):
        nb_values = np.roll(values, -1, axis=axis)
        nb_inside = np.roll(inside, -1, axis=axis)
        crossing = inside != nb_inside
        if not periodic:
            index = [slice(None)] * domain.dimension
            index[axis] = -1
            crossing[tuple(index)] = False
        idx = np.nonzero(crossing)
        start = np.stack([m[idx] for m in mesh], axis=1)
        step = np.zeros(domain.dimension)
        step[axis] = axes[axis][1] - axes[axis][0]
        v0, v1 = values[idx], nb_values[idx]
        t = np.clip(v0 / (v0 - v1), 0.0, 1.0)
        found.append(start + t[:, None] * step)
    samples = np.concatenate(found, axis=0) if found else np.zeros((0, domain.dimension))
    if len(samples) == 0:
        raise ParameterError(f"Domain {domain.label} has no resolvable boundary")
    return samples


def _implicit_gradient(domain: Domain, points: Array) -> Array:
    grad = np.zeros_like(points)
    for k in range(domain.dimension):
        offset = np.zeros(domain.dimension)
        offset[k] = _FD_STEP
        grad[:, k] = (
            domain.implicit(points + offset) - domain.implicit(points - offset)
        ) / (2 * _FD_STEP)
    return grad


@dataclass(frozen=True, eq=False)
class DistanceField:
    """
    Euclidean distance to the closed domain, zero inside. Uses the domain's
    closed form when it declares one, otherwise a KD-tree of boundary samples
    refined by a Newton closest-point projection.
    """

    domain: Domain
    spacing: typing.Optional[float] = None

    @functools.cached_property
    def _sample_spacing(self) -> float:
        if self.spacing is not None:
            return self.spacing
        extent = max(hi - lo for lo, hi in self.domain.bbox)
        return extent / (400.0 if self.domain.dimension == 2 else 160.0)

    @functools.cached_property
    def _tree(self) -> typing.Any:
        samples = boundary_samples(self.domain, self._sample_spacing)
        logger.debug(
            "Boundary of %s sampled at %d points", self.domain.label, len(samples)
        )
        return spatial.cKDTree(samples)

    def value_and_gradient(
        self, points: npt.ArrayLike, certified_beyond: float = math.inf
    ) -> tuple[Array, Array]:
        """
        Points whose KD-tree distance exceeds `certified_beyond` by more than the
        sample spacing skip the Newton projection.
        """
        p = as_points(points, self.domain.dimension)
        if self.domain.distance_fn is not None:
            return self._closed_form(p)

        dist = np.zeros(len(p))
        grad = np.zeros_like(p)
        outside = ~self.domain.contains(p)
        if not np.any(outside):
            return dist, grad
        q = p[outside]
        d_kd, nearest = self._tree.query(q)
        foot = np.asarray(self._tree.data)[nearest]
        refine = d_kd - self._sample_spacing < certified_beyond
        if np.any(refine):
            projected = self._project(q[refine], foot[refine])
            d_new = np.linalg.norm(q[refine] - projected, axis=1)
            better = d_new <= d_kd[refine] + self._sample_spacing
            sub = np.nonzero(refine)[0][better]
            foot[sub] = projected[better]
            d_kd[sub] = d_new[better]
        direction = q - foot
        norms = np.linalg.norm(direction, axis=1)
        safe = norms > 0
        direction[safe] /= norms[safe, None]
        dist[outside] = d_kd
        grad[outside] = direction
        return dist, grad

    def value(self, points: npt.ArrayLike) -> Array:
        return self.value_and_gradient(points)[0]

    def _closed_form(self, p: Array) -> tuple[Array, Array]:
        fn = self.domain.distance_fn
        assert fn is not None
        dist = fn(p)
        grad = np.zeros_like(p)
        for k in range(self.domain.dimension):
            offset = np.zeros(self.domain.dimension)
            offset[k] = _FD_STEP
            grad[:, k] = (fn(p + offset) - fn(p - offset)) / (2 * _FD_STEP)
        return dist, grad

    def _project(self, points: Array, start: Array, iterations: int = 30) -> Array:
        foot = start.copy()
        for _ in range(iterations):
            f = self.domain.implicit(foot)
            g = _implicit_gradient(self.domain, foot)
            norm2 = np.maximum(np.sum(g * g, axis=1), 1e-300)
            foot = foot - (f / norm2)[:, None] * g
            normal = g / np.sqrt(norm2)[:, None]
            offset = points - foot
            foot = foot + offset - np.sum(offset * normal, axis=1)[:, None] * normal
        f = self.domain.implicit(foot)
        g = _implicit_gradient(self.domain, foot)
        norm2 = np.maximum(np.sum(g * g, axis=1), 1e-300)
        return np.asarray(foot - (f / norm2)[:, None] * g)


def symmetrize(
    metric: ConformalMetric,
    symmetries: typing.Sequence[Symmetry],
    rotation_samples: int = ROTATION_SAMPLES,
) -> ConformalMetric:
    """Average the factor over the group generated by `symmetries`."""
    elements = group_elements(symmetries, metric.dimension, rotation_samples)
    count = float(len(elements))

    def factor(p: Array) -> Array:
        total = np.zeros(len(p))
        for g in elements:
            total = total + metric.factor(p @ g.T)
        return total / count

    def gradient(p: Array) -> Array:
        total = np.zeros_like(p)
        for g in elements:
            total = total + metric.factor_gradient(p @ g.T) @ g
        return total / count

    return ConformalMetric(
        dimension=metric.dimension,
        factor=factor,
        factor_gradient=gradient,
        symmetries=tuple(symmetries),
        label=f"{metric.label}, symmetrized",
    )


def conformal_factor_build(
    domain: Domain, j: float, distance: typing.Optional[DistanceField] = None
) -> ConformalMetric:
    """
    Factor equal to 1 on the domain and to j where the distance to the domain
    exceeds 1/j, with a quintic smoothstep transition across the shell.
    """
    if j < 2:
        raise ParameterError(f"Conformal schedule index must be at least 2: {j}")
    dist = distance if distance is not None else DistanceField(domain)
    shell = 1.0 / j

    def factor(p: Array) -> Array:
        d, _ = dist.value_and_gradient(p, certified_beyond=shell)
        return np.asarray(1.0 + (j - 1.0) * smoothstep(j * d))

    def gradient(p: Array) -> Array:
        d, grad_d = dist.value_and_gradient(p, certified_beyond=shell)
        scale = (j - 1.0) * smoothstep_derivative(j * d) * j
        return np.asarray(scale[:, None] * grad_d)

    metric = ConformalMetric(
        dimension=domain.dimension,
        factor=factor,
        factor_gradient=gradient,
        symmetries=domain.symmetries,
        label=f"conformal(j={j:g}) over {domain.label}",
    )
    if domain.symmetries:
        return symmetrize(metric, domain.symmetries)
    return metric


def axisymmetric_bump_metric(
    amplitude: float, center: float, ring_radius: float, width: float
) -> ConformalMetric:
    """
    3D factor 1 + A exp(-(x1-c)^2/w^2 - (r^2-r0^2)^2/w^4) with r the distance
    to the x1-axis; smooth across the axis for every r0.
    """
    if amplitude < 0 or width <= 0:
        raise ParameterError(f"Invalid bump: amplitude {amplitude}, width {width}")

    def bump(p: Array) -> tuple[Array, Array]:
        r2 = p[:, 1] ** 2 + p[:, 2] ** 2
        ring = r2 - ring_radius**2
        exponent = (p[:, 0] - center) ** 2 / width**2 + ring**2 / width**4
        return amplitude * np.exp(-exponent), ring

    def factor(p: Array) -> Array:
        return 1.0 + bump(p)[0]

    def gradient(p: Array) -> Array:
        b, ring = bump(p)
        grad = np.zeros_like(p)
        grad[:, 0] = -2.0 * (p[:, 0] - center) / width**2 * b
        grad[:, 1] = -4.0 * ring * p[:, 1] / width**4 * b
        grad[:, 2] = -4.0 * ring * p[:, 2] / width**4 * b
        return grad

    return ConformalMetric(
        dimension=3,
        factor=factor,
        factor_gradient=gradient,
        symmetries=(axis_rotation(0), reflection(1), reflection(2)),
        label=(
            f"bump(A={amplitude:.3g}, c={center:.3g}, "
            f"r0={ring_radius:.3g}, w={width:.3g})"
        ),
    )


def random_axisymmetric_bump(
    rng: np.random.Generator, clearance: float = 1.0
) -> ConformalMetric:
    """A bump metric whose support stays `clearance` away from the origin."""
    while True:
        amplitude = float(rng.uniform(0.5, 2.0))
        width = float(rng.uniform(0.25, 0.5))
        center = float(rng.uniform(-1.5, 1.5))
        ring_radius = float(rng.uniform(0.0, 1.2))
        if math.hypot(center, ring_radius) >= clearance + 2.0 * width:
            return axisymmetric_bump_metric(amplitude, center, ring_radius, width)


def symmetry_defect(
    metric: ConformalMetric,
    rng: np.random.Generator,
    count: int = 1000,
    scale: float = 2.0,
) -> float:
    """Largest |factor(s(x)) - factor(x)| over declared symmetries s."""
    points = rng.uniform(-scale, scale, size=(count, metric.dimension))
    base = metric.factor(points)
    worst = 0.0
    for s in metric.symmetries:
        if s.kind == SymmetryKind.REFLECTION:
            mats = [s.matrix(metric.dimension)]
        else:
            mats = [
                s.matrix(metric.dimension, float(t))
                for t in rng.uniform(0.0, 2.0 * math.pi, size=8)
            ]
        for m in mats:
            worst = max(worst, float(np.max(np.abs(metric.factor(points @ m.T) - base))))
    return worst


def oracle_cylinder(points: npt.ArrayLike) -> tuple[Array, Array]:
    """
    Green's function -(1/4pi) log(cosh x - cos theta) of the flat cylinder
    R x S^1 with pole at (0, 0), and its gradient.
    """
    p = as_points(points, 2)
    x, theta = p[:, 0], p[:, 1]
    denominator = np.cosh(x) - np.cos(theta)
    if np.any(denominator <= 0.0):
        raise ParameterError("Cylinder oracle evaluated at the pole")
    value = -np.log(denominator) / (4.0 * math.pi)
    grad = np.stack([np.sinh(x), np.sin(theta)], axis=1)
    grad = -grad / (4.0 * math.pi * denominator[:, None])
    return value, grad


def sphere_area(dimension: int) -> float:
    """|S^(n-1)|."""
    return 2.0 * math.pi ** (dimension / 2.0) / math.gamma(dimension / 2.0)


def radial_annulus_coefficients(dimension: int, outer: float) -> tuple[float, float]:
    """
    (A, B) of the radial solution A + B/r (3D) or A + B log r (2D) equal to
    1/(|S^(n-1)| R^(n-2)) at radius 1/R and to 0 at radius R.
    """
    inner_value = 1.0 / (sphere_area(dimension) * outer ** (dimension - 2))
    if dimension == 2:
        basis = math.log
    else:
        basis = lambda r: r ** (2 - dimension)
    b = inner_value / (basis(1.0 / outer) - basis(outer))
    return -b * basis(outer), b


def oracle_radial(
    kind: str, params: typing.Mapping[str, typing.Any], r: npt.ArrayLike
) -> Array:
    dimension = int(params.get("dimension", 3))
    radius = np.asarray(r, dtype=np.float64)
    if kind == "ball_center":
        outer = float(params["radius"])
        if np.any(radius <= 0) or np.any(radius > outer):
            raise ParameterError(f"Radius outside the ball: {r}")
        if dimension == 2:
            return np.asarray(-np.log(radius / outer) / (2.0 * math.pi))
        return np.asarray(
            (radius ** (2 - dimension) - outer ** (2 - dimension))
            / ((dimension - 2) * sphere_area(dimension))
        )
    if kind == "spherical_annulus":
        outer = float(params["R"])
        if np.any(radius < 1.0 / outer) or np.any(radius > outer):
            raise ParameterError(f"Radius outside the annulus: {r}")
        a, b = radial_annulus_coefficients(dimension, outer)
        if dimension == 2:
            return np.asarray(a + b * np.log(radius))
        return np.asarray(a + b * radius ** (2 - dimension))
    raise ParameterError(f"Unknown radial oracle: {kind}")


class OracleKind(enum.Enum):
    CYLINDER = "cylinder"
    DISK = "disk"
    BALL = "ball"
    RADIAL_ANNULUS = "radial_annulus"


@dataclass(frozen=True)
class AnalyticOracle:
    kind: OracleKind
    params: dict[str, typing.Any] = field(default_factory=dict)

    def value(self, points: npt.ArrayLike) -> Array:
        return self.evaluate(points)[0]

    def gradient(self, points: npt.ArrayLike) -> Array:
        return self.evaluate(points)[1]

    def evaluate(self, points: npt.ArrayLike) -> tuple[Array, Array]:
        if self.kind == OracleKind.CYLINDER:
            return oracle_cylinder(points)
        if self.kind == OracleKind.DISK:
            return self._disk(as_points(points, 2))
        dimension = 3 if self.kind == OracleKind.BALL else int(
            self.params.get("dimension", 3)
        )
        p = as_points(points, dimension)
        r = np.linalg.norm(p, axis=1)
        if self.kind == OracleKind.BALL:
            value = oracle_radial("ball_center", {"radius": self.params["radius"]}, r)
            dr = -1.0 / (4.0 * math.pi * r**2)
        else:
            value = oracle_radial("spherical_annulus", self.params, r)
            _, b = radial_annulus_coefficients(dimension, float(self.params["R"]))
            dr = b / r if dimension == 2 else (2 - dimension) * b * r ** (1 - dimension)
        return value, (dr / r)[:, None] * p

    def _disk(self, p: Array) -> tuple[Array, Array]:
        radius = float(self.params.get("radius", 1.0))
        pole = np.asarray(self.params.get("pole", (0.0, 0.0)), dtype=np.float64)
        d = p - pole
        r2 = np.sum(d * d, axis=1)
        if np.any(r2 == 0.0):
            raise ParameterError("Disk oracle evaluated at the pole")
        pole_norm2 = float(pole @ pole)
        if pole_norm2 == 0.0:
            value = -0.5 * np.log(r2 / radius**2) / (2.0 * math.pi)
            return value, -d / (2.0 * math.pi * r2[:, None])
        image = radius**2 * pole / pole_norm2
        e = p - image
        e2 = np.sum(e * e, axis=1)
        value = -(
            0.5 * np.log(r2) - 0.5 * np.log(e2) - 0.5 * math.log(pole_norm2 / radius**2)
        ) / (2.0 * math.pi)
        grad = -(d / r2[:, None] - e / e2[:, None]) / (2.0 * math.pi)
        return value, grad


def distance_to_domain(domain: Domain, points: npt.ArrayLike) -> Array:
    return DistanceField(domain).value(points)


def oracle_disk(
    points: npt.ArrayLike, pole: typing.Sequence[float], radius: float = 1.0
) -> tuple[Array, Array]:
    """Dirichlet Green's function of the disk by the image-charge formula."""
    oracle = AnalyticOracle(OracleKind.DISK, {"radius": radius, "pole": tuple(pole)})
    return oracle.evaluate(points)


def oracle_ball(points: npt.ArrayLike, radius: float = 1.0) -> tuple[Array, Array]:
    """Dirichlet Green's function of the 3D ball with the pole at its centre."""
    return AnalyticOracle(OracleKind.BALL, {"radius": radius}).evaluate(points)
