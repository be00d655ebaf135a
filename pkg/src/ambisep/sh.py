"""Real spherical harmonics, direction geometry and spherical point sets.

Conventions used throughout the package:

* directions are (azimuth, zenith) in radians, azimuth in [-pi, pi),
  zenith measured from +z in [0, pi];
* real SH are orthonormal on the unit sphere (N3D with the 1/sqrt(4 pi)
  folded in), ACN channel ordering ``n**2 + n + m``;
* the associated Legendre functions carry no Condon-Shortley phase, so
  Y_1^1 points toward +x, Y_1^-1 toward +y and Y_1^0 toward +z.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterator, Sequence

import numpy as np
from scipy.special import gammaln

MAX_ORDER = 10

_TWO_PI = 2.0 * math.pi


def _wrap_azimuth(azimuth: float) -> float:
    if -math.pi <= azimuth < math.pi:
        return azimuth
    wrapped = math.fmod(azimuth + math.pi, _TWO_PI)
    if wrapped < 0.0:
        wrapped += _TWO_PI
    wrapped -= math.pi
    # fmod can land exactly on +pi after the shift back
    if wrapped >= math.pi:
        wrapped -= _TWO_PI
    return wrapped


@dataclass(frozen=True)
class Direction:
    """A point on the unit sphere.

    The azimuth is wrapped into [-pi, pi) on construction. A zenith outside
    [0, pi] is rejected rather than clamped.
    """

    azimuth: float
    zenith: float

    def __post_init__(self):
        az = float(self.azimuth)
        zen = float(self.zenith)
        if not (math.isfinite(az) and math.isfinite(zen)):
            raise ValueError(f"non-finite direction ({az}, {zen})")
        if zen < 0.0 or zen > math.pi:
            raise ValueError(f"zenith {zen} outside [0, pi]")
        object.__setattr__(self, "azimuth", _wrap_azimuth(az))
        object.__setattr__(self, "zenith", zen)

    @classmethod
    def from_degrees(cls, azimuth_deg: float, zenith_deg: float) -> "Direction":
        return cls(math.radians(azimuth_deg), math.radians(zenith_deg))

    @classmethod
    def parse(cls, text: str) -> "Direction":
        """Parse the ``"az_deg,zen_deg"`` form used on the command line."""
        parts = text.split(",")
        if len(parts) != 2:
            raise ValueError(f"expected 'azimuth,zenith' in degrees, got {text!r}")
        return cls.from_degrees(float(parts[0]), float(parts[1]))

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "Direction":
        x, y, z = (float(v) for v in vec)
        r = math.sqrt(x * x + y * y + z * z)
        if r == 0.0:
            raise ValueError("zero vector has no direction")
        return cls(math.atan2(y, x), math.acos(min(1.0, max(-1.0, z / r))))

    @property
    def unit_vector(self) -> np.ndarray:
        st = math.sin(self.zenith)
        return np.array(
            [math.cos(self.azimuth) * st, math.sin(self.azimuth) * st, math.cos(self.zenith)]
        )

    def degrees(self) -> tuple[float, float]:
        return math.degrees(self.azimuth), math.degrees(self.zenith)

    def format(self) -> str:
        az, zen = self.degrees()
        return f"{az:.6g},{zen:.6g}"


@dataclass(frozen=True)
class DirectionSet:
    """Ordered collection of directions.

    ``shape`` is set for equiangular grids as ``(n_zen, n_az)``; the
    directions are then stored zenith-major.
    """

    directions: tuple[Direction, ...]
    kind: str = "custom"
    shape: tuple[int, int] | None = None
    _az: np.ndarray = field(init=False, repr=False, compare=False)
    _zen: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dirs = tuple(self.directions)
        if not dirs:
            raise ValueError("a DirectionSet needs at least one direction")
        if self.kind not in ("t_design", "equiangular_grid", "custom"):
            raise ValueError(f"unknown DirectionSet kind {self.kind!r}")
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "_az", np.array([d.azimuth for d in dirs]))
        object.__setattr__(self, "_zen", np.array([d.zenith for d in dirs]))

    def __len__(self) -> int:
        return len(self.directions)

    def __iter__(self) -> Iterator[Direction]:
        return iter(self.directions)

    def __getitem__(self, i: int) -> Direction:
        return self.directions[i]

    @property
    def azimuths(self) -> np.ndarray:
        return self._az.copy()

    @property
    def zeniths(self) -> np.ndarray:
        return self._zen.copy()

    @property
    def vectors(self) -> np.ndarray:
        return unit_vectors(self._az, self._zen)


def unit_vectors(azimuth, zenith) -> np.ndarray:
    """Unit vectors ``(Q, 3)`` for arrays of azimuth and zenith."""
    azimuth = np.asarray(azimuth, dtype=float)
    zenith = np.asarray(zenith, dtype=float)
    st = np.sin(zenith)
    return np.stack([np.cos(azimuth) * st, np.sin(azimuth) * st, np.cos(zenith)], axis=-1)


def acn(n: int, m: int) -> int:
    return n * n + n + m


def n_channels(order: int) -> int:
    return (order + 1) ** 2


def channel_orders(order: int) -> np.ndarray:
    """Order index n of every ACN channel up to ``order``."""
    return np.concatenate([np.full(2 * n + 1, n) for n in range(order + 1)])


def _legendre_table(order: int, x: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    # upward recurrences, Condon-Shortley phase omitted
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    table: dict[tuple[int, int], np.ndarray] = {(0, 0): np.ones_like(x)}
    for m in range(1, order + 1):
        table[(m, m)] = (2 * m - 1) * s * table[(m - 1, m - 1)]
    for m in range(0, order):
        table[(m + 1, m)] = (2 * m + 1) * x * table[(m, m)]
    for m in range(0, order + 1):
        for n in range(m + 2, order + 1):
            table[(n, m)] = (
                (2 * n - 1) * x * table[(n - 1, m)] - (n + m - 1) * table[(n - 2, m)]
            ) / (n - m)
    return table


def assoc_legendre(n: int, m: int, x):
    """Associated Legendre function P_n^m(x) without the Condon-Shortley phase."""
    if n < 0 or m < 0 or m > n:
        raise ValueError(f"need 0 <= m <= n, got n={n}, m={m}")
    xa = np.asarray(x, dtype=float)
    if np.any(np.abs(xa) > 1.0):
        raise ValueError("assoc_legendre argument outside [-1, 1]")
    out = _legendre_table(n, xa)[(n, m)]
    return float(out) if out.ndim == 0 else out


def legendre(n: int, x):
    """Legendre polynomial P_n(x) by the three-term recurrence."""
    if n < 0:
        raise ValueError("legendre degree must be >= 0")
    xa = np.asarray(x, dtype=float)
    p_prev, p = np.ones_like(xa), xa.copy()
    if n == 0:
        out = p_prev
    else:
        for k in range(1, n):
            p_prev, p = p, ((2 * k + 1) * xa * p - k * p_prev) / (k + 1)
        out = p
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=None)
def _normalization(order: int) -> np.ndarray:
    norms = np.empty(n_channels(order))
    for n in range(order + 1):
        for m in range(-n, n + 1):
            # sqrt((2n+1)/(4 pi) (n-|m|)!/(n+|m|)!), factor sqrt(2) for m != 0
            am = abs(m)
            log_ratio = gammaln(n - am + 1) - gammaln(n + am + 1)
            value = math.sqrt((2 * n + 1) / (4 * math.pi) * math.exp(log_ratio))
            if m != 0:
                value *= math.sqrt(2.0)
            norms[acn(n, m)] = value
    norms.flags.writeable = False
    return norms


def sh_matrix(order: int, azimuth, zenith) -> np.ndarray:
    """Real orthonormal SH up to ``order`` for arrays of directions.

    Returns
    -------
    Y : (Q, (order+1)**2) ndarray
        One ACN-ordered row per direction.
    """
    if order < 0 or order > MAX_ORDER:
        raise ValueError(f"SH order must be within 0..{MAX_ORDER}, got {order}")
    az = np.atleast_1d(np.asarray(azimuth, dtype=float))
    zen = np.atleast_1d(np.asarray(zenith, dtype=float))
    az, zen = np.broadcast_arrays(az, zen)
    table = _legendre_table(order, np.cos(zen))
    norms = _normalization(order)
    Y = np.empty(az.shape + (n_channels(order),))
    for n in range(order + 1):
        for m in range(-n, n + 1):
            am = abs(m)
            if m < 0:
                trig = np.sin(am * az)
            elif m == 0:
                trig = 1.0
            else:
                trig = np.cos(m * az)
            Y[..., acn(n, m)] = norms[acn(n, m)] * table[(n, am)] * trig
    return Y


def sh_eval(order: int, direction: Direction) -> np.ndarray:
    """SH vector y_N(direction) in ACN order."""
    return sh_matrix(order, direction.azimuth, direction.zenith)[0]


def great_circle(a: Direction, b: Direction) -> float:
    """Angle between two directions in radians, in [0, pi]."""
    dot = float(np.dot(a.unit_vector, b.unit_vector))
    return math.acos(min(1.0, max(-1.0, dot)))


def angles_between(vectors: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Great-circle angle from each row of ``vectors`` to ``reference``."""
    return np.arccos(np.clip(np.asarray(vectors) @ np.asarray(reference), -1.0, 1.0))


@lru_cache(maxsize=1)
def _t_design_table() -> dict[int, np.ndarray]:
    raw = resources.files("ambisep").joinpath("data/t_designs.json").read_text()
    designs = json.loads(raw)["designs"]
    return {int(t): np.asarray(points, dtype=float) for t, points in designs.items()}


def available_t_designs() -> list[int]:
    return sorted(_t_design_table())


def t_design_vectors(t: int) -> np.ndarray:
    table = _t_design_table()
    if t not in table:
        raise ValueError(f"no embedded t-design for t={t}; available: {sorted(table)}")
    return table[t].copy()


def t_design(t: int) -> DirectionSet:
    """Minimal spherical t-design from the embedded Hardin-Sloane tables."""
    vecs = t_design_vectors(t)
    dirs = tuple(Direction.from_vector(v) for v in vecs)
    return DirectionSet(dirs, kind="t_design")


def equiangular_grid(n_az: int, n_zen: int) -> DirectionSet:
    """Regular azimuth/zenith grid.

    Azimuths start at -pi with spacing 2 pi / n_az; zeniths sit at the
    centers of ``n_zen`` equal bands so none touches a pole.
    """
    if n_az < 1 or n_zen < 1:
        raise ValueError("grid dimensions must be >= 1")
    az = -math.pi + _TWO_PI * np.arange(n_az) / n_az
    zen = math.pi * (np.arange(n_zen) + 0.5) / n_zen
    dirs = tuple(Direction(float(a), float(z)) for z in zen for a in az)
    return DirectionSet(dirs, kind="equiangular_grid", shape=(n_zen, n_az))


def uniform_directions(count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform random (azimuth, zenith) arrays."""
    az = rng.uniform(-math.pi, math.pi, size=count)
    zen = np.arccos(1.0 - 2.0 * rng.uniform(0.0, 1.0, size=count))
    return az, zen
