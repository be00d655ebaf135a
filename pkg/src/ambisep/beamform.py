"""SH-domain beamformers and beam-pattern analysis.

Two signal-independent designs (max-DI, max-rE) steer a fixed pattern to a
target direction; the signal-dependent max-SDR beamformer is the
least-squares oracle given the true source signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .encode import AmbisonicsBuffer, MonoBuffer
from .sh import (
    Direction,
    available_t_designs,
    channel_orders,
    legendre,
    n_channels,
    sh_eval,
    sh_matrix,
    t_design_vectors,
    uniform_directions,
    unit_vectors,
)

LABELS = ("max_di", "max_re", "max_sdr", "custom")
METRIC_CAP_DB = 100.0
DEFAULT_RIDGE = 1e-10  # relative to tr(C)/(N+1)^2


@dataclass
class BeamWeights:
    order: int
    d: np.ndarray
    label: str = "custom"
    target: Direction | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        if self.d.shape != (n_channels(self.order),):
            raise ValueError(
                f"order {self.order} needs {n_channels(self.order)} weights, got {self.d.shape}"
            )
        if not np.all(np.isfinite(self.d)):
            raise ValueError("beam weights must be finite")
        if self.label not in LABELS:
            raise ValueError(f"unknown beamformer label {self.label!r}")


def _as_array(x) -> np.ndarray:
    if isinstance(x, MonoBuffer):
        return x.samples
    return np.asarray(x, dtype=float)


def max_re_order_weights(order: int) -> np.ndarray:
    """Per-order max-rE taper w_n = P_n(cos(137.9 deg / (N + 1.51)))."""
    x = math.cos(math.radians(137.9) / (order + 1.51))
    return np.array([legendre(n, x) for n in range(order + 1)])


def max_di_weights(order: int, target: Direction) -> BeamWeights:
    return BeamWeights(order, sh_eval(order, target), "max_di", target)


def max_re_weights(order: int, target: Direction) -> BeamWeights:
    taper = max_re_order_weights(order)[channel_orders(order)]
    return BeamWeights(order, taper * sh_eval(order, target), "max_re", target)


def steer(label: str, order: int, target: Direction) -> BeamWeights:
    """Signal-independent beamformer by name (``max_di``/``max_re``, dashes allowed)."""
    key = label.replace("-", "_").lower()
    if key == "max_di":
        return max_di_weights(order, target)
    if key == "max_re":
        return max_re_weights(order, target)
    raise ValueError(f"unknown signal-independent beamformer {label!r}")


def apply_beamformer(w: BeamWeights, mix: AmbisonicsBuffer) -> MonoBuffer:
    if w.order != mix.order:
        raise ValueError(f"weights are order {w.order} but mixture is order {mix.order}")
    if mix.convention != "orthonormal":
        raise ValueError("beamforming expects an orthonormal-convention mixture")
    return MonoBuffer(w.d @ mix.data, mix.sample_rate)


def pattern_values(w: BeamWeights, azimuth, zenith) -> np.ndarray:
    """g(theta) = d^T y_N(theta) for arrays of directions."""
    return sh_matrix(w.order, azimuth, zenith) @ w.d


def beam_pattern(w: BeamWeights, direction: Direction) -> float:
    return float(sh_eval(w.order, direction) @ w.d)


def quadrature_points(degree: int) -> np.ndarray:
    """Unit vectors of the smallest embedded t-design with t >= degree."""
    for t in available_t_designs():
        if t >= degree:
            return t_design_vectors(t)
    raise ValueError(f"no embedded t-design of degree >= {degree}")


def _pattern_on_vectors(w: BeamWeights, vecs: np.ndarray) -> np.ndarray:
    az = np.arctan2(vecs[:, 1], vecs[:, 0])
    zen = np.arccos(np.clip(vecs[:, 2], -1.0, 1.0))
    return pattern_values(w, az, zen)


def peak_direction(w: BeamWeights, n_search: int = 20000) -> Direction:
    """Direction of maximal |g|.

    Labelled designs peak at their target; anything else is located on a
    dense random set and refined with a local optimizer.
    """
    if w.target is not None and w.label in ("max_di", "max_re"):
        return w.target
    rng = np.random.default_rng(0)
    az, zen = uniform_directions(n_search, rng)
    g = pattern_values(w, az, zen)
    i = int(np.argmax(np.abs(g)))

    def cost(p):
        vec = unit_vectors(p[0], p[1])
        return -float(_pattern_on_vectors(w, vec[None, :])[0] ** 2)

    res = optimize.minimize(cost, x0=[az[i], zen[i]], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
    vec = unit_vectors(res.x[0], res.x[1])
    return Direction.from_vector(vec)


def directivity_index(w: BeamWeights, degree: int | None = None) -> float:
    """Directivity index in dB, with the pattern power integrated by t-design."""
    if degree is None:
        degree = max(2 * w.order, 1)
    vecs = quadrature_points(degree)
    g = _pattern_on_vectors(w, vecs)
    mean_power = float(np.mean(g * g))
    if mean_power <= 0.0:
        raise ValueError("beam pattern has zero power")
    g_peak = beam_pattern(w, peak_direction(w))
    # 4 pi g^2 / int g^2 with int g^2 = 4 pi mean(g^2)
    return 10.0 * math.log10(g_peak * g_peak / mean_power)


def re_vector(w: BeamWeights, degree: int | None = None) -> np.ndarray:
    """Energy vector: power-weighted mean direction of the pattern."""
    if degree is None:
        degree = 2 * w.order + 1
    vecs = quadrature_points(degree)
    g2 = _pattern_on_vectors(w, vecs) ** 2
    total = float(np.sum(g2))
    if total <= 0.0:
        raise ValueError("beam pattern has zero power")
    return (g2 @ vecs) / total


def side_lobe_level(w: BeamWeights, n_samples: int = 10000, seed: int = 0) -> float:
    """Highest side lobe relative to the main-lobe peak, in dB.

    The main lobe extends from the peak to the first sign change of the
    pattern along increasing angular distance; returns ``-inf`` when the
    pattern never changes sign.
    """
    rng = np.random.default_rng(seed)
    az, zen = uniform_directions(n_samples, rng)
    peak = peak_direction(w)
    g_peak = beam_pattern(w, peak)
    g = pattern_values(w, az, zen) * math.copysign(1.0, g_peak)
    gamma = np.arccos(np.clip(unit_vectors(az, zen) @ peak.unit_vector, -1.0, 1.0))
    order = np.argsort(gamma)
    g_sorted = g[order]
    outside = np.nonzero(g_sorted <= 0.0)[0]
    if outside.size == 0:
        return -math.inf
    side = np.max(np.abs(g_sorted[outside[0]:]))
    return 20.0 * math.log10(side / abs(g_peak))


def max_sdr_weights(
    mix: AmbisonicsBuffer, reference, ridge: float = DEFAULT_RIDGE
) -> BeamWeights:
    """Least-squares (MMSE) weights d = (C + ridge')^-1 X^T s.

    ``ridge`` is relative to the mean channel power tr(C)/(N+1)^2. When
    ``ridge`` is 0 and C is singular (fewer sources than channels) the
    minimum-norm least-squares solution is returned; ``meta`` records which
    path was taken.
    """
    s = _as_array(reference)
    X = mix.data
    if s.shape[0] != X.shape[1]:
        raise ValueError("reference and mixture lengths differ")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    n_ch = X.shape[0]
    C = X @ X.T
    b = X @ s
    meta = {"ridge": ridge, "min_norm": False}
    if not np.any(b):
        return BeamWeights(mix.order, np.zeros(n_ch), "max_sdr", meta=meta)
    scale = float(np.trace(C)) / n_ch
    if scale <= 0.0:
        raise ValueError("mixture is silent")
    if ridge == 0.0:
        eig = linalg.eigvalsh(C)
        if eig[0] <= 1e-12 * eig[-1]:
            d = linalg.lstsq(X.T, s, cond=1e-10)[0]
            meta["min_norm"] = True
            return BeamWeights(mix.order, d, "max_sdr", meta=meta)
    A = C + ridge * scale * np.eye(n_ch)
    d = linalg.cho_solve(linalg.cho_factor(A, lower=True), b)
    return BeamWeights(mix.order, d, "max_sdr", meta=meta)


def sdr(reference, estimate) -> float:
    """Plain (scale-dependent) SDR in dB, capped at +100 dB."""
    s = _as_array(reference)
    e = _as_array(estimate)
    if s.shape != e.shape:
        raise ValueError("reference and estimate lengths differ")
    ref_energy = float(s @ s)
    if ref_energy == 0.0:
        raise ValueError("zero reference signal")
    residual = s - e
    res_energy = float(residual @ residual)
    if res_energy <= ref_energy * 10 ** (-METRIC_CAP_DB / 10):
        return METRIC_CAP_DB
    return min(METRIC_CAP_DB, 10.0 * math.log10(ref_energy / res_energy))
