"""Separation metrics, test-set reports and direction maps.

SI-SDR measures the quality of one estimate. SSR (sources-to-silence
ratio) measures spatial selectivity: the energy a method predicts at the
true source directions relative to the energy it predicts at directions
where nothing is present.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .beamform import METRIC_CAP_DB, apply_beamformer, max_sdr_weights, steer
from .encode import MonoBuffer
from .scenes import RenderedScene
from .sh import Direction, DirectionSet, angles_between, equiangular_grid, t_design

SSR_EXCLUSION_DEG = 2.5
SSR_DESIGN = 8
BOOTSTRAP_RESAMPLES = 1000
GAP = "-"

Predictor = Callable[[Direction], MonoBuffer]


def _samples(x) -> np.ndarray:
    if isinstance(x, MonoBuffer):
        return x.samples
    return np.asarray(x, dtype=float)


def _cap(value: float) -> float:
    return max(-METRIC_CAP_DB, min(METRIC_CAP_DB, value))


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB, capped at +-100 dB.

    The reference is scaled by the least-squares coefficient
    ``alpha = est . s / |s|^2`` before comparing.
    """
    s = _samples(reference)
    e = _samples(estimate)
    if s.shape != e.shape:
        raise ValueError("reference and estimate lengths differ")
    ref_energy = float(s @ s)
    if ref_energy == 0.0:
        raise ValueError("zero reference signal")
    if not np.any(e):
        return -METRIC_CAP_DB
    alpha = float(e @ s) / ref_energy
    target = alpha * s
    residual = target - e
    num = float(target @ target)
    den = float(residual @ residual)
    if num == 0.0:
        return -METRIC_CAP_DB
    if den == 0.0:
        return METRIC_CAP_DB
    return _cap(10.0 * math.log10(num / den))


def ssr_directions(source_dirs: Sequence[Direction], eval_set: DirectionSet | None = None,
                   exclusion_deg: float = SSR_EXCLUSION_DEG) -> DirectionSet:
    """Evaluation directions farther than ``exclusion_deg`` from every source."""
    eval_set = t_design(SSR_DESIGN) if eval_set is None else eval_set
    vecs = eval_set.vectors
    keep = np.ones(len(eval_set), dtype=bool)
    for d in source_dirs:
        keep &= angles_between(vecs, d.unit_vector) > math.radians(exclusion_deg)
    if not np.any(keep):
        raise ValueError("every evaluation direction lies within the exclusion radius")
    return DirectionSet([eval_set[i] for i in np.nonzero(keep)[0]], kind=eval_set.kind)


def ssr(predict: Predictor, source_dirs: Sequence[Direction], eval_set: DirectionSet | None = None,
        exclusion_deg: float = SSR_EXCLUSION_DEG) -> float:
    """Sources-to-silence ratio in dB, capped at +-100 dB.

    Mean predicted energy at the source directions over mean predicted
    energy at the surviving evaluation directions.
    """
    if not source_dirs:
        raise ValueError("need at least one source direction")
    silent = ssr_directions(source_dirs, eval_set, exclusion_deg)
    num = _exact_mean([_energy(predict(d)) for d in source_dirs])
    den = _exact_mean([_energy(predict(d)) for d in silent])
    if den < 1e-20:
        return METRIC_CAP_DB
    if num == 0:
        return -METRIC_CAP_DB
    return _cap(10.0 * math.log10(float(num / den)))


def _energy(x) -> float:
    s = _samples(x)
    return float(s @ s)


def _exact_mean(values) -> Fraction:
    # rational arithmetic keeps equal energies exactly equal after averaging
    return sum((Fraction(v) for v in values), Fraction(0)) / len(values)


def bootstrap_median_ci(values, n_resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0,
                        level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap confidence interval of the median."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("no values")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(n_resamples, x.size))
    meds = np.median(x[idx], axis=1)
    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(meds, [tail, 100.0 - tail])
    return float(lo), float(hi)


@dataclass
class Method:
    """A separation method under evaluation.

    ``estimate(scene, k)`` returns the estimate for source ``k``;
    ``steered(scene)`` returns a predictor over arbitrary directions, or
    is None for oracle methods that need the ground truth.
    """

    label: str
    order: int
    estimate: Callable[[RenderedScene, int], MonoBuffer]
    steered: Callable[[RenderedScene], Predictor] | None = None


def beamformer_method(kind: str, order: int) -> Method:
    def predictor(scene):
        mix = scene.mixture.truncate_order(order)
        return lambda d: apply_beamformer(steer(kind, order, d), mix)

    return Method(kind.replace("_", "-"), order,
                  lambda scene, k: predictor(scene)(scene.directions[k]), predictor)


def max_sdr_method(order: int) -> Method:
    def estimate(scene, k):
        mix = scene.mixture.truncate_order(order)
        return apply_beamformer(max_sdr_weights(mix, scene.truths[k]), mix)

    return Method("max-sdr", order, estimate, None)


def network_method(model, label: str | None = None) -> Method:
    from .separator import separate

    order = model.config.ambi_order

    def predictor(scene):
        mix = scene.mixture.truncate_order(order)
        return lambda d: separate(model, mix, d)

    return Method(label or model.config.mode, order,
                  lambda scene, k: predictor(scene)(scene.directions[k]), predictor)


@dataclass
class MethodResult:
    label: str
    order: int
    si_sdr: list[float]
    source_counts: list[int]
    ssr: list[float]
    seed: int = 0

    def summary(self) -> dict:
        row = {"method": self.label, "order": self.order}
        for name, values in (("si_sdr", self.si_sdr), ("ssr", self.ssr)):
            if values:
                med = float(np.median(values))
                lo, hi = bootstrap_median_ci(values, seed=self.seed)
                row.update({f"{name}_median": med, f"{name}_ci_low": lo, f"{name}_ci_high": hi,
                            f"{name}_ci": (hi - lo) / 2.0})
            else:
                row.update({f"{name}_median": None, f"{name}_ci_low": None, f"{name}_ci_high": None,
                            f"{name}_ci": None})
        return row


def evaluate_method(method: Method, scenes: Sequence[RenderedScene], seed: int = 0,
                    with_ssr: bool = True) -> MethodResult:
    """SI-SDR at every active source and SSR per scene."""
    if not scenes:
        raise ValueError("no scenes")
    values, counts, ssrs = [], [], []
    for scene in scenes:
        active = [k for k, a in enumerate(scene.active) if a]
        for k in active:
            values.append(si_sdr(scene.truths[k], method.estimate(scene, k)))
            counts.append(len(active))
        if with_ssr and method.steered is not None and active:
            predict = method.steered(scene)
            ssrs.append(ssr(predict, [scene.directions[k] for k in active]))
    return MethodResult(method.label, method.order, values, counts, ssrs, seed)


@dataclass
class EvalReport:
    rows: list[dict]
    scene_count: int
    seed: int
    condition: str = "anechoic"

    COLUMNS = ("method", "order", "si_sdr_median", "si_sdr_ci", "si_sdr_ci_low", "si_sdr_ci_high",
               "ssr_median", "ssr_ci", "ssr_ci_low", "ssr_ci_high")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in self.COLUMNS])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return GAP
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def evaluate(methods: Sequence[Method], scenes: Sequence[RenderedScene], seed: int = 0,
             condition: str = "anechoic") -> tuple[EvalReport, list[MethodResult]]:
    results = [evaluate_method(m, scenes, seed) for m in methods]
    report = EvalReport([r.summary() for r in results], len(scenes), seed, condition)
    return report, results


def per_source_count_report(results: Sequence[MethodResult], counts: Sequence[int] = (2, 3, 4)) -> list[dict]:
    """Median SI-SDR per (method, order, active-source count); empty strata get ``None``."""
    rows = []
    for r in results:
        vals = np.asarray(r.si_sdr)
        cnt = np.asarray(r.source_counts)
        for c in counts:
            sel = vals[cnt == c]
            rows.append({"method": r.label, "order": r.order, "sources": c, "pairs": int(sel.size),
                         "si_sdr_median": float(np.median(sel)) if sel.size else None})
    return rows


def per_source_count_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ("method", "order", "sources", "pairs", "si_sdr_median")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


@dataclass
class DirectionMap:
    grid: DirectionSet
    values: np.ndarray
    label: str = "rms_db"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.grid),):
            raise ValueError("one value per grid direction required")

    def as_image(self) -> np.ndarray:
        if self.grid.shape is None:
            raise ValueError("grid has no (zenith, azimuth) layout")
        return self.values.reshape(self.grid.shape)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("azimuth_deg", "zenith_deg", self.label))
        for d, v in zip(self.grid, self.values):
            az, zen = d.degrees()
            writer.writerow((f"{az:.4f}", f"{zen:.4f}", f"{v:.6f}"))
        return buf.getvalue()


def rms_db(x) -> float:
    s = _samples(x)
    rms = math.sqrt(float(np.mean(s * s))) if s.size else 0.0
    return 20.0 * math.log10(max(rms, 1e-10))


def direction_map(predict: Predictor, grid: DirectionSet | None = None,
                  truths: Sequence | None = None,
                  predict_many: Callable[[list[Direction]], list] | None = None) -> list[DirectionMap]:
    """RMS map of the prediction over ``grid``; plus one SI-SDR map per truth.

    ``predict_many`` may be given to evaluate the grid in batches.
    """
    grid = equiangular_grid(100, 50) if grid is None else grid
    dirs = list(grid)
    outputs = predict_many(dirs) if predict_many is not None else [predict(d) for d in dirs]
    maps = [DirectionMap(grid, [rms_db(y) for y in outputs], "rms_db")]
    for i, t in enumerate(truths or []):
        maps.append(DirectionMap(grid, [si_sdr(t, y) for y in outputs], f"si_sdr_{i}"))
    return maps
