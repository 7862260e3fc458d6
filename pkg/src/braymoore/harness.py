"""Monte Carlo estimation of log-determinants and comparison with predictions.

Sample ``i`` of an experiment always draws from ``sample_rng(master_seed, i)``
so results do not depend on how samples are scheduled across workers.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.special import logsumexp

from . import spectral, tap
from .errors import DomainError, InvalidInputError, PreconditionError
from .matrices import (EnsembleSpec, SeededRng, build_matrix, build_z_parallel,
                       conditional_hessian, default_goe_scale, logabsdet, mix64,
                       rotated_diagonal, y_matrix)
from .spectral import FreeConvolution, SpectralMeasure

BOOTSTRAP_RESAMPLES = 1000
BOOTSTRAP_STREAM = 0xB007_57A2
DEFAULT_SEED = 0x5EED


def worker_count() -> int:
    """CPU count, capped by the ``BM_THREADS`` environment variable."""
    n = os.cpu_count() or 1
    cap = os.environ.get("BM_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def sample_rng(master_seed: int, i: int) -> SeededRng:
    """Stream for sample ``i``.

    The master seed is mixed first: with ``mix64(seed ^ i)`` alone, small
    seeds such as 1 and 2 would share the same set of streams over
    ``i = 0, 1, 2, 3``.
    """
    return SeededRng(mix64(master_seed), i)


def _digest(payload) -> str:
    def enc(o):
        if isinstance(o, np.ndarray):
            return [format(float(v), ".17g") for v in o.ravel()]
        if isinstance(o, float):
            return format(o, ".17g")
        raise TypeError(type(o))
    text = json.dumps(payload, default=enc, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class ExperimentRecord:
    """One Monte Carlo run.

    ``quenched`` is the mean of ``(1/N) log|det|`` over non-singular samples
    and ``annealed`` is ``(1/N) log`` of the sample mean of ``|det|``; both
    carry percentile-bootstrap 95% intervals.
    """

    spec_digest: str
    mode: str
    n: int
    master_seed: int
    n_samples: int
    n_singular: int
    quenched: float
    q_lo: float
    q_hi: float
    annealed: float
    a_lo: float
    a_hi: float
    prediction: float
    residual: float
    wall_time: float = field(default=math.nan, compare=False)

    FIELDS = ("spec_digest", "mode", "n", "master_seed", "n_samples", "n_singular",
              "quenched", "q_lo", "q_hi", "annealed", "a_lo", "a_hi", "prediction",
              "residual")

    @property
    def degenerate(self) -> bool:
        return self.n_singular == self.n_samples

    @property
    def q_width(self) -> float:
        return self.q_hi - self.q_lo

    def as_dict(self, timing: bool = False) -> dict:
        d = {k: getattr(self, k) for k in self.FIELDS}
        if timing:
            d["wall_time"] = self.wall_time
        return d


def _sample_logdets(make: Callable[[SeededRng], np.ndarray], n_samples: int,
                    master_seed: int, workers: int | None = None) -> np.ndarray:
    workers = worker_count() if workers is None else workers

    def one(i):
        return logabsdet(make(sample_rng(master_seed, i)))

    if workers <= 1:
        return np.array([one(i) for i in range(n_samples)])
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return np.fromiter(ex.map(one, range(n_samples)), dtype=float, count=n_samples)


def _bootstrap(lds: np.ndarray, n: int, seed: int):
    rng = np.random.Generator(np.random.Philox(mix64(seed ^ BOOTSTRAP_STREAM)))
    finite = lds[np.isfinite(lds)]
    if finite.size >= 2:
        idx = rng.integers(0, finite.size, size=(BOOTSTRAP_RESAMPLES, finite.size))
        qb = finite[idx].mean(axis=1) / n
        q_lo, q_hi = np.percentile(qb, [2.5, 97.5])
    else:
        q_lo = q_hi = math.nan
    idx = rng.integers(0, lds.size, size=(BOOTSTRAP_RESAMPLES, lds.size))
    ab = (logsumexp(lds[idx], axis=1) - math.log(lds.size)) / n
    a_lo, a_hi = np.percentile(ab, [2.5, 97.5]) if np.all(np.isfinite(ab)) else (-math.inf, -math.inf)
    return float(q_lo), float(q_hi), float(a_lo), float(a_hi)


def summarize(lds: np.ndarray, n: int, master_seed: int, digest: str, mode: str,
              prediction: float = math.nan, wall_time: float = math.nan) -> ExperimentRecord:
    """Build an :class:`ExperimentRecord` from per-sample ``log|det|`` values."""
    lds = np.asarray(lds, dtype=float)
    finite = lds[np.isfinite(lds)]
    n_sing = int(lds.size - finite.size)
    quenched = float(finite.mean() / n) if finite.size else -math.inf
    annealed = float((logsumexp(lds) - math.log(lds.size)) / n)
    q_lo, q_hi, a_lo, a_hi = _bootstrap(lds, n, master_seed)
    if math.isfinite(prediction) and math.isfinite(quenched):
        residual = quenched - prediction
    elif prediction == -math.inf and quenched == -math.inf:
        residual = 0.0
    else:
        residual = math.nan
    return ExperimentRecord(digest, mode, n, int(master_seed), int(lds.size), n_sing, quenched,
                            q_lo, q_hi, annealed, a_lo, a_hi, float(prediction), residual,
                            wall_time)


def sampler_for(target, goe_scale: float | None = None, route: str = "direct"):
    """Return ``(make_matrix, n, digest_payload)`` for an ensemble or TAP point."""
    if isinstance(target, EnsembleSpec):
        payload = {"kind": "ensemble", "n": target.n, "s": float(target.goe_scale),
                   "d": target.diag_part,
                   "a": target.lowrank_part if target.lowrank_part is not None else [],
                   "p": target.projector_vectors if target.projector_vectors is not None else []}
        return (lambda rng: build_matrix(target, rng)), target.n, payload
    if isinstance(target, tap.TapPoint):
        s = default_goe_scale(target.beta) if goe_scale is None else float(goe_scale)
        payload = {"kind": "tap", "m": target.m, "beta": target.beta, "h": target.h,
                   "s": s, "route": route}
        if route == "direct":
            return (lambda rng: conditional_hessian(target, rng, s)), target.n, payload
        if route == "y":
            if target.cls == "zero_v":
                raise DomainError("the Y-matrix route needs v != 0")
            R = rotated_diagonal(target)
            return ((lambda rng: y_matrix(target, build_z_parallel(target, rng, s, rotated_d=R))),
                    target.n, payload)
        raise InvalidInputError(f"unknown route {route!r}")
    raise InvalidInputError("target must be an EnsembleSpec or a TapPoint")


def estimate_logdet(target, n_samples: int, master_seed: int = DEFAULT_SEED,
                    goe_scale: float | None = None, route: str = "direct",
                    prediction: float = math.nan, workers: int | None = None) -> ExperimentRecord:
    """Quenched and annealed estimates of ``(1/N) log|det|`` for ``target``."""
    if n_samples < 2:
        raise InvalidInputError("n_samples must be at least 2")
    make, n, payload = sampler_for(target, goe_scale, route)
    t0 = time.perf_counter()
    lds = _sample_logdets(make, n_samples, master_seed, workers)
    mode = payload["kind"] if payload["kind"] == "ensemble" else f"tap-{route}"
    return summarize(lds, n, master_seed, _digest(payload), mode, prediction,
                     time.perf_counter() - t0)


def diag_from_measure(nu: SpectralMeasure, n: int) -> np.ndarray:
    """Length-``n`` diagonal whose empirical measure approximates ``nu``
    (largest-remainder rounding of ``n * weights``)."""
    raw = nu.weights * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return np.repeat(nu.locations, counts)


@dataclass
class Theorem2Report:
    record: ExperimentRecord
    target: float
    within: bool
    lowrank_record: ExperimentRecord | None = None
    lowrank_shift: float = math.nan
    lowrank_ok: bool | None = None


def _within(rec: ExperimentRecord, target: float, slack: float) -> bool:
    return rec.q_lo - slack <= target <= rec.q_hi + slack


def verify_theorem2(diag, lowrank=None, n: int | None = None, samples: int = 200,
                    seed: int = DEFAULT_SEED, goe_scale: float = math.sqrt(2.0),
                    slack: float = 0.02) -> Theorem2Report:
    """Compare ``(1/N) E log|det(s J/sqrt N + A + D)|`` with the log-potential
    of ``nu_D boxplus sc(s^2)``, with and without the low-rank part ``A``.

    The two runs share seeds, so their difference isolates the effect of ``A``.
    """
    d = np.asarray(diag, dtype=float).ravel()
    n = d.size if n is None else n
    if d.size != n:
        raise InvalidInputError("diagonal length does not match n")
    if lowrank is not None:
        rank = int(np.linalg.matrix_rank(lowrank, tol=1e-9 * max(np.abs(lowrank).max(), 1e-300)))
        if rank > n // 2:
            raise PreconditionError("low-rank part must have rank at most N/2")
    fc = FreeConvolution(SpectralMeasure.empirical(d), goe_scale**2)
    target = spectral.log_potential(fc)
    base = estimate_logdet(EnsembleSpec(n, goe_scale, d), samples, seed, prediction=target)
    rep = Theorem2Report(base, target, _within(base, target, slack))
    if lowrank is not None:
        lr = estimate_logdet(EnsembleSpec(n, goe_scale, d, lowrank), samples, seed,
                             prediction=target)
        rep.lowrank_record = lr
        rep.lowrank_shift = lr.residual - base.residual
        rep.lowrank_ok = abs(rep.lowrank_shift) <= slack
    return rep


@dataclass
class MainReport:
    prediction: tap.Prediction
    direct: ExperimentRecord
    y_route: ExperimentRecord | None
    routes_agree: bool
    residual_total: float
    residual_upsilon: float
    favours_correction: bool
    gap_exceeds_ci: bool
    singular_fraction: float


def verify_main(p: tap.TapPoint, alpha: float = 1.0, samples: int = 200,
                seed: int = DEFAULT_SEED, goe_scale: float | None = None) -> MainReport:
    """Monte Carlo check of ``Upsilon + correction`` for a TAP point.

    The direct conditional Hessian and the bordered Y-matrix route are
    sampled with independent streams and must have overlapping intervals.
    """
    pred = tap.predict(p, alpha)
    direct = estimate_logdet(p, samples, seed, goe_scale, "direct", pred.total)
    y_rec = None
    agree = True
    if not pred.degenerate:
        y_rec = estimate_logdet(p, samples, mix64(seed + 1), goe_scale, "y", pred.total)
        agree = direct.q_lo <= y_rec.q_hi and y_rec.q_lo <= direct.q_hi
    q = direct.quenched
    res_t = q - pred.total if math.isfinite(pred.total) else math.nan
    res_u = q - pred.upsilon
    favours = math.isfinite(res_t) and abs(res_t) < abs(res_u)
    gap = abs(pred.correction) > direct.q_width if math.isfinite(pred.correction) else False
    return MainReport(pred, direct, y_rec, agree, res_t, res_u, favours, gap,
                      direct.n_singular / direct.n_samples)


def semicircle_cdf(x, sigma2: float):
    x = np.asarray(x, dtype=float)
    r = 2.0 * math.sqrt(sigma2)
    t = np.clip(x, -r, r)
    return 0.5 + t * np.sqrt(r * r - t * t) / (4 * math.pi * sigma2) + np.arcsin(t / r) / math.pi


def ks_distance(samples: np.ndarray, cdf: Callable) -> float:
    """Two-sided Kolmogorov-Smirnov distance of an empirical sample to ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    F = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


@dataclass
class CalibrationResult:
    selected: float
    ks: dict
    second_moment: float
    mean_edges: tuple
    inconclusive: bool
    vardet_consistent: bool


def _pooled_eigs(spec: EnsembleSpec, draws: int, seed: int) -> np.ndarray:
    return np.concatenate([np.linalg.eigvalsh(build_matrix(spec, sample_rng(seed, i)))
                           for i in range(draws)])


def calibrate_sigma(beta: float, n: int = 256, samples: int = 16, seed: int = DEFAULT_SEED,
                    goe_scale: float | None = None) -> CalibrationResult:
    """Pick the semicircle variance matching the sampler, from ``{beta^2, 2 beta^2}``.

    The pooled spectrum of ``s J / sqrt(N)`` is compared with both candidate
    semicircles by KS distance. The choice is then cross-checked against the
    variational formula at a reference TAP point: only the variance that
    enters ``R_N`` (``2 beta^2``) reproduces it through the free convolution.
    """
    if n < 128:
        raise PreconditionError("calibration needs N >= 128")
    s = default_goe_scale(beta) if goe_scale is None else goe_scale
    spec = EnsembleSpec(n, s, np.zeros(n))
    eigs = _pooled_eigs(spec, samples, seed)
    per = eigs.reshape(samples, n)
    edges = (float(per.min(axis=1).mean()), float(per.max(axis=1).mean()))
    cands = [beta**2, 2 * beta**2]
    ks = {c: ks_distance(eigs, lambda x, c=c: semicircle_cdf(x, c)) for c in cands}
    selected = min(cands, key=lambda c: ks[c])
    inconclusive = abs(ks[cands[0]] - ks[cands[1]]) < 0.01
    ref = tap.make_tap_point(np.linspace(-0.6, 0.8, 32), beta, 0.1)
    ups = tap.solve_upsilon(ref).upsilon
    lp = spectral.log_potential(FreeConvolution(SpectralMeasure.empirical(-ref.D_diag), selected))
    return CalibrationResult(selected, ks, float(np.mean(eigs**2)), edges, inconclusive,
                             abs(ups - lp) <= 1e-4)


def esd_compare(spec: EnsembleSpec, fc: FreeConvolution, draws: int = 16,
                seed: int = DEFAULT_SEED) -> float:
    """KS distance between the pooled spectrum of ``spec`` and ``fc``."""
    if spec.n < 64:
        raise PreconditionError("ESD comparison needs N >= 64")
    return ks_distance(_pooled_eigs(spec, draws, seed), spectral.cdf(fc))


# ---- sweeps ----------------------------------------------------------------

PATTERNS = ("uniform", "cosine", "ramp")


def tap_pattern(kind: str, n: int, t: float) -> np.ndarray:
    """Magnetisation pattern of size ``n`` that keeps its shape as ``n`` grows."""
    i = np.arange(n)
    if kind == "uniform":
        return np.full(n, t)
    if kind == "cosine":
        return t * (1.0 + 0.5 * np.cos(2 * np.pi * (i + 0.5) / n))
    if kind == "ramp":
        return t * (2.0 * (i + 0.5) / n - 1.0)
    raise InvalidInputError(f"unknown pattern {kind!r}; expected one of {PATTERNS}")


@dataclass
class SweepPlan:
    n_list: list
    samples: int
    pattern: str = "cosine"
    t: float = 0.5
    beta: float = 1.0
    h: float = 0.0
    alpha: float = 1.0
    goe_scale: float | None = None
    master_seed: int = DEFAULT_SEED
    out: str | None = None

    def __post_init__(self):
        if not self.n_list:
            raise InvalidInputError("N list must not be empty")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise InvalidInputError("N list must be strictly increasing")
        if self.samples < 2:
            raise InvalidInputError("samples must be at least 2")


@dataclass
class SweepResult:
    records: list
    errors: list


def run_sweep(plan: SweepPlan, writer=None) -> SweepResult:
    """One record per ``N``; each is handed to ``writer`` as soon as it exists.

    Writer failures (``OSError``) are collected per record instead of
    stopping the sweep.
    """
    records, errors = [], []
    for n in plan.n_list:
        p = tap.make_tap_point(tap_pattern(plan.pattern, n, plan.t), plan.beta, plan.h)
        pred = tap.predict(p, plan.alpha)
        rec = estimate_logdet(p, plan.samples, plan.master_seed, plan.goe_scale, "direct",
                              pred.total)
        records.append(rec)
        if writer is not None:
            try:
                writer(rec)
            except OSError as exc:
                errors.append((n, str(exc)))
    return SweepResult(records, errors)


def inversions(values: Iterable[float]) -> int:
    """Number of adjacent increases in a sequence meant to be non-increasing."""
    v = list(values)
    return sum(1 for a, b in zip(v, v[1:]) if b > a)
