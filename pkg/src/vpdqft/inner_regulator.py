"""Regularised measure over inner momentum space and related numerical checks.

The measure integrates over time-like inner momenta whose energy in the frame
of a fixed time-like vector ``L`` (``L^2 = -1/Lambda^2``) is bounded by
``1/(2 Lambda)``, on both light cones:

    int dM^2 over [0, 1/(4 Lambda^2)]  int d^4P delta(M^2 + P^2)  (cone cut)

Monte Carlo estimates sample ``M^2`` uniformly, then the mass shell with the
invariant weight ``d^3P/(2E)`` inside the energy cut, with a random cone.
Sampling is split into a fixed number of batches, each with its own
counter-based (Philox) stream spawned from the seed, so results depend only on
(seed, samples) and never on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateFrameError, DomainError, PrecisionError, SupportViolationError

ETA = np.array([-1.0, 1.0, 1.0, 1.0])
DEFAULT_BATCHES = 64
MAX_RANK = 8


def minkowski_square(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    return np.sum(ETA * K * K, axis=-1)


@dataclass(frozen=True)
class RegulatorConfig:
    lam: float = 1.0
    samples: int = 1_000_000
    seed: int = 12345
    frame: tuple[float, float, float, float] | None = None
    batches: int = DEFAULT_BATCHES
    workers: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError("Lambda must be positive")
        if self.samples < self.batches * 2:
            raise DomainError(f"need at least {2 * self.batches} samples")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")
        L = self.L
        if abs(minkowski_square(L) + self.lam ** -2) > 1e-12 * max(1.0, self.lam ** -2):
            raise DomainError("frame vector must satisfy L^2 = -1/Lambda^2")
        if L[0] <= 0:
            raise DomainError("frame vector must be future pointing")

    @property
    def L(self) -> np.ndarray:
        if self.frame is None:
            return np.array([1.0 / self.lam, 0.0, 0.0, 0.0])
        return np.asarray(self.frame, dtype=float)

    def scaled(self, rho: float) -> "RegulatorConfig":
        frame = None if self.frame is None else tuple(float(x) / rho for x in self.frame)
        return RegulatorConfig(self.lam * rho, self.samples, self.seed, frame, self.batches, self.workers)


# ------------------------------------------------------------------ predicates


def support_predicate(K) -> bool:
    """True on the closed forward and backward light cones, ``-K^2 >= 0``."""
    return bool(-minkowski_square(K) >= 0)


def cutoff_predicate(K, config: RegulatorConfig | None = None) -> bool:
    """True inside the regularised region: supported, ``-K^2 <= 1/(4 Lambda^2)``
    and the energy along the frame vector at most ``1/(2 Lambda)``."""
    config = config or RegulatorConfig()
    K = np.asarray(K, dtype=float)
    m2 = -minkowski_square(K)
    if m2 < 0 or m2 > 0.25 / config.lam ** 2:
        return False
    L = config.L
    LK = float(np.sum(ETA * L * K))
    L2 = float(minkowski_square(L))
    sign = 1.0 if K[0] >= 0 else -1.0
    return bool(-L2 + sign * 2 * LK >= 0)


# ------------------------------------------------------------------ M(K) checks


def matrix_M(K) -> np.ndarray:
    """``M_ab = delta_ab - K_a K_b / (K_0)^2`` for the spatial components of K."""
    K = np.asarray(K, dtype=float)
    if np.any(K[..., 0] == 0):
        raise DegenerateFrameError("K^0 = 0")
    k = K[..., 1:]
    return np.eye(3) - k[..., :, None] * k[..., None, :] / (K[..., 0] ** 2)[..., None, None]


def expected_spectrum(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    lam3 = -minkowski_square(K) / K[..., 0] ** 2
    ones = np.ones_like(lam3)
    return np.sort(np.stack([ones, ones, lam3], axis=-1), axis=-1)


@dataclass
class SpectrumReport:
    samples: int
    max_scaled_error: float
    passed: bool


def spectrum_check(n: int = 100_000, seed: int = 7, tol: float = 1e-12) -> SpectrumReport:
    """Eigenvalues of M(K) against {1, 1, -K^2/K0^2} for random K with K0 != 0.

    The error is scaled by ``max(1, |M|_2)``, the natural size of the
    eigensolver's backward error.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    K = rng.normal(size=(n, 4))
    K[:, 0] = np.where(np.abs(K[:, 0]) < 1e-3, 1e-3, K[:, 0])
    ev = np.linalg.eigvalsh(matrix_M(K))
    want = expected_spectrum(K)
    scale = np.maximum(1.0, np.max(np.abs(want), axis=-1))
    err = np.max(np.abs(ev - want), axis=-1) / scale
    worst = float(err.max())
    return SpectrumReport(n, worst, worst <= tol)


@dataclass
class PositivityReport:
    samples: int
    minimum: float
    passed: bool


def hamiltonian_density(K, vectors: np.ndarray, lam: float = 1.0) -> np.ndarray:
    """Symmetric form of the Hamiltonian density for given field values.

    ``vectors`` has shape (..., 6, 3), complex: the longitudinal gradient of the
    time component, the two conjugate momenta, the (1,2) field strength and
    the longitudinal gradients of the two transverse components.  The (2,1)
    field strength is minus the (1,2) one and the diagonal ones vanish.
    """
    M = matrix_M(K)
    q = np.einsum("...ka,...ab,...kb->...k", np.conj(vectors), M, vectors).real
    w = np.array([1 / (2 * lam ** 2), 0.5, 0.5, 2 / (4 * lam ** 2), 1 / (2 * lam ** 2), 1 / (2 * lam ** 2)])
    return np.sum(q * w, axis=-1)


def hamiltonian_positivity_sample(sampler: Callable | None = None, config: RegulatorConfig | None = None,
                                  tol: float = 1e-12) -> PositivityReport:
    """Minimum of the Hamiltonian density over sampled momenta and random fields.

    ``sampler(rng, n)`` returns an (n, 4) array of inner momenta; every one
    must satisfy the support predicate.
    """
    config = config or RegulatorConfig(samples=20_000)
    rng = np.random.Generator(np.random.Philox(config.seed))
    n = config.samples
    if sampler is None:
        K = _sample_region(rng, n, config.lam)[0]
        K = _boost_to_frame(K, config)
    else:
        K = np.asarray(sampler(rng, n), dtype=float)
    m2 = -minkowski_square(K)
    bad = m2 < -1e-12 * np.maximum(1.0, np.sum(K * K, axis=-1))
    if np.any(bad):
        raise SupportViolationError(f"{int(bad.sum())} sampled momenta are space-like")
    if np.any(K[:, 0] == 0):
        raise SupportViolationError("sampled momentum with K^0 = 0")
    v = rng.normal(size=(n, 6, 3)) + 1j * rng.normal(size=(n, 6, 3))
    h = hamiltonian_density(K, v, config.lam)
    mn = float(h.min())
    return PositivityReport(n, mn, mn >= -tol)


# --------------------------------------------------------------- Monte Carlo


def _sample_region(rng: np.random.Generator, n: int, lam: float):
    """Momenta in the regularised region (rest frame of L) with their weights.

    Weight = (range of M^2) * (ball volume) / (2E) * 2 cones / (2 pi)^4.
    """
    m2max = 0.25 / lam ** 2
    m2 = rng.uniform(0.0, m2max, size=n)
    R = np.sqrt(np.maximum(m2max - m2, 0.0))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    rad = R * rng.uniform(0.0, 1.0, size=n) ** (1.0 / 3.0)
    p = d * rad[:, None]
    E = np.sqrt(m2 + rad ** 2)
    cone = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
    K = np.empty((n, 4))
    K[:, 0] = cone * E
    K[:, 1:] = p
    with np.errstate(divide="ignore"):
        w = m2max * (4.0 / 3.0) * math.pi * R ** 3 / (2.0 * E) * 2.0 / (2 * math.pi) ** 4
    w = np.where(E > 0, w, 0.0)
    return K, w


def _boost_to_frame(K: np.ndarray, config: RegulatorConfig) -> np.ndarray:
    L = config.L * config.lam  # unit time-like vector
    if np.allclose(L, [1.0, 0.0, 0.0, 0.0]):
        return K
    g = L[0]
    u = L[1:]
    out = np.empty_like(K)
    ku = K[:, 1:] @ u
    out[:, 0] = g * K[:, 0] + ku
    coef = (ku / (1.0 + g) + K[:, 0])
    out[:, 1:] = K[:, 1:] + coef[:, None] * u[None, :]
    return out


def _sym_norm(m: int) -> float:
    d = 1.0
    for i in range(m):
        d *= 4 + 2 * i
    return d


def _integrands(K: np.ndarray, r: int) -> dict[str, np.ndarray]:
    P2 = minkowski_square(K)
    out: dict[str, np.ndarray] = {}
    if r % 2 == 0:
        out["eta_coefficient"] = P2 ** (r // 2) / _sym_norm(r // 2)
    if r > 0:
        out["component_0"] = K[:, 0] ** r
        out["component_1"] = K[:, 1] ** r
    if r % 2 == 1 and r > 1:
        out["mixed_0_trace"] = K[:, 0] * P2 ** ((r - 1) // 2)
    return out


def _run_batch(seed_seq: np.random.SeedSequence, n: int, r: int, config: RegulatorConfig):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    K, w = _sample_region(rng, n, config.lam)
    K = _boost_to_frame(K, config)
    return {k: float(np.mean(v * w)) for k, v in _integrands(K, r).items()}


@dataclass
class MomentResult:
    """Monte Carlo moment of the regularised measure.

    ``value`` is the coefficient of the symmetrised metric structure for even
    rank (the fully traced moment divided by 4*6*...*(r+2)) and the
    time component for odd rank.  ``components`` holds further estimates with
    their errors.  ``lambda_power`` is the exponent of Lambda in the result.
    """

    rank: int
    value: float
    error: float
    lambda_power: int
    samples: int
    components: dict[str, tuple[float, float]] = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "value": self.value,
            "error": self.error,
            "lambda_power": self.lambda_power,
            "samples": self.samples,
            "components": {k: {"value": v, "error": e} for k, (v, e) in sorted(self.components.items())},
        }


def _batch_sizes(total: int, batches: int) -> list[int]:
    base, extra = divmod(total, batches)
    return [base + (1 if i < extra else 0) for i in range(batches)]


def regularized_moment(r: int, config: RegulatorConfig | None = None, stream: Sequence[int] = (),
                       target_rel_error: float | None = None) -> MomentResult:
    """Monte Carlo estimate of ``int_Lambda d^4P/(2 pi)^4 P^{a1}..P^{ar}``.

    ``stream`` adds extra entropy words so that independent estimates with the
    same seed can be requested.  With ``target_rel_error`` a PrecisionError is
    raised when the relative error bar is larger than requested.
    """
    config = config or RegulatorConfig()
    if r < 0 or r > MAX_RANK:
        raise DomainError(f"rank must be within 0..{MAX_RANK}")
    root = np.random.SeedSequence([int(config.seed)] + [int(s) for s in stream])
    children = root.spawn(config.batches)
    sizes = _batch_sizes(config.samples, config.batches)
    jobs = list(zip(children, sizes))
    if config.workers == 1:
        results = [_run_batch(s, n, r, config) for s, n in jobs]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda job: _run_batch(job[0], job[1], r, config), jobs))
    comps = {}
    for key in results[0]:
        vals = np.array([res[key] for res in results])
        wts = np.array(sizes, dtype=float)
        mean = float(np.sum(vals * wts) / np.sum(wts))
        err = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
        comps[key] = (mean, err)
    main = "eta_coefficient" if r % 2 == 0 else "component_0"
    value, error = comps.pop(main)
    if r == 2:
        # split into eta and frame (L L) parts using the (00) and (11) components
        c00, e00 = comps["component_0"]
        c11, e11 = comps["component_1"]
        comps["eta_part"] = (c11, e11)
        comps["frame_part"] = ((c00 + c11) * config.lam ** 2, math.hypot(e00, e11) * config.lam ** 2)
    res = MomentResult(r, value, error, -(4 + r), config.samples, comps)
    if target_rel_error is not None and value != 0 and error / abs(value) > target_rel_error:
        raise PrecisionError(f"relative error {error / abs(value):.3g} exceeds target {target_rel_error:g} "
                             f"(value {value:.6g} +- {error:.3g})")
    return res


# ----------------------------------------------------------------- analytic values


def analytic_volume(lam: float = 1.0) -> float:
    """Exact regularised volume ``1/(384 pi^3 Lambda^4)``."""
    return 1.0 / (384 * math.pi ** 3 * lam ** 4)


def analytic_eta_coefficient2(lam: float = 1.0) -> float:
    """Exact rank-2 traced coefficient ``<P^2>/4 = -1/(23040 pi^3 Lambda^6)``."""
    return -1.0 / (23040 * math.pi ** 3 * lam ** 6)


def analytic_rank2_components(lam: float = 1.0) -> tuple[float, float]:
    """Exact (00) and (11) components of the rank-2 moment."""
    norm = (2 * math.pi) ** 4 * lam ** 6
    return (math.pi / 144) / norm, (math.pi / 720) / norm


OMEGA1 = Fraction(1, 46080)  # times 1/pi^3: the named inner-trace constant 1/(720 (4 pi)^3)


def omega1_value() -> float:
    return 1.0 / (720 * (4 * math.pi) ** 3)


# ----------------------------------------------------------------- scaling law


@dataclass
class ScalingReport:
    rank: int
    rho: float
    value: float
    error: float
    scaled_value: float
    scaled_error: float
    ratio: float
    expected_ratio: float
    deviation_sigma: float
    passed: bool

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "rank", "rho", "value", "error", "scaled_value", "scaled_error", "ratio", "expected_ratio",
            "deviation_sigma", "passed")}


class ScalingViolationReport(ScalingReport):
    """A failed scaling check (returned, never raised)."""


def scaling_covariance_check(r: int, rho: float, config: RegulatorConfig | None = None,
                             nsigma: float = 3.0) -> ScalingReport:
    """Check ``moment(r, rho Lambda) * rho^(4+r) = moment(r, Lambda)``.

    For ``rho = 1`` the same stream is reused and equality is exact; otherwise
    the scaled moment uses an independent stream and the comparison is made
    within ``nsigma`` combined standard errors.
    """
    config = config or RegulatorConfig()
    if not rho > 0:
        raise DomainError("rho must be positive")
    base = regularized_moment(r, config)
    if rho == 1:
        scaled = regularized_moment(r, config)
    else:
        fr = Fraction(rho).limit_denominator(10 ** 6)
        scaled = regularized_moment(r, config.scaled(rho), stream=(1, fr.numerator, fr.denominator))
    f = rho ** (4 + r)
    lhs, lhs_err = scaled.value * f, scaled.error * f
    diff = lhs - base.value
    sig = math.hypot(lhs_err, base.error)
    dev = 0.0 if diff == 0 else (abs(diff) / sig if sig > 0 else math.inf)
    ok = dev <= nsigma
    cls = ScalingReport if ok else ScalingViolationReport
    ratio = scaled.value / base.value if base.value else math.nan
    return cls(r, rho, base.value, base.error, scaled.value, scaled.error, ratio, rho ** -(4 + r), dev, ok)
