"""Measurement synthesis: step signal -> low-pass FIR -> additive noise.

A recording is modelled as y_k = (rho * f)(t_k) + eps_k on the grid
t_k = k / sample_rate, where rho is the causal FIR kernel of the acquisition
low-pass filter and the noise eps is (optionally) the same filter applied to
an i.i.d. median-zero stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal

from .core import DiscreteTrace, EmptyTrace, LevelLadder, StepFunction
from .model import ParamVector, simulate_vnd, _seed_sequence

DEFAULT_SAMPLE_RATE = 10_000.0
DEFAULT_BESSEL_ORDER = 4
DEFAULT_BESSEL_CUTOFF_FRACTION = 0.1

KERNEL_KINDS = ("identity", "bspline2", "bessel", "custom")
NOISE_KINDS = ("gaussian", "cauchy", "mixture")


class InvalidParam(ValueError):
    pass


class DomainExceeded(ValueError):
    """Requested samples extend past the step function's support."""


@dataclass(frozen=True)
class Kernel:
    """Causal FIR low-pass kernel: unit-sum nonnegative taps at the sample grid."""

    kind: str
    taps: np.ndarray
    sample_rate: float
    order: int | None = None
    cutoff: float | None = None

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        object.__setattr__(self, "taps", taps)
        if self.kind not in KERNEL_KINDS:
            raise InvalidParam(f"unknown kernel kind {self.kind!r}")
        if not self.sample_rate > 0:
            raise InvalidParam("sample_rate must be positive")
        if taps.ndim != 1 or len(taps) == 0:
            raise InvalidParam("taps must be a nonempty vector")
        if (taps < 0).any():
            raise InvalidParam("taps must be nonnegative")
        if abs(taps.sum() - 1.0) > 1e-12:
            raise InvalidParam(f"taps sum to {taps.sum()!r}, not 1")

    @property
    def support(self) -> float:
        """Kernel support in seconds."""
        return (len(self.taps) - 1) / self.sample_rate

    def decimation_stride(self, corr_threshold: float = 0.1) -> int:
        """Smallest lag at which the tap autocorrelation drops to the
        threshold; samples of filtered i.i.d. noise taken this far apart are
        effectively independent."""
        t = self.taps
        norm = float(t @ t)
        for j in range(1, len(t)):
            if float(t[:-j] @ t[j:]) / norm <= corr_threshold:
                return j
        return len(t)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive noise model; every kind has marginal median zero.

    ``mixture`` draws each sample from the Gaussian component with
    probability ``weight_gaussian`` and from the Cauchy component otherwise.
    When ``filtered`` is set the i.i.d. stream is convolved with the same
    kernel as the signal.
    """

    kind: str = "gaussian"
    sigma: float = 0.1
    scale: float = 0.05
    weight_gaussian: float = 0.85
    filtered: bool = True

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidParam(f"unknown noise kind {self.kind!r}")
        if self.kind in ("gaussian", "mixture") and not self.sigma > 0:
            raise InvalidParam("sigma must be positive")
        if self.kind in ("cauchy", "mixture") and not self.scale > 0:
            raise InvalidParam("scale must be positive")
        if not 0.0 <= self.weight_gaussian <= 1.0:
            raise InvalidParam("weight_gaussian must be in [0, 1]")


@dataclass(frozen=True)
class RecordingTruth:
    """Ground truth attached to simulated recordings."""

    theta: ParamVector
    step: StepFunction
    discrete: DiscreteTrace
    noise: NoiseSpec | None
    seed: object


@dataclass(frozen=True)
class Recording:
    """Uniformly sampled current trace with its acquisition kernel."""

    samples: np.ndarray
    sample_rate: float
    kernel: Kernel
    truth: RecordingTruth | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or len(samples) < 1:
            raise EmptyTrace("recording needs at least one sample")
        if not np.isfinite(samples).all():
            raise ValueError("recording samples must be finite")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    def times(self) -> np.ndarray:
        return np.arange(1, len(self.samples) + 1) / self.sample_rate


def _bessel_taps(order: int, cutoff: float, sample_rate: float) -> np.ndarray:
    """Sampled impulse response of an analog Bessel low-pass, truncated at the
    first sign change of the tail (residual mass there is ~1e-3) and
    renormalized to unit sum."""
    if order < 1 or not 0 < cutoff < sample_rate / 2:
        raise InvalidParam("need order >= 1 and 0 < cutoff < sample_rate / 2")
    b, a = scipy.signal.bessel(order, 2 * np.pi * cutoff, btype="low", analog=True, norm="mag")
    # long enough grid: the response of a Bessel filter decays within a few
    # periods of the cutoff frequency
    n_grid = max(16, int(np.ceil(8 * sample_rate / cutoff)))
    t_grid = np.arange(n_grid) / sample_rate
    _, h = scipy.signal.impulse((b, a), T=t_grid)
    h = np.asarray(h, dtype=float)
    peak = int(np.argmax(h))
    negative = np.nonzero(h[peak:] <= 0.0)[0]
    end = peak + int(negative[0]) if len(negative) else len(h)
    total = h[:end].sum()
    mass = np.cumsum(h[:end]) / total
    enough = np.nonzero(mass >= 1.0 - 1e-6)[0]
    if len(enough):
        end = int(enough[0]) + 1
    taps = h[:end]
    lead = np.nonzero(taps > 0)[0]
    if len(lead) == 0:
        raise InvalidParam("Bessel impulse response degenerated to zero")
    taps = taps[lead[0]:]
    return taps / taps.sum()


def make_kernel(
    kind: str,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    *,
    order: int = DEFAULT_BESSEL_ORDER,
    cutoff: float | None = None,
    taps=None,
) -> Kernel:
    """Construct a named kernel at the given sampling rate.

    ``bspline2`` uses the integer-grid samples (1/8, 3/4, 1/8) of the
    quadratic B-spline, i.e. of the triple convolution of a one-sample box;
    ``bessel`` samples the analog impulse response and renormalizes; custom
    taps are normalized to unit sum.
    """
    if not sample_rate > 0:
        raise InvalidParam("sample_rate must be positive")
    if kind == "identity":
        return Kernel("identity", np.array([1.0]), sample_rate)
    if kind == "bspline2":
        return Kernel("bspline2", np.array([1.0, 6.0, 1.0]) / 8.0, sample_rate)
    if kind == "bessel":
        cutoff = DEFAULT_BESSEL_CUTOFF_FRACTION * sample_rate if cutoff is None else float(cutoff)
        return Kernel("bessel", _bessel_taps(order, cutoff, sample_rate), sample_rate,
                      order=order, cutoff=cutoff)
    if kind == "custom":
        taps = np.asarray(taps, dtype=float)
        if taps.ndim != 1 or len(taps) == 0 or (taps < 0).any() or taps.sum() <= 0:
            raise InvalidParam("custom taps must be nonnegative with positive sum")
        return Kernel("custom", taps / taps.sum(), sample_rate)
    raise InvalidParam(f"unknown kernel kind {kind!r}")


def step_from_trace(trace, offset: float, spacing: float, sample_rate: float) -> StepFunction:
    """Map per-sample counts to the conductance step function
    f(t_k) = offset + spacing * S_k, merging equal consecutive samples."""
    if not spacing > 0:
        raise InvalidParam("spacing must be positive")
    values = np.asarray(trace.values if isinstance(trace, DiscreteTrace) else trace)
    if values.ndim != 1 or len(values) == 0:
        raise EmptyTrace("trace must hold at least one sample")
    n = len(values)
    changes = np.nonzero(values[1:] != values[:-1])[0]
    breaks = np.concatenate([[0.0], (changes + 1.5) / sample_rate, [n / sample_rate]])
    levels = offset + spacing * values[np.concatenate([[0], changes + 1])].astype(float)
    return StepFunction(breaks, levels)


def convolve_sample(f: StepFunction, kernel: Kernel, sample_rate: float, n: int) -> np.ndarray:
    """(rho * f) at t_k = k / sample_rate for k = 1..n, with the first level
    extended leftward so there is no start-up transient."""
    if n < 1:
        raise DomainExceeded("need n >= 1")
    if n / sample_rate > f.t_max * (1 + 1e-12):
        raise DomainExceeded(f"{n} samples at {sample_rate} Hz exceed t_max = {f.t_max}")
    s = f.sample(np.arange(1, n + 1) / sample_rate)
    m = len(kernel.taps)
    if m == 1:
        return s * kernel.taps[0]
    ext = np.concatenate([np.full(m - 1, s[0]), s])
    return np.convolve(ext, kernel.taps, mode="valid")


def _noise_stream(spec: NoiseSpec, n_draw: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "gaussian":
        return rng.standard_normal(n_draw) * spec.sigma
    if spec.kind == "cauchy":
        return rng.standard_cauchy(n_draw) * spec.scale
    # mixture: draw all blocks unconditionally so the stream layout is fixed
    pick_gauss = rng.random(n_draw) < spec.weight_gaussian
    gauss = rng.standard_normal(n_draw) * spec.sigma
    cauchy = rng.standard_cauchy(n_draw) * spec.scale
    return np.where(pick_gauss, gauss, cauchy)


def sample_noise(spec: NoiseSpec, n: int, kernel: Kernel, seed) -> np.ndarray:
    """Draw n noise samples; filtered mode convolves an i.i.d. stream of
    length n + len(taps) - 1 with the kernel.  Every supported noise kind is
    symmetric about zero, so the filtered marginal keeps median zero for any
    kernel."""
    rng = np.random.Generator(np.random.Philox(_seed_sequence(seed)))
    if spec.filtered and len(kernel.taps) > 1:
        stream = _noise_stream(spec, n + len(kernel.taps) - 1, rng)
        return np.convolve(stream, kernel.taps, mode="valid")
    return _noise_stream(spec, n, rng)


def synthesize_recording(
    theta: ParamVector,
    n: int,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    *,
    offset: float = 0.0,
    spacing: float = 1.0,
    kernel: Kernel | str = "bessel",
    noise: NoiseSpec | None = NoiseSpec(),
    seed=0,
    init="all-closed",
) -> Recording:
    """Simulate a full recording: channel trace, filtered conductance, noise.

    The seed is split into independent Philox streams for the trace and the
    noise, so the same trace can be re-dressed with different noise kinds by
    fixing the seed and changing ``noise``.
    """
    if isinstance(kernel, str):
        kernel = make_kernel(kernel, sample_rate)
    ss = _seed_sequence(seed)
    trace_ss, noise_ss = ss.spawn(2)
    joint = simulate_vnd(theta, n, seed=trace_ss, init=init)
    ladder = LevelLadder(theta.L, offset, spacing)
    discrete = DiscreteTrace(values=joint.sums, ladder=ladder)
    step = step_from_trace(discrete, offset, spacing, sample_rate)
    clean = convolve_sample(step, kernel, sample_rate, n)
    if noise is not None:
        samples = clean + sample_noise(noise, n, kernel, noise_ss)
    else:
        samples = clean
    truth = RecordingTruth(theta=theta, step=step, discrete=discrete, noise=noise, seed=seed)
    return Recording(samples=samples, sample_rate=sample_rate, kernel=kernel, truth=truth)
