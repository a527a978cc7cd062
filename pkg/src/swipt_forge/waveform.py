"""MIMO-OFDM frame construction with a TR / IM / QAM subcarrier partition.

Subcarrier ``k`` of a ``K``-point grid is placed on baseband bin ``k`` for
``k < K/2`` and on the negative-frequency bin ``L*K - (K - k)`` otherwise, so
oversampling by ``L`` is plain zero padding in the middle of the spectrum.
All transforms are unitary: sample energy equals symbol energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MimoConfig",
    "SubcarrierPartition",
    "ImConfig",
    "FrequencyFrame",
    "TimeSignal",
    "build_partition",
    "map_qam",
    "map_im",
    "build_frame",
    "ofdm_modulate",
    "ofdm_demodulate",
    "papr_db",
    "papr_linear",
    "ccdf",
]


@dataclass(frozen=True)
class MimoConfig:
    n_tx: int = 4
    n_rx: int = 4
    n_streams: int = 4
    n_subcarriers: int = 1024
    oversampling: int = 4
    subcarrier_spacing: float = 15e3
    qam_order: int = 2

    def __post_init__(self):
        if self.n_streams > min(self.n_tx, self.n_rx):
            raise ValueError("n_streams must not exceed min(n_tx, n_rx)")
        k = self.n_subcarriers
        if k < 2 or k & (k - 1):
            raise ValueError("n_subcarriers must be a power of two")
        if self.qam_order < 2 or self.qam_order % 2:
            raise ValueError("qam_order must be even and >= 2")
        if self.oversampling < 1:
            raise ValueError("oversampling must be >= 1")

    @property
    def sample_rate(self) -> float:
        return self.n_subcarriers * self.oversampling * self.subcarrier_spacing


@dataclass(frozen=True)
class SubcarrierPartition:
    """Disjoint index sets for tone reservation, index modulation and QAM."""

    k_total: int
    set_tr: np.ndarray
    set_im: np.ndarray
    set_qam: np.ndarray

    def __post_init__(self):
        sets = [np.asarray(s, dtype=int) for s in (self.set_tr, self.set_im, self.set_qam)]
        for name, s in zip(("set_tr", "set_im", "set_qam"), sets):
            s.setflags(write=False)
            object.__setattr__(self, name, s)
        union = np.concatenate(sets)
        if union.size != self.k_total or not np.array_equal(np.sort(union), np.arange(self.k_total)):
            raise ValueError("partition sets must be disjoint and cover 0..K-1")
        if sets[1].size % 2:
            raise ValueError("the IM set must have an even size")

    @property
    def k_tr(self) -> int:
        return self.set_tr.size

    @property
    def k_im(self) -> int:
        return self.set_im.size

    @property
    def k_qam(self) -> int:
        return self.set_qam.size

    @property
    def info_set(self) -> np.ndarray:
        """IM followed by QAM indices, the column order of the stream matrix."""
        return np.concatenate([self.set_im, self.set_qam])


@dataclass(frozen=True)
class ImConfig:
    """Index-modulation symbol ``s = amplitude * exp(1j * phase)``."""

    amplitude: float
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude <= 0:
            raise ValueError("IM amplitude must be positive")

    @classmethod
    def for_receivers(cls, n_rx: int, phase: float = 0.0) -> "ImConfig":
        return cls(amplitude=float(np.sqrt(2.0 / n_rx)), phase=phase)

    @property
    def symbol(self) -> complex:
        return self.amplitude * np.exp(1j * self.phase)


@dataclass(frozen=True)
class FrequencyFrame:
    stream_symbols: np.ndarray  # (N_s, K_IM + K_QAM)
    tr_symbols: np.ndarray  # (N_t, K_TR)
    antenna_grid: np.ndarray  # (N_t, K)
    partition: SubcarrierPartition
    precoders: np.ndarray | None = None  # (K, N_t, N_s)

    def with_tr_symbols(self, tr_symbols: np.ndarray) -> "FrequencyFrame":
        grid = self.antenna_grid.copy()
        grid[:, self.partition.set_tr] = tr_symbols
        return FrequencyFrame(self.stream_symbols, np.array(tr_symbols), grid,
                              self.partition, self.precoders)


@dataclass(frozen=True)
class TimeSignal:
    """Complex baseband samples; ``samples`` is 1-D or (antennas, samples)."""

    samples: np.ndarray
    sample_rate: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[-1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def scaled(self, factor: complex) -> "TimeSignal":
        return TimeSignal(self.samples * factor, self.sample_rate, dict(self.meta))


def _as_samples(signal) -> np.ndarray:
    if isinstance(signal, TimeSignal):
        return signal.samples
    return np.asarray(signal)


def build_partition(k: int, k_tr: int, k_im: int) -> SubcarrierPartition:
    """Contiguous ``[TR | IM | QAM]`` layout in ascending subcarrier order."""
    if k_tr < 0 or k_im < 0:
        raise ValueError("subset sizes must be nonnegative")
    if k_tr + k_im > k:
        raise ValueError(f"K_TR + K_IM = {k_tr + k_im} exceeds K = {k}")
    if k_im % 2:
        raise ValueError("K_IM must be even")
    idx = np.arange(k)
    return SubcarrierPartition(k, idx[:k_tr], idx[k_tr:k_tr + k_im], idx[k_tr + k_im:])


def _gray_pam(bits: np.ndarray) -> np.ndarray:
    """Gray-coded PAM levels ``2i - (2^m - 1)`` for rows of ``m`` bits."""
    m = bits.shape[1]
    binary = bits.copy()
    for i in range(1, m):
        binary[:, i] ^= binary[:, i - 1]
    weights = 1 << np.arange(m - 1, -1, -1)
    return 2 * (binary @ weights) - (2**m - 1)


def map_qam(bits, m: int) -> np.ndarray:
    """Gray-mapped square QAM with unit average symbol energy.

    Parameters
    ----------
    bits : array_like of {0, 1}
        Bit stream, length divisible by ``m``.
    m : int
        Bits per symbol (even).
    """
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if m < 2 or m % 2:
        raise ValueError("bits per symbol must be even and >= 2")
    if bits.size % m:
        raise ValueError(f"bit count {bits.size} is not divisible by {m}")
    groups = bits.reshape(-1, m)
    half = m // 2
    i = _gray_pam(groups[:, :half])
    q = _gray_pam(groups[:, half:])
    scale = np.sqrt(2.0 * (2**m - 1) / 3.0)
    return (i + 1j * q) / scale


def map_im(bits, cfg: ImConfig) -> np.ndarray:
    """One bit per 2-subcarrier subblock: 0 -> [s, 0], 1 -> [0, s]."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("IM bits must be 0 or 1")
    out = np.zeros((bits.size, 2), dtype=complex)
    out[np.arange(bits.size), bits] = cfg.symbol
    return out.ravel()


def build_frame(mimo: MimoConfig, partition: SubcarrierPartition, rng: np.random.Generator,
                precoders: np.ndarray | None = None, im: ImConfig | None = None) -> FrequencyFrame:
    """Draw random bits and assemble ``X = [X_TR | W (.) X_info]``.

    ``precoders`` has shape (K, N_t, N_s); when omitted each subcarrier uses
    ``eye(N_t, N_s) / sqrt(N_s)``. Reserved tones start at zero.
    """
    if partition.k_total != mimo.n_subcarriers:
        raise ValueError("partition size does not match n_subcarriers")
    im = im or ImConfig.for_receivers(mimo.n_rx)
    n_s, m = mimo.n_streams, mimo.qam_order
    im_bits = rng.integers(0, 2, size=(n_s, partition.k_im // 2))
    qam_bits = rng.integers(0, 2, size=(n_s, partition.k_qam * m))
    streams = np.empty((n_s, partition.k_im + partition.k_qam), dtype=complex)
    for s in range(n_s):
        streams[s, :partition.k_im] = map_im(im_bits[s], im)
        streams[s, partition.k_im:] = map_qam(qam_bits[s], m)
    if precoders is None:
        w = np.eye(mimo.n_tx, n_s) / np.sqrt(n_s)
        precoders = np.broadcast_to(w, (mimo.n_subcarriers, mimo.n_tx, n_s))
    info = partition.info_set
    grid = np.zeros((mimo.n_tx, mimo.n_subcarriers), dtype=complex)
    grid[:, info] = np.einsum("kts,sk->tk", precoders[info], streams)
    tr = np.zeros((mimo.n_tx, partition.k_tr), dtype=complex)
    return FrequencyFrame(streams, tr, grid, partition, np.asarray(precoders))


def _bin_index(k: int, oversampling: int) -> np.ndarray:
    idx = np.arange(k)
    return np.where(idx < k // 2, idx, idx + (oversampling - 1) * k)


def ofdm_modulate(grid, oversampling: int = 4, subcarrier_spacing: float = 15e3) -> TimeSignal:
    """Zero-padded unitary inverse DFT of size ``L*K`` along the last axis."""
    grid = np.asarray(grid, dtype=complex)
    if oversampling < 1:
        raise ValueError("oversampling must be >= 1")
    k = grid.shape[-1]
    n = k * oversampling
    spec = np.zeros(grid.shape[:-1] + (n,), dtype=complex)
    spec[..., _bin_index(k, oversampling)] = grid
    samples = np.fft.ifft(spec, norm="ortho")
    return TimeSignal(samples, sample_rate=n * subcarrier_spacing)


def ofdm_demodulate(signal, k: int) -> np.ndarray:
    """Inverse of :func:`ofdm_modulate`; returns the ``K`` in-band symbols."""
    samples = _as_samples(signal)
    n = samples.shape[-1]
    if n % k:
        raise ValueError("sample count is not a multiple of K")
    spec = np.fft.fft(samples, norm="ortho")
    return spec[..., _bin_index(k, n // k)]


def papr_linear(signal) -> np.ndarray:
    """max|s|^2 / mean|s|^2 along the last axis."""
    p = np.abs(_as_samples(signal)) ** 2
    mean = p.mean(axis=-1)
    if np.any(mean <= 0):
        raise ValueError("PAPR is undefined for an all-zero signal")
    return p.max(axis=-1) / mean


def papr_db(signal):
    """PAPR in dB; a scalar for 1-D input, one value per row otherwise."""
    val = 10.0 * np.log10(papr_linear(signal))
    return float(val) if np.ndim(val) == 0 else val


def ccdf(papr_samples, thresholds) -> np.ndarray:
    """Empirical Pr[PAPR > threshold]."""
    samples = np.sort(np.asarray(papr_samples, dtype=float).ravel())
    if samples.size == 0:
        raise ValueError("ccdf needs at least one sample")
    thresholds = np.asarray(thresholds, dtype=float)
    above = samples.size - np.searchsorted(samples, thresholds, side="right")
    return above / samples.size
