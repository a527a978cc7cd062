"""Tapped-delay-line MIMO channel, RZF precoding and power-splitting reception."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .waveform import FrequencyFrame, MimoConfig, TimeSignal, _as_samples, _bin_index, ofdm_modulate

__all__ = [
    "ChannelConfig",
    "ChannelRealization",
    "SplitOutputs",
    "exponential_pdp",
    "load_pdp",
    "generate_channel",
    "rzf_precoder",
    "precoders_for",
    "propagate",
    "propagate_time",
    "power_split",
    "effective_gain",
]


def exponential_pdp(n_taps: int = 8, decay_db: float = 3.0) -> tuple[tuple[int, float], ...]:
    """Sample-spaced profile with ``decay_db`` per tap, normalised to unit sum."""
    p = 10.0 ** (-decay_db * np.arange(n_taps) / 10.0)
    p /= p.sum()
    return tuple((int(d), float(v)) for d, v in enumerate(p))


def load_pdp(path) -> tuple[tuple[int, float], ...]:
    """Read ``delay_samples power_linear`` pairs; '#' starts a comment."""
    taps = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        d, p = line.split()
        taps.append((int(d), float(p)))
    if not taps:
        raise ValueError(f"no taps in {path}")
    total = sum(p for _, p in taps)
    return tuple((d, p / total) for d, p in taps)


@dataclass(frozen=True)
class ChannelConfig:
    pdp: tuple = field(default_factory=exponential_pdp)
    path_loss_db: float = 45.0
    noise_power: float = 1e-12
    rzf_delta: float | None = None

    def __post_init__(self):
        pdp = tuple((int(d), float(p)) for d, p in self.pdp)
        if not pdp:
            raise ValueError("empty power-delay profile")
        if any(d < 0 for d, _ in pdp) or any(p < 0 for _, p in pdp):
            raise ValueError("delays and tap powers must be nonnegative")
        total = sum(p for _, p in pdp)
        if not np.isclose(total, 1.0, rtol=1e-9):
            raise ValueError("tap powers must sum to 1")
        object.__setattr__(self, "pdp", pdp)
        if self.noise_power < 0:
            raise ValueError("noise power must be nonnegative")

    @property
    def path_gain(self) -> float:
        return 10.0 ** (-self.path_loss_db / 10.0)


@dataclass(frozen=True)
class ChannelRealization:
    taps: np.ndarray  # (N_r, N_t, n_taps)
    delays: np.ndarray  # (n_taps,)
    freq_response: np.ndarray  # (K, N_r, N_t)

    def response_at(self, bins: np.ndarray, n_fft: int, oversampling: int) -> np.ndarray:
        """Response on FFT bins of an ``oversampling``-times oversampled grid."""
        # delays are in base-rate samples, i.e. oversampling * delay at the fine rate
        phase = np.exp(-2j * np.pi * np.outer(bins, self.delays * oversampling) / n_fft)
        return np.einsum("bl,rtl->brt", phase, self.taps)


@dataclass(frozen=True)
class SplitOutputs:
    id_branch: np.ndarray  # (N_r, N)
    eh_branch: np.ndarray  # (N,)
    rho: float


def generate_channel(cfg: ChannelConfig, mimo: MimoConfig, seed) -> ChannelRealization:
    """I.i.d. circular Gaussian taps with variance ``power * path_gain``."""
    k = mimo.n_subcarriers
    delays = np.array([d for d, _ in cfg.pdp])
    if np.any(delays >= k):
        raise ValueError("tap delays must be below K")
    powers = np.array([p for _, p in cfg.pdp]) * cfg.path_gain
    rng = np.random.default_rng(seed)
    shape = (mimo.n_rx, mimo.n_tx, delays.size)
    taps = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(powers / 2)
    phase = np.exp(-2j * np.pi * np.outer(np.arange(k), delays) / k)
    h = np.einsum("kl,rtl->krt", phase, taps)
    return ChannelRealization(taps, delays, h)


def rzf_precoder(h, delta: float, n_streams: int) -> np.ndarray:
    """``H^H (H H^H + delta I)^-1`` on the first ``n_streams`` receive rows, unit Frobenius norm."""
    h = np.asarray(h, dtype=complex)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    hs = h[:n_streams]
    gram = hs @ hs.conj().T + delta * np.eye(n_streams)
    if delta == 0 and np.linalg.matrix_rank(gram) < n_streams:
        raise np.linalg.LinAlgError("singular channel for zero forcing")
    w = hs.conj().T @ np.linalg.inv(gram)
    return w / np.linalg.norm(w)


def precoders_for(chan: ChannelRealization, cfg: ChannelConfig, mimo: MimoConfig,
                  tx_power: float = 1.0) -> np.ndarray:
    """RZF precoders for every subcarrier, shape (K, N_t, N_s).

    ``cfg.rzf_delta=None`` selects ``N_s * noise_power / tx_power``.
    """
    delta = cfg.rzf_delta
    if delta is None:
        delta = mimo.n_streams * cfg.noise_power / tx_power
    hs = chan.freq_response[:, :mimo.n_streams]
    gram = hs @ np.conj(np.swapaxes(hs, 1, 2)) + delta * np.eye(mimo.n_streams)
    w = np.conj(np.swapaxes(hs, 1, 2)) @ np.linalg.inv(gram)
    return w / np.linalg.norm(w, axis=(1, 2), keepdims=True)


def propagate_time(tx, chan: ChannelRealization, k: int, noise_power: float, seed) -> np.ndarray:
    """Pass (N_t, L*K) time samples through the channel; returns (N_r, L*K).

    The channel acts as a circular convolution. Noise of variance
    ``noise_power`` per antenna is added on the ``K`` in-band subcarriers.
    """
    tx = np.atleast_2d(_as_samples(tx))
    n_t, n = tx.shape
    if n_t != chan.taps.shape[1]:
        raise ValueError("transmit antenna count does not match the channel")
    if n % k:
        raise ValueError("sample count is not a multiple of K")
    L = n // k
    spec = np.fft.fft(tx, norm="ortho")
    h = chan.response_at(np.arange(n), n, L)
    rx = np.einsum("brt,tb->rb", h, spec)
    if noise_power > 0:
        rng = np.random.default_rng(seed)
        bins = _bin_index(k, L)
        shape = (rx.shape[0], k)
        rx[:, bins] += (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(noise_power / 2)
    return np.fft.ifft(rx, norm="ortho")


def propagate(frame: FrequencyFrame | np.ndarray, chan: ChannelRealization, noise_power: float,
              seed, oversampling: int = 4) -> list[TimeSignal]:
    """``Y_k = H_k X_k + N_k`` per subcarrier, then an oversampled inverse DFT per receive antenna."""
    grid = frame.antenna_grid if isinstance(frame, FrequencyFrame) else np.asarray(frame)
    k = grid.shape[-1]
    if chan.freq_response.shape[0] != k or chan.freq_response.shape[2] != grid.shape[0]:
        raise ValueError("frame and channel dimensions disagree")
    y = np.einsum("krt,tk->rk", chan.freq_response, grid)
    if noise_power > 0:
        rng = np.random.default_rng(seed)
        y = y + (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)) * np.sqrt(noise_power / 2)
    sig = ofdm_modulate(y, oversampling)
    return [TimeSignal(row, sig.sample_rate) for row in sig.samples]


def power_split(received, rho: float) -> SplitOutputs:
    """ID branch ``sqrt(rho) y_i``; EH branch ``sqrt(1 - rho) * sum_i y_i``."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    y = np.array([_as_samples(r) for r in received]) if isinstance(received, (list, tuple)) \
        else np.atleast_2d(_as_samples(received))
    return SplitOutputs(np.sqrt(rho) * y, np.sqrt(1.0 - rho) * y.sum(axis=0), rho)


def effective_gain(chan: ChannelRealization, precoders) -> float:
    """``(1 / (K N_s)) * sum_k ||H_k W_k||_F^2``."""
    w = np.asarray(precoders)
    hw = np.einsum("krt,kts->krs", chan.freq_response, w)
    k, _, n_s = w.shape
    return float(np.sum(np.abs(hw) ** 2) / (k * n_s))
