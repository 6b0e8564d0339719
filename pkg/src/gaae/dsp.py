"""Audio <-> normalized log-magnitude spectrogram pipeline.

Forward chain: fixed-length clip -> Hamming STFT -> natural-log magnitude
(Nyquist bin dropped) -> standardize per spectrogram -> clip at +-r ->
divide by r so values land in [-1, 1].

Inverse chain: undo the affine maps, reconstruct phase (PGHI by default,
Griffin-Lim as an independent cross-check), then overlap-add synthesis.

PGHI estimates the phase gradients from the log-magnitude through the
Gaussian-window phase-magnitude relations

    dphi/dx  =  (1/gamma) * ds/dxi
    dphi/dxi = -gamma * ds/dx - 2*pi*x        (freq-invariant convention)

with x in samples, xi in cycles/sample, and gamma the squared time-frequency
ratio of the Gaussian best matching the analysis window. Phase is then
integrated outward from magnitude peaks with a max-heap; bins below a
relative magnitude tolerance get random phase from the caller's RNG.
"""

from __future__ import annotations

import heapq
import logging
import wave
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, DimensionError, ValidationError

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-10       # added to magnitudes before the log
SIGMA_FLOOR = 1e-8      # degenerate (constant) spectrogram guard
PGHI_TOL = 1e-6         # relative magnitude below which phase is random
# gamma/window_len^2 for the Gaussian matched to the analysis window
PGHI_GAMMA_SCALE = 0.25645


@dataclass
class SpectrogramMeta:
    """Inversion metadata plus the analysis grid that produced the values."""

    mu: float = 0.0
    sigma: float = 1.0
    r: float = 10.0
    window_len: int = 512
    hop: int = 128
    fft_len: int = 512
    sample_rate: int = 16000
    n_samples: int = 16000
    frames: int = 128

    def __post_init__(self):
        if self.r <= 0:
            raise ValidationError("clip threshold r must be positive")
        if self.hop > self.window_len:
            raise ValidationError("hop must not exceed the window length")
        if self.window_len > self.fft_len:
            raise ValidationError("window must fit into the DFT length")
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")

    @property
    def bins(self) -> int:
        return self.fft_len // 2

    def with_stats(self, mu: float, sigma: float) -> "SpectrogramMeta":
        return replace(self, mu=float(mu), sigma=float(max(sigma, SIGMA_FLOOR)))


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    def fixed_length(self, n: int) -> "AudioClip":
        s = self.samples
        if len(s) >= n:
            s = s[:n]
        else:
            s = np.concatenate([s, np.zeros(n - len(s))])
        return AudioClip(s, self.sample_rate)


@dataclass
class Spectrogram:
    """Normalized values in [-1, 1], shape (bins, frames)."""

    values: np.ndarray
    meta: SpectrogramMeta = field(default_factory=SpectrogramMeta)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.meta.bins, self.meta.frames)
        if self.values.shape != expected:
            raise DimensionError(
                f"spectrogram shape {self.values.shape} != configured {expected}")
        amax = np.abs(self.values).max() if self.values.size else 0.0
        if amax > 1.0 + 1e-9:
            raise ValidationError(f"normalized values must lie in [-1,1], max {amax}")


def hamming(n: int) -> np.ndarray:
    """Periodic Hamming window (DFT-even), the analysis window throughout."""
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


# ---------------------------------------------------------------------------
# analysis / synthesis
# ---------------------------------------------------------------------------

def _framed(samples: np.ndarray, meta: SpectrogramMeta) -> np.ndarray:
    """Centered frames: zero-pad to frames*hop, reflect-pad window/2 each end."""
    n = meta.frames * meta.hop
    x = samples
    if len(x) < n:
        x = np.concatenate([x, np.zeros(n - len(x))])
    else:
        x = x[:n]
    half = meta.window_len // 2
    x = np.pad(x, (half, meta.window_len - half), mode="reflect")
    starts = np.arange(meta.frames) * meta.hop
    idx = starts[:, None] + np.arange(meta.window_len)[None, :]
    return x[idx]


def stft(clip: AudioClip, meta: SpectrogramMeta) -> np.ndarray:
    """Complex frames of shape (fft_len//2 + 1, frames)."""
    if len(clip.samples) < meta.window_len:
        raise DataError(
            f"clip of {len(clip.samples)} samples is shorter than the window")
    frames = _framed(clip.samples, meta) * hamming(meta.window_len)[None, :]
    return np.fft.rfft(frames, n=meta.fft_len, axis=1).T


def istft(frames: np.ndarray, meta: SpectrogramMeta) -> AudioClip:
    """Least-squares overlap-add inverse of `stft` on the same grid."""
    if frames.shape != (meta.fft_len // 2 + 1, meta.frames):
        raise DimensionError(
            f"frame grid {frames.shape} does not match meta "
            f"({meta.fft_len // 2 + 1}, {meta.frames})")
    win = hamming(meta.window_len)
    seg = np.fft.irfft(frames.T, n=meta.fft_len, axis=1)[:, :meta.window_len]
    total = (meta.frames - 1) * meta.hop + meta.window_len
    y = np.zeros(total)
    wsum = np.zeros(total)
    for k in range(meta.frames):
        sl = slice(k * meta.hop, k * meta.hop + meta.window_len)
        y[sl] += seg[k] * win
        wsum[sl] += win * win
    y = np.where(wsum > 1e-12, y / np.maximum(wsum, 1e-12), 0.0)
    half = meta.window_len // 2
    out = np.zeros(meta.n_samples)
    avail = min(meta.n_samples, total - half)
    out[:avail] = y[half:half + avail]
    return AudioClip(out, meta.sample_rate)


def to_log_magnitude(frames: np.ndarray) -> np.ndarray:
    """Natural log of (magnitude + eps); the Nyquist row is dropped."""
    return np.log(np.abs(frames[:-1, :]) + LOG_FLOOR)


def normalize(raw: np.ndarray, meta: SpectrogramMeta) -> Spectrogram:
    """Standardize with the spectrogram's own mu/sigma, clip at +-r, map to [-1,1]."""
    mu = float(raw.mean())
    sigma = float(raw.std())
    m = meta.with_stats(mu, sigma)
    z = (raw - m.mu) / m.sigma
    n_high = int((z > m.r).sum())
    if n_high:
        log.debug("normalize: clipped %d values above +r", n_high)
    z = np.clip(z, -m.r, m.r)
    return Spectrogram(z / m.r, m)


def denormalize(spec: Spectrogram) -> np.ndarray:
    m = spec.meta
    return spec.values * m.r * m.sigma + m.mu


# ---------------------------------------------------------------------------
# phase reconstruction
# ---------------------------------------------------------------------------

def _with_nyquist(log_mag: np.ndarray, meta: SpectrogramMeta) -> np.ndarray:
    """Restore the dropped Nyquist row as silence for synthesis."""
    if log_mag.shape[0] == meta.fft_len // 2 + 1:
        return log_mag
    if log_mag.shape[0] != meta.bins:
        raise DimensionError(f"expected {meta.bins} bins, got {log_mag.shape[0]}")
    silent = np.full((1, log_mag.shape[1]), np.log(LOG_FLOOR))
    return np.concatenate([log_mag, silent], axis=0)


def pghi_phase(log_mag: np.ndarray, meta: SpectrogramMeta,
               rng: np.random.Generator, tol: float = PGHI_TOL,
               gamma: float | None = None) -> np.ndarray:
    """Phase-gradient heap integration over a (fft//2+1, frames) log-magnitude."""
    s = _with_nyquist(log_mag, meta)
    n_bins, n_frames = s.shape
    a, big_m = meta.hop, meta.fft_len
    if gamma is None:
        gamma = PGHI_GAMMA_SCALE * meta.window_len ** 2

    smax = s.max()
    phase = np.zeros_like(s)
    if smax <= np.log(LOG_FLOOR) + 1e-9:
        return phase   # silent input: zero phase

    # phase advance per time step (n -> n+1) and per frequency step (m -> m+1)
    dsdm = np.empty_like(s)
    dsdm[1:-1] = (s[2:] - s[:-2]) / 2.0
    dsdm[0] = s[1] - s[0]
    dsdm[-1] = s[-1] - s[-2]
    dsdn = np.empty_like(s)
    dsdn[:, 1:-1] = (s[:, 2:] - s[:, :-2]) / 2.0
    dsdn[:, 0] = s[:, 1] - s[:, 0]
    dsdn[:, -1] = s[:, -1] - s[:, -2]
    tgradw = (a * big_m / gamma) * dsdm
    fgradw = -(gamma / (a * big_m)) * dsdn \
        - (2.0 * np.pi * a / big_m) * np.arange(n_frames)[None, :]

    # integrate outward from magnitude maxima
    threshold = smax + np.log(tol)
    done = s < threshold                       # silent bins: random phase
    phase[done] = rng.uniform(0.0, 2.0 * np.pi, size=int(done.sum()))
    todo = int((~done).sum())
    heap: list[tuple[float, int, int]] = []
    while todo > 0:
        flat = np.where(~done.reshape(-1))[0]
        start = flat[np.argmax(s.reshape(-1)[flat])]
        m0, n0 = divmod(int(start), n_frames)
        phase[m0, n0] = 0.0
        done[m0, n0] = True
        todo -= 1
        heapq.heappush(heap, (-s[m0, n0], m0, n0))
        while heap:
            _, m, n = heapq.heappop(heap)
            assert done[m, n]
            if n + 1 < n_frames and not done[m, n + 1]:
                phase[m, n + 1] = phase[m, n] + 0.5 * (tgradw[m, n] + tgradw[m, n + 1])
                done[m, n + 1] = True
                todo -= 1
                heapq.heappush(heap, (-s[m, n + 1], m, n + 1))
            if n > 0 and not done[m, n - 1]:
                phase[m, n - 1] = phase[m, n] - 0.5 * (tgradw[m, n] + tgradw[m, n - 1])
                done[m, n - 1] = True
                todo -= 1
                heapq.heappush(heap, (-s[m, n - 1], m, n - 1))
            if m + 1 < n_bins and not done[m + 1, n]:
                phase[m + 1, n] = phase[m, n] + 0.5 * (fgradw[m, n] + fgradw[m + 1, n])
                done[m + 1, n] = True
                todo -= 1
                heapq.heappush(heap, (-s[m + 1, n], m + 1, n))
            if m > 0 and not done[m - 1, n]:
                phase[m - 1, n] = phase[m, n] - 0.5 * (fgradw[m, n] + fgradw[m - 1, n])
                done[m - 1, n] = True
                todo -= 1
                heapq.heappush(heap, (-s[m - 1, n], m - 1, n))
    return phase


def _to_relative_phase(phase_abs: np.ndarray, meta: SpectrogramMeta) -> np.ndarray:
    """Convert freq-invariant phase to the frame-relative STFT convention."""
    n_bins, n_frames = phase_abs.shape
    m_idx = np.arange(n_bins)[:, None]
    starts = np.arange(n_frames)[None, :] * meta.hop - meta.window_len // 2
    return phase_abs + 2.0 * np.pi * m_idx * starts / meta.fft_len


def pghi_invert(log_mag: np.ndarray, meta: SpectrogramMeta,
                rng: np.random.Generator, gamma: float | None = None) -> AudioClip:
    """Raw log-magnitude -> audio via PGHI phase and overlap-add synthesis."""
    s = _with_nyquist(log_mag, meta)
    phase = pghi_phase(s, meta, rng, gamma=gamma)
    mag = np.exp(s) - LOG_FLOOR
    np.maximum(mag, 0.0, out=mag)
    frames = mag * np.exp(1j * _to_relative_phase(phase, meta))
    return istft(frames, meta)


def griffin_lim(log_mag: np.ndarray, meta: SpectrogramMeta, iters: int = 100,
                return_errors: bool = False):
    """Alternating-projection phase recovery; independent check on PGHI."""
    if iters < 1:
        raise ValidationError("griffin_lim needs iters >= 1")
    s = _with_nyquist(log_mag, meta)
    target = np.exp(s) - LOG_FLOOR
    np.maximum(target, 0.0, out=target)
    c = target.astype(np.complex128)
    errors = []
    denom = np.linalg.norm(target) + 1e-30
    clip = None
    for _ in range(iters):
        clip = istft(c, meta)
        rean = stft(clip, meta)
        errors.append(float(np.linalg.norm(np.abs(rean) - target) / denom))
        angles = np.exp(1j * np.angle(rean))
        c = target * angles
    clip = istft(c, meta)
    if return_errors:
        return clip, errors
    return clip


# ---------------------------------------------------------------------------
# forward convenience + WAV I/O
# ---------------------------------------------------------------------------

def clip_to_spectrogram(clip: AudioClip, meta: SpectrogramMeta) -> Spectrogram:
    """Full forward chain for one clip."""
    if clip.sample_rate != meta.sample_rate:
        raise DataError(f"clip rate {clip.sample_rate} != configured {meta.sample_rate}")
    fixed = clip.fixed_length(meta.n_samples)
    if np.abs(fixed.samples).max(initial=0.0) > 1.0 + 1e-6:
        raise DataError("audio samples must lie in [-1, 1]")
    return normalize(to_log_magnitude(stft(fixed, meta)), meta)


def spectrogram_to_clip(spec: Spectrogram, rng: np.random.Generator,
                        method: str = "pghi", gl_iters: int = 100) -> AudioClip:
    raw = denormalize(spec)
    if method == "pghi":
        return pghi_invert(raw, spec.meta, rng)
    if method == "griffin-lim":
        return griffin_lim(raw, spec.meta, iters=gl_iters)
    raise ValidationError(f"unknown inversion method {method!r}")


def read_wav(path) -> AudioClip:
    """16-bit PCM mono only; other formats are rejected, not resampled."""
    try:
        with wave.open(str(path), "rb") as f:
            if f.getcomptype() != "NONE":
                raise DataError(f"{path}: compressed WAV is not supported")
            if f.getnchannels() != 1:
                raise DataError(f"{path}: expected mono, got {f.getnchannels()} channels")
            if f.getsampwidth() != 2:
                raise DataError(f"{path}: expected 16-bit PCM, got "
                                f"{8 * f.getsampwidth()}-bit")
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except wave.Error as e:
        raise DataError(f"{path}: not a readable WAV file ({e})") from e
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip) -> None:
    data = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.clip(np.round(data * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(clip.sample_rate)
        f.writeframes(pcm.tobytes())
