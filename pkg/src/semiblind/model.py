"""Synchronous long-code DS-CDMA signal model over block-fading FIR channels.

Everything here is a pure function of (parameters, rng): drawing channels,
spreading codes and symbols, and synthesizing the per-symbol ISI-free
received windows.  Chip indices follow the 1-based convention l = 1..N in
all interface documentation; arrays are stored 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

__all__ = [
    "SystemParams",
    "ChannelRealization",
    "CodeBook",
    "SymbolFrame",
    "ReceivedBlock",
    "sample_channel",
    "sample_codes",
    "sample_symbols",
    "sylvester",
    "synthesize_received",
    "vec_outer",
    "unvec",
]

# QPSK constellation (+-1 +-j)/sqrt(2), indexed by 2-bit symbol
_QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


@dataclass(frozen=True)
class SystemParams:
    """All scalar constants of the synchronous uplink model.

    Attributes
    ----------
    users : int
        Number of active users K.
    gain : int
        Spreading gain N (chips per symbol).
    taps : int
        Channel order P (delay spread in chips).  Must satisfy P < N so the
        per-symbol window of N-P+1 chips is free of inter-symbol leakage.
    symbols : int
        Coherence block length M in symbols; channels are constant over it.
    train_symbols : int
        Training symbols M_t at the head of each block (0 <= M_t <= M).
    noise_var : float
        Complex noise variance per chip sample (dimensionless inverse SNR).
    """

    users: int
    gain: int
    taps: int
    symbols: int
    train_symbols: int = 0
    noise_var: float = 0.0

    def __post_init__(self):
        if self.users < 1 or self.gain < 1 or self.taps < 1 or self.symbols < 1:
            raise ValueError("users, gain, taps and symbols must all be >= 1")
        if self.taps >= self.gain:
            raise ValueError(
                f"channel order taps={self.taps} must be < spreading gain "
                f"gain={self.gain}"
            )
        if not 0 <= self.train_symbols <= self.symbols:
            raise ValueError("train_symbols must lie in [0, symbols]")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")

    @property
    def load(self) -> float:
        """System load beta = K/N."""
        return self.users / self.gain

    @property
    def train_frac(self) -> float:
        """Training fraction alpha = M_t/M."""
        return self.train_symbols / self.symbols

    @property
    def window(self) -> int:
        """Length N-P+1 of each ISI-free received window."""
        return self.gain - self.taps + 1


@dataclass
class ChannelRealization:
    """Per-user channel taps and their vectorized outer products.

    ``gains[k]`` is the length-P complex coefficient vector of user k and
    ``sos[k] = vec(gains[k] gains[k]^H)`` its column-stacked rank-one
    second-order statistic (length P^2).
    """

    gains: np.ndarray  # (K, P) complex
    sos: np.ndarray  # (K, P^2) complex


@dataclass
class CodeBook:
    """Per-user, per-symbol spreading chips, each chip +-1/sqrt(N)."""

    chips: np.ndarray  # (K, M, N) float


@dataclass
class SymbolFrame:
    """Unit-energy channel symbols with the leading training flags."""

    symbols: np.ndarray  # (K, M) complex
    train_mask: np.ndarray  # (M,) bool


@dataclass
class ReceivedBlock:
    """ISI-free received windows r(m), one length N-P+1 vector per symbol."""

    windows: np.ndarray  # (M, N-P+1) complex
    noise: np.ndarray | None = field(default=None, repr=False)


def vec_outer(g: np.ndarray) -> np.ndarray:
    """Column-stacked vec(g g^H) for one vector or a batch of row vectors.

    Entry c*P+r of the result is g[r] * conj(g[c]).
    """
    g = np.asarray(g)
    p = g.shape[-1]
    outer = np.einsum("...r,...c->...cr", g, g.conj())
    return outer.reshape(*g.shape[:-1], p * p)


def unvec(d: np.ndarray, taps: int) -> np.ndarray:
    """Inverse of column-stacked vec: reshape a P^2 vector to P x P."""
    return np.asarray(d).reshape(taps, taps, order="F")


def sample_channel(params: SystemParams, rng: np.random.Generator) -> ChannelRealization:
    """Draw i.i.d. circularly-symmetric complex Gaussian taps, variance 1/P.

    Real and imaginary parts of each coefficient carry variance 1/(2P), so
    E{|g_k(p)|^2} = 1/P and E{||g_k||^2} = 1.
    """
    k, p = params.users, params.taps
    scale = np.sqrt(1.0 / (2.0 * p))
    gains = scale * (rng.standard_normal((k, p)) + 1j * rng.standard_normal((k, p)))
    return ChannelRealization(gains=gains, sos=vec_outer(gains))


def sample_codes(params: SystemParams, rng: np.random.Generator) -> CodeBook:
    """Draw i.i.d. Rademacher chips scaled by 1/sqrt(N) for every (k, m, l)."""
    shape = (params.users, params.symbols, params.gain)
    chips = (2.0 * rng.integers(0, 2, size=shape) - 1.0) / np.sqrt(params.gain)
    return CodeBook(chips=chips)


def sample_symbols(params: SystemParams, rng: np.random.Generator) -> SymbolFrame:
    """Draw uniform QPSK symbols; the first M_t symbols are flagged training."""
    idx = rng.integers(0, 4, size=(params.users, params.symbols))
    mask = np.zeros(params.symbols, dtype=bool)
    mask[: params.train_symbols] = True
    return SymbolFrame(symbols=_QPSK[idx], train_mask=mask)


def sylvester(code_word: np.ndarray, taps: int) -> np.ndarray:
    """Truncated Sylvester (banded convolution) matrix of one code word.

    Row i (1-based) is (s(P+i-1), s(P+i-2), ..., s(i)); multiplying by a
    channel vector yields the convolution s * g restricted to the ISI-free
    lags P..N.  Shape (N-P+1, P).
    """
    s = np.asarray(code_word)
    n = s.shape[0]
    if taps >= n:
        raise ValueError(f"taps={taps} must be < code length {n}")
    return toeplitz(s[taps - 1 :], s[taps - 1 :: -1])


def _window_stack(chips: np.ndarray, taps: int) -> np.ndarray:
    """Sylvester matrices of every (user, symbol) code word at once.

    Returns shape (K, M, N-P+1, P); [k, m] equals sylvester(chips[k, m], P).
    """
    view = np.lib.stride_tricks.sliding_window_view(chips, taps, axis=-1)
    return view[..., ::-1]


def _mix_weights(channel: ChannelRealization, symbols: np.ndarray) -> np.ndarray:
    """Per-symbol stacked transmit weights g_k x_k(m), shape (M, K*P)."""
    w = symbols.T[:, :, None] * channel.gains[None, :, :]  # (M, K, P)
    return w.reshape(w.shape[0], -1)


def synthesize_received(
    params: SystemParams,
    channel: ChannelRealization,
    codes: CodeBook,
    symbols: SymbolFrame,
    rng: np.random.Generator,
    mode: str = "isi-free",
    keep_noise: bool = False,
) -> ReceivedBlock:
    """Synthesize the M received windows r(m) of length N-P+1.

    ``isi-free`` evaluates r(m) = sum_k C_k^(m) g_k x_k(m) + n(m) directly,
    which is the analysis model.  ``full-stream`` convolves the entire chip
    stream (so each symbol's first P-1 chips carry the previous symbol's
    tail) and then keeps the same N-P+1 chips per symbol; with P < N those
    retained chips are unaffected by the leakage, making the two modes agree
    when driven with identical noise.
    """
    k, n, p, m = params.users, params.gain, params.taps, params.symbols
    if channel.gains.shape != (k, p):
        raise ValueError("channel shape inconsistent with params")
    if codes.chips.shape != (k, m, n):
        raise ValueError("codes shape inconsistent with params")
    if symbols.symbols.shape != (k, m):
        raise ValueError("symbols shape inconsistent with params")

    if mode == "isi-free":
        stack = _window_stack(codes.chips, p)  # (K, M, N-P+1, P)
        smat = np.ascontiguousarray(stack.transpose(1, 2, 0, 3)).reshape(
            m, params.window, k * p
        )
        clean = np.einsum("mnj,mj->mn", smat, _mix_weights(channel, symbols.symbols))
    elif mode == "full-stream":
        stream = (symbols.symbols[:, :, None] * codes.chips).reshape(k, m * n)
        total = np.zeros(m * n + p - 1, dtype=complex)
        for ku in range(k):
            total += np.convolve(stream[ku], channel.gains[ku])
        # window m keeps chips mN+P .. (m+1)N (1-based chip times)
        starts = np.arange(m) * n + p - 1
        clean = total[starts[:, None] + np.arange(params.window)[None, :]]
    else:
        raise ValueError(f"unknown synthesis mode {mode!r}")

    sigma = np.sqrt(params.noise_var / 2.0)
    noise = sigma * (
        rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    )
    return ReceivedBlock(windows=clean + noise, noise=noise if keep_noise else None)
