"""Shared Monte Carlo machinery for the test suite.

Conditioned experiments fix the entire channel realization and redraw
codes, symbols and noise each trial: that is the ensemble over which the
large-system covariance formulas are stated.  "Representative" channel sets
additionally require the average per-user energy to sit near its mean of 1
so that the interference terms realized in the draw match the closed forms,
which assume unit average user energy.
"""

from __future__ import annotations

import numpy as np

from semiblind import estimators, model, sos


def seeded_rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(key)))


def representative_channels(
    params: model.SystemParams,
    *key: int,
    mean_tol: float = 0.02,
    user0_range: tuple[float, float] | None = None,
) -> model.ChannelRealization:
    """Draw channel sets until the energies are representative."""
    attempt = 0
    while True:
        ch = model.sample_channel(params, seeded_rng(*key, attempt))
        energy = np.linalg.norm(ch.gains, axis=1) ** 2
        ok = abs(energy.mean() - 1.0) < mean_tol
        if ok and user0_range is not None:
            ok = user0_range[0] < energy[0] < user0_range[1]
        if ok:
            return ch
        attempt += 1


def draw_block(params, channel, rng, synthesis="isi-free"):
    """Fresh codes, symbols and received windows for a fixed channel."""
    codes = model.sample_codes(params, rng)
    frame = model.sample_symbols(params, rng)
    received = model.synthesize_received(
        params, channel, codes, frame, rng, mode=synthesis
    )
    return codes, frame, received


def sos_trials(
    params: model.SystemParams,
    channel: model.ChannelRealization,
    n_trials: int,
    *key: int,
    mode: str = "identity",
    info_start: int = 0,
) -> np.ndarray:
    """Hermitianized SOS estimates (n_trials, K, P^2), channel held fixed."""
    out = np.empty((n_trials, params.users, params.taps**2), dtype=complex)
    need_gram = mode not in ("identity", "identity-t")
    for t in range(n_trials):
        codes, _, received = draw_block(params, channel, seeded_rng(*key, t))
        system = sos.build_normal_equations(
            codes,
            received,
            range(info_start, params.symbols),
            params.noise_var,
            include_gram=need_gram,
        )
        out[t] = sos.hermitianize(sos.estimate_sos(system, mode)).values
    return out


def training_trials(
    params: model.SystemParams,
    channel: model.ChannelRealization,
    n_trials: int,
    *key: int,
) -> np.ndarray:
    """Training despreader outputs (n_trials, K, P), channel held fixed."""
    out = np.empty((n_trials, params.users, params.taps), dtype=complex)
    for t in range(n_trials):
        codes, frame, received = draw_block(params, channel, seeded_rng(*key, t))
        out[t] = estimators.training_estimate(received, codes, frame, params).gains
    return out


def scaled_covariance(samples: np.ndarray, scale: int) -> np.ndarray:
    """scale * E{x x^H} of mean-subtracted sample rows."""
    centered = samples - samples.mean(axis=0)
    return scale * (centered.T @ centered.conj()) / (samples.shape[0] - 1)


def gram_only(params: model.SystemParams, rng: np.random.Generator) -> np.ndarray:
    """The normal-equation matrix T for one fresh code draw (no data needed)."""
    codes = model.sample_codes(params, rng)
    received = model.ReceivedBlock(
        windows=np.zeros((params.symbols, params.window), dtype=complex)
    )
    system = sos.build_normal_equations(
        codes, received, range(params.symbols), 0.0, include_gram=True
    )
    return system.gram
