"""The three channel estimators: training-only, moment-matching, subspace.

Estimation is carried out per user: the training despreader and the SOS
estimates decouple across users up to interference that vanishes in the
large-system limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import CodeBook, ReceivedBlock, SymbolFrame, SystemParams, _window_stack, unvec
from .sos import free_vars, free_weights, hermitianize, outer_free_jacobian

__all__ = [
    "TrainingEstimate",
    "SemiblindEstimate",
    "FitDiagnostics",
    "training_estimate",
    "weight_w",
    "mm_semiblind",
    "principal_eigvec",
    "subspace_semiblind",
]

_MAX_ITER = 200
_COST_TOL = 1e-10
_GRAD_TOL = 1e-8
_STEP_FLOOR = 1e-8


@dataclass
class TrainingEstimate:
    """Despread training-symbol channel estimates for all users."""

    gains: np.ndarray  # (K, P) complex
    noise_var: float  # per-entry error variance noise_var / M_t


@dataclass
class FitDiagnostics:
    """Bookkeeping from a single per-user estimator run."""

    method: str
    weight: float  # moment-matching w or subspace omega
    weight_source: str = "given"  # given | oracle | plugin
    iterations: int = 0
    cost: float = 0.0
    grad_norm: float = 0.0
    converged: bool = True
    cost_trace: list[float] = field(default_factory=list, repr=False)


@dataclass
class SemiblindEstimate:
    """One user's channel estimate plus the diagnostics that produced it."""

    gains: np.ndarray  # (P,) complex
    method: str
    diagnostics: FitDiagnostics


def training_estimate(
    received: ReceivedBlock,
    codes: CodeBook,
    symbols: SymbolFrame,
    params: SystemParams,
) -> TrainingEstimate:
    """Symbol-conjugated despreading correlator over the training prefix.

    g_bar_k = (1/M_t) sum_m conj(x_k(m)) C_k^(m)T r(m); the conjugation makes
    the signal coefficient converge to 1 and leaves additive noise of
    variance noise_var / M_t per tap.
    """
    mt = params.train_symbols
    if mt < 1:
        raise ConfigError("training_estimate requires at least one training symbol")
    windows = _window_stack(codes.chips[:, :mt, :], params.taps)  # (K, Mt, n_w, P)
    xbar = symbols.symbols[:, :mt].conj()
    gains = np.einsum("kmnp,mn,km->kp", windows, received.windows[:mt], xbar) / mt
    return TrainingEstimate(gains=gains, noise_var=params.noise_var / mt)


def weight_w(alpha: float, sigma_n2: float, sigma_d2: float) -> float:
    """Relative weight on the SOS term in the moment-matching cost."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha={alpha} must lie in (0, 1)")
    return (1 - alpha) * sigma_n2 / ((1 - alpha) * sigma_n2 + alpha * sigma_d2)


def _mm_residual_jac(
    gr: np.ndarray, gbar_r: np.ndarray, d_free: np.ndarray, weight: float
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked residual and Jacobian of the moment-matching least squares.

    The SOS rows carry sqrt(weight * Frobenius weight) so that the squared
    residual norm reproduces w ||vec(g g^H) - d||^2 + (1-w) ||g - g_bar||^2.
    """
    p = gbar_r.shape[0] // 2
    g = gr[:p] + 1j * gr[p:]
    wts = np.sqrt(weight * free_weights(p))
    f = free_vars(np.outer(g, g.conj()).reshape(-1, order="F"))
    res = np.concatenate([wts * (f - d_free), np.sqrt(1 - weight) * (gr - gbar_r)])
    jac = np.vstack(
        [wts[:, None] * outer_free_jacobian(g), np.sqrt(1 - weight) * np.eye(2 * p)]
    )
    return res, jac


def mm_semiblind(
    g_bar: np.ndarray,
    d_hat: np.ndarray,
    weight: float,
    max_iter: int = _MAX_ITER,
    init: np.ndarray | None = None,
) -> SemiblindEstimate:
    """Damped Gauss-Newton minimization of the moment-matching cost.

    Starts from the training estimate (or ``init``), halves the step while
    the cost increases (floor 1e-8), and stops on relative cost decrease
    below 1e-10, gradient norm below 1e-8, or ``max_iter`` iterations.  The
    accepted-cost sequence is non-increasing by construction; failure to
    converge is flagged in the diagnostics rather than raised.
    """
    if not 0 <= weight <= 1:
        raise ValueError(f"weight={weight} must lie in [0, 1]")
    g_bar = np.asarray(g_bar, dtype=complex)
    p = g_bar.shape[0]
    d_free = free_vars(hermitianize(np.asarray(d_hat, dtype=complex)))
    gbar_r = np.concatenate([g_bar.real, g_bar.imag])
    gr = gbar_r.copy() if init is None else np.concatenate(
        [np.asarray(init).real, np.asarray(init).imag]
    )

    res, jac = _mm_residual_jac(gr, gbar_r, d_free, weight)
    cost = float(res @ res)
    trace = [cost]
    grad_norm = float(np.linalg.norm(2 * jac.T @ res))
    converged = grad_norm < _GRAD_TOL
    it = 0
    while not converged and it < max_iter:
        it += 1
        step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        scale = 1.0
        while scale >= _STEP_FLOOR:
            trial = gr + scale * step
            res_t, jac_t = _mm_residual_jac(trial, gbar_r, d_free, weight)
            cost_t = float(res_t @ res_t)
            if cost_t <= cost:
                break
            scale *= 0.5
        else:
            break  # no downhill step left; keep the best iterate
        rel_drop = (cost - cost_t) / max(cost, 1e-300)
        gr, res, jac, cost = trial, res_t, jac_t, cost_t
        trace.append(cost)
        grad_norm = float(np.linalg.norm(2 * jac.T @ res))
        if grad_norm < _GRAD_TOL or rel_drop < _COST_TOL:
            converged = True

    diag = FitDiagnostics(
        method="mm",
        weight=weight,
        iterations=it,
        cost=cost,
        grad_norm=grad_norm,
        converged=converged,
        cost_trace=trace,
    )
    return SemiblindEstimate(gains=gr[:p] + 1j * gr[p:], method="mm", diagnostics=diag)


def principal_eigvec(d_hat: np.ndarray) -> np.ndarray:
    """Unit eigenvector of the top eigenvalue of the reshaped SOS estimate.

    Phase convention: the first entry of magnitude above 1e-12 is rotated to
    the positive real axis, which fixes the otherwise arbitrary phase
    deterministically.
    """
    d_hat = np.asarray(d_hat, dtype=complex)
    taps = int(round(np.sqrt(d_hat.shape[-1])))
    mat = unvec(d_hat, taps)
    mat = 0.5 * (mat + mat.conj().T)
    _, vecs = np.linalg.eigh(mat)
    u = vecs[:, -1]
    for entry in u:
        if abs(entry) > 1e-12:
            u = u * (entry.conj() / abs(entry))
            break
    return u


def subspace_semiblind(
    g_bar: np.ndarray, d_hat: np.ndarray, omega: float
) -> SemiblindEstimate:
    """Project the training estimate on the leading SOS eigenvector and blend.

    g_hat = omega (u^H g_bar) u + (1 - omega) g_bar; invariant to the phase
    of u, so the SOS phase ambiguity never reaches the estimate.
    """
    if not 0 <= omega <= 1:
        raise ValueError(f"omega={omega} must lie in [0, 1]")
    g_bar = np.asarray(g_bar, dtype=complex)
    u = principal_eigvec(d_hat)
    gains = omega * (u.conj() @ g_bar) * u + (1 - omega) * g_bar
    diag = FitDiagnostics(method="subspace", weight=omega)
    return SemiblindEstimate(gains=gains, method="subspace", diagnostics=diag)
