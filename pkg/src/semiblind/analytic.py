"""Closed-form large-system error predictions for the SOS and channel estimators.

All covariances here are "per-symbol-count scaled": a matrix S describes
errors whose actual covariance over M samples is S/M.  That convention
matches the asymptotic statements being implemented and makes the figure
surfaces independent of the absolute block length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularSystemError
from .model import SystemParams
from .sos import free_slots, hermitian_basis, outer_free_jacobian

__all__ = [
    "SosErrorModel",
    "RealErrorModel",
    "predict_sos_covariance",
    "average_sos_variance",
    "sos_pseudo_covariance",
    "real_covariance",
    "predict_subspace_angle",
    "predict_subspace_mse",
    "optimal_omega",
    "moment_jacobian",
    "mm_error_covariance",
    "mm_lower_bound",
    "efficiency",
]

_COND_LIMIT = 1e12


@dataclass
class SosErrorModel:
    """Scaled covariance of one user's SOS estimation error.

    ``sigma_dd`` is the P^2 x P^2 Hermitian PSD matrix whose (i, j) entry is
    the scaled covariance between error components i and j; it decomposes as
    c*I + noise_var*omega with the channel-independent floor c and the
    rank-structured, channel-dependent ``omega``.
    """

    sigma_dd: np.ndarray  # (P^2, P^2) complex
    omega: np.ndarray  # (P^2, P^2) complex
    sigma_d2: float


@dataclass
class RealErrorModel:
    """Real covariance of the stacked observation (training est., free SOS vars).

    ``sigma_df`` is the scaled P^2 x P^2 covariance of the SOS free
    variables; ``sigma_zz`` the unscaled (2P+P^2)-dim covariance of the full
    observation error, block-diagonal with training block
    noise_var/(2 M_t) * I.
    """

    sigma_zz: np.ndarray
    sigma_df: np.ndarray


def _mai_floor(params: SystemParams) -> float:
    """Channel-independent variance floor 2*beta*s2 + s2^2 + beta^2 + 2*beta/P."""
    beta, s2, p = params.load, params.noise_var, params.taps
    return 2 * beta * s2 + s2 * s2 + beta * beta + 2 * beta / p


def _omega_matrix(g: np.ndarray) -> np.ndarray:
    """Channel-dependent part of the SOS error covariance.

    Index i of the vec'd error addresses matrix position
    (row, col) = (i mod P, i // P); the four cases are: both positions equal
    (sum of the two tap powers), matching rows (conjugate product of the
    column taps), matching columns (product of the row taps), else zero.
    """
    p = g.shape[0]
    idx = np.arange(p * p)
    row, col = idx % p, idx // p
    same_row = row[:, None] == row[None, :]
    same_col = col[:, None] == col[None, :]
    om = np.zeros((p * p, p * p), dtype=complex)
    om[same_row] = (g.conj()[col[:, None]] * g[col[None, :]])[same_row]
    om[same_col] = (g[row[:, None]] * g.conj()[row[None, :]])[same_col]
    diag = np.abs(g[col]) ** 2 + np.abs(g[row]) ** 2
    om[idx, idx] = diag
    return om


def predict_sos_covariance(g: np.ndarray, params: SystemParams) -> SosErrorModel:
    """Scaled SOS error covariance c*I + noise_var*Omega for one user's taps."""
    g = np.asarray(g, dtype=complex)
    if np.linalg.norm(g) == 0:
        raise ValueError("channel vector must be nonzero")
    c = _mai_floor(params)
    omega = _omega_matrix(g)
    sigma = c * np.eye(g.shape[0] ** 2) + params.noise_var * omega
    return SosErrorModel(
        sigma_dd=sigma, omega=omega, sigma_d2=average_sos_variance(params)
    )


def average_sos_variance(params: SystemParams) -> float:
    """Average per-component SOS error variance over users and components."""
    beta, s2, p = params.load, params.noise_var, params.taps
    return 2 * beta * s2 + s2 * s2 + beta * beta + 2 * (beta + s2) / p


def sos_pseudo_covariance(sigma_dd: np.ndarray) -> np.ndarray:
    """Scaled pseudo-covariance (no conjugate) of the SOS error.

    Because the reshaped error matrix is Hermitian, component pi(j) at the
    transposed position equals the conjugate of component j, so the
    pseudo-covariance is the covariance with its columns permuted by pi.
    """
    dim = sigma_dd.shape[0]
    p = int(round(np.sqrt(dim)))
    j = np.arange(dim)
    perm = (j % p) * p + j // p
    return sigma_dd[:, perm]


# free-slot positions in the vec'd matrix and their (re / im) parts
def _slot_positions(taps: int) -> tuple[np.ndarray, np.ndarray]:
    pos, is_im = [], []
    for kind, i, j in free_slots(taps):
        pos.append(j * taps + i)
        is_im.append(kind == "im")
    return np.array(pos), np.array(is_im)


def real_covariance(
    sigma_dd: np.ndarray, pseudo: np.ndarray, params: SystemParams
) -> RealErrorModel:
    """Assemble the real observation covariance from (covariance, pseudo).

    For complex entries u, v with covariance C = E{u conj(v)} and
    pseudo-covariance R = E{u v}:

        cov(Re u, Re v) = (Re C + Re R) / 2
        cov(Im u, Im v) = (Re C - Re R) / 2
        cov(Re u, Im v) = (Im R - Im C) / 2
        cov(Im u, Re v) = (Im R + Im C) / 2

    restricted here to the canonical free-variable ordering.
    """
    if params.train_symbols == 0:
        raise ConfigError("degenerate configuration: no training symbols (M_t = 0)")
    if params.train_symbols == params.symbols:
        raise ConfigError("degenerate configuration: no information symbols (M_t = M)")
    taps = params.taps
    pos, is_im = _slot_positions(taps)
    c_sub = sigma_dd[np.ix_(pos, pos)]
    r_sub = pseudo[np.ix_(pos, pos)]

    re_u = ~is_im[:, None]
    re_v = ~is_im[None, :]
    out = np.where(
        re_u & re_v,
        0.5 * (c_sub.real + r_sub.real),
        np.where(
            re_u & ~re_v,
            0.5 * (r_sub.imag - c_sub.imag),
            np.where(~re_u & re_v, 0.5 * (r_sub.imag + c_sub.imag),
                     0.5 * (c_sub.real - r_sub.real)),
        ),
    )
    sigma_df = 0.5 * (out + out.T)

    two_p = 2 * taps
    dim = two_p + taps * taps
    sigma_zz = np.zeros((dim, dim))
    sigma_zz[:two_p, :two_p] = (
        params.noise_var / (2.0 * params.train_symbols)
    ) * np.eye(two_p)
    sigma_zz[two_p:, two_p:] = sigma_df / (params.symbols - params.train_symbols)
    return RealErrorModel(sigma_zz=sigma_zz, sigma_df=sigma_df)


def predict_subspace_angle(g: np.ndarray, params: SystemParams) -> float:
    """Scaled mean squared sine of the angle between the leading SOS
    eigenvector and the channel direction."""
    g = np.asarray(g, dtype=complex)
    energy = float(np.linalg.norm(g) ** 2)
    if energy == 0:
        raise ValueError("channel vector must be nonzero")
    beta, s2, p = params.load, params.noise_var, params.taps
    num = (p - 1) * ((2 * beta + energy) * s2 + s2 * s2 + beta * beta + 2 * beta / p)
    return num / energy**2


def _check_train_frac(params: SystemParams) -> float:
    alpha = params.train_frac
    if not 0 < alpha < 1:
        raise ConfigError(f"training fraction alpha={alpha} must lie in (0, 1)")
    return alpha


def predict_subspace_mse(
    g: np.ndarray,
    params: SystemParams,
    omega: float,
    angle_var: float | None = None,
) -> float:
    """Scaled per-tap MSE of the subspace estimator at combining weight omega.

    ``angle_var`` overrides the eigenvector-angle variance (e.g. 0 for the
    hypothetical perfect-subspace limit); by default it is predicted from g.
    """
    if not 0 <= omega <= 1:
        raise ValueError(f"omega={omega} must lie in [0, 1]")
    alpha = _check_train_frac(params)
    p, s2 = params.taps, params.noise_var
    energy = float(np.linalg.norm(g) ** 2)
    theta2 = predict_subspace_angle(g, params) if angle_var is None else angle_var
    return (
        omega**2 * energy * (1 + 1 / p) * theta2 / ((1 - alpha) * p)
        + (1 - omega) ** 2 * (p - 1) * s2 / (p * alpha)
        + s2 / (p * alpha)
    )


def optimal_omega(
    g: np.ndarray, params: SystemParams, angle_var: float | None = None
) -> float:
    """Minimizer of the subspace MSE quadratic, clamped to [0, 1].

    P = 1 leaves the MSE flat in omega (the projection step is vacuous) and
    returns 0 by convention; a perfect subspace (zero angle variance) makes
    full projection optimal, omega = 1.
    """
    alpha = _check_train_frac(params)
    p, s2 = params.taps, params.noise_var
    if p == 1:
        return 0.0
    theta2 = predict_subspace_angle(g, params) if angle_var is None else angle_var
    if theta2 == 0:
        return 1.0
    energy = float(np.linalg.norm(g) ** 2)
    num = (p - 1) * s2 / alpha
    den = energy * (1 + 1 / p) * theta2 / (1 - alpha) + num
    return float(min(1.0, max(0.0, num / den)))


def moment_jacobian(g: np.ndarray) -> np.ndarray:
    """Derivative of the stacked observation map wrt the real channel vars.

    The observation maps the channel to (itself, free SOS variables); the
    top 2P x 2P block is the identity and the bottom rows are the gradients
    of the free variables of vec(g g^H), all linear in g.
    """
    g = np.asarray(g, dtype=complex)
    p = g.shape[0]
    return np.vstack([np.eye(2 * p), outer_free_jacobian(g)])


def _scaled_obs_covariance(g: np.ndarray, params: SystemParams) -> np.ndarray:
    """Block-scaled observation covariance entering the asymptotic sandwich.

    Equals (symbols count) times the unscaled observation covariance: the
    training block becomes noise_var/(2 alpha) I and the SOS block
    sigma_df/(1 - alpha).
    """
    model = predict_sos_covariance(g, params)
    pseudo = sos_pseudo_covariance(model.sigma_dd)
    real = real_covariance(model.sigma_dd, pseudo, params)
    return params.symbols * real.sigma_zz


def _stationarity_jacobians(
    g: np.ndarray, weight: float
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of the moment-matching stationarity map F at the true point.

    Returns (dF/dg_real, dF/dz_real) evaluated at g with exact moments, for
    the cost w ||vec(g g^H) - d||^2 + (1 - w) ||g - g_bar||^2.
    """
    g = np.asarray(g, dtype=complex)
    p = g.shape[0]
    a, b = g.real, g.imag
    d_mat = np.outer(g, g.conj())
    energy = float(np.linalg.norm(g) ** 2)
    eye = np.eye(p)

    h_aa = 4 * weight * (2 * np.outer(a, a) + energy * eye - d_mat.real)
    h_bb = 4 * weight * (2 * np.outer(b, b) + energy * eye - d_mat.real)
    h_ab = 4 * weight * (2 * np.outer(a, b) + d_mat.imag)
    h_ba = 4 * weight * (2 * np.outer(b, a) - d_mat.imag)
    hess = np.block([[h_aa, h_ab], [h_ba, h_bb]])
    hess += 2 * (1 - weight) * np.eye(2 * p)

    basis = hermitian_basis(p)
    bg = basis @ g  # (P^2, P)
    df_dfree = -4 * weight * np.concatenate([bg.real, bg.imag], axis=1).T  # (2P, P^2)
    df_dz = np.hstack([-2 * (1 - weight) * np.eye(2 * p), df_dfree])
    return hess, df_dz


def mm_error_covariance(
    g: np.ndarray, params: SystemParams, weight: float | None = None
) -> tuple[np.ndarray, float]:
    """Scaled error covariance of the moment-matching estimator at channel g.

    Returns (Sigma, sigma_g2) where Sigma is the 2P x 2P real covariance of
    the stacked (Re, Im) channel error and sigma_g2 = trace(Sigma)/P its
    per-tap summary.  ``weight`` defaults to the plug-in weighting factor.
    """
    alpha = _check_train_frac(params)
    if weight is None:
        from .estimators import weight_w

        weight = weight_w(alpha, params.noise_var, average_sos_variance(params))
    hess, df_dz = _stationarity_jacobians(g, weight)
    cond = np.linalg.cond(hess)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularSystemError(
            "stationarity Jacobian is singular at this channel", condition=float(cond)
        )
    sens = -np.linalg.solve(hess, df_dz)
    sigma = sens @ _scaled_obs_covariance(g, params) @ sens.T
    sigma = 0.5 * (sigma + sigma.T)
    return sigma, float(np.trace(sigma) / params.taps)


def mm_lower_bound(g: np.ndarray, params: SystemParams) -> np.ndarray:
    """Scaled covariance floor for any estimator built on the same moments.

    In the no-information-symbols limit (M_t = M) the SOS block carries no
    information and the bound reduces to the training covariance
    noise_var/(2 alpha) I.
    """
    p = params.taps
    if params.train_symbols == params.symbols:
        return (params.noise_var / 2.0) * np.eye(2 * p)
    jac = moment_jacobian(g)
    cov = _scaled_obs_covariance(g, params)
    try:
        info = jac.T @ np.linalg.solve(cov, jac)
        bound = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "observation covariance or information matrix is singular",
            condition=float(np.linalg.cond(cov)),
        ) from exc
    return 0.5 * (bound + bound.T)


def efficiency(sigma_g2: float, sigma_n2: float, alpha: float) -> float:
    """Training-symbol worth of each information symbol for estimation."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha={alpha} must lie in (0, 1)")
    if sigma_g2 <= 0:
        raise ValueError("sigma_g2 must be positive")
    return (sigma_n2 / sigma_g2 - alpha) / (1 - alpha)
