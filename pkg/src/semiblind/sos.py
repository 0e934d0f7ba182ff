"""Moment-matching estimation of per-user channel SOS from information symbols.

The normal equations T d = y are assembled without ever materializing the
(N-P+1)^2 x P^2 K regressor Q(m): block (i, j) of Q^T(m) Q(m) equals
(C_i^T C_j) (x) (C_i^T C_j) and block k of Q^T(m) vec(r r^H) equals
vec(a_k a_k^H) with a_k = C_k^T r, which drops the per-symbol cost from
O(N^4) to O(K^2 P^2 N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import cg

from .errors import ConvergenceError, SingularSystemError
from .model import CodeBook, ReceivedBlock, _window_stack, unvec

__all__ = [
    "SosSystem",
    "SosEstimate",
    "build_normal_equations",
    "estimate_sos",
    "hermitianize",
    "free_vars",
    "free_vars_inverse",
    "free_slots",
    "hermitian_basis",
    "free_weights",
    "outer_free_jacobian",
]

# ridge scale and iterative-solver settings
_RIDGE = 1e-8
_CG_TOL = 1e-8
_CG_MAXITER = 500
_HERMITIAN_TOL = 1e-10


@dataclass
class SosSystem:
    """Accumulated normal equations for one coherence block.

    ``gram`` is the real symmetric PSD matrix T = (1/M) sum_m Q^T(m) Q(m)
    (it depends only on the codes, never on the received data) and ``rhs``
    the complex vector y.  ``gram`` may be omitted when only the identity-T
    approximation will be used.
    """

    rhs: np.ndarray  # (K*P^2,) complex
    gram: np.ndarray | None  # (K*P^2, K*P^2) float or None
    users: int
    taps: int


@dataclass
class SosEstimate:
    """Per-user estimated SOS vectors and the solver mode that produced them."""

    values: np.ndarray  # (K, P^2) complex
    mode: str


def build_normal_equations(
    codes: CodeBook,
    received: ReceivedBlock,
    info_range,
    noise_var: float,
    include_gram: bool = True,
) -> SosSystem:
    """Accumulate T and y over the given information-symbol indices.

    Parameters
    ----------
    codes, received :
        Spreading chips and the matching ISI-free windows.
    info_range :
        Symbol indices (0-based) contributing to the statistics; must be
        nonempty.
    noise_var :
        Complex noise variance used for the bias correction
        sigma_n^2 Q^T(m) vec(I) = sigma_n^2 vec(C_k^T C_k) per user block.
    include_gram :
        Skip the (comparatively expensive) T accumulation when False; the
        returned system then only supports identity-T estimation.
    """
    idx = np.asarray(list(info_range), dtype=int)
    if idx.size == 0:
        raise ValueError("info_range must be nonempty")
    k, m_total, n = codes.chips.shape
    taps = n - received.windows.shape[1] + 1
    if np.any(idx < 0) or np.any(idx >= m_total):
        raise ValueError("info_range indices out of bounds")

    windows = _window_stack(codes.chips[:, idx, :], taps)  # (K, Mi, n_w, P)
    windows = np.ascontiguousarray(windows.transpose(1, 2, 0, 3))  # (Mi, n_w, K, P)
    mi, n_w = windows.shape[0], windows.shape[1]
    r = received.windows[idx]

    # per-user correlator outputs a_k(m) = C_k^(m)T r(m)
    smat = windows.reshape(mi, n_w, k * taps)
    a = np.einsum("mnj,mn->mj", smat, r).reshape(mi, k, taps)

    # block k of y: mean_m vec(a_k a_k^H) - noise_var * mean_m vec(C_k^T C_k)
    moments = np.einsum("mkr,mkc->kcr", a, a.conj()) / mi
    self_gram = np.einsum("mnkp,mnkq->kpq", windows, windows) / mi
    rhs = moments - noise_var * self_gram.transpose(0, 2, 1)
    rhs = rhs.reshape(k, taps * taps).reshape(-1)

    gram = None
    if include_gram:
        dim = k * taps * taps
        p2 = taps * taps
        acc = np.zeros((k * k, p2, p2))
        # chunk the symbol axis: the batched (KP x KP) Gram products dominate memory
        chunk = max(1, 8_000_000 // (k * taps * k * taps))
        for lo in range(0, mi, chunk):
            s_c = smat[lo : lo + chunk]
            b = np.matmul(s_c.transpose(0, 2, 1), s_c)  # (mc, KP, KP)
            # per user pair (i, j): sum_m B_ij[a,b] B_ij[c,d] as one batched GEMM
            pairs = np.ascontiguousarray(
                b.reshape(-1, k, taps, k, taps).transpose(1, 3, 0, 2, 4)
            ).reshape(k * k, -1, p2)
            acc += np.matmul(pairs.transpose(0, 2, 1), pairs)
        # acc[(i,j), (a,b), (c,d)] -> block (i,j) entry [(a,c), (b,d)]
        gram = (
            acc.reshape(k, k, taps, taps, taps, taps)
            .transpose(0, 2, 4, 1, 3, 5)
            .reshape(dim, dim)
            / mi
        )

    return SosSystem(rhs=rhs, gram=gram, users=k, taps=taps)


def estimate_sos(system: SosSystem, mode: str = "identity") -> SosEstimate:
    """Solve (or approximate) T d = y.

    Modes: ``identity`` takes d = y outright (the large-system T -> I
    approximation); ``solve`` runs a Cholesky factorization with a relative
    ridge fallback; ``iterative`` refines d0 = y by conjugate gradients on
    the real and imaginary parts separately.
    """
    k, taps = system.users, system.taps
    canonical = {
        "identity": "identity",
        "identity-t": "identity",
        "solve": "solve",
        "direct-solve": "solve",
        "iterative": "iterative",
    }.get(mode.lower())
    if canonical is None:
        raise ValueError(f"unknown SOS solver mode {mode!r}")

    if canonical == "identity":
        values = system.rhs
    else:
        if system.gram is None:
            raise ValueError(f"mode {mode!r} needs the Gram matrix; rebuild with include_gram=True")
        if canonical == "solve":
            values = _solve_spd(system.gram, system.rhs)
        else:
            values = _solve_cg(system.gram, system.rhs)

    return SosEstimate(values=values.reshape(k, taps * taps), mode=canonical)


def _solve_spd(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        factor = cho_factor(gram)
    except np.linalg.LinAlgError:
        ridge = _RIDGE * np.linalg.norm(np.diag(gram))
        try:
            factor = cho_factor(gram + ridge * np.eye(gram.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(
                "normal-equation matrix is not positive definite",
                condition=float(np.linalg.cond(gram)),
            ) from exc
    return cho_solve(factor, rhs)


def _solve_cg(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    parts = []
    for b in (rhs.real, rhs.imag):
        x, info = cg(gram, b, x0=b.copy(), rtol=_CG_TOL, maxiter=_CG_MAXITER)
        if info != 0:
            raise ConvergenceError(
                f"conjugate-gradient refinement did not converge (info={info})"
            )
        parts.append(x)
    return parts[0] + 1j * parts[1]


def hermitianize(estimate):
    """Project each vec'd P x P matrix onto the Hermitian subspace.

    Accepts an :class:`SosEstimate` or a bare array whose last axis has
    length P^2; replaces each reshaped matrix A by (A + A^H)/2.  Idempotent.
    """
    if isinstance(estimate, SosEstimate):
        return SosEstimate(values=hermitianize(estimate.values), mode=estimate.mode)
    d = np.asarray(estimate)
    taps = math.isqrt(d.shape[-1])
    mats = d.reshape(*d.shape[:-1], taps, taps)
    # vec is column-stacking, so the reshaped view is the transpose of the
    # matrix; (A + A^H)/2 is transpose-invariant under the same convention
    sym = 0.5 * (mats + mats.conj().transpose(*range(mats.ndim - 2), -1, -2))
    return sym.reshape(d.shape)


def free_slots(taps: int) -> list[tuple[str, int, int]]:
    """Canonical ordering of the P^2 real free variables of a Hermitian matrix.

    The P real diagonal entries come first, then for each strict
    upper-triangle position (i < j) in row-major order the pair
    ('re', i, j), ('im', i, j).
    """
    slots = [("diag", p, p) for p in range(taps)]
    for i in range(taps):
        for j in range(i + 1, taps):
            slots.append(("re", i, j))
            slots.append(("im", i, j))
    return slots


def hermitian_basis(taps: int) -> np.ndarray:
    """Hermitian basis matrices matching :func:`free_slots`, shape (P^2, P, P).

    A Hermitian matrix decomposes exactly as A = sum_s f_s B_s with f the
    free variables; conversely f_s = tr(B_s A) / (1 on diagonal slots, 2
    elsewhere).
    """
    basis = np.zeros((taps * taps, taps, taps), dtype=complex)
    for s, (kind, i, j) in enumerate(free_slots(taps)):
        if kind == "diag":
            basis[s, i, i] = 1.0
        elif kind == "re":
            basis[s, i, j] = 1.0
            basis[s, j, i] = 1.0
        else:
            basis[s, i, j] = 1.0j
            basis[s, j, i] = -1.0j
    return basis


def free_weights(taps: int) -> np.ndarray:
    """Frobenius weights per free variable: 1 on diagonal slots, 2 off."""
    return np.array([1.0 if kind == "diag" else 2.0 for kind, _, _ in free_slots(taps)])


def outer_free_jacobian(g: np.ndarray) -> np.ndarray:
    """Jacobian of the free variables of vec(g g^H) wrt (Re g, Im g).

    Row s is the gradient of free variable s; every entry is linear in g.
    Shape (P^2, 2P).
    """
    g = np.asarray(g, dtype=complex)
    taps = g.shape[0]
    bg = hermitian_basis(taps) @ g  # (P^2, P)
    scale = np.array([2.0 if kind == "diag" else 1.0 for kind, _, _ in free_slots(taps)])
    return scale[:, None] * np.concatenate([bg.real, bg.imag], axis=1)


def free_vars(d: np.ndarray) -> np.ndarray:
    """Real free variables of one vec'd Hermitian matrix.

    Raises ``ValueError`` when the reshaped matrix deviates from Hermitian
    symmetry by more than 1e-10 (max-abs).
    """
    d = np.asarray(d)
    taps = math.isqrt(d.shape[-1])
    mat = unvec(d, taps)
    if np.max(np.abs(mat - mat.conj().T)) > _HERMITIAN_TOL:
        raise ValueError("input is not Hermitian within tolerance 1e-10")
    out = np.empty(taps * taps)
    for s, (kind, i, j) in enumerate(free_slots(taps)):
        if kind == "diag":
            out[s] = mat[i, i].real
        elif kind == "re":
            out[s] = mat[i, j].real
        else:
            out[s] = mat[i, j].imag
    return out


def free_vars_inverse(f: np.ndarray) -> np.ndarray:
    """Rebuild the full vec'd Hermitian matrix from its free variables."""
    f = np.asarray(f)
    taps = math.isqrt(f.shape[-1])
    mat = np.zeros((taps, taps), dtype=complex)
    for s, (kind, i, j) in enumerate(free_slots(taps)):
        if kind == "diag":
            mat[i, i] = f[s]
        elif kind == "re":
            mat[i, j] += f[s]
            mat[j, i] += f[s]
        else:
            mat[i, j] += 1j * f[s]
            mat[j, i] += -1j * f[s]
    return mat.reshape(-1, order="F")
