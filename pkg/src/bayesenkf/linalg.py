"""Factorizations with jitter escalation and PSD square roots."""
import numpy as np

from .exceptions import ConditioningError

MAX_JITTER_ESCALATIONS = 3


def symmetrize(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def robust_cholesky(S, diagnostics=None):
    """Lower Cholesky factor of ``S``, adding diagonal jitter on failure.

    Jitter starts at ``1e-10 * tr(S)/m`` and grows tenfold, at most three
    times. Each escalation is counted in ``diagnostics["jitter_escalations"]``.
    """
    S = np.asarray(S, dtype=float)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    m = S.shape[-1]
    scale = np.trace(S) / max(m, 1)
    if not scale > 0:
        eig = np.linalg.eigvalsh(symmetrize(S)).min() if S.size else 0.0
        raise ConditioningError("matrix is not numerically positive definite", eig)
    jitter = 1e-10 * scale
    for _ in range(MAX_JITTER_ESCALATIONS):
        if diagnostics is not None:
            diagnostics["jitter_escalations"] = diagnostics.get("jitter_escalations", 0) + 1
        try:
            return np.linalg.cholesky(S + jitter * np.eye(m))
        except np.linalg.LinAlgError:
            jitter *= 10
    eig = np.linalg.eigvalsh(symmetrize(S)).min() if S.size else 0.0
    raise ConditioningError("matrix is not numerically positive definite", eig)


def batched_cholesky(S, diagnostics=None):
    """Cholesky of a stack of matrices.

    Returns ``(L, ok)`` where ``ok[k]`` is False for matrices that stayed
    indefinite after jitter escalation; their factor is filled with NaN.
    """
    S = np.asarray(S, dtype=float)
    try:
        return np.linalg.cholesky(S), np.ones(S.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        pass
    L = np.full_like(S, np.nan)
    ok = np.zeros(S.shape[0], dtype=bool)
    for k in range(S.shape[0]):
        try:
            L[k] = robust_cholesky(S[k], diagnostics)
            ok[k] = True
        except ConditioningError:
            pass
    return L, ok


def psd_sqrt(A, tol=1e-8):
    """Matrix ``L`` with ``L @ L.T == A`` for symmetric PSD ``A``.

    Uses Cholesky when possible and falls back to a clipped eigendecomposition,
    which also covers singular matrices such as an all-zero covariance.
    Raises :class:`ConditioningError` if ``A`` has an eigenvalue below
    ``-tol * max(1, |A|)``.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return A.copy()
    if not np.any(A):
        return np.zeros_like(A)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(symmetrize(A))
    if w.min() < -tol * max(1.0, np.abs(w).max()):
        raise ConditioningError("matrix is not positive semidefinite", w.min())
    return V * np.sqrt(np.clip(w, 0.0, None))


def logdet_from_cholesky(L):
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def is_psd(A, tol=1e-8):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return True
    if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max())):
        return False
    w = np.linalg.eigvalsh(A)
    return w.min() >= -tol * max(1.0, np.abs(w).max())
