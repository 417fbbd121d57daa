"""Temperature-softened softmax and the knowledge-distillation KL term."""

import numpy as np

from otrep.errors import InputError

DEFAULT_TAUS = (4.0, 5.0, 10.0)


def soften(logits, tau):
    """Column-wise softmax of ``logits / tau`` for a ``(K, n)`` matrix."""
    if not tau > 0:
        raise InputError("temperature must be positive")
    Z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(Z)):
        raise InputError("logits must be finite")
    Z = Z / tau
    Z = Z - Z.max(axis=0, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=0, keepdims=True)


def _log_soften(Z, tau):
    Z = Z / tau
    Z = Z - Z.max(axis=0, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=0, keepdims=True))


def kd_loss_and_grad(teacher_logits, student_logits, tau):
    """Batch mean of ``KL(soften(teacher) || soften(student))``.

    Returns the loss and its gradient w.r.t. ``student_logits``. No ``tau**2``
    rescaling is applied.
    """
    T = np.asarray(teacher_logits, dtype=np.float64)
    S = np.asarray(student_logits, dtype=np.float64)
    if T.shape != S.shape or T.ndim != 2:
        raise InputError(f"logit shapes differ: {T.shape} vs {S.shape}")
    p = soften(T, tau)
    log_p = _log_soften(T, tau)
    log_q = _log_soften(S, tau)
    n = S.shape[1]
    kl = np.sum(np.where(p > 0, p * (log_p - log_q), 0.0)) / n
    grad = (np.exp(log_q) - p) / (tau * n)
    return float(max(kl, 0.0)), grad
