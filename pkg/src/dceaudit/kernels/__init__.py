"""MNL likelihood kernels.

The compiled extension ``_mnl`` is used when it was built; otherwise the
numpy implementation in ``_fallback`` takes over. Set ``DCEAUDIT_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("DCEAUDIT_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _mnl as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def available_backends():
    return ["cython", "numpy"] if _compiled is not None else ["numpy"]


def loglik_grad_hess(X, chosen, beta, want_grad=True, want_hess=True, backend=None):
    """Log-likelihood of an MNL model with optional gradient and Hessian.

    Parameters
    ----------
    X : ndarray, shape (S, J, P)
        Covariates of every profile in every choice set.
    chosen : ndarray of int, shape (S,)
        Index of the chosen profile in each set.
    beta : ndarray, shape (P,)
    backend : {"cython", "numpy"}, optional
        Defaults to ``BACKEND``.

    Returns
    -------
    (ll, grad, hess); grad/hess are None when not requested.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    chosen = np.ascontiguousarray(chosen, dtype=np.int64)
    beta = np.ascontiguousarray(beta, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError("X must have shape (sets, profiles, columns)")
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not available")
        return _compiled.loglik_grad_hess(X, chosen, beta, want_grad, want_hess)
    if backend == "numpy":
        return _fallback.loglik_grad_hess(X, chosen, beta, want_grad, want_hess)
    raise ValueError(f"unknown backend {backend!r}")
