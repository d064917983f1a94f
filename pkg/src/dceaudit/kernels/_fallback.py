"""Pure numpy MNL log-likelihood, gradient and Hessian."""

import numpy as np


def loglik_grad_hess(X, chosen, beta, want_grad=True, want_hess=True):
    S, J, P = X.shape
    if beta.shape[0] != P:
        raise ValueError("beta length does not match design columns")
    if chosen.shape[0] != S:
        raise ValueError("chosen length does not match number of sets")
    if S and (chosen.min() < 0 or chosen.max() >= J):
        raise ValueError("chosen index out of range")

    util = X @ beta
    m = util.max(axis=1, keepdims=True)
    e = np.exp(util - m)
    z = e.sum(axis=1, keepdims=True)
    prob = e / z
    rows = np.arange(S)
    ll = float(np.sum(util[rows, chosen] - m[:, 0] - np.log(z[:, 0])))
    if not (want_grad or want_hess):
        return ll, None, None

    xbar = np.einsum("sj,sjk->sk", prob, X)
    grad = hess = None
    if want_grad:
        # per-set differences first: keeps rounding at the scale of the result
        grad = (X[rows, chosen] - xbar).sum(axis=0)
    if want_hess:
        centered = (X - xbar[:, None, :]).reshape(-1, P)
        hess = -(centered.T @ (centered * prob.reshape(-1, 1)))
    return ll, grad, hess
