"""Compiled inner loops for the lifetime slice sampler and weight updates.

Likelihood changes are computed locally: moving the weighted total of
feature ``k`` by ``delta`` on row ``j`` changes the Gaussian log-likelihood by
``-(delta**2 * h[j] - 2 * delta * g[j]) / (2 sigma2_x)`` where ``g[j]`` is the
residual of row ``j`` projected on ``A_k`` and ``h[j]`` the squared norm of
``A_k`` restricted to the observed cells of row ``j``.
"""

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def lifetime_log_pmf(lam, rho, cap):
    """Geometric log pmf on {1, 2, ...}, with all mass >= ``cap`` lumped at ``cap``.

    ``cap <= 0`` disables censoring.
    """
    if lam < 1:
        return NEG_INF
    if cap > 0 and lam > cap:
        return NEG_INF
    out = 0.0
    if lam > 1:
        if rho >= 1.0:
            return NEG_INF
        out += (lam - 1) * np.log1p(-rho)
    if cap <= 0 or lam < cap:
        out += np.log(rho)
    return out


@njit(cache=True)
def log_lambda_prior(lam, rho, m_minus, n_rows, weak, alpha_over_k, cap, geometric):
    if weak:
        denom = n_rows + alpha_over_k
        if lam == 0:
            return np.log((n_rows - m_minus) / denom)
        out = np.log((m_minus + alpha_over_k) / denom)
    else:
        if lam == 0:
            return np.log((n_rows - m_minus) / n_rows)
        if m_minus <= 0:
            return NEG_INF
        out = np.log(m_minus / n_rows)
    if geometric:
        out += lifetime_log_pmf(lam, rho, cap)
    elif lam > 1:
        return NEG_INF
    return out


@njit(cache=True)
def _range_change(start, stop, delta, g, h):
    acc = 0.0
    for j in range(start, stop):
        acc += delta * delta * h[j] - 2.0 * delta * g[j]
    return acc


@njit(cache=True)
def slice_cell(n, cur, b, g, h, inv2s2, rho, m_minus, n_rows, weak, alpha_over_k,
               cap, geometric, width, u):
    """One integer slice-sampling update of a single lifetime.

    ``u`` holds ``width + 2`` uniforms on [0, 1): the slice height, the
    bracket offset, then one per proposal.  The bracket of ``width`` integers
    is placed uniformly at random around ``cur`` and clipped to ``[0, cap]``;
    each rejection shrinks it toward ``cur``.
    """
    lp_cur = log_lambda_prior(cur, rho, m_minus, n_rows, weak, alpha_over_k, cap, geometric)
    log_u = lp_cur + np.log(1.0 - u[0])
    left = cur - int(u[1] * width)
    right = left + width - 1
    if left < 0:
        left = 0
    if right > cap:
        right = cap
    for t in range(2, width + 2):
        prop = left + int(u[t] * (right - left + 1))
        if prop == cur:
            return cur
        if prop > cur:
            change = _range_change(n + cur, n + prop, b, g, h)
        else:
            change = _range_change(n + prop, n + cur, -b, g, h)
        lq = log_lambda_prior(prop, rho, m_minus, n_rows, weak, alpha_over_k, cap, geometric)
        lq -= inv2s2 * change
        if lq > log_u:
            return prop
        if prop > cur:
            right = prop - 1
        else:
            left = prop + 1
    return cur


@njit(cache=True)
def _project(resid, a, k, obs, g, h):
    n_rows, d = resid.shape
    for j in range(n_rows):
        gj = 0.0
        hj = 0.0
        for c in range(d):
            gj += resid[j, c] * a[k, c]
            hj += obs[j, c] * a[k, c] * a[k, c]
        g[j] = gj
        h[j] = hj


@njit(cache=True)
def _shift_rows(start, stop, k, delta, y, resid, a, obs, g, h):
    d = resid.shape[1]
    for j in range(start, stop):
        y[j, k] += delta
        for c in range(d):
            resid[j, c] -= delta * a[k, c] * obs[j, c]
        g[j] -= delta * h[j]


@njit(cache=True)
def slice_sweep(lam, b, b_fresh, refresh_b, y, resid, a, obs, rho, inv2s2, weak,
                alpha, geometric, width, uniforms):
    """Systematic scan over every lifetime, column by column.

    Updates ``lam``, ``b``, ``y`` and ``resid`` in place.  In the fully
    nonparametric regime cells whose column has no other instance are left to
    the singleton move.  Dormant weights are refreshed from ``b_fresh`` before
    their cell is updated when ``refresh_b`` is set.
    """
    n_rows, n_feat = lam.shape
    g = np.empty(n_rows)
    h = np.empty(n_rows)
    alpha_over_k = alpha / n_feat if n_feat > 0 else 0.0
    for k in range(n_feat):
        _project(resid, a, k, obs, g, h)
        m = 0
        for n in range(n_rows):
            if lam[n, k] > 0:
                m += 1
        for n in range(n_rows):
            cur = lam[n, k]
            m_minus = m - (1 if cur > 0 else 0)
            if not weak and m_minus == 0:
                continue
            if cur == 0 and refresh_b:
                b[n, k] = b_fresh[n, k]
            cap = n_rows - n if geometric else 1
            new = slice_cell(n, cur, b[n, k], g, h, inv2s2, rho[k], m_minus, n_rows,
                             weak, alpha_over_k, cap, geometric, width, uniforms[k, n])
            if new != cur:
                if new > cur:
                    _shift_rows(n + cur, n + new, k, b[n, k], y, resid, a, obs, g, h)
                else:
                    _shift_rows(n + new, n + cur, k, -b[n, k], y, resid, a, obs, g, h)
                lam[n, k] = new
                m += (1 if new > 0 else 0) - (1 if cur > 0 else 0)


@njit(cache=True)
def weight_log_ratio(n, length, delta, g, h, inv2s2):
    return -inv2s2 * _range_change(n, n + length, delta, g, h)


@njit(cache=True)
def weight_sweep(lam, b, y, resid, a, obs, inv2s2, proposals, uniforms):
    """Independence Metropolis-Hastings for every active instance weight."""
    n_rows, n_feat = lam.shape
    g = np.empty(n_rows)
    h = np.empty(n_rows)
    accepted = 0
    for k in range(n_feat):
        _project(resid, a, k, obs, g, h)
        for n in range(n_rows):
            length = lam[n, k]
            if length == 0:
                continue
            stop = min(n + length, n_rows)
            delta = proposals[n, k] - b[n, k]
            ratio = weight_log_ratio(n, stop - n, delta, g, h, inv2s2)
            if np.log(1.0 - uniforms[n, k]) < ratio:
                _shift_rows(n, stop, k, delta, y, resid, a, obs, g, h)
                b[n, k] = proposals[n, k]
                accepted += 1
    return accepted
