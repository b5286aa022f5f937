"""Compiled inner loops for the Lorenz map.

These mirror the numpy code paths in :mod:`chaoscast.dynamics` and
:mod:`chaoscast.filtering` operation-for-operation; tests compare the two.
"""

import math

import numba as nb
import numpy as np


@nb.njit(cache=True, inline="always")
def _deriv(x, y, z, s, b, r):
    return s * (y - x), x * (r - z) - y, x * y - b * z


@nb.njit(cache=True, inline="always")
def rk4_scalar(x, y, z, s, b, r, dt):
    k1x, k1y, k1z = _deriv(x, y, z, s, b, r)
    h = 0.5 * dt
    k2x, k2y, k2z = _deriv(x + h * k1x, y + h * k1y, z + h * k1z, s, b, r)
    k3x, k3y, k3z = _deriv(x + h * k2x, y + h * k2y, z + h * k2z, s, b, r)
    k4x, k4y, k4z = _deriv(x + dt * k3x, y + dt * k3y, z + dt * k3z, s, b, r)
    w = dt / 6.0
    return (
        x + w * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        y + w * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
        z + w * (k1z + 2.0 * k2z + 2.0 * k3z + k4z),
    )


@nb.njit(cache=True)
def integrate(init, theta, dt, forcing, out):
    """Fill ``out[t] = rk4(out[t-1]) + forcing[t-1]``; return first non-finite row or -1."""
    s, b, r = theta[0], theta[1], theta[2]
    out[0, 0] = init[0]
    out[0, 1] = init[1]
    out[0, 2] = init[2]
    x, y, z = init[0], init[1], init[2]
    for t in range(1, out.shape[0]):
        x, y, z = rk4_scalar(x, y, z, s, b, r, dt)
        x += forcing[t - 1, 0]
        y += forcing[t - 1, 1]
        z += forcing[t - 1, 2]
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
            return t
        out[t, 0] = x
        out[t, 1] = y
        out[t, 2] = z
    return -1


@nb.njit(cache=True, inline="always")
def _chol3(a, out, floor):
    # Lower Cholesky factor of a 3x3 SPD matrix; pivots below `floor` are raised to it.
    for i in range(3):
        for j in range(3):
            out[i, j] = 0.0
    for j in range(3):
        s = a[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if s < floor:
            s = floor
        out[j, j] = math.sqrt(s)
        for i in range(j + 1, 3):
            t = a[i, j]
            for k in range(j):
                t -= out[i, k] * out[j, k]
            out[i, j] = t / out[j, j]


@nb.njit(cache=True)
def lorenz_ukf_proposal(
    mean, cov, obs, row, theta, dt, q_mean, q_var, r_mean, r_var, c, wm, wc, xi, floor,
    out_z, out_cov, out_prop_mean, out_fz, out_logq,
):
    """Per-particle UKF predict/update around each particle, then one draw from the result.

    ``row[i]`` selects the observation and parameter row used by particle ``i``.
    Observation map is the identity; noises are iid per coordinate.
    """
    n = mean.shape[0]
    lf = np.empty((3, 3))
    ys = np.empty((7, 3))
    pp = np.empty((3, 3))
    sm = np.empty((3, 3))
    ls = np.empty((3, 3))
    gain = np.empty((3, 3))
    pu = np.empty((3, 3))
    mp = np.empty(3)
    tmp = np.empty(3)
    for i in range(n):
        k_row = row[i]
        s = theta[k_row, 0]
        b = theta[k_row, 1]
        r = theta[k_row, 2]
        _chol3(cov[i], lf, floor)
        for k in range(7):
            x = mean[i, 0]
            y = mean[i, 1]
            z = mean[i, 2]
            if k > 0:
                j = (k - 1) % 3
                sg = c if k <= 3 else -c
                x += sg * lf[0, j]
                y += sg * lf[1, j]
                z += sg * lf[2, j]
            a0, a1, a2 = rk4_scalar(x, y, z, s, b, r, dt)
            ys[k, 0] = a0
            ys[k, 1] = a1
            ys[k, 2] = a2
        for d in range(3):
            acc = 0.0
            for k in range(1, 7):
                acc += wm[k] * (ys[k, d] - ys[0, d])
            mp[d] = ys[0, d] + acc + q_mean
        for p in range(3):
            for q in range(3):
                acc = 0.0
                for k in range(7):
                    acc += wc[k] * (ys[k, p] - mp[p] + q_mean) * (ys[k, q] - mp[q] + q_mean)
                pp[p, q] = acc
            pp[p, p] += q_var
        for p in range(3):
            for q in range(3):
                sm[p, q] = pp[p, q]
            sm[p, p] += r_var
        _chol3(sm, ls, floor)
        # gain = pp @ inv(sm), solved row by row (both symmetric)
        for col in range(3):
            for p in range(3):
                tmp[p] = pp[col, p]
            for p in range(3):
                t = tmp[p]
                for k in range(p):
                    t -= ls[p, k] * tmp[k]
                tmp[p] = t / ls[p, p]
            for p in range(2, -1, -1):
                t = tmp[p]
                for k in range(p + 1, 3):
                    t -= ls[k, p] * tmp[k]
                tmp[p] = t / ls[p, p]
            for p in range(3):
                gain[col, p] = tmp[p]
        for p in range(3):
            acc = 0.0
            for q in range(3):
                acc += gain[p, q] * (obs[k_row, q] - mp[q] - r_mean)
            out_prop_mean[i, p] = mp[p] + acc
        for p in range(3):
            for q in range(3):
                acc = 0.0
                for k in range(3):
                    acc += gain[p, k] * pp[k, q]
                pu[p, q] = pp[p, q] - acc
        for p in range(3):
            for q in range(p + 1, 3):
                v = 0.5 * (pu[p, q] + pu[q, p])
                pu[p, q] = v
                pu[q, p] = v
        _chol3(pu, lf, floor)
        lq = 0.0
        for p in range(3):
            acc = 0.0
            for k in range(p + 1):
                acc += lf[p, k] * xi[i, k]
            out_z[i, p] = out_prop_mean[i, p] + acc
            lq += -0.5 * xi[i, p] * xi[i, p] - math.log(lf[p, p])
        out_logq[i] = lq - 1.5 * math.log(2.0 * math.pi)
        for p in range(3):
            out_fz[i, p] = ys[0, p]
            for q in range(3):
                out_cov[i, p, q] = pu[p, q]
