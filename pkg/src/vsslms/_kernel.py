"""Compiled inner loop for the VSS-LMS simulation.

Step-size state is packed into a float vector ``st``:

    st[0]  mu
    st[1]  AM p_prev | NC theta | VSQ A_acc
    st[2]  AM Re e_prev | VSQ B_acc
    st[3]  AM Im e_prev

Rule codes and parameter order follow :mod:`vsslms.rules`.
"""
import numpy as np
from numba import njit

from .rules import AM, EPS_DIV, NC, VSQ

DIVERGENCE_NORM2 = 1e24  # ||w|| > 1e12


@njit(cache=True, nogil=True)
def advance_packed(code, p, st, e, sigma_v2):
    e_re = e.real
    e_im = e.imag
    e2 = e_re * e_re + e_im * e_im
    if code == 0:  # KJ: alpha, gamma
        st[0] = p[0] * st[0] + p[1] * e2
    elif code == 1:  # AM: alpha, gamma, beta
        cross = e_re * st[2] + e_im * st[3]
        pp = p[2] * st[1] + (1.0 - p[2]) * cross
        st[0] = p[0] * st[0] + p[1] * pp * pp
        st[1] = pp
        st[2] = e_re
        st[3] = e_im
    elif code == 2:  # NC: mu0, gamma, alpha
        th = (1.0 - p[2]) * st[1] + 0.5 * p[2] * (e2 - sigma_v2)
        st[1] = th
        st[0] = p[0] * (1.0 + p[1] * th)
    elif code == 3:  # VSQ: alpha, gamma, a, b
        A = p[2] * st[1] + e2
        B = p[3] * st[2] + e2
        st[1] = A
        st[2] = B
        st[0] = p[0] * st[0] + p[1] * (A / max(B, EPS_DIV))
    elif code == 4:  # Sp: alpha, gamma
        st[0] = p[0] * st[0] + p[1] * abs(e)


@njit(cache=True, nogil=True)
def run_block(U, d, w_o, w, code, p, st, sigma_v2, lo, hi, msd, emse, mu_tr, e_tr):
    """Run ``len(d)`` iterations in place; return the divergence index or -1.

    Per iteration: record ||w_o - w||^2 before the update, form the error with
    the current weights and step, update the weights, then the step.
    """
    n, M = U.shape
    for i in range(n):
        m = 0.0
        y = d[i] * 0.0
        ex = d[i] * 0.0
        for j in range(M):
            wt = w_o[j] - w[j]
            m += wt.real * wt.real + wt.imag * wt.imag
            y += U[i, j] * w[j]
            ex += U[i, j] * wt
        e = d[i] - y
        mu = st[0]
        msd[i] = m
        emse[i] = ex.real * ex.real + ex.imag * ex.imag
        mu_tr[i] = mu
        e_tr[i] = e
        nw = 0.0
        for j in range(M):
            w[j] += mu * e * U[i, j].conjugate()
            nw += w[j].real * w[j].real + w[j].imag * w[j].imag
        if not nw <= DIVERGENCE_NORM2:
            return i
        advance_packed(code, p, st, e, sigma_v2)
        if st[0] < lo:
            st[0] = lo
        elif st[0] > hi:
            st[0] = hi
    return -1


def packed_state(rule, state):
    """Pack a :class:`~vsslms.rules.RuleState` for :func:`run_block`."""
    st = np.zeros(4)
    st[0] = state.mu
    if isinstance(rule, AM):
        st[1] = state.p_prev
        st[2] = complex(state.e_prev).real
        st[3] = complex(state.e_prev).imag
    elif isinstance(rule, NC):
        st[1] = state.theta
    elif isinstance(rule, VSQ):
        st[1] = state.A_acc
        st[2] = state.B_acc
    return st


def warmup():
    """Compile both the real and complex specialisations."""
    for dt in (np.float64, np.complex128):
        U = np.zeros((1, 1), dt)
        d = np.zeros(1, dt)
        w = np.zeros(1, dt)
        run_block(U, d, w.copy(), w, 0, np.array([0.5, 0.0]), np.array([0.1, 0, 0, 0.0]),
                  0.0, -np.inf, np.inf, np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1, dt))
