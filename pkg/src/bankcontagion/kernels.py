"""Hot loops: fixed-step RK4 sweeps and their adjoints.

Every kernel takes flat float arrays and scalars only, so the same source runs
compiled (numba) or interpreted (see ``_jit``).  Control is piecewise constant
per cell; integrator step ``k`` reads cell ``(k * cells) // steps``, i.e. the
cell containing the step's left endpoint.

Kernels that integrate return the index of the first step producing a
non-finite state, or -1 on success.
"""

import math

import numpy as np

from ._jit import njit


@njit
def bolza_rhs(beta, gamma, weight, s, i, u):
    infection = beta * s * i
    recovery = gamma * i
    assisted = u * i
    return -infection, infection - recovery - assisted, recovery + assisted, weight * u * u


@njit
def rk4_bolza(beta, gamma, weight, x0, h, steps, controls, out):
    """Integrate (S, I, R, Y) into ``out[0..steps]``; Y accumulates weight*u**2."""
    cells = controls.shape[0]
    for j in range(4):
        out[0, j] = x0[j]
    half = 0.5 * h
    sixth = h / 6.0
    for k in range(steps):
        u = controls[(k * cells) // steps]
        s = out[k, 0]
        i = out[k, 1]
        r = out[k, 2]
        y = out[k, 3]
        a1, b1, c1, d1 = bolza_rhs(beta, gamma, weight, s, i, u)
        a2, b2, c2, d2 = bolza_rhs(beta, gamma, weight, s + half * a1, i + half * b1, u)
        a3, b3, c3, d3 = bolza_rhs(beta, gamma, weight, s + half * a2, i + half * b2, u)
        a4, b4, c4, d4 = bolza_rhs(beta, gamma, weight, s + h * a3, i + h * b3, u)
        out[k + 1, 0] = s + sixth * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        out[k + 1, 1] = i + sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        out[k + 1, 2] = r + sixth * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        out[k + 1, 3] = y + sixth * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        for j in range(4):
            if not math.isfinite(out[k + 1, j]):
                return k
    return -1


@njit
def mayer_rhs(beta, gamma, n, weight, s, r, u):
    return beta * s * s + beta * s * (r - n), (gamma + u) * (n - s - r), weight * u * u


@njit
def rk4_mayer(beta, gamma, n, weight, x0, h, steps, controls, out):
    """Integrate the reduced (S, R, Y) system into ``out[0..steps]``."""
    cells = controls.shape[0]
    for j in range(3):
        out[0, j] = x0[j]
    half = 0.5 * h
    sixth = h / 6.0
    for k in range(steps):
        u = controls[(k * cells) // steps]
        s = out[k, 0]
        r = out[k, 1]
        y = out[k, 2]
        a1, b1, c1 = mayer_rhs(beta, gamma, n, weight, s, r, u)
        a2, b2, c2 = mayer_rhs(beta, gamma, n, weight, s + half * a1, r + half * b1, u)
        a3, b3, c3 = mayer_rhs(beta, gamma, n, weight, s + half * a2, r + half * b2, u)
        a4, b4, c4 = mayer_rhs(beta, gamma, n, weight, s + h * a3, r + h * b3, u)
        out[k + 1, 0] = s + sixth * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        out[k + 1, 1] = r + sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        out[k + 1, 2] = y + sixth * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        for j in range(3):
            if not math.isfinite(out[k + 1, j]):
                return k
    return -1


@njit
def _mayer_vjp(beta, gamma, n, weight, s, r, u, a0, a1, a2):
    """Transposed Jacobian of the Mayer field applied to (a0, a1, a2), plus d/du."""
    gu = gamma + u
    ds = (2.0 * beta * s + beta * (r - n)) * a0 - gu * a1
    dr = beta * s * a0 - gu * a1
    du = (n - s - r) * a1 + 2.0 * weight * u * a2
    return ds, dr, du


@njit
def mayer_adjoint_gradient(beta, gamma, n, weight, h, steps, controls, traj, grad):
    """Exact gradient of N - S_n - R_n + Y_n w.r.t. the cell controls.

    Reverse-mode sweep through the RK4 steps stored in ``traj`` (the output of
    ``rk4_mayer`` under the same controls).  ``grad`` is overwritten.
    """
    cells = controls.shape[0]
    for c in range(cells):
        grad[c] = 0.0
    half = 0.5 * h
    # terminal adjoint of the objective N - S - R + Y
    l0 = -1.0
    l1 = -1.0
    l2 = 1.0
    for k in range(steps - 1, -1, -1):
        u = controls[(k * cells) // steps]
        s = traj[k, 0]
        r = traj[k, 1]
        # replay the stages of step k
        a1, b1, _ = mayer_rhs(beta, gamma, n, weight, s, r, u)
        s2 = s + half * a1
        r2 = r + half * b1
        a2, b2, _ = mayer_rhs(beta, gamma, n, weight, s2, r2, u)
        s3 = s + half * a2
        r3 = r + half * b2
        a3, b3, _ = mayer_rhs(beta, gamma, n, weight, s3, r3, u)
        s4 = s + h * a3
        r4 = r + h * b3

        w1 = h / 6.0
        w2 = h / 3.0
        k1s, k1r, k1y = w1 * l0, w1 * l1, w1 * l2
        k2s, k2r, k2y = w2 * l0, w2 * l1, w2 * l2
        k3s, k3r, k3y = w2 * l0, w2 * l1, w2 * l2
        k4s, k4r, k4y = w1 * l0, w1 * l1, w1 * l2
        n0, n1, n2 = l0, l1, l2

        gs, gr, gu = _mayer_vjp(beta, gamma, n, weight, s4, r4, u, k4s, k4r, k4y)
        du = gu
        n0 += gs
        n1 += gr
        k3s += h * gs
        k3r += h * gr

        gs, gr, gu = _mayer_vjp(beta, gamma, n, weight, s3, r3, u, k3s, k3r, k3y)
        du += gu
        n0 += gs
        n1 += gr
        k2s += half * gs
        k2r += half * gr

        gs, gr, gu = _mayer_vjp(beta, gamma, n, weight, s2, r2, u, k2s, k2r, k2y)
        du += gu
        n0 += gs
        n1 += gr
        k1s += half * gs
        k1r += half * gr

        gs, gr, gu = _mayer_vjp(beta, gamma, n, weight, s, r, u, k1s, k1r, k1y)
        du += gu
        n0 += gs
        n1 += gr

        grad[(k * cells) // steps] += du
        l0, l1, l2 = n0, n1, n2
    return l0, l1, l2


@njit
def costate_rhs(beta, gamma, s, i, u, ls, li, lr):
    """Costate derivatives -dH/dx for H = b u^2 + lS f_S + lI f_I + lR f_R."""
    return beta * i * (ls - li), beta * s * (ls - li) + (gamma + u) * (li - lr), 0.0


@njit
def rk4_costate(beta, gamma, h, steps, controls, states, terminal, out):
    """Backward RK4 for (lambda_S, lambda_I, lambda_R) from ``terminal`` at t_end.

    The state at step midpoints is taken from cubic Hermite interpolation of
    the stored nodes, which keeps the sweep fourth-order accurate.
    """
    cells = controls.shape[0]
    for j in range(3):
        out[steps, j] = terminal[j]
    half = 0.5 * h
    sixth = h / 6.0
    for k in range(steps - 1, -1, -1):
        u = controls[(k * cells) // steps]
        s0 = states[k, 0]
        i0 = states[k, 1]
        s1 = states[k + 1, 0]
        i1 = states[k + 1, 1]
        fs0 = -beta * s0 * i0
        fi0 = beta * s0 * i0 - (gamma + u) * i0
        fs1 = -beta * s1 * i1
        fi1 = beta * s1 * i1 - (gamma + u) * i1
        sm = 0.5 * (s0 + s1) + 0.125 * h * (fs0 - fs1)
        im = 0.5 * (i0 + i1) + 0.125 * h * (fi0 - fi1)

        ls = out[k + 1, 0]
        li = out[k + 1, 1]
        lr = out[k + 1, 2]
        a1, b1, c1 = costate_rhs(beta, gamma, s1, i1, u, ls, li, lr)
        a2, b2, c2 = costate_rhs(beta, gamma, sm, im, u, ls - half * a1, li - half * b1, lr - half * c1)
        a3, b3, c3 = costate_rhs(beta, gamma, sm, im, u, ls - half * a2, li - half * b2, lr - half * c2)
        a4, b4, c4 = costate_rhs(beta, gamma, s0, i0, u, ls - h * a3, li - h * b3, lr - h * c3)
        out[k, 0] = ls - sixth * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        out[k, 1] = li - sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        out[k, 2] = lr - sixth * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        for j in range(3):
            if not math.isfinite(out[k, j]):
                return k
    return -1


@njit
def sir_observe(beta, gamma, x0, h, steps, record, threshold, recorded, tail):
    """Uncontrolled RK4 that keeps only what calibration needs.

    ``record`` holds sorted node indices whose (S, I, R) are copied into
    ``recorded``.  Also tracks the first node with I below ``threshold`` after
    which I never rises again; integration stops early once that node is found
    and every recorded index has been passed (I cannot rise again once it
    falls, because S only decreases).

    ``tail`` receives I at the last two nodes integrated.

    Returns (failing step or -1, contagion-free node or -1, last node integrated).
    """
    s = x0[0]
    i = x0[1]
    r = x0[2]
    nrec = record.shape[0]
    j = 0
    while j < nrec and record[j] == 0:
        recorded[j, 0] = s
        recorded[j, 1] = i
        recorded[j, 2] = r
        j += 1
    free = 0 if i < threshold else -1
    tail[0] = i
    tail[1] = i
    half = 0.5 * h
    sixth = h / 6.0
    for k in range(steps):
        a1, b1, c1, _ = bolza_rhs(beta, gamma, 0.0, s, i, 0.0)
        a2, b2, c2, _ = bolza_rhs(beta, gamma, 0.0, s + half * a1, i + half * b1, 0.0)
        a3, b3, c3, _ = bolza_rhs(beta, gamma, 0.0, s + half * a2, i + half * b2, 0.0)
        a4, b4, c4, _ = bolza_rhs(beta, gamma, 0.0, s + h * a3, i + h * b3, 0.0)
        s_next = s + sixth * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        i_next = i + sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        r_next = r + sixth * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        if not (math.isfinite(s_next) and math.isfinite(i_next) and math.isfinite(r_next)):
            return k, free, k
        falling = i_next <= i
        tail[0] = i
        tail[1] = i_next
        if not falling:
            free = -1
        elif free < 0 and i_next < threshold:
            free = k + 1
        s = s_next
        i = i_next
        r = r_next
        while j < nrec and record[j] == k + 1:
            recorded[j, 0] = s
            recorded[j, 1] = i
            recorded[j, 2] = r
            j += 1
        if free >= 0 and falling and j == nrec:
            return -1, free, k + 1
    return -1, free, steps


def all_kernels():
    """Name -> kernel mapping, used by the benchmark and the fallback tests."""
    return {
        "rk4_bolza": rk4_bolza,
        "rk4_mayer": rk4_mayer,
        "mayer_adjoint_gradient": mayer_adjoint_gradient,
        "rk4_costate": rk4_costate,
        "sir_observe": sir_observe,
    }


def empty_states(steps: int, width: int) -> np.ndarray:
    return np.empty((steps + 1, width), dtype=np.float64)
