"""Compiled fixed-step RK4 kernels.

Every trajectory, whether produced for a single plan or inside the grid
search, goes through :func:`advance`, so the two paths agree bit for bit.
State is carried in "lanes": parallel copies of the SEIR state that share a
phase start but differ in their control level.
"""

import numpy as np
from numba import njit

CLAMP_TOL = 1e-12

# status codes of an outcome table cell
FEASIBLE = 0
STATIC_PRUNED = 1
ICU_VIOLATED = 2
PREFIX_PRUNED = 3
OUT_OF_HORIZON = 4


@njit(cache=True, nogil=True)
def advance(S, E, I, R, alive, peak, abort_day, m0, ndays, day0,
            beta0, ctrl, slope, sub, gamma, delta, icu_scale, icu_cap,
            track_peak):
    """Integrate ``ndays`` whole days of one phase for every lane.

    ``m0`` is the elapsed day (since phase start) of the first day to
    integrate, ``day0`` the absolute day of the phase start.  Returns the
    absolute day of a numerical failure, or -1.
    """
    h = 1.0 / sub
    L = S.shape[0]
    for m in range(m0, m0 + ndays):
        for j in range(sub):
            t = m + j * h
            for l in range(L):
                c = ctrl[l]
                b1 = beta0 - c * (1.0 - slope * t)
                b2 = beta0 - c * (1.0 - slope * (t + 0.5 * h))
                b4 = beta0 - c * (1.0 - slope * (t + h))
                s = S[l]
                e = E[l]
                i = I[l]
                f1 = b1 * i * s
                de1 = f1 - gamma * e
                di1 = gamma * e - delta * i
                dr1 = delta * i
                s2 = s - 0.5 * h * f1
                e2 = e + 0.5 * h * de1
                i2 = i + 0.5 * h * di1
                f2 = b2 * i2 * s2
                de2 = f2 - gamma * e2
                di2 = gamma * e2 - delta * i2
                dr2 = delta * i2
                s3 = s - 0.5 * h * f2
                e3 = e + 0.5 * h * de2
                i3 = i + 0.5 * h * di2
                f3 = b2 * i3 * s3
                de3 = f3 - gamma * e3
                di3 = gamma * e3 - delta * i3
                dr3 = delta * i3
                s4 = s - h * f3
                e4 = e + h * de3
                i4 = i + h * di3
                f4 = b4 * i4 * s4
                de4 = f4 - gamma * e4
                di4 = gamma * e4 - delta * i4
                dr4 = delta * i4
                S[l] = s - h / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
                E[l] = e + h / 6.0 * (de1 + 2.0 * de2 + 2.0 * de3 + de4)
                I[l] = i + h / 6.0 * (di1 + 2.0 * di2 + 2.0 * di3 + di4)
                R[l] = R[l] + h / 6.0 * (dr1 + 2.0 * dr2 + 2.0 * dr3 + dr4)
        day = day0 + m + 1
        any_alive = False
        for l in range(L):
            if S[l] < 0.0:
                if S[l] < -CLAMP_TOL:
                    return day
                S[l] = 0.0
            if E[l] < 0.0:
                if E[l] < -CLAMP_TOL:
                    return day
                E[l] = 0.0
            if I[l] < 0.0:
                if I[l] < -CLAMP_TOL:
                    return day
                I[l] = 0.0
            if R[l] < 0.0:
                if R[l] < -CLAMP_TOL:
                    return day
                R[l] = 0.0
            if not (np.isfinite(S[l]) and np.isfinite(E[l]) and np.isfinite(I[l])):
                return day
            load = icu_scale * I[l]
            if load > peak[l]:
                peak[l] = load
            if alive[l]:
                if load > icu_cap:
                    alive[l] = False
                    abort_day[l] = day
                else:
                    any_alive = True
        if not any_alive and not track_peak:
            break
    return -1


@njit(cache=True, nogil=True)
def simulate_days(x0, starts, ends, beta0, ctrls, slopes, sub, gamma, delta, out):
    """Integrate a four-phase plan, recording the state at every whole day.

    ``starts``/``ends`` hold absolute phase boundaries, ``ctrls``/``slopes``
    the per-phase control level and attenuation slope.  ``out`` has shape
    ``(T + 1, 4)``.  Returns the failure day or -1.
    """
    S = np.empty(1)
    E = np.empty(1)
    I = np.empty(1)
    R = np.empty(1)
    S[0] = x0[0]
    E[0] = x0[1]
    I[0] = x0[2]
    R[0] = x0[3]
    alive = np.ones(1, dtype=np.bool_)
    peak = np.zeros(1)
    abort = np.full(1, -1, dtype=np.int64)
    ctrl = np.empty(1)
    out[0, 0] = S[0]
    out[0, 1] = E[0]
    out[0, 2] = I[0]
    out[0, 3] = R[0]
    for k in range(4):
        ctrl[0] = ctrls[k]
        for d in range(starts[k], ends[k]):
            err = advance(S, E, I, R, alive, peak, abort, d - starts[k], 1,
                          starts[k], beta0, ctrl, slopes[k], sub, gamma, delta,
                          0.0, np.inf, True)
            if err >= 0:
                return err
            out[d + 1, 0] = S[0]
            out[d + 1, 1] = E[0]
            out[d + 1, 2] = I[0]
            out[d + 1, 3] = R[0]
    return -1


@njit(cache=True, nogil=True)
def search_slice(a, horizon, t0s, t1s, t2s, r1s, r2s, r3s, static_ok, x_init,
                 beta0, r0, gamma, delta, slopes, sub, icu_scale, icu_cap,
                 track_peak, s_final, status, abort_day, peak_out):
    """Evaluate every leaf under ``tau0 = t0s[a]`` by prefix-shared integration.

    ``static_ok[b, i1, i2]`` says whether (tau1, R1, R2) passes the static
    filters.  The kernel writes FEASIBLE / ICU_VIOLATED into ``status`` for
    every leaf it simulates and PREFIX_PRUNED (with the abort day) for leaves
    under an ICU-violating prefix; other cells are left untouched.  Returns
    the failure day of a numerical problem, or -1.
    """
    n3 = r3s.shape[0]
    a1 = slopes[0]
    a2 = slopes[1]
    a3 = slopes[2]
    S0 = np.empty(1)
    E0 = np.empty(1)
    I0 = np.empty(1)
    R0 = np.empty(1)
    S1 = np.empty(1)
    E1 = np.empty(1)
    I1 = np.empty(1)
    R1 = np.empty(1)
    S2 = np.empty(1)
    E2 = np.empty(1)
    I2 = np.empty(1)
    R2 = np.empty(1)
    S3 = np.empty(n3)
    E3 = np.empty(n3)
    I3 = np.empty(n3)
    R3 = np.empty(n3)
    ok0 = np.ones(1, dtype=np.bool_)
    ok1 = np.ones(1, dtype=np.bool_)
    ok2 = np.ones(1, dtype=np.bool_)
    ok3 = np.ones(n3, dtype=np.bool_)
    pk0 = np.zeros(1)
    pk1 = np.zeros(1)
    pk2 = np.zeros(1)
    pk3 = np.zeros(n3)
    ab0 = np.full(1, -1, dtype=np.int64)
    ab1 = np.full(1, -1, dtype=np.int64)
    ab2 = np.full(1, -1, dtype=np.int64)
    ab3 = np.full(n3, -1, dtype=np.int64)
    zero = np.zeros(1)
    c1 = np.empty(1)
    c2 = np.empty(1)
    ctrl3 = np.empty(n3)
    for k in range(n3):
        ctrl3[k] = delta * (r0 - r3s[k])

    t0 = t0s[a]
    if t0 > horizon:
        return -1
    S0[0] = x_init[0]
    E0[0] = x_init[1]
    I0[0] = x_init[2]
    R0[0] = x_init[3]
    pk0[0] = icu_scale * I0[0]
    if pk0[0] > icu_cap:
        ok0[0] = False
        ab0[0] = 0
    err = advance(S0, E0, I0, R0, ok0, pk0, ab0, 0, t0, 0, beta0, zero, 0.0,
                  sub, gamma, delta, icu_scale, icu_cap, track_peak)
    if err >= 0:
        return err
    for b in range(t1s.shape[0]):
        t1 = t1s[b]
        if t0 + t1 > horizon:
            continue
        for i1 in range(r1s.shape[0]):
            needed = False
            for i2 in range(r2s.shape[0]):
                if static_ok[b, i1, i2]:
                    needed = True
                    break
            if not needed:
                continue
            S1[0] = S0[0]
            E1[0] = E0[0]
            I1[0] = I0[0]
            R1[0] = R0[0]
            ok1[0] = ok0[0]
            pk1[0] = pk0[0]
            ab1[0] = ab0[0]
            if ok1[0] or track_peak:
                c1[0] = delta * (r0 - r1s[i1])
                err = advance(S1, E1, I1, R1, ok1, pk1, ab1, 0, t1, t0, beta0,
                              c1, a1, sub, gamma, delta, icu_scale, icu_cap,
                              track_peak)
                if err >= 0:
                    return err
            for i2 in range(r2s.shape[0]):
                if not static_ok[b, i1, i2]:
                    continue
                S2[0] = S1[0]
                E2[0] = E1[0]
                I2[0] = I1[0]
                R2[0] = R1[0]
                ok2[0] = ok1[0]
                pk2[0] = pk1[0]
                ab2[0] = ab1[0]
                c2[0] = delta * (r0 - r2s[i2])
                done = 0
                for c in range(t2s.shape[0]):
                    t2 = t2s[c]
                    if t0 + t1 + t2 > horizon:
                        break
                    if ok2[0] or track_peak:
                        err = advance(S2, E2, I2, R2, ok2, pk2, ab2, done,
                                      t2 - done, t0 + t1, beta0, c2, a2, sub,
                                      gamma, delta, icu_scale, icu_cap,
                                      track_peak)
                        if err >= 0:
                            return err
                        done = t2
                    if not ok2[0] and not track_peak:
                        for i3 in range(n3):
                            status[a, b, c, i1, i2, i3] = PREFIX_PRUNED
                            abort_day[a, b, c, i1, i2, i3] = ab2[0]
                        continue
                    for i3 in range(n3):
                        S3[i3] = S2[0]
                        E3[i3] = E2[0]
                        I3[i3] = I2[0]
                        R3[i3] = R2[0]
                        ok3[i3] = ok2[0]
                        pk3[i3] = pk2[0]
                        ab3[i3] = ab2[0]
                    t3 = t0 + t1 + t2
                    err = advance(S3, E3, I3, R3, ok3, pk3, ab3, 0,
                                  horizon - t3, t3, beta0, ctrl3, a3, sub,
                                  gamma, delta, icu_scale, icu_cap, track_peak)
                    if err >= 0:
                        return err
                    for i3 in range(n3):
                        if track_peak:
                            peak_out[a, b, c, i1, i2, i3] = pk3[i3]
                        if ok3[i3]:
                            status[a, b, c, i1, i2, i3] = FEASIBLE
                            s_final[a, b, c, i1, i2, i3] = S3[i3]
                        else:
                            status[a, b, c, i1, i2, i3] = ICU_VIOLATED
                            abort_day[a, b, c, i1, i2, i3] = ab3[i3]
    return -1
