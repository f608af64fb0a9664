"""Compiled right-hand side and RK4 driver for the correlator dynamics.

Correlator storage: ``th[c, i]`` with component c in (xx, yy, zz, xy, xz, yz)
and i the linear displacement index; i = 0 (the origin) is never read.
"""
import numba
import numpy as np

XX, YY, ZZ, XY, XZ, YZ = range(6)


@numba.njit(cache=True, fastmath=False)
def rhs(mu, th, nbr, d1, unit, G, Om, De, J, Jz, dmu, dth):
    n_sites = th.shape[1]
    n_nbr = nbr.shape[1]
    Z = float(n_nbr)
    nu = unit.shape[0]

    t1 = np.zeros(6)
    for k in range(nu):
        u = unit[k]
        for c in range(6):
            t1[c] += th[c, u]
    for c in range(6):
        t1[c] /= nu

    mx, my, mz = mu[0], mu[1], mu[2]
    kz = (J - Jz) * Z
    dmu[0] = -kz * t1[YZ] - De * my - 0.5 * G * mx
    dmu[1] = kz * t1[XZ] - 2 * Om * mz + De * mx - 0.5 * G * my
    dmu[2] = 2 * Om * my - G * (1 + mz)

    t1yz, t1xz = t1[YZ], t1[XZ]
    mxyz = mx * my * mz
    for c in range(6):
        dth[c, 0] = 0.0
    for i in range(1, n_sites):
        txx = th[XX, i]
        tyy = th[YY, i]
        tzz = th[ZZ, i]
        txy = th[XY, i]
        txz = th[XZ, i]
        tyz = th[YZ, i]
        sxx = 0.0
        syy = 0.0
        szz = 0.0
        sxy = 0.0
        sxz = 0.0
        syz = 0.0
        for k in range(n_nbr):
            q = nbr[i, k]
            if q != 0:
                sxx += th[XX, q]
                syy += th[YY, q]
                szz += th[ZZ, q]
                sxy += th[XY, q]
                sxz += th[XZ, q]
                syz += th[YZ, q]
        dd = d1[i]
        pre = Z - dd

        # local rotations: Pi @ T + T @ Pi^T
        rxx = -2 * De * txy
        ryy = 2 * (De * txy - 2 * Om * tyz)
        rzz = 4 * Om * tyz
        rxy = De * (txx - tyy) - 2 * Om * txz
        rxz = -De * tyz + 2 * Om * txy
        ryz = De * txz + 2 * Om * (tyy - tzz)

        # XY coupling
        fxx = 2 * J * (2 * mxyz - mx * t1yz - my * txz) * pre - 2 * J * mz * sxy
        fyy = -2 * J * (2 * mxyz - my * t1xz - mx * tyz) * pre + 2 * J * mz * sxy
        fzz = -2 * J * (mx * tyz - my * txz) * pre - 2 * J * (my * sxz - mx * syz)
        fxy = J * (2 * my * my * mz - 2 * mx * mx * mz - my * t1yz - my * tyz
                   + mx * t1xz + mx * txz) * pre - J * mz * (syy - sxx)
        fxz = (-J * my * dd
               + J * (2 * mz * mz * my - mz * t1yz - my * tzz - mx * txy + my * txx) * pre
               - J * (mz * syz + my * sxx - mx * sxy))
        fyz = (J * mx * dd
               + J * (-2 * mz * mz * mx + mz * t1xz + mx * tzz - mx * tyy + my * txy) * pre
               + J * (mz * sxz - my * sxy + mx * syy))

        # Ising coupling
        fxx += -2 * Jz * (2 * mxyz - mx * t1yz - mz * txy) * pre + 2 * Jz * my * sxz
        fyy += 2 * Jz * (2 * mxyz - my * t1xz - mz * txy) * pre - 2 * Jz * mx * syz
        fxy += (Jz * (2 * mx * mx * mz - 2 * my * my * mz - mx * t1xz - mz * txx
                      + my * t1yz + mz * tyy) * pre
                + Jz * (my * syz - mx * sxz))
        fxz += Jz * my * dd - Jz * (2 * mz * mz * my - mz * t1yz - mz * tyz) * pre + Jz * my * szz
        fyz += -Jz * mx * dd + Jz * (2 * mz * mz * mx - mz * t1xz - mz * txz) * pre - Jz * mx * szz

        # dissipation
        gxx = -G * txx
        gyy = -G * tyy
        gzz = -2 * G * (tzz + mz)
        gxy = -G * txy
        gxz = -G * (1.5 * txz + mx)
        gyz = -G * (1.5 * tyz + my)

        dth[XX, i] = rxx + fxx + gxx
        dth[YY, i] = ryy + fyy + gyy
        dth[ZZ, i] = rzz + fzz + gzz
        dth[XY, i] = rxy + fxy + gxy
        dth[XZ, i] = rxz + fxz + gxz
        dth[YZ, i] = ryz + fyz + gyz


@numba.njit(cache=True)
def fill_product(mu, th):
    """theta = mu_a mu_b everywhere (eta = 0)."""
    pa = (0, 1, 2, 0, 0, 1)
    pb = (0, 1, 2, 1, 2, 2)
    for c in range(6):
        v = mu[pa[c]] * mu[pb[c]]
        for i in range(1, th.shape[1]):
            th[c, i] = v


@numba.njit(cache=True)
def max_abs_eta(mu, th, out):
    pa = (0, 1, 2, 0, 0, 1)
    pb = (0, 1, 2, 1, 2, 2)
    for c in range(6):
        v = mu[pa[c]] * mu[pb[c]]
        m = 0.0
        for i in range(1, th.shape[1]):
            a = abs(th[c, i] - v)
            if a > m:
                m = a
        out[c] = m


@numba.njit(cache=True)
def advance(mu, th, n_steps, dt, nbr, d1, unit, G, Om, De, J, Jz, zero_eta,
            sample_every, samples_t0, sample_mu, sample_rate, theta_max):
    """Advance (mu, th) in place by ``n_steps`` RK4 steps.

    Returns (sum of |d mu^2/dt| * dt, number of samples written, finite flag).
    Every ``sample_every`` steps the pre-step magnetization and d(mu^2)/dt are
    stored. ``theta_max`` accumulates the running max |eta| per component over
    the pre-step states of this call.
    """
    n = th.shape[1]
    k1m = np.empty(3)
    k2m = np.empty(3)
    k3m = np.empty(3)
    k4m = np.empty(3)
    k1t = np.empty((6, n))
    k2t = np.empty((6, n))
    k3t = np.empty((6, n))
    k4t = np.empty((6, n))
    tm = np.empty(3)
    tt = np.empty((6, n))
    cur = np.empty(6)
    kappa_acc = 0.0
    ns = 0
    for s in range(n_steps):
        max_abs_eta(mu, th, cur)
        for c in range(6):
            if cur[c] > theta_max[c]:
                theta_max[c] = cur[c]
        rhs(mu, th, nbr, d1, unit, G, Om, De, J, Jz, k1m, k1t)
        rate = 2 * (mu[0] * k1m[0] + mu[1] * k1m[1] + mu[2] * k1m[2])
        kappa_acc += abs(rate) * dt
        if s % sample_every == 0 and ns < sample_mu.shape[0]:
            samples_t0[ns] = s
            for a in range(3):
                sample_mu[ns, a] = mu[a]
            sample_rate[ns] = rate
            ns += 1
        for a in range(3):
            tm[a] = mu[a] + 0.5 * dt * k1m[a]
        for c in range(6):
            for i in range(n):
                tt[c, i] = th[c, i] + 0.5 * dt * k1t[c, i]
        if zero_eta:
            fill_product(tm, tt)
        rhs(tm, tt, nbr, d1, unit, G, Om, De, J, Jz, k2m, k2t)
        for a in range(3):
            tm[a] = mu[a] + 0.5 * dt * k2m[a]
        for c in range(6):
            for i in range(n):
                tt[c, i] = th[c, i] + 0.5 * dt * k2t[c, i]
        if zero_eta:
            fill_product(tm, tt)
        rhs(tm, tt, nbr, d1, unit, G, Om, De, J, Jz, k3m, k3t)
        for a in range(3):
            tm[a] = mu[a] + dt * k3m[a]
        for c in range(6):
            for i in range(n):
                tt[c, i] = th[c, i] + dt * k3t[c, i]
        if zero_eta:
            fill_product(tm, tt)
        rhs(tm, tt, nbr, d1, unit, G, Om, De, J, Jz, k4m, k4t)
        h6 = dt / 6.0
        for a in range(3):
            mu[a] += h6 * (k1m[a] + 2 * k2m[a] + 2 * k3m[a] + k4m[a])
        finite = True
        for c in range(6):
            for i in range(n):
                v = th[c, i] + h6 * (k1t[c, i] + 2 * k2t[c, i] + 2 * k3t[c, i] + k4t[c, i])
                th[c, i] = v
                if not np.isfinite(v):
                    finite = False
        if zero_eta:
            fill_product(mu, th)
        if not finite or not (np.isfinite(mu[0]) and np.isfinite(mu[1]) and np.isfinite(mu[2])):
            return kappa_acc, ns, False
    return kappa_acc, ns, True
