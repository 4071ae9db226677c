"""Regenerate the frozen reference values in tests/oracle_values.py.

Every value here is computed without importing qbmsim:

* F(t) by high-precision Taylor integration of the Riccati equation (mpmath);
* the super-Ohmic correlation function by mpmath quadrature;
* master-equation entanglement by an adaptive integration (scipy solve_ivp,
  rtol 1e-11) of the vectorised Liouvillian, with F from the mpmath solution.

Usage: python tools/generate_oracles.py > tests/oracle_values.py
"""

import math

import mpmath as mp
import numpy as np
from scipy.integrate import solve_ivp

mp.mp.dps = 30


def riccati_F(Gamma, gamma, Omega, times):
    c = mp.mpc(gamma, -Omega)
    rhs = lambda t, F: 2 * F * F - c * F + mp.mpf(Gamma) * gamma / 2
    sol = mp.odefun(rhs, 0, mp.mpc(0))
    return [complex(sol(t)) for t in times]


def superohmic_alpha(gJ, Lam, tau):
    f = lambda w: gJ * w**3 * mp.exp(-w / Lam) * mp.expj(-w * tau)
    return complex(mp.quad(f, [0, 10 * Lam, 50 * Lam]))


def liouvillian_EN(Gamma, gamma, Omega, r, N, times, k=0.0):
    c = complex(gamma, -Omega)
    dim = N + 1
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    I = np.eye(dim)
    a1, a2 = np.kron(a, I), np.kron(I, a)
    L = a1 + a2
    mixed = a1 - a2 + a1.T - a2.T
    H = Omega * (a1.T @ a1 + a2.T @ a2) + k * mixed @ mixed
    LdL = L.T @ L
    d = dim * dim

    def rhs(t, y):
        rho = y[: d * d].reshape(d, d) + 1j * y[d * d : 2 * d * d].reshape(d, d)
        F = y[-2] + 1j * y[-1]
        LrLd = L @ rho @ L.T
        drho = -1j * (H @ rho - rho @ H) + np.conj(F) * (LrLd - rho @ LdL) + F * (LrLd - LdL @ rho)
        dF = 2 * F * F - c * F + Gamma * gamma / 2
        return np.concatenate([drho.real.ravel(), drho.imag.ravel(), [dF.real, dF.imag]])

    gen = -r * (a1.T @ a2.T - a1 @ a2)
    from scipy.linalg import expm

    psi = expm(gen)[:, 0]
    psi /= np.linalg.norm(psi)
    rho0 = np.outer(psi, psi.conj())
    y0 = np.concatenate([rho0.real.ravel(), rho0.imag.ravel(), [0.0, 0.0]])
    sol = solve_ivp(rhs, (0, max(times)), y0, t_eval=times, rtol=1e-11, atol=1e-13, method="DOP853")
    out = []
    for y in sol.y.T:
        rho = y[: d * d].reshape(d, d) + 1j * y[d * d : 2 * d * d].reshape(d, d)
        pt = rho.reshape(dim, dim, dim, dim).transpose(0, 3, 2, 1).reshape(d, d)
        ev = np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))
        out.append(math.log1p(-2 * ev[ev < -1e-10].sum()))
    return out


def main():
    print('"""Frozen reference values; regenerate with tools/generate_oracles.py."""')
    print()
    t = [0.5, 1.0, 2.0, 2.5]
    print(f"F_TIMES = {t!r}")
    print(f"F_1_3_0 = {riccati_F(1, 3, 0, t)!r}")
    print(f"F_1_3_1 = {riccati_F(1, 3, 1, t)!r}")
    print(f"F_1_5_1 = {riccati_F(1, 5, 1, t)!r}")
    taus = [0.0, 0.25, 1.0]
    print(f"SUPEROHMIC_TAUS = {taus!r}")
    print(f"SUPEROHMIC_ALPHA = {[superohmic_alpha(1, 1, x) for x in taus]!r}  # gamma_J = Lambda = 1")
    et = [0.0, 0.5, 1.0, 2.0]
    print(f"ME_TIMES = {et!r}")
    print(f"ME_EN_1_3_1_N8 = {liouvillian_EN(1, 3, 1, 0.3, 8, et)!r}  # TMSV(0.3)")
    print(f"ME_EN_1_3_1_N8_K = {liouvillian_EN(1, 3, 1, 0.3, 8, et, k=0.05)!r}  # TMSV(0.3), k = 0.05")


if __name__ == "__main__":
    main()
