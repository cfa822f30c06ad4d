"""Regenerate the frozen oracle values in fixtures.json.

Everything here goes through LAPACK (scipy.linalg.eigh_tridiagonal) and
plain numpy, never through the package's own solvers, so the tests that
read the fixtures compare two independent routes to the same discrete
quantities.

    python3 tests/oracles/generate_fixtures.py
"""
import json
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal

L, N = 20.0, 4001


def fiber(a, xi, L=L, n=N):
    tau = np.linspace(-L, L, n)
    d = tau[1] - tau[0]
    b = np.where(tau < 0, a, 1.0)
    diag = 2.0 / d ** 2 + (xi + b * tau) ** 2
    return tau, d, b, diag[1:-1], -np.ones(n - 3) / d ** 2


def lowest(a, xi, k=1):
    _, _, _, dg, off = fiber(a, xi)
    return eigh_tridiagonal(dg, off, eigvals_only=True, select="i", select_range=(0, k - 1))


def sweep_minimum(a, lo=-2.0, hi=0.0, step=1e-3):
    xs = np.arange(lo, hi + step / 2, step)
    mus = np.array([lowest(a, x)[0] for x in xs])
    i = int(np.argmin(mus))
    # parabola through the three nodes around the discrete minimum, then re-centre once
    for h in (step, step / 20):
        x0 = xs[i] if h == step else xv
        f = [lowest(a, x0 + s)[0] for s in (-h, 0.0, h)]
        xv = x0 + 0.5 * h * (f[0] - f[2]) / (f[0] - 2 * f[1] + f[2])
    return float(xv), float(lowest(a, xv)[0])


def i2_full_spectrum(a, zeta):
    tau, d, b, dg, off = fiber(a, zeta)
    w, V = eigh_tridiagonal(dg, off)
    V = V / np.sqrt(d)  # normalize in the discrete L2(step) sense
    phi = V[:, 0]
    u = (zeta + b[1:-1] * tau[1:-1]) * phi
    c = d * (V.T @ u)
    return float(np.sum(c[1:] ** 2 / (w[1:] - w[0])))


def main():
    out = {"grid": {"L": L, "n": N}}
    out["mu_a-0.5_xi-0.8"] = float(lowest(-0.5, -0.8)[0])
    out["mu2_a-0.5_xi-0.8"] = float(lowest(-0.5, -0.8, 2)[1])
    for a in (-0.5, -1.0):
        z, b = sweep_minimum(a)
        out[f"zeta_grid_a{a}"] = z
        out[f"beta_grid_a{a}"] = b
        out[f"I2_grid_a{a}"] = i2_full_spectrum(a, z)
    path = Path(__file__).with_name("fixtures.json")
    path.write_text(json.dumps(out, indent=1) + "\n")
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
