#!/usr/bin/env python3
"""Regenerate crates/core/data/tw1.txt, the embedded Tracy-Widom (beta = 1) CDF table.

F1(s) = det(I - K_s) on L2(0, inf) with kernel K_s(x, y) = Ai(x + y + s).
The Fredholm determinant is discretised with Gauss-Legendre quadrature on
[0, L] (Bornemann's method); the kernel is negligible beyond L = 30 for every
s on the grid. The upper tail is formed as -expm1(sum log1p(-mu)) so that
1 - F1 keeps its relative accuracy.

Usage: python3 scripts/gen_tw1_table.py > crates/core/data/tw1.txt
Requires numpy and scipy.
"""
import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import airy

NODES = 200
CUTOFF = 30.0
LO, HI, STEP = -10.0, 11.0, 0.01


def tw1(s, nodes=NODES, cutoff=CUTOFF):
    x, w = leggauss(nodes)
    x = (x + 1.0) * cutoff / 2.0
    w = w * cutoff / 2.0
    sw = np.sqrt(w)
    kernel = airy(x[:, None] + x[None, :] + s)[0]
    mu = np.linalg.eigvals(sw[:, None] * kernel * sw[None, :])
    logdet = np.sum(np.log1p(-mu)).real
    return np.exp(logdet), -np.expm1(logdet)


def main():
    count = int(round((HI - LO) / STEP)) + 1
    print("# Tracy-Widom beta=1 CDF, Fredholm determinant det(I - Ai(x+y+s)) on L2(0,inf)")
    print(f"# Gauss-Legendre nodes={NODES} cutoff={CUTOFF} grid=[{LO},{HI}] step={STEP}")
    print("# columns: x F1(x)")
    for i in range(count):
        s = LO + i * STEP
        cdf, _ = tw1(s)
        print(f"{s:.2f} {cdf:.17e}")


if __name__ == "__main__":
    main()
