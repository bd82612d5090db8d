"""Regenerates regression_corpus.json with 50-digit Sinkhorn dual values."""
import json
import random

import mpmath as mp

mp.mp.dps = 50


def dual(cost, a, b):
    n, m = len(a), len(b)
    phi = [mp.mpf(0)] * n
    psi = [mp.mpf(0)] * m
    for _ in range(4000):
        phi = [-mp.log(mp.fsum(mp.exp(psi[j] - cost[i][j]) * b[j] for j in range(m))) for i in range(n)]
        psi = [-mp.log(mp.fsum(mp.exp(phi[i] - cost[i][j]) * a[i] for i in range(n))) for j in range(m)]
    val = mp.fsum(p * w for p, w in zip(phi, a)) + mp.fsum(p * w for p, w in zip(psi, b))
    mass = mp.fsum(mp.exp(phi[i] + psi[j] - cost[i][j]) * a[i] * b[j] for i in range(n) for j in range(m))
    return val + 1 - mass


def simplex(rng, k, lo=0.05):
    w = [lo + rng.random() for _ in range(k)]
    s = sum(w)
    w = [x / s for x in w]
    w[-1] = 1.0 - sum(w[:-1])
    return w


rng = random.Random(20240607)
cases = []
fixed = [
    ("zero_2x2", [[0.0, 0.0], [0.0, 0.0]], [0.5, 0.5], [0.5, 0.5]),
    ("diagonal_2x2", [[0.0, 1.0], [1.0, 0.0]], [0.3, 0.7], [0.6, 0.4]),
    ("skewed_2x2", [[2.0, -1.0], [0.5, 3.0]], [0.9, 0.1], [0.2, 0.8]),
    ("quadratic_3x3", [[0.0, 0.25, 1.0], [0.25, 0.0, 0.25], [1.0, 0.25, 0.0]], [0.2, 0.5, 0.3], [0.4, 0.4, 0.2]),
    ("contrast_3x3", [[5.0, 0.0, 2.0], [0.0, 4.0, 1.0], [3.0, 1.0, 6.0]], [1 / 3, 1 / 3, 1 / 3], [0.1, 0.6, 0.3]),
]
for name, c, a, b in fixed:
    cases.append((name, c, a, b))
for k in range(8):
    n = 2 if k < 4 else 3
    c = [[round(rng.uniform(-2.0, 2.0), 6) for _ in range(n)] for _ in range(n)]
    cases.append((f"random_{n}x{n}_{k}", c, simplex(rng, n), simplex(rng, n)))

out = []
for name, c, a, b in cases:
    e = dual([[mp.mpf(x) for x in row] for row in c], [mp.mpf(x) for x in a], [mp.mpf(x) for x in b])
    out.append({"name": name, "cost": c, "a": a, "b": b, "dual": float(e)})

with open("regression_corpus.json", "w") as f:
    json.dump({"instances": out}, f, indent=2)
    f.write("\n")
