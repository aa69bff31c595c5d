"""Regenerate the golden critical-capacity files from an independent oracle.

Composite Simpson rule with 10^6 nodes on [0, 40] for
int_0^inf alpha e^{-alpha y} exp(K gamma y - gamma beta y^2 / 2) dy,
then 60 bisection steps on {integral = 1}. Shares no code with reglab.
"""
import json
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent


def integral(a, b, g, K, n=10**6, L=40.0):
    y = np.linspace(0.0, L, n + 1)
    f = a * np.exp(-a * y + K * g * y - 0.5 * g * b * y * y)
    h = L / n
    return h / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())


def k_bar(a, b, g, lo=0.0, hi=10.0):
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if integral(a, b, g, mid) > 1.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


if __name__ == "__main__":
    (HERE / "capacity_2_1_1.json").write_text(json.dumps({"k_bar": k_bar(2, 1, 1)}, indent=2) + "\n")
    rows = ["alpha,k_bar"] + [f"{a!r},{k_bar(a, 1, 1)!r}" for a in (1.0, 2.0, 3.0, 4.0)]
    (HERE / "capacity_alpha_sweep.csv").write_text("\n".join(rows) + "\n")
