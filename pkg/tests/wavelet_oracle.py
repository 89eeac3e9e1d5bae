"""Loop-based periodic filter-bank analysis used as an independent reference."""

import numpy as np


def direct_analysis(x, bank):
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n % 2:
        x = np.append(x, x[0])
        n += 1
    h, g = bank.lowpass, bank.highpass
    approx = np.zeros(n // 2)
    detail = np.zeros(n // 2)
    for k in range(n // 2):
        for t in range(len(h)):
            approx[k] += h[t] * x[(2 * k + t) % n]
            detail[k] += g[t] * x[(2 * k + t) % n]
    return approx, detail
