"""Independent pricing oracles used to freeze expected values.

These deliberately avoid the package's own solvers: closed-form
Black-Scholes, a CRR binomial tree for the American put, and the classic
Poisson-mixture series for the Merton European put.
"""

import numpy as np
from scipy.stats import norm


def bs_put(S, K, T, r, sigma, q=0.0):
    d1 = (np.log(S / K) + (r - q + 0.5 * sigma ** 2) * T) / (sigma * np.sqrt(T))
    d2 = d1 - sigma * np.sqrt(T)
    return K * np.exp(-r * T) * norm.cdf(-d2) - S * np.exp(-q * T) * norm.cdf(-d1)


def crr_american_put(S, K, T, r, sigma, steps, q=0.0):
    dt = T / steps
    u = np.exp(sigma * np.sqrt(dt))
    d = 1.0 / u
    p = (np.exp((r - q) * dt) - d) / (u - d)
    disc = np.exp(-r * dt)
    j = np.arange(steps + 1)
    vals = np.maximum(K - S * u ** (2 * j - steps), 0.0)
    for n in range(steps - 1, -1, -1):
        j = np.arange(n + 1)
        prices = S * u ** (2 * j - n)
        vals = disc * (p * vals[1:n + 2] + (1 - p) * vals[0:n + 1])
        vals = np.maximum(vals, K - prices)
    return float(vals[0])


def merton_put_series(S, K, T, r, lam, jump_mean, jump_std, sigma, n_terms=60):
    k = np.exp(jump_mean + 0.5 * jump_std ** 2) - 1.0
    lam2 = lam * (1.0 + k)
    total, fact = 0.0, 1.0
    for n in range(n_terms):
        if n:
            fact *= n
        prob = np.exp(-lam2 * T) * (lam2 * T) ** n / fact
        r_n = r - lam * k + n * (jump_mean + 0.5 * jump_std ** 2) / T
        sigma_n = np.sqrt(sigma ** 2 + n * jump_std ** 2 / T)
        total += prob * bs_put(S, K, T, r_n, sigma_n)
    return float(total)
