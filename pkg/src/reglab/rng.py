"""Counter-based random numbers keyed by (seed, replicate, step, site, k).

Every draw is a pure function of its key, computed by chaining the
SplitMix64 finalizer. This makes a path reproducible independently of how
replicates are distributed over workers, and lets two coupled paths consume
exactly the same normal increments. ``k`` indexes successive draws at the
same (step, site), which the exact Feller sampler needs for its rejection
loops.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np
from numba import njit, uint64

_GOLDEN = uint64(0x9E3779B97F4A7C15)
_M_REP = uint64(0xD1B54A32D192ED03)
_M_STEP = uint64(0xABC98388FB8FAC03)
_M_SITE = uint64(0x8CB92BA72F3D8DD7)
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0

SEED_MAX = 2**63 - 1


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(cache=True)
def stream_key(seed, replicate):
    return mix64(mix64(uint64(seed) + _GOLDEN) ^ (uint64(replicate) * _M_REP + _GOLDEN))


@njit(cache=True, inline="always")
def step_key(key, step):
    return mix64(key ^ (uint64(step) * _M_STEP + _GOLDEN))


@njit(cache=True, inline="always")
def uniform(skey, site, k):
    """Uniform on (0, 1) for draw k at ``site`` under step key ``skey``."""
    b = mix64(mix64(skey ^ (uint64(site) * _M_SITE)) + uint64(k) * _GOLDEN)
    return (float(b >> uint64(11)) + 0.5) * _INV_2_53


@njit(cache=True, inline="always")
def normal(skey, site, k):
    """Standard normal from draws k, k + 1 (Box-Muller, cosine branch)."""
    u1 = uniform(skey, site, k)
    u2 = uniform(skey, site, k + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)


@njit(cache=True)
def poisson(mu, skey, site, k):
    """Poisson(mu) sample; returns (value, next k).

    Multiplication method below mean 10, Hormann's PTRS transformed
    rejection above.
    """
    if mu <= 0.0:
        return 0, k
    if mu < 10.0:
        limit = math.exp(-mu)
        prod = uniform(skey, site, k)
        k += 1
        n = 0
        while prod > limit:
            prod *= uniform(skey, site, k)
            k += 1
            n += 1
        return n, k
    slam = math.sqrt(mu)
    loglam = math.log(mu)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = uniform(skey, site, k) - 0.5
        v = uniform(skey, site, k + 1)
        k += 2
        us = 0.5 - abs(u)
        n = math.floor((2.0 * a / us + b) * u + mu + 0.43)
        if us >= 0.07 and v <= vr:
            return int(n), k
        if n < 0 or (us < 0.013 and v > us):
            continue
        if math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b) <= (
            -mu + n * loglam - math.lgamma(n + 1.0)
        ):
            return int(n), k


@njit(cache=True)
def gamma_shape_ge1(shape, skey, site, k):
    """Gamma(shape, 1) for shape >= 1 (Marsaglia-Tsang); returns (value, next k)."""
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = normal(skey, site, k)
        k += 2
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = uniform(skey, site, k)
        k += 1
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v, k
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v, k


@njit(cache=True)
def feller_transition(x, beta_dt, skey, site, k):
    """Exact transition of dX = sqrt(2 beta X) dB over time dt.

    X_dt given X_0 = x is a Poisson(x / (beta dt)) number of independent
    exponentials with mean beta dt, i.e. zero with probability
    exp(-x / (beta dt)) and otherwise Gamma(N, beta dt).
    """
    if x <= 0.0:
        return 0.0, k
    n, k = poisson(x / beta_dt, skey, site, k)
    if n == 0:
        return 0.0, k
    gm, k = gamma_shape_ge1(float(n), skey, site, k)
    return gm * beta_dt, k


@njit(cache=True)
def _normals(seed, replicate, step, n):
    skey = step_key(stream_key(seed, replicate), step)
    out = np.empty(n)
    for i in range(n):
        out[i] = normal(skey, i, 0)
    return out


@njit(cache=True)
def _feller_samples(x, beta_dt, seed, n):
    out = np.empty(n)
    for r in range(n):
        skey = step_key(stream_key(seed, r), 0)
        out[r], _ = feller_transition(x, beta_dt, skey, 0, 0)
    return out


def normals(seed: int, replicate: int, step: int, n_sites: int) -> np.ndarray:
    """The normal increments a path uses at one step, one per site."""
    return _normals(check_seed(seed), replicate, step, n_sites)


def feller_samples(x: float, beta: float, dt: float, seed: int, n: int) -> np.ndarray:
    """n independent exact Feller transitions from x over dt (replicates 0..n-1)."""
    return _feller_samples(float(x), float(beta * dt), check_seed(seed), n)


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must lie in [0, 2**63), got {seed}")
    return seed


def derive_seed(master: int, *labels) -> int:
    """Child seed from a master seed and labels (SHA-256, first 63 bits)."""
    text = ":".join([str(int(master))] + [str(x) for x in labels])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
