"""Replayable, time-indexed uniform random streams.

Every random number consumed anywhere in this package is addressed by a
(seed, time_step, counter) triple, so any worker can regenerate the randomness
for any time step without replaying earlier steps, and re-simulating a
transition consumes exactly the same values no matter what was queried in
between.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "StreamKey",
    "UniformBlock",
    "uniform",
    "standard_normal",
    "block_for",
    "uniform_fill",
    "inv_normal_cdf",
]

_MASK = 0xFFFFFFFFFFFFFFFF
# hash-chain tweak constants (golden-ratio style odd constants)
_G_SEED = 0x9E3779B97F4A7C15
_G_TIME = 0xD1B54A32D192ED03
_G_CTR = 0x8CB92BA72F3D8DD7
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U53 = 2.0 ** -53


def _mix64(z: int) -> int:
    """Stafford mix13 finalizer on a 64-bit word (Python ints, masked)."""
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return (z ^ (z >> 31)) & _MASK


def _word(seed: int, time_step: int, counter: int) -> int:
    z = _mix64((seed ^ _G_SEED) & _MASK)
    z = _mix64((z ^ ((time_step + _G_TIME) & _MASK)) & _MASK)
    z = _mix64((z ^ ((counter + _G_CTR) & _MASK)) & _MASK)
    return z


def _words_vec(seed: int, time_step: int, counters: np.ndarray) -> np.ndarray:
    """Vectorized _word over a uint64 counter array. Bit-identical to _word."""
    zt = np.uint64(_word_prefix(seed, time_step))
    z = zt ^ ((counters + np.uint64(_G_CTR)) & np.uint64(_MASK))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _word_prefix(seed: int, time_step: int) -> int:
    """Hash state after absorbing seed and time_step (counter still pending)."""
    z = _mix64((seed ^ _G_SEED) & _MASK)
    return _mix64((z ^ ((time_step + _G_TIME) & _MASK)) & _MASK)


@dataclass(frozen=True)
class StreamKey:
    """Address of one uniform variate: (seed, time_step, counter)."""

    seed: int
    time_step: int
    counter: int = 0

    def offset(self, k: int) -> "StreamKey":
        """Key k positions further along the same time step's block."""
        return StreamKey(self.seed, self.time_step, self.counter + k)


class UniformBlock:
    """The fixed-layout vector of uniforms consumed by one transition.

    Length equals the kernel's declared variate budget, never the chain
    state.  ``layout`` optionally names the slots for documentation and
    debugging.
    """

    __slots__ = ("values", "layout")

    def __init__(self, values: np.ndarray, layout: tuple[str, ...] | None = None):
        self.values = values
        self.layout = layout

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, idx):
        return self.values[idx]

    def slot(self, name: str) -> float:
        if self.layout is None:
            raise KeyError("block has no layout")
        return self.values[self.layout.index(name)]


def uniform(key: StreamKey) -> float:
    """Uniform in the open interval (0, 1); a pure function of the key."""
    return ((_word(key.seed, key.time_step, key.counter) >> 11) + 0.5) * _U53


def uniform_fill(seed: int, time_step: int, start: int, n: int) -> np.ndarray:
    """n consecutive uniforms for counters start..start+n-1 (vectorized)."""
    counters = np.arange(start, start + n, dtype=np.uint64)
    return ((_words_vec(seed, time_step, counters) >> np.uint64(11)).astype(
        np.float64) + 0.5) * _U53


def block_for(seed: int, time_step: int, budget: int,
              layout: tuple[str, ...] | None = None) -> UniformBlock:
    """The budget-length uniform block for one time step.

    Deterministic: two calls with the same arguments return identical blocks,
    regardless of any other queries made in between.
    """
    if budget <= 0:
        raise ValueError(f"variate budget must be positive, got {budget}")
    return UniformBlock(uniform_fill(seed, time_step, 0, budget), layout)


# AS241 (PPND16) rational approximation of the inverse standard normal CDF.
# Plain float arithmetic only, so the same source compiles under numba and
# the fast path produces bit-identical variates.

def inv_normal_cdf(p: float) -> float:
    """Inverse standard normal CDF, abs error well below 1e-9 on (0, 1)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r +
                     3.3430575583588128105e4) * r +
                    6.7265770927008700853e4) * r +
                   4.5921953931549871457e4) * r +
                  1.3731693765509461125e4) * r +
                 1.9715909503065514427e3) * r +
                1.3314166789178437745e2) * r +
               3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r +
                     2.8729085735721942674e4) * r +
                    3.9307895800092710610e4) * r +
                   2.1213794301586595867e4) * r +
                  5.3941960214247511077e3) * r +
                 6.8718700749205790830e2) * r +
                4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r +
                     2.27238449892691845833e-2) * r +
                    2.41780725177450611770e-1) * r +
                   1.27045825245236838258e0) * r +
                  3.64784832476320460504e0) * r +
                 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r +
               1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r +
                     5.47593808499534494600e-4) * r +
                    1.51986665636164571966e-2) * r +
                   1.48103976427480074590e-1) * r +
                  6.89767334985100004550e-1) * r +
                 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r +
                     2.71155556874348757815e-5) * r +
                    1.24266094738807843860e-3) * r +
                   2.65321895265761230930e-2) * r +
                  2.96560571828504891230e-1) * r +
                 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r +
               6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r +
                     1.42151175831644588870e-7) * r +
                    1.84631831751005468180e-5) * r +
                   7.86869131145613259100e-4) * r +
                  1.48753612908506148525e-2) * r +
                 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0)
    z = num / den
    return -z if q < 0.0 else z


def standard_normal(key: StreamKey) -> float:
    """Standard normal variate by inversion; consumes exactly one uniform."""
    return inv_normal_cdf(uniform(key))
