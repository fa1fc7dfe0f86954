"""Synthetic benchmark data and missingness masks."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, Dataset, KnnSamplerError, RngStream

RING_NOISE_VARIANCE = 0.1


class InfeasibleMaskError(KnnSamplerError, ValueError):
    pass


class Setup(str, enum.Enum):
    LINEAR_CHISQ = "linear_chisq"
    NOISY_RING = "noisy_ring"

    @classmethod
    def parse(cls, name: str | Setup) -> Setup:
        if isinstance(name, Setup):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"linear": cls.LINEAR_CHISQ, "setup1": cls.LINEAR_CHISQ, "1": cls.LINEAR_CHISQ,
                   "ring": cls.NOISY_RING, "setup2": cls.NOISY_RING, "2": cls.NOISY_RING}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown setup {name!r}; use linear or ring") from None


class Mechanism(str, enum.Enum):
    MCAR = "mcar"
    MAR_WINDOW = "mar_window"


@dataclass(frozen=True)
class MaskSpec:
    mechanism: Mechanism = Mechanism.MAR_WINDOW
    m: int = 200
    window: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self) -> None:
        mech = self.mechanism
        if not isinstance(mech, Mechanism):
            key = str(mech).lower().replace("-", "_")
            try:
                mech = Mechanism.MAR_WINDOW if key == "mar" else Mechanism(key)
            except ValueError:
                raise ConfigurationError(f"unknown missingness mechanism {self.mechanism!r}") from None
        object.__setattr__(self, "mechanism", mech)
        if self.m < 0:
            raise ConfigurationError("m must be non-negative")
        lo, hi = self.window
        if not lo < hi:
            raise ConfigurationError("window must satisfy lo < hi")
        object.__setattr__(self, "window", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        return {"mechanism": self.mechanism.value, "m": self.m, "window": list(self.window)}


def _gen(rng: RngStream | np.random.Generator) -> np.random.Generator:
    return rng.generator() if isinstance(rng, RngStream) else rng


def chisq2(gen: np.random.Generator, size: int) -> np.ndarray:
    """Chi-square(2) draws as -2 log U, U uniform on (0, 1]."""
    return -2.0 * np.log1p(-gen.random(size))


def gen_linear_chisq(N: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """``x ~ U[-2, 2]``, ``y = x + chi2(2)``."""
    if N < 1:
        raise ConfigurationError("N must be positive")
    gen = _gen(rng)
    x = gen.uniform(-2.0, 2.0, N)
    y = x + chisq2(gen, N)
    return x.reshape(-1, 1), y


def gen_noisy_ring(N: int, rng, *, noise: float = RING_NOISE_VARIANCE, noise_is_std: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Unit ring with radial Gaussian noise; ``noise`` is a variance unless ``noise_is_std``."""
    if N < 1:
        raise ConfigurationError("N must be positive")
    gen = _gen(rng)
    theta = gen.uniform(0.0, 2.0 * math.pi, N)
    sd = noise if noise_is_std else math.sqrt(noise)
    radius = 1.0 + sd * gen.standard_normal(N)
    return (radius * np.cos(theta)).reshape(-1, 1), radius * np.sin(theta)


def generate(setup: Setup | str, N: int, rng, **kwargs) -> tuple[np.ndarray, np.ndarray]:
    setup = Setup.parse(setup)
    if setup is Setup.LINEAR_CHISQ:
        return gen_linear_chisq(N, rng)
    return gen_noisy_ring(N, rng, **kwargs)


def apply_mask(pairs: tuple[np.ndarray, np.ndarray], spec: MaskSpec, rng) -> Dataset:
    """Hide ``spec.m`` responses, keeping them as ``truth``.

    ``mcar`` picks uniformly among all units; ``mar_window`` picks uniformly
    among units whose first covariate lies in the closed window.
    """
    x, y = pairs
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y, float).reshape(-1)
    N = x.shape[0]
    if spec.mechanism is Mechanism.MCAR:
        eligible = np.arange(N)
    else:
        lo, hi = spec.window
        eligible = np.flatnonzero((x[:, 0] >= lo) & (x[:, 0] <= hi))
    if spec.m > eligible.shape[0]:
        raise InfeasibleMaskError(f"only {eligible.shape[0]} eligible units for m={spec.m}")
    chosen = np.sort(_gen(rng).choice(eligible, size=spec.m, replace=False))
    missing = np.zeros(N, dtype=bool)
    missing[chosen] = True
    obs = np.flatnonzero(~missing)
    return Dataset(
        x_obs=x[obs],
        y_obs=y[obs],
        x_miss=x[chosen],
        truth=y[chosen],
        covariate_names=tuple("x" if x.shape[1] == 1 else f"x{j}" for j in range(x.shape[1])),
        response_name="y",
        truth_name="y_true",
        observed_rows=obs,
        missing_rows=chosen,
    )


def make_dataset(setup, n: int, spec: MaskSpec, rng: RngStream, **kwargs) -> Dataset:
    """Generate ``n + spec.m`` units and mask ``spec.m`` of them."""
    pairs = generate(setup, n + spec.m, rng.derive(0), **kwargs)
    return apply_mask(pairs, spec, rng.derive(1))
