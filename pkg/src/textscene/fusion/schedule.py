"""Forward-diffusion noise schedule and latent corruption."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        if (self.betas <= 0).any() or (self.betas >= 1).any():
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "alpha_bar", np.cumprod(1.0 - self.betas))

    @classmethod
    def linear(cls, t_max: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        return cls(betas=np.linspace(beta_start, beta_end, t_max))

    @property
    def t_max(self) -> int:
        return self.betas.size

    def signal_coeff(self, t) -> np.ndarray:
        """sqrt(alpha_bar_t), the clean-latent coefficient of the corruption."""
        return np.sqrt(self.alpha_bar[t])

    def noise_coeff(self, t) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar[t])

    def phi(self, t) -> np.ndarray:
        """Perceptual-loss weight; taken equal to the clean-latent coefficient
        so heavily-noised steps contribute less."""
        return self.signal_coeff(t)


def corrupt_latent(z0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.

    `t` is an int or an int array broadcastable against z0's batch axis.
    """
    if z0.shape != eps.shape:
        raise ValueError("z0/eps shape mismatch")
    t_arr = np.asarray(t)
    if t_arr.min() < 0 or t_arr.max() >= schedule.t_max:
        raise ValueError(f"t out of range [0, {schedule.t_max})")
    sc = schedule.signal_coeff(t_arr)
    nc = schedule.noise_coeff(t_arr)
    if t_arr.ndim > 0:
        extra = (1,) * (z0.ndim - 1)
        sc = sc.reshape(t_arr.shape[0], *extra)
        nc = nc.reshape(t_arr.shape[0], *extra)
    return sc * z0 + nc * eps
