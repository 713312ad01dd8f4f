"""Gaussian moment arithmetic on diagonal-covariance vectors.

Every random quantity in this library (activations, hidden units, weights,
biases) is carried as a pair of arrays: elementwise means and elementwise
variances. This module implements the closed-form moment rules those pairs
obey: products of independent Gaussians, linear combinations, locally
linearized activations, and equal-weight mixture reduction.

All functions are pure and dtype-preserving: feed float32 arrays for the
training path, float64 for oracle-grade accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

#: Substituted for a mixture standard deviation of zero so normalization
#: never divides by zero.
NORM_EPSILON = 1e-6

_ACTIVATION_NAMES = ("identity", "relu", "lrelu", "tanh", "sigmoid")


@dataclass(frozen=True)
class Activation:
    """A pointwise nonlinearity with a closed-form derivative.

    ``slope`` is only meaningful for ``lrelu`` (leaky rectifier); the built-in
    architectures use 0.2.
    """

    name: str
    slope: float = 0.2

    def __post_init__(self):
        if self.name not in _ACTIVATION_NAMES:
            raise ConfigError(f"unknown activation kind: {self.name!r}")

    def value_and_jacobian(self, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate the activation and its derivative at ``mu``, elementwise."""
        mu = np.asarray(mu)
        if self.name == "identity":
            return mu, np.ones_like(mu)
        if self.name == "relu":
            jac = (mu > 0).astype(mu.dtype)
            return mu * jac, jac
        if self.name == "lrelu":
            slope = mu.dtype.type(self.slope)
            jac = np.where(mu > 0, mu.dtype.type(1), slope)
            return mu * jac, jac
        if self.name == "tanh":
            val = np.tanh(mu)
            return val, 1 - val * val
        # sigmoid
        val = 1 / (1 + np.exp(-mu))
        return val, val * (1 - val)


IDENTITY = Activation("identity")
RELU = Activation("relu")
LEAKY_RELU = Activation("lrelu", 0.2)
TANH = Activation("tanh")
SIGMOID = Activation("sigmoid")


@dataclass
class GaussianVector:
    """Elementwise Gaussian moments: a mean array and a variance array.

    The two arrays must have identical shape and every variance must be
    nonnegative. Shape is unconstrained otherwise; batched code stores
    ``(batch, units)``.
    """

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean)
        self.variance = np.asarray(self.variance)
        if self.mean.dtype.kind != "f":
            self.mean = self.mean.astype(np.float64)
        if self.variance.dtype.kind != "f":
            self.variance = self.variance.astype(self.mean.dtype)
        if self.mean.shape != self.variance.shape:
            raise ValueError(
                f"mean shape {self.mean.shape} != variance shape {self.variance.shape}"
            )
        if self.variance.size and np.min(self.variance) < 0:
            raise ValueError("negative variance")

    def __len__(self) -> int:
        return self.mean.shape[-1] if self.mean.ndim else 1

    @property
    def dtype(self):
        return self.mean.dtype

    def astype(self, dtype) -> "GaussianVector":
        return GaussianVector(self.mean.astype(dtype), self.variance.astype(dtype))

    def copy(self) -> "GaussianVector":
        return GaussianVector(self.mean.copy(), self.variance.copy())


@dataclass
class MixtureStats:
    """First two moments of an equal-weight Gaussian mixture."""

    mu: float
    sigma: float


@dataclass
class ActivationLinearization:
    """Output moments and diagonal Jacobian of a linearized activation."""

    out_mean: np.ndarray
    out_variance: np.ndarray
    jacobian: np.ndarray


def gaussian_product_moments(x: GaussianVector, y: GaussianVector) -> GaussianVector:
    """Moments of the elementwise product of two independent Gaussians.

    Exact for independent inputs:
    ``E[XY] = mx*my`` and ``Var[XY] = vx*vy + vx*my^2 + mx^2*vy``.
    """
    for g in (x, y):
        if not (np.all(np.isfinite(g.mean)) and np.all(np.isfinite(g.variance))):
            raise ValueError("non-finite input moments")
    mean = x.mean * y.mean
    variance = (
        x.variance * y.variance
        + x.variance * y.mean * y.mean
        + x.mean * x.mean * y.variance
    )
    return GaussianVector(mean, variance)


def linearize_activation(z: GaussianVector, kind: Activation) -> ActivationLinearization:
    """Propagate moments through an activation linearized at the input mean.

    The output mean is the activation evaluated at the input mean; the output
    variance is the input variance scaled by the squared derivative there.
    """
    val, jac = kind.value_and_jacobian(z.mean)
    return ActivationLinearization(val, jac * jac * z.variance, jac)


def mixture_moments(mean: np.ndarray, variance: np.ndarray, axis=-1):
    """Equal-weight Gaussian mixture mean and std along ``axis`` (raw arrays).

    Returns arrays with ``keepdims=True`` so they broadcast against the input.
    """
    mu = np.mean(mean, axis=axis, keepdims=True)
    dev = mean - mu
    var = np.mean(variance, axis=axis, keepdims=True) + np.mean(dev * dev, axis=axis, keepdims=True)
    return mu, np.sqrt(var)


def mixture_reduce(units: GaussianVector) -> MixtureStats:
    """Collapse a set of Gaussians with equal weights into one (mu, sigma).

    ``sigma`` combines the average component variance with the spread of the
    component means.
    """
    if len(units) == 0:
        raise ValueError("mixture_reduce needs at least one component")
    mu, sigma = mixture_moments(units.mean, units.variance, axis=-1)
    return MixtureStats(float(np.squeeze(mu)), float(np.squeeze(sigma)))


def linear_combination_moments(
    coeffs: np.ndarray, units: GaussianVector, bias: GaussianVector
) -> GaussianVector:
    """Moments of ``sum_i c_i * U_i + bias`` for independent units."""
    coeffs = np.asarray(coeffs, dtype=units.dtype)
    if coeffs.shape[-1] != len(units):
        raise ValueError(
            f"coefficient length {coeffs.shape[-1]} != unit count {len(units)}"
        )
    mean = np.sum(coeffs * units.mean, axis=-1) + bias.mean
    variance = np.sum(coeffs * coeffs * units.variance, axis=-1) + bias.variance
    return GaussianVector(mean, variance)
