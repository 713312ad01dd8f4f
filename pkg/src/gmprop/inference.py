"""Backward pass: recursive layer-wise Gaussian conditional updates.

Training happens here instead of in a gradient step. After a forward pass has
cached every stage's prior moments, the output states are conditioned on the
observed targets, and the resulting (posterior - prior) innovation is pushed
down one stage at a time. Each stage converts the innovation above it into

- additive updates of its own weight/bias moments, and
- an innovation on the states below it, via the stored cross-covariances.

Updates use the prior moments of the stage above (smoother-style gains), and
mini-batch parameter deltas are accumulated against the same pre-batch
parameter store and applied once, so batch processing is order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError, SequencingError
from .gaussian import GaussianVector
from .layers import LayerCache, LayerParams, ParamDeltas, Stage, VARIANCE_TINY

#: Posterior variances below this floor are clamped to it (and counted).
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class ObservationModel:
    """Output observation noise and its per-epoch geometric decay."""

    sigma_v: float
    eta: float = 1.0
    epoch: int = 0

    def __post_init__(self):
        if self.sigma_v <= 0:
            raise ValueError("sigma_v must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")


def decay_noise(obs: ObservationModel) -> ObservationModel:
    """Advance one epoch: sigma_v <- eta * sigma_v."""
    return ObservationModel(obs.sigma_v * obs.eta, obs.eta, obs.epoch + 1)


class ParameterStore:
    """Per-stage weight/bias Gaussian moments, updated in place by inference."""

    def __init__(self, layers: list[LayerParams | None]):
        self.layers = layers

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i) -> LayerParams | None:
        return self.layers[i]

    def __len__(self):
        return len(self.layers)

    @property
    def count(self) -> int:
        return sum(p.count for p in self.layers if p is not None)

    def copy(self) -> "ParameterStore":
        return ParameterStore([p.copy() if p is not None else None
                               for p in self.layers])

    def equal(self, other: "ParameterStore") -> bool:
        """Bitwise equality of every stored moment array."""
        if len(self.layers) != len(other.layers):
            return False
        for a, b in zip(self.layers, other.layers):
            if (a is None) != (b is None):
                return False
            if a is None:
                continue
            for x, y in ((a.w_mean, b.w_mean), (a.w_var, b.w_var),
                         (a.b_mean, b.b_mean), (a.b_var, b.b_var)):
                if not np.array_equal(x, y):
                    return False
        return True

    def apply_deltas(self, deltas_lists: list[list[ParamDeltas | None]],
                     floor: float = VARIANCE_FLOOR) -> tuple[int, float]:
        """Add accumulated deltas once; clamp variances at ``floor``.

        Returns (number of clamped variances, mean absolute mean-delta).
        """
        clamped = 0
        abs_sum, n_sum = 0.0, 0
        for i, params in enumerate(self.layers):
            if params is None:
                continue
            for deltas in deltas_lists:
                d = deltas[i]
                if d is None:
                    continue
                params.w_mean += d.w_mean
                params.w_var += d.w_var
                params.b_mean += d.b_mean
                params.b_var += d.b_var
                abs_sum += float(np.abs(d.w_mean).sum() + np.abs(d.b_mean).sum())
                n_sum += d.w_mean.size + d.b_mean.size
            for v in (params.w_var, params.b_var):
                low = v < floor
                c = int(np.count_nonzero(low))
                if c:
                    v[low] = floor
                    clamped += c
        return clamped, (abs_sum / n_sum if n_sum else 0.0)


@dataclass
class InferenceStats:
    """Per-minibatch diagnostics surfaced to the harness logger."""

    clamp_count: int = 0
    mean_abs_delta: float = 0.0


def output_update(z_out: GaussianVector, y: np.ndarray,
                  obs: ObservationModel) -> GaussianVector:
    """Condition output states on ``Y = Z + V`` with ``V ~ N(0, sigma_v^2)``.

    Per unit: gain ``k = var/(var + sigma_v^2)``, posterior mean
    ``mu + k (y - mu)``, posterior variance ``(1 - k) var``.
    """
    y = np.asarray(y, dtype=z_out.mean.dtype)
    if y.shape != z_out.mean.shape:
        raise ValueError(f"observation shape {y.shape} != output {z_out.mean.shape}")
    if not np.all(np.isfinite(y)):
        raise DataError("non-finite observation values")
    sv2 = z_out.mean.dtype.type(obs.sigma_v) ** 2
    gain = z_out.variance / (z_out.variance + sv2)
    mean = z_out.mean + gain * (y - z_out.mean)
    variance = (1 - gain) * z_out.variance
    return GaussianVector(mean, variance)


def _innovation_ratios(cache: LayerCache, post_mean, post_var):
    denom = np.maximum(cache.z_var, cache.z_var.dtype.type(VARIANCE_TINY))
    r_mu = (post_mean - cache.z_mean) / denom
    r_var = (post_var - cache.z_var) / (denom * denom)
    return r_mu, r_var


def smooth_layer(stage: Stage, params: LayerParams | None, cache: LayerCache,
                 posterior: GaussianVector,
                 below: LayerCache | None) -> tuple[GaussianVector | None, ParamDeltas | None]:
    """One step of the backward sweep through a single stage.

    Given this stage's state posterior, produce (a) the posterior of the
    states feeding it (``None`` when ``below`` is ``None``) and (b) the
    additive deltas for this stage's parameters (``None`` for layers without
    parameters). Batched and single-vector moments both work.
    """
    squeeze = posterior.mean.ndim == 1
    post_m = posterior.mean[None, :] if squeeze else posterior.mean
    post_v = posterior.variance[None, :] if squeeze else posterior.variance
    r_mu, r_var = _innovation_ratios(cache, post_m, post_v)
    u_mu, u_var, deltas = stage.backward(params, cache, r_mu, r_var,
                                         want_input_delta=below is not None)
    if below is None:
        return None, deltas
    s = below.jac * below.z_var
    mean = below.z_mean + s * u_mu
    variance = np.maximum(below.z_var + s * s * u_var,
                          below.z_var.dtype.type(VARIANCE_FLOOR))
    if squeeze:
        return GaussianVector(mean[0], variance[0]), deltas
    return GaussianVector(mean, variance), deltas


def backward_sweep(stages: list[Stage], params: "ParameterStore",
                   caches: list[LayerCache], post_mean, post_var,
                   update_params: bool = True, want_bottom: bool = False):
    """Run the layer-wise conditional update from the top stage to the bottom.

    ``post_mean/post_var`` are the posterior moments of the LAST stage's
    states. Returns ``(deltas_list, bottom_innovation, clamp_count)`` where
    ``bottom_innovation`` is the (U_mu, U_var) pair over the network's input
    units (``None`` unless ``want_bottom``) for chaining across networks.
    """
    n = len(stages)
    deltas_list: list[ParamDeltas | None] = [None] * n
    clamp_count = 0
    bottom = None
    for i in range(n - 1, -1, -1):
        cache = caches[i]
        r_mu, r_var = _innovation_ratios(cache, post_mean, post_var)
        want_input = i > 0 or want_bottom
        u_mu, u_var, deltas = stages[i].backward(params[i], cache, r_mu, r_var,
                                                 want_input_delta=want_input)
        if update_params:
            deltas_list[i] = deltas
        if i > 0:
            below = caches[i - 1]
            s = below.jac * below.z_var
            post_mean = below.z_mean + s * u_mu
            post_var = below.z_var + s * s * u_var
            floor = post_var.dtype.type(VARIANCE_FLOOR)
            low_count = int(np.count_nonzero(post_var < floor))
            if low_count:
                post_var = np.maximum(post_var, floor)
                clamp_count += low_count
        elif want_bottom:
            bottom = (u_mu, u_var)
    return deltas_list, bottom, clamp_count


def infer_minibatch(net, params: ParameterStore, x: np.ndarray, y: np.ndarray,
                    obs: ObservationModel, trace=None) -> InferenceStats:
    """Condition the network on one mini-batch and update ``params`` in place.

    Deltas for all batch elements are computed against the same pre-batch
    store, summed, and applied once. ``trace`` may pass in an existing forward
    trace; otherwise the forward pass runs here.
    """
    if trace is None:
        trace = net.forward_batch(params, x)
    if trace.consumed:
        raise SequencingError("forward trace already consumed by an inference sweep")
    trace.consumed = True
    z_out = trace.output
    if not (np.all(np.isfinite(z_out.mean)) and np.all(np.isfinite(z_out.variance))):
        raise NumericError("non-finite output moments before inference")
    post = output_update(z_out, y, obs)
    deltas, _, clamp = backward_sweep(net.stages, params, trace.caches,
                                      post.mean, post.variance)
    applied_clamp, mean_abs = params.apply_deltas([deltas])
    return InferenceStats(clamp_count=clamp + applied_clamp,
                          mean_abs_delta=mean_abs)
