"""Adversarial training without gradients.

The discriminator step conditions the D trunk and its P (real/fake) and Q
(latent recovery) heads on labels for a real batch and a generated batch; the
generator step forces "real" at the P output and the drawn latent codes at
the Q output, sweeps the innovation backward through the frozen heads and
trunk, crosses the fake-image interface, and updates only the generator.
Freeze contracts are structural: deltas are simply never applied to the
frozen stores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .gaussian import GaussianVector
from .inference import (
    InferenceStats,
    ObservationModel,
    ParameterStore,
    backward_sweep,
    decay_noise,
    output_update,
)
from .network import Network, NetworkConfig, build, preset
from .harness.data import Preprocessing


@dataclass(frozen=True)
class LatentSpec:
    """Latent input layout: Gaussian noise, categorical one-hots, continuous
    codes, plus constant-one padding to match the declared input width."""

    noise_dim: int
    n_categorical: int
    n_classes: int
    n_continuous: int
    pad: int = 0

    @property
    def input_dim(self) -> int:
        return (self.noise_dim + self.n_categorical * self.n_classes
                + self.n_continuous + self.pad)

    @property
    def q_dim(self) -> int:
        return self.n_categorical * self.n_classes + self.n_continuous


MNIST_LATENT = LatentSpec(noise_dim=62, n_categorical=1, n_classes=10,
                          n_continuous=2, pad=1)
CELEBA_LATENT = LatentSpec(noise_dim=128, n_categorical=10, n_classes=10,
                           n_continuous=0, pad=10)
_LATENTS = {"mnist": MNIST_LATENT, "celeba": CELEBA_LATENT}


@dataclass
class LatentCode:
    """One batch of latent draws."""

    noise: np.ndarray        # (B, noise_dim)
    x_d: np.ndarray          # (B, n_categorical) ints
    x_c: np.ndarray          # (B, n_continuous)

    def to_input(self, spec: LatentSpec) -> np.ndarray:
        b = self.noise.shape[0]
        parts = [self.noise]
        for j in range(spec.n_categorical):
            onehot = np.zeros((b, spec.n_classes))
            onehot[np.arange(b), self.x_d[:, j]] = 1.0
            parts.append(onehot)
        if spec.n_continuous:
            parts.append(self.x_c)
        if spec.pad:
            parts.append(np.ones((b, spec.pad)))
        return np.concatenate(parts, axis=1)

    def q_targets(self, spec: LatentSpec) -> np.ndarray:
        """Observation vector for the latent-recovery head: categorical
        one-hots followed by the continuous codes."""
        return self.to_input(spec)[:, self.noise.shape[1]:
                                   self.noise.shape[1] + spec.q_dim]


def sample_latent(spec: LatentSpec | str, rng: np.random.Generator,
                  batch: int = 1) -> LatentCode:
    """Draw noise ~ N(0,1), categories uniformly, continuous codes ~ U(-1,1)."""
    if isinstance(spec, str):
        spec = _LATENTS[spec]
    return LatentCode(
        noise=rng.standard_normal((batch, spec.noise_dim)),
        x_d=rng.integers(0, spec.n_classes, size=(batch, spec.n_categorical)),
        x_c=rng.uniform(-1.0, 1.0, size=(batch, spec.n_continuous)),
    )


@dataclass
class GanBundle:
    """Generator + discriminator trunk and heads with their stores."""

    gnet: Network
    dnet: Network
    pnet: Network
    g_params: ParameterStore
    d_params: ParameterStore
    p_params: ParameterStore
    latent: LatentSpec
    obs_p: ObservationModel
    obs_q: ObservationModel | None = None
    qnet: Network | None = None
    q_params: ParameterStore | None = None
    preprocessing: Preprocessing | None = None

    def configs(self) -> dict[str, NetworkConfig]:
        out = {"gnet": self.gnet.config, "dnet": self.dnet.config,
               "pnet": self.pnet.config}
        if self.qnet is not None:
            out["qnet"] = self.qnet.config
        return out

    def stores(self) -> dict[str, ParameterStore]:
        out = {"gnet": self.g_params, "dnet": self.d_params,
               "pnet": self.p_params}
        if self.q_params is not None:
            out["qnet"] = self.q_params
        return out

    def decay(self) -> None:
        self.obs_p = decay_noise(self.obs_p)
        if self.obs_q is not None:
            self.obs_q = decay_noise(self.obs_q)


def build_infogan(dataset: str, seed: int, sigma_v0_p: float,
                  sigma_v0_q: float, eta: float = 0.975,
                  dtype=np.float32) -> GanBundle:
    """Assemble the four preset networks for one dataset family."""
    if dataset not in _LATENTS:
        raise ConfigError(f"no infogan preset family for {dataset!r}")
    gnet, g_params = build(preset(f"{dataset}-infogan-gnet"), seed, dtype)
    dnet, d_params = build(preset(f"{dataset}-infogan-dnet"), seed + 1, dtype)
    pnet, p_params = build(preset(f"{dataset}-infogan-pnet"), seed + 2, dtype)
    qnet, q_params = build(preset(f"{dataset}-infogan-qnet"), seed + 3, dtype)
    return GanBundle(
        gnet=gnet, dnet=dnet, pnet=pnet,
        g_params=g_params, d_params=d_params, p_params=p_params,
        latent=_LATENTS[dataset],
        obs_p=ObservationModel(sigma_v0_p, eta),
        obs_q=ObservationModel(sigma_v0_q, eta),
        qnet=qnet, q_params=q_params,
    )


def _fuse_top(trace, innovations):
    """Additive fusion of head innovations at the trunk's top states."""
    top = trace.caches[-1]
    s = top.jac * top.z_var
    u_mu = sum(i[0] for i in innovations)
    u_var = sum(i[1] for i in innovations)
    post_mean = top.z_mean + s * u_mu
    post_var = np.maximum(top.z_var + s * s * u_var,
                          top.z_var.dtype.type(1e-12))
    return post_mean, post_var


def _head_sweep(net: Network, params: ParameterStore, trunk_out, y, obs,
                update_params: bool):
    """Forward a head on the trunk output, observe, sweep back to its input."""
    trace = net.forward_moments(params, trunk_out.a_mean, trunk_out.a_var)
    post = output_update(trace.output, y, obs)
    deltas, bottom, clamp = backward_sweep(
        net.stages, params, trace.caches, post.mean, post.variance,
        update_params=update_params, want_bottom=True)
    return deltas, bottom, clamp


def _discriminate(bundle: GanBundle, images_mean, images_var, p_targets,
                  codes: LatentCode | None, update_params: bool,
                  want_image_delta: bool = False):
    """Shared D/P/Q pass: forward, observe, sweep the trunk.

    Returns (per-net deltas dict, image-interface innovation, clamp count).
    """
    d_trace = bundle.dnet.forward_moments(bundle.d_params, images_mean, images_var)
    top = d_trace.caches[-1]
    heads = []
    p_deltas, bottom_p, clamp = _head_sweep(
        bundle.pnet, bundle.p_params, top, p_targets, bundle.obs_p,
        update_params)
    heads.append(bottom_p)
    q_deltas = None
    if codes is not None and bundle.qnet is not None:
        q_deltas, bottom_q, c_q = _head_sweep(
            bundle.qnet, bundle.q_params, top,
            codes.q_targets(bundle.latent).astype(images_mean.dtype),
            bundle.obs_q, update_params)
        heads.append(bottom_q)
        clamp += c_q
    post_mean, post_var = _fuse_top(d_trace, heads)
    d_deltas, image_u, c_d = backward_sweep(
        bundle.dnet.stages, bundle.d_params, d_trace.caches,
        post_mean, post_var, update_params=update_params,
        want_bottom=want_image_delta)
    clamp += c_d
    deltas = {"dnet": d_deltas if update_params else None,
              "pnet": p_deltas if update_params else None,
              "qnet": q_deltas if update_params else None}
    return deltas, image_u, clamp


def discriminator_step(bundle: GanBundle, real_batch: np.ndarray,
                       rng: np.random.Generator) -> InferenceStats:
    """Update D/P/Q on one real batch plus an equal-sized generated batch.

    Real images observe 1 at the P output; fakes observe 0 there and their
    latent codes at the Q output. The generator is never touched.
    """
    real_batch = np.asarray(real_batch)
    if real_batch.ndim > 2:
        real_batch = real_batch.reshape(real_batch.shape[0], -1)
    b = real_batch.shape[0]
    if b == 0:
        raise ValueError("empty real batch")
    dtype = real_batch.dtype
    codes = sample_latent(bundle.latent, rng, b)
    fake = bundle.gnet.predict(bundle.g_params,
                               codes.to_input(bundle.latent).astype(dtype))
    ones = np.ones((b, 1), dtype=dtype)
    zeros = np.zeros((b, 1), dtype=dtype)
    fake_deltas, _, c1 = _discriminate(bundle, fake.mean, fake.variance,
                                       zeros, codes, update_params=True)
    real_var = np.zeros_like(real_batch)
    real_deltas, _, c2 = _discriminate(bundle, real_batch, real_var,
                                       ones, None, update_params=True)
    clamp = c1 + c2
    c, ad = bundle.d_params.apply_deltas(
        [fake_deltas["dnet"], real_deltas["dnet"]])
    clamp += c
    c, _ = bundle.p_params.apply_deltas(
        [fake_deltas["pnet"], real_deltas["pnet"]])
    clamp += c
    if bundle.q_params is not None and fake_deltas["qnet"] is not None:
        c, _ = bundle.q_params.apply_deltas([fake_deltas["qnet"]])
        clamp += c
    return InferenceStats(clamp_count=clamp, mean_abs_delta=ad)


def generator_step(bundle: GanBundle, rng: np.random.Generator,
                   batch: int = 16) -> InferenceStats:
    """Update the generator through the frozen discriminator.

    The fake batch is forced to be classified "real" (and to reproduce its
    latent codes at the Q output); the sweep crosses the fake-image interface
    and applies deltas inside the generator only.
    """
    codes = sample_latent(bundle.latent, rng, batch)
    g_input = codes.to_input(bundle.latent)
    g_trace = bundle.gnet.forward_batch(bundle.g_params, g_input)
    out = g_trace.output
    ones = np.ones((batch, 1), dtype=out.mean.dtype)
    _, image_u, c1 = _discriminate(bundle, out.mean, out.variance, ones,
                                   codes, update_params=False,
                                   want_image_delta=True)
    # cross the image interface: the fake pixels are the generator's output
    # states (identity activation on its output row)
    top = g_trace.caches[-1]
    s = top.jac * top.z_var
    post_mean = top.z_mean + s * image_u[0]
    post_var = np.maximum(top.z_var + s * s * image_u[1],
                          top.z_var.dtype.type(1e-12))
    g_deltas, _, c2 = backward_sweep(bundle.gnet.stages, bundle.g_params,
                                     g_trace.caches, post_mean, post_var)
    c3, ad = bundle.g_params.apply_deltas([g_deltas])
    return InferenceStats(clamp_count=c1 + c2 + c3, mean_abs_delta=ad)


def gan_train(bundle: GanBundle, real_x: np.ndarray, epochs: int, batch: int,
              rng: np.random.Generator, log=None) -> list[dict]:
    """Alternate one discriminator and one generator step per mini-batch."""
    real_x = real_x.reshape(len(real_x), -1)
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(real_x))
        clamp = 0
        n_batches = len(order) // batch
        for i in range(n_batches):
            idx = order[i * batch:(i + 1) * batch]
            stats_d = discriminator_step(bundle, real_x[idx], rng)
            stats_g = generator_step(bundle, rng, batch)
            clamp += stats_d.clamp_count + stats_g.clamp_count
        bundle.decay()
        rec = {"epoch": epoch, "sigma_v_p": bundle.obs_p.sigma_v,
               "clamp_count": clamp}
        history.append(rec)
        if log:
            log(f"epoch {epoch}\tsigma_v_p {bundle.obs_p.sigma_v:.4f}"
                f"\tclamp {clamp}")
    return history


def generate_grid(bundle: GanBundle, codes: LatentCode) -> np.ndarray:
    """Deterministic generator means for a list of codes, de-normalized to
    pixel range [0, 1], shaped (N, D, H, W)."""
    out = bundle.gnet.predict(bundle.g_params, codes.to_input(bundle.latent))
    shape = bundle.gnet.config.layers[-1].out_shape
    imgs = out.mean.reshape(-1, *shape).astype(np.float64)
    if bundle.preprocessing is not None:
        imgs = bundle.preprocessing.invert(imgs)
    return np.clip(imgs, 0.0, 1.0)


def build_toy_gan(seed: int, noise_dim: int = 8, hidden: int = 32,
                  sigma_v: float = 1.0, eta: float = 1.0,
                  dtype=np.float64) -> GanBundle:
    """Small dense GAN for 2-D toy distributions (no latent-recovery head)."""
    from .network import parse_config

    g_cfg = parse_config(f"""
input  {noise_dim}x1x1
fc     {hidden}x1x1 - - - relu
fc     {hidden}x1x1 - - - relu
output 2x1x1 - - - -
""", name="toy-gnet", output_kind="generator")
    d_cfg = parse_config(f"""
input  2x1x1
fc     {hidden}x1x1 - - - lrelu
output {hidden}x1x1 - - - lrelu
""", name="toy-dnet", output_kind="discriminator")
    p_cfg = parse_config(f"""
input  {hidden}x1x1
output 1x1x1 - - - -
""", name="toy-pnet", output_kind="latent_head")
    gnet, g_params = build(g_cfg, seed, dtype)
    dnet, d_params = build(d_cfg, seed + 1, dtype)
    pnet, p_params = build(p_cfg, seed + 2, dtype)
    return GanBundle(
        gnet=gnet, dnet=dnet, pnet=pnet,
        g_params=g_params, d_params=d_params, p_params=p_params,
        latent=LatentSpec(noise_dim, 0, 0, 0, 0),
        obs_p=ObservationModel(sigma_v, eta),
    )
