"""Forward moment propagation and backward cross-covariances per layer type.

Every linear layer (dense, convolution, transposed convolution, average
pooling) is compiled once into an explicit index map: for each output unit, a
gather list of contributing input units, plus the transposed map (for each
input unit, the output-side slots it feeds). One connectivity representation
serves the forward moment pass, the backward inference sweep, and the tests.

Normalization (layer or batch mode) rescales a stage's input activations and
is folded into that stage: the stage caches the mixture statistics and its
backward pass applies the matching 1/sigma scaling to the cross-covariances.

Batched moments are stored as ``(batch, units)`` arrays; unit order is the
C-order flattening of ``(depth, height, width)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .gaussian import (
    NORM_EPSILON,
    Activation,
    GaussianVector,
    IDENTITY,
    MixtureStats,
    mixture_moments,
)

Shape3 = tuple[int, int, int]

#: Floor used when dividing by prior variances in the inference sweep.
VARIANCE_TINY = 1e-12


class LayerKind(enum.Enum):
    FULLY_CONNECTED = "fc"
    CONV2D = "conv"
    TRANSPOSED_CONV2D = "tconv"
    AVG_POOL = "pool"
    LAYER_NORM = "layer_norm"
    BATCH_NORM = "batch_norm"
    OUTPUT = "output"


_WEIGHTED = (LayerKind.FULLY_CONNECTED, LayerKind.CONV2D,
             LayerKind.TRANSPOSED_CONV2D, LayerKind.OUTPUT)
_NORMS = (LayerKind.LAYER_NORM, LayerKind.BATCH_NORM)


@dataclass
class LayerSpec:
    """One row of a network description.

    ``out_shape`` is the functional shape used for computation. When an
    architecture table documents a different value (a known inconsistency),
    the verbatim row is kept in ``table_shape`` and the functional one here.
    """

    kind: LayerKind | str
    out_shape: Shape3
    kernel: int = 0
    padding: int = 0
    stride: int = 1
    activation: Activation = IDENTITY
    in_shape: Shape3 | None = None
    table_shape: Shape3 | None = None
    is_output: bool = False

    @property
    def size(self) -> int:
        d, h, w = self.out_shape
        return d * h * w


def flat_size(shape: Shape3) -> int:
    return shape[0] * shape[1] * shape[2]


def conv_output_size(in_size: int, kernel: int, padding: int, stride: int) -> int:
    return (in_size + 2 * padding - kernel) // stride + 1


def tconv_output_padding(in_size: int, out_size: int, kernel: int,
                         padding: int, stride: int) -> int:
    """Extra bottom/right zeros a transposed convolution needs to reach
    ``out_size``; derived from the declared shapes rather than configured."""
    op = out_size - ((in_size - 1) * stride - 2 * padding + kernel)
    if op < 0 or op >= max(stride, 1):
        raise ConfigError(
            f"transposed conv cannot map {in_size} -> {out_size} "
            f"with K={kernel} P={padding} S={stride}"
        )
    return op


# ---------------------------------------------------------------------------
# Index maps


@dataclass
class IndexMap:
    """Gather/scatter connectivity of one linear layer.

    ``col_idx[p, w]`` is the flat input unit feeding window slot ``w`` of
    output position ``p`` (``n_in`` marks a zero pad). ``scatter_idx[i, f]``
    lists the flat ``p * window + w`` slots fed by input unit ``i`` (padded
    with ``n_pos * window``).
    """

    col_idx: np.ndarray
    scatter_idx: np.ndarray
    n_in: int
    n_pos: int
    window: int


def _invert_col_idx(col_idx: np.ndarray, n_in: int) -> np.ndarray:
    flat = col_idx.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_targets = flat[order]
    valid = order[sorted_targets < n_in]
    counts = np.bincount(flat[flat < n_in], minlength=n_in)
    max_fan = int(counts.max()) if counts.size else 0
    scatter = np.full((n_in, max(max_fan, 1)), flat.size, dtype=np.int64)
    if valid.size:
        starts = np.cumsum(counts) - counts
        ranks = np.arange(valid.size) - np.repeat(starts, counts)
        rows = np.repeat(np.arange(n_in), counts)
        scatter[rows, ranks] = valid
    return scatter


def conv_index_map(in_shape: Shape3, kernel: int, padding: int, stride: int) -> IndexMap:
    """Sliding-window gather map: window slots ordered (channel, ky, kx)."""
    in_d, in_h, in_w = in_shape
    out_h = conv_output_size(in_h, kernel, padding, stride)
    out_w = conv_output_size(in_w, kernel, padding, stride)
    if out_h <= 0 or out_w <= 0:
        raise ConfigError(f"convolution collapses {in_shape} to {out_h}x{out_w}")
    n_in = in_d * in_h * in_w
    iy = np.arange(out_h)[:, None] * stride + np.arange(kernel) - padding  # (oh,k)
    ix = np.arange(out_w)[:, None] * stride + np.arange(kernel) - padding  # (ow,k)
    vy, vx = (iy >= 0) & (iy < in_h), (ix >= 0) & (ix < in_w)
    c = np.arange(in_d)
    idx = (
        c[None, None, :, None, None] * (in_h * in_w)
        + iy[:, None, None, :, None] * in_w
        + ix[None, :, None, None, :]
    )
    valid = vy[:, None, None, :, None] & vx[None, :, None, None, :]
    idx = np.where(valid, idx, n_in)
    col = idx.reshape(out_h * out_w, in_d * kernel * kernel).astype(np.int64)
    return IndexMap(col, _invert_col_idx(col, n_in), n_in,
                    out_h * out_w, in_d * kernel * kernel)


def tconv_index_map(in_shape: Shape3, out_hw: tuple[int, int], kernel: int,
                    padding: int, stride: int) -> IndexMap:
    """Transposed-convolution gather map built on the zero-dilated input grid.

    Window slots are ordered (channel, ky, kx) in the *scatter* orientation:
    weight (ky, kx) contributes input pixel (y, x) to output
    ``(y*S - P + ky, x*S - P + kx)``, so a naive scatter loop with the same
    weight array reproduces this map exactly.
    """
    in_d, in_h, in_w = in_shape
    out_h, out_w = out_hw
    op_h = tconv_output_padding(in_h, out_h, kernel, padding, stride)
    op_w = tconv_output_padding(in_w, out_w, kernel, padding, stride)
    pad_eff = kernel - 1 - padding
    if pad_eff < 0:
        raise ConfigError("transposed conv padding exceeds kernel-1")
    n_in = in_d * in_h * in_w

    def real_index(virtual: np.ndarray, size: int) -> np.ndarray:
        shifted = virtual - pad_eff
        real = shifted // stride
        ok = (shifted >= 0) & (shifted % stride == 0) & (real < size)
        return np.where(ok, real, -1)

    # virtual rows gathered by output oy at kernel offset j; slot ky = K-1-j
    vy = np.arange(out_h)[:, None] + np.arange(kernel)  # (oh, j)
    vx = np.arange(out_w)[:, None] + np.arange(kernel)
    ry, rx = real_index(vy, in_h), real_index(vx, in_w)
    c = np.arange(in_d)
    idx = (
        c[None, None, :, None, None] * (in_h * in_w)
        + ry[:, None, None, :, None] * in_w
        + rx[None, :, None, None, :]
    )
    valid = (ry >= 0)[:, None, None, :, None] & (rx >= 0)[None, :, None, None, :]
    idx = np.where(valid, idx, n_in)
    # flip kernel offsets so slot order matches the scatter orientation
    idx = idx[:, :, :, ::-1, ::-1]
    col = idx.reshape(out_h * out_w, in_d * kernel * kernel).astype(np.int64)
    del op_h, op_w  # shape feasibility already enforced above
    return IndexMap(col, _invert_col_idx(col, n_in), n_in,
                    out_h * out_w, in_d * kernel * kernel)


def pool_index_map(in_shape: Shape3, kernel: int, padding: int, stride: int) -> IndexMap:
    """Per-channel pooling windows; output order (channel, oy, ox)."""
    in_d, in_h, in_w = in_shape
    spatial = conv_index_map((1, in_h, in_w), kernel, padding, stride)
    hw = in_h * in_w
    n_in = in_d * hw
    blocks = []
    for c in range(in_d):
        block = spatial.col_idx + c * hw
        block[spatial.col_idx == hw] = n_in
        blocks.append(block)
    col = np.concatenate(blocks, axis=0)
    return IndexMap(col, _invert_col_idx(col, n_in), n_in,
                    in_d * spatial.n_pos, kernel * kernel)


# ---------------------------------------------------------------------------
# Caches and parameters


@dataclass
class LayerParams:
    """Gaussian moments of one layer's weights and biases."""

    w_mean: np.ndarray
    w_var: np.ndarray
    b_mean: np.ndarray
    b_var: np.ndarray

    def copy(self) -> "LayerParams":
        return LayerParams(self.w_mean.copy(), self.w_var.copy(),
                           self.b_mean.copy(), self.b_var.copy())

    @property
    def count(self) -> int:
        return self.w_mean.size + self.b_mean.size

    def weights(self) -> GaussianVector:
        return GaussianVector(self.w_mean, self.w_var)

    def biases(self) -> GaussianVector:
        return GaussianVector(self.b_mean, self.b_var)


@dataclass
class ParamDeltas:
    """Accumulated additive updates for one layer's parameter moments."""

    w_mean: np.ndarray
    w_var: np.ndarray
    b_mean: np.ndarray
    b_var: np.ndarray


@dataclass
class LayerCache:
    """Per-stage forward record consumed by the backward inference sweep."""

    z_mean: np.ndarray            # (B, n_out) pre-activation prior
    z_var: np.ndarray
    jac: np.ndarray               # (B, n_out) activation Jacobian diagonal
    a_mean: np.ndarray            # (B, n_out) post-activation
    a_var: np.ndarray
    in_mean: np.ndarray | None    # (B, n_in) effective (post-norm) input means
    norm_mu: np.ndarray | None = None     # stats of the input normalization
    norm_sigma: np.ndarray | None = None  # broadcastable to (B, n_in)


@dataclass
class CrossCov:
    """Covariances between one layer's output states and what feeds them.

    Dense layout: ``dz[k, i] = cov(Z_i, Z+_k)``, ``dw[k, i] = cov(W_ki, Z+_k)``
    (zero against every other output by connectivity), ``db[k] = cov(B_k, Z+_k)``.
    """

    dz: np.ndarray
    dw: np.ndarray
    db: np.ndarray


# ---------------------------------------------------------------------------
# Normalization kernels


def _norm_layer_batch(a_mean, a_var, identity=False):
    """Layer-mode normalization of a (B, n) batch; stats per element."""
    if identity:
        b = a_mean.shape[0]
        ones = np.ones((b, 1), dtype=a_mean.dtype)
        return a_mean, a_var, np.zeros((b, 1), dtype=a_mean.dtype), ones
    mu, sigma = mixture_moments(a_mean, a_var, axis=-1)
    sigma = np.maximum(sigma, a_mean.dtype.type(NORM_EPSILON))
    return (a_mean - mu) / sigma, a_var / (sigma * sigma), mu, sigma


def _norm_batch_batch(a_mean, a_var, identity=False):
    """Batch-mode normalization of a (B, n) batch; stats per unit."""
    if identity:
        n = a_mean.shape[1]
        ones = np.ones((1, n), dtype=a_mean.dtype)
        return a_mean, a_var, np.zeros((1, n), dtype=a_mean.dtype), ones
    if a_mean.shape[0] < 2:
        raise ConfigError("batch normalization needs a batch of at least 2")
    mu, sigma = mixture_moments(a_mean.T, a_var.T, axis=-1)
    mu, sigma = mu.T, np.maximum(sigma.T, a_mean.dtype.type(NORM_EPSILON))
    return (a_mean - mu) / sigma, a_var / (sigma * sigma), mu, sigma


def layer_norm_forward(a: GaussianVector) -> tuple[GaussianVector, MixtureStats]:
    """Normalize one layer of activation units by their mixture statistics."""
    if len(a) == 0:
        raise ValueError("cannot normalize an empty layer")
    m, v, mu, sigma = _norm_layer_batch(a.mean[None, :], a.variance[None, :])
    return GaussianVector(m[0], v[0]), MixtureStats(float(mu[0, 0]), float(sigma[0, 0]))


def batch_norm_forward(a_batch: GaussianVector) -> tuple[GaussianVector, list[MixtureStats]]:
    """Normalize each hidden unit across a batch of observations.

    ``a_batch`` holds (B, n) moments; returns the normalized batch plus one
    MixtureStats per unit.
    """
    if a_batch.mean.ndim != 2:
        raise ValueError("batch_norm_forward expects (batch, units) moments")
    m, v, mu, sigma = _norm_batch_batch(a_batch.mean, a_batch.variance)
    stats = [MixtureStats(float(mu[0, i]), float(sigma[0, i]))
             for i in range(mu.shape[1])]
    return GaussianVector(m, v), stats


# ---------------------------------------------------------------------------
# Compiled stages

def _pad_cols(a: np.ndarray) -> np.ndarray:
    """Append a zero column so index ``n_in`` gathers zeros."""
    b = np.zeros((a.shape[0], a.shape[1] + 1), dtype=a.dtype)
    b[:, :-1] = a
    return b


class Stage:
    """A compiled state-bearing layer: linear map + activation + input norm."""

    def __init__(self, spec: LayerSpec, input_norm: str | None = None,
                 norm_identity: bool = False):
        self.spec = spec
        self.input_norm = input_norm      # None | 'layer' | 'batch'
        self.norm_identity = norm_identity
        self.n_in = flat_size(spec.in_shape)
        self.n_out = flat_size(spec.out_shape)
        self.has_params = spec.kind in _WEIGHTED

    # -- shared plumbing ----------------------------------------------------
    def _apply_input_norm(self, a_mean, a_var):
        if self.input_norm is None:
            return a_mean, a_var, None, None
        if self.input_norm == "layer":
            m, v, mu, sigma = _norm_layer_batch(a_mean, a_var, self.norm_identity)
        else:
            m, v, mu, sigma = _norm_batch_batch(a_mean, a_var, self.norm_identity)
        return m, v, mu, sigma

    def _activate(self, z_mean, z_var):
        val, jac = self.spec.activation.value_and_jacobian(z_mean)
        return val, jac * jac * z_var, jac

    def _norm_scale(self, cache: LayerCache):
        return cache.norm_sigma if cache.norm_sigma is not None else None

    # -- interface ----------------------------------------------------------
    def init_fan_in(self) -> int:
        raise NotImplementedError

    def param_shapes(self):
        raise NotImplementedError

    def forward(self, params: LayerParams | None, a_mean, a_var) -> LayerCache:
        raise NotImplementedError

    def backward(self, params: LayerParams | None, cache: LayerCache,
                 r_mu, r_var, want_input_delta=True):
        """Return (U_mu, U_var, deltas).

        ``U_mu/U_var`` are per-input-unit innovation sums; the sweep turns
        them into state updates below by scaling with the producing stage's
        ``jac * z_var`` (and its square).
        """
        raise NotImplementedError


class DenseStage(Stage):
    """Fully-connected layer; weights (n_out, n_in), bias (n_out,)."""

    def init_fan_in(self) -> int:
        return self.n_in

    def param_shapes(self):
        return (self.n_out, self.n_in), (self.n_out,)

    def forward(self, params, a_mean, a_var):
        m, v, mu, sigma = self._apply_input_norm(a_mean, a_var)
        mw, vw = params.w_mean, params.w_var
        z_mean = m @ mw.T + params.b_mean
        z_var = v @ (vw + mw * mw).T + (m * m) @ vw.T + params.b_var
        a_out, a_out_var, jac = self._activate(z_mean, z_var)
        return LayerCache(z_mean, z_var, jac, a_out, a_out_var, m, mu, sigma)

    def backward(self, params, cache, r_mu, r_var, want_input_delta=True):
        mw, vw = params.w_mean, params.w_var
        m_in = cache.in_mean
        deltas = ParamDeltas(
            w_mean=vw * (r_mu.T @ m_in),
            w_var=(vw * vw) * (r_var.T @ (m_in * m_in)),
            b_mean=params.b_var * r_mu.sum(axis=0),
            b_var=(params.b_var ** 2) * r_var.sum(axis=0),
        )
        if not want_input_delta:
            return None, None, deltas
        u_mu = r_mu @ mw
        u_var = r_var @ (mw * mw)
        sigma = self._norm_scale(cache)
        if sigma is not None:
            u_mu = u_mu / sigma
            u_var = u_var / (sigma * sigma)
        return u_mu, u_var, deltas


class WindowStage(Stage):
    """Convolution or transposed convolution over an index map.

    Weights are shared across positions: shape (out_channels, window) with
    window slots ordered (in_channel, ky, kx); bias is per output channel.
    """

    def __init__(self, spec, input_norm=None, norm_identity=False):
        super().__init__(spec, input_norm, norm_identity)
        if spec.kind is LayerKind.CONV2D:
            self.imap = conv_index_map(spec.in_shape, spec.kernel,
                                       spec.padding, spec.stride)
        else:
            self.imap = tconv_index_map(spec.in_shape, spec.out_shape[1:],
                                        spec.kernel, spec.padding, spec.stride)
        self.channels = spec.out_shape[0]
        expect = self.channels * self.imap.n_pos
        if expect != self.n_out:
            raise ConfigError(
                f"{spec.kind.value} arithmetic yields {self.imap.n_pos} positions "
                f"x {self.channels} channels != declared {spec.out_shape}"
            )

    def init_fan_in(self) -> int:
        return self.imap.window

    def param_shapes(self):
        return (self.channels, self.imap.window), (self.channels,)

    def _gather(self, arr):
        return _pad_cols(arr)[:, self.imap.col_idx]  # (B, n_pos, window)

    def forward(self, params, a_mean, a_var):
        m, v, mu, sigma = self._apply_input_norm(a_mean, a_var)
        imap, c = self.imap, self.channels
        b = m.shape[0]
        mc = self._gather(m).reshape(b * imap.n_pos, imap.window)
        vc = self._gather(v).reshape(b * imap.n_pos, imap.window)
        mw, vw = params.w_mean, params.w_var
        z_mean = mc @ mw.T                      # (B*P, C)
        z_var = vc @ (vw + mw * mw).T + (mc * mc) @ vw.T
        z_mean = z_mean.reshape(b, imap.n_pos, c).transpose(0, 2, 1).reshape(b, -1)
        z_var = z_var.reshape(b, imap.n_pos, c).transpose(0, 2, 1).reshape(b, -1)
        z_mean += np.repeat(params.b_mean, imap.n_pos)[None, :]
        z_var += np.repeat(params.b_var, imap.n_pos)[None, :]
        a_out, a_out_var, jac = self._activate(z_mean, z_var)
        return LayerCache(z_mean, z_var, jac, a_out, a_out_var, m, mu, sigma)

    def backward(self, params, cache, r_mu, r_var, want_input_delta=True):
        imap, c = self.imap, self.channels
        b = r_mu.shape[0]
        # (B, C, P) -> (B*P, C)
        rm = r_mu.reshape(b, c, imap.n_pos).transpose(0, 2, 1).reshape(-1, c)
        rv = r_var.reshape(b, c, imap.n_pos).transpose(0, 2, 1).reshape(-1, c)
        mc = self._gather(cache.in_mean).reshape(b * imap.n_pos, imap.window)
        mw, vw = params.w_mean, params.w_var
        deltas = ParamDeltas(
            w_mean=vw * (rm.T @ mc),
            w_var=(vw * vw) * (rv.T @ (mc * mc)),
            b_mean=params.b_var * rm.sum(axis=0),
            b_var=(params.b_var ** 2) * rv.sum(axis=0),
        )
        if not want_input_delta:
            return None, None, deltas
        t_mu = (rm @ mw).reshape(b, -1)         # (B, P*window)
        t_var = (rv @ (mw * mw)).reshape(b, -1)
        u_mu = _pad_cols(t_mu)[:, self.imap.scatter_idx].sum(axis=-1)
        u_var = _pad_cols(t_var)[:, self.imap.scatter_idx].sum(axis=-1)
        sigma = self._norm_scale(cache)
        if sigma is not None:
            u_mu = u_mu / sigma
            u_var = u_var / (sigma * sigma)
        return u_mu, u_var, deltas


class PoolStage(Stage):
    """Average pooling: fixed coefficients 1/K^2 over each window."""

    def __init__(self, spec, input_norm=None, norm_identity=False):
        super().__init__(spec, input_norm, norm_identity)
        self.imap = pool_index_map(spec.in_shape, spec.kernel,
                                   spec.padding, spec.stride)
        if self.imap.n_pos != self.n_out:
            raise ConfigError(
                f"pool arithmetic yields {self.imap.n_pos} units "
                f"!= declared {spec.out_shape}"
            )

    def init_fan_in(self) -> int:
        return self.imap.window

    def param_shapes(self):
        return None

    def forward(self, params, a_mean, a_var):
        m, v, mu, sigma = self._apply_input_norm(a_mean, a_var)
        k2 = self.imap.window
        coeff = m.dtype.type(1.0 / k2)
        mc = _pad_cols(m)[:, self.imap.col_idx]
        vc = _pad_cols(v)[:, self.imap.col_idx]
        z_mean = mc.sum(axis=-1) * coeff
        z_var = vc.sum(axis=-1) * (coeff * coeff)
        a_out, a_out_var, jac = self._activate(z_mean, z_var)
        return LayerCache(z_mean, z_var, jac, a_out, a_out_var, None, mu, sigma)

    def backward(self, params, cache, r_mu, r_var, want_input_delta=True):
        if not want_input_delta:
            return None, None, None
        k2 = self.imap.window
        coeff = r_mu.dtype.type(1.0 / k2)
        t_mu = np.repeat(r_mu * coeff, k2, axis=1)
        t_var = np.repeat(r_var * (coeff * coeff), k2, axis=1)
        u_mu = _pad_cols(t_mu)[:, self.imap.scatter_idx].sum(axis=-1)
        u_var = _pad_cols(t_var)[:, self.imap.scatter_idx].sum(axis=-1)
        sigma = self._norm_scale(cache)
        if sigma is not None:
            u_mu = u_mu / sigma
            u_var = u_var / (sigma * sigma)
        return u_mu, u_var, None


def make_stage(spec: LayerSpec, input_norm: str | None = None,
               norm_identity: bool = False) -> Stage:
    if spec.kind in (LayerKind.FULLY_CONNECTED, LayerKind.OUTPUT):
        return DenseStage(spec, input_norm, norm_identity)
    if spec.kind in (LayerKind.CONV2D, LayerKind.TRANSPOSED_CONV2D):
        return WindowStage(spec, input_norm, norm_identity)
    if spec.kind is LayerKind.AVG_POOL:
        return PoolStage(spec, input_norm, norm_identity)
    raise ConfigError(f"{spec.kind} is not a state-bearing layer")


# ---------------------------------------------------------------------------
# Contract-level forward operations on GaussianVector


def _as_batch(a: GaussianVector):
    if a.mean.ndim == 1:
        return a.mean[None, :], a.variance[None, :], True
    return a.mean, a.variance, False


def _run_forward(stage: Stage, a_in: GaussianVector, params: LayerParams | None):
    m, v, squeeze = _as_batch(a_in)
    cache = stage.forward(params, m, v)
    if squeeze:
        return GaussianVector(cache.z_mean[0], cache.z_var[0])
    return GaussianVector(cache.z_mean, cache.z_var)


def fc_forward(a_in: GaussianVector, w: GaussianVector, b: GaussianVector) -> GaussianVector:
    """Pre-activation moments of a dense layer with Gaussian weights."""
    n_out, n_in = w.mean.shape
    if a_in.mean.shape[-1] != n_in or b.mean.shape[-1] != n_out:
        raise ConfigError(
            f"fc shapes disagree: input {a_in.mean.shape[-1]}, "
            f"weights {w.mean.shape}, bias {b.mean.shape[-1]}"
        )
    spec = LayerSpec(LayerKind.FULLY_CONNECTED, (n_out, 1, 1), in_shape=(n_in, 1, 1))
    stage = DenseStage(spec)
    return _run_forward(stage, a_in, LayerParams(w.mean, w.variance, b.mean, b.variance))


def _window_op(a_in, w, b, spec):
    stage = WindowStage(spec)
    cw, win = stage.param_shapes()[0]
    if w.mean.shape != (cw, win):
        raise ConfigError(f"weights {w.mean.shape} != expected {(cw, win)}")
    if b.mean.shape != (cw,):
        raise ConfigError(f"bias {b.mean.shape} != expected {(cw,)}")
    if a_in.mean.shape[-1] != stage.n_in:
        raise ConfigError(f"input {a_in.mean.shape[-1]} != expected {stage.n_in}")
    return _run_forward(stage, a_in, LayerParams(w.mean, w.variance, b.mean, b.variance))


def conv_forward(a_in: GaussianVector, w: GaussianVector, b: GaussianVector,
                 spec: LayerSpec) -> GaussianVector:
    """Convolution moments: the dense rule applied over sliding windows with
    weights shared across positions."""
    if spec.kind is not LayerKind.CONV2D:
        raise ConfigError("conv_forward needs a CONV2D spec")
    return _window_op(a_in, w, b, spec)


def transposed_conv_forward(a_in: GaussianVector, w: GaussianVector,
                            b: GaussianVector, spec: LayerSpec) -> GaussianVector:
    """Transposed-convolution moments over the scatter connectivity."""
    if spec.kind is not LayerKind.TRANSPOSED_CONV2D:
        raise ConfigError("transposed_conv_forward needs a TRANSPOSED_CONV2D spec")
    return _window_op(a_in, w, b, spec)


def avg_pool_forward(a_in: GaussianVector, spec: LayerSpec) -> GaussianVector:
    """Average pooling: each output averages its kernel window."""
    if spec.kind is not LayerKind.AVG_POOL:
        raise ConfigError("avg_pool_forward needs an AVG_POOL spec")
    stage = PoolStage(spec)
    if a_in.mean.shape[-1] != stage.n_in:
        raise ConfigError(f"input {a_in.mean.shape[-1]} != expected {stage.n_in}")
    return _run_forward(stage, a_in, None)


def cross_cov_normalized(z_below: GaussianVector, jac_below: np.ndarray,
                         a_in: GaussianVector, w: GaussianVector,
                         b_var: np.ndarray,
                         norm: MixtureStats | None = None) -> CrossCov:
    """Cross-covariances of a dense layer whose input may be normalized.

    The layer computes ``Z+ = W (A - mu)/sigma + B`` where ``(mu, sigma)``
    are the input mixture statistics (``(0, 1)`` when ``norm`` is None,
    recovering the plain un-normalized covariances):

    - ``cov(Z_i, Z+_k) = mw[k,i] * jac_i * var(Z_i) / sigma``
    - ``cov(W_ki, Z+_k) = vw[k,i] * (mean(A_i) - mu) / sigma``
    - ``cov(B_k, Z+_k) = vb[k]``
    """
    mu = 0.0 if norm is None else norm.mu
    sigma = 1.0 if norm is None else max(norm.sigma, NORM_EPSILON)
    s = z_below.variance * np.asarray(jac_below) / sigma
    return CrossCov(
        dz=w.mean * s[None, :],
        dw=w.variance * ((a_in.mean - mu) / sigma)[None, :],
        db=np.asarray(b_var).copy(),
    )
