"""Trainable networks: dense and small conv layers, forward pass, gradients.

Weight conventions:
  dense              weights (out, in); forward is x @ w.T + b
  conv2d             weights (out_ch, in_ch, kh, kw); stride 1, no padding
  factorized_dense   FactorPair (out, r) x (r, in); forward never builds w
  factorized_conv2d  FactorPair over the kernel reshaped to
                     (out_ch) x (in_ch*kh*kw), plus the kernel geometry

A prune mask (bool, one bit per weight) multiplies the weights in the
forward pass and zeroes the matching gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import FactorPair

__all__ = [
    "Layer",
    "Model",
    "build_cnn",
    "build_mlp",
    "forward",
    "loss_and_grads",
    "model_astype",
    "model_inputs",
]

KINDS = ("dense", "conv2d", "factorized_dense", "factorized_conv2d")
ACTIVATIONS = ("none", "relu", "softmax_out")


@dataclass
class Layer:
    kind: str
    activation: str = "none"
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    mask: np.ndarray | None = None
    factor: FactorPair | None = None
    # (in_ch, kh, kw) for factorized_conv2d, where the kernel geometry is no
    # longer recoverable from the factor shapes alone.
    kernel_geom: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind in ("dense", "conv2d"):
            if self.weights is None or self.factor is not None:
                raise ValueError(f"{self.kind} layer needs weights and no factor")
            if self.mask is not None and self.mask.shape != self.weights.shape:
                raise ValueError("mask must have exactly one bit per weight")
        else:
            if self.factor is None or self.weights is not None:
                raise ValueError(f"{self.kind} layer needs a factor and no weights")
            if self.mask is not None:
                raise ValueError("factorized layers do not carry prune masks")
            if self.kind == "factorized_conv2d":
                if self.kernel_geom is None:
                    raise ValueError("factorized_conv2d requires kernel_geom")
                in_ch, kh, kw = self.kernel_geom
                if self.factor.shape[1] != in_ch * kh * kw:
                    raise ValueError("kernel_geom inconsistent with factor shape")

    @property
    def out_dim(self) -> int:
        if self.factor is not None:
            return self.factor.shape[0]
        return self.weights.shape[0]

    def weight_count(self) -> int:
        """Parameters in the weight tensor (factors count r*(m+n)); no bias."""
        if self.factor is not None:
            return self.factor.param_count
        return int(self.weights.size)

    def dense_weight_count(self) -> int:
        """Weight-count of the unfactorized equivalent (m*n)."""
        if self.factor is not None:
            m, n = self.factor.shape
            return m * n
        return int(self.weights.size)

    def copy(self) -> "Layer":
        return replace(
            self,
            weights=None if self.weights is None else self.weights.copy(),
            bias=None if self.bias is None else self.bias.copy(),
            mask=None if self.mask is None else self.mask.copy(),
            factor=None
            if self.factor is None
            else FactorPair(self.factor.u_fold.copy(), self.factor.v_t.copy()),
        )


def dense(weights, bias=None, activation="none", mask=None) -> Layer:
    w = np.asarray(weights, dtype=np.float32)
    b = np.zeros(w.shape[0], np.float32) if bias is None else np.asarray(bias, np.float32)
    return Layer("dense", activation, weights=w, bias=b, mask=mask)


def conv2d(weights, bias=None, activation="none", mask=None) -> Layer:
    w = np.asarray(weights, dtype=np.float32)
    if w.ndim != 4:
        raise ValueError(f"conv weights must be 4-D, got shape {w.shape}")
    b = np.zeros(w.shape[0], np.float32) if bias is None else np.asarray(bias, np.float32)
    return Layer("conv2d", activation, weights=w, bias=b, mask=mask)


def factorized_dense(factor: FactorPair, bias=None, activation="none") -> Layer:
    b = np.zeros(factor.shape[0], np.float32) if bias is None else np.asarray(bias, np.float32)
    return Layer("factorized_dense", activation, bias=b, factor=factor)


def factorized_conv2d(factor: FactorPair, kernel_geom, bias=None, activation="none") -> Layer:
    b = np.zeros(factor.shape[0], np.float32) if bias is None else np.asarray(bias, np.float32)
    return Layer(
        "factorized_conv2d",
        activation,
        bias=b,
        factor=factor,
        kernel_geom=tuple(kernel_geom),
    )


@dataclass
class Model:
    layers: list[Layer]
    input_shape: tuple[int, ...]
    class_count: int

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        shape = self.input_shape
        for idx, layer in enumerate(self.layers):
            shape = _output_shape(layer, shape, idx)
        if shape != (self.class_count,):
            raise ValueError(
                f"final layer emits {shape}, expected ({self.class_count},)"
            )

    def copy(self) -> "Model":
        return Model(
            layers=[layer.copy() for layer in self.layers],
            input_shape=self.input_shape,
            class_count=self.class_count,
        )

    def weight_count(self) -> int:
        return sum(layer.weight_count() for layer in self.layers)


def _output_shape(layer: Layer, in_shape: tuple, idx: int) -> tuple:
    if layer.kind in ("dense", "factorized_dense"):
        flat = int(np.prod(in_shape))
        in_dim = layer.weights.shape[1] if layer.weights is not None else layer.factor.shape[1]
        if flat != in_dim:
            raise ValueError(
                f"layer {idx}: input {in_shape} (flat {flat}) does not match width {in_dim}"
            )
        return (layer.out_dim,)
    if layer.kind == "conv2d":
        out_ch, in_ch, kh, kw = layer.weights.shape
    else:
        in_ch, kh, kw = layer.kernel_geom
        out_ch = layer.factor.shape[0]
    if len(in_shape) != 3 or in_shape[0] != in_ch:
        raise ValueError(f"layer {idx}: conv input {in_shape} needs {in_ch} channels")
    c, h, w = in_shape
    if h < kh or w < kw:
        raise ValueError(f"layer {idx}: input {in_shape} smaller than kernel {kh}x{kw}")
    return (out_ch, h - kh + 1, w - kw + 1)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _effective_weights(layer: Layer) -> np.ndarray:
    if layer.mask is not None:
        return layer.weights * layer.mask
    return layer.weights


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # x (N, C, H, W) -> (N, oh*ow, C*kh*kw)
    n, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh, ow = h - kh + 1, w - kw + 1
    dx = np.zeros(x_shape, dcols.dtype)
    d6 = dcols.reshape(n, oh, ow, c, kh, kw)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + oh, j : j + ow] += d6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx


def _layer_forward(layer: Layer, x: np.ndarray):
    """Returns (post-activation output, cache for backward)."""
    cache = {"x": x}
    if layer.kind in ("dense", "factorized_dense"):
        flat = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
        cache["flat"] = flat
        if layer.kind == "dense":
            z = flat @ _effective_weights(layer).T + layer.bias
        else:
            hidden = flat @ layer.factor.v_t.T
            cache["hidden"] = hidden
            z = hidden @ layer.factor.u_fold.T + layer.bias
    else:
        if layer.kind == "conv2d":
            out_ch, in_ch, kh, kw = layer.weights.shape
            wf = _effective_weights(layer).reshape(out_ch, -1)
        else:
            in_ch, kh, kw = layer.kernel_geom
            out_ch = layer.factor.shape[0]
        cols = _im2col(x, kh, kw)
        cache["cols"] = cols
        if layer.kind == "conv2d":
            zf = cols @ wf.T + layer.bias
        else:
            hidden = cols @ layer.factor.v_t.T
            cache["hidden"] = hidden
            zf = hidden @ layer.factor.u_fold.T + layer.bias
        n = x.shape[0]
        oh, ow = x.shape[2] - kh + 1, x.shape[3] - kw + 1
        z = zf.reshape(n, oh, ow, out_ch).transpose(0, 3, 1, 2)
    cache["z"] = z
    out = np.maximum(z, 0) if layer.activation == "relu" else z
    return out, cache


def _layer_backward(layer: Layer, g: np.ndarray, cache: dict):
    """Returns (gradient dict for the layer, gradient wrt the layer input)."""
    if layer.activation == "relu":
        g = g * (cache["z"] > 0)
    x = cache["x"]
    if layer.kind in ("dense", "factorized_dense"):
        flat = cache["flat"]
        if layer.kind == "dense":
            dw = g.T @ flat
            if layer.mask is not None:
                dw = dw * layer.mask
            dx = g @ _effective_weights(layer)
            grads = {"weights": dw, "bias": g.sum(axis=0)}
        else:
            hidden = cache["hidden"]
            du = g.T @ hidden
            dh = g @ layer.factor.u_fold
            dvt = dh.T @ flat
            dx = dh @ layer.factor.v_t
            grads = {"u_fold": du, "v_t": dvt, "bias": g.sum(axis=0)}
        return grads, dx.reshape(x.shape)

    # conv kinds: g (N, O, oh, ow) -> flat (N*oh*ow, O)
    n, out_ch, oh, ow = g.shape
    gf = g.transpose(0, 2, 3, 1).reshape(-1, out_ch)
    cols = cache["cols"].reshape(n * oh * ow, -1)
    if layer.kind == "conv2d":
        kh, kw = layer.weights.shape[2:]
        dwf = gf.T @ cols
        dw = dwf.reshape(layer.weights.shape)
        if layer.mask is not None:
            dw = dw * layer.mask
        dcols = gf @ _effective_weights(layer).reshape(out_ch, -1)
        grads = {"weights": dw, "bias": gf.sum(axis=0)}
    else:
        in_ch, kh, kw = layer.kernel_geom
        hidden = cache["hidden"].reshape(n * oh * ow, -1)
        du = gf.T @ hidden
        dh = gf @ layer.factor.u_fold
        dvt = dh.T @ cols
        dcols = dh @ layer.factor.v_t
        grads = {"u_fold": du, "v_t": dvt, "bias": gf.sum(axis=0)}
    dx = _col2im(dcols.reshape(n, oh * ow, -1), x.shape, kh, kw)
    return grads, dx


def _check_batch(model: Model, batch: np.ndarray):
    if batch.ndim != len(model.input_shape) + 1 or batch.shape[1:] != model.input_shape:
        raise ValueError(
            f"batch shape {batch.shape} does not match input shape {model.input_shape}"
        )


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Run the network, returning logits of shape (batch, class_count)."""
    _check_batch(model, batch)
    out = batch
    for layer in model.layers:
        out, _ = _layer_forward(layer, out)
    return out


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def loss_and_grads(model: Model, batch: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and per-layer gradients.

    Gradients mirror each layer's parameters: dense/conv layers get
    {weights, bias}, factorized layers {u_fold, v_t, bias}. Gradients of
    masked-out weights are exactly zero.
    """
    _check_batch(model, batch)
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= model.class_count:
        raise ValueError(
            f"labels must lie in [0, {model.class_count}), got "
            f"[{labels.min()}, {labels.max()}]"
        )

    caches = []
    out = batch
    for layer in model.layers:
        out, cache = _layer_forward(layer, out)
        caches.append(cache)
    logits = out

    n = batch.shape[0]
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())

    g = np.exp(logp)
    g[np.arange(n), labels] -= 1.0
    g /= n
    g = g.astype(logits.dtype)

    grads = [None] * len(model.layers)
    for idx in range(len(model.layers) - 1, -1, -1):
        grads[idx], g = _layer_backward(model.layers[idx], g, caches[idx])
    return loss, grads


# ---------------------------------------------------------------------------
# reference architectures and helpers
# ---------------------------------------------------------------------------


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def build_mlp(input_dim: int = 784, hidden=(256, 128), classes: int = 10, seed: int = 0) -> Model:
    """Fully connected reference network: input -> hidden ReLU stack -> logits."""
    rng = np.random.default_rng(seed)
    layers = []
    prev = input_dim
    for width in hidden:
        layers.append(dense(_kaiming_uniform(rng, (width, prev), prev), activation="relu"))
        prev = width
    layers.append(dense(_kaiming_uniform(rng, (classes, prev), prev), activation="softmax_out"))
    return Model(layers, (input_dim,), classes)


def build_cnn(input_shape=(1, 28, 28), channels=(16, 32), kernel: int = 3,
              classes: int = 10, seed: int = 0) -> Model:
    """Small convolutional reference network: conv-relu stack, then a dense head."""
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    layers = []
    for out_ch in channels:
        fan_in = c * kernel * kernel
        layers.append(
            conv2d(_kaiming_uniform(rng, (out_ch, c, kernel, kernel), fan_in),
                   activation="relu")
        )
        c, h, w = out_ch, h - kernel + 1, w - kernel + 1
    flat = c * h * w
    layers.append(dense(_kaiming_uniform(rng, (classes, flat), flat), activation="softmax_out"))
    return Model(layers, tuple(input_shape), classes)


def model_inputs(model: Model, images: np.ndarray) -> np.ndarray:
    """Reshape raw (N, H, W) images to the model's input shape."""
    n = images.shape[0]
    flat = images.reshape(n, -1)
    want = int(np.prod(model.input_shape))
    if flat.shape[1] != want:
        raise ValueError(
            f"images with {flat.shape[1]} pixels cannot feed input shape {model.input_shape}"
        )
    return flat.reshape((n,) + model.input_shape)


def model_astype(model: Model, dtype) -> Model:
    """Copy with every parameter cast to dtype (float64 copies are handy as
    finite-difference oracles; stored models stay float32)."""
    out = model.copy()
    for layer in out.layers:
        if layer.weights is not None:
            layer.weights = layer.weights.astype(dtype)
        if layer.bias is not None:
            layer.bias = layer.bias.astype(dtype)
        if layer.factor is not None:
            layer.factor = FactorPair(
                layer.factor.u_fold.astype(dtype), layer.factor.v_t.astype(dtype)
            )
    return out
