"""Style feature extractor and evidential classifier.

The extractor maps a batch of multi-atlas region matrices (B, 8, 246) to
non-negative 256-dim style vectors: Conv1D + BN + ReLU + MaxPool over the
template sequence, two pre-layernorm transformer blocks at width 128, a
patch merge that concatenates adjacent tokens and projects 256 -> 256, two
more blocks at width 256, average pooling over the sequence, and a final
Linear + BN + ReLU.

The classifier turns a concatenated 1024-dim feature row into per-class
evidence through three fully connected layers with a softplus output; the
evidence parameterizes a Dirichlet over class probabilities.

Three forward modes exist:

* ``train``      batch statistics for BN, dropout active
* ``eval``       running statistics, dropout off
* ``mc_dropout`` running statistics with dropout still active, used for
                 stochastic forward passes at inference time
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .autodiff import (
    Tensor,
    adaptive_avgpool,
    add,
    batchnorm1d,
    concat,
    constant,
    conv1d,
    dropout,
    layernorm,
    matmul,
    maxpool1d,
    mul,
    relu,
    reshape,
    softmax,
    softplus,
    transpose,
)
from .errors import ConfigError, NumericError, ShapeError

MODES = ("train", "eval", "mc_dropout")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")


def _dropout_active(mode: str) -> bool:
    return mode in ("train", "mc_dropout")


def _bn_mode(mode: str) -> str:
    return "train" if mode == "train" else "eval"


@dataclass(frozen=True)
class ExtractorConfig:
    """Architecture of the style extractor; defaults give the 256-dim output."""

    templates: int = 8
    region_features: int = 246
    conv_width: int = 128
    conv_kernel: int = 3
    heads: int = 4
    blocks_per_stage: int = 2
    ff_expansion: int = 4
    dropout: float = 0.1
    use_transformer: bool = True

    def __post_init__(self):
        if self.conv_kernel % 2 == 0:
            raise ConfigError("conv_kernel must be odd")
        if self.templates % 4 != 0:
            raise ConfigError("templates must be divisible by 4 (pool + patch merge)")
        if self.conv_width % self.heads != 0 or (2 * self.conv_width) % self.heads != 0:
            raise ConfigError("widths must be divisible by the head count")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def merged_width(self) -> int:
        return 2 * self.conv_width

    @property
    def out_dim(self) -> int:
        return self.merged_width


@dataclass
class StyleExtractorParams:
    config: ExtractorConfig
    tensors: "OrderedDict[str, Tensor]"

    def clone(self) -> "StyleExtractorParams":
        return StyleExtractorParams(self.config, _clone_tensors(self.tensors))

    def trainable(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, t) for k, t in self.tensors.items() if t.requires_grad)


@dataclass(frozen=True)
class ClassifierConfig:
    in_dim: int = 1024
    hidden: tuple = (256, 64)
    classes: int = 2
    dropout: float = 0.1
    evidential: bool = True

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class EvidentialClassifierParams:
    config: ClassifierConfig
    tensors: "OrderedDict[str, Tensor]"

    def clone(self) -> "EvidentialClassifierParams":
        return EvidentialClassifierParams(self.config, _clone_tensors(self.tensors))

    def trainable(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, t) for k, t in self.tensors.items() if t.requires_grad)


def _clone_tensors(tensors) -> "OrderedDict[str, Tensor]":
    out = OrderedDict()
    for name, t in tensors.items():
        out[name] = Tensor(t.data.copy(), requires_grad=t.requires_grad)
    return out


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _add_linear(tensors, rng, prefix, n_in, n_out):
    tensors[f"{prefix}.weight"] = Tensor(_uniform(rng, (n_in, n_out), n_in), requires_grad=True)
    tensors[f"{prefix}.bias"] = Tensor(np.zeros(n_out), requires_grad=True)


def _add_norm(tensors, prefix, width, running: bool = False):
    tensors[f"{prefix}.gamma"] = Tensor(np.ones(width), requires_grad=True)
    tensors[f"{prefix}.beta"] = Tensor(np.zeros(width), requires_grad=True)
    if running:
        tensors[f"{prefix}.running_mean"] = Tensor(np.zeros(width), requires_grad=False)
        tensors[f"{prefix}.running_var"] = Tensor(np.ones(width), requires_grad=False)


def _add_encoder_block(tensors, rng, cfg: ExtractorConfig, prefix: str, width: int):
    if not cfg.use_transformer:
        _add_norm(tensors, f"{prefix}.ln", width)
        _add_linear(tensors, rng, f"{prefix}.ff", width, width)
        return
    _add_norm(tensors, f"{prefix}.ln1", width)
    for proj in ("q", "k", "v", "o"):
        tensors[f"{prefix}.attn.w{proj}"] = Tensor(_uniform(rng, (width, width), width), requires_grad=True)
        tensors[f"{prefix}.attn.b{proj}"] = Tensor(np.zeros(width), requires_grad=True)
    _add_norm(tensors, f"{prefix}.ln2", width)
    _add_linear(tensors, rng, f"{prefix}.ff1", width, cfg.ff_expansion * width)
    _add_linear(tensors, rng, f"{prefix}.ff2", cfg.ff_expansion * width, width)


def init_style_extractor(config: ExtractorConfig, rng: np.random.Generator) -> StyleExtractorParams:
    """Fresh extractor parameters: fan-in-scaled uniform weights, zero biases."""
    t: "OrderedDict[str, Tensor]" = OrderedDict()
    k, c_in, w = config.conv_kernel, config.region_features, config.conv_width
    t["conv.kernel"] = Tensor(_uniform(rng, (k, c_in, w), k * c_in), requires_grad=True)
    t["conv.bias"] = Tensor(np.zeros(w), requires_grad=True)
    _add_norm(t, "conv_bn", w, running=True)
    for i in range(config.blocks_per_stage):
        _add_encoder_block(t, rng, config, f"stage1.{i}", w)
    merged = config.merged_width
    _add_linear(t, rng, "merge", merged, merged)
    for i in range(config.blocks_per_stage):
        _add_encoder_block(t, rng, config, f"stage2.{i}", merged)
    _add_linear(t, rng, "head", merged, merged)
    _add_norm(t, "head_bn", merged, running=True)
    return StyleExtractorParams(config, t)


def init_evidential_classifier(config: ClassifierConfig, rng: np.random.Generator) -> EvidentialClassifierParams:
    t: "OrderedDict[str, Tensor]" = OrderedDict()
    widths = (config.in_dim,) + tuple(config.hidden) + (config.classes,)
    for i in range(len(widths) - 1):
        _add_linear(t, rng, f"fc{i + 1}", widths[i], widths[i + 1])
    return EvidentialClassifierParams(config, t)


def _encoder_block(h, params: StyleExtractorParams, prefix: str, mode: str, rng, attention_sink=None):
    cfg = params.config
    t = params.tensors
    active = _dropout_active(mode) and cfg.dropout > 0.0

    if not cfg.use_transformer:
        z = layernorm(h, t[f"{prefix}.ln.gamma"], t[f"{prefix}.ln.beta"])
        z = relu(add(matmul(z, t[f"{prefix}.ff.weight"]), t[f"{prefix}.ff.bias"]))
        if active:
            z = dropout(z, cfg.dropout, rng)
        return add(h, z)

    batch, seq, width = h.shape
    heads = cfg.heads
    head_dim = width // heads

    z = layernorm(h, t[f"{prefix}.ln1.gamma"], t[f"{prefix}.ln1.beta"])

    def project(name):
        m = add(matmul(z, t[f"{prefix}.attn.w{name}"]), t[f"{prefix}.attn.b{name}"])
        return transpose(reshape(m, (batch, seq, heads, head_dim)), (0, 2, 1, 3))

    q, k, v = project("q"), project("k"), project("v")
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
    attn = softmax(scores, axis=-1)
    if attention_sink is not None:
        attention_sink.append(attn.data.copy())
    ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (batch, seq, width))
    out = add(matmul(ctx, t[f"{prefix}.attn.wo"]), t[f"{prefix}.attn.bo"])
    if active:
        out = dropout(out, cfg.dropout, rng)
    h = add(h, out)

    z = layernorm(h, t[f"{prefix}.ln2.gamma"], t[f"{prefix}.ln2.beta"])
    z = relu(add(matmul(z, t[f"{prefix}.ff1.weight"]), t[f"{prefix}.ff1.bias"]))
    z = add(matmul(z, t[f"{prefix}.ff2.weight"]), t[f"{prefix}.ff2.bias"])
    if active:
        z = dropout(z, cfg.dropout, rng)
    return add(h, z)


def extract_style(
    x,
    params: StyleExtractorParams,
    mode: str,
    rng: Optional[np.random.Generator] = None,
    attention_sink: Optional[list] = None,
) -> Tensor:
    """Map (B, templates, regions) inputs to non-negative style vectors (B, out_dim)."""
    _check_mode(mode)
    cfg = params.config
    t = params.tensors
    x = x if isinstance(x, Tensor) else constant(np.asarray(x, dtype=np.float64))
    expected = (cfg.templates, cfg.region_features)
    if x.ndim != 3 or x.shape[1:] != expected:
        raise ShapeError(f"extract_style expects (B, {expected[0]}, {expected[1]}), got {x.shape}")
    if mode == "train" and x.shape[0] < 2:
        raise ShapeError("extract_style train mode needs a batch of at least 2")

    h = add(conv1d(x, t["conv.kernel"]), t["conv.bias"])
    h = batchnorm1d(
        h, t["conv_bn.gamma"], t["conv_bn.beta"], t["conv_bn.running_mean"], t["conv_bn.running_var"], _bn_mode(mode)
    )
    h = relu(h)
    h = maxpool1d(h, 2)
    for i in range(cfg.blocks_per_stage):
        h = _encoder_block(h, params, f"stage1.{i}", mode, rng, attention_sink)
    h = reshape(h, (h.shape[0], cfg.templates // 4, cfg.merged_width))
    h = add(matmul(h, t["merge.weight"]), t["merge.bias"])
    for i in range(cfg.blocks_per_stage):
        h = _encoder_block(h, params, f"stage2.{i}", mode, rng, attention_sink)
    h = adaptive_avgpool(h)
    h = add(matmul(h, t["head.weight"]), t["head.bias"])
    h = batchnorm1d(
        h, t["head_bn.gamma"], t["head_bn.beta"], t["head_bn.running_mean"], t["head_bn.running_var"], _bn_mode(mode)
    )
    return relu(h)


class DirichletOutput:
    """Evidence plus the derived Dirichlet quantities for a batch.

    alpha_k = e_k + 1, strength S = sum_k alpha_k, class confidence
    p_k = alpha_k / S, predictive uncertainty u = K / S.  The identities
    are validated at construction; violations raise ``NumericError``.
    """

    __slots__ = ("evidence", "alpha", "strength", "probs", "uncertainty", "n_classes")

    def __init__(self, evidence: Tensor):
        e = evidence.data
        if e.ndim not in (1, 2):
            raise ShapeError(f"evidence must be (K,) or (B, K), got {e.shape}")
        if np.any(e < 0):
            raise NumericError("negative evidence")
        self.evidence = evidence
        self.n_classes = e.shape[-1]
        self.alpha = e + 1.0
        self.strength = self.alpha.sum(axis=-1)
        self.probs = self.alpha / self.alpha.sum(axis=-1, keepdims=True)
        self.uncertainty = self.n_classes / self.strength
        self._validate()

    @classmethod
    def from_array(cls, evidence) -> "DirichletOutput":
        return cls(constant(np.asarray(evidence, dtype=np.float64)))

    def _validate(self) -> None:
        k = self.n_classes
        if np.any(self.alpha < 1.0):
            raise NumericError("alpha < 1")
        if np.any(self.strength < k):
            raise NumericError("Dirichlet strength below class count")
        if np.any(self.uncertainty <= 0.0) or np.any(self.uncertainty > 1.0 + 1e-12):
            raise NumericError("uncertainty outside (0, 1]")
        if np.max(np.abs(self.probs.sum(axis=-1) - 1.0)) > 1e-12:
            raise NumericError("class confidences do not sum to 1")
        if np.max(np.abs(self.uncertainty * self.strength - k)) > 1e-9:
            raise NumericError("u * S != K")

    @property
    def predicted(self) -> np.ndarray:
        return np.argmax(self.probs, axis=-1)

    def __len__(self) -> int:
        return 1 if self.evidence.data.ndim == 1 else self.evidence.data.shape[0]


def _classifier_trunk(f_cat, params: EvidentialClassifierParams, mode: str, rng):
    _check_mode(mode)
    cfg = params.config
    t = params.tensors
    h = f_cat if isinstance(f_cat, Tensor) else constant(np.asarray(f_cat, dtype=np.float64))
    if h.ndim != 2 or h.shape[1] != cfg.in_dim:
        raise ShapeError(f"classifier expects (B, {cfg.in_dim}), got {h.shape}")
    active = _dropout_active(mode) and cfg.dropout > 0.0
    n_hidden = len(cfg.hidden)
    for i in range(n_hidden):
        h = relu(add(matmul(h, t[f"fc{i + 1}.weight"]), t[f"fc{i + 1}.bias"]))
        if active:
            h = dropout(h, cfg.dropout, rng)
    return add(matmul(h, t[f"fc{n_hidden + 1}.weight"]), t[f"fc{n_hidden + 1}.bias"])


def classify_evidential(
    f_cat, params: EvidentialClassifierParams, mode: str, rng: Optional[np.random.Generator] = None
) -> DirichletOutput:
    """Per-sample Dirichlet outputs; softplus keeps the evidence non-negative."""
    logits = _classifier_trunk(f_cat, params, mode, rng)
    return DirichletOutput(softplus(logits))


def classify_softmax(
    f_cat, params: EvidentialClassifierParams, mode: str, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Plain softmax head used when the evidential head is ablated away."""
    return softmax(_classifier_trunk(f_cat, params, mode, rng), axis=-1)


def concat_features(f: Tensor, feat_a, feat_b, feat_c) -> Tensor:
    """Row-wise [f | feat_a | feat_b | feat_c]; the three style vectors are
    gradient-detached constants shared by every row."""
    if f.ndim != 2:
        raise ShapeError(f"sample features must be (B, D), got {f.shape}")
    width = f.shape[1]
    batch = f.shape[0]
    parts = [f]
    for name, vec in (("feat_a", feat_a), ("feat_b", feat_b), ("feat_c", feat_c)):
        arr = np.asarray(vec.data if isinstance(vec, Tensor) else vec, dtype=np.float64)
        if arr.shape != (width,):
            raise ShapeError(f"{name} must have shape ({width},), got {arr.shape}")
        parts.append(constant(np.tile(arr, (batch, 1))))
    return concat(parts, axis=-1)


@dataclass
class SiteModel:
    """Extractor + classifier + frozen per-site style context."""

    extractor: StyleExtractorParams
    classifier: EvidentialClassifierParams
    context: Optional[tuple] = None  # (feat_a, feat_b, feat_c)

    def context_or_zero(self) -> tuple:
        if self.context is not None:
            return self.context
        width = self.extractor.config.out_dim
        zero = np.zeros(width)
        return (zero, zero, zero)

    def features(self, x, mode: str, rng=None) -> Tensor:
        return extract_style(x, self.extractor, mode, rng)

    def dirichlet(self, x, mode: str, rng=None) -> DirichletOutput:
        f = self.features(x, mode, rng)
        f_cat = concat_features(f, *self.context_or_zero())
        return classify_evidential(f_cat, self.classifier, mode, rng)

    def clone(self) -> "SiteModel":
        ctx = None if self.context is None else tuple(np.array(v) for v in self.context)
        return SiteModel(self.extractor.clone(), self.classifier.clone(), ctx)
