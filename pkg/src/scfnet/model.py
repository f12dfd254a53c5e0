"""Single-channel feature extractor with back-end fusion, plus the end-to-end baseline.

The extractor ``f`` is Inception1D -> 9 x ResNet1D -> BiLSTM and sees one channel
at a time.  A batch ``[B, C, T]`` is reshaped to ``[(B*C), 1, T]``, every channel
is summarized into a ``2k`` feature block, and the blocks are concatenated in
channel order before a two-layer MLP head.  Because the extractor never sees
more than one channel, its parameters are independent of the channel count and
can be reused across montages.

The end-to-end baseline uses the same layers but feeds all ``C`` channels into
the first convolution, so its extractor is tied to the training montage.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ValidationError

ARCHES = ("scfnet", "end2end")
EXTRACTOR = "extractor."
CLASSIFIER = "classifier."


@dataclass
class ModelConfig:
    n_channels: int
    window_samples: int
    n_classes: int
    feature_width: int = 64
    inception_kernels: List[int] = field(default_factory=lambda: [3, 5, 7, 9])
    n_resnet_blocks: int = 9
    resnet_stage_strides: List[int] = field(default_factory=lambda: [1, 1, 1, 2, 1, 1, 2, 1, 1])
    classifier_hidden: int = 128
    dropout: float = 0.0
    arch: str = "scfnet"

    @property
    def lstm_hidden(self) -> int:
        return self.feature_width

    @property
    def downsampling(self) -> int:
        # the inception layer always halves the sequence
        return 2 * math.prod(self.resnet_stage_strides)

    @property
    def sequence_length(self) -> int:
        return self.window_samples // self.downsampling

    def validate(self):
        k = self.feature_width
        if self.arch not in ARCHES:
            raise ValidationError(f"unknown arch {self.arch!r}; expected one of {ARCHES}")
        if self.n_channels < 1:
            raise ValidationError("n_channels must be >= 1")
        if self.n_classes < 2:
            raise ValidationError("n_classes must be >= 2")
        if k < 4 or k % 4:
            raise ValidationError(f"feature_width must be a positive multiple of 4, got {k}")
        if any(kk % 2 == 0 or kk < 1 for kk in self.inception_kernels):
            raise ValidationError(f"inception kernels must be odd, got {self.inception_kernels}")
        if len(self.inception_kernels) != 4:
            raise ValidationError("exactly four inception branches are supported")
        if len(self.resnet_stage_strides) != self.n_resnet_blocks:
            raise ValidationError("resnet_stage_strides must list one stride per block")
        if any(s not in (1, 2) for s in self.resnet_stage_strides):
            raise ValidationError("resnet strides must be 1 or 2")
        if self.window_samples < self.downsampling or self.window_samples % self.downsampling:
            raise ValidationError(
                f"window_samples {self.window_samples} not divisible by total downsampling "
                f"{self.downsampling}"
            )
        if self.classifier_hidden < 1:
            raise ValidationError("classifier_hidden must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        return self

    def fingerprint(self) -> dict:
        d = asdict(self)
        d["lstm_hidden"] = self.lstm_hidden
        return d

    def extractor_fingerprint(self) -> dict:
        fp = {
            "arch": self.arch,
            "feature_width": self.feature_width,
            "inception_kernels": list(self.inception_kernels),
            "n_resnet_blocks": self.n_resnet_blocks,
            "resnet_stage_strides": list(self.resnet_stage_strides),
        }
        if self.arch == "end2end":
            fp["n_channels"] = self.n_channels
        return fp

    @classmethod
    def from_fingerprint(cls, fp: dict) -> "ModelConfig":
        fp = dict(fp)
        fp.pop("lstm_hidden", None)
        return cls(**fp)


@dataclass
class ModelParams:
    """Named tensors split into ``extractor.*`` and ``classifier.*`` namespaces."""

    config: ModelConfig
    tensors: Dict[str, torch.Tensor]
    frozen: FrozenSet[str] = frozenset()

    def extractor(self) -> Dict[str, torch.Tensor]:
        return {n: t for n, t in self.tensors.items() if n.startswith(EXTRACTOR)}

    def classifier(self) -> Dict[str, torch.Tensor]:
        return {n: t for n, t in self.tensors.items() if n.startswith(CLASSIFIER)}

    def clone(self) -> "ModelParams":
        return ModelParams(
            self.config, {n: t.detach().clone() for n, t in self.tensors.items()}, self.frozen
        )


class Inception1d(nn.Module):
    def __init__(self, in_channels, width, kernels):
        super().__init__()
        self.branches = nn.ModuleList(
            nn.Conv1d(in_channels, width // 4, kk, stride=2, padding=kk // 2, bias=False)
            for kk in kernels
        )
        self.norm = nn.BatchNorm1d(width)

    def forward(self, x):
        x = torch.cat([b(x) for b in self.branches], dim=1)
        return F.relu(self.norm(x))


class ResBlock1d(nn.Module):
    def __init__(self, width, stride=1):
        super().__init__()
        self.conv1 = nn.Conv1d(width, width, 3, stride=stride, padding=1, bias=False)
        self.norm1 = nn.BatchNorm1d(width)
        self.conv2 = nn.Conv1d(width, width, 3, padding=1, bias=False)
        self.norm2 = nn.BatchNorm1d(width)
        self.project = None
        if stride != 1:
            self.project = nn.Conv1d(width, width, 1, stride=stride)

    def forward(self, x):
        skip = x if self.project is None else self.project(x)
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.relu(y + skip)


class Extractor(nn.Module):
    """RCNN feature extractor: ``[N, in_channels, T] -> [N, 2k]``."""

    def __init__(self, config: ModelConfig, in_channels: int = 1):
        super().__init__()
        k = config.feature_width
        self.inception = Inception1d(in_channels, k, config.inception_kernels)
        self.blocks = nn.Sequential(*(ResBlock1d(k, s) for s in config.resnet_stage_strides))
        self.lstm = nn.LSTM(k, config.lstm_hidden, batch_first=True, bidirectional=True)

    def forward(self, x):
        h = self.blocks(self.inception(x))
        _, (h_n, _) = self.lstm(h.transpose(1, 2))
        # h_n: [2, N, hidden], forward direction first
        return torch.cat([h_n[0], h_n[1]], dim=1)


class Classifier(nn.Module):
    def __init__(self, in_features, hidden, n_classes, dropout=0.0):
        super().__init__()
        self.hidden = nn.Linear(in_features, hidden)
        self.drop = nn.Dropout(dropout)
        self.out = nn.Linear(hidden, n_classes)

    def forward(self, x):
        return self.out(self.drop(F.relu(self.hidden(x))))


class SCFNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config.validate()
        k = config.feature_width
        self.extractor = Extractor(config, in_channels=1)
        self.classifier = Classifier(
            config.n_channels * 2 * k, config.classifier_hidden, config.n_classes, config.dropout
        )

    def features(self, x):
        b, c, t = _check_input(x, self.config, fixed_channels=False)
        feats = self.extractor(x.reshape(b * c, 1, t))
        return feats.reshape(b, c, -1)

    def head(self, feats):
        if feats.shape[1] != self.config.n_channels:
            raise ValidationError(
                f"classifier head expects {self.config.n_channels} channels, got {feats.shape[1]}"
            )
        return self.classifier(feats.reshape(feats.shape[0], -1))

    def forward(self, x):
        return self.head(self.features(x))


class End2EndNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config.validate()
        k = config.feature_width
        self.extractor = Extractor(config, in_channels=config.n_channels)
        self.classifier = Classifier(
            2 * k, config.classifier_hidden, config.n_classes, config.dropout
        )

    def forward(self, x):
        _check_input(x, self.config, fixed_channels=True)
        return self.classifier(self.extractor(x))


def _check_input(x, config, fixed_channels):
    if x.dim() != 3:
        raise ValidationError(f"expected a [B, C, T] batch, got shape {tuple(x.shape)}")
    b, c, t = x.shape
    if t % config.downsampling:
        raise ValidationError(f"T={t} is not divisible by {config.downsampling}")
    if fixed_channels and c != config.n_channels:
        raise ValidationError(
            f"end-to-end model was built for {config.n_channels} channels, got {c}; "
            "its extractor is tied to the training montage"
        )
    if c < 1:
        raise ValidationError("batch has no channels")
    if not torch.isfinite(x).all():
        raise ValidationError("input contains non-finite values")
    return b, c, t


def build_model(config: ModelConfig) -> nn.Module:
    return SCFNet(config) if config.arch == "scfnet" else End2EndNet(config)


def _seed_streams(seed: int) -> Tuple[torch.Generator, torch.Generator]:
    # separate streams keep extractor tensors identical whatever the head looks like
    ext, cls = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    return (
        torch.Generator().manual_seed(int(ext) >> 1),
        torch.Generator().manual_seed(int(cls) >> 1),
    )


def _fan_in_uniform_(t: torch.Tensor, fan_in: int, gen: torch.Generator):
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=gen, dtype=t.dtype) * (2 * bound) - bound)


def _init_module(module: nn.Module, gen: torch.Generator):
    for name, p in module.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        owner = module.get_submodule(name.rsplit(".", 1)[0]) if "." in name else module
        if isinstance(owner, nn.BatchNorm1d):
            nn.init.ones_(p) if leaf == "weight" else nn.init.zeros_(p)
        elif leaf.startswith("bias"):
            nn.init.zeros_(p)
        elif isinstance(owner, nn.LSTM):
            _fan_in_uniform_(p, p.shape[1], gen)
        else:
            _fan_in_uniform_(p, int(np.prod(p.shape[1:])), gen)
    for m in module.modules():
        if isinstance(m, nn.BatchNorm1d):
            m.reset_running_stats()


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initial parameters for ``config``."""
    model = build_model(config)
    ext_gen, cls_gen = _seed_streams(seed)
    _init_module(model.extractor, ext_gen)
    _init_module(model.classifier, cls_gen)
    return params_from_module(model, config)


def init_classifier(config: ModelConfig, seed: int) -> Dict[str, torch.Tensor]:
    return init_params(config, seed).classifier()


def params_from_module(model: nn.Module, config: ModelConfig, frozen=frozenset()) -> ModelParams:
    tensors = {
        name: t.detach().clone()
        for name, t in model.state_dict().items()
        if not name.endswith("num_batches_tracked")
    }
    return ModelParams(config, tensors, frozenset(frozen))


def module_from_params(params: ModelParams, dtype=torch.float32) -> nn.Module:
    model = build_model(params.config)
    missing, unexpected = model.load_state_dict(
        {n: t.to(dtype) for n, t in params.tensors.items()}, strict=False
    )
    missing = [m for m in missing if not m.endswith("num_batches_tracked")]
    if missing or unexpected:
        raise ValidationError(f"parameter set mismatch: missing={missing} unexpected={unexpected}")
    return model.to(dtype)


def _as_batch(batch, dtype):
    if isinstance(batch, np.ndarray):
        batch = torch.from_numpy(batch)
    return batch.to(dtype)


def _eval_module(params, dtype):
    model = module_from_params(params, dtype)
    model.eval()
    return model


def extract_features(batch, params: ModelParams, dtype=torch.float32) -> torch.Tensor:
    """``[B, C, T] -> [B, C, 2k]`` in evaluation mode (frozen normalization statistics)."""
    if params.config.arch != "scfnet":
        raise ValidationError("per-channel features exist only for the scfnet architecture")
    model = _eval_module(params, dtype)
    with torch.no_grad():
        return model.features(_as_batch(batch, dtype))


def classify(features, params: ModelParams, dtype=torch.float32) -> torch.Tensor:
    """``[B, C, 2k] -> [B, n_classes]`` logits."""
    model = _eval_module(params, dtype)
    with torch.no_grad():
        return model.head(_as_batch(features, dtype))


def scfnet_forward(batch, params: ModelParams, dtype=torch.float32) -> torch.Tensor:
    if params.config.arch != "scfnet":
        raise ValidationError("scfnet_forward needs scfnet parameters")
    model = _eval_module(params, dtype)
    with torch.no_grad():
        return model(_as_batch(batch, dtype))


def end2end_forward(batch, params: ModelParams, dtype=torch.float32) -> torch.Tensor:
    if params.config.arch != "end2end":
        raise ValidationError("end2end_forward needs end2end parameters")
    model = _eval_module(params, dtype)
    with torch.no_grad():
        return model(_as_batch(batch, dtype))


def forward(batch, params: ModelParams, dtype=torch.float32) -> torch.Tensor:
    """Evaluation-mode logits for either architecture."""
    model = _eval_module(params, dtype)
    with torch.no_grad():
        return model(_as_batch(batch, dtype))


def count_parameters(params: ModelParams, prefix: str = "") -> int:
    model = module_from_params(params)
    return sum(p.numel() for n, p in model.named_parameters() if n.startswith(prefix))
