"""
Backbone résiduel miniature: pas du dernier étage, IBN, blocs non locaux et tronc multi-branches.
"""
from dataclasses import dataclass
from typing import List, Tuple
import logging

import numpy as np

import config
from autodiff import Tensor, ops, precision_dtype
from errors import ConfigError, ShapeError
from nn_layers import IBN, BatchNorm, Conv2d, Module, NonLocalBlock

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)

# Ordre canonique des branches
BRANCH_ORDER = ("global", "parts2", "parts3")
PART_COUNTS = {"parts2": 2, "parts3": 3}


@dataclass
class BackboneConfig:
    """
    Configuration du backbone.
    """
    blocks_per_stage: Tuple[int, ...] = (1, 1, 1, 1)
    base_channels: int = 16
    last_stride: int = 1
    use_ibn: bool = False
    ibn_stages: Tuple[int, ...] = (1, 2, 3)
    use_nonlocal: bool = False
    branches: Tuple[str, ...] = ("global",)
    precision: int = 32

    def validate(self) -> None:
        """
        Vérifie les invariants de la configuration.
        """
        if len(self.blocks_per_stage) != 4 or any(int(n) < 1 for n in self.blocks_per_stage):
            raise ConfigError(f"4 étages d'au moins un bloc attendus: {self.blocks_per_stage}",
                              key="backbone.blocks")
        if self.base_channels < 1:
            raise ConfigError(f"nombre de canaux invalide: {self.base_channels}",
                              key="backbone.base_channels")
        if self.use_ibn and self.base_channels < 2:
            raise ConfigError("IBN exige au moins 2 canaux", key="backbone.base_channels")
        if self.last_stride not in (1, 2):
            raise ConfigError(f"pas du dernier étage {self.last_stride} (1 ou 2)",
                              key="backbone.last_stride")
        if any(s not in (1, 2, 3, 4) for s in self.ibn_stages):
            raise ConfigError(f"étages IBN invalides: {self.ibn_stages}", key="backbone.ibn_stages")
        if not self.branches:
            raise ConfigError("aucune branche activée", key="backbone.branches")
        if len(set(self.branches)) != len(self.branches) or any(b not in BRANCH_ORDER for b in self.branches):
            raise ConfigError(f"branches invalides: {self.branches}", key="backbone.branches")
        if "global" not in self.branches:
            raise ConfigError("la branche globale est obligatoire", key="backbone.branches")

    @property
    def stage_channels(self) -> List[int]:
        b = self.base_channels
        return [b, 2 * b, 4 * b, 8 * b]

    @property
    def stage_strides(self) -> List[int]:
        return [1, 2, 2, self.last_stride]

    @property
    def ordered_branches(self) -> List[str]:
        return [b for b in BRANCH_ORDER if b in self.branches]

    @property
    def downsampling(self) -> int:
        return 8 * self.last_stride


@dataclass
class FeatureMap:
    """
    Carte de caractéristiques produite par une branche.
    """
    tensor: Tensor
    branch_tag: str

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.tensor.shape


class BasicBlock(Module):
    """
    Bloc résiduel à deux convolutions 3x3.

    La première normalisation est IBN quand l'étage le demande; le raccourci
    est une projection 1x1 + BN dès que le pas ou les canaux changent.
    """

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator,
                 dtype: np.dtype, use_ibn: bool = False):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, padding=1, dtype=dtype)
        self.norm1 = IBN(c_out, dtype) if use_ibn else BatchNorm(c_out, dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, stride=1, padding=1, dtype=dtype)
        self.norm2 = BatchNorm(c_out, dtype)
        if stride != 1 or c_in != c_out:
            self.down_conv = Conv2d(c_in, c_out, 1, rng, stride=stride, dtype=dtype)
            self.down_norm = BatchNorm(c_out, dtype)
        else:
            self.down_conv = None
            self.down_norm = None

    def forward(self, x: Tensor) -> Tensor:
        out = ops.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        shortcut = self.down_norm(self.down_conv(x)) if self.down_conv is not None else x
        return ops.relu(ops.add(out, shortcut))


class Stage(Module):
    """
    Suite de blocs résiduels, suivie d'un bloc non local optionnel.
    """

    def __init__(self, c_in: int, c_out: int, stride: int, n_blocks: int,
                 rng: np.random.Generator, dtype: np.dtype, use_ibn: bool, use_nonlocal: bool):
        super().__init__()
        self.blocks = [
            BasicBlock(c_in if i == 0 else c_out, c_out, stride if i == 0 else 1, rng, dtype, use_ibn)
            for i in range(n_blocks)
        ]
        self.non_local = NonLocalBlock(c_out, rng, dtype) if use_nonlocal else None

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        if self.non_local is not None:
            x = self.non_local(x)
        return x


class Backbone(Module):
    """
    Backbone résiduel à quatre étages.

    Les étages 1 à 3 sont partagés; l'étage 4 est dupliqué pour chaque
    branche activée, avec des paramètres indépendants.
    """

    def __init__(self, cfg: BackboneConfig, seed: int = 0):
        """
        Initialise le backbone.

        Args:
            cfg: Configuration validée
            seed: Graine de l'initialisation
        """
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        dtype = precision_dtype(cfg.precision)
        channels, strides = cfg.stage_channels, cfg.stage_strides
        blocks = [int(n) for n in cfg.blocks_per_stage]

        def make_stage(index: int) -> Stage:
            c_in = channels[0] if index == 0 else channels[index - 1]
            return Stage(
                c_in, channels[index], strides[index], blocks[index], rng, dtype,
                use_ibn=cfg.use_ibn and (index + 1) in cfg.ibn_stages,
                use_nonlocal=cfg.use_nonlocal and index in (1, 2),
            )

        self.stem_conv = Conv2d(3, channels[0], 3, rng, stride=2, padding=1, dtype=dtype)
        self.stem_norm = BatchNorm(channels[0], dtype)
        self.stage1 = make_stage(0)
        self.stage2 = make_stage(1)
        self.stage3 = make_stage(2)
        self.stage4 = {branch: make_stage(3) for branch in cfg.ordered_branches}
        self.out_channels = channels[3]
        logger.info(
            f"Backbone initialisé avec {self.param_count()} paramètres, "
            f"branches {cfg.ordered_branches}, last_stride={cfg.last_stride}"
        )

    def forward(self, x: Tensor) -> List[FeatureMap]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"entrée [N,3,H,W] attendue, reçu {x.shape}")
        if x.shape[2] % 16 or x.shape[3] % 16:
            raise ShapeError(f"résolution {x.shape[2]}x{x.shape[3]} non divisible par 16")
        h = ops.relu(self.stem_norm(self.stem_conv(x)))
        h = self.stage3(self.stage2(self.stage1(h)))
        return [FeatureMap(stage(h), branch) for branch, stage in self.stage4.items()]


def build_backbone(cfg: BackboneConfig, seed: int = 0) -> Backbone:
    """
    Construit un backbone initialisé de façon déterministe.
    """
    return Backbone(cfg, seed)


def forward(model: Backbone, x: Tensor) -> List[FeatureMap]:
    """
    Propage un lot d'images et renvoie une carte par branche, dans l'ordre canonique.
    """
    return model(x)


def horizontal_split(f: FeatureMap, k: int) -> List[Tensor]:
    """
    Découpe une carte en k bandes horizontales contiguës de même hauteur.

    Args:
        f: Carte de caractéristiques [N,C,H_f,W_f]
        k: Nombre de bandes (2 ou 3)

    Returns:
        Bandes de haut en bas
    """
    if k not in (2, 3):
        raise ShapeError(f"découpage en {k} bandes non supporté (2 ou 3)")
    height = f.tensor.shape[2]
    if height % k:
        raise ShapeError(f"hauteur {height} non divisible par {k}")
    step = height // k
    return [ops.slice_axis(f.tensor, 2, i * step, (i + 1) * step) for i in range(k)]


def closed_form_param_count(cfg: BackboneConfig) -> int:
    """
    Compte les paramètres du backbone par formule, sans le construire.
    """
    def block(c_in: int, c_out: int, stride: int) -> int:
        count = 9 * c_in * c_out + 2 * c_out + 9 * c_out * c_out + 2 * c_out
        if stride != 1 or c_in != c_out:
            count += c_in * c_out + 2 * c_out
        return count

    def stage(c_in: int, c_out: int, stride: int, n: int) -> int:
        return block(c_in, c_out, stride) + (n - 1) * block(c_out, c_out, 1)

    def non_local(c: int) -> int:
        inner = c // 2
        return 3 * (c * inner + inner) + inner * c + c

    channels, strides = cfg.stage_channels, cfg.stage_strides
    blocks = [int(n) for n in cfg.blocks_per_stage]
    total = 27 * channels[0] + 2 * channels[0]
    total += stage(channels[0], channels[0], strides[0], blocks[0])
    total += stage(channels[0], channels[1], strides[1], blocks[1])
    total += stage(channels[1], channels[2], strides[2], blocks[2])
    if cfg.use_nonlocal:
        total += non_local(channels[1]) + non_local(channels[2])
    total += len(cfg.branches) * stage(channels[2], channels[3], strides[3], blocks[3])
    return total
