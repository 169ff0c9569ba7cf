"""
Tête de ré-identification: pooling, projection, BNNeck et classifieurs.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence
import logging

import numpy as np

import config
from autodiff import Tensor, ops, precision_dtype
from backbone import BRANCH_ORDER, PART_COUNTS, FeatureMap, horizontal_split
from errors import ConfigError, ContractError
from nn_layers import Linear, Module, NormState, Pooling, batch_norm

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


@dataclass
class HeadConfig:
    """
    Configuration de la tête.
    """
    embed_dim: int = 64
    bnneck: bool = True
    pooling: str = "avg"
    test_parts: bool = True
    num_classes: Optional[int] = None

    def validate(self) -> None:
        if self.embed_dim < 1:
            raise ConfigError(f"dimension d'embedding invalide: {self.embed_dim}", key="head.embed_dim")
        if self.pooling not in ("avg", "max", "gem"):
            raise ConfigError(f"pooling inconnu: {self.pooling}", key="head.pooling")
        if self.num_classes is not None and self.num_classes < 1:
            raise ConfigError(f"nombre de classes invalide: {self.num_classes}")


@dataclass
class HeadOutput:
    """
    Sorties alignées de la tête, une entrée par embedding.

    Ordre: globaux de branche (global, parts2, parts3), puis bandes parts2 de
    haut en bas, puis bandes parts3.
    """
    pre_bn: List[Tensor]
    post_bn: List[Tensor]
    logits: List[Tensor]
    tags: List[str]
    triplet_indices: List[int] = field(default_factory=list)
    num_classes: Optional[int] = None


def embedding_tags(branches: Sequence[str]) -> List[str]:
    """
    Calcule les noms des embeddings produits pour un ensemble de branches.
    """
    ordered = [b for b in BRANCH_ORDER if b in branches]
    tags = list(ordered)
    for branch in ordered:
        if branch in PART_COUNTS:
            tags.extend(f"{branch}/{i}" for i in range(PART_COUNTS[branch]))
    return tags


class ReIDHead(Module):
    """
    Tête multi-embeddings.

    Chaque embedding (global de branche ou bande) a sa propre projection,
    son état BNNeck et son classifieur sans biais; le pooling est partagé.
    """

    def __init__(self, in_channels: int, branches: Sequence[str], cfg: HeadConfig,
                 rng: np.random.Generator, precision: int = 32):
        """
        Initialise la tête.

        Args:
            in_channels: Canaux des cartes du backbone
            branches: Branches activées
            cfg: Configuration de la tête
            rng: Générateur pour l'initialisation
            precision: Largeur des scalaires
        """
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        dtype = precision_dtype(precision)
        self.tags = embedding_tags(branches)
        self.pooling = Pooling(cfg.pooling, dtype)
        self.embed = [Linear(in_channels, cfg.embed_dim, rng, dtype=dtype) for _ in self.tags]
        self.neck = [NormState(cfg.embed_dim, dtype) for _ in self.tags] if cfg.bnneck else []
        if cfg.num_classes is not None:
            self.classifier = [
                Linear(cfg.embed_dim, cfg.num_classes, rng, bias=False,
                       std=config.LAYER_CONFIG["classifier_std"], dtype=dtype)
                for _ in self.tags
            ]
        else:
            self.classifier = []
        logger.info(
            f"ReIDHead initialisé avec {len(self.tags)} embeddings de dimension {cfg.embed_dim}, "
            f"bnneck={cfg.bnneck}, pooling={cfg.pooling}, classes={cfg.num_classes}"
        )

    @property
    def triplet_indices(self) -> List[int]:
        return [i for i, tag in enumerate(self.tags) if "/" not in tag]

    def forward(self, features: List[FeatureMap]) -> HeadOutput:
        by_tag = {f.branch_tag: f for f in features}
        expected = [t for t in self.tags if "/" not in t]
        if sorted(by_tag) != sorted(expected):
            raise ContractError(f"branches reçues {sorted(by_tag)}, attendu {sorted(expected)}")
        if self.training and not self.classifier:
            raise ConfigError("nombre de classes non défini en mode entraînement")

        pooled = [self.pooling(by_tag[tag].tensor) for tag in expected]
        for tag in expected:
            if tag in PART_COUNTS:
                pooled.extend(self.pooling(strip) for strip in horizontal_split(by_tag[tag], PART_COUNTS[tag]))

        pre_bn, post_bn, logits = [], [], []
        for i, vector in enumerate(pooled):
            embedding = self.embed[i](vector)
            pre_bn.append(embedding)
            if self.neck:
                n, d = embedding.shape
                normed = batch_norm(ops.reshape(embedding, (n, d, 1, 1)), self.neck[i])
                post_bn.append(ops.reshape(normed, (n, d)))
            else:
                post_bn.append(embedding)
            if self.classifier:
                logits.append(self.classifier[i](post_bn[-1]))

        return HeadOutput(pre_bn, post_bn, logits, list(self.tags), self.triplet_indices,
                          self.cfg.num_classes)


def head_forward(features: List[FeatureMap], head: ReIDHead, mode: Optional[str] = None) -> HeadOutput:
    """
    Applique la tête aux cartes du backbone.

    Args:
        features: Cartes produites par le backbone
        head: Tête
        mode: "train" ou "eval" pour basculer la tête avant l'appel (inchangé si None)

    Returns:
        Sorties alignées
    """
    if mode is not None:
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode inconnu: {mode}")
        head.train(mode == "train")
    return head(features)


def test_embedding(out: HeadOutput, include_parts: bool = True) -> Tensor:
    """
    Concatène les embeddings avant BNNeck dans l'ordre fixe des branches.

    Args:
        out: Sorties de la tête
        include_parts: Inclure les embeddings de bandes

    Returns:
        Embedding de test [N, D_total]
    """
    selected = out.pre_bn if include_parts else [out.pre_bn[i] for i in out.triplet_indices]
    if len(selected) == 1:
        return selected[0]
    return ops.concat(selected, axis=1)


# pytest ne doit pas collecter cette fonction
test_embedding.__test__ = False
