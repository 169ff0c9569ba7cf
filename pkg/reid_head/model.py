"""
Modèle complet: backbone + tête.
"""
from typing import List, Optional, Tuple
import logging

import numpy as np

import config
from autodiff import Tensor
from backbone import Backbone, BackboneConfig, FeatureMap, build_backbone
from nn_layers import Module, Param
from reid_head.head import HeadConfig, HeadOutput, ReIDHead, test_embedding

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


class ReIDModel(Module):
    """
    Réseau de ré-identification.

    Les paramètres du backbone sont préfixés `backbone.`, ceux de la tête
    `head.`; le gel de l'entraînement agit sur ce préfixe.
    """

    def __init__(self, backbone_cfg: BackboneConfig, head_cfg: HeadConfig, seed: int = 0):
        """
        Initialise le modèle.

        Args:
            backbone_cfg: Configuration du backbone
            head_cfg: Configuration de la tête
            seed: Graine de l'initialisation (flux distincts pour backbone et tête)
        """
        super().__init__()
        self.backbone = build_backbone(backbone_cfg, seed)
        self.head = ReIDHead(
            self.backbone.out_channels,
            backbone_cfg.ordered_branches,
            head_cfg,
            np.random.default_rng([seed, 1]),
            backbone_cfg.precision,
        )
        self.precision = backbone_cfg.precision
        self.assign_names()
        logger.info(f"ReIDModel initialisé avec {self.param_count()} paramètres")

    def feature_maps(self, x: Tensor) -> List[FeatureMap]:
        return self.backbone(x)

    def forward(self, x: Tensor) -> HeadOutput:
        return self.head(self.backbone(x))

    def embed(self, x: Tensor) -> Tensor:
        return test_embedding(self(x), include_parts=self.head.cfg.test_parts)

    def backbone_params(self) -> List[Tuple[str, Param]]:
        return [(n, p) for n, p in self.named_params() if n.startswith("backbone.")]

    @property
    def num_classes(self) -> Optional[int]:
        return self.head.cfg.num_classes
