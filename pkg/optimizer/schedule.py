"""
Planification du taux d'apprentissage et gel du backbone.
"""
from dataclasses import dataclass
from typing import Dict
import logging
import math

import config
from errors import ConfigError, ContractError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


@dataclass
class Schedule:
    """
    Taux d'apprentissage sur T pas, sans échauffement.
    """
    lr_base: float = 0.00035
    lr_min: float = 0.00035 / 45
    total_steps: int = 0
    freeze_iters: int = 0
    cosine: bool = True

    def __post_init__(self):
        if self.lr_min > self.lr_base:
            raise ConfigError(f"lr_min {self.lr_min} > lr {self.lr_base}", key="optim.lr_min")
        if self.total_steps < 0:
            raise ConfigError(f"nombre de pas négatif: {self.total_steps}", key="optim.epochs")
        if self.freeze_iters < 0 or (self.total_steps > 0 and self.freeze_iters >= self.total_steps):
            raise ConfigError(
                f"gel de {self.freeze_iters} pas pour {self.total_steps} pas au total",
                key="optim.freeze_iters"
            )


def cosine_lr(t: int, s: Schedule) -> float:
    """
    lr(t) = lr_min + 0.5·(lr_base - lr_min)·(1 + cos(π·t/T)); lr_min au-delà de T.
    """
    if t < 0:
        raise ContractError(f"pas négatif: {t}")
    if s.total_steps == 0:
        return s.lr_base if t == 0 else s.lr_min
    if t >= s.total_steps:
        return s.lr_min
    return s.lr_min + 0.5 * (s.lr_base - s.lr_min) * (1.0 + math.cos(math.pi * t / s.total_steps))


def constant_lr(t: int, s: Schedule) -> float:
    if t < 0:
        raise ContractError(f"pas négatif: {t}")
    return s.lr_base


def learning_rate(t: int, s: Schedule) -> float:
    """
    Taux du pas t selon le mode de la planification (cosinus ou constant).
    """
    return cosine_lr(t, s) if s.cosine else constant_lr(t, s)


def apply_freeze(model, t: int, s: Schedule) -> Dict[str, bool]:
    """
    Gèle les paramètres du backbone pour t < F.

    Args:
        model: Modèle dont les paramètres du backbone sont préfixés `backbone.`
        t: Pas courant
        s: Planification

    Returns:
        Masque nom -> paramètre modifiable
    """
    frozen = t < s.freeze_iters
    mask = {}
    for name, p in model.named_params():
        p.frozen = frozen and name.startswith("backbone.")
        mask[name] = p.updatable
    if t == s.freeze_iters and s.freeze_iters > 0:
        logger.info(f"Backbone dégelé au pas {t}")
    return mask
