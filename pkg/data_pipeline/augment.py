"""
Augmentations d'entraînement: retournement horizontal, effacement aléatoire et normalisation.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

import config
from autodiff import Tensor
from data_pipeline.images import resize
from errors import ConfigError, ContractError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


@dataclass
class AugmentConfig:
    """
    Configuration des augmentations.
    """
    flip_prob: float = 0.5
    random_erasing: bool = False
    erasing_prob: float = config.DATA_CONFIG["erasing_prob"]
    erasing_area: Tuple[float, float] = tuple(config.DATA_CONFIG["erasing_area"])
    erasing_aspect: Tuple[float, float] = tuple(config.DATA_CONFIG["erasing_aspect"])
    fill: Optional[Tuple[float, ...]] = None
    resolution: Tuple[int, int] = (64, 64)
    mean: Tuple[float, ...] = tuple(config.DATA_CONFIG["mean"])
    std: Tuple[float, ...] = tuple(config.DATA_CONFIG["std"])

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"probabilité {self.flip_prob} hors de [0,1]", key="data.flip_prob")
        if not 0.0 <= self.erasing_prob <= 1.0:
            raise ConfigError(f"probabilité {self.erasing_prob} hors de [0,1]", key="data.erasing_prob")
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"écarts-types non positifs: {self.std}", key="data.std")
        height, width = self.resolution
        if width < height:
            logger.warning(f"Résolution {height}x{width}: une largeur au moins égale à la hauteur est recommandée")

    @property
    def fill_value(self) -> Tuple[float, ...]:
        return tuple(self.fill) if self.fill is not None else tuple(self.mean)


def flip(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x[..., ::-1])


def erase(x: np.ndarray, top: int, left: int, height: int, width: int,
          fill: Sequence[float]) -> np.ndarray:
    """
    Remplit le rectangle [top, top+height) x [left, left+width) avec une valeur par canal.
    """
    _, h, w = x.shape
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise ContractError(f"rectangle hors de l'image {h}x{w}")
    out = x.copy()
    out[:, top:top + height, left:left + width] = np.asarray(fill, dtype=x.dtype)[:, None, None]
    return out


def random_erase(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Efface un rectangle aléatoire avec la probabilité configurée.

    Jusqu'à DATA_CONFIG["erasing_attempts"] tirages pour trouver un rectangle
    qui tienne dans l'image, sinon l'image est inchangée.
    """
    if rng.random() >= cfg.erasing_prob:
        return x
    _, h, w = x.shape
    for _ in range(config.DATA_CONFIG["erasing_attempts"]):
        area = rng.uniform(*cfg.erasing_area) * h * w
        aspect = rng.uniform(*cfg.erasing_aspect)
        eh = int(round(math.sqrt(area * aspect)))
        ew = int(round(math.sqrt(area / aspect)))
        if 0 < eh < h and 0 < ew < w:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            return erase(x, top, left, eh, ew, cfg.fill_value)
    return x


def normalize(x: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    mean = np.asarray(mean, dtype=x.dtype)[:, None, None]
    std = np.asarray(std, dtype=x.dtype)[:, None, None]
    return ((x - mean) / std).astype(x.dtype)


def augment(x: Union[Tensor, np.ndarray], cfg: AugmentConfig,
            rng: np.random.Generator) -> Union[Tensor, np.ndarray]:
    """
    Retournement, effacement optionnel puis normalisation par canal.

    Args:
        x: Image [3,H,W] dans [0,1]
        cfg: Configuration
        rng: Générateur (tirages consommés dans un ordre fixe)

    Returns:
        Image augmentée et normalisée, du même type que l'entrée
    """
    is_tensor = isinstance(x, Tensor)
    data = x.data if is_tensor else np.asarray(x)
    if rng.random() < cfg.flip_prob:
        data = flip(data)
    if cfg.random_erasing:
        data = random_erase(data, cfg, rng)
    data = normalize(data, cfg.mean, cfg.std)
    return Tensor(data, dtype=data.dtype) if is_tensor else data


def prepare(x: Union[Tensor, np.ndarray], cfg: AugmentConfig) -> np.ndarray:
    """
    Chaîne d'évaluation: redimensionnement puis normalisation, sans aléa.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return normalize(resize(data, *cfg.resolution), cfg.mean, cfg.std)
