"""
Cartes de chaleur: maximum sur les canaux de la carte globale du backbone.
"""
from pathlib import Path
from typing import Union
import logging

import numpy as np

import config
from autodiff import Tensor, no_grad
from data_pipeline import encode_pgm
from errors import ContractError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)

HEATMAP_SUFFIX = ".heat.pgm"


def channel_max(fmap: np.ndarray) -> np.ndarray:
    """
    Réduit une carte [C,H,W] par maximum sur les canaux.
    """
    if fmap.ndim != 3 or fmap.shape[0] < 1:
        raise ContractError(f"carte [C,H,W] attendue: {fmap.shape}")
    return fmap.max(axis=0)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """
    Ramène dans [0,1]; une carte constante donne des zéros.
    """
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros_like(values, dtype=np.float64)
    return (values.astype(np.float64) - lo) / (hi - lo)


def heatmap(model, sample: Union[Tensor, np.ndarray]) -> np.ndarray:
    """
    Calcule la carte de chaleur d'une image.

    Args:
        model: ReIDModel (passé en mode évaluation)
        sample: Image normalisée [3,H,W]

    Returns:
        Carte [H_f, W_f] dans [0,1]
    """
    data = sample.data if isinstance(sample, Tensor) else np.asarray(sample)
    if data.ndim != 3:
        raise ContractError(f"image [3,H,W] attendue: {data.shape}")
    model.eval()
    dtype = model.backbone.stem_conv.weight.value.data.dtype
    with no_grad():
        maps = model.feature_maps(Tensor(data[None], dtype=dtype))
    fmap = next(f for f in maps if f.branch_tag == "global")
    return minmax_normalize(channel_max(fmap.tensor.data[0]))


def heatmap_path(image_path: Union[str, Path], out_dir: Union[str, Path, None] = None) -> Path:
    image_path = Path(image_path)
    directory = Path(out_dir) if out_dir is not None else image_path.parent
    return directory / f"{image_path.stem}{HEATMAP_SUFFIX}"


def write_heatmap(h: np.ndarray, file: Union[str, Path]) -> Path:
    file = Path(file)
    file.write_bytes(encode_pgm(h))
    logger.info(f"Carte de chaleur {h.shape[0]}x{h.shape[1]} écrite dans {file}")
    return file
