"""
Vérification des gradients par différences finies centrées.
"""
from typing import Callable, Optional, Sequence
import logging

import numpy as np

import config
from autodiff.tensor import Tape, Tensor

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    h: float = config.AUTODIFF_CONFIG["fd_step"],
    indices: Optional[Sequence[int]] = None
) -> np.ndarray:
    """
    Estime le gradient d'une fonction scalaire par différences centrées.

    Args:
        fn: Fonction sans argument recalculant la perte (hors bande)
        tensor: Tenseur perturbé en place
        h: Pas de perturbation
        indices: Indices linéaires à perturber (tous si None)

    Returns:
        Gradient numérique de même forme que le tenseur (0 hors des indices)
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        grad[i] = (plus - minus) / (2 * h)
    return grad.reshape(tensor.shape)


def analytic_gradient(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                      precision: int = 64) -> list:
    """
    Calcule les gradients analytiques par rétropropagation.

    Args:
        fn: Fonction sans argument calculant la perte
        tensors: Tenseurs (requires_grad) dont on veut le gradient
        precision: Précision de la bande

    Returns:
        Liste de gradients (copies)
    """
    for t in tensors:
        t.zero_grad()
    with Tape(precision) as tape:
        loss = fn()
    tape.backward(loss)
    return [np.array(t.grad, dtype=np.float64) for t in tensors]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """
    Erreur relative en norme: |a - n| / max(|a| + |n|, floor).
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor)
    return float(diff / scale)
