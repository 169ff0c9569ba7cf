"""
Échantillonneur PK: P identités x K images par lot.
"""
from typing import Any, Dict, List, Mapping, Sequence, Tuple
import logging
import math

import numpy as np

import config
from errors import ConfigError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


def pk_next(groups: Mapping[int, Sequence[int]], P: int, K: int,
            rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tire un lot d'indices.

    Les P identités sont tirées sans remise. Une identité d'au moins K
    images en donne K sans remise; une identité plus petite donne toutes
    ses images puis complète avec remise.

    Args:
        groups: Classe -> indices d'échantillons
        P: Identités par lot
        K: Échantillons par identité
        rng: Générateur (flux séquentiel unique)

    Returns:
        (indices [P·K], classes [P·K])
    """
    keys = sorted(groups)
    if len(keys) < P:
        raise ConfigError(f"{len(keys)} identités d'entraînement pour P={P}", key="sampler.P")
    chosen = rng.choice(len(keys), size=P, replace=False)
    indices, labels = [], []
    for k in chosen:
        label = keys[int(k)]
        pool = np.asarray(groups[label], dtype=np.int64)
        if len(pool) >= K:
            picked = rng.choice(pool, size=K, replace=False)
        else:
            extra = rng.choice(pool, size=K - len(pool), replace=True)
            picked = np.concatenate([rng.permutation(pool), extra])
        indices.append(picked)
        labels.append(np.full(K, label, dtype=np.int64))
    return np.concatenate(indices), np.concatenate(labels)


class PKSampler:
    """
    Échantillonneur PK à état sérialisable.
    """

    def __init__(self, groups: Mapping[int, Sequence[int]], P: int, K: int, seed: int = 0):
        """
        Initialise l'échantillonneur.

        Args:
            groups: Classe -> indices d'échantillons
            P: Identités par lot
            K: Échantillons par identité
            seed: Graine du flux
        """
        if P < 2 or K < 2:
            raise ConfigError(f"P={P} et K={K} doivent valoir au moins 2", key="sampler.P")
        if len(groups) < P:
            raise ConfigError(f"{len(groups)} identités d'entraînement pour P={P}", key="sampler.P")
        self.groups: Dict[int, List[int]] = {k: list(v) for k, v in groups.items()}
        self.P = P
        self.K = K
        self.rng = np.random.default_rng(seed)
        self.n_images = sum(len(v) for v in self.groups.values())
        logger.info(f"PKSampler initialisé: {len(self.groups)} identités, {self.n_images} images, P={P}, K={K}")

    @property
    def batch_size(self) -> int:
        return self.P * self.K

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.n_images / self.batch_size)

    def next_batch(self) -> Tuple[np.ndarray, np.ndarray]:
        return pk_next(self.groups, self.P, self.K, self.rng)

    def get_state(self) -> Dict[str, Any]:
        return self.rng.bit_generator.state

    def set_state(self, state: Dict[str, Any]) -> None:
        self.rng.bit_generator.state = state
