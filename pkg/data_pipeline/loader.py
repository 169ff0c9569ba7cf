"""
Chargement parallèle des lots d'entraînement.
"""
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence
import logging
import threading

import numpy as np

import config
from autodiff import Tensor
from data_pipeline.augment import AugmentConfig, augment
from data_pipeline.images import decode_image, resize
from data_pipeline.manifest import Manifest
from data_pipeline.sampler import PKSampler
from errors import ContractError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


@dataclass
class Batch:
    """
    Lot d'entraînement de P·K images.
    """
    images: Tensor
    labels: np.ndarray
    indices: np.ndarray


class BatchLoader:
    """
    Décode et augmente les lots d'un échantillonneur PK.

    La composition des lots vient du flux séquentiel de l'échantillonneur; le
    générateur d'augmentation de chaque image dérive de (graine, pas, position),
    donc le résultat ne dépend pas de l'ordonnancement des fils.
    """

    def __init__(
        self,
        manifest: Manifest,
        sampler: PKSampler,
        aug_cfg: AugmentConfig,
        seed: int = 0,
        threads: int = config.APP_CONFIG["threads"],
        dtype: np.dtype = np.float32,
        cache_size: Optional[int] = None
    ):
        """
        Initialise le chargeur.

        Args:
            manifest: Manifeste des images
            sampler: Échantillonneur PK
            aug_cfg: Configuration des augmentations
            seed: Graine des augmentations
            threads: Nombre de fils de décodage
            dtype: Type scalaire des lots
            cache_size: Nombre d'images redimensionnées gardées en mémoire (LRU);
                P·K·cache_batches par défaut, 0 désactive le cache
        """
        self.manifest = manifest
        self.sampler = sampler
        self.aug_cfg = aug_cfg
        self.seed = seed
        self.threads = max(1, int(threads))
        self.dtype = np.dtype(dtype)
        if cache_size is None:
            cache_size = sampler.batch_size * config.DATA_CONFIG["cache_batches"]
        if cache_size < 0:
            raise ContractError(f"taille de cache négative: {cache_size}")
        self.cache_size = int(cache_size)
        self._cache: "OrderedDict[int, np.ndarray]" = OrderedDict()
        self._lock = threading.Lock()
        logger.info(f"BatchLoader initialisé avec {self.threads} fil(s), cache de {self.cache_size} images")

    def _resized(self, index: int) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(index)
            if cached is not None:
                self._cache.move_to_end(index)
        if cached is not None:
            return cached
        image = resize(decode_image(self.manifest.path_of(index)).data, *self.aug_cfg.resolution)
        if self.cache_size == 0:
            return image
        with self._lock:
            self._cache[index] = image
            self._cache.move_to_end(index)
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return image

    def _load(self, step: int, slot: int, index: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, step, slot])
        return augment(self._resized(int(index)), self.aug_cfg, rng).astype(self.dtype)

    def load(self, indices: Sequence[int], step: int) -> np.ndarray:
        """
        Charge et augmente des images, dans l'ordre des indices.
        """
        if self.threads == 1:
            images = [self._load(step, slot, idx) for slot, idx in enumerate(indices)]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                images = list(pool.map(lambda item: self._load(step, *item), enumerate(indices)))
        return np.stack(images)

    def next_batch(self, step: int) -> Batch:
        """
        Tire le lot suivant de l'échantillonneur et le charge.

        Args:
            step: Pas d'entraînement (dérivation des générateurs d'augmentation)

        Returns:
            Lot prêt pour le modèle
        """
        indices, labels = self.sampler.next_batch()
        try:
            images = self.load(indices, step)
        except Exception as e:
            logger.error(f"Erreur lors du chargement du lot du pas {step}: {str(e)}")
            raise
        return Batch(Tensor(images, dtype=self.dtype), labels, indices)
