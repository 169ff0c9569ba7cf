"""
Partitions disjointes par identité et construction requêtes / galerie.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union
import logging

import numpy as np
import pandas as pd

import config
from data_pipeline.manifest import Manifest
from errors import ConfigError, SplitError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


@dataclass
class SplitSpec:
    """
    Partition d'un manifeste.

    Les échantillons sont des indices d'entrées du manifeste.
    """
    train_ids: List[str]
    test_ids: List[str]
    train: List[int]
    queries: List[int]
    gallery: List[int]
    queries_per_id: int = 2
    seed: int = 0
    excluded_ids: List[str] = field(default_factory=list)
    distractor_ids: List[str] = field(default_factory=list)

    def class_index(self) -> Dict[str, int]:
        """
        Indices de classe denses des identités d'entraînement.
        """
        return {identity: i for i, identity in enumerate(self.train_ids)}


def query_gallery(manifest: Manifest, identities: Sequence[str], queries_per_id: int,
                  rng: np.random.Generator, keep_distractors: bool = False):
    """
    Tire les requêtes de chaque identité; le reste part en galerie.

    Args:
        manifest: Manifeste source
        identities: Identités à répartir, dans l'ordre de tirage
        queries_per_id: Requêtes par identité
        rng: Générateur consommé dans l'ordre des identités
        keep_distractors: Garder en galerie les identités trop petites

    Returns:
        (requêtes, galerie, identités exclues, identités distractrices)
    """
    grouped = manifest.samples_by_identity()
    queries, gallery, excluded, distractors = [], [], [], []
    for identity in identities:
        samples = grouped[identity]
        if len(samples) < queries_per_id + 1:
            if keep_distractors:
                gallery.extend(samples)
                distractors.append(identity)
            else:
                excluded.append(identity)
            continue
        chosen = set(rng.choice(len(samples), size=queries_per_id, replace=False).tolist())
        queries.extend(s for i, s in enumerate(samples) if i in chosen)
        gallery.extend(s for i, s in enumerate(samples) if i not in chosen)
    return queries, gallery, excluded, distractors


def make_splits(
    m: Manifest,
    train_fraction: float = 0.5,
    queries_per_id: int = 2,
    seed: int = 0,
    keep_distractors: bool = False
) -> SplitSpec:
    """
    Partitionne les identités en entraînement / test puis tire requêtes et galerie.

    Sans colonne de partition, les identités sont mélangées sous la graine;
    avec, la partition publiée est respectée.

    Args:
        m: Manifeste
        train_fraction: Part des identités en entraînement
        queries_per_id: Requêtes tirées par identité de test
        seed: Graine du mélange et du tirage des requêtes
        keep_distractors: Identités de test sans assez d'images gardées en galerie

    Returns:
        Partition
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"fraction {train_fraction} hors de (0,1)", key="data.train_fraction")
    if queries_per_id < 1:
        raise ConfigError(f"requêtes par identité invalides: {queries_per_id}", key="data.queries_per_id")

    rng = np.random.default_rng(seed)
    identities = m.identities

    if m.splits is not None:
        side: Dict[str, str] = {}
        for (_, identity), split in zip(m.entries, m.splits):
            if side.setdefault(identity, split) != split:
                raise SplitError(f"l'identité {identity} apparaît dans les deux partitions")
        train_ids = [i for i in identities if side[i] == "train"]
        test_ids = [i for i in identities if side[i] == "test"]
    else:
        order = rng.permutation(len(identities))
        n_train = int(round(train_fraction * len(identities)))
        train_ids = [identities[i] for i in order[:n_train]]
        test_ids = [identities[i] for i in order[n_train:]]

    if not train_ids or not test_ids:
        raise SplitError(f"partition vide: {len(train_ids)} identités d'entraînement, {len(test_ids)} de test")

    grouped = m.samples_by_identity()
    train = sorted(s for identity in train_ids for s in grouped[identity])
    queries, gallery, excluded, distractors = query_gallery(m, test_ids, queries_per_id, rng, keep_distractors)
    for identity in excluded:
        logger.info(f"Identité {identity} exclue du test: moins de {queries_per_id + 1} images")
    if not queries:
        raise SplitError("aucune identité de test ne peut fournir de requêtes")

    kept_test = [i for i in test_ids if i not in set(excluded)]
    logger.info(
        f"Partition: {len(train_ids)} identités d'entraînement, {len(kept_test)} de test, "
        f"{len(queries)} requêtes, {len(gallery)} images de galerie"
    )
    return SplitSpec(
        train_ids=train_ids,
        test_ids=kept_test,
        train=train,
        queries=queries,
        gallery=gallery,
        queries_per_id=queries_per_id,
        seed=seed,
        excluded_ids=excluded,
        distractor_ids=distractors,
    )


def split_report(m: Manifest, split: SplitSpec) -> pd.DataFrame:
    """
    Compte identités et images par sous-ensemble.

    Returns:
        DataFrame `subset,#ID,#Img` (train, query, gallery)
    """
    def count_ids(samples: Sequence[int]) -> int:
        return len({m.identity_of(i) for i in samples})

    rows = [
        {"subset": name, "#ID": count_ids(samples), "#Img": len(samples)}
        for name, samples in (("train", split.train), ("query", split.queries), ("gallery", split.gallery))
    ]
    return pd.DataFrame(rows, columns=["subset", "#ID", "#Img"])


def write_split_report(report: pd.DataFrame, file: Union[str, Path]) -> Path:
    file = Path(file)
    report.to_csv(file, index=False, lineterminator="\n")
    return file
