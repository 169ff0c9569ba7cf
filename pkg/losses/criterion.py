"""
Pertes de ré-identification: triplet à minage difficile, entropie croisée lissée et combinaison.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

import config
from autodiff import Tape, Tensor, ops
from errors import ConfigError, ContractError, MiningError, ShapeError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)

# Terme ajouté sous la racine quand un gradient est requis
DISTANCE_EPS = 1e-12


@dataclass
class LossConfig:
    """
    Configuration des pertes.
    """
    margin: float = 0.3
    epsilon: float = 0.1
    soft_margin: bool = False
    label_smoothing: bool = True
    w_tp: float = 1.0
    w_ce: float = 1.0

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError(f"marge négative: {self.margin}", key="loss.margin")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon {self.epsilon} hors de [0,1)", key="loss.epsilon")
        if self.w_tp < 0 or self.w_ce < 0:
            raise ConfigError(f"poids négatifs: ({self.w_tp}, {self.w_ce})", key="loss.w_tp")
        if self.w_tp == 0 and self.w_ce == 0:
            raise ConfigError("les deux poids sont nuls", key="loss.w_tp")


@dataclass
class MiningResult:
    """
    Triplets difficiles choisis pour chaque ancre.
    """
    d_pos: Tensor
    d_neg: Tensor
    pos_index: np.ndarray
    neg_index: np.ndarray


@dataclass
class LossReport:
    """
    Détail des termes d'une perte totale.
    """
    total: float
    triplet: float
    cross_entropy: float
    triplet_terms: List[float] = field(default_factory=list)
    ce_terms: List[float] = field(default_factory=list)

    def as_row(self) -> Dict[str, float]:
        return {"loss_total": self.total, "loss_tp": self.triplet, "loss_ce": self.cross_entropy}


def pairwise_distances(e: Tensor) -> Tensor:
    """
    Distances euclidiennes entre toutes les lignes.

    Forme développée |a|² + |b|² - 2a·b, tronquée à 0 avant la racine; la
    diagonale vaut exactement 0.

    Args:
        e: Embeddings [N,D]

    Returns:
        Matrice [N,N]
    """
    if e.ndim != 2 or e.shape[0] < 1:
        raise ContractError(f"embeddings [N,D] avec N >= 1 attendus: {e.shape}")
    n = e.shape[0]
    squared = ops.reduce("sum", ops.mul(e, e), 1)
    gram = ops.matmul(e, ops.transpose(e, (1, 0)))
    d2 = ops.sub(
        ops.add(ops.expand(ops.reshape(squared, (n, 1)), (n, n)),
                ops.expand(ops.reshape(squared, (1, n)), (n, n))),
        ops.mul(gram, 2.0),
    )
    d2 = ops.clamp_min(d2, 0.0)
    if Tape.active() is not None and e.requires_grad:
        d2 = ops.add(d2, DISTANCE_EPS)
    off_diagonal = Tensor(1.0 - np.eye(n, dtype=e.data.dtype))
    return ops.mul(ops.sqrt(d2), off_diagonal)


def batch_hard(distances: Tensor, labels: Sequence) -> MiningResult:
    """
    Choisit pour chaque ancre le positif le plus éloigné et le négatif le plus proche.

    Les égalités sont tranchées par l'indice le plus bas.

    Args:
        distances: Matrice [N,N]
        labels: Identités [N]

    Returns:
        Résultat du minage
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if distances.shape != (n, n):
        raise ShapeError(f"distances {distances.shape} pour {n} étiquettes")
    identities, counts = np.unique(labels, return_counts=True)
    if len(identities) < 2:
        raise MiningError("le lot ne contient qu'une identité")
    if np.any(counts < 2):
        lonely = identities[counts < 2].tolist()
        raise MiningError(f"identités avec un seul échantillon: {lonely}")

    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(n, dtype=bool)
    values = distances.data
    pos_index = np.argmax(np.where(positive, values, -np.inf), axis=1)
    neg_index = np.argmin(np.where(same, np.inf, values), axis=1)
    return MiningResult(
        d_pos=ops.pick(distances, pos_index),
        d_neg=ops.pick(distances, neg_index),
        pos_index=pos_index,
        neg_index=neg_index,
    )


def triplet_loss(mr: MiningResult, cfg: LossConfig) -> Tensor:
    """
    Perte triplet moyenne sur les ancres.

    Marge fixe: max(0, m + d_pos - d_neg); marge souple: ln(1 + exp(d_pos - d_neg)).
    """
    gap = ops.sub(mr.d_pos, mr.d_neg)
    if cfg.soft_margin:
        per_anchor = ops.softplus(gap)
    else:
        per_anchor = ops.relu(ops.add(gap, cfg.margin))
    return ops.reduce("mean", per_anchor)


def smooth_targets(y: Sequence[int], n_classes: int, epsilon: float,
                   dtype: np.dtype = np.float32) -> Tensor:
    """
    Cibles lissées: 1 - ε pour la vraie classe, ε / (N_c - 1) ailleurs.

    Args:
        y: Indices de classe [N]
        n_classes: Nombre de classes N_c
        epsilon: Lissage (0 pour des cibles one-hot)
        dtype: Type scalaire

    Returns:
        Cibles [N, N_c]
    """
    y = np.asarray(y, dtype=np.int64)
    if n_classes < 1:
        raise ConfigError(f"nombre de classes invalide: {n_classes}")
    if epsilon > 0 and n_classes < 2:
        raise ConfigError("le lissage exige au moins 2 classes", key="loss.epsilon")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ContractError(f"indices de classe hors de [0, {n_classes})")
    off = epsilon / (n_classes - 1) if n_classes > 1 else 0.0
    q = np.full((y.shape[0], n_classes), off, dtype=dtype)
    q[np.arange(y.shape[0]), y] = 1.0 - epsilon
    return Tensor(q, dtype=dtype)


def cross_entropy(logits: Tensor, q: Tensor) -> Tensor:
    """
    Entropie croisée -mean_i Σ_c q_ic·log softmax(logits)_ic.
    """
    if logits.shape != q.shape:
        raise ShapeError(f"logits {logits.shape} et cibles {q.shape} incompatibles")
    log_p = ops.log_softmax(logits, axis=-1)
    per_sample = ops.reduce("sum", ops.mul(q, log_p), 1)
    return ops.neg(ops.reduce("mean", per_sample))


def _mean_of(terms: List[Tensor]) -> Tensor:
    if len(terms) == 1:
        return terms[0]
    return ops.reduce("mean", ops.concat([ops.reshape(t, (1,)) for t in terms], axis=0))


def total_loss(out, labels: Sequence[int], cfg: LossConfig) -> Tuple[Tensor, LossReport]:
    """
    Combine w_tp·moyenne(triplets par branche) + w_ce·moyenne(entropies par embedding).

    Les triplets portent sur les embeddings globaux de branche avant BNNeck;
    l'entropie croisée porte sur tous les logits.

    Args:
        out: Sorties de la tête (HeadOutput)
        labels: Indices de classe [N]
        cfg: Configuration des pertes

    Returns:
        (perte scalaire, rapport des termes)
    """
    labels = np.asarray(labels, dtype=np.int64)
    triplet_terms = [
        triplet_loss(batch_hard(pairwise_distances(out.pre_bn[i]), labels), cfg)
        for i in out.triplet_indices
    ]
    if not triplet_terms:
        raise ContractError("aucun embedding global pour la perte triplet")
    if not out.logits:
        raise ConfigError("aucun logit: nombre de classes non défini")

    epsilon = cfg.epsilon if cfg.label_smoothing else 0.0
    dtype = out.logits[0].data.dtype
    q = smooth_targets(labels, out.logits[0].shape[1], epsilon, dtype)
    ce_terms = [cross_entropy(logits, q) for logits in out.logits]

    tp_mean = _mean_of(triplet_terms)
    ce_mean = _mean_of(ce_terms)
    total = ops.add(ops.mul(tp_mean, cfg.w_tp), ops.mul(ce_mean, cfg.w_ce))

    report = LossReport(
        total=total.item(),
        triplet=tp_mean.item(),
        cross_entropy=ce_mean.item(),
        triplet_terms=[t.item() for t in triplet_terms],
        ce_terms=[t.item() for t in ce_terms],
    )
    logger.debug(f"Perte totale {report.total:.6f} (triplet {report.triplet:.6f}, ce {report.cross_entropy:.6f})")
    return total, report
