"""
Évaluation de la recherche en galerie: extraction, classement euclidien exact, CMC et mAP.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd
import plotly.graph_objects as go

import config
from autodiff import Tensor, no_grad
from data_pipeline import AugmentConfig, Manifest, decode_image, prepare
from errors import ContractError, MetricsError, ShapeError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


@dataclass
class RankingResult:
    """
    Classement de la galerie pour chaque requête.

    Les distances sont triées par ordre croissant; les égalités sont
    tranchées par indice de galerie croissant.
    """
    order: np.ndarray
    distances: np.ndarray
    query_ids: np.ndarray
    gallery_ids: np.ndarray

    def matches(self) -> np.ndarray:
        return self.gallery_ids[self.order] == self.query_ids[:, None]


@dataclass
class MetricsReport:
    """
    Métriques de recherche.
    """
    rank_k: Dict[int, float]
    mAP: float
    per_query_ap: np.ndarray
    first_match_rank: np.ndarray
    queries: int
    skipped: int
    gallery: int = 0
    cmc_curve: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sanity: bool = False

    def rows(self) -> List[Tuple[str, Union[int, float]]]:
        rows = [(f"rank_{k}", float(v)) for k, v in sorted(self.rank_k.items())]
        rows += [("mAP", float(self.mAP)), ("queries", int(self.queries)),
                 ("skipped", int(self.skipped)), ("gallery", int(self.gallery))]
        if self.sanity:
            rows.append(("sanity", 1))
        return rows


def embed_images(model, images: np.ndarray, batch_size: int = config.EVAL_CONFIG["batch_size"]) -> np.ndarray:
    """
    Calcule les embeddings de test d'un tableau d'images, sans gradient.

    Args:
        model: ReIDModel
        images: Images normalisées [M,3,H,W]
        batch_size: Taille des lots

    Returns:
        Embeddings [M, D_total]
    """
    if batch_size < 1:
        raise ContractError(f"taille de lot invalide: {batch_size}")
    model.eval()
    dtype = model.backbone.stem_conv.weight.value.data.dtype
    rows = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunk = Tensor(np.asarray(images[start:start + batch_size]), dtype=dtype)
            rows.append(model.embed(chunk).data)
    if not rows:
        return np.zeros((0, 0), dtype=dtype)
    return np.concatenate(rows, axis=0)


def extract_embeddings(
    model,
    manifest: Manifest,
    samples: Sequence[int],
    aug_cfg: AugmentConfig,
    batch_size: int = config.EVAL_CONFIG["batch_size"]
) -> Tuple[np.ndarray, List[str]]:
    """
    Extrait les embeddings avant BNNeck d'échantillons du manifeste.

    Args:
        model: ReIDModel (passé en mode évaluation)
        manifest: Manifeste
        samples: Indices d'entrées, ordre conservé
        aug_cfg: Résolution et normalisation (aucune augmentation aléatoire)
        batch_size: Taille des lots

    Returns:
        (embeddings [M, D_total], identités [M])
    """
    images = []
    for index in samples:
        image = decode_image(manifest.path_of(index))
        images.append(prepare(image, aug_cfg))
    stacked = np.stack(images) if images else np.zeros((0, 3) + tuple(aug_cfg.resolution), dtype=np.float32)
    embeddings = embed_images(model, stacked, batch_size)
    logger.info(f"{len(samples)} embeddings extraits")
    return embeddings, [manifest.identity_of(i) for i in samples]


def rank(queries: np.ndarray, gallery: np.ndarray, query_ids: Sequence, gallery_ids: Sequence) -> RankingResult:
    """
    Trie la galerie par distance euclidienne croissante pour chaque requête.

    Args:
        queries: Embeddings de requête [Q,D]
        gallery: Embeddings de galerie [G,D]
        query_ids: Identités des requêtes [Q]
        gallery_ids: Identités de la galerie [G]

    Returns:
        Classement complet
    """
    queries = np.asarray(queries, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.ndim != 2 or gallery.shape[0] == 0:
        raise ContractError("galerie vide")
    if queries.ndim != 2 or queries.shape[1] != gallery.shape[1]:
        raise ShapeError(f"dimensions incompatibles: requêtes {queries.shape}, galerie {gallery.shape}")
    if len(query_ids) != queries.shape[0] or len(gallery_ids) != gallery.shape[0]:
        raise ShapeError("nombre d'identités incohérent avec les embeddings")

    order = np.empty((queries.shape[0], gallery.shape[0]), dtype=np.int64)
    distances = np.empty(order.shape, dtype=np.float64)
    for q, vector in enumerate(queries):
        d = np.sqrt(((gallery - vector) ** 2).sum(axis=1))
        order[q] = np.argsort(d, kind="stable")
        distances[q] = d[order[q]]
    return RankingResult(order, distances, np.asarray(query_ids), np.asarray(gallery_ids))


def _retained(r: RankingResult) -> Tuple[np.ndarray, np.ndarray]:
    matches = r.matches()
    valid = matches.any(axis=1)
    if not valid.any():
        raise MetricsError("aucune requête n'a son identité dans la galerie")
    return matches, valid


def cmc(r: RankingResult, ks: Sequence[int] = tuple(config.EVAL_CONFIG["ranks"])) -> Dict[int, float]:
    """
    Précision rang-k: part des requêtes retenues avec au moins une bonne identité dans le top-k.

    Les requêtes dont l'identité est absente de la galerie sont ignorées.
    """
    matches, valid = _retained(r)
    first = np.argmax(matches[valid], axis=1)
    return {int(k): float(np.mean(first < k)) for k in ks}


def mean_ap(r: RankingResult) -> Tuple[float, np.ndarray]:
    """
    Précision moyenne: AP = (1/R)·Σ_j j / r_j pour les rangs r_1 < ... < r_R des bons éléments.

    Returns:
        (mAP sur les requêtes retenues, AP par requête, NaN si ignorée)
    """
    matches, valid = _retained(r)
    ap = np.full(matches.shape[0], np.nan)
    for q in np.flatnonzero(valid):
        positions = np.flatnonzero(matches[q]) + 1
        ap[q] = float(np.mean(np.arange(1, len(positions) + 1) / positions))
    return float(np.mean(ap[valid])), ap


def evaluate(
    query_emb: np.ndarray,
    query_ids: Sequence,
    gallery_emb: np.ndarray,
    gallery_ids: Sequence,
    ks: Sequence[int] = tuple(config.EVAL_CONFIG["ranks"])
) -> MetricsReport:
    """
    Classe la galerie et calcule CMC et mAP.
    """
    r = rank(query_emb, gallery_emb, query_ids, gallery_ids)
    matches, valid = _retained(r)
    rank_k = cmc(r, ks)
    m_ap, ap = mean_ap(r)
    first = np.where(valid, np.argmax(matches, axis=1) + 1, 0)
    curve_ks = list(range(1, len(gallery_ids) + 1))
    curve = np.array([v for _, v in sorted(cmc(r, curve_ks).items())])
    report = MetricsReport(
        rank_k=rank_k,
        mAP=m_ap,
        per_query_ap=ap,
        first_match_rank=first,
        queries=int(valid.sum()),
        skipped=int((~valid).sum()),
        gallery=len(gallery_ids),
        cmc_curve=curve,
    )
    if report.skipped:
        logger.warning(f"{report.skipped} requêtes ignorées: identité absente de la galerie")
    logger.info(f"Évaluation: rank-1 {rank_k.get(1, float('nan')):.4f}, mAP {m_ap:.4f} sur {report.queries} requêtes")
    return report


def write_metrics_report(report: MetricsReport, file: Union[str, Path]) -> Path:
    """
    Écrit le rapport `metric,value`.
    """
    file = Path(file)
    frame = pd.DataFrame(report.rows(), columns=["metric", "value"])
    frame.to_csv(file, index=False, lineterminator="\n")
    logger.info(f"Rapport de métriques sauvegardé dans {file}")
    return file


def write_per_query_csv(report: MetricsReport, query_paths: Sequence[str], file: Union[str, Path]) -> Path:
    """
    Écrit `query_path,ap,first_match_rank` (rang 1-indexé, vide si ignorée).
    """
    file = Path(file)
    if len(query_paths) != len(report.per_query_ap):
        raise ContractError("nombre de chemins de requête incohérent avec le rapport")
    frame = pd.DataFrame({
        "query_path": list(query_paths),
        "ap": report.per_query_ap,
        "first_match_rank": pd.array([int(r) if r > 0 else None for r in report.first_match_rank], dtype="Int64"),
    })
    frame.to_csv(file, index=False, lineterminator="\n")
    return file


def write_cmc_plot(report: MetricsReport, file: Union[str, Path], title: str = "CMC") -> Path:
    """
    Exporte la courbe CMC en HTML interactif.
    """
    file = Path(file)
    ranks = np.arange(1, len(report.cmc_curve) + 1)
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=ranks, y=report.cmc_curve, mode="lines+markers", name="CMC"))
    fig.update_layout(
        title=f"{title} (mAP {report.mAP:.4f})",
        xaxis_title="rang",
        yaxis_title="précision",
        yaxis_range=[0, 1.05],
        template="plotly_white",
    )
    fig.write_html(str(file), include_plotlyjs="cdn")
    logger.info(f"Courbe CMC exportée dans {file}")
    return file


def load_metrics_report(file: Union[str, Path]) -> Dict[str, float]:
    frame = pd.read_csv(file)
    return {str(k): float(v) for k, v in zip(frame["metric"], frame["value"])}


def compare_reports(reference: Union[str, Path], candidates: Sequence[Union[str, Path]]) -> pd.DataFrame:
    """
    Compare R1 et mAP de rapports candidats à une référence.

    Chaque écart est marqué `+` (amélioration), `-` (dégradation) ou `=`.

    Returns:
        DataFrame run,rank_1,mAP,d_rank_1,d_mAP,mark_rank_1,mark_mAP
    """
    base = load_metrics_report(reference)

    def mark(delta: float) -> str:
        return "+" if delta > 0 else "-" if delta < 0 else "="

    rows = []
    for candidate in candidates:
        path = Path(candidate)
        metrics = load_metrics_report(path)
        d_r1 = metrics["rank_1"] - base["rank_1"]
        d_map = metrics["mAP"] - base["mAP"]
        rows.append({
            "run": path.parent.name or path.stem,
            "rank_1": metrics["rank_1"],
            "mAP": metrics["mAP"],
            "d_rank_1": d_r1,
            "d_mAP": d_map,
            "mark_rank_1": mark(d_r1),
            "mark_mAP": mark(d_map),
        })
    return pd.DataFrame(rows, columns=["run", "rank_1", "mAP", "d_rank_1", "d_mAP", "mark_rank_1", "mark_mAP"])
