"""
Commandes de la ligne de commande: train, eval, synth, heatmap, compare.
"""
from pathlib import Path
from typing import List, Optional, Sequence, Union
import logging
import os

import numpy as np
import pandas as pd

import config
from cli_runner.checkpoint import read_checkpoint, restore
from cli_runner.run_config import RunConfig, parse_config
from cli_runner.trainer import Trainer, split_for
from data_pipeline import (
    Manifest,
    decode_image,
    prepare,
    query_gallery,
    split_report,
    synth_generate,
    write_split_report,
)
from errors import ConfigError, ContractError, SplitError
from evaluation import (
    MetricsReport,
    compare_reports,
    evaluate,
    extract_embeddings,
    heatmap,
    heatmap_path,
    write_cmc_plot,
    write_heatmap,
    write_metrics_report,
    write_per_query_csv,
)
from reid_head import ReIDModel

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


def load_model(ckpt_path: Union[str, Path]):
    """
    Reconstruit un modèle depuis un point de sauvegarde.

    Returns:
        (modèle en mode évaluation, configuration, méta-données)
    """
    ckpt = read_checkpoint(ckpt_path)
    cfg = parse_config(text=ckpt.config_text)
    model = ReIDModel(cfg.backbone_config(), cfg.head_config(ckpt.meta.get("num_classes")), cfg.seed)
    meta = restore(ckpt, model)
    model.eval()
    return model, cfg, meta


def cmd_train(
    cfg: Optional[RunConfig],
    manifest: Manifest,
    out_dir: Union[str, Path],
    resume: Optional[Union[str, Path]] = None
) -> Path:
    """
    Entraîne un modèle et écrit journal et points de sauvegarde.

    Args:
        cfg: Configuration (None: reprise avec la configuration du point de sauvegarde)
        manifest: Manifeste du corpus
        out_dir: Dossier de sortie
        resume: Point de sauvegarde à reprendre

    Returns:
        Chemin du point de sauvegarde final
    """
    ckpt = read_checkpoint(resume) if resume is not None else None
    if cfg is None:
        if ckpt is None:
            raise ContractError("configuration ou point de sauvegarde requis")
        cfg = parse_config(text=ckpt.config_text)
    elif ckpt is not None and parse_config(text=ckpt.config_text) != cfg:
        raise ConfigError(f"la configuration diffère de celle de {resume}")

    trainer = Trainer(cfg, manifest, out_dir)
    if ckpt is not None:
        trainer.resume(ckpt)
    final = trainer.run()
    print(f"Entraînement terminé: {trainer.step} pas, point de sauvegarde {final}")
    return final


def cmd_eval(
    ckpt_path: Union[str, Path],
    manifest: Manifest,
    out_dir: Union[str, Path],
    seed: Optional[int] = None,
    sanity: bool = False,
    plot: bool = False
) -> MetricsReport:
    """
    Évalue un point de sauvegarde selon le protocole requêtes / galerie.

    Args:
        ckpt_path: Point de sauvegarde
        manifest: Manifeste du corpus
        out_dir: Dossier des rapports
        seed: Graine de la partition (celle de l'entraînement par défaut)
        sanity: Évaluer sur les identités d'entraînement (rapport marqué)
        plot: Exporter la courbe CMC en HTML

    Returns:
        Rapport de métriques
    """
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    model, cfg, meta = load_model(ckpt_path)
    split_seed = meta.get("split_seed", cfg.seed) if seed is None else seed
    split = split_for(cfg, manifest, split_seed)

    trained = set(meta.get("train_ids", []))
    if sanity:
        queries, gallery, _, _ = query_gallery(
            manifest, split.train_ids, split.queries_per_id, np.random.default_rng([split_seed, 1])
        )
        if not queries:
            raise SplitError("aucune identité d'entraînement ne peut fournir de requêtes")
        split.queries, split.gallery = queries, gallery
        logger.warning("Évaluation de contrôle sur les identités d'entraînement")
    else:
        leaked = [i for i in split.test_ids if i in trained]
        if leaked:
            raise ContractError(f"{len(leaked)} identités de test vues à l'entraînement (ex. {leaked[0]})")

    aug_cfg = cfg.augment_config()
    batch_size = cfg["eval.batch_size"]
    query_emb, query_ids = extract_embeddings(model, manifest, split.queries, aug_cfg, batch_size)
    gallery_emb, gallery_ids = extract_embeddings(model, manifest, split.gallery, aug_cfg, batch_size)
    report = evaluate(query_emb, query_ids, gallery_emb, gallery_ids, config.EVAL_CONFIG["ranks"])
    report.sanity = sanity

    write_metrics_report(report, out_dir / config.EVAL_CONFIG["metrics_file"])
    write_per_query_csv(report, [manifest.entries[i][0] for i in split.queries],
                        out_dir / config.EVAL_CONFIG["per_query_file"])
    write_split_report(split_report(manifest, split), out_dir / config.EVAL_CONFIG["split_report_file"])
    if plot:
        write_cmc_plot(report, out_dir / config.EVAL_CONFIG["cmc_plot_file"], title=Path(ckpt_path).stem)

    ranks = ", ".join(f"R{k} {v:.4f}" for k, v in sorted(report.rank_k.items()))
    print(f"{ranks}, mAP {report.mAP:.4f} ({report.queries} requêtes, {report.skipped} ignorées)")
    return report


def cmd_synth(
    out_dir: Union[str, Path],
    n_ids: int = config.SYNTH_CONFIG["n_ids"],
    imgs_per_id: int = config.SYNTH_CONFIG["imgs_per_id"],
    resolution: int = config.SYNTH_CONFIG["resolution"],
    seed: int = 0
) -> Manifest:
    """
    Génère un corpus synthétique et son manifeste.
    """
    manifest = synth_generate(n_ids, imgs_per_id, resolution, seed, out_dir)
    print(f"{len(manifest)} images générées dans {out_dir}")
    return manifest


def cmd_heatmap(
    ckpt_path: Union[str, Path],
    files: Sequence[Union[str, Path]],
    out_dir: Optional[Union[str, Path]] = None
) -> List[Path]:
    """
    Écrit une carte de chaleur `.heat.pgm` par image.

    Args:
        ckpt_path: Point de sauvegarde
        files: Images PPM ou ART
        out_dir: Dossier de sortie (à côté de chaque image par défaut)

    Returns:
        Chemins écrits
    """
    missing = [str(f) for f in files if not Path(f).is_file()]
    if missing:
        raise FileNotFoundError(f"fichier introuvable: {missing[0]}")
    model, cfg, _ = load_model(ckpt_path)
    aug_cfg = cfg.augment_config()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    written = []
    for file in files:
        sample = prepare(decode_image(file), aug_cfg)
        written.append(write_heatmap(heatmap(model, sample), heatmap_path(file, out_dir)))
    return written


def cmd_compare(
    reference: Union[str, Path],
    candidates: Sequence[Union[str, Path]],
    out_file: Optional[Union[str, Path]] = None
) -> pd.DataFrame:
    """
    Compare des rapports de métriques à une référence.
    """
    table = compare_reports(reference, candidates)
    if out_file is not None:
        table.to_csv(out_file, index=False, lineterminator="\n")
    print(table.to_string(index=False))
    return table
