"""
Module d'évaluation: classement, CMC, mAP, rapports et cartes de chaleur.
"""
from evaluation.evaluator import (
    MetricsReport,
    RankingResult,
    cmc,
    compare_reports,
    embed_images,
    evaluate,
    extract_embeddings,
    load_metrics_report,
    mean_ap,
    rank,
    write_cmc_plot,
    write_metrics_report,
    write_per_query_csv,
)
from evaluation.heatmap import channel_max, heatmap, heatmap_path, minmax_normalize, write_heatmap
