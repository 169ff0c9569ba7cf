"""
Module des pertes: triplet à minage difficile et entropie croisée lissée.
"""
from losses.criterion import (
    LossConfig,
    LossReport,
    MiningResult,
    batch_hard,
    cross_entropy,
    pairwise_distances,
    smooth_targets,
    total_loss,
    triplet_loss,
)
