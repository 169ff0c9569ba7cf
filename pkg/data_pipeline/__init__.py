"""
Module du pipeline de données: manifestes, partitions, échantillonnage PK, images et augmentations.
"""
from data_pipeline.manifest import Manifest, load_manifest, save_manifest
from data_pipeline.splits import SplitSpec, make_splits, query_gallery, split_report, write_split_report
from data_pipeline.sampler import PKSampler, pk_next
from data_pipeline.images import (
    decode_art,
    decode_image,
    decode_pgm,
    decode_ppm,
    encode_art,
    encode_pgm,
    encode_ppm,
    resize,
    write_ppm,
)
from data_pipeline.augment import AugmentConfig, augment, erase, flip, normalize, prepare, random_erase
from data_pipeline.synth import synth_generate
from data_pipeline.loader import Batch, BatchLoader
