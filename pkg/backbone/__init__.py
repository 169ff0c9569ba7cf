"""
Module du backbone résiduel multi-branches.
"""
from backbone.resnet import (
    BRANCH_ORDER,
    PART_COUNTS,
    Backbone,
    BackboneConfig,
    FeatureMap,
    build_backbone,
    closed_form_param_count,
    forward,
    horizontal_split,
)
