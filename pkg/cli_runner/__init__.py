"""
Module de la ligne de commande: configuration, entraînement, points de sauvegarde et commandes.
"""
from cli_runner.run_config import SCHEMA, RunConfig, format_value, parse_config, parse_value, validate
from cli_runner.checkpoint import (
    Checkpoint,
    capture,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    read_checkpoint,
    restore,
    save_checkpoint,
)
from cli_runner.trainer import LOG_COLUMNS, Trainer, split_for
from cli_runner.commands import cmd_compare, cmd_eval, cmd_heatmap, cmd_synth, cmd_train, load_model
