"""
Point d'entrée de reid-forge: train, eval, synth, heatmap, compare.
"""
from typing import List, Optional
import argparse
import logging
import sys

import config
from cli_runner import cmd_compare, cmd_eval, cmd_heatmap, cmd_synth, cmd_train, parse_config
from data_pipeline import load_manifest
from errors import CheckpointError, DecodeError, NumericError, ParseError, ReIDError

# Configuration du logging
logging.basicConfig(
    level=config.LOG_CONFIG["level"],
    format=config.LOG_CONFIG["format"],
    filename=config.LOG_CONFIG["file"]
)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="run_reid", description="Ré-identification animale de bout en bout")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="entraîner un modèle")
    train.add_argument("--config", help="fichier `key = value`")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="surcharge (répétable)")
    train.add_argument("--data", required=True, help="manifeste CSV")
    train.add_argument("--out", required=True, help="dossier de sortie")
    train.add_argument("--resume", help="point de sauvegarde à reprendre")

    evaluate = sub.add_parser("eval", help="évaluer un point de sauvegarde")
    evaluate.add_argument("--ckpt", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--seed", type=int, help="graine de la partition")
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--sanity", action="store_true", help="évaluer sur les identités d'entraînement")
    evaluate.add_argument("--plot", action="store_true", help="exporter la courbe CMC (HTML)")

    synth = sub.add_parser("synth", help="générer un corpus synthétique")
    synth.add_argument("--out", required=True)
    synth.add_argument("--ids", type=int, default=config.SYNTH_CONFIG["n_ids"])
    synth.add_argument("--imgs", type=int, default=config.SYNTH_CONFIG["imgs_per_id"])
    synth.add_argument("--resolution", type=int, default=config.SYNTH_CONFIG["resolution"])
    synth.add_argument("--seed", type=int, default=0)

    heat = sub.add_parser("heatmap", help="cartes de chaleur du backbone")
    heat.add_argument("--ckpt", required=True)
    heat.add_argument("--out", help="dossier de sortie (à côté des images par défaut)")
    heat.add_argument("files", nargs="+")

    compare = sub.add_parser("compare", help="comparer des rapports de métriques")
    compare.add_argument("--reference", required=True)
    compare.add_argument("--out", help="table CSV de sortie")
    compare.add_argument("candidates", nargs="+")
    return parser


def run(args: argparse.Namespace) -> None:
    if args.command == "train":
        cfg = None
        if args.config or args.set or not args.resume:
            cfg = parse_config(args.config, args.set)
        cmd_train(cfg, load_manifest(args.data), args.out, resume=args.resume)
    elif args.command == "eval":
        cmd_eval(args.ckpt, load_manifest(args.data), args.out, seed=args.seed, sanity=args.sanity, plot=args.plot)
    elif args.command == "synth":
        cmd_synth(args.out, args.ids, args.imgs, args.resolution, args.seed)
    elif args.command == "heatmap":
        cmd_heatmap(args.ckpt, args.files, args.out)
    elif args.command == "compare":
        cmd_compare(args.reference, args.candidates, args.out)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Fonction principale: exécute une commande et renvoie le code de sortie.
    """
    args = build_parser().parse_args(argv)
    logger.info(f"Commande {args.command} démarrée")
    try:
        run(args)
    except NumericError as e:
        logger.error(f"Erreur numérique: {str(e)}")
        print(f"erreur numérique: {e}", file=sys.stderr)
        return config.EXIT_CODES["numeric"]
    except (OSError, DecodeError, ParseError, CheckpointError) as e:
        logger.error(f"Erreur d'entrée/sortie: {str(e)}")
        print(f"erreur d'entrée/sortie: {e}", file=sys.stderr)
        return config.EXIT_CODES["io"]
    except ReIDError as e:
        logger.error(f"Erreur de configuration: {str(e)}")
        print(f"erreur de configuration: {e}", file=sys.stderr)
        return config.EXIT_CODES["config"]
    logger.info(f"Commande {args.command} terminée")
    return config.EXIT_CODES["ok"]


if __name__ == "__main__":
    sys.exit(main())
