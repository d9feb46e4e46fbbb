"""
Main script for the two-stage federated EHR generator.

The program is split into modules by concern:
- lib_nn: dense/LSTM layers, losses, Adam and checkpoints on numpy
- lib_data: binary sequence tensors, synthetic hospital cohorts, splits, tensor files
- lib_stage1: binary autoencoder and matched-averaging of encoders
- lib_stage2: temporal conditional VAE and distribution-aware aggregation
- lib_federation: hospital clients, the server and the round orchestration
- lib_eval: fidelity, utility and privacy metrics plus report files
- lib_runner: config, run folders and the command implementations
"""

import argparse
import logging
import sys

from lib_data.tensorFile import FormatError
from lib_federation.federationConfig import MODES
from lib_eval.privacy import ATTACKERS
from lib_runner.commands import cmdCompare, cmdEvaluate, cmdGenerateData, cmdRun, cmdScale
from lib_runner.config import (
    DEFAULT_CONFIG_PATH,
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_OK,
    EXIT_RUNTIME_ERROR,
    ConfigError,
    DataError,
    PipelineError,
    loadRunConfig,
)

logger = logging.getLogger("fedgen")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def buildParser():
    parser = argparse.ArgumentParser(prog="fedgen", description="Two-stage federated EHR sequence generator")
    parser.add_argument("--config", default=None, help=f"INI run configuration (e.g. {DEFAULT_CONFIG_PATH})")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate-data", help="write the synthetic hospital cohorts")
    generate.add_argument("--out", default=None, help="data folder (default [run] data_dir)")

    run = sub.add_parser("run", help="train, generate and evaluate one mode")
    run.add_argument("--mode", choices=MODES, default=None)
    run.add_argument("--data", default=None)
    run.add_argument("--out", default=None)

    evaluate = sub.add_parser("evaluate", help="score a synthetic tensor file against a real one")
    evaluate.add_argument("real")
    evaluate.add_argument("syn")
    evaluate.add_argument("--out", default="metrics.csv")
    evaluate.add_argument("--attacker", choices=ATTACKERS, default="threshold")

    compare = sub.add_parser("compare", help="mean/std table over run directories")
    compare.add_argument("runs", nargs="+")
    compare.add_argument("--out", default="summary.csv")

    scale = sub.add_parser("scale", help="sweep the number of hospitals")
    scale.add_argument("--hospitals", required=True, help="comma-separated counts, e.g. 2,3,5")
    scale.add_argument("--mode", choices=MODES, default=None)
    scale.add_argument("--data", default=None)
    scale.add_argument("--out", default=None)
    return parser


def parseCounts(text):
    try:
        counts = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--hospitals must be comma-separated integers, got '{text}'")
    if not counts or min(counts) < 1:
        raise ConfigError(f"--hospitals must list counts >= 1, got '{text}'")
    return counts


def printSummary(title, lines):
    print(f"\n{'='*60}")
    print(f"{title}:")
    for line in lines:
        print(f"  {line}")
    print(f"{'='*60}")


def dispatch(args):
    if args.command == "evaluate":
        rows = cmdEvaluate(args.real, args.syn, args.out, seed=args.seed or 0, attacker=args.attacker)
        printSummary("Evaluation Summary", [f"{metric}: {value:.4f}" for metric, _, value in rows] + [f"Written: {args.out}"])
        return
    if args.command == "compare":
        table = cmdCompare(args.runs, args.out)
        print(table)
        printSummary("Compare Summary", [f"Runs: {len(args.runs)}", f"Written: {args.out}"])
        return

    config = loadRunConfig(args.config, overrides={("run", "seed"): args.seed})
    if args.command == "generate-data":
        manifest = cmdGenerateData(config, args.out)
        printSummary("Data Summary", [f"Hospitals: {config['data']['hospitals']} (+{config['data']['holdout_hospitals']} holdout)",
                                      f"Manifest: {manifest}"])
    elif args.command == "run":
        result = cmdRun(config, mode=args.mode, outDir=args.out, dataDir=args.data)
        printSummary("Run Summary", [
            f"Run dir: {result.runDir}",
            f"Mode: {result.mode}",
            f"R2: {result.headline('r2'):.4f}",
            f"MMD: {result.headline('mmd'):.4f}",
            f"NNAA: {result.headline('nnaa'):.4f}",
        ])
    elif args.command == "scale":
        rows = cmdScale(config, parseCounts(args.hospitals), mode=args.mode, outDir=args.out, dataDir=args.data)
        printSummary("Scale Summary", [f"Hospital counts: {args.hospitals}", f"Rows: {len(rows)}"])


def main(argv=None):
    args = buildParser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        dispatch(args)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG_ERROR
    except (DataError, FormatError) as e:
        logger.error("Data error: %s", e)
        return EXIT_DATA_ERROR
    except PipelineError as e:
        logger.error("Pipeline failed: %s", e)
        return EXIT_RUNTIME_ERROR
    except Exception:
        logger.exception("Unexpected failure")
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
