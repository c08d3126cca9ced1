"""
ByzFed command line
Subcommands train, meta and bench-transport. Configs are JSON documents
mirroring ExperimentConfig; flags override single keys.

Exit codes: 0 success, 2 configuration or input problem, 1 runtime failure.
"""
import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from colorama import Fore, Style, init
from pydantic import ValidationError

from . import __version__
from .exceptions import ByzFedError, ConfigError, DataError, ProtocolError, ShapeError, TransportError
from .models.records import RunManifest
from .models.schemas import ExperimentConfig, WireDtype, apply_overrides
from .models.settings import RuntimeSettings, get_settings
from .services import metrics
from .services.engine import build_meta_shards, meta_test, run_training
from .services.model import split
from .transports.harness import results_identical, run_parallel, run_sequential

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

# presets/ sits next to backend/ at the repository root
PRESETS_DIR = Path(__file__).resolve().parents[2] / "presets"

# CLI flag -> dotted config key
FLAG_KEYS = {
    "seed": "seed",
    "out": "output.out_dir",
    "dtype": "transport.dtype",
    "mode": "transport.mode",
    "port": "transport.port",
    "delay_ms": "transport.compute_delay_ms",
    "protocol": "protocol",
    "aggregator": "aggregator",
    "clients": "clients",
    "byzantine": "byzantine_count",
    "attack": "attack.kind",
    "sigma": "attack.sigma",
    "rounds": "rounds",
    "epochs": "meta.epochs",
}


def setup_logging(settings: RuntimeSettings, verbose: bool = False):
    """Configure root logging from runtime settings"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file))
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def print_success(text: str):
    print(f"{Fore.GREEN}✓ {text}{Style.RESET_ALL}")


def print_error(text: str):
    print(f"{Fore.RED}✗ {text}{Style.RESET_ALL}", file=sys.stderr)


def print_info(text: str):
    print(f"{Fore.BLUE}ℹ {text}{Style.RESET_ALL}")


def read_document(path: Path) -> Dict[str, Any]:
    """
    Load a config document; a run manifest yields its embedded resolved config

    Raises:
        FileNotFoundError: path does not exist
        ConfigError: not a mapping or not parseable
    """
    try:
        with open(path, "r") as f:
            document = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    if "artifact_version" in document and isinstance(document.get("config"), dict):
        logger.info(f"Using the resolved config embedded in manifest {path}")
        return document["config"]
    return document


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Build the ExperimentConfig from --preset/--config plus flag overrides"""
    document: Dict[str, Any] = {}
    if args.preset:
        preset_path = PRESETS_DIR / f"{args.preset}.json"
        if not preset_path.exists():
            available = sorted(p.stem for p in PRESETS_DIR.glob("*.json"))
            raise ConfigError(f"unknown preset {args.preset}; available: {', '.join(available)}")
        document = read_document(preset_path)
    if args.config:
        document = apply_overrides(document, read_document(Path(args.config)))

    overrides = {key: getattr(args, flag, None) for flag, key in FLAG_KEYS.items()}
    if overrides.get("byzantine_count") is not None:
        # an explicit count replaces any id list carried by the document
        document.pop("byzantine_ids", None)
    return ExperimentConfig(**apply_overrides(document, overrides))


def _manifest(cfg: ExperimentConfig, started_at: str, outputs: Dict[str, str],
              summary: Dict[str, Any]) -> RunManifest:
    return RunManifest(
        config=cfg.model_dump(mode="json"),
        artifact_version=__version__,
        command=" ".join(sys.argv),
        started_at=started_at,
        finished_at=_now(),
        outputs=outputs,
        summary=summary,
    )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def cmd_train(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    """Run training and write rounds.csv, summary.csv, phi.bin and manifest.json"""
    started_at = _now()
    cfg = load_config(args).resolve()
    out_dir = Path(cfg.output.out_dir)

    result = run_training(cfg, settings=settings)
    phi = result.global_params
    shared = split(phi)[0] if phi.has_head() else phi
    logger.debug(f"Final representation:\n{shared.dump()}")

    outputs = {name: str(out_dir / name) for name in ("rounds.csv", "summary.csv", "phi.bin", "manifest.json")}
    metrics.write_rounds(out_dir / "rounds.csv", result.records)
    metrics.write_summary(out_dir / "summary.csv", result.records, cfg.output.wall_clock_columns)
    metrics.save_phi(out_dir / "phi.bin", shared)

    final = result.records[-1].mean_benign_acc if result.records else None
    summary = {
        "final_mean_benign_acc": final,
        "rounds_run": len(result.records),
        "byzantine_ids": cfg.byzantine_ids,
        "per_round": metrics.round_diagnostics(result.records),
    }
    metrics.write_manifest(out_dir / "manifest.json", _manifest(cfg, started_at, outputs, summary))

    if final is None:
        print_success(f"{cfg.protocol.value}: no rounds run, initial representation saved to {out_dir}")
    else:
        print_success(f"{cfg.protocol.value}+{cfg.aggregator.value}: final mean benign accuracy "
                      f"{final:.4f} after {len(result.records)} rounds")
    print_info(f"Outputs written to {out_dir}")
    return EXIT_OK


def cmd_meta(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    """Fine-tune new clients' heads on a frozen phi and write meta.csv"""
    started_at = _now()
    cfg = load_config(args).resolve()
    out_dir = Path(cfg.output.out_dir)
    phi_path = Path(args.phi) if args.phi else out_dir / "phi.bin"

    try:
        phi = metrics.load_phi(phi_path)
    except ProtocolError as e:
        raise ConfigError(f"{phi_path} is not a valid representation file: {e}") from e
    if phi[0].in_dim != cfg.model.input_dim:
        raise ConfigError(f"{phi_path} expects input width {phi[0].in_dim}, "
                          f"config has model.input_dim={cfg.model.input_dim}")

    shards = build_meta_shards(cfg)
    results = meta_test(phi, shards, cfg.meta.epochs, cfg)
    metrics.write_meta(out_dir / "meta.csv", out_dir / "meta_curve.csv", results)

    means = {}
    for method in ("transferred", "naive"):
        scores = [r.test_acc for r in results if r.method == method]
        means[method] = sum(scores) / len(scores) if scores else None
    outputs = {name: str(out_dir / name) for name in ("meta.csv", "meta_curve.csv", "meta_manifest.json")}
    metrics.write_manifest(out_dir / "meta_manifest.json",
                           _manifest(cfg, started_at, outputs, {"phi": str(phi_path), "mean_test_acc": means}))

    print_success(f"Meta-test on {len(shards)} new clients: transferred {means['transferred']:.4f}, "
                  f"naive {means['naive']:.4f}")
    return EXIT_OK


def cmd_bench_transport(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    """Run the config sequentially and over sockets, compare results, write timing.csv"""
    started_at = _now()
    cfg = load_config(args)
    if cfg.transport.dtype != WireDtype.F64:
        logger.info("bench-transport compares results bit for bit, using f64 on the wire")
        cfg = cfg.model_copy(update={"transport": cfg.transport.model_copy(update={"dtype": WireDtype.F64})})
    cfg = cfg.resolve()
    out_dir = Path(cfg.output.out_dir)

    sequential, sequential_timings = run_sequential(cfg, settings)
    parallel, parallel_timings = run_parallel(cfg, settings)
    timings = {"sequential": sequential_timings, "parallel": parallel_timings}
    metrics.write_timing(out_dir / "timing.csv", timings)

    identical = results_identical(sequential, parallel)
    outputs = {name: str(out_dir / name) for name in ("timing.csv", "bench_manifest.json")}
    metrics.write_manifest(out_dir / "bench_manifest.json", _manifest(
        cfg, started_at, outputs,
        {"identical": identical, "timings": {mode: t.model_dump() for mode, t in timings.items()}},
    ))

    if not identical:
        print_error("Sequential and parallel runs disagree")
        logger.error("Transport neutrality violated: results differ between modes")
        return EXIT_RUNTIME
    print_success(f"Results identical; mean round {sequential_timings.round_total_ms:.1f} ms sequential, "
                  f"{parallel_timings.round_total_ms:.1f} ms parallel")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON/YAML config document or a manifest.json")
    parser.add_argument("--preset", help="Name of a file in presets/ (without .json)")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--dtype", choices=[d.value for d in WireDtype], help="Wire precision")
    parser.add_argument("--protocol", help="br-mtrl, fedrep, fedper, fedavg or naive")
    parser.add_argument("--aggregator", help="mean, gm or krum")
    parser.add_argument("--clients", type=int, help="Number of clients")
    parser.add_argument("--byzantine", type=int, help="Number of Byzantine clients")
    parser.add_argument("--attack", help="none, sr or ml")
    parser.add_argument("--sigma", type=float, help="SR noise scale")
    parser.add_argument("--rounds", type=int, help="Communication rounds")
    parser.add_argument("--mode", help="Transport mode: sequential or parallel")
    parser.add_argument("--port", type=int, help="Listening port for the parallel transport")
    parser.add_argument("--delay-ms", dest="delay_ms", type=float, help="Artificial per-client compute time")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_experiment.py",
        description="Byzantine-resilient federated representation learning experiments",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    train = subparsers.add_parser("train", help="Run federated training")
    _add_common(train)
    train.set_defaults(handler=cmd_train)

    meta = subparsers.add_parser("meta", help="Meta-test a trained representation on new clients")
    _add_common(meta)
    meta.add_argument("--phi", help="phi.bin written by train (defaults to <out>/phi.bin)")
    meta.add_argument("--epochs", type=int, help="Head fine-tuning epochs")
    meta.set_defaults(handler=cmd_meta)

    bench = subparsers.add_parser("bench-transport", help="Compare sequential and parallel transports")
    _add_common(bench)
    bench.set_defaults(handler=cmd_bench_transport)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the command and map failures onto exit codes"""
    init()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK

    try:
        settings = get_settings()
    except ValidationError as e:
        print_error(f"Invalid runtime settings: {e}")
        return EXIT_CONFIG
    setup_logging(settings, args.verbose)

    try:
        return args.handler(args, settings)
    except ValidationError as e:
        for error in e.errors():
            key = ".".join(str(part) for part in error["loc"]) or "<config>"
            print_error(f"{key}: {error['msg']}")
        logger.error(f"Configuration rejected with {e.error_count()} error(s)")
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print_error(f"File not found: {e.filename or e}")
        logger.error(f"Missing input: {e}")
        return EXIT_CONFIG
    except (ConfigError, DataError, ShapeError) as e:
        print_error(str(e))
        logger.error(f"Invalid input: {e}")
        return EXIT_CONFIG
    except TransportError as e:
        print_error(f"Transport error: {e}")
        logger.error(f"Transport failure: {e}", exc_info=True)
        return EXIT_RUNTIME
    except ByzFedError as e:
        print_error(str(e))
        logger.error(f"Run failed: {e}", exc_info=True)
        return EXIT_RUNTIME
    except Exception as e:
        print_error(f"Unexpected error: {e}")
        logger.exception("Unexpected error")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
