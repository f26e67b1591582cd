"""
Command-line entry point

Subcommands:
- synth: generate a synthetic multi-day dataset
- spectra: relative spectral power, band-power summary, averaged AEP and topography CSVs
- decode: one day, one method
- run: every day with every method, plus the cross-method summary
- report: rebuild summary.json from an existing results directory

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric or
internal failure. Every failure prints one `error: <kind>: <message>` line
on stderr.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .config import (
    METHODS,
    PROJECT_DESCRIPTION,
    PROJECT_NAME,
    VERSION,
    ExperimentConfig,
    SynthConfig,
)
from .core.dataset_model import list_days
from .core.experiment_engine import ExperimentEngine, default_workers
from .core.result_collector import ResultCollector
from .errors import ConfigError, DataError, WorkbenchError
from .features.synthgen import generate_dataset
from .utils.logging_utils import configure_logging
from .utils.settings import load_experiment_config, merge_overrides

logger = logging.getLogger(__name__)

NO_STIM_CHOICES: Dict[str, Tuple[int, ...]] = {"1": (1,), "5": (5,), "both": (1, 5)}


class UsageError(ConfigError):
    """Command-line parse failure"""


class WorkbenchArgumentParser(argparse.ArgumentParser):
    """ArgumentParser reporting usage errors as configuration errors (exit 1)"""

    def error(self, message: str):
        raise UsageError(message)


def _report(error: WorkbenchError, prefix: str = "") -> int:
    print(f"error: {error.kind}: {prefix}{error}", file=sys.stderr)
    return error.exit_code


def _method_list(values: Optional[List[str]]) -> Optional[Tuple[str, ...]]:
    if not values:
        return None
    methods = tuple(m.strip() for value in values for m in value.split(",") if m.strip())
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method '{unknown[0]}' (choose from {', '.join(METHODS)})")
    return methods


def _noisy_channels(value: Optional[str]) -> frozenset:
    if not value:
        return frozenset()
    try:
        return frozenset(int(v) for v in value.split(",") if v.strip())
    except ValueError as e:
        raise ConfigError(f"--noisy-channels expects comma-separated contact ids (got '{value}')") from e


class WorkbenchCLI:
    """
    Builds the argument parser and dispatches subcommands

    Flags shared by every subcommand may be given before or after the
    subcommand name; command-line values override the --config file.
    """

    def __init__(self):
        self.parser = self._build_parser()

    # ========================================================================
    # Parser
    # ========================================================================

    def _common_flags(self) -> argparse.ArgumentParser:
        common = WorkbenchArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
        common.add_argument("--config", help="JSON experiment configuration (flags override its values)")
        common.add_argument("--workers", type=int, help="parallel worker processes (default: physical cores)")
        common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level (default: INFO)")
        common.add_argument("--quiet", action="store_true", help="only log warnings and errors")
        common.add_argument("--max-epochs", type=int, help="ConvNet epoch budget")
        common.add_argument("--seed", type=int, help="global seed")
        common.add_argument("--no-stim-epochs", choices=sorted(NO_STIM_CHOICES), help="epochs forming the 2-class 'no stimulus' class")
        common.add_argument("--hp", type=float, help="highpass cut-off (Hz)")
        common.add_argument("--lp", type=float, help="lowpass cut-off (Hz)")
        common.add_argument("--amp-threshold", type=float, help="amplitude rule for noisy contacts and bad trials (uV)")
        common.add_argument("--noisy-fraction", type=float, help="fraction of samples above threshold marking a contact noisy")
        return common

    def _build_parser(self) -> argparse.ArgumentParser:
        common = self._common_flags()
        parser = WorkbenchArgumentParser(prog=PROJECT_NAME, description=PROJECT_DESCRIPTION, parents=[common])
        parser.add_argument("--version", action="version", version=f"{PROJECT_NAME} {VERSION}")
        commands = parser.add_subparsers(dest="command", metavar="COMMAND")
        commands.required = True

        synth = commands.add_parser("synth", parents=[common], help="generate a synthetic dataset")
        synth.add_argument("--out", required=True, help="dataset root to write")
        synth.add_argument("--days", type=int, default=SynthConfig.n_days, help="experiment days")
        synth.add_argument("--trials", type=int, default=SynthConfig.trials_per_day, help="stimulus trials per day")
        synth.add_argument("--snr", type=float, default=SynthConfig.snr, help="evoked-to-background amplitude ratio")
        synth.add_argument("--artifact-rate", type=float, default=SynthConfig.artifact_rate, help="artifact probability per trial")
        synth.add_argument("--noisy-channels", default="", help="comma-separated contact ids with inflated background")
        synth.add_argument("--early-response-gain", type=float, default=SynthConfig.early_response_gain, help="AEP transient scale")

        spectra = commands.add_parser("spectra", parents=[common], help="write relSP, band-power, AEP and topography CSVs")
        spectra.add_argument("--dataset", required=True, help="day directory or dataset root")
        spectra.add_argument("--out", required=True, help="output directory")

        decode = commands.add_parser("decode", parents=[common], help="decode one day with one method")
        decode.add_argument("--dataset", required=True, help="day directory")
        decode.add_argument("--method", required=True, help=f"one of {', '.join(METHODS)}")
        decode.add_argument("--classes", type=int, choices=[2, 3], help="class scheme")
        decode.add_argument("--out", help="results directory")

        run = commands.add_parser("run", parents=[common], help="decode every day with every method")
        run.add_argument("--dataset", help="dataset root")
        run.add_argument("--method", action="append", help="method(s), repeatable or comma-separated (default: all)")
        run.add_argument("--classes", type=int, choices=[2, 3], help="class scheme")
        run.add_argument("--out", help="results directory")

        report = commands.add_parser("report", parents=[common], help="aggregate an existing results directory")
        report.add_argument("--in", dest="results", required=True, help="results directory written by run")
        report.add_argument("--out", required=True, help="summary.json path")
        return parser

    # ========================================================================
    # Configuration
    # ========================================================================

    def _experiment_config(self, args: argparse.Namespace, **fields: Any) -> ExperimentConfig:
        config_path = getattr(args, "config", None)
        config = load_experiment_config(config_path) if config_path else ExperimentConfig()
        no_stim = getattr(args, "no_stim_epochs", None)
        overrides: Dict[str, Any] = {
            "workers": getattr(args, "workers", None),
            "seed": getattr(args, "seed", None),
            "no_stim_epochs": NO_STIM_CHOICES[no_stim] if no_stim else None,
            "train.max_epochs": getattr(args, "max_epochs", None),
            "preprocess.hp_cutoff_hz": getattr(args, "hp", None),
            "preprocess.lp_cutoff_hz": getattr(args, "lp", None),
            "preprocess.amplitude_threshold_uv": getattr(args, "amp_threshold", None),
            "preprocess.noisy_fraction": getattr(args, "noisy_fraction", None),
        }
        overrides.update(fields)
        config = merge_overrides(config, overrides)
        config.validate()
        return config

    # ========================================================================
    # Commands
    # ========================================================================

    def cmd_synth(self, args: argparse.Namespace) -> int:
        synth = SynthConfig(
            n_days=args.days,
            trials_per_day=args.trials,
            seed=getattr(args, "seed", SynthConfig.seed),
            snr=args.snr,
            artifact_rate=args.artifact_rate,
            noisy_channels=_noisy_channels(args.noisy_channels),
            early_response_gain=args.early_response_gain,
        )
        workers = getattr(args, "workers", None) or default_workers()
        generate_dataset(synth, args.out, workers=workers)
        return 0

    def cmd_spectra(self, args: argparse.Namespace) -> int:
        engine = ExperimentEngine(self._experiment_config(args, dataset=args.dataset, output=args.out))
        days = list_days(args.dataset)
        if not days:
            raise DataError(f"no day directories found in {args.dataset}")
        for day in days:
            engine.export_spectra(day, args.out)
        return 0

    def cmd_decode(self, args: argparse.Namespace) -> int:
        if args.method not in METHODS:
            raise ConfigError(f"unknown method '{args.method}' (choose from {', '.join(METHODS)})")
        config = self._experiment_config(
            args, dataset=args.dataset, output=args.out, n_classes=args.classes, methods=(args.method,)
        )
        result = ExperimentEngine(config).decode(args.dataset, args.method)
        print(f"day {result.day_id} {result.method}: DA {result.report.overall_da:.4f} ({result.report.total} test trials)")
        return 0

    def cmd_run(self, args: argparse.Namespace) -> int:
        config = self._experiment_config(
            args,
            dataset=args.dataset,
            output=args.out,
            n_classes=args.classes,
            methods=_method_list(args.method),
        )
        experiment = ExperimentEngine(config).run()
        for failure in experiment.failures:
            print(f"error: {failure.error_kind}: day {failure.day_id} {failure.method}: {failure.error}", file=sys.stderr)
        if experiment.summary is not None:
            for method, entry in experiment.summary.methods.items():
                print(f"{method}: mean DA {entry['mean_da']:.4f} over {len(entry['days'])} days")
        return experiment.exit_code

    def cmd_report(self, args: argparse.Namespace) -> int:
        summary = ResultCollector(args.results).summarize(args.out)
        for method, entry in summary.methods.items():
            print(f"{method}: mean DA {entry['mean_da']:.4f} over {len(entry['days'])} days")
        return 0

    # ========================================================================
    # Dispatch
    # ========================================================================

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """
        Parse arguments and execute one subcommand

        Returns:
            Process exit code
        """
        try:
            args = self.parser.parse_args(argv)
        except WorkbenchError as e:
            return _report(e)

        configure_logging(getattr(args, "log_level", "INFO"), getattr(args, "quiet", False))
        handler = getattr(self, f"cmd_{args.command}")
        try:
            return handler(args)
        except WorkbenchError as e:
            return _report(e)
        except Exception as e:
            logger.debug("[CLI] unhandled failure", exc_info=True)
            print(f"error: internal: {e}", file=sys.stderr)
            return 3


def main(argv: Optional[Sequence[str]] = None) -> int:
    return WorkbenchCLI().run(argv)


if __name__ == "__main__":
    sys.exit(main())
