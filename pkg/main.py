import argparse
import os
import sys

from dotenv import load_dotenv

from scripts.autograd.tensor import Profile
from scripts.dataset import commands
from scripts.utils.config import RunConfig
from scripts.utils.errors import ContractViolation, FormatError
from scripts.utils.log_utils import log_runtime_info, setup_logging

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONTRACT = 2
EXIT_IO = 3

PROFILES = {
    "default": RunConfig,
    "desk": RunConfig.desk_profile,
    "clinical": RunConfig.clinical_profile,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="LV segmentation and measurement toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (RunConfig keys)")
    common.add_argument("--profile", choices=list(PROFILES), default="default",
                        help="base settings before environment, config file and flags")
    common.add_argument("--seed", type=int)
    common.add_argument("--arch", choices=["unet", "dilated-unet", "mfp-unet"])
    common.add_argument("--out", help="output directory")
    common.add_argument("--debug", action="store_true")

    verbs = parser.add_subparsers(dest="verb", required=True)

    synth = verbs.add_parser("synth", parents=[common], help="write a synthetic phantom dataset")
    synth.add_argument("--subjects", type=int, default=8)
    synth.add_argument("--size", type=int)

    train = verbs.add_parser("train", parents=[common], help="k-fold training")
    train.add_argument("--data", help="dataset directory or synthetic:<subjects>")
    train.add_argument("--epochs", type=int)

    evaluate = verbs.add_parser("eval", parents=[common], help="segmentation metrics of a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--data")

    measure = verbs.add_parser("measure", parents=[common], help="LV length / area / volume / EF")
    measure.add_argument("--data")
    measure.add_argument("--masks", help="directory of mask PGMs to measure instead of the ground truth")
    measure.add_argument("--checkpoint", help="measure masks predicted by this checkpoint")

    report = verbs.add_parser("report", parents=[common], help="agreement statistics and ANOVA")
    report.add_argument("--auto", required=True, help="automatic measurements.csv")
    report.add_argument("--manual", required=True, help="manual measurements.csv")
    report.add_argument("--groups", nargs="+", help="metrics.csv of two or more methods for ANOVA")
    report.add_argument("--group-metric", default="dice")
    report.add_argument("--anova-sums", nargs=4, type=float, metavar=("SS_B", "DF_B", "SS_W", "DF_W"))
    report.add_argument("--halved-cv", action="store_true", help="CV with the mean of the two means")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Profile defaults <- environment <- config file <- command-line flags."""
    config = PROFILES[getattr(args, "profile", "default")]()
    env = {"data_dir": os.getenv("MFPU_DATA_DIR"), "output_dir": os.getenv("MFPU_OUT_DIR")}
    config = config.with_overrides(**env)
    if args.config:
        file_config = RunConfig.load(args.config)
        config = config.with_overrides(**file_config.model_dump(exclude_unset=True))
    return config.with_overrides(
        seed=args.seed,
        arch=args.arch,
        output_dir=args.out,
        data_dir=getattr(args, "data", None),
        max_epochs=getattr(args, "epochs", None),
        input_size=getattr(args, "size", None),
    )


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if args.verb == "synth":
        commands.synth_command(config.output_dir, args.subjects, config.input_size, config.seed)
    elif args.verb == "train":
        commands.train_command(config)
    elif args.verb == "eval":
        commands.evaluate_command(args.checkpoint, config.data_dir, config.output_dir, config,
                                  expected_arch=args.arch)
    elif args.verb == "measure":
        commands.measure_command(config.data_dir, config.output_dir, config, args.checkpoint, args.masks)
    elif args.verb == "report":
        commands.report_command(args.auto, args.manual, config.output_dir, args.groups, args.group_metric,
                                args.anova_sums, args.halved_cv)
    return EXIT_OK


def main(argv=None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    is_debug = args.debug or os.getenv("MFPU_DEBUG", "").lower() in ("1", "true", "yes")
    logger = setup_logging(is_debug)
    log_runtime_info(Profile.TRAINING, logger)
    try:
        return run(args)
    except ContractViolation as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:
        logger.debug("unhandled error", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
