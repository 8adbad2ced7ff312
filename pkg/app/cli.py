"""
Command-line surface.

    python -m app.cli search   --config run.cfg [--workers N] [--resume]
    python -m app.cli predict  --arch arch.json [--weights weights.bin] --data data.csv --horizon H
    python -m app.cli synth    --days N --seed S --out data.csv
    python -m app.cli baseline --config run.cfg [--names linear,lstm]
    python -m app.cli compare  --config run.cfg
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from core.config import load_run_config
from core.dependencies import setup_logging
from core.exceptions import PVNasError
from models.request import RunConfig
from services.dataset_service import save_csv
from services.forecast_service import run_predict
from services.pipeline_service import run_baseline_suite, run_compare, run_search
from services.synth_service import synth_pv

logger = logging.getLogger(__name__)


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    update = {}
    if getattr(args, "workers", None):
        update["workers"] = args.workers
    if getattr(args, "output_dir", None):
        update["output_dir"] = Path(args.output_dir)
    return cfg.model_copy(update=update) if update else cfg


def cmd_search(args) -> int:
    result = run_search(_run_config(args), resume=args.resume)
    best = result.best
    if best is not None:
        print(f"best {best.genotype_hash} error={best.measured_error:.6g} params={best.param_count}")
    print(f"evaluated {len(result.records)}, front size {len([r for r in result.front if r.finite])}")
    return 0


def cmd_predict(args) -> int:
    response = run_predict(args.arch, args.data, args.horizon, weights_path=args.weights, out_dir=args.out)
    wmape = f"{response.wmape:.6g}" if response.wmape is not None else "n/a"
    print(f"windows={response.windows} mae={response.mae:.6g} wmape={wmape}")
    return 0


def cmd_synth(args) -> int:
    path = save_csv(synth_pv(args.days, seed=args.seed), args.out)
    print(f"wrote {path}")
    return 0


def cmd_baseline(args) -> int:
    names = [n.strip() for n in args.names.split(",") if n.strip()] if args.names else None
    for entry in run_baseline_suite(_run_config(args), names):
        print(f"{entry.name}: error={entry.measured_error:.6g} params={entry.param_count} [{entry.status.value}]")
    return 0


def cmd_compare(args) -> int:
    summary = run_compare(_run_config(args))
    print(f"task1={summary['task1_best_error']:.6g} task2={summary['task2_best_error']:.6g} "
          f"reduction={summary['relative_reduction']:.2%}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvnas", description="PV forecasting architecture search")
    sub = parser.add_subparsers(dest="command", required=True)

    search = sub.add_parser("search", help="Run the architecture search")
    search.add_argument("--config", required=True, help="key = value run configuration file")
    search.add_argument("--workers", type=int, metavar="N", default=None, help="Parallel evaluation workers")
    search.add_argument("--resume", action="store_true", help="Reuse the evaluation log in the output directory")
    search.add_argument("--output-dir", default=None, help="Override output_dir from the config")
    search.set_defaults(handler=cmd_search)

    predict = sub.add_parser("predict", help="Forecast a CSV with an exported architecture")
    predict.add_argument("--arch", required=True, help="arch.json of an exported architecture")
    predict.add_argument("--weights", default=None, help="weights.bin (defaults to the one named in arch.json)")
    predict.add_argument("--data", required=True, help="CSV with the training feature set")
    predict.add_argument("--horizon", type=int, required=True, help="Forecast horizon the architecture was trained for")
    predict.add_argument("--out", default=None, help="Directory for forecast.csv and forecast.svg")
    predict.set_defaults(handler=cmd_predict)

    synth = sub.add_parser("synth", help="Write a synthetic hourly PV dataset")
    synth.add_argument("--days", type=int, required=True, metavar="N")
    synth.add_argument("--seed", type=int, default=0, metavar="S")
    synth.add_argument("--out", required=True, help="Destination CSV")
    synth.set_defaults(handler=cmd_synth)

    baseline = sub.add_parser("baseline", help="Evaluate the fixed baseline configurations")
    baseline.add_argument("--config", required=True)
    baseline.add_argument("--names", default=None, help="Comma-separated subset of baselines")
    baseline.add_argument("--workers", type=int, metavar="N", default=None)
    baseline.add_argument("--output-dir", default=None)
    baseline.set_defaults(handler=cmd_baseline)

    compare = sub.add_parser("compare", help="Same-budget search on task 1 and task 2")
    compare.add_argument("--config", required=True)
    compare.add_argument("--workers", type=int, metavar="N", default=None)
    compare.add_argument("--output-dir", default=None)
    compare.set_defaults(handler=cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        return args.handler(args)
    except (PVNasError, OSError, ValueError, KeyError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        message = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
