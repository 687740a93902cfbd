"""Command-line front end.

Subcommands: ``train`` (one federated run, curve + final metrics), ``sweep``
(client-count sweep with per-K curves), ``gradcheck`` (finite-difference
verification of the configured model), ``export-plotdata`` (merge per-K
curves into one long-format CSV).

Exit codes are a stable contract: 0 success, 1 runtime failure, 2 usage or
config error. All CSV output is UTF-8 with ``\\n`` line endings and reals
printed with 17 significant digits, so identical runs produce byte-identical
files.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys

from .config import RunConfig, build_datasets, build_fed_config, build_model_spec, build_plan, load_config
from .errors import ConfigError, FedsimError
from .fedavg import run_training
from .gradcheck import check_gradient, random_batch, random_params
from .harness import SweepReport, client_sweep
from .models import accuracy, evaluate_loss, featurize_dataset

CURVE_HEADER = "task,model,K,seed,round,accuracy,loss,wall_seconds"
SWEEP_HEADER = "K,final_accuracy_at_budget,rounds_to_target,diverged"
PLOTDATA_HEADER = "K,round,accuracy"


def _real(value: float) -> str:
    return "%.17g" % value


def _write_text(path: str, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for line in lines:
            handle.write(line)
            handle.write("\n")


def _write_resolved_config(config: RunConfig, out_dir: str) -> None:
    _write_text(os.path.join(out_dir, "resolved_config.txt"), config.resolved_lines())


def _curve_lines(config: RunConfig, num_clients: int, records) -> list:
    lines = [CURVE_HEADER]
    with_timing = config["out.timing"] == "wall"
    for record in records:
        wall = _real(record.wall_seconds) if with_timing else ""
        lines.append(
            ",".join(
                (
                    config["task"],
                    config["model.kind"],
                    str(num_clients),
                    str(config["seed"]),
                    str(record.round_index),
                    _real(record.test_accuracy),
                    _real(record.test_loss),
                    wall,
                )
            )
        )
    return lines


def _cmd_train(args) -> int:
    config = load_config(args.config, _overrides(args))
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _write_resolved_config(config, out_dir)
    train_set, test_set = build_datasets(config)
    spec = build_model_spec(config, train_set.num_classes)
    fed = build_fed_config(config)
    result = run_training(spec, train_set, test_set, fed, threads=args.threads)
    _write_text(os.path.join(out_dir, "curve.csv"), _curve_lines(config, fed.num_clients, result.records))

    last = result.records[-1] if result.records else None
    if last is not None and last.round_index == fed.rounds:
        final_accuracy, final_loss = last.test_accuracy, last.test_loss
    else:
        test_examples = featurize_dataset(spec, test_set)
        final_accuracy = accuracy(spec, result.final_params, test_examples)
        final_loss = evaluate_loss(spec, result.final_params, test_examples)
    payload = {
        "final_accuracy": final_accuracy,
        "final_loss": final_loss,
        "param_count": int(result.final_params.shape[0]),
        "config": {key: config.values[key] for key in sorted(config.values)},
    }
    with open(os.path.join(out_dir, "final.json"), "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")
    return 0


def _sweep_csv_lines(report: SweepReport) -> list:
    lines = [f"# random_baseline={_real(report.random_baseline)}", SWEEP_HEADER]
    for row in report.rows:
        budget = "" if row.final_accuracy_at_budget is None else _real(row.final_accuracy_at_budget)
        reached = "" if row.rounds_to_target is None else str(row.rounds_to_target)
        lines.append(f"{row.num_clients},{budget},{reached},{int(row.diverged)}")
    return lines


def _cmd_sweep(args) -> int:
    config = load_config(args.config, _overrides(args))
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _write_resolved_config(config, out_dir)
    train_set, test_set = build_datasets(config)
    spec = build_model_spec(config, train_set.num_classes)
    fed = build_fed_config(config)
    plan = build_plan(config)
    report, results = client_sweep(spec, train_set, test_set, fed, plan, threads=args.threads)
    _write_text(os.path.join(out_dir, "sweep.csv"), _sweep_csv_lines(report))
    for count, result in results.items():
        _write_text(
            os.path.join(out_dir, f"curve_K{count}.csv"),
            _curve_lines(config, count, result.records),
        )
    return 0


def _cmd_gradcheck(args) -> int:
    config = load_config(args.config, _overrides(args))
    if config["data.source"] == "synth":
        num_classes = config["synth.num_classes"]
    else:
        num_classes = config["data.num_classes"]
        if num_classes < 2:
            raise ConfigError("data.num_classes must be set (>= 2) for CSV sources")
    spec = build_model_spec(config, num_classes)
    seed = config["seed"]
    result = check_gradient(
        spec,
        random_params(spec, seed),
        random_batch(spec, seed + 1),
        corrupt=args.corrupt_gradient,
    )
    print(f"model={spec.kind} coordinates={result.checked} max_rel_error={_real(result.max_rel_error)}")
    if not result.passed:
        print(f"gradient check FAILED at coordinate {result.worst_index}", file=sys.stderr)
        return 1
    return 0


_CURVE_FILE = re.compile(r"^curve_K(\d+)\.csv$")


def _cmd_export_plotdata(args) -> int:
    sweep_dir = args.sweep_dir
    if not os.path.isdir(sweep_dir):
        raise ConfigError(f"not a directory: {sweep_dir}")
    curves = []
    for name in os.listdir(sweep_dir):
        match = _CURVE_FILE.match(name)
        if match:
            curves.append((int(match.group(1)), os.path.join(sweep_dir, name)))
    if not curves:
        raise ConfigError(f"no curve_K*.csv files in {sweep_dir}")
    merged = []
    for count, path in sorted(curves):
        with open(path, encoding="utf-8") as handle:
            header = handle.readline().rstrip("\n")
            if header != CURVE_HEADER:
                raise ConfigError(f"{path}: unexpected header {header!r}")
            for line in handle:
                fields = line.rstrip("\n").split(",")
                # round and accuracy copied verbatim so the merge is lossless
                merged.append((count, int(fields[4]), fields[4], fields[5]))
    merged.sort(key=lambda item: (item[0], item[1]))
    out_dir = args.out if args.out is not None else sweep_dir
    os.makedirs(out_dir, exist_ok=True)
    lines = [PLOTDATA_HEADER]
    lines.extend(f"{count},{round_text},{accuracy_text}" for count, _, round_text, accuracy_text in merged)
    _write_text(os.path.join(out_dir, "plotdata.csv"), lines)
    return 0


def _overrides(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    return overrides


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description="Federated averaging simulator.")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub, with_threads=True):
        sub.add_argument("--config", help="path to a key=value config file (defaults apply if omitted)")
        sub.add_argument("--seed", type=int, help="override the config seed")
        sub.add_argument("--out", help="override the config out_dir")
        if with_threads:
            sub.add_argument(
                "--threads", type=int, default=1, help="client executor width; never changes results"
            )

    train = commands.add_parser("train", help="run one federated training job")
    common(train)
    train.set_defaults(handler=_cmd_train)

    sweep = commands.add_parser("sweep", help="sweep client counts against the single-client baseline")
    common(sweep)
    sweep.set_defaults(handler=_cmd_sweep)

    gradcheck = commands.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    common(gradcheck, with_threads=False)
    gradcheck.add_argument(
        "--corrupt-gradient",
        action="store_true",
        help="debug: perturb one gradient coordinate; the check must then fail",
    )
    gradcheck.set_defaults(handler=_cmd_gradcheck)

    export = commands.add_parser("export-plotdata", help="merge per-K sweep curves into one CSV")
    export.add_argument("sweep_dir", help="directory containing curve_K*.csv files")
    export.add_argument("--out", help="directory for plotdata.csv (defaults to sweep_dir)")
    export.set_defaults(handler=_cmd_export_plotdata)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as failure:
        print(f"config error: {failure}", file=sys.stderr)
        return 2
    except FedsimError as failure:
        print(f"error: {failure}", file=sys.stderr)
        return 1
    except Exception as failure:  # noqa: BLE001 - the CLI boundary maps everything to the exit contract
        print(f"unexpected error: {failure}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
