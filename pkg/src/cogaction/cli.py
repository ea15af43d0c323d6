"""Command-line driver: synthesize data, train filter banks, evaluate, check gradients.

Subcommands::

    cogaction synth      --config exp.ini [--out DIR]
    cogaction train      --config exp.ini [--out DIR] [--seed N]
    cogaction eval       --config exp.ini --bank layer1_bank.txt [...] [--out DIR]
    cogaction check-grad [--instances N]

Exit codes: 0 success, 1 configuration error, 2 runtime or divergence error.
Outputs are deterministic: identical configs produce bit-identical trees (a
``--threads`` hint is accepted for interface compatibility and ignored; no
output depends on it).  An output directory is guarded by a ``.lock`` file
against concurrent runs.
"""

import argparse
import contextlib
import sys
from pathlib import Path

from .action import BREAKDOWN_CSV_HEADER, ActionBreakdown
from .config import ConfigError, ExperimentConfig, parse_config
from .features import convolve_features, load_bank, save_bank, stack_layers, to_probabilities
from .flow import VelocityField, save_flow
from .optimizer import (
    DivergenceError,
    build_weights,
    evaluate_bank,
    init_bank,
    run_gradient_check,
    train_deep,
)
from .video import save_clip, save_feature_maps

SUMMARY_HEADER = "layer,phase," + BREAKDOWN_CSV_HEADER.split(",", 1)[1]


@contextlib.contextmanager
def _locked_out_dir(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        handle = open(lock, "x")
    except FileExistsError:
        raise RuntimeError(
            f"output directory {out_dir} is locked by another run (stale? remove {lock})"
        ) from None
    try:
        handle.close()
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def _write_rows(path: Path, header: str, rows: list[str]) -> None:
    path.write_text("\n".join([header] + rows) + "\n", encoding="ascii")


def _summary_row(layer: int, phase: str, breakdown: ActionBreakdown) -> str:
    return f"{layer},{phase}," + breakdown.csv_row(0).split(",", 1)[1]


def _windowed_eval(bank, grid, flow, config):
    """Evaluate a standalone bank under a layer's window/weights/multipliers."""
    window = grid.shape[0] if config.window is None else config.window
    weights = build_weights(config.weighting, window)
    return evaluate_bank(bank, grid[:window], VelocityField(flow.data[:window]),
                         weights, config.lam, config.effective_dtau())


def cmd_synth(experiment: ExperimentConfig, out_dir: Path) -> int:
    if experiment.data.source != "synth":
        raise ConfigError("synth subcommand needs [data] source = synth")
    clip, truth = experiment.build_clip()
    with _locked_out_dir(out_dir):
        save_clip(clip, out_dir)
        save_flow(truth, out_dir / "flow.bin")
    print(f"wrote {clip.frames} frames and flow.bin to {out_dir}")
    return 0


def cmd_train(experiment: ExperimentConfig, out_dir: Path) -> int:
    clip, truth = experiment.build_clip()
    flow = experiment.build_flow(clip, truth)
    with _locked_out_dir(out_dir):
        traces = train_deep(clip, flow, experiment.layers)
        summary_rows = []
        current = clip.data
        for index, (plan, trace) in enumerate(zip(experiment.layers, traces), start=1):
            config = plan.config
            bank = trace.final_bank
            rows = [b.csv_row(step) for step, b in enumerate(trace.breakdowns)]
            _write_rows(out_dir / f"layer{index}_trace.csv", BREAKDOWN_CSV_HEADER, rows)
            save_bank(bank, out_dir / f"layer{index}_bank.txt")

            initial_bank = init_bank(plan.features, current.shape[3], plan.kernel,
                                     config.mode, config.seed, config.init_scale, layer=index)
            initial = _windowed_eval(initial_bank, current, flow, config)
            final = _windowed_eval(bank, current, flow, config)
            summary_rows.append(_summary_row(index, "initial", initial))
            summary_rows.append(_summary_row(index, "final", final))

            field = to_probabilities(convolve_features(bank, current), bank.mode)
            if experiment.save_features:
                save_feature_maps(field, out_dir / "features" / f"layer{index}")
            current = field
        _write_rows(out_dir / "summary.csv", SUMMARY_HEADER, summary_rows)
    print(f"trained {len(traces)} layer(s); outputs in {out_dir}")
    return 0


def cmd_eval(experiment: ExperimentConfig, bank_paths: list[str], out_dir: Path) -> int:
    if not bank_paths:
        raise ConfigError("eval needs at least one --bank file")
    banks = [load_bank(p) for p in bank_paths]
    clip, truth = experiment.build_clip()
    flow = experiment.build_flow(clip, truth)
    plans = experiment.layers
    with _locked_out_dir(out_dir):
        rows = []
        fields = stack_layers(banks, clip)
        current = clip.data
        for index, bank in enumerate(banks, start=1):
            config = plans[min(index, len(plans)) - 1].config
            breakdown = _windowed_eval(bank, current, flow, config)
            rows.append(_summary_row(index, "eval", breakdown))
            if experiment.save_features:
                save_feature_maps(fields[index - 1], out_dir / "features" / f"layer{index}")
            current = fields[index - 1]
        _write_rows(out_dir / "eval.csv", SUMMARY_HEADER, rows)
    print(f"evaluated {len(banks)} bank(s); outputs in {out_dir}")
    return 0


def cmd_check_grad(instances: int) -> int:
    reports = run_gradient_check(count=instances)
    worst = 0.0
    for report in reports:
        worst = max(worst, report["max_rel_err"])
        status = "ok" if report["pass"] else "FAIL"
        print(f"instance {report['instance']:2d} [{report['mode']:>14}] "
              f"max rel err {report['max_rel_err']:.3e}  {status}")
    print(f"max relative error: {worst:.6e}")
    return 0 if all(r["pass"] for r in reports) else 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cogaction",
                                     description="Motion-invariant feature learning from video")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "train", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment file")
        p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, default=None, help="override [train] seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker hint; accepted and ignored, outputs never depend on it")
        if name == "eval":
            p.add_argument("--bank", action="append", default=[],
                           help="bank file, repeatable in layer order")
    p = sub.add_parser("check-grad")
    p.add_argument("--instances", type=int, default=20,
                   help="number of seeded gradient-check instances")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "check-grad":
            return cmd_check_grad(args.instances)
        experiment = parse_config(args.config, seed_override=args.seed)
        out_dir = Path(args.out if args.out is not None else experiment.out_dir)
        if args.command == "synth":
            return cmd_synth(experiment, out_dir)
        if args.command == "train":
            return cmd_train(experiment, out_dir)
        return cmd_eval(experiment, args.bank, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, DivergenceError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
