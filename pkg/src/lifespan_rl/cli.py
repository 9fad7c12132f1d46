"""Command line entry point: ``lifespan-rl {train,evaluate,analyze,compare,rainflow}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import default_config_path, load_config
from .errors import ConfigError, DataError, DomainError, NumericalFault

log = logging.getLogger("lifespan_rl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _train(args) -> int:
    from .harness import train

    config = load_config(args.config or default_config_path())
    overrides = {"variant": args.variant, "seed": args.seed, "episodes": args.episodes}
    if args.output:
        overrides["output_dir"] = str(Path(args.output).resolve())
    config = config.with_overrides(**overrides).check()
    ckpt, records = train(config, resume=args.resume)
    wins = sum(r.success for r in records)
    print(f"trained {config.variant} seed {config.seed}: {len(records)} episodes, {wins} successes")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def _evaluate(args) -> int:
    from .harness import evaluate

    out = args.output or str(Path(args.checkpoint[0]).parent / "evaluation")
    rows = evaluate(args.checkpoint, args.trials, args.seed, out)
    print("variant,trials,mean_rul,std_rul,success_rate,mean_final_distance,improvement")
    for r in rows:
        print(f"{r['variant']},{r['trials']},{r['mean_rul']:.6g},{r['std_rul']:.6g},"
              f"{r['success_rate']:.3f},{r['mean_final_distance']:.4f},{r['improvement']:.3f}")
    print(f"written to {out}")
    return EXIT_OK


def _analyze(args) -> int:
    from .harness import analyze_stress

    out = args.output or str(Path(args.checkpoint).parent / "analysis")
    data = analyze_stress(args.checkpoint, args.seed, out)
    print(f"tool RUL {data['tool_rul']:.6g}; critical element {data['critical_element']}")
    print(f"written to {out}")
    return EXIT_OK


def _compare(args) -> int:
    from .experiment import compare_lifespan, run_protocol

    config = load_config(args.config or default_config_path())
    if args.gradient_steps is not None:
        config = config.with_overrides(sac=dict(config.raw["sac"], gradient_steps=args.gradient_steps))
    config.check()
    out = Path(args.output).resolve()
    results = run_protocol(config, args.variants, args.seeds, args.episodes, args.trials, out)
    for (variant, seed), r in sorted(results.items()):
        print(f"{variant} seed {seed}: eval RUL {r.mean_eval_rul:.4g}, success {r.success_rate:.2f}, "
              f"final training RUL {r.final_training_rul():.4g}")
    if "ours" in args.variants and "baseline" in args.variants and len(args.seeds) > 1:
        cmp = compare_lifespan(results, args.seeds)
        print(f"ours/baseline eval RUL {cmp.factor:.2f}x, paired one-sided p = {cmp.p_value:.3g}")
    print(f"written to {out}")
    return EXIT_OK


def read_stress_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Stress table with one column per element and one row per sample.

    A header row is optional; a column named ``time`` is ignored.
    """
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    try:
        [float(c) for c in rows[0]]
        names = [f"e{i}" for i in range(len(rows[0]))]
    except ValueError:
        names, rows = [c.strip() for c in rows[0]], rows[1:]
    keep = [i for i, n in enumerate(names) if n.lower() != "time"]
    try:
        table = np.array([[float(r[i]) for i in keep] for r in rows], dtype=float)
    except (ValueError, IndexError) as exc:
        raise DataError(f"malformed stress table {path}: {exc}") from exc
    if table.size == 0:
        raise DataError(f"{path} has no samples")
    return [names[i] for i in keep], table


def _rainflow(args) -> int:
    from .fatigue import SnCurve, miner_damage, rainflow_count, rul_from_damage

    names, table = read_stress_csv(args.input)
    curve = SnCurve(args.a, args.b) if args.config is None else load_config(args.config).sn_curve
    print("element,amplitude,count")
    series = [rainflow_count(table[:, j]) for j in range(len(names))]
    for name, cycles in zip(names, series):
        for amp, n in cycles:
            print(f"{name},{float(amp)!r},{n}")
    rul = rul_from_damage(miner_damage(series, curve, not args.no_residuals))
    print("element,damage,rul")
    for name, d, eta in zip(names, rul.damage, rul.per_element):
        print(f"{name},{float(d)!r},{float(eta)!r}")
    print(f"tool_rul,{float(rul.tool_rul)!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lifespan-rl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one variant/seed")
    t.add_argument("--config", help="YAML run config (default: packaged object-moving config)")
    t.add_argument("--variant", choices=["ours", "baseline", "ours_no_arn", "torque"])
    t.add_argument("--seed", type=int)
    t.add_argument("--episodes", type=int)
    t.add_argument("--output", help="output directory")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=_train)

    e = sub.add_parser("evaluate", help="deterministic evaluation of checkpoints")
    e.add_argument("--checkpoint", nargs="+", required=True)
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--seed", type=int, default=10_000)
    e.add_argument("--output")
    e.set_defaults(func=_evaluate)

    a = sub.add_parser("analyze", help="per-element RUL of one deterministic rollout")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--seed", type=int, default=10_000)
    a.add_argument("--output")
    a.set_defaults(func=_analyze)

    c = sub.add_parser("compare", help="train and evaluate several variants over several seeds")
    c.add_argument("--config")
    c.add_argument("--variants", nargs="+", default=["baseline", "ours", "ours_no_arn"])
    c.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    c.add_argument("--episodes", type=int, default=600)
    c.add_argument("--trials", type=int, default=50)
    c.add_argument("--gradient-steps", type=int, help="gradient steps per environment step")
    c.add_argument("--output", default="compare")
    c.set_defaults(func=_compare)

    r = sub.add_parser("rainflow", help="fatigue analysis of a stress CSV")
    r.add_argument("--input", required=True)
    r.add_argument("--config", help="take the S-N curve from this run config")
    r.add_argument("--a", type=float, default=1.0e39, help="Basquin coefficient")
    r.add_argument("--b", type=float, default=6.0, help="Basquin exponent")
    r.add_argument("--no-residuals", action="store_true", help="drop residual half-cycles from the damage sum")
    r.set_defaults(func=_rainflow)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
