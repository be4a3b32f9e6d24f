"""Command-line experiment runner.

Verbs:
  run    execute one experiment and write its artifacts
  sweep  run a cartesian grid of config overrides
  eval   score a saved checkpoint on a dataset split
  bound  print the convergence-theory quantities for given constants

``section.key=value`` overrides take precedence over config-file keys.
The environment variable LSS_THREADS caps how many clients train
concurrently (default 1); results are identical for any value.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from pathlib import Path

import yaml

from .analysis import (
    TheoryParams,
    bvcl_diagnostics,
    convergence_bound,
    estimate_sigma,
    estimate_zeta,
    hessian_top_eig,
    lr_choice,
    max_local_steps,
    write_diagnostics,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    parse_config_data,
    serialize_config,
)
from .data import split_dataset, write_partition_plan
from .experiment import ExperimentResult, build_dataset, build_model_spec, run_experiment
from .federation import derive_seed, write_rounds_csv
from .model import accuracy, loss_and_grad
from .params import l2_distance, load_checkpoint, save_checkpoint


def _load_raw_config(path: str, overrides: list[str]) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if overrides:
        raw = apply_overrides(raw, overrides)
    return parse_config_data(raw)


def _collect_diagnostics(cfg: ExperimentConfig, result: ExperimentResult) -> dict:
    last = result.records[-1]
    entries: dict = {
        "rounds": len(result.records),
        "final_global_accuracy": last.global_test_accuracy,
        "final_global_loss": last.global_test_loss,
        "anchor_to_final_distance": l2_distance(result.final_model, result.anchor),
        "round_times_s": ";".join(
            format(r.wall_time_seconds, ".6f") for r in result.records
        ),
    }
    client_datasets = [c.data for c in result.clients]
    if cfg.analysis.zeta:
        entries["zeta_hat"] = estimate_zeta(
            result.final_model, result.spec, client_datasets
        )
    if cfg.analysis.sigma:
        entries["sigma_hat"] = max(
            estimate_sigma(
                result.final_model,
                result.spec,
                d,
                cfg.local.batch_size,
                cfg.analysis.sigma_draws,
                derive_seed(cfg.master_seed, "sigma", cid),
            )
            for cid, d in enumerate(client_datasets)
        )
    if cfg.analysis.hessian:
        entries["hessian_top_eigenvalue"] = hessian_top_eig(
            result.final_model,
            result.spec,
            result.eval_data,
            cfg.analysis.hessian_iters,
            derive_seed(cfg.master_seed, "hessian"),
            batch_size=cfg.local.batch_size,
        )
    if cfg.analysis.bvcl and len(result.last_round_client_models) >= 2:
        bvcl = bvcl_diagnostics(
            list(result.last_round_client_models), result.spec, result.eval_data
        )
        entries["bvcl_variance"] = bvcl.variance
        entries["bvcl_covariance"] = bvcl.covariance
        entries["bvcl_locality"] = bvcl.locality
    return entries


def _write_artifacts(cfg: ExperimentConfig, result: ExperimentResult, out: Path) -> None:
    if out.exists() and not out.is_dir():
        raise ValueError(f"output path {out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)

    def staged(name: str, writer) -> None:
        tmp = out / f".tmp.{name}"
        writer(tmp)
        os.replace(tmp, out / name)

    staged("config.yaml", lambda p: Path(p).write_text(serialize_config(cfg), encoding="utf-8"))
    staged("rounds.csv", lambda p: write_rounds_csv(result.records, p))
    staged(
        "final.lssw",
        lambda p: save_checkpoint(p, result.final_model, result.spec.shape_spec()),
    )
    staged(
        "diagnostics.txt",
        lambda p: write_diagnostics(p, _collect_diagnostics(cfg, result)),
    )
    staged("partition.txt", lambda p: write_partition_plan(result.plan, p))


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_raw_config(args.config, args.set or [])
    result = run_experiment(cfg)
    _write_artifacts(cfg, result, Path(cfg.output_dir))
    for rec in result.records:
        print(
            f"round {rec.round_index}: acc={rec.global_test_accuracy:.4f} "
            f"loss={rec.global_test_loss:.4f}"
        )
    print(f"wrote {cfg.output_dir}")
    return 0


def _parse_grid(items: list[str]) -> list[tuple[str, list[str]]]:
    grid = []
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigError(item, "grid entry must look like section.key=v1,v2")
        grid.append((key.strip(), values.split(",")))
    return grid


def cmd_sweep(args: argparse.Namespace) -> int:
    grid = _parse_grid(args.grid or [])
    if not grid:
        raise ConfigError("--grid", "at least one grid entry is required")
    base_overrides = args.set or []
    sweep_root = Path(args.out) if args.out else None

    keys = [k for k, _ in grid]
    rows = []
    for cell_idx, combo in enumerate(itertools.product(*(v for _, v in grid))):
        cell_overrides = [f"{k}={v}" for k, v in zip(keys, combo)]
        label = "_".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, combo))
        cell_name = f"cell_{cell_idx:03d}_{label}"
        overrides = list(base_overrides) + cell_overrides
        status, final_acc = "ok", ""
        try:
            cfg = _load_raw_config(args.config, overrides)
            root = sweep_root if sweep_root is not None else Path(cfg.output_dir)
            cell_dir = root / cell_name
            cfg = _load_raw_config(
                args.config, overrides + [f"output.dir={cell_dir}"]
            )
            result = run_experiment(cfg)
            _write_artifacts(cfg, result, cell_dir)
            final_acc = format(result.records[-1].global_test_accuracy, ".17g")
        except Exception as exc:
            status = f"error: {exc}"
        rows.append((cell_name, list(combo), status, final_acc))
        print(f"{cell_name}: {status}" + (f" acc={final_acc}" if final_acc else ""))

    if sweep_root is None:
        cfg = _load_raw_config(args.config, base_overrides)
        sweep_root = Path(cfg.output_dir)
    sweep_root.mkdir(parents=True, exist_ok=True)
    summary = sweep_root / "summary.csv"
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["cell", *keys, "status", "final_acc"]) + "\n")
        for cell_name, combo, status, final_acc in rows:
            safe_status = status.replace(",", ";")
            fh.write(",".join([cell_name, *combo, safe_status, final_acc]) + "\n")
    print(f"wrote {summary}")
    return 0 if all(r[2] == "ok" for r in rows) else 1


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_raw_config(args.config, args.set or [])
    params, _ = load_checkpoint(args.checkpoint)
    base = build_dataset(cfg)
    spec = build_model_spec(cfg, base)
    if params.dim != spec.param_count():
        raise ValueError(
            f"checkpoint has {params.dim} parameters, config model needs "
            f"{spec.param_count()}"
        )
    fractions = (
        1.0 - cfg.data.val_fraction - cfg.data.test_fraction,
        cfg.data.val_fraction,
        cfg.data.test_fraction,
    )
    splits = dict(
        zip(
            ("train", "val", "test"),
            split_dataset(base, fractions, derive_seed(cfg.master_seed, "split")),
        )
    )
    data = splits[args.split]
    batch = data.as_batch()
    acc = accuracy(params, spec, batch)
    loss, _ = loss_and_grad(params, spec, batch)
    print(f"split: {args.split}")
    print(f"accuracy: {acc:.6f}")
    print(f"loss: {loss:.6f}")
    return 0


def cmd_bound(args: argparse.Namespace) -> int:
    p = TheoryParams(
        beta=args.beta,
        sigma=args.sigma,
        zeta=args.zeta,
        c=args.c,
        d=args.d,
        num_clients=args.clients,
        tau=args.tau,
        rounds=args.rounds,
    )
    print(f"learning_rate: {lr_choice(p):.12g}")
    print(f"bound: {convergence_bound(p):.12g}")
    print(f"bound_alt_first_term: {convergence_bound(p, first_term='d_squared'):.12g}")
    print(f"max_local_steps: {max_local_steps(p):.12g}")
    print(f"total_grad_computations: {p.total_grads}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lss", description="Federated-learning experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment from a config file")
    run_p.add_argument("config", help="path to a YAML experiment config")
    run_p.add_argument(
        "--set",
        "-s",
        action="append",
        metavar="KEY=VALUE",
        help="override a config key by dotted path, e.g. local.lambda_a=3",
    )
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a cartesian grid of overrides")
    sweep_p.add_argument("config", help="path to a YAML experiment config")
    sweep_p.add_argument(
        "--grid",
        "-g",
        action="append",
        metavar="KEY=V1,V2,...",
        help="grid axis as dotted key with comma-separated values",
    )
    sweep_p.add_argument("--set", "-s", action="append", metavar="KEY=VALUE")
    sweep_p.add_argument("--out", help="sweep root directory (default: output.dir)")
    sweep_p.set_defaults(func=cmd_sweep)

    eval_p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    eval_p.add_argument("checkpoint", help="path to a .lssw checkpoint")
    eval_p.add_argument("--config", required=True, help="config describing the data")
    eval_p.add_argument("--split", default="test", choices=("train", "val", "test"))
    eval_p.add_argument("--set", "-s", action="append", metavar="KEY=VALUE")
    eval_p.set_defaults(func=cmd_eval)

    bound_p = sub.add_parser("bound", help="print convergence-theory quantities")
    bound_p.add_argument("--beta", type=float, required=True)
    bound_p.add_argument("--sigma", type=float, required=True)
    bound_p.add_argument("--zeta", type=float, required=True)
    bound_p.add_argument("--c", type=float, required=True)
    bound_p.add_argument("--d", type=float, required=True)
    bound_p.add_argument("--clients", type=int, required=True)
    bound_p.add_argument("--tau", type=int, required=True)
    bound_p.add_argument("--rounds", type=int, required=True)
    bound_p.set_defaults(func=cmd_bound)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
