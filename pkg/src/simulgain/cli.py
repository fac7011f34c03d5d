"""Command-line front end: dataset generation, training, simulation, sweeps, reports.

All commands read one JSON config file (every section optional, defaults
apply) plus a few overriding flags whose names mirror the config fields.
Outputs are plot-ready CSV/JSONL and are byte-identical across reruns with
the same inputs and seeds.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, MetricError, NumericError
from .losses import LossWeights
from .metrics import (
    LatencyBand,
    bleu,
    laal,
    latency_vs_position,
    nose,
    read_loop_pct,
    read_pareto_csv,
    write_latency_bins_csv,
    write_nose_csv,
    write_pareto_csv,
)
from .policy import PolicyConfig, PolicyVariant, load_params, save_params
from .streaming import StreamConfig, ThresholdPolicy, load_logs, save_logs, simulate, sweep
from .synth import OracleModel, SynthConfig, generate_dataset, load_dataset, save_dataset
from .training import TrainConfig, train, write_training_csv


@dataclass
class ExperimentConfig:
    synth: SynthConfig
    train: TrainConfig
    loss: LossWeights
    stream: StreamConfig
    hidden_dims: tuple[int, ...] = (64, 64)
    time_base: float = 100.0
    count: int = 100
    alphas: tuple[float, ...] = ()
    band: LatencyBand | None = None
    report_bins: int = 10
    dataset: str = "dataset.jsonl"
    checkpoint: str = "policy.ckpt"
    out_dir: str = "out"


def _section(cls, data: dict, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown field")
    return cls(**data)


def load_config(path: str | None, seed: int | None = None, out_dir: str | None = None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
    known = {"synth", "train", "loss", "stream", "hidden_dims", "time_base", "count",
             "alphas", "band", "report_bins", "paths"}
    for key in data:
        if key not in known:
            raise ConfigError(f"{key}: unknown config section")
    paths = data.get("paths", {})
    for key in paths:
        if key not in ("dataset", "checkpoint", "out_dir"):
            raise ConfigError(f"paths.{key}: unknown field")
    band = data.get("band")
    cfg = ExperimentConfig(
        synth=_section(SynthConfig, data.get("synth", {}), "synth"),
        train=_section(TrainConfig, data.get("train", {}), "train"),
        loss=_section(LossWeights, data.get("loss", {}), "loss"),
        stream=_section(StreamConfig, data.get("stream", {}), "stream"),
        hidden_dims=tuple(data.get("hidden_dims", (64, 64))),
        time_base=float(data.get("time_base", 100.0)),
        count=int(data.get("count", 100)),
        alphas=tuple(float(a) for a in data.get("alphas", ())),
        band=LatencyBand(float(band[0]), float(band[1])) if band is not None else None,
        report_bins=int(data.get("report_bins", 10)),
        dataset=paths.get("dataset", "dataset.jsonl"),
        checkpoint=paths.get("checkpoint", "policy.ckpt"),
        out_dir=paths.get("out_dir", "out"),
    )
    if seed is not None:
        cfg.synth = dataclasses.replace(cfg.synth, rng_seed=seed)
        cfg.train = dataclasses.replace(cfg.train, rng_seed=seed)
    if out_dir is not None:
        cfg.out_dir = out_dir
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _policy_config(cfg: ExperimentConfig, variant: PolicyVariant) -> PolicyConfig:
    return PolicyConfig.for_variant(variant, input_dim=cfg.synth.feature_dim,
                                    hidden_dims=cfg.hidden_dims, time_base=cfg.time_base)


def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    count = args.count if args.count is not None else cfg.count
    utterances = generate_dataset(cfg.synth, count)
    save_dataset(utterances, cfg.dataset)
    print(f"wrote {len(utterances)} utterances (seed {cfg.synth.rng_seed}) -> {cfg.dataset}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    if args.variant is not None:
        cfg.train = dataclasses.replace(cfg.train, variant=PolicyVariant(args.variant))
    if args.steps is not None:
        cfg.train = dataclasses.replace(cfg.train, steps=args.steps)
    if args.objective is not None:
        cfg.train = dataclasses.replace(cfg.train, objective=args.objective)
    dataset = load_dataset(cfg.dataset)
    oracle = OracleModel(cfg.synth)
    variant = cfg.train.variant
    if variant.uses_alignment_loss and not any(u.aligned for u in dataset):
        print("warning: no aligned utterances; alignment term will be 0", file=sys.stderr)
    report = train(oracle, dataset, _policy_config(cfg, variant), cfg.train, cfg.loss)
    save_params(report.params, cfg.checkpoint, extra={"variant": variant.value,
                                                      "objective": cfg.train.objective})
    out = _out_dir(cfg)
    write_training_csv(report, out / "training.csv")
    last = report.records[-1]
    print(f"trained {variant.value} for {cfg.train.steps} steps: "
          f"loss {last.loss_total:.6f} -> {cfg.checkpoint}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    if args.alpha is not None:
        cfg.stream = dataclasses.replace(cfg.stream, alpha=args.alpha)
    dataset = load_dataset(cfg.dataset)
    oracle = OracleModel(cfg.synth)
    params, extra = load_params(cfg.checkpoint)
    policy = ThresholdPolicy(oracle, params, cfg.stream.alpha)
    logs = [simulate(oracle, utt, policy, cfg.stream) for utt in dataset]
    out = _out_dir(cfg)
    save_logs(logs, out / "emission_logs.jsonl")
    mean_laal = float(np.mean([laal(log, utt.n_tokens) for log, utt in zip(logs, dataset)]))
    quality = bleu([log.tokens for log in logs], [list(u.target_tokens) for u in dataset])
    print(f"alpha={cfg.stream.alpha}: mean LAAL {mean_laal:.3f} s, BLEU {quality:.2f}, "
          f"read loops {read_loop_pct(logs):.1f}% -> {out / 'emission_logs.jsonl'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    alphas = cfg.alphas
    if args.alphas is not None:
        alphas = tuple(float(a) for a in args.alphas.split(","))
    if not alphas:
        raise ConfigError("alphas: must be provided in the config or via --alphas")
    dataset = load_dataset(cfg.dataset)
    oracle = OracleModel(cfg.synth)
    params, extra = load_params(cfg.checkpoint)
    points, logs_by_alpha = sweep(oracle, params, dataset, alphas, cfg.stream, collect_logs=True)
    out = _out_dir(cfg)
    write_pareto_csv(points, out / "pareto.csv")
    for i, alpha in enumerate(alphas):
        save_logs(logs_by_alpha[float(alpha)], out / f"logs_{i:02d}.jsonl")
    meta = {"variant": extra.get("variant", "UNKNOWN"), "alphas": list(alphas),
            "dataset": str(cfg.dataset), "checkpoint": str(cfg.checkpoint)}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n",
                                   encoding="utf-8")
    for p in points:
        print(f"alpha={p.alpha}: LAAL {p.mean_laal_s:.3f} s, BLEU {p.quality:.2f}, "
              f"read loops {p.read_loop_pct:.1f}%")
    print(f"wrote {out / 'pareto.csv'}")
    return 0


def _offline_quality(oracle: OracleModel, dataset) -> float:
    hyps = []
    for utt in dataset:
        hyps.append([oracle.greedy_token(utt, utt.duration_s, n) for n in range(utt.n_tokens)])
    return bleu(hyps, [list(u.target_tokens) for u in dataset])


def cmd_report(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    if cfg.band is None:
        raise ConfigError("band: required for report (set \"band\": [x, y] in the config)")
    dataset = load_dataset(cfg.dataset)
    oracle = OracleModel(cfg.synth)
    offline = _offline_quality(oracle, dataset)
    out = _out_dir(cfg)

    nose_rows = []
    bins_by_variant: dict[str, list] = {}
    mid = 0.5 * (cfg.band.x + cfg.band.y)
    for sweep_dir in args.sweeps:
        sweep_path = Path(sweep_dir)
        meta = json.loads((sweep_path / "meta.json").read_text(encoding="utf-8"))
        variant = meta["variant"]
        points = read_pareto_csv(sweep_path / "pareto.csv")
        nose_rows.append((variant, cfg.band, nose(points, offline, cfg.band)))
        pick = int(np.argmin([abs(p.mean_laal_s - mid) for p in points]))
        logs = load_logs(sweep_path / f"logs_{pick:02d}.jsonl")
        bins_by_variant[variant] = latency_vs_position(logs, dataset, cfg.report_bins)

    write_nose_csv(nose_rows, out / "nose.csv")
    write_latency_bins_csv(bins_by_variant, out / "latency_bins.csv")

    utt = dataset[0]
    grid = oracle.frame_grid(utt)
    lines = ["t_s,token_index,info_gain"]
    for n in range(utt.n_tokens):
        gains = oracle.info_gain_many(utt, grid, np.full(grid.shape[0], n, dtype=np.int64))
        for t, g in zip(grid, gains):
            lines.append(f"{repr(float(t))},{n},{repr(float(g))}")
    (out / "info_gain_grid.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    print(f"offline quality (full-audio BLEU): {offline:.2f}")
    for variant, band, value in nose_rows:
        print(f"NoSE[{band.x}, {band.y}] {variant}: {value:.4f}")
    print(f"wrote {out / 'nose.csv'}, {out / 'latency_bins.csv'}, {out / 'info_gain_grid.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulgain",
                                     description="Information-gain read/write policy lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override synth/train rng_seed")
        p.add_argument("--out", default=None, help="override output directory")

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    add_common(p_gen)
    p_gen.add_argument("--count", type=int, default=None, help="number of utterances")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train a policy variant")
    add_common(p_train)
    p_train.add_argument("--variant", choices=[v.value for v in PolicyVariant], default=None)
    p_train.add_argument("--steps", type=int, default=None)
    p_train.add_argument("--objective", choices=["cov", "mse"], default=None)
    p_train.set_defaults(func=cmd_train)

    p_sim = sub.add_parser("simulate", help="stream the dataset at one threshold")
    add_common(p_sim)
    p_sim.add_argument("--alpha", type=float, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="threshold sweep producing pareto.csv")
    add_common(p_sweep)
    p_sweep.add_argument("--alphas", default=None, help="comma-separated thresholds")
    p_sweep.set_defaults(func=cmd_sweep)

    p_report = sub.add_parser("report", help="NoSE / latency-bin / info-gain reports")
    add_common(p_report)
    p_report.add_argument("--sweeps", nargs="+", required=True, help="sweep output directories")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except (MetricError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
