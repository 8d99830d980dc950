"""Experiment harness.

Verbs:
    train       fit encoder and decoder, write metrics.csv and checkpoint.txt
    sweep-snr   train once (or load a checkpoint), evaluate across a channel grid
    mismatch    train at the configured point, evaluate across a test grid
    sweep-beta  full training run per beta value, per-epoch metrics
    export      re-emit a metrics file as csv or key=value text

Every verb takes --config (flat key = value file) plus overriding flags and
is reproducible: the same config and seed give the same outputs, apart from
wall-clock seconds unless `timing = off`.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

from .channel import ChannelConfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, build_run_config, parse_config_file
from .decoder import init_decoder_params
from .encoder import init_encoder_params
from .events import EventFormatError, frames_to_inputs, load_events, synthetic_records
from .metrics import MetricsRow, export_metrics, read_metrics, write_metrics
from .numerics import SeededRng, db_to_linear, ebn0_to_epsilon
from .training import Dataset, TrainingDiverged, evaluate, train_epoch

DEFAULT_SNR_GRID_DB = (float("-inf"), -6.0, -4.0, -2.0, 0.0, 2.0, 4.0)
DEFAULT_MISMATCH_GRID = (0.05, 0.10, 0.15, 0.20, 0.25)
DEFAULT_BETA_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _build_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset == "synthetic":
        syn = cfg.synthetic_config()
        train = synthetic_records(syn, cfg.train_per_class, cfg.seed, tag="train")
        test = synthetic_records(syn, cfg.test_per_class, cfg.seed, tag="test")
        n_classes = syn.n_classes
    else:
        train = load_events(cfg.train_events)
        test = load_events(cfg.test_events)
        if not train or not test:
            raise ConfigError("event files contain no records")
        n_classes = max(r.label for r in train + test) + 1
    train_x, train_y = frames_to_inputs(train, cfg.T)
    test_x, test_y = frames_to_inputs(test, cfg.T)
    return Dataset(train_x, train_y, test_x, test_y, n_classes)


def _init_models(cfg: RunConfig, data: Dataset):
    root = SeededRng(cfg.seed)
    encoder = init_encoder_params(
        data.input_dim,
        cfg.k,
        root.substream("init", "encoder"),
        kernel_ff=cfg.kernel_ff(),
        kernel_fb=cfg.kernel_fb(),
        init_rate=cfg.init_rate,
    )
    decoder = init_decoder_params(
        cfg.k * cfg.T,
        data.n_classes,
        root.substream("init", "decoder"),
        hidden_dim=cfg.hidden,
        output=cfg.output,
    )
    return encoder, decoder


def _train_run(cfg: RunConfig, data: Dataset, experiment: str, point: int,
               beta: float | None = None, channel: ChannelConfig | None = None):
    """Full training loop; returns params and one metrics row per epoch."""
    train_cfg = cfg.train_config()
    if beta is not None:
        train_cfg = dataclasses.replace(train_cfg, beta=beta)
    if channel is not None:
        train_cfg = dataclasses.replace(train_cfg, channel=channel)
    eps = train_cfg.channel.crossover()
    encoder, decoder = _init_models(cfg, data)
    root = SeededRng(cfg.seed)
    opt_state: dict = {}
    rows = []
    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        encoder, decoder, metrics = train_epoch(
            encoder, decoder, data, train_cfg, root.substream("train", epoch), opt_state
        )
        seconds = time.perf_counter() - started if cfg.timing else 0.0
        rows.append(
            MetricsRow(
                experiment=experiment,
                point=point,
                epoch=epoch,
                epsilon=eps,
                ebn0_db=train_cfg.channel.ebn0_db,
                beta=train_cfg.beta,
                k=cfg.k,
                error_rate=metrics.test_error,
                spike_rate=metrics.spike_rate,
                seconds=seconds,
            )
        )
        _log(
            f"{experiment} point={point} epoch={epoch} "
            f"error={metrics.test_error:.4f} rate={metrics.spike_rate:.4f} "
            f"objective={metrics.objective:.4f}"
        )
    return encoder, decoder, rows


def _parse_grid(args, mapping: str) -> list[tuple[float, float | None]]:
    """Channel grid as (epsilon, ebn0_db or None) pairs."""
    if args.epsilon_grid and args.ebn0_grid_db:
        raise ConfigError("give only one of --epsilon-grid and --ebn0-grid-db")
    if args.epsilon_grid:
        points = []
        for eps in args.epsilon_grid:
            if not 0.0 <= eps <= 0.5:
                raise ConfigError(f"grid epsilon {eps} outside [0, 0.5]")
            points.append((eps, None))
        return points
    grid_db = args.ebn0_grid_db
    if not grid_db:
        grid_db = list(DEFAULT_SNR_GRID_DB if args.command == "sweep-snr" else [])
    if not grid_db:
        return [(eps, None) for eps in DEFAULT_MISMATCH_GRID]
    return [
        (ebn0_to_epsilon(db_to_linear(db), form=mapping), db) for db in grid_db
    ]


def _eval_grid(cfg, encoder, decoder, data, grid, experiment, epochs_done, rows):
    for i, (eps, db) in enumerate(grid):
        started = time.perf_counter()
        error, rate = evaluate(
            encoder, decoder, data.test_inputs, data.test_labels, eps, cfg.seed
        )
        seconds = time.perf_counter() - started if cfg.timing else 0.0
        rows.append(
            MetricsRow(
                experiment=experiment,
                point=i,
                epoch=epochs_done,
                epsilon=eps,
                ebn0_db=db,
                beta=cfg.beta,
                k=cfg.k,
                error_rate=error,
                spike_rate=rate,
                seconds=seconds,
            )
        )
        _log(f"{experiment} point={i} epsilon={eps:.6g} error={error:.4f}")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_meta(cfg: RunConfig, data: Dataset) -> dict:
    return {
        "k": cfg.k,
        "T": cfg.T,
        "hidden": cfg.hidden,
        "classes": data.n_classes,
        "input_dim": data.input_dim,
    }


def cmd_train(cfg: RunConfig) -> int:
    data = _build_dataset(cfg)
    out = _out_dir(cfg)
    try:
        encoder, decoder, rows = _train_run(cfg, data, "train", 0)
    except TrainingDiverged as exc:
        write_metrics(out / "metrics.csv", [])
        _log(f"training aborted: {exc}")
        return 3
    write_metrics(out / "metrics.csv", rows)
    save_checkpoint(out / "checkpoint.txt", encoder, decoder, _checkpoint_meta(cfg, data))
    if rows:
        print(f"final test error {rows[-1].error_rate:.4f}, "
              f"spike rate {rows[-1].spike_rate:.4f}")
    else:
        print("no epochs requested; wrote initial checkpoint")
    return 0


def cmd_sweep_snr(cfg: RunConfig, args) -> int:
    data = _build_dataset(cfg)
    out = _out_dir(cfg)
    grid = _parse_grid(args, cfg.mapping)
    rows: list[MetricsRow] = []
    if args.train_per_point:
        for i, (eps, db) in enumerate(grid):
            if eps >= 0.5:
                raise ConfigError(
                    f"grid point {i} has epsilon {eps}; training needs epsilon < 0.5"
                )
            channel = (ChannelConfig(epsilon=eps) if db is None
                       else ChannelConfig(ebn0_db=db, mapping=cfg.mapping))
            encoder, decoder, _ = _train_run(cfg, data, "sweep-snr", i, channel=channel)
            error, rate = evaluate(
                encoder, decoder, data.test_inputs, data.test_labels, eps, cfg.seed
            )
            rows.append(
                MetricsRow("sweep-snr", i, cfg.epochs, eps, db, cfg.beta, cfg.k,
                           error, rate, 0.0)
            )
            _log(f"sweep-snr point={i} epsilon={eps:.6g} error={error:.4f}")
    else:
        if args.checkpoint:
            encoder, decoder, meta = load_checkpoint(args.checkpoint)
            if decoder.input_dim != cfg.k * cfg.T:
                raise ConfigError(
                    "checkpoint decoder width does not match k * T from the config"
                )
        else:
            encoder, decoder, _ = _train_run(cfg, data, "train", 0)
            save_checkpoint(out / "checkpoint.txt", encoder, decoder,
                            _checkpoint_meta(cfg, data))
        _eval_grid(cfg, encoder, decoder, data, grid, "sweep-snr", cfg.epochs, rows)
    write_metrics(out / "metrics.csv", rows)
    print(f"swept {len(grid)} channel points; metrics in {out / 'metrics.csv'}")
    return 0


def cmd_mismatch(cfg: RunConfig, args) -> int:
    data = _build_dataset(cfg)
    out = _out_dir(cfg)
    grid = _parse_grid(args, cfg.mapping)
    encoder, decoder, _ = _train_run(cfg, data, "train", 0)
    save_checkpoint(out / "checkpoint.txt", encoder, decoder, _checkpoint_meta(cfg, data))
    rows: list[MetricsRow] = []
    _eval_grid(cfg, encoder, decoder, data, grid, "mismatch", cfg.epochs, rows)
    write_metrics(out / "metrics.csv", rows)
    train_eps = cfg.channel_config().crossover()
    print(f"trained at epsilon {train_eps:.6g}, evaluated {len(grid)} points")
    return 0


def cmd_sweep_beta(cfg: RunConfig, args) -> int:
    data = _build_dataset(cfg)
    out = _out_dir(cfg)
    betas = list(args.beta_grid) if args.beta_grid else list(DEFAULT_BETA_GRID)
    for beta in betas:
        if beta <= 0:
            raise ConfigError(f"beta grid values must be positive, got {beta}")
    rows: list[MetricsRow] = []
    for i, beta in enumerate(betas):
        try:
            _, _, run_rows = _train_run(cfg, data, "sweep-beta", i, beta=beta)
        except TrainingDiverged as exc:
            write_metrics(out / "metrics.csv", rows)
            _log(f"training aborted at beta={beta}: {exc}")
            return 3
        rows.extend(run_rows)
    write_metrics(out / "metrics.csv", rows)
    print(f"swept {len(betas)} beta values; metrics in {out / 'metrics.csv'}")
    return 0


def cmd_export(args) -> int:
    rows = read_metrics(args.metrics)
    text = export_metrics(rows, args.format)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _float_list(raw: str) -> list[float]:
    return [float(part) for part in raw.split(",") if part.strip()]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--epsilon", type=float, help="channel crossover probability")
    parser.add_argument("--ebn0-db", type=float, help="channel Eb/N0 in dB")
    parser.add_argument("--beta", type=float, help="rate term weight")
    parser.add_argument("--k", type=int, help="encoder read-out neurons")
    parser.add_argument("--T", type=int, help="time steps per sequence")
    parser.add_argument("--epochs", type=int)


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikelink",
        description="spiking encoder / noisy link / edge decoder experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for verb in ("train", "sweep-snr", "mismatch", "sweep-beta"):
        p = sub.add_parser(verb)
        _add_common(p)
        if verb in ("sweep-snr", "mismatch"):
            p.add_argument("--epsilon-grid", type=_float_list,
                           help="comma-separated epsilon grid")
            p.add_argument("--ebn0-grid-db", type=_float_list,
                           help="comma-separated Eb/N0 grid in dB (-inf allowed)")
        if verb == "sweep-snr":
            p.add_argument("--train-per-point", action="store_true",
                           help="retrain at every grid point instead of reusing one model")
            p.add_argument("--checkpoint", help="evaluate this checkpoint instead of training")
        if verb == "sweep-beta":
            p.add_argument("--beta-grid", type=_float_list,
                           help="comma-separated beta grid")

    p = sub.add_parser("export")
    p.add_argument("--metrics", required=True, help="metrics csv to export")
    p.add_argument("--format", default="csv", choices=("csv", "kv"))
    p.add_argument("--out", help="write here instead of stdout")
    return parser


def _overrides(args) -> dict:
    over: dict = {}
    for key in ("seed", "out", "epsilon", "beta", "k", "T", "epochs"):
        value = getattr(args, key, None)
        if value is not None:
            over[key] = value
    if getattr(args, "ebn0_db", None) is not None:
        over["ebn0_db"] = args.ebn0_db
    return over


def main(argv=None) -> int:
    parser = _make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "export":
            return cmd_export(args)
        file_values = parse_config_file(args.config) if args.config else {}
        cfg = build_run_config(file_values, _overrides(args))
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sweep-snr":
            return cmd_sweep_snr(cfg, args)
        if args.command == "mismatch":
            return cmd_mismatch(cfg, args)
        if args.command == "sweep-beta":
            return cmd_sweep_beta(cfg, args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, CheckpointError, EventFormatError, ValueError) as exc:
        _log(f"error: {exc}")
        return 2
    except TrainingDiverged as exc:
        _log(f"error: {exc}")
        return 3
    except OSError as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
