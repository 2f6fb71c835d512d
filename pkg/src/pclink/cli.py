"""Command line front end: data generation, training, evaluation, sweeps.

Experiment parameters come from an INI config file; unknown sections or
keys are rejected so typos fail loudly instead of silently falling back
to defaults. All CSV output is deterministic for fixed inputs: floats
are written with repr (shortest exact form, infinities as 'inf').
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from . import pipeline, sse
from .channel import ChannelConfig, DigitalConfig
from .codec import Codec, CodecConfig, TrainConfig
from .pointcloud_io import SHAPE_KINDS, gen_shape, write_ply

CONFIG_SCHEMA = {
    "model": {"cube_side", "widths", "latent_channels", "vrn_per_stage", "seed"},
    "train": {"epochs", "batch_size", "lr", "snr_db", "channel", "zeta", "seed"},
    "corpus": {"kinds", "seeds", "precision_b", "points_per_shape", "cube_side",
               "min_occupied", "max_cubes"},
    "eval": {"kinds", "seeds", "precision_b", "points_per_shape", "cube_side",
             "min_occupied", "max_cubes_per_shape"},
    "digital": {"bits_per_value", "coding", "modulation"},
}

SWEEP_COLUMNS = ["mse_c2c", "mse_c2p", "psnr_c2c", "psnr_c2p", "n_symbols"]


def load_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is not None:
        with open(path) as fh:
            parser.read_file(fh)
        for section in parser.sections():
            allowed = CONFIG_SCHEMA.get(section)
            if allowed is None:
                raise ValueError(f"unknown config section [{section}]")
            for key in parser[section]:
                if key not in allowed:
                    raise ValueError(f"unknown key {key!r} in section [{section}]")
    return parser


def parse_grid(text: str) -> list[float]:
    """Either 'start:stop:step' (inclusive) or a comma separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid {text!r} must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("grid step must be positive")
        values = []
        while True:
            v = round(start + len(values) * step, 10)
            if v > stop + 1e-9:
                return values
            values.append(v)
    return [float(p) for p in text.split(",") if p.strip()]


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(round(v)) for v in parse_grid(text))


def _get(cfg, section, key, cast, default):
    if not cfg.has_option(section, key):
        return default
    raw = cfg.get(section, key)
    return cast(raw)


def model_config(cfg) -> tuple[CodecConfig, int]:
    widths = _get(cfg, "model", "widths", _ints, (8, 16, 32))
    model = CodecConfig(
        cube_side=_get(cfg, "model", "cube_side", int, 16),
        widths=widths,
        latent_channels=_get(cfg, "model", "latent_channels", int, 4),
        vrn_per_stage=_get(cfg, "model", "vrn_per_stage", int, 1),
    )
    return model, _get(cfg, "model", "seed", int, 0)


def train_config(cfg, seed_override: int | None) -> TrainConfig:
    seed = _get(cfg, "train", "seed", int, 0)
    if seed_override is not None:
        seed = seed_override
    return TrainConfig(
        epochs=_get(cfg, "train", "epochs", int, 30),
        batch_size=_get(cfg, "train", "batch_size", int, 8),
        lr=_get(cfg, "train", "lr", float, 1e-3),
        snr_db=_get(cfg, "train", "snr_db", float, 10.0),
        channel=_get(cfg, "train", "channel", str, "awgn"),
        zeta=_get(cfg, "train", "zeta", float, 3.0),
        seed=seed,
    )


def corpus_config(cfg) -> pipeline.CorpusConfig:
    return pipeline.CorpusConfig(
        kinds=_get(cfg, "corpus", "kinds", lambda s: tuple(s.split(",")), SHAPE_KINDS),
        seeds=_get(cfg, "corpus", "seeds", _ints, pipeline.TRAIN_SEEDS),
        precision_b=_get(cfg, "corpus", "precision_b", int, 6),
        points_per_shape=_get(cfg, "corpus", "points_per_shape", int, 40000),
        cube_side=_get(cfg, "corpus", "cube_side", int, 16),
        min_occupied=_get(cfg, "corpus", "min_occupied", int, 16),
        max_cubes=_get(cfg, "corpus", "max_cubes", int, 512),
    )


def eval_corpus(cfg) -> list[pipeline.EvalShape]:
    return pipeline.eval_shapes(
        kinds=_get(cfg, "eval", "kinds", lambda s: tuple(s.split(",")), SHAPE_KINDS),
        seeds=_get(cfg, "eval", "seeds", _ints, pipeline.EVAL_SEEDS),
        precision_b=_get(cfg, "eval", "precision_b", int, 6),
        points_per_shape=_get(cfg, "eval", "points_per_shape", int, 40000),
        cube_side=_get(cfg, "eval", "cube_side", int, 16),
        min_occupied=_get(cfg, "eval", "min_occupied", int, 32),
        max_cubes_per_shape=_get(cfg, "eval", "max_cubes_per_shape", int, 24),
    )


def digital_config(cfg) -> DigitalConfig | None:
    if not cfg.has_section("digital"):
        return None
    return DigitalConfig(
        bits_per_value=_get(cfg, "digital", "bits_per_value", int, 8),
        coding=_get(cfg, "digital", "coding", str, "none"),
        modulation=_get(cfg, "digital", "modulation", str, "qpsk"),
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    lines = [",".join(columns)]
    lines += [",".join(_fmt(row[c]) for c in columns) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def load_codec(path: str) -> Codec:
    return Codec.load(Path(path).read_bytes())


def cmd_gen_data(args) -> int:
    cloud = gen_shape(args.kind, args.points, args.precision_b, args.seed)
    Path(args.out).write_bytes(write_ply(cloud, binary=args.binary))
    print(f"wrote {len(cloud)} points to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    model, model_seed = model_config(cfg)
    tcfg = train_config(cfg, args.seed)
    occupancy = pipeline.training_occupancy(corpus_config(cfg))
    codec = Codec(model, seed=model_seed)
    losses = codec.train(occupancy, tcfg)
    Path(args.out).write_bytes(codec.save())
    if args.loss_out:
        write_csv(args.loss_out, ["step", "loss"],
                  [{"step": i, "loss": v} for i, v in enumerate(losses)])
    print(f"trained on {occupancy.shape[0]} cubes for {len(losses)} steps, "
          f"loss {losses[0]:.4f} -> {losses[-1]:.4f}, saved {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    codec = load_codec(args.model)
    shapes = eval_corpus(cfg)
    ccfg = ChannelConfig(snr_db=args.snr_db, fading=args.fading, seed=args.seed)
    rows, reports, ordinal = [], [], 0
    for shape in shapes:
        recon, _ = pipeline.reconstruct_cubes(codec, shape.cubes, ccfg,
                                              ordinal_base=ordinal)
        ordinal += len(shape.cubes)
        rep = pipeline.shape_quality(shape, recon)
        reports.append(rep)
        rows.append({"kind": shape.kind, "seed": shape.seed, "n_points": rep.n_a,
                     "mse_c2c": rep.mse_c2c, "mse_c2p": rep.mse_c2p,
                     "psnr_c2c": rep.psnr_c2c, "psnr_c2p": rep.psnr_c2p})
    pooled = pipeline.pooled_quality(reports, shapes[0].cloud.precision_b)
    pooled.update({"kind": "pooled", "seed": -1,
                   "n_points": sum(r.n_a for r in reports)})
    rows.append(pooled)
    write_csv(args.out, ["kind", "seed", "n_points", "mse_c2c", "mse_c2p",
                         "psnr_c2c", "psnr_c2p"], rows)
    print(f"pooled psnr_c2c {pooled['psnr_c2c']:.2f} dB over {len(shapes)} shapes")
    return 0


def cmd_snr_sweep(args) -> int:
    cfg = load_config(args.config)
    codec = load_codec(args.model)
    rows = pipeline.snr_sweep(codec, eval_corpus(cfg), parse_grid(args.snr),
                              fading=args.fading, seed=args.seed,
                              digital=digital_config(cfg))
    write_csv(args.out, ["link", "snr_db"] + SWEEP_COLUMNS, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_rate_sweep(args) -> int:
    cfg = load_config(args.config)
    codec = load_codec(args.model)
    rows = pipeline.rate_sweep(codec, eval_corpus(cfg), parse_grid(args.drops),
                               method=args.method, per_channel=args.per_channel,
                               snr_db=args.snr_db, fading=args.fading, seed=args.seed)
    write_csv(args.out, ["method", "drop_ratio", "cbr", "snr_db"] + SWEEP_COLUMNS, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_mdma_sweep(args) -> int:
    cfg = load_config(args.config)
    codec = load_codec(args.model)
    pairs = pipeline.cube_pairs(eval_corpus(cfg), args.pairs)
    rows = pipeline.mdma_sweep(codec, pairs, parse_grid(args.sor), snr_db=args.snr_db,
                               fading=args.fading, seed=args.seed, n_reps=args.reps)
    write_csv(args.out, ["sor", "snr_db", "psnr_db", "sigma", "bandwidth_occupancy",
                         "shared_budget_fraction"], rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_sse(args) -> int:
    if args.build_table:
        if args.model is None:
            raise ValueError("--build-table requires --model")
        cfg = load_config(args.config)
        codec = load_codec(args.model)
        pairs = pipeline.cube_pairs(eval_corpus(cfg), args.pairs)
        table = sse.build_g_table(codec, pairs, parse_grid(args.sor),
                                  parse_grid(args.snr), n_reps=args.reps,
                                  base_seed=args.seed, fading=args.fading)
        Path(args.out).write_text(table.to_csv())
        print(f"wrote {table.gains.shape[0]}x{table.gains.shape[1]} gain table "
              f"to {args.out}")
        return 0
    if args.table is None:
        raise ValueError("pass --table to optimize or --build-table to measure one")
    table = sse.GTable.from_csv(Path(args.table).read_text())
    res = sse.optimize(table, args.snr_db, args.g_threshold, args.phi_threshold,
                       info_fraction=args.info_fraction, sor_cap=args.sor_cap)
    write_csv(args.out, ["feasible", "sor", "gain", "phi", "snr_db"],
              [{"feasible": res.feasible, "sor": res.sor, "gain": res.gain,
                "phi": res.phi, "snr_db": res.snr_db}])
    if res.feasible:
        print(f"sor {res.sor} gain {res.gain:.2f} dB phi {res.phi:.2f} "
              f"at {res.snr_db} dB")
    else:
        print(f"no feasible sharing ratio at {res.snr_db} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pclink",
        description="Point cloud link simulator: train the cube codec, then "
                    "sweep channel SNR, latent drop ratio or two-user sharing.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--seed", type=int, default=0, help="base channel seed")
        p.add_argument("--fading", choices=("awgn", "rayleigh"), default="awgn")
        p.add_argument("--out", required=True, help="output CSV path")
        if model:
            p.add_argument("--model", required=True, help="trained codec checkpoint")

    p = sub.add_parser("gen-data", help="write a synthetic shape as PLY")
    p.add_argument("--kind", choices=SHAPE_KINDS, required=True)
    p.add_argument("--points", type=int, default=40000)
    p.add_argument("--precision-b", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the codec on generated cubes")
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--seed", type=int, default=None, help="training seed override")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--loss-out", help="optional per-step loss CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-shape quality at one operating point")
    common(p)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("snr-sweep", help="quality vs channel SNR (CSV columns: "
                       "link,snr_db,mse_c2c,mse_c2p,psnr_c2c,psnr_c2p,n_symbols)")
    common(p)
    p.add_argument("--snr", default="0:15:1", help="grid start:stop:step or list")
    p.set_defaults(func=cmd_snr_sweep)

    p = sub.add_parser("rate-sweep", help="quality vs latent drop ratio (CSV: "
                       "method,drop_ratio,cbr,snr_db,...)")
    common(p)
    p.add_argument("--drops", default="0:0.9:0.1", help="drop ratio grid")
    p.add_argument("--method", choices=("value", "grad", "grad_value", "random",
                                        "drop_largest"), default="value")
    p.add_argument("--per-channel", action="store_true")
    p.add_argument("--snr-db", type=float, default=10.0)
    p.set_defaults(func=cmd_rate_sweep)

    p = sub.add_parser("mdma-sweep", help="two-user quality vs sharing ratio (CSV: "
                       "sor,snr_db,psnr_db,sigma,...)")
    common(p)
    p.add_argument("--sor", default="0:1:0.1", help="sharing ratio grid")
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--pairs", type=int, default=10)
    p.add_argument("--reps", type=int, default=3)
    p.set_defaults(func=cmd_mdma_sweep)

    p = sub.add_parser("sse", help="measure a gain table or pick a sharing ratio")
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fading", choices=("awgn", "rayleigh"), default="awgn")
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="codec checkpoint (for --build-table)")
    p.add_argument("--build-table", action="store_true")
    p.add_argument("--table", help="existing gain table CSV to optimize over")
    p.add_argument("--sor", default="0:1:0.1")
    p.add_argument("--snr", default="0:14:2")
    p.add_argument("--pairs", type=int, default=10)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--g-threshold", type=float, default=0.0)
    p.add_argument("--phi-threshold", type=float, default=0.0)
    p.add_argument("--info-fraction", type=float, default=1.0)
    p.add_argument("--sor-cap", type=float, default=sse.SOR_CAP_DEFAULT)
    p.set_defaults(func=cmd_sse)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
