"""Operator surface: subcommands wiring the modules into reproducible runs.

Exit codes: 0 success, 1 usage error, 2 data/parse/config error, 3 numeric
failure. Errors print one machine-readable line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import codec as codec_mod
from . import data as data_mod
from . import pipeline
from . import scaler as scaler_mod
from .errors import FlowtransError, NumericError, ParseError
from .render import index_to_image, rgb_to_image, side_by_side, write_png

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="flowtrans", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chip-size", type=int, default=None)
    p.add_argument("--smoothness", type=float, default=8.0)
    p.add_argument("--mixing", default=None,
                   help="radar mixing matrix as vv_e,vv_m,vh_e,vh_m "
                        "(domain-shift experiments)")

    p = sub.add_parser("fit-scaler", help="fit percentile scaler params on one role")
    p.add_argument("--data", required=True)
    p.add_argument("--role", choices=["radar", "optical"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pmin-pct", type=float, default=None)
    p.add_argument("--pmax-pct", type=float, default=None)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--clip-high", type=float, default=None)
    p.add_argument("--split", default="train")

    p = sub.add_parser("train-codec", help="train a VQ codec on one role")
    p.add_argument("--data", required=True)
    p.add_argument("--role", choices=["radar", "optical"], required=True)
    p.add_argument("--scaler", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--codes", type=int, default=64)
    p.add_argument("--hidden", type=int, default=48)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("encode", help="encode one split to latent archives")
    p.add_argument("--data", required=True)
    p.add_argument("--role", choices=["radar", "optical"], required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--scaler", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="full training pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="translate a split with a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--schedule", choices=["linear", "expo", "cosine"], default=None)
    p.add_argument("--expo-k", type=float, default=None)
    p.add_argument("--clip-unit", action="store_true", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--png", action="store_true")
    p.add_argument("--out-name", default=None)

    p = sub.add_parser("eval", help="score a results directory against truth")
    p.add_argument("--results", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--json", dest="json_out", default=None)

    p = sub.add_parser("finetune", help="resume a checkpoint on a new dataset")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("plot", help="render truth/prediction PNG panels")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)

    return parser


def _cmd_gen_data(args) -> int:
    mixing = data_mod.DEFAULT_RADAR_MIXING
    if args.mixing is not None:
        parts = [float(v) for v in args.mixing.split(",")]
        if len(parts) != 4:
            raise ParseError("--mixing needs four comma-separated values")
        mixing = ((parts[0], parts[1]), (parts[2], parts[3]))
    data_mod.generate_dataset(args.out, seed=args.seed, scenes=args.scenes,
                              size=args.size, chip_size=args.chip_size,
                              smoothness=args.smoothness, radar_mixing=mixing)
    print(f"wrote dataset to {args.out}")
    return EXIT_OK


def _default_pcts(role):
    return scaler_mod.RADAR_PERCENTILES if role == "radar" \
        else scaler_mod.OPTICAL_PERCENTILES


def _cmd_fit_scaler(args) -> int:
    manifest = data_mod.load_manifest(args.data)
    _, chips = data_mod.load_split(args.data, manifest, args.split, args.role)
    lo, hi = _default_pcts(args.role)
    params = scaler_mod.fit(chips,
                            lo if args.pmin_pct is None else args.pmin_pct,
                            hi if args.pmax_pct is None else args.pmax_pct,
                            eps=args.eps, clip_high=args.clip_high)
    scaler_mod.save(params, args.out)
    print(f"wrote scaler params to {args.out}")
    return EXIT_OK


def _cmd_train_codec(args) -> int:
    manifest = data_mod.load_manifest(args.data)
    params = scaler_mod.load(args.scaler)
    _, train_chips = data_mod.load_split(args.data, manifest, "train", args.role)
    _, val_chips = data_mod.load_split(args.data, manifest, "val", args.role)
    train_chips = [scaler_mod.transform(params, c) for c in train_chips]
    val_chips = [scaler_mod.transform(params, c) for c in val_chips]
    labels = train_chips[0].labels
    codec = codec_mod.VQCodec(len(labels), labels, channels=args.channels,
                              factor=args.factor, num_codes=args.codes,
                              hidden=args.hidden, seed=args.seed)
    trace = codec_mod.train_vq(codec, train_chips, val_chips,
                               epochs=args.epochs, lr=args.lr, seed=args.seed)
    codec_mod.save_codec(codec, args.out)
    final = trace[-1]["val_mse"] if trace else float("nan")
    print(f"wrote codec to {args.out} (held-out reconstruction MSE {final:.6f})")
    return EXIT_OK


def _cmd_encode(args) -> int:
    manifest = data_mod.load_manifest(args.data)
    params = scaler_mod.load(args.scaler)
    codec = codec_mod.load_codec(args.codec)
    ids, chips = data_mod.load_split(args.data, manifest, args.split, args.role)
    tensors = {}
    for cid, chip_ in zip(ids, chips):
        z = codec.encode(scaler_mod.transform(params, chip_))
        tensors[cid] = z.data
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data_mod.write_tensors(out, tensors)
    print(f"wrote {len(tensors)} latents to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = pipeline.load_run_config(args.config)
    run_doc = pipeline.train_run(cfg, args.out)
    print(f"trained run in {args.out} ({run_doc['epochs_trained']} epochs)")
    return EXIT_OK


def _cmd_infer(args) -> int:
    out_dir = pipeline.infer_run(args.run, steps=args.steps, schedule=args.schedule,
                                 expo_k=args.expo_k, clip_unit=args.clip_unit,
                                 split=args.split, out_name=args.out_name)
    if args.png:
        doc, results = pipeline.load_results(out_dir)
        for res in results:
            write_png(out_dir / f"{res.chip_id}_rgb.png", rgb_to_image(res.rgb.data))
            write_png(out_dir / f"{res.chip_id}_ndvi.png", index_to_image(res.ndvi))
            write_png(out_dir / f"{res.chip_id}_ndwi.png", index_to_image(res.ndwi))
    print(f"wrote results to {out_dir}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    rep = pipeline.eval_run(args.results, csv_path=args.csv, json_path=args.json_out)
    row = rep.row()
    print(",".join(f"{k}={row[k]}" for k in row))
    return EXIT_OK


def _cmd_finetune(args) -> int:
    doc = pipeline.finetune_run(args.run, args.data, args.epochs, args.out,
                                lr=args.lr, seed=args.seed)
    print(f"finetuned run in {args.out} (lineage depth {len(doc['lineage'])})")
    return EXIT_OK


def _cmd_plot(args) -> int:
    doc, results = pipeline.load_results(args.results)
    truths = pipeline.truth_results(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for res, truth in zip(results, truths):
        panels = {
            "rgb": (rgb_to_image(truth.rgb.data), rgb_to_image(res.rgb.data)),
            "ndvi": (index_to_image(truth.ndvi), index_to_image(res.ndvi)),
            "ndwi": (index_to_image(truth.ndwi), index_to_image(res.ndwi)),
        }
        for name, (left, right) in panels.items():
            write_png(out / f"{res.chip_id}_{name}.png", side_by_side(left, right))
            count += 1
    print(f"wrote {count} panels to {out}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "fit-scaler": _cmd_fit_scaler,
    "train-codec": _cmd_train_codec,
    "encode": _cmd_encode,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "finetune": _cmd_finetune,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except NumericError as e:
        print(f"error: numeric: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FlowtransError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: data: {e}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
