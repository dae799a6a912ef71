"""``radialpkt`` command line: one executable, one subcommand per experiment stage.

Exit codes: 0 ok, 2 config error, 3 data-format error, 4 numeric failure,
5 missing dependency artifact.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import experiment as ex
from . import fileformats as ff
from . import pipeline as pl
from .config import Config, ConfigError, describe_keys, load_config
from .metrics import emit_report, evaluate_image
from .numerics import NumericError
from .phantom import CoilMaps

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4, 5

log = logging.getLogger("radialpkt")


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        cfg["run.seed"] = args.seed
    torch.set_num_threads(cfg["run.threads"])
    return cfg


def cmd_phantom_gen(args):
    cfg = Config({"data.n_subjects": args.count, "data.size": args.size, "data.n_coils": args.coils,
                  "run.seed": args.seed})
    ex.generate_phantoms(cfg, args.out)


def cmd_simulate(args):
    cfg = _config(args)
    if args.n_spokes is not None:
        cfg["data.n_spokes"] = args.n_spokes
    if args.n_readout is not None:
        cfg["data.n_readout"] = args.n_readout
    ex.simulate(cfg, args.phantom_dir, args.out)


def cmd_augment(args):
    cfg = _config(args)
    for key, val in (("data.window", args.window), ("data.step", args.step), ("model.L_in", args.l_in),
                     ("data.split", args.split)):
        if val is not None:
            cfg[key] = val
    ex.augment(cfg, args.data, args.out)


def cmd_train(args):
    cfg = _config(args)
    blocks = (1, 2, 3) if args.block == "all" else (int(args.block),)
    out = Path(args.out)
    cfg.write(out / "config.cfg")
    for block, best, epoch in ex.train(cfg, args.data, out, blocks, jobs=args.jobs):
        print(f"block {block}: best val loss {best:.6g} at epoch {epoch}")


def cmd_predict(args):
    models = pl.load_block_models(args.checkpoints)  # fail before touching the output
    src = ex.load_spokes(args.input)
    merged, _ = pl.infer_and_combine(src, models)
    ex.save_spokes(args.out, merged)


def write_pgm16(path, img: np.ndarray, lo: float, hi: float):
    """16-bit binary portable graymap, ``lo -> 0`` and ``hi -> 65535``."""
    span = hi - lo if hi > lo else 1.0
    q = np.clip(np.round((img - lo) / span * 65535.0), 0, 65535).astype(">u2")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode() + q.tobytes())


def cmd_reconstruct(args):
    spokes = ex.load_spokes(args.input)
    coils = CoilMaps(ff.read_images(args.coils)) if args.coils else None
    res = pl.reconstruct(spokes, coils, args.method)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_pgm16(f"{prefix}_mag.pgm", res.magnitude, 0.0, float(res.magnitude.max()))
    write_pgm16(f"{prefix}_phase.pgm", res.phase, -np.pi, np.pi)
    res.magnitude.astype("<f4").tofile(f"{prefix}_mag.f32")
    res.phase.astype("<f4").tofile(f"{prefix}_phase.f32")
    ff.write_images(f"{prefix}.rci", res.magnitude * np.exp(1j * res.phase))


def cmd_evaluate(args):
    pred_dir, ref_dir = Path(args.pred), Path(args.ref)
    files = sorted(pred_dir.glob("*.rci"))
    if not files:
        raise pl.MissingArtifactError(f"no .rci reconstructions in {pred_dir}")
    records = []
    for i, f in enumerate(files):
        ref_file = ref_dir / f.name
        if not ref_file.exists():
            raise pl.MissingArtifactError(f"reference {ref_file} missing")
        x, r = ff.read_images(f)[0], ff.read_images(ref_file)[0]
        subject, slice_ = _ids(f.stem, i)
        records.append(evaluate_image(np.abs(x), np.abs(r), args.method, subject, slice_))
    emit_report(records, args.out)


def _ids(stem: str, fallback: int):
    # names like sub0003_w1 -> (3, 1)
    try:
        sub, w = stem.split("_")[:2]
        return int(sub[3:]), int(w[1:])
    except (ValueError, IndexError):
        return fallback, 0


def cmd_pipeline(args):
    cfg = _config(args)
    out = ex.run_pipeline(cfg, args.out, jobs=args.jobs)
    print((Path(args.out) / "report.csv").read_text(), end="")
    c = out["checks"]
    print(f"acquired spokes preserved in {c['acquired_bit_identical']}/{c['windows']} windows")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="radialpkt",
        description="Projection-token Transformer for undersampled golden-angle radial MRI (desk scale).",
        epilog="config keys (flat 'key = value' file, '#' comments):\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int, help="override run.seed")

    sp = sub.add_parser("phantom-gen", help="generate phantoms and coil maps")
    sp.add_argument("--count", type=int, default=96)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--coils", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_phantom_gen)

    sp = sub.add_parser("simulate", help="acquire golden-angle spokes of generated phantoms")
    with_config(sp)
    sp.add_argument("--phantom-dir", required=True)
    sp.add_argument("--n-spokes", type=int)
    sp.add_argument("--n-readout", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("augment", help="window, tokenize and split simulated spokes")
    with_config(sp)
    sp.add_argument("--data", required=True, help="run directory containing spokes/")
    sp.add_argument("--window", type=int)
    sp.add_argument("--step", type=int)
    sp.add_argument("--l-in", type=int)
    sp.add_argument("--split", help="train:val:test fractions")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("train", help="train block models")
    with_config(sp)
    sp.add_argument("--block", choices=["1", "2", "3", "all"], default="all")
    sp.add_argument("--data", required=True, help="directory with train.psq and val.psq")
    sp.add_argument("--out", required=True)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="fill unacquired spokes with the three block models")
    sp.add_argument("--checkpoints", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("reconstruct", help="adjoint reconstruction to magnitude/phase images")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--coils")
    sp.add_argument("--method", default="pkt", choices=["pkt", "zero-filled", "reference"])
    sp.add_argument("--out-prefix", required=True)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("evaluate", help="score reconstructions against references")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--method", default="pkt")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("pipeline", help="run the whole desk experiment")
    with_config(sp)
    sp.add_argument("--out", default="runs/desk")
    sp.add_argument("--jobs", type=int, default=1, help="parallel block trainings (1 = deterministic order)")
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ff.FormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
