"""End-to-end desk experiment: simulate, augment, train, predict, reconstruct, evaluate.

Directory layout under the run directory::

    config.cfg                resolved configuration
    phantoms/subNNNN.rci      complex phantom (1 image)
    coils/subNNNN.rci         coil maps (n_coils images)
    spokes/subNNNN.rks        all acquired spokes, every coil
    data/{train,val,test}.psq windowed token sequences; data/split.json
    checkpoints/blockB.ckp    best checkpoint per block (+ history CSV)
    eval/subNNNN_wW_*.rks     acquired and merged spokes of each test window
    report.csv                per-window metrics and per-method summary
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import dataset as ds
from . import fileformats as ff
from . import pipeline as pl
from .config import Config, ConfigError
from .fourier import SpokeSet, ndft_forward
from .metrics import MetricsRecord, emit_report, evaluate_image
from .phantom import CoilMaps, PhantomSpec, apply_coils, make_coil_maps, make_phantom
from .trajectory import TrajectoryConfig

log = logging.getLogger(__name__)


def subject_name(s: int) -> str:
    return f"sub{s:04d}"


def phantom_spec(cfg: Config, subject: int) -> PhantomSpec:
    rng = np.random.default_rng([cfg["run.seed"], subject, 7])
    n_ell = int(rng.integers(cfg["data.min_ellipses"], cfg["data.max_ellipses"] + 1))
    seed = int(rng.integers(2**31))
    return PhantomSpec(n_ellipses=n_ell, phase_mode=cfg["data.phase_mode"], rng_seed=seed, size=cfg["data.size"])


def coil_seed(cfg: Config, subject: int) -> int:
    return int(np.random.default_rng([cfg["run.seed"], subject, 11]).integers(2**31))


def generate_phantoms(cfg: Config, out_dir) -> list[int]:
    out_dir = Path(out_dir)
    subjects = list(range(cfg["data.n_subjects"]))
    for s in subjects:
        img = make_phantom(phantom_spec(cfg, s))
        coils = make_coil_maps(cfg["data.n_coils"], cfg["data.size"], coil_seed(cfg, s))
        ff.write_images(out_dir / "phantoms" / f"{subject_name(s)}.rci", img)
        ff.write_images(out_dir / "coils" / f"{subject_name(s)}.rci", coils.maps)
    return subjects


def simulate_subject(phantom: np.ndarray, coils: CoilMaps, n_spokes: int, tcfg) -> SpokeSet:
    return ndft_forward(apply_coils(phantom, coils), np.arange(n_spokes), tcfg)


def simulate(cfg: Config, phantom_dir, out_dir) -> list[Path]:
    """Acquire ``data.n_spokes`` golden-angle spokes for every phantom in ``phantom_dir``."""
    phantom_dir, out_dir = Path(phantom_dir), Path(out_dir)
    tcfg = pl.trajectory_config(cfg)
    files = sorted((phantom_dir / "phantoms").glob("sub*.rci"))
    if not files:
        raise pl.MissingArtifactError(f"no phantoms found under {phantom_dir / 'phantoms'}")
    written = []
    for f in files:
        img = ff.read_images(f)[0]
        coil_file = phantom_dir / "coils" / f.name
        if not coil_file.exists():
            raise pl.MissingArtifactError(f"coil maps {coil_file} missing")
        coils = CoilMaps(ff.read_images(coil_file))
        spokes = simulate_subject(img, coils, cfg["data.n_spokes"], tcfg)
        path = out_dir / "spokes" / f"{f.stem}.rks"
        ff.write_spokes(path, ff.SpokeFile(spokes.samples, 0, tcfg.golden_angle_deg))
        written.append(path)
    return written


def load_spokes(path, n_readout: int | None = None) -> SpokeSet:
    f = ff.read_spokes(path)
    if n_readout is not None and f.samples.shape[-1] != n_readout:
        raise ff.FormatError(f"{path}: n_readout {f.samples.shape[-1]} != configured {n_readout}")
    tcfg = TrajectoryConfig(f.samples.shape[-1], f.golden_angle_deg)
    samples = f.samples[0] if f.samples.shape[0] == 1 else f.samples
    return SpokeSet(tcfg, f.first_index + np.arange(f.samples.shape[1]), samples, f.scale)


def save_spokes(path, spokes: SpokeSet):
    ff.write_spokes(path, ff.SpokeFile(spokes.samples, int(spokes.indices[0]), spokes.cfg.golden_angle_deg,
                                       spokes.scale))


def augment(cfg: Config, run_dir, out_dir=None) -> dict:
    """Window, tokenize and split all simulated subjects into PSQ1 files."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "data"
    files = sorted((run_dir / "spokes").glob("sub*.rks"))
    if not files:
        raise pl.MissingArtifactError(f"no spoke files under {run_dir / 'spokes'}")
    L = cfg["model.L_in"]
    if cfg["data.window"] != (ds.N_BLOCKS + 1) * L:
        raise ConfigError(f"data.window ({cfg['data.window']}) must equal 4 * model.L_in ({4 * L})")
    subjects = np.array([int(f.stem[3:]) for f in files])
    tr, va, te = ds.split_subjects(len(files), cfg.split_fractions(), cfg["run.seed"])
    split = {"train": subjects[tr].tolist(), "val": subjects[va].tolist(), "test": subjects[te].tolist()}
    for part, ids in split.items():
        tokens, subj, coil, start, scale = [], [], [], [], []
        for s in ids:
            spokes = load_spokes(run_dir / "spokes" / f"{subject_name(s)}.rks", cfg["data.n_readout"])
            for c, seq in ds.window_sequences(spokes, cfg["data.window"], cfg["data.step"], L):
                tokens.append(seq.tokens)
                subj.append(s)
                coil.append(c)
                start.append(seq.start_index)
                scale.append(seq.scale)
        d = 2 * cfg["data.n_readout"]
        arr = np.stack(tokens) if tokens else np.zeros((0, cfg["data.window"], d))
        ff.write_sequences(out_dir / f"{part}.psq", ff.SequenceFile(arr, np.array(subj), np.array(coil),
                                                                 np.array(start), np.array(scale)))
    (out_dir / "split.json").write_text(json.dumps(split, indent=1, sort_keys=True))
    return split


def _train_one(args):
    cfg_items, data_dir, out_dir, block = args
    cfg = Config(dict(cfg_items))
    torch.set_num_threads(cfg["run.threads"])
    train = ff.read_sequences(Path(data_dir) / "train.psq").tokens
    val = ff.read_sequences(Path(data_dir) / "val.psq").tokens
    run = pl.train_block(train, val, cfg, block, out_dir)
    return block, run.best_val, run.best_epoch


def train(cfg: Config, data_dir, out_dir, blocks=(1, 2, 3), jobs: int = 1) -> list[tuple]:
    data_dir = Path(data_dir)
    for part in ("train", "val"):
        if not (data_dir / f"{part}.psq").exists():
            raise pl.MissingArtifactError(f"{data_dir / (part + '.psq')} not found")
    tasks = [(sorted(cfg.items()), str(data_dir), str(out_dir), b) for b in blocks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_train_one, tasks))
    return [_train_one(t) for t in tasks]


def evaluate_test_subjects(cfg: Config, run_dir, ckpt_dir=None) -> tuple[list[MetricsRecord], dict]:
    """Reconstruct every window of every test subject three ways and score against the reference.

    Returns the metric records and a consistency summary (acquired-spoke
    preservation count, merged-angle check).
    """
    run_dir = Path(run_dir)
    ckpt_dir = Path(ckpt_dir) if ckpt_dir is not None else run_dir / "checkpoints"
    models = pl.load_block_models(ckpt_dir)
    split = json.loads((run_dir / "data" / "split.json").read_text())
    L = cfg["model.L_in"]
    records = []
    checks = {"windows": 0, "acquired_bit_identical": 0, "angles_consistent": 0}
    for s in split["test"]:
        name = subject_name(s)
        spokes = load_spokes(run_dir / "spokes" / f"{name}.rks", cfg["data.n_readout"])
        coils = CoilMaps(ff.read_images(run_dir / "coils" / f"{name}.rci"))
        for w, win in enumerate(ds.make_windows(spokes, cfg["data.window"], cfg["data.step"])):
            src = win.select(np.arange(L))
            merged, pred_tokens = pl.infer_and_combine(src, models)
            save_spokes(run_dir / "eval" / f"{name}_w{w}_acquired.rks", src)
            save_spokes(run_dir / "eval" / f"{name}_w{w}_merged.rks", merged)
            checks["windows"] += 1
            checks["acquired_bit_identical"] += int(np.array_equal(merged.samples[..., :L, :], src.samples))
            checks["angles_consistent"] += int(np.array_equal(merged.angles_deg, win.angles_deg))
            ref = pl.reconstruct(win, coils, "reference")
            zf = pl.zero_filled_baseline(src, coils)
            pkt = pl.reconstruct(merged, coils, "pkt")
            pe = pl.projection_error(pred_tokens, win, L)
            records.append(evaluate_image(zf.magnitude, ref.magnitude, "zero-filled", s, w))
            records.append(evaluate_image(pkt.magnitude, ref.magnitude, "pkt", s, w, proj=pe))
    return records, checks


def run_pipeline(cfg: Config, out_dir, jobs: int = 1) -> dict:
    out_dir = Path(out_dir)
    torch.set_num_threads(cfg["run.threads"])
    cfg.write(out_dir / "config.cfg")
    log.info("simulating %d subjects", cfg["data.n_subjects"])
    generate_phantoms(cfg, out_dir)
    simulate(cfg, out_dir, out_dir)
    augment(cfg, out_dir)
    log.info("training 3 blocks")
    train(cfg, out_dir / "data", out_dir / "checkpoints", jobs=jobs)
    records, checks = evaluate_test_subjects(cfg, out_dir)
    emit_report(records, out_dir / "report.csv")
    (out_dir / "checks.json").write_text(json.dumps(checks, indent=1, sort_keys=True))
    return {"records": records, "checks": checks}
