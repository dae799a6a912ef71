"""Training, inference, recombination and reconstruction.

The experiment: simulate golden-angle multi-coil acquisitions of random
phantoms, cut them into windows of ``4 * L_in`` spokes, train one Transformer
per output block on teacher-forced MSE, then predict the three unacquired
blocks from the ``L_in`` acquired spokes, merge, and reconstruct.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import dataset as ds
from . import fileformats as ff
from . import numerics as nx
from .config import Config
from .fourier import SpokeSet, adjoint_recon
from .metrics import proj_nmse
from .model import ModelConfig, PKTransformer
from .phantom import CoilMaps, root_sum_of_squares
from .trajectory import TrajectoryConfig

log = logging.getLogger(__name__)

METHODS = ("reference", "zero-filled", "pkt")


class MissingArtifactError(FileNotFoundError):
    pass


class TrainingDiverged(nx.NumericError):
    def __init__(self, msg, last_good=None):
        super().__init__(msg)
        self.last_good = last_good


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise nx.ShapeError(f"mse_loss: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return nx.reduce_mean_sq(pred - target)


def model_config(cfg: Config, block: int) -> ModelConfig:
    m = cfg.section("model")
    return ModelConfig(d_model=m["d_model"], n_stacks=m["n_stacks"], n_heads=m["n_heads"], d_k=m["d_k"],
                       d_v=m["d_k"], d_ff=m["d_ff"], dropout=m["dropout"], L_in=m["L_in"], block=block)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: PKTransformer, state: nx.AdamState | None = None, extra: dict | None = None):
    params = {k: v.detach().cpu().numpy() for k, v in model.named_parameters()}
    opt = None
    if state is not None and state.m:
        opt = dict(step=state.step, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
                   m=[t.cpu().numpy() for t in state.m], v=[t.cpu().numpy() for t in state.v])
    config = {"model": model.cfg.to_dict(), **(extra or {})}
    ff.write_checkpoint(path, ff.Checkpoint(config, params, opt))


def load_checkpoint(path, dtype=torch.float32) -> tuple[PKTransformer, nx.AdamState | None, dict]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"checkpoint {path} not found")
    ck = ff.read_checkpoint(path)
    model = PKTransformer(ModelConfig(**ck.config["model"])).to(dtype)
    names = [k for k, _ in model.named_parameters()]
    if sorted(names) != sorted(ck.params):
        raise ff.FormatError(f"{path}: parameter names do not match ModelConfig")
    with torch.no_grad():
        for k, p in model.named_parameters():
            if tuple(p.shape) != ck.params[k].shape:
                raise ff.FormatError(f"{path}: {k} has shape {ck.params[k].shape}, expected {tuple(p.shape)}")
            p.copy_(torch.from_numpy(ck.params[k]))
    state = None
    if ck.optimizer is not None:
        o = ck.optimizer
        state = nx.AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"],
                             m=[torch.from_numpy(a).to(dtype) for a in o["m"]],
                             v=[torch.from_numpy(a).to(dtype) for a in o["v"]])
    model.eval()
    return model, state, ck.config


# ---------------------------------------------------------------- training

@dataclass
class TrainRun:
    block: int
    history: list[dict] = field(default_factory=list)
    best_val: float = math.inf
    best_epoch: int = -1
    checkpoint: Path | None = None


def block_arrays(tokens: np.ndarray, L_in: int, block: int):
    """Source and target token tensors of one block; ``tokens`` is ``(n, 4*L_in, d)``."""
    if tokens.shape[1] != (ds.N_BLOCKS + 1) * L_in:
        raise ValueError(f"sequences have length {tokens.shape[1]}, expected {(ds.N_BLOCKS + 1) * L_in}")
    t = torch.as_tensor(np.ascontiguousarray(tokens), dtype=torch.float32)
    return t[:, :L_in], t[:, block * L_in:(block + 1) * L_in]


def teacher_forced_loss(model, src, tgt, batch_size=256) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(src), batch_size):
            total += mse_loss(model(src[i:i + batch_size], tgt[i:i + batch_size]),
                              tgt[i:i + batch_size]).item() * len(src[i:i + batch_size])
    return total / len(src)


def free_running_loss(model, src, tgt, batch_size=256) -> float:
    model.eval()
    total = 0.0
    for i in range(0, len(src), batch_size):
        total += mse_loss(model.predict(src[i:i + batch_size]), tgt[i:i + batch_size]).item() * len(src[i:i + batch_size])
    return total / len(src)


def train_block(train_tokens: np.ndarray, val_tokens: np.ndarray, cfg: Config, block: int, out_dir,
                max_steps: int | None = None) -> TrainRun:
    """Train the block-``block`` model; the best free-running validation checkpoint is kept.

    Learning-rate plateaus and early stopping are judged on the teacher-forced
    validation loss.

    Each step feeds ``[start; target[:-1]]`` to the decoder and regresses
    ``target`` under the causal mask. Validation runs with dropout off.
    """
    if len(train_tokens) == 0 or len(val_tokens) == 0:
        raise ValueError("train_block needs non-empty train and validation sets")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg["run.seed"]
    torch.manual_seed(seed * 1000 + block)
    rng = np.random.default_rng([seed, block])
    mcfg = model_config(cfg, block)
    model = PKTransformer(mcfg)
    params = list(model.parameters())
    state = nx.AdamState(lr=cfg["optim.lr"], beta1=cfg["optim.beta1"], beta2=cfg["optim.beta2"], eps=cfg["optim.eps"])
    sched = nx.PlateauSchedule(state, cfg["optim.lr_factor"], cfg["optim.lr_patience"])
    src, tgt = block_arrays(train_tokens, mcfg.L_in, block)
    vsrc, vtgt = block_arrays(val_tokens, mcfg.L_in, block)
    ckpt = out_dir / f"block{block}.ckp"
    run = TrainRun(block, checkpoint=ckpt)
    bs = cfg["optim.batch_size"]
    stale = 0
    steps = 0
    for epoch in range(cfg["optim.epochs"]):
        model.train()
        perm = rng.permutation(len(src))
        total = 0.0
        for i in range(0, len(perm), bs):
            idx = torch.from_numpy(perm[i:i + bs])
            try:
                loss = mse_loss(model(src[idx], tgt[idx]), tgt[idx])
            except nx.NumericError as exc:
                raise TrainingDiverged(f"block {block}: non-finite loss at epoch {epoch}",
                                       ckpt if ckpt.exists() else None) from exc
            for p in params:
                p.grad = None
            loss.backward()
            nx.adam_step(params, [p.grad for p in params], state)
            total += loss.item() * len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        train_loss = total / min(len(perm), steps * bs if max_steps else len(perm))
        val_tf = teacher_forced_loss(model, vsrc, vtgt)
        val_fr = free_running_loss(model, vsrc, vtgt)
        lr_used = state.lr
        run.history.append(dict(epoch=epoch, train_loss=train_loss, val_loss=val_fr,
                                val_teacher_forced=val_tf, lr=lr_used))
        log.info("block %d epoch %d train %.5f val %.5f (tf %.5f) lr %.2e",
                 block, epoch, train_loss, val_fr, val_tf, lr_used)
        if val_fr < run.best_val:
            run.best_val, run.best_epoch = val_fr, epoch
            save_checkpoint(ckpt, model, state, {"block": block, "epoch": epoch, "val_loss": val_fr})
        # free-running loss can stall for many epochs before the model locks onto spoke order,
        # so the learning-rate schedule and early stop follow the teacher-forced loss
        if sched.update(val_tf):
            stale = 0
        else:
            stale += 1
            if stale >= cfg["optim.early_stop"]:
                log.info("block %d: early stop after %d stagnant evaluations", block, stale)
                break
        if max_steps is not None and steps >= max_steps:
            break
    write_history(out_dir / f"block{block}_history.csv", run.history)
    return run


def overfit_batch(src: torch.Tensor, tgt: torch.Tensor, mcfg: ModelConfig, steps: int = 2000, lr: float = 1e-3,
                  seed: int = 0, stop_ratio: float | None = None) -> list[float]:
    """Teacher-forced training on one fixed batch; returns the loss of every step.

    A sanity check of the training loop: with dropout disabled the loss of a
    single small batch should collapse. Stops early once the loss falls below
    ``loss[0] / stop_ratio``.
    """
    torch.manual_seed(seed)
    model = PKTransformer(mcfg).to(src.dtype)
    model.train()
    params = list(model.parameters())
    state = nx.AdamState(lr=lr)
    losses = []
    for _ in range(steps):
        loss = mse_loss(model(src, tgt), tgt)
        for p in params:
            p.grad = None
        loss.backward()
        nx.adam_step(params, [p.grad for p in params], state)
        losses.append(loss.item())
        if stop_ratio is not None and losses[-1] * stop_ratio <= losses[0]:
            break
    return losses


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_teacher_forced", "lr"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"]), repr(h["val_teacher_forced"]),
                        repr(h["lr"])])


# ---------------------------------------------------------------- inference

def load_block_models(ckpt_dir) -> list[PKTransformer]:
    models = []
    for b in range(1, ds.N_BLOCKS + 1):
        model, _, conf = load_checkpoint(Path(ckpt_dir) / f"block{b}.ckp")
        if model.cfg.block != b:
            raise ff.FormatError(f"checkpoint block{b}.ckp was trained for block {model.cfg.block}")
        models.append(model)
    return models


def predict_tokens(src_tokens: np.ndarray, models: list[PKTransformer]) -> list[np.ndarray]:
    """Free-running predictions of every block for a batch ``(n, L_in, d)`` of token matrices."""
    src = torch.as_tensor(np.ascontiguousarray(src_tokens), dtype=torch.float32)
    out = []
    for m in models:
        if m.cfg.d_model != src.shape[-1] or m.cfg.L_in != src.shape[1]:
            raise ValueError(f"model expects (L_in={m.cfg.L_in}, d_model={m.cfg.d_model}), "
                             f"got tokens {tuple(src.shape[1:])}")
        out.append(m.predict(src).double().numpy())
    return out


def infer_and_combine(src: SpokeSet, models: list[PKTransformer]) -> tuple[SpokeSet, np.ndarray]:
    """Predict the three unacquired blocks and merge them behind the acquired spokes.

    Works per coil. Returns the merged SpokeSet (``4 * L_in`` spokes, indices
    contiguous from ``src.indices[0]``) and the predicted token array
    ``(n_coils, 3 * L_in, d_model)``. Acquired samples are copied unchanged.
    """
    L = src.n_spokes
    if np.any(src.relative_indices != np.arange(L)):
        raise ValueError("acquired spokes must be chronologically contiguous")
    samples = src.samples if src.samples.ndim == 3 else src.samples[None]
    seqs = [ds.tokenize(SpokeSet(src.cfg, src.indices, s)) for s in samples]
    preds = predict_tokens(np.stack([s.tokens for s in seqs]), models)
    pred_tokens = np.concatenate(preds, axis=1)
    merged = np.empty(samples.shape[:1] + (4 * L, src.cfg.n_readout), dtype=np.complex128)
    merged[:, :L] = samples
    for c, seq in enumerate(seqs):
        merged[c, L:] = ds.tokens_to_spokes(pred_tokens[c], seq.scale)
    if src.samples.ndim == 2:
        merged = merged[0]
    indices = src.indices[0] + np.arange(4 * L)
    return SpokeSet(src.cfg, indices, merged), pred_tokens


# ---------------------------------------------------------------- reconstruction

@dataclass
class ReconResult:
    magnitude: np.ndarray
    phase: np.ndarray
    method: str
    metrics: object = None


def reconstruct(spokes: SpokeSet, coils: CoilMaps | None = None, method: str = "reference",
                size: int | None = None) -> ReconResult:
    """Density-compensated adjoint per coil, RSS magnitude, sensitivity-weighted phase."""
    imgs = adjoint_recon(spokes, size, compensate=True)
    if imgs.ndim == 2:
        imgs = imgs[None]
    mag = root_sum_of_squares(imgs)
    if coils is not None:
        if coils.maps.shape != imgs.shape:
            raise ValueError(f"coil maps {coils.maps.shape} do not match coil images {imgs.shape}")
        combined = np.sum(np.conj(coils.maps) * imgs, axis=0)
    else:
        combined = imgs[0]
    phase = np.angle(combined)
    phase[phase <= -np.pi] = np.pi
    return ReconResult(mag, phase, method)


def zero_filled_baseline(src: SpokeSet, coils: CoilMaps | None = None, size: int | None = None) -> ReconResult:
    return reconstruct(src, coils, "zero-filled", size)


def projection_error(pred_tokens: np.ndarray, truth: SpokeSet, L_in: int) -> float:
    """Token-domain NMSE of the predicted blocks against the true spokes, per-coil scales."""
    samples = truth.samples if truth.samples.ndim == 3 else truth.samples[None]
    true_tokens = []
    for s in samples:
        one = SpokeSet(truth.cfg, truth.indices, s)
        scale = ds.projection_scale(one.select(np.arange(L_in)))
        true_tokens.append(ds.tokenize(one, scale).tokens[L_in:])
    return proj_nmse(pred_tokens, np.stack(true_tokens))


def trajectory_config(cfg: Config) -> TrajectoryConfig:
    return TrajectoryConfig(cfg["data.n_readout"])
