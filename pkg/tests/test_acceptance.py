"""Acceptance criteria A1-A7, one test per criterion.

A3, A4 and A6 share one desk-scale run (about 40 minutes single-threaded).
Set ``RADIALPKT_DESK_RUN`` to a finished ``radialpkt pipeline`` output
directory to score that run instead of training a new one.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE
from radialpkt import dataset as ds
from radialpkt import fileformats as ff
from radialpkt import numerics as nx
from radialpkt import pipeline as pl
from radialpkt.cli import main
from radialpkt.config import load_config
from radialpkt.experiment import load_spokes, run_pipeline
from radialpkt.fourier import SpokeSet, adjoint_recon, ndft_forward, projection_to_spoke, spoke_to_projection
from radialpkt.metrics import parse_summary, read_report
from radialpkt.model import (
    DecoderLayer, EncoderLayer, FeedForward, ModelConfig, MultiHeadAttention, PKTransformer, causal_mask,
    positional_encoding,
)
from radialpkt.phantom import PhantomSpec, make_phantom
from radialpkt.trajectory import GOLDEN_ANGLE_DEG, TrajectoryConfig, spoke_angle

ROOT = Path(__file__).resolve().parents[1]
DESK_CFG = ROOT / "configs" / "desk.cfg"


def record(name, ok, detail):
    ACCEPTANCE[name] = (bool(ok), detail)
    print(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------- A1

def test_A1_property_suite():
    t0 = time.time()
    rng = np.random.default_rng(0)
    cfg = TrajectoryConfig(n_readout=32)
    fails = []

    idx = np.arange(3, 20)
    x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    y = rng.standard_normal((idx.size, 32)) + 1j * rng.standard_normal((idx.size, 32))
    lhs = np.vdot(y, ndft_forward(x, idx, cfg).samples)
    rhs = np.vdot(adjoint_recon(SpokeSet(cfg, idx, y), compensate=False), x)
    if abs(lhs - rhs) > 1e-10 * np.linalg.norm(x) * np.linalg.norm(y):
        fails.append("adjointness")

    s = rng.standard_normal((5, 32)) + 1j * rng.standard_normal((5, 32))
    if np.max(np.abs(projection_to_spoke(spoke_to_projection(s)) - s)) > 1e-12 * np.abs(s).max():
        fails.append("unitary roundtrip")

    img = make_phantom(PhantomSpec(size=16, rng_seed=1))
    proj = spoke_to_projection(ndft_forward(img, [0], cfg).samples[0])
    expected = np.zeros(32, complex)
    expected[8:24] = img.sum(axis=0) * np.sqrt(32)
    if np.linalg.norm(proj - expected) > 1e-10 * np.linalg.norm(expected):
        fails.append("projection-slice")

    if abs(positional_encoding([1], 256)[0, 0].item() - math.sin(1.0)) > 1e-12:
        fails.append("PE sin(1)")
    if abs(positional_encoding([399], 256)[0, 255].item() - math.cos(399 / 10000 ** (254 / 256))) > 1e-12:
        fails.append("PE index 399")

    i = np.arange(0, 10**5, 7)
    d = (spoke_angle(i + 1) - spoke_angle(i) - GOLDEN_ANGLE_DEG) % 360
    if np.max(np.minimum(d, 360 - d)) > 1e-7:
        fails.append("golden recurrence")

    if ds.window_count(3500, 400, 200) != 16:
        fails.append("window_count")
    if ds.effective_dataset_size(ds.AugmentationPlan(n_sub=8, n_reg=3, n_slc=32, n_coil=30, M=3500)) != 184320:
        fails.append("effective_dataset_size")

    a = torch.from_numpy(rng.standard_normal((6, 9)) * 20)
    if torch.max(torch.abs(nx.softmax(a).sum(-1) - 1)) > 1e-12:
        fails.append("softmax")
    ln = nx.layer_norm(a, eps=0.0)
    if torch.max(torch.abs(ln.mean(-1))) > 1e-10 or torch.max(torch.abs(ln.var(-1, unbiased=False) - 1)) > 1e-6:
        fails.append("layer norm")

    torch.manual_seed(0)
    m = PKTransformer(ModelConfig(d_model=16, n_stacks=1, n_heads=2, d_k=8, d_v=8, d_ff=32, dropout=0.0,
                                  L_in=5)).double().eval()
    src, tgt = torch.randn(1, 5, 16, dtype=torch.float64), torch.randn(1, 5, 16, dtype=torch.float64)
    base = m(src, tgt)
    for t in range(5):
        bumped = tgt.clone()
        bumped[:, t] += 5
        if not torch.equal(m(src, bumped)[:, : t + 1], base[:, : t + 1]):
            fails.append(f"causal mask at {t}")

    dt = time.time() - t0
    record("A1", not fails and dt < 300, f"property checks {'all hold' if not fails else fails}; {dt:.2f}s")


# ---------------------------------------------------------------- A2

def test_A2_gradient_suite():
    t0 = time.time()
    tiny = ModelConfig(d_model=8, n_stacks=1, n_heads=2, d_k=4, d_v=4, d_ff=16, dropout=0.0, L_in=3)
    torch.manual_seed(0)
    dbl = lambda *s: torch.randn(*s, dtype=torch.float64)
    errors = {}

    att = MultiHeadAttention(tiny).double()
    q, kv, w = dbl(1, 3, 8).requires_grad_(), dbl(1, 4, 8).requires_grad_(), dbl(1, 3, 8)
    errors["attention"] = nx.grad_check(lambda: (att(q, kv) * w).sum(), list(att.parameters()) + [q, kv])

    ffn = FeedForward(tiny).double()
    errors["feed-forward"] = nx.grad_check(lambda: (ffn(q) * w).sum(), list(ffn.parameters()) + [q])

    g, b = dbl(8).requires_grad_(), dbl(8).requires_grad_()
    errors["layer norm"] = nx.grad_check(lambda: (nx.layer_norm(q, g, b) * w).sum(), [q, g, b])

    model = PKTransformer(tiny).double().eval()
    src, tgt = dbl(2, 3, 8), dbl(2, 3, 8)
    errors["1-stack encoder-decoder"] = nx.grad_check(lambda: ((model(src, tgt) - tgt) ** 2).mean(),
                                                      list(model.parameters()))
    worst = max(errors.values())
    dt = time.time() - t0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    record("A2", worst <= 1e-4 and dt < 600, f"max relative error {worst:.1e} ({detail}); {dt:.1f}s")


# ---------------------------------------------------------------- desk run (A3, A4, A6)

def _complete(run: Path) -> bool:
    return all((run / f).exists() for f in ("report.csv", "checks.json", "config.cfg"))


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    given = os.environ.get("RADIALPKT_DESK_RUN")
    if given:
        run = Path(given)
        if not _complete(run):
            pytest.fail(f"RADIALPKT_DESK_RUN={given} is not a finished pipeline run")
        return run, None
    run = tmp_path_factory.mktemp("desk")
    t0 = time.time()
    torch.set_num_threads(1)
    run_pipeline(load_config(DESK_CFG), run)
    return run, time.time() - t0


def _summary(run):
    rows = read_report(run / "report.csv")
    return {r["method"]: r for r in rows if r["subject"] == "summary"}, [r for r in rows if r["subject"] != "summary"]


@pytest.mark.slow
def test_A3_desk_experiment(desk_run):
    run, seconds = desk_run
    cfg = load_config(run / "config.cfg")
    summ, rows = _summary(run)
    split = json.loads((run / "data" / "split.json").read_text())
    epochs = [len((run / "checkpoints" / f"block{b}_history.csv").read_text().splitlines()) - 1 for b in (1, 2, 3)]
    zf_nmse, _ = parse_summary(summ["zero-filled"]["nmse"])
    pkt_nmse, _ = parse_summary(summ["pkt"]["nmse"])
    zf_ssim, _ = parse_summary(summ["zero-filled"]["ssim"])
    pkt_ssim, _ = parse_summary(summ["pkt"]["ssim"])
    setup_ok = (cfg["data.n_subjects"] >= 64 and cfg["data.size"] == 64 and cfg["data.n_coils"] == 4
                and cfg["data.n_spokes"] == 200 and cfg["model.L_in"] == 25 and cfg["model.d_model"] == 256
                and cfg["model.n_stacks"] == 2 and cfg["model.n_heads"] == 4 and len(split["test"]) >= 8
                and min(epochs) >= 30)
    ok = setup_ok and pkt_nmse <= 0.7 * zf_nmse and pkt_ssim >= zf_ssim + 0.05
    timing = f"; run {seconds / 60:.1f} min" if seconds else ""
    record("A3", ok, f"NMSE pkt {pkt_nmse:.4f} vs zero-filled {zf_nmse:.4f} (ratio {pkt_nmse / zf_nmse:.2f} <= 0.70), "
                     f"SSIM pkt {pkt_ssim:.4f} vs zero-filled {zf_ssim:.4f} (+{pkt_ssim - zf_ssim:.3f} >= 0.05), "
                     f"{len(split['test'])} test subjects, {len(rows) // 2} windows, epochs {epochs}{timing}")


@pytest.mark.slow
def test_A4_projection_domain(desk_run):
    run, _ = desk_run
    summ, _ = _summary(run)
    mean, std = parse_summary(summ["pkt"]["proj_nmse"])
    record("A4", mean <= 0.15, f"held-out proj_nmse {mean:.4f}±{std:.4f} (<= 0.15)")


@pytest.mark.slow
def test_A6_data_consistency(desk_run):
    run, _ = desk_run
    checks = json.loads((run / "checks.json").read_text())
    acquired = sorted((run / "eval").glob("*_acquired.rks"))
    identical = 0
    for a in acquired:
        src = ff.read_spokes(a)
        merged = ff.read_spokes(a.with_name(a.name.replace("_acquired", "_merged")))
        L = src.samples.shape[1]
        identical += int(merged.first_index == src.first_index
                         and np.array_equal(merged.samples[:, :L], src.samples))
    ok = (len(acquired) == checks["windows"] > 0 and identical == len(acquired)
          and checks["acquired_bit_identical"] == checks["windows"] == checks["angles_consistent"])
    record("A6", ok, f"acquired spokes bit-identical in {identical}/{len(acquired)} merged windows on disk, "
                     f"{checks['acquired_bit_identical']}/{checks['windows']} in memory")


# ---------------------------------------------------------------- A5

def test_A5_overfit_each_block():
    t0 = time.time()
    tcfg = TrajectoryConfig(n_readout=128)
    toks = []
    for s in range(8):
        sp = ndft_forward(make_phantom(PhantomSpec(rng_seed=s)), np.arange(100), tcfg)
        toks.append(ds.tokenize(sp, ds.projection_scale(sp.select(np.arange(25)))).tokens)
    toks = np.stack(toks)
    ratios, steps = {}, {}
    for b in (1, 2, 3):
        src, tgt = pl.block_arrays(toks, 25, b)
        losses = pl.overfit_batch(src, tgt, ModelConfig(dropout=0.0, block=b), steps=2000, lr=1e-3, stop_ratio=100)
        ratios[b], steps[b] = losses[0] / min(losses), len(losses)
    dt = time.time() - t0
    ok = all(r >= 100 for r in ratios.values()) and dt < 600
    record("A5", ok, "loss reduction " + ", ".join(f"block {b} {ratios[b]:.0f}x in {steps[b]} steps" for b in ratios)
           + f"; {dt:.0f}s")


# ---------------------------------------------------------------- A7

def test_A7_determinism(tmp_path):
    args = ["pipeline", "--config", str(DESK_CFG), "--seed", "7", "--set", "data.n_subjects=16",
            "--set", "optim.epochs=2", "--set", "run.threads=1"]
    reports = []
    for name in ("first", "second"):
        assert main(args + ["--out", str(tmp_path / name)]) == 0
        reports.append((tmp_path / name / "report.csv").read_bytes())
    same_ckpt = all((tmp_path / "first" / "checkpoints" / f"block{b}.ckp").read_bytes()
                    == (tmp_path / "second" / "checkpoints" / f"block{b}.ckp").read_bytes() for b in (1, 2, 3))
    n_rows = reports[0].count(b"\n") - 1
    record("A7", reports[0] == reports[1] and same_ckpt,
           f"report.csv byte-identical across two single-threaded runs ({n_rows} rows, {len(reports[0])} bytes), "
           f"checkpoints identical: {same_ckpt}")
