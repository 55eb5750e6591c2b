"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (lines appear even when
output is captured) or ``python tests/test_acceptance.py``. Criterion 8 trains
the desk model twice for 200 epochs and dominates the runtime.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from cmtboost import ops
from cmtboost.battery import BLOCK_TOL, END_TO_END_TOL, PRIMITIVE_TOL, run_battery
from cmtboost.blocks import LPU, CMTBlock, PixelAttention, ResidualBlockMN, channel_boost, lightweight_attention
from cmtboost.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from cmtboost.cli import main
from cmtboost.config import parse_config
from cmtboost.data import (ImageRecord, SyntheticSpec, generate_synthetic, largest_remainder,
                           median_filter_3x3, preprocess_records, resize_bicubic, split_dataset)
from cmtboost.metrics import class_separation, confidence_interval, evaluate, pca_project, predict, roc_pr_curves
from cmtboost.model import build_model, profile, shape_trace
from cmtboost.nn import init_params
from cmtboost.tensor import Tensor, precision
from cmtboost.train import AdamState, adam_step, lr_at

sys.path.insert(0, str(Path(__file__).parent))
from conftest import conv2d_oracle, depthwise_oracle, pool_oracle  # noqa: E402
from test_data import resize_oracle  # noqa: E402
from test_metrics import mann_whitney_auc  # noqa: E402


@pytest.fixture
def verdict(capsys):
    """Print ``[PASS|FAIL] criterion N: detail`` past pytest's capture, then assert."""
    def emit(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n:>2} {title}: {detail}")
        assert ok, f"criterion {n} ({title}) failed: {detail}"
    return emit


# ---------------------------------------------------------------------------

def test_criterion_01_gradient_battery(verdict):
    start = time.perf_counter()
    results = run_battery(include_end_to_end=True)
    seconds = time.perf_counter() - start
    worst = {}
    for r in results:
        worst[r.category] = max(worst.get(r.category, 0.0), r.error)
    tol = {"primitive": PRIMITIVE_TOL, "block": BLOCK_TOL, "end-to-end": END_TO_END_TOL}
    ok = (all(r.passed for r in results) and seconds <= 300
          and (PRIMITIVE_TOL, BLOCK_TOL, END_TO_END_TOL) == (1e-6, 1e-4, 1e-3)
          and {"primitive", "block", "end-to-end"} <= set(worst)
          and all(worst[c] <= tol[c] for c in tol))
    detail = (f"{len(results)} checks, worst " +
              ", ".join(f"{c} {worst[c]:.2e}" for c in tol) + f", {seconds:.1f}s")
    failed = [r.name for r in results if not r.passed]
    verdict(1, "gradient battery", ok, detail + (f", failed {failed}" if failed else ""))


def test_criterion_02_operator_oracles(verdict):
    rng = np.random.default_rng(2024)
    worst = {"conv2d": 0.0, "depthwise": 0.0, "pool2d": 0.0}
    with precision(64):
        for _ in range(100):
            N, C, O = (int(v) for v in rng.integers(1, 4, 3))
            k, s = int(rng.integers(1, 4)), int(rng.integers(1, 3))
            p = int(rng.integers(0, k // 2 + 1))
            H, W = (int(v) for v in rng.integers(k, 9, 2))
            x, w, b = rng.standard_normal((N, C, H, W)), rng.standard_normal((O, C, k, k)), rng.standard_normal(O)
            got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=s, pad=p).data
            worst["conv2d"] = max(worst["conv2d"], np.abs(got - conv2d_oracle(x, w, b, s, p)).max())
            wd, bd = rng.standard_normal((C, 1, k, k)), rng.standard_normal(C)
            got = ops.depthwise_conv2d(Tensor(x), Tensor(wd), Tensor(bd), stride=s, pad=p).data
            worst["depthwise"] = max(worst["depthwise"], np.abs(got - depthwise_oracle(x, wd, bd, s, p)).max())
            kp = int(rng.integers(1, 4))
            sp = int(rng.integers(1, 3))
            Hp, Wp = (int(v) for v in rng.integers(kp, 9, 2))
            xp = rng.standard_normal((N, C, Hp, Wp))
            mode = "max" if rng.random() < 0.5 else "avg"
            got = ops.pool2d(Tensor(xp), mode, kp, sp).data
            worst["pool2d"] = max(worst["pool2d"], np.abs(got - pool_oracle(xp, mode, kp, sp)).max())
    ok = all(v <= 1e-10 for v in worst.values())
    verdict(2, "operator oracles", ok, "100 instances each, max abs err " +
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_03_shape_contract(verdict, tmp_path, capsys):
    golden = {"stem": (64, 112, 112), "stage1.rb": (128, 56, 56), "stage2.rb": (256, 28, 28),
              "stage3.rb": (512, 14, 14), "stage4.rb": (1024, 7, 7), "res.block3": (256, 7, 7),
              "boost": (1280, 7, 7)}
    trace = {n: s for n, s, _ in shape_trace(build_model(profile("paper224")))}
    code = main(["inspect", "--profile", "paper224", "--format", "csv", "--out", str(tmp_path)])
    printed = capsys.readouterr().out
    rows = {r.split(",")[0]: r.split(",")[1] for r in (tmp_path / "shape_trace.csv").read_text().splitlines()[1:]}
    mismatched = [k for k, v in golden.items()
                  if trace.get(k) != v or rows.get(k) != "x".join(map(str, v))]
    ok = code == 0 and not mismatched and "64x112x112" in printed
    verdict(3, "shape contract", ok, "paper224 trace matches all golden shapes" if ok
            else f"mismatched {mismatched}")


def test_criterion_04_block_identities(verdict):
    rng = np.random.default_rng(4)
    checks = {}
    with precision(64):
        x = Tensor(rng.standard_normal((2, 8, 6, 6)))
        checks["LPU zero weights"] = np.array_equal(LPU(8).astype(np.float64)(x).data, x.data)
        checks["residual zero transform"] = np.array_equal(
            ResidualBlockMN(8, 8, 1).astype(np.float64)(x).data, x.data)
        blk = CMTBlock(8, 2, 2, (6, 6), 4).astype(np.float64)
        init_params(blk, 0)
        for p in (blk.lmhsa.wo, blk.lmhsa.bo, blk.irffn.project_w, blk.irffn.project_b):
            p.data[...] = 0
        checks["CMT short-circuit"] = np.array_equal(blk(x).data, blk.lpu(x).data)
        y = Tensor(rng.standard_normal((2, 5, 6, 6)))
        checks["boost additive"] = channel_boost(x, y).shape[1] == 13
        pa = PixelAttention(8, 2).astype(np.float64)
        init_params(pa, 1)
        gates = [pa.gate(Tensor(3 * rng.standard_normal((2, 8, 6, 6)))).data for _ in range(20)]
        checks["PA gate in (0,1)"] = all(np.all((g > 0) & (g < 1)) for g in gates)
    bad = [k for k, v in checks.items() if not v]
    verdict(4, "block identities", not bad, f"{len(checks)} identities hold" if not bad else f"broken {bad}")


def test_criterion_05_normalization_invariants(verdict):
    rng = np.random.default_rng(5)
    worst_soft = worst_attn = worst_ln = 0.0
    with precision(64):
        for _ in range(1000):
            n, m, d = (int(v) for v in rng.integers(1, 9, 3))
            z = rng.standard_normal((n, m)) * rng.uniform(0.1, 30)
            worst_soft = max(worst_soft, np.abs(ops.softmax(Tensor(z), axis=-1).data.sum(-1) - 1).max())
            q, k = rng.standard_normal((n, d)), rng.standard_normal((m, d))
            weights = lightweight_attention(Tensor(q), Tensor(k), Tensor(np.eye(m))).data
            worst_attn = max(worst_attn, np.abs(weights.sum(-1) - 1).max())
            C = int(rng.integers(2, 9))
            t = rng.standard_normal((2, C, 3, 3)) * 5 + 3
            y = ops.layer_norm(Tensor(t), Tensor(np.ones(C)), Tensor(np.zeros(C)), axis=1).data
            worst_ln = max(worst_ln, np.abs(y.mean(axis=1)).max())
    ok = worst_soft <= 1e-6 and worst_attn <= 1e-6 and worst_ln <= 1e-6
    verdict(5, "normalization invariants", ok, f"1000 inputs, softmax {worst_soft:.1e}, "
            f"attention {worst_attn:.1e}, layer-norm mean {worst_ln:.1e}")


def test_criterion_06_metrics_oracle(verdict):
    scores = [0.9] * 90 + [0.1] * 10 + [0.8] * 20 + [0.2] * 80
    labels = [1] * 100 + [0] * 100
    from cmtboost.metrics import report_from_scores
    rep = report_from_scores(scores, labels)
    counts_ok = (rep.acc, rep.sen, round(rep.pre, 3), round(rep.f1, 3)) == (85.0, 90.0, 81.818, 85.714)
    ci = confidence_interval(0.05, 424)
    rng = np.random.default_rng(6)
    worst, done = 0.0, 0
    while done < 1000:
        n = int(rng.integers(2, 15))
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            continue
        s = rng.integers(0, 6, n) / 5.0
        worst = max(worst, abs(roc_pr_curves(s, y)[2] - mann_whitney_auc(s, y)))
        done += 1
    ok = counts_ok and abs(ci - 0.020745) <= 1e-5 and worst <= 1e-9
    verdict(6, "metrics oracle", ok, f"Acc {rep.acc:.2f} Sen {rep.sen:.2f} Pre {rep.pre:.3f} "
            f"F1 {rep.f1:.3f}, CI {ci:.6f}, AUC vs Mann-Whitney max err {worst:.1e}")


def test_criterion_07_schedule_and_optimizer(verdict):
    lrs = [lr_at(e) for e in (0, 20, 40)]
    rng = np.random.default_rng(7)
    w = rng.standard_normal(6)
    p = {"w": w.copy()}
    adam_step(p, {"w": np.zeros(6)}, AdamState(weight_decay=0.0))
    identity = p["w"].tobytes() == w.tobytes()
    state = AdamState(lr=1e-3, weight_decay=0.04)
    shrink_ok = True
    for _ in range(5):
        before = p["w"].copy()
        adam_step(p, {"w": np.zeros(6)}, state)
        shrink_ok &= p["w"].tobytes() == (before * (1 - 1e-3 * 0.04)).tobytes()
    ok = lrs == [1e-3, 8.5e-4, 7.225e-4] and identity and shrink_ok
    verdict(7, "schedule and optimizer", ok, f"lr {lrs}, zero-grad identity {identity}, "
            f"decay shrink exact {shrink_ok}")


# ---------------------------------------------------------------------------
# criteria 8 and 11 share one pair of full desk-scale training runs

@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    runs = []
    for name in ("run_a", "run_b"):
        out = tmp_path_factory.mktemp(name)
        start = time.perf_counter()
        code = main(["train", "--synthetic", "--seed", "0", "--out", str(out)])
        runs.append((code, out, time.perf_counter() - start))
    cfg = parse_config(None, ["data.synthetic=true"]).validate()
    model = build_model(cfg.model)
    load_checkpoint(model, runs[0][1] / "best.ckpt")
    from cmtboost.cli import _records
    split = _records(cfg)
    return runs, model, split, cfg


def test_criterion_08_desk_learning(verdict, desk_runs):
    runs, model, split, cfg = desk_runs
    codes = [r[0] for r in runs]
    hist_a, hist_b = ((r[1] / "history.csv").read_bytes() for r in runs)
    epochs = len(hist_a.decode().splitlines()) - 1
    train_rep = evaluate(model, split.train)
    test_rep = evaluate(model, split.test)
    fresh = preprocess_records(generate_synthetic(SyntheticSpec(50, 64, 0.25, seed=12345, prefix="fresh")),
                               64, 64, 1)
    fresh_rep = evaluate(model, fresh)
    wall = max(r[2] for r in runs)
    ok = (codes == [0, 0] and epochs == 200 and len(split.train) + len(split.validation) + len(split.test) == 64
          and train_rep.acc == 100.0 and test_rep.acc >= 90.0 and test_rep.auc_roc >= 0.95
          and wall <= 600 and hist_a == hist_b)
    verdict(8, "desk-scale learning", ok,
            f"train acc {train_rep.acc:.1f}%, held-out test (n={test_rep.total}) acc {test_rep.acc:.1f}% "
            f"AUC {test_rep.auc_roc:.3f}; fresh synthetic (n={fresh_rep.total}) acc {fresh_rep.acc:.1f}% "
            f"AUC {fresh_rep.auc_roc:.3f}; wall {wall:.0f}s per run; histories identical {hist_a == hist_b}")


def test_criterion_09_preprocessing(verdict):
    img = np.zeros((1, 7, 7), np.float32)
    img[0, 3, 3] = 1.0
    once = median_filter_3x3(img)
    impulse_ok = once[0, 3, 3] == 0.0 and np.array_equal(median_filter_3x3(once), once)
    rng = np.random.default_rng(9)
    same = rng.random((1, 9, 9)).astype(np.float32)
    identity_err = float(np.abs(resize_bicubic(same, 9, 9) - same).max())
    ramp = (np.arange(4)[None, :] + np.arange(4)[:, None]) / 6.0
    ramp_err = float(np.abs(resize_bicubic(ramp[None].astype(np.float32), 8, 8)[0]
                            - resize_oracle(ramp, 8, 8)).max())
    z = np.zeros((1, 1, 1), np.float32)
    recs = [ImageRecord(f"b{i}", z, 0) for i in range(1076)] + [ImageRecord(f"m{i}", z, 1) for i in range(1044)]
    s = split_dataset(recs, seed=0)
    ids = [r.id for part in (s.train, s.validation, s.test) for r in part]
    partition_ok = len(ids) == len(set(ids)) == len(recs)
    counts = [[sum(r.label == c for r in part) for part in (s.train, s.validation, s.test)] for c in (0, 1)]
    counts_ok = counts == [largest_remainder(1076, (0.7, 0.1, 0.2)), largest_remainder(1044, (0.7, 0.1, 0.2))] \
        == [[753, 108, 215], [731, 104, 209]]
    ok = impulse_ok and identity_err <= 1e-6 and ramp_err <= 1e-6 and partition_ok and counts_ok
    verdict(9, "preprocessing", ok, f"impulse removed+idempotent {impulse_ok}, same-size err {identity_err:.1e}, "
            f"ramp oracle err {ramp_err:.1e}, split counts {counts}")


def test_criterion_10_persistence(verdict, tmp_path):
    a, b = build_model(profile("desk64")), build_model(profile("desk64"))
    init_params(b, 99)
    save_checkpoint(a, tmp_path / "a.ckpt")
    load_checkpoint(b, tmp_path / "a.ckpt")
    exact = all(pa.data.tobytes() == pb.data.tobytes()
                for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()))
    outcomes = []
    for label, offset, payload, needle in (("magic", 0, b"JUNK", "bad magic"),
                                           ("version", 4, (7).to_bytes(4, "little"), "version mismatch")):
        raw = bytearray((tmp_path / "a.ckpt").read_bytes())
        raw[offset:offset + len(payload)] = payload
        (tmp_path / f"{label}.ckpt").write_bytes(bytes(raw))
        victim = build_model(profile("desk64"))
        init_params(victim, 5)
        before = [p.data.tobytes() for p in victim.parameters()]
        try:
            load_checkpoint(victim, tmp_path / f"{label}.ckpt")
            outcomes.append(False)
        except CheckpointError as exc:
            outcomes.append(needle in str(exc) and before == [p.data.tobytes() for p in victim.parameters()])
    ok = exact and all(outcomes)
    verdict(10, "persistence", ok, f"round trip bit-exact {exact}, corrupt magic/version rejected "
            f"without mutation {outcomes}")


def test_criterion_11_pca(verdict, desk_runs):
    rng = np.random.default_rng(11)
    res = pca_project(rng.standard_normal((60, 20)) @ rng.standard_normal((20, 20)), k=6)
    ortho = float(np.abs(res.components @ res.components.T - np.eye(6)).max())
    _, model, split, _ = desk_runs
    x = np.stack([r.pixels for r in split.test])
    labels = np.array([r.label for r in split.test])
    _, feats = predict(model, x)
    pcs = pca_project(feats, k=2)
    sep = class_separation(pcs.projections[:, 0], labels)
    ok = ortho <= 1e-6 and sep >= 2.0
    verdict(11, "PCA", ok, f"orthonormality err {ortho:.1e}; test-set PC1 class separation {sep:.2f} "
            f"(explained {100 * pcs.explained_ratio[0]:.1f}%)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
