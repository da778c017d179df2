"""Acceptance criteria, one test each, each printing a single PASS/FAIL line.

The lines are echoed in pytest's terminal summary; run
``pytest tests/test_acceptance.py -v`` to see them.  Criterion 8 needs a
CICIDS2017 CSV named by ``CTRANATD_CICIDS_CSV`` and is skipped otherwise.
"""

import hashlib
import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest

import conftest
from ctranatd import metrics
from ctranatd.cli import main
from ctranatd.gradsuite import gradient_suite
from ctranatd.models import ModelConfig, build
from ctranatd.nn import ops
from ctranatd.nn.tensor import Tensor3
from ctranatd.relay import (
    GENESIS_HASH,
    LedgerBlock,
    OracleDetector,
    ScenarioConfig,
    check_block,
    run_scenario,
    verify_records,
)

ATTACKS = ("dos", "ddos", "portscan")
ARCHS = ("ctranatd", "transformer", "cnn", "lstm")
SEED = 7


def report(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


# --- 1 -----------------------------------------------------------------------


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    reports = gradient_suite(tolerance=1e-4, seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in reports.values())
    ok = all(r.passed for r in reports.values()) and len(reports) == 8 and elapsed < 30
    report(1, ok, f"{len(reports)} fragments, max rel error {worst:.2e} < 1e-4, {elapsed:.1f}s < 30s")


# --- 2 -----------------------------------------------------------------------


def test_criterion_2_shapes():
    x = Tensor3(np.random.default_rng(0).standard_normal((2, 60, 71)))
    got = {}
    for preset in ATTACKS:
        m = build(ModelConfig.preset(preset))
        got[preset] = ops.dropout(ops.maxpool1d(m.conv(x), 2), 0.1, False).time
    ok = got == {"dos": 28, "ddos": 29, "portscan": 29}
    report(2, ok, f"transformer input lengths {got} (expected 28/29/29)")


# --- 3 -----------------------------------------------------------------------


def _pairwise(s, y):
    pos, neg = s[y == 1], s[y == 0]
    d = pos[:, None] - neg[None, :]
    return ((d > 0).sum() + 0.5 * (d == 0).sum()) / (len(pos) * len(neg))


def _sweep(s, y):
    P, N = int(y.sum()), int(len(y) - y.sum())
    pts = []
    for th in [math.inf] + sorted(set(s.tolist()), reverse=True):
        pred = s >= th
        pts.append((int((pred & (y == 0)).sum()) / N, int((pred & (y == 1)).sum()) / P, th))
    return pts


def test_criterion_3_metric_oracles():
    g = np.random.default_rng(3)
    worst = 0.0
    checked = 0
    for _ in range(1000):
        tp, fp, tn, fn = (int(v) for v in g.integers(0, 500, 4))
        c = metrics.ConfusionCounts(tp, fp, tn, fn)
        exact = {}
        if c.total:
            exact[metrics.accuracy] = Fraction(tp + tn, c.total)
        if tp + fn:
            exact[metrics.recall] = Fraction(tp, tp + fn)
        if tp:
            p, r = Fraction(tp, tp + fp), Fraction(tp, tp + fn)
            exact[lambda c: metrics.precision_f1(c)[0]] = p
            exact[metrics.f1_score] = 2 * p * r / (p + r)
        elif fp + fn:
            exact[metrics.f1_score] = Fraction(0)
        for fn_, val in exact.items():
            worst = max(worst, abs(fn_(c) - val))
            checked += 1
    auc_err = 0.0
    roc_exact = True
    for _ in range(100):
        n = int(g.integers(2, 201))
        y = g.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = np.round(g.random(n), int(g.integers(1, 4)))  # coarse grids force ties
        auc_err = max(auc_err, abs(metrics.roc_auc(s, y) - _pairwise(s, y)))
        roc_exact &= metrics.roc_curve(s, y).points() == _sweep(s, y)
    ok = worst <= 1e-15 and auc_err <= 1e-9 and roc_exact
    report(3, ok, f"{checked} ratio checks max err {worst:.1e} <= 1e-15; 100 AUC sets max err "
                  f"{auc_err:.1e} <= 1e-9; ROC sweep exact={roc_exact}")


# --- 4 -----------------------------------------------------------------------


def test_criterion_4_spot_values():
    g = np.random.default_rng(4)
    logits = g.standard_normal((50, 17)) * 30
    soft_err = float(np.abs(ops.softmax_rows(logits).sum(axis=-1) - 1).max())
    k, v = g.standard_normal((2, 6, 4)), g.standard_normal((2, 6, 5))
    att = ops.scaled_dot_attention(Tensor3(np.zeros((2, 6, 4))), Tensor3(k), Tensor3(v), 4).data
    att_err = float(np.abs(att - v.mean(axis=1, keepdims=True)).max())
    sig = float(ops.sigmoid(Tensor3(np.zeros((1, 1, 1)))).data[0, 0, 0])
    bce = max(abs(ops.bce_loss([0.5], [y])[0] - math.log(2)) for y in (0, 1))
    ok = soft_err <= 1e-12 and att_err <= 1e-12 and sig == 0.5 and bce <= 1e-12
    report(4, ok, f"softmax row err {soft_err:.1e}, zero-Q attention err {att_err:.1e}, "
                  f"sigmoid(0)={sig}, |BCE(0.5)-ln2|={bce:.1e}")


# --- 5 and 7 -------------------------------------------------------------------


def _pipeline(root, attack, archs=ARCHS):
    """synth -> preprocess -> train -> eval through the CLI; returns per-arch outputs."""
    root.mkdir(parents=True, exist_ok=True)
    csv_, data = root / f"{attack}.csv", root / f"{attack}.npz"
    args = ["--seed", str(SEED)]
    assert main(["synth", "--attack", attack, "--records", "12000", "--attack-fraction", "0.3",
                 "--shift-magnitude", "3", "--shift-features", "5", "--out", str(csv_), *args]) == 0
    assert main(["preprocess", "--input", str(csv_), "--out", str(data), *args]) == 0
    out = {}
    for arch in archs:
        ck, met = root / f"{attack}-{arch}.npz", root / f"{attack}-{arch}.metrics.csv"
        t0 = time.perf_counter()
        code = main(["train", "--data", str(data), "--preset", attack, "--arch", arch,
                     "--epochs", "20", "--out", str(ck), *args])
        seconds = time.perf_counter() - t0
        code |= main(["eval", "--ckpt", str(ck), "--data", str(data), "--reps", "100",
                      "--out", str(met), *args])
        mean = dict(zip(met.read_text().splitlines()[0].split(",")[1:],
                        map(float, met.read_text().splitlines()[-1].split(",")[1:])))
        out[arch] = {"code": code, "seconds": seconds, "metrics": met, "mean": mean,
                     "report": (root / f"{attack}-{arch}.npz.report.csv").read_text()}
    return out


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    return {a: _pipeline(root / "run1", a) for a in ATTACKS}, root


def test_criterion_5_synthetic_benchmark(benchmark):
    runs, _ = benchmark
    parts, ok = [], True
    for attack, res in runs.items():
        c = res["ctranatd"]
        acc, auc = c["mean"]["accuracy"], c["mean"]["auc"]
        losses = [float(r.split(",")[1]) for r in c["report"].splitlines()[1:]]
        order = auc >= res["transformer"]["mean"]["auc"] and auc >= res["cnn"]["mean"]["auc"]
        fine = (all(r["code"] == 0 for r in res.values()) and acc >= 0.95 and auc >= 0.98 and order
                and c["seconds"] < 600 and losses[-1] < losses[0])
        ok &= fine
        lstm_rank = 1 + sum(res[a]["mean"]["auc"] > res["lstm"]["mean"]["auc"] for a in ARCHS)
        parts.append(f"{attack}: acc {acc:.3f} auc {auc:.3f} ({c['seconds']:.0f}s); "
                     f"AUC tr {res['transformer']['mean']['auc']:.3f} cnn {res['cnn']['mean']['auc']:.3f} "
                     f"lstm {res['lstm']['mean']['auc']:.3f} (lstm rank {lstm_rank}, ties share)")
    report(5, ok, "; ".join(parts))


def test_criterion_6_relay():
    rep = run_scenario(ScenarioConfig(uav_count=10, packets_per_uav=100, seed=SEED), OracleDetector())
    truth_abnormal = sum(v["tp"] + v["fn"] for v in rep.per_attack.values())
    safe = (rep.packets == 1000 and rep.safety_violations == 0 and rep.abnormal_delivered == 0
            and rep.dropped == truth_abnormal and rep.delivered == 1000 - truth_abnormal)
    lines = [b.to_record().encode() for b in rep.ledger.blocks]
    clean = verify_records(lines).valid
    # every byte of every block, flipped, checked against the block's true predecessor
    flips = missed = 0
    for k, line in enumerate(lines):
        prev = GENESIS_HASH if k == 0 else rep.ledger.blocks[k - 1].block_hash
        for pos in range(len(line)):
            bad = line[:pos] + bytes([line[pos] ^ 0x01]) + line[pos + 1:]
            flips += 1
            try:
                if check_block(LedgerBlock.from_record(bad), k, prev) is None:
                    missed += 1
            except (ValueError, KeyError, TypeError, UnicodeDecodeError):
                pass
    # and a sample of arbitrary byte replacements through whole-chain verification
    g = np.random.default_rng(6)
    full_missed = 0
    for _ in range(100):
        k = int(g.integers(0, len(lines)))
        pos = int(g.integers(0, len(lines[k])))
        new = (lines[k][pos] + int(g.integers(1, 256))) % 256
        mutated = list(lines)
        mutated[k] = lines[k][:pos] + bytes([new]) + lines[k][pos + 1:]
        r = verify_records(mutated)
        full_missed += r.valid or r.first_invalid != k
    entries_ok = rep.chain_entries == 3 * rep.verdicts
    ok = safe and clean and missed == 0 and full_missed == 0 and entries_ok
    report(6, ok, f"1000 packets, {rep.delivered} delivered / {rep.dropped} dropped, 0 violations={safe}; "
                  f"chain of {rep.chain_length} blocks valid={clean}; {flips} byte flips missed {missed}, "
                  f"100 random tampers missed {full_missed}; entries {rep.chain_entries} = 3x{rep.verdicts}")


def test_criterion_7_determinism(benchmark, tmp_path):
    runs, root = benchmark
    digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()  # noqa: E731
    same = total = 0
    for attack in ATTACKS:
        again = _pipeline(tmp_path / "run2", attack)
        for arch in ARCHS:
            total += 1
            same += digest(again[arch]["metrics"]) == digest(runs[attack][arch]["metrics"])
    report(7, same == total, f"{same}/{total} metrics CSVs byte-identical on rerun with --seed {SEED}")


# --- 8 -----------------------------------------------------------------------


def test_criterion_8_cicids(tmp_path):
    path = os.environ.get("CTRANATD_CICIDS_CSV")
    if not path or not os.path.exists(path):
        line = "[SKIP] criterion 8: CICIDS2017 CSV not supplied (set CTRANATD_CICIDS_CSV)"
        print(line)
        conftest.ACCEPTANCE_LINES.append(line)
        pytest.skip("CICIDS2017 data not supplied")
    data = tmp_path / "cicids.npz"
    assert main(["preprocess", "--input", path, "--mode", "cicids", "--out", str(data), "--seed", str(SEED)]) == 0
    parts = []
    for attack in ATTACKS:
        ck, met = tmp_path / f"{attack}.npz", tmp_path / f"{attack}.csv"
        ok = main(["train", "--data", str(data), "--preset", attack, "--out", str(ck), "--seed", str(SEED)]) == 0
        ok &= main(["eval", "--ckpt", str(ck), "--data", str(data), "--out", str(met), "--seed", str(SEED)]) == 0
        last = met.read_text().splitlines()[-1].split(",")
        parts.append(f"{attack}: acc {float(last[1]):.3f} recall {float(last[2]):.3f} "
                     f"f1 {float(last[4]):.3f} auc {float(last[5]):.3f}")
        assert ok
    report(8, True, "pipeline ran in cicids mode; " + "; ".join(parts) + " (informational)")
