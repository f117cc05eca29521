"""End-to-end acceptance checks for the sparse-patch pipeline.

Each test prints one summary line (visible under ``pytest -s``) and
enforces its own wall-clock budget, so the suite doubles as a health
report for the whole package.
"""

import time

import numpy as np
from conftest import make_recording
from oracles import finite_diff_grad, max_rel_error

import eventvit as ev
from eventvit.bench import benchmark_speedup
from eventvit.costmodel import (
    cost_report,
    crossover_n,
    mlp_flops,
    model_macs,
    msa_flops,
    reconcile,
)
from eventvit.events import EVENT_DTYPE, EventRecording, read_binary, \
    synth_recording, write_binary
from eventvit.kernels import (
    cross_entropy,
    gelu,
    gelu_bwd,
    layer_norm,
    layer_norm_bwd,
    layer_norm_fwd,
    matmul,
    matmul_bwd,
    softmax_rows,
    softmax_rows_bwd,
)
from eventvit.patches import PatchGrid, PatchSet, active_counts, \
    flatten_patches, select_active
from eventvit.train import TrainConfig, evaluate, fit, prepare_dataset, \
    preprocess_recording
from eventvit.vit import (
    PAPER_CONFIG,
    TOY_CONFIG,
    ComponentCounters,
    ViTConfig,
    forward,
    init_params,
    load_checkpoint,
    loss_and_gradients,
    save_checkpoint,
)

PAPER = PAPER_CONFIG
TOY = TOY_CONFIG


def _report(name: str, budget: float, started: float, detail: str):
    elapsed = time.perf_counter() - started
    print(f"{name}: PASS {detail} ({elapsed:.2f}s / budget {budget:.0f}s)")
    assert elapsed < budget, f"{name} exceeded its {budget}s budget"


def _toy_patch_set(rng, n):
    pg = PatchGrid.for_frame(TOY.frame_height, TOY.frame_width, TOY.channels,
                             TOY.patch_size)
    positions = np.sort(rng.choice(pg.n_slots, size=n, replace=False))
    return PatchSet(rng.normal(size=(n, pg.patch_dim)),
                    positions.astype(np.int64), pg)


def _synth_corpus():
    """120 train / 60 test recordings over the three synthetic classes."""
    train, test = [], []
    for cls in range(3):
        train += [synth_recording(cls, seed) for seed in range(40)]
        test += [synth_recording(cls, 1000 + seed) for seed in range(20)]
    return train, test


def test_01_per_layer_flop_coefficients():
    t0 = time.perf_counter()
    # recover the polynomial coefficients from evaluations alone
    quad = (msa_flops(2, PAPER) - 2 * msa_flops(1, PAPER)) // 2
    lin = msa_flops(1, PAPER) - quad
    per_token = mlp_flops(1, PAPER)
    assert msa_flops(0, PAPER) == 0
    assert (quad, lin, per_token) == (3108, 4_718_592, 9_437_184)
    _report("criterion 1 (flop coefficients)", 1.0, t0,
            f"msa={quad}n^2+{lin}n mlp={per_token}n")


def test_02_crossover_length():
    t0 = time.perf_counter()
    x = crossover_n(PAPER)
    assert x == 1519
    for n in range(1, x):
        assert mlp_flops(n, PAPER) > msa_flops(n, PAPER), n
    assert msa_flops(x, PAPER) > mlp_flops(x, PAPER)
    _report("criterion 2 (attention/MLP crossover)", 1.0, t0,
            f"crossover_n={x}, MLP dominates on 1..{x - 1}")


def test_03_mac_reduction_at_half_the_patches():
    t0 = time.perf_counter()
    ratio = model_macs(90, PAPER) / model_macs(180, PAPER)
    assert abs(ratio - 0.4905) <= 0.0005
    _report("criterion 3 (MAC reduction)", 1.0, t0,
            f"macs(90)/macs(180)={ratio:.4f}")


def test_04_dense_mac_magnitude():
    t0 = time.perf_counter()
    macs_layers = model_macs(180, PAPER, "paper")
    macs_full = model_macs(180, PAPER, "full")
    assert 14.6e9 <= macs_layers <= 16.7e9
    assert macs_full > macs_layers
    _report("criterion 4 (dense MACs)", 1.0, t0,
            f"paper-mode={macs_layers / 1e9:.2f}G full-mode={macs_full / 1e9:.2f}G")


def test_05_cost_model_reconciles_with_instrumented_counts():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    params = init_params(TOY, seed=0)
    worst = {"msa": 0.0, "mlp": 0.0}
    for n in (1, 10, 50):
        counters = ComponentCounters()
        forward(_toy_patch_set(rng, n), params, TOY, counters=counters)
        errs = reconcile(cost_report(n, TOY, "paper"), counters)
        for key in worst:
            worst[key] = max(worst[key], errs[key])
            assert errs[key] < 0.01, (key, n, errs[key])
    _report("criterion 5 (analytic vs instrumented)", 10.0, t0,
            f"worst msa={worst['msa']:.4%} mlp={worst['mlp']:.4%}")


def test_06_voxel_mass_conservation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(200):
        rec = synth_recording(
            int(rng.integers(0, 3)), seed=i,
            width=int(rng.integers(32, 97)), height=int(rng.integers(32, 97)),
            duration_us=int(rng.integers(50_000, 300_000)),
            event_rate=float(rng.integers(2_000, 60_000)))
        grid = ev.build_voxel_grid(rec, int(rng.integers(2, 10)))
        err = abs(grid.sum() - float(rec.events["p"].astype(np.int64).sum()))
        worst = max(worst, err)
        assert err < 1e-6
    _report("criterion 6 (voxel mass conservation)", 10.0, t0,
            f"200 recordings, worst |mass - sum p|={worst:.2e}")


def test_07_gradients_match_finite_differences():
    t0 = time.perf_counter()
    h = 1e-5
    rng = np.random.default_rng(2)
    worst = 0.0

    def check(got, f, x):
        nonlocal worst
        err = max_rel_error(got, finite_diff_grad(f, x.copy(), h=h),
                            floor=1e-6)
        worst = max(worst, err)
        assert err < 1e-4

    # each backward op on its own
    a = rng.normal(size=(3, 5))
    b = rng.normal(size=(5, 4))
    d = rng.normal(size=(3, 4))
    da, db = matmul_bwd(d, a, b)
    check(da, lambda v: float((matmul(v, b) * d).sum()), a)
    check(db, lambda v: float((matmul(a, v) * d).sum()), b)

    x = rng.normal(size=(4, 8))
    gain = rng.normal(size=8)
    bias = rng.normal(size=8)
    d = rng.normal(size=(4, 8))
    _, cache = layer_norm_fwd(x, gain, bias)
    dx, dg, db = layer_norm_bwd(d, cache)
    check(dx, lambda v: float((layer_norm(v, gain, bias) * d).sum()), x)
    check(dg, lambda v: float((layer_norm(x, v, bias) * d).sum()), gain)
    check(db, lambda v: float((layer_norm(x, gain, v) * d).sum()), bias)

    x = rng.normal(size=(3, 7))
    d = rng.normal(size=(3, 7))
    check(gelu_bwd(d, x), lambda v: float((gelu(v) * d).sum()), x)

    x = rng.normal(size=(3, 6))
    d = rng.normal(size=(3, 6))
    check(softmax_rows_bwd(d, softmax_rows(x)),
          lambda v: float((softmax_rows(v) * d).sum()), x)

    logits = rng.normal(size=5)
    _, grad = cross_entropy(logits, 2)
    check(grad, lambda v: cross_entropy(v, 2)[0], logits)

    # full model backward on the toy config; large tensors are probed on
    # a seeded coordinate sample, small ones exhaustively
    params = init_params(TOY, seed=3)
    ps = _toy_patch_set(rng, 6)
    target = 1
    _, _, grads = loss_and_gradients(ps, target, params, TOY)
    grad_map = dict(grads.named_tensors())
    for name, tensor in params.named_tensors():
        flat = tensor.reshape(-1)
        if flat.size <= 256:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=96, replace=False)
        gflat = grad_map[name].reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            up = cross_entropy(forward(ps, params, TOY), target)[0]
            flat[idx] = orig - h
            down = cross_entropy(forward(ps, params, TOY), target)[0]
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            err = abs(gflat[idx] - fd) / max(abs(fd), 1e-6)
            worst = max(worst, err)
            assert err < 1e-4, (name, int(idx))
    _report("criterion 7 (gradient checks)", 60.0, t0,
            f"max rel error={worst:.2e}")


def test_08_sparse_dense_equivalence_and_permutation_invariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    params = init_params(TOY, seed=4)
    pg = PatchGrid.for_frame(TOY.frame_height, TOY.frame_width, TOY.channels,
                             TOY.patch_size)
    worst_eq = 0.0
    for _ in range(20):
        frame = rng.normal(size=(TOY.frame_height, TOY.frame_width,
                                 TOY.channels))
        frame[rng.random(frame.shape) < 0.7] = 0.0
        sparse = forward(select_active(frame, 0.0, TOY.patch_size),
                         params, TOY)
        dense_ps = PatchSet(flatten_patches(frame, TOY.patch_size),
                            np.arange(pg.n_slots, dtype=np.int64), pg)
        dense = forward(dense_ps, params, TOY)
        worst_eq = max(worst_eq, float(np.abs(sparse - dense).max()))
        assert worst_eq < 1e-12

    class Unordered:
        def __init__(self, vectors, positions):
            self.vectors = vectors
            self.positions = positions
            self.n = len(positions)

    worst_perm = 0.0
    for _ in range(20):
        ps = _toy_patch_set(rng, int(rng.integers(2, 30)))
        base = forward(ps, params, TOY)
        perm = rng.permutation(ps.n)
        shuffled = forward(Unordered(ps.vectors[perm], ps.positions[perm]),
                           params, TOY)
        worst_perm = max(worst_perm, float(np.abs(shuffled - base).max()))
        assert worst_perm < 1e-9
    _report("criterion 8 (sparse/dense equivalence)", 10.0, t0,
            f"max dense gap={worst_eq:.1e} max permutation gap={worst_perm:.1e}")


def test_09_toy_training_and_mixed_threshold_robustness():
    t0 = time.perf_counter()
    train_recs, test_recs = _synth_corpus()
    train_set = prepare_dataset(train_recs, TOY)
    test_set = prepare_dataset(test_recs, TOY)

    dense_cfg = TrainConfig(epochs=50, lr=1e-3, threshold_mode="fixed",
                            threshold=0.0, clip_norm=1.0, seed=1)
    dense_params = init_params(TOY, seed=1)
    fit(dense_params, train_set, TOY, dense_cfg)
    dense_train = evaluate(dense_params, train_set, TOY, 0.0).accuracy
    dense_test = evaluate(dense_params, test_set, TOY, 0.0).accuracy
    assert dense_train >= 0.90
    assert dense_test >= 0.70

    mixed_cfg = TrainConfig(epochs=50, lr=1e-3, threshold_mode="mixed",
                            clip_norm=1.0, seed=1)
    mixed_params = init_params(TOY, seed=1)
    fit(mixed_params, train_set, TOY, mixed_cfg)
    mixed_test = evaluate(mixed_params, test_set, TOY, 0.35).accuracy
    assert mixed_test >= dense_test - 0.05
    _report("criterion 9 (toy training)", 600.0, t0,
            f"dense train={dense_train:.3f} test={dense_test:.3f} "
            f"mixed@0.35={mixed_test:.3f}")


def _bench_recording(seed):
    """Frame-sized recording with events in exactly half the patch slots."""
    rng = np.random.default_rng(seed)
    slots = rng.choice(180, size=90, replace=False)
    rows, cols = np.divmod(slots, 15)
    per_px = 3
    ys, xs = [], []
    for r, c in zip(rows, cols):
        yy, xx = np.meshgrid(np.arange(16) + 16 * r, np.arange(16) + 16 * c,
                             indexing="ij")
        ys.append(np.repeat(yy.ravel(), per_px))
        xs.append(np.repeat(xx.ravel(), per_px))
    ys = np.concatenate(ys)
    xs = np.concatenate(xs)
    n = len(xs)
    order = rng.permutation(n)  # decouple pixel order from time order
    arr = np.empty(n, dtype=EVENT_DTYPE)
    arr["x"] = xs[order]
    arr["y"] = ys[order]
    arr["t"] = np.sort(rng.integers(0, 100_000, n).astype(np.uint64))
    arr["p"] = rng.choice(np.array([-1, 1], dtype=np.int8), n)
    return EventRecording(arr, 240, 192)


def test_10_sparse_throughput_beats_dense():
    t0 = time.perf_counter()
    recordings = [_bench_recording(s) for s in range(4)]
    fractions = []
    for rec in recordings:
        frame = preprocess_recording(rec, PAPER)
        ratios = active_counts(frame, 16).reshape(-1) / PAPER.patch_dim
        fractions.append(float((ratios >= 0.35).mean()))
    mean_fraction = float(np.mean(fractions))
    assert abs(mean_fraction - 0.5) < 0.05

    params = init_params(PAPER, seed=0)
    sparse, dense, speedup = benchmark_speedup(params, PAPER, recordings,
                                               0.35, repeats=2)
    assert speedup >= 1.3
    _report("criterion 10 (throughput)", 300.0, t0,
            f"active fraction={mean_fraction:.3f} "
            f"fps {sparse.frames_per_second:.2f} vs "
            f"{dense.frames_per_second:.2f} speedup={speedup:.2f}x")


def test_11_selection_is_monotone_in_threshold():
    t0 = time.perf_counter()
    train_recs, test_recs = _synth_corpus()
    thresholds = [round(0.05 * i, 2) for i in range(15)]  # 0.0 .. 0.7
    for rec in train_recs + test_recs:
        frame = preprocess_recording(rec, TOY)
        ratios = active_counts(frame, TOY.patch_size).reshape(-1) \
            / TOY.patch_dim
        counts = [int((ratios >= t).sum()) for t in thresholds]
        assert all(a >= b for a, b in zip(counts, counts[1:])), counts
    _report("criterion 11 (selection monotonicity)", 10.0, t0,
            f"{len(train_recs) + len(test_recs)} recordings x "
            f"{len(thresholds)} thresholds")


def test_12_format_round_trips_are_bit_exact():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    for _ in range(100):
        rec = make_recording(rng, max_events=300)
        blob = write_binary(rec)
        back = read_binary(blob)
        assert back == rec
        assert write_binary(back) == blob

    for trial in range(100):
        p = int(rng.integers(1, 5))
        dh = int(rng.integers(1, 9))
        k = int(rng.integers(1, 5))
        cfg = ViTConfig(
            patch_size=p, channels=int(rng.integers(1, 4)),
            embed_dim=k * dh, head_dim=dh, num_heads=k,
            num_layers=int(rng.integers(1, 4)),
            mlp_dim=int(rng.integers(1, 33)),
            frame_height=p * int(rng.integers(1, 5)),
            frame_width=p * int(rng.integers(1, 5)),
            num_classes=int(rng.integers(1, 6)))
        params = init_params(cfg, seed=trial)
        blob = save_checkpoint(params, cfg)
        loaded, cfg2 = load_checkpoint(blob)
        assert cfg2 == cfg
        assert save_checkpoint(loaded, cfg2) == blob
        for (na, ta), (_, tb) in zip(params.named_tensors(),
                                     loaded.named_tensors()):
            assert np.array_equal(ta, tb), na
    _report("criterion 12 (format round trips)", 10.0, t0,
            "100 event-file and 100 checkpoint trials")
