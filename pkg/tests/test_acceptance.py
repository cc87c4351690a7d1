"""Acceptance gate: each criterion runs at its stated tolerance and prints
one PASS/FAIL line. Run with ``pytest tests/test_acceptance.py -v -s``."""

import itertools
import time

import numpy as np

from objsim.clustering import adjusted_rand_index, kmeans
from objsim.config import load_config
from objsim.features import Embedding, EmbeddingSource, PatchMask, cosine, ffa_crop_feat
from objsim.fusion import ReidRecord, ReidSet, alpha_sweep, evaluate_cmc, fuse
from objsim.inference import PatchFeatureGrid
from objsim.protocol import (
    GROUP_SIZE,
    GROUPS_PER_PAIR,
    Protocol,
    average_precision,
    build_groups,
    eval_group,
    retrieval_eval,
)
from objsim.runner import FeatureStore, evaluate_catalog, run_benchmark
from objsim.ssim import DATA_RANGE, K1, ssim

from conftest import synthetic_catalog, write_wild_dataset
from test_clustering import brute_force_ari
from test_protocol import brute_force_ap


def _report(name: str, passed: bool) -> None:
    print(f"ACCEPTANCE {'PASS' if passed else 'FAIL'}: {name}", flush=True)
    assert passed, name


def test_ap_oracle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for n in range(1, 9):
        for bits in itertools.product([False, True], repeat=n):
            if not any(bits):
                continue
            worst = max(worst, abs(average_precision(bits) - brute_force_ap(bits)))
    elapsed = time.perf_counter() - start
    _report(
        f"AP oracle equivalence (max dev {worst:.2e}, {elapsed:.2f}s)",
        worst <= 1e-12 and elapsed < 1.0,
    )


def test_ari_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 13))
        pred = rng.integers(0, 4, n)
        truth = rng.integers(0, 4, n)
        worst = max(
            worst, abs(adjusted_rand_index(pred, truth) - brute_force_ari(pred, truth))
        )
    hand = adjusted_rand_index([0, 0, 1, 1, 1, 1], [0, 0, 0, 1, 1, 1])
    hand_ok = abs(hand - (4 - 2.8) / (6.5 - 2.8)) <= 1e-9
    elapsed = time.perf_counter() - start
    _report(
        f"ARI oracle equivalence (max dev {worst:.2e}, hand case {hand:.5f}, {elapsed:.2f}s)",
        worst <= 1e-9 and hand_ok and elapsed < 5.0,
    )


def test_group_construction_counts():
    catalog = synthetic_catalog(categories=("pair_a", "pair_b", "pair_c"))
    ok = True
    for protocol in Protocol:
        groups = build_groups(catalog, protocol)
        ok = ok and len(groups) == 3 * GROUPS_PER_PAIR[protocol]
        ok = ok and all(len(g.members) == GROUP_SIZE[protocol] for g in groups)
    _report("group construction counts (24/4/1/1 x 8/48/8/200)", ok)


def _monotone_transforms(rng):
    def affine(a, b):
        return lambda x: a * x + b

    makers = [
        lambda: affine(float(rng.uniform(0.1, 10.0)), float(rng.uniform(-5.0, 5.0))),
        lambda: (lambda x: np.exp(x)),
        lambda: (lambda x: x**3),
        lambda: (lambda x: np.arctan(x)),
        lambda: (lambda x: x / (1.0 + abs(x))),
    ]
    return makers[int(rng.integers(len(makers)))]()


def test_rank_invariance():
    rng = np.random.default_rng(1)
    categories = tuple(f"g{i:03d}" for i in range(100))
    catalog = synthetic_catalog(categories=categories, studio=False)
    groups = build_groups(catalog, Protocol.WILD)
    assert len(groups) == 100
    tables = []
    for group in groups:
        refs = group.refs
        tables.append(
            {(q, c): float(rng.uniform(0.0, 1.0)) for q in refs for c in refs if q != c}
        )
    baselines = [
        eval_group(g, lambda a, b, t=t: t[(a, b)]) for g, t in zip(groups, tables)
    ]
    ok = True
    for _ in range(20):
        transform = _monotone_transforms(rng)
        for group, table, base in zip(groups, tables, baselines):
            warped = {k: float(transform(v)) for k, v in table.items()}
            out = eval_group(group, lambda a, b, t=warped: t[(a, b)])
            ok = ok and out.aps == base.aps and out.top1_hits == base.top1_hits
        if not ok:
            break
    _report("rank invariance under 20 increasing transforms x 100 groups", ok)


def test_ffa_kernel():
    rng = np.random.default_rng(2)
    grid = PatchFeatureGrid(rng.standard_normal((24, 24, 32)).astype(np.float32))
    full = PatchMask(np.ones((24, 24), dtype=np.bool_))
    pooled = ffa_crop_feat(grid, full).v
    plain = grid.grid.reshape(576, 32).mean(axis=0)
    mean_ok = np.abs(pooled - plain).max() <= 1e-6

    bits = np.zeros((24, 24), dtype=np.bool_)
    bits[7, 11] = True
    single = ffa_crop_feat(grid, PatchMask(bits)).v
    single_ok = np.array_equal(single, grid.grid[7, 11])

    worst = 0.0
    for _ in range(1000):
        a = rng.standard_normal(24)
        b = rng.standard_normal(24)
        sa = float(rng.uniform(1e-3, 1e3))
        sb = float(rng.uniform(1e-3, 1e3))
        worst = max(worst, abs(cosine(a, b) - cosine(sa * a, sb * b)))
    _report(
        f"FFA kernel (mean-pool, single patch, cosine scale dev {worst:.2e})",
        mean_ok and single_ok and worst <= 1e-6,
    )


def test_ssim_criteria():
    rng = np.random.default_rng(3)
    self_ok = True
    for _ in range(5):
        x = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        self_ok = self_ok and abs(ssim(x, x) - 1.0) <= 1e-9
    c1_const = (K1 * DATA_RANGE) ** 2
    worst = 0.0
    for _ in range(100):
        a, b = rng.uniform(1.0, 254.0, size=2)
        expected = (2.0 * a * b + c1_const) / (a * a + b * b + c1_const)
        got = ssim(np.full((48, 48), a), np.full((48, 48), b))
        worst = max(worst, abs(got - expected))
    _report(
        f"SSIM identity and constant closed form (max dev {worst:.2e})",
        self_ok and worst <= 1e-6,
    )


def test_monte_carlo_retrieval_sanity():
    rng = np.random.default_rng(4)
    categories = tuple(f"mc{i:04d}" for i in range(1250))
    catalog = synthetic_catalog(categories=categories, studio=False)
    store = FeatureStore()
    for ref in catalog.records:
        store.embeddings[ref] = Embedding(
            rng.standard_normal(16).astype(np.float32), EmbeddingSource.CROP_FEAT
        )
    config = load_config(None, {"protocols": ["wild"]})
    report = evaluate_catalog(catalog, store, config)
    retrieval = report["protocols"]["wild"]["retrieval"]
    baseline = 3.0 / 7.0  # positives per candidate pool in an 8-member group
    deviation = abs(retrieval["top1"] - baseline)
    _report(
        f"Monte Carlo wild retrieval ({retrieval['query_count']} queries, "
        f"top1 {retrieval['top1']:.4f} vs {baseline:.4f})",
        retrieval["query_count"] >= 10000 and deviation <= 0.05,
    )


def test_fusion_identities():
    rng = np.random.default_rng(5)
    dm = rng.random((6, 9)).astype(np.float32)
    ds = rng.random((6, 9)).astype(np.float32)
    identity_ok = (
        fuse(dm, ds, 1.0).tobytes() == dm.tobytes()
        and fuse(dm, ds, 0.0).tobytes() == ds.tobytes()
    )

    q_ids = list(rng.integers(1, 4, 6))
    g_ids = list(rng.integers(1, 4, 9))
    reid = ReidSet(
        tuple(ReidRecord(f"q{i}", v) for i, v in enumerate(q_ids)),
        tuple(ReidRecord(f"g{i}", v) for i, v in enumerate(g_ids)),
    )
    base = evaluate_cmc(dm, reid, ks=(1, 5)).topk
    rescaled = evaluate_cmc(np.float32(2.5) * dm + np.float32(7.0), reid, ks=(1, 5)).topk
    affine_ok = base == rescaled

    sweep_tie = alpha_sweep(dm, dm.copy(), reid)
    tie_ok = sweep_tie.best_alpha == 0.1
    member_ok = all(
        alpha_sweep(dm, ds, reid, grid=g).best_alpha in g
        for g in [(0.3, 0.6), (0.1, 0.5, 0.9)]
    )
    _report(
        "fusion identities (bit-exact endpoints, affine-invariant CMC, sweep tie-break)",
        identity_ok and affine_ok and tie_ok and member_ok,
    )


def test_end_to_end_determinism(engines, tmp_path):
    dataset = write_wild_dataset(tmp_path / "fixture16")
    tables = {}
    for jobs in (1, 8):
        out = tmp_path / f"out_jobs{jobs}"
        config = load_config(
            None,
            {
                "dataset_root": str(dataset),
                "backbone": str(engines["backbone"]),
                "segmentation": str(engines["segmentation"]),
                "variant": "crop_feat",
                "protocols": ["wild"],
                "out_dir": str(out),
                "seed": 1234,
                "jobs": jobs,
            },
        )
        run_benchmark(config)
        tables[jobs] = (out / "table.csv").read_bytes()
    _report(
        "end-to-end determinism (16-image fixture, 1 vs 8 workers, byte-identical table.csv)",
        tables[1] == tables[8] and len(tables[1]) > 0,
    )
