"""End-to-end acceptance criteria, one test per criterion.

The desk-scale training run (criterion 5) and its dataset are produced
through the real CLI commands and cached under .acceptance_cache; training
is bit-deterministic under its seed, so the cache is a pure time saver.
Delete the directory to retrain from scratch; the measured training time
is stored alongside the checkpoint when it is produced.

Run with `pytest -m acceptance -s` to see one PASS line per criterion.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from emdkit.approx import chamfer, chamfer_gradient, relative_lambda, sinkhorn, sinkhorn_gradient
from emdkit.cli import main as cli_main
from emdkit.core import Norm, PointCloud, SoftMatching, pairwise_cost, substream
from emdkit.datagen import DatasetConfig, build_dataset, load_records, random_shape_spec, sample_shape_cloud
from emdkit.evaluate import SinkhornOpts, run_eval
from emdkit.exact import brute_force, emd, emd_gradient, hungarian
from emdkit.metrics import bench
from emdkit.nn.models import DeepEmdConfig, MlpConfig, estimate_distance, predict_matching, surrogate_gradient
from emdkit.nn.training import load_checkpoint

from conftest import finite_difference_field
from test_models import init_deepemd, init_mlp, model_gradient_check

pytestmark = pytest.mark.acceptance

SEED = 2024
CACHE = Path(__file__).resolve().parent.parent / ".acceptance_cache"

# desk-scale training configuration exercised by criterion 5
TRAIN_PAIRS = 2000
VAL_PAIRS = 200
N_POINTS = 64
EPOCHS = 45
BATCH = 25
ARCH = ("--layers", "4", "--heads", "4", "--dmodel", "64")


def report(num: int, text: str):
    print(f"\n[ACCEPTANCE #{num}] PASS: {text}")


def run_cli(*argv):
    code = cli_main([str(a) for a in argv])
    assert code == 0, f"cli {argv} exited {code}"


@pytest.fixture(scope="session")
def desk_dataset():
    out = CACHE / "data"
    if not (out / "manifest.json").exists():
        run_cli(
            "gen", "--out", out, "--pairs", TRAIN_PAIRS, "--val-pairs", VAL_PAIRS,
            "--points", N_POINTS, "--seed", SEED,
        )
    return out


@pytest.fixture(scope="session")
def desk_model(desk_dataset):
    out = CACHE / "train"
    sidecar = out / "train_time.json"
    if not sidecar.exists():
        wall0 = time.perf_counter()
        cpu0 = time.process_time()
        run_cli(
            "train", "--data", desk_dataset, "--out", out, "--model", "deepemd",
            *ARCH, "--epochs", EPOCHS, "--batch", BATCH, "--seed", SEED,
        )
        sidecar.write_text(
            json.dumps(
                {
                    "wall_seconds": time.perf_counter() - wall0,
                    "cpu_seconds": time.process_time() - cpu0,
                }
            )
        )
    times = json.loads(sidecar.read_text())
    return {"ckpt": out / "checkpoint.json", "last": out / "last.json", "times": times}


@pytest.fixture(scope="session")
def desk_eval(desk_dataset, desk_model):
    records = load_records(desk_dataset / "val.jsonl")
    model, _, _ = load_checkpoint(desk_model["ckpt"])
    report_obj = run_eval(
        records,
        ["exact", "chamfer", "sinkhorn", "deepemd"],
        sinkhorn_opts=SinkhornOpts(iters=100, lam_mult=0.1),
        models={"deepemd": model},
    )
    # materialize the report files for the plotting component's tests
    from emdkit.metrics import write_cdf_csv, write_records_csv, write_summary_json

    out = CACHE / "eval"
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(
        out / "records.csv", [r for rs in report_obj.records.values() for r in rs]
    )
    write_summary_json(out / "summary.json", report_obj.summaries)
    write_cdf_csv(out / "cdf.csv", report_obj.cdfs)
    return {"records": records, "model": model, "report": report_obj}


def syn2d_cloud(rng, n=16):
    return sample_shape_cloud(random_shape_spec(rng), n, rng)


class TestCriterion1:
    def test_hungarian_equals_brute_force(self):
        rng = substream(SEED, "accept1")
        start = time.perf_counter()
        for _ in range(500):
            n = int(rng.integers(2, 8))
            c = rng.random((n, n))
            assert abs(hungarian(c).cost - brute_force(c).cost) <= 1e-9
        elapsed = time.perf_counter() - start
        assert elapsed < 10.0
        report(1, f"500 random matrices, exact agreement, {elapsed:.2f}s < 10s")


class TestCriterion2:
    def test_metric_axioms_on_syn2d(self):
        rng = substream(SEED, "accept2")
        worst_sym = 0.0
        worst_tri = -math.inf
        for _ in range(200):
            a, b, c = (syn2d_cloud(rng) for _ in range(3))
            dab = emd(a, b).distance
            dba = emd(b, a).distance
            worst_sym = max(worst_sym, abs(dab - dba))
            assert abs(dab - dba) <= 1e-9
            assert emd(a, a).distance == 0.0
            dbc = emd(b, c).distance
            dac = emd(a, c).distance
            worst_tri = max(worst_tri, dac - (dab + dbc))
            assert dac <= dab + dbc + 1e-9
        report(
            2,
            f"200 Syn2D triples: symmetry gap {worst_sym:.2e}, "
            f"triangle slack {worst_tri:.2e}",
        )


class TestCriterion3:
    errors: dict[str, float] = {}

    def test_a_emd_gradient_fd(self):
        rng = substream(SEED, "accept3a")
        anchors = np.array([[0, 0], [3, 0], [0, 3], [3, 3], [6, 0]], dtype=float)
        u = PointCloud(anchors)
        v = PointCloud(anchors + rng.normal(scale=0.05, size=anchors.shape))
        res = emd(u, v)
        fd = finite_difference_field(
            lambda pts: emd(u, PointCloud(pts)).distance, v.points
        )
        err = np.abs(emd_gradient(u, v, res.matching) - fd).max()
        assert err <= 1e-4
        self.errors["emd"] = err

    def test_b_chamfer_gradient_fd(self):
        rng = substream(SEED, "accept3b")
        u = PointCloud(rng.random((8, 2)))
        v = PointCloud(rng.random((8, 2)))
        worst = 0.0
        for norm in Norm:
            res = chamfer(u, v, norm)
            fd = finite_difference_field(
                lambda pts: chamfer(u, PointCloud(pts), norm).distance, v.points
            )
            worst = max(worst, np.abs(chamfer_gradient(u, v, res, norm) - fd).max())
        assert worst <= 1e-4
        self.errors["chamfer"] = worst

    def test_c_sinkhorn_gradient_fd(self):
        rng = substream(SEED, "accept3c")
        u = PointCloud(rng.random((8, 2)))
        v = PointCloud(rng.random((8, 2)))
        c = pairwise_cost(u, v)
        res = sinkhorn(c, lam=relative_lambda(c.c), max_iters=500)

        def frozen(pts):
            cc = np.linalg.norm(u.points[:, None, :] - pts[None, :, :], axis=2)
            return float((res.plan * cc).sum())

        fd = finite_difference_field(frozen, v.points)
        err = np.abs(sinkhorn_gradient(u, v, res) - fd).max()
        assert err <= 1e-4
        self.errors["sinkhorn"] = err

    def test_d_surrogate_gradient_fd(self):
        rng = substream(SEED, "accept3d")
        u = PointCloud(rng.random((8, 2)))
        v = PointCloud(rng.random((8, 2)))
        sm = SoftMatching(rng.integers(0, 8, 8), rng.integers(0, 8, 8))
        fd = finite_difference_field(
            lambda pts: estimate_distance(u, PointCloud(pts), sm), v.points
        )
        err = np.abs(surrogate_gradient(u, v, sm) - fd).max()
        assert err <= 1e-4
        self.errors["surrogate"] = err

    def test_e_model_parameter_gradients_fd(self):
        rng = np.random.default_rng(77)
        mlp = init_mlp()
        u = rng.random((2, 4, 2))
        v = rng.random((2, 4, 2))
        target = rng.random(2) + 0.5
        err_mlp = model_gradient_check(mlp, lambda: mlp.loss(mlp.forward(u, v), target))

        dem = init_deepemd()
        assign = np.stack([rng.permutation(4), rng.permutation(4)])
        err_dem = model_gradient_check(dem, lambda: dem.loss(dem.forward(u, v), assign))
        self.errors["params"] = max(err_mlp, err_dem)

    def test_f_report(self):
        assert set(self.errors) == {"emd", "chamfer", "sinkhorn", "surrogate", "params"}
        report(
            3,
            "finite differences agree: "
            + ", ".join(f"{k}={v:.2e}" for k, v in self.errors.items()),
        )


@pytest.fixture(scope="module")
def pairs64():
    splits, _ = build_dataset(
        DatasetConfig(n_points=64, counts={"e": 50}, seed=SEED + 4)
    )
    return splits["e"]


class TestCriterion4:

    def test_marginal_violation_after_convergence(self, pairs64):
        worst = 0.0
        for rec in pairs64:
            c = pairwise_cost(rec.pair.source, rec.pair.target)
            res = sinkhorn(c, lam=relative_lambda(c.c, 0.1), max_iters=20000, tol=1e-9)
            assert not res.failed, "unexpected numerical failure at lambda_rel=0.1"
            viol = max(
                np.abs(res.plan.sum(axis=1) - 1 / 64).max(),
                np.abs(res.plan.sum(axis=0) - 1 / 64).max(),
            )
            worst = max(worst, viol)
        assert worst <= 1e-6

    def test_accuracy_improves_with_iterations(self, pairs64):
        # direction check at lambda_rel=0.02 where the entropic bias is small
        # (at 0.1 the bias dominates and the direction reverses; see ledger)
        gaps = {10: [], 100: []}
        for rec in pairs64:
            c = pairwise_cost(rec.pair.source, rec.pair.target)
            lam = relative_lambda(c.c, 0.02)
            for iters in (10, 100):
                res = sinkhorn(c, lam=lam, max_iters=iters)
                if not res.failed:
                    gaps[iters].append(abs(res.emd_scale_distance() - rec.distance))
        med10 = float(np.median(gaps[10]))
        med100 = float(np.median(gaps[100]))
        assert med100 <= med10

    def test_failure_detection_fires_and_is_reported(self, pairs64):
        from emdkit.evaluate import evaluate_method

        evaluated, failures = evaluate_method(
            "sinkhorn", pairs64, sinkhorn_opts=SinkhornOpts(iters=100, lam_abs=1e-3)
        )
        assert failures > 0, "expected numerical failures at lambda=1e-3 absolute"
        assert len(evaluated) == len(pairs64) - failures
        report(
            4,
            f"marginals converge to <=1e-6; accuracy improves 10->100 iters; "
            f"{failures}/{len(pairs64)} failures detected at lambda=1e-3",
        )


class TestCriterion5:
    def test_desk_scale_training(self, desk_model, desk_eval):
        times = desk_model["times"]
        assert times["cpu_seconds"] <= 30 * 60, (
            f"training took {times['cpu_seconds']:.0f}s CPU, budget 1800s"
        )
        summaries = desk_eval["report"].summaries
        dem = summaries["deepemd"]
        sink = summaries["sinkhorn@100"]
        assert dem["r"] >= 0.97
        assert dem["rho"] >= 0.97
        assert dem["cs_0.5"] >= 0.95
        assert dem["accuracy"] > sink["accuracy"]
        report(
            5,
            f"trained in {times['cpu_seconds']:.0f}s CPU; r={dem['r']:.4f}, "
            f"rho={dem['rho']:.4f}, cs_0.5={dem['cs_0.5']:.4f}, "
            f"accuracy {dem['accuracy']:.1f} > sinkhorn {sink['accuracy']:.1f}",
        )


class TestCriterion6:
    def test_baseline_ordering_vs_chamfer(self, desk_eval):
        summaries = desk_eval["report"].summaries
        dem = summaries["deepemd"]
        cham = summaries["chamfer"]
        assert dem["re_0.9"] < cham["re_0.9"]
        assert dem["cs_0.1"] > cham["cs_0.1"]
        report(
            6,
            f"re_0.9 {dem['re_0.9']:.3f} < chamfer {cham['re_0.9']:.3f}; "
            f"cs_0.1 {dem['cs_0.1']:.3f} > chamfer {cham['cs_0.1']:.3f}",
        )


class TestCriterion7:
    def test_size_generalization(self, desk_model):
        model, _, _ = load_checkpoint(desk_model["ckpt"])
        rs = {}
        for n in (32, 128):
            splits, _ = build_dataset(
                DatasetConfig(n_points=n, counts={"e": 200}, seed=SEED + n)
            )
            rep = run_eval(splits["e"], ["deepemd"], models={"deepemd": model})
            rs[n] = rep.summaries["deepemd"]["r"]
            assert rs[n] >= 0.90, f"r={rs[n]} at n={n}"
        report(7, f"model trained at n=64 keeps r={rs[32]:.3f} (n=32), r={rs[128]:.3f} (n=128)")


class TestCriterion8:
    def test_complexity_scaling_and_speed(self, desk_model):
        model, _, _ = load_checkpoint(desk_model["ckpt"])

        def exact_fn(u, v):
            return hungarian(pairwise_cost(PointCloud(u), PointCloud(v))).cost

        def deepemd_fn(u, v):
            return model.fast_forward(u.astype(np.float32), v.astype(np.float32))

        Ns = [128, 256, 512, 1024]
        # 7 trials: the 4-point log-log fit is sensitive to scheduler noise
        # in the tens-of-milliseconds cells, and medians over 7 shrug off
        # transient slowdowns that medians over 3 do not
        samples, slopes = bench(
            {"exact": exact_fn, "deepemd": deepemd_fn}, Ns, trials=7, seed=SEED
        )
        from emdkit.metrics import write_timing_csv

        out = CACHE / "bench"
        out.mkdir(parents=True, exist_ok=True)
        write_timing_csv(out / "timing.csv", samples, slopes)
        assert 2.5 <= slopes["exact"] <= 3.5, slopes
        assert 1.5 <= slopes["deepemd"] <= 2.5, slopes
        t = {(s.method, s.n): s.seconds for s in samples}
        ratio = t[("exact", 1024)] / t[("deepemd", 1024)]
        assert ratio >= 10.0, f"only {ratio:.1f}x at N=1024"
        report(
            8,
            f"slopes exact={slopes['exact']:.2f}, deepemd={slopes['deepemd']:.2f}; "
            f"{ratio:.0f}x faster at N=1024",
        )


class TestCriterion9:
    def test_surrogate_descent_reduces_emd(self, desk_dataset, desk_model):
        model, _, _ = load_checkpoint(desk_model["ckpt"])
        records = load_records(desk_dataset / "val.jsonl")[:20]
        improved = 0
        for rec in records:
            u = rec.pair.source
            v = rec.pair.target
            initial = rec.distance
            for _ in range(100):
                a_t, a_b = model.fast_forward(u.points, v.points)
                sm = predict_matching(a_t, a_b)
                v = PointCloud(v.points - 1e-2 * surrogate_gradient(u, v, sm))
            if emd(u, v).distance < initial:
                improved += 1
        assert improved >= 18  # >= 90% of 20
        report(9, f"true EMD reduced on {improved}/20 held-out pairs after 100 steps")


class TestTrainedMatchingOnEasyPairs:
    """The trained desk model recovers the exact matching on easy pairs.

    Easy: well-separated (grid-spaced) points, the target a permuted copy
    plus a displacement far below the point spacing. Not a numbered
    criterion, but the strongest matching claim the desk model supports
    (verified exact at n<=16; at n=64 agreement drops to ~0.9)."""

    def test_bijective_and_equal_to_hungarian(self, desk_model):
        model, _, _ = load_checkpoint(desk_model["ckpt"])
        rng = substream(3141, "easy")
        for trial in range(10):
            grid = np.linspace(0.15, 0.85, 4)
            base = np.stack(np.meshgrid(grid, grid), -1).reshape(-1, 2)
            u = PointCloud(base + rng.normal(scale=0.01, size=base.shape))
            perm = rng.permutation(16)
            v = PointCloud(u.points[perm] + np.array([0.02, -0.015]))
            a_t, a_b = model.fast_forward(u.points, v.points)
            sm = predict_matching(a_t, a_b)
            gt = emd(u, v).matching
            assert sm.is_bijective()
            assert (sm.forward == gt.assign).all()
            assert (sm.backward == gt.inverse().assign).all()


class TestCriterion10:
    def test_cli_determinism(self, tmp_path):
        # the property is scale-independent; exercised at reduced scale
        gen_outs = []
        for name in ("g1", "g2"):
            out = tmp_path / name
            run_cli(
                "gen", "--out", out, "--pairs", 20, "--val-pairs", 8,
                "--points", 8, "--seed", 9,
            )
            gen_outs.append(out)
        for f in ("train.jsonl", "val.jsonl", "manifest.json"):
            assert (gen_outs[0] / f).read_bytes() == (gen_outs[1] / f).read_bytes()

        train_outs = []
        for name in ("t1", "t2"):
            out = tmp_path / name
            run_cli(
                "train", "--data", gen_outs[0], "--out", out, "--model", "deepemd",
                "--layers", 1, "--heads", 2, "--dmodel", 16,
                "--epochs", 2, "--batch", 8, "--seed", 9,
            )
            train_outs.append(out)
        for f in ("checkpoint.json", "last.json"):
            assert (train_outs[0] / f).read_bytes() == (train_outs[1] / f).read_bytes()

        eval_outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            run_cli(
                "eval", "--data", gen_outs[0], "--out", out,
                "--methods", "exact,chamfer,sinkhorn,deepemd",
                "--deepemd-ckpt", train_outs[0] / "checkpoint.json", "--seed", 9,
            )
            eval_outs.append(out)
        for f in ("records.csv", "summary.json", "cdf.csv"):
            assert (eval_outs[0] / f).read_bytes() == (eval_outs[1] / f).read_bytes()
        report(10, "gen/train/eval reruns byte-identical (wall-clock column excluded)")
