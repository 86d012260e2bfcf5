"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL
line per criterion.  Criteria cover: the finite-difference gradient suite,
naive-oracle equivalence on 1000 random inputs, closed-form spot checks,
the planted-retrieval experiments (equal and skewed), the eight-variant
ablation switchboard, bit-exact end-to-end determinism, and the invariant
suite.
"""

import contextlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from cirfuse.cli import main
from cirfuse.combiner import (
    WhcParams,
    combiner_backward,
    combiner_forward,
    init_combiner,
    init_whc,
    whc_backward,
    whc_forward,
)
from cirfuse.core import InstanceSet, PatchSet, minmax_normalize
from cirfuse.evaluation import evaluate, rank, recall_at_k
from cirfuse.manifest import load_dataset
from cirfuse.selection import ivrs_select, pvrs_select
from cirfuse.synth import synth_dataset
from cirfuse.training import (
    ABLATION_GRID,
    AblationVariant,
    RunConfig,
    batch_loss,
    dataset_mean_loss,
    train,
)

import oracles

GRAD_STEP = 1e-5
GRAD_TOL = 1e-6
ORACLE_TOL = 1e-12


@contextlib.contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL: {name}")
        raise
    print(f"ACCEPTANCE PASS: {name}")


def fd(loss_fn, arr, step=GRAD_STEP):
    grad = np.zeros_like(arr)
    for index in np.ndindex(arr.shape):
        orig = arr[index]
        arr[index] = orig + step
        up = loss_fn()
        arr[index] = orig - step
        down = loss_fn()
        arr[index] = orig
        grad[index] = (up - down) / (2.0 * step)
    return grad


def assert_grad(analytic, numeric):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    assert np.abs(analytic - numeric).max(initial=0.0) / scale <= GRAD_TOL
    np.testing.assert_allclose(analytic, numeric, rtol=GRAD_TOL, atol=1e-8)


@pytest.fixture(scope="module")
def planted(tmp_path_factory):
    """The two full-size planted fixtures, generated once."""
    root = tmp_path_factory.mktemp("planted")
    times = {}
    for plant in ("equal", "skewed"):
        started = time.perf_counter()
        synth_dataset(
            seed=124, dim=64, n_train=256, n_eval=64, gallery_extra=64,
            n_patches=8, n_instances=4, noise_sigma=0.05, plant=plant,
            out_dir=root / plant,
        )
        times[plant] = time.perf_counter() - started
    return root, times


def test_gradient_suite():
    with criterion(
        "gradient suite: combiner/WHC/loss vs central finite differences, "
        f"rel err <= {GRAD_TOL}, < 10 s"
    ):
        started = time.perf_counter()
        combiner_configs = [(2, 4, 16), (3, 4, 16), (2, 8, 32), (3, 8, 32), (3, 16, 64)]
        for seed, (k, dim, hidden) in enumerate(combiner_configs, start=100):
            rng = np.random.default_rng(seed)
            params = init_combiner(seed, k, dim, hidden)
            live = [arr for _, arr in params.named_arrays()]
            inputs = [rng.standard_normal(dim) for _ in range(k)]
            target = rng.standard_normal(dim)

            def loss():
                out, _, _ = combiner_forward(params, inputs)
                return 0.5 * float(np.sum((out - target) ** 2))

            out, _, cache = combiner_forward(params, inputs)
            d_params, d_inputs = combiner_backward(params, cache, out - target)
            analytic = [arr for _, arr in d_params.named_arrays()] + d_inputs
            for arr, a in zip(live + inputs, analytic):
                assert_grad(a, fd(loss, arr))

        for seed, (dim, hidden) in ((200, (4, 16)), (201, (8, 32))):
            rng = np.random.default_rng(seed)
            whc = init_whc(seed, dim, hidden)
            live = [arr for _, arr in whc.named_arrays()]
            streams = [rng.standard_normal(dim) for _ in range(4)]
            target = rng.standard_normal(dim)

            def loss():
                q, _ = whc_forward(whc, *streams)
                return 0.5 * float(np.sum((q - target) ** 2))

            q, trace = whc_forward(whc, *streams)
            grads, d_streams = whc_backward(whc, trace, q - target)
            analytic = [arr for _, arr in grads.named_arrays()] + list(d_streams)
            for arr, a in zip(live + streams, analytic):
                assert_grad(a, fd(loss, arr))

        rng = np.random.default_rng(300)
        for tau in (1.0, 0.2):
            queries = rng.standard_normal((4, 16))
            targets = rng.standard_normal((4, 16))

            def loss():
                value, _ = batch_loss(queries, targets, tau)
                return value

            _, d_queries = batch_loss(queries, targets, tau)
            assert_grad(d_queries, fd(loss, queries))

        elapsed = time.perf_counter() - started
        assert elapsed < 10.0, f"gradient suite took {elapsed:.1f} s"


def test_formula_oracles():
    with criterion(
        f"formula oracles: selection/combiner/loss vs naive re-implementation, "
        f"1000 random inputs each, within {ORACLE_TOL}, < 30 s"
    ):
        started = time.perf_counter()
        rng = np.random.default_rng(4242)

        for _ in range(1000):
            n = int(rng.integers(1, 9))
            d = int(rng.integers(2, 17))
            patches = rng.standard_normal((n, d))
            cls = rng.standard_normal(d)
            r_rt = rng.standard_normal(d)
            r_dt = rng.standard_normal(d)
            got = pvrs_select(PatchSet(cls=cls, patches=patches), r_rt, r_dt)
            want = oracles.pvrs_select(patches.tolist(), cls.tolist(), r_rt.tolist(), r_dt.tolist())
            np.testing.assert_allclose(got, want, atol=ORACLE_TOL)

        for _ in range(1000):
            m = int(rng.integers(1, 9))
            d = int(rng.integers(2, 17))
            inst = rng.standard_normal((m, d))
            r_rt = rng.standard_normal(d)
            r_dt = rng.standard_normal(d)
            got = ivrs_select(InstanceSet(inst), r_rt, r_dt)
            want = oracles.ivrs_select(inst.tolist(), r_rt.tolist(), r_dt.tolist())
            np.testing.assert_allclose(got, want, atol=ORACLE_TOL)

        for i in range(1000):
            k = int(rng.integers(1, 4))
            d = int(rng.integers(2, 9))
            h = int(rng.integers(1, 17))
            params = init_combiner(i, k, d, h)
            inputs = [rng.standard_normal(d) for _ in range(k)]
            got, got_betas, _ = combiner_forward(params, inputs)
            want, want_betas = oracles.combiner_forward(
                [p.tolist() for p in params.projections],
                params.trunk_weights.tolist(),
                params.trunk_bias.tolist(),
                params.attn_head_weights.tolist(),
                params.attn_head_bias.tolist(),
                params.res_head_weights.tolist(),
                params.res_head_bias.tolist(),
                [x.tolist() for x in inputs],
            )
            np.testing.assert_allclose(got, want, atol=ORACLE_TOL)
            np.testing.assert_allclose(got_betas, want_betas, atol=ORACLE_TOL)

        for _ in range(1000):
            b = int(rng.integers(1, 7))
            d = int(rng.integers(2, 9))
            q = rng.standard_normal((b, d))
            h = rng.standard_normal((b, d))
            tau = float(rng.uniform(0.05, 5.0))
            got, _ = batch_loss(q, h, tau)
            want = oracles.batch_loss(q.tolist(), h.tolist(), tau)
            assert abs(got - want) <= ORACLE_TOL

        elapsed = time.perf_counter() - started
        assert elapsed < 30.0, f"oracle suite took {elapsed:.1f} s"


def test_closed_form_spot_checks():
    with criterion(
        "closed-form spot checks: patch select (0.75, 0.25); instance select "
        "(0.5, -0.5); two-sample loss 0.313262 +/- 1e-6"
    ):
        ps = PatchSet(cls=[1, 1], patches=[[1, 0], [0, 1]])
        np.testing.assert_allclose(pvrs_select(ps, [1, 0], [0, 1]), [0.75, 0.25], atol=1e-12)
        inst = InstanceSet([[1, 0], [0, 1]])
        np.testing.assert_allclose(ivrs_select(inst, [1, 0], [0, 1]), [0.5, -0.5], atol=1e-12)
        q = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, _ = batch_loss(q, q, 1.0)
        assert loss == pytest.approx(0.313262, abs=1e-6)


def test_planted_equal_zero_mlp_recall(planted):
    with criterion(
        "planted 'equal' fixture (D=64, N=8, M=4, sigma=0.05, 256/64/64, seed 124): "
        "zero-MLP Recall@1 >= 0.95 before training, < 30 s"
    ):
        root, synth_times = planted
        started = time.perf_counter()
        bundle = load_dataset(root / "equal")
        config = RunConfig(seed=124).resolved(bundle.dim)
        report = evaluate(
            bundle.split("val"), list(bundle.gallery), None, config, zero_mlp=True
        )
        elapsed = synth_times["equal"] + (time.perf_counter() - started)
        assert report.recalls[1] >= 0.95, f"zero-MLP R@1 = {report.recalls[1]}"
        assert elapsed < 30.0, f"equal-fixture experiment took {elapsed:.1f} s"


def test_planted_skewed_training_separation(planted):
    with criterion(
        "planted 'skewed' fixture: trained WHC (<= 200 epochs, B=16, lr 1e-4) reaches "
        "Recall@1 >= 0.90 and strictly beats the frozen sum baseline's loss, < 2 min"
    ):
        root, synth_times = planted
        started = time.perf_counter()
        bundle = load_dataset(root / "skewed")
        train_split = bundle.split("train")
        gallery = list(bundle.gallery)

        config = RunConfig(
            tau=1.0, batch_size=16, epochs=200, learning_rate=1e-4, seed=124, hidden=8
        ).resolved(bundle.dim)
        params, log = train(train_split, gallery, config)

        sum_config = RunConfig(
            tau=1.0, batch_size=16, variant=AblationVariant(fusion="sum")
        ).resolved(bundle.dim)
        baseline_loss = dataset_mean_loss(train_split, gallery, sum_config)
        trained_loss = dataset_mean_loss(train_split, gallery, config, params=params)
        report = evaluate(bundle.split("val"), gallery, params, config)

        elapsed = synth_times["skewed"] + (time.perf_counter() - started)
        assert report.recalls[1] >= 0.90, f"trained R@1 = {report.recalls[1]}"
        assert trained_loss < baseline_loss, (
            f"trained loss {trained_loss:.4f} not below sum baseline {baseline_loss:.4f}"
        )
        assert elapsed < 120.0, f"skewed experiment took {elapsed:.1f} s"


def test_ablation_switchboard(tmp_path, capsys):
    with criterion(
        "ablation switchboard: all eight variant configurations run end-to-end "
        "and emit distinct config echoes"
    ):
        data = tmp_path / "data"
        assert main(
            ["synth", "--out", str(data), "--seed", "124", "--dim", "16",
             "--train-n", "32", "--eval-n", "8", "--gallery-extra", "8",
             "--patches", "4", "--instances", "2"]
        ) == 0
        capsys.readouterr()

        echoes = []
        for i, variant in enumerate(ABLATION_GRID):
            config_path = tmp_path / f"variant{i}.json"
            config_path.write_text(json.dumps({
                "epochs": 1, "batch_size": 8, "tau": 1.0,
                "variant": variant.to_json_dict(),
            }))
            model_path = tmp_path / f"variant{i}.mvsp"
            assert main(
                ["train", "--data", str(data), "--config", str(config_path),
                 "--out-model", str(model_path)]
            ) == 0
            err = capsys.readouterr().err
            echo = [line for line in err.splitlines() if line.startswith("config:")]
            assert echo, "train run did not echo its config"
            echoes.append(echo[0])
            assert main(
                ["eval", "--data", str(data), "--model", str(model_path),
                 "--split", "val", "--k", "1,5"]
            ) == 0
            capsys.readouterr()
        assert len(set(echoes)) == 8, "config echoes were not distinct"


def test_end_to_end_determinism(tmp_path, capsys):
    with criterion(
        "determinism: two full synth -> train -> eval runs with seed 124 produce "
        "bit-identical model packs and reports"
    ):
        artifacts = []
        for run_name in ("one", "two"):
            base = tmp_path / run_name
            data = base / "data"
            assert main(
                ["synth", "--out", str(data), "--seed", "124", "--dim", "16",
                 "--train-n", "32", "--eval-n", "16", "--gallery-extra", "8",
                 "--patches", "4", "--instances", "2", "--plant", "skewed"]
            ) == 0
            config_path = base / "config.json"
            config_path.write_text(json.dumps({"epochs": 3, "batch_size": 8,
                                               "tau": 1.0, "seed": 124}))
            model_path = base / "model.mvsp"
            assert main(
                ["train", "--data", str(data), "--config", str(config_path),
                 "--out-model", str(model_path), "--log", str(base / "log.jsonl")]
            ) == 0
            report_path = base / "report.json"
            assert main(
                ["eval", "--data", str(data), "--model", str(model_path),
                 "--split", "val", "--k", "1,5,10,50", "--out", str(report_path)]
            ) == 0
            capsys.readouterr()
            artifacts.append(
                (model_path.read_bytes(), report_path.read_bytes(),
                 (base / "log.jsonl").read_bytes())
            )
        assert artifacts[0][0] == artifacts[1][0], "model packs differ"
        assert artifacts[0][1] == artifacts[1][1], "reports differ"
        assert artifacts[0][2] == artifacts[1][2], "training logs differ"


def test_invariant_suite():
    with criterion(
        "invariant suite: beta simplex, recall monotonicity, tau-invariant rankings, "
        "permutation invariances, guidance-swap antisymmetry, degenerate min-max"
    ):
        rng = np.random.default_rng(777)

        # Beta simplex across random combiners.
        for i in range(50):
            k = int(rng.integers(1, 4))
            dim = int(rng.integers(2, 9))
            params = init_combiner(i, k, dim, 4 * dim)
            _, betas, _ = combiner_forward(params, [rng.standard_normal(dim) for _ in range(k)])
            assert np.all(betas >= 0) and abs(betas.sum() - 1.0) <= 1e-12

        # Recall monotone in K; recall at gallery size is 1.
        gallery_ids = [f"g{i}" for i in range(12)]
        from cirfuse.evaluation import RankedResult

        results = []
        truth = {}
        for i in range(40):
            order = rng.permutation(gallery_ids)
            results.append(RankedResult(
                query_id=f"q{i}", ordered_gallery_ids=tuple(order),
                scores=tuple(float(12 - j) for j in range(12)),
            ))
            truth[f"q{i}"] = "g3"
        report = recall_at_k(results, truth, ks=[1, 2, 5, 12])
        values = [report.recalls[k] for k in sorted(report.recalls)]
        assert values == sorted(values)
        assert report.recalls[12] == 1.0

        # tau never enters ranking.
        from test_training import make_dataset

        samples, gallery = make_dataset(seed=9, n=10, dim=6)
        reports = [
            evaluate(samples, gallery, None, RunConfig(tau=tau, dim=6, hidden=8), zero_mlp=True)
            for tau in (0.01, 0.1, 1.0, 10.0)
        ]
        assert all(r == reports[0] for r in reports)

        # Permutation invariances: patches, instances, and batch order.
        patches = rng.standard_normal((6, 5))
        cls = rng.standard_normal(5)
        r_rt, r_dt = rng.standard_normal(5), rng.standard_normal(5)
        perm = rng.permutation(6)
        np.testing.assert_allclose(
            pvrs_select(PatchSet(cls=cls, patches=patches), r_rt, r_dt),
            pvrs_select(PatchSet(cls=cls, patches=patches[perm]), r_rt, r_dt),
            rtol=1e-12, atol=1e-14,
        )
        inst = rng.standard_normal((5, 5))
        iperm = rng.permutation(5)
        np.testing.assert_allclose(
            ivrs_select(InstanceSet(inst), r_rt, r_dt),
            ivrs_select(InstanceSet(inst[iperm]), r_rt, r_dt),
            rtol=1e-12, atol=1e-14,
        )
        q = rng.standard_normal((5, 4))
        h = rng.standard_normal((5, 4))
        loss_a, _ = batch_loss(q, h, 0.7)
        bperm = rng.permutation(5)
        loss_b, _ = batch_loss(q[bperm], h[bperm], 0.7)
        assert abs(loss_a - loss_b) <= 1e-12

        # Guidance-swap antisymmetry: weighted halves cancel against cls.
        for _ in range(25):
            patches = rng.standard_normal((4, 6))
            cls = rng.standard_normal(6)
            u, v = rng.standard_normal(6), rng.standard_normal(6)
            ps = PatchSet(cls=cls, patches=patches)
            np.testing.assert_allclose(
                pvrs_select(ps, u, v) + pvrs_select(ps, v, u), cls,
                rtol=1e-12, atol=1e-13,
            )

        # Degenerate min-max rule.
        np.testing.assert_array_equal(minmax_normalize([4.0, 4.0, 4.0]), [0.5, 0.5, 0.5])
        np.testing.assert_array_equal(minmax_normalize([8.25]), [0.5])
