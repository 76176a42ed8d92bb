"""Acceptance suite. Each test prints exactly one PASS/FAIL line and then
asserts the criterion at its stated tolerance."""

import json
import time

import numpy as np
import pytest

from acceptance_log import report
from gradcheck import Stats, directional_error
from mvdistill import autodiff as ad
from mvdistill import cli
from mvdistill.identities import random_view_system, run_identities
from mvdistill.losses import PredictionBundle, mv2d_loss, total_objective, vcd_loss, vmd_loss, vsd_loss
from mvdistill.model import Model, ModelSpec, evaluate, forward
from mvdistill.oracle import expected_posterior_kl, mutual_info
from mvdistill.probe import plugin_info
from mvdistill.synth import DiscreteSpec, MultiViewBatch, encode_world, generate_discrete, private_eraser
from mvdistill.train import TrainConfig, load_checkpoint, model_from_checkpoint, save_checkpoint, train
from mvdistill.venn import ViewSystem, verify_corollary2, view_specific_info


def test_identity_suite():
    start = time.perf_counter()
    results = run_identities(count=200, seed=0)
    elapsed = time.perf_counter() - start
    core = ["chain-rule", "markov-split", "predictive-split", "posterior-kl"]
    worst = max(results[name]["max_residual"] for name in core)
    ok = worst < 1e-10 and elapsed < 60 and all(results[n]["draws"] >= 200 for n in core)
    report(1, ok, f"max residual {worst:.2e} over 200 draws per identity, {elapsed:.1f}s")
    assert ok


def test_corollary2_degeneration():
    rng = np.random.default_rng(2)
    worst_vsd = 0.0
    for _ in range(100):
        b, k = int(rng.integers(1, 9)), int(rng.integers(2, 7))
        obs = ad.softmax(ad.constant(rng.standard_normal((b, k)) * 2))
        rep = ad.softmax(ad.constant(rng.standard_normal((b, k)) * 2))
        bundle = PredictionBundle([obs], [rep], rep, [])
        worst_vsd = max(worst_vsd, abs(float(mv2d_loss(bundle).value) - float(vsd_loss(bundle, 0).value)))
    worst_c2 = 0.0
    passed = 0
    for _ in range(50):
        res = verify_corollary2(random_view_system(rng, 2))
        worst_c2 = max(worst_c2, *res.residuals.values())
        passed += res.ok
    ok = worst_vsd < 1e-12 and worst_c2 < 1e-10 and passed == 50
    report(2, ok, f"mv2d(n=1)-vsd max {worst_vsd:.1e}; corollary residual max {worst_c2:.1e} ({passed}/50)")
    assert ok


LOSSES = {
    "vsd": lambda b, y: vsd_loss(b, 0),
    "vcd": lambda b, y: vcd_loss(b),
    "vmd": lambda b, y: vmd_loss(b),
    "mv2d": lambda b, y: mv2d_loss(b),
    "total_objective": lambda b, y: total_objective(b, y),
}


def test_gradient_validation():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    spec = ModelSpec((4, 3), 3, encoder_widths=(6,), bottleneck_hidden=5, bottleneck_dim=3)
    worst, stats = {}, Stats()
    for name, loss in LOSSES.items():
        errors = []
        for _ in range(100):
            model = Model(spec, seed=int(rng.integers(2**31)))
            for p in model.params.values():
                # random biases too, so no ReLU input sits exactly on its kink
                p.value = p.value + 0.3 * rng.standard_normal(p.shape)
            batch = MultiViewBatch([rng.standard_normal((5, d)) for d in spec.input_dims], rng.integers(0, 3, 5))
            noise_seed = int(rng.integers(2**31))

            def build(params, model=model, batch=batch, noise_seed=noise_seed, loss=loss):
                b = forward(model, batch, ad.Rng(noise_seed, 1)).bundle
                return loss(b, batch.labels)

            errors.append(directional_error(build, list(model.params.values()), rng, stats=stats))
        worst[name] = max(errors)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-5 and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(3, ok, f"worst relative error {detail}; {stats.checks} directions ({stats.kinks} kink redraws), {elapsed:.1f}s")
    assert ok


def test_posterior_limit():
    alphas = np.linspace(0.0, 1.0, 5)
    kls, specific = [], []
    for a in alphas:
        world = generate_discrete(DiscreteSpec(n_views=2, n_classes=2, private_leak=0.6, shared_noise=0.2, private_noise=0.1))
        pmf = encode_world(world, [private_eraser(2, a)] * 2)
        sys = ViewSystem(pmf, "y", world.views, ["z1", "z2"])
        kls.append(expected_posterior_kl(sys.pmf, "y", ["z1", "z2"], ["z2"]))
        specific.append(view_specific_info(sys, 0))
    descending = all(k1 >= k2 - 1e-15 and s1 >= s2 - 1e-15
                     for k1, k2, s1, s2 in zip(kls, kls[1:], specific, specific[1:]))
    implied = all(s < 1e-8 for k, s in zip(kls, specific) if k < 1e-8)
    reached = kls[-1] < 1e-8
    ok = descending and implied and reached
    report(4, ok, "posterior KL " + " ".join(f"{k:.2e}" for k in kls) + "; view-specific " + " ".join(f"{s:.2e}" for s in specific))
    assert ok


def run_cli_experiment(tmp_path, cfg):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "runs"
    start = time.perf_counter()
    code = cli.main(["train", "--config", str(path), "--out", str(out)])
    elapsed = time.perf_counter() - start
    runs = {}
    for mode in cfg["loss_modes"]:
        runs[mode] = [json.loads((out / mode / f"seed{s}" / "eval.json").read_text()) for s in cfg["seeds"]]
    return code, elapsed, runs


@pytest.mark.slow
def test_vsd_nuisance_experiment(tmp_path):
    cfg = {"generator": {"n_views": 1}, "loss_modes": ["ce-only", "ce+vsd"], "seeds": [0, 1, 2, 3, 4],
           "probe": {"epochs": []}}
    code, elapsed, runs = run_cli_experiment(tmp_path, cfg)
    base, vsd = runs["ce-only"], runs["ce+vsd"]
    lower = sum(v["info"]["plugin_nuisance"] < b["info"]["plugin_nuisance"] for b, v in zip(base, vsd))
    gap = max(abs(v["test"]["per_head"]["rep1"] - b["test"]["per_head"]["rep1"]) for b, v in zip(base, vsd))
    val_gap = max(abs(v["val"]["accuracy"] - b["val"]["accuracy"]) for b, v in zip(base, vsd))
    ok = code == 0 and lower >= 4 and val_gap < 0.02 and elapsed < 300
    nuis = " ".join(f"{b['info']['plugin_nuisance']:.3f}->{v['info']['plugin_nuisance']:.3f}" for b, v in zip(base, vsd))
    report(5, ok, f"I(z;nuisance) lower under ce+vsd in {lower}/5 seeds ({nuis}); "
                  f"max val gap {100 * val_gap:.1f} pts (test {100 * gap:.1f}); {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_mv2d_consistency_experiment(tmp_path):
    cfg = {"loss_modes": ["ce-only", "ce+mv2d"], "seeds": [0, 1, 2, 3, 4], "probe": {"epochs": [10]}}
    code, elapsed, runs = run_cli_experiment(tmp_path, cfg)
    base, mv2d = runs["ce-only"], runs["ce+mv2d"]
    loo_wins = sum(m["heldout"]["loo_mean"] > b["heldout"]["loo_mean"] for b, m in zip(base, mv2d))
    final = str(cfg.get("train", {}).get("epochs", 200))
    decreases = sum(m["probe_epochs"][final]["plugin_view_specific"] < m["probe_epochs"]["10"]["plugin_view_specific"]
                    for m in mv2d)
    ok_a, ok_b = loo_wins >= 4, decreases >= 4
    ok = code == 0 and ok_a and ok_b and elapsed < 900
    loo = " ".join(f"{b['heldout']['loo_mean']:.3f}/{m['heldout']['loo_mean']:.3f}" for b, m in zip(base, mv2d))
    vs = " ".join(f"{m['probe_epochs']['10']['plugin_view_specific']:.3f}->{m['probe_epochs'][final]['plugin_view_specific']:.3f}"
                  for m in mv2d)
    report(6, ok, f"(a) loo accuracy ce-only/ce+mv2d {loo}: mv2d ahead in {loo_wins}/5; "
                  f"(b) I(y;z_i|z_rest) epoch 10->final {vs}: decreased in {decreases}/5; {elapsed:.0f}s")
    assert ok


def test_determinism_and_round_trip(tmp_path):
    cfg = {"seeds": [11], "loss_modes": ["ce+mv2d"], "train": {"epochs": 3}, "n_samples": 600,
           "probe": {"samples": 5000, "epochs": [2]}}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    csv = tmp_path / "runs" / "ce+mv2d" / "seed11" / "metrics.csv"
    outputs = []
    for _ in range(2):
        assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "runs")]) == 0
        outputs.append(csv.read_bytes())
    identical = outputs[0] == outputs[1]

    ds_cfg = cli.load_config("train", str(path), out=str(tmp_path / "runs"))
    ds = cli.dataset_for(ds_cfg, 11)
    model = Model(ds_cfg.model_spec(), seed=11)
    result = train(model, ds, TrainConfig(epochs=3, seed=11))
    before = evaluate(model, ds.test)
    save_checkpoint(result.checkpoint, tmp_path / "m.ckpt")
    after = evaluate(model_from_checkpoint(load_checkpoint(tmp_path / "m.ckpt")), ds.test)
    exact = before.per_head == after.per_head
    ok = identical and exact
    report(7, ok, f"metrics CSV byte-identical: {identical}; checkpoint accuracy {before.accuracy:.4f} -> {after.accuracy:.4f}, "
                  f"all heads equal: {exact}")
    assert ok


def test_plugin_calibration():
    world = generate_discrete(DiscreteSpec(n_views=2, n_classes=2, private_leak=0.4, shared_noise=0.2, private_noise=0.1))
    s = world.pmf.sample(100_000, np.random.default_rng(8))
    cols = {name: s[:, j] for j, name in enumerate(world.pmf.names)}
    cards = dict(zip(world.pmf.names, world.pmf.shape))
    errors = []
    for v in world.views:
        errors.append(abs(plugin_info(cols, "y", v, cardinalities=cards) - mutual_info(world.pmf, "y", v)))
    rng = np.random.default_rng(9)
    null = max(plugin_info({"a": rng.permutation(cols["y"]), "b": cols[v]}, "a", "b",
                           cardinalities={"a": cards["y"], "b": cards[v]}) for v in world.views)
    ok = max(errors) < 0.03 and null < 0.02
    report(8, ok, f"plug-in MI error {max(errors):.4f} nats at 1e5 samples; permutation null {null:.4f} nats")
    assert ok
