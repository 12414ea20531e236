"""Acceptance checks.

Each test runs one numbered criterion at its stated tolerance and prints a
single pass/fail line. The expensive desk pipelines are session fixtures
shared across criteria; everything is seeded and deterministic.
"""

import dataclasses
import itertools
import time

import numpy as np
import pytest

from robustprune import tensor as T
from robustprune.attacks import AttackSpec, attack_throughput, fgsm, pgd
from robustprune.config import build_network
from robustprune.data import make_digits, make_synthetic, split
from robustprune.evaluate import (evaluate_eba, evaluate_era, inference_copy,
                                  load_report, pgd_strength_sweep)
from robustprune.finetune import FineTuneConfig, fine_tune
from robustprune.losses import (KDCoefficients, LagrangianState,
                                adversarial_proxy, cross_entropy,
                                pruning_proxy)
from robustprune.model import (MaskedModel, Network, cnn_arch, load_checkpoint,
                               mlp_arch)
from robustprune.pipeline import (PRETRAINED, prune_iterative, run_ablate,
                                  run_eval, run_finetune, run_pipeline,
                                  run_pretrain, run_prune, train_dense)
from robustprune.pruning import (PruneRunConfig, PruneTrace,
                                 ablate_no_accuracy, connectivity_check,
                                 prune, prune_lwm_baseline, target_retained)
from robustprune.recipes import desk_mlp

from gradcheck import check_op, op_cases

CHANCE_EBA = 10.0  # balanced ten-class corpus


def report(number, ok, detail):
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {detail}"
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def outroot(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def pipelines(outroot):
    """Five-seed desk MLP pipeline at the 90% tier."""
    results = {}
    for seed in range(5):
        cfg = desk_mlp(seed, str(outroot / f"mlp90-s{seed}"))
        t0 = time.perf_counter()
        pre = run_pretrain(cfg)
        run_prune(cfg)
        run_finetune(cfg)
        final = run_eval(cfg)
        results[seed] = {"cfg": cfg, "pre": pre, "final": final,
                         "wall": time.perf_counter() - t0}
    return results


@pytest.fixture(scope="session")
def fresh_test_set():
    """A large held-out draw used where tight gaps need low sampling noise."""
    return make_digits(3000, seed=123)


def test_criterion_01_gradient_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    for case in range(100):
        for name, (build, inputs) in op_cases(rng).items():
            check_op(build, inputs, rng)
    elapsed = time.perf_counter() - start
    report(1, elapsed < 30.0,
           f"finite-difference oracle, 100 random cases per op, "
           f"rel tol 1e-4, in {elapsed:.1f}s (< 30s)")


def test_criterion_02_masking_identity():
    rng = np.random.default_rng(7)
    nets = [Network(mlp_arch(input_size=30, hidden=(16, 8), classes=5), seed=1),
            Network(cnn_arch(input_hw=(12, 12), channels=(3, 4)), seed=2,
                    input_shape=(1, 12, 12))]
    inputs = [rng.normal(size=(100, 30)),
              rng.uniform(size=(100, 1, 12, 12))]
    exact = True
    for net, x in zip(nets, inputs):
        masked = MaskedModel(net)
        for i in range(100):
            a = net.forward(x[i:i + 1]).data
            b = masked.forward(x[i:i + 1]).data
            exact = exact and np.array_equal(a, b)
    report(2, exact, "all-ones mask reproduces the unmasked model bit-exactly "
                     "on 100 random inputs (MLP and CNN)")


def test_criterion_03_brute_force_prune_oracle():
    start = time.perf_counter()
    ds = make_synthetic("gaussian-blobs", 90, 0.15, seed=0, classes=3)
    net = build_network({"kind": "dense-toy", "input_size": 2, "hidden": [],
                         "classes": 3}, seed=0)
    train_dense(net, ds, epochs=120, lr=0.05, batch_size=32, seed=0)
    model = MaskedModel(net, trainable_biases=False)
    config = PruneRunConfig(target_fraction=0.5, max_epochs=60, lr=0.02,
                            rho_schedule=(0.1,), seed=0, batch_size=32,
                            trainable_biases=False)
    bits, trace = prune(model, ds, config)
    lam_a = trace.records[-1].lambda_a
    lam_p = trace.records[-1].lambda_p

    def objective(flat_bits):
        probe = MaskedModel(net, trainable_biases=False)
        probe.masks[0].data[:] = np.asarray(flat_bits, float).reshape(
            probe.masks[0].shape)
        logits = probe.forward(ds.inputs)
        ce = cross_entropy(logits, ds.labels).item()
        adv = adversarial_proxy(T.softmax(logits)).item()
        cap = pruning_proxy(probe.masks, 3).item()
        return ce + lam_a * abs(adv) + lam_p * cap

    ours = objective(bits.flat())
    best = min(objective([1.0 if i in keep else 0.0 for i in range(6)])
               for keep in itertools.combinations(range(6), 3))
    elapsed = time.perf_counter() - start
    report(3, ours <= best * 1.05 and elapsed < 60.0,
           f"toy mask objective {ours:.4f} within 5% of exhaustive optimum "
           f"{best:.4f} over C(6,3) masks, in {elapsed:.1f}s (< 60s)")


def test_criterion_04_sparsity_exactness(pipelines):
    cfg0 = pipelines[0]["cfg"]
    network, _, _ = load_checkpoint(f"{cfg0.out_dir}/{PRETRAINED}")
    k = network.weight_count
    checks = []

    trace90 = PruneTrace.from_csv(f"{cfg0.out_dir}/prune_trace.csv")
    _, bits90, _ = load_checkpoint(f"{cfg0.out_dir}/pruned.dwd")
    checks.append((0.90, bits90.retained_count, trace90))

    for target in (0.95, 0.99):
        model = MaskedModel(network, trainable_biases=False)
        config = PruneRunConfig(target_fraction=target, max_epochs=60, lr=0.02,
                                rho_schedule=(1e-6,), seed=0, batch_size=128,
                                soft_threshold=0.05, trainable_biases=False)
        bits, trace = prune(model, _desk_train(), config)
        checks.append((target, bits.retained_count, trace))

    ok = True
    details = []
    for target, retained, trace in checks:
        k_prime = target_retained(k, target)
        lam_a = trace.column("lambda_a")
        lam_p = trace.column("lambda_p")
        proxies = trace.column("prune_proxy")
        this = (retained == k_prime
                and all(b >= a for a, b in zip(lam_a, lam_a[1:]))
                and all(b >= a for a, b in zip(lam_p, lam_p[1:]))
                and proxies[-1] <= proxies[0])
        ok = ok and this
        details.append(f"{target:.0%}: retained {retained}=={k_prime}, "
                       f"multipliers monotone, proxy {proxies[0]:.0f}->"
                       f"{proxies[-1]:.0f}")
    report(4, ok, "; ".join(details))


_DESK_CACHE = {}


def _desk_train():
    if "train" not in _DESK_CACHE:
        ds = make_digits(5000, seed=0)
        train, _, test = split(ds, (0.8, 0.0, 0.2), seed=0)
        _DESK_CACHE["train"] = train
        _DESK_CACHE["test"] = test
    return _DESK_CACHE["train"]


def _desk_test():
    _desk_train()
    return _DESK_CACHE["test"]


def _cnn_train():
    if "cnn_train" not in _DESK_CACHE:
        ds = make_digits(1500, seed=0)
        train, _, test = split(ds, (0.8, 0.0, 0.2), seed=0)
        _DESK_CACHE["cnn_train"] = train
        _DESK_CACHE["cnn_test"] = test
    return _DESK_CACHE["cnn_train"], _DESK_CACHE["cnn_test"]


def test_criterion_05_connectivity_claim():
    train, test = _cnn_train()
    full_connected = []
    lwm_bad = []
    noacc_bad = []
    for seed in range(5):
        net = Network(cnn_arch(), seed=seed, input_shape=(1, 28, 28))
        train_dense(net, train, epochs=8, lr=2e-3, batch_size=128, seed=seed)
        config = PruneRunConfig(target_fraction=0.99, max_epochs=30, lr=0.02,
                                rho_schedule=(3e-5,), seed=seed, batch_size=128,
                                soft_threshold=0.05, trainable_biases=False)
        model = MaskedModel(net, trainable_biases=False)
        bits, _ = prune(model, train, config)
        full_connected.append(connectivity_check(net, bits).connected)

        lwm_bits = prune_lwm_baseline(net, 0.99)
        if not connectivity_check(net, lwm_bits).connected:
            lwm_bad.append(seed)
        else:
            eba = _finetuned_eba(net, lwm_bits, train, test, seed)
            if eba <= CHANCE_EBA + 2.0:
                lwm_bad.append(seed)

        model2 = MaskedModel(net, trainable_biases=False)
        noacc_bits, _ = ablate_no_accuracy(model2, train, config)
        if not connectivity_check(net, noacc_bits).connected:
            noacc_bad.append(seed)
        else:
            eba = _finetuned_eba(net, noacc_bits, train, test, seed)
            if eba <= CHANCE_EBA + 2.0:
                noacc_bad.append(seed)

    ok = all(full_connected) and lwm_bad and noacc_bad
    report(5, ok,
           f"full method connected {sum(full_connected)}/5 at 99% on the CNN; "
           f"LWM degenerate on seeds {lwm_bad}; no-accuracy ablation "
           f"degenerate on seeds {noacc_bad}")


def _finetuned_eba(net, bits, train, test, seed):
    config = FineTuneConfig(
        coefficients=KDCoefficients(alpha=0.45, beta=0.10, gamma=0.45,
                                    epsilon_max=0.25),
        max_epochs=25, patience=25, lr=2e-3, batch_size=128, seed=seed,
        val_subsample=150,
        val_attack=AttackSpec(family="pgd", epsilon_max=0.05, num_steps=3))
    student, _ = fine_tune(bits.apply_to(net), bits, net, train, config)
    return evaluate_eba(student, test)


def test_criterion_06_desk_pipeline_quality(pipelines):
    run = pipelines[0]
    gap = abs(run["final"].eba - run["pre"].eba)
    ok = gap <= 3.0 and run["wall"] < 900.0
    report(6, ok,
           f"90% pipeline: dense eba {run['pre'].eba:.2f} vs pruned+tuned "
           f"{run['final'].eba:.2f} (|gap| {gap:.2f} <= 3pp), wall "
           f"{run['wall']:.0f}s (< 900s)")


def test_criterion_07_robustness_ordering(pipelines, fresh_test_set):
    cfg0 = pipelines[0]["cfg"]
    network, _, _ = load_checkpoint(f"{cfg0.out_dir}/{PRETRAINED}")
    config = PruneRunConfig(target_fraction=0.99, max_epochs=60, lr=0.02,
                            rho_schedule=(1e-6,), seed=0, batch_size=128,
                            soft_threshold=0.05, trainable_biases=False)
    model = MaskedModel(network, trainable_biases=False)
    bits, _ = prune(model, _desk_train(), config)
    pruned = bits.apply_to(network)
    spec = AttackSpec(family="pgd", epsilon_max=0.05, num_steps=10)
    scores = {}
    for variant in ("modified-kd", "vanilla-kd", "adversarial-kd"):
        ft = FineTuneConfig(
            coefficients=KDCoefficients(alpha=0.45, beta=0.10, gamma=0.45,
                                        epsilon_max=0.25),
            variant=variant, max_epochs=60, patience=20, lr=2e-3,
            batch_size=128, seed=0, val_subsample=300,
            val_attack=AttackSpec(family="pgd", epsilon_max=0.05, num_steps=5))
        student, _ = fine_tune(pruned, bits, network, _desk_train(), ft)
        scores[variant] = (evaluate_eba(student, fresh_test_set),
                           evaluate_era(student, fresh_test_set, spec))
    era_gap = scores["modified-kd"][1] - scores["vanilla-kd"][1]
    eba_gap = scores["modified-kd"][0] - scores["adversarial-kd"][0]
    ok = era_gap >= 5.0 and eba_gap >= 2.0
    report(7, ok,
           f"99% tier: modified {scores['modified-kd'][0]:.2f}/"
           f"{scores['modified-kd'][1]:.2f}, vanilla {scores['vanilla-kd'][0]:.2f}/"
           f"{scores['vanilla-kd'][1]:.2f}, adversarial "
           f"{scores['adversarial-kd'][0]:.2f}/{scores['adversarial-kd'][1]:.2f}; "
           f"era gap {era_gap:.2f} >= 5, eba gap {eba_gap:.2f} >= 2")


def test_criterion_08_attack_suite(pipelines):
    cfg0 = pipelines[0]["cfg"]
    student, _, _ = load_checkpoint(f"{cfg0.out_dir}/finetuned.dwd")
    net = inference_copy(student)
    test = _desk_test()
    rng = np.random.default_rng(11)
    idx = np.sort(rng.permutation(test.n)[:400])
    sub = test.subset(idx, "sweep")

    eps = 0.05
    x, y = test.inputs[:256], test.labels[:256]
    bitwise = np.array_equal(pgd(net, x, y, eps, 1, eps), fgsm(net, x, y, eps))

    adv = pgd(net, x, y, eps, 10, 2.5 * eps / 10)
    bound = float(np.abs(adv - x).max())
    linf_ok = bound <= eps + 1e-12 and adv.min() >= 0.0 and adv.max() <= 1.0

    zero_spec = AttackSpec(family="pgd", epsilon_max=0.0, num_steps=10)
    era0 = evaluate_era(net, test, zero_spec)
    eba = evaluate_eba(net, test)

    sweep = pgd_strength_sweep(net, sub, eps, steps=(10, 50, 100))
    ok = (bitwise and linf_ok and era0 == eba and sweep["std"] <= 1.0)
    report(8, ok,
           f"PGD-1==FGSM bitwise: {bitwise}; max|dx| {bound:.4f} <= {eps}; "
           f"era(0)={era0:.2f}=={eba:.2f}=eba; sweep era {sweep['era']} "
           f"std {sweep['std']:.3f} <= 1.0")


def test_criterion_09_throughput(pipelines):
    cfg0 = pipelines[0]["cfg"]
    network, _, _ = load_checkpoint(f"{cfg0.out_dir}/{PRETRAINED}")
    net = inference_copy(network)
    data = make_digits(4000, seed=5)
    x, y = data.inputs, data.labels
    eps = 0.05

    def best(spec, reps=3):
        return min(attack_throughput(net, x, y, spec, batch_size=256)
                   for _ in range(reps))

    t_fgsm = best(AttackSpec(family="fgsm", epsilon_max=eps))
    t_loop = best(AttackSpec(family="fgsm-looping", epsilon_max=eps))
    t_pgd = best(AttackSpec(family="pgd", epsilon_max=eps, num_steps=10),
                 reps=1)
    ok = (t_pgd >= 2.5 * t_loop
          and abs(t_loop - t_fgsm) <= 0.10 * t_fgsm
          and t_pgd >= 5.0 * t_fgsm)
    report(9, ok,
           f"s/1000: fgsm {t_fgsm:.3f}, looping {t_loop:.3f}, pgd-10 "
           f"{t_pgd:.3f}; pgd/looping {t_pgd / t_loop:.1f}x >= 2.5, "
           f"|looping-fgsm| {abs(t_loop - t_fgsm) / t_fgsm:.1%} <= 10%, "
           f"pgd/fgsm {t_pgd / t_fgsm:.1f}x >= 5")


def test_criterion_10_boundary_distance(pipelines):
    stats = pipelines[0]["final"].distance_stats
    ok = True
    details = []
    for tag in ("benign", "adv"):
        correct = stats.get(f"{tag}-correct", {})
        wrong = stats.get(f"{tag}-wrong", {})
        if not (correct.get("count") and wrong.get("count")):
            ok = False
            details.append(f"{tag}: group empty")
            continue
        gap = correct["distance_score"] - wrong["distance_score"]
        ok = ok and gap > 0
        details.append(f"{tag}: correct {correct['distance_score']:.3f} > "
                       f"wrong {wrong['distance_score']:.3f}")
    report(10, ok, "; ".join(details))


def test_criterion_11_seed_stability(pipelines):
    ebas = [pipelines[s]["final"].eba for s in range(5)]
    eras = [pipelines[s]["final"].era for s in range(5)]
    eba_std = float(np.std(ebas, ddof=1))
    era_std = float(np.std(eras, ddof=1))
    ok = eba_std <= 1.5 and era_std <= 2.0
    report(11, ok,
           f"5-seed pipeline: eba {[f'{v:.1f}' for v in ebas]} std "
           f"{eba_std:.2f} <= 1.5; era {[f'{v:.1f}' for v in eras]} std "
           f"{era_std:.2f} <= 2.0")


def test_criterion_12_negative_results(pipelines, outroot):
    scratch_cfg = desk_mlp(0, str(outroot / "scratch"), target=0.99)
    scratch = run_ablate(scratch_cfg, "scratch")
    scratch_ok = scratch.eba <= CHANCE_EBA + 15.0

    single = pipelines[0]["final"]
    cfg0 = pipelines[0]["cfg"]
    network, _, _ = load_checkpoint(f"{cfg0.out_dir}/{PRETRAINED}")
    prune_cfg = PruneRunConfig(target_fraction=0.90, max_epochs=30, lr=0.02,
                               rho_schedule=(3e-7,), seed=0, batch_size=128,
                               soft_threshold=0.05, trainable_biases=False,
                               mode="iterative", iterative_step=0.20)
    ft_cfg = cfg0.finetune_config()
    bits, _, student = prune_iterative(network, _desk_train(), prune_cfg,
                                       ft_cfg, network)
    spec = AttackSpec(family="pgd", epsilon_max=0.05, num_steps=10)
    it_eba = evaluate_eba(student, _desk_test())
    it_era = evaluate_era(student, _desk_test(), spec)
    eba_gap = abs(single.eba - it_eba)
    era_gap = abs(single.era - it_era)
    iter_ok = eba_gap <= 1.0 and era_gap <= 1.0
    report(12, scratch_ok and iter_ok,
           f"scratch eba {scratch.eba:.2f} <= {CHANCE_EBA + 15.0}; "
           f"iterative vs single-shot at 90%: eba {it_eba:.2f} vs "
           f"{single.eba:.2f} (|gap| {eba_gap:.2f} <= 1), era {it_era:.2f} vs "
           f"{single.era:.2f} (|gap| {era_gap:.2f} <= 1)")
