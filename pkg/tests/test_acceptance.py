"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. The scene suites are
deterministic (seeded); the heavyweight fixtures are built once per module.
"""

import time

import numpy as np
import pytest

from gciva import (
    ArrayGeometry,
    ComplexSpectrogram,
    DemixingStack,
    PriorConfig,
    SceneSpec,
    SourceModel,
    StftConfig,
    analyze,
    decompose_sir_sdr,
    demixed_energies,
    evaluate_cost,
    match_permutation,
    penalty_gradient,
    prior_matrix,
    project_back,
    run_gradient_iva,
    run_informed_iva,
    simulate_mixture,
    steering_vector,
    synthesize,
    synthetic_sources,
    update_constrained,
    update_unconstrained,
    weighted_covariance,
)

PAIR = ArrayGeometry.linear_pair(0.21)
CONFIG = StftConfig()  # 2048-sample Hamming window, 50% overlap, 16 kHz
MODEL = SourceModel()
SUITE_SIZE = 50
SUITE_DURATION = 3.0


def report(line):
    print(f"\n[acceptance] {line}")


def suite_scene(index, snr_db, duration=SUITE_DURATION):
    """Deterministic anechoic scene with DOA separation >= 35 degrees and a
    random label order (so unconstrained ordering is a fair coin)."""
    sources = synthetic_sources(2, duration, CONFIG.sample_rate, seed=index)
    sep = np.random.default_rng([index, 3]).uniform(35.0, 130.0)
    base = np.random.default_rng([index, 2]).uniform(15.0, 165.0 - sep)
    doas = (base, base + sep)
    if np.random.default_rng([index, 1]).integers(0, 2):
        doas = (doas[1], doas[0])
    scene = SceneSpec(sources, doas, snr_db, seed=index)
    mixture, images = simulate_mixture(scene, PAIR, CONFIG)
    return mixture, images, doas


def null_prior(doas):
    # constrain channel 0 to suppress the second source's direction
    return PriorConfig.constant((0,), (doas[1],), PAIR, CONFIG.n_bins,
                                sigma2=40.0, lambda_e=1e-3)


def reference_outputs(mixture, stack, demixed):
    return synthesize(project_back(demixed, stack, 0))[: mixture.shape[0]]


@pytest.fixture(scope="module")
def suite_20db():
    """Per-scene permutation outcomes and cost traces at 20 dB SNR."""
    records = []
    for i in range(SUITE_SIZE):
        mixture, images, doas = suite_scene(i, 20.0)
        refs = images[:, :, 0]
        spec = analyze(mixture, CONFIG)
        stack, demixed, trace_gc = run_informed_iva(spec, null_prior(doas), MODEL, 100)
        y_gc = reference_outputs(mixture, stack, demixed)
        _, gc_ok = match_permutation(y_gc.T, refs)
        stack, demixed, _ = run_informed_iva(spec, None, MODEL, 100)
        y_aux = reference_outputs(mixture, stack, demixed)
        _, aux_ok = match_permutation(y_aux.T, refs)
        records.append({"gc_ok": gc_ok, "aux_ok": aux_ok, "trace_gc": trace_gc,
                        "doas": doas})
    return records


@pytest.fixture(scope="module")
def suite_30db():
    """Separation metrics at 30 dB SNR on the same scene suite."""
    records = []
    for i in range(SUITE_SIZE):
        mixture, images, doas = suite_scene(i, 30.0)
        refs = images[:, :, 0]
        spec = analyze(mixture, CONFIG)
        mix_sir = np.mean([decompose_sir_sdr(mixture[:, m], refs)[0] for m in range(2)])

        stack, demixed, _ = run_informed_iva(spec, None, MODEL, 100)
        y = reference_outputs(mixture, stack, demixed)
        vals = [decompose_sir_sdr(y[:, k], refs) for k in range(2)]
        aux_sir = np.mean([v[0] for v in vals])
        aux_sdr = np.mean([v[1] for v in vals])

        stack, demixed, _ = run_informed_iva(spec, null_prior(doas), MODEL, 100)
        y = reference_outputs(mixture, stack, demixed)
        vals = [decompose_sir_sdr(y[:, k], refs) for k in range(2)]
        gc_sir = np.mean([v[0] for v in vals])
        gc_sdr = np.mean([v[1] for v in vals])

        records.append({"mix_sir": float(mix_sir),
                        "aux_sir": float(aux_sir), "aux_sdr": float(aux_sdr),
                        "gc_sir": float(gc_sir), "gc_sdr": float(gc_sdr)})
    return records


def iterations_within(j_iva, rel=0.01):
    """First iteration from which the IVA cost stays within ``rel`` of its
    final value."""
    final = j_iva[-1]
    inside = np.abs(j_iva - final) <= rel * abs(final)
    for i in range(len(j_iva)):
        if np.all(inside[i:]):
            return i
    return len(j_iva) - 1


def test_criterion_1_mm_monotonicity():
    n_scenes = 20
    failures = []
    start = time.perf_counter()
    for i in range(n_scenes):
        mixture, _, doas = suite_scene(1000 + i, 20.0, duration=5.0)
        spec = analyze(mixture, CONFIG)
        _, _, trace = run_informed_iva(spec, null_prior(doas), MODEL, 100)
        total = trace.total
        if not np.all(np.diff(total) <= 1e-8 * np.abs(total[:-1])):
            failures.append(i)
    elapsed = time.perf_counter() - start
    assert not failures, f"cost increased on scenes {failures}"
    assert elapsed <= 60.0, f"monotonicity suite took {elapsed:.1f}s > 60s"
    report(f"criterion 1 PASS: total cost non-increasing (tol 1e-8) on "
           f"{n_scenes} scenes, L=100, {elapsed:.1f}s total")


def test_criterion_2_reduction_to_auxiva():
    worst_vanishing = 0.0
    for i in range(5):
        mixture, _, doas = suite_scene(2000 + i, 20.0, duration=2.5)
        spec = analyze(mixture, CONFIG)
        plain, vanishing, empty = [], [], []
        run_informed_iva(spec, None, MODEL, 100,
                         callback=lambda l, w: plain.append(w.matrices))
        weak = PriorConfig.constant((0,), (doas[1],), PAIR, CONFIG.n_bins,
                                    sigma2=1e12, lambda_e=0.0)
        run_informed_iva(spec, weak, MODEL, 100,
                         callback=lambda l, w: vanishing.append(w.matrices))
        none_prior = PriorConfig((), (), np.full(CONFIG.n_bins, 40.0), 1e-3, PAIR)
        run_informed_iva(spec, none_prior, MODEL, 100,
                         callback=lambda l, w: empty.append(w.matrices))
        for a, b in zip(plain, vanishing):
            dist = np.linalg.norm((a - b).reshape(a.shape[0], -1), axis=1).max()
            worst_vanishing = max(worst_vanishing, dist)
            assert dist <= 1e-5
        for a, b in zip(plain, empty):
            dist = np.linalg.norm((a - b).reshape(a.shape[0], -1), axis=1).max()
            assert dist <= 1e-12
    report(f"criterion 2 PASS: vanishing-prior trajectory within 1e-5 of plain "
           f"auxIVA (worst {worst_vanishing:.2e}); empty constraint set within 1e-12")


def test_criterion_3_outer_permutation(suite_20db):
    gc_rate = np.mean([r["gc_ok"] for r in suite_20db])
    aux_rate = np.mean([r["aux_ok"] for r in suite_20db])
    assert gc_rate >= 0.90, f"GC auxIVA permutation success {gc_rate:.2f} < 0.90"
    assert aux_rate <= 0.80, (
        f"plain auxIVA ordering consistency {aux_rate:.2f} is not chance-level"
    )
    report(f"criterion 3 PASS: GC auxIVA intended ordering on {gc_rate:.0%} of "
           f"{SUITE_SIZE} scenes; plain auxIVA at {aux_rate:.0%} (chance-level)")


def test_criterion_4_separation_quality(suite_30db):
    aux_improvement = np.median([r["aux_sir"] - r["mix_sir"] for r in suite_30db])
    gc_improvement = np.median([r["gc_sir"] - r["mix_sir"] for r in suite_30db])
    aux_sdr = np.median([r["aux_sdr"] for r in suite_30db])
    gc_sdr = np.median([r["gc_sdr"] for r in suite_30db])
    assert aux_improvement >= 15.0, f"auxIVA median SIR improvement {aux_improvement:.1f} dB"
    assert gc_improvement >= 15.0, f"GC auxIVA median SIR improvement {gc_improvement:.1f} dB"
    assert gc_sdr >= aux_sdr - 3.0, (
        f"GC auxIVA median SDR {gc_sdr:.1f} more than 3 dB below auxIVA {aux_sdr:.1f}"
    )
    report(f"criterion 4 PASS: median SIR improvement aux {aux_improvement:.1f} dB, "
           f"GC {gc_improvement:.1f} dB; median SDR aux {aux_sdr:.1f} dB, GC {gc_sdr:.1f} dB")


def test_criterion_5_convergence_speed(suite_20db):
    gc_iters = [iterations_within(r["trace_gc"].j_iva) for r in suite_20db]
    assert max(gc_iters) <= 30, f"GC auxIVA needed {max(gc_iters)} iterations on a scene"

    slow = 0
    for i in range(SUITE_SIZE):
        mixture, _, doas = suite_scene(i, 20.0)
        spec = analyze(mixture, CONFIG)
        _, _, trace = run_gradient_iva(spec, (0,), (doas[0],), PAIR, MODEL, 350,
                                       stepsize=0.05, constraint_weight=0.5)
        if iterations_within(trace.j_iva) > 100:
            slow += 1
    assert slow >= 0.8 * SUITE_SIZE, (
        f"GC gradIVA was fast on {SUITE_SIZE - slow} of {SUITE_SIZE} scenes"
    )
    report(f"criterion 5 PASS: GC auxIVA within 1% of final cost in <= "
           f"{max(gc_iters)} iterations on all scenes; GC gradIVA needed > 100 "
           f"iterations on {slow}/{SUITE_SIZE} scenes")


def test_criterion_6_runtime():
    # 150 frames of 16 kHz audio under the default window
    n_samples = (150 - 1) * CONFIG.hop + CONFIG.window_length
    duration = n_samples / CONFIG.sample_rate
    mixture, _, doas = suite_scene(3000, 20.0, duration=duration)
    spec = analyze(mixture, CONFIG)
    assert spec.n_frames == 150 and spec.n_bins == 1025

    prior = null_prior(doas)
    start = time.perf_counter()
    run_informed_iva(spec, prior, MODEL, 1)
    one_iteration = time.perf_counter() - start
    start = time.perf_counter()
    run_informed_iva(spec, prior, MODEL, 100)
    full_run = time.perf_counter() - start
    assert one_iteration <= 0.5, f"one iteration took {one_iteration:.2f}s"
    assert full_run <= 30.0, f"L=100 took {full_run:.1f}s"
    report(f"criterion 6 PASS: one iteration {one_iteration * 1e3:.0f} ms, "
           f"L=100 run {full_run:.1f}s (K=2, F=1025, N=150)")


def test_criterion_7_unit_property_suite():
    # STFT round trip at -60 dB
    rng = np.random.default_rng(7)
    x = rng.standard_normal((16000, 2))
    y = synthesize(analyze(x, CONFIG))[: x.shape[0]]
    lo, hi = 2048, x.shape[0] - 2048
    rt = np.max(np.abs(y[lo:hi] - x[lo:hi])) / np.max(np.abs(x[lo:hi]))
    assert rt <= 1e-3

    # steering-vector trivial cases, exact
    assert np.array_equal(steering_vector(0, 37.0, PAIR, CONFIG), np.ones(2))
    assert np.array_equal(steering_vector(100, 90.0, PAIR, CONFIG), np.ones(2))

    # weighted-covariance and cost against brute-force loops, 1e-10 relative
    small = StftConfig(window_length=6, hop=3)
    data = rng.standard_normal((4, 5, 2)) + 1j * rng.standard_normal((4, 5, 2))
    spec = ComplexSpectrogram(data, small)
    w = DemixingStack(rng.standard_normal((4, 2, 2)) + 1j * rng.standard_normal((4, 2, 2)))
    energies = demixed_energies(spec, w, 0)
    v = weighted_covariance(spec, energies, MODEL, 2)
    v_oracle = sum(np.outer(data[2, n], data[2, n].conj()) / energies[n]
                   for n in range(5)) / 5
    assert np.max(np.abs(v - v_oracle)) <= 1e-10 * np.linalg.norm(v_oracle)

    j_iva, _ = evaluate_cost(spec, w, MODEL)
    j_oracle = 0.0
    for k in range(2):
        acc = 0.0
        for n in range(5):
            energy = sum(abs(sum(w.matrices[f, k, j] * data[f, n, j] for j in range(2))) ** 2
                         for f in range(4))
            acc += np.sqrt(energy)
        j_oracle += acc / 5
    for f in range(4):
        j_oracle -= 2.0 * np.log(abs(np.linalg.det(w.matrices[f])))
    assert abs(j_iva - j_oracle) <= 1e-10 * abs(j_oracle)

    # normalization post-conditions at 1e-10
    v = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    v = v.conj().T @ v + 0.1 * np.eye(2)
    d = prior_matrix(np.exp(1j * rng.uniform(size=2)), 40.0, 1e-3)
    stack = DemixingStack.identity(1, 2)
    vec = update_unconstrained(stack, v, 0, 0)
    assert abs(np.real(vec.conj() @ v @ vec) - 1.0) <= 1e-10
    vec = update_constrained(stack, v, d, 0, 1)
    assert abs(np.real(vec.conj() @ (v + d) @ vec) - 1.0) <= 1e-10

    # penalty gradient vs central finite differences at 1e-5 relative
    w = DemixingStack(rng.standard_normal((2, 2, 2)) + 1j * rng.standard_normal((2, 2, 2)))
    h = np.exp(1j * rng.uniform(-np.pi, np.pi, size=(2, 2)))
    gamma, eps = 0.5, 1e-6

    def penalty(mats):
        return gamma * sum(abs(mats[f, 0, :] @ h[f] - 1.0) ** 2 for f in range(2))

    grad = penalty_gradient(w, {0: h}, gamma)
    for f in range(2):
        for j in range(2):
            for direction, part in ((1.0, grad[f, 0, j].real), (1.0j, grad[f, 0, j].imag)):
                up, down = w.matrices.copy(), w.matrices.copy()
                up[f, 0, j] += eps * direction
                down[f, 0, j] -= eps * direction
                fd = (penalty(up) - penalty(down)) / (2 * eps)
                assert abs(part - fd) <= 1e-5 * max(abs(fd), 1e-12)

    report("criterion 7 PASS: round trip <= -60 dB, steering trivials exact, "
           "loop oracles <= 1e-10, normalization <= 1e-10, penalty gradient vs FD <= 1e-5")
