"""Detection thresholds, classification, and localization."""

import itertools
import math
import random

import pytest

from conftest import make_pass, move_eqset
from trajmark.equivalence import Distribution, js_divergence
from trajmark.errors import EmptyRegistry
from trajmark.registry import Registry, register_user, uid_bits
from trajmark.verifier import (
    classify_model,
    cosine_similarity_bits,
    detect_pass,
    empirical_distribution,
    localize_user,
    precision_recall_f1,
    threshold_evaluations,
    verify_corpus,
    evaluate_passes,
)
from trajmark.trajectory import Action, GreyBoxTrajectory


def traj(actions, qid="q"):
    return GreyBoxTrajectory(qid, tuple(actions), "r")


def move(src="a", dst="b"):
    return Action.make("Files.Move", {"src": src, "dst": dst})


def copy_delete(src="a", dst="b"):
    return [
        Action.make("Files.Copy", {"src": src, "dst": dst}),
        Action.make("Files.Delete", {"path": src}),
    ]


def test_empirical_distribution_counts(ce_set):
    p = make_pass(ce_set, (0.6, 0.4))
    corpus = [traj([move()], "q1"), traj([move("c", "d")], "q2"),
              traj(copy_delete("e", "f"), "q3")]
    dist, count = empirical_distribution(corpus, p)
    assert count == 3
    assert dist.weights == pytest.approx((2 / 3, 1 / 3))


def test_empirical_distribution_empty(ce_set):
    p = make_pass(ce_set, (0.6, 0.4))
    dist, count = empirical_distribution([traj([Action.make("X.Y", {})])], p)
    assert dist is None and count == 0


def test_detect_exact_match_detected(ce_set):
    p = make_pass(ce_set, (0.6, 0.4), delta=3.0)
    result = detect_pass(p.biased, 100, p, theta_j=0.015, m_min=30)
    assert result.conclusive and result.detected
    assert result.jsd_to_target == 0.0


def test_detect_below_m_min_inconclusive(ce_set):
    p = make_pass(ce_set, (0.6, 0.4), delta=3.0)
    result = detect_pass(p.biased, 29, p, theta_j=0.015, m_min=30)
    assert not result.conclusive and not result.detected
    result = detect_pass(None, 0, p, theta_j=0.015, m_min=30)
    assert not result.conclusive and not result.detected


def test_unwatermarked_suspect_not_detected(ce_set):
    # a clean model emits the natural distribution; at delta 3 that sits
    # far above the strict threshold
    p = make_pass(ce_set, (0.6, 0.4), target_index=0, delta=3.0)
    gap = js_divergence(p.natural, p.biased)
    assert gap > 0.015
    result = detect_pass(p.natural, 1000, p, theta_j=0.015, m_min=30)
    assert result.conclusive and not result.detected


def test_detect_theta_validation(ce_set):
    p = make_pass(ce_set, (0.6, 0.4))
    with pytest.raises(ValueError):
        detect_pass(p.biased, 100, p, theta_j=0.0)
    with pytest.raises(ValueError):
        detect_pass(p.biased, 100, p, theta_j=1.5)


def _results(detected_ids, n=10, counts=None):
    out = []
    for pid in range(1, n + 1):
        detected = pid in detected_ids
        out.append(
            detect_pass_result(pid, detected, (counts or {}).get(pid, 100))
        )
    return out


def detect_pass_result(pid, detected, count):
    from trajmark.verifier import DetectionResult

    return DetectionResult(
        pass_id=pid,
        empirical=Distribution((1.0,)) if count else None,
        observation_count=count,
        jsd_to_target=0.0 if detected else 0.5,
        conclusive=count >= 30,
        detected=detected,
    )


def test_classification_boundaries():
    benign = classify_model(_results(set()), theta_n=3)
    assert not benign.classified_as_imitation and benign.n_det == 0
    exactly = classify_model(_results({1, 4, 9}), theta_n=3)
    assert exactly.classified_as_imitation and exactly.n_det == 3
    assert exactly.detected_vector == (1, 0, 0, 1, 0, 0, 0, 0, 1, 0)
    below = classify_model(_results({1, 4}), theta_n=3)
    assert not below.classified_as_imitation


def test_monotonicity_in_thresholds(data_domain, data_pool):
    from trajmark.simkit.surrogate import benign_surrogate, sample_surrogate

    corpus = sample_surrogate(benign_surrogate(data_domain), data_domain, 300, seed=1)
    evals = evaluate_passes(corpus, data_pool)
    detected_sets = []
    for theta_j in (0.005, 0.015, 0.05, 0.1, 0.5):
        results = threshold_evaluations(evals, theta_j)
        detected_sets.append({r.pass_id for r in results if r.detected})
    for smaller, larger in zip(detected_sets, detected_sets[1:]):
        assert smaller <= larger
    results = threshold_evaluations(evals, 0.5)
    verdicts = [
        classify_model(results, theta_n).classified_as_imitation
        for theta_n in range(1, 8)
    ]
    # once a verdict flips to benign it stays benign as theta_n grows
    assert all(a or not b for a, b in zip(verdicts, verdicts[1:]))


def test_cosine_similarity_against_brute_force():
    rng = random.Random(3)
    for _ in range(300):
        n = rng.randint(4, 20)
        v = [rng.randint(0, 1) for _ in range(n)]
        p = [rng.randint(0, 1) for _ in range(n)]
        got = cosine_similarity_bits(v, p)
        dot = sum(a * b for a, b in zip(v, p))
        norm = math.sqrt(sum(v)) * math.sqrt(sum(p))
        expected = dot / norm if norm else 0.0
        assert got == pytest.approx(expected, abs=1e-12)
        assert 0.0 <= got <= 1.0


def test_localization_exact_and_orthogonal():
    reg = Registry("data", 39)
    users = [register_user(reg, rng_seed=s) for s in range(5)]
    target = users[2]
    vector = list(uid_bits(target.uid_int(), 39))
    ranking = localize_user(vector, reg)
    assert ranking[0][0] == target.uid_hex
    assert ranking[0][1] == pytest.approx(1.0)
    # orthogonal vector scores zero for that user
    complement = [1 - b for b in vector]
    scores = dict(localize_user(complement, reg))
    assert scores[target.uid_hex] == 0.0


def test_localization_tie_breaks_by_registration_order():
    reg = Registry("tiny", 6, w_min=2, w_max=2)
    first = register_user(reg, rng_seed=1, created_at="2026-01-01T00:00:00")
    second = register_user(reg, rng_seed=2, created_at="2026-01-02T00:00:00")
    probe = [1] * 6  # equally similar to both weight-2 users
    ranking = localize_user(probe, reg)
    assert ranking[0][0] == first.uid_hex
    assert ranking[0][1] == pytest.approx(ranking[1][1])


def test_localization_empty_registry():
    with pytest.raises(EmptyRegistry):
        localize_user([0] * 39, Registry("data", 39))


def test_localization_self_consistency_zero_drops():
    reg = Registry("data", 39)
    users = [register_user(reg, rng_seed=s) for s in range(200)]
    for user in users[:20]:
        vector = uid_bits(user.uid_int(), 39)
        assert localize_user(list(vector), reg)[0][0] == user.uid_hex


def test_precision_recall_f1_against_confusion_oracle():
    for tp, fp, fn in itertools.product(range(4), repeat=3):
        p, r, f1 = precision_recall_f1(tp, fp, fn)
        exp_p = tp / (tp + fp) if tp + fp else 0.0
        exp_r = tp / (tp + fn) if tp + fn else 0.0
        exp_f = 2 * exp_p * exp_r / (exp_p + exp_r) if exp_p + exp_r else 0.0
        assert (p, r, f1) == (exp_p, exp_r, exp_f)
        if min(p, r) > 0:
            bound = 2 * min(p, r) / (1 + min(p, r))
            assert f1 <= bound + 1e-12


def test_surrogate_sampling_noise_is_small(data_domain, data_pool):
    """~1,000 matches drawn exactly from the target stay within JSD 0.005."""
    rng = random.Random(99)
    for p in data_pool[:10]:
        counts = [0] * len(p.biased)
        for _ in range(1000):
            counts[p.biased.sample(rng)] += 1
        emp = Distribution(tuple(c / 1000 for c in counts))
        assert js_divergence(emp, p.biased) < 0.005


def test_verify_corpus_verdict_round_trip(tmp_path, data_domain, data_pool):
    from trajmark.simkit.surrogate import benign_surrogate, sample_surrogate

    corpus = sample_surrogate(benign_surrogate(data_domain), data_domain, 200, seed=5)
    verdict = verify_corpus(corpus, data_pool)
    assert not verdict.classified_as_imitation
    assert verdict.n_det == sum(verdict.detected_vector)
    path = tmp_path / "verdict.json"
    verdict.save(str(path))
    import json

    obj = json.loads(path.read_text())
    assert obj["n_det"] == verdict.n_det
    assert len(obj["passes"]) == len(data_pool)
