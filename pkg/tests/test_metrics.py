import numpy as np
import pytest

from gradsep.metrics import (ScoredSample, auroc, ccr_at_fpr, fpr_at_tpr,
                             metric_triple)


def brute_auroc(id_scores, ood_scores):
    total = 0.0
    for a in id_scores:
        for b in ood_scores:
            if a > b:
                total += 1.0
            elif a == b:
                total += 0.5
    return total / (len(id_scores) * len(ood_scores))


def brute_fpr_at_tpr(id_scores, ood_scores, tpr):
    id_scores = np.asarray(id_scores)
    ood_scores = np.asarray(ood_scores)
    best = None
    for t in np.concatenate([id_scores, ood_scores]):
        if (id_scores >= t).mean() >= tpr and (best is None or t > best):
            best = t
    return (ood_scores >= best).mean()


def brute_ccr_at_fpr(samples, fpr):
    ood = np.asarray([s.score for s in samples if not s.is_id])
    ids = [s for s in samples if s.is_id]
    threshold = np.nextafter(ood.max(), np.inf)
    for t in sorted(ood):
        if (ood >= t).mean() <= fpr:
            threshold = t
            break
    return sum(s.score >= threshold and bool(s.pred_correct)
               for s in ids) / len(ids)


def random_samples(rng, discrete=False):
    n = int(rng.integers(1, 60))
    m = int(rng.integers(1, 60))
    if discrete:  # force ties
        id_scores = rng.integers(0, 8, n).astype(float)
        ood_scores = rng.integers(0, 8, m).astype(float)
    else:
        id_scores = rng.standard_normal(n)
        ood_scores = rng.standard_normal(m)
    samples = [ScoredSample(f"i{j}", float(s), True, bool(rng.integers(2)))
               for j, s in enumerate(id_scores)]
    samples += [ScoredSample(f"o{j}", float(s), False)
                for j, s in enumerate(ood_scores)]
    return samples, id_scores, ood_scores


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([2, 3], [0, 1]) == 1.0

    def test_identical_multisets(self):
        assert auroc([1, 2, 2, 5], [1, 2, 2, 5]) == 0.5

    def test_hand_pairs(self):
        assert auroc([1, 3], [2, 2]) == 0.5

    def test_equals_brute_force(self):
        rng = np.random.default_rng(0)
        for case in range(200):
            _, id_s, ood_s = random_samples(rng, discrete=(case % 2 == 0))
            assert auroc(id_s, ood_s) == brute_auroc(list(id_s), list(ood_s))

    def test_complement(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            _, id_s, ood_s = random_samples(rng, discrete=True)
            assert auroc(id_s, ood_s) + auroc(ood_s, id_s) == 1.0

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            auroc([], [1.0])


class TestFprAtTpr:
    def test_perfect_separation(self):
        assert fpr_at_tpr([10, 11, 12], [1, 2, 3]) == 0.0

    def test_identical_multisets(self):
        scores = list(range(20))
        val = fpr_at_tpr(scores, scores, tpr=0.95)
        assert val >= 0.95
        assert val == brute_fpr_at_tpr(scores, scores, 0.95)

    def test_hand_sweep(self):
        id_s = list(range(1, 21))
        ood_s = [0.5, 1.5, 18.5]
        assert abs(fpr_at_tpr(id_s, ood_s, tpr=0.95) - 1 / 3) < 1e-12

    def test_equals_sweep_oracle(self):
        rng = np.random.default_rng(2)
        for case in range(200):
            _, id_s, ood_s = random_samples(rng, discrete=(case % 2 == 0))
            for tpr in (0.5, 0.8, 0.95):
                assert fpr_at_tpr(id_s, ood_s, tpr) \
                    == brute_fpr_at_tpr(id_s, ood_s, tpr)

    def test_nonincreasing_in_tpr(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            _, id_s, ood_s = random_samples(rng)
            vals = [fpr_at_tpr(id_s, ood_s, t)
                    for t in (0.5, 0.7, 0.9, 0.95, 0.99)]
            # higher tpr forces a lower threshold, so fpr cannot drop
            assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestCcrAtFpr:
    def test_perfect(self):
        samples = [ScoredSample("a", 5.0, True, True),
                   ScoredSample("b", 6.0, True, True),
                   ScoredSample("c", 1.0, False)]
        assert ccr_at_fpr(samples, fpr=0.10) == 1.0

    def test_all_wrong_predictions(self):
        samples = [ScoredSample("a", 5.0, True, False),
                   ScoredSample("c", 1.0, False)]
        assert ccr_at_fpr(samples, fpr=0.10) == 0.0

    def test_hand_sweep(self):
        samples = [ScoredSample(f"o{v}", float(v), False)
                   for v in range(1, 11)]
        samples += [ScoredSample("a", 5.5, True, True),
                    ScoredSample("b", 9.5, True, True),
                    ScoredSample("c", 10.5, True, True)]
        assert abs(ccr_at_fpr(samples, fpr=0.10) - 1 / 3) < 1e-12

    def test_equals_sweep_oracle(self):
        rng = np.random.default_rng(4)
        for case in range(200):
            samples, _, _ = random_samples(rng, discrete=(case % 2 == 0))
            for fpr in (0.05, 0.1, 0.3):
                assert ccr_at_fpr(samples, fpr) \
                    == brute_ccr_at_fpr(samples, fpr)

    def test_needs_both_kinds(self):
        with pytest.raises(ValueError):
            ccr_at_fpr([ScoredSample("a", 1.0, True, True)])


class TestMonotoneInvariance:
    @pytest.mark.parametrize("transform", [np.exp,
                                           lambda x: 3.0 * x + 7.0])
    def test_all_metrics_invariant(self, transform):
        rng = np.random.default_rng(5)
        for _ in range(30):
            samples, id_s, ood_s = random_samples(rng)
            before = metric_triple(samples)
            mapped = [ScoredSample(s.id, float(transform(s.score)), s.is_id,
                                   s.pred_correct) for s in samples]
            after = metric_triple(mapped)
            assert abs(before.auroc - after.auroc) < 1e-9
            assert abs(before.fpr95 - after.fpr95) < 1e-9
            assert abs(before.ccr_at_fpr10 - after.ccr_at_fpr10) < 1e-9


def test_metric_triple_ranges():
    rng = np.random.default_rng(6)
    samples, _, _ = random_samples(rng)
    triple = metric_triple(samples)
    for v in (triple.ccr_at_fpr10, triple.fpr95, triple.auroc):
        assert 0.0 <= v <= 100.0
