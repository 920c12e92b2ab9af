"""Smoke tests for the Python module: exercises every major operation once
and checks a handful of closed-form values."""

import json
import math
import sys

import steerlab as sl


def approx(a, b, tol=1e-9):
    assert abs(a - b) < tol, f"{a} != {b} (tol {tol})"


def main():
    # dataset construction and entropy
    ds = sl.make_symmetric_dataset(9, 3, 4, 0.1, 4, seed=1)
    assert ds.num_contexts == 12
    assert ds.partition.concept_of(4) == 1
    approx(sl.dataset_entropy(ds), 1.4930099801155525, 1e-12)

    p = sl.next_token_distribution(ds, 0)
    approx(sum(p), 1.0, 1e-12)
    approx(p[0], 0.3, 1e-12)
    approx(p[8], 1.0 / 60.0, 1e-12)

    # json round trip
    ds2 = sl.dataset_from_json(ds.to_json())
    assert ds2.to_json() == ds.to_json()

    # perfect fit and cross-entropy
    params = sl.analytic_perfect_fit(ds)
    approx(sl.cross_entropy(params, ds), sl.dataset_entropy(ds), 1e-10)
    sigma_gap = max(
        abs(a - b)
        for j in range(12)
        for a, b in zip(softmax(sl.logits(params, j)), sl.next_token_distribution(ds, j))
    )
    assert sigma_gap < 1e-12, sigma_gap

    # a short training run moves the loss toward the entropy floor
    trained, trace = sl.train_gd(ds, steps=300, seed=5)
    assert trace[-1] < trace[0]
    assert trace[-1] >= sl.dataset_entropy(ds) - 1e-10

    # steering machinery
    sets = sl.build_index_sets(ds, 0, "contrastive", 4, seed=2)
    assert set(sets.positive).isdisjoint(sets.negative)
    profile = sl.log_odds(ds, sets)
    approx(profile.max_value, math.log(18.0), 1e-12)
    assert profile.argmax_set == [0, 1, 2]

    vec = sl.steering_vector(params, sets)
    approx(vec[0], math.log(18.0), 1e-12)

    j_neutral = next(i for i, c in enumerate(ds.contexts) if c.concept_label == 2)
    tilted = sl.steered_probs_closed_form(ds, profile, j_neutral, 3.0)
    path = softmax(sl.steered_logits(params, vec, j_neutral, 3.0))
    assert max(abs(a - b) for a, b in zip(tilted, path)) < 1e-10

    # alpha analysis
    approx(sl.delta_p(ds, profile, j_neutral, 0, 0.0), 0.0, 1e-14)
    approx(sl.delta_p(ds, profile, j_neutral, 0, 100.0), 1.0 / 3.0 - 1.0 / 60.0, 1e-6)
    approx(sl.expected_log_odds(ds, profile, j_neutral, 0.0), 0.0, 1e-13)

    peak = sl.peak_alpha(ds, profile, j_neutral, 6)
    assert peak.kind == "finite" and abs(peak.alpha) < 1e-12
    assert sl.peak_alpha(ds, profile, j_neutral, 0).kind == "+inf"

    parts = sl.tanh_decomposition(ds, profile, j_neutral, 0, 5.0)
    approx(parts.intercept, math.log(0.05 / 0.95), 1e-12)
    assert parts.reconstruction_error < 1e-6

    approx(sl.ce_quadratic_coefficient(ds, profile), 0.7727680231430482, 1e-12)
    assert sl.delta_ce(ds, params, vec, 0.5) > 0.0

    grid = sl.logsym_alpha_grid(1e-3, 1e2, 200)
    assert len(grid) == 401 and grid[200] == 0.0

    # toy transformer
    model = sl.make_transformer(layers=2, dim=16, vocab=50, seq_len=8, norm="rmsnorm", seed=40)
    direction = sl.make_direction(16, 41)
    prompt = [4, 8, 15, 16, 23, 42, 3, 9]
    logits0 = sl.forward(model, prompt)
    assert len(logits0) == 8 and len(logits0[0]) == 50
    assert sl.forward_steered(model, prompt, 1, direction, 0.0) == logits0
    assert sl.softmax_gap(model, prompt, 1, direction, 1e6) < 1e-4

    limit = sl.limit_logits(model, direction, 1)
    assert len(limit) == 50

    alphas, sups, peak_entry = sl.remainder_bound_probe(
        model, prompt, 1, direction, [1e2, 1e4, 1e6]
    )
    assert sups[2] / sups[1] <= 1.05

    corpus = sl.sample_sequences(6, 8, 50, seed=11)
    base_ce = sl.corpus_cross_entropy(model, corpus)
    trained_trace = sl.train_toy_gd(model, corpus, learning_rate=0.3, steps=20)
    assert trained_trace[-1] < base_ce

    # config plumbing and the full invariant suite
    config = json.loads(sl.default_config_json())
    assert config["dataset"]["V"] == 9
    report = json.loads(sl.verify_all())
    assert report["pass"], [c for c in report["checks"] if not c["pass"]]

    print("python smoke: all checks passed")
    return 0


def softmax(xs):
    m = max(xs)
    exps = [math.exp(x - m) for x in xs]
    total = sum(exps)
    return [e / total for e in exps]


if __name__ == "__main__":
    sys.exit(main())
