import json

import pytest

import l2e


SMALL = "T=3\ntasks_per_batch=2\neval_every=1\nseeds=0,1\nbudget=600\nbaselines=random,de\ntheory_trials=10\n"


def test_families_and_optimum():
    assert "Sphere" in l2e.families()
    assert len(l2e.families()) == 8
    values = l2e.evaluate_function("Sphere", 2, 0, [[0.0, 0.0], [1.0, 1.0]])
    assert len(values) == 2
    assert all(v >= 0 for v in values)


def test_config_round_trip_and_errors():
    text = l2e.default_config()
    assert l2e.normalize_config(text) == text
    assert len(l2e.config_hash(text)) == 16
    assert l2e.config_hash("T=7\n") != l2e.config_hash(text)
    with pytest.raises(l2e.ConfigError, match="foo"):
        l2e.normalize_config("foo=1\n")


def test_train_evaluate_ecdf(tmp_path):
    out = l2e.meta_train(SMALL, tmp_path / "train")
    assert len(out["meta_loss"]) == 3
    assert max(out["spectral_max"]) <= 1 + 1e-6

    records = l2e.evaluate(SMALL, out["checkpoint"])
    assert len(records) == 3 * 2 * 2
    assert {r["method"] for r in records} == {"l2e", "random", "de"}
    assert all(r["evaluations"] == 600 for r in records)

    again = l2e.evaluate(SMALL, out["checkpoint"], with_baselines=False)
    assert [r["final_best"] for r in again] == [r["final_best"] for r in records[:4]]

    with pytest.raises(l2e.ConfigError):
        l2e.evaluate(SMALL.replace("T=3", "T=4"), out["checkpoint"])


def test_budget_too_small():
    with pytest.raises(l2e.ConfigError, match="496"):
        l2e.evaluate(SMALL.replace("budget=600", "budget=100"))


def test_theory_report():
    report = json.loads(l2e.verify_theory(SMALL))
    assert all(r["passed"] for r in report)
    names = [r["check"] for r in report]
    assert "learned_block_lipschitz" in names
    assert len(names) == 6


def test_sign_test():
    wins, losses, ties, p = l2e.sign_test([0.0] * 6, [1.0] * 6)
    assert (wins, losses, ties) == (6, 0, 0)
    assert p == pytest.approx(2 / 64)
