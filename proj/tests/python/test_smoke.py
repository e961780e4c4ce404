"""End-to-end smoke checks for the python bindings."""

import math

import pytest

import capsrec


@pytest.fixture(scope="module")
def corpus():
    data = capsrec.synthesize(
        n_accounts=15,
        n_items=40,
        users_per_account=2,
        sequences_per_account=4,
        seq_len_min=4,
        seq_len_max=8,
        seed=7,
    )
    return capsrec.split_train_test(data, 0.8, 7)


MODEL_KW = dict(d1=4, d2=4, alpha=2, layers=1, theta=2, epochs=2, seed=7)


def test_dataset_shape(corpus):
    assert corpus.n_accounts == 15
    assert 0 < corpus.n_items <= 40
    assert corpus.n_sequences == 60
    assert corpus.has_labels
    assert len(corpus.train_indices()) + len(corpus.test_indices()) == 60
    assert "Dataset(" in repr(corpus)


def test_dataset_round_trip(tmp_path, corpus):
    path = tmp_path / "data.tsv"
    corpus.save(str(path))
    back = capsrec.load_dataset(str(path))
    assert back.n_accounts == corpus.n_accounts
    assert back.n_items == corpus.n_items
    assert back.n_interactions == corpus.n_interactions


def test_training_and_evaluation(corpus):
    model = capsrec.Model(corpus, **MODEL_KW)
    log = model.train()
    assert len(log) == 2
    assert all(math.isfinite(row["loss_S"]) for row in log)
    assert all(row["loss_C"] >= 0.0 for row in log)

    report = model.evaluate()
    for key in ("recall@5", "recall@20", "mrr@5", "mrr@20"):
        assert 0.0 <= report[key] <= 1.0
    assert report["mrr@20"] <= report["recall@20"]
    assert report["n"] == len(corpus.test_indices())

    baseline = model.evaluate_popularity()
    assert 0.0 <= baseline["recall@20"] <= 1.0

    assert 0.0 <= model.attribution_accuracy() <= 1.0


def test_determinism(corpus):
    a = capsrec.Model(corpus, **MODEL_KW)
    a.train()
    b = capsrec.Model(corpus, **MODEL_KW)
    b.train()
    assert a.evaluate() == b.evaluate()


def test_checkpoint_round_trip(tmp_path, corpus):
    model = capsrec.Model(corpus, **MODEL_KW)
    model.train()
    path = tmp_path / "checkpoint.txt"
    model.save(str(path))
    restored = capsrec.Model.load(str(path), corpus)
    assert restored.evaluate() == model.evaluate()
    assert restored.param_count == model.param_count


def test_param_count_matches_closed_form(corpus):
    model = capsrec.Model(corpus, **MODEL_KW)
    expected = capsrec.expected_param_count(
        n_items=corpus.n_items, n_accounts=corpus.n_accounts, **MODEL_KW
    )
    assert model.param_count == expected


def test_config_validation(corpus):
    with pytest.raises(ValueError):
        capsrec.Model(corpus, no_such_key=1)
    with pytest.raises(ValueError):
        capsrec.Model(corpus, alpha=0)
    with pytest.raises(ValueError):
        capsrec.synthesize(n_items=1, users_per_account=2)
