import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfdna.cgan import CganConfig
from rfdna.harness import (SEED_OFFSETS, ExperimentConfig, MetricsRecord, ModelStore, clean_accuracy,
                           component_seed, full_config, generate_dataset, load_config, report, run_experiment,
                           run_traditional, train_awgn_classifier)
from rfdna.harness import cli, pipelines
from rfdna.jcaecnn import JcaecnnConfig
from rfdna.nncore import TrainConfig
from rfdna.waveform import MinMaxStats, to_iqnl


def tiny(**kw):
    base = dict(n_emitters=2, n_preambles=10, split=0.8, snr_grid_db=[20.0, 30.0], n_noise=1, n_candidates=2,
                classifier=TrainConfig(epochs=2, batch_size=8), cnn_d=TrainConfig(epochs=1, batch_size=8),
                cgan=CganConfig(epochs=1, batch_size=8, patience=0),
                jcaecnn=JcaecnnConfig(epochs=1, batch_size=8, growth=4, code_channels=8))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def ds():
    return generate_dataset(tiny(n_preambles=20, split=0.9, n_noise=2))


def test_split_sizes():
    cfg = full_config(n_emitters=4)
    assert (cfg.n_train, cfg.n_test) == (1800, 200)
    assert cfg.n_emitters * cfg.n_noise * cfg.n_test == 8000


def test_dataset_layout(ds):
    cfg = ds.cfg
    assert len(ds.labels) == 40 and ds.clean.shape == (40, 320)
    for e in range(2):
        assert np.sum(ds.labels[ds.train_idx] == e) == 18
        assert np.sum(ds.labels[ds.test_idx] == e) == 2
    assert not set(ds.train_idx) & set(ds.test_idx)
    assert sorted(np.concatenate([ds.train_idx, ds.test_idx])) == list(range(40))
    for s in cfg.snr_grid_db:
        assert ds.received[s].shape == (2, 40, 320)
    assert len({row.tobytes() for row in ds.coeffs}) == len(ds.coeffs)


def test_stats_from_training_only(ds):
    tr = ds.train_idx
    parts = [to_iqnl(d[s][:, tr]).reshape(-1, 4, 320) for d in (ds.received, ds.awgn) for s in ds.cfg.snr_grid_db]
    ref = MinMaxStats.fit(np.concatenate(parts))
    np.testing.assert_array_equal(ds.stats.lo, ref.lo)
    np.testing.assert_array_equal(ds.stats.hi, ref.hi)


def test_dataset_deterministic(ds):
    again = generate_dataset(ds.cfg)
    np.testing.assert_array_equal(again.received[30.0], ds.received[30.0])
    np.testing.assert_array_equal(again.coeffs, ds.coeffs)
    other = generate_dataset(ds.cfg.with_seed(1))
    assert not np.array_equal(other.coeffs, ds.coeffs)


def test_seed_fan_out():
    seeds = {c: component_seed(7, c) for c in SEED_OFFSETS}
    assert len(set(seeds.values())) == len(seeds)
    assert seeds == {c: component_seed(7, c) for c in SEED_OFFSETS}
    assert component_seed(8, "noise") != seeds["noise"]


def test_config_validation_and_loading(tmp_path):
    for bad in (dict(split=1.0), dict(snr_grid_db=[]), dict(pipelines=["svm"]), dict(n_noise=0)):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)
    p = tmp_path / "c.yaml"
    p.write_text("n_emitters: 8\nsnr_grid_db: [9, 12]\ncgan:\n  epochs: 3\n")
    cfg = load_config(p)
    assert cfg.n_emitters == 8 and cfg.snr_grid_db == [9.0, 12.0] and cfg.cgan.epochs == 3
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    p.write_text("full: true\nn_emitters: 16\n")
    cfg = load_config(p)
    assert cfg.n_preambles == 2000 and cfg.n_emitters == 16 and len(cfg.snr_grid_db) == 8
    p.write_text("n_emiters: 4\n")
    with pytest.raises(ValueError, match="n_emiters"):
        load_config(p)
    assert tiny().jcaecnn_snr == 20.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=1, max_size=60))))
def test_metrics_trace_over_total(args):
    n, pairs = args
    yt, yp = zip(*pairs)
    r = MetricsRecord.from_predictions(9.0, yt, yp, n)
    assert r.accuracy == np.trace(r.confusion) / len(pairs)
    assert r.accuracy == np.mean(np.array(yt) == np.array(yp))
    np.testing.assert_array_equal(r.confusion.sum(axis=1), np.bincount(yt, minlength=n))
    assert MetricsRecord.from_dict(json.loads(json.dumps(r.to_dict()))).accuracy == r.accuracy


def _perfect_metrics():
    recs = []
    for s in (9.0, 18.0, 30.0):
        y = np.repeat(np.arange(4), 5)
        recs.append(MetricsRecord.from_predictions(s, y, y, 4, [Counter(votes=6)] * len(y)))
    return {"jcaecnn": recs}


def test_report_files(tmp_path):
    m = _perfect_metrics()
    files = report(m, tmp_path / "a", plots=True)
    names = {p.name for p in files}
    assert {"accuracy_jcaecnn.csv", "confusion_jcaecnn_9dB.csv", "summary.csv", "accuracy_vs_snr.png"} <= names
    rows = (tmp_path / "a" / "accuracy_jcaecnn.csv").read_text().splitlines()
    assert len(rows) - 1 == 3
    conf = np.loadtxt(tmp_path / "a" / "confusion_jcaecnn_30dB.csv", delimiter=",", skiprows=1)[:, 1:]
    assert np.array_equal(conf, np.diag(np.diag(conf))) and conf.trace() == 20
    report(m, tmp_path / "b", plots=False)
    for p in (tmp_path / "b").glob("*.csv"):
        assert p.read_bytes() == (tmp_path / "a" / p.name).read_bytes()
    assert "jcaecnn,9,votes_per_decision,6" in (tmp_path / "a" / "summary.csv").read_text()


def test_traditional_noiseless_identity():
    cfg = tiny(L=1, snr_grid_db=[300.0], pipelines=["trad"], classifier=TrainConfig(epochs=15, batch_size=8))
    d = generate_dataset(cfg)
    d.coeffs = np.ones_like(d.coeffs)
    d.received = {300.0: d.clean[None].copy()}
    d.awgn = {300.0: d.clean[None].copy()}
    store = ModelStore()
    cnn = store.get("awgn_cnn", lambda: train_awgn_classifier(d))
    (rec,) = run_traditional(d, store)
    assert rec.accuracy == clean_accuracy(d, cnn)
    assert rec.ops_per_decision == {"classifications": (1, 1), "estimations": (2 * 2, 2 * 2)}


def test_candidates_come_from_training(ds, monkeypatch):
    seen = []
    real = pipelines.traditional_decision

    def spy(d, cnn, r, snr, cand_idx, counter, nm_opts):
        seen.append(np.asarray(cand_idx))
        return real(d, cnn, r, snr, cand_idx, counter, nm_opts)

    monkeypatch.setattr(pipelines, "traditional_decision", spy)
    recs = run_traditional(ds)
    assert len(seen) == len(ds.test_idx) * ds.cfg.n_noise * len(ds.cfg.snr_grid_db)
    train = set(ds.train_idx)
    for c in seen:
        assert len(c) == ds.cfg.n_candidates * ds.cfg.n_emitters
        assert set(c) <= train
    assert all(r.n_decisions == len(ds.test_idx) * ds.cfg.n_noise for r in recs)
    assert recs[0].ops_per_decision["estimations"] == (4, 4)


@pytest.fixture(scope="module")
def experiment():
    d = generate_dataset(tiny())
    store = ModelStore()
    return d, store, run_experiment(d, store)


def test_experiment_shape_and_counters(experiment):
    d, store, res = experiment
    cfg = d.cfg
    assert sorted(res["metrics"]) == sorted(cfg.pipelines)
    for name, recs in res["metrics"].items():
        assert [r.snr_db for r in recs] == cfg.snr_grid_db
        for r in recs:
            assert r.n_decisions == cfg.n_emitters * cfg.n_noise * cfg.n_test
    ops = {k: v[0].ops_per_decision for k, v in res["metrics"].items()}
    assert ops["trad"] == {"estimations": (4, 4), "classifications": (1, 1)}
    assert ops["cgan"] == {"equalizations": (2, 2), "classifications": (2, 2)}
    assert ops["jcaecnn"] == ops["o-jcaecnn"] == {"votes": (6, 6)}
    assert res["grid"].accuracy.shape == (2, 2)
    assert 0 <= res["clean_accuracy"] <= 1


def test_optimized_weights_used(experiment):
    _, store, _ = experiment
    assert store.models["o-jcaecnn"].meta["lambda_k"] == [32.0, 16.0, 8.0, 4.0, 2.0]
    assert store.models["o-jcaecnn"].meta["lambda_c"] == 32.0
    assert store.models["jcaecnn"].meta["lambda_k"] == [1.0] * 5


def test_model_store_round_trip(tmp_path, experiment):
    d, store, _ = experiment
    disk = ModelStore(tmp_path)
    calls = Counter()

    def train():
        calls["n"] += 1
        return store.models["awgn_cnn"]

    disk.get("awgn_cnn", train)
    assert (tmp_path / "awgn_cnn.rfnn").exists()
    fresh = ModelStore(tmp_path).get("awgn_cnn", train)
    assert calls["n"] == 1
    x = d.tensors(d.clean[:3])[:, None]
    np.testing.assert_allclose(fresh.predict(x), store.models["awgn_cnn"].predict(x), atol=1e-6)


def _write_cfg(path, **kw):
    path.write_text(json.dumps(tiny(**kw).to_dict()))
    return str(path)


def test_cli_error_line(tmp_path, capsys):
    code = cli.main(["evaluate", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")])
    assert code != 0
    line = capsys.readouterr().err.strip().splitlines()[-1]
    err = json.loads(line)
    assert err["command"] == "evaluate" and err["error"] == "FileNotFoundError"


def test_cli_generate_and_reproducible_evaluate(tmp_path):
    cfg = _write_cfg(tmp_path / "c.json", pipelines=["trad", "jcaecnn"])
    assert cli.main(["generate", "--config", cfg, "--out", str(tmp_path / "g")]) == 0
    with np.load(tmp_path / "g" / "dataset.npz") as z:
        assert z["labels"].shape == (20,)
    for run in ("r1", "r2"):
        assert cli.main(["evaluate", "--config", cfg, "--out", str(tmp_path / run), "--no-plots"]) == 0
    csvs = sorted(p.name for p in (tmp_path / "r1").glob("accuracy_*.csv"))
    assert csvs == ["accuracy_jcaecnn.csv", "accuracy_trad.csv"]
    for p in (tmp_path / "r1").glob("*.csv"):
        assert p.read_bytes() == (tmp_path / "r2" / p.name).read_bytes(), p.name
    assert cli.main(["report", "--out", str(tmp_path / "rep"), "--metrics", str(tmp_path / "r1" / "metrics.json"),
                     "--no-plots"]) == 0
    assert (tmp_path / "rep" / "accuracy_trad.csv").read_bytes() == (tmp_path / "r1" / "accuracy_trad.csv").read_bytes()


def test_cli_train_then_grid_search(tmp_path):
    cfg = _write_cfg(tmp_path / "c.json", pipelines=["cgan"])
    models = str(tmp_path / "m")
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "t"), "--models", models]) == 0
    assert (tmp_path / "m" / "cgan_G_20dB.rfnn").exists()
    assert cli.main(["grid-search", "--config", cfg, "--out", str(tmp_path / "gs"), "--models", models]) == 0
    rows = (tmp_path / "gs" / "grid_search.csv").read_text().splitlines()
    assert rows[0] == "train_snr_db,test_snr_db,accuracy,best_for_test" and len(rows) == 5


def test_yaml_exponent_floats(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("classifier:\n  lr: 1e-4\n  epochs: 2\n")
    cfg = load_config(p)
    assert cfg.classifier.lr == 1e-4 and isinstance(cfg.classifier.lr, float)
