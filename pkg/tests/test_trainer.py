import json

import numpy as np
import pytest

from umil.division import DivisionConfig
from umil.numerics import NumericalError, OptimizerConfig
from umil.trainer import RunConfig, Trainer, pretrain_mil, run, train_umil_epoch


def _cfg(**kw):
    base = dict(epochs_mil=3, epochs_umil=2, hidden_dims=[8], output_dim=4, optimizer=OptimizerConfig(lr_base=2e-3))
    base.update(kw)
    return RunConfig(**base)


def _params(model):
    return {n: p.value.copy() for n, p in model.params.items()}


def test_zero_mil_epochs_keeps_seeded_init(small_data):
    ds, _ = small_data
    t = pretrain_mil(ds, _cfg(epochs_mil=0))
    fresh = Trainer(ds, _cfg(epochs_mil=0))
    assert all(np.array_equal(t.model.params[n].value, fresh.model.params[n].value) for n in t.model.params)


def test_mil_pretraining_lowers_loss(small_data):
    ds, _ = small_data
    t = Trainer(ds, _cfg(epochs_mil=30))
    first = t.mil_epoch().losses["mil"]
    for _ in range(29):
        last = t.mil_epoch().losses["mil"]
    assert last < first
    assert all(c == 5 for c in t.history.count)


def test_same_seed_same_parameters(small_data):
    ds, _ = small_data
    a, b = Trainer(ds, _cfg()), Trainer(ds, _cfg())
    for t in (a, b):
        t.pretrain_mil()
        t.train_umil()
    assert all(np.array_equal(a.model.params[n].value, b.model.params[n].value) for n in a.model.params)
    c = Trainer(ds, _cfg(seed=1))
    c.pretrain_mil()
    assert not np.array_equal(a.model.params["f.W"].value, c.model.params["f.W"].value)


def test_frozen_encoder_unchanged(small_data):
    ds, _ = small_data
    t = pretrain_mil(ds, _cfg(freeze_encoder=True))
    enc = [p.value.copy() for p in t.model.encoder_params()]
    head = [p.value.copy() for p in t.model.head_params()]
    train_umil_epoch(t)
    assert all(np.array_equal(a, p.value) for a, p in zip(enc, t.model.encoder_params()))
    assert any(not np.array_equal(a, p.value) for a, p in zip(head, t.model.head_params()))


def test_umil_epoch_report(small_data):
    ds, _ = small_data
    t = pretrain_mil(ds, _cfg())
    rep = t.umil_epoch()
    n = sum(v.fine_snippet_count for v in ds.videos("train"))
    assert rep.phase == "umil" and rep.n_confident + rep.n_ambiguous == n
    assert rep.n_confident == round(0.3 * n)
    assert set(rep.losses) == {"c", "af", "ag", "st", "ent", "total"}
    assert all(np.isfinite(v) for v in rep.losses.values())
    assert json.loads(json.dumps(rep.to_json()))["epoch"] == 3


def test_pair_terms_skipped_when_ambiguous_set_tiny(small_data, caplog):
    ds, _ = small_data
    t = pretrain_mil(ds, _cfg(division=DivisionConfig(confident_fraction=1.0)))
    rep = t.umil_epoch()
    assert rep.pair_terms_skipped and rep.n_ambiguous == 0
    assert rep.losses["af"] == rep.losses["ag"] == 0.0
    assert "pair terms skipped" in caplog.text


def test_per_snippet_supervision_runs(small_data):
    ds, _ = small_data
    t = pretrain_mil(ds, _cfg(c_supervision_mode="per_snippet"))
    assert np.isfinite(t.umil_epoch().losses["c"])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_raises(small_data):
    ds, _ = small_data
    t = Trainer(ds, _cfg())
    t.model.params["f.b"].value[0] = np.nan
    with pytest.raises(NumericalError, match="epoch 0, step 0"):
        t.mil_epoch()


def test_run_writes_artifacts(tmp_path, small_data):
    ds, _ = small_data
    rep = run(_cfg(), ds, tmp_path)
    for name in ("checkpoint_mil.json", "checkpoint_umil.json", "metrics.json", "metrics_mil.json", "epochs.jsonl"):
        assert (tmp_path / name).is_file()
    lines = (tmp_path / "epochs.jsonl").read_text().splitlines()
    assert [json.loads(x)["phase"] for x in lines] == ["mil"] * 3 + ["umil"] * 2
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["auc_overall"] == rep.auc_overall and "auc_abnormal" in doc


def test_zero_umil_epochs_equals_baseline(tmp_path, small_data):
    ds, _ = small_data
    run(_cfg(epochs_umil=0), ds, tmp_path / "a")
    run(_cfg(), ds, tmp_path / "b", mil_only=True)
    # the LR schedule spans both phases, so compare within each run
    for d in ("a", "b"):
        assert (tmp_path / d / "metrics.json").read_bytes() == (tmp_path / d / "metrics_mil.json").read_bytes()
    assert not (tmp_path / "b" / "checkpoint_umil.json").exists()


def test_run_without_output_dir_matches(tmp_path, small_data):
    ds, _ = small_data
    assert run(_cfg(), ds).dumps() == run(_cfg(), ds, tmp_path).dumps()


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(batch_size=1)
    with pytest.raises(ValueError):
        RunConfig(c_supervision_mode="top3")
    assert RunConfig(epochs_mil=7, epochs_umil=2).schedule().total_epochs == 9
