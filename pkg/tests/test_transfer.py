from types import SimpleNamespace

import numpy as np
import pytest

from numeral_transfer import checkpoint, nn, train, transfer
from numeral_transfer.data import stratified_split
from numeral_transfer.errors import FingerprintMismatchError, FrozenDriftError, ModelError
from numeral_transfer.synth import generate_synthetic
from numeral_transfer.train import TrainConfig
from numeral_transfer.transfer import TransferConfig


def small(seed=0):
    return nn.build_model(seed, conv=(4, 4), dense=(16,))


def feature_bytes(model):
    return [p[k].tobytes() for p, c in zip(model.params, model.clusters)
            if p is not None and c == nn.FEATURE_EXTRACTOR for k in ("W", "b")]


def all_bytes(model):
    return [p[k].tobytes() for p in model.params if p is not None for k in ("W", "b")]


# ------------------------------------------------------------------ freezing

def test_freezing_table1_leaves_four_trainable_layers():
    m = transfer.freeze_feature_extractor(nn.build_model(0))
    trainable = [s.kind for s, t in zip(m.specs, m.trainable) if t and s.has_params]
    assert trainable == [nn.DENSE, nn.DENSE, nn.DENSE, nn.OUTPUT]


def test_frozen_trainable_count_matches_shape_arithmetic():
    dense_in = [16 * 16 * 32, 512, 256, 128]
    dense_out = [512, 256, 128, 10]
    oracle = sum(i * o + o for i, o in zip(dense_in, dense_out))
    assert oracle == 4_194_816 + 131_328 + 32_896 + 1_290 == 4_360_330
    m = nn.build_model(0)
    assert m.param_count(trainable_only=True) == 4_453_290
    transfer.freeze_feature_extractor(m)
    assert m.param_count(trainable_only=True) == oracle
    assert m.param_count() == 4_453_290


def test_freezing_is_idempotent():
    m = transfer.freeze_feature_extractor(small())
    flags = list(m.trainable)
    assert transfer.freeze_feature_extractor(m).trainable == flags


def test_freezing_needs_both_clusters():
    stub = SimpleNamespace(clusters=[nn.CLASSIFIER, nn.CLASSIFIER], trainable=[True, True])
    with pytest.raises(ModelError):
        transfer.freeze_feature_extractor(stub)


# ---------------------------------------------------------------- classifier

def test_retain_leaves_everything_bitwise():
    m = transfer.freeze_feature_extractor(small())
    before = all_bytes(m)
    transfer.prepare_classifier(m, transfer.RETAIN, seed=1)
    assert all_bytes(m) == before


def test_reinitialize_redraws_only_the_classifier():
    m = transfer.freeze_feature_extractor(small())
    feats = feature_bytes(m)
    head = [m.params[i]["W"].tobytes() for i, c in enumerate(m.clusters)
            if c == nn.CLASSIFIER and m.params[i] is not None]
    transfer.prepare_classifier(m, transfer.REINITIALIZE, seed=1)
    assert feature_bytes(m) == feats
    new_head = [m.params[i]["W"].tobytes() for i, c in enumerate(m.clusters)
                if c == nn.CLASSIFIER and m.params[i] is not None]
    assert all(a != b for a, b in zip(head, new_head))
    assert m.params[-1]["W"].dtype == np.float32


def test_reinitialize_is_seeded():
    a = transfer.prepare_classifier(transfer.freeze_feature_extractor(small()), transfer.REINITIALIZE, 5)
    b = transfer.prepare_classifier(transfer.freeze_feature_extractor(small()), transfer.REINITIALIZE, 5)
    c = transfer.prepare_classifier(transfer.freeze_feature_extractor(small()), transfer.REINITIALIZE, 6)
    assert all_bytes(a) == all_bytes(b) != all_bytes(c)


def test_unknown_classifier_mode():
    with pytest.raises(ModelError):
        transfer.prepare_classifier(small(), "finetune", 0)


def test_frozen_unchanged_detects_a_single_ulp():
    a = small()
    b = a.copy()
    assert transfer.frozen_unchanged(a, b)
    b.params[1]["W"].flat[3] = np.nextafter(b.params[1]["W"].flat[3], np.float32(np.inf))
    assert not transfer.frozen_unchanged(a, b)
    c = a.copy()
    c.params[-1]["W"] += 1.0  # classifier changes do not count
    assert transfer.frozen_unchanged(a, c)


# ------------------------------------------------------------- transfer_fit

@pytest.fixture(scope="module")
def source_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "src.nxfr"
    ds = stratified_split(generate_synthetic("A", 6, seed=0), 0.2, seed=0)
    best, _ = train.fit(small(), ds, TrainConfig(epochs=2, batch_size=16))
    checkpoint.save(best, {"script": "synthA", "seed": 0}, path)
    return path


@pytest.fixture(scope="module")
def target():
    return stratified_split(generate_synthetic("B", 6, seed=1), 0.2, seed=1)


def tcfg(ckpt, target, **kw):
    kw.setdefault("epochs", 3)
    kw.setdefault("expect_fingerprint", None)
    return TransferConfig(source_checkpoint=ckpt, target_dataset=target,
                          train=TrainConfig(batch_size=16, seed=2), **kw)


def test_synthetic_transfer_contract(source_ckpt, target):
    best, rep = transfer.transfer_fit(tcfg(source_ckpt, target))
    assert rep.frozen_unchanged is True
    assert len(rep.run.records) == 3
    assert (rep.source_script, rep.target_script) == ("synthA", "synthB")
    source, _ = checkpoint.load(source_ckpt)
    assert feature_bytes(best) == feature_bytes(source)
    s = rep.summary()
    assert s["classifier_init"] == "reinitialize" and s["frozen_unchanged"] is True
    assert "accuracy_at_10" in s


def test_transfer_is_deterministic(source_ckpt, target):
    b1, r1 = transfer.transfer_fit(tcfg(source_ckpt, target))
    b2, r2 = transfer.transfer_fit(tcfg(source_ckpt, target))
    assert r1.run == r2.run and all_bytes(b1) == all_bytes(b2)


def test_retain_mode_starts_from_the_source_classifier(source_ckpt, target, monkeypatch):
    captured = {}

    def spy(model, dataset, config, on_epoch=None):
        captured["model"] = model.copy()
        return model, train.RunReport.from_records([train.EpochRecord(1, 0.0, 1.0, 1.0)])

    monkeypatch.setattr(transfer, "fit", spy)
    transfer.transfer_fit(tcfg(source_ckpt, target, classifier_init=transfer.RETAIN))
    source, _ = checkpoint.load(source_ckpt)
    assert all_bytes(captured["model"]) == all_bytes(source)
    assert [t for t in captured["model"].trainable] == [c == nn.CLASSIFIER for c in source.clusters]


def test_table1_fingerprint_is_demanded_by_default(source_ckpt, target):
    cfg = TransferConfig(source_checkpoint=source_ckpt, target_dataset=target, epochs=1)
    with pytest.raises(FingerprintMismatchError):
        transfer.transfer_fit(cfg)


def test_drift_is_a_hard_failure(source_ckpt, target, monkeypatch):
    real_fit = transfer.fit

    def drifting_fit(model, dataset, config, on_epoch=None):
        best, rep = real_fit(model, dataset, config, on_epoch)
        best.params[0]["W"] += np.float32(1e-3)
        return best, rep

    monkeypatch.setattr(transfer, "fit", drifting_fit)
    with pytest.raises(FrozenDriftError):
        transfer.transfer_fit(tcfg(source_ckpt, target, epochs=1))
