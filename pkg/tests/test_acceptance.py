"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The desk-scale training
criteria use the real corpus when PLASMODIUM_DATA_DIR points at it and
otherwise fall back to a generated synthetic stand-in at the same scale
(2,000 images); the full-scale reproduction criterion only runs when
PLASMODIUM_FULL_REPRODUCTION=1 gates it in on a machine with the corpus
and pretrained snapshots.
"""

import gc
import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from plasmodium.cnn import build_cnn_a, build_cnn_b
from plasmodium.dataset import (
    DatasetSplit,
    LabeledImage,
    SplitScheme,
    balanced_subset,
    ingest_corpus,
    make_split,
)
from plasmodium.metrics import ConfusionMatrix, auc_roc, confusion, render_report, report
from plasmodium.preprocess import (
    AugmentConfig,
    CNN_B_PROFILE,
    PreprocessProfile,
    SMALL_IMAGE_PROFILE,
    apply_params,
    AugmentParams,
    augment,
)
from plasmodium.train import CallbackConfig, TrainConfig, predict_images, train_model
from plasmodium.transfer import (
    Backbone,
    Regime,
    apply_regime,
    backbone_checksum,
    build_transfer_model,
    plan_regime,
    run_regime,
)

from conftest import stub_corpus
from test_metrics import concordance

ACCEPT = settings(max_examples=1000, deadline=None,
                  suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much,
                                         HealthCheck.data_too_large])

REAL_DATA = os.environ.get("PLASMODIUM_DATA_DIR")
DESK_SUBSET = 2000


def _pass(line: str) -> None:
    print(f"\nACCEPTANCE PASS: {line}")


# ----------------------------------------------------------------------
# Criterion: metrics oracle reproduction (fast, no training)
# ----------------------------------------------------------------------


def test_metrics_oracle_svm_counts():
    rep = report(ConfusionMatrix.from_rates(tn=2335, fp=421, fn=503, tp=2253))
    assert rep.accuracy == pytest.approx(0.8324, abs=5e-5)
    assert rep.mcc == pytest.approx(0.665, abs=1e-3)
    assert rep.fpr == pytest.approx(0.153, abs=5e-4)
    assert rep.fnr == pytest.approx(0.183, abs=5e-4)
    rows = [ln.split() for ln in render_report(rep).splitlines() if ln.strip()]
    assert rows[1] == ["uninfected", "0.82", "0.85", "0.83", "2756"]
    assert rows[2] == ["parasitized", "0.84", "0.82", "0.83", "2756"]
    assert rows[3] == ["accuracy", "0.83", "5512"]
    assert rows[4] == ["macro", "avg", "0.83", "0.83", "0.83", "5512"]
    assert rows[5] == ["weighted", "avg", "0.83", "0.83", "0.83", "5512"]
    _pass("SVM confusion counts reproduce accuracy 0.8324, MCC 0.665, FPR 0.153, FNR 0.183 and the published table")


def test_metrics_oracle_cnn_counts():
    rep1 = report(ConfusionMatrix.from_rates(tn=1994, fp=59, fn=120, tp=1931))
    assert rep1.accuracy == pytest.approx(0.9564, abs=5e-5)
    rows = [ln.split() for ln in render_report(rep1).splitlines() if ln.strip()]
    assert rows[1] == ["uninfected", "0.94", "0.97", "0.96", "2053"]
    assert rows[2] == ["parasitized", "0.97", "0.94", "0.96", "2051"]

    rep2 = report(ConfusionMatrix.from_rates(tn=2004, fp=49, fn=73, tp=1978))
    assert rep2.accuracy == pytest.approx(0.9703, abs=5e-5)
    rows2 = [ln.split() for ln in render_report(rep2).splitlines() if ln.strip()]
    assert rows2[3] == ["accuracy", "0.97", "4104"]
    _pass("CNN-1 counts give accuracy 0.9564 with the published per-class rows; CNN-2 counts give 0.9703 rendering 0.97")


# ----------------------------------------------------------------------
# Criterion: property suites, >= 1000 randomized cases each
# ----------------------------------------------------------------------


@ACCEPT
@given(
    tn=st.integers(0, 200), fp=st.integers(0, 200), fn=st.integers(0, 200),
    tp=st.integers(0, 200),
)
def test_property_confusion_report_invariants(tn, fp, fn, tp):
    if tn + fp + fn + tp == 0:
        return
    rep = report(ConfusionMatrix.from_rates(tn=tn, fp=fp, fn=fn, tp=tp))
    conf = rep.confusion
    assert conf.total == tn + fp + fn + tp
    assert conf.supports == (tn + fp, fn + tp)
    assert rep.accuracy == pytest.approx((tn + tp) / conf.total)
    for m in rep.per_class:
        for v in (m.precision, m.recall, m.specificity, m.f1):
            assert 0.0 <= v <= 1.0
        if m.precision + m.recall > 0:
            assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))
    supports = conf.supports
    for attr in ("precision", "recall", "f1"):
        macro = getattr(rep.macro_avg, attr)
        weighted = getattr(rep.weighted_avg, attr)
        per = [getattr(m, attr) for m in rep.per_class]
        assert macro == pytest.approx(sum(per) / 2)
        assert abs(weighted - sum(p * s for p, s in zip(per, supports)) / conf.total) < 1e-12


@ACCEPT
@given(
    tn=st.integers(0, 200), fp=st.integers(0, 200), fn=st.integers(0, 200),
    tp=st.integers(0, 200),
)
def test_property_mcc_bounds_and_relabel_symmetry(tn, fp, fn, tp):
    if tn + fp + fn + tp == 0:
        return
    rep = report(ConfusionMatrix.from_rates(tn=tn, fp=fp, fn=fn, tp=tp))
    assert -1.0 <= rep.mcc <= 1.0
    swapped = report(ConfusionMatrix.from_rates(tn=tp, fp=fn, fn=fp, tp=tn))
    assert swapped.mcc == pytest.approx(rep.mcc)
    assert swapped.accuracy == pytest.approx(rep.accuracy)
    for i in range(2):
        assert swapped.per_class[i].precision == pytest.approx(rep.per_class[1 - i].precision)
        assert swapped.per_class[i].recall == pytest.approx(rep.per_class[1 - i].recall)
        assert swapped.per_class[i].f1 == pytest.approx(rep.per_class[1 - i].f1)


@ACCEPT
@given(st.lists(st.tuples(st.integers(0, 1), st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])),
                min_size=2, max_size=8))
def test_property_auc_equals_exhaustive_concordance(pairs):
    truths = [t for t, _ in pairs]
    scores = [s for _, s in pairs]
    if len(set(truths)) < 2:
        return
    assert auc_roc(truths, scores) == pytest.approx(concordance(truths, scores))


@ACCEPT
@given(
    st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1, width=32)), min_size=2, max_size=16),
    st.floats(0.5, 4.0),
)
def test_property_auc_monotone_invariance(pairs, scale):
    truths = [t for t, _ in pairs]
    scores = [s for _, s in pairs]
    if len(set(truths)) < 2:
        return
    transformed = [math.exp(scale * s) - 7.0 for s in scores]
    if len(set(transformed)) != len(set(scores)):
        return  # rounding collapsed distinct scores: no longer strictly increasing
    assert auc_roc(truths, transformed) == pytest.approx(auc_roc(truths, scores))


@ACCEPT
@given(
    n0=st.integers(1, 40), n1=st.integers(1, 40),
    scheme=st.sampled_from(list(SplitScheme)), seed=st.integers(0, 2**31 - 1),
)
def test_property_split_partition_determinism_balance(n0, n1, scheme, seed):
    pool = stub_corpus(max(n0, n1))
    corpus = [im for im in pool if int(im.source_path[-9:-4]) < (n0 if im.label == 0 else n1)]
    if scheme is SplitScheme.TRANSFER_SCHEME and min(n0, n1) < 7:
        return
    split = make_split(corpus, scheme, seed=seed)
    again = make_split(corpus, scheme, seed=seed)
    paths = [im.source_path for part in (split.train, split.validation, split.test) for im in part]
    assert len(paths) == len(corpus) and len(set(paths)) == len(paths)
    assert set(paths) == {im.source_path for im in corpus}
    assert [im.source_path for im in split.train] == [im.source_path for im in again.train]
    if scheme is SplitScheme.TRANSFER_SCHEME:
        counts = split.per_class_counts()
        assert counts["train"]["uninfected"] == counts["train"]["parasitized"]
        assert counts["validation"]["uninfected"] == counts["validation"]["parasitized"]


def test_property_split_seed_sensitivity():
    corpus = stub_corpus(500)
    a = make_split(corpus, SplitScheme.CNN_SCHEME, seed=0)
    b = make_split(corpus, SplitScheme.CNN_SCHEME, seed=1)
    assert {im.source_path for im in a.train} != {im.source_path for im in b.train}
    _pass("property suites: confusion/report, MCC, AUC concordance + monotone invariance, split partition/determinism/balance, augmentation (1,000 cases each)")


@ACCEPT
@given(
    seed=st.integers(0, 2**31 - 1), h=st.integers(3, 12), w=st.integers(3, 12),
    rotation=st.floats(0, 180), shear=st.floats(0, 45), shift=st.floats(0, 0.5),
    hflip=st.booleans(), vflip=st.booleans(),
)
def test_property_augmentation(seed, h, w, rotation, shear, shift, hflip, vflip):
    rng = np.random.default_rng(seed)
    img = rng.random((h, w, 3)).astype(np.float32)
    # involution and identity
    flip = AugmentParams(flip_horizontal=True)
    assert np.array_equal(apply_params(apply_params(img, flip), flip), img)
    assert np.array_equal(apply_params(img, AugmentParams()), img)
    # range and shape under a random draw
    config = AugmentConfig(horizontal_flip=hflip, vertical_flip=vflip, rotation_range=rotation,
                           shear_range=shear, shift_range=shift)
    out = augment(img, config, np.random.default_rng(seed + 1))
    assert out.shape == img.shape
    assert 0.0 <= out.min() and out.max() <= 1.0


# ----------------------------------------------------------------------
# Criterion: structural regime checks (fast, no training)
# ----------------------------------------------------------------------


def _structural_split(n_train=8):
    images = []
    rng = np.random.default_rng(0)
    for i in range(n_train + 8):
        arr = rng.integers(0, 255, (64, 64, 3), dtype=np.uint8)
        images.append(LabeledImage.from_array(arr, i % 2, f"mem://structural/{i}"))
    return DatasetSplit(train=images[:n_train], validation=images[n_train : n_train + 4],
                        test=images[n_train + 4 :], seed=0, scheme=SplitScheme.TRANSFER_SCHEME)


def test_structural_regime_checks():
    step = TrainConfig(optimizer="sgd", learning_rate=1e-2, batch_size=8, max_epochs=1,
                       callbacks=CallbackConfig(early_stop_patience=1000))
    for backbone in Backbone:
        tmodel = build_transfer_model(backbone, pretrained=False)
        frozen = plan_regime(Regime.FROZEN_HEAD_ONLY, tmodel)
        frozen_report = apply_regime(tmodel, frozen, 0)
        assert frozen_report.trainable_params == tmodel.head_param_count()

        incremental = plan_regime(Regime.INCREMENTAL_UNFREEZE, tmodel)
        phase2 = apply_regime(tmodel, incremental, 1)
        full = plan_regime(Regime.FULL_FINE_TUNE, tmodel)
        full_report = apply_regime(tmodel, full, 0)
        assert full_report.trainable_params == tmodel.optimizable_param_count()
        assert frozen_report.trainable_params < phase2.trainable_params < full_report.trainable_params

        apply_regime(tmodel, frozen, 0)
        before = backbone_checksum(tmodel)
        train_model(tmodel.model, _structural_split(), SMALL_IMAGE_PROFILE, step, seed=0)
        assert backbone_checksum(tmodel) == before
        del tmodel
        gc.collect()
    _pass("structural regime checks: frozen = head count, incremental phase 2 strictly between, "
          "full = all optimizable parameters, frozen backbone checksum unchanged after an 8-image step (all 3 backbones)")


# ----------------------------------------------------------------------
# Criterion: desk-scale training
# ----------------------------------------------------------------------


def _overfit_split(profile_size: int, n: int = 16):
    from plasmodium.synthetic import cell_image

    images = []
    for i in range(n):
        rng = np.random.default_rng([99, i])
        arr = cell_image(rng, parasitized=bool(i % 2), size=96)
        images.append(LabeledImage.from_array(arr, i % 2, f"mem://overfit/{i}"))
    return DatasetSplit(train=images, validation=images, test=images, seed=0,
                        scheme=SplitScheme.CNN_SCHEME)


@pytest.fixture(scope="module")
def overfit_cnn_a():
    profile = PreprocessProfile((128, 128))
    config = TrainConfig(optimizer="rmsprop", learning_rate=1e-3, batch_size=16, max_epochs=200,
                         callbacks=CallbackConfig(early_stop_patience=10_000))
    model, history = train_model(build_cnn_a(), _overfit_split(128), profile, config, seed=0)
    return model, history


def test_overfit_one_batch_cnn_a(overfit_cnn_a):
    _, history = overfit_cnn_a
    assert len(history.epochs) == 200
    assert max(r.train_acc for r in history.epochs) == 1.0
    first, last = history.epochs[0].train_loss, history.epochs[-1].train_loss
    assert first / last >= 10.0
    _pass(f"overfit-one-batch CNN-A: training accuracy 1.0 within 200 epochs; loss fell {first / last:.0f}x from epoch 1 to epoch 200")


@pytest.fixture(scope="module")
def overfit_cnn_b():
    profile = PreprocessProfile((224, 224))
    split = _overfit_split(224)
    config = TrainConfig(optimizer="rmsprop", learning_rate=1e-3, batch_size=16, max_epochs=25,
                         callbacks=CallbackConfig(early_stop_patience=10_000))
    model, total_epochs, reached = None, 0, False
    for chunk in range(8):  # up to 200 epochs in 25-epoch chunks
        model, history = train_model(model if model is not None else build_cnn_b(),
                                     split, profile, config, seed=chunk)
        total_epochs += len(history.epochs)
        if max(r.train_acc for r in history.epochs) == 1.0:
            reached = True
            break
    return model, total_epochs, reached


def test_overfit_one_batch_cnn_b(overfit_cnn_b):
    _, total_epochs, reached = overfit_cnn_b
    assert reached and total_epochs <= 200
    _pass(f"overfit-one-batch CNN-B: training accuracy 1.0 within {total_epochs} epochs (budget 200)")


@pytest.fixture(scope="module")
def desk_corpus(tmp_path_factory):
    """2,000 balanced images: the real corpus when available, else the
    synthetic stand-in."""
    if REAL_DATA:
        corpus, _ = ingest_corpus(REAL_DATA)
        return balanced_subset(corpus, DESK_SUBSET, seed=0), True
    from plasmodium.synthetic import synthesize_corpus

    root = tmp_path_factory.mktemp("desk") / "corpus"
    synthesize_corpus(root, per_class=DESK_SUBSET // 2, seed=11, size=96)
    corpus, _ = ingest_corpus(root)
    assert len(corpus) == DESK_SUBSET
    return corpus, False


@pytest.fixture(scope="module")
def desk_cnn_b(desk_corpus):
    corpus, real = desk_corpus
    split = make_split(corpus, SplitScheme.CNN_SCHEME, seed=0)
    profile = PreprocessProfile((224, 224), augment=AugmentConfig())
    config = TrainConfig(optimizer="rmsprop", learning_rate=1e-3, batch_size=32,
                         max_epochs=15 if real else 8,
                         callbacks=CallbackConfig(early_stop_patience=3))
    model, history = train_model(build_cnn_b(), split, profile, config, seed=0, verbose=True)
    probs = predict_images(model, split.test, PreprocessProfile((224, 224)))
    truths = [im.label for im in split.test]
    acc = float(np.mean(probs.argmax(axis=1) == truths))
    return model, split, acc


def test_desk_cnn_b_subset_accuracy(desk_cnn_b):
    _, split, acc = desk_cnn_b
    assert acc >= 0.90
    _pass(f"CNN-B on the 2,000-image subset (CNN scheme fractions, <= 15 epochs): test accuracy {acc:.4f} >= 0.90")


@pytest.fixture(scope="module")
def desk_xception(desk_corpus):
    corpus, real = desk_corpus
    split = make_split(corpus, SplitScheme.TRANSFER_SCHEME, seed=0)
    profile = PreprocessProfile((128, 128), augment=AugmentConfig())
    base = TrainConfig(optimizer="sgd", learning_rate=1e-2, batch_size=32,
                       max_epochs=15 if real else 8,
                       callbacks=CallbackConfig(early_stop_patience=3))
    tmodel = build_transfer_model(Backbone.XCEPTION, pretrained=False)
    result = run_regime(tmodel, Regime.FULL_FINE_TUNE, split, profile, base, seed=0, verbose=True)
    return result


def test_desk_xception_full_fine_tune(desk_xception):
    acc = desk_xception.report.accuracy
    assert acc >= 0.90
    _pass(f"Xception full fine-tune on the same subset: test accuracy {acc:.4f} >= 0.90")


# ----------------------------------------------------------------------
# Criterion: export fidelity on the 32-image probe set
# ----------------------------------------------------------------------


def test_export_fidelity_every_bundle(tmp_path, overfit_cnn_a, desk_cnn_b, desk_xception):
    from plasmodium.bundle import FIDELITY_TOLERANCE, export_model
    from plasmodium.synthetic import probe_images

    cases = [
        ("cnn-a", overfit_cnn_a[0], PreprocessProfile((128, 128))),
        ("cnn-b", desk_cnn_b[0], PreprocessProfile((224, 224))),
        ("xception-full", desk_xception.model, PreprocessProfile((128, 128))),
    ]
    probe = probe_images(32, size=96)
    drifts = {}
    for name, model, profile in cases:
        info = export_model(model, profile, tmp_path / name, probe=probe)
        assert info.fidelity_max_abs_diff < FIDELITY_TOLERANCE
        drifts[name] = info.fidelity_max_abs_diff
    assert json_roundtrip_target_size(tmp_path / "cnn-b") == (224, 224)
    _pass("export fidelity: every exported bundle reproduces native probabilities within 1e-4 on the 32-image probe set "
          + ", ".join(f"{k}={v:.1e}" for k, v in drifts.items()))


def json_roundtrip_target_size(bundle_dir):
    import json

    doc = json.loads((bundle_dir / "bundle.json").read_text())
    return tuple(doc["preprocess"]["target_size"])


# ----------------------------------------------------------------------
# Criterion: full-scale reproduction (optional, gated)
# ----------------------------------------------------------------------


FULL_GATE = os.environ.get("PLASMODIUM_FULL_REPRODUCTION") == "1"


@pytest.mark.skipif(
    not (FULL_GATE and REAL_DATA),
    reason="full-scale reproduction is gated behind PLASMODIUM_FULL_REPRODUCTION=1 plus a real "
    "corpus in PLASMODIUM_DATA_DIR (and pretrained snapshots in PLASMODIUM_WEIGHTS_DIR); hours of runtime",
)
def test_full_scale_reproduction(tmp_path):
    from plasmodium.cli import main
    from plasmodium.runs import collect_runs

    runs_root = tmp_path / "runs"
    assert main(["reproduce", "--full", "--data", REAL_DATA, "--runs-root", str(runs_root)]) == 0
    by_kind = {m["kind"]: m["metrics"] for m in collect_runs(runs_root)}

    assert by_kind["cnn-b"]["accuracy"] >= 0.95
    assert by_kind["xception-full"]["accuracy"] >= 0.93
    assert by_kind["vgg19-full"]["accuracy"] >= 0.92
    assert by_kind["inceptionv3-full"]["accuracy"] >= 0.92
    for kind in ("vgg19-frozen", "inceptionv3-frozen", "xception-frozen"):
        assert 0.80 <= by_kind[kind]["accuracy"] <= 0.89
    assert abs(by_kind["svm"]["accuracy"] - 0.83) <= 0.03
    for backbone in ("vgg19", "inceptionv3", "xception"):
        frozen = by_kind[f"{backbone}-frozen"]["accuracy"]
        incremental = by_kind[f"{backbone}-incremental"]["accuracy"]
        full = by_kind[f"{backbone}-full"]["accuracy"]
        assert full >= incremental >= frozen - 0.02
    _pass("full-scale reproduction within the published bands")
