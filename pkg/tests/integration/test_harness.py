"""Integration tests for the threat-model harness at reduced scale."""
from __future__ import annotations

import math

import pytest

from latentveil.errors import DegenerateDataError, ValidationError
from latentveil.generator import BlobGeneratorConfig, make_identity_dataset, random_latent
from latentveil.inversion import OptimizerConfig
from latentveil.obfuscation import DeepBlurSettings, ObfuscatorSpec
from latentveil.perception import ExtractorSpec
from latentveil.remote import RecognitionClient, mock_service, parse_endpoint
from latentveil.store import InversionCache
from latentveil.threats import (
    HarnessConfig,
    InversionMemo,
    RemoteAttacker,
    SplitSpec,
    ThreatModelID,
    ThreatReport,
    TrainConfig,
    run_threat_eval,
    run_threat_suite,
    split_dataset,
    surrogate_attacker,
)
from latentveil.threats.harness import ThreatSuite, chance_level, csv_layout, items_per_method

pytestmark = pytest.mark.integration

CFG = BlobGeneratorConfig(n_blobs=3, size=8)
SPLIT = SplitSpec(train=2, val=1, test=2, seed=0)
HARNESS = HarnessConfig(
    split=SPLIT,
    train=TrainConfig(epochs=10, extractor=ExtractorSpec()),
    deepblur=DeepBlurSettings(
        generator=CFG,
        extractor=ExtractorSpec(),
        optimizer=OptimizerConfig(max_steps=5, target_loss=0.0),
        init=random_latent(CFG, 50),
    ),
)
ALL_THREATS = [ThreatModelID.T1, ThreatModelID.T2, ThreatModelID.T3]


@pytest.fixture(scope="module")
def dataset():
    return make_identity_dataset(3, 5, 0.05, seed=8, cfg=CFG)


# ---- split -----------------------------------------------------------------

def test_split_is_a_per_identity_partition(dataset):
    split = split_dataset(dataset, SPLIT)
    assert len(split.train) == 6 and len(split.val) == 3 and len(split.test) == 6
    ids = [id(item) for item in split.train + split.val + split.test]
    assert len(set(ids)) == len(dataset.items)
    for label in range(3):
        assert sum(1 for item in split.test if item.label == label) == 2


def test_split_is_seeded(dataset):
    a = split_dataset(dataset, SPLIT)
    b = split_dataset(dataset, SPLIT)
    assert [id(i) for i in a.test] == [id(i) for i in b.test]


def test_split_must_match_images_per_identity(dataset):
    with pytest.raises(DegenerateDataError):
        split_dataset(dataset, SplitSpec(train=3, val=1, test=2))


def test_split_spec_needs_train_and_test():
    with pytest.raises(ValidationError):
        SplitSpec(train=0)


# ---- threat ids & helpers --------------------------------------------------

def test_threat_ids_parse_case_insensitively():
    assert ThreatModelID.parse(" t2 ") is ThreatModelID.T2
    with pytest.raises(ValidationError):
        ThreatModelID.parse("T4")


def test_chance_levels():
    assert chance_level(10) == (0.1, 0.5)
    assert chance_level(3) == (pytest.approx(1 / 3), 1.0)


def test_items_per_method_counts_only_the_splits_read(dataset):
    assert items_per_method(dataset, SPLIT, [ThreatModelID.T1]) == 6
    assert items_per_method(dataset, SPLIT, [ThreatModelID.T2]) == 9
    assert items_per_method(dataset, SPLIT, [ThreatModelID.T2], keep_test_images=True) == 15
    assert items_per_method(dataset, SPLIT, ALL_THREATS) == 21


# ---- suite -----------------------------------------------------------------

def test_reports_are_obfuscator_major(dataset):
    methods = [ObfuscatorSpec(kind="identity"), ObfuscatorSpec(kind="pixelate", block=4)]
    reports = run_threat_suite(dataset, methods, ALL_THREATS, HARNESS)
    assert [(r.method, r.threat) for r in reports] == [
        (m.kind, t) for m in methods for t in ALL_THREATS
    ]
    for r in reports:
        assert r.n_test == 6
        assert 0.0 <= r.top1 <= r.top5 <= 1.0
        assert r.n_classes == 3
    assert reports[3].param == "4"


def test_identity_is_the_same_attack_under_every_threat(dataset):
    reports = run_threat_suite(dataset, [ObfuscatorSpec(kind="identity")], ALL_THREATS, HARNESS)
    assert reports[0].top1 == reports[1].top1 == reports[2].top1
    assert reports[0].classifier_digest == reports[1].classifier_digest


def test_suite_is_deterministic(dataset):
    methods = [ObfuscatorSpec(kind="mask"), ObfuscatorSpec(kind="deepblur", sigma=1.0)]
    a = run_threat_suite(dataset, methods, ALL_THREATS, HARNESS)
    b = run_threat_suite(dataset, methods, ALL_THREATS, HARNESS)
    assert [r.as_csv_row() for r in a] == [r.as_csv_row() for r in b]


def test_one_inversion_per_image_serves_every_deepblur_method(dataset):
    with InversionCache(":memory:") as cache:
        memo = InversionMemo(HARNESS.deepblur, cache=cache, clock=lambda: 0.0)
        methods = [
            ObfuscatorSpec(kind="deepblur", sigma=0.5),
            ObfuscatorSpec(kind="deepblur", sigma=2.0),
            ObfuscatorSpec(kind="deepblur_average"),
        ]
        run_threat_suite(dataset, methods, ALL_THREATS, HARNESS, memo=memo)
        assert cache.misses == len(dataset.items)
        assert len(cache) == len(dataset.items)


def test_kept_test_images_line_up_with_the_split(dataset):
    suite = ThreatSuite(dataset, HARNESS, keep_test_images=True)
    spec = ObfuscatorSpec(kind="pixel_blur", sigma=1.0)
    suite.run_method(spec, [ThreatModelID.T1])
    kept = suite.obfuscated_test[spec.label]
    assert len(kept) == len(suite.split.test)
    assert kept[0].shape == suite.split.test[0].image.shape


def test_adversarial_noise_runs_through_the_suite(dataset):
    report = run_threat_eval(dataset, ObfuscatorSpec(kind="advnoise", epsilon=0.03, steps=3),
                             ThreatModelID.T2, HARNESS)
    assert report.method == "advnoise"
    assert report.param == "0.03"


def test_empty_suite_is_rejected(dataset):
    with pytest.raises(ValidationError):
        run_threat_suite(dataset, [], ALL_THREATS, HARNESS)


# ---- split selection -------------------------------------------------------

@pytest.mark.parametrize("threats", [[ThreatModelID.T1], [ThreatModelID.T2], ALL_THREATS])
def test_only_the_splits_a_threat_reads_are_obfuscated(dataset, threats):
    calls = []
    suite = ThreatSuite(dataset, HARNESS, progress=calls.append)
    data = suite.obfuscated_splits(ObfuscatorSpec(kind="pixelate", block=2), threats)
    trains = ThreatModelID.T2 in threats or ThreatModelID.T3 in threats
    assert (data.train is not None) == trains
    assert (data.val is not None) == trains
    assert (data.test is not None) == (ThreatModelID.T1 in threats)
    assert (data.fresh_test is not None) == (ThreatModelID.T3 in threats)
    assert len(calls) == items_per_method(dataset, SPLIT, threats)


def test_results_do_not_depend_on_which_threats_run_together(dataset):
    spec = ObfuscatorSpec(kind="advnoise", epsilon=0.03, steps=2)
    together = run_threat_suite(dataset, [spec], ALL_THREATS, HARNESS)
    alone = [run_threat_eval(dataset, spec, t, HARNESS) for t in ALL_THREATS]
    assert [r.as_csv_row() for r in together] == [r.as_csv_row() for r in alone]


def test_deepblur_under_t1_inverts_only_the_test_split(dataset):
    with InversionCache(":memory:") as cache:
        memo = InversionMemo(HARNESS.deepblur, cache=cache, clock=lambda: 0.0)
        run_threat_suite(dataset, [ObfuscatorSpec(kind="deepblur", sigma=1.0)],
                         [ThreatModelID.T1], HARNESS, memo=memo)
        assert cache.misses == len(split_dataset(dataset, SPLIT).test)


# ---- attackers -------------------------------------------------------------

def test_every_attacker_gets_its_own_rows(dataset):
    attackers = [surrogate_attacker("logreg", HARNESS.train),
                 surrogate_attacker("logreg@randconv", HARNESS.train)]
    methods = [ObfuscatorSpec(kind="pixelate", block=4)]
    reports = run_threat_suite(dataset, methods, ALL_THREATS, HARNESS, attackers=attackers)
    assert [(r.attacker, r.threat) for r in reports] == [
        (a.name, t) for a in attackers for t in ALL_THREATS
    ]
    assert reports[0].classifier_digest != reports[3].classifier_digest
    single = run_threat_suite(dataset, methods, ALL_THREATS, HARNESS)
    assert [r.as_csv_row() for r in reports[:3]] == [r.as_csv_row() for r in single]


def test_attacker_tokens():
    assert surrogate_attacker("logreg", HARNESS.train).train == HARNESS.train
    variant = surrogate_attacker("logreg@randconv", HARNESS.train)
    assert variant.name == "logreg@randconv"
    assert variant.train.extractor.kind == "randconv"
    assert variant.train.epochs == HARNESS.train.epochs
    for token in ["svm", "logreg@sift"]:
        with pytest.raises(ValidationError):
            surrogate_attacker(token, HARNESS.train)


def test_attacker_names_must_be_unique(dataset):
    twice = [surrogate_attacker("logreg", HARNESS.train)] * 2
    with pytest.raises(ValidationError, match="unique"):
        ThreatSuite(dataset, HARNESS, attackers=twice)


def test_remote_service_is_scored_as_an_attacker(dataset):
    with mock_service(train_config=HARNESS.train) as handle:
        host, port = parse_endpoint(handle.endpoint)
        remote = RemoteAttacker("remote", RecognitionClient(host, port, timeout=5.0))
        attackers = [surrogate_attacker("logreg", HARNESS.train), remote]
        reports = run_threat_suite(dataset, [ObfuscatorSpec(kind="identity")], ALL_THREATS,
                                   HARNESS, attackers=attackers)
    remote_rows = [r for r in reports if r.attacker == "remote"]
    assert [r.threat for r in remote_rows] == ALL_THREATS
    for r in remote_rows:
        assert r.n_test == 6
        assert 0.0 <= r.top1 <= 1.0
        assert math.isnan(r.top5)
        assert r.classifier_digest == f"remote({handle.endpoint})"
    # identity: every threat enrolls the same images and queries the same test set
    assert remote_rows[0].top1 == remote_rows[1].top1 == remote_rows[2].top1


def test_csv_layout_adds_the_attacker_column_only_when_needed(dataset):
    spec = ObfuscatorSpec(kind="identity")
    single = run_threat_suite(dataset, [spec], [ThreatModelID.T1], HARNESS)
    header, rows = csv_layout(single)
    assert header == ThreatReport.CSV_HEADER
    assert len(rows[0]) == len(header)
    pair = [surrogate_attacker("logreg", HARNESS.train),
            surrogate_attacker("logreg@randconv", HARNESS.train)]
    several = run_threat_suite(dataset, [spec], [ThreatModelID.T1], HARNESS, attackers=pair)
    header, rows = csv_layout(several)
    assert header[-1] == "attacker"
    assert [row[-1] for row in rows] == ["logreg", "logreg@randconv"]
