"""Re-identification threat models T1/T2/T3 over a labeled dataset.

- T1: the attacker trains on clean images and tests on obfuscated ones.
- T2: the attacker trains on labeled obfuscated images and tests on clean ones.
- T3: the attacker trains on obfuscated images and tests on an independently
  obfuscated disjoint set.

Every threat is scored against one or more attackers: local surrogates that
differ in features or training, and recognition services reached over the
wire. A suite run extracts clean features once per extractor, obfuscates
only the splits the requested threat models read, and shares attacker
models between threat models wherever their training data coincide.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union, cast

import numpy as np

from ..errors import DegenerateDataError, ValidationError
from ..generator import LabeledDataset, LabeledImage
from ..imaging import ImageTensor
from ..inversion import InversionResult
from ..obfuscation import DeepBlurSettings, ObfuscatorSpec, obfuscate
from ..perception import ExtractorKind, ExtractorSpec
from ..store import InversionCache, inversion_key
from .classifier import (
    Accuracy,
    SurrogateClassifier,
    TrainConfig,
    extract_features,
    topk_accuracy,
    train_on_features,
)

log = logging.getLogger(__name__)

# Distinct seed streams so the user's surrogate and T3's re-obfuscation never
# share randomness with the attacker's training or the first obfuscation pass.
USER_SURROGATE_SEED_OFFSET = 1_000
FRESH_OBFUSCATION_SEED_OFFSET = 100_000


class ThreatModelID(str, Enum):
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"

    @classmethod
    def parse(cls, raw: str) -> ThreatModelID:
        try:
            return cls(raw.strip().upper())
        except ValueError as e:
            raise ValidationError(f"unknown threat model {raw!r} (expected T1, T2 or T3)") from e


@dataclass(frozen=True)
class SplitSpec:
    train: int = 7
    val: int = 1
    test: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.train < 1 or self.test < 1 or self.val < 0:
            raise ValidationError(
                f"split needs train >= 1, val >= 0, test >= 1; got {self.train}/{self.val}/{self.test}"
            )

    @property
    def total(self) -> int:
        return self.train + self.val + self.test


@dataclass(frozen=True, eq=False)
class Split:
    train: List[LabeledImage]
    val: List[LabeledImage]
    test: List[LabeledImage]


def split_dataset(ds: LabeledDataset, spec: SplitSpec) -> Split:
    """Seeded per-identity shuffle, then partition into train/val/test."""
    if ds.n_per_id != spec.total:
        raise DegenerateDataError(
            f"dataset has {ds.n_per_id} images per identity, split needs {spec.total}"
        )
    rng = np.random.default_rng(spec.seed)
    by_label: Dict[int, List[LabeledImage]] = {label: [] for label in range(ds.n_ids)}
    for item in ds.items:
        by_label[item.label].append(item)
    train: List[LabeledImage] = []
    val: List[LabeledImage] = []
    test: List[LabeledImage] = []
    for label in range(ds.n_ids):
        items = by_label[label]
        order = rng.permutation(len(items))
        shuffled = [items[i] for i in order]
        train.extend(shuffled[:spec.train])
        val.extend(shuffled[spec.train:spec.train + spec.val])
        test.extend(shuffled[spec.train + spec.val:])
    return Split(train, val, test)


@dataclass(frozen=True)
class HarnessConfig:
    split: SplitSpec = field(default_factory=SplitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    deepblur: DeepBlurSettings = field(default_factory=DeepBlurSettings)


# ---- attackers ----------------------------------------------------------------

DEFAULT_ATTACKER = "logreg"


@dataclass(frozen=True)
class SurrogateAttacker:
    """Local softmax surrogate trained on extractor features."""

    name: str
    train: TrainConfig

    def describe(self) -> str:
        return self.train.describe()


class RecognitionBackend(Protocol):
    """The slice of a recognition-service client the harness drives."""

    @property
    def endpoint(self) -> str: ...

    def reset(self) -> None: ...

    def enroll(self, label: int, image: ImageTensor) -> None: ...

    def train(self) -> None: ...

    def identify(self, image: ImageTensor) -> Tuple[int, float]: ...


@dataclass(frozen=True, eq=False)
class RemoteAttacker:
    """A recognition service that is enrolled, trained and queried over the wire.

    Services answer with their best match only, so top-5 is reported as NaN.
    """

    name: str
    client: RecognitionBackend

    def describe(self) -> str:
        return f"remote({self.client.endpoint})"


Attacker = Union[SurrogateAttacker, RemoteAttacker]


def surrogate_attacker(token: str, base: TrainConfig) -> SurrogateAttacker:
    """``logreg`` is ``base`` as configured; ``logreg@pixel`` / ``logreg@randconv`` swap its features."""
    kind, _, features = token.strip().partition("@")
    if kind != DEFAULT_ATTACKER:
        raise ValidationError(f"unknown attacker {token!r} (expected {DEFAULT_ATTACKER}[@features])")
    if not features:
        return SurrogateAttacker(token.strip(), base)
    extractor = replace(base.extractor, kind=cast(ExtractorKind, features))
    return SurrogateAttacker(token.strip(), replace(base, extractor=extractor))


# ---- reports ------------------------------------------------------------------

@dataclass(frozen=True)
class ThreatReport:
    threat: ThreatModelID
    method: str
    param: str
    top1: float
    top5: float
    n_test: int
    seed: int
    classifier_digest: str = ""
    n_classes: int = 0
    attacker: str = DEFAULT_ATTACKER

    CSV_HEADER = ("threat", "method", "param", "top1", "top5", "n_test", "seed")
    # written when a run scores more than one attacker
    CSV_HEADER_WITH_ATTACKER = CSV_HEADER + ("attacker",)

    @property
    def chance(self) -> float:
        return 1.0 / self.n_classes if self.n_classes else float("nan")

    def as_csv_row(self, with_attacker: bool = False) -> list:
        row = [self.threat.value, self.method, self.param, self.top1, self.top5,
               self.n_test, self.seed]
        return row + [self.attacker] if with_attacker else row


def csv_layout(reports: Sequence[ThreatReport]) -> Tuple[Tuple[str, ...], List[list]]:
    """Header and rows; the attacker column appears only when attackers differ."""
    with_attacker = len({r.attacker for r in reports}) > 1
    header = ThreatReport.CSV_HEADER_WITH_ATTACKER if with_attacker else ThreatReport.CSV_HEADER
    return header, [r.as_csv_row(with_attacker) for r in reports]


class InversionMemo:
    """Inversions of images under fixed DeepBlur settings, memoized by content.

    Backed by an optional persistent :class:`InversionCache`; ``refresh``
    recomputes and overwrites persisted entries.
    """

    def __init__(
        self,
        settings: DeepBlurSettings,
        *,
        cache: Optional[InversionCache] = None,
        refresh: bool = False,
        clock: Callable[[], float] = time.perf_counter,
    ) -> None:
        self.settings = settings
        self.cache = cache
        self.refresh = refresh
        self.clock = clock
        self._init = settings.initial_latent()
        self._memo: Dict[str, InversionResult] = {}

    def __call__(self, img: ImageTensor) -> InversionResult:
        s = self.settings
        key = inversion_key(img, s.generator, s.extractor, s.optimizer, self._init)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        result = None
        if self.cache is not None and not self.refresh:
            result = self.cache.get(key)
        if result is None:
            result = replace(s, init=self._init).invert(img, clock=self.clock)
            if self.cache is not None:
                self.cache.put(key, result)
        self._memo[key] = result
        return result


@dataclass
class _MethodData:
    """Obfuscated splits of one method; a split is None when no threat reads it."""

    train: Optional[List[ImageTensor]] = None
    val: Optional[List[ImageTensor]] = None
    test: Optional[List[ImageTensor]] = None
    fresh_test: Optional[List[ImageTensor]] = None


def _needs(threats: Sequence[ThreatModelID], keep_test_images: bool) -> Tuple[bool, bool, bool]:
    """Which obfuscated splits a run reads: (train+val, test, fresh test)."""
    trains = ThreatModelID.T2 in threats or ThreatModelID.T3 in threats
    tests = ThreatModelID.T1 in threats or keep_test_images
    return trains, tests, ThreatModelID.T3 in threats


class ThreatSuite:
    """Shared state of one suite run over a dataset split."""

    def __init__(
        self,
        ds: LabeledDataset,
        cfg: HarnessConfig,
        *,
        memo: Optional[InversionMemo] = None,
        progress: Optional[Callable[[str], None]] = None,
        keep_test_images: bool = False,
        attackers: Optional[Sequence[Attacker]] = None,
    ) -> None:
        self.ds = ds
        self.cfg = cfg
        self.memo = memo or InversionMemo(cfg.deepblur)
        self.progress = progress
        self.attackers: List[Attacker] = (
            list(attackers) if attackers else [SurrogateAttacker(DEFAULT_ATTACKER, cfg.train)]
        )
        names = [a.name for a in self.attackers]
        if len(set(names)) != len(names):
            raise ValidationError(f"attacker names must be unique, got {names}")
        self.split = split_dataset(ds, cfg.split)
        self.labels = {
            name: [item.label for item in getattr(self.split, name)]
            for name in ("train", "val", "test")
        }
        self._clean_features: Dict[ExtractorSpec, Dict[str, Optional[np.ndarray]]] = {}
        self._clean_models: Dict[TrainConfig, SurrogateClassifier] = {}
        self._user_surrogate: Optional[SurrogateClassifier] = None
        # remote attacker name -> gallery currently enrolled at its service
        self._galleries: Dict[str, str] = {}
        self.keep_test_images = keep_test_images
        # method label -> obfuscated test split, filled when keep_test_images is set
        self.obfuscated_test: Dict[str, List[ImageTensor]] = {}

    # ---- models ------------------------------------------------------------

    def clean_features(self, spec: Optional[ExtractorSpec] = None) -> Dict[str, Optional[np.ndarray]]:
        """Features of the clean splits, extracted once per extractor."""
        spec = spec or self.cfg.train.extractor
        if spec not in self._clean_features:
            self._clean_features[spec] = {
                name: extract_features([item.image for item in getattr(self.split, name)], spec)
                if getattr(self.split, name) else None
                for name in ("train", "val", "test")
            }
        return self._clean_features[spec]

    def _train(self, train_x: np.ndarray, val_x: Optional[np.ndarray], cfg: TrainConfig) -> SurrogateClassifier:
        return train_on_features(train_x, self.labels["train"], val_x,
                                 self.labels["val"] or None, cfg, n_classes=self.ds.n_ids)

    def clean_model(self, train: Optional[TrainConfig] = None) -> SurrogateClassifier:
        cfg = train or self.cfg.train
        if cfg not in self._clean_models:
            clean = self.clean_features(cfg.extractor)
            self._clean_models[cfg] = self._train(clean["train"], clean["val"], cfg)
        return self._clean_models[cfg]

    def user_surrogate(self) -> SurrogateClassifier:
        """The obfuscating user's own model for adversarial noise."""
        if self._user_surrogate is None:
            cfg = replace(self.cfg.train, seed=self.cfg.train.seed + USER_SURROGATE_SEED_OFFSET)
            clean = self.clean_features(cfg.extractor)
            self._user_surrogate = self._train(clean["train"], clean["val"], cfg)
        return self._user_surrogate

    # ---- obfuscation -------------------------------------------------------

    def _obfuscate_items(self, items: Sequence[LabeledImage], spec: ObfuscatorSpec,
                         seed_base: int) -> List[ImageTensor]:
        surrogate = self.user_surrogate() if spec.kind == "advnoise" else None
        out = []
        for i, item in enumerate(items):
            out.append(obfuscate(
                item.image,
                spec,
                settings=self.cfg.deepblur,
                inversion=self.memo(item.image) if spec.is_deepblur else None,
                surrogate=surrogate,
                label=item.label,
                seed=seed_base + i,
            ))
            if self.progress is not None:
                self.progress(spec.label)
        return out

    def obfuscated_splits(self, spec: ObfuscatorSpec, threats: Sequence[ThreatModelID]) -> _MethodData:
        """Obfuscate the splits ``threats`` read; seeds do not depend on which ones."""
        trains, tests, fresh = _needs(threats, self.keep_test_images)
        n_train, n_val = len(self.split.train), len(self.split.val)
        data = _MethodData()
        if trains:
            data.train = self._obfuscate_items(self.split.train, spec, spec.seed)
            data.val = self._obfuscate_items(self.split.val, spec, spec.seed + n_train)
        if tests:
            data.test = self._obfuscate_items(self.split.test, spec, spec.seed + n_train + n_val)
        if fresh:
            data.fresh_test = self._obfuscate_items(
                self.split.test, spec, spec.seed + FRESH_OBFUSCATION_SEED_OFFSET)
        return data

    # ---- evaluation --------------------------------------------------------

    def _report(self, threat: ThreatModelID, spec: ObfuscatorSpec, attacker: Attacker,
                acc: Accuracy, seed: int, digest: str) -> ThreatReport:
        report = ThreatReport(
            threat=threat,
            method=spec.kind,
            param=spec.param,
            top1=acc.top1,
            top5=acc.top5,
            n_test=acc.n,
            seed=seed,
            classifier_digest=digest,
            n_classes=self.ds.n_ids,
            attacker=attacker.name,
        )
        log.info("%s %s [%s]: top1=%.3f top5=%.3f (n=%d, chance=%.3f)", threat.value, spec.label,
                 attacker.name, report.top1, report.top5, report.n_test, report.chance)
        return report

    def _surrogate_reports(self, attacker: SurrogateAttacker, spec: ObfuscatorSpec,
                           threats: Sequence[ThreatModelID], data: _MethodData) -> List[ThreatReport]:
        features = attacker.train.extractor
        obf_model: Optional[SurrogateClassifier] = None
        reports = []
        for threat in threats:
            if threat is ThreatModelID.T1:
                assert data.test is not None
                model = self.clean_model(attacker.train)
                test = extract_features(data.test, features)
            else:
                if obf_model is None:
                    assert data.train is not None and data.val is not None
                    obf_val = extract_features(data.val, features) if data.val else None
                    obf_model = self._train(extract_features(data.train, features), obf_val,
                                            attacker.train)
                model = obf_model
                if threat is ThreatModelID.T2:
                    test = self.clean_features(features)["test"]
                else:
                    assert data.fresh_test is not None
                    test = extract_features(data.fresh_test, features)
            acc = topk_accuracy(model.proba_from_features(test), self.labels["test"])
            reports.append(self._report(threat, spec, attacker, acc, attacker.train.seed,
                                        model.digest()))
        return reports

    def _load_gallery(self, attacker: RemoteAttacker, key: str, images: Sequence[ImageTensor]) -> None:
        if self._galleries.get(attacker.name) == key:
            return
        client = attacker.client
        client.reset()
        for image, label in zip(images, self.labels["train"]):
            client.enroll(label, image)
        client.train()
        self._galleries[attacker.name] = key
        log.debug("Enrolled %d %s images at %s", len(images), key, client.endpoint)

    def _remote_reports(self, attacker: RemoteAttacker, spec: ObfuscatorSpec,
                        threats: Sequence[ThreatModelID], data: _MethodData) -> List[ThreatReport]:
        clean_test = [item.image for item in self.split.test]
        reports = []
        for threat in threats:
            if threat is ThreatModelID.T1:
                assert data.test is not None
                self._load_gallery(attacker, "clean", [item.image for item in self.split.train])
                test = data.test
            else:
                assert data.train is not None
                self._load_gallery(attacker, spec.label, data.train)
                if threat is ThreatModelID.T2:
                    test = clean_test
                else:
                    assert data.fresh_test is not None
                    test = data.fresh_test
            predicted = np.array([attacker.client.identify(img)[0] for img in test])
            truth = np.asarray(self.labels["test"])
            acc = Accuracy(top1=float(np.mean(predicted == truth)), top5=float("nan"), n=int(truth.size))
            reports.append(self._report(threat, spec, attacker, acc, self.cfg.split.seed,
                                        attacker.describe()))
        return reports

    def run_method(self, spec: ObfuscatorSpec, threats: Sequence[ThreatModelID]) -> List[ThreatReport]:
        """Reports for ``spec``, attacker-major then in ``threats`` order."""
        data = self.obfuscated_splits(spec, threats)
        if self.keep_test_images:
            assert data.test is not None
            self.obfuscated_test[spec.label] = data.test
        reports: List[ThreatReport] = []
        for attacker in self.attackers:
            if isinstance(attacker, SurrogateAttacker):
                reports.extend(self._surrogate_reports(attacker, spec, threats, data))
            else:
                reports.extend(self._remote_reports(attacker, spec, threats, data))
        return reports


def run_threat_suite(
    ds: LabeledDataset,
    obfuscators: Sequence[ObfuscatorSpec],
    threats: Sequence[ThreatModelID],
    cfg: HarnessConfig,
    *,
    memo: Optional[InversionMemo] = None,
    progress: Optional[Callable[[str], None]] = None,
    attackers: Optional[Sequence[Attacker]] = None,
) -> List[ThreatReport]:
    """Reports for every (obfuscator, attacker, threat), obfuscator-major order."""
    if not obfuscators or not threats:
        raise ValidationError("threat suite needs at least one obfuscator and one threat model")
    suite = ThreatSuite(ds, cfg, memo=memo, progress=progress, attackers=attackers)
    reports: List[ThreatReport] = []
    for spec in obfuscators:
        reports.extend(suite.run_method(spec, threats))
    return reports


def run_threat_eval(
    ds: LabeledDataset,
    obf: ObfuscatorSpec,
    threat: ThreatModelID,
    cfg: HarnessConfig,
    *,
    memo: Optional[InversionMemo] = None,
    attacker: Optional[Attacker] = None,
) -> ThreatReport:
    attackers = [attacker] if attacker is not None else None
    return run_threat_suite(ds, [obf], [threat], cfg, memo=memo, attackers=attackers)[0]


def items_per_method(ds: LabeledDataset, split: SplitSpec, threats: Sequence[ThreatModelID],
                     *, keep_test_images: bool = False) -> int:
    """Obfuscations one method costs in a suite run (for progress totals)."""
    trains, tests, fresh = _needs(threats, keep_test_images)
    per_id = (split.train + split.val if trains else 0) + (split.test if tests else 0) \
        + (split.test if fresh else 0)
    return ds.n_ids * per_id


def chance_level(n_classes: int) -> Tuple[float, float]:
    """Expected top-1 and top-5 of a random guess."""
    return 1.0 / n_classes, min(5, n_classes) / n_classes
