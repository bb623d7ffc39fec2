"""RunConfig: flat ``key=value`` run configuration.

Sources, later overriding earlier:

1. built-in defaults (:data:`DEFAULTS`)
2. a config file given with ``--config`` (comments, blank lines and an
   ``export`` prefix are tolerated; values are split shell-style), or the
   ``*.manifest.yml`` of an earlier run, whose recorded config is replayed
3. repeated ``--set key=value`` flags

Unknown keys, values that do not coerce, and values a builder rejects as
out of range all raise :class:`ConfigError` naming the key and the line
(``<cli>`` for ``--set``).
"""
from __future__ import annotations

import logging
import shlex
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import yaml

from .errors import ConfigError, ShapeError, ValidationError
from .generator import (
    BlobGeneratorConfig,
    LabeledDataset,
    LatentCode,
    average_latent,
    make_identity_dataset,
    random_latent,
)
from .inversion import OPTIMIZER_KINDS, OptimizerConfig
from .obfuscation import OBFUSCATOR_KINDS, DeepBlurSettings, ObfuscatorSpec
from .perception import ExtractorSpec
from .remote import ClientConfig, RecognitionClient, parse_endpoint
from .threats import HarnessConfig, SplitSpec, ThreatModelID, TrainConfig
from .threats.harness import DEFAULT_ATTACKER, Attacker, RemoteAttacker, surrogate_attacker
from .utils.file_utils import MANIFEST_SUFFIX, read_manifest

log = logging.getLogger(__name__)

CLI_LINE = "<cli>"

PathLike = Union[str, Path]
T = TypeVar("T")


# ---- coercion ---------------------------------------------------------------

def _int(raw: str) -> int:
    return int(raw)


def _float(raw: str) -> float:
    return float(raw)


def _bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def coerce(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {raw!r}")
        return raw
    return coerce


def _auto_float(raw: str) -> Optional[float]:
    return None if raw == "auto" else float(raw)


def _rect(raw: str) -> Optional[Tuple[int, int, int, int]]:
    if not raw:
        return None
    parts = tuple(int(v) for v in raw.split(":"))
    if len(parts) != 4:
        raise ValueError(f"expected x0:y0:x1:y1, got {raw!r}")
    return parts  # type: ignore[return-value]


def _csv_list(item: Callable[[str], Any]) -> Callable[[str], Tuple[Any, ...]]:
    def coerce(raw: str) -> Tuple[Any, ...]:
        values = tuple(item(part.strip()) for part in raw.split(",") if part.strip())
        if not values:
            raise ValueError("expected a comma-separated list")
        return values
    return coerce


def _path(raw: str) -> str:
    return raw


def _method_token(raw: str) -> str:
    kind = raw.partition("@")[0].strip()
    if kind != "none" and kind not in OBFUSCATOR_KINDS:
        raise ValueError(f"unknown obfuscator {kind!r}")
    return raw


def _attacker_token(raw: str) -> str:
    kind, _, features = raw.partition("@")
    if kind != DEFAULT_ATTACKER or features not in ("", "pixel", "randconv"):
        raise ValueError(f"unknown attacker {raw!r} (expected {DEFAULT_ATTACKER}[@pixel|@randconv])")
    return raw


def _unique(coerce: Callable[[str], Tuple[Any, ...]]) -> Callable[[str], Tuple[Any, ...]]:
    def check(raw: str) -> Tuple[Any, ...]:
        values = coerce(raw)
        if len(set(values)) != len(values):
            raise ValueError("entries must be unique")
        return values
    return check


def _endpoint(raw: str) -> str:
    if raw:
        parse_endpoint(raw)
    return raw


# ---- key table ----------------------------------------------------------------

@dataclass(frozen=True)
class ConfigKey:
    name: str
    default: str
    coerce: Callable[[str], Any]
    help: str


_KEYS: Sequence[ConfigKey] = (
    ConfigKey("generator.blobs", "16", _int, "latent rows L (one per blob)"),
    ConfigKey("generator.size", "64", _int, "output image side S in pixels"),
    ConfigKey("generator.steepness", "4.0", _float, "blob edge steepness k"),
    ConfigKey("extractor.kind", "pixel", _choice("pixel", "randconv"), "inversion feature extractor"),
    ConfigKey("extractor.seed", "0", _int, "randconv weight seed"),
    ConfigKey("extractor.stages", "3", _int, "randconv stage count"),
    ConfigKey("optimizer.kind", "lbfgs", _choice(*OPTIMIZER_KINDS), "latent search optimizer"),
    ConfigKey("optimizer.learning_rate", "auto", _auto_float, "step size; auto = per-kind default"),
    ConfigKey("optimizer.momentum", "0.9", _float, "sgdm momentum"),
    ConfigKey("optimizer.beta1", "0.9", _float, "adam first-moment decay"),
    ConfigKey("optimizer.beta2", "0.999", _float, "adam second-moment decay"),
    ConfigKey("optimizer.epsilon", "1e-8", _float, "adagrad/adam denominator guard"),
    ConfigKey("optimizer.memory", "10", _int, "lbfgs curvature pairs kept"),
    ConfigKey("optimizer.max_steps", "200", _int, "step budget"),
    ConfigKey("optimizer.target_loss", "1e-4", _float, "stop once best loss is at or below"),
    ConfigKey("optimizer.armijo_c", "1e-4", _float, "lbfgs sufficient-decrease constant"),
    ConfigKey("optimizer.backtrack", "0.5", _float, "lbfgs step shrink factor"),
    ConfigKey("inversion.init", "mean", _choice("mean", "random"), "initial latent"),
    ConfigKey("inversion.init_seed", "0", _int, "seed of the initial latent draw(s)"),
    ConfigKey("inversion.mean_samples", "1000", _int, "draws averaged for the mean latent"),
    ConfigKey("obfuscator.kind", "deepblur", _choice(*OBFUSCATOR_KINDS), "default obfuscator"),
    ConfigKey("obfuscator.sigma", "1.0", _float, "Gaussian sigma (deepblur, pixel_blur)"),
    ConfigKey("obfuscator.block", "8", _int, "pixelate block size"),
    ConfigKey("obfuscator.mask_rect", "", _rect, "x0:y0:x1:y1; empty = central half"),
    ConfigKey("obfuscator.mask_value", "0.0", _float, "mask fill value"),
    ConfigKey("obfuscator.epsilon", "0.03", _float, "advnoise L-inf budget"),
    ConfigKey("obfuscator.steps", "10", _int, "advnoise ascent steps"),
    ConfigKey("obfuscator.seed", "0", _int, "advnoise random-start seed"),
    ConfigKey("dataset.n_ids", "10", _int, "identities K"),
    ConfigKey("dataset.n_per_id", "10", _int, "images per identity"),
    ConfigKey("dataset.jitter", "0.05", _float, "per-view latent noise"),
    ConfigKey("dataset.seed", "7", _int, "dataset seed"),
    ConfigKey("split.train", "7", _int, "train images per identity"),
    ConfigKey("split.val", "1", _int, "validation images per identity"),
    ConfigKey("split.test", "2", _int, "test images per identity"),
    ConfigKey("split.seed", "0", _int, "split shuffle seed"),
    ConfigKey("classifier.extractor", "randconv", _choice("pixel", "randconv"), "surrogate features"),
    ConfigKey("classifier.extractor_seed", "0", _int, "surrogate randconv seed"),
    ConfigKey("classifier.extractor_stages", "3", _int, "surrogate randconv stages"),
    ConfigKey("classifier.epochs", "60", _int, "training epochs"),
    ConfigKey("classifier.learning_rate", "0.1", _float, "training step size"),
    ConfigKey("classifier.momentum", "0.9", _float, "training momentum"),
    ConfigKey("classifier.batch_size", "16", _int, "minibatch size"),
    ConfigKey("classifier.weight_decay", "1e-4", _float, "L2 penalty"),
    ConfigKey("classifier.seed", "0", _int, "attacker training seed"),
    ConfigKey("metrics.fid_extractor_seed", "0", _int, "randconv seed of FID features"),
    ConfigKey("eval.threats", "T1,T2,T3", _csv_list(ThreatModelID.parse), "threat models"),
    ConfigKey(
        "eval.methods",
        "none,pixel_blur@1.0,pixelate@4,mask,advnoise@0.03,"
        "deepblur@0.5,deepblur@1.0,deepblur_average",
        _csv_list(_method_token),
        "obfuscators as kind[@param]",
    ),
    ConfigKey("eval.attackers", DEFAULT_ATTACKER, _unique(_csv_list(_attacker_token)),
              "local attackers as logreg[@features]"),
    ConfigKey("eval.endpoint", "", _endpoint, "host:port of a recognition service to attack; empty = none"),
    ConfigKey("compare.optimizers", "lbfgs,adam,adagrad,sgdm", _csv_list(_choice(*OPTIMIZER_KINDS)),
              "optimizers to compare"),
    ConfigKey("compare.seeds", "20", _int, "benchmark targets"),
    ConfigKey("compare.threshold", "1e-3", _float, "loss threshold for steps-to-threshold"),
    ConfigKey("compare.blobs", "16", _int, "benchmark latent rows"),
    ConfigKey("compare.size", "64", _int, "benchmark image side"),
    ConfigKey("timing", "none", _choice("none", "wall"), "none records zero elapsed time"),
    ConfigKey("cache.enabled", "true", _bool, "persist inversions in SQLite"),
    ConfigKey("cache.path", "", _path, "cache file; empty = XDG cache dir"),
)

DEFAULTS: Dict[str, ConfigKey] = {k.name: k for k in _KEYS}


def _frozen_clock() -> float:
    return 0.0


# ---- RunConfig ----------------------------------------------------------------

class RunConfig:
    """Resolved configuration values plus where each one came from."""

    def __init__(self) -> None:
        self._raw: Dict[str, str] = {name: key.default for name, key in DEFAULTS.items()}
        self._values: Dict[str, Any] = {
            name: key.coerce(key.default) for name, key in DEFAULTS.items()
        }
        self._sources: Dict[str, str] = {name: "default" for name in DEFAULTS}
        self._lines: Dict[str, object] = {}
        self._order: Dict[str, int] = {}
        self._assignments = 0

    # ---- loading -----------------------------------------------------------

    @classmethod
    def load(cls, path: Optional[PathLike] = None, overrides: Iterable[str] = ()) -> RunConfig:
        cfg = cls()
        if path is not None:
            cfg.update_from_file(path)
        for item in overrides:
            cfg.set_assignment(item, line=CLI_LINE, source="--set")
        return cfg

    def set(self, key: str, raw: str, *, line: object = None, source: str = "set") -> None:
        spec = DEFAULTS.get(key)
        if spec is None:
            raise ConfigError("unknown key", key=key, line=line)
        try:
            value = spec.coerce(raw)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value {raw!r}: {e}", key=key, line=line) from e
        self._raw[key] = raw
        self._values[key] = value
        self._sources[key] = source
        self._lines[key] = line
        self._assignments += 1
        self._order[key] = self._assignments

    def set_assignment(self, text: str, *, line: object, source: str) -> None:
        """Apply one ``key=value`` assignment."""
        if "=" not in text:
            raise ConfigError(f"expected key=value, got {text!r}", line=line)
        key, raw_value = text.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("empty key", line=line)
        raw_value = raw_value.strip()
        if raw_value:
            try:
                parts = shlex.split(raw_value, posix=True)
            except ValueError:
                parts = [raw_value.strip("'\"")]
            value = parts[0] if len(parts) == 1 else " ".join(parts)
        else:
            value = ""
        self.set(key, value, line=line, source=source)

    def update_from_file(self, path: PathLike) -> None:
        p = Path(path)
        if p.name.endswith(MANIFEST_SUFFIX):
            self._update_from_manifest(p)
            return
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {p}: {e}") from e
        for lineno, raw_line in enumerate(text.splitlines(), start=1):
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("export "):
                line = line[len("export "):].lstrip()
            self.set_assignment(line, line=lineno, source=str(p))
        log.info("Loaded config from %s", p)

    def _update_from_manifest(self, p: Path) -> None:
        """Replay the resolved configuration recorded next to an earlier run's CSV."""
        try:
            data = read_manifest(p)
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read manifest {p}: {e}") from e
        recorded = data.get("config") if isinstance(data, dict) else None
        if not isinstance(recorded, dict):
            raise ConfigError(f"manifest {p} has no config mapping")
        for key in sorted(recorded):
            self.set(str(key), str(recorded[key]), source=str(p))
        log.info("Replayed config from manifest %s", p)

    # ---- access ------------------------------------------------------------

    def __getitem__(self, key: str) -> Any:
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError("unknown key", key=key) from None

    def raw(self, key: str) -> str:
        return self._raw[key]

    def source(self, key: str) -> str:
        return self._sources[key]

    def rows(self) -> List[Tuple[str, str, str]]:
        """(key, value, source) for every key in table order."""
        return [(name, self._raw[name], self._sources[name]) for name in DEFAULTS]

    def as_dict(self) -> Dict[str, str]:
        """The fully resolved configuration as strings (manifest form)."""
        return dict(self._raw)

    # ---- builders ----------------------------------------------------------

    def _build(self, keys: Sequence[str], factory: Callable[[], T]) -> T:
        """Run ``factory``; a range error becomes a ConfigError on the key that caused it."""
        try:
            return factory()
        except (ValidationError, ShapeError) as e:
            key = self._culprit(keys, factory)
            if key is None:
                raise
            raise ConfigError(str(e), key=key, line=self._lines.get(key)) from e

    def _culprit(self, keys: Sequence[str], factory: Callable[[], Any]) -> Optional[str]:
        # Latest assignment first: the culprit is the key whose default makes the group valid.
        changed = sorted((k for k in keys if k in self._order), key=self._order.__getitem__,
                         reverse=True)
        for key in changed:
            saved = self._values[key]
            self._values[key] = DEFAULTS[key].coerce(DEFAULTS[key].default)
            try:
                factory()
            except (ValidationError, ShapeError, ConfigError):
                continue
            else:
                return key
            finally:
                self._values[key] = saved
        return None

    @staticmethod
    def _group(prefix: str) -> List[str]:
        return [name for name in DEFAULTS if name.startswith(prefix)]

    def generator(self) -> BlobGeneratorConfig:
        return self._build(self._group("generator."), lambda: BlobGeneratorConfig(
            n_blobs=self["generator.blobs"],
            size=self["generator.size"],
            steepness=self["generator.steepness"],
        ))

    def extractor(self) -> ExtractorSpec:
        return self._build(self._group("extractor."), lambda: ExtractorSpec(
            self["extractor.kind"], self["extractor.seed"], self["extractor.stages"]))

    def optimizer(self) -> OptimizerConfig:
        return self._build(self._group("optimizer."), lambda: OptimizerConfig(
            kind=self["optimizer.kind"],
            learning_rate=self["optimizer.learning_rate"],
            momentum=self["optimizer.momentum"],
            beta1=self["optimizer.beta1"],
            beta2=self["optimizer.beta2"],
            epsilon=self["optimizer.epsilon"],
            memory=self["optimizer.memory"],
            max_steps=self["optimizer.max_steps"],
            target_loss=self["optimizer.target_loss"],
            armijo_c=self["optimizer.armijo_c"],
            backtrack=self["optimizer.backtrack"],
        ))

    def mean_latent(self, generator: Optional[BlobGeneratorConfig] = None) -> LatentCode:
        gen = generator or self.generator()
        return self._build(["inversion.mean_samples"], lambda: average_latent(
            gen, self["inversion.mean_samples"], self["inversion.init_seed"]))

    def initial_latent(self, generator: Optional[BlobGeneratorConfig] = None) -> LatentCode:
        gen = generator or self.generator()
        if self["inversion.init"] == "random":
            return random_latent(gen, self["inversion.init_seed"])
        return self.mean_latent(gen)

    def deepblur_settings(self) -> DeepBlurSettings:
        gen = self.generator()
        return DeepBlurSettings(
            generator=gen,
            extractor=self.extractor(),
            optimizer=self.optimizer(),
            init=self.initial_latent(gen),
        )

    def obfuscator_defaults(self) -> Dict[str, Any]:
        return {
            "sigma": self["obfuscator.sigma"],
            "block": self["obfuscator.block"],
            "rect": self["obfuscator.mask_rect"],
            "mask_value": self["obfuscator.mask_value"],
            "epsilon": self["obfuscator.epsilon"],
            "steps": self["obfuscator.steps"],
            "seed": self["obfuscator.seed"],
        }

    def obfuscator(self, token: Optional[str] = None) -> ObfuscatorSpec:
        """The configured obfuscator, or ``token`` (``kind[@param]``) over config defaults."""
        return self._build(self._group("obfuscator."), lambda: self._obfuscator_spec(token))

    def _obfuscator_spec(self, token: Optional[str]) -> ObfuscatorSpec:
        if token is None:
            return ObfuscatorSpec(kind=self["obfuscator.kind"], **self.obfuscator_defaults())
        return ObfuscatorSpec.parse(token, **self.obfuscator_defaults())

    def eval_methods(self) -> List[ObfuscatorSpec]:
        return self._build(
            self._group("obfuscator.") + ["eval.methods"],
            lambda: [self._obfuscator_spec(token) for token in self["eval.methods"]],
        )

    def eval_threats(self) -> List[ThreatModelID]:
        return list(self["eval.threats"])

    def attackers(self, client_config: Optional[ClientConfig] = None) -> List[Attacker]:
        """Configured local attackers, then the remote one when ``eval.endpoint`` is set."""
        train = self.train_config()
        found: List[Attacker] = self._build(
            ["eval.attackers"], lambda: [surrogate_attacker(t, train) for t in self["eval.attackers"]])
        endpoint = self["eval.endpoint"]
        if endpoint:
            client = RecognitionClient.from_config(client_config or ClientConfig(), endpoint)
            found.append(RemoteAttacker("remote", client))
        return found

    def dataset(self) -> LabeledDataset:
        gen = self.generator()
        return self._build(self._group("dataset."), lambda: make_identity_dataset(
            self["dataset.n_ids"],
            self["dataset.n_per_id"],
            self["dataset.jitter"],
            self["dataset.seed"],
            gen,
        ))

    def split(self) -> SplitSpec:
        return self._build(self._group("split."), lambda: SplitSpec(
            self["split.train"], self["split.val"], self["split.test"], self["split.seed"]))

    def classifier_extractor(self) -> ExtractorSpec:
        return self._build(
            ["classifier.extractor", "classifier.extractor_seed", "classifier.extractor_stages"],
            lambda: ExtractorSpec(self["classifier.extractor"], self["classifier.extractor_seed"],
                                  self["classifier.extractor_stages"]),
        )

    def train_config(self) -> TrainConfig:
        features = self.classifier_extractor()
        return self._build(self._group("classifier."), lambda: TrainConfig(
            epochs=self["classifier.epochs"],
            learning_rate=self["classifier.learning_rate"],
            momentum=self["classifier.momentum"],
            batch_size=self["classifier.batch_size"],
            weight_decay=self["classifier.weight_decay"],
            seed=self["classifier.seed"],
            extractor=features,
        ))

    def harness(self) -> HarnessConfig:
        return HarnessConfig(split=self.split(), train=self.train_config(),
                             deepblur=self.deepblur_settings())

    def fid_extractor(self) -> ExtractorSpec:
        return self._build(
            ["metrics.fid_extractor_seed", "classifier.extractor_stages"],
            lambda: ExtractorSpec("randconv", self["metrics.fid_extractor_seed"],
                                  self["classifier.extractor_stages"]),
        )

    def compare_generator(self) -> BlobGeneratorConfig:
        return self._build(["compare.blobs", "compare.size", "generator.steepness"],
                           lambda: BlobGeneratorConfig(
                               n_blobs=self["compare.blobs"],
                               size=self["compare.size"],
                               steepness=self["generator.steepness"],
                           ))

    def validate(self) -> None:
        """Run every inexpensive builder so range errors surface before any work."""
        self.generator()
        self.extractor()
        self.optimizer()
        self.obfuscator()
        self.eval_methods()
        self.split()
        self.train_config()
        self.attackers()
        self.fid_extractor()
        self.compare_generator()

    def clock(self) -> Callable[[], float]:
        """Elapsed-time source: frozen at 0 for ``timing=none``."""
        return time.perf_counter if self["timing"] == "wall" else _frozen_clock

    def cache_path(self) -> Optional[str]:
        return self["cache.path"] or None
