"""Command orchestration: one function per CLI command.

This module is the seam between the CLI layer and the library. Every public
function takes a resolved :class:`RunConfig` plus file paths, prints
human-readable tables to stdout and writes artifacts (PNG, LatentFile, CSV
and its manifest). Caches, clients and progress display are injectable.
"""
from __future__ import annotations

import csv
import logging
import math
import sqlite3
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from . import __version__
from .config import DEFAULTS, RunConfig
from .errors import ImageIOError, ValidationError
from .generator import (
    BlobGeneratorConfig,
    LabeledDataset,
    dataset_checksum,
    synth_generate,
)
from .imaging import ImageTensor, center_crop_resize, load_image, save_image
from .inversion import InversionResult, trajectory_rows
from .inversion.benchmark import ComparisonRow, compare_optimizers, init_comparison
from .latentfile import read_latent, write_latent
from .metrics import QualityReport, quality_report
from .obfuscation import average_latent_mode, blur_latent, deep_blur, obfuscate
from .remote import ClientConfig, MockServiceHandle, RecognitionClient, mock_service
from .reports import (
    inversion_table,
    optimizer_table,
    quality_table,
    simple_table,
    threat_table,
)
from .store import InversionCache, default_db_path
from .threats import InversionMemo, ThreatReport
from .threats.classifier import SurrogateClassifier
from .threats.harness import ThreatSuite, chance_level, csv_layout, items_per_method
from .utils.file_utils import write_csv, write_manifest

log = logging.getLogger(__name__)

PathLike = Union[str, Path]
Advance = Callable[..., None]

TRAJECTORY_HEADER = ("step", "loss", "elapsed_ms")
LABELS_HEADER = ("file", "label")


# ---- shared helpers ----------------------------------------------------------

def open_cache(cfg: RunConfig, use_cache: bool = True) -> Optional[InversionCache]:
    """The configured inversion cache, or None when disabled or unusable."""
    if not use_cache or not cfg["cache.enabled"]:
        return None
    path = cfg.cache_path() or default_db_path()
    try:
        return InversionCache(path)
    except (OSError, sqlite3.Error) as e:
        log.warning("Inversion cache at %s unavailable (%s); continuing without it", path, e)
        return None


@contextmanager
def progress_bar(description: str, total: int, enabled: bool = True) -> Iterator[Advance]:
    """Yield an ``advance()`` callable backed by a rich progress bar on stderr."""
    if not enabled:
        yield lambda *_: None
        return
    with Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=Console(stderr=True),
        transient=True,
    ) as bar:
        task = bar.add_task(description, total=total)
        yield lambda *_: bar.advance(task)


def _manifest(cfg: RunConfig, command: str, **facts: Any) -> Dict[str, Any]:
    return {"command": command, "version": __version__, "config": cfg.as_dict(), "report": facts}


def _fit_to_generator(img: ImageTensor, gen: BlobGeneratorConfig) -> ImageTensor:
    if img.height == gen.size and img.width == gen.size:
        return img
    log.info("Center-cropping %dx%d input to %dx%d", img.height, img.width, gen.size, gen.size)
    return center_crop_resize(img, gen.size)


def _timing_normalized(result: InversionResult, cfg: RunConfig) -> InversionResult:
    # Cached results may come from a wall-clock run.
    if cfg["timing"] == "wall" or not any(result.elapsed):
        return result
    return replace(result, elapsed=[0.0] * len(result.elapsed))


def _inversion(cfg: RunConfig, img: ImageTensor, cache: Optional[InversionCache],
               refresh: bool) -> InversionResult:
    memo = InversionMemo(cfg.deepblur_settings(), cache=cache, refresh=refresh, clock=cfg.clock())
    return _timing_normalized(memo(img), cfg)


def build_dataset(cfg: RunConfig) -> LabeledDataset:
    return cfg.dataset()


# ---- latent pipeline: invert → blur → generate --------------------------------

def run_invert(
    cfg: RunConfig,
    in_path: PathLike,
    out_path: PathLike,
    *,
    trajectory: Optional[PathLike] = None,
    cache: Optional[InversionCache] = None,
    refresh: bool = False,
) -> InversionResult:
    gen = cfg.generator()
    img = _fit_to_generator(load_image(in_path), gen)
    result = _inversion(cfg, img, cache, refresh)
    write_latent(result.latent, out_path)
    if trajectory is not None:
        write_csv(trajectory, TRAJECTORY_HEADER, trajectory_rows(result))
        write_manifest(trajectory, _manifest(
            cfg, "invert",
            input=Path(in_path).name,
            steps=result.steps_taken,
            best_loss=result.best_loss,
            converged=result.converged,
        ))
    print(inversion_table(result))
    log.info("Inverted %s → %s (%d steps, best loss %.3e)",
             in_path, out_path, result.steps_taken, result.best_loss)
    return result


def run_blur(
    cfg: RunConfig,
    in_path: PathLike,
    out_path: PathLike,
    *,
    sigma: Optional[float] = None,
    average: bool = False,
) -> None:
    w = read_latent(in_path)
    if average:
        out = average_latent_mode(w)
    else:
        out = blur_latent(w, cfg["obfuscator.sigma"] if sigma is None else sigma)
    write_latent(out, out_path)


def run_generate(cfg: RunConfig, in_path: PathLike, out_path: PathLike) -> ImageTensor:
    img = synth_generate(read_latent(in_path), cfg.generator())
    save_image(img, out_path)
    return img


# ---- image → image ---------------------------------------------------------------

def run_obfuscate(
    cfg: RunConfig,
    in_path: PathLike,
    out_path: PathLike,
    *,
    sigma: Optional[float] = None,
    average: bool = False,
    latent_out: Optional[PathLike] = None,
    cache: Optional[InversionCache] = None,
    refresh: bool = False,
) -> None:
    """DeepBlur one image: invert, filter the latent, regenerate."""
    settings = cfg.deepblur_settings()
    img = _fit_to_generator(load_image(in_path), settings.generator)
    inversion = _inversion(cfg, img, cache, refresh)
    level = None if average else (cfg["obfuscator.sigma"] if sigma is None else sigma)
    result = deep_blur(img, level, settings, inversion=inversion)
    save_image(result.image, out_path)
    if latent_out is not None:
        write_latent(result.latent_after, latent_out)
    print(inversion_table(inversion))


def _user_surrogate(cfg: RunConfig) -> SurrogateClassifier:
    suite = ThreatSuite(build_dataset(cfg), cfg.harness())
    return suite.user_surrogate()


def run_baseline(
    cfg: RunConfig,
    in_path: PathLike,
    out_path: PathLike,
    *,
    method: Optional[str] = None,
    label: Optional[int] = None,
    surrogate: Optional[SurrogateClassifier] = None,
) -> None:
    """Apply a pixel-space obfuscator (config default or ``method`` token)."""
    spec = cfg.obfuscator(method)
    if spec.is_deepblur:
        raise ValidationError(f"{spec.kind} works in latent space; use the obfuscate command")
    img = load_image(in_path)
    if spec.kind == "advnoise":
        if label is None:
            raise ValidationError("advnoise needs --label (the true identity of the input)")
        surrogate = surrogate or _user_surrogate(cfg)
        if not 0 <= label < surrogate.n_classes:
            raise ValidationError(f"label {label} outside [0, {surrogate.n_classes})")
    save_image(obfuscate(img, spec, surrogate=surrogate, label=label), out_path)
    log.info("Applied %s to %s", spec.label, in_path)


# ---- reports ---------------------------------------------------------------------

def run_metrics(
    cfg: RunConfig,
    refs: Sequence[PathLike],
    tests: Sequence[PathLike],
    *,
    csv_path: Optional[PathLike] = None,
    method: str = "pair",
) -> QualityReport:
    if len(refs) != len(tests):
        raise ValidationError(f"{len(refs)} reference images vs {len(tests)} test images")
    report = quality_report(method, [load_image(p) for p in refs], [load_image(p) for p in tests],
                            cfg.fid_extractor())
    if csv_path is not None:
        write_csv(csv_path, QualityReport.CSV_HEADER, [report.as_csv_row()])
        write_manifest(csv_path, _manifest(cfg, "metrics", n=report.n))
    print(quality_table([report]))
    return report


def run_eval(
    cfg: RunConfig,
    out_csv: PathLike,
    *,
    quality_csv: Optional[PathLike] = None,
    cache: Optional[InversionCache] = None,
    refresh: bool = False,
    show_progress: bool = True,
    client_config: Optional[ClientConfig] = None,
) -> List[ThreatReport]:
    """Threat-model evaluation of every configured method and attacker; optional fidelity table."""
    ds = build_dataset(cfg)
    harness = cfg.harness()
    methods = cfg.eval_methods()
    threats = cfg.eval_threats()
    attackers = cfg.attackers(client_config)
    memo = InversionMemo(harness.deepblur, cache=cache, refresh=refresh, clock=cfg.clock())
    keep = quality_csv is not None
    total = items_per_method(ds, harness.split, threats, keep_test_images=keep) * len(methods)

    reports: List[ThreatReport] = []
    with progress_bar("eval", total, show_progress) as advance:
        suite = ThreatSuite(ds, harness, memo=memo, progress=advance, keep_test_images=keep,
                            attackers=attackers)
        for spec in methods:
            reports.extend(suite.run_method(spec, threats))

    header, rows = csv_layout(reports)
    write_csv(out_csv, header, rows)
    top1, top5 = chance_level(ds.n_ids)
    write_manifest(out_csv, _manifest(
        cfg, "eval",
        n_classes=ds.n_ids,
        n_test=reports[0].n_test if reports else 0,
        chance_top1=top1,
        chance_top5=top5,
        attackers={a.name: a.describe() for a in attackers},
        dataset_checksum=dataset_checksum(ds),
    ))
    print(threat_table(reports))

    if quality_csv is not None:
        originals = [item.image for item in suite.split.test]
        quality = [
            quality_report(spec.label, originals, suite.obfuscated_test[spec.label],
                           cfg.fid_extractor())
            for spec in methods
        ]
        write_csv(quality_csv, QualityReport.CSV_HEADER, [q.as_csv_row() for q in quality])
        write_manifest(quality_csv, _manifest(cfg, "eval", n=len(originals)))
        print()
        print(quality_table(quality))
    if cache is not None:
        log.info("Inversion cache: %d hits, %d misses", cache.hits, cache.misses)
    return reports


def run_compare_optimizers(
    cfg: RunConfig,
    out_csv: PathLike,
    *,
    init_compare: bool = False,
    show_progress: bool = True,
) -> None:
    gen = cfg.compare_generator()
    spec = cfg.extractor()
    base = cfg.optimizer()
    kinds = list(cfg["compare.optimizers"])
    n_seeds = cfg["compare.seeds"]
    threshold = cfg["compare.threshold"]
    init = cfg.mean_latent(gen) if cfg["inversion.init"] == "mean" else None

    with progress_bar("compare-optimizers", n_seeds * len(kinds), show_progress) as advance:
        comparison = compare_optimizers(
            gen, spec, base,
            kinds=kinds, n_seeds=n_seeds, threshold=threshold, init=init,
            clock=cfg.clock(), progress=advance,
        )
    write_csv(out_csv, ComparisonRow.CSV_HEADER, [row.as_csv_row() for row in comparison.rows])
    facts: Dict[str, Any] = {
        "n_seeds": n_seeds,
        "threshold": threshold,
        "median_steps": {e["optimizer"]: e["median_steps"] for e in comparison.summary()},
    }
    print(optimizer_table(comparison))

    if init_compare:
        from_mean, from_random = init_comparison(
            gen, spec, base, cfg.mean_latent(gen),
            n_seeds=n_seeds, threshold=threshold, clock=cfg.clock(),
        )
        medians = {"mean": _median_steps(from_mean), "random": _median_steps(from_random)}
        facts["init_median_steps"] = medians
        print()
        print(simple_table(
            [[name, "never" if math.isinf(value) else f"{value:g}"] for name, value in medians.items()],
            headers=["Init", f"Median steps to {threshold:g}"],
        ))
    write_manifest(out_csv, _manifest(cfg, "compare-optimizers", **facts))


def _median_steps(values: Sequence[Optional[int]]) -> float:
    return float(np.median([math.inf if v is None else float(v) for v in values]))


# ---- dataset ---------------------------------------------------------------------

def dataset_file_name(label: int, index: int) -> str:
    return f"id{label:03d}_{index:02d}"


def run_make_dataset(cfg: RunConfig, out_dir: PathLike, *, show_progress: bool = True) -> str:
    """Write the synthetic identity dataset; returns its checksum."""
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ImageIOError(f"cannot create {root}: {e}", path=str(root)) from e
    ds = build_dataset(cfg)
    counters: Dict[int, int] = {}
    rows: List[Tuple[str, int]] = []
    with progress_bar("make-dataset", len(ds), show_progress) as advance:
        for item in ds.items:
            index = counters.get(item.label, 0)
            counters[item.label] = index + 1
            stem = dataset_file_name(item.label, index)
            save_image(item.image, root / f"{stem}.png")
            write_latent(item.latent, root / f"{stem}.dblt")
            rows.append((f"{stem}.png", item.label))
            advance()
    checksum = dataset_checksum(ds)
    labels_csv = root / "labels.csv"
    write_csv(labels_csv, LABELS_HEADER, rows)
    write_manifest(labels_csv, _manifest(
        cfg, "make-dataset", n=len(ds), n_classes=ds.n_ids, checksum=checksum,
    ))
    print(simple_table(
        [["images", len(ds)], ["identities", ds.n_ids], ["checksum", checksum]],
        headers=["Dataset", str(root)],
    ))
    return checksum


def read_labels(dataset_dir: PathLike) -> List[Tuple[Path, int]]:
    """(image path, label) pairs from a ``labels.csv`` written by make-dataset."""
    root = Path(dataset_dir)
    path = root / "labels.csv"
    try:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            return [(root / row["file"], int(row["label"])) for row in reader]
    except OSError as e:
        raise ImageIOError(f"cannot read {path}: {e}", path=str(path)) from e
    except (KeyError, ValueError) as e:
        raise ValidationError(f"{path} is not a file,label table: {e}") from e


# ---- remote ---------------------------------------------------------------------

def start_mock_service(
    cfg: RunConfig,
    host: str = "127.0.0.1",
    port: int = 0,
    *,
    with_classifier: bool = False,
) -> MockServiceHandle:
    """Start the mock service; ``with_classifier`` serves the clean attacker model."""
    classifier = None
    if with_classifier:
        classifier = ThreatSuite(build_dataset(cfg), cfg.harness()).clean_model()
    return mock_service(classifier, host, port, train_config=cfg.train_config())


def run_serve_mock(cfg: RunConfig, host: str, port: int, *, with_classifier: bool = False) -> None:
    """Serve until interrupted."""
    handle = start_mock_service(cfg, host, port, with_classifier=with_classifier)
    print(f"serving on {handle.endpoint}", flush=True)
    try:
        handle.wait()
    except KeyboardInterrupt:
        log.info("Interrupted; shutting down")
    finally:
        handle.shutdown()


def run_identify(
    cfg: RunConfig,
    endpoint: str,
    paths: Sequence[PathLike],
    *,
    client_config: Optional[ClientConfig] = None,
    enroll_dir: Optional[PathLike] = None,
    client: Optional[RecognitionClient] = None,
) -> List[Tuple[str, int, float]]:
    """Identify images through a running service, optionally enrolling a dataset first."""
    client = client or RecognitionClient.from_config(client_config or ClientConfig(), endpoint)
    if enroll_dir is not None:
        gallery = read_labels(enroll_dir)
        for path, label in gallery:
            client.enroll(label, load_image(path))
        client.train()
        log.info("Enrolled %d images from %s", len(gallery), enroll_dir)
    answers = []
    for path in paths:
        label, confidence = client.identify(load_image(path))
        answers.append((str(path), label, confidence))
    print(simple_table(answers, headers=["Image", "Identity", "Confidence"]))
    return answers


# ---- config ----------------------------------------------------------------------

def run_config(cfg: RunConfig, clear_cache: bool = False) -> None:
    """Print the resolved configuration and the state of the inversion cache."""
    cfg.validate()
    rows = [[key, value, source, DEFAULTS[key].help] for key, value, source in cfg.rows()]
    print(simple_table(rows, headers=["Key", "Value", "Source", "Meaning"]))
    cache = open_cache(cfg)
    if cache is None:
        print("cache: disabled")
        return
    with cache:
        if clear_cache:
            dropped = len(cache)
            cache.clear()
            log.info("Dropped %d cached inversions", dropped)
        print(f"cache: {cache.db_path} ({len(cache)} inversions)")
