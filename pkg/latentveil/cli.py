"""CLI entry point for latentveil."""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from typing import List, Optional

from . import __version__
from .config import CLI_LINE, RunConfig
from .errors import ConfigError, LatentVeilError
from .remote import ClientConfig

log = logging.getLogger(__name__)

EPILOG = """
Examples:
  latentveil make-dataset --out data/
  latentveil invert --in data/id000_00.png --out w.dblt --trajectory traj.csv
  latentveil blur --in w.dblt --out w_blur.dblt --sigma 1.0
  latentveil generate --in w_blur.dblt --out blurred.png
  latentveil obfuscate --in face.png --out veiled.png --sigma 2.0
  latentveil baseline --in face.png --out pix.png --method pixelate@8
  latentveil metrics --ref face.png --test veiled.png
  latentveil eval --out threats.csv --quality quality.csv
  latentveil compare-optimizers --out optimizers.csv --set compare.seeds=5
  latentveil serve-mock --port 7700 --with-classifier
  latentveil identify --endpoint 127.0.0.1:7700 --in face.png
  latentveil config --set optimizer.kind=adam
"""


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", help="RunConfig file (key=value lines)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key (repeatable)")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="Increase log verbosity (-v INFO, -vv DEBUG)")
    parser.add_argument("-q", "--quiet", action="store_true",
                        help="Only emit warnings and errors; no progress bars")


def _add_cache_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--no-cache", action="store_true",
                        help="Disable the SQLite inversion cache for this run")
    parser.add_argument("--refresh", action="store_true",
                        help="Recompute inversions and write them back to the cache")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Latent-space image obfuscation (DeepBlur) and its evaluation harness.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        prog="latentveil",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("invert", help="Fit a latent to a PNG and write a LatentFile")
    p.add_argument("--in", dest="in_path", required=True, help="Target PNG")
    p.add_argument("--out", required=True, help="Output LatentFile (.dblt)")
    p.add_argument("--trajectory", help="Also write step,loss,elapsed_ms to this CSV")
    _add_cache_flags(p)

    p = sub.add_parser("blur", help="Gaussian-filter a LatentFile")
    p.add_argument("--in", dest="in_path", required=True, help="Input LatentFile")
    p.add_argument("--out", required=True, help="Output LatentFile")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--sigma", type=float, help="Filter sigma (default: obfuscator.sigma)")
    group.add_argument("--average", action="store_true", help="Average mode (sigma → ∞)")

    p = sub.add_parser("generate", help="Render a LatentFile to PNG")
    p.add_argument("--in", dest="in_path", required=True, help="Input LatentFile")
    p.add_argument("--out", required=True, help="Output PNG")

    p = sub.add_parser("obfuscate", help="DeepBlur a PNG (invert, blur latent, regenerate)")
    p.add_argument("--in", dest="in_path", required=True, help="Input PNG")
    p.add_argument("--out", required=True, help="Output PNG")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--sigma", type=float, help="Filter sigma (default: obfuscator.sigma)")
    group.add_argument("--average", action="store_true", help="Average mode (sigma → ∞)")
    p.add_argument("--latent-out", help="Also write the filtered latent")
    _add_cache_flags(p)

    p = sub.add_parser("baseline", help="Apply a pixel-space obfuscator to a PNG")
    p.add_argument("--in", dest="in_path", required=True, help="Input PNG")
    p.add_argument("--out", required=True, help="Output PNG")
    p.add_argument("--method", help="kind[@param], e.g. pixel_blur@2.0 (default: obfuscator.kind)")
    p.add_argument("--label", type=int, help="True identity of the input (advnoise only)")

    p = sub.add_parser("metrics", help="PSNR/SSIM/MS-SSIM (and FID for >= 2 pairs)")
    p.add_argument("--ref", nargs="+", required=True, help="Reference PNG(s)")
    p.add_argument("--test", nargs="+", required=True, help="Test PNG(s), paired in order")
    p.add_argument("--csv", help="Write method,psnr_db,ssim,ms_ssim,fid to this CSV")
    p.add_argument("--method", default="pair", help="Method name for the CSV row")

    p = sub.add_parser("eval", help="Threat-model evaluation over the synthetic dataset")
    p.add_argument("--out", required=True, help="Threat report CSV")
    p.add_argument("--quality", help="Also write per-method fidelity CSV over the test split")
    p.add_argument("--endpoint", help="Also attack the recognition service at host:port (sets eval.endpoint)")
    p.add_argument("--timeout", type=float, default=ClientConfig.timeout)
    p.add_argument("--retries", type=int, default=0)
    _add_cache_flags(p)

    p = sub.add_parser("compare-optimizers", help="Loss against steps/time per optimizer")
    p.add_argument("--out", required=True, help="CSV of optimizer,step,loss,elapsed_ms")
    p.add_argument("--init-compare", action="store_true",
                   help="Also compare mean-latent against random initialization")

    p = sub.add_parser("make-dataset", help="Write the synthetic identity dataset")
    p.add_argument("--out", required=True, help="Output directory")

    p = sub.add_parser("serve-mock", help="Run the mock recognition service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0, help="0 picks a free port")
    p.add_argument("--with-classifier", action="store_true",
                   help="Serve the clean attacker model instead of an empty gallery")

    p = sub.add_parser("identify", help="Query a running recognition service")
    p.add_argument("--endpoint", required=True, help="host:port")
    p.add_argument("--in", dest="in_paths", nargs="+", required=True, help="PNG(s) to identify")
    p.add_argument("--enroll", dest="enroll_dir",
                   help="Enroll a make-dataset directory and train before identifying")
    p.add_argument("--timeout", type=float, default=ClientConfig.timeout)
    p.add_argument("--retries", type=int, default=0)

    p = sub.add_parser("config", help="Print the resolved configuration and the cache size")
    p.add_argument("--clear-cache", action="store_true",
                   help="Delete every cached inversion before reporting the cache")

    for subparser in sub.choices.values():
        _add_common(subparser)
    return parser


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def configure_logging(verbose: int, quiet: bool) -> None:
    if quiet:
        level = logging.WARNING
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose >= 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
        force=True,
    )


def dispatch(args: argparse.Namespace, cfg: RunConfig) -> None:
    from . import orchestrator as orch

    progress = not args.quiet
    with contextlib.ExitStack() as stack:
        cache = None
        if hasattr(args, "no_cache"):
            cache = orch.open_cache(cfg, use_cache=not args.no_cache)
            if cache is not None:
                stack.callback(cache.close)
        refresh = getattr(args, "refresh", False)

        cmd = args.command
        if cmd == "invert":
            orch.run_invert(cfg, args.in_path, args.out, trajectory=args.trajectory,
                            cache=cache, refresh=refresh)
        elif cmd == "blur":
            orch.run_blur(cfg, args.in_path, args.out, sigma=args.sigma, average=args.average)
        elif cmd == "generate":
            orch.run_generate(cfg, args.in_path, args.out)
        elif cmd == "obfuscate":
            orch.run_obfuscate(cfg, args.in_path, args.out, sigma=args.sigma, average=args.average,
                               latent_out=args.latent_out, cache=cache, refresh=refresh)
        elif cmd == "baseline":
            orch.run_baseline(cfg, args.in_path, args.out, method=args.method, label=args.label)
        elif cmd == "metrics":
            orch.run_metrics(cfg, args.ref, args.test, csv_path=args.csv, method=args.method)
        elif cmd == "eval":
            if args.endpoint:
                cfg.set("eval.endpoint", args.endpoint, line=CLI_LINE, source="--endpoint")
            orch.run_eval(cfg, args.out, quality_csv=args.quality, cache=cache, refresh=refresh,
                          show_progress=progress,
                          client_config=ClientConfig(timeout=args.timeout, retries=args.retries))
        elif cmd == "compare-optimizers":
            orch.run_compare_optimizers(cfg, args.out, init_compare=args.init_compare,
                                        show_progress=progress)
        elif cmd == "make-dataset":
            orch.run_make_dataset(cfg, args.out, show_progress=progress)
        elif cmd == "serve-mock":
            orch.run_serve_mock(cfg, args.host, args.port, with_classifier=args.with_classifier)
        elif cmd == "identify":
            orch.run_identify(cfg, args.endpoint, args.in_paths,
                              client_config=ClientConfig(timeout=args.timeout, retries=args.retries),
                              enroll_dir=args.enroll_dir)
        elif cmd == "config":
            orch.run_config(cfg, clear_cache=args.clear_cache)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        cfg = RunConfig.load(args.config, args.set)
        log.info("latentveil %s: %s", __version__, args.command)
        dispatch(args, cfg)
    except ConfigError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except LatentVeilError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    log.info("%s finished", args.command)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
