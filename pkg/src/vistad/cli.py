"""Command-line orchestration of the two-stage pipeline.

Subcommands: ``screen`` (stage 1 proposals + score dumps), ``verify`` (stage 2
refinement + token accounting), ``eval`` (contextual F1 reports), ``run``
(everything in sequence) and ``render`` (persist rasters). One bad series
never kills a run: failures are recorded per series and the exit code is
nonzero only when every series failed. All outputs are deterministic
functions of inputs and configuration when the mock client is used.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .detections import Detections
from .embed import CachedProvider, FeatureCache, ProviderId, ReferenceProvider, RemoteProvider
from .errors import ConfigurationError, MalformedInputError, PipelineError
from .evaluate import (
    aggregate,
    alpha_key,
    evaluate_detection_sets,
    evaluate_score_series,
    render_report_table,
)
from .ingest import ManifestEntry, load_labels, load_manifest, load_series, preprocess
from .raster import AnnotatedPlotSpec, render_full_annotated
from .screen import ScreenSettings, screen_series
from .verify import HttpVisionClient, MockEchoClient, TokenStats, verify_series

log = logging.getLogger(__name__)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _screen_settings(config: PipelineConfig) -> ScreenSettings:
    return ScreenSettings(
        window_length=config.window_length,
        stride=config.stride,
        scales=tuple(config.scales),
        quantile_q=config.quantile_q,
        variant=config.variant,
        exclude_self=config.exclude_self,
        ewma_enabled=config.ewma_enabled,
        ewma_span=config.ewma_span,
        alpha_list=tuple(config.alpha_list),
        gap_merge=config.gap_merge,
    )


def build_provider(config: PipelineConfig):
    if config.provider == "reference":
        provider = ReferenceProvider(config.patch_grid, config.window_length)
    else:
        pid = ProviderId(config.provider_name, config.patch_grid, config.embed_dim, config.window_length)
        provider = RemoteProvider(
            config.provider_url,
            pid,
            timeout=config.provider_timeout,
            max_retries=config.provider_retries,
        )
    if config.cache_dir:
        provider = CachedProvider(provider, FeatureCache(config.cache_dir))
    return provider


def build_client(config: PipelineConfig):
    if config.client == "mock-echo":
        return MockEchoClient(config.mock_confidence)
    return HttpVisionClient(
        config.client_endpoint,
        config.client_model,
        api_key_env=config.api_key_env,
        temperature=config.temperature,
    )


def _load_entry_values(entry: ManifestEntry) -> np.ndarray:
    series = load_series(entry.series)
    return preprocess(series, entry.changepoint).values


def _entries(manifest_path: str) -> list[ManifestEntry]:
    manifest = load_manifest(manifest_path)
    seen: set[str] = set()
    for entry in manifest.entries:
        sid = entry.series_id
        if sid in seen:
            raise MalformedInputError(f"duplicate series id {sid!r} in manifest")
        seen.add(sid)
    return manifest.entries


def _map_entries(entries, fn, workers: int) -> dict[str, dict]:
    """Apply fn(entry) -> dict per series with fault isolation; results keyed
    and emitted in series-id order regardless of scheduling."""

    def guarded(entry):
        try:
            return entry.series_id, fn(entry)
        except PipelineError as exc:
            log.error("series %s failed: %s", entry.series_id, exc)
            return entry.series_id, {"error": str(exc)}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(guarded, entries))
    else:
        results = [guarded(e) for e in entries]
    return dict(sorted(results))


# ---------------------------------------------------------------- screen


def cmd_screen(manifest_path: str, config: PipelineConfig, outdir: Path) -> int:
    entries = _entries(manifest_path)
    if not entries:
        log.warning("manifest %s holds no series; nothing to do", manifest_path)
        _write_json(outdir / "proposals.json", {"config": config.to_json(), "series": {}})
        return 0
    provider = build_provider(config)
    settings = _screen_settings(config)

    def one(entry: ManifestEntry) -> dict:
        values = _load_entry_values(entry)
        series_dir = outdir / entry.series_id
        series_dir.mkdir(parents=True, exist_ok=True)

        on_raster = None
        if config.save_rasters:
            def on_raster(start, raster, _dir=series_dir):
                raster.save(_dir / f"win_{start}.png")

        result = screen_series(values, provider, settings, on_raster=on_raster)
        (series_dir / "scores.bin").write_bytes(result.score.astype("<f8").tobytes())
        if config.dump_map:
            (series_dir / "map.bin").write_bytes(result.anomaly_map.values.astype("<f8").tobytes())
        alphas = {
            alpha_key(a): {
                "tau": result.taus[a],
                "intervals": result.proposals[a].to_json(),
            }
            for a in config.alpha_list
        }
        row = {
            "T": len(values),
            "dataset": entry.dataset,
            "scores": f"{entry.series_id}/scores.bin",
            "alphas": alphas,
            "error": None,
        }
        if config.dump_map:
            row["map"] = {"path": f"{entry.series_id}/map.bin",
                          "rows": int(result.anomaly_map.values.shape[0])}
        return row

    series = _map_entries(entries, one, config.workers)
    _write_json(outdir / "proposals.json", {"config": config.to_json(), "series": series})
    failures = sum(1 for row in series.values() if row.get("error"))
    log.info("screened %d series (%d failed)", len(series), failures)
    return 1 if failures == len(series) else 0


# ---------------------------------------------------------------- verify


def cmd_verify(
    manifest_path: str,
    config: PipelineConfig,
    outdir: Path,
    proposals_path: Path | None = None,
) -> int:
    proposals_path = proposals_path or outdir / "proposals.json"
    if not proposals_path.exists():
        raise ConfigurationError(f"proposals file {proposals_path} not found; run screen first")
    proposals_doc = json.loads(proposals_path.read_text())
    entries = {e.series_id: e for e in _entries(manifest_path)}
    client = build_client(config)
    plot_spec = AnnotatedPlotSpec(
        config.canvas_width, config.canvas_height, config.tick_count, config.y_precision
    )

    todo = [
        entries[sid]
        for sid in sorted(proposals_doc["series"])
        if sid in entries and not proposals_doc["series"][sid].get("error")
    ]

    def one(entry: ManifestEntry) -> dict:
        row = proposals_doc["series"][entry.series_id]
        values = _load_entry_values(entry)
        image_png = render_full_annotated(values, plot_spec).to_png_bytes()
        T = row["T"]
        usage = TokenStats()
        alphas_out = {}
        for akey, info in sorted(row["alphas"].items()):
            proposals = Detections.from_json(info["intervals"])
            try:
                final, result = verify_series(
                    proposals,
                    image_png,
                    T,
                    client,
                    min_conf=config.min_conf,
                    max_retries=config.client_retries,
                )
                usage = usage + result.usage
                alphas_out[akey] = {
                    "intervals": final.to_json(),
                    "raw_intervals": result.detections.to_json(),
                    "confidences": result.detections.confidences,
                    "description": result.description,
                    "fallback": result.fallback,
                }
            except PipelineError as exc:
                # keep the screening proposals; verification is refinement only
                log.warning("verification failed for %s at alpha %s: %s", entry.series_id, akey, exc)
                alphas_out[akey] = {
                    "intervals": proposals.to_json(),
                    "raw_intervals": proposals.to_json(),
                    "confidences": [3] * len(proposals),
                    "description": "",
                    "fallback": True,
                    "error": str(exc),
                }
        return {
            "T": T,
            "dataset": entry.dataset,
            "scores": row.get("scores"),
            "alphas": alphas_out,
            "usage": usage.to_json(),
            "error": None,
        }

    series = _map_entries(todo, one, config.workers)
    # carry screening failures through so downstream reports see them
    for sid, row in proposals_doc["series"].items():
        if row.get("error"):
            series[sid] = {"error": row["error"]}
    series = dict(sorted(series.items()))

    _write_json(outdir / "final.json", {"config": config.to_json(), "series": series})
    tokens = {
        sid: row["usage"] for sid, row in series.items() if not row.get("error")
    }
    totals = TokenStats()
    for usage in tokens.values():
        totals = totals + TokenStats(**usage)
    _write_json(outdir / "tokens.json", {"series": tokens, "totals": totals.to_json()})
    failures = sum(1 for row in series.values() if row.get("error"))
    return 1 if series and failures == len(series) else 0


# ---------------------------------------------------------------- eval


def _results_mode(doc: dict) -> str:
    rows = [r for r in doc["series"].values() if not r.get("error")]
    if rows and all(r.get("scores") for r in rows):
        return "scores"
    return "binary"


def cmd_eval(
    manifest_path: str,
    config: PipelineConfig,
    outdir: Path,
    results_path: Path | None = None,
    mode: str = "auto",
    report_name: str = "report",
) -> int:
    results_path = results_path or outdir / "proposals.json"
    if not results_path.exists():
        raise ConfigurationError(f"results file {results_path} not found")
    doc = json.loads(results_path.read_text())
    if mode == "auto":
        mode = _results_mode(doc)
    entries = {e.series_id: e for e in _entries(manifest_path)}

    series_rows = []
    per_series_out = {}
    for sid, row in sorted(doc["series"].items()):
        if row.get("error"):
            per_series_out[sid] = {"error": row["error"]}
            continue
        entry = entries.get(sid)
        if entry is None or entry.labels is None or not Path(entry.labels).exists():
            log.warning("series %s has no labels; skipped in evaluation", sid)
            per_series_out[sid] = {"skipped": "no labels"}
            continue
        gt = load_labels(entry.labels)
        if mode == "scores":
            score = np.frombuffer((results_path.parent / row["scores"]).read_bytes(), dtype="<f8")
            result = evaluate_score_series(
                score,
                gt,
                config.alpha_list,
                ewma_span=config.ewma_span if config.ewma_enabled else None,
                gap_merge=config.gap_merge,
            )
        else:
            sets = {
                akey: Detections.from_json(info["intervals"])
                for akey, info in sorted(row["alphas"].items())
            }
            result = evaluate_detection_sets(sets, gt)
        result["dataset"] = row.get("dataset", entry.dataset)
        result["series_id"] = sid
        series_rows.append(result)
        per_series_out[sid] = result

        if config.make_plots and row.get("scores"):
            from .plots import plot_detection

            score = np.frombuffer((results_path.parent / row["scores"]).read_bytes(), dtype="<f8")
            best_key = max(result["per_alpha"], key=lambda k: result["per_alpha"][k]["f1"])
            taus = {
                k: v["tau"] for k, v in result["per_alpha"].items() if "tau" in v
            }
            plot_detection(
                _load_entry_values(entry),
                score,
                taus,
                [tuple(p) for p in result["per_alpha"][best_key]["intervals"]],
                gt,
                outdir / sid / "result.png",
                title=sid,
            )

    report: dict = {"config": config.to_json(), "mode": mode, "series": per_series_out}
    if series_rows:
        report.update(aggregate(series_rows))
        table = render_report_table(report)
    else:
        report.update({"datasets": {}, "summary": {}})
        table = "no labeled series evaluated\n"
    _write_json(outdir / f"{report_name}.json", report)
    (outdir / f"{report_name}.txt").write_text(table)
    sys.stdout.write(table)
    return 0


# ---------------------------------------------------------------- render


def cmd_render(manifest_path: str, config: PipelineConfig, outdir: Path) -> int:
    entries = _entries(manifest_path)
    settings = _screen_settings(config)
    plot_spec = AnnotatedPlotSpec(
        config.canvas_width, config.canvas_height, config.tick_count, config.y_precision
    )

    def one(entry: ManifestEntry) -> dict:
        from .raster import make_windows, render_window, window_segment

        values = _load_entry_values(entry)
        lo, hi = float(values.min()), float(values.max())
        if hi == lo:
            hi = lo + 1.0
        series_dir = outdir / entry.series_id
        series_dir.mkdir(parents=True, exist_ok=True)
        spec = make_windows(len(values), settings.window_length, settings.stride)
        for start in spec.starts:
            seg = window_segment(values, start, settings.window_length)
            raster = render_window(seg, (lo, hi), settings.window_length, spec.valid_length(start))
            raster.save(series_dir / f"win_{start}.png")
        render_full_annotated(values, plot_spec).save(series_dir / "full.png")
        return {"windows": spec.N, "error": None}

    series = _map_entries(entries, one, config.workers)
    failures = sum(1 for row in series.values() if row.get("error"))
    return 1 if series and failures == len(series) else 0


# ---------------------------------------------------------------- run


def cmd_run(manifest_path: str, config: PipelineConfig, outdir: Path, stage1_only: bool = False) -> int:
    rc = cmd_screen(manifest_path, config, outdir)
    if rc != 0:
        return rc
    if stage1_only:
        return cmd_eval(manifest_path, config, outdir, outdir / "proposals.json", mode="scores")
    rc = cmd_verify(manifest_path, config, outdir)
    if rc != 0:
        return rc
    cmd_eval(
        manifest_path, config, outdir, outdir / "proposals.json",
        mode="scores", report_name="report_screen",
    )
    return cmd_eval(manifest_path, config, outdir, outdir / "final.json", mode="binary")


# ---------------------------------------------------------------- parser


def _csv_ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _csv_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it")
    g = parser.add_argument_group("pipeline configuration")
    g.add_argument("--window-length", type=int, dest="window_length")
    g.add_argument("--stride", type=int, dest="stride")
    g.add_argument("--scales", type=_csv_ints, dest="scales", metavar="K1,K2,...")
    g.add_argument("--quantile-q", type=float, dest="quantile_q")
    g.add_argument("--variant", choices=["median-reference", "all-pairs"], dest="variant")
    g.add_argument("--exclude-self", action=argparse.BooleanOptionalAction, default=None, dest="exclude_self")
    g.add_argument("--ewma", action=argparse.BooleanOptionalAction, default=None, dest="ewma_enabled")
    g.add_argument("--ewma-span", type=int, dest="ewma_span")
    g.add_argument("--alpha-list", type=_csv_floats, dest="alpha_list", metavar="A1,A2,...")
    g.add_argument("--gap-merge", type=int, dest="gap_merge")
    g.add_argument("--provider", choices=["reference", "remote"], dest="provider")
    g.add_argument("--provider-name", dest="provider_name")
    g.add_argument("--provider-url", dest="provider_url")
    g.add_argument("--provider-timeout", type=float, dest="provider_timeout")
    g.add_argument("--provider-retries", type=int, dest="provider_retries")
    g.add_argument("--patch-grid", type=int, dest="patch_grid")
    g.add_argument("--embed-dim", type=int, dest="embed_dim")
    g.add_argument("--cache-dir", dest="cache_dir")
    g.add_argument("--client", choices=["mock-echo", "http"], dest="client")
    g.add_argument("--client-endpoint", dest="client_endpoint")
    g.add_argument("--client-model", dest="client_model")
    g.add_argument("--api-key-env", dest="api_key_env")
    g.add_argument("--temperature", type=float, dest="temperature")
    g.add_argument("--client-retries", type=int, dest="client_retries")
    g.add_argument("--min-conf", type=int, dest="min_conf")
    g.add_argument("--mock-confidence", type=int, dest="mock_confidence")
    g.add_argument("--canvas-width", type=int, dest="canvas_width")
    g.add_argument("--canvas-height", type=int, dest="canvas_height")
    g.add_argument("--tick-count", type=int, dest="tick_count")
    g.add_argument("--y-precision", type=int, dest="y_precision")
    g.add_argument("--workers", type=int, dest="workers")
    g.add_argument("--save-rasters", action=argparse.BooleanOptionalAction, default=None, dest="save_rasters")
    g.add_argument("--dump-map", action=argparse.BooleanOptionalAction, default=None, dest="dump_map")
    g.add_argument("--plots", action=argparse.BooleanOptionalAction, default=None, dest="make_plots")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vistad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("screen", "produce anomaly proposals and score dumps"),
        ("verify", "refine proposals with the verification model"),
        ("eval", "compute contextual F1 reports"),
        ("run", "screen, verify and evaluate in sequence"),
        ("render", "persist window rasters and the annotated full plot"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--manifest", required=True, help="dataset manifest (JSON)")
        p.add_argument("--outdir", required=True, help="output directory")
        _add_config_flags(p)
        if name == "verify":
            p.add_argument("--proposals", help="proposals.json from the screen stage")
        if name == "eval":
            p.add_argument("--results", help="proposals.json or final.json to evaluate")
            p.add_argument("--mode", choices=["auto", "scores", "binary"], default="auto")
        if name == "run":
            p.add_argument("--stage1-only", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides = {
        name: getattr(args, name)
        for name in PipelineConfig.field_names()
        if hasattr(args, name)
    }
    return config.with_overrides(overrides)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        outdir = Path(args.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        if args.command == "screen":
            return cmd_screen(args.manifest, config, outdir)
        if args.command == "verify":
            proposals = Path(args.proposals) if args.proposals else None
            return cmd_verify(args.manifest, config, outdir, proposals)
        if args.command == "eval":
            results = Path(args.results) if args.results else None
            return cmd_eval(args.manifest, config, outdir, results, mode=args.mode)
        if args.command == "run":
            return cmd_run(args.manifest, config, outdir, stage1_only=args.stage1_only)
        if args.command == "render":
            return cmd_render(args.manifest, config, outdir)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except PipelineError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
