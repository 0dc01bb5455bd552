"""Pipeline configuration, single-pair runs and simulation sweeps."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import evaluate, features, simulate
from .detect import DetectConfig, Detection, StageError, run_detection, stage
from .eroc import Roi
from .imgcore import load_image, load_mask, save_mask, save_overlay

logger = logging.getLogger(__name__)

SUITE_FRACTIONS = (0.05, 0.08, 0.20, 0.30, 0.50, 0.70)


@dataclass
class PipelineConfig:
    feature: str = "wlmi"
    use_eroc: bool = True
    eroc_threshold_scale: float = 1.0
    window: int = features.DEFAULT_WINDOW
    delta_thresh: int = features.DEFAULT_DELTA
    grow_threshold: float = 50.0
    seed_radius: int = 10
    glrt_gamma: Optional[float] = None
    glrt_fpr: float = 0.05
    normalize: bool = True
    exclude_zero: bool = False
    blur_sigma: float = 0.0
    eval_full_frame: bool = False
    band: str = evaluate.OVERALL
    seed: int = 0
    jobs: int = 1
    a: Optional[str] = None
    b: Optional[str] = None
    tumor_mask: Optional[str] = None
    ground_truth: Optional[str] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.feature not in features.METHODS:
            raise ValueError(f"feature must be one of {features.METHODS}")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.delta_thresh < 0:
            raise ValueError("delta_thresh must be >= 0")
        if self.eroc_threshold_scale < 0:
            raise ValueError("eroc_threshold_scale must be >= 0")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.band not in (*evaluate.BANDS, evaluate.OVERALL):
            raise ValueError(f"unknown band {self.band!r}")
        DetectConfig(self.grow_threshold, self.seed_radius)

    def detect_config(self) -> DetectConfig:
        return DetectConfig(self.grow_threshold, self.seed_radius)

    def detection_kwargs(self) -> dict:
        return dict(
            normalize=self.normalize, use_eroc=self.use_eroc,
            eroc_threshold_scale=self.eroc_threshold_scale, window=self.window,
            delta_thresh=self.delta_thresh, glrt_gamma=self.glrt_gamma,
            glrt_fpr=self.glrt_fpr, exclude_zero=self.exclude_zero,
            blur_sigma=self.blur_sigma, jobs=self.jobs,
        )

    def echo(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def coerce_value(key: str, raw: Any):
    """Convert a config-file string to the type of ``PipelineConfig.<key>``."""
    if key not in _FIELD_TYPES:
        raise KeyError(f"unknown config key {key!r}")
    kind = str(_FIELD_TYPES[key])
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if "Optional" in kind and text.lower() in ("", "none", "null"):
        return None
    if "bool" in kind:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if "int" in kind:
        return int(text)
    if "float" in kind:
        return float(text)
    return text


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = coerce_value(key, raw)
    return values


def build_config(file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Merge defaults < config file < explicit overrides (``None`` means unset)."""
    merged = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig(**merged)


# ---------------------------------------------------------------------------
# Single pair
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    detection: Detection
    report: Optional[evaluate.EvalReport]
    config: PipelineConfig
    artifacts: dict = field(default_factory=dict)


def evaluate_detection(det: Detection, gt, cfg: PipelineConfig) -> evaluate.EvalReport:
    """Score a detection inside its Roi (or the full frame)."""
    full = cfg.eval_full_frame or det.roi.empty
    universe = Roi.full(det.mask.shape) if full else det.roi
    counts = evaluate.confusion(det.mask, gt, universe)
    area_auc = None
    labels = np.asarray(gt, dtype=bool)[det.simmap.roi.slices]
    if labels.size and labels.any() and not labels.all():
        area_auc = evaluate.auc(evaluate.roc_curve(det.simmap, gt))
    return evaluate.metrics(counts, band=cfg.band, auc=area_auc, config=cfg.echo())


def detect_pair(a, b, tumor_mask, cfg: PipelineConfig) -> Detection:
    return run_detection(a, b, tumor_mask, cfg.detect_config(), cfg.feature,
                         **cfg.detection_kwargs())


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Load inputs, detect, optionally evaluate, and write artifacts to ``cfg.out_dir``.

    Writes ``mask.png`` and ``overlay.png``. Also writes ``report.json``, which
    holds the evaluation when ground truth is given and otherwise the
    detection summary.
    """
    with stage("load"):
        if not (cfg.a and cfg.b and cfg.tumor_mask):
            raise ValueError("a, b and tumor_mask paths are required")
        a = load_image(cfg.a)
        b = load_image(cfg.b)
        tumor = load_mask(cfg.tumor_mask)
        gt = load_mask(cfg.ground_truth) if cfg.ground_truth else None
    det = detect_pair(a, b, tumor, cfg)
    report = None
    if gt is not None:
        with stage("evaluate"):
            report = evaluate_detection(det, gt, cfg)
    artifacts = {}
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        artifacts = {"mask": str(out / "mask.png"), "overlay": str(out / "overlay.png"),
                     "report": str(out / "report.json")}
        inputs = {Path(p).resolve() for p in (cfg.a, cfg.b, cfg.tumor_mask, cfg.ground_truth) if p}
        if inputs & {Path(p).resolve() for p in artifacts.values()}:
            raise StageError("write", ValueError("an output path would overwrite an input"))
        with stage("write"):
            out.mkdir(parents=True, exist_ok=True)
            save_mask(det.mask, artifacts["mask"])
            save_overlay(a, det.mask, artifacts["overlay"])
            payload = report.to_dict() if report else detection_summary(det, cfg)
            write_json(artifacts["report"], payload)
    return PipelineResult(det, report, cfg, artifacts)


def detection_summary(det: Detection, cfg: PipelineConfig) -> dict:
    return {
        "roi": det.roi.to_dict(),
        "changed_pixels": int(det.mask.sum()),
        "seeds": [[s.row, s.col] for s in det.seeds],
        "sigma": det.sigma,
        "gamma": det.gamma,
        "config_echo": cfg.echo(),
    }


def write_json(path, payload) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def suite_manifest(size: int = 96, tumor_radius: int = 12) -> dict:
    """The default simulation suite: 5 textures x shrink/grow x 6 change sizes."""
    entries = []
    for t, texture in enumerate(simulate.TEXTURES):
        for direction in ("shrink", "grow"):
            for fraction in SUITE_FRACTIONS:
                entries.append({
                    "id": f"{texture}_{direction}_{round(fraction * 100):02d}",
                    "phantom": {"texture": texture, "size": size,
                                "tumor_radius": tumor_radius, "seed": t},
                    "direction": direction,
                    "fraction": fraction,
                    "deform_sigma": 0.0,
                    "seed": t,
                })
    return {"methods": ["wlmi", "glrt"], "defaults": {"normalize": False}, "entries": entries}


def _entry_inputs(entry: dict, base_dir: Path):
    if "phantom" in entry:
        return simulate.make_phantom(**entry["phantom"])
    img = load_image(base_dir / entry["image"])
    tumor = load_mask(base_dir / entry["tumor_mask"])
    return img, tumor


@dataclass
class EntryResult:
    entry_id: str
    band: str
    reports: dict = field(default_factory=dict)       # method -> EvalReport
    roc_data: dict = field(default_factory=dict)      # method -> (scores, labels)
    timings: dict = field(default_factory=dict)       # method -> seconds
    feature_pixels: dict = field(default_factory=dict)
    error: Optional[str] = None


def run_entry(entry: dict, methods, defaults: dict, base_dir: str = ".") -> EntryResult:
    """Simulate one follow-up and run every method on the pair."""
    entry_id = str(entry.get("id", "entry"))
    fraction = float(entry["fraction"])
    band = simulate.size_band(fraction)
    result = EntryResult(entry_id, band)
    try:
        with stage("simulate"):
            img, tumor = _entry_inputs(entry, Path(base_dir))
            spec = simulate.SimSpec(entry.get("direction", "shrink"), fraction,
                                    float(entry.get("deform_sigma", 0.0)),
                                    int(entry.get("seed", 0)))
            sim = simulate.simulate(img, tumor, spec)
        for method in methods:
            overrides = {**defaults, **entry.get("config", {}), "feature": method, "band": band}
            cfg = build_config(overrides)
            det = detect_pair(img, sim.image, tumor, cfg)
            with stage("evaluate"):
                report = evaluate_detection(det, sim.ground_truth, cfg)
            result.reports[method] = report
            sl = det.simmap.roi.slices
            result.roc_data[method] = (det.simmap.change_score()[sl].ravel(),
                                       sim.ground_truth[sl].ravel())
            result.timings[method] = sum(det.timings.values())
            result.feature_pixels[method] = det.feature_pixels
    except (StageError, ValueError, OSError, KeyError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
    return result


@dataclass
class SweepResult:
    entries: list
    tables: dict          # method -> aggregate table
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def _run_entry_star(args):
    return run_entry(*args)


def run_sweep(manifest, out_dir=None, jobs: int = 1, base_dir: str = ".") -> SweepResult:
    """Run every manifest entry for each method and aggregate per size band.

    ``manifest`` is a dict with ``entries`` (and optional ``methods`` and
    ``defaults``) or a bare list of entries. When ``out_dir`` is given it
    receives ``aggregate_<method>.csv``, ``roc_<method>_<band>.csv`` and
    ``reports.json``, all byte-identical across reruns.
    """
    if isinstance(manifest, list):
        manifest = {"entries": manifest}
    entries = manifest.get("entries")
    if not isinstance(entries, list) or not entries:
        raise ValueError("manifest needs a non-empty 'entries' list")
    methods = list(manifest.get("methods", ["wlmi", "glrt"]))
    defaults = dict(manifest.get("defaults", {}))
    build_config(defaults)  # fail fast on bad defaults

    work = [(e, methods, defaults, base_dir) for e in entries]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_entry_star, work))
    else:
        results = [_run_entry_star(w) for w in work]

    failures = [(r.entry_id, r.error) for r in results if r.error]
    for entry_id, err in failures:
        logger.warning("sweep entry %s failed: %s", entry_id, err)
    good = [r for r in results if not r.error]
    tables = {m: evaluate.aggregate(r.reports[m] for r in good) for m in methods}
    sweep = SweepResult(results, tables, failures)
    if out_dir is not None:
        write_sweep(sweep, methods, Path(out_dir))
    return sweep


def pooled_roc(results, method: str, band: Optional[str] = None) -> evaluate.RocCurve:
    """ROC over the pooled Roi pixels of all entries in ``band`` (all when ``None``)."""
    chosen = [r for r in results if not r.error and (band is None or r.band == band)]
    if not chosen:
        raise ValueError(f"no entries in band {band!r}")
    scores = np.concatenate([r.roc_data[method][0] for r in chosen])
    labels = np.concatenate([r.roc_data[method][1] for r in chosen])
    return evaluate.roc_from_scores(scores, labels, np.unique(scores), rule="ge")


def write_sweep(sweep: SweepResult, methods, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for m in methods:
        write_text(out / f"aggregate_{m}.csv", evaluate.aggregate_csv(sweep.tables[m], m))
        for band in (*evaluate.BANDS, evaluate.OVERALL):
            try:
                curve = pooled_roc(sweep.entries, m, None if band == evaluate.OVERALL else band)
            except ValueError:
                continue
            tag = {"<10%TV": "lt10", "10-30%TV": "10to30", ">30%TV": "gt30"}.get(band, band)
            write_text(out / f"roc_{m}_{tag}.csv", curve.to_csv())
    payload = {
        "entries": [
            {"id": r.entry_id, "band": r.band, "error": r.error,
             "reports": {m: rep.to_dict() for m, rep in r.reports.items()}}
            for r in sweep.entries
        ],
        "aggregate": sweep.tables,
    }
    write_json(out / "reports.json", payload)
