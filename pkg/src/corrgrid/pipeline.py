"""Stage orchestration over a run directory.

Each stage reads artifacts written by earlier stages and writes its own; all
artifacts live under the run directory together with ``run_manifest.json``
(resolved config, its hash, seeds, stage versions and input/output hashes).
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .annotations import AnnotationError, DatasetSplit, build_label_matrix, count_segments, split_dataset
from .ciss import ciss, read_manifest, train_validation_split, write_manifest, export_crops
from .detection import baseline_detect, load_external_masks, read_masks, write_masks
from .ensemble import (EnsembleFeatureSet, erc_features, evaluate_ensemble, load_model,
                       predict_ensemble, read_feature_table, save_model, train_ensemble,
                       write_feature_table)
from .geometry import GridSpec
from .metrics import (ConfusionCounts, DecisionConfig, confusion_metrics, derive_tau_I, ilp_decide,
                      iop_decide, iou_bbox, iou_mask, precision_table)
from .scoring import (BaselineScorer, ImageScoreResult, load_external_scores, score_image,
                      train_baseline, write_scores, read_scores)
from .synth import (OracleColorScorer, SyntheticSpec, read_dataset, render_overlay, synth_generate,
                    write_dataset)

log = logging.getLogger(__name__)

STAGE_VERSION = "1"
STAGES = ("synth", "ingest", "split", "ciss", "train-scorer", "score", "import-scores",
          "import-masks", "detect-baseline", "erc", "train-ensemble", "decide", "evaluate",
          "render")

DEFAULT_CONFIG = {
    "seed": 0,
    "out": "run",
    "dataset": {"root": "dataset", "target_label": "tower", "external_scores": None,
                "external_masks": None},
    "grid": {"n": 8, "policy": "strict"},
    "split": {"k": None, "train_fraction": 0.6667},
    "ciss": {"train_fraction": 0.8, "export_crops": False},
    "scorer": {"source": "baseline", "architecture": "logistic", "hidden_units": 16,
               "learning_rate": 0.1, "epochs": 30, "batch_size": 32},
    "detector": {"source": "baseline", "target_rgb": [70, 70, 75], "tolerance": 40},
    "decision": {"tau_s": 0.5, "tau_I": None, "tau_o": 0.9,
                 "iou_thresholds": [0.5, 0.55, 0.6, 0.65, 0.7, 0.75]},
    "ensemble": {"kind": "logistic", "feature_set": "FB", "folds": 5, "overlap_threshold": 0.1,
                 "kinds": ["logistic", "mlp", "svm"], "hyperparams": {}},
    "synth": {},
}


class ConfigError(ValueError):
    pass


class PrerequisiteError(RuntimeError):
    def __init__(self, stage: str, artifact: str):
        super().__init__(f"missing {artifact}: run stage '{stage}' first")
        self.stage = stage
        self.artifact = artifact


# -- configuration ------------------------------------------------------------

def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(config: dict, key: str, value) -> None:
    parts = key.split(".")
    node = config
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown configuration section in {key!r}")
        node = node[p]
    if parts[-1] not in node and parts[0] != "synth":
        raise ConfigError(f"unknown configuration key {key!r}")
    node[parts[-1]] = value


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    for k, v in (overrides or {}).items():
        set_dotted(cfg, k, v)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        decision_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not isinstance(cfg["grid"]["n"], int) or cfg["grid"]["n"] < 1:
        raise ConfigError("grid.n must be a positive integer")
    if cfg["scorer"]["source"] not in ("baseline", "oracle", "external"):
        raise ConfigError("scorer.source must be baseline, oracle or external")
    if cfg["detector"]["source"] not in ("baseline", "external"):
        raise ConfigError("detector.source must be baseline or external")
    if cfg["ensemble"]["feature_set"] not in ("FB", "FC"):
        raise ConfigError("ensemble.feature_set must be FB or FC")


def decision_config(cfg: dict) -> DecisionConfig:
    d = cfg["decision"]
    return DecisionConfig(d["tau_s"], d["tau_I"], d["tau_o"], tuple(d["iou_thresholds"]))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- run context --------------------------------------------------------------

@dataclass
class Run:
    config: dict
    out: Path
    _dataset: object = field(default=None, repr=False)

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str, stage: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise PrerequisiteError(stage, name)
        return p

    def write_json(self, name: str, doc) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return p

    def read_json(self, name: str, stage: str):
        return json.loads(self.require(name, stage).read_text(encoding="utf-8"))

    @property
    def dataset(self):
        if self._dataset is None:
            root = Path(self.config["dataset"]["root"])
            if not (root / "images").is_dir():
                raise ConfigError(f"dataset root {root} has no images/ directory")
            self._dataset = read_dataset(root, self.config["grid"]["n"],
                                         self.config["dataset"]["target_label"],
                                         self.config["grid"]["policy"])
        return self._dataset

    @property
    def grid(self) -> GridSpec:
        doc = self.read_json("ingest.json", "ingest")["grid"]
        return GridSpec(doc["n"], doc["seg_width_px"], doc["seg_height_px"])

    def split(self) -> DatasetSplit:
        return DatasetSplit.from_document(self.read_json("split.json", "split"))

    def truths(self, ids) -> dict:
        ds = self.dataset
        return {i: build_label_matrix(ds.grid_annotations[i]) for i in ids}


# -- stages -------------------------------------------------------------------

def stage_synth(run: Run) -> dict:
    spec = SyntheticSpec(**_synth_kwargs(run.config))
    ds = synth_generate(spec)
    root = write_dataset(run.config["dataset"]["root"], ds, spec)
    run._dataset = None
    return {"dataset": str(root), "images": len(ds.images)}


def _synth_kwargs(cfg: dict) -> dict:
    kw = {"n": cfg["grid"]["n"], "seed": cfg["seed"]}
    kw.update(cfg.get("synth") or {})
    for k in ("patches_on", "patches_off", "patch_size", "fixed_patches"):
        if k in kw:
            kw[k] = tuple(tuple(v) if isinstance(v, list) else v for v in kw[k])
    return kw


def stage_ingest(run: Run) -> dict:
    ds = run.dataset
    root = Path(run.config["dataset"]["root"])
    missing = [i for i in ds.ids if i not in ds.grid_annotations]
    if missing:
        raise AnnotationError(f"grid annotations missing for {len(missing)} images, "
                              f"e.g. {missing[:3]}")
    images = []
    for i in ds.ids:
        entry = {"image_id": i, "width": int(ds.images[i].shape[1]),
                 "height": int(ds.images[i].shape[0]),
                 "n_corroded": len(ds.grid_annotations[i].corroded_cells)}
        for kind, sub in (("image", "images"), ("grid", "grid"), ("object", "objects")):
            matches = sorted((root / sub).glob(f"{i}.*"))
            if matches:
                entry[f"{kind}_sha256"] = file_hash(matches[0])
        images.append(entry)
    g = ds.grid
    doc = {"grid": {"n": g.n, "seg_width_px": g.seg_width_px, "seg_height_px": g.seg_height_px},
           "images": images, "total_segments": count_segments(len(images), g.n)}
    run.write_json("ingest.json", doc)
    return {"images": len(images), "total_segments": doc["total_segments"]}


def stage_split(run: Run) -> dict:
    ids = [e["image_id"] for e in run.read_json("ingest.json", "ingest")["images"]]
    k = run.config["split"]["k"]
    if k is None:
        k = int(round(run.config["split"]["train_fraction"] * len(ids)))
    split = split_dataset(ids, int(k), run.config["seed"])
    run.write_json("split.json", split.to_document())
    return {"train": len(split.train_ids), "test": len(split.test_ids)}


def stage_ciss(run: Run) -> dict:
    grid, split, ds = run.grid, run.split(), run.dataset
    pairs = [(ds.images[i], ds.grid_annotations[i]) for i in split.train_ids]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ts = ciss(pairs, grid, run.config["seed"])
    write_manifest(run.path("ciss_manifest.csv"), ts)
    train, val = train_validation_split(ts, run.config["ciss"]["train_fraction"],
                                        run.config["seed"])
    if run.config["ciss"]["export_crops"]:
        export_crops(run.path("crops"), ts)
    doc = {"n_pos": ts.n_pos, "n_neg_selected": ts.n_neg_selected, "samples": len(ts),
           "train": len(train), "validation": len(val),
           "warnings": [str(w.message) for w in caught]}
    run.write_json("ciss.json", doc)
    return doc


def stage_train_scorer(run: Run) -> dict:
    manifest = run.require("ciss_manifest.csv", "ciss")
    grid, ds = run.grid, run.dataset
    ts = read_manifest(manifest, run.config["seed"], grid, ds.images)
    sc = run.config["scorer"]
    hp = {"architecture": sc["architecture"], "hidden_units": sc["hidden_units"],
          "learning_rate": sc["learning_rate"], "epochs": sc["epochs"],
          "batch_size": sc["batch_size"], "random_state": run.config["seed"]}
    model = train_baseline(ts, hp)
    model.save(run.path("scorer.json"))
    return {"samples": len(ts), "initial_loss": float(model.loss_curve_[0]),
            "final_loss": float(model.loss_curve_[-1])}


def _scorer(run: Run):
    source = run.config["scorer"]["source"]
    if source == "oracle":
        return OracleColorScorer()
    if source == "baseline":
        return BaselineScorer.load(run.require("scorer.json", "train-scorer"))
    raise ConfigError("scorer.source is 'external': use the import-scores stage instead of score")


def stage_score(run: Run) -> dict:
    grid, split, ds = run.grid, run.split(), run.dataset
    scorer = _scorer(run)
    tau_s = run.config["decision"]["tau_s"]
    results = [score_image(scorer, ds.images[i], grid, tau_s, i) for i in split.test_ids]
    write_scores(run.path("scores.json"), results, tau_s)
    return {"images": len(results)}


def stage_import_scores(run: Run) -> dict:
    src = run.config["dataset"]["external_scores"]
    if not src:
        raise ConfigError("dataset.external_scores is not set")
    grid, split = run.grid, run.split()
    tau_s = run.config["decision"]["tau_s"]
    pairs = load_external_scores(Path(src).read_text(encoding="utf-8"), grid.n, split.test_ids)
    wanted = set(split.test_ids)
    results = [ImageScoreResult.from_confidences(i, cs, tau_s) for i, cs in pairs if i in wanted]
    order = {i: k for k, i in enumerate(split.test_ids)}
    results.sort(key=lambda r: order[r.image_id])
    write_scores(run.path("scores.json"), results, tau_s)
    return {"images": len(results)}


def stage_detect_baseline(run: Run) -> dict:
    split, ds = run.split(), run.dataset
    d = run.config["detector"]
    dets = {}
    for i in split.test_ids:
        det = baseline_detect(ds.images[i], tuple(d["target_rgb"]), d["tolerance"], i)
        if det is not None:
            dets[i] = det
    write_masks(run.path("detections.json"), dets, {i: ds.descriptor(i) for i in dets})
    return {"images": len(split.test_ids), "detections": len(dets)}


def stage_import_masks(run: Run) -> dict:
    src = run.config["dataset"]["external_masks"]
    if not src:
        raise ConfigError("dataset.external_masks is not set")
    split, ds = run.split(), run.dataset
    src = Path(src)
    docs = sorted(src.glob("*.json")) if src.is_dir() else json.loads(src.read_text(encoding="utf-8"))
    images = {i: ds.descriptor(i) for i in ds.ids}
    dets = {k: v for k, v in load_external_masks(docs, images).items() if k in set(split.test_ids)}
    write_masks(run.path("detections.json"), dets, images)
    return {"images": len(split.test_ids), "detections": len(dets)}


def _scores(run: Run) -> list:
    path = run.require("scores.json", "score")
    return read_scores(path, run.grid.n, run.split().test_ids, run.config["decision"]["tau_s"])


def _detections(run: Run) -> dict:
    p = run.require("detections.json", "detect-baseline")
    ds = run.dataset
    return read_masks(p, {i: ds.descriptor(i) for i in ds.ids})


def stage_erc(run: Run) -> dict:
    results, dets = _scores(run), _detections(run)
    grid, ds = run.grid, run.dataset
    ids = [r.image_id for r in results]
    fc, fb = erc_features(results, dets, run.truths(ids), grid,
                          {i: ds.descriptor(i) for i in ids},
                          run.config["ensemble"]["overlap_threshold"])
    write_feature_table(run.path("features.csv"), fb.table)
    return {"rows": len(fb)}


def _feature_set(run: Run, kind: str) -> EnsembleFeatureSet:
    return EnsembleFeatureSet(kind, read_feature_table(run.require("features.csv", "erc")))


def stage_train_ensemble(run: Run) -> dict:
    ens = run.config["ensemble"]
    seed = run.config["seed"]
    cv = []
    for fs_kind in ("FB", "FC"):
        fs = _feature_set(run, fs_kind)
        for kind in ens["kinds"]:
            res = evaluate_ensemble(ens["folds"], fs, kind, seed, ens["hyperparams"])
            cv.append({k: v for k, v in res.items()
                       if k not in ("fold_assignment", "oof_predictions")})
    fs = _feature_set(run, ens["feature_set"])
    model = train_ensemble(fs, ens["kind"], ens["hyperparams"], seed)
    save_model(run.path("ensemble.json"), model, ens["feature_set"])
    run.write_json("ensemble_cv.json", cv)
    return {"rows": len(fs), "kind": ens["kind"], "feature_set": ens["feature_set"]}


def _tau_I(run: Run) -> float:
    tau = run.config["decision"]["tau_I"]
    if tau is None:
        tau = derive_tau_I(list(run.truths(run.split().train_ids).values()))
    return float(tau)


def stage_decide(run: Run) -> dict:
    results, dets = _scores(run), _detections(run)
    model, fs_kind = load_model(run.require("ensemble.json", "train-ensemble"))
    fs = _feature_set(run, fs_kind)
    dec, conf = predict_ensemble(model, fs)
    tau_I, tau_o = _tau_I(run), run.config["decision"]["tau_o"]
    n = run.grid.n
    images = []
    for k, r in enumerate(results):
        rows = slice(k * n * n, (k + 1) * n * n)
        if not (fs.table.image_id[rows] == r.image_id).all():
            raise ConfigError("feature table is out of sync with scores; rerun erc")
        det = dets.get(r.image_id)
        images.append({
            "image_id": r.image_id,
            "slp": r.b_hat.reshape(-1).astype(int).tolist(),
            "conf_c": r.conf_c,
            "ilp_corroded": ilp_decide(r.conf_c, tau_I),
            "conf_o": det.conf_o if det else None,
            "iop_present": iop_decide(det, tau_o),
            "ensemble": dec[rows].astype(int).tolist(),
            "ensemble_conf": conf[rows].tolist(),
        })
    doc = {"tau_s": run.config["decision"]["tau_s"], "tau_I": tau_I, "tau_o": tau_o,
           "n": n, "images": images}
    run.write_json("decisions.json", doc)
    return {"images": len(images), "tau_I": tau_I}


def stage_evaluate(run: Run) -> dict:
    results = _scores(run)
    dets = _detections(run)
    decisions = run.read_json("decisions.json", "decide")
    cv = run.read_json("ensemble_cv.json", "train-ensemble")
    split, ds = run.split(), run.dataset
    grid = run.grid
    truths = run.truths([r.image_id for r in results])
    cfg = decision_config(run.config)

    seg = ConfusionCounts()
    img = ConfusionCounts()
    ens = ConfusionCounts()
    by_id = {d["image_id"]: d for d in decisions["images"]}
    for r in results:
        t = truths[r.image_id]
        seg = seg + ConfusionCounts.from_predictions(t, r.b_hat)
        img = img + ConfusionCounts.from_predictions([t.any()], [by_id[r.image_id]["ilp_corroded"]])
        ens = ens + ConfusionCounts.from_predictions(t.reshape(-1), by_id[r.image_id]["ensemble"])

    iou_rows, m_ious, b_ious, passes = [], [], [], []
    for r in results:
        det = dets.get(r.image_id)
        truth_obj = ds.object_annotations.get(r.image_id)
        present = iop_decide(det, cfg.tau_o)
        if det is None or truth_obj is None:
            iou_rows.append({"image_id": r.image_id, "present": present, "iou_mask": None,
                             "iou_bbox": None})
            continue
        mi = iou_mask(det.mask, truth_obj.mask, ds.descriptor(r.image_id))
        bi = iou_bbox(det.bbox, truth_obj.bbox)
        iou_rows.append({"image_id": r.image_id, "present": present, "conf_o": det.conf_o,
                         "iou_mask": mi, "iou_bbox": bi})
        m_ious.append(mi)
        b_ious.append(bi)
        passes.append(present)
    n_present = sum(row["present"] for row in iou_rows)
    iou_table = None
    if any(passes):
        iou_table = {"mask": precision_table(m_ious, passes, cfg.iou_thresholds),
                     "bbox": precision_table(b_ious, passes, cfg.iou_thresholds)}

    n_train, n_test = len(split.train_ids), len(split.test_ids)
    report = {
        "version": __version__,
        "dataset": {"images": n_train + n_test, "train_images": n_train, "test_images": n_test,
                    "n": grid.n, "total_segments": count_segments(n_train + n_test, grid.n),
                    "train_segments": count_segments(n_train, grid.n),
                    "test_segments": count_segments(n_test, grid.n)},
        "thresholds": {"tau_s": cfg.tau_s, "tau_I": decisions["tau_I"], "tau_o": cfg.tau_o},
        "scorer": {"source": run.config["scorer"]["source"],
                   "slp": {"counts": vars(seg), **confusion_metrics(seg).as_dict()},
                   "ilp": {"counts": vars(img), **confusion_metrics(img).as_dict()}},
        "ensemble": {"kind": run.config["ensemble"]["kind"],
                     "feature_set": run.config["ensemble"]["feature_set"],
                     "resubstitution": {"counts": vars(ens), **confusion_metrics(ens).as_dict()},
                     "cross_validation": cv},
        "object": {"present": n_present, "images": len(iou_rows),
                   "accuracy": n_present / len(iou_rows) if iou_rows else 0.0,
                   "per_image": iou_rows, "precision": iou_table},
    }
    run.write_json("report.json", report)
    run.path("report.md").write_text(format_report(report), encoding="utf-8")
    return {"report": str(run.path("report.json"))}


def _pct(v):
    return "-" if v is None else f"{100 * v:.2f}"


def format_report(report: dict) -> str:
    lines = ["# Corrosion detection evaluation", ""]
    d = report["dataset"]
    lines += [f"Images: {d['images']} ({d['train_images']} train / {d['test_images']} test), "
              f"n={d['n']}, segments: {d['total_segments']} total, {d['train_segments']} train, "
              f"{d['test_segments']} test.", ""]
    t = report["thresholds"]
    lines += [f"Thresholds: tau_s={t['tau_s']}, tau_I={t['tau_I']:.4f}, tau_o={t['tau_o']}", ""]
    lines += ["## Segment scorer", "", "| level | Acc. | P | R | F1 |", "|---|---|---|---|---|"]
    for level in ("slp", "ilp"):
        s = report["scorer"][level]
        lines.append(f"| {level.upper()} | {_pct(s['accuracy'])} | {_pct(s['precision'])} | "
                     f"{_pct(s['recall'])} | {_pct(s['f1'])} |")
    lines += ["", "## Ensemble (k-fold mean)", "",
              "| model | Acc. FB | Acc. FC | P FB | P FC | R FB | R FC | F1 FB | F1 FC |",
              "|---|---|---|---|---|---|---|---|---|"]
    cv = {(c["kind"], c["feature_set"]): c["mean"] for c in report["ensemble"]["cross_validation"]}
    for kind in dict.fromkeys(k for k, _ in cv):
        cells = []
        for metric in ("accuracy", "precision", "recall", "f1"):
            for fs in ("FB", "FC"):
                cells.append(_pct(cv.get((kind, fs), {}).get(metric)))
        lines.append(f"| {kind} | " + " | ".join(cells) + " |")
    o = report["object"]
    lines += ["", "## Object detection", "",
              f"Present at tau_o: {o['present']}/{o['images']} ({_pct(o['accuracy'])}%)", ""]
    if o["precision"]:
        th = o["precision"]["mask"]["thresholds"]
        lines += ["| IoU | " + " | ".join(f"IoU_{x:g}" for x in th) + " | AP |",
                  "|---" * (len(th) + 2) + "|"]
        for kind in ("mask", "bbox"):
            p = o["precision"][kind]
            lines.append(f"| P_{kind} | " + " | ".join(_pct(v) for v in p["precision"])
                         + f" | {_pct(p['ap'])} |")
    return "\n".join(lines) + "\n"


def stage_render(run: Run) -> dict:
    decisions = run.read_json("decisions.json", "decide")
    dets = _detections(run)
    ds, grid = run.dataset, run.grid
    out = run.path("overlays")
    out.mkdir(exist_ok=True)
    from .annotations import save_image
    n = decisions["n"]
    for d in decisions["images"]:
        det = dets.get(d["image_id"])
        b = np.asarray(d["ensemble"], dtype=np.uint8).reshape(n, n)
        save_image(out / f"{d['image_id']}.png",
                   render_overlay(ds.images[d["image_id"]], b, det.mask if det else None, grid))
    return {"overlays": len(decisions["images"])}


STAGE_FUNCS = {
    "synth": stage_synth, "ingest": stage_ingest, "split": stage_split, "ciss": stage_ciss,
    "train-scorer": stage_train_scorer, "score": stage_score,
    "import-scores": stage_import_scores, "import-masks": stage_import_masks,
    "detect-baseline": stage_detect_baseline, "erc": stage_erc,
    "train-ensemble": stage_train_ensemble, "decide": stage_decide,
    "evaluate": stage_evaluate, "render": stage_render,
}


def default_stages(cfg: dict) -> list:
    stages = ["ingest", "split", "ciss"]
    source = cfg["scorer"]["source"]
    if source == "baseline":
        stages += ["train-scorer", "score"]
    elif source == "oracle":
        stages += ["score"]
    else:
        stages += ["import-scores"]
    stages += ["detect-baseline" if cfg["detector"]["source"] == "baseline" else "import-masks"]
    return stages + ["erc", "train-ensemble", "decide", "evaluate", "render"]


def _order(stages) -> list:
    unknown = [s for s in stages if s not in STAGE_FUNCS]
    if unknown:
        raise ConfigError(f"unknown stages: {unknown}")
    return sorted(dict.fromkeys(stages), key=STAGES.index)


def run_pipeline(config: dict, stages=None) -> dict:
    """Run ``stages`` (dependency order enforced) and update the run manifest."""
    validate_config(config)
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    run = Run(config, out)
    stages = _order(stages or default_stages(config))
    manifest_path = out / "run_manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {"stages": {}}
    manifest.update({"package_version": __version__, "config": config,
                     "config_hash": config_hash(config), "seed": config["seed"]})
    summaries = {}
    for stage in stages:
        log.info("stage %s", stage)
        before = _snapshot(out)
        summaries[stage] = STAGE_FUNCS[stage](run)
        after = _snapshot(out)
        manifest["stages"][stage] = {
            "version": STAGE_VERSION, "summary": summaries[stage],
            "outputs": {k: v for k, v in after.items() if before.get(k) != v}}
    manifest["inputs"] = _input_hashes(config)
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str) + "\n",
                             encoding="utf-8")
    return summaries


def _snapshot(out: Path) -> dict:
    return {str(p.relative_to(out)): file_hash(p) for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "run_manifest.json"}


def _input_hashes(cfg: dict) -> dict:
    hashes = {}
    root = Path(cfg["dataset"]["root"])
    if root.is_dir():
        for p in sorted(root.rglob("*")):
            if p.is_file():
                hashes[str(p)] = file_hash(p)
    for key in ("external_scores", "external_masks"):
        src = cfg["dataset"][key]
        if src and Path(src).is_file():
            hashes[str(src)] = file_hash(src)
    return hashes
