"""End-to-end experiment stages: prepare, seg, train, evaluate.

Each stage reads the experiment config, writes its artifacts under the output
directory, and appends a run record listing outputs with content digests.
Deterministic artifacts (manifests, weights, features, heads, metric reports)
are byte-identical across reruns of the same config+seed; timing reports are
inherently not and are excluded from digesting.
"""

import json
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import backbones as bb
from . import ensemble as ens
from . import imageops as ops
from . import manifest as mf
from . import metrics as mt
from . import nn, segmentation
from .config import ConfigError, ExperimentConfig
from .imgio import read_image, read_mask, write_image, write_mask
from .util import parallel_map, sha256_file, stable_seed

MODEL_NAMES = bb.KINDS + ("ensemble",)


class PipelineError(RuntimeError):
    """A stage cannot run: missing artifacts or degenerate inputs."""


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict, cfg: ExperimentConfig):
    body = {"format_version": 1, "config_digest": cfg.digest(), "seed": cfg.seed}
    body.update(payload)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _record_run(cfg: ExperimentConfig, command: str, stage_seconds: dict,
                outputs: list, nondeterministic=()):
    record = {
        "format_version": 1,
        "command": command,
        "config": cfg.to_flat(),
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "stage_seconds": {k: round(v, 6) for k, v in stage_seconds.items()},
        "outputs": [
            {"path": str(p),
             "sha256": None if str(p) in set(map(str, nondeterministic)) else sha256_file(p)}
            for p in outputs
        ],
    }
    path = _out(cfg) / f"run_record_{command}.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _resolve(cfg: ExperimentConfig, rel_path: str) -> Path:
    """Manifest rows are relative to the manifest's directory."""
    p = Path(rel_path)
    return p if p.is_absolute() else Path(cfg.manifest).parent / p


def _prepared_manifest_path(cfg) -> Path:
    return _out(cfg) / "manifest_prepared.csv"


def _load_prepared(cfg) -> mf.DatasetManifest:
    path = _prepared_manifest_path(cfg)
    if not path.exists():
        raise PipelineError(f"{path} not found; run `lesionforge prepare` first")
    m = mf.load_manifest(path, label_order="declared")
    return m


def _sample_id(s: mf.Sample) -> str:
    return s.image_path


# ---------------------------------------------------------------------------
# prepare: split, weights, minority augmentation
# ---------------------------------------------------------------------------

def cmd_prepare(cfg: ExperimentConfig) -> dict:
    t0 = time.perf_counter()
    out = _out(cfg)
    m = mf.load_manifest(cfg.manifest, cfg.label_order)
    if cfg.split_use_existing:
        if any(s.split == "unassigned" for s in m.samples):
            raise ConfigError("split.use_existing=true but manifest has unassigned rows")
    else:
        m = mf.stratified_split(m, cfg.split, cfg.seed)

    train_counts = m.split_counts("train")
    # class weights come from the pre-augmentation train split
    train_manifest = mf.DatasetManifest(m.subset("train"), m.label_map)
    weights = mf.compute_class_weights(train_manifest)
    t_split = time.perf_counter()

    aug_rows = []
    n_aug = 0
    if cfg.rebalance.augment:
        plan = mf.rebalance_plan(m, cfg.rebalance.cap_ratio)
        aug_dir = out / "augmented"
        if plan.sum() > 0:
            aug_dir.mkdir(parents=True, exist_ok=True)
        train_by_class = {cid: [(i, s) for i, s in enumerate(m.samples)
                                if s.split == "train" and s.label_id == cid]
                          for cid in range(m.label_map.k)}
        jobs = []
        for cid, extra in enumerate(plan.tolist()):
            sources = train_by_class[cid]
            copies_per_source = {}
            for j in range(extra):
                row, src = sources[j % len(sources)]
                k = copies_per_source.get(row, 0)
                copies_per_source[row] = k + 1
                jobs.append((cid, row, src, k))

        def render(job):
            cid, row, src, k = job
            img = read_image(_resolve(cfg, src.image_path))
            img = ops.resize_bilinear(img, cfg.image_size, cfg.image_size)
            img = ops.random_augment(img, stable_seed(cfg.seed, "augment", row, k),
                                     cfg.augment_ranges)
            name = f"aug_{Path(src.image_path).stem}_{k}.png"
            write_image(aug_dir / name, img, note=cfg.provenance())
            return mf.Sample(str((aug_dir / name).resolve()), cid, "train")

        aug_rows = parallel_map(render, jobs)
        n_aug = len(aug_rows)
    t_aug = time.perf_counter()

    prepared = mf.DatasetManifest(m.samples + tuple(aug_rows), m.label_map)
    mpath = _prepared_manifest_path(cfg)
    mf.write_manifest(mpath, prepared, note=cfg.provenance())
    wpath = out / "class_weights.json"
    _write_json(wpath, {
        "label_names": list(m.label_map.names),
        "weights": [float(w) for w in weights],
        "train_counts": train_counts.tolist(),
    }, cfg)
    outputs = [mpath, wpath] + [Path(s.image_path) for s in aug_rows]
    _record_run(cfg, "prepare", {"split": t_split - t0, "augment": t_aug - t_split},
                outputs)
    return {"n_samples": prepared.n, "n_augmented": n_aug,
            "weights": [float(w) for w in weights],
            "split_counts": {sp: int(len(m.subset(sp))) for sp in ("train", "val", "test")}}


def _load_class_weights(cfg) -> np.ndarray:
    path = _out(cfg) / "class_weights.json"
    if not path.exists():
        raise PipelineError(f"{path} not found; run `lesionforge prepare` first")
    payload = json.loads(path.read_text(encoding="utf-8"))
    return np.asarray(payload["weights"], dtype=np.float64)


# ---------------------------------------------------------------------------
# segmentation stage
# ---------------------------------------------------------------------------

def _seg_model_path(cfg) -> Path:
    return Path(cfg.seg.model_path) if cfg.seg.model_path \
        else _out(cfg) / "segmenter.lfw"


def _read_pair(cfg, s: mf.Sample):
    img = ops.resize_bilinear(read_image(_resolve(cfg, s.image_path)),
                              cfg.image_size, cfg.image_size)
    mask = read_mask(_resolve(cfg, s.mask_path))
    if mask.shape != (cfg.image_size, cfg.image_size):
        mask = ops.resize_bilinear(mask[:, :, None], cfg.image_size, cfg.image_size)[:, :, 0]
    return img, segmentation.binarize_mask(mask)


def cmd_seg(cfg: ExperimentConfig, subaction: str) -> dict:
    if subaction not in ("train", "apply"):
        raise ConfigError(f"seg subaction must be train|apply, got {subaction!r}")
    return _seg_train(cfg) if subaction == "train" else _seg_apply(cfg)


def _seg_train(cfg) -> dict:
    t0 = time.perf_counter()
    m = mf.load_manifest(cfg.manifest, cfg.label_order)
    train_rows = [s for s in m.samples if s.mask_path and s.split in ("train", "unassigned")]
    if not train_rows:
        raise PipelineError(
            "no mask rows in manifest; supply a mask column or set "
            "seg.mask_source=identity for pass-through")
    val_rows = [s for s in m.samples if s.mask_path and s.split == "val"]
    pairs = [_read_pair(cfg, s) for s in train_rows]
    net = segmentation.DualEncoderNet(seed=cfg.seed)
    history = segmentation.train_segmenter(net, pairs, epochs=cfg.seg.epochs,
                                           lr=cfg.seg.lr, batch_size=cfg.seg.batch_size,
                                           seed=cfg.seed)
    eval_rows = val_rows or train_rows
    dices = []
    for s in eval_rows:
        img, gt = _read_pair(cfg, s)
        dices.append(segmentation.dice_coefficient(
            segmentation.predict_mask(net, img), gt))
    dice = float(np.mean(dices))

    out = _out(cfg)
    model_path = _seg_model_path(cfg)
    nn.save_parameters(model_path, net.params())
    meta = Path(str(model_path) + ".meta.json")
    _write_json(meta, {"kind": "dual-encoder-segmenter",
                       "image_size": cfg.image_size}, cfg)
    hist_path = out / "seg_history.csv"
    with open(hist_path, "w", encoding="utf-8") as fh:
        fh.write(f"# {cfg.provenance()}\nepoch,loss\n")
        for i, loss in enumerate(history):
            fh.write(f"{i},{loss!r}\n")
    _record_run(cfg, "seg_train", {"total": time.perf_counter() - t0},
                [model_path, meta, hist_path])
    held_out = "val" if val_rows else "train"
    print(f"segmenter: {len(pairs)} pairs, {cfg.seg.epochs} epochs, "
          f"{held_out} Dice {dice:.4f}")
    return {"dice": dice, "dice_split": held_out, "n_pairs": len(pairs),
            "final_loss": history[-1] if history else None}


def _load_segmenter(cfg) -> segmentation.DualEncoderNet:
    net = segmentation.DualEncoderNet(seed=cfg.seed)
    path = _seg_model_path(cfg)
    if not path.exists():
        raise PipelineError(f"segmenter model {path} not found; run `lesionforge seg train`")
    nn.load_into(net.params(), path)
    return net


def _seg_apply(cfg) -> dict:
    t0 = time.perf_counter()
    m = mf.load_manifest(cfg.manifest, cfg.label_order)
    net = None if cfg.seg.mask_source == "identity" else _load_segmenter(cfg)
    out = _out(cfg)
    masked_dir, mask_dir = out / "masked", out / "masks"
    masked_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)

    def run(s):
        img = ops.resize_bilinear(read_image(_resolve(cfg, s.image_path)),
                                  cfg.image_size, cfg.image_size)
        mask = np.ones(img.shape[:2]) if net is None else segmentation.predict_mask(net, img)
        binary = segmentation.binarize_mask(mask)
        stem = Path(s.image_path).stem
        write_mask(mask_dir / f"{stem}.pgm", binary, note=cfg.provenance())
        focused = segmentation.apply_mask(img, binary, mode=cfg.seg.mode)
        write_image(masked_dir / f"{stem}.png", focused, note=cfg.provenance())
        return mask_dir / f"{stem}.pgm", masked_dir / f"{stem}.png"

    written = parallel_map(run, list(m.samples))
    outputs = [p for pair in written for p in pair]
    _record_run(cfg, "seg_apply", {"total": time.perf_counter() - t0}, outputs)
    return {"n_images": len(m.samples), "mode": cfg.seg.mode,
            "mask_source": cfg.seg.mask_source}


# ---------------------------------------------------------------------------
# preprocessing + feature extraction
# ---------------------------------------------------------------------------

def _input_channels(cfg) -> int:
    steps = cfg.filters.steps()
    channels = 1 if any(st.kind == "sobel" for st in steps) else 3
    if cfg.filters.sobel_extra_channel:
        channels += 1
    return channels


def preprocess_image(img: np.ndarray, cfg: ExperimentConfig,
                     seg_net=None) -> np.ndarray:
    """Resize, filter, optionally mask-focus, optionally append a Sobel channel."""
    img = ops.resize_bilinear(img, cfg.image_size, cfg.image_size)
    img = ops.apply_filter_chain(img, cfg.filters.steps())
    if cfg.seg.enabled:
        mask = np.ones(img.shape[:2]) if seg_net is None \
            else segmentation.binarize_mask(segmentation.predict_mask(seg_net, img))
        img = segmentation.apply_mask(img, mask, mode=cfg.seg.mode)
    if cfg.filters.sobel_extra_channel:
        img = np.concatenate([img, ops.sobel_magnitude(img)], axis=2)
    return img


def _feature_key(cfg: ExperimentConfig, kind: str) -> str:
    relevant = {k: v for k, v in cfg.to_flat().items()
                if k.split(".")[0] in ("image_size", "filters", "seg", "seed")
                or k in ("image_size", "seed")}
    relevant["kind"] = kind
    relevant["manifest_sha"] = sha256_file(_prepared_manifest_path(cfg))
    from .util import sha256_text
    return sha256_text(json.dumps(relevant, sort_keys=True))[:16]


def compute_feature_tables(cfg: ExperimentConfig, m: mf.DatasetManifest) -> dict:
    """Pooled features per backbone kind for every manifest sample, cached.

    Returns {kind: (ids, N×W array)} in manifest order. Imported tables
    bypass extraction; computed tables are cached per (kind, config key).
    """
    ids = [_sample_id(s) for s in m.samples]
    tables = {}
    seg_net = None
    if cfg.seg.enabled and cfg.seg.mask_source == "model":
        seg_net = _load_segmenter(cfg)

    for kind in bb.KINDS:
        if kind in cfg.feature_imports:
            t_ids, feats = bb.read_feature_table(cfg.feature_imports[kind])
            bb.validate_coverage(t_ids, ids, path=cfg.feature_imports[kind])
            index = {sid: i for i, sid in enumerate(t_ids)}
            tables[kind] = (ids, feats[[index[sid] for sid in ids]])
            continue
        cache_dir = _out(cfg) / "cache"
        cache_dir.mkdir(parents=True, exist_ok=True)
        cache = cache_dir / f"features_{kind}_{_feature_key(cfg, kind)}.csv"
        if cache.exists():
            t_ids, feats = bb.read_feature_table(cache)
            if t_ids == ids:
                tables[kind] = (ids, feats)
                continue
        net = bb.build_backbone(kind, cfg.seed, in_channels=_input_channels(cfg))

        def pooled(s):
            img = preprocess_image(read_image(_resolve(cfg, s.image_path)), cfg, seg_net)
            return bb.pooled_features(net, img)

        feats = np.stack(parallel_map(pooled, list(m.samples)))
        bb.write_feature_table(cache, ids, feats)
        tables[kind] = (ids, feats)
    return tables


def _split_indices(m: mf.DatasetManifest) -> dict:
    out = {}
    for sp in ("train", "val", "test"):
        out[sp] = np.array([i for i, s in enumerate(m.samples) if s.split == sp],
                           dtype=np.int64)
    return out


# ---------------------------------------------------------------------------
# train: per-backbone heads plus optional fused head
# ---------------------------------------------------------------------------

def _heads_path(cfg) -> Path:
    return _out(cfg) / "heads.lfw"


def cmd_train(cfg: ExperimentConfig) -> dict:
    t0 = time.perf_counter()
    m = _load_prepared(cfg)
    k = m.label_map.k
    weights = _load_class_weights(cfg) if cfg.rebalance.use_class_weights \
        else np.ones(k)
    tables = compute_feature_tables(cfg, m)
    t_feat = time.perf_counter()

    idx = _split_indices(m)
    if idx["train"].size == 0:
        raise PipelineError("prepared manifest has no train rows")
    labels = np.array([s.label_id for s in m.samples], dtype=np.int64)
    y_tr, y_val = labels[idx["train"]], labels[idx["val"]]
    if np.unique(y_tr).size < 2:
        raise PipelineError("degenerate training split: fewer than 2 classes present")
    if cfg.train.epochs == 0:
        warnings.warn("train.epochs=0: heads are saved at initialization")

    tcfg = replace(cfg.train, seed=cfg.seed)
    heads, history_rows = {}, []
    for kind in bb.KINDS:
        feats = tables[kind][1]
        val = (feats[idx["val"]], y_val) if idx["val"].size else None
        head, hist = ens.train_head(feats[idx["train"]], y_tr, weights, tcfg,
                                    name=f"head.{kind}", val=val)
        heads[kind] = head
        for e, tl in enumerate(hist["train_loss"]):
            vl = hist["val_loss"][e] if hist["val_loss"] else ""
            history_rows.append(f"{kind},{e},{tl!r},{vl!r}" if vl != "" else f"{kind},{e},{tl!r},")
    if cfg.ens.mode == "FUSION":
        fused_feats = np.concatenate([tables[kind][1] for kind in bb.KINDS], axis=1)
        val = (fused_feats[idx["val"]], y_val) if idx["val"].size else None
        head, hist = ens.train_head(fused_feats[idx["train"]], y_tr, weights, tcfg,
                                    name="head.fused", val=val)
        heads["fused"] = head
        for e, tl in enumerate(hist["train_loss"]):
            vl = hist["val_loss"][e] if hist["val_loss"] else ""
            history_rows.append(f"fused,{e},{tl!r},{vl!r}" if vl != "" else f"fused,{e},{tl!r},")
    t_train = time.perf_counter()

    out = _out(cfg)
    params = []
    for name in list(bb.KINDS) + (["fused"] if "fused" in heads else []):
        params.extend(heads[name].params())
    hpath = _heads_path(cfg)
    nn.save_parameters(hpath, params)
    meta = Path(str(hpath) + ".meta.json")
    _write_json(meta, {"kind": "ensemble-heads", "n_classes": k,
                       "mode": cfg.ens.mode,
                       "feature_widths": {kind: int(tables[kind][1].shape[1])
                                          for kind in bb.KINDS}}, cfg)
    hist_path = out / "train_history.csv"
    hist_path.write_text(f"# {cfg.provenance()}\nmodel,epoch,train_loss,val_loss\n"
                         + "\n".join(history_rows) + "\n", encoding="utf-8")
    outputs = [hpath, meta, hist_path] + sorted((out / "cache").glob("features_*.csv"))
    _record_run(cfg, "train", {"features": t_feat - t0, "train": t_train - t_feat},
                outputs)
    return {"n_train": int(idx["train"].size), "mode": cfg.ens.mode,
            "heads": sorted(heads), "epochs": cfg.train.epochs}


def _load_heads(cfg, k: int, widths: dict) -> dict:
    hpath = _heads_path(cfg)
    if not hpath.exists():
        raise PipelineError(f"{hpath} not found; run `lesionforge train` first")
    heads = {}
    for kind in bb.KINDS:
        heads[kind] = ens.SoftmaxHead(widths[kind], k, name=f"head.{kind}", seed=cfg.seed)
    if cfg.ens.mode == "FUSION":
        heads["fused"] = ens.SoftmaxHead(sum(widths.values()), k, name="head.fused",
                                         seed=cfg.seed)
    params = []
    for head in heads.values():
        params.extend(head.params())
    nn.load_into(params, hpath)
    return heads


# ---------------------------------------------------------------------------
# evaluate: per-model metrics, ROC CSVs, timing
# ---------------------------------------------------------------------------

class PipelineModel:
    """Trained pipeline state for single-image prediction."""

    def __init__(self, cfg: ExperimentConfig, label_names, heads, nets, seg_net=None):
        self.cfg = cfg
        self.label_names = tuple(label_names)
        self.heads = heads
        self.nets = nets
        self.seg_net = seg_net

    @classmethod
    def load(cls, cfg: ExperimentConfig) -> "PipelineModel":
        m = _load_prepared(cfg)
        meta = json.loads(Path(str(_heads_path(cfg)) + ".meta.json")
                          .read_text(encoding="utf-8"))
        heads = _load_heads(cfg, meta["n_classes"], meta["feature_widths"])
        nets = {kind: bb.build_backbone(kind, cfg.seed, in_channels=_input_channels(cfg))
                for kind in bb.KINDS}
        seg_net = _load_segmenter(cfg) if cfg.seg.enabled and cfg.seg.mask_source == "model" \
            else None
        return cls(cfg, m.label_map.names, heads, nets, seg_net)

    def features_for(self, img: np.ndarray) -> dict:
        pre = preprocess_image(img, self.cfg, self.seg_net)
        return {kind: bb.pooled_features(self.nets[kind], pre) for kind in bb.KINDS}

    def predict(self, img: np.ndarray) -> ens.Prediction:
        feats = self.features_for(img)
        per_model = [self.heads[kind].probs(feats[kind][None])[0] for kind in bb.KINDS]
        if self.cfg.ens.mode == "FUSION":
            fused = np.concatenate([feats[kind] for kind in bb.KINDS])
            probs = self.heads["fused"].probs(fused[None])[0]
            return ens.Prediction(probs=probs, label=int(np.argmax(probs)),
                                  per_model_probs=tuple(per_model),
                                  model_weights=())
        return ens.soft_vote(per_model, self.cfg.ens.model_weights)


def _model_probs(cfg, heads, tables, rows) -> dict:
    """Test-split probability matrices for the three backbones and the ensemble."""
    out = {}
    per_model = []
    for kind in bb.KINDS:
        probs = heads[kind].probs(tables[kind][1][rows])
        out[kind] = probs
        per_model.append(probs)
    if cfg.ens.mode == "FUSION":
        fused = np.concatenate([tables[kind][1][rows] for kind in bb.KINDS], axis=1)
        out["ensemble"] = heads["fused"].probs(fused)
    else:
        out["ensemble"] = ens.soft_vote_batch(per_model, cfg.ens.model_weights)
    return out


def cmd_evaluate(cfg: ExperimentConfig) -> dict:
    t0 = time.perf_counter()
    m = _load_prepared(cfg)
    k = m.label_map.k
    meta_path = Path(str(_heads_path(cfg)) + ".meta.json")
    if not meta_path.exists():
        raise PipelineError(f"{meta_path} not found; run `lesionforge train` first")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    widths = {kind: int(w) for kind, w in meta["feature_widths"].items()}
    heads = _load_heads(cfg, meta["n_classes"], widths)
    tables = compute_feature_tables(cfg, m)
    idx = _split_indices(m)
    if idx["test"].size == 0:
        raise PipelineError("prepared manifest has no test rows")
    labels = np.array([s.label_id for s in m.samples], dtype=np.int64)
    y_test = labels[idx["test"]]
    test_ids = [_sample_id(m.samples[i]) for i in idx["test"]]
    probs = _model_probs(cfg, heads, tables, idx["test"])
    t_pred = time.perf_counter()

    out = _out(cfg)
    outputs = []
    models_payload = {}
    for name in MODEL_NAMES:
        p = probs[name]
        y_pred = np.argmax(p, axis=1)
        rep = mt.report(mt.confusion(y_test, y_pred, k))
        payload = rep.to_dict()
        payload["per_class"] = {m.label_map.names[int(c)]: v
                                for c, v in payload["per_class"].items()}
        auc, roc_rows, skipped = {}, [], []
        for c in range(k):
            try:
                curve = mt.roc_auc(p, y_test, c)
            except ValueError:
                skipped.append(m.label_map.names[c])
                continue
            auc[m.label_map.names[c]] = curve.auc
            for thr, (fpr, tpr) in zip(curve.thresholds, curve.points):
                roc_rows.append(f"{c},{thr!r},{fpr!r},{tpr!r}")
        payload["auc"] = auc
        if skipped:
            payload["roc_skipped_classes"] = skipped
        models_payload[name] = payload

        roc_path = out / f"roc_{name}.csv"
        roc_path.write_text(f"# {cfg.provenance()}\nclass,threshold,fpr,tpr\n"
                            + "\n".join(roc_rows) + "\n", encoding="utf-8")
        pred_path = out / f"predictions_{name}.csv"
        with open(pred_path, "w", encoding="utf-8") as fh:
            fh.write(f"# {cfg.provenance()}\n")
            fh.write("sample_id,label," + ",".join(f"prob_{c}" for c in range(k)) + "\n")
            for sid, row in zip(test_ids, p):
                fh.write(sid + f",{int(np.argmax(row))}," +
                         ",".join(repr(float(v)) for v in row) + "\n")
        outputs.extend([roc_path, pred_path])

    mpath = out / "metrics.json"
    _write_json(mpath, {"label_names": list(m.label_map.names),
                        "n_test": int(idx["test"].size),
                        "ensemble_mode": cfg.ens.mode,
                        "models": models_payload}, cfg)
    outputs.insert(0, mpath)

    timing_path = None
    if cfg.timing.enabled:
        timing_path = out / "timing.json"
        _write_timing(cfg, m, idx, tables, heads, timing_path)
        outputs.append(timing_path)
    _record_run(cfg, "evaluate",
                {"predict": t_pred - t0, "total": time.perf_counter() - t0},
                outputs, nondeterministic=[timing_path] if timing_path else [])
    return {"n_test": int(idx["test"].size),
            "accuracy": {name: models_payload[name]["accuracy"] for name in MODEL_NAMES}}


def _write_timing(cfg, m, idx, tables, heads, path):
    imported = [kind for kind in bb.KINDS if kind in cfg.feature_imports]
    n_runs, n_warm = cfg.timing.n_runs, cfg.timing.n_warmup
    payload = {"note": "wall-clock seconds per sample; excluded from determinism digests"}
    if imported:
        # no images behind imported features: time the heads only
        rows = idx["test"]
        samples = [tuple(tables[kind][1][i] for kind in bb.KINDS) for i in rows[:16]]

        def head_only(feats):
            per = [heads[kind].probs(f[None])[0] for kind, f in zip(bb.KINDS, feats)]
            if cfg.ens.mode == "FUSION":
                return heads["fused"].probs(np.concatenate(feats)[None])
            return ens.soft_vote_batch(per, cfg.ens.model_weights)

        rep = mt.time_inference(head_only, samples, n_warm, n_runs)
        payload["scope"] = "heads-only (features imported for: " + ",".join(imported) + ")"
        payload["ensemble"] = rep.to_dict()
    else:
        model = PipelineModel.load(cfg)
        test_rows = [m.samples[i] for i in idx["test"][:16]]
        images = [read_image(_resolve(cfg, s.image_path)) for s in test_rows]
        rep = mt.time_inference(model.predict, images, n_warm, n_runs)
        payload["scope"] = "full pipeline (preprocess + features + heads)"
        payload["ensemble"] = rep.to_dict()
        per_backbone = {}
        for kind in bb.KINDS:
            net = model.nets[kind]
            pre = [preprocess_image(img, cfg, model.seg_net) for img in images]
            rep_k = mt.time_inference(lambda x, _net=net: bb.pooled_features(_net, x),
                                      pre, n_warm, n_runs)
            per_backbone[kind] = rep_k.to_dict()
        payload["per_backbone"] = per_backbone
        order = sorted(per_backbone, key=lambda kk: per_backbone[kk]["median_s"])
        payload["fastest_backbone"] = order[0]
        payload["comparison"] = (
            f"median per-backbone seconds: "
            + ", ".join(f"{kk}={per_backbone[kk]['median_s']:.6f}" for kk in order))
    _write_json(path, payload, cfg)
