"""Training, evaluation and the experiment protocols (shift, low data, few-shot, ablations)."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .embeddings import VARIANTS, init_embeddings
from .kg import KnowledgeGraph, build_mask, hierarchy_closure, node_mask
from .model import KGVModel
from .nn import Adam, Decoder, Encoder, predict
from .synth import ImageSet

log = logging.getLogger(__name__)

EXCLUSIONS = {
    "colors": ("hasBackgroundColor", "hasBorderColor"),
    "shapes": ("hasShape",),
    "legends": ("hasLegend",),
}
ELEMENT_KIND = {"colors": "color", "shapes": "shape", "legends": "legend"}
DTYPES = {"float32": np.float32, "float64": np.float64}

# named sub-streams of the run seed
ENCODER_STREAM, DECODER_STREAM, TABLE_STREAM, SHUFFLE_STREAM, SUBSAMPLE_STREAM, SHOT_STREAM = range(6)


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    d: int = 64
    beta: float = 0.1
    epsilon: float | None = None   # None -> d / 8
    lr: float = 2e-4
    epochs: int = 40
    batch_size: int = 32
    seed: int = 0
    variant: str = "gaussian"
    exclude: tuple[str, ...] = ()
    synthetic: bool = True
    fraction: float = 1.0
    channels: tuple[int, ...] = (16, 32, 64)
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "exclude", tuple(sorted(set(self.exclude))))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.d < 1 or self.epochs < 1 or self.batch_size < 1 or not self.channels:
            raise HarnessError("d, epochs, batch_size and channels must be positive")
        if any(c < 1 for c in self.channels):
            raise HarnessError("channel widths must be positive")
        if self.lr <= 0:
            raise HarnessError("lr must be > 0")
        if self.beta < 0:
            raise HarnessError("beta must be >= 0")
        if self.epsilon is not None and self.epsilon <= 0:
            raise HarnessError("epsilon must be > 0")
        if not 0.0 < self.fraction <= 1.0:
            raise HarnessError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.variant not in VARIANTS:
            raise HarnessError(f"unknown score variant {self.variant!r}")
        bad = set(self.exclude) - set(EXCLUSIONS)
        if bad:
            raise HarnessError(f"unknown exclusion(s) {sorted(bad)}; choose from {sorted(EXCLUSIONS)}")
        if self.dtype not in DTYPES:
            raise HarnessError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def eps(self) -> float:
        return self.d / 8.0 if self.epsilon is None else float(self.epsilon)

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def baseline(self) -> "TrainConfig":
        """Plain cross-entropy counterpart: no regularizer, no element images."""
        return replace(self, beta=0.0, synthetic=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exclude"] = list(self.exclude)
        d["channels"] = list(self.channels)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class Metrics:
    classes: list[str]
    accuracy: float
    precision: list[float]
    recall: list[float]
    confusion: list[list[int]]
    support: list[int]
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "classes": list(self.classes),
            "precision": dict(zip(self.classes, self.precision)),
            "recall": dict(zip(self.classes, self.recall)),
            "confusion": self.confusion,
            "support": dict(zip(self.classes, self.support)),
            "history": self.history,
        }


def metrics_from_predictions(preds, labels, classes) -> Metrics:
    """Accuracy, per-class precision/recall (0/0 -> 0) and the confusion matrix (rows = truth)."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise HarnessError("cannot evaluate an empty split")
    n = len(classes)
    conf = np.zeros((n, n), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    tp = np.diag(conf).astype(np.float64)
    col = conf.sum(axis=0).astype(np.float64)
    row = conf.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, col, out=np.zeros(n), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros(n), where=row > 0)
    return Metrics(list(classes), float(tp.sum() / len(labels)), [float(p) for p in precision],
                   [float(r) for r in recall], conf.tolist(), [int(s) for s in row])


# -- data preparation ----------------------------------------------------------------


def excluded_kg(kg: KnowledgeGraph, exclude) -> KnowledgeGraph:
    """Drop the excluded relations' triples, then close the hierarchy."""
    names = [r for x in exclude for r in EXCLUSIONS[x]]
    base = kg.without_relations([r for r in names if r in kg.relations]) if names else kg
    return hierarchy_closure(base)


def class_map_for(data: ImageSet, kg: KnowledgeGraph, domain: str, classes=None) -> dict[int, int]:
    classes = data.classes if classes is None else classes
    nodes = data.class_nodes.get(domain)
    if nodes is None:
        raise HarnessError(f"no class -> KG entity map for domain {domain!r}")
    out = {}
    for i, name in enumerate(classes):
        if name not in nodes:
            raise HarnessError(f"unmapped class {name!r} in domain {domain!r}")
        out[i] = kg.entity_id(nodes[name])
    return out


def stratified_subsample(labels: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Indices keeping ``floor(fraction * n_c)`` samples per class (identity at 1.0)."""
    if fraction >= 1.0:
        return np.arange(len(labels))
    keep = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        k = int(np.floor(fraction * len(idx)))
        if k == 0:
            raise HarnessError(f"fraction {fraction} leaves class {c} with zero samples")
        keep.append(np.sort(rng.permutation(idx)[:k]))
    return np.sort(np.concatenate(keep))


@dataclass
class TrainingSet:
    x: np.ndarray          # (N, H, W, C) float
    labels: np.ndarray     # decoder index, 0 for element images
    masks: np.ndarray      # (N, R, O) uint8
    ce_weight: np.ndarray  # 1 real, 0 synthetic element

    def __len__(self):
        return len(self.labels)


def training_set(config: TrainConfig, data: ImageSet, kg_closed: KnowledgeGraph, domain: str,
                 split: str = "train", classes=None, index=None) -> TrainingSet:
    """Real images of ``domain``/``split`` (optionally subsampled) plus element images when enabled."""
    classes = data.classes if classes is None else classes
    real = data.select(domain=domain, provenance="real-analog", split=split) if index is None else data.subset(index)
    if len(real) == 0:
        raise HarnessError(f"no training images for domain {domain!r} split {split!r}")
    lookup = {c: i for i, c in enumerate(classes)}
    missing = sorted({r["label"] for r in real.records} - set(lookup))
    if missing:
        raise HarnessError(f"unmapped class(es) {missing}")
    y = np.array([lookup[r["label"]] for r in real.records], dtype=np.int64)
    if index is None:
        keep = stratified_subsample(y, config.fraction, np.random.default_rng([config.seed, SUBSAMPLE_STREAM]))
        real, y = real.subset(keep), y[keep]
    cmap = class_map_for(data, kg_closed, domain, classes)
    class_masks = np.stack([build_mask(kg_closed, cmap, i).bits for i in range(len(classes))])
    xs = [real.float_images(config.np_dtype)]
    masks = [class_masks[y]]
    labels = [y]
    weights = [np.ones(len(y))]
    if config.synthetic:
        dropped = {ELEMENT_KIND[x] for x in config.exclude}
        el_idx = [i for i, r in enumerate(data.records)
                  if r["provenance"] == "synthetic-element" and r.get("kind", _kind_of(kg_closed, r["label"])) not in dropped]
        if el_idx:
            el = data.subset(el_idx)
            xs.append(el.float_images(config.np_dtype))
            masks.append(np.stack([node_mask(kg_closed, kg_closed.entity_id(r["label"])).bits for r in el.records]))
            labels.append(np.zeros(len(el), dtype=np.int64))
            weights.append(np.zeros(len(el)))
    return TrainingSet(np.concatenate(xs), np.concatenate(labels), np.concatenate(masks),
                       np.concatenate(weights).astype(config.np_dtype))


def _kind_of(kg: KnowledgeGraph, name: str) -> str:
    """Element kind from the KG hierarchy (for manifests without a ``kind`` field)."""
    node = kg.entity_id(name)
    parents = {kg.entities[t] for h, r, t in kg.triples if h == node and r == 0}
    for kind, group in (("color", "Color"), ("shape", "Shape"), ("legend", "Legend")):
        if group in parents:
            return kind
    return "other"


# -- training ---------------------------------------------------------------------------


def init_model(config: TrainConfig, kg: KnowledgeGraph, num_classes: int, input_shape=(32, 32, 3)) -> KGVModel:
    dt = config.np_dtype
    encoder = Encoder.init([config.seed, ENCODER_STREAM], config.d, config.channels, input_shape, dt)
    decoder = Decoder.init([config.seed, DECODER_STREAM], config.d, num_classes, dt)
    tables = init_embeddings(kg, config.d, [config.seed, TABLE_STREAM], config.variant, dt)
    return KGVModel(encoder, decoder, tables)


def fit(model: KGVModel, config: TrainConfig, ts: TrainingSet, epochs: int | None = None,
        freeze_encoder: bool = False) -> list[dict]:
    """Seeded mini-batch Adam over ``ts``; returns the per-epoch mean LossBreakdown."""
    if len(ts) == 0:
        raise HarnessError("empty training set")
    epochs = config.epochs if epochs is None else epochs
    rng = np.random.default_rng([config.seed, SHUFFLE_STREAM])
    opt = Adam(lr=config.lr)
    dt = config.np_dtype
    history = []
    for epoch in range(epochs):
        perm = rng.permutation(len(ts))
        sums = dict.fromkeys(("ce", "reg_pos", "reg_neg", "reg", "total"), 0.0)
        for start in range(0, len(ts), config.batch_size):
            b = perm[start:start + config.batch_size]
            masks = ts.masks[b].astype(dt)
            loss, grads = model.loss_and_grads(ts.x[b], ts.labels[b], masks, ts.ce_weight[b],
                                               config.beta, config.eps)
            if freeze_encoder:
                grads = {k: v for k, v in grads.items() if not k.startswith("enc.")}
            opt.step(model.parameters(), grads)
            model.tables.project()
            for k, v in loss.as_dict().items():
                sums[k] += v * len(b)
        row = {"epoch": epoch + 1, **{k: v / len(ts) for k, v in sums.items()}}
        history.append(row)
        log.debug("epoch %d %s", epoch + 1, row)
    return history


def train(config: TrainConfig, data: ImageSet, kg: KnowledgeGraph, domain: str = "A"):
    """Train on ``domain``'s train split. Returns ``(model, history)``."""
    kg_closed = excluded_kg(kg, config.exclude)
    ts = training_set(config, data, kg_closed, domain)
    model = init_model(config, kg_closed, len(data.classes), data.images.shape[1:])
    history = fit(model, config, ts)
    return model, history


def evaluate(model: KGVModel, data: ImageSet, classes=None, batch_size: int = 256) -> Metrics:
    """Arg-max evaluation of ``data``'s real images over ``classes`` (default: all model classes)."""
    model_classes = data.classes if classes is None else list(classes)
    real = [i for i, r in enumerate(data.records) if r["provenance"] == "real-analog"]
    if not real:
        raise HarnessError("cannot evaluate an empty split")
    sub = data.subset(real)
    if model.decoder.num_classes != len(model_classes):
        raise HarnessError(f"model has {model.decoder.num_classes} classes, split declares {len(model_classes)}")
    lookup = {c: i for i, c in enumerate(model_classes)}
    y = np.array([lookup[r["label"]] for r in sub.records])
    x = sub.float_images(model.encoder.params["proj.w"].dtype)
    preds = predict(model.logits(x, batch_size))
    return metrics_from_predictions(preds, y, model_classes)


def shift_eval(model: KGVModel, data: ImageSet, target_domain: str = "B", classes=None) -> Metrics:
    """Full target-domain data; predictions restricted to the classes shared by model and target."""
    model_classes = data.classes if classes is None else list(classes)
    target = data.select(domain=target_domain, provenance="real-analog")
    present = {r["label"] for r in target.records}
    shared = [c for c in model_classes if c in present]
    if not shared:
        raise HarnessError(f"no classes shared with domain {target_domain!r}")
    cols = [model_classes.index(c) for c in shared]
    lookup = {c: i for i, c in enumerate(shared)}
    keep = [i for i, r in enumerate(target.records) if r["label"] in lookup]
    target = target.subset(keep)
    y = np.array([lookup[r["label"]] for r in target.records])
    logits = model.logits(target.float_images(model.encoder.params["proj.w"].dtype))
    return metrics_from_predictions(predict(logits[:, cols]), y, shared)


def fewshot(model: KGVModel, config: TrainConfig, data: ImageSet, kg: KnowledgeGraph, shots: int,
            target_domain: str = "B", epochs: int | None = None, freeze_encoder: bool = False):
    """K-shot transfer: copy the encoder, fresh Xavier decoder, retrain on K images per class.

    The source model is never modified. Returns ``(metrics, info)`` where
    ``info`` records the retrain-set size and the encoder digests.
    """
    if shots < 1:
        raise HarnessError("shots must be >= 1")
    source_digest = model.digest("enc")
    target = data.select(domain=target_domain, provenance="real-analog")
    lookup = {c: i for i, c in enumerate(data.classes)}
    y = np.array([lookup[r["label"]] for r in target.records], dtype=np.int64)
    rng = np.random.default_rng([config.seed, SHOT_STREAM])
    pick = []
    for c in range(len(data.classes)):
        idx = np.flatnonzero(y == c)
        if len(idx) < shots:
            raise HarnessError(f"class {data.classes[c]!r} has {len(idx)} < {shots} target samples")
        pick.extend(rng.permutation(idx)[:shots].tolist())
    pick = sorted(pick)
    rest = sorted(set(range(len(target))) - set(pick))
    tuned = model.copy()
    retained_digest = tuned.digest("enc")
    tuned.decoder = Decoder.init([config.seed, DECODER_STREAM, 1], config.d, len(data.classes), config.np_dtype)
    kg_closed = excluded_kg(kg, config.exclude)
    # retrain on exactly K * N target images; element images are not part of the few-shot set
    shot_cfg = replace(config, synthetic=False, fraction=1.0)
    global_idx = [data.records.index(target.records[i]) for i in pick]
    ts = training_set(shot_cfg, data, kg_closed, target_domain, index=global_idx)
    history = fit(tuned, config, ts, epochs, freeze_encoder=freeze_encoder)
    held_out = target.subset(rest) if rest else target
    metrics = evaluate(tuned, held_out)
    metrics.history = history
    if model.digest("enc") != source_digest:  # pragma: no cover - guards the contract
        raise RuntimeError("few-shot retraining modified the source encoder")
    info = {"retrain_size": len(ts), "source_encoder": source_digest, "retained_encoder": retained_digest,
            "eval_size": len(held_out)}
    return metrics, info


# -- sweeps -------------------------------------------------------------------------------


def shift_experiment(config: TrainConfig, data: ImageSet, kg: KnowledgeGraph, seeds=(0, 1, 2),
                     source="A", target="B"):
    """KGV and CE baseline per seed: source-test and target accuracy rows, plus trained models."""
    rows, models = [], {}
    for seed in seeds:
        for name, cfg in (("kgv", replace(config, seed=seed)), ("baseline", replace(config, seed=seed).baseline())):
            model, history = train(cfg, data, kg, source)
            src = evaluate(model, data.select(domain=source, split="test", provenance="real-analog"))
            tgt = shift_eval(model, data, target)
            models[(name, seed)] = model
            rows.append({"model": name, "seed": seed, "source_acc": src.accuracy, "target_acc": tgt.accuracy,
                         "final_loss": history[-1]["total"]})
    return rows, models


def lowdata_sweep(fractions, config: TrainConfig, data: ImageSet, kg: KnowledgeGraph, seeds=(0, 1, 2),
                  source="A", target="B", scale_epochs: bool = False, trained=None):
    """Per fraction, model and seed: stratified subsample, train, evaluate.

    ``scale_epochs`` multiplies epochs by ``1 / fraction`` so every fraction
    sees about the same number of steps. ``trained`` may supply already
    trained ``{(model, seed, fraction): KGVModel}`` entries to reuse.
    """
    fractions = list(fractions)
    if not fractions or any(not 0.0 < f <= 1.0 for f in fractions):
        raise HarnessError("fractions must lie in (0, 1]")
    if fractions != sorted(fractions):
        raise HarnessError("fractions must be sorted")
    trained = trained or {}
    rows = []
    for frac in fractions:
        for seed in seeds:
            base = replace(config, seed=seed, fraction=frac)
            if scale_epochs:
                base = replace(base, epochs=int(np.ceil(config.epochs / frac)))
            for name, cfg in (("kgv", base), ("baseline", base.baseline())):
                model = trained.get((name, seed, frac))
                if model is None:
                    model, _ = train(cfg, data, kg, source)
                src = evaluate(model, data.select(domain=source, split="test", provenance="real-analog"))
                tgt = shift_eval(model, data, target)
                rows.append({"model": name, "fraction": frac, "seed": seed,
                             "source_acc": src.accuracy, "target_acc": tgt.accuracy})
    return rows


def ablation_grid(config: TrainConfig, seeds=(0, 1, 2), variants=VARIANTS,
                  exclusions=("legends", "colors", "shapes")) -> list[tuple[str, TrainConfig]]:
    cells = [(v, replace(config, variant=v, seed=s)) for v in variants for s in seeds]
    cells += [(f"w/o {x}", replace(config, exclude=(x,), seed=seeds[0])) for x in exclusions]
    return cells


def ablate(config: TrainConfig, data: ImageSet, kg: KnowledgeGraph, seeds=(0, 1, 2), variants=VARIANTS,
           exclusions=("legends", "colors", "shapes"), source="A", target="B"):
    """Score-variant x seed grid plus knowledge-exclusion runs. Returns ``(rows, summary)``."""
    rows = []
    for name, cfg in ablation_grid(config, seeds, variants, exclusions):
        kg_closed = excluded_kg(kg, cfg.exclude)
        dropped = [r for x in cfg.exclude for r in EXCLUSIONS[x]]
        masks = training_set(cfg, data, kg_closed, source).masks
        leaked = [r for r in dropped if r in kg_closed.relations and masks[:, kg_closed.relation_id(r)].any()]
        if leaked:  # pragma: no cover - structural invariant
            raise RuntimeError(f"excluded relation(s) {leaked} still have positives")
        model, _ = train(cfg, data, kg, source)
        src = evaluate(model, data.select(domain=source, split="test", provenance="real-analog"))
        tgt = shift_eval(model, data, target)
        rows.append({"cell": name, "variant": cfg.variant, "exclude": "+".join(cfg.exclude) or "-",
                     "seed": cfg.seed, "source_acc": src.accuracy, "target_acc": tgt.accuracy})
    return rows, ablation_summary(rows)


def ablation_summary(rows) -> dict:
    means = {}
    for r in rows:
        means.setdefault(r["cell"], []).append(r["target_acc"])
    means = {k: float(np.mean(v)) for k, v in means.items()}
    out = {"mean_target_acc": means}
    if "gaussian" in means and "transE" in means:
        agrees = means["gaussian"] >= means["transE"]
        out["gaussian_ge_transE"] = agrees
        out["flag"] = None if agrees else "gaussian < transE on this benchmark (expected gaussian >= transE)"
    return out


def summarize(rows, key="model", value="target_acc") -> dict[str, tuple[float, float]]:
    """Mean and spread (max - min) of ``value`` per ``key``."""
    groups = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r[value])
    return {k: (float(np.mean(v)), float(np.max(v) - np.min(v))) for k, v in groups.items()}


# -- artifacts -------------------------------------------------------------------------------


def _round(obj, ndigits: int = 10):
    if isinstance(obj, float):
        return round(obj, ndigits)
    if isinstance(obj, dict):
        return {k: _round(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v, ndigits) for v in obj]
    if isinstance(obj, np.generic):
        return _round(obj.item(), ndigits)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_round(obj), indent=2, sort_keys=True) + "\n"


def rows_to_csv(rows) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    fields = list(rows[0])
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def run_dir(out, kind: str, payload: dict) -> Path:
    """``out/<kind>-<hash of payload>``, created if needed."""
    h = hashlib.sha256(json.dumps(_round(payload), sort_keys=True).encode()).hexdigest()[:12]
    path = Path(out) / f"{kind}-{h}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_artifacts(path: Path, metrics: dict | None = None, rows=None):
    if metrics is not None:
        (path / "metrics.json").write_text(dumps_json(metrics), encoding="utf-8")
    if rows is not None:
        (path / "results.csv").write_text(rows_to_csv(rows), encoding="utf-8")
