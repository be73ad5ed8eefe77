"""Training loop, Adam optimizer, checkpoint I/O, evaluation, prediction.

Determinism contract: a fixed seed fixes parameter initialization, epoch
shuffling, dropout masks, and therefore the entire trajectory. Checkpoints
store raw little-endian float64 buffers, so save -> load -> evaluate
reproduces metrics bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import PipelineConfig, build_config
from .data import (DatasetMeta, MultimodalExample, entity_f1, load_dataset,
                   load_meta, spans_from_bio2)
from .errors import ConfigError, DataError, NumericalError
from .model import PipelineModel
from .nn import ParamStore
from .tensor import Tape, Tensor
from . import tensor as T

CHECKPOINT_FORMAT = "hamnet-checkpoint/1"


class Adam:
    """Adam with bias correction; iterates parameters in sorted-name order."""

    def __init__(self, store: ParamStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.tensors.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.tensors.items()}

    def step(self, grad_clip: float = 0.0) -> None:
        names = sorted(self.store.tensors)
        grads = {}
        for name in names:
            t = self.store.tensors[name]
            grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        if grad_clip > 0.0:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > grad_clip:
                factor = grad_clip / total
                grads = {name: g * factor for name, g in grads.items()}
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in names:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            self.store.tensors[name].data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory: str | Path, model: PipelineModel,
                    training: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(model.store.tensors)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "data_meta": model.meta.to_dict(),
        "training": training or {},
        "tensors": {},
    }
    for i, name in enumerate(names):
        t = model.store.tensors[name]
        fname = f"t{i:04d}.bin"
        (directory / fname).write_bytes(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        manifest["tensors"][name] = {"shape": list(t.data.shape), "file": fname}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(directory: str | Path) -> tuple[PipelineModel, dict]:
    """Rebuild a model from a checkpoint directory. Returns (model, training)."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"unsupported checkpoint format {manifest.get('format')!r}")
    config = PipelineConfig(**manifest["config"])
    meta = DatasetMeta.from_dict(manifest["data_meta"])
    model = PipelineModel(config, meta)
    recorded = manifest["tensors"]
    if set(recorded) != set(model.store.tensors):
        raise DataError("checkpoint parameter names do not match the configured model")
    for name, entry in recorded.items():
        t = model.store.tensors[name]
        shape = tuple(entry["shape"])
        if shape != t.data.shape:
            raise DataError(f"checkpoint tensor '{name}' has shape {shape}, "
                            f"model expects {t.data.shape}")
        raw = (directory / entry["file"]).read_bytes()
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
        t.data = np.ascontiguousarray(arr, dtype=np.float64)
    return model, manifest.get("training", {})


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    n_examples: int
    precision: float
    recall: float
    f1: float
    per_type: dict[str, dict]
    relevance_sem: float      # mean |M| of the semantic view
    relevance_spat: float     # mean |M| of the spatial view
    zero_object_examples: int

    def to_dict(self) -> dict:
        return asdict(self)

    def lines(self) -> list[str]:
        out = [
            f"examples            {self.n_examples}",
            f"precision           {self.precision:.4f}",
            f"recall              {self.recall:.4f}",
            f"f1                  {self.f1:.4f}",
        ]
        for typ, score in self.per_type.items():
            out.append(f"f1[{typ:<4}]            {score['f1']:.4f} "
                       f"(gold {score['n_gold']}, pred {score['n_pred']})")
        out.append(f"relevance |M| sem   {self.relevance_sem:.4f}")
        out.append(f"relevance |M| spat  {self.relevance_spat:.4f}")
        out.append(f"zero-object count   {self.zero_object_examples}")
        return out


def evaluate(model: PipelineModel, examples: list[MultimodalExample],
             oracle: bool = False) -> EvalReport:
    """Decode every example and report entity metrics plus diagnostics.

    ``oracle=True`` scores the gold labels against themselves (a harness
    sanity route: the metric stack must return exactly 1.0).
    """
    if not examples:
        raise DataError("evaluate: empty dataset")
    pred_spans, gold_spans = [], []
    mags_sem, mags_spat = [], []
    zero_objects = 0
    for ex in examples:
        gold_spans.append(spans_from_bio2(ex.sentence.labels))
        if ex.objects == []:
            zero_objects += 1
        if oracle:
            pred_spans.append(gold_spans[-1])
            continue
        labels, state = model.decode(ex)
        pred_spans.append(spans_from_bio2(labels))
        m1, m2 = state.relevance_magnitudes()
        mags_sem.append(m1)
        mags_spat.append(m2)
    report = entity_f1(pred_spans, gold_spans)
    return EvalReport(
        n_examples=len(examples),
        precision=report.precision,
        recall=report.recall,
        f1=report.f1,
        per_type={t: asdict(s) for t, s in report.per_type.items()},
        relevance_sem=float(np.mean(mags_sem)) if mags_sem else 0.0,
        relevance_spat=float(np.mean(mags_spat)) if mags_spat else 0.0,
        zero_object_examples=zero_objects,
    )


def predict(model: PipelineModel, examples: list[MultimodalExample]) -> list[dict]:
    """Span predictions as JSON-ready dicts, one per example."""
    rows = []
    for ex in examples:
        labels, state = model.decode(ex)
        m1, m2 = state.relevance_magnitudes()
        rows.append({
            "tokens": list(ex.sentence.tokens),
            "labels": labels,
            "spans": [{"start": s.start, "stop": s.stop, "type": s.type}
                      for s in spans_from_bio2(labels)],
            "relevance": {"semantic": m1, "spatial": m2},
        })
    return rows


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = 0.0
    final_train_loss: float = 0.0
    checkpoint_dir: str = ""


def _mean_loss_over(model: PipelineModel, batch: list[MultimodalExample],
                    rng: np.random.Generator) -> Tensor:
    losses = []
    for ex in batch:
        loss, _ = model.loss(ex, train=True, rng=rng)
        losses.append(loss)
    total = losses[0]
    for extra in losses[1:]:
        total = T.add(total, extra)
    return T.scale(total, 1.0 / len(batch))


def _diagnose_nonfinite(model: PipelineModel, batch: list[MultimodalExample],
                        epoch: int) -> str:
    for i, ex in enumerate(batch):
        loss, state = model.loss(ex, train=False)
        stage = state.first_nonfinite_stage()
        if stage is not None:
            return f"first non-finite output in stage '{stage}' (epoch {epoch}, batch item {i})"
        if not np.isfinite(loss.data):
            return f"non-finite CRF loss (epoch {epoch}, batch item {i})"
    return f"non-finite batch loss at epoch {epoch}; per-example reruns stayed finite"


def train(config: PipelineConfig, log=print) -> TrainResult:
    """Full training run driven by a validated config. Writes a checkpoint.

    Keeps the parameters of the epoch with the best validation F1 (ties keep
    the earlier epoch); without a validation set the final epoch wins. Stops
    early after ``patience`` epochs without improvement.
    """
    if not config.train_path:
        raise ConfigError("train_path is required")
    if not config.meta_path:
        raise ConfigError("meta_path is required")
    meta = load_meta(config.meta_path)
    train_set = load_dataset(config.train_path, meta)
    if not train_set:
        raise DataError(f"training set {config.train_path} is empty")
    val_set = load_dataset(config.val_path, meta) if config.val_path else []

    model = PipelineModel(config, meta)
    optimizer = Adam(model.store, lr=config.learning_rate)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])

    result = TrainResult(checkpoint_dir=str(config.checkpoint_dir))
    best_f1 = -1.0
    best_state: dict[str, np.ndarray] | None = None
    stale = 0

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss = 0.0
        for lo in range(0, len(order), config.batch_train):
            batch = [train_set[i] for i in order[lo:lo + config.batch_train]]
            model.store.zero_grad()
            with Tape() as tape:
                mean_loss = _mean_loss_over(model, batch, dropout_rng)
            value = float(mean_loss.data)
            if not np.isfinite(value):
                raise NumericalError(_diagnose_nonfinite(model, batch, epoch))
            tape.backward(mean_loss)
            optimizer.step(grad_clip=config.grad_clip)
            epoch_loss += value * len(batch)
        epoch_loss /= len(train_set)

        entry = {"epoch": epoch, "train_loss": epoch_loss}
        if val_set:
            report = evaluate(model, val_set)
            entry["val_f1"] = report.f1
            if report.f1 > best_f1:
                best_f1 = report.f1
                best_state = {n: t.data.copy() for n, t in model.store.tensors.items()}
                result.best_epoch = epoch
                result.best_val_f1 = report.f1
                stale = 0
            else:
                stale += 1
            log(f"epoch {epoch:>4}  loss {epoch_loss:.4f}  val_f1 {report.f1:.4f}  "
                f"best {best_f1:.4f}")
        else:
            log(f"epoch {epoch:>4}  loss {epoch_loss:.4f}")
        result.history.append(entry)
        result.final_train_loss = epoch_loss
        if val_set and stale >= config.patience:
            log(f"early stop: no val improvement for {config.patience} epochs")
            break

    if best_state is not None:
        for name, data in best_state.items():
            model.store.tensors[name].data = data
    training_meta = {
        "epochs_run": len(result.history),
        "best_epoch": result.best_epoch,
        "best_val_f1": result.best_val_f1,
        "final_train_loss": result.final_train_loss,
        "seed": config.seed,
    }
    save_checkpoint(config.checkpoint_dir, model, training_meta)
    return result


def sweep_interaction_rounds(config: PipelineConfig, values: list[int],
                             log=print) -> list[dict]:
    """Train and evaluate once per interaction-round count; returns table rows.

    Evaluation prefers the test split, then validation, then training data.
    Each run re-seeds identically, so the sweep isolates the round count.
    """
    rows = []
    for rounds in values:
        cfg = replace(config, interaction_rounds=rounds,
                      checkpoint_dir=str(Path(config.checkpoint_dir) / f"L{rounds}"))
        train(cfg, log=lambda *_: None)
        model, _ = load_checkpoint(cfg.checkpoint_dir)
        meta = load_meta(cfg.meta_path)
        eval_path = cfg.test_path or cfg.val_path or cfg.train_path
        report = evaluate(model, load_dataset(eval_path, meta))
        rows.append({"interaction_rounds": rounds, "precision": report.precision,
                     "recall": report.recall, "f1": report.f1})
        log(f"L={rounds}  P {report.precision:.4f}  R {report.recall:.4f}  "
            f"F1 {report.f1:.4f}")
    return rows
