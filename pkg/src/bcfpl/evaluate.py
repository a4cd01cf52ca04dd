"""Scoring, accuracy, ROC/AUC, resolution sweeps and throughput."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import DEFAULT_BATCH_SIZE, Label, Manifest, make_batches
from .errors import BcfplError, DegenerateInputError, DomainError, SweepError
from .imaging import LADDER, MODEL_SIDE
from .nn import BcfplModel, softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredSample:
    score: float  # P(Occupied)
    true_label: Label


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class EvalReport:
    n: int
    accuracy: float
    auc: float | None
    confusion: Confusion
    roc: list[RocPoint] = field(default_factory=list)
    name: str = ""
    resolution: int = MODEL_SIDE


def predict_scores(model: BcfplModel, manifest: Manifest, k: int = MODEL_SIDE,
                   batch_size: int = DEFAULT_BATCH_SIZE, cache: dict | None = None) -> list[ScoredSample]:
    """Occupied-class softmax probability per sample, in manifest order."""
    out = []
    for batch in make_batches(manifest, batch_size, k, train_mode=False, cache=cache):
        logits, _ = model.forward(batch.inputs, "infer")
        prob = softmax(logits.astype(np.float64))[:, Label.OCCUPIED]
        out.extend(ScoredSample(float(p), Label(int(y))) for p, y in zip(prob, batch.labels))
    return out


def _arrays(scored):
    scores = np.array([s.score for s in scored], dtype=np.float64)
    labels = np.array([int(s.true_label) for s in scored], dtype=np.int64)
    return scores, labels


def confusion_of(scored, threshold: float = 0.5) -> Confusion:
    if not scored:
        raise DomainError("cannot score an empty list")
    scores, labels = _arrays(scored)
    pred = scores >= threshold
    pos = labels == Label.OCCUPIED
    return Confusion(int((pred & pos).sum()), int((pred & ~pos).sum()),
                     int((~pred & pos).sum()), int((~pred & ~pos).sum()))


def accuracy_of(scored, threshold: float = 0.5) -> float:
    """Fraction classified correctly; a score equal to the threshold counts as Occupied."""
    c = confusion_of(scored, threshold)
    return (c.tp + c.tn) / c.n


def roc_auc(scored) -> tuple[list[RocPoint], float]:
    """ROC curve over distinct score thresholds, and its trapezoidal area.

    Tied scores form a single step, which makes the area equal to the
    Mann-Whitney statistic P(s+ > s-) + P(s+ = s-)/2.
    """
    scores, labels = _arrays(scored)
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("ROC needs at least one positive and one negative sample")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.r_[0, np.cumsum(y)[last]]
    fp = np.r_[0, np.cumsum(1 - y)[last]]
    thresholds = np.r_[np.inf, s[last]]
    # twice the area in integer units, then one division
    twice_area = int(((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])).sum())
    auc = twice_area / (2 * n_pos * n_neg)
    roc = [RocPoint(float(f / n_neg), float(t / n_pos), float(th)) for f, t, th in zip(fp, tp, thresholds)]
    return roc, auc


def evaluate(model: BcfplModel, manifest: Manifest, k: int = MODEL_SIDE,
             batch_size: int = DEFAULT_BATCH_SIZE, cache: dict | None = None) -> EvalReport:
    scored = predict_scores(model, manifest, k, batch_size, cache)
    conf = confusion_of(scored)
    try:
        roc, auc = roc_auc(scored)
    except DegenerateInputError:
        roc, auc = [], None
    return EvalReport(len(scored), (conf.tp + conf.tn) / conf.n, auc, conf, roc, manifest.name, k)


def write_report(report: EvalReport, path) -> None:
    doc = asdict(report)
    doc["roc"] = [[p.fpr, p.tpr, None if math.isinf(p.threshold) else p.threshold] for p in report.roc]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_report(path) -> EvalReport:
    with open(path) as fh:
        doc = json.load(fh)
    roc = [RocPoint(f, t, math.inf if th is None else th) for f, t, th in doc.pop("roc")]
    conf = Confusion(**doc.pop("confusion"))
    return EvalReport(confusion=conf, roc=roc, **doc)


def write_roc_csv(roc, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for p in roc:
            w.writerow([repr(float(p.threshold)), repr(float(p.fpr)), repr(float(p.tpr))])


def read_roc_csv(path) -> list[RocPoint]:
    with open(path, newline="") as fh:
        return [RocPoint(float(r["fpr"]), float(r["tpr"]), float(r["threshold"])) for r in csv.DictReader(fh)]


# --- resolution sweep ---------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    resolution: int
    dataset: str
    accuracy: float
    auc: float | None
    n: int


SWEEP_HEADER = ["resolution", "dataset", "accuracy", "auc", "n"]


def sweep_resolutions(base_config, train_manifest: Manifest, eval_manifests: dict,
                      ladder=LADDER, on_row=None) -> list[SweepRow]:
    """Train from scratch at each ladder side ``k`` and evaluate every set at ``k``."""
    from .train import train_run

    if not eval_manifests:
        raise DomainError("sweep needs at least one evaluation manifest")
    rows = []
    for k in ladder:
        config = base_config.replace(k=int(k))
        log.info("sweep: training at %dx%d", k, k)
        try:
            model = train_run(config, train_manifest).model
            for name, manifest in eval_manifests.items():
                rep = evaluate(model, manifest, k, config.batch_size)
                row = SweepRow(int(k), name, rep.accuracy, rep.auc, rep.n)
                rows.append(row)
                if on_row is not None:
                    on_row(row)
        except BcfplError as exc:
            raise SweepError(f"sweep cell k={k}: {exc}") from exc
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([r.resolution, r.dataset, repr(float(r.accuracy)),
                        "" if r.auc is None else repr(float(r.auc)), r.n])


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        return [
            SweepRow(int(r["resolution"]), r["dataset"], float(r["accuracy"]),
                     float(r["auc"]) if r["auc"] else None, int(r["n"]))
            for r in csv.DictReader(fh)
        ]


# --- throughput -----------------------------------------------------------------

@dataclass
class BenchResult:
    n_images: int
    batch_size: int
    images_per_second: float
    std_images_per_second: float
    seconds: list[float]

    @property
    def mean_seconds(self) -> float:
        return float(np.mean(self.seconds))


def bench_throughput(model: BcfplModel, n_images: int, batch_size: int = DEFAULT_BATCH_SIZE,
                     repeats: int = 3, fill: float | None = None, seed: int = 0) -> BenchResult:
    """Time infer-mode forward passes over in-memory batches.

    One untimed warm-up pass precedes ``repeats`` timed passes over all
    ``n_images``. Decoding and disk I/O are excluded.
    """
    if n_images < batch_size:
        raise DomainError("n_images must be at least batch_size")
    if repeats < 1:
        raise DomainError("repeats must be positive")
    if fill is None:
        batch = np.random.default_rng(seed).random((batch_size, 3, MODEL_SIDE, MODEL_SIDE), dtype=np.float32)
    else:
        batch = np.full((batch_size, 3, MODEL_SIDE, MODEL_SIDE), fill, dtype=np.float32)
    sizes = [batch_size] * (n_images // batch_size)
    if n_images % batch_size:
        sizes.append(n_images % batch_size)

    def one_pass():
        for size in sizes:
            logits, _ = model.forward(batch[:size], "infer")
        return logits

    one_pass()
    seconds = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        one_pass()
        seconds.append(time.perf_counter() - t0)
    rates = n_images / np.array(seconds)
    return BenchResult(n_images, batch_size, float(rates.mean()), float(rates.std()), seconds)
