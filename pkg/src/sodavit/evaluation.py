"""Time-ordered 5-fold CV, leave-one-subject-out, and classification metrics.

Folds and LOSO splits are made over recordings; segmentation happens after
the split so windows cut from one recording never straddle train and test.
Accuracy is scored per segment.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import DEFAULT_TAXONOMY, LabelTaxonomy, SensorSample, segment_all, to_arrays
from .errors import ContractError
from .model import ModelConfig, ViTModel, predict
from .training import TrainConfig, train

log = logging.getLogger(__name__)

NUM_FOLDS = 5

# reference values reported for the original recordings (not reproducible here)
REFERENCE_CV_FOLDS_MS8 = (0.914, 0.956, 0.970, 0.976, 0.920)
REFERENCE_CV_MEAN_MS8 = 0.947
REFERENCE_SUBJECT_MEAN_MS8 = 0.948
REFERENCE_LOSO_MEAN = {"vit-es/8": 0.779, "vit-ms/8": 0.755, "vit-s/8": 0.739}
REFERENCE_ALERT_RATES = {"success_alert": 0.982, "success_silence": 0.978, "miss": 0.018, "false_alarm": 0.022}


# --- fold plans ----------------------------------------------------------------


def split_runs(r: int, k: int = NUM_FOLDS) -> list:
    """Sizes of ``k`` contiguous runs over ``r`` items: the first ``r % k`` get one extra.

    With ``r < k`` the trailing runs are empty, i.e. repeats go to the
    groups in time order one by one.
    """
    base, extra = divmod(r, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


@dataclass
class FoldPlan:
    groups: dict  # sample key -> group index 0..4

    def members(self, k: int) -> set:
        return {key for key, g in self.groups.items() if g == k}

    def split(self, samples: Sequence[SensorSample], k: int):
        test = [s for s in samples if self.groups[s.key] == k]
        train_ = [s for s in samples if self.groups[s.key] != k]
        return train_, test


def make_folds(samples: Sequence[SensorSample], k: int = NUM_FOLDS) -> FoldPlan:
    if not samples:
        raise ContractError("cannot build folds over an empty corpus")
    by_cell = defaultdict(list)
    for s in samples:
        by_cell[(s.subject_id, s.activity_id)].append(s)
    groups = {}
    for cell, members in sorted(by_cell.items()):
        members.sort(key=lambda s: s.repeat_idx)
        if len(members) < k:
            log.warning("subject %d activity %d has %d repeats (< %d); trailing groups get none", *cell, len(members), k)
        pos = 0
        for g, size in enumerate(split_runs(len(members), k)):
            for s in members[pos : pos + size]:
                groups[s.key] = g
            pos += size
    return FoldPlan(groups)


# --- metrics -------------------------------------------------------------------


def confusion_matrix(y_true, y_pred, num_classes: int = 18) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def accuracy_from_cm(cm: np.ndarray) -> float:
    total = int(cm.sum())
    return int(np.trace(cm)) / total if total else math.nan


def macro_prf(cm: np.ndarray):
    """Macro precision, recall and F1 over classes present in truth or predictions.

    A class with no predictions has precision 0; F1 is 0 where P + R = 0.
    """
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0).astype(np.float64)
    true = cm.sum(axis=1).astype(np.float64)
    present = (pred + true) > 0
    if not present.any():
        return math.nan, math.nan, math.nan
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(pred > 0, tp / pred, 0.0)
        r = np.where(true > 0, tp / true, 0.0)
        f = np.where(p + r > 0, 2 * p * r / (p + r), 0.0)
    return float(p[present].mean()), float(r[present].mean()), float(f[present].mean())


@dataclass
class SubjectAccuracy:
    subject_id: int
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


def subject_accuracy(predictions, ground_truth, subject_ids) -> dict:
    """Per-subject share of correct predictions, keyed by subject id."""
    p = np.asarray(predictions)
    g = np.asarray(ground_truth)
    s = np.asarray(subject_ids)
    if not (p.shape == g.shape == s.shape):
        raise ContractError("predictions, ground truth and subject ids must align")
    out = {}
    for subj in np.unique(s):
        mask = s == subj
        n = int(mask.sum())
        if n == 0:
            log.warning("subject %s has no samples; excluded", subj)
            continue
        out[int(subj)] = SubjectAccuracy(int(subj), int((p[mask] == g[mask]).sum()), n)
    return out


def weighted_accuracy(subjects: dict) -> float:
    """Overall accuracy recomposed from per-subject accuracies and sample counts.

    ``accuracy * total`` is rounded back to the integer count it stands for;
    summing the raw float products can land one ulp away from ``correct / N``.
    """
    n = sum(sa.total for sa in subjects.values())
    return sum(round(sa.accuracy * sa.total) for sa in subjects.values()) / n


@dataclass
class AlertRates:
    """Alert-level outcome rates; ``None`` where the conditioning class is empty.

    miss        = true alert-class window predicted silent
    false_alarm = true silent-class window predicted alert
    """

    success_alert: Optional[float]
    miss: Optional[float]
    success_silence: Optional[float]
    false_alarm: Optional[float]
    counts: tuple = (0, 0, 0, 0)  # (alert->alert, alert->silent, silent->silent, silent->alert)

    def as_tuple(self):
        return (self.success_alert, self.miss, self.success_silence, self.false_alarm)


def alert_metrics(cm: np.ndarray, taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY) -> AlertRates:
    cm = np.asarray(cm)
    n = taxonomy.num_classes
    if cm.shape != (n, n):
        raise ContractError(f"confusion matrix must be {n}x{n}, got {cm.shape}")
    is_alert = np.array([taxonomy.is_alert(i) for i in range(n)])
    aa = int(cm[np.ix_(is_alert, is_alert)].sum())
    as_ = int(cm[np.ix_(is_alert, ~is_alert)].sum())
    ss = int(cm[np.ix_(~is_alert, ~is_alert)].sum())
    sa = int(cm[np.ix_(~is_alert, is_alert)].sum())
    na, ns = aa + as_, ss + sa
    if na == 0:
        log.warning("no true alert-class samples; alert rates undefined")
    if ns == 0:
        log.warning("no true silent-class samples; silence rates undefined")
    return AlertRates(
        success_alert=aa / na if na else None,
        miss=as_ / na if na else None,
        success_silence=ss / ns if ns else None,
        false_alarm=sa / ns if ns else None,
        counts=(aa, as_, ss, sa),
    )


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray
    subjects: dict
    alert: AlertRates
    n_test: int

    @classmethod
    def from_predictions(cls, y_true, y_pred, subject_ids, taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY):
        cm = confusion_matrix(y_true, y_pred, taxonomy.num_classes)
        p, r, f = macro_prf(cm)
        return cls(
            accuracy=accuracy_from_cm(cm),
            precision=p,
            recall=r,
            f1=f,
            confusion=cm,
            subjects=subject_accuracy(y_pred, y_true, subject_ids),
            alert=alert_metrics(cm, taxonomy),
            n_test=int(cm.sum()),
        )

    def to_text(self, title: str = "") -> str:
        def fmt(x):
            return "undefined" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"

        lines = [title] if title else []
        lines += [
            f"test segments   {self.n_test}",
            f"accuracy        {fmt(self.accuracy)}",
            f"macro precision {fmt(self.precision)}",
            f"macro recall    {fmt(self.recall)}",
            f"macro F1        {fmt(self.f1)}",
            f"success alert   {fmt(self.alert.success_alert)}",
            f"miss            {fmt(self.alert.miss)}",
            f"success silence {fmt(self.alert.success_silence)}",
            f"false alarm     {fmt(self.alert.false_alarm)}",
        ]
        for sid, sa in sorted(self.subjects.items()):
            lines.append(f"subject {sid:<7d} {fmt(sa.accuracy)} ({sa.correct}/{sa.total})")
        return "\n".join(lines) + "\n"


def confusion_csv(cm: np.ndarray, taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + list(taxonomy.labels))
    for i, row in enumerate(cm):
        w.writerow([taxonomy.labels[i]] + [int(v) for v in row])
    return buf.getvalue()


# --- protocols -----------------------------------------------------------------


@dataclass
class RunResult:
    """One train/test split: which recordings went where, plus the test report."""

    name: str
    report: EvalReport
    train_keys: set
    test_keys: set
    history: object = None
    model: Optional[ViTModel] = None


@dataclass
class ProtocolResult:
    runs: list = field(default_factory=list)

    @property
    def accuracies(self) -> list:
        return [r.report.accuracy for r in self.runs]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    def table(self) -> str:
        """CSV, one row per run, plus a mean row."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "n_test", "accuracy", "precision", "recall", "f1"])
        for r in self.runs:
            rep = r.report
            w.writerow([r.name, rep.n_test, f"{rep.accuracy:.6f}", f"{rep.precision:.6f}", f"{rep.recall:.6f}", f"{rep.f1:.6f}"])
        w.writerow(["mean", "", f"{self.mean_accuracy:.6f}", "", "", ""])
        return buf.getvalue()

    def pooled(self, taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY) -> EvalReport:
        cm = sum(r.report.confusion for r in self.runs)
        subjects = {}
        for r in self.runs:
            for sid, sa in r.report.subjects.items():
                prev = subjects.get(sid)
                subjects[sid] = sa if prev is None else SubjectAccuracy(sid, prev.correct + sa.correct, prev.total + sa.total)
        p, rc, f = macro_prf(cm)
        return EvalReport(accuracy_from_cm(cm), p, rc, f, cm, subjects, alert_metrics(cm, taxonomy), int(cm.sum()))


def _fit_and_score(name, train_samples, test_samples, model_cfg, train_cfg, init_seed, keep_model):
    X, y, _ = to_arrays(segment_all(train_samples))
    Xt, yt, st = to_arrays(segment_all(test_samples))
    if len(X) == 0:
        raise ContractError(f"{name}: no training segments")
    if len(Xt) == 0:
        raise ContractError(f"{name}: no test segments")
    model = ViTModel(model_cfg, np.random.default_rng(init_seed))
    model, history = train(model, (X, y), train_cfg)
    pred = predict(model, Xt).argmax(axis=1)
    report = EvalReport.from_predictions(yt, pred, st)
    log.info("%s: accuracy %.4f on %d segments", name, report.accuracy, len(Xt))
    return RunResult(
        name,
        report,
        {s.key for s in train_samples},
        {s.key for s in test_samples},
        history,
        model if keep_model else None,
    )


def cross_validate(samples, model_cfg: ModelConfig, train_cfg: TrainConfig, keep_models: bool = False) -> ProtocolResult:
    """Train on four groups, test on the fifth, for each of the five groups."""
    plan = make_folds(samples)
    result = ProtocolResult()
    for k in range(NUM_FOLDS):
        tr, te = plan.split(samples, k)
        result.runs.append(
            _fit_and_score(f"G{k + 1}", tr, te, model_cfg, train_cfg, [train_cfg.seed, 100 + k], keep_models)
        )
    return result


def loso_evaluate(samples, model_cfg: ModelConfig, train_cfg: TrainConfig, keep_models: bool = False) -> ProtocolResult:
    """Hold out each subject in turn; train on the rest."""
    subjects = sorted({s.subject_id for s in samples})
    if len(subjects) < 2:
        raise ContractError("leave-one-subject-out needs at least two subjects")
    result = ProtocolResult()
    for subj in subjects:
        tr = [s for s in samples if s.subject_id != subj]
        te = [s for s in samples if s.subject_id == subj]
        result.runs.append(
            _fit_and_score(f"subject{subj}", tr, te, model_cfg, train_cfg, [train_cfg.seed, 200 + subj], keep_models)
        )
    return result
