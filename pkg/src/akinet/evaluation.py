"""K-fold protocol, rank AUROC, threshold metrics, cross-validation and depth sweep."""
from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, apply_normalization, fit_normalization, smote_oversample
from .errors import AkiError, MetricUndefinedError, PartitionError
from .models import ArchitectureSpec, build_model, cnn_spec_for_depth, predict_matrix, train
from .optim import Hyperparams
from .seeding import derive_seed, rng_for

SWEEP_DEPTHS = (8, 12, 16, 18, 34)


@dataclass
class FoldAssignment:
    k: int
    assignment: np.ndarray
    seed: int
    stratified: bool

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.k).tolist()


def kfold_split(n: int, k: int = 5, seed: int = 0, stratified: bool = False, labels=None) -> FoldAssignment:
    """Seeded shuffle then partition.

    Plain mode cuts the shuffled order into contiguous blocks whose sizes
    differ by at most one. Stratified mode shuffles each class separately,
    concatenates them and deals positions round-robin, which keeps both fold
    sizes and per-fold class counts within one of each other.
    """
    if k < 2:
        raise PartitionError(f"k must be at least 2, got {k}")
    if n < k:
        raise PartitionError(f"cannot split {n} records into {k} folds")
    rng = rng_for(seed, "kfold", n, k, stratified)
    assignment = np.empty(n, dtype=np.int64)
    if stratified:
        if labels is None or len(labels) != n:
            raise PartitionError("stratified split needs one label per record")
        labels = np.asarray(labels)
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
        assignment[order] = np.arange(n) % k
    else:
        order = rng.permutation(n)
        sizes = np.full(k, n // k)
        sizes[: n % k] += 1
        assignment[order] = np.repeat(np.arange(k), sizes)
    return FoldAssignment(k, assignment, seed, stratified)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with midranks; tied pairs count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise MetricUndefinedError(f"{s.size} scores but {y.size} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise MetricUndefinedError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUROC needs at least one positive and one negative label")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # group boundaries of equal scores; midrank of a group spanning ranks [a, b] is (a + b) / 2
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    mid = (starts + 1 + ends) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(mid, ends - starts)
    # midranks are half-integers, so the sum is exact in double precision
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def threshold_metrics(scores, labels, threshold: float = 0.5) -> dict:
    """Accuracy, sensitivity and specificity; None where a denominator is zero."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))

    def ratio(a, b):
        return a / b if b else None

    return {
        "accuracy": ratio(tp + tn, tp + tn + fp + fn),
        "sensitivity": ratio(tp, tp + fn),
        "specificity": ratio(tn, tn + fp),
    }


@dataclass
class FoldResult:
    index: int
    auroc: float | None
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    n_train: int
    n_test: int
    diverged: bool = False
    collapsed: bool = False
    epoch_losses: list = field(default_factory=list)
    test_indices: np.ndarray | None = None
    scores: np.ndarray | None = None


@dataclass
class EvalReport:
    folds: list[FoldResult]
    spec: dict
    hyperparams: dict
    seed: int
    k: int
    stratified: bool
    per_fold_smote: bool
    timestamps: dict = field(default_factory=dict)

    @property
    def fold_aurocs(self) -> list[float]:
        return [f.auroc for f in self.folds if f.auroc is not None]

    @property
    def mean_auroc(self) -> float | None:
        a = self.fold_aurocs
        return float(np.mean(a)) if a else None

    @property
    def std_auroc(self) -> float | None:
        a = self.fold_aurocs
        return float(np.std(a)) if a else None

    @property
    def best_auroc(self) -> float | None:
        a = self.fold_aurocs
        return float(max(a)) if a else None

    def to_dict(self, include_timestamps: bool = True) -> dict:
        d = {
            "folds": [
                {
                    "index": f.index,
                    "auroc": f.auroc,
                    "accuracy": f.accuracy,
                    "sensitivity": f.sensitivity,
                    "specificity": f.specificity,
                    "n_train": f.n_train,
                    "n_test": f.n_test,
                    "diverged": f.diverged,
                    "epoch_losses": f.epoch_losses,
                }
                for f in self.folds
            ],
            "mean_auroc": self.mean_auroc,
            "std_auroc": self.std_auroc,
            "best_auroc": self.best_auroc,
            "spec": self.spec,
            "hyperparams": self.hyperparams,
            "seed": self.seed,
            "k": self.k,
            "stratified": self.stratified,
            "per_fold_smote": self.per_fold_smote,
        }
        if include_timestamps:
            d["timestamps"] = dict(self.timestamps)
        return d

    def to_json(self, include_timestamps: bool = True) -> str:
        return json.dumps(self.to_dict(include_timestamps), indent=2, sort_keys=True) + "\n"


def _run_fold(args):
    spec, dataset, h, seed, fold, train_idx, test_idx, per_fold_smote = args
    train_set = dataset.subset(train_idx)
    if per_fold_smote:
        train_set = smote_oversample(train_set, seed=derive_seed(seed, "fold-smote", fold))
    test_set = dataset.subset(test_idx)
    stats = fit_normalization(train_set, source=f"fold {fold} train")
    Xtr = apply_normalization(train_set, stats)
    Xte = apply_normalization(test_set, stats)
    model = build_model(spec, derive_seed(seed, "fold-init", fold))
    fold_h = Hyperparams(**{**h.to_dict(), "seed": derive_seed(seed, "fold-train", fold)})
    try:
        rep = train(model, Xtr, train_set.y, fold_h)
    except AkiError as e:
        raise type(e)(f"fold {fold}: {e}") from e
    yte = test_set.y
    if rep.diverged:
        return FoldResult(fold, None, None, None, None, len(Xtr), len(Xte), diverged=True,
                          epoch_losses=rep.epoch_losses, test_indices=np.asarray(test_idx))
    scores = predict_matrix(model, Xte)
    collapsed = bool(np.ptp(scores) == 0.0)
    try:
        a = auroc(scores, yte)
    except MetricUndefinedError:
        a = None
    m = threshold_metrics(scores, yte)
    return FoldResult(fold, a, m["accuracy"], m["sensitivity"], m["specificity"], len(Xtr), len(Xte),
                      collapsed=collapsed, epoch_losses=rep.epoch_losses,
                      test_indices=np.asarray(test_idx), scores=scores)


def cross_validate(spec: ArchitectureSpec, dataset: Dataset, h: Hyperparams, seed: int = 0, k: int = 5,
                   stratified: bool = False, per_fold_smote: bool = False, jobs: int = 1,
                   progress=None) -> EvalReport:
    """Train a fresh model per fold and score its held-out fold.

    Normalization is fitted on each training partition only. Folds get
    seeds derived from ``(seed, fold)``, so running them in parallel
    (``jobs > 1``) gives the same report as running them serially.
    """
    started = time.time()
    folds = kfold_split(len(dataset), k, seed, stratified, dataset.y)
    tasks = [
        (spec, dataset, h, seed, i, folds.train_indices(i), folds.test_indices(i), per_fold_smote)
        for i in range(k)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_fold, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_run_fold(t))
            if progress is not None:
                progress(results[-1])
    results.sort(key=lambda r: r.index)
    return EvalReport(
        results, spec.to_dict(), h.to_dict(), int(seed), k, stratified, per_fold_smote,
        timestamps={"started": started, "finished": time.time(), "elapsed_s": time.time() - started},
    )


@dataclass
class SweepCell:
    family: str
    depth: int
    mean_auroc: float | None
    std_auroc: float | None
    valid: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "depth": self.depth,
            "mean_auroc": self.mean_auroc,
            "std_auroc": self.std_auroc,
            "status": "ok" if self.valid else "invalid",
            "reason": self.reason,
        }


def _cell(report: EvalReport) -> SweepCell:
    spec = report.spec
    if any(f.diverged for f in report.folds):
        return SweepCell(spec["family"], spec["depth"], None, None, False, "training diverged")
    if all(f.collapsed for f in report.folds):
        return SweepCell(spec["family"], spec["depth"], report.mean_auroc, report.std_auroc, False,
                         "predictions collapsed to a constant in every fold")
    return SweepCell(spec["family"], spec["depth"], report.mean_auroc, report.std_auroc, True)


@dataclass
class SweepReport:
    cells: dict  # (depth, "mlp" | "cnn") -> SweepCell
    hyperparams: dict
    seed: int
    channel_scale: float
    timestamps: dict = field(default_factory=dict)

    def to_dict(self, include_timestamps: bool = True) -> dict:
        grid = {
            str(d): {col: self.cells[(d, col)].to_dict() for col in ("mlp", "cnn")}
            for d in sorted({d for d, _ in self.cells})
        }
        d = {"grid": grid, "hyperparams": self.hyperparams, "seed": self.seed,
             "channel_scale": self.channel_scale}
        if include_timestamps:
            d["timestamps"] = dict(self.timestamps)
        return d

    def to_json(self, include_timestamps: bool = True) -> str:
        return json.dumps(self.to_dict(include_timestamps), indent=2, sort_keys=True) + "\n"


def depth_sweep(dataset: Dataset, h: Hyperparams, seed: int = 0, k: int = 5, channel_scale: float = 1.0,
                depths=SWEEP_DEPTHS, stratified: bool = False, jobs: int = 1, progress=None) -> SweepReport:
    """Cross-validate MLP and CNN at each depth (VGG for 8/12/16, ResNet for 18/34).

    A cell is marked invalid when any fold's training diverged or when every
    fold's model predicts a constant.
    """
    started = time.time()
    L = dataset.schema.width
    cells = {}
    for d in depths:
        for col, spec in (("mlp", ArchitectureSpec("mlp", d, L)),
                          ("cnn", cnn_spec_for_depth(d, L, channel_scale))):
            rep = cross_validate(spec, dataset, h, seed, k, stratified, jobs=jobs)
            cells[(d, col)] = _cell(rep)
            if progress is not None:
                progress(cells[(d, col)])
    return SweepReport(cells, h.to_dict(), int(seed), channel_scale,
                       timestamps={"started": started, "finished": time.time()})


@dataclass(frozen=True)
class SweepBenchmark:
    """The standard nonlinear synthetic benchmark for the depth sweep.

    Every XOR pair carries the label and the linear shift is two latent
    standard deviations. The learning rate is ten times the default: plain
    MLPs stay trainable at depth 16 to 18 but a 34-layer stack breaks down,
    while the batch-normalized CNNs train normally.
    """

    n: int = 1000
    ratio: tuple = (1, 1)
    separation: float = 2.0
    nonlinear: float = 1.0
    seed: int = 0
    k: int = 5
    channel_scale: float = 0.125
    hyperparams: Hyperparams = Hyperparams(learning_rate=1e-2, epochs=5)

    def dataset(self) -> Dataset:
        from .data import MIMIC, synth_generate

        raw = synth_generate(MIMIC, self.n, self.ratio, self.separation, self.seed, self.nonlinear)
        return smote_oversample(raw, seed=self.seed)

    def run(self, jobs: int = 1, progress=None) -> SweepReport:
        h = Hyperparams(**{**self.hyperparams.to_dict(), "seed": self.seed})
        return depth_sweep(self.dataset(), h, self.seed, self.k, self.channel_scale, jobs=jobs, progress=progress)


def sweep_trend(report: SweepReport) -> dict:
    """The two depth-trend checks on a finished sweep.

    ``cnn_beats_mlp_at_34``: ResNet-34 mean AUROC above MLP-34 (an invalid
    MLP cell counts as beaten). ``mlp_degrades``: the MLP column is
    non-increasing over depths 16, 18, 34, or the depth-34 cell is invalid.
    """
    cells = report.cells
    mlp34, cnn34 = cells[(34, "mlp")], cells[(34, "cnn")]
    cnn_wins = cnn34.valid and (not mlp34.valid or cnn34.mean_auroc > mlp34.mean_auroc)
    col = [cells[(d, "mlp")].mean_auroc for d in (16, 18, 34)]
    degrades = (not mlp34.valid) or (None not in col and col[0] >= col[1] >= col[2])
    return {"cnn_beats_mlp_at_34": bool(cnn_wins), "mlp_degrades": bool(degrades)}
