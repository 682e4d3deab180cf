"""RBF-SVM baseline: raw-pixel features, exhaustive (C, gamma) grid search
with deterministic stratified cross-validation, training and prediction.

Feature representation is the standardized 32x32 RGB image flattened
row-major with interleaved channels (3,072 values in [0, 1]), keeping this
a genuine pixel-space baseline. The quadratic-program solver is libsvm via
scikit-learn; the persisted model carries support vectors, dual
coefficients and intercept, and prediction evaluates that record directly,
so a saved model is self-contained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.svm import SVC

from .dataset import LabeledImage
from .metrics import CLASS_NAMES
from .preprocess import SVM_FEATURE_PROFILE, PreprocessProfile, standardize

DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_GRID = (0.001, 0.01, 0.1, 1.0)
DEFAULT_FOLDS = 5


@dataclass(frozen=True)
class SvmHyperParams:
    C: float  # misclassification penalty
    gamma: float  # RBF kernel width

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def featurize(image: LabeledImage | np.ndarray, profile: PreprocessProfile = SVM_FEATURE_PROFILE) -> np.ndarray:
    """Flatten the standardized image row-major, RGB interleaved."""
    return standardize(image, profile).reshape(-1)


def featurize_corpus(
    images: list[LabeledImage], profile: PreprocessProfile = SVM_FEATURE_PROFILE
) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([featurize(im, profile) for im in images])
    y = np.array([im.label for im in images], dtype=np.int64)
    return x, y


def kfold_indices(labels: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    """Stratified fold assignment: per class, shuffle then deal round-robin.
    Every sample lands in exactly one fold."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        assignment[idx] = np.arange(len(idx)) % folds
    return [np.flatnonzero(assignment == k) for k in range(folds)]


@dataclass
class GridSearchResult:
    best: SvmHyperParams
    scores: list[tuple[float, float, float]]  # (C, gamma, mean CV accuracy)
    folds: int

    def score_for(self, c: float, gamma: float) -> float:
        for row in self.scores:
            if row[0] == c and row[1] == gamma:
                return row[2]
        raise KeyError((c, gamma))

    def save_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("C,gamma,fold_mean_accuracy\n")
            for c, gamma, acc in self.scores:
                f.write(f"{c!r},{gamma!r},{acc!r}\n")


def grid_search(
    features: np.ndarray,
    labels: np.ndarray,
    c_grid=DEFAULT_C_GRID,
    gamma_grid=DEFAULT_GAMMA_GRID,
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
) -> GridSearchResult:
    """Exhaustive cross-validated accuracy over every (C, gamma) pair.

    The winner maximizes mean fold accuracy; ties break toward the lowest C
    then the lowest gamma (prefer the less flexible model), so the result
    is invariant to grid ordering.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(c_grid) == 0 or len(gamma_grid) == 0:
        raise ValueError("the hyperparameter grid is empty")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ValueError("grid search needs samples from both classes")
    if counts.min() < folds:
        raise ValueError(
            f"need at least {folds} samples per class for {folds}-fold CV, got {counts.min()}"
        )

    fold_idx = kfold_indices(labels, folds, seed)
    all_idx = np.arange(len(labels))
    scores: list[tuple[float, float, float]] = []
    for c in c_grid:
        for gamma in gamma_grid:
            accs = []
            for held in fold_idx:
                train_mask = np.ones(len(labels), dtype=bool)
                train_mask[held] = False
                tr = all_idx[train_mask]
                clf = SVC(C=c, gamma=gamma, kernel="rbf", tol=1e-3)
                clf.fit(features[tr], labels[tr])
                accs.append(float(np.mean(clf.predict(features[held]) == labels[held])))
            scores.append((float(c), float(gamma), float(np.mean(accs))))

    best_row = max(scores, key=lambda row: (row[2], -row[0], -row[1]))
    return GridSearchResult(best=SvmHyperParams(C=best_row[0], gamma=best_row[1]), scores=scores, folds=folds)


@dataclass
class SvmModel:
    """Self-describing RBF-SVM record. The decision function is evaluated
    from this record directly:

        f(x) = sum_i dual_i * exp(-gamma * ||sv_i - x||^2) + intercept

    with f > 0 predicting parasitized (class 1) and f == 0 falling to
    uninfected.
    """

    params: SvmHyperParams
    support_vectors: np.ndarray  # (n_sv, n_features)
    dual_coef: np.ndarray  # (n_sv,)
    intercept: float
    profile: PreprocessProfile
    class_names: tuple[str, str] = CLASS_NAMES

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.n_features:
            raise ValueError(
                f"feature length {features.shape[1]} does not match training length {self.n_features}"
            )
        sq = (
            np.sum(features**2, axis=1)[:, None]
            + np.sum(self.support_vectors**2, axis=1)[None, :]
            - 2.0 * features @ self.support_vectors.T
        )
        kernel = np.exp(-self.params.gamma * np.maximum(sq, 0.0))
        return kernel @ self.dual_coef + self.intercept

    def save(self, path) -> None:
        path = Path(path)
        meta = {
            "kind": "rbf-svm",
            "params": {"C": self.params.C, "gamma": self.params.gamma},
            "intercept": self.intercept,
            "profile": self.profile.to_json(),
            "class_names": list(self.class_names),
        }
        np.savez_compressed(
            path,
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
            support_vectors=self.support_vectors,
            dual_coef=self.dual_coef,
        )

    @classmethod
    def load(cls, path) -> "SvmModel":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("kind") != "rbf-svm":
                raise ValueError(f"{path} is not an rbf-svm model record")
            return cls(
                params=SvmHyperParams(**meta["params"]),
                support_vectors=data["support_vectors"],
                dual_coef=data["dual_coef"],
                intercept=meta["intercept"],
                profile=PreprocessProfile.from_json(meta["profile"]),
                class_names=tuple(meta["class_names"]),
            )


def train_svm(
    features: np.ndarray,
    labels: np.ndarray,
    params: SvmHyperParams,
    profile: PreprocessProfile = SVM_FEATURE_PROFILE,
) -> SvmModel:
    """Fit the dual problem and extract the support-vector record."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ValueError("training data must contain both classes")
    clf = SVC(C=params.C, gamma=params.gamma, kernel="rbf", tol=1e-3)
    clf.fit(features, labels)
    return SvmModel(
        params=params,
        support_vectors=clf.support_vectors_.copy(),
        dual_coef=clf.dual_coef_[0].copy(),
        intercept=float(clf.intercept_[0]),
        profile=profile,
    )


def predict_svm(model: SvmModel, features: np.ndarray):
    """Label and signed margin (positive means parasitized). A single
    feature vector yields scalars; a matrix yields aligned arrays."""
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    scores = model.decision_scores(features)
    labels = (scores > 0).astype(np.int64)
    if single:
        return int(labels[0]), float(scores[0])
    return labels, scores
