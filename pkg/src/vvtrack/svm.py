"""Cubic-kernel SVM trained by SMO, one-vs-one multiclass, CV evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SvmError(Exception):
    pass


def cubic_kernel(x: np.ndarray, y: np.ndarray, c: float = 1.0) -> float:
    """Degree-3 polynomial kernel (x.y + c)^3 with offset c >= 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise SvmError(f"dimension mismatch {x.shape} vs {y.shape}")
    if c < 0:
        raise SvmError("kernel offset c must be >= 0")
    return float((x @ y + c) ** 3)


def gram_matrix(xs: np.ndarray, ys: np.ndarray | None = None, c: float = 1.0):
    xs = np.asarray(xs, dtype=np.float64)
    ys = xs if ys is None else np.asarray(ys, dtype=np.float64)
    return (xs @ ys.T + c) ** 3


@dataclass
class BinaryMachine:
    """One trained binary SVM: support vectors, dual coefficients alpha*y, bias."""

    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    C: float
    c_offset: float

    def decision(self, x: np.ndarray) -> float:
        k = gram_matrix(self.support_vectors, np.atleast_2d(x), self.c_offset)[:, 0]
        return float(self.dual_coef @ k + self.bias)


def _smo(x: np.ndarray, y: np.ndarray, C: float, c_offset: float, tol: float,
         max_passes: int, rng: np.random.Generator) -> BinaryMachine:
    """Simplified SMO: scan for KKT violators, random seeded partner choice.

    The dual objective is asserted non-decreasing after every accepted
    pair update; stops after three consecutive clean passes.
    """
    n = len(y)
    K = gram_matrix(x, c=c_offset)
    alpha = np.zeros(n)
    b = 0.0

    def dual_objective():
        ay = alpha * y
        return alpha.sum() - 0.5 * ay @ K @ ay

    obj = dual_objective()
    clean_passes = 0
    for n_pass in range(1, max_passes + 1):
        changed = 0
        for i in range(n):
            e_i = (alpha * y) @ K[:, i] + b - y[i]
            if not ((y[i] * e_i < -tol and alpha[i] < C)
                    or (y[i] * e_i > tol and alpha[i] > 0)):
                continue
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            e_j = (alpha * y) @ K[:, j] + b - y[j]
            a_i_old, a_j_old = alpha[i], alpha[j]
            if y[i] != y[j]:
                lo = max(0.0, a_j_old - a_i_old)
                hi = min(C, C + a_j_old - a_i_old)
            else:
                lo = max(0.0, a_i_old + a_j_old - C)
                hi = min(C, a_i_old + a_j_old)
            if lo >= hi:
                continue
            eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
            if eta >= 0:
                continue
            a_j = a_j_old - y[j] * (e_i - e_j) / eta
            a_j = min(hi, max(lo, a_j))
            if abs(a_j - a_j_old) < 1e-7:
                continue
            a_i = a_i_old + y[i] * y[j] * (a_j_old - a_j)
            alpha[i], alpha[j] = a_i, a_j
            b1 = (b - e_i - y[i] * (a_i - a_i_old) * K[i, i]
                  - y[j] * (a_j - a_j_old) * K[i, j])
            b2 = (b - e_j - y[i] * (a_i - a_i_old) * K[i, j]
                  - y[j] * (a_j - a_j_old) * K[j, j])
            if 0 < a_i < C:
                b = b1
            elif 0 < a_j < C:
                b = b2
            else:
                b = 0.5 * (b1 + b2)
            new_obj = dual_objective()
            assert new_obj >= obj - 1e-8, "SMO dual objective decreased"
            obj = new_obj
            changed += 1
        if changed == 0:
            clean_passes += 1
            if clean_passes >= 3:
                break
        else:
            clean_passes = 0
    else:
        raise SvmError(f"SMO did not converge within {max_passes} passes")

    if not (alpha.min() >= -1e-9 and alpha.max() <= C + 1e-9):
        raise SvmError("box constraint violated after training")
    if abs((alpha * y).sum()) > 1e-8:
        raise SvmError("sum alpha_i y_i != 0 after training")
    sv = alpha > 1e-8
    return BinaryMachine(support_vectors=x[sv].copy(), dual_coef=(alpha * y)[sv],
                         bias=b, C=C, c_offset=c_offset)


@dataclass
class SvmModel:
    """One-vs-one multiclass model; machine (i, j) scores class i positive."""

    classes: list
    machines: dict = field(default_factory=dict)  # (i, j) -> BinaryMachine
    C: float = 1.0
    c_offset: float = 1.0


def train_svm(samples, labels, C: float = 1.0, c_offset: float = 1.0,
              seed: int = 0, tol: float = 1e-3, max_passes: int = 10000) -> SvmModel:
    """Train one-vs-one cubic-kernel machines over all class pairs."""
    x = np.asarray(samples, dtype=np.float64)
    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise SvmError("need at least two classes")
    model = SvmModel(classes=classes, C=C, c_offset=c_offset)
    rng = np.random.default_rng(seed)
    idx_by_class = {cl: [i for i, l in enumerate(labels) if l == cl]
                    for cl in classes}
    for a in range(len(classes)):
        for bcl in range(a + 1, len(classes)):
            ia = idx_by_class[classes[a]]
            ib = idx_by_class[classes[bcl]]
            xs = x[ia + ib]
            ys = np.concatenate([np.ones(len(ia)), -np.ones(len(ib))])
            model.machines[(a, bcl)] = _smo(xs, ys, C, c_offset, tol,
                                            max_passes, rng)
    return model


def predict(model: SvmModel, x) -> tuple:
    """Majority vote over pairs; ties by summed margin, then class index.

    Returns (label, per-class vote scores).
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(model.classes)
    votes = np.zeros(n)
    margins = np.zeros(n)
    for (a, b), machine in model.machines.items():
        f = machine.decision(x)
        if f >= 0:
            votes[a] += 1
        else:
            votes[b] += 1
        margins[a] += f
        margins[b] -= f
    order = sorted(range(n), key=lambda i: (-votes[i], -margins[i], i))
    return model.classes[order[0]], votes


def class_scores(model: SvmModel, x) -> np.ndarray:
    """Summed signed pairwise margins per class (one-vs-rest proxy score)."""
    x = np.asarray(x, dtype=np.float64)
    scores = np.zeros(len(model.classes))
    for (a, b), machine in model.machines.items():
        f = machine.decision(x)
        scores[a] += f
        scores[b] -= f
    return scores


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    classes: list
    confusion: np.ndarray
    accuracy: float
    roc: dict  # class -> list of (fpr, tpr)
    auc: dict  # class -> float


def roc_curve(scores: np.ndarray, positives: np.ndarray):
    """Monotone staircase from (0, 0) to (1, 1), scores descending."""
    order = np.argsort(-scores, kind="stable")
    pos = positives[order]
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    points = [(0.0, 0.0)]
    tp = fp = 0
    for p in pos:
        if p:
            tp += 1
        else:
            fp += 1
        points.append((fp / max(n_neg, 1), tp / max(n_pos, 1)))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * 0.5 * (y0 + y1)
    return points, auc


def stratified_folds(labels, n_folds: int, seed: int) -> list[int]:
    """Seeded fold index per sample, round-robin within each class."""
    rng = np.random.default_rng(seed)
    fold = [0] * len(labels)
    for cl in sorted(set(labels)):
        idx = [i for i, l in enumerate(labels) if l == cl]
        if len(idx) < n_folds:
            raise SvmError(f"class {cl!r} has fewer samples than folds")
        perm = rng.permutation(len(idx))
        for pos, p in enumerate(perm):
            fold[idx[p]] = pos % n_folds
    return fold


def cross_validate(samples, labels, n_folds: int = 5, seed: int = 0,
                   C: float = 1.0, c_offset: float = 1.0) -> EvalReport:
    """Stratified k-fold CV: confusion over held-out folds, per-class ROC."""
    if n_folds < 2:
        raise SvmError("need at least two folds")
    x = np.asarray(samples, dtype=np.float64)
    labels = list(labels)
    classes = sorted(set(labels))
    folds = stratified_folds(labels, n_folds, seed)
    n_cl = len(classes)
    cindex = {cl: i for i, cl in enumerate(classes)}
    confusion = np.zeros((n_cl, n_cl), dtype=int)
    all_scores = []
    all_true = []
    for f in range(n_folds):
        train_idx = [i for i in range(len(labels)) if folds[i] != f]
        test_idx = [i for i in range(len(labels)) if folds[i] == f]
        model = train_svm(x[train_idx], [labels[i] for i in train_idx],
                          C=C, c_offset=c_offset, seed=seed + f)
        for i in test_idx:
            label, _ = predict(model, x[i])
            confusion[cindex[labels[i]], cindex[label]] += 1
            all_scores.append(class_scores(model, x[i]))
            all_true.append(cindex[labels[i]])
    all_scores = np.asarray(all_scores)
    all_true = np.asarray(all_true)
    roc = {}
    auc = {}
    for cl in classes:
        ci = cindex[cl]
        points, a = roc_curve(all_scores[:, ci], all_true == ci)
        roc[cl] = points
        auc[cl] = a
    accuracy = float(np.trace(confusion)) / max(confusion.sum(), 1)
    return EvalReport(classes=classes, confusion=confusion, accuracy=accuracy,
                      roc=roc, auc=auc)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_model(path, model: SvmModel) -> None:
    with open(path, "w") as fh:
        fh.write("vvtrack-svm v1\n")
        fh.write(" ".join(str(c) for c in model.classes) + "\n")
        fh.write(f"{float(model.C)!r} {float(model.c_offset)!r} "
                 f"{len(model.machines)}\n")
        for (a, b), m in sorted(model.machines.items()):
            n, dim = m.support_vectors.shape
            fh.write(f"{a} {b} {n} {dim} {float(m.bias)!r}\n")
            fh.write(" ".join(repr(float(v)) for v in m.dual_coef) + "\n")
            for row in m.support_vectors:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_model(path) -> SvmModel:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "vvtrack-svm v1":
            raise SvmError(f"bad model header {header!r}")
        classes = fh.readline().split()
        C, c_offset, n_machines = fh.readline().split()
        model = SvmModel(classes=classes, C=float(C), c_offset=float(c_offset))
        for _ in range(int(n_machines)):
            a, b, n, dim, bias = fh.readline().split()
            coef = np.asarray([float(t) for t in fh.readline().split()])
            svs = np.asarray([[float(t) for t in fh.readline().split()]
                              for _ in range(int(n))])
            model.machines[(int(a), int(b))] = BinaryMachine(
                support_vectors=svs.reshape(int(n), int(dim)),
                dual_coef=coef, bias=float(bias), C=float(C),
                c_offset=float(c_offset))
    return model
