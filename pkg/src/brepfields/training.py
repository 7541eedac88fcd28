"""Training loops, embeddings, few-shot harness, and analysis tables.

Everything here is deterministic given (config, seed, dataset): part order
shuffles, head initializations, subset draws and bootstrap resamples all
run off dedicated seeded generators, and one part (all of its faces) is the
optimizer-step unit during pretraining.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (AdamState, Tape, adam_step, backward, grad_by_name,
                       lift)
from .brep import face_adjacency
from .checkpoint import Checkpoint, config_hash, load_checkpoint, save_checkpoint
from .corpus import FACE_CLASSES, FAMILIES, Dataset
from .decoder import (decode, decode_np, eval_metrics, field_loss,
                      init_decoder_params)
from .encoder import CODE_DIM, GraphIndex, encode, featurize, init_encoder_params
from .heads import (cls_forward, cross_entropy, init_cls_params,
                    init_mlp_params, init_seg_params, mlp_forward, predict,
                    seg_forward)

TASKS = ("seg", "cls", "mlp")


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_parts: int = 1
    epochs: int = 60
    seed: int = 0
    val_fraction: float = 0.2
    hidden: int = 256
    lam: float = 1.0
    eval_every: int = 1
    patience: int = 20
    head_epochs: int = 400
    head_patience: int = 40
    pool: str = "max"
    threads: int = 1

    def to_doc(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_doc(doc: dict) -> "TrainConfig":
        known = set(TrainConfig().to_doc())
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return TrainConfig(**doc)


@dataclass
class RunReport:
    loss_trace: list = field(default_factory=list)
    val_trace: list = field(default_factory=list)      # (step, loss)
    final_metrics: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    seed: int = 0
    config_hash: str = ""
    best_step: int = -1
    aborted: str | None = None

    def to_doc(self) -> dict:
        return {"loss_trace": self.loss_trace, "val_trace": self.val_trace,
                "final_metrics": self.final_metrics,
                "wall_clock": self.wall_clock, "seed": self.seed,
                "config_hash": self.config_hash, "best_step": self.best_step,
                "aborted": self.aborted}


def write_report(report: RunReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_doc(), indent=1,
                                     sort_keys=True) + "\n")


def assert_splits_disjoint(dataset: Dataset) -> None:
    seen = {}
    for split in ("train", "val", "test"):
        for i in dataset.split_indices(split):
            if i in seen:
                raise AssertionError(f"part {i} in both {seen[i]} and {split}")
            seen[i] = split


# -- per-part caches -----------------------------------------------------------

@dataclass
class PartCache:
    graph: GraphIndex
    vfeat: np.ndarray
    efeat: np.ndarray
    ffeat: np.ndarray
    face_ids: list            # sampled faces, ascending
    uv: np.ndarray            # (n_faces*500, 2)
    target: np.ndarray        # (n_faces*500, 4) xyz + d
    counts: np.ndarray        # samples per face


def build_part_cache(dataset: Dataset, pi: int) -> PartCache | None:
    part = dataset.parts[pi]
    psamples = dataset.samples[pi]
    feats = featurize(part.brep)
    graph = GraphIndex.from_brep(part.brep)
    face_ids = sorted(psamples)
    if not face_ids:
        return None
    uv = np.concatenate([psamples[fi].uv for fi in face_ids], axis=0)
    target = np.concatenate(
        [psamples[fi].samples[:, 2:6] for fi in face_ids], axis=0)
    counts = np.array([len(psamples[fi].samples) for fi in face_ids])
    return PartCache(graph, feats.vertex, feats.edge, feats.face,
                     face_ids, uv, target, counts)


def _part_field_loss(pt, cache: PartCache, lam: float):
    from .autodiff import gather_rows, repeat_rows

    tape = pt["dec.b1"].tape
    vfeat = tape.tensor(cache.vfeat)
    efeat = tape.tensor(cache.efeat)
    ffeat = tape.tensor(cache.ffeat)
    codes = encode(pt, cache.graph, vfeat, efeat, ffeat)
    code_rows = repeat_rows(gather_rows(codes, cache.face_ids), cache.counts)
    pred = decode(pt, code_rows, tape.tensor(cache.uv))
    return field_loss(pred, cache.target, lam=lam)


def init_model_params(config: TrainConfig) -> dict:
    params = init_encoder_params(config.seed)
    params.update(init_decoder_params(config.seed, hidden=config.hidden))
    return params


def pretrain(dataset: Dataset, config: TrainConfig,
             progress: bool = False) -> tuple[Checkpoint, RunReport]:
    """Joint encoder+decoder optimization over per-face field losses.

    One part per step (all of its sampled faces); Adam; the best-validation
    parameter set is what the returned checkpoint carries. A non-finite
    training loss aborts the run, returning the last good checkpoint.
    """
    t0 = time.monotonic()
    assert_splits_disjoint(dataset)
    params = init_model_params(config)
    adam = AdamState(lr=config.lr)
    report = RunReport(seed=config.seed,
                       config_hash=config_hash(config.to_doc()))

    caches = {pi: build_part_cache(dataset, pi)
              for pi in range(len(dataset.parts))}
    train_idx = [pi for pi in dataset.split_indices("train") if caches[pi]]
    val_idx = [pi for pi in dataset.split_indices("val") if caches[pi]]
    if not train_idx:
        raise ValueError("no trainable parts in the train split")

    order_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, 0x08DE8]))
    best = {k: v.copy() for k, v in params.items()}
    best_val = np.inf
    best_step = -1
    stale = 0
    step = 0
    stop = False

    for epoch in range(config.epochs):
        order = order_rng.permutation(len(train_idx))
        for pos in range(0, len(order), config.batch_parts):
            batch = [train_idx[i] for i in order[pos:pos + config.batch_parts]]
            tape = Tape()
            pt = lift(tape, params)
            losses = [_part_field_loss(pt, caches[pi], config.lam)
                      for pi in batch]
            loss = losses[0] if len(losses) == 1 else \
                sum(losses[1:], start=losses[0]) * (1.0 / len(losses))
            value = float(loss.value)
            if not np.isfinite(value):
                report.aborted = f"non-finite loss at step {step}"
                report.loss_trace.append(value)
                ck = Checkpoint(best, adam, config.to_doc())
                report.wall_clock = time.monotonic() - t0
                return ck, report
            backward(loss)
            adam_step(params, grad_by_name(tape), adam)
            report.loss_trace.append(value)
            step += 1

        if (epoch + 1) % config.eval_every == 0:
            val = validation_loss(params, caches, val_idx or train_idx,
                                  config.lam)
            report.val_trace.append([step, val])
            if val < best_val:
                best_val = val
                best = {k: v.copy() for k, v in params.items()}
                best_step = step
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    stop = True
        if progress:
            print(f"epoch {epoch + 1}/{config.epochs} "
                  f"loss {value:.3e} best_val {best_val:.3e}", flush=True)
        if stop:
            break

    report.best_step = best_step
    report.final_metrics = {"best_val_loss": best_val}
    report.wall_clock = time.monotonic() - t0
    return Checkpoint(best, adam, config.to_doc()), report


def validation_loss(params: dict, caches: dict, idx: list,
                    lam: float) -> float:
    total = 0.0
    for pi in idx:
        tape = Tape()
        pt = lift(tape, params)
        total += float(_part_field_loss(pt, caches[pi], lam).value)
    return total / max(1, len(idx))


def evaluate_model(params: dict, dataset: Dataset, split: str) -> dict:
    """xyz/sdf errors over every kept sample of every sampled face."""
    preds = []
    targets = []
    for pi in dataset.split_indices(split):
        cache = build_part_cache(dataset, pi)
        if cache is None:
            continue
        codes = _codes_np(params, cache)
        rows = np.repeat(codes[cache.face_ids], cache.counts, axis=0)
        preds.append(decode_np(params, rows, cache.uv))
        targets.append(cache.target)
    if not preds:
        return {"xyz_error": float("nan"), "sdf_error": float("nan")}
    return eval_metrics(np.concatenate(preds), np.concatenate(targets))


def _codes_np(params: dict, cache: PartCache) -> np.ndarray:
    tape = Tape()
    pt = lift(tape, params)
    return encode(pt, cache.graph, tape.tensor(cache.vfeat),
                  tape.tensor(cache.efeat), tape.tensor(cache.ffeat)).value


# -- embeddings -----------------------------------------------------------------

def embed_all(params: dict, dataset: Dataset) -> dict:
    """One 64-vector per face for every part (all splits)."""
    store = {}
    for pi, part in enumerate(dataset.parts):
        cache = build_part_cache(dataset, pi)
        if cache is None:
            feats = featurize(part.brep)
            graph = GraphIndex.from_brep(part.brep)
            cache = PartCache(graph, feats.vertex, feats.edge, feats.face,
                              [], np.zeros((0, 2)), np.zeros((0, 4)),
                              np.zeros(0, dtype=int))
        store[part.name] = _codes_np(params, cache)
    return store


def save_codes(store: dict, path) -> None:
    save_checkpoint(path, store, None, {"kind": "face_codes"})


def load_codes(path) -> dict:
    ck = load_checkpoint(path)
    if ck.config.get("kind") != "face_codes":
        raise ValueError(f"{path}: not a face-code store")
    return ck.params


def random_codes(dataset: Dataset, seed: int) -> dict:
    """Frozen random baseline codes, same shapes as a real store."""
    store = {}
    for pi, part in enumerate(dataset.parts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA5E, pi]))
        store[part.name] = rng.normal(size=(len(part.brep.faces), CODE_DIM))
    return store


# -- few-shot training -----------------------------------------------------------

@dataclass
class FewshotResult:
    task: str
    train_size: int
    seed: int
    accuracy: float
    head_params: dict
    train_parts: list
    val_parts: list


def sample_train_subset(dataset: Dataset, size: int, seed: int,
                        stratified: bool) -> tuple[list, list]:
    """Seeded subset of train-split parts plus a 20% validation carve-out.

    The draw depends only on (dataset, size, seed), so every head trained
    at the same point sees the same parts.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B5E7, size]))
    train = dataset.split_indices("train")
    size = min(size, len(train))
    if stratified:
        by_label: dict = {}
        for pi in train:
            by_label.setdefault(dataset.parts[pi].part_label, []).append(pi)
        chosen: list = []
        labels = sorted(by_label)
        for lab in labels:
            pool = by_label[lab]
            chosen.append(pool[rng.integers(len(pool))])
        remaining = sorted(set(train) - set(chosen))
        extra = max(0, size - len(chosen))
        if extra and remaining:
            chosen.extend(np.array(remaining)[
                rng.choice(len(remaining), min(extra, len(remaining)),
                           replace=False)].tolist())
        chosen = chosen[:max(size, len(labels))]
    else:
        chosen = np.array(train)[rng.choice(len(train), size,
                                            replace=False)].tolist()
    chosen = sorted(int(x) for x in chosen)
    n_val = max(1, int(round(0.2 * len(chosen))))
    val_pick = rng.choice(len(chosen), n_val, replace=False)
    val = sorted(chosen[i] for i in val_pick)
    tr = sorted(set(chosen) - set(val))
    if not tr:  # degenerate tiny subsets keep at least one training part
        tr, val = val, tr
    return tr, val


def _head_forward(task, pt, codes_t, graph_neighbors):
    if task == "seg":
        return seg_forward(pt, codes_t, graph_neighbors)
    if task == "mlp":
        return mlp_forward(pt, codes_t)
    raise ValueError(task)


class _NeighborCache(dict):
    def __init__(self, dataset: Dataset):
        super().__init__()
        self.dataset = dataset

    def __missing__(self, pi):
        self[pi] = face_adjacency(self.dataset.parts[pi].brep).neighbors
        return self[pi]


def _face_task_loss(task, pt, dataset, codes, parts, tape, n_classes, nbrs):
    total = None
    n = 0
    for pi in parts:
        part = dataset.parts[pi]
        codes_t = tape.tensor(codes[part.name])
        logits = _head_forward(task, pt, codes_t, nbrs[pi])
        ce = cross_entropy(logits, part.face_labels, n_classes)
        k = len(part.face_labels)
        piece = ce * float(k)
        total = piece if total is None else total + piece
        n += k
    return total * (1.0 / n)


def _cls_loss(pt, dataset, codes, parts, tape, n_classes, pool):
    total = None
    for pi in parts:
        part = dataset.parts[pi]
        logits = cls_forward(pt, tape.tensor(codes[part.name]), pool=pool)
        ce = cross_entropy(logits, [part.part_label], n_classes)
        total = ce if total is None else total + ce
    return total * (1.0 / len(parts))


def _task_loss(task, pt, dataset, codes, parts, tape, n_classes, pool, nbrs):
    if task == "cls":
        return _cls_loss(pt, dataset, codes, parts, tape, n_classes, pool)
    return _face_task_loss(task, pt, dataset, codes, parts, tape, n_classes,
                           nbrs)


def task_accuracy(task: str, head: dict, dataset: Dataset, codes: dict,
                  parts: list, pool: str = "max",
                  nbrs: dict | None = None) -> float:
    nbrs = nbrs if nbrs is not None else _NeighborCache(dataset)
    correct = 0
    total = 0
    for pi in parts:
        part = dataset.parts[pi]
        tape = Tape()
        pt = lift(tape, head)
        codes_t = tape.tensor(codes[part.name])
        if task == "cls":
            logits = cls_forward(pt, codes_t, pool=pool).value
            correct += int(predict(logits)[0] == part.part_label)
            total += 1
        else:
            logits = _head_forward(task, pt, codes_t, nbrs[pi]).value
            pred = predict(logits)
            correct += int((pred == np.asarray(part.face_labels)).sum())
            total += len(part.face_labels)
    return correct / max(1, total)


def train_fewshot(dataset: Dataset, codes: dict, task: str, train_size: int,
                  seed: int, config: TrainConfig | None = None
                  ) -> FewshotResult:
    """Train one head on a seeded train-split subset of parts; report test
    accuracy of the best-validation parameters."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    config = config or TrainConfig()
    n_classes = len(FAMILIES) if task == "cls" else len(FACE_CLASSES)
    tr, val = sample_train_subset(dataset, train_size, seed,
                                  stratified=(task == "cls"))
    init = {"seg": init_seg_params, "cls": init_cls_params,
            "mlp": init_mlp_params}[task]
    head = init(seed, n_classes)
    adam = AdamState(lr=config.lr)
    nbrs = _NeighborCache(dataset)

    best = {k: v.copy() for k, v in head.items()}
    best_val = np.inf
    stale = 0
    for epoch in range(config.head_epochs):
        tape = Tape()
        pt = lift(tape, head)
        loss = _task_loss(task, pt, dataset, codes, tr, tape, n_classes,
                          config.pool, nbrs)
        backward(loss)
        adam_step(head, grad_by_name(tape), adam)

        tape = Tape()
        pt = lift(tape, head)
        vloss = float(_task_loss(task, pt, dataset, codes, val or tr, tape,
                                 n_classes, config.pool, nbrs).value)
        if vloss < best_val - 1e-12:
            best_val = vloss
            best = {k: v.copy() for k, v in head.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.head_patience:
                break

    test = dataset.split_indices("test")
    acc = task_accuracy(task, best, dataset, codes, test, pool=config.pool,
                        nbrs=nbrs)
    return FewshotResult(task, train_size, seed, acc, best, tr, val)


def majority_baseline(dataset: Dataset, task: str) -> float:
    """Accuracy of always predicting the train split's most common label."""
    train = dataset.split_indices("train")
    test = dataset.split_indices("test")
    if task == "cls":
        labels = [dataset.parts[pi].part_label for pi in train]
        tests = [dataset.parts[pi].part_label for pi in test]
    else:
        labels = [l for pi in train for l in dataset.parts[pi].face_labels]
        tests = [l for pi in test for l in dataset.parts[pi].face_labels]
    top = np.bincount(labels).argmax()
    return float(np.mean(np.asarray(tests) == top))


# -- accuracy curves ---------------------------------------------------------------

@dataclass
class CurvePoint:
    train_size: int
    accuracies: list
    mean: float
    ci_lo: float
    ci_hi: float


def bootstrap_ci(values, n_resamples: int = 2000, seed: int = 0,
                 level: float = 0.95) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB007]))
    idx = rng.integers(0, len(values), size=(n_resamples, len(values)))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    return (float(np.quantile(means, alpha)),
            float(np.quantile(means, 1.0 - alpha)))


def accuracy_curve(dataset: Dataset, codes: dict, task: str, sizes: list,
                   n_seeds: int = 10, config: TrainConfig | None = None,
                   n_resamples: int = 2000) -> list:
    points = []
    for size in sizes:
        accs = [train_fewshot(dataset, codes, task, size, seed,
                              config).accuracy for seed in range(n_seeds)]
        lo, hi = bootstrap_ci(accs, n_resamples=n_resamples, seed=size)
        points.append(CurvePoint(size, accs, float(np.mean(accs)), lo, hi))
    return points


def write_curve_table(points: list, path) -> None:
    lines = ["size\tmean\tci_lo\tci_hi"]
    for p in points:
        lines.append(f"{p.train_size}\t{p.mean:.17g}\t{p.ci_lo:.17g}"
                     f"\t{p.ci_hi:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- rasterization-vs-segmentation analysis ------------------------------------------

def per_face_field_mse(params: dict, dataset: Dataset, parts: list) -> dict:
    """(part_name, face_id) -> rasterization mse (xyz + sdf, per sample)."""
    out = {}
    for pi in parts:
        cache = build_part_cache(dataset, pi)
        if cache is None:
            continue
        codes = _codes_np(params, cache)
        rows = np.repeat(codes[cache.face_ids], cache.counts, axis=0)
        pred = decode_np(params, rows, cache.uv)
        diff = pred - cache.target
        per_sample = (diff[:, 0:3] ** 2).sum(axis=1) + diff[:, 3] ** 2
        offsets = np.concatenate([[0], np.cumsum(cache.counts)])
        for k, fi in enumerate(cache.face_ids):
            mse = float(per_sample[offsets[k]:offsets[k + 1]].mean())
            out[(dataset.parts[pi].name, fi)] = mse
    return out


def raster_vs_seg(mse: np.ndarray, correct: np.ndarray,
                  n_bins: int = 10) -> dict:
    """Equal-count bins over log-mse with per-bin segmentation accuracy."""
    from scipy.stats import spearmanr

    order = np.argsort(mse, kind="stable")
    edges = np.linspace(0, len(mse), n_bins + 1).astype(int)
    rows = []
    accs = []
    for b in range(n_bins):
        sel = order[edges[b]:edges[b + 1]]
        if len(sel) == 0:
            continue
        acc = float(np.mean(correct[sel]))
        rows.append({"bin": b, "mse_lo": float(mse[sel].min()),
                     "mse_hi": float(mse[sel].max()), "accuracy": acc,
                     "count": int(len(sel))})
        accs.append(acc)
    if len(accs) > 1 and len(set(accs)) > 1:
        rho = float(spearmanr(np.arange(len(accs)), accs).statistic)
    else:
        rho = 0.0
    return {"bins": rows, "spearman_rho": rho}


def write_bins_table(table: dict, path) -> None:
    lines = ["bin\tmse_lo\tmse_hi\taccuracy\tcount"]
    for row in table["bins"]:
        lines.append(f"{row['bin']}\t{row['mse_lo']:.17g}\t"
                     f"{row['mse_hi']:.17g}\t{row['accuracy']:.17g}\t"
                     f"{row['count']}")
    lines.append(f"# spearman_rho\t{table['spearman_rho']:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")
