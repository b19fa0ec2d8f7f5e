"""Training objective, alternating update loop, evaluation and diagnostics.

Two losses alternate per mini-batch. The supervised loss is the summed cross
entropy of the classification head. The alignment loss is

    L_a = L_c + lambda * L_d

where L_c sums KL(oracle target || causal head) over the unintervened
selections and L_d does the same over the K intervened selections. The
causal head reads node features tapped after layer ``m``, so L_a only ever
reaches layers 1..m and the causal head.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GRAPH_CLS, NODE_CLS, Dataset, Graph
from .models import GNN, GnnConfig, GraphBatch, NUM_COUNT_BUCKETS, layer_param_names, linear
from .oracle import INTERCHANGE, JUNCTION, RANDOM_NEGATIVE, CausalOracle, apply_selections

log = logging.getLogger(__name__)

DCSGL = "dcsgl"
BACKBONE_ONLY = "backbone_only"
DCSGL_T = "dcsgl_t"
DCSGL_A = "dcsgl_a"
DCS_ONLY_D = "dcs_only_d"
DCS_ONLY_L = "dcs_only_l"
MODES = (DCSGL, BACKBONE_ONLY, DCSGL_T, DCSGL_A, DCS_ONLY_D, DCS_ONLY_L)
ALIGNING_MODES = (DCSGL, DCSGL_T, DCSGL_A)

CSV_COLUMNS = ("epoch", "split", "loss_g", "loss_c", "loss_d", "loss_a", "accuracy", "alignment_cosine")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    m: int = 2
    K: int = 3
    lam: float = 1.0
    lr: float = 0.001
    lr_aux: Optional[float] = None
    optimizer: str = "adam"
    epochs: int = 200
    max_epochs: int = 400
    patience: int = 5
    batch_size: int = 32
    mode: str = DCSGL
    seed: int = 0
    schedule: str = "batch"
    domain: str = JUNCTION
    rho: float = 0.5
    eval_batch_size: int = 256

    def validate(self, num_layers: Optional[int] = None) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.m < 1 or (num_layers is not None and self.m > num_layers):
            raise ValueError(f"m must be in [1, num_layers], got {self.m}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ad.OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {tuple(ad.OPTIMIZERS)}")
        if self.schedule not in ("batch", "epoch"):
            raise ValueError("schedule must be 'batch' or 'epoch'")
        if self.max_epochs < self.epochs:
            raise ValueError("max_epochs must be >= epochs")

    def tap_layer(self, num_layers: int) -> int:
        return num_layers if self.mode == DCSGL_T else self.m

    def make_oracle(self) -> CausalOracle:
        mode = RANDOM_NEGATIVE if self.mode == DCSGL_A else INTERCHANGE
        return CausalOracle(self.domain, self.K, mode, rng_seed=self.seed, rho=self.rho)


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    test_accuracy: Optional[float] = None
    skipped_samples: int = 0
    config: dict = field(default_factory=dict)

    def history(self, split: str, column: str) -> list:
        return [r[column] for r in self.rows if r["split"] == split]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.rows:
            cells = []
            for c in CSV_COLUMNS:
                v = r.get(c)
                if v is None:
                    cells.append("")
                elif isinstance(v, float):
                    cells.append(format(v, ".10g"))
                else:
                    cells.append(str(v))
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())


# ------------------------------------------------------------------ losses


def loss_Lg(model: GNN, batch: GraphBatch, leaves=None, out=None) -> Tensor:
    """Summed cross entropy of the classification head (per node for node tasks)."""
    out = out if out is not None else model.forward_full(batch, leaves)
    if model.config.task == NODE_CLS:
        return ad.cross_entropy(out.node_logits, batch.node_labels())
    if any(g.y is None for g in batch.graphs):
        raise ValueError("graph labels missing")
    return ad.cross_entropy(out.graph_logits, batch.y)


@dataclass
class CausalTerms:
    loss_c: Tensor
    loss_d: Tensor
    n_base: int
    n_interventions: int
    head_probs: np.ndarray
    targets: np.ndarray


def _zero() -> Tensor:
    return Tensor(np.zeros((1, 1)))


def causal_terms(
    model: GNN,
    batch: GraphBatch,
    oracle: CausalOracle,
    m: int,
    round_: int = 0,
    leaves=None,
    tapped: Optional[Tensor] = None,
    plans: Optional[Sequence] = None,
) -> CausalTerms:
    """L_c and L_d for a batch, sharing one pass through the causal head."""
    if tapped is None:
        tapped = model.forward_layers(batch, upto=m, leaves=leaves)[m - 1]
    if plans is None:
        plans = [oracle.plan(g, round_) for g in batch.graphs]
    base_items, int_items = [], []
    for plan, off in zip(plans, batch.offsets[:-1]):
        if plan.skipped:
            continue
        base_items.append((plan.base, int(off)))
        int_items.extend((r, int(off)) for r in plan.interventions)
    items = base_items + int_items
    if not items:
        return CausalTerms(_zero(), _zero(), 0, 0, np.zeros((0, 2)), np.zeros((0, 2)))
    rows, pool, pool_t, targets = apply_selections(tapped, items)
    logits = model.causal_head(rows, pool, pool_t, leaves=leaves)
    nb = len(base_items)
    lc = ad.kl_categorical(targets[:nb], ad.gather_rows(logits, np.arange(nb)))
    if int_items:
        ld = ad.kl_categorical(targets[nb:], ad.gather_rows(logits, np.arange(nb, len(items))))
    else:
        ld = _zero()
    probs = ad._softmax(logits.data[:nb])
    return CausalTerms(lc, ld, nb, len(int_items), probs, targets[:nb])


def loss_Lc(model, batch, oracle, m, round_=0, leaves=None) -> Tensor:
    return causal_terms(model, batch, oracle, m, round_, leaves).loss_c


def loss_Ld(model, batch, oracle, m, round_=0, leaves=None) -> Tensor:
    return causal_terms(model, batch, oracle, m, round_, leaves).loss_d


def loss_La(model, batch, oracle, m, lam, round_=0, leaves=None) -> Tensor:
    t = causal_terms(model, batch, oracle, m, round_, leaves)
    return combine_La(t.loss_c, t.loss_d, lam)


def combine_La(lc: Tensor, ld: Tensor, lam: float) -> Tensor:
    if lam == 0:
        return lc
    return ad.add(lc, ad.scale(ld, lam))


def aux_loss(model: GNN, batch: GraphBatch, out, mode: str, leaves) -> Optional[Tensor]:
    """Extra supervised term used by the DCS-only ablations."""
    if mode == DCS_ONLY_D:
        marks = np.concatenate([g.junction.astype(np.int64) for g in batch.graphs])
        return ad.cross_entropy(linear(leaves, "aux_junction", out.layer_outputs[-1]), marks)
    if mode == DCS_ONLY_L:
        counts = np.array(
            [min(int(g.junction.sum()), NUM_COUNT_BUCKETS - 1) for g in batch.graphs]
        )
        return ad.cross_entropy(linear(leaves, "aux_count", out.graph_embedding), counts)
    return None


# -------------------------------------------------------------- evaluation


def _labels(model: GNN, graphs: Sequence[Graph]) -> np.ndarray:
    if model.config.task == NODE_CLS:
        return np.concatenate([g.y_node for g in graphs])
    return np.array([g.y for g in graphs])


def evaluate(model: GNN, dataset: Dataset, split: str) -> float:
    """Fraction of argmax-correct predictions on a split."""
    graphs = dataset.split(split)
    if not graphs:
        raise ValueError(f"split {split!r} is empty")
    return float(np.mean(model.predict(graphs) == _labels(model, graphs)))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def diagnostic_alignment(model: GNN, graphs: Sequence[Graph], oracle: CausalOracle, m: int) -> float:
    """Cosine between stacked oracle targets and stacked causal-head outputs."""
    probs, targets = [], []
    for i in range(0, len(graphs), 256):
        batch = GraphBatch(graphs[i : i + 256])
        t = causal_terms(model, batch, oracle, m)
        probs.append(t.head_probs)
        targets.append(t.targets)
    probs, targets = np.vstack(probs), np.vstack(targets)
    if len(probs) == 0:
        raise ValueError("no non-skipped samples")
    return cosine(targets, probs)


def fit_causal_head(
    model: GNN,
    graphs: Sequence[Graph],
    oracle: CausalOracle,
    m: int,
    tol: float = 1e-6,
    lr: float = 0.05,
    max_steps: int = 20_000,
) -> tuple:
    """Full-batch Adam on the causal head alone until L_c < ``tol``.

    The backbone is frozen, so the tapped features are computed once.
    Returns ``(final L_c, steps taken, CausalTerms at the end)``.
    """
    batch = GraphBatch(graphs)
    tapped = Tensor(model.forward_layers(batch, upto=m)[m - 1].data)
    plans = [oracle.plan(g, 0) for g in graphs]
    names = ["causal.w1", "causal.b1", "causal.w2", "causal.b2"]
    state: dict = {}
    step = 0
    while True:
        leaves = model.leaves(names)
        t = causal_terms(model, batch, oracle, m, leaves=leaves, tapped=tapped, plans=plans)
        if t.loss_c.item() < tol or step == max_steps:
            return t.loss_c.item(), step, t
        ad.backward(t.loss_c)
        ad.adam_step(model.params, {k: leaves[k].grad for k in names if leaves[k].grad is not None}, state, lr)
        step += 1


# ---------------------------------------------------------------- training


def default_gnn_config(dataset: Dataset, **overrides) -> GnnConfig:
    classes = dataset.num_node_classes if dataset.task == NODE_CLS else dataset.num_classes
    kw = dict(feature_dim=dataset.feature_dim, num_classes=max(classes, 2), task=dataset.task)
    kw.update(overrides)
    return GnnConfig(**kw)


class _Meter:
    def __init__(self):
        self.sums = {}
        self.counts = {}

    def add(self, key, value, count):
        if count:
            self.sums[key] = self.sums.get(key, 0.0) + value
            self.counts[key] = self.counts.get(key, 0) + count

    def mean(self, key):
        c = self.counts.get(key, 0)
        return self.sums[key] / c if c else None


class Trainer:
    """Holds the model, optimizer state and oracle for one training run."""

    def __init__(self, config: TrainConfig, dataset: Dataset, gnn_config: Optional[GnnConfig] = None):
        self.config = config
        self.dataset = dataset
        self.gnn_config = gnn_config or default_gnn_config(dataset)
        config.validate(self.gnn_config.num_layers)
        self.model = GNN(self.gnn_config, seed=config.seed)
        self.m = config.tap_layer(self.gnn_config.num_layers)
        self.oracle = config.make_oracle()
        self.state: dict = {}
        self.step_fn = ad.OPTIMIZERS[config.optimizer]
        L = self.gnn_config.num_layers
        backbone = [k for l in range(1, L + 1) for k in layer_param_names(self.gnn_config, l)]
        self.g_params = backbone + ["cls.weight", "cls.bias"]
        if config.mode == DCS_ONLY_D:
            self.g_params += ["aux_junction.weight", "aux_junction.bias"]
        if config.mode == DCS_ONLY_L:
            self.g_params += ["aux_count.weight", "aux_count.bias"]
        self.a_params = [k for l in range(1, self.m + 1) for k in layer_param_names(self.gnn_config, l)]
        self.a_params += ["causal.w1", "causal.b1", "causal.w2", "causal.b2"]
        self.aligning = config.mode in ALIGNING_MODES

    def _apply(self, leaves, names, lr):
        grads = {k: leaves[k].grad for k in names if leaves[k].grad is not None}
        self.step_fn(self.model.params, grads, self.state, lr)

    def step_g(self, batch: GraphBatch, meter: _Meter, where: str) -> None:
        leaves = self.model.leaves(self.g_params)
        out = self.model.forward_full(batch, leaves)
        loss = loss_Lg(self.model, batch, out=out)
        aux = aux_loss(self.model, batch, out, self.config.mode, leaves)
        total = loss if aux is None else ad.add(loss, aux)
        if not math.isfinite(total.item()):
            raise TrainingError(f"non-finite supervised loss at {where}")
        ad.backward(total)
        self._apply(leaves, self.g_params, self.config.lr)
        labels = batch.node_labels() if self.gnn_config.task == NODE_CLS else batch.y
        meter.add("loss_g", loss.item(), len(batch))
        meter.add("correct", float(np.sum(np.argmax(out.logits.data, axis=1) == labels)), len(labels))

    def step_a(self, batch: GraphBatch, round_: int, meter: _Meter, where: str) -> None:
        leaves = self.model.leaves(self.a_params)
        t = causal_terms(self.model, batch, self.oracle, self.m, round_, leaves)
        if t.n_base == 0 and t.n_interventions == 0:
            return
        la = combine_La(t.loss_c, t.loss_d, self.config.lam)
        if not math.isfinite(la.item()):
            raise TrainingError(f"non-finite alignment loss at {where}")
        ad.backward(la)
        self._apply(leaves, self.a_params, self.config.lr_aux or self.config.lr)
        meter.add("loss_c", t.loss_c.item(), t.n_base)
        meter.add("loss_d", t.loss_d.item(), t.n_base)
        meter.sums.setdefault("probs", []).append(t.head_probs)
        meter.sums.setdefault("targets", []).append(t.targets)

    def _row(self, epoch, split, meter: _Meter, probs=None, targets=None) -> dict:
        lc, ld = meter.mean("loss_c"), meter.mean("loss_d")
        la = None
        if self.aligning and lc is not None:
            la = lc + self.config.lam * (ld or 0.0)
        align = None
        if probs is not None and len(probs):
            align = cosine(targets, probs)
        return {
            "epoch": epoch,
            "split": split,
            "loss_g": meter.mean("loss_g"),
            "loss_c": lc if self.aligning else None,
            "loss_d": ld if self.aligning else None,
            "loss_a": la,
            "accuracy": meter.mean("correct"),
            "alignment_cosine": align,
        }

    def evaluate_split(self, batches: Sequence[GraphBatch], plans, epoch: int, split: str) -> dict:
        meter = _Meter()
        probs, targets = [], []
        for batch, bplans in zip(batches, plans):
            out = self.model.forward_full(batch)
            meter.add("loss_g", loss_Lg(self.model, batch, out=out).item(), len(batch))
            labels = batch.node_labels() if self.gnn_config.task == NODE_CLS else batch.y
            meter.add("correct", float(np.sum(np.argmax(out.logits.data, axis=1) == labels)), len(labels))
            t = causal_terms(
                self.model, batch, self.oracle, self.m, tapped=out.layer_outputs[self.m - 1], plans=bplans
            )
            meter.add("loss_c", t.loss_c.item(), t.n_base)
            meter.add("loss_d", t.loss_d.item(), t.n_base)
            probs.append(t.head_probs)
            targets.append(t.targets)
        return self._row(epoch, split, meter, np.vstack(probs), np.vstack(targets))

    def _eval_batches(self, split: str):
        graphs = self.dataset.split(split)
        bs = self.config.eval_batch_size
        batches = [GraphBatch(graphs[i : i + bs]) for i in range(0, len(graphs), bs)]
        plans = [[self.oracle.plan(g, 0) for g in b.graphs] for b in batches]
        return batches, plans

    def run(self) -> tuple:
        cfg = self.config
        report = TrainReport(config={"train": asdict(cfg), "gnn": asdict(self.gnn_config)})
        if cfg.epochs == 0:
            return self.model, report
        train_graphs = self.dataset.split("train")
        if not train_graphs:
            raise ValueError("train split is empty")
        val_batches, val_plans = self._eval_batches("val")
        if not val_batches:
            raise ValueError("val split is empty")
        best_acc, best_params = -1.0, self.model.copy().params
        n = len(train_graphs)
        for epoch in range(1, cfg.max_epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            chunks = [order[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
            meter = _Meter()
            batches = [GraphBatch([train_graphs[i] for i in c]) for c in chunks]
            if cfg.schedule == "batch":
                for b, batch in enumerate(batches):
                    self.step_g(batch, meter, f"epoch {epoch} batch {b}")
                    if self.aligning:
                        self.step_a(batch, epoch, meter, f"epoch {epoch} batch {b}")
            else:
                for b, batch in enumerate(batches):
                    self.step_g(batch, meter, f"epoch {epoch} batch {b}")
                if self.aligning:
                    for b, batch in enumerate(batches):
                        self.step_a(batch, epoch, meter, f"epoch {epoch} batch {b}")
            probs = meter.sums.pop("probs", None)
            targets = meter.sums.pop("targets", None)
            report.rows.append(
                self._row(
                    epoch,
                    "train",
                    meter,
                    np.vstack(probs) if probs else None,
                    np.vstack(targets) if targets else None,
                )
            )
            val_row = self.evaluate_split(val_batches, val_plans, epoch, "val")
            report.rows.append(val_row)
            if val_row["accuracy"] > best_acc:
                best_acc = val_row["accuracy"]
                report.best_epoch = epoch
                best_params = {k: v.copy() for k, v in self.model.params.items()}
            log.debug("epoch %d train=%s val=%s", epoch, report.rows[-2], val_row)
            if epoch >= cfg.epochs and epoch - report.best_epoch >= cfg.patience:
                break
        self.model.params = best_params
        test_batches, test_plans = self._eval_batches("test")
        if test_batches:
            test_row = self.evaluate_split(test_batches, test_plans, report.best_epoch, "test")
            report.rows.append(test_row)
            report.test_accuracy = test_row["accuracy"]
        report.skipped_samples = self.oracle.skipped
        return self.model, report


def train(config: TrainConfig, dataset: Dataset, gnn_config: Optional[GnnConfig] = None) -> tuple:
    """Train one model; returns ``(model, TrainReport)``."""
    return Trainer(config, dataset, gnn_config).run()


def dump_embeddings(model: GNN, graphs: Sequence[Graph], path) -> None:
    """CSV of pooled graph embeddings with labels, for external plotting."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        h = model.config.hidden_dim
        fh.write("graph_id,label," + ",".join(f"e{i}" for i in range(h)) + "\n")
        for i in range(0, len(graphs), 256):
            chunk = graphs[i : i + 256]
            emb = model.forward_full(GraphBatch(chunk)).graph_embedding.data
            for g, row in zip(chunk, emb):
                fh.write(f"{g.id},{g.y}," + ",".join(format(v, ".9g") for v in row) + "\n")
