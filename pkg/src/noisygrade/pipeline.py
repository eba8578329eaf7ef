"""Two-stage training (contrastive warm-up, then memory + unimodal fine-tuning),
baselines, and the multi-seed experiment runner."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import losses
from .data import (
    Dataset,
    GeneratorConfig,
    add_feature_jitter,
    generate_synthetic,
    generate_test_set,
    load_csv,
    sample_ls_labels,
    split_to_single_annotation,
    train_val_split,
)
from .metrics import evaluate_predictions
from .model import (
    ModelParams,
    OptimizerState,
    backward_and_step,
    forward,
    init_head,
    init_params,
    save_checkpoint,
)
from .numcore import InvalidArgument, NumericError, entropy, seeded_rng

log = logging.getLogger(__name__)

METHODS = ("URL", "AVE", "LS", "CE-MV", "CE-SV")

# rng streams per training seed
S_SPLIT, S_NL_INIT, S_NL_SHUFFLE, S_ENC_INIT, S_SCL_SHUFFLE, S_HEAD_INIT, S_MU_SHUFFLE, S_LS, S_JITTER = range(1, 10)


class ConfigError(ValueError):
    pass


@dataclass
class HyperParams:
    M: int = 200
    beta: float = 0.9
    tau: float = 0.1
    alpha1: float = 0.8
    alpha2: float = 3.0
    nl_epochs: int = 30
    patience: int = 5
    scl_epochs: int = 10
    mu_epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-4
    nl_lr: float | None = None  # warm-up backbone; None means use lr
    lr_decay: float = 0.95
    reg_sign: str = "prose"
    memory_cadence: str = "epoch"  # or "iteration"
    views: str = "MV"  # or "SV"
    hidden: int = 32
    feature_dim: int = 16
    centroid_ema: float | None = 0.9
    val_fraction: float = 0.2
    warm_start_scl: bool = False
    jitter: float = 0.0

    def validate(self):
        if self.reg_sign not in losses.REG_SIGNS:
            raise ConfigError(f"reg_sign must be one of {losses.REG_SIGNS}")
        if self.memory_cadence not in ("epoch", "iteration"):
            raise ConfigError("memory_cadence must be 'epoch' or 'iteration'")
        if self.views not in ("MV", "SV"):
            raise ConfigError("views must be 'MV' or 'SV'")
        if not 0 < self.beta < 1 or not 0 < self.val_fraction < 1:
            raise ConfigError("beta and val_fraction must lie in (0, 1)")
        if self.centroid_ema is not None and not 0 <= self.centroid_ema < 1:
            raise ConfigError("centroid_ema must lie in [0, 1)")
        if self.tau <= 0 or self.lr < 0 or self.batch_size < 1 or self.M < 1:
            raise ConfigError("tau, lr, batch_size and M must be positive")
        if min(self.nl_epochs, self.scl_epochs, self.mu_epochs, self.patience) < 0:
            raise ConfigError("epoch counts must be non-negative")


@dataclass
class ExperimentConfig:
    method: str = "URL"
    use_con: bool = True
    use_reg: bool = True
    use_uni: bool = True
    hyper: HyperParams = field(default_factory=HyperParams)
    generator: GeneratorConfig | None = field(default_factory=GeneratorConfig)
    n_test: int = 400
    train_path: str | None = None
    test_path: str | None = None
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    out_dir: str | None = None

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.generator is None and (self.train_path is None or self.test_path is None):
            raise ConfigError("give either a generator config or both train_path and test_path")
        self.hyper.validate()

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        hyper = doc.pop("hyper", {}) or {}
        hp_fields = {f.name for f in dataclasses.fields(HyperParams)}
        bad = set(hyper) - hp_fields
        if bad:
            raise ConfigError(f"unknown hyper-parameter(s): {', '.join(sorted(bad))}")
        gen = doc.pop("generator", {})
        if gen is not None:
            gen = dict(gen)
            for key in ("prior", "annotators", "sigma"):
                if gen.get(key) is not None:
                    gen[key] = tuple(gen[key])
            gen = GeneratorConfig(**gen)
        cfg = cls(hyper=HyperParams(**hyper), generator=gen, **doc)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        for key in ("prior", "annotators", "sigma"):
            if doc["generator"] is not None and doc["generator"].get(key) is not None:
                doc["generator"][key] = list(doc["generator"][key])
        return doc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        """Read a JSON config; a missing file raises ConfigError naming the path."""
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(doc)

    def echo(self) -> dict:
        """Config as recorded in reports; the output location is left out so
        that identical runs produce identical reports."""
        doc = self.to_dict()
        doc.pop("out_dir")
        return doc


@dataclass
class ReliableSet:
    image_ids: np.ndarray
    rows: np.ndarray  # into the training dataset
    labels: np.ndarray  # predicted class, 0-based
    entropies: np.ndarray
    per_class: list[int]
    shortfall: list[int]

    def __len__(self) -> int:
        return len(self.image_ids)

    def purity(self, train: Dataset) -> float | None:
        clean = train.clean[self.rows]
        if len(self) == 0 or np.any(clean < 0):
            return None
        return float(np.mean(clean == self.labels))


@dataclass
class TrainReport:
    seed: int
    stages: dict = field(default_factory=dict)
    selection: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)


def _n_views(hp: HyperParams, ds: Dataset) -> int:
    return 1 if hp.views == "SV" else ds.n_views


def _dims(hp: HyperParams, d_in: int, n_classes: int) -> tuple[int, int, int, int]:
    return (d_in, hp.hidden, hp.feature_dim, n_classes)


def _optimizer(hp: HyperParams, lr: float | None = None) -> OptimizerState:
    return OptimizerState(base_lr=hp.lr if lr is None else lr, decay=hp.lr_decay)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _checked(term: str, grad: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient from {term} loss", term=term)
    return grad


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return forward(params, x)[1]


# -- stage 1: negative-learning warm-up and reliable selection ---------------

def train_nl_warmup(train: Dataset, val: Dataset, hp: HyperParams, seed: int) -> tuple[ModelParams, dict]:
    """Train a backbone on complementary labels, keeping the best validation checkpoint.

    Validation accuracy is measured against AVE proxy labels. Training stops
    after ``hp.patience`` epochs without improvement or ``hp.nl_epochs``.
    """
    nv = _n_views(hp, train)
    x = train.features(nv)
    y_or = train.or_labels()
    xv = val.features(nv)
    yv = val.ave_labels()
    params = init_params(_dims(hp, x.shape[1], train.n_classes), seeded_rng(seed, S_NL_INIT))
    opt = _optimizer(hp, hp.nl_lr)
    shuffle = seeded_rng(seed, S_NL_SHUFFLE)
    best, best_acc, best_epoch = params.copy(), -1.0, -1
    losses_trace, val_trace = [], []
    for epoch in range(hp.nl_epochs):
        opt.epoch = epoch
        total = 0.0
        for idx in _batches(len(x), hp.batch_size, shuffle):
            _, p, cache = forward(params, x[idx])
            loss, grad = losses.nl_loss(p, y_or[idx])
            total += float(np.sum(loss))
            backward_and_step(params, opt, cache, grad_logits=_checked("nl", grad) / len(idx))
        losses_trace.append(total / len(x))
        acc = float(np.mean(np.argmax(predict(params, xv), axis=1) == yv)) if len(val) else 0.0
        val_trace.append(acc)
        if acc > best_acc:
            best, best_acc, best_epoch = params.copy(), acc, epoch
        elif epoch - best_epoch >= hp.patience:
            break
    report = {"loss": losses_trace, "val_accuracy": val_trace, "best_epoch": best_epoch,
              "best_val_accuracy": best_acc, "epochs_run": len(losses_trace)}
    return best, report


def select_reliable(backbone: ModelParams, train: Dataset, M: int, hp: HyperParams | None = None) -> ReliableSet:
    """Per predicted class, the floor(M / C) lowest-entropy samples.

    Ties in entropy keep dataset order. Classes with too few candidates give
    what they have; the shortfall is reported, not redistributed.
    """
    hp = hp or HyperParams()
    p = predict(backbone, train.features(_n_views(hp, train)))
    n_classes = p.shape[1]
    quota = M // n_classes
    pred = np.argmax(p, axis=1)
    ent = entropy(p)
    rows, per_class, shortfall = [], [], []
    for k in range(n_classes):
        cand = np.flatnonzero(pred == k)
        order = cand[np.argsort(ent[cand], kind="stable")][:quota]
        rows.append(order)
        per_class.append(len(order))
        shortfall.append(quota - len(order))
    rows = np.concatenate(rows).astype(np.int64)
    return ReliableSet(train.ids[rows], rows, pred[rows], ent[rows], per_class, shortfall)


def train_scl(encoder: ModelParams, x_reliable: np.ndarray, labels: np.ndarray, hp: HyperParams,
              seed: int) -> tuple[ModelParams, dict]:
    """Supervised contrastive training of the encoder on the reliable set."""
    if len(x_reliable) < 2:
        raise InvalidArgument("contrastive training needs at least two reliable samples")
    params = encoder.copy()
    opt = _optimizer(hp)
    shuffle = seeded_rng(seed, S_SCL_SHUFFLE)
    trace = []
    for epoch in range(hp.scl_epochs):
        opt.epoch = epoch
        total, n_batches = 0.0, 0
        for idx in _batches(len(x_reliable), hp.batch_size, shuffle):
            if len(idx) < 2:
                continue
            z, _, cache = forward(params, x_reliable[idx])
            loss, dz = losses.supcon_loss(z, labels[idx], hp.tau)
            backward_and_step(params, opt, cache, grad_features=_checked("con", dz))
            total += loss
            n_batches += 1
        trace.append(total / max(n_batches, 1))
    return params, {"loss": trace}


# -- stage 2: memory pseudo-labels + unimodal regularisation ------------------

EpochEntries = Callable[[int], tuple[np.ndarray, np.ndarray]]


def train_mu(
    params: ModelParams,
    x: np.ndarray,
    image_ids: np.ndarray,
    epoch_entries: EpochEntries,
    hp: HyperParams,
    seed: int,
    alpha1: float,
    alpha2: float,
    use_memory: bool = True,
    val: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[ModelParams, dict, losses.MemoryBank | None]:
    """Fine-tune with ce + alpha1 * reg + alpha2 * uni.

    ``epoch_entries(epoch)`` returns (rows into ``x``, 0-based labels) for
    one epoch; entries are shuffled into batches here. With
    ``use_memory=False`` the regulariser is skipped entirely, and with both
    alphas at 0 this is plain cross-entropy training.
    """
    params = params.copy()
    n_classes = params.dims[3]
    opt = _optimizer(hp)
    shuffle = seeded_rng(seed, S_MU_SHUFFLE)
    jitter_rng = seeded_rng(seed, S_JITTER)
    bank = losses.MemoryBank(n_classes, hp.beta) if use_memory else None
    centroids = None
    eye = np.eye(n_classes)
    trace = {"ce": [], "reg": [], "uni": [], "total": [], "val_accuracy": []}
    for epoch in range(hp.mu_epochs):
        opt.epoch = epoch
        rows, labels = epoch_entries(epoch)
        sums = dict.fromkeys(("ce", "reg", "uni", "total"), 0.0)
        latest: dict[int, np.ndarray] = {}
        for idx in _batches(len(rows), hp.batch_size, shuffle):
            r = rows[idx]
            xb = add_feature_jitter(x[r], hp.jitter, jitter_rng)
            z, p, cache = forward(params, xb)
            ce, g_ce = losses.ce_loss(p, eye[labels[idx]])
            reg = np.zeros(len(r))
            g_reg = np.zeros_like(p)
            if bank is not None:
                centroids = losses.batch_centroids(z, p, centroids, hp.centroid_ema)
                p_hat = losses.pseudo_label(z, centroids, hp.tau)
                ids = image_ids[r]
                if hp.memory_cadence == "iteration":
                    for i, q in zip(ids, p_hat):
                        bank.update(i, q)
                else:
                    for i, q in zip(ids, p_hat):
                        latest[int(i)] = q
                reg, g_reg = losses.reg_loss(p, bank.get(ids), hp.reg_sign)
            uni, g_uni = losses.unimodal_loss(p, np.argmax(p, axis=1) + 1)
            if alpha2 == 0:
                uni, g_uni = np.zeros(len(r)), np.zeros_like(p)
            parts = losses.mu_total_loss(
                float(np.sum(ce)), float(np.sum(reg)), float(np.sum(uni)), alpha1, alpha2,
                grads=(_checked("ce", g_ce), _checked("reg", g_reg), _checked("uni", g_uni)),
            )
            backward_and_step(params, opt, cache, grad_logits=parts.grad / len(r))
            sums["ce"] += parts.ce
            sums["reg"] += alpha1 * parts.reg
            sums["uni"] += alpha2 * parts.uni
            sums["total"] += parts.total
        if bank is not None:
            for i, q in latest.items():
                bank.update(i, q)
            bank.epoch += 1
        for key, value in sums.items():
            trace[key].append(value / max(len(rows), 1))
        if val is not None and len(val[0]):
            trace["val_accuracy"].append(float(np.mean(np.argmax(predict(params, val[0]), axis=1) == val[1])))
    return params, trace, bank


# -- methods -----------------------------------------------------------------

@dataclass
class RunResult:
    seed: int
    params: ModelParams
    n_views: int
    report: TrainReport
    extras: dict


def _url(cfg: ExperimentConfig, train: Dataset, val: Dataset, seed: int,
         report: TrainReport) -> tuple[ModelParams, dict, int]:
    hp = cfg.hyper
    nv = _n_views(hp, train)
    x = train.features(nv)
    dims = _dims(hp, x.shape[1], train.n_classes)
    extras = {}
    encoder = init_params(dims, seeded_rng(seed, S_ENC_INIT))
    if cfg.use_con:
        backbone, nl_report = train_nl_warmup(train, val, hp, seed)
        report.stages["nl"] = nl_report
        reliable = select_reliable(backbone, train, hp.M, hp)
        purity = reliable.purity(train)
        report.selection = {"per_class": reliable.per_class, "shortfall": reliable.shortfall,
                            "size": len(reliable), "purity": purity}
        extras["selection_purity"] = purity
        if hp.warm_start_scl:
            encoder = backbone.copy()
        encoder, scl_report = train_scl(encoder, x[reliable.rows], reliable.labels, hp, seed)
        report.stages["scl"] = scl_report
    params = init_head(encoder, seeded_rng(seed, S_HEAD_INIT))
    split = split_to_single_annotation(train)

    def entries(epoch):
        return split.rows, split.labels

    alpha1 = hp.alpha1 if cfg.use_reg else 0.0
    alpha2 = hp.alpha2 if cfg.use_uni else 0.0
    params, mu_report, bank = train_mu(
        params, x, train.ids, entries, hp, seed, alpha1, alpha2, use_memory=cfg.use_reg,
        val=(val.features(nv), val.ave_labels()),
    )
    report.stages["mu"] = mu_report
    if bank is not None:
        extras["memory_max_sum"] = float(max((v.sum() for v in bank.vectors.values()), default=0.0))
    return params, extras, nv


def _proxy_ce(cfg: ExperimentConfig, train: Dataset, val: Dataset, seed: int, report: TrainReport,
              proxy: str) -> tuple[ModelParams, dict, int]:
    hp = cfg.hyper
    if cfg.method == "CE-SV":
        hp = dataclasses.replace(hp, views="SV")
    elif cfg.method == "CE-MV":
        hp = dataclasses.replace(hp, views="MV")
    nv = _n_views(hp, train)
    x = train.features(nv)
    params = init_params(_dims(hp, x.shape[1], train.n_classes), seeded_rng(seed, S_ENC_INIT))
    rows = np.arange(len(train))
    if proxy == "AVE":
        fixed = train.ave_labels()

        def entries(epoch):
            return rows, fixed
    else:
        ls_rng = seeded_rng(seed, S_LS)

        def entries(epoch):
            return rows, sample_ls_labels(train, ls_rng)

    params, mu_report, _ = train_mu(params, x, train.ids, entries, hp, seed, 0.0, 0.0,
                                    use_memory=False, val=(val.features(nv), val.ave_labels()))
    report.stages["ce"] = mu_report
    return params, {}, nv


def unimodal_fraction(p: np.ndarray) -> float:
    """Share of rows whose unimodal penalty at their own argmax is exactly 0."""
    uni, _ = losses.unimodal_loss(p, np.argmax(p, axis=1) + 1)
    return float(np.mean(np.atleast_1d(uni) == 0.0))


def annotation_agreement(ds: Dataset) -> float | None:
    """Fraction of all individual annotations equal to the hidden label."""
    if np.any(ds.clean < 0):
        return None
    mask = ds.annotations >= 0
    return float(np.sum((ds.annotations == ds.clean[:, None]) & mask) / mask.sum())


def run_single(cfg: ExperimentConfig, seed: int, train_all: Dataset, test: Dataset) -> RunResult:
    start = time.perf_counter()
    hp = cfg.hyper
    train, val, warnings = train_val_split(train_all, hp.val_fraction, seeded_rng(seed, S_SPLIT))
    report = TrainReport(seed=seed, config=cfg.echo())
    if cfg.method == "URL":
        params, extras, nv = _url(cfg, train, val, seed, report)
    else:
        proxy = "AVE" if cfg.method == "AVE" else "LS"
        params, extras, nv = _proxy_ce(cfg, train, val, seed, report, proxy)
    p_test = predict(params, test.features(nv))
    extras["test_unimodal_fraction"] = unimodal_fraction(p_test)
    extras["annotation_agreement"] = annotation_agreement(train)
    if warnings:
        extras["warnings"] = warnings
    report.wall_clock = time.perf_counter() - start
    return RunResult(seed, params, nv, report, extras)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.train_path is not None:
        train = load_csv(cfg.train_path)
        test = load_csv(cfg.test_path)
        return train, test
    gen = cfg.generator
    return generate_synthetic(gen), generate_test_set(gen, cfg.n_test)


def test_targets(test: Dataset) -> np.ndarray:
    """1-based evaluation targets: the (agreed) first annotation."""
    return test.annotations[:, 0] + 1


# (label, method, use_con, use_reg, use_uni); the baseline method follows the views
ABLATION_ROWS = (
    ("full", "URL", True, True, True),
    ("-uni", "URL", True, True, False),
    ("-uni-reg", "URL", True, False, False),
    ("baseline", None, False, False, False),
)


def ablation_configs(base: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    """The SV/MV x {full, -uni, -uni-reg, baseline} grid derived from ``base``."""
    grid = []
    for views in ("SV", "MV"):
        for label, method, con, reg, uni in ABLATION_ROWS:
            cfg = dataclasses.replace(
                base,
                method=method or f"CE-{views}",
                use_con=con, use_reg=reg, use_uni=uni,
                hyper=dataclasses.replace(base.hyper, views=views),
                seeds=list(base.seeds),
            )
            grid.append((f"{views} {label}", cfg))
    return grid


def run_experiment(cfg: ExperimentConfig, datasets: tuple[Dataset, Dataset] | None = None):
    """Run ``cfg.method`` for every seed and aggregate the test metrics.

    Writes the report, per-seed checkpoints and train reports under
    ``cfg.out_dir`` when it is set. Returns the :class:`MetricsReport`.
    """
    from .report import MetricsReport, write_report, write_train_report

    cfg.validate()
    train, test = datasets if datasets is not None else load_datasets(cfg)
    targets = test_targets(test)
    runs = []
    for seed in cfg.seeds:
        result = run_single(cfg, seed, train, test)
        p = predict(result.params, test.features(result.n_views))
        runs.append({"seed": seed, "tasks": evaluate_predictions(p, targets, train.n_classes),
                     "extras": result.extras})
        log.info("%s seed %d: acc5=%.4f (%.1fs)", cfg.method, seed,
                 runs[-1]["tasks"]["5class"]["accuracy"], result.report.wall_clock)
        if cfg.out_dir:
            save_checkpoint(os.path.join(cfg.out_dir, "checkpoints", f"seed{seed}.json"), result.params,
                            meta={"n_views": result.n_views, "method": cfg.method, "seed": seed})
            write_train_report(result.report, os.path.join(cfg.out_dir, "train_reports", f"seed{seed}.json"))
    report = MetricsReport.from_runs(cfg.method, cfg.echo(), runs)
    if cfg.out_dir:
        write_report(report, cfg.out_dir)
    return report
