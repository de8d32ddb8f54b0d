"""Seeded experiment drivers.

Every driver takes an :class:`ExperimentConfig` plus an explicit seed list
and returns an :class:`~esmalab.reporting.ExperimentReport` of plain rows.
All randomness flows from the per-run seed, so a re-run with the same
config reproduces every number bit for bit.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.stats import spearmanr

from .attacks import (ANCHOR_SQ, CE_TARGETED, AttackConfig, AttackResult,
                      momentum_iterative_attack, transfer_success_rate)
from .data import LabeledDataset, gen_gaussian_mixture, three_gaussians, two_gaussians
from .density import (DensityIndex, binned_statistic, bin_index, equal_width_edges,
                      local_risks)
from .embedding import EmbeddingTable, class_prototypes, pretrain_embeddings
from .errors import InvalidConfigError
from .generator import PerturbationGenerator, esma_attack, train_esma
from .nn import (TOY_ARCHITECTURES, MlpClassifier, TrainConfig, early_stop_train,
                 forward, softmax)
from .reporting import ExperimentReport
from .screening import normalized_difficulty, score_samples, screen, screen_dataset, thresholds

DATASETS = ("two", "three")
SHIFT_EDGES = np.arange(11) / 10.0
SHIFT_MASS_FROM = 0.6
BUDGET_SLACK = 1e-12


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of the experiment drivers; keys double as CLI/config-file names."""

    data: str = "two"
    n_samples: int = 200
    n_test: int = 200
    separation: float = 1.5
    batch_size: int = 32
    train_steps: int = 4000
    lr: float = 0.05
    lr_schedule: str = "inverse_sqrt"
    tolerance: int = 30
    validation_fraction: float = 0.2
    r: float = 0.4
    bins: int = 10
    eps: float = 0.5
    q: int = 10
    attack_steps: int = 20
    momentum: float = 1.0
    esma_q: int = 2
    epochs: int = 300
    gen_lr: float = 1e-4
    gen_hidden: int = 32
    gen_blocks: int = 3
    embed_dim: int = 32
    embed_steps: int = 15000
    embed_lr: float = 1.5e-5
    lambda1: float = 5.0
    lambda2: float = 0.01
    seeds: tuple = tuple(range(10))

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.data not in DATASETS:
            raise InvalidConfigError(f"data must be one of {DATASETS}")
        if self.r <= 0 or self.bins < 1 or self.eps < 0:
            raise InvalidConfigError("need r > 0, bins >= 1 and eps >= 0")

    def train_config(self, seed) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, total_steps=self.train_steps,
                           lr_schedule=self.lr_schedule, lr=self.lr,
                           early_stop_tolerance=self.tolerance, seed=seed,
                           validation_fraction=self.validation_fraction)

    def attack_config(self, loss_kind) -> AttackConfig:
        return AttackConfig(self.eps, steps=self.attack_steps, momentum=self.momentum,
                            loss_kind=loss_kind)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from strings or typed values; unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, value in values.items():
            if key not in known:
                raise InvalidConfigError(f"unknown config key {key!r}")
            default = known[key].default
            if key == "seeds":
                if isinstance(value, str):
                    value = [int(v) for v in value.replace(" ", "").split(",") if v]
                kw[key] = tuple(int(v) for v in value)
            elif isinstance(default, bool):
                kw[key] = str(value).lower() in ("1", "true", "yes")
            else:
                kw[key] = type(default)(value)
        return cls(**kw)


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------


def mixture_spec(cfg: ExperimentConfig):
    if cfg.data == "two":
        return two_gaussians(cfg.n_samples, separation=cfg.separation)
    return three_gaussians(cfg.n_samples)


def seed_data(cfg: ExperimentConfig, seed) -> tuple[LabeledDataset, LabeledDataset]:
    """Training set and an independent held-out attack set for one seed."""
    spec = mixture_spec(cfg)
    train = gen_gaussian_mixture(spec.with_seed(int(seed), cfg.n_samples))
    test = gen_gaussian_mixture(spec.with_seed([int(seed), 1], cfg.n_test))
    return train, test


def architectures(n_classes, dim=2) -> list:
    """The three toy architectures with the input/output widths adapted."""
    return [(dim,) + a[1:-1] + (n_classes,) for a in TOY_ARCHITECTURES]


def _dataset_key(ds: LabeledDataset) -> str:
    h = hashlib.sha256()
    h.update(ds.X.tobytes())
    h.update(ds.y.tobytes())
    return h.hexdigest()


_MODEL_CACHE: dict = {}


def train_classifier(ds: LabeledDataset, arch, seed, cfg: ExperimentConfig) -> MlpClassifier:
    """Early-stopped classifier; memoised on (data, arch, seed, training config).

    The init seed mixes in a checksum of the architecture, so two identical
    architectures with the same seed give identical models.
    """
    arch = tuple(int(w) for w in arch)
    tc = cfg.train_config(int(seed))
    key = (_dataset_key(ds), arch, tc)
    if key not in _MODEL_CACHE:
        model = MlpClassifier.init(arch, seed=[int(seed), zlib.crc32(str(arch).encode())])
        _MODEL_CACHE[key] = early_stop_train(model, ds, tc).model
    return _MODEL_CACHE[key].copy()


def clear_model_cache():
    _MODEL_CACHE.clear()


def _seeds(cfg, seeds):
    return [int(s) for s in (cfg.seeds if seeds is None else seeds)]


def spearman(a, b) -> float:
    """Spearman rank correlation; nan when either input is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or np.all(a == a[0]) or np.all(b == b[0]):
        return float("nan")
    return float(spearmanr(a, b)[0])


def output_disagreement(models, x) -> np.ndarray:
    """Per-sample max over model pairs of the l-inf distance between softmax outputs."""
    probs = [softmax(forward(m, x)) for m in models]
    out = np.zeros(len(probs[0]))
    for a in range(len(probs)):
        for b in range(a + 1, len(probs)):
            out = np.maximum(out, np.abs(probs[a] - probs[b]).max(axis=1))
    return out


def tercile_means(values, keys) -> tuple[float, float]:
    """Mean of ``values`` over the top and the bottom third of ``keys``.

    Ties in ``keys`` are broken by position (stable sort).
    """
    order = np.argsort(keys, kind="stable")
    k = len(order) // 3
    if k == 0:
        raise InvalidConfigError("need at least three samples for terciles")
    return float(values[order[-k:]].mean()), float(values[order[:k]].mean())


def _binned_rows(seed, stat):
    return [[seed, k, lo, hi, n, m, s] for k, (lo, hi, n, m, s) in enumerate(stat.rows())]


BIN_HEADER = ["seed", "bin", "lo", "hi", "count", "mean", "std"]


# --------------------------------------------------------------------------
# consistency and difficulty
# --------------------------------------------------------------------------


def consistency_experiment(cfg: ExperimentConfig, archs=None, seeds=None) -> ExperimentReport:
    """Cross-model output disagreement against same-class local density."""
    seeds = _seeds(cfg, seeds)
    report = ExperimentReport("consistency", cfg.as_dict(), seeds)
    bins, terciles, samples = [], [], []
    for seed in seeds:
        ds, _ = seed_data(cfg, seed)
        use = architectures(ds.n_classes, ds.dim) if archs is None else archs
        if len(use) < 2:
            raise InvalidConfigError("need at least two architectures")
        models = [train_classifier(ds, a, seed, cfg) for a in use]
        diff = output_disagreement(models, ds.X)
        rho = DensityIndex.from_dataset(ds).densities_per_row(ds.y, ds.X, cfg.r)
        bins += _binned_rows(seed, binned_statistic(diff, rho, equal_width_edges(rho, cfg.bins)))
        top, bottom = tercile_means(diff, rho)
        terciles.append([seed, top, bottom, top < bottom])
        samples += [[seed, i, int(ds.y[i]), rho[i], diff[i]] for i in range(len(ds))]
    report.add_table("consistency_bins", BIN_HEADER, bins)
    report.add_table("consistency_terciles", ["seed", "top_mean", "bottom_mean", "win"], terciles)
    report.add_table("consistency_samples", ["seed", "sample_id", "label", "density", "diff"],
                     samples)
    report.summary = {"wins": int(sum(r[3] for r in terciles)), "n_seeds": len(seeds),
                      "r": cfg.r}
    return report


def difficulty_experiment(cfg: ExperimentConfig, arch=None, seeds=None) -> ExperimentReport:
    """Local risk, density and Loss+Gradnorm difficulty of every training sample."""
    seeds = _seeds(cfg, seeds)
    report = ExperimentReport("difficulty", cfg.as_dict(), seeds)
    t_rd, t_rr, t_dd, corr, samples = [], [], [], [], []
    for seed in seeds:
        ds, _ = seed_data(cfg, seed)
        use = architectures(ds.n_classes, ds.dim)[0] if arch is None else arch
        model = train_classifier(ds, use, seed, cfg)
        index = DensityIndex.from_dataset(ds)
        rho = index.densities_per_row(ds.y, ds.X, cfg.r)
        risk = local_risks(model, index, cfg.r)
        scores = score_samples(model, ds)
        dif = normalized_difficulty(scores)
        t_rd += _binned_rows(seed, binned_statistic(risk, dif, equal_width_edges(dif, cfg.bins)))
        t_rr += _binned_rows(seed, binned_statistic(risk, rho, equal_width_edges(rho, cfg.bins)))
        t_dd += _binned_rows(seed, binned_statistic(rho, dif, equal_width_edges(dif, cfg.bins)))
        s_risk = spearman(rho, risk)
        s_dif = spearman(dif, rho)
        corr.append([seed, s_risk, s_dif, s_risk < 0, s_dif < 0])
        samples += [[seed, i, int(ds.y[i]), rho[i], risk[i], scores.loss[i], scores.gradnorm[i],
                     dif[i]] for i in range(len(ds))]
    report.add_table("risk_vs_difficulty", BIN_HEADER, t_rd)
    report.add_table("risk_vs_density", BIN_HEADER, t_rr)
    report.add_table("density_vs_difficulty", BIN_HEADER, t_dd)
    report.add_table("difficulty_spearman",
                     ["seed", "spearman_density_risk", "spearman_difficulty_density",
                      "density_risk_negative", "difficulty_density_negative"], corr)
    report.add_table("difficulty_samples",
                     ["seed", "sample_id", "label", "density", "local_risk", "loss", "gradnorm",
                      "difficulty"], samples)
    report.summary = {"wins_density_risk": int(sum(r[3] for r in corr)),
                      "wins_difficulty_density": int(sum(r[4] for r in corr)),
                      "n_seeds": len(seeds), "r": cfg.r}
    return report


# --------------------------------------------------------------------------
# attacks
# --------------------------------------------------------------------------


def attack_pairs(labels, n_classes) -> tuple[np.ndarray, np.ndarray]:
    """Every (sample, target) pair with target != label, sample-major."""
    labels = np.asarray(labels)
    src = np.repeat(np.arange(len(labels)), n_classes - 1)
    tg = np.array([k for y in labels for k in range(n_classes) if k != y], dtype=np.int64)
    return src, tg


def random_anchors(surrogate, dataset, targets, rng) -> np.ndarray:
    """Surrogate logits of one uniformly drawn target-class sample per pair."""
    feats = forward(surrogate, dataset.X)
    out = np.empty((len(targets), feats.shape[1]))
    for k in range(dataset.n_classes):
        rows = np.flatnonzero(targets == k)
        pool = dataset.class_indices(k)
        out[rows] = feats[pool[rng.integers(len(pool), size=len(rows))]]
    return out


TABLE1_VARIANTS = ("ce", "random_anchor", "screened_anchor")


def table1_protocol(cfg: ExperimentConfig, surrogate_arch=None, victim_archs=None,
                    seeds=None) -> ExperimentReport:
    """CE vs random-anchor vs screened-anchor momentum attacks, scored by transfer."""
    seeds = _seeds(cfg, seeds)
    report = ExperimentReport("table1", cfg.as_dict(), seeds)
    rates, summary_rows = [], []
    for seed in seeds:
        ds, test = seed_data(cfg, seed)
        archs = architectures(ds.n_classes, ds.dim)
        s_arch = archs[0] if surrogate_arch is None else surrogate_arch
        v_archs = archs[1:] if victim_archs is None else victim_archs
        if len(v_archs) < 2:
            raise InvalidConfigError("need at least two victims")
        sur = train_classifier(ds, s_arch, seed, cfg)
        victims = [train_classifier(ds, a, seed, cfg) for a in v_archs]
        _, book = screen_dataset(sur, ds, cfg.q)
        src, tg = attack_pairs(test.y, ds.n_classes)
        x = test.X[src]
        rand = random_anchors(sur, ds, tg, np.random.default_rng([seed, 3]))
        setups = {"ce": (CE_TARGETED, None), "random_anchor": (ANCHOR_SQ, rand),
                  "screened_anchor": (ANCHOR_SQ, book.anchors[tg])}
        mean = {}
        for name, (kind, anc) in setups.items():
            res = momentum_iterative_attack(sur, x, tg, cfg.attack_config(kind), anc)
            wb = transfer_success_rate([sur], res)[0]
            bb = transfer_success_rate(victims, res)
            rates.append([seed, name, "surrogate:" + sur.name, True, wb])
            rates += [[seed, name, v.name, False, r] for v, r in zip(victims, bb)]
            mean[name] = float(bb.mean())
        ce, ra, sc = (mean[v] for v in TABLE1_VARIANTS)
        summary_rows.append([seed, ce, ra, sc, sc >= ra, sc >= ce, ra >= ce,
                             sc >= ra and sc >= ce, sc >= ra >= ce])
    report.add_table("table1_rates", ["seed", "variant", "victim", "white_box", "rate"], rates)
    header = ["seed", "ce", "random_anchor", "screened_anchor", "screened_ge_random",
              "screened_ge_ce", "random_ge_ce", "screened_best", "full_chain"]
    report.add_table("table1_seeds", header, summary_rows)
    report.summary = {name: int(sum(r[header.index(name)] for r in summary_rows))
                      for name in header[4:]}
    report.summary["n_seeds"] = len(seeds)
    return report


# --------------------------------------------------------------------------
# density shift
# --------------------------------------------------------------------------


@dataclass
class DensityShift:
    edges: np.ndarray
    clean_counts: np.ndarray
    adv_counts: np.ndarray
    clean_norm: np.ndarray = field(repr=False)
    adv_norm: np.ndarray = field(repr=False)
    normalizer: float = 0.0

    def mass(self, lo=SHIFT_MASS_FROM) -> tuple[int, int]:
        """Number of clean / adversarial samples with normalised density >= ``lo``."""
        return int(np.sum(self.clean_norm >= lo)), int(np.sum(self.adv_norm >= lo))

    def rows(self):
        return [[k, self.edges[k], self.edges[k + 1], int(c), int(a)]
                for k, (c, a) in enumerate(zip(self.clean_counts, self.adv_counts))]


def _per_sample_mean(values, sample_ids):
    if sample_ids is None:
        return values
    ids, inv = np.unique(np.asarray(sample_ids), return_inverse=True)
    return np.bincount(inv, weights=values) / np.bincount(inv)


def _counts_per_row(index, classes, queries, r):
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    out = np.zeros(len(queries))
    for k in np.unique(classes):
        rows = classes == k
        out[rows] = index.counts(k, queries[rows], r)
    return out


def density_shift(index: DensityIndex, x_clean, x_adv, targets, r, sample_ids=None
                  ) -> DensityShift:
    """Target-class density before and after perturbation, jointly normalised.

    Densities are averaged over targets per sample when ``sample_ids`` is
    given, divided by the largest value over both sets and counted into ten
    equal bins on ``[0, 1]``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    # the ball volume cancels in the joint normalisation, so raw counts suffice
    # (and stay finite where the volume itself overflows)
    clean = _per_sample_mean(_counts_per_row(index, targets, x_clean, r), sample_ids)
    adv = _per_sample_mean(_counts_per_row(index, targets, x_adv, r), sample_ids)
    top = float(max(clean.max(initial=0.0), adv.max(initial=0.0)))
    scale = top if top > 0 else 1.0
    cn, an = clean / scale, adv / scale
    nb = len(SHIFT_EDGES) - 1
    cc = np.bincount(bin_index(cn, SHIFT_EDGES), minlength=nb)
    ac = np.bincount(bin_index(an, SHIFT_EDGES), minlength=nb)
    return DensityShift(SHIFT_EDGES.copy(), cc, ac, cn, an, top)


SHIFT_HEADER = ["bin", "lo", "hi", "clean_count", "adv_count"]


def density_shift_eval(index: DensityIndex, result: AttackResult, r, sample_ids=None,
                       config=None) -> ExperimentReport:
    shift = density_shift(index, result.x_orig, result.x_adv, result.targets, r, sample_ids)
    report = ExperimentReport("density_shift", config or {"r": r}, [])
    report.add_table("density_shift", SHIFT_HEADER, shift.rows())
    clean_mass, adv_mass = shift.mass()
    report.summary = {"clean_mass": clean_mass, "adv_mass": adv_mass,
                      "normalizer": shift.normalizer, "n": int(len(shift.clean_norm)),
                      "shift_up": adv_mass > clean_mass}
    return report


# --------------------------------------------------------------------------
# q ablation
# --------------------------------------------------------------------------


def _cosine_rows(a, b):
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    return np.sum(a * b, axis=1) / np.maximum(na * nb, 1e-300)


def output_similarity(surrogate, victims, x) -> np.ndarray:
    """Per-sample cosine similarity of surrogate and victim logits, averaged over victims."""
    s = forward(surrogate, x)
    return np.mean([_cosine_rows(s, forward(v, x)) for v in victims], axis=0)


def screened_members(scores, q, n_classes, strict=True) -> np.ndarray:
    if q == "all":
        return np.sort(scores.sample_id)
    sel = screen(scores, thresholds(scores, int(q), n_classes), int(q), strict=strict)
    return np.sort(np.concatenate([sel.members[k] for k in sorted(sel.members)]))


def q_ablation(cfg: ExperimentConfig, q_values=(1, 2, 5, 10, 20, "all"), surrogate_arch=None,
               victim_archs=None, seeds=None, strict=True) -> ExperimentReport:
    """Mean surrogate/victim output similarity over the screened set, per q."""
    seeds = _seeds(cfg, seeds)
    report = ExperimentReport("qablation", cfg.as_dict() | {"q_values": list(q_values)}, seeds)
    per_seed = []
    table = {str(q): [] for q in q_values}
    for seed in seeds:
        ds, _ = seed_data(cfg, seed)
        archs = architectures(ds.n_classes, ds.dim)
        sur = train_classifier(ds, archs[0] if surrogate_arch is None else surrogate_arch,
                               seed, cfg)
        victims = [train_classifier(ds, a, seed, cfg)
                   for a in (archs[1:] if victim_archs is None else victim_archs)]
        sim = output_similarity(sur, victims, ds.X)
        scores = score_samples(sur, ds)
        for q in q_values:
            ids = screened_members(scores, q, ds.n_classes, strict)
            value = float(sim[ids].mean()) if len(ids) else float("nan")
            table[str(q)].append(value)
            per_seed.append([seed, str(q), len(ids), value])
    rows = [[q, float(np.mean(v)), float(np.std(v))] for q, v in table.items()]
    report.add_table("qablation_seeds", ["seed", "q", "n_screened", "mean_similarity"], per_seed)
    report.add_table("qablation", ["q", "mean", "std"], rows)
    numeric = [q for q in q_values if q != "all"]
    if numeric and "all" in q_values:
        small = str(min(numeric))
        report.summary = {"smallest_q": min(numeric),
                          "wins_small_vs_all": int(sum(a >= b for a, b in
                                                       zip(table[small], table["all"])))}
    report.summary["n_seeds"] = len(seeds)
    return report


# --------------------------------------------------------------------------
# ESMA end to end
# --------------------------------------------------------------------------


@dataclass
class EsmaRun:
    seed: int
    surrogate: MlpClassifier
    victims: list
    book: object
    pretrain: object
    generator: PerturbationGenerator
    loss_trace: np.ndarray
    esma: AttackResult
    iterative: AttackResult
    sample_ids: np.ndarray
    esma_rates: np.ndarray
    iterative_rates: np.ndarray
    within_budget: np.ndarray
    shift: DensityShift


def esma_seed_run(cfg: ExperimentConfig, seed) -> EsmaRun:
    """Screen, pretrain embeddings, train the generator and attack the held-out set."""
    seed = int(seed)
    ds, test = seed_data(cfg, seed)
    archs = architectures(ds.n_classes, ds.dim)
    sur = train_classifier(ds, archs[0], seed, cfg)
    victims = [train_classifier(ds, a, seed, cfg) for a in archs[1:]]
    _, book = screen_dataset(sur, ds, cfg.esma_q)
    init = EmbeddingTable.random(ds.n_classes, cfg.embed_dim, seed=[seed, 4])
    pre = pretrain_embeddings(init, class_prototypes(sur, ds), cfg.lambda1, cfg.lambda2,
                              steps=cfg.embed_steps, lr=cfg.embed_lr)
    G = PerturbationGenerator.init(ds.dim, pre.table, hidden=cfg.gen_hidden,
                                   n_blocks=cfg.gen_blocks, seed=[seed, 5])
    trained = train_esma(G, sur, ds, book, epochs=cfg.epochs, lr=cfg.gen_lr, epsilon=cfg.eps,
                         seed=seed)
    src, tg = attack_pairs(test.y, ds.n_classes)
    x = test.X[src]
    ea = esma_attack(trained.generator, x, tg, cfg.eps)
    ia = momentum_iterative_attack(sur, x, tg, cfg.attack_config(ANCHOR_SQ), book.anchors[tg])
    # (x + eps) - x can exceed eps by one ulp of x
    within = np.abs(ea.x_adv - ea.x_orig).max(axis=1) <= cfg.eps + BUDGET_SLACK
    shift = density_shift(DensityIndex.from_dataset(ds), x, ea.x_adv, tg, cfg.r, src)
    return EsmaRun(seed, sur, victims, book, pre, trained.generator, trained.loss_trace, ea, ia,
                   src, transfer_success_rate(victims, ea), transfer_success_rate(victims, ia),
                   within & np.all(np.isfinite(ea.x_adv), axis=1), shift)


def esma_experiment(cfg: ExperimentConfig, seeds=None, runs=None) -> ExperimentReport:
    """Aggregate :func:`esma_seed_run` over seeds (pre-computed ``runs`` are reused)."""
    seeds = _seeds(cfg, seeds)
    runs = {int(r.seed): r for r in (runs or [])}
    report = ExperimentReport("esma", cfg.as_dict(), seeds)
    rates, seeds_rows, shift_rows, trace_rows = [], [], [], []
    for seed in seeds:
        run = runs.get(seed) or esma_seed_run(cfg, seed)
        for v, re, ri in zip(run.victims, run.esma_rates, run.iterative_rates):
            rates.append([seed, "esma", v.name, re])
            rates.append([seed, "iterative_screened", v.name, ri])
        em, im = float(run.esma_rates.mean()), float(run.iterative_rates.mean())
        cm, am = run.shift.mass()
        seeds_rows.append([seed, em, im, em >= im, int(run.within_budget.sum()),
                           len(run.within_budget), cm, am, am > cm])
        shift_rows += [[seed] + row for row in run.shift.rows()]
        trace_rows += [[seed, e, v] for e, v in enumerate(run.loss_trace)]
    report.add_table("esma_rates", ["seed", "method", "victim", "rate"], rates)
    header = ["seed", "esma_mean", "iterative_mean", "esma_ge_iterative", "n_within_budget",
              "n_points", "clean_mass", "adv_mass", "shift_up"]
    report.add_table("esma_seeds", header, seeds_rows)
    report.add_table("esma_density_shift", ["seed"] + SHIFT_HEADER, shift_rows)
    report.add_table("esma_trace", ["seed", "epoch", "loss"], trace_rows)
    report.summary = {
        "wins_esma_ge_iterative": int(sum(r[3] for r in seeds_rows)),
        "wins_shift_up": int(sum(r[8] for r in seeds_rows)),
        "budget_fraction": (sum(r[4] for r in seeds_rows) / max(sum(r[5] for r in seeds_rows), 1)),
        "n_seeds": len(seeds),
    }
    return report
