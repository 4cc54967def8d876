"""MAPE metrics, the benchmark matrix, and the ablation runner.

MAPE is computed per lane and averaged across lanes for the overall
figure. The benchmark pits three model families against each other on
identical splits: one single-task model per lane ("lane_specific"), one
pooled single-task model with lane identity as an input feature ("mix"),
and the multi-task architecture ("multi_task"). The ablation runner
retrains the structural variants and drops auxiliary feature blocks one
at a time. Every cell runs several seeds and reports mean and spread;
failures are recorded per cell without aborting the matrix.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import data as data_mod
from . import model as model_mod
from . import train as train_mod
from .errors import DataError, DimensionError
from .seeding import derive_seed

FAMILIES = ("lane_specific", "mix", "multi_task")
STRUCT_VARIANTS = ("no_shared", "no_heads", "no_concat")


def mape_lane(preds, actuals) -> float:
    """Mean absolute percentage error of one lane, in percent."""
    preds = np.asarray(preds, dtype=float).ravel()
    actuals = np.asarray(actuals, dtype=float).ravel()
    if preds.shape != actuals.shape or preds.size == 0:
        raise DimensionError("mape needs matching nonempty vectors")
    if (actuals <= 0).any():
        raise DataError("MAPE undefined for nonpositive actual values")
    return float(np.mean(np.abs(actuals - preds) / actuals) * 100.0)


def mape_overall(lane_mapes) -> float:
    """Arithmetic mean of per-lane MAPEs."""
    lane_mapes = list(lane_mapes)
    if not lane_mapes:
        raise DimensionError("mape_overall needs at least one lane")
    return float(np.mean(lane_mapes))


@dataclass
class EvalReport:
    """Per-lane and overall MAPE for one trained model on one test set."""

    model: str
    scenario: str
    index_kind: str
    lane_mapes: list
    overall: float
    lane_counts: list

    def to_dict(self) -> dict:
        return {
            "model": self.model, "scenario": self.scenario,
            "index_kind": self.index_kind,
            "lane_mapes": list(self.lane_mapes), "overall": self.overall,
            "lane_counts": list(self.lane_counts),
        }


def make_report(model_name, scenario, index_kind, preds, actuals,
                counts=None) -> EvalReport:
    preds = np.asarray(preds, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    lanes = [mape_lane(preds[:, n], actuals[:, n])
             for n in range(preds.shape[1])]
    if counts is None:
        counts = [int(actuals.shape[0])] * preds.shape[1]
    return EvalReport(model=model_name, scenario=str(scenario),
                      index_kind=index_kind, lane_mapes=lanes,
                      overall=mape_overall(lanes), lane_counts=list(counts))


def predict(params, config: model_mod.ArchConfig, samples) -> np.ndarray:
    """Predictions on the raw 0-100 scale, one row per sample."""
    series = np.stack([s.series for s in samples]) / train_mod.INDEX_SCALE
    aux = np.stack([s.aux for s in samples])
    out, _ = model_mod.forward(series, aux, params, config)
    return out.preds * train_mod.INDEX_SCALE


def evaluate_model(params, config, samples, model_name="model",
                   scenario="?", index_kind="?") -> EvalReport:
    if not samples:
        raise DataError("cannot evaluate on an empty sample set")
    preds = predict(params, config, samples)
    actuals = np.stack([s.targets for s in samples])
    return make_report(model_name, scenario, index_kind, preds, actuals)


def _single_lane_samples(samples, lane_idx):
    return [replace(s, targets=s.targets[lane_idx : lane_idx + 1])
            for s in samples]


def pool_for_mix(samples, num_lanes, encoder, with_aux=True):
    """Expand each sample into per-lane rows with a lane one-hot appended.

    Each output sample has the same series, a single-lane target, and an
    aux vector carrying lane identity (plus the road features unless
    with_aux is False).
    """
    exclude = () if with_aux else data_mod.FEATURE_BLOCKS
    spec = data_mod.EncoderSpec(
        vocabs={} if not with_aux else dict(encoder.vocabs),
        stats={} if not with_aux else dict(encoder.stats),
        excluded=tuple(exclude), lane_vocab=num_lanes)
    pooled = []
    for s in samples:
        for n in range(num_lanes):
            pooled.append(replace(
                s, targets=s.targets[n : n + 1],
                aux=data_mod.encode(s.attrs, spec, lane=n + 1)))
    return pooled, spec


def _strip_aux(samples):
    empty = np.zeros(0)
    return [replace(s, aux=empty) for s in samples]


def _make_arch(num_lanes, aux_dim, variant="full", overrides=None):
    overrides = dict(overrides or {})
    overrides.pop("num_lanes", None)
    overrides.pop("aux_dim", None)
    overrides.setdefault("variant", variant)
    return model_mod.ArchConfig(num_lanes=num_lanes, aux_dim=aux_dim,
                                **overrides)


def _make_tcfg(plan, seed):
    return train_mod.TrainConfig(
        learning_rate=plan.learning_rate, batch_size=plan.batch_size,
        epochs=plan.epochs, optimizer=plan.optimizer, seed=seed,
        clip_norm=plan.clip_norm)


@dataclass
class BenchmarkPlan:
    """What to run: the cross of scenarios, indices, families, and seeds."""

    scenarios: tuple = (2, 3, 4)
    indices: tuple = data_mod.INDEX_KINDS
    families: tuple = FAMILIES
    seeds: tuple = (0, 1, 2)
    root_seed: int = 0
    n_segments: int | None = None   # None: per-scenario defaults
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.001
    optimizer: str = "adam"
    clip_norm: float | None = None
    ratio: float = 0.7
    epsilon_rise: float = 2.0
    baseline_aux: bool = True       # whether baselines see the road features
    arch_overrides: dict = field(default_factory=dict)

    def segments_for(self, num_lanes) -> int:
        if self.n_segments is not None:
            return self.n_segments
        return data_mod.DEFAULT_SEGMENTS[num_lanes]


@dataclass
class CellResult:
    family: str
    scenario: str
    index_kind: str
    reports: list = field(default_factory=list)   # EvalReport per good seed
    errors: list = field(default_factory=list)    # (seed, message) per failure

    @property
    def ok(self) -> bool:
        return bool(self.reports) and not self.errors

    @property
    def mean_overall(self):
        if not self.reports:
            return None
        return float(np.mean([r.overall for r in self.reports]))

    @property
    def std_overall(self):
        if not self.reports:
            return None
        return float(np.std([r.overall for r in self.reports]))

    @property
    def seed_overalls(self):
        return [r.overall for r in self.reports]


@dataclass
class BenchmarkMatrix:
    plan: BenchmarkPlan
    cells: dict = field(default_factory=dict)  # (family, scenario, index) -> CellResult

    def cell(self, family, scenario, index_kind) -> CellResult:
        return self.cells[(family, str(scenario), index_kind)]

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.cells.values() if not c.ok)

    def to_dict(self) -> dict:
        out = {}
        for (family, scenario, kind), cell in self.cells.items():
            out.setdefault(family, {}).setdefault(scenario, {})[kind] = {
                "mean_overall": cell.mean_overall,
                "std_overall": cell.std_overall,
                "seed_overalls": cell.seed_overalls,
                "reports": [r.to_dict() for r in cell.reports],
                "errors": [f"seed {s}: {m}" for s, m in cell.errors],
            }
        return out

    def to_csv(self) -> str:
        lines = ["family,scenario,index,mean_overall,std_overall,n_seeds,status"]
        for (family, scenario, kind), cell in sorted(self.cells.items()):
            mean = "" if cell.mean_overall is None else repr(cell.mean_overall)
            std = "" if cell.std_overall is None else repr(cell.std_overall)
            status = "ok" if cell.ok else "failed"
            lines.append(f"{family},{scenario},{kind},{mean},{std},"
                         f"{len(cell.reports)},{status}")
        return "\n".join(lines) + "\n"

    def to_long_rows(self):
        """Plot-ready rows: (model, scenario, index, lane, mape)."""
        rows = []
        for (family, scenario, kind), cell in sorted(self.cells.items()):
            if not cell.reports:
                continue
            n_lanes = len(cell.reports[0].lane_mapes)
            for lane in range(n_lanes):
                mape = float(np.mean([r.lane_mapes[lane] for r in cell.reports]))
                rows.append((family, scenario, kind, lane + 1, mape))
        return rows

    def to_long_csv(self) -> str:
        lines = ["model,scenario,index,lane,mape"]
        for model, scenario, kind, lane, mape in self.to_long_rows():
            lines.append(f"{model},{scenario},{kind},{lane},{repr(mape)}")
        return "\n".join(lines) + "\n"


def _train_family(family, prep, plan, scenario, kind, seed):
    """Train one family on a prepared dataset; returns its EvalReport."""
    train_set = prep.train if plan.baseline_aux or family == "multi_task" \
        else _strip_aux(prep.train)
    test_set = prep.test if plan.baseline_aux or family == "multi_task" \
        else _strip_aux(prep.test)
    if not test_set:
        raise DataError("empty test split for this cell")
    N = prep.num_lanes
    label = f"{N}lane"

    if family == "multi_task":
        arch = _make_arch(N, train_set[0].aux.shape[0], "full",
                          plan.arch_overrides)
        tcfg = _make_tcfg(plan, derive_seed(plan.root_seed, "train", family,
                                            label, kind, seed))
        result = train_mod.fit(train_set, None, arch, tcfg)
        return evaluate_model(result.params, arch, test_set,
                              "multi_task", label, kind)

    if family == "lane_specific":
        preds = np.empty((len(test_set), N))
        for n in range(N):
            tr = _single_lane_samples(train_set, n)
            te = _single_lane_samples(test_set, n)
            arch = _make_arch(1, tr[0].aux.shape[0], "full",
                              plan.arch_overrides)
            tcfg = _make_tcfg(plan, derive_seed(plan.root_seed, "train", family,
                                                label, kind, seed, n))
            result = train_mod.fit(tr, None, arch, tcfg)
            preds[:, n] = predict(result.params, arch, te).ravel()
        actuals = np.stack([s.targets for s in test_set])
        return make_report("lane_specific", label, kind, preds, actuals)

    if family == "mix":
        pooled_train, spec = pool_for_mix(train_set, N, prep.encoder,
                                          with_aux=plan.baseline_aux)
        pooled_test, _ = pool_for_mix(test_set, N, prep.encoder,
                                      with_aux=plan.baseline_aux)
        arch = _make_arch(1, pooled_train[0].aux.shape[0], "full",
                          plan.arch_overrides)
        tcfg = _make_tcfg(plan, derive_seed(plan.root_seed, "train", family,
                                            label, kind, seed))
        result = train_mod.fit(pooled_train, None, arch, tcfg)
        flat = predict(result.params, arch, pooled_test).ravel()
        preds = flat.reshape(len(test_set), N)  # pooling order: sample-major
        actuals = np.stack([s.targets for s in test_set])
        return make_report("mix", label, kind, preds, actuals)

    raise DataError(f"unknown model family {family!r}")


def _prepare_cell(plan, num_lanes, kind, seed, exclude=()):
    records, _ = data_mod.synth_generate(
        num_lanes, plan.segments_for(num_lanes),
        seed=derive_seed(plan.root_seed, "synth", num_lanes, seed))
    return data_mod.prepare_dataset(
        records, kind, num_lanes=num_lanes,
        split_seed=derive_seed(plan.root_seed, "split", num_lanes, kind, seed),
        ratio=plan.ratio, epsilon_rise=plan.epsilon_rise, exclude=exclude)


def run_benchmark(plan: BenchmarkPlan) -> BenchmarkMatrix:
    """Train every (family, scenario, index) cell across the plan's seeds.

    Identical data, split, and seeds per cell column; per-cell failures
    are captured and the matrix is still returned.
    """
    matrix = BenchmarkMatrix(plan=plan)
    for family in plan.families:
        for scenario in plan.scenarios:
            label = f"{data_mod.norm_scenario(scenario)}lane"
            for kind in plan.indices:
                matrix.cells[(family, label, kind)] = CellResult(
                    family=family, scenario=label, index_kind=kind)
    for scenario in plan.scenarios:
        num_lanes = data_mod.norm_scenario(scenario)
        label = f"{num_lanes}lane"
        for kind in plan.indices:
            for seed in plan.seeds:
                try:
                    prep = _prepare_cell(plan, num_lanes, kind, seed)
                except Exception as err:  # cell column unusable
                    for family in plan.families:
                        matrix.cells[(family, label, kind)].errors.append(
                            (seed, f"prepare: {err}"))
                    continue
                for family in plan.families:
                    cell = matrix.cells[(family, label, kind)]
                    try:
                        cell.reports.append(_train_family(
                            family, prep, plan, scenario, kind, seed))
                    except Exception as err:
                        cell.errors.append((seed, str(err)))
    return matrix


@dataclass
class AblationRow:
    name: str                 # "full", a variant, or "drop:<feature>"
    group: str                # "structure" or "feature"
    index_kind: str
    seed_overalls: list
    mean_overall: float
    std_overall: float
    deltas: list              # per-seed overall minus full's overall
    delta_mean: float
    delta_std: float


@dataclass
class AblationReport:
    scenario: str
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def row(self, name, index_kind) -> AblationRow:
        for r in self.rows:
            if r.name == name and r.index_kind == index_kind:
                return r
        raise KeyError((name, index_kind))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "rows": [vars(r).copy() for r in self.rows],
            "errors": list(self.errors),
        }

    def to_csv(self) -> str:
        lines = ["name,group,index,mean_overall,std_overall,"
                 "delta_vs_full_mean,delta_vs_full_std"]
        for r in self.rows:
            lines.append(
                f"{r.name},{r.group},{r.index_kind},{repr(r.mean_overall)},"
                f"{repr(r.std_overall)},{repr(r.delta_mean)},{repr(r.delta_std)}")
        return "\n".join(lines) + "\n"


@dataclass
class AblationPlan:
    scenario: int = 4
    indices: tuple = data_mod.INDEX_KINDS
    seeds: tuple = (0, 1, 2)
    root_seed: int = 0
    n_segments: int | None = None
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.001
    optimizer: str = "adam"
    clip_norm: float | None = None
    ratio: float = 0.7
    epsilon_rise: float = 2.0
    features: tuple = data_mod.FEATURE_BLOCKS
    variants: tuple = STRUCT_VARIANTS
    arch_overrides: dict = field(default_factory=dict)

    def segments_for(self, num_lanes) -> int:
        if self.n_segments is not None:
            return self.n_segments
        return data_mod.DEFAULT_SEGMENTS[num_lanes]

def _train_multitask(prep, plan, kind, seed, variant="full", tag="full"):
    arch = _make_arch(prep.num_lanes, prep.train[0].aux.shape[0], variant,
                      plan.arch_overrides)
    tcfg = _make_tcfg(plan, derive_seed(plan.root_seed, "ablate", tag,
                                        kind, seed))
    result = train_mod.fit(prep.train, None, arch, tcfg)
    return evaluate_model(result.params, arch, prep.test, tag,
                          f"{prep.num_lanes}lane", kind).overall


def run_ablation(plan: AblationPlan) -> AblationReport:
    """Structural and feature ablations against the full model.

    Per index: retrains the full model, the three structural variants,
    and the full model minus each auxiliary feature block, on identical
    data per seed. Deltas are paired per seed against the full run.
    """
    num_lanes = data_mod.norm_scenario(plan.scenario)
    report = AblationReport(scenario=f"{num_lanes}lane")
    names = [("full", "structure", None)]
    names += [(v, "structure", None) for v in plan.variants]
    names += [(f"drop:{feat}", "feature", feat) for feat in plan.features]

    for kind in plan.indices:
        overalls = {name: [] for name, _, _ in names}
        for seed in plan.seeds:
            preps = {}
            try:
                preps[()] = _prepare_cell(plan, num_lanes, kind, seed)
                for name, group, feat in names:
                    if feat is not None:
                        preps[(feat,)] = _prepare_cell(plan, num_lanes, kind,
                                                       seed, exclude=(feat,))
            except Exception as err:
                report.errors.append(f"{kind} seed {seed} prepare: {err}")
                continue
            for name, group, feat in names:
                try:
                    prep = preps[() if feat is None else (feat,)]
                    variant = name if group == "structure" and name != "full" \
                        else "full"
                    overalls[name].append(_train_multitask(
                        prep, plan, kind, seed, variant=variant, tag=name))
                except Exception as err:
                    report.errors.append(f"{kind} {name} seed {seed}: {err}")
        full = overalls["full"]
        for name, group, feat in names:
            vals = overalls[name]
            if not vals:
                continue
            deltas = [v - f for v, f in zip(vals, full)] if full else []
            report.rows.append(AblationRow(
                name=name, group=group, index_kind=kind,
                seed_overalls=list(vals),
                mean_overall=float(np.mean(vals)),
                std_overall=float(np.std(vals)),
                deltas=deltas,
                delta_mean=float(np.mean(deltas)) if deltas else 0.0,
                delta_std=float(np.std(deltas)) if deltas else 0.0))
    return report
