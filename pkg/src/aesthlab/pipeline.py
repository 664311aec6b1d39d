"""End-to-end experiment: ingest, split, train, evaluate, explain, report.

Seed rule: every stochastic component gets
``derive_seed(root, name) = SeedSequence([root, crc32(name)]).generate_state(1)[0]``
with ``name`` one of "split", "model/<kind>", "background", "sampling" or
"report". Nothing else draws random numbers.
"""
from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import os
import tempfile
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import plots
from .errors import IncompatibleExplainMethod, MissingInput, UnknownKind
from .metrics import (
    LinearModel,
    attribute_correlations,
    compute_metrics,
    fit_ols,
    scatter_series,
)
from .mlp import MlpConfig, fit_mlp
from .models import MODEL_KINDS, load_model, model_to_dict, predict
from .shapley import (
    ENUMERATE_ALL,
    BackgroundSet,
    PredictOracle,
    Sample,
    dependence_series,
    explain,
    full_interaction_matrix,
    kmeans_summarize,
    read_attributions_csv,
    summary_ranking,
    write_attributions_csv,
    write_matrix_csv,
)
from .svr import KernelSpec, SvrParams, fit_svr, linear_weights
from .tabular import (
    ADAPTERS,
    LabeledDataset,
    SplitSpec,
    adapt_eva,
    attribute_distribution,
    load_eva_votes,
    load_table,
    split_dataset,
    write_table,
)
from .trees import BoostParams, ForestParams, fit_gbt, fit_random_forest

log = logging.getLogger(__name__)

TREE_KINDS = ("rf", "gbt")
EXPLAIN_METHODS = ("exact", "kernel", "tree")
COMPARE_KINDS = ("rf", "gbt", "svr", "mlp", "ols")
REPORT_KINDS = ("summary", "dependence", "interactions", "correlations", "scatter", "distribution")
OUT_ENV = "AESTHLAB_OUT"


def derive_seed(root: int, name: str) -> int:
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class ExperimentConfig:
    data: str | None = None
    schema: str = "generic"
    split: str = "fraction:0.8"
    model: str = "svr"
    model_params: dict = field(default_factory=dict)
    explain: str | None = None  # default: tree for rf/gbt, kernel otherwise
    background: str = "kmeans:3"  # kmeans:K | all | sample:N
    kernel_sampling: str = ENUMERATE_ALL  # or sample:M
    explain_limit: int | None = None  # explain only the first N test rows
    seed: int = 0
    out: str | None = None
    format: str = "csv"
    run_name: str | None = None

    def resolved(self) -> "ExperimentConfig":
        cfg = replace(self, model_params=dict(self.model_params))
        if cfg.explain is None:
            cfg.explain = "tree" if cfg.model in TREE_KINDS else "kernel"
        if cfg.out is None:
            cfg.out = os.environ.get(OUT_ENV, "runs")
        return cfg

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise UnknownKind(f"model {self.model!r} not in {MODEL_KINDS}")
        if self.explain not in EXPLAIN_METHODS:
            raise UnknownKind(f"explain method {self.explain!r} not in {EXPLAIN_METHODS}")
        if self.explain == "tree" and self.model not in TREE_KINDS:
            raise IncompatibleExplainMethod(f"tree explanations need rf or gbt, not {self.model}")
        if self.data is None:
            raise MissingInput("no --data given")
        if not Path(self.data).exists():
            raise MissingInput(f"data file {self.data} not found")

    def to_dict(self) -> dict:
        return asdict(self)

    def provenance(self) -> dict:
        """Config as persisted in a run: where the run lives is left out, so two
        runs of one experiment produce identical files."""
        return {**asdict(self), "out": None, "run_name": None}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UnknownKind(f"unknown config keys {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------- file helpers


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary sibling path; rename it onto ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> Path:
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")
    return Path(path)


def write_json(path, obj) -> Path:
    return write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_rows(path, header, rows) -> Path:
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return Path(path)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(run_dir: Path, config: ExperimentConfig | None = None) -> Path:
    files = sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "files": {str(p.relative_to(run_dir)): sha256(p) for p in files},
        "config": config.provenance() if config else None,
    }
    return write_json(run_dir / "manifest.json", manifest)


# ---------------------------------------------------------------- stages


def load_dataset(path, schema: str = "generic") -> LabeledDataset:
    """Canonical CSV, adapted per schema. EVA accepts per-rater vote files
    (an ``image_id`` column) or an already averaged table."""
    path = Path(path)
    if schema == "eva":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline()
        if "image_id" in header.split(","):
            return adapt_eva(load_eva_votes(path))
    data = load_table(path, schema if schema in ("generic", "eva") else "generic")
    if schema in ADAPTERS:
        data = ADAPTERS[schema](data)
    return data


def _dataclass_update(cls, overrides: dict):
    known = {f.name for f in fields(cls)}
    bad = set(overrides) - known
    if bad:
        raise UnknownKind(f"unknown {cls.__name__} fields {sorted(bad)}")
    return cls(**overrides)


def model_settings(kind: str, overrides: dict):
    """Hyperparameter object for ``kind`` with the default settings plus overrides."""
    if kind == "rf":
        return _dataclass_update(ForestParams, overrides)
    if kind == "gbt":
        return _dataclass_update(BoostParams, overrides)
    if kind in ("svr", "svr-linear"):
        extra = dict(overrides)
        gamma = extra.pop("gamma", "scale")
        kernel = KernelSpec("linear") if kind == "svr-linear" else KernelSpec("rbf", gamma)
        return kernel, _dataclass_update(SvrParams, extra)
    if kind == "mlp":
        return _dataclass_update(MlpConfig, overrides)
    if kind == "ols":
        if overrides:
            raise UnknownKind("ols takes no parameters")
        return None
    raise UnknownKind(f"unknown model kind {kind!r}")


def train_model(kind: str, train: LabeledDataset, overrides: dict | None = None, seed: int = 0):
    settings = model_settings(kind, overrides or {})
    if kind == "rf":
        return fit_random_forest(train, settings, seed)
    if kind == "gbt":
        return fit_gbt(train, settings, seed)
    if kind in ("svr", "svr-linear"):
        kernel, params = settings
        return fit_svr(train, kernel, params, seed)
    if kind == "mlp":
        return fit_mlp(train, replace(settings, seed=seed))
    return fit_ols(train)


def make_background(spec: str, train: LabeledDataset, seed: int) -> BackgroundSet:
    kind, _, arg = spec.partition(":")
    if kind == "kmeans":
        return kmeans_summarize(train.rows, int(arg or 3), seed)
    if kind == "all":
        return BackgroundSet.uniform(train.rows)
    if kind == "sample":
        m = min(int(arg), train.n)
        idx = np.sort(np.random.default_rng(seed).choice(train.n, size=m, replace=False))
        return BackgroundSet.uniform(train.rows[idx])
    raise UnknownKind(f"unknown background spec {spec!r}")


def _sampling(spec: str, seed: int):
    if spec == ENUMERATE_ALL:
        return ENUMERATE_ALL
    kind, _, arg = spec.partition(":")
    if kind == "sample":
        return Sample(int(arg), seed)
    raise UnknownKind(f"unknown kernel sampling {spec!r}")


def _run_dir(cfg: ExperimentConfig) -> Path:
    root = Path(cfg.out)
    if cfg.run_name:
        path = root / cfg.run_name
        path.mkdir(parents=True, exist_ok=True)
        return path
    digest = hashlib.sha256(json.dumps(cfg.provenance(), sort_keys=True).encode()).hexdigest()[:8]
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    base = root / f"{cfg.model}-{stamp}-{digest}"
    path, n = base, 1
    while True:
        try:
            path.mkdir(parents=True)
            return path
        except FileExistsError:
            n += 1
            path = Path(f"{base}-{n}")


def _coefficients(model, names):
    if isinstance(model, LinearModel):
        w, b = model.coefficients, model.intercept
    else:
        w, b = linear_weights(model)
    return {"intercept": float(b), "coefficients": {n: float(c) for n, c in zip(names, w)}}


def stage_train(cfg: ExperimentConfig, run_dir: Path) -> dict:
    data = load_dataset(cfg.data, cfg.schema)
    split = split_dataset(data, SplitSpec.parse(cfg.split, derive_seed(cfg.seed, "split")))
    if split.test.n == 0:
        raise MissingInput(f"split {cfg.split} leaves no test rows")
    model = train_model(cfg.model, split.train, cfg.model_params, derive_seed(cfg.seed, f"model/{cfg.model}"))
    paths = {}
    for name in ("train", "val", "test"):
        part = getattr(split, name)
        if part is not None:
            with atomic_path(run_dir / f"{name}.csv") as tmp:
                write_table(part, tmp)
            paths[name] = run_dir / f"{name}.csv"
    paths["split"] = write_json(run_dir / "split.json", {
        "schema_tag": data.schema_tag,
        "split": cfg.split,
        "seed": derive_seed(cfg.seed, "split"),
        "rater_counts": data.metadata.get("rater_counts"),
        "low_vote_images": data.metadata.get("low_vote_images"),
        "indices": {
            "train": split.train_idx.tolist(),
            "val": None if split.val_idx is None else split.val_idx.tolist(),
            "test": split.test_idx.tolist(),
        },
    })
    payload = model_to_dict(model)
    payload["feature_names"] = list(data.feature_names)
    payload["model_params"] = cfg.model_params
    if cfg.model == "svr-linear" or cfg.model == "ols":
        paths["coefficients"] = write_json(run_dir / "coefficients.json", _coefficients(model, data.feature_names))
    paths["model"] = write_text(run_dir / "model.json", json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")
    write_json(run_dir / "config.json", cfg.provenance())
    return paths


def _load_run(run_dir: Path):
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise MissingInput(f"{run_dir} has no config.json (run `train` first)")
    cfg = ExperimentConfig.from_dict(json.loads(cfg_path.read_text(encoding="utf-8")))
    if not (run_dir / "model.json").exists():
        raise MissingInput(f"{run_dir} has no model.json")
    return cfg, load_model(run_dir / "model.json")


def stage_eval(run_dir: Path) -> dict:
    cfg, model = _load_run(run_dir)
    test = load_table(run_dir / "test.csv", cfg.schema if cfg.schema != "generic" else "generic")
    report = compute_metrics(test.targets, predict(model, test.rows))
    out = {"metrics": write_json(run_dir / "metrics.json", report.to_dict())}
    if (run_dir / "val.csv").exists():
        val = load_table(run_dir / "val.csv")
        out["val_metrics"] = write_json(run_dir / "val_metrics.json",
                                        compute_metrics(val.targets, predict(model, val.rows)).to_dict())
    return out


def stage_explain(run_dir: Path) -> dict:
    cfg, model = _load_run(run_dir)
    train = load_table(run_dir / "train.csv")
    test = load_table(run_dir / "test.csv")
    X = test.rows if cfg.explain_limit is None else test.rows[: cfg.explain_limit]
    background = None
    if cfg.explain != "tree":
        background = make_background(cfg.background, train, derive_seed(cfg.seed, "background"))
    atts = explain(model, X, cfg.explain, background, _sampling(cfg.kernel_sampling, derive_seed(cfg.seed, "sampling")))
    paths = {}
    with atomic_path(run_dir / "attributions.csv") as tmp:
        write_attributions_csv(atts, test.feature_names, tmp)
    paths["attributions"] = run_dir / "attributions.csv"
    ranking = summary_ranking(atts, test.feature_names)
    paths["ranking"] = write_rows(run_dir / "ranking.csv", ["feature", "mean_abs_shap"], ranking)
    if background is not None:
        paths["background"] = write_rows(
            run_dir / "background.csv", [*test.feature_names, "weight"],
            [[*map(float, p), float(w)] for p, w in zip(background.points, background.weights)],
        )
    return paths


def run_experiment(config: ExperimentConfig) -> dict:
    """Train on the train split, then write model, test metrics, per-instance
    attributions and the importance ranking into a fresh run directory."""
    cfg = config.resolved()
    cfg.validate()
    run_dir = _run_dir(cfg)
    log.info("run directory %s", run_dir)
    paths = {"run_dir": run_dir}
    paths.update(stage_train(cfg, run_dir))
    paths.update(stage_eval(run_dir))
    paths.update(stage_explain(run_dir))
    paths["manifest"] = write_manifest(run_dir, cfg)
    return paths


def compare(config: ExperimentConfig, kinds=COMPARE_KINDS, n_jobs: int = 1) -> dict:
    """Train every model kind on the same split and tabulate test metrics.

    ``model_params`` here maps a kind to its overrides, e.g. ``{"rf": {"n_trees": 50}}``.
    """
    cfg = config.resolved()
    if cfg.data is None:
        raise MissingInput("no --data given")
    if not Path(cfg.data).exists():
        raise MissingInput(f"data file {cfg.data} not found")
    data = load_dataset(cfg.data, cfg.schema)
    split = split_dataset(data, SplitSpec.parse(cfg.split, derive_seed(cfg.seed, "split")))
    if split.test.n == 0:
        raise MissingInput(f"split {cfg.split} leaves no test rows")

    def one(kind):
        model = train_model(kind, split.train, cfg.model_params.get(kind, {}), derive_seed(cfg.seed, f"model/{kind}"))
        return kind, compute_metrics(split.test.targets, predict(model, split.test.rows))

    if n_jobs == 1:
        results = [one(k) for k in kinds]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(one)(k) for k in kinds)
    out_dir = Path(cfg.out) / (cfg.run_name or f"compare-{time.strftime('%Y%m%dT%H%M%SZ', time.gmtime())}")
    out_dir.mkdir(parents=True, exist_ok=True)
    header = ["model", "r2", "mae", "mse", "rmse", "spearman_rho", "spearman_p"]
    rows = [[k, m.r2, m.mae, m.mse, m.rmse, m.spearman_rho, "" if m.spearman_p is None else m.spearman_p]
            for k, m in results]
    paths = {"run_dir": out_dir, "comparison": write_rows(out_dir / "comparison.csv", header, rows)}
    paths["comparison_json"] = write_json(out_dir / "comparison.json", {k: m.to_dict() for k, m in results})
    paths["manifest"] = write_manifest(out_dir, cfg)
    return paths


# ---------------------------------------------------------------- reports


def _feature_index(token: str, names) -> int:
    if token in names:
        return list(names).index(token)
    try:
        return int(token)
    except ValueError:
        raise UnknownKind(f"unknown feature {token!r}") from None


def _need(path: Path) -> Path:
    if not Path(path).exists():
        raise MissingInput(f"required input {path} not found")
    return Path(path)


def emit_report(kind: str, run_dir=None, data=None, out_dir=None, fmt: str = "csv", limit: int | None = None,
                schema: str = "generic") -> Path:
    """Write the series behind one figure. Returns the written path.

    ``kind`` is ``summary``, ``dependence:i:j``, ``interactions``,
    ``correlations``, ``scatter:i`` or ``distribution``; features may be given
    by index or name. csv/json are the normative outputs; svg is a static plot.
    """
    name, *args = kind.split(":")
    if name not in REPORT_KINDS:
        raise UnknownKind(f"unknown report kind {kind!r}")
    if fmt not in ("csv", "json", "svg"):
        raise UnknownKind(f"unknown format {fmt!r}")
    run_dir = Path(run_dir) if run_dir else None
    if out_dir is None:
        if run_dir is None:
            raise MissingInput("need --run or --out")
        out_dir = run_dir / "reports"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if name in ("correlations", "scatter", "distribution"):
        if data is None:
            if run_dir is None:
                raise MissingInput(f"{name} needs --data or --run")
            cfg, _ = _load_run(run_dir)
            data, schema = cfg.data, cfg.schema
        dataset = load_dataset(_need(Path(data)), schema)
        if name == "correlations":
            rep = attribute_correlations(dataset)
            rows = [[n, r, "" if p is None else p] for n, r, p in zip(rep.feature_names, rep.rho, rep.p)]
            rows.sort(key=lambda r: (np.isnan(r[1]), -r[1] if not np.isnan(r[1]) else 0.0))
            return _emit(out_dir / f"correlations.{fmt}", ["feature", "rho", "p"], rows, fmt,
                         lambda p: plots.bar_chart(p, [r[0] for r in rows], [r[1] for r in rows], "Spearman rho"))
        if name == "scatter":
            if not args:
                raise UnknownKind("scatter needs a feature: scatter:i")
            i = _feature_index(args[0], dataset.feature_names)
            pairs = scatter_series(dataset, i)
            fname = dataset.feature_names[i]
            return _emit(out_dir / f"scatter_{fname}.{fmt}", [fname, "overall"], pairs, fmt,
                         lambda p: plots.scatter(p, [a for a, _ in pairs], [b for _, b in pairs], fname, "overall"))
        dist = attribute_distribution(dataset)
        return _emit(out_dir / f"distribution.{fmt}", ["feature", "negative", "null", "positive"], dist.as_rows(),
                     fmt, lambda p: plots.distribution(p, dist))

    if run_dir is None:
        raise MissingInput(f"{name} needs --run")
    if name in ("summary", "dependence"):
        names, atts = read_attributions_csv(_need(run_dir / "attributions.csv"))
        if name == "summary":
            ranking = summary_ranking(atts, names)
            X = None
            if fmt == "svg" and (run_dir / "test.csv").exists():
                X = load_table(run_dir / "test.csv").rows[: len(atts)]
            return _emit(out_dir / f"summary.{fmt}", ["feature", "mean_abs_shap"], ranking, fmt,
                         lambda p: plots.beeswarm(p, names, np.array([a.phis for a in atts]), X,
                                                  seed=derive_seed(0, "report")))
        if len(args) != 2:
            raise UnknownKind("dependence needs two features: dependence:i:j")
        test = load_table(_need(run_dir / "test.csv"))
        i, j = (_feature_index(a, names) for a in args)
        series = dependence_series(atts, test.rows[: len(atts)], i, j)
        header = [names[i], f"shap_{names[i]}", f"color_{names[j]}"]
        return _emit(out_dir / f"dependence_{names[i]}_{names[j]}.{fmt}", header, series.points, fmt,
                     lambda p: plots.dependence(p, series, names[i], names[j]))

    # interactions
    cfg, model = _load_run(run_dir)
    train = load_table(_need(run_dir / "train.csv"))
    test = load_table(_need(run_dir / "test.csv"))
    X = test.rows if limit is None else test.rows[:limit]
    background = make_background(cfg.background, train, derive_seed(cfg.seed, "background"))
    oracle = PredictOracle.for_model(model)
    mats = [full_interaction_matrix(oracle, x, background) for x in X]
    names = list(test.feature_names)
    if fmt == "csv":
        target = out_dir / "interactions"
        target.mkdir(exist_ok=True)
        for r, m in enumerate(mats):
            with atomic_path(target / f"instance_{r}.csv") as tmp:
                write_matrix_csv(m.values, names, tmp)
        return target
    if fmt == "json":
        return write_json(out_dir / "interactions.json", {
            "features": names,
            "instances": [{"instance_id": r, "base_value": m.base_value, "matrix": m.values.tolist()}
                          for r, m in enumerate(mats)],
        })
    mean_abs = np.mean([np.abs(m.values) for m in mats], axis=0)
    return _write_svg(out_dir / "interactions.svg", lambda p: plots.heatmap(p, names, mean_abs))


def _emit(path: Path, header, rows, fmt, svg_fn) -> Path:
    rows = [list(r) for r in rows]
    if fmt == "csv":
        return write_rows(path, header, rows)
    if fmt == "json":
        return write_json(path, [dict(zip(header, r)) for r in rows])
    return _write_svg(path, svg_fn)


def _write_svg(path: Path, draw) -> Path:
    with atomic_path(path) as tmp:
        draw(tmp)
    return Path(path)
