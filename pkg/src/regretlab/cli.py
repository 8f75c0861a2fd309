"""Command-line experiment runner.

    regretlab --spec experiment.json --out results/ [--seed N] [--workers N] [--compare DIR]

Modes (the experiment file's ``mode`` field): ``run-baseline``, ``train-transformer``,
``eval-model`` and ``verify-theory``. Every mode writes ``summary.json``;
modes that produce regret curves also write ``curves.csv``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, theory
from .baselines import ALGORITHMS, make_learner
from .envs import ENV_KINDS, PROCESS_KINDS, PolicySpace, Scenario, derive_seed
from .errors import ConfigError, InsufficientDataError
from .model import AttentionPolicy, ModelParams, Operator, load_checkpoint
from .simulate import run_episode, scenario_variation
from .trainer import TrainConfig, train

log = logging.getLogger("regretlab")

MODES = ("run-baseline", "train-transformer", "eval-model", "verify-theory")
MODEL_NAME = "transformer"
CSV_FIELDS = ("run_id", "algorithm", "process", "replicate", "t", "regret")
_SCENARIO_STREAM = 100


@dataclass
class ExperimentSpec:
    mode: str
    env_kind: str = "fol"
    process: str = "gaussian"
    d: int = 3
    T: int = 100
    policy_space: PolicySpace = field(default_factory=PolicySpace)
    algorithms: list = field(default_factory=list)
    replicates: int = 100
    eval_horizon: int | None = None
    eval_process: str | None = None
    checkpoint: str | None = None
    train: dict = field(default_factory=dict)
    theory: dict = field(default_factory=dict)
    realized_regret: bool = False
    compare_algorithm: str | None = None
    run_id: str | None = None
    seed: int = 0
    out: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        data = dict(data)
        scenario = data.pop("scenario", {}) or {}
        ev = data.pop("eval", None)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known - {"policy_space"}
        if unknown:
            raise ConfigError(f"unknown spec field(s): {sorted(unknown)}")
        if "mode" not in data:
            raise ConfigError("spec field 'mode' is required")
        kwargs = {k: v for k, v in data.items() if k != "policy_space"}
        for key in ("env_kind", "process", "d", "T"):
            if key in scenario:
                kwargs[key] = scenario[key]
        ps = scenario.get("policy_space", data.get("policy_space"))
        if ps is not None:
            kwargs["policy_space"] = PolicySpace.from_dict(ps)
        if ev is not None:
            kwargs["eval_horizon"] = ev.get("horizon")
            kwargs["eval_process"] = ev.get("process")
        spec = cls(**kwargs)
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"field 'mode' must be one of {MODES}, got {self.mode!r}")
        if self.env_kind not in ENV_KINDS:
            raise ConfigError(f"field 'env_kind' must be one of {ENV_KINDS}, got {self.env_kind!r}")
        if self.process not in PROCESS_KINDS:
            raise ConfigError(f"field 'process' must be one of {PROCESS_KINDS}, got {self.process!r}")
        if not isinstance(self.replicates, int) or self.replicates < 1:
            if not (self.mode in ("train-transformer", "verify-theory") and self.replicates == 0):
                raise ConfigError(f"field 'replicates' must be a positive integer, got {self.replicates!r}")
        if self.mode != "eval-model" and (self.eval_horizon is not None or self.eval_process is not None):
            raise ConfigError("field 'eval' (horizon/process overrides) is only valid in eval-model mode")
        if self.mode == "run-baseline" and not self.algorithms:
            raise ConfigError("field 'algorithms' must list at least one algorithm for run-baseline")
        for name in self.algorithms:
            if name not in ALGORITHMS:
                raise ConfigError(f"field 'algorithms' has unknown entry {name!r}")
        if self.mode == "eval-model" and not self.checkpoint:
            raise ConfigError("field 'checkpoint' is required in eval-model mode")
        if self.eval_process is not None and self.eval_process not in PROCESS_KINDS:
            raise ConfigError(f"field 'eval.process' must be one of {PROCESS_KINDS}")
        if self.eval_horizon is not None and int(self.eval_horizon) < 1:
            raise ConfigError("field 'eval.horizon' must be >= 1")
        # a template scenario checks env/process/policy-space compatibility
        Scenario.sample(self.env_kind, self.process_used, self.d, self.horizon_used, 0, self.policy_space)

    @property
    def horizon_used(self) -> int:
        return int(self.eval_horizon) if self.eval_horizon is not None else int(self.T)

    @property
    def process_used(self) -> str:
        return self.eval_process or self.process


# ---------------------------------------------------------------------------
# Replicate evaluation


def _scenario(spec: dict, replicate: int) -> Scenario:
    return Scenario.sample(spec["env_kind"], spec["process"], spec["d"], spec["T"],
                           derive_seed(spec["seed"], _SCENARIO_STREAM, replicate),
                           PolicySpace.from_dict(spec["policy_space"]))


def _learner(spec: dict, name: str, scenario: Scenario):
    if name == MODEL_NAME:
        params = ModelParams.from_dict(spec["model"])
        op = Operator(spec["model"].get("operator_kind", "softmax"), float(spec["model"].get("radius", 1.0)))
        return AttentionPolicy(params, op, bandit=scenario.env_kind != "fol")
    options = {}
    if name == "rexp3":
        options["variation"] = scenario_variation(scenario)
    return make_learner(name, scenario.env_kind, scenario.d, scenario.horizon, scenario.policy_space, **options)


def _replicate(job):
    """One replicate for every algorithm on a common scenario."""
    spec, replicate = job
    scenario = _scenario(spec, replicate)
    out = {}
    for name in spec["algorithms"]:
        ep = run_episode(scenario, _learner(spec, name, scenario))
        out[name] = (ep.regret(spec["realized"]), ep.actions, None if ep.means is None else ep.best_arms())
    return out


def evaluate_replicates(spec: dict, replicates: int, workers: int = 1) -> dict:
    """Returns ``{algorithm: (curves, actions, best_arms)}`` in replicate order."""
    jobs = [(spec, r) for r in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, replicates // (4 * workers))))
    else:
        results = [_replicate(j) for j in jobs]
    merged = {}
    for name in spec["algorithms"]:
        curves = np.array([r[name][0] for r in results])
        actions = None if results[0][name][1] is None else np.array([r[name][1] for r in results])
        best = None if results[0][name][2] is None else np.array([r[name][2] for r in results])
        merged[name] = (curves, actions, best)
    return merged


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_curves(path: Path, run_id: str, process: str, results: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for name, (curves, _, _) in results.items():
            for rep, curve in enumerate(curves):
                for t, value in enumerate(curve, start=1):
                    w.writerow((run_id, name, process, rep, t, _fmt(value)))


def read_curves(path: Path) -> dict:
    """``{algorithm: (n_rep, T) array}`` from a curves.csv."""
    rows: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["algorithm"], {}).setdefault(int(row["replicate"]), []).append(
                (int(row["t"]), float(row["regret"])))
    out = {}
    for name, reps in rows.items():
        out[name] = np.array([[v for _, v in sorted(reps[r])] for r in sorted(reps)])
    return out


def summarize(results: dict, env_kind: str, d: int, compare: dict | None = None,
              compare_algorithm: str | None = None) -> dict:
    summary = {}
    for name, (curves, actions, best) in results.items():
        final = curves[:, -1]
        entry = {"max_LR": float(final.max()), "avg_LR": float(final.mean())}
        try:
            fit = metrics.fit_regret_growth(curves.mean(axis=0))
            entry.update(beta_hat=fit.beta_hat, p_reg=fit.p_reg, fit_points=fit.points_used)
        except InsufficientDataError as exc:
            entry.update(beta_hat=None, p_reg=None, fit_error=str(exc))
        if compare:
            # default baseline: same algorithm, else the compare run's first algorithm
            base_name = compare_algorithm or (name if name in compare else next(iter(compare)))
            if base_name not in compare:
                raise ConfigError(f"compare run has no algorithm {base_name!r}")
            D, p = metrics.ks_one_sided(final, compare[base_name][:, -1])
            entry.update(ks_baseline=base_name, ks_D=D, ks_p=p)
        if env_kind != "fol" and actions is not None:
            entry["suff_fail_freq"] = metrics.suff_fail_freq_series(
                actions, best[:, 0] if env_kind == "mab" else best).tolist()
            entry["min_frac_scaled"] = metrics.min_frac_series(actions, d).tolist()
        summary[name] = entry
    return summary


# ---------------------------------------------------------------------------
# Modes


def _eval_spec(spec: ExperimentSpec, algorithms, model: dict | None = None) -> dict:
    return {"env_kind": spec.env_kind, "process": spec.process_used, "d": spec.d, "T": spec.horizon_used,
            "policy_space": spec.policy_space.to_dict(), "seed": spec.seed, "algorithms": list(algorithms),
            "realized": spec.realized_regret, "model": model}


def _curves_and_summary(spec, out: Path, algorithms, workers, compare, model=None) -> dict:
    es = _eval_spec(spec, algorithms, model)
    results = evaluate_replicates(es, spec.replicates, workers)
    run_id = spec.run_id or f"{spec.mode}-s{spec.seed}"
    write_curves(out / "curves.csv", run_id, spec.process_used, results)
    return summarize(results, spec.env_kind, spec.d, compare, spec.compare_algorithm)


def run(spec: ExperimentSpec, out: Path, workers: int = 1, compare_dir: Path | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    compare = read_curves(compare_dir / "curves.csv") if compare_dir else None
    meta = {"mode": spec.mode, "seed": spec.seed, "env_kind": spec.env_kind, "process": spec.process_used,
            "d": spec.d, "T": spec.horizon_used, "replicates": spec.replicates}
    if spec.mode == "run-baseline":
        summary = _curves_and_summary(spec, out, spec.algorithms, workers, compare)
    elif spec.mode == "eval-model":
        params, op = load_checkpoint(spec.checkpoint)
        if params.d != spec.d:
            raise ConfigError(f"checkpoint has d={params.d} but field 'd' is {spec.d}")
        model = params.to_dict(op)
        summary = _curves_and_summary(spec, out, [MODEL_NAME, *spec.algorithms], workers, compare, model)
    elif spec.mode == "train-transformer":
        cfg_data = {"env_kind": spec.env_kind, "process": spec.process, "d": spec.d}
        if spec.policy_space.kind == "ball":
            cfg_data.update(operator_kind="ball", radius=spec.policy_space.radius)
        cfg_data.update(spec.train)
        cfg = TrainConfig.from_dict(cfg_data)
        (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
        params, tlog = train(cfg, spec.seed, log_path=out / "train_log.jsonl",
                             checkpoint_dir=out / "checkpoints")
        meta["train"] = {"initial_diagnostics": tlog.initial,
                         "final_diagnostics": {k: tlog.entries[-1][k] for k in ("a_b_norm", "c_dev", "d_dev")}
                         if tlog.entries else tlog.initial,
                         "checkpoint": str(out / "checkpoints" / "final.json")}
        summary = {}
        if spec.replicates > 0:
            summary = _curves_and_summary(spec, out, [MODEL_NAME, *spec.algorithms], workers, compare,
                                          params.to_dict(cfg.operator))
    else:  # verify-theory
        report = theory.verify_all(spec.seed, **spec.theory)
        (out / "theory.json").write_text(json.dumps(report, indent=2))
        summary = {"theory": report}
    doc = {"meta": meta, "results": summary}
    (out / "summary.json").write_text(json.dumps(doc, indent=2))
    return doc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regretlab", description=__doc__.splitlines()[0])
    p.add_argument("--spec", required=True, help="experiment spec (JSON)")
    p.add_argument("--out", help="output directory (overrides the experiment file's 'out')")
    p.add_argument("--seed", type=int, help="root seed (overrides the experiment file's 'seed')")
    p.add_argument("--workers", type=int, default=1, help="processes for replicate evaluation")
    p.add_argument("--compare", help="prior run directory; adds one-sided KS p-values against its curves")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        try:
            data = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read spec {args.spec}: {exc}") from None
        if args.seed is not None:
            data["seed"] = args.seed
        spec = ExperimentSpec.from_dict(data)
        out = args.out or spec.out
        if not out:
            raise ConfigError("no output directory: pass --out or set field 'out'")
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        compare = Path(args.compare) if args.compare else None
        if compare is not None and not (compare / "curves.csv").exists():
            raise ConfigError(f"--compare directory {compare} has no curves.csv")
        run(spec, Path(out), args.workers, compare)
    except InsufficientDataError as exc:
        print(f"error: insufficient data: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, TypeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
