"""Monte Carlo replicate engine, CSV tables and summary reports."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import astuple, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger
from scipy.stats import spearmanr
from threadpoolctl import threadpool_limits
from tqdm import tqdm

from src.baselines import (
    BaselineMethod,
    LogisticPropensity,
    OlsOutcome,
    RidgeOutcome,
    run_baseline,
)
from src.config import ExperimentConfig
from src.debias import DebiasMethod, PropensityRoute, coverage_stats
from src.exceptions import ExperimentAbortedError
from src.fits import LossKind, PropensityLoss
from src.model_gen import Dataset, ModelSpec, OutcomeForm, generate
from src.pipeline import EstimationPipeline
from src.utils import make_rng, replicate_seed

NAN = float("nan")
DEBIAS_NAMES = {m.value for m in DebiasMethod}
CI_MULTIPLIER = 1.96


@dataclass
class ReplicateRow:
    """Result of one method on one replicate (one CSV row).

    Attributes:
        experiment: Experiment id
        n: Sample size
        p: Dimension
        lam: Ridge parameter
        replicate: Replicate index
        seed: Replicate seed ``seed ⊕ replicate``
        method: Estimator name
        estimate: Estimate of µ_out
        tau_hat: Estimated coefficient noise level
        coverage95: Fraction of coordinates covered by their 95% interval
        prediction_error: ``‖θ̂ − θ_out‖²_Σ`` of the method's coefficients
        alignment: ``⟨θ_prop, θ_out − θ̂_out⟩_Σ`` of the underlying fit
        predicted_bias: Analytic bias prediction at the empirical alignment
        bias_proxy: Degrees-of-freedom adjusted IPW bias proxy
        pi_hat: Observed fraction
        gamma_mu_hat: Estimated ‖µ_x‖
        gamma_prop_star_hat: Estimated ‖µ_x,cfd − µ_x‖
        mu_prop_hat: Estimated mean of the propensity linear predictor
        gamma_prop_hat: Estimated propensity signal strength
        alpha1_hat: Estimated α₁
        alpha2_hat: Estimated α₂
        sc_sigma_hat: Estimated covariance spike prefactor
        beta_hat: Shrinkage factor of the debiased propensity
        failed: Whether the method raised
        reason: Exception summary when failed
    """

    experiment: str
    n: int
    p: int
    lam: float
    replicate: int
    seed: int
    method: str
    estimate: float = NAN
    tau_hat: float = NAN
    coverage95: float = NAN
    prediction_error: float = NAN
    alignment: float = NAN
    predicted_bias: float = NAN
    bias_proxy: float = NAN
    pi_hat: float = NAN
    gamma_mu_hat: float = NAN
    gamma_prop_star_hat: float = NAN
    mu_prop_hat: float = NAN
    gamma_prop_hat: float = NAN
    alpha1_hat: float = NAN
    alpha2_hat: float = NAN
    sc_sigma_hat: float = NAN
    beta_hat: float = NAN
    failed: bool = False
    reason: str = ""


CSV_COLUMNS = [f.name for f in fields(ReplicateRow)]


@dataclass(frozen=True)
class ReplicateTask:
    """One (grid point, λ, replicate) work item.

    The dataset depends only on ``(seed, n_index, replicate)``, so every λ
    of a sweep sees the same data.
    """

    n_index: int
    n: int
    p: int
    lam: float
    replicate: int


@dataclass
class ExperimentResult:
    """Outputs of one experiment run."""

    csv_path: Optional[Path]
    rows: pd.DataFrame
    summary: pd.DataFrame
    sweep: Optional[pd.DataFrame] = None
    notes: list[str] = field(default_factory=list)


def _same(a: float, b: float) -> bool:
    return (np.isnan(a) and np.isnan(b)) or a == b


def _scramble_unobserved(data: Dataset, seed: int, n_index: int, replicate: int) -> Dataset:
    """Replace every unobserved outcome by unrelated noise."""
    rng = make_rng(seed, n_index, replicate, 1)
    junk = 1e3 * rng.standard_normal(data.n)
    return Dataset(data.X, np.where(data.a == 1.0, data.y, junk), data.a, data.sigma_matrix)


def _evaluate(
    config: ExperimentConfig,
    spec: ModelSpec,
    data: Dataset,
    task: ReplicateTask,
    seed: int,
) -> list[ReplicateRow]:
    """Every configured method on one dataset; failures become flagged rows."""
    pipeline = EstimationPipeline(
        data,
        task.lam,
        spec.link,
        spec=spec,
        route=PropensityRoute(config.route),
        loss=PropensityLoss(LossKind(config.loss)),
        oracle_mean=config.oracle_mean,
        omega=config.omega,
        prop_lam=config.prop_lam,
    )
    outcome_fitter = OlsOutcome() if config.baseline_outcome == "ols" else RidgeOutcome(config.baseline_ridge_lam)
    propensity_fitter = LogisticPropensity(spec.link if config.baseline_link == "model" else None)

    summary_values: dict[str, float] = {}
    if any(m in DEBIAS_NAMES for m in config.methods):
        try:
            summary_values = pipeline.summary.as_dict()
        except Exception as e:
            logger.debug(f"Summary statistics unavailable for replicate {task.replicate}: {e}")

    rows = []
    for name in config.methods:
        row = ReplicateRow(
            experiment=config.name,
            n=task.n,
            p=task.p,
            lam=task.lam,
            replicate=task.replicate,
            seed=seed,
            method=name,
        )
        try:
            if name in DEBIAS_NAMES:
                method = DebiasMethod(name)
                report = pipeline.run(method)
                row.estimate = report.mu_out_de
                row.tau_hat = report.tau_hat
                row.coverage95 = coverage_stats(report, spec).coverage95
                row.prediction_error = pipeline.prediction_error(report)
                row.alignment = pipeline.alignment(method)
                prediction = pipeline.predicted(method)
                if prediction is not None:
                    row.predicted_bias = prediction.mean_bias(row.alignment)
                if method == DebiasMethod.NAIVE_DOF_IPW:
                    row.bias_proxy = pipeline.bias_proxy()
                if report.adjustments is not None:
                    row.beta_hat = report.adjustments.beta_hat
                for key, value in summary_values.items():
                    setattr(row, key, value)
            else:
                row.estimate = run_baseline(
                    BaselineMethod(name), data, outcome_fitter, propensity_fitter, seed
                )
        except Exception as e:
            logger.exception(f"{name} failed on replicate {task.replicate} (n={task.n}, lambda={task.lam:g})")
            row.failed = True
            row.reason = f"{type(e).__name__}: {e}"
        rows.append(row)
    return rows


def run_replicate(config: ExperimentConfig, task: ReplicateTask) -> list[ReplicateRow]:
    """Generate one dataset and evaluate every configured method on it.

    With ``masking_audit`` the methods are re-run on a copy whose unobserved
    outcomes are scrambled; any change in an estimate marks the row failed.
    """
    seed = replicate_seed(config.seed, task.replicate)
    outcome = OutcomeForm.QUADRATIC if config.misspecify_outcome else OutcomeForm.LINEAR
    try:
        spec = config.model.build(task.p)
        data = generate(spec, task.n, seed, outcome=outcome, spawn_key=(task.n_index,))
    except Exception as e:
        logger.exception(f"Data generation failed on replicate {task.replicate} (n={task.n})")
        return [
            ReplicateRow(
                experiment=config.name,
                n=task.n,
                p=task.p,
                lam=task.lam,
                replicate=task.replicate,
                seed=seed,
                method=name,
                failed=True,
                reason=f"{type(e).__name__}: {e}",
            )
            for name in config.methods
        ]
    rows = _evaluate(config, spec, data, task, seed)

    if config.masking_audit:
        scrambled = _scramble_unobserved(data, config.seed, task.n_index, task.replicate)
        for row, audit in zip(rows, _evaluate(config, spec, scrambled, task, seed)):
            if not row.failed and not _same(row.estimate, audit.estimate):
                row.failed = True
                row.reason = "MaskingAudit: unobserved outcomes changed the estimate"
    return rows


def _run_task(args: tuple[ExperimentConfig, ReplicateTask]) -> list[ReplicateRow]:
    """Worker entry point; module level so the process pool can pickle it."""
    config, task = args
    with threadpool_limits(limits=1):
        return run_replicate(config, task)


class ExperimentRunner:
    """Seeded, optionally parallel Monte Carlo runner.

    Attributes:
        config: Experiment settings
        workers: Worker processes (1 runs in-process)
        show_progress: Display a tqdm progress bar
    """

    def __init__(self, config: ExperimentConfig, workers: int = 1, show_progress: bool = True) -> None:
        self.config = config
        self.workers = max(1, workers)
        self.show_progress = show_progress

    def tasks(self) -> list[ReplicateTask]:
        config = self.config
        return [
            ReplicateTask(n_index=i, n=n, p=config.dimension(n), lam=lam, replicate=r)
            for i, n in enumerate(config.n_grid)
            for lam in config.lam_grid
            for r in range(config.replicates)
        ]

    def run_replicate(self, task: ReplicateTask) -> list[ReplicateRow]:
        return _run_task((self.config, task))

    def run_all(self) -> list[ReplicateRow]:
        """Run every task; row order is fixed later by ``to_frame``."""
        tasks = self.tasks()
        logger.info(
            f"Experiment {self.config.name}: {len(tasks)} replicate tasks, "
            f"{len(self.config.methods)} methods, {self.workers} worker(s)"
        )
        rows: list[ReplicateRow] = []
        pbar = tqdm(total=len(tasks), desc=self.config.name, unit="rep", disable=not self.show_progress)
        if self.workers == 1:
            for task in tasks:
                rows.extend(self.run_replicate(task))
                pbar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as executor:
                futures = [executor.submit(_run_task, (self.config, task)) for task in tasks]
                for future in as_completed(futures):
                    rows.extend(future.result())
                    pbar.update(1)
        pbar.close()
        return rows

    def to_frame(self, rows: list[ReplicateRow]) -> pd.DataFrame:
        """Rows as a frame sorted by (n, λ, replicate, method order)."""
        frame = pd.DataFrame([astuple(row) for row in rows], columns=CSV_COLUMNS)
        if frame.empty:
            return frame
        order = {name: i for i, name in enumerate(self.config.methods)}
        frame["_order"] = frame["method"].map(order)
        frame = frame.sort_values(["n", "lam", "replicate", "_order"], kind="mergesort")
        return frame.drop(columns="_order").reset_index(drop=True)

    def write_csv(self, rows: list[ReplicateRow], path: str | Path) -> Path:
        """Write the replicate table; ``replicates=0`` gives a header-only file."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame(rows).to_csv(path, index=False, float_format="%.17g")
        logger.info(f"Wrote {len(rows)} rows to {path}")
        return path

    def check_failures(self, rows: list[ReplicateRow]) -> None:
        """Raise when more than ``max_failure_rate`` of the rows failed.

        Raises:
            ExperimentAbortedError: With per-method failure counts and a sample reason
        """
        if not rows:
            return
        failed = [row for row in rows if row.failed]
        rate = len(failed) / len(rows)
        if rate <= self.config.max_failure_rate:
            if failed:
                logger.warning(f"{len(failed)} of {len(rows)} rows failed ({rate:.1%})")
            return
        lines = []
        for method in self.config.methods:
            hits = [row for row in failed if row.method == method]
            if hits:
                lines.append(f"  {method}: {len(hits)} failed, e.g. {hits[0].reason}")
        raise ExperimentAbortedError(
            f"{len(failed)} of {len(rows)} rows failed ({rate:.1%} > {self.config.max_failure_rate:.0%})",
            "\n".join(lines),
        )

    def _model_mean(self, p: int) -> float:
        """µ_out of the configured model at dimension p (NaN if it cannot be built)."""
        try:
            return self.config.model.build(p).mu_out
        except (OSError, ValueError) as e:
            logger.warning(f"Model mean unavailable at p={p}: {e}")
            return NAN

    def summarize(self, rows: list[ReplicateRow]) -> pd.DataFrame:
        """Per (n, λ, method): counts, mean, bias, variance and 1.96·SE half-widths."""
        frame = self.to_frame(rows)
        columns = [
            "n", "p", "lam", "method", "count", "failures", "mean", "bias", "mean_ci",
            "variance", "variance_ci", "coverage95", "prediction_error", "predicted_bias", "bias_proxy",
        ]
        if frame.empty:
            return pd.DataFrame(columns=columns)

        records = []
        order = {name: i for i, name in enumerate(self.config.methods)}
        mu_out = {int(p): self._model_mean(int(p)) for p in frame["p"].unique()}
        for (n, lam, method), group in frame.groupby(["n", "lam", "method"], sort=False):
            ok = group[~group["failed"]]
            values = ok["estimate"].to_numpy(dtype=float)
            count = values.size
            p = int(group["p"].iloc[0])
            mean = float(values.mean()) if count else NAN
            variance = float(values.var(ddof=1)) if count > 1 else NAN
            if count > 1:
                squared = (values - mean) ** 2
                variance_se = float(squared.std(ddof=1)) / np.sqrt(count)
                mean_se = np.sqrt(variance / count)
            else:
                variance_se = mean_se = NAN
            records.append(
                dict(
                    n=int(n),
                    p=p,
                    lam=float(lam),
                    method=method,
                    count=count,
                    failures=int(group["failed"].sum()),
                    mean=mean,
                    bias=mean - mu_out[p],
                    mean_ci=CI_MULTIPLIER * mean_se,
                    variance=variance,
                    variance_ci=CI_MULTIPLIER * variance_se,
                    coverage95=float(ok["coverage95"].mean()) if count else NAN,
                    prediction_error=float(ok["prediction_error"].mean()) if count else NAN,
                    predicted_bias=float(ok["predicted_bias"].mean()) if count else NAN,
                    bias_proxy=float(ok["bias_proxy"].mean()) if count else NAN,
                    _order=order[method],
                )
            )
        summary = pd.DataFrame(records).sort_values(["n", "lam", "_order"], kind="mergesort")
        return summary.drop(columns="_order").reset_index(drop=True)[columns]

    def generate_summary(self, summary: pd.DataFrame) -> None:
        """Print the summary table.

        Args:
            summary: Output of ``summarize``
        """
        print("\n" + "=" * 50)
        print(f"     EXPERIMENT SUMMARY: {self.config.name}")
        print("=" * 50)
        print(f"\nReplicates per grid point: {self.config.replicates}")
        print(f"Methods:                   {', '.join(self.config.methods)}")
        if summary.empty:
            print("\nNo replicates were run.")
        else:
            shown = summary[["n", "p", "lam", "method", "count", "failures", "bias", "mean_ci", "variance", "coverage95"]]
            with pd.option_context("display.width", 140, "display.max_rows", None):
                print("\n" + shown.to_string(index=False, float_format=lambda v: f"{v:.4g}"))
        print("=" * 50 + "\n")


def _csv_path(config: ExperimentConfig, output_folder: Path, out: Optional[Path]) -> Path:
    return Path(out) if out is not None else Path(output_folder) / f"{config.name}.csv"


def run_experiment(
    config: ExperimentConfig,
    *,
    workers: int = 1,
    output_folder: Path = Path("output"),
    out: Optional[Path] = None,
    show_progress: bool = True,
) -> ExperimentResult:
    """Run all replicates, write the CSV and build the summary.

    The CSV is written before the failure check so aborted runs can be inspected.

    Raises:
        ExperimentAbortedError: If too many rows failed
    """
    runner = ExperimentRunner(config, workers, show_progress)
    rows = runner.run_all()
    csv_path = runner.write_csv(rows, _csv_path(config, output_folder, out))
    runner.check_failures(rows)
    summary = runner.summarize(rows)
    logger.success(f"Experiment {config.name} finished: {len(rows)} rows -> {csv_path}")
    return ExperimentResult(csv_path=csv_path, rows=runner.to_frame(rows), summary=summary)


def sweep_table(summary: pd.DataFrame) -> pd.DataFrame:
    """One row per λ: prediction errors of the plug-in fits and the DOF-IPW proxy."""
    pivot = summary.pivot_table(index="lam", columns="method", values=["prediction_error", "bias", "bias_proxy"])
    table = pd.DataFrame(index=pivot.index)
    for method in ("ridge", "ridge-ipw"):
        if ("prediction_error", method) in pivot.columns:
            table[f"prediction_error_{method}"] = pivot[("prediction_error", method)]
    if ("bias", "naive-dof-ipw") in pivot.columns:
        table["bias_naive_dof_ipw"] = pivot[("bias", "naive-dof-ipw")]
        table["bias_proxy"] = pivot[("bias_proxy", "naive-dof-ipw")]
    if ("bias", "empirical-sca-moment") in pivot.columns:
        table["bias_empirical_sca"] = pivot[("bias", "empirical-sca-moment")]
    return table.reset_index()


def run_lambda_sweep(
    config: ExperimentConfig,
    *,
    workers: int = 1,
    output_folder: Path = Path("output"),
    out: Optional[Path] = None,
    show_progress: bool = True,
) -> ExperimentResult:
    """Run a λ-grid experiment and tabulate prediction error against λ.

    Also records the λ minimizing the ridge prediction error and the Spearman
    correlation between the degrees-of-freedom adjusted IPW |bias| and its proxy.

    Raises:
        ValueError: If the λ-grid has fewer than two values
        ExperimentAbortedError: If too many rows failed
    """
    if len(config.lam_grid) < 2:
        raise ValueError("A lambda sweep needs at least two values in lam_grid")
    result = run_experiment(
        config, workers=workers, output_folder=output_folder, out=out, show_progress=show_progress
    )
    if result.summary.empty:
        return result
    sweep = sweep_table(result.summary)
    result.sweep = sweep
    if "prediction_error_ridge" in sweep:
        best = sweep.loc[sweep["prediction_error_ridge"].idxmin(), "lam"]
        where = "boundary" if best in (sweep["lam"].min(), sweep["lam"].max()) else "interior"
        result.notes.append(f"Ridge prediction error minimized at lambda={best:.4g} ({where})")
    if "bias_proxy" in sweep and len(sweep) > 2:
        rho = spearmanr(sweep["bias_naive_dof_ipw"].abs(), sweep["bias_proxy"])[0]
        result.notes.append(f"Spearman(|bias|, proxy) for naive-dof-ipw: {rho:.3f}")
    for note in result.notes:
        logger.info(note)
    return result


@dataclass(frozen=True)
class AcceptanceCheck:
    """Thresholds evaluated on an experiment summary at the largest n.

    Attributes:
        unbiased: Methods expected within ``unbiased_se`` standard errors of µ_out
        biased: Methods expected at least ``biased_se`` standard errors away
        covered: Methods whose mean coverage must lie in ``coverage_band``
        unbiased_se: Tolerance in standard errors
        biased_se: Separation in standard errors
        coverage_band: Accepted coverage interval
    """

    unbiased: tuple[str, ...] = ()
    biased: tuple[str, ...] = ()
    covered: tuple[str, ...] = ()
    unbiased_se: float = 3.0
    biased_se: float = 5.0
    coverage_band: tuple[float, float] = (0.93, 0.97)

    @classmethod
    def for_preset(cls, preset: Optional[str]) -> AcceptanceCheck:
        if preset == "fig1":
            return cls(unbiased=("g-1f", "aipw-1f", "aipw-2f", "aipw-3f"), biased=("ipw-1f",))
        if preset in ("fig2", "fig3"):
            return cls(biased=("g-1f", "g-2f"))
        if preset == "fig-debias":
            return cls(
                unbiased=("oracle-ascw", "empirical-sca-moment", "empirical-sca-mest"),
                biased=("ridge", "naive", "naive-ipw-weighted"),
                covered=("oracle-ascw", "empirical-sca-moment", "empirical-sca-mest"),
            )
        if preset == "lambda-sweep":
            return cls(unbiased=("empirical-sca-moment",), covered=("empirical-sca-moment",))
        return cls()

    def violations(self, summary: pd.DataFrame) -> list[str]:
        """Human-readable threshold violations (empty when all pass)."""
        if summary.empty:
            return []
        largest = summary[summary["n"] == summary["n"].max()]
        problems = []
        for _, row in largest.iterrows():
            se = row["mean_ci"] / CI_MULTIPLIER
            label = f"{row['method']} (n={row['n']}, lambda={row['lam']:g})"
            if row["method"] in self.unbiased and not abs(row["bias"]) <= self.unbiased_se * se:
                problems.append(f"{label}: |bias| {abs(row['bias']):.4g} > {self.unbiased_se:g} SE ({se:.3g})")
            if row["method"] in self.biased and not abs(row["bias"]) >= self.biased_se * se:
                problems.append(f"{label}: |bias| {abs(row['bias']):.4g} < {self.biased_se:g} SE ({se:.3g})")
            lo, hi = self.coverage_band
            if row["method"] in self.covered and not lo <= row["coverage95"] <= hi:
                problems.append(f"{label}: coverage {row['coverage95']:.3f} outside [{lo}, {hi}]")
        return problems
