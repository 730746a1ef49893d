import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..prometheus import Counter, Summary, get_prometheus_metric
from ..toolkit import Dao, Dataset, LinearMixedModel, SetTest, SnpScan, enumerate_posterior, mcmc_finemap, whiten
from ..toolkit.dao import MatrixKind, MatrixTable, save_matrix, save_sets, save_truth, write_table
from ..toolkit.errors import BlmmError, InputError
from ..toolkit.finemap import chain_agreement, total_variation
from ..toolkit.oracle import abf_accuracy_sweep, accuracy_summary
from ..toolkit.results import em_table, pip_table, scan_decisions, set_decisions, size_table, with_combined
from ..toolkit.settest import SetBfRecord, em_estimate_weights, records_frame
from ..toolkit.sim import Panel, simulate_panel
from .req import FinemapConfig, RunConfig, ScanConfig, SetTestConfig, SimulateConfig, ValidateAbfConfig

_logger = logging.getLogger(__name__)
command_duration_metric = get_prometheus_metric("command_duration_seconds", Summary, ["command"])
command_errors_metric = get_prometheus_metric("command_errors_total", Counter, ["command", "code"])
command_successes_metric = get_prometheus_metric("command_successes_total", Counter, ["command"])


@dataclass
class CommandResult:
    """
    Output of one command: result tables written as `<name>.tsv`, matrices written through
    [`save_matrix`][blmmstats.toolkit.dao.save_matrix], optional set membership and extra header notes.
    """

    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    matrices: Dict[str, Tuple[MatrixKind, MatrixTable]] = field(default_factory=dict)
    sets: Optional[Dict[str, List[str]]] = None
    notes: List[str] = field(default_factory=list)

    def write(self, out: str, header: Sequence[str]) -> List[Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        header = [*header, *self.notes]
        written = []
        for name, frame in self.tables.items():
            path = out / f"{name}.tsv"
            if name == "truth":
                save_truth(path, frame)
            else:
                write_table(path, frame, header)
            written.append(path)
        for name, (kind, table) in self.matrices.items():
            path = out / f"{name}.tsv"
            with_header = MatrixTable(table.values, table.row_ids, table.column_ids, list(header), table.annotations)
            save_matrix(path, kind, with_header)
            written.append(path)
        if self.sets is not None:
            path = out / "sets.tsv"
            save_sets(path, self.sets)
            written.append(path)
        return written


def _snp_columns(sets: Dict[str, List[str]], dataset: Dataset) -> Dict[str, List[int]]:
    index = {dataset.snp_id(j): j for j in range(dataset.p)}
    columns = {}
    for set_id, snps in sets.items():
        missing = [s for s in snps if s not in index]
        if missing:
            _logger.warning(f"Set [{set_id}] has {len(missing)} SNPs missing from the genotypes, e.g. `{missing[0]}`")
        columns[set_id] = [index[s] for s in snps if s in index]
    return columns


def run_scan(config: ScanConfig, dao: Optional[Dao] = None, executor: Optional[Executor] = None) -> CommandResult:
    dao = dao or config.to_dao()
    dataset = dao.load_dataset(config.phenotype_name)
    _logger.info(f"Scanning {dataset.p} SNPs in {dataset.n} samples")
    model = LinearMixedModel(dataset)
    null_fit = model.optimize_lambda(kappa=0)
    scan = SnpScan(model, null_fit, phi_grid=config.phi_grid, prior=config.to_prior(), kappa1=config.kappa1)
    table = scan_decisions(scan.run(executor=executor), config.alpha, config.pi0)
    return CommandResult(
        tables={"scan": table},
        notes=[
            f"lambda_check={null_fit.lambda_check!r}",
            f"tau_check={null_fit.tau_check!r}",
            f"pi0={table.attrs.get('pi0', np.nan)!r}",
        ],
    )


def _per_set_records(
    config: SetTestConfig,
    dao: Dao,
    sets: Dict[str, List[str]],
    mafs: Optional[np.ndarray],
    executor: Optional[Executor],
) -> pd.DataFrame:
    base = dao.load_dataset()
    phenotypes = set(dao.phenotype_names())
    columns = _snp_columns(sets, base)

    def one(item: Tuple[str, List[int]]) -> Optional[SetBfRecord]:
        set_id, cols = item
        if set_id not in phenotypes:
            _logger.warning(f"Set [{set_id}] has no phenotype column of the same name")
            return None
        try:
            dataset = Dataset(
                y=dao.load_phenotype(set_id),
                X=base.X,
                G=base.G[:, cols],
                K=base.K,
                sample_ids=base.sample_ids,
                snp_ids=[base.snp_id(j) for j in cols],
            )
            test = SetTest(LinearMixedModel(dataset), phi_grid=config.phi_grid, skato_rho=config.skato_rho)
            return test.evaluate(set_id, range(len(cols)), mafs[cols] if mafs is not None else None)
        except BlmmError as e:
            _logger.warning(f"Cannot evaluate set [{set_id}] because of {e}")
            return None

    mapper = executor.map if executor is not None else map
    return records_frame([r for r in mapper(one, columns.items()) if r is not None])


def run_settest(
    config: SetTestConfig, dao: Optional[Dao] = None, executor: Optional[Executor] = None
) -> CommandResult:
    """
    Component Bayes factors of every set, EM estimates of the null probability and (mode `em`) the component
    weights, then Bayesian FDR decisions on the combined Bayes factors.
    """
    dao = dao or config.to_dao()
    sets = dao.load_sets()
    mafs = dao.load_mafs()
    _logger.info(f"Testing {len(sets)} SNP sets in mode [{config.mode}]")
    if config.per_set_phenotype:
        table = _per_set_records(config, dao, sets, mafs, executor)
    else:
        dataset = dao.load_dataset(config.phenotype_name)
        test = SetTest(LinearMixedModel(dataset), phi_grid=config.phi_grid, skato_rho=config.skato_rho)
        table = test.evaluate_sets(_snp_columns(sets, dataset), executor, mafs)
    if table.empty:
        raise InputError("No SNP set could be evaluated")

    components = config.components()
    em = em_estimate_weights(
        table[[f"log10_bf_{c}" for c in components]].to_numpy(),
        p0_init=config.p0 if config.p0 is not None else 0.5,
        pis_init=config.initial_pis(),
        fix_p0=config.p0 is not None,
        fix_pis=config.mode == "fixed",
    )
    if em.flat:
        _logger.warning(f"Likelihood of the component weights is flat over {len(table)} sets")
    if config.two_way:
        table = with_combined(table, em.pis, two_way=True, pi_two_way=float(em.pis[0]))
    else:
        table = with_combined(table, em.pis)
    table = set_decisions(table, em.p0, config.alpha)
    _logger.info(f"Rejected {int(table['rejected'].sum())} of {len(table)} sets at p0={em.p0:.4f}")
    return CommandResult(tables={"sets": table, "em": em_table(em, components)})


def run_finemap(
    config: FinemapConfig, dao: Optional[Dao] = None, executor: Optional[Executor] = None
) -> CommandResult:
    dao = dao or config.to_dao()
    dataset = dao.load_dataset(config.phenotype_name)
    model = LinearMixedModel(dataset)
    null_fit = model.optimize_lambda(kappa=0)
    data = whiten(model, null_fit)
    p1 = config.to_p1()
    _logger.info(f"Fine mapping {data.p} SNPs with {config.n_chains} chains of {config.n_keep} kept steps")
    report = mcmc_finemap(data, p1, config.phi_grid, config.to_mcmc_config(), executor)
    for chain in report.chains:
        if chain.all_rejected:
            _logger.warning(f"Chain [{chain.chain}] rejected every proposal")

    credible = report.credible_set(config.credible_level)
    tables = {
        "pip": pip_table(report),
        "models": report.model_table,
        "sizes": size_table(report),
        "chains": report.chain_table(),
        "credible_set": pd.DataFrame({"snp_id": credible, "pip": report.pip[credible].to_numpy()}),
    }
    notes = [
        f"lambda_check={null_fit.lambda_check!r}",
        f"tau_check={null_fit.tau_check!r}",
        f"chain_agreement={chain_agreement(report.chains)!r}",
    ]
    if config.exact_check:
        exact = enumerate_posterior(data, p1, config.phi_grid)
        tv = total_variation(report, exact)
        _logger.info(f"Total variation distance to the exact posterior is {tv:.4f}")
        tables["exact"] = exact.drop(columns="included")
        notes.append(f"total_variation={tv!r}")
    return CommandResult(tables=tables, notes=notes)


def panel_result(panel: Panel) -> CommandResult:
    """
    Files of a simulated panel: one phenotype column per set, covariates, all set SNPs in one genotype file,
    set membership and truth labels.
    """
    samples = panel.sample_ids
    set_ids = [s.set_id for s in panel.sets]
    annotations = pd.DataFrame(
        {
            "snp_id": [snp for s in panel.sets for snp in s.snp_ids()],
            "position": [f"{i + 1}:{j + 1}" for i, s in enumerate(panel.sets) for j in range(s.genotypes.shape[1])],
            "maf": np.concatenate([s.mafs for s in panel.sets]),
        }
    )
    genotypes = np.column_stack([s.genotypes for s in panel.sets])
    return CommandResult(
        tables={"truth": panel.truth()},
        matrices={
            "phenotype": (
                MatrixKind.phenotype,
                MatrixTable(np.column_stack([s.y for s in panel.sets]), samples, set_ids),
            ),
            "covariates": (MatrixKind.covariates, MatrixTable(panel.covariates(), samples, ["intercept", "x"])),
            "genotypes": (
                MatrixKind.genotypes,
                MatrixTable(genotypes, samples, list(annotations["snp_id"]), annotations=annotations),
            ),
        },
        sets={s.set_id: s.snp_ids() for s in panel.sets},
    )


def run_simulate(
    config: SimulateConfig, dao: Optional[Dao] = None, executor: Optional[Executor] = None
) -> CommandResult:
    sim_config = config.to_sim_config()
    panel = simulate_panel(sim_config, executor)
    result = panel_result(panel)
    result.notes = [f"sim.{k}={v}" for k, v in asdict(sim_config).items()]
    return result


def run_validate_abf(
    config: ValidateAbfConfig, dao: Optional[Dao] = None, executor: Optional[Executor] = None
) -> CommandResult:
    table = abf_accuracy_sweep(
        config.sample_sizes,
        n_snps=config.n_snps,
        seed=config.seed,
        phi=config.phi,
        quad_tol=config.quad_tol,
        executor=executor,
    )
    summary = accuracy_summary(table)
    for row in summary.itertuples():
        _logger.info(
            f"n=[{row.n}] median |delta| {row.median_abs_delta_k0:.4f} at kappa=0, "
            f"{row.median_abs_delta_k1:.4f} at kappa=1"
        )
    return CommandResult(tables={"sweep": table, "summary": summary})


COMMANDS: Dict[str, Tuple[type, Callable[..., CommandResult]]] = {
    "scan": (ScanConfig, run_scan),
    "settest": (SetTestConfig, run_settest),
    "finemap": (FinemapConfig, run_finemap),
    "simulate": (SimulateConfig, run_simulate),
    "validate-abf": (ValidateAbfConfig, run_validate_abf),
}


def execute(command: str, config: RunConfig, dao: Optional[Dao] = None) -> CommandResult:
    """
    Run `command` with `config` and write its tables to `config.out`. With more than one thread the work is
    spread over a thread pool, outputs are gathered in input order.
    """
    _, runner = COMMANDS[command]
    try:
        with command_duration_metric.labels(command).time():
            if config.threads > 1:
                with ThreadPoolExecutor(max_workers=config.threads) as executor:
                    result = runner(config, dao, executor)
            else:
                result = runner(config, dao, None)
            written = result.write(config.out, config.echo(command))
    except BlmmError as e:
        command_errors_metric.labels(command, e.code).inc()
        raise
    command_successes_metric.labels(command).inc()
    _logger.info(f"Command [{command}] wrote {len(written)} files to `{config.out}`")
    return result
