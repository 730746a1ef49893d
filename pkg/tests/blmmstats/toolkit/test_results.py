from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
import pytest

from src.blmmstats.toolkit.lmm import LinearMixedModel
from src.blmmstats.toolkit.results import (
    em_table,
    pvalue_baselines,
    realized_error_rates,
    scan_decisions,
    set_decisions,
    with_combined,
)
from src.blmmstats.toolkit.settest import SetTest, em_estimate_weights, records_frame
from src.blmmstats.toolkit.sim import SimConfig, simulate_panel


def _scan_frame():
    return pd.DataFrame(
        {
            "snp_id": ["a", "b", "c"],
            "log10_abf_k0": [12.0, 0.0, np.nan],
            "score_pvalue": [1e-14, 0.6, np.nan],
        }
    )


def test_scan_decisions_skip_flagged_rows():
    table = scan_decisions(_scan_frame(), alpha=0.05, pi0=0.5)
    assert table["bh_rejected"].tolist() == [True, False, False]
    assert table["bayes_rejected"].tolist() == [True, False, False]
    assert np.isnan(table.loc[2, "bh_qvalue"]) and np.isnan(table.loc[2, "bayes_qvalue"])


def test_scan_decisions_without_evaluable_rows():
    frame = _scan_frame().iloc[[2]]
    table = scan_decisions(frame)
    assert not table["bh_rejected"].any() and not table["bayes_rejected"].any()


def test_scan_decisions_estimate_null_proportion():
    assert scan_decisions(_scan_frame(), pi0=1.0).attrs["pi0"] == 1.0
    assert not scan_decisions(_scan_frame(), pi0=1.0)["bayes_rejected"].any()
    table = scan_decisions(_scan_frame(), pi0="estimate")
    assert 0 < table.attrs["pi0"] < 1
    assert table.loc[0, "bayes_rejected"]


def _sets_frame():
    return pd.DataFrame(
        {
            "set_id": ["s1", "s2"],
            "log10_bf_burden": [3.0, -1.0],
            "log10_bf_skat": [1.0, -0.5],
            "log10_bf_cv": [0.0, -0.2],
            "log10_bf_combined": [np.nan, np.nan],
            "pi_burden": [np.nan, np.nan],
            "pi_skat": [np.nan, np.nan],
            "pi_cv": [np.nan, np.nan],
        }
    )


def test_with_combined_three_way():
    table = with_combined(_sets_frame(), [1.0, 0.0, 0.0])
    assert table["log10_bf_combined"].tolist() == pytest.approx([3.0, -1.0])
    assert table[["pi_burden", "pi_skat", "pi_cv"]].iloc[0].tolist() == [1.0, 0.0, 0.0]


def test_with_combined_two_way():
    table = with_combined(_sets_frame(), [0.2, 0.3, 0.5], two_way=True, pi_two_way=0.0)
    assert table["log10_bf_combined"].tolist() == pytest.approx([1.0, -0.5])
    assert table["pi_cv"].tolist() == [0.0, 0.0]


def test_set_decisions():
    table = set_decisions(with_combined(_sets_frame(), [1.0, 0.0, 0.0]), p0=0.5, alpha=0.05)
    assert table["rejected"].tolist() == [True, False]
    assert table["posterior_null"].between(0, 1).all()


def test_em_table():
    em = em_estimate_weights(np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [-1.0, -1.0, -1.0]]))
    table = em_table(em, ["burden", "skat", "cv"])
    assert table["parameter"].tolist() == ["p0", "pi_burden", "pi_skat", "pi_cv"]
    assert table["value"].iloc[1:].sum() == pytest.approx(1.0)


def test_realized_error_rates():
    rates = realized_error_rates([True, True, False, True], [True, False, False, False])
    assert rates["rejected"] == 3 and rates["false_discoveries"] == 1
    assert rates["fdr"] == pytest.approx(1 / 3)
    assert rates["power"] == pytest.approx(2 / 3)
    assert realized_error_rates([False], [True])["fdr"] == 0.0
    with pytest.raises(ValueError):
        realized_error_rates([True], [True, False])


def test_pvalue_baselines():
    out = pvalue_baselines(np.array([1e-9, 0.5, 0.9, 0.04]))
    assert out["bh"].tolist() == [True, False, False, False]
    assert out["storey"][0]


def test_set_test_on_simulated_panel_controls_errors():
    config = SimConfig(
        n_individuals=200,
        n_sets=40,
        snps_per_set=10,
        null_fraction=0.5,
        causal_fraction=0.3,
        effect_c=1.0,
        maf_range=(0.01, 0.05),
        ld_block_size=1,
        seed=5,
    )
    panel = simulate_panel(config)
    records = []
    for i, s in enumerate(panel.sets):
        dataset = panel.dataset(i)
        keep = [j for j in range(dataset.p) if np.ptp(dataset.G[:, j]) > 0]
        test = SetTest(LinearMixedModel(dataset))
        records.append(test.evaluate(s.set_id, keep))
    table = records_frame(records)
    components = table[["log10_bf_burden", "log10_bf_skat", "log10_bf_cv"]].to_numpy()
    em = em_estimate_weights(components)
    decided = set_decisions(with_combined(table, em.pis), em.p0, alpha=0.05)
    rates = realized_error_rates(decided["rejected"], panel.truth()["is_null"])
    assert rates["fdr"] <= 0.2
    assert rates["power"] >= 0.5


REPLICATES = 10
ALPHA = 0.05


def _panel_table(config: SimConfig, executor: ThreadPoolExecutor):
    panel = simulate_panel(config, executor)

    def one(i):
        dataset = panel.dataset(i)
        keep = [j for j in range(dataset.p) if np.ptp(dataset.G[:, j]) > 0]
        return SetTest(LinearMixedModel(dataset)).evaluate(panel.sets[i].set_id, keep)

    return records_frame(list(executor.map(one, range(len(panel.sets))))), panel.truth()["is_null"]


def _rejected(table: pd.DataFrame, components, fix_pis: bool) -> pd.Series:
    em = em_estimate_weights(table[[f"log10_bf_{c}" for c in components]].to_numpy(), fix_pis=fix_pis)
    if len(components) == 2:
        combined = with_combined(table, em.pis, two_way=True, pi_two_way=float(em.pis[0]))
    else:
        combined = with_combined(table, em.pis)
    return set_decisions(combined, em.p0, ALPHA)["rejected"]


def _replicate_rates(scenario_mix, methods, seed: int) -> pd.DataFrame:
    rows = []
    with ThreadPoolExecutor(4) as executor:
        for replicate in range(REPLICATES):
            config = SimConfig.desk(scenario_mix=scenario_mix, effect_c=0.2, seed=seed + replicate)
            table, is_null = _panel_table(config, executor)
            for method, (components, fix_pis) in methods.items():
                rates = realized_error_rates(_rejected(table, components, fix_pis), is_null)
                rows.append((method, replicate, rates["fdr"], rates["power"]))
    return pd.DataFrame(rows, columns=["method", "replicate", "fdr", "power"])


def _rates_of(rates: pd.DataFrame, method: str, metric: str) -> np.ndarray:
    return rates.loc[rates["method"] == method].sort_values("replicate")[metric].to_numpy()


def _mean_and_se(values: np.ndarray):
    return values.mean(), values.std(ddof=1) / np.sqrt(values.size)


def _paired_gain_holds(rates: pd.DataFrame, better: str, worse: str) -> bool:
    gain = _rates_of(rates, better, "power") - _rates_of(rates, worse, "power")
    mean, se = _mean_and_se(gain)
    return mean >= -2 * se


@pytest.mark.parametrize("pi_burden", [0.2, 0.5])
def test_estimated_weights_on_desk_panels(pi_burden):
    methods = {
        "bayes_e": (["burden", "skat"], False),
        "bayes_d": (["burden", "skat"], True),
    }
    rates = _replicate_rates((pi_burden, 1 - pi_burden, 0.0), methods, seed=1000 + int(100 * pi_burden))
    for method in methods:
        mean, se = _mean_and_se(_rates_of(rates, method, "fdr"))
        assert mean <= ALPHA + 2 * se
    assert _paired_gain_holds(rates, "bayes_e", "bayes_d")
    assert _rates_of(rates, "bayes_e", "power").mean() > 0


def test_three_way_estimate_beats_two_way_default_with_common_variant_sets():
    methods = {
        "three_way_e": (["burden", "skat", "cv"], False),
        "two_way_d": (["burden", "skat"], True),
    }
    rates = _replicate_rates((0.3, 0.3, 0.4), methods, seed=2000)
    mean, se = _mean_and_se(_rates_of(rates, "three_way_e", "fdr"))
    assert mean <= ALPHA + 2 * se
    assert _paired_gain_holds(rates, "three_way_e", "two_way_d")
    assert _rates_of(rates, "three_way_e", "power").mean() > 0
