from typing import Optional, Sequence, Union

from prometheus_client import REGISTRY, Counter, Summary, write_to_textfile

PREFIX = "blmm_stats_"


def get_prometheus_metric(
    name: str, metric_type: type, labels: Optional[Sequence[str]] = None
) -> Union[Counter, Summary]:
    """
    Metric `blmm_stats_<name>` of the default registry. Modules imported twice under different package paths get
    the collector registered first.
    """
    full_name = PREFIX + name
    existing = REGISTRY._names_to_collectors.get(full_name)
    if existing is not None:
        return existing
    return metric_type(full_name, f"blmm-stats {name.replace('_', ' ')}", list(labels or []))


def write_metrics(path: str) -> None:
    """Dump the default registry in the text exposition format."""
    write_to_textfile(path, REGISTRY)
