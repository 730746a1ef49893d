import io
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import (
    DimensionMismatchError,
    DuplicateSampleError,
    EmptyMatrixError,
    InputError,
    NonFiniteEntryError,
)
from .lmm import Dataset, estimate_kinship

FLOAT_FORMAT = "%.17g"
HEADER_PREFIX = "#"
SEP = "\t"

PathLike = Union[str, Path]


class MatrixKind(str, Enum):
    phenotype = "phenotype"
    covariates = "covariates"
    genotypes = "genotypes"
    kinship = "kinship"
    weights = "weights"
    sets = "sets"
    truth = "truth"


GENOTYPE_ANNOTATIONS = ["snp_id", "position", "maf"]
ID_COLUMNS = {
    MatrixKind.phenotype: "sample_id",
    MatrixKind.covariates: "sample_id",
    MatrixKind.kinship: "sample_id",
    MatrixKind.genotypes: "snp_id",
    MatrixKind.weights: "snp_id",
}


@dataclass
class MatrixTable:
    """
    Numeric block of a file with its row and column identifiers.

    Genotype tables are stored SNP by sample on disk and exposed as `values` of shape `n x p` (samples by SNPs),
    `annotations` then holds the `snp_id`, `position` and `maf` columns.
    """

    values: np.ndarray
    row_ids: List[str]
    column_ids: List[str]
    header: List[str] = field(default_factory=list)
    annotations: Optional[pd.DataFrame] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.column_ids.index(name)]
        except ValueError:
            raise InputError(f"Column `{name}` not found, available are {self.column_ids}")


def _split_header(path: PathLike) -> Tuple[List[str], str]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"File `{path}` does not exist")
    text = path.read_text(encoding="utf-8")
    header, body = [], []
    for line in text.splitlines():
        if not body and line.startswith(HEADER_PREFIX):
            header.append(line[len(HEADER_PREFIX) :].strip())
        elif line.strip():
            body.append(line)
    return header, "\n".join(body)


def read_table(path: PathLike, id_columns: Sequence[str] = ()) -> Tuple[List[str], pd.DataFrame]:
    """
    Tab separated file with `#` header lines. Numbers are parsed with the C locale and round-trip precision,
    `id_columns` stay strings.
    """
    header, body = _split_header(path)
    if not body:
        return header, pd.DataFrame()
    lines = body.split("\n")
    names = lines[0].split(SEP)
    _check_unique(names, "column", path)
    for i, line in enumerate(lines[1:], start=1):
        if len(line.split(SEP)) != len(names):
            raise DimensionMismatchError(
                f"Row {i} of `{path}` has {len(line.split(SEP))} fields but the header has {len(names)}"
            )
    frame = pd.read_csv(
        io.StringIO(body),
        sep=SEP,
        dtype={c: str for c in id_columns},
        float_precision="round_trip",
        keep_default_na=False,
        na_values=["nan", "NaN", "NA"],
    )
    return header, frame


def write_table(path: PathLike, frame: pd.DataFrame, header: Sequence[str] = ()) -> None:
    """
    Tab separated file, floats printed with 17 significant digits so that reading it back is bit-exact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for line in header:
            f.write(f"{HEADER_PREFIX} {line}\n")
        frame.to_csv(f, sep=SEP, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _numeric_block(frame: pd.DataFrame, columns: Sequence[str], path: PathLike) -> np.ndarray:
    try:
        values = frame[list(columns)].apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as e:
        raise NonFiniteEntryError(f"Non-numeric entry in `{path}`: {e}")
    if not np.all(np.isfinite(values)):
        rows, cols = np.nonzero(~np.isfinite(values))
        raise NonFiniteEntryError(
            f"Non-finite entry in `{path}` at row {rows[0]}, column `{columns[cols[0]]}`", context=str(path)
        )
    return values


def _check_unique(ids: Sequence[str], what: str, path: PathLike) -> None:
    seen = pd.Index(ids)
    if seen.has_duplicates:
        raise DuplicateSampleError(f"Duplicate {what} `{seen[seen.duplicated()][0]}` in `{path}`")


def load_matrix(path: PathLike, kind: MatrixKind) -> MatrixTable:
    """
    Load one of the numeric file kinds.

    | kind | layout |
    | --- | --- |
    | `phenotype` | `sample_id` then one column per phenotype |
    | `covariates` | `sample_id` then covariates, an intercept is prepended when missing |
    | `genotypes` | `snp_id`, `position` (`chr:pos`), `maf` then one dosage column per sample id |
    | `kinship` | `sample_id` then one column per sample id, symmetric |
    | `weights` | `snp_id`, `weight` |

    Arguments:
        path: file path
        kind: file kind

    Returns:
        [`MatrixTable`][blmmstats.toolkit.dao.MatrixTable]
    """
    kind = MatrixKind(kind)
    if kind not in ID_COLUMNS:
        raise ValueError(f"Kind `{kind.value}` is not a matrix, use `load_sets` or `load_truth`")
    id_column = ID_COLUMNS[kind]
    id_columns = GENOTYPE_ANNOTATIONS[:2] if kind == MatrixKind.genotypes else [id_column]
    header, frame = read_table(path, id_columns)
    if frame.empty or frame.shape[1] < 2:
        raise EmptyMatrixError(f"File `{path}` has no {kind.value} entries")
    if id_column not in frame.columns:
        raise InputError(f"File `{path}` misses the `{id_column}` column")
    row_ids = frame[id_column].astype(str).tolist()
    _check_unique(row_ids, id_column, path)

    if kind == MatrixKind.genotypes:
        missing = [c for c in GENOTYPE_ANNOTATIONS if c not in frame.columns]
        if missing:
            raise InputError(f"Genotype file `{path}` misses columns {missing}")
        samples = [c for c in frame.columns if c not in GENOTYPE_ANNOTATIONS]
        if not samples:
            raise EmptyMatrixError(f"Genotype file `{path}` has no samples")
        _check_unique(samples, "sample_id", path)
        values = _numeric_block(frame, samples, path).T
        annotations = frame[GENOTYPE_ANNOTATIONS].reset_index(drop=True)
        annotations["maf"] = pd.to_numeric(annotations["maf"], errors="coerce")
        return MatrixTable(values, samples, row_ids, header, annotations)

    columns = [c for c in frame.columns if c != id_column]
    values = _numeric_block(frame, columns, path)
    if kind == MatrixKind.kinship:
        if values.shape[0] != values.shape[1]:
            raise DimensionMismatchError(f"Kinship `{path}` is {values.shape[0]} x {values.shape[1]}")
        if [str(c) for c in columns] != row_ids:
            raise DimensionMismatchError(f"Kinship `{path}` rows and columns list different samples")
    if kind == MatrixKind.covariates and not np.all(values[:, 0] == 1.0):
        values = np.column_stack([np.ones(values.shape[0]), values])
        columns = ["intercept", *columns]
    return MatrixTable(values, row_ids, [str(c) for c in columns], header)


def save_matrix(path: PathLike, kind: MatrixKind, table: MatrixTable) -> None:
    """Inverse of [`load_matrix`][blmmstats.toolkit.dao.load_matrix]."""
    kind = MatrixKind(kind)
    values = np.asarray(table.values, dtype=float)
    if values.size == 0:
        raise EmptyMatrixError(f"Refusing to write an empty {kind.value} matrix")
    if not np.all(np.isfinite(values)):
        raise NonFiniteEntryError(f"Refusing to write non-finite {kind.value} entries")
    if values.shape != (len(table.row_ids), len(table.column_ids)):
        raise DimensionMismatchError(
            f"Values of shape {values.shape} do not match {len(table.row_ids)} rows and {len(table.column_ids)} columns"
        )
    if kind == MatrixKind.genotypes:
        annotations = table.annotations
        if annotations is None:
            annotations = pd.DataFrame(
                {"snp_id": table.column_ids, "position": "0:0", "maf": _folded_maf(values)}
            )
        frame = pd.concat(
            [annotations.reset_index(drop=True), pd.DataFrame(values.T, columns=table.row_ids)], axis=1
        )
    else:
        frame = pd.DataFrame(values, columns=table.column_ids)
        frame.insert(0, ID_COLUMNS[kind], table.row_ids)
    write_table(path, frame, [f"kind={kind.value}", *table.header])


def _folded_maf(genotypes: np.ndarray) -> np.ndarray:
    freq = genotypes.mean(axis=0) / 2
    return np.minimum(freq, 1 - freq)


def load_sets(path: PathLike) -> Dict[str, List[str]]:
    """`set_id`, `snp_id` membership rows, sets keep the order of their first appearance."""
    _, frame = read_table(path, ["set_id", "snp_id"])
    if frame.empty:
        raise EmptyMatrixError(f"Set file `{path}` is empty")
    if not {"set_id", "snp_id"} <= set(frame.columns):
        raise InputError(f"Set file `{path}` needs `set_id` and `snp_id` columns")
    if frame.duplicated(["set_id", "snp_id"]).any():
        raise InputError(f"Set file `{path}` lists a SNP twice in one set")
    sets: Dict[str, List[str]] = {}
    for set_id, snp_id in zip(frame["set_id"], frame["snp_id"]):
        sets.setdefault(set_id, []).append(snp_id)
    return sets


def save_sets(path: PathLike, sets: Dict[str, Sequence[str]]) -> None:
    rows = [(set_id, snp_id) for set_id, snps in sets.items() for snp_id in snps]
    write_table(path, pd.DataFrame(rows, columns=["set_id", "snp_id"]), ["kind=sets"])


def load_truth(path: PathLike) -> pd.DataFrame:
    _, frame = read_table(path, ["set_id", "scenario"])
    if frame.empty:
        raise EmptyMatrixError(f"Truth file `{path}` is empty")
    frame["is_null"] = frame["is_null"].astype(str).str.lower().isin(["true", "1"])
    return frame


def save_truth(path: PathLike, truth: pd.DataFrame) -> None:
    write_table(path, truth, ["kind=truth"])


class Dao:
    """
    Abstract class interfacing any kind of underlying data source.
    """

    def load_dataset(self, phenotype: Optional[str] = None) -> Dataset:
        """
        Phenotype, covariates, genotypes and kinship aligned on the sample ids of the phenotype.

        Arguments:
            phenotype: phenotype column, the first one by default
        """
        pass

    def phenotype_names(self) -> List[str]:
        pass

    def load_phenotype(self, name: str) -> np.ndarray:
        """Single phenotype column in the sample order of `load_dataset`."""
        pass

    def load_sets(self) -> Dict[str, List[str]]:
        """SNP set membership by SNP id."""
        pass

    def load_mafs(self) -> Optional[np.ndarray]:
        """Minor allele frequencies in genotype order, `None` when not recorded."""
        pass

    def close(self) -> None:
        """
        Close underlying data source connection and frees resources (if any).
        """
        pass


class TsvDao(Dao):
    """
    [`Dao`][blmmstats.toolkit.dao.Dao] reading the tab separated file kinds of
    [`load_matrix`][blmmstats.toolkit.dao.load_matrix].

    Arguments:
        phenotype: phenotype file
        genotypes: genotype file
        covariates: covariate file, intercept only when missing
        kinship: kinship file, no random effect when missing unless `estimate_kinship` is set
        sets: SNP set membership file
        estimate_kinship: estimate the kinship from the genotypes when no file is given
    """

    def __init__(
        self,
        phenotype: PathLike,
        genotypes: PathLike,
        covariates: Optional[PathLike] = None,
        kinship: Optional[PathLike] = None,
        sets: Optional[PathLike] = None,
        estimate_kinship: bool = False,
    ):
        self._logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.paths = dict(phenotype=phenotype, genotypes=genotypes, covariates=covariates, kinship=kinship, sets=sets)
        self.estimate_kinship = estimate_kinship
        self._phenotype = load_matrix(phenotype, MatrixKind.phenotype)
        self._genotypes = load_matrix(genotypes, MatrixKind.genotypes)
        self._covariates = load_matrix(covariates, MatrixKind.covariates) if covariates is not None else None
        self._kinship = load_matrix(kinship, MatrixKind.kinship) if kinship is not None else None

    def phenotype_names(self) -> List[str]:
        return list(self._phenotype.column_ids)

    def load_phenotype(self, name: str) -> np.ndarray:
        return self._phenotype.column(name)

    def _align(self, table: MatrixTable, samples: List[str], what: str) -> np.ndarray:
        index = {s: i for i, s in enumerate(table.row_ids)}
        missing = [s for s in samples if s not in index]
        if missing:
            raise DimensionMismatchError(f"{what} misses {len(missing)} samples, e.g. `{missing[0]}`")
        return table.values[[index[s] for s in samples]]

    def load_dataset(self, phenotype: Optional[str] = None) -> Dataset:
        samples = self._phenotype.row_ids
        y = self._phenotype.column(phenotype) if phenotype is not None else self._phenotype.values[:, 0]
        G = self._align(self._genotypes, samples, "Genotype file")
        if self._covariates is not None:
            X = self._align(self._covariates, samples, "Covariate file")
        else:
            X = np.ones((len(samples), 1))
        K = None
        if self._kinship is not None:
            rows = self._align(self._kinship, samples, "Kinship file")
            index = {s: i for i, s in enumerate(self._kinship.column_ids)}
            K = rows[:, [index[s] for s in samples]]
        elif self.estimate_kinship:
            self._logger.info(f"Estimating kinship from {G.shape[1]} SNPs")
            K = estimate_kinship(G)
        return Dataset(y=y, X=X, G=G, K=K, sample_ids=list(samples), snp_ids=list(self._genotypes.column_ids))

    def load_sets(self) -> Dict[str, List[str]]:
        if self.paths["sets"] is None:
            raise InputError("No SNP set file given")
        return load_sets(self.paths["sets"])

    def load_mafs(self) -> Optional[np.ndarray]:
        mafs = self._genotypes.annotations["maf"].to_numpy(dtype=float)
        return mafs if np.all(np.isfinite(mafs)) else None

    def snp_index(self) -> Dict[str, int]:
        return {s: j for j, s in enumerate(self._genotypes.column_ids)}
