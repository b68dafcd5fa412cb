#!/usr/bin/env python3
"""Download the UCI regression datasets into the layout tinyde expects.

Each dataset is written as <out>/<name>.csv: comma separated, one header row,
feature columns first and the regression target last. The UCI archive is
tried first. Boston Housing and Concrete also have fallbacks that extract the
same tables from Python wheels on the package index, for machines without
access to the archive.

    python scripts/fetch_uci.py                  # all datasets into data/uci
    python scripts/fetch_uci.py boston-housing concrete --out /tmp/uci
"""

from __future__ import annotations

import argparse
import hashlib
import io
import lzma
import pickle
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

import pandas as pd

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"
ROOT = Path(__file__).resolve().parent.parent

EXPECTED = {
    "boston-housing": (506, 13),
    "concrete": (1030, 8),
    "energy": (768, 8),
    "kin8nm": (8192, 8),
    "naval-propulsion": (11934, 16),
    "power-plant": (9568, 4),
    "protein-structure": (45730, 9),
    "wine-quality-red": (1599, 11),
    "yacht": (308, 6),
    "year-prediction-msd": (515345, 90),
}


def _get(url: str, timeout: float = 30.0) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as r:
        return r.read()


def _wheel_member(requirement: str, member: str) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet", requirement, "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as z:
            return z.read(member)


# UCI archive readers. Each returns a frame with the target in the last column.

def boston_uci() -> pd.DataFrame:
    raw = _get(f"{UCI}/housing/housing.data")
    return pd.read_csv(io.BytesIO(raw), sep=r"\s+", header=None)


def boston_wheel() -> pd.DataFrame:
    raw = _wheel_member("scikit-learn==1.1.3", "sklearn/datasets/data/boston_house_prices.csv")
    return pd.read_csv(io.BytesIO(raw), skiprows=1)


def concrete_uci() -> pd.DataFrame:
    return pd.read_excel(io.BytesIO(_get(f"{UCI}/concrete/compressive/Concrete_Data.xls")))


def concrete_wheel() -> pd.DataFrame:
    raw = _wheel_member("rdatasets==0.2.10", "rdatasets/_data/modeldata/concrete.pkl.compress")
    frame = pickle.loads(lzma.decompress(raw))
    return frame.drop(columns=["rownames"])


def energy_uci() -> pd.DataFrame:
    frame = pd.read_excel(io.BytesIO(_get(f"{UCI}/00242/ENB2012_data.xlsx"))).dropna(how="all")
    return frame.iloc[:, :9]  # X1..X8 and heating load Y1


def kin8nm_openml() -> pd.DataFrame:
    raw = _get("https://www.openml.org/data/get_csv/3626/dataset_2175_kin8nm.arff")
    return pd.read_csv(io.BytesIO(raw))


def naval_uci() -> pd.DataFrame:
    with zipfile.ZipFile(io.BytesIO(_get(f"{UCI}/00316/UCI%20CBM%20Dataset.zip"))) as z:
        name = next(n for n in z.namelist() if n.endswith("data.txt"))
        frame = pd.read_csv(z.open(name), sep=r"\s+", header=None)
    return frame.iloc[:, :17]  # 16 features and the compressor decay coefficient


def power_uci() -> pd.DataFrame:
    with zipfile.ZipFile(io.BytesIO(_get(f"{UCI}/00294/CCPP.zip"))) as z:
        name = next(n for n in z.namelist() if n.endswith(".xlsx"))
        return pd.read_excel(z.open(name))


def protein_uci() -> pd.DataFrame:
    frame = pd.read_csv(io.BytesIO(_get(f"{UCI}/00265/CASP.csv")))
    cols = list(frame.columns)
    return frame[cols[1:] + cols[:1]]  # RMSD is the first column


def wine_uci() -> pd.DataFrame:
    return pd.read_csv(io.BytesIO(_get(f"{UCI}/wine-quality/winequality-red.csv")), sep=";")


def yacht_uci() -> pd.DataFrame:
    raw = _get(f"{UCI}/00243/yacht_hydrodynamics.data")
    return pd.read_csv(io.BytesIO(raw), sep=r"\s+", header=None)


def year_uci() -> pd.DataFrame:
    with zipfile.ZipFile(io.BytesIO(_get(f"{UCI}/00203/YearPredictionMSD.txt.zip", timeout=600))) as z:
        frame = pd.read_csv(z.open(z.namelist()[0]), header=None)
    cols = list(frame.columns)
    return frame[cols[1:] + cols[:1]]  # year is the first column


SOURCES = {
    "boston-housing": [boston_uci, boston_wheel],
    "concrete": [concrete_uci, concrete_wheel],
    "energy": [energy_uci],
    "kin8nm": [kin8nm_openml],
    "naval-propulsion": [naval_uci],
    "power-plant": [power_uci],
    "protein-structure": [protein_uci],
    "wine-quality-red": [wine_uci],
    "yacht": [yacht_uci],
    "year-prediction-msd": [year_uci],
}


def fetch(name: str, out: Path) -> bool:
    rows, dims = EXPECTED[name]
    errors = []
    for source in SOURCES[name]:
        try:
            frame = source()
        except Exception as exc:  # network, parse or pip failures: try the next source
            errors.append(f"{source.__name__}: {exc}")
            continue
        frame = frame.apply(pd.to_numeric, errors="raise")
        if frame.shape != (rows, dims + 1):
            errors.append(f"{source.__name__}: got shape {frame.shape}, expected {(rows, dims + 1)}")
            continue
        header = [f"x{i}" for i in range(dims)] + ["y"]
        path = out / f"{name}.csv"
        frame.to_csv(path, index=False, header=header)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        print(f"{name}: {rows} x {dims} from {source.__name__} -> {path} sha256={digest}")
        return True
    print(f"{name}: FAILED", file=sys.stderr)
    for e in errors:
        print(f"  {e}", file=sys.stderr)
    return False


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("datasets", nargs="*", default=sorted(EXPECTED), choices=sorted(EXPECTED), metavar="DATASET")
    parser.add_argument("--out", type=Path, default=ROOT / "data" / "uci")
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    ok = [fetch(name, args.out) for name in args.datasets]
    return 0 if all(ok) else 1


if __name__ == "__main__":
    sys.exit(main())
