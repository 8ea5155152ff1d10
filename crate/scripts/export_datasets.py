"""Export the three regression benchmark datasets to CSV under data/.

Sources are datasets bundled inside Python packages so no network access is
needed beyond the package index:

  boston.csv      mlxtend (mlxtend/data/data/boston_housing.csv), target MEDV
  diabetes.csv    scikit-learn load_diabetes(scaled=False), target "target"
  california.csv  pytorch-widedeep bundled parquet, target median_house_value

Usage: python3 scripts/export_datasets.py [--wheel-dir DIR] [--out DIR]
"""

import argparse
import glob
import io
import os
import subprocess
import sys
import tempfile
import zipfile

import numpy as np
import pandas as pd

BOSTON_COLUMNS = [
    "CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE",
    "DIS", "RAD", "TAX", "PTRATIO", "B", "LSTAT", "MEDV",
]


def fetch_wheel(package, wheel_dir):
    found = glob.glob(os.path.join(wheel_dir, package.replace("-", "_") + "-*.whl"))
    if not found:
        subprocess.check_call(
            [sys.executable, "-m", "pip", "download", "--no-deps", package, "-d", wheel_dir]
        )
        found = glob.glob(os.path.join(wheel_dir, package.replace("-", "_") + "-*.whl"))
    return zipfile.ZipFile(found[0])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--wheel-dir", default=tempfile.gettempdir())
    parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    raw = fetch_wheel("mlxtend", args.wheel_dir).read("mlxtend/data/data/boston_housing.csv")
    boston = pd.DataFrame(np.loadtxt(io.BytesIO(raw), delimiter=","), columns=BOSTON_COLUMNS)
    boston.to_csv(os.path.join(args.out, "boston.csv"), index=False)

    from sklearn.datasets import load_diabetes

    diabetes = load_diabetes(as_frame=True, scaled=False).frame
    diabetes.to_csv(os.path.join(args.out, "diabetes.csv"), index=False)

    wheel = fetch_wheel("pytorch-widedeep", args.wheel_dir)
    raw = wheel.read("pytorch_widedeep/datasets/data/california_housing.parquet.brotli")
    california = pd.read_parquet(io.BytesIO(raw)).rename(columns={"MedHouseVal": "median_house_value"})
    california.to_csv(os.path.join(args.out, "california.csv"), index=False)

    for name, df in [("boston", boston), ("diabetes", diabetes), ("california", california)]:
        print(f"{name}: {df.shape[0]} rows x {df.shape[1]} columns")


if __name__ == "__main__":
    main()
