#!/usr/bin/env python3
"""Converts the UCI credit-default .xls sheet to CSV and checks its shape.

Usage: credit_xls_to_csv.py INPUT.xls OUTPUT.csv

The sheet has a banner row (X1..X23, Y) above the real header, which is
skipped. Needs pandas and xlrd (pip install xlrd).
"""

import sys

EXPECTED_COLUMNS = (
    ["ID", "LIMIT_BAL", "SEX", "EDUCATION", "MARRIAGE", "AGE", "PAY_0"]
    + [f"PAY_{k}" for k in range(2, 7)]
    + [f"BILL_AMT{k}" for k in range(1, 7)]
    + [f"PAY_AMT{k}" for k in range(1, 7)]
    + ["default payment next month"]
)
EXPECTED_ROWS = 30000


def main(argv):
    if len(argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    try:
        import pandas as pd
    except ImportError:
        print("pandas is required", file=sys.stderr)
        return 2
    try:
        frame = pd.read_excel(argv[1], header=1, engine="xlrd")
    except ImportError:
        print("xlrd is required to read .xls files: pip install xlrd", file=sys.stderr)
        return 2
    columns = [str(c).strip() for c in frame.columns]
    if columns != EXPECTED_COLUMNS:
        print(f"unexpected header: {columns}", file=sys.stderr)
        return 1
    if len(frame) != EXPECTED_ROWS:
        print(f"expected {EXPECTED_ROWS} rows, found {len(frame)}", file=sys.stderr)
        return 1
    frame.columns = columns
    frame.to_csv(argv[2], index=False)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
