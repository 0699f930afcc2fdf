#!/usr/bin/env python3
"""Writes data/fixtures/credit_fixture_200.csv.

The rows are SYNTHETIC. They follow the column layout and value ranges of
the UCI "default of credit card clients" table but contain no real records.
The label is drawn from a logistic model driven mostly by PAY_0.
"""
import csv
import math
import pathlib
import random

ROWS = 200
SEED = 20240601

HEADER = (["ID", "LIMIT_BAL", "SEX", "EDUCATION", "MARRIAGE", "AGE", "PAY_0"]
          + [f"PAY_{k}" for k in range(2, 7)]
          + [f"BILL_AMT{k}" for k in range(1, 7)]
          + [f"PAY_AMT{k}" for k in range(1, 7)]
          + ["default payment next month"])


def main() -> None:
    rng = random.Random(SEED)
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "fixtures" / "credit_fixture_200.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for i in range(1, ROWS + 1):
            limit = rng.choice(range(10000, 500001, 10000))
            sex = rng.choice([1, 2])
            edu = rng.choices([1, 2, 3, 4], weights=[35, 47, 16, 2])[0]
            mar = rng.choices([1, 2, 3], weights=[45, 53, 2])[0]
            age = rng.randint(21, 70)
            pays = [rng.choices([-2, -1, 0, 1, 2, 3], weights=[10, 20, 50, 10, 8, 2])[0] for _ in range(6)]
            bills = [max(0, int(rng.gauss(0.4, 0.3) * limit)) for _ in range(6)]
            amts = [max(0, int(rng.expovariate(1.0 / 5000.0))) for _ in range(6)]
            z = -1.6 + 0.9 * pays[0] + 0.3 * pays[1] - 1e-6 * limit - 2e-5 * amts[0]
            label = 1 if rng.random() < 1.0 / (1.0 + math.exp(-z)) else 0
            w.writerow([i, limit, sex, edu, mar, age] + pays + bills + amts + [label])


if __name__ == "__main__":
    main()
