#!/usr/bin/env python3
"""Build data/{adult,compas,german}.csv from the raw UCI / ProPublica files.

The raw files are taken from the `responsibly` wheel, which vendors them:

    pip download --no-deps responsibly==0.1.2 -d /tmp/wheel
    python3 scripts/prepare_data.py /tmp/wheel/responsibly-0.1.2-py3-none-any.whl data/

Only column naming, header insertion, and the standard two-year COMPAS
filter happen here. Encoding and standardization are done by the loader.
"""
import csv
import io
import sys
import zipfile

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country", "income",
]

GERMAN_COLUMNS = [
    "status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "present_employment", "installment_rate", "status_sex",
    "other_debtors", "residence_since", "property", "age", "installment_plans",
    "housing", "number_of_credits", "job", "people_liable", "telephone",
    "foreign_worker", "credit",
]

COMPAS_COLUMNS = [
    "sex", "age", "race", "juv_fel_count", "juv_misd_count",
    "juv_other_count", "priors_count", "c_charge_degree", "two_year_recid",
]


def adult(zf):
    rows = []
    for name, skip in (("adult.data", 0), ("adult.test", 1)):
        text = zf.read(f"responsibly/dataset/adult/{name}").decode()
        for line in text.splitlines()[skip:]:
            line = line.strip()
            if not line:
                continue
            cells = [c.strip() for c in line.split(",")]
            cells[-1] = cells[-1].rstrip(".")
            cells = ["" if c == "?" else c for c in cells]
            rows.append(cells)
    return ADULT_COLUMNS, rows


def german(zf):
    text = zf.read("responsibly/dataset/german/german.data").decode()
    rows = [line.split() for line in text.splitlines() if line.strip()]
    return GERMAN_COLUMNS, rows


def compas(zf):
    text = zf.read("responsibly/dataset/compas/compas-scores-two-years.csv").decode()
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for r in reader:
        if r["days_b_screening_arrest"] == "":
            continue
        if not -30 <= int(r["days_b_screening_arrest"]) <= 30:
            continue
        if r["is_recid"] == "-1" or r["c_charge_degree"] == "O":
            continue
        if r["score_text"] == "N/A":
            continue
        if r["race"] not in ("African-American", "Caucasian"):
            continue
        rows.append([r[c] for c in COMPAS_COLUMNS])
    return COMPAS_COLUMNS, rows


def main():
    wheel, out = sys.argv[1], sys.argv[2]
    zf = zipfile.ZipFile(wheel)
    for name, build in (("adult", adult), ("german", german), ("compas", compas)):
        header, rows = build(zf)
        with open(f"{out}/{name}.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        print(f"{name}: {len(rows)} rows")


if __name__ == "__main__":
    main()
