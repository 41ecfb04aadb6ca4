#!/usr/bin/env python3
"""Checks a user-supplied Edmonton assessment CSV against a config before a run.

The data is not shipped or downloaded. Obtain the 2015 property assessment
extract from the City of Edmonton open data portal, save it as CSV, and point
this script at it. Exit codes follow the hsfm CLI: 0 ok, 2 config, 3 data.
"""
import argparse
import configparser
import csv
import os
import re
import sys

EXPECTED_ROWS = 6130


def feature_columns(text):
    cols, depth, cur = [], 0, ""
    for ch in text:
        depth += ch == "("
        depth -= ch == ")"
        if ch == "," and depth == 0:
            cols.append(cur)
            cur = ""
        else:
            cur += ch
    cols.append(cur)
    return [re.split(r"[:=]", c.strip(), maxsplit=1)[0].strip() for c in cols if c.strip()]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv", help="path to the assessment CSV")
    ap.add_argument("-c", "--config", default=os.path.join(os.path.dirname(__file__), "edmonton.example.ini"))
    args = ap.parse_args()

    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not cfg.read(args.config):
        print(f"config not readable: {args.config}", file=sys.stderr)
        return 2
    data = cfg["data"] if cfg.has_section("data") else {}
    required = [
        data.get("id_column", "id"),
        data.get("value_column", "assessed_value"),
        data.get("lat_column", "latitude"),
        data.get("lon_column", "longitude"),
    ] + feature_columns(data.get("features", ""))

    if not os.path.isfile(args.csv):
        print(f"no such file: {args.csv}", file=sys.stderr)
        return 3
    with open(args.csv, newline="", encoding="utf-8-sig") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            print("missing columns: " + ", ".join(missing), file=sys.stderr)
            print("header: " + ", ".join(header), file=sys.stderr)
            return 3
        rows = unusable = 0
        for row in reader:
            rows += 1
            try:
                float(row[required[1]])
                lat, lon = float(row[required[2]]), float(row[required[3]])
                if not (53.0 < lat < 54.0 and -114.5 < lon < -113.0):
                    unusable += 1
            except ValueError:
                unusable += 1
    print(f"{rows} rows, {unusable} without a usable value or Edmonton coordinates")
    if rows - unusable != EXPECTED_ROWS:
        print(f"note: the published study used {EXPECTED_ROWS} houses", file=sys.stderr)
    return 0 if rows > unusable else 3


if __name__ == "__main__":
    sys.exit(main())
