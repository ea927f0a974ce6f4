"""Shared bits for the experiment scripts."""
import argparse
import csv
from pathlib import Path


def parser(doc: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--out", default="results", help="directory for CSV output")
    return p


def write_csv(out: str, name: str, header, rows) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    path = path / name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path
