"""Push reference-shaped synthetic cohorts through the preprocessing funnel and print the counts.

    python scripts/cohort_counts.py [--full-eicu]

The MIMIC-shaped cohort has 2505 AKI and 158 non-AKI patients; the
eICU-shaped one is down-scaled tenfold (9315/2363) unless --full-eicu is
given (93,149/23,626, which takes a few minutes for the neighbor search).
"""
import argparse
import tempfile
import time
from pathlib import Path

from akinet.data import preprocess, read_table, schema_for, demographics_schema, synth_generate, write_csv


def run(variant, pos, neg, seed=0):
    t = time.time()
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / f"{variant}.csv"
        write_csv(path, synth_generate(schema_for(variant), pos + neg, (pos, neg), 2.0, seed))
        ds, rep = preprocess(read_table(path, demographics_schema(variant)), variant, seed=seed)
    print(f"{variant}: {rep.input_rows} rows in, {rep.kept} kept, classes {rep.class_counts_before}")
    for stage, n in rep.excluded.items():
        print(f"    excluded at {stage}: {n}")
    print(f"    retained features ({len(rep.retained_features)}): {', '.join(rep.retained_features)}")
    print(f"    SMOTE added {rep.synthetic_added} -> {len(ds)} rows {rep.class_counts_after} ({time.time() - t:.1f}s)")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--full-eicu", action="store_true")
    args = ap.parse_args()
    run("mimic", 2505, 158)
    if args.full_eicu:
        run("eicu", 93149, 23626)
    else:
        run("eicu", 9315, 2363)


if __name__ == "__main__":
    main()
