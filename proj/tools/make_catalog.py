#!/usr/bin/env python3
"""Regenerates data/catalog_22lang.csv.

Per-language hours and domain counts follow the published per-language table
for the 22-language Indic ASR collection. Hours are split across districts with
a fixed uneven weighting so per-batch sizes are skewed but every language total
is exact to the hour. Six districts host two languages each, so the 214
(language, district) batches cover 208 distinct districts.
"""
import sys

LANGS = [
    # iso, hours, domains
    ("as", 241, 14), ("bn", 209, 11), ("brx", 291, 4), ("doi", 116, 5),
    ("gu", 20, 4), ("hi", 138, 12), ("kn", 96, 13), ("kok", 103, 4),
    ("ks", 106, 10), ("mai", 248, 9), ("ml", 170, 10), ("mni", 42, 3),
    ("mr", 118, 10), ("ne", 252, 4), ("or", 124, 9), ("pa", 124, 6),
    ("sa", 70, 17), ("sat", 164, 8), ("sd", 27, 4), ("ta", 238, 19),
    ("te", 221, 28), ("ur", 124, 10),
]

# (first, second): the second language's first district is the first
# language's first district.
SHARED = [("as", "brx"), ("hi", "ur"), ("hi", "mai"), ("doi", "ks"),
          ("kok", "mr"), ("bn", "sat")]


def split_cents(total_cents, n, salt):
    weights = [3 + ((k * 7 + salt * 5) % 6) for k in range(n)]
    wsum = sum(weights)
    raw = [total_cents * w / wsum for w in weights]
    cents = [int(r) for r in raw]
    rest = total_cents - sum(cents)
    order = sorted(range(n), key=lambda k: (-(raw[k] - cents[k]), k))
    for k in order[:rest]:
        cents[k] += 1
    return cents


def main(out):
    next_id = 1
    first_district = {}
    rows = []
    borrowed = {second: first for first, second in SHARED}
    for salt, (iso, hours, ndom) in enumerate(LANGS):
        names = []
        for k in range(ndom):
            if k == 0 and iso in borrowed:
                names.append(first_district[borrowed[iso]])
                continue
            names.append("district-%03d" % next_id)
            next_id += 1
        first_district[iso] = names[0]
        for k, c in enumerate(split_cents(hours * 100, ndom, salt)):
            rows.append((f"{iso}-{k + 1:02d}", iso, names[k], c))
    assert next_id - 1 == 208, next_id - 1
    with open(out, "w", encoding="utf-8") as f:
        f.write("batch_id,language_iso,domain,hours,n_train,n_test\n")
        for bid, iso, dom, c in rows:
            n_train = c
            n_test = max(1, (c * 4 + 50) // 100)
            f.write(f"{bid},{iso},{dom},{c // 100}.{c % 100:02d},{n_train},{n_test}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/catalog_22lang.csv")
