#!/usr/bin/env python3
"""Build the Countries S1/S2/S3 link-prediction splits.

Source: the `world-countries` npm package (countries.json, ODbL-1.0).
Construction follows the usual Countries benchmark recipe:

* entities are countries, subregions and regions; relations are
  `neighbor` (symmetric border facts) and `locatedin`;
* 24 validation and 24 test countries are drawn (seeded) among countries
  that have at least one training neighbour;
* S1 drops locatedin(c, region) for held-out countries c;
* S2 additionally drops locatedin(c, subregion) for held-out countries;
* S3 additionally drops locatedin(n, region) for every neighbour n of a
  held-out country.

valid.txt / test.txt hold the removed locatedin(c, region) facts.

usage: make_countries.py countries.json OUT_DIR
"""
import json
import random
import sys
from pathlib import Path

SEED = 20200618
N_HELD = 24


def slug(s):
    return "_".join(s.lower().replace("-", " ").replace(",", " ").replace("'", "").split())


def main(src, out):
    rows = json.load(open(src, encoding="utf-8"))
    rows = [c for c in rows if c["region"] not in ("", "Antarctic")]
    areas = {slug(c["region"]) for c in rows} | {slug(c["subregion"]) for c in rows}
    name = {}
    for c in rows:
        n = slug(c["name"]["common"])
        name[c["cca3"]] = slug(c["name"]["official"]) if n in areas else n
    region = {c["cca3"]: slug(c["region"]) for c in rows}
    sub = {c["cca3"]: slug(c["subregion"]) for c in rows if c["subregion"]}
    borders = {c["cca3"]: [b for b in c["borders"] if b in name] for c in rows}
    codes = [c["cca3"] for c in rows]

    rng = random.Random(SEED)
    candidates = sorted(c for c in codes if borders[c])
    rng.shuffle(candidates)
    held = []
    held_set = set()
    for c in candidates:
        if len(held) == 2 * N_HELD:
            break
        # keep at least one neighbour of c and of every already-held country in train
        trial = held_set | {c}
        if all(any(n not in trial for n in borders[h]) for h in trial):
            held.append(c)
            held_set.add(c)
    valid, test = sorted(held[:N_HELD]), sorted(held[N_HELD:])

    neighbor = []
    for c in codes:
        for n in borders[c]:
            neighbor.append((name[c], "neighbor", name[n]))
    sub_region = sorted({(sub[c], "locatedin", region[c]) for c in codes if c in sub})
    in_sub = [(name[c], "locatedin", sub[c]) for c in codes if c in sub]
    in_region = [(name[c], "locatedin", region[c]) for c in codes]

    held_names = {name[c] for c in held}
    s3_drop = {name[n] for h in held for n in borders[h]}
    for task in ("S1", "S2", "S3"):
        train = list(neighbor) + list(sub_region)
        for t in in_sub:
            if task != "S1" and t[0] in held_names:
                continue
            train.append(t)
        for t in in_region:
            if t[0] in held_names:
                continue
            if task == "S3" and t[0] in s3_drop:
                continue
            train.append(t)
        d = Path(out) / task
        d.mkdir(parents=True, exist_ok=True)
        write(d / "train.txt", train)
        write(d / "valid.txt", [(name[c], "locatedin", region[c]) for c in valid])
        write(d / "test.txt", [(name[c], "locatedin", region[c]) for c in test])


def write(path, triples):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s, r, o in triples:
            f.write(f"{s}\t{r}\t{o}\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
