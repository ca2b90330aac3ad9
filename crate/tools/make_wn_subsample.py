#!/usr/bin/env python3
"""Build a 2,000-entity link-prediction graph in the WN18-RR layout.

Source: the WordNet 3.0 database files (data.noun/verb/adj/adv), which is
the release WN18 and WN18-RR were extracted from. Entities are synset
offsets, relations are the eleven WN18-RR relation types (inverse-leaking
relations excluded). A connected neighbourhood of 2,000 synsets is grown
by seeded BFS from a high-degree noun, the induced triplets are kept and
split 90/5/5 with every valid/test entity occurring in train.

usage: make_wn_subsample.py WORDNET_DICT_DIR OUT_DIR
"""
import random
import sys
from collections import defaultdict, deque
from pathlib import Path

SEED = 18
N_ENT = 2000

POINTERS = {
    "@": "_hypernym",
    "@i": "_instance_hypernym",
    "+": "_derivationally_related_form",
    "^": "_also_see",
    "%m": "_member_meronym",
    "%p": "_has_part",
    ";c": "_synset_domain_topic_of",
    "-u": "_member_of_domain_usage",
    "-r": "_member_of_domain_region",
    "$": "_verb_group",
    "&": "_similar_to",
}


def read_triples(root):
    triples = set()
    for pos in ("noun", "verb", "adj", "adv"):
        for line in open(Path(root) / f"data.{pos}", encoding="latin-1"):
            if line.startswith("  "):
                continue
            f = line.split()
            offset = f[0]
            w_cnt = int(f[3], 16)
            i = 4 + 2 * w_cnt
            p_cnt = int(f[i])
            i += 1
            for _ in range(p_cnt):
                sym, target = f[i], f[i + 1]
                i += 4
                rel = POINTERS.get(sym)
                if rel is not None and target != offset:
                    triples.add((offset, rel, target))
    return sorted(triples)


def main(root, out):
    triples = read_triples(root)
    adj = defaultdict(set)
    for s, _, o in triples:
        adj[s].add(o)
        adj[o].add(s)
    rng = random.Random(SEED)
    hubs = sorted(adj, key=lambda e: (-len(adj[e]), e))[:50]
    start = rng.choice(hubs)
    seen = {start}
    queue = deque([start])
    while queue and len(seen) < N_ENT:
        e = queue.popleft()
        nbrs = sorted(adj[e])
        rng.shuffle(nbrs)
        for n in nbrs[:8]:
            if n not in seen and len(seen) < N_ENT:
                seen.add(n)
                queue.append(n)
    kept = [t for t in triples if t[0] in seen and t[2] in seen]
    rng.shuffle(kept)
    n_eval = len(kept) // 20
    train, held = kept[: len(kept) - 2 * n_eval], kept[len(kept) - 2 * n_eval:]
    train_ents = {e for s, _, o in train for e in (s, o)}
    train_rels = {r for _, r, _ in train}
    ok = [t for t in held if t[0] in train_ents and t[2] in train_ents and t[1] in train_rels]
    train += [t for t in held if t not in ok]
    valid, test = ok[: len(ok) // 2], ok[len(ok) // 2:]
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    for name, rows in (("train", train), ("valid", valid), ("test", test)):
        with open(d / f"{name}.txt", "w", encoding="utf-8", newline="\n") as f:
            for s, r, o in rows:
                f.write(f"{s}\t{r}\t{o}\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
