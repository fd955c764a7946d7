#!/usr/bin/env python3
"""Rebuild data/countries_s1 from the `world-countries` npm package (ODbL).

Usage: build_countries_s1.py path/to/countries.json out_dir

Entities are countries, subregions and regions. Relations are `neighborOf`
(symmetric land borders) and `locatedIn` (country -> subregion,
country -> region, subregion -> region). The S1 split removes
`locatedIn(country, region)` for 24 validation and 24 test countries; those
triples form the evaluation splits.
"""

import json
import random
import re
import sys
import unicodedata
from pathlib import Path

# Antarctic territories have no region in the classic dataset; the two
# border-less territories below are dropped to keep 272 entities.
DROP = {"ATA", "ATF", "BVT", "HMD", "SGS", "UMI", "IOT"}
# Sri Lanka lists India as a maritime neighbour but not vice versa.
DROP_BORDERS = {("IND", "LKA")}
SEED = 1158
# Country names that would collide with a subregion name.
RENAME = {"FSM": "federated_states_of_micronesia"}


def slug(name: str) -> str:
    name = unicodedata.normalize("NFKD", name).encode("ascii", "ignore").decode()
    name = re.sub(r"[^A-Za-z0-9]+", "_", name.lower())
    return name.strip("_")


def main() -> None:
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    data = [c for c in json.loads(src.read_text()) if c["cca3"] not in DROP]
    names = {c["cca3"]: RENAME.get(c["cca3"], slug(c["name"]["common"])) for c in data}
    assert len(set(names.values())) == len(names)

    neighbor = set()
    for c in data:
        for b in c["borders"]:
            if b not in names or tuple(sorted((c["cca3"], b))) in DROP_BORDERS:
                continue
            neighbor.add((names[c["cca3"]], "neighborOf", names[b]))
            neighbor.add((names[b], "neighborOf", names[c["cca3"]]))

    sub_region = {}
    located = []
    region_of = {}
    for c in data:
        country, sub, reg = names[c["cca3"]], slug(c["subregion"]), slug(c["region"])
        sub_region[sub] = reg
        located.append((country, "locatedIn", sub))
        region_of[country] = (country, "locatedIn", reg)

    bordered = sorted({s for s, _, _ in neighbor})
    rng = random.Random(SEED)
    rng.shuffle(bordered)
    valid_c, test_c = sorted(bordered[:24]), sorted(bordered[24:48])
    held = set(valid_c) | set(test_c)

    train = sorted(neighbor) + sorted(located)
    train += sorted((s, "locatedIn", r) for s, r in sub_region.items())
    train += sorted(t for c, t in region_of.items() if c not in held)
    valid = [region_of[c] for c in valid_c]
    test = [region_of[c] for c in test_c]

    out.mkdir(parents=True, exist_ok=True)
    for split, rows in (("train", train), ("valid", valid), ("test", test)):
        with open(out / f"{split}.tsv", "w") as f:
            for s, p, o in rows:
                f.write(f"{s}\t{p}\t{o}\n")

    entities = {x for rows in (train, valid, test) for s, _, o in rows for x in (s, o)}
    print(len(entities), len(train), len(valid), len(test))


if __name__ == "__main__":
    main()
