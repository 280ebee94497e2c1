"""Regenerate the shipped vocabulary fixture (src/activeloc/data/vocab.json).

Each object concept gets a random unit vector; synonyms are placed at a fixed
cosine from their concept so similarity probes have a known ordering.
"""

import json
import sys

import numpy as np

D_E = 32
SEED = 20240611

CONCEPTS = {
    "mug": {"cup": 0.9, "teacup": 0.8, "tumbler": 0.65, "coffee": 0.5, "vessel": 0.35},
    "book": {"novel": 0.9, "notebook": 0.8, "magazine": 0.65, "journal": 0.5, "paper": 0.35},
    "plant": {"houseplant": 0.9, "fern": 0.8, "succulent": 0.65, "flower": 0.5, "leaf": 0.35},
    "ball": {"sphere": 0.9, "football": 0.8, "orb": 0.65, "marble": 0.5, "toy": 0.35},
    "bottle": {"flask": 0.9, "jug": 0.8, "canteen": 0.65, "carafe": 0.5, "container": 0.35},
    "lamp": {"lantern": 0.9, "light": 0.8, "torch": 0.65, "bulb": 0.5, "fixture": 0.35},
    "box": {"crate": 0.9, "carton": 0.8},
    "shelf": {"bookcase": 0.9, "rack": 0.8},
    "wall": {"partition": 0.9},
}
OTHER = ["red", "blue", "green", "white", "black", "small", "large", "the", "a", "on", "table", "desk", "ceramic", "plastic"]


def unit(v):
    return v / np.linalg.norm(v)


def main(out):
    rng = np.random.default_rng(SEED)
    table = {}
    for concept, syns in CONCEPTS.items():
        base = unit(rng.normal(size=D_E))
        table[concept] = base
        for word, cos in syns.items():
            u = rng.normal(size=D_E)
            u = unit(u - (u @ base) * base)
            table[word] = cos * base + np.sqrt(1.0 - cos * cos) * u
    for word in OTHER:
        table[word] = unit(rng.normal(size=D_E))
    doc = {w: [round(float(x), 12) for x in unit(v)] for w, v in sorted(table.items())}
    doc["hash_seed"] = 7
    with open(out, "w") as f:
        json.dump(doc, f, indent=0, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/activeloc/data/vocab.json")
