"""Small generated corpora for tests, demos and desk-scale experiments.

``copy_task`` builds MRs whose values are random strings, so a model can only
reproduce them by copying.  ``restaurant_corpus`` follows the E2E slot
ontology with templated sentences; values come from closed lists shared by
all splits, as in the original E2E release.
"""

from __future__ import annotations

import random
import string
from dataclasses import dataclass
from typing import Sequence

from .data import DatasetInstance, MeaningRepresentation

COPY_TEMPLATES = (
    "{name} is near {near}.",
    "{name} is located near {near}.",
    "Near {near} there is {name}.",
    "You can find {name} near {near}.",
)


@dataclass
class CopyTask:
    train: list[DatasetInstance]
    validation: list[DatasetInstance]
    test: list[DatasetInstance]

    def pairs(self) -> list[tuple[str, str]]:
        return [(i.source, r) for i in self.train for r in i.references]


def _random_values(rng: random.Random, n: int, used: set, min_len: int, max_len: int, alphabet: str) -> list[str]:
    out = []
    while len(out) < n:
        v = "".join(rng.choice(alphabet) for _ in range(rng.randint(min_len, max_len)))
        if v not in used:
            used.add(v)
            out.append(v)
    return out


def copy_task(
    n: int = 5000,
    n_validation: int = 200,
    n_test: int = 200,
    seed: int = 0,
    min_len: int = 5,
    max_len: int = 12,
    chars: str = string.ascii_lowercase,
    templates: Sequence[str] = COPY_TEMPLATES,
) -> CopyTask:
    """``n`` MRs ``name[X], near[Y]`` split into train/validation/test.

    Every value string is unique across the whole corpus, so the value sets of
    the three splits are disjoint.
    """
    rng = random.Random(seed)
    used: set = set()
    values = _random_values(rng, 2 * n, used, min_len, max_len, chars)
    splits = ["train"] * (n - n_validation - n_test) + ["validation"] * n_validation + ["test"] * n_test
    out: dict[str, list[DatasetInstance]] = {"train": [], "validation": [], "test": []}
    for k, split in enumerate(splits):
        name, near = values[2 * k], values[2 * k + 1]
        mr = MeaningRepresentation.from_pairs([("name", name), ("near", near)])
        ref = rng.choice(templates).format(name=name, near=near)
        out[split].append(DatasetInstance(mr, [ref], split))
    return CopyTask(out["train"], out["validation"], out["test"])


def substring_exact_match(outputs: Sequence[str], instances: Sequence[DatasetInstance], slots=("name", "near")) -> float:
    """Fraction of outputs containing every listed slot value verbatim."""
    if not instances:
        return 0.0
    hits = 0
    for out, inst in zip(outputs, instances):
        if all(inst.mr.get(s) is None or inst.mr.get(s) in out for s in slots):
            hits += 1
    return hits / len(instances)


# ---------------------------------------------------------------- restaurant domain

NAMES = (
    "The Eagle", "The Mill", "Alimentum", "Aromi", "Bibimbap House", "Blue Spice", "Browns Cambridge",
    "Clowns", "Cocum", "Cotto", "Fitzbillies", "Giraffe", "Green Man", "Loch Fyne", "Midsummer House",
    "Strada", "Taste of Cambridge", "The Cambridge Blue", "The Cricketers", "The Dumpling Tree",
    "The Golden Curry", "The Golden Palace", "The Olive Grove", "The Phoenix", "The Plough",
    "The Punter", "The Rice Boat", "The Twenty Two", "The Vaults", "The Waterman", "Wildwood", "Zizzi",
)
NEAR = (
    "Burger King", "Cafe Adriatic", "Cafe Brazil", "Cafe Rouge", "Cafe Sicilia", "Clare Hall",
    "Crowne Plaza Hotel", "Express by Holiday Inn", "Rainbow Vegetarian Cafe", "Raja Indian Cuisine",
    "Ranch", "The Bakers", "The Portland Arms", "The Rice Boat", "The Sorrento", "Yippee Noodle Bar",
)
FOOD = ("Chinese", "English", "Fast food", "French", "Indian", "Italian", "Japanese")
EAT_TYPE = ("coffee shop", "pub", "restaurant")
PRICE = ("cheap", "high", "less than £20", "moderate", "more than £30", "£20-25")
RATING = ("1 out of 5", "3 out of 5", "5 out of 5", "average", "high", "low")
AREA = ("city centre", "riverside")
FAMILY = ("no", "yes")

PRICE_ASCII = {"less than £20": "less than 20 pounds", "more than £30": "more than 30 pounds", "£20-25": "20-25 pounds"}


def _sentence(rng: random.Random, slots: dict[str, str]) -> str:
    name = slots["name"]
    head = slots.get("eatType", "place")
    parts = []
    food = slots.get("food")
    if food:
        lead = rng.choice(["{name} is a {food} {head}", "{name} is a {head} serving {food} food"])
    else:
        lead = "{name} is a {head}"
    parts.append(lead.format(name=name, food=food, head=head))
    if "area" in slots:
        parts.append(rng.choice(["in the {v}", "located in the {v}"]).format(v=slots["area"]))
    if "near" in slots:
        parts.append("near {v}".format(v=slots["near"]))
    first = " ".join(parts) + "."
    extra = []
    if "priceRange" in slots:
        p = PRICE_ASCII.get(slots["priceRange"], slots["priceRange"])
        extra.append(rng.choice(["It has a {v} price range", "Prices are {v}"]).format(v=p))
    if "customer rating" in slots:
        extra.append("It has a customer rating of {v}".format(v=slots["customer rating"]))
    if "familyFriendly" in slots:
        extra.append("It is family friendly" if slots["familyFriendly"] == "yes" else "It is not family friendly")
    return " ".join([first] + [e + "." for e in extra])


def restaurant_corpus(n_train: int = 500, n_validation: int = 50, n_test: int = 50, seed: int = 0, refs_per_test: int = 2) -> dict[str, list[DatasetInstance]]:
    """E2E-ontology MRs (3 to 8 slots) with templated references."""
    rng = random.Random(seed)
    optional = [
        ("eatType", EAT_TYPE), ("food", FOOD), ("priceRange", PRICE), ("customer rating", RATING),
        ("area", AREA), ("familyFriendly", FAMILY), ("near", NEAR),
    ]
    out: dict[str, list[DatasetInstance]] = {}
    for split, n in (("train", n_train), ("validation", n_validation), ("test", n_test)):
        insts = []
        for _ in range(n):
            k = rng.randint(2, len(optional))
            chosen = sorted(rng.sample(range(len(optional)), k))
            slots = {"name": rng.choice(NAMES)}
            for i in chosen:
                key, vals = optional[i]
                slots[key] = rng.choice(vals)
            pairs = [(key, slots[key]) for key in ["name"] + [optional[i][0] for i in chosen]]
            mr = MeaningRepresentation.from_pairs((k2, PRICE_ASCII.get(v, v)) for k2, v in pairs)
            n_refs = 1 if split == "train" else refs_per_test
            refs = [_sentence(rng, slots) for _ in range(n_refs)]
            insts.append(DatasetInstance(mr, refs, split))
        out[split] = insts
    return out
