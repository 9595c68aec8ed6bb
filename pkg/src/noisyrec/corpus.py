"""Dataset ingestion: raw rating files -> binarized, k-core filtered, split tables."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


class ParseError(ValueError):
    """Raised for malformed input lines; carries the 1-based line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class RawInteraction:
    user_key: str
    item_key: str
    rating: float
    timestamp: Optional[int] = None

    def __post_init__(self):
        if not self.user_key or not self.item_key:
            raise ValueError("user_key and item_key must be non-empty")


class IdMap:
    """Bijection between opaque user/item keys and dense contiguous indices."""

    def __init__(self, user_keys: Sequence[str], item_keys: Sequence[str]):
        self.user_keys = list(user_keys)
        self.item_keys = list(item_keys)
        self.user_index = {k: idx for idx, k in enumerate(self.user_keys)}
        self.item_index = {k: idx for idx, k in enumerate(self.item_keys)}
        if len(self.user_index) != len(self.user_keys):
            raise ValueError("duplicate user keys")
        if len(self.item_index) != len(self.item_keys):
            raise ValueError("duplicate item keys")

    @property
    def M(self) -> int:
        return len(self.user_keys)

    @property
    def N(self) -> int:
        return len(self.item_keys)

    def __eq__(self, other):
        return (
            isinstance(other, IdMap)
            and self.user_keys == other.user_keys
            and self.item_keys == other.item_keys
        )


class InteractionTable:
    """Sparse binary observation matrix: the set of (user, item) positives."""

    def __init__(self, M: int, N: int, positives: Iterable[tuple]):
        self.M = int(M)
        self.N = int(N)
        self.positives = frozenset((int(u), int(i)) for u, i in positives)
        for u, i in self.positives:
            if not (0 <= u < self.M and 0 <= i < self.N):
                raise ValueError(f"pair ({u}, {i}) out of range for {self.M}x{self.N}")
        per_user = [[] for _ in range(self.M)]
        for u, i in self.positives:
            per_user[u].append(i)
        self.per_user = [sorted(items) for items in per_user]

    def __len__(self):
        return len(self.positives)

    def __eq__(self, other):
        return (
            isinstance(other, InteractionTable)
            and self.M == other.M
            and self.N == other.N
            and self.positives == other.positives
        )

    def user_degrees(self) -> np.ndarray:
        deg = np.zeros(self.M, dtype=np.int64)
        for u, _ in self.positives:
            deg[u] += 1
        return deg

    def item_degrees(self) -> np.ndarray:
        deg = np.zeros(self.N, dtype=np.int64)
        for _, i in self.positives:
            deg[i] += 1
        return deg

    def sorted_pairs(self):
        return sorted(self.positives)

    @property
    def sparsity(self) -> float:
        return 1.0 - len(self.positives) / (self.M * self.N)


@dataclass
class SplitDataset:
    train: InteractionTable
    validation: InteractionTable
    test: InteractionTable
    seed: int


def load_movielens(path) -> list:
    """Parse a MovieLens "::"-separated ratings file into raw interactions."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("::")
            if len(fields) != 4:
                raise ParseError(path, lineno, f"expected 4 '::'-separated fields, got {len(fields)}")
            user, item, rating, ts = fields
            try:
                out.append(RawInteraction(user, item, float(rating), int(ts)))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc
    return out


def load_amazon_reviews(path) -> list:
    """Parse a one-JSON-object-per-line review file into raw interactions."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON: {exc}") from exc
            try:
                user = obj["reviewerID"]
                item = obj["asin"]
                rating = float(obj["overall"])
            except KeyError as exc:
                raise ParseError(path, lineno, f"missing field {exc}") from exc
            out.append(RawInteraction(user, item, rating))
    return out


def binarize_and_index(raw: Sequence[RawInteraction]):
    """Collapse ratings to binary positives; indices in first-appearance order."""
    user_keys, item_keys = [], []
    user_index, item_index = {}, {}
    positives = set()
    for r in raw:
        u = user_index.get(r.user_key)
        if u is None:
            u = len(user_keys)
            user_index[r.user_key] = u
            user_keys.append(r.user_key)
        i = item_index.get(r.item_key)
        if i is None:
            i = len(item_keys)
            item_index[r.item_key] = i
            item_keys.append(r.item_key)
        positives.add((u, i))
    idmap = IdMap(user_keys, item_keys)
    table = InteractionTable(idmap.M, idmap.N, positives)
    return idmap, table


def kcore_filter(table: InteractionTable, k: int, idmap: Optional[IdMap] = None):
    """Iteratively drop users/items with degree < k until a fixed point.

    Surviving users/items are reindexed densely, preserving relative order.
    Returns the filtered table, or (table, idmap) when an IdMap is passed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pairs = set(table.positives)
    while True:
        udeg, ideg = {}, {}
        for u, i in pairs:
            udeg[u] = udeg.get(u, 0) + 1
            ideg[i] = ideg.get(i, 0) + 1
        bad_u = {u for u, d in udeg.items() if d < k}
        bad_i = {i for i, d in ideg.items() if d < k}
        if not bad_u and not bad_i:
            break
        pairs = {(u, i) for u, i in pairs if u not in bad_u and i not in bad_i}
    keep_u = sorted({u for u, _ in pairs})
    keep_i = sorted({i for _, i in pairs})
    umap = {u: idx for idx, u in enumerate(keep_u)}
    imap = {i: idx for idx, i in enumerate(keep_i)}
    filtered = InteractionTable(
        len(keep_u), len(keep_i), ((umap[u], imap[i]) for u, i in pairs)
    )
    if idmap is None:
        return filtered
    new_map = IdMap(
        [idmap.user_keys[u] for u in keep_u], [idmap.item_keys[i] for i in keep_i]
    )
    return filtered, new_map


def split(table: InteractionTable, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> SplitDataset:
    """Shuffle positives and partition train/validation/test, then prune cold pairs.

    Validation and test take floor(ratio * |positives|) pairs each; train takes
    the remainder. Validation/test pairs whose user or item has no train
    positive are removed. Train is never pruned.
    """
    if not math.isclose(sum(ratios), 1.0):
        raise ValueError("ratios must sum to 1")
    pairs = table.sorted_pairs()
    rng = np.random.default_rng(seed)
    rng.shuffle(pairs)
    n = len(pairs)
    n_val = int(ratios[1] * n)
    n_test = int(ratios[2] * n)
    n_train = n - n_val - n_test
    train_pairs = pairs[:n_train]
    val_pairs = pairs[n_train : n_train + n_val]
    test_pairs = pairs[n_train + n_val :]

    train_users = {u for u, _ in train_pairs}
    train_items = {i for _, i in train_pairs}

    def prune(ps):
        return [(u, i) for u, i in ps if u in train_users and i in train_items]

    return SplitDataset(
        train=InteractionTable(table.M, table.N, train_pairs),
        validation=InteractionTable(table.M, table.N, prune(val_pairs)),
        test=InteractionTable(table.M, table.N, prune(test_pairs)),
        seed=seed,
    )


def save_split(dataset: SplitDataset, directory):
    """Write train/valid/test files: header "M N seed", then one u<TAB>i per positive."""
    os.makedirs(directory, exist_ok=True)
    for name, table in (
        ("train", dataset.train),
        ("valid", dataset.validation),
        ("test", dataset.test),
    ):
        path = os.path.join(directory, f"{name}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{table.M} {table.N} {dataset.seed}\n")
            for u, i in table.sorted_pairs():
                fh.write(f"{u}\t{i}\n")


def load_split(directory) -> SplitDataset:
    tables = {}
    seed = 0
    for name in ("train", "valid", "test"):
        path = os.path.join(directory, f"{name}.txt")
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().split()
            M, N, seed = int(header[0]), int(header[1]), int(header[2])
            pairs = []
            for line in fh:
                u, i = line.split("\t")
                pairs.append((int(u), int(i)))
        tables[name] = InteractionTable(M, N, pairs)
    return SplitDataset(
        train=tables["train"], validation=tables["valid"], test=tables["test"], seed=seed
    )
