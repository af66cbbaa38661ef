"""Collapse near-duplicate images inside one selected batch.

A thresholded cosine-similarity adjacency over the batch defines one
hyperedge per member (its closed neighbourhood). Overlapping hyperedges are
merged into groups; each group is annotated once through its medoid and the
label is copied to the other members.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from repsel.data import PROPAGATED, QUERIED, FeatureMatrix, cosine_similarity


@dataclass(frozen=True)
class RedundancyGroups:
    groups: tuple            # tuple of tuples of batch indices, ascending
    query_index: tuple       # one member per group
    incidence: np.ndarray    # (m hyperedges, k members), 0/1

    @property
    def k(self) -> int:
        return self.incidence.shape[1]

    @property
    def n_queries(self) -> int:
        return len(self.groups)


def build_groups(batch_features, tau: float = 0.8) -> RedundancyGroups:
    """Group a batch by thresholded cosine similarity.

    Negative similarities are treated as 0, so ``tau = 0`` joins everything.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    x = batch_features.data if isinstance(batch_features, FeatureMatrix) else np.asarray(batch_features, float)
    k = x.shape[1]
    if k < 1:
        raise ValueError("batch must contain at least one member")
    if k == 1:
        return RedundancyGroups(((0,),), (0,), np.ones((1, 1), dtype=np.int8))

    sim = np.maximum(cosine_similarity(x), 0.0)
    adj = sim >= tau
    np.fill_diagonal(adj, True)

    edges = []
    seen = set()
    for i in range(k):
        members = tuple(np.flatnonzero(adj[i]))
        if members not in seen:
            seen.add(members)
            edges.append(members)
    incidence = np.zeros((len(edges), k), dtype=np.int8)
    for e, members in enumerate(edges):
        incidence[e, list(members)] = 1

    # members sharing a hyperedge are connected; components of that graph are the groups
    linked = (incidence.T.astype(np.int64) @ incidence) > 0
    _, comp = connected_components(linked, directed=False)
    by_comp = {}
    for i, c in enumerate(comp):
        by_comp.setdefault(int(c), []).append(i)
    groups = sorted((tuple(v) for v in by_comp.values()), key=lambda g: g[0])

    queries = []
    for g in groups:
        idx = np.array(g)
        score = sim[np.ix_(idx, idx)].sum(axis=1)
        queries.append(int(idx[np.argmax(score)]))  # argmax returns the first maximum
    return RedundancyGroups(tuple(groups), tuple(queries), incidence)


def propagate_label(groups: RedundancyGroups, group_id: int, label: int) -> list[tuple[int, int, str]]:
    """Label records for one group: the query member first, then the rest."""
    if not 0 <= group_id < len(groups.groups):
        raise KeyError(f"unknown group id {group_id}; batch has {len(groups.groups)} groups")
    q = groups.query_index[group_id]
    records = [(q, label, QUERIED)]
    records += [(i, label, PROPAGATED) for i in groups.groups[group_id] if i != q]
    return records
