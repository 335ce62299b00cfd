"""Group-balanced batch construction for imbalanced class distributions."""

from __future__ import annotations

from collections import defaultdict
from typing import Hashable, Iterator, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def balanced_batches(
    items: Sequence[T],
    groups: Sequence[Hashable],
    batch_size: int,
    seed: int,
    epochs: int = 1,
    expected_groups: Sequence[Hashable] | None = None,
) -> Iterator[list[T]]:
    """Yield batches in which every group is evenly represented.

    Per-batch group counts differ by at most one. An epoch is long enough
    to cover the largest group once; smaller groups appear fully and are
    then resampled with replacement to fill their per-batch quota. The
    emitted sequence is a pure function of (items, groups, batch_size,
    seed, epochs).
    """
    if len(items) != len(groups):
        raise ValueError("items and groups must have equal length")
    if not items:
        return
    members: dict[Hashable, list[int]] = defaultdict(list)
    for idx, g in enumerate(groups):
        members[g].append(idx)
    if expected_groups is not None:
        for k in expected_groups:
            if not members.get(k):
                raise ValueError(f"group {k!r} is empty")
    keys = sorted(members, key=repr)
    if batch_size < len(keys):
        raise ValueError(
            f"batch_size {batch_size} is smaller than the number of groups {len(keys)}"
        )

    base, extra = divmod(batch_size, len(keys))
    # the largest groups absorb the remainder so minorities are upsampled least
    by_size = sorted(keys, key=lambda k: (-len(members[k]), repr(k)))
    quota = {k: base + (1 if k in set(by_size[:extra]) else 0) for k in keys}
    n_batches = max(int(np.ceil(len(members[k]) / quota[k])) for k in keys)

    for epoch in range(epochs):
        rng = np.random.default_rng([seed, epoch])
        streams: dict[Hashable, list[int]] = {}
        for k in keys:
            pool = np.array(members[k])
            need = n_batches * quota[k]
            perm = pool[rng.permutation(len(pool))]
            if need <= len(pool):
                draw = perm[:need]
            else:
                filler = pool[rng.integers(0, len(pool), size=need - len(pool))]
                draw = np.concatenate([perm, filler])
            streams[k] = list(draw)
        for b in range(n_batches):
            batch: list[T] = []
            for k in keys:
                take = streams[k][b * quota[k] : (b + 1) * quota[k]]
                batch.extend(items[i] for i in take)
            yield batch
