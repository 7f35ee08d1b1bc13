"""Mutation and crossover over SubnetworkConfigs; both always return legal configs."""

from typing import List

import numpy as np

from src.supernet.search_space import SearchSpace, SubnetworkConfig


def _neighbour(options: List[int], value: int, rng: np.random.Generator) -> int:
    """Adjacent entry of ``options`` (sorted), chosen uniformly when both exist."""
    index = options.index(value)
    moves = [i for i in (index - 1, index + 1) if 0 <= i < len(options)]
    if not moves:
        return value
    return options[moves[int(rng.integers(len(moves)))]]


def _resize(channels: List[int], length: int, fill: int) -> List[int]:
    """Truncate from the top or extend with ``fill``."""
    return channels[:length] + [fill] * max(0, length - len(channels))


def mutate(
    cfg: SubnetworkConfig, space: SearchSpace, rng: np.random.Generator, rate: float
) -> SubnetworkConfig:
    """Move each coordinate one step with probability ``rate``.

    The dropped-layer count goes to an adjacent layer option first (the channel
    list is truncated, or extended at the physical width); each remaining
    layer width then moves to an adjacent channel option.

    Args:
        cfg: Legal configuration of ``space``
        space: Search space
        rng: Random generator; equal generator states give equal children, but
            how many values are drawn depends on the moves taken
        rate: Per-coordinate move probability

    Returns:
        Legal configuration
    """
    layer_options = space.sorted_layer_options
    dropped = cfg.dropped_top_layers
    if rng.random() < rate:
        dropped = _neighbour(layer_options, dropped, rng)
    channels = _resize(list(cfg.channels), space.n_layers_max - dropped, space.physical_width)

    options = list(space.channel_options)
    for i, width in enumerate(channels):
        if rng.random() < rate:
            channels[i] = _neighbour(options, width, rng)
    return SubnetworkConfig(dropped, tuple(channels))


def crossover(a: SubnetworkConfig, b: SubnetworkConfig, rng: np.random.Generator) -> SubnetworkConfig:
    """Uniform crossover.

    The dropped-layer count comes from one parent; each layer width comes
    from either parent where both have that layer, otherwise from the parent
    that does.
    """
    dropped = a.dropped_top_layers if rng.random() < 0.5 else b.dropped_top_layers
    length = a.n_layers + a.dropped_top_layers - dropped
    channels = []
    for i in range(length):
        in_a, in_b = i < a.n_layers, i < b.n_layers
        pick_a = rng.random() < 0.5
        if in_a and (pick_a or not in_b):
            channels.append(a.channels[i])
        else:
            channels.append(b.channels[i])
    return SubnetworkConfig(dropped, tuple(channels))
