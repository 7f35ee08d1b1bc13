"""Search space of layer-dropped, width-reduced subnetworks."""

import itertools
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.utils.errors import ContractError


@dataclass(frozen=True)
class SubnetworkConfig:
    """One point of the search space.

    Attributes:
        dropped_top_layers: How many layers are removed from the top of the encoder
        channels: FFN width kept in each remaining layer, bottom first
    """

    dropped_top_layers: int
    channels: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    @property
    def n_layers(self) -> int:
        return len(self.channels)

    def key(self) -> str:
        """Stable text form, e.g. ``d2:256-128-32``."""
        return f"d{self.dropped_top_layers}:" + "-".join(str(c) for c in self.channels)

    def __str__(self) -> str:
        return self.key()


class SearchSpace(BaseModel):
    """Legal encoder layer counts and per-layer FFN widths.

    ``channel_options`` is strictly ascending and its largest value is the
    physical FFN width of every layer. ``layer_options`` lists how many top
    layers may be dropped and always includes 0.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_layers_max: int = Field(default=8, ge=1)
    layer_options: List[int] = Field(default_factory=lambda: [0, 2, 4])
    channel_options: List[int] = Field(default_factory=lambda: [32, 64, 128, 256])

    @model_validator(mode="after")
    def _check_options(self) -> "SearchSpace":
        channels = self.channel_options
        if not channels or channels[0] < 1:
            raise ValueError("channel_options must be nonempty and positive")
        if any(b <= a for a, b in zip(channels, channels[1:])):
            raise ValueError(f"channel_options must be strictly ascending, got {channels}")
        layers = self.layer_options
        if 0 not in layers:
            raise ValueError("layer_options must contain 0 so the max network is expressible")
        if len(set(layers)) != len(layers) or any(not 0 <= d < self.n_layers_max for d in layers):
            raise ValueError(
                f"layer_options must be distinct values in [0, {self.n_layers_max - 1}], got {layers}"
            )
        return self

    @property
    def physical_width(self) -> int:
        return self.channel_options[-1]

    @property
    def sorted_layer_options(self) -> List[int]:
        return sorted(self.layer_options)

    def max_config(self) -> SubnetworkConfig:
        return SubnetworkConfig(0, (self.physical_width,) * self.n_layers_max)

    def min_config(self) -> SubnetworkConfig:
        dropped = max(self.layer_options)
        return SubnetworkConfig(dropped, (self.channel_options[0],) * (self.n_layers_max - dropped))

    def size(self) -> int:
        """Number of distinct configurations."""
        k = len(self.channel_options)
        return sum(k ** (self.n_layers_max - d) for d in self.layer_options)

    def enumerate_configs(self) -> Iterator[SubnetworkConfig]:
        """Every configuration, fewest dropped layers first."""
        for dropped in self.sorted_layer_options:
            for channels in itertools.product(
                self.channel_options, repeat=self.n_layers_max - dropped
            ):
                yield SubnetworkConfig(dropped, channels)

    def random_config(self, rng: np.random.Generator) -> SubnetworkConfig:
        """Uniform layer option, then an independent uniform width per kept layer."""
        dropped = int(self.layer_options[rng.integers(len(self.layer_options))])
        picks = rng.integers(len(self.channel_options), size=self.n_layers_max - dropped)
        return SubnetworkConfig(dropped, tuple(self.channel_options[i] for i in picks))

    def channel_only(self) -> "SearchSpace":
        """The same widths with layer dropping disabled."""
        return SearchSpace(
            n_layers_max=self.n_layers_max, layer_options=[0], channel_options=self.channel_options
        )

    def __contains__(self, cfg: object) -> bool:
        return validate_config(self, cfg)


def validate_config(space: SearchSpace, cfg: object) -> bool:
    """True iff ``cfg`` is a legal point of ``space``; never raises."""
    if not isinstance(cfg, SubnetworkConfig):
        return False
    if cfg.dropped_top_layers not in space.layer_options:
        return False
    if len(cfg.channels) != space.n_layers_max - cfg.dropped_top_layers:
        return False
    return all(c in space.channel_options for c in cfg.channels)


def require_valid(space: SearchSpace, cfg: SubnetworkConfig) -> SubnetworkConfig:
    """Return ``cfg`` or raise ContractError describing why it is illegal."""
    if not validate_config(space, cfg):
        raise ContractError(
            f"config {cfg} is not in the search space "
            f"(n={space.n_layers_max}, layers={space.layer_options}, channels={space.channel_options})"
        )
    return cfg


def parse_config_key(text: str, space: Optional[SearchSpace] = None) -> SubnetworkConfig:
    """Parse ``d<dropped>:<c0>-<c1>-...`` or, given a space, ``max`` / ``min``.

    Raises:
        ContractError: If the text is malformed or, with a space, names an illegal config
    """
    text = text.strip()
    if space is not None and text in ("max", "min"):
        return space.max_config() if text == "max" else space.min_config()
    try:
        head, body = text.split(":", 1)
        if not head.startswith("d"):
            raise ValueError(head)
        dropped = int(head[1:])
        channels = tuple(int(c) for c in body.split("-")) if body else ()
    except ValueError as exc:
        raise ContractError(f"malformed subnetwork key {text!r}") from exc
    cfg = SubnetworkConfig(dropped, channels)
    return require_valid(space, cfg) if space is not None else cfg


def sample_sandwich(space: SearchSpace, rng: np.random.Generator) -> List[SubnetworkConfig]:
    """[max, min, random, random]; random draws may coincide with max or min."""
    return [
        space.max_config(),
        space.min_config(),
        space.random_config(rng),
        space.random_config(rng),
    ]
