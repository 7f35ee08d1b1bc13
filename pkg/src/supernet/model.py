"""Weight-sharing transducer Supernet.

One set of parameters serves every subnetwork. A subnetwork runs the bottom
``n - dropped_top_layers`` encoder layers and, in layer ``i``, only the first
``channels[i]`` hidden units of the FFN (a prefix slice of the in-projection
columns and out-projection rows). Predictor and joiner are shared unchanged.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor, no_grad, parameter
from src.supernet.search_space import SearchSpace, SubnetworkConfig, require_valid
from src.transducer.lattice import BLANK, LatticeOutput
from src.utils.config import Config
from src.utils.errors import ContractError
from src.utils.logger import LoggerMixin

DropoutSeed = Union[int, Sequence[int]]


@dataclass(frozen=True)
class ModelDims:
    """Fixed (non-searchable) dimensions of the transducer."""

    d_in: int
    d_model: int
    vocab_size: int
    predictor_dim: int
    joiner_dim: int

    @classmethod
    def from_config(cls, config: Config) -> "ModelDims":
        return cls(
            d_in=config.corpus.d_in,
            d_model=config.model.d_model,
            vocab_size=config.corpus.vocab_size,
            predictor_dim=config.model.predictor_dim,
            joiner_dim=config.model.joiner_dim,
        )

    def to_dict(self) -> Dict[str, int]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DropoutSpec:
    """Dropout applied after the reduced-width FFN activation during training.

    Attributes:
        base_rate: Rate at full physical width
        adaptive: Scale the rate by the kept fraction of channels
    """

    base_rate: float = 0.0
    adaptive: bool = True

    def rate(self, channels: int, physical_width: int) -> float:
        if self.adaptive:
            return adaptive_dropout_rate(self.base_rate, channels, physical_width)
        return self.base_rate


def adaptive_dropout_rate(base_rate: float, c_i: int, m_i: int) -> float:
    """Dropout for a layer keeping ``c_i`` of ``m_i`` channels: ``base_rate * c_i / m_i``.

    Raises:
        ContractError: If the rate is not a probability or ``c_i`` is outside ``[1, m_i]``
    """
    if not 0.0 <= base_rate <= 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1], got {base_rate}")
    if not 1 <= c_i <= m_i:
        raise ContractError(f"kept channels {c_i} must lie in [1, {m_i}]")
    return base_rate * c_i / m_i


def layer_parameter_count(d_model: int, channels: int) -> int:
    """Parameters of one encoder layer whose FFN keeps ``channels`` hidden units."""
    mixer = 2 * d_model * d_model + d_model
    norms = 4 * d_model
    ffn = d_model * channels + channels + channels * d_model + d_model
    return mixer + norms + ffn


def fixed_parameter_count(dims: ModelDims) -> Dict[str, int]:
    """Parameters outside the searchable encoder layers."""
    d, p, j, v = dims.d_model, dims.predictor_dim, dims.joiner_dim, dims.vocab_size
    return {
        "input_proj": dims.d_in * d + d,
        "predictor": v * p + 2 * p * p + p,
        "joiner": d * j + j + p * j + j * v + v,
    }


def model_size_bytes(space: SearchSpace, cfg: SubnetworkConfig, dims: ModelDims) -> int:
    """Size of a subnetwork under 8-bit quantization: one byte per parameter.

    Raises:
        ContractError: If ``cfg`` is not in ``space``
    """
    require_valid(space, cfg)
    encoder = sum(layer_parameter_count(dims.d_model, c) for c in cfg.channels)
    return encoder + sum(fixed_parameter_count(dims).values())


def init_parameters(space: SearchSpace, dims: ModelDims, seed: int = 0) -> Dict[str, Tensor]:
    """Initialize every Supernet weight at its physical size.

    Weights are Gaussian with standard deviation ``1/sqrt(fan_in)``; biases
    start at zero and normalization gains at one.
    """
    rng = np.random.default_rng(seed)
    d, m = dims.d_model, space.physical_width
    p, j, v = dims.predictor_dim, dims.joiner_dim, dims.vocab_size
    shapes: List[Tuple[str, Tuple[int, ...], str]] = [
        ("input_proj.weight", (dims.d_in, d), "w"),
        ("input_proj.bias", (d,), "zero"),
    ]
    for i in range(space.n_layers_max):
        pre = f"encoder.{i}"
        shapes += [
            (f"{pre}.mixer.gate.weight", (d, d), "w"),
            (f"{pre}.mixer.gate.bias", (d,), "zero"),
            (f"{pre}.mixer.value.weight", (d, d), "w"),
            (f"{pre}.norm1.gain", (d,), "one"),
            (f"{pre}.norm1.bias", (d,), "zero"),
            (f"{pre}.ffn.in.weight", (d, m), "w"),
            (f"{pre}.ffn.in.bias", (m,), "zero"),
            (f"{pre}.ffn.out.weight", (m, d), "w"),
            (f"{pre}.ffn.out.bias", (d,), "zero"),
            (f"{pre}.norm2.gain", (d,), "one"),
            (f"{pre}.norm2.bias", (d,), "zero"),
        ]
    shapes += [
        ("predictor.embedding", (v, p), "embed"),
        ("predictor.gate.weight", (p, p), "w"),
        ("predictor.gate.bias", (p,), "zero"),
        ("predictor.value.weight", (p, p), "w"),
        ("joiner.encoder_proj.weight", (d, j), "w"),
        ("joiner.encoder_proj.bias", (j,), "zero"),
        ("joiner.predictor_proj.weight", (p, j), "w"),
        ("joiner.out.weight", (j, v), "w"),
        ("joiner.out.bias", (v,), "zero"),
    ]

    params: Dict[str, Tensor] = {}
    for name, shape, kind in shapes:
        if kind == "w":
            data = rng.standard_normal(shape) / np.sqrt(shape[0])
        elif kind == "embed":
            data = rng.standard_normal(shape)
        elif kind == "one":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = parameter(data, name=name)
    return params


def _dropout_mask(seed: DropoutSeed, layer: int, shape: Tuple[int, int], rate: float) -> np.ndarray:
    if rate >= 1.0:
        return np.zeros(shape)
    entropy = [int(s) for s in (seed if isinstance(seed, (list, tuple)) else [seed])]
    rng = np.random.default_rng(np.random.SeedSequence(entropy + [layer]))
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def encode(
    params: Dict[str, Tensor],
    features: Union[Tensor, np.ndarray],
    widths: Sequence[Optional[int]],
    physical_width: int,
    dropout: Optional[DropoutSpec] = None,
    dropout_seed: Optional[DropoutSeed] = None,
) -> Tensor:
    """Run the encoder over one utterance.

    Args:
        params: Parameter table (full Supernet or a physically sliced copy)
        features: (T, d_in) input features
        widths: Per active layer, the FFN prefix to keep, or None for all stored channels
        physical_width: Full FFN width the dropout rate is relative to
        dropout: Dropout settings; None disables dropout
        dropout_seed: Seed for the per-layer dropout masks

    Returns:
        (T, d_model) encoder states
    """
    x = ops.linear(
        features if isinstance(features, Tensor) else Tensor(features),
        params["input_proj.weight"],
        params["input_proj.bias"],
    )
    for i, width in enumerate(widths):
        pre = f"encoder.{i}"
        gate = ops.sigmoid(
            ops.linear(x, params[f"{pre}.mixer.gate.weight"], params[f"{pre}.mixer.gate.bias"])
        )
        value = ops.matmul(x, params[f"{pre}.mixer.value.weight"])
        x = ops.layer_norm(
            ops.add(x, ops.gated_scan(gate, value)),
            params[f"{pre}.norm1.gain"],
            params[f"{pre}.norm1.bias"],
        )

        w_in = params[f"{pre}.ffn.in.weight"]
        b_in = params[f"{pre}.ffn.in.bias"]
        w_out = params[f"{pre}.ffn.out.weight"]
        if width is not None:
            w_in = ops.slice(w_in, 1, 0, width)
            b_in = ops.slice(b_in, 0, 0, width)
            w_out = ops.slice(w_out, 0, 0, width)
        hidden = ops.relu(ops.linear(x, w_in, b_in))
        if dropout is not None and dropout_seed is not None:
            rate = dropout.rate(hidden.shape[1], physical_width)
            if rate > 0.0:
                hidden = ops.dropout(hidden, _dropout_mask(dropout_seed, i, hidden.shape, rate))
        x = ops.layer_norm(
            ops.add(x, ops.linear(hidden, w_out, params[f"{pre}.ffn.out.bias"])),
            params[f"{pre}.norm2.gain"],
            params[f"{pre}.norm2.bias"],
        )
    return x


def predict(params: Dict[str, Tensor], tokens: Sequence[int]) -> Tensor:
    """Predictor outputs for the label prefix: row ``u`` has seen blank then ``tokens[:u]``."""
    emb = ops.embedding(params["predictor.embedding"], [BLANK, *tokens])
    gate = ops.sigmoid(ops.linear(emb, params["predictor.gate.weight"], params["predictor.gate.bias"]))
    value = ops.matmul(emb, params["predictor.value.weight"])
    return ops.gated_scan(gate, value)


def join(params: Dict[str, Tensor], encoder_states: Tensor, predictor_states: Tensor) -> LatticeOutput:
    """Joiner over every (frame, prefix) pair."""
    T, U1 = encoder_states.shape[0], predictor_states.shape[0]
    enc = ops.linear(
        encoder_states, params["joiner.encoder_proj.weight"], params["joiner.encoder_proj.bias"]
    )
    pred = ops.matmul(predictor_states, params["joiner.predictor_proj.weight"])
    hidden = ops.tanh(ops.pairwise_add(enc, pred))
    flat = ops.reshape(hidden, (T * U1, hidden.shape[2]))
    logits = ops.linear(flat, params["joiner.out.weight"], params["joiner.out.bias"])
    return LatticeOutput(ops.log_softmax(ops.reshape(logits, (T, U1, logits.shape[1]))))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


class PredictorStep:
    """Numpy predictor used while decoding; the state is the recurrent vector."""

    def __init__(self, params: Dict[str, Tensor]):
        self.embedding = params["predictor.embedding"].data
        self.gate_w = params["predictor.gate.weight"].data
        self.gate_b = params["predictor.gate.bias"].data
        self.value_w = params["predictor.value.weight"].data

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.gate_w.shape[1])

    def step(self, token: int, state: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        e = self.embedding[token]
        g = _sigmoid(e @ self.gate_w + self.gate_b)
        h = g * state + (1.0 - g) * (e @ self.value_w)
        return h, h


class JoinerStep:
    """Numpy joiner used while decoding."""

    def __init__(self, params: Dict[str, Tensor]):
        self.enc_w = params["joiner.encoder_proj.weight"].data
        self.enc_b = params["joiner.encoder_proj.bias"].data
        self.pred_w = params["joiner.predictor_proj.weight"].data
        self.out_w = params["joiner.out.weight"].data
        self.out_b = params["joiner.out.bias"].data

    def log_probs(self, encoder_frame: np.ndarray, predictor_output: np.ndarray) -> np.ndarray:
        hidden = np.tanh(encoder_frame @ self.enc_w + self.enc_b + predictor_output @ self.pred_w)
        logits = hidden @ self.out_w + self.out_b
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())


class _TransducerBase:
    """Shared lattice/decoder plumbing for the Supernet and extracted subnetworks."""

    params: Dict[str, Tensor]

    def lattice_from_states(self, encoder_states: Tensor, tokens: Sequence[int]) -> LatticeOutput:
        return join(self.params, encoder_states, predict(self.params, tokens))

    def predictor_step(self) -> PredictorStep:
        return PredictorStep(self.params)

    def joiner_step(self) -> JoinerStep:
        return JoinerStep(self.params)

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()


class SupernetModel(_TransducerBase, LoggerMixin):
    """The Supernet: one parameter table, every subnetwork a masked view of it.

    Args:
        space: Search space the encoder is built for
        dims: Fixed dimensions
        params: Existing parameters (e.g. from a checkpoint); initialized when None
        seed: Initialization seed
    """

    def __init__(
        self,
        space: SearchSpace,
        dims: ModelDims,
        params: Optional[Dict[str, Tensor]] = None,
        seed: int = 0,
    ):
        self.space = space
        self.dims = dims
        self.params = params if params is not None else init_parameters(space, dims, seed)
        self._check_shapes()

    @classmethod
    def from_config(cls, config: Config) -> "SupernetModel":
        return cls(config.search_space, ModelDims.from_config(config), seed=config.model.init_seed)

    def _check_shapes(self) -> None:
        expected = init_parameters(self.space, self.dims, seed=0)
        missing = set(expected) - set(self.params)
        extra = set(self.params) - set(expected)
        if missing or extra:
            raise ContractError(
                f"parameter table mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, tensor in expected.items():
            if self.params[name].shape != tensor.shape:
                raise ContractError(
                    f"parameter {name} has shape {self.params[name].shape}, expected {tensor.shape}"
                )

    def size_bytes(self, cfg: SubnetworkConfig) -> int:
        return model_size_bytes(self.space, cfg, self.dims)

    def masked_forward(
        self,
        cfg: SubnetworkConfig,
        features: Union[Tensor, np.ndarray],
        dropout_seed: Optional[DropoutSeed] = None,
        training: bool = False,
        dropout: Optional[DropoutSpec] = None,
    ) -> Tensor:
        """Encoder states of subnetwork ``cfg``, reading prefix slices of the shared weights.

        Raises:
            ContractError: If ``cfg`` is not in the search space
        """
        require_valid(self.space, cfg)
        return encode(
            self.params,
            features,
            list(cfg.channels),
            self.space.physical_width,
            dropout if training else None,
            dropout_seed,
        )

    def forward_full(self, features: Union[Tensor, np.ndarray]) -> Tensor:
        """Unmasked encoder pass through every layer at physical width."""
        return encode(self.params, features, [None] * self.space.n_layers_max, self.space.physical_width)

    def lattice(
        self,
        cfg: SubnetworkConfig,
        features: Union[Tensor, np.ndarray],
        tokens: Sequence[int],
        dropout_seed: Optional[DropoutSeed] = None,
        training: bool = False,
        dropout: Optional[DropoutSpec] = None,
    ) -> LatticeOutput:
        enc = self.masked_forward(cfg, features, dropout_seed, training, dropout)
        return self.lattice_from_states(enc, tokens)

    def encoder_states(self, cfg: SubnetworkConfig, features: np.ndarray) -> np.ndarray:
        """Inference-time encoder output as a plain array."""
        with no_grad():
            return self.masked_forward(cfg, features).data

    def extract_subnetwork(self, cfg: SubnetworkConfig) -> "SubnetworkModel":
        """Physically sliced standalone copy of subnetwork ``cfg``."""
        require_valid(self.space, cfg)
        params: Dict[str, Tensor] = {}
        for name, tensor in self.params.items():
            if name.startswith("encoder."):
                layer = int(name.split(".")[1])
                if layer >= cfg.n_layers:
                    continue
                width = cfg.channels[layer]
                if name.endswith("ffn.in.weight"):
                    data = tensor.data[:, :width]
                elif name.endswith("ffn.in.bias") or name.endswith("ffn.out.weight"):
                    data = tensor.data[:width]
                else:
                    data = tensor.data
            else:
                data = tensor.data
            params[name] = Tensor(data.copy(), name=name)
        self.logger.debug(f"Extracted subnetwork {cfg.key()} with {sum(t.size for t in params.values()):,} parameters")
        return SubnetworkModel(cfg, self.dims, params, self.space.physical_width)


class SubnetworkModel(_TransducerBase):
    """A deployable subnetwork holding its own (sliced) weights.

    Args:
        cfg: Configuration it was extracted for
        dims: Fixed dimensions
        params: Sliced parameter table
        physical_width: FFN width of the Supernet it came from
    """

    def __init__(
        self,
        cfg: SubnetworkConfig,
        dims: ModelDims,
        params: Dict[str, Tensor],
        physical_width: int,
    ):
        self.cfg = cfg
        self.dims = dims
        self.params = params
        self.physical_width = physical_width

    def forward(
        self,
        features: Union[Tensor, np.ndarray],
        dropout_seed: Optional[DropoutSeed] = None,
        dropout: Optional[DropoutSpec] = None,
    ) -> Tensor:
        return encode(
            self.params,
            features,
            [None] * self.cfg.n_layers,
            self.physical_width,
            dropout,
            dropout_seed,
        )

    def encoder_states(self, features: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.forward(features).data
