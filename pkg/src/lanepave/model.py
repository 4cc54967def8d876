"""The three-stage multi-task architecture and its ablation variants.

Stage (a): a shared LSTM reads the segment-level performance series.
Stage (b): one head per lane -- an LSTM over the shared hidden sequence
(seeded from the shared final states through a per-head linear adapter),
a projection to a scalar, and a LeakyReLU FC stack producing V features.
Stage (c): all heads' features are concatenated with the auxiliary vector
and a per-lane bias-free linear layer emits each lane's prediction.

Variants: ``no_shared`` feeds the raw series straight into the heads,
``no_heads`` flattens the shared output and concatenates it with the
auxiliary features, ``no_concat`` predicts each lane from its own head
features alone.

All heads advance together through nn's stacked fast path; parameters
live in one flat arena (per-tensor views) so optimizer updates are a few
vector operations. Forward/backward are exact and pure; checkpoints
round-trip bit-exactly.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import CacheError, ConfigError, DimensionError, DivergenceError

VARIANTS = ("full", "no_shared", "no_heads", "no_concat")

_CKPT_MAGIC = "LANEPAVE-CKPT 1"


@dataclass
class ArchConfig:
    """Architecture hyperparameters. Defaults follow the reference setup."""

    num_lanes: int
    aux_dim: int
    series_len: int = 3
    shared_layers: int = 2
    shared_hidden: int = 128
    head_layers: int = 2
    head_hidden: int = 64
    head_fc_hidden: int = 64
    head_fc_out: int = 32  # feature width V emitted per head
    leaky_alpha: float = 0.01
    variant: str = "full"
    forget_bias: float = 1.0
    # Feed the head FC the full final hidden state instead of the scalar
    # projection (the alternative reading of the head wiring).
    head_fc_from_hidden: bool = False

    def __post_init__(self):
        if self.num_lanes < 1:
            raise ConfigError(f"num_lanes must be >= 1, got {self.num_lanes}")
        if self.aux_dim < 0:
            raise ConfigError("aux_dim must be >= 0")
        for name in ("series_len", "shared_layers", "shared_hidden",
                     "head_layers", "head_hidden", "head_fc_hidden",
                     "head_fc_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.leaky_alpha < 1.0:
            raise ConfigError("leaky_alpha must be in (0, 1)")
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "full" and self.shared_layers != self.head_layers:
            # the per-head adapter pairs shared layer l with head layer l
            raise ConfigError("full variant requires shared_layers == head_layers")

    @property
    def has_shared(self) -> bool:
        return self.variant != "no_shared"

    @property
    def has_heads(self) -> bool:
        return self.variant != "no_heads"

    @property
    def has_concat(self) -> bool:
        return self.variant != "no_concat"


def head_input_size(config: ArchConfig) -> int:
    """First head-LSTM layer input width: shared hidden, or 1 for no_shared."""
    return config.shared_hidden if config.has_shared else 1


def concat_width(config: ArchConfig) -> int:
    """Column count of the matrix each output layer consumes."""
    if config.variant == "no_concat":
        return config.head_fc_out
    if config.variant == "no_heads":
        return config.series_len * config.shared_hidden + config.aux_dim
    return config.num_lanes * config.head_fc_out + config.aux_dim


@dataclass
class LinearParams:
    W: np.ndarray
    b: np.ndarray | None = None


@dataclass
class HeadParams:
    """One lane's task-specific tower."""

    cells: list            # LstmCellParams per layer
    adapter: np.ndarray | None   # (shared_hidden, head_hidden); None in no_shared
    proj: np.ndarray | None      # (head_hidden, 1); None when fc reads the hidden state
    fc: list                     # two LinearParams with biases


@dataclass
class ModelParams:
    """All weight tensors of one model instance.

    When built by params_structure/init_params, every tensor is a view
    into the ``flat`` arena, so whole-model updates can run on one vector.
    """

    shared: list   # LstmCellParams per shared layer ([] in no_shared)
    heads: list    # HeadParams per lane ([] in no_heads)
    outputs: list  # per-lane (concat_width, 1) matrices
    flat: np.ndarray | None = None


def named_tensors(params: ModelParams):
    """Yield (name, array) for every tensor, in a fixed canonical order."""
    for l, cell in enumerate(params.shared):
        yield f"shared.{l}.W", cell.W
        yield f"shared.{l}.b", cell.b
    for n, head in enumerate(params.heads):
        if head.adapter is not None:
            yield f"head.{n}.adapter", head.adapter
        for l, cell in enumerate(head.cells):
            yield f"head.{n}.cell.{l}.W", cell.W
            yield f"head.{n}.cell.{l}.b", cell.b
        if head.proj is not None:
            yield f"head.{n}.proj", head.proj
        for j, lin in enumerate(head.fc):
            yield f"head.{n}.fc.{j}.W", lin.W
            if lin.b is not None:
                yield f"head.{n}.fc.{j}.b", lin.b
    for n, W in enumerate(params.outputs):
        yield f"output.{n}", W


def _head_structure(config: ArchConfig, filler) -> HeadParams:
    hin = head_input_size(config)
    cells = []
    for l in range(config.head_layers):
        isz = hin if l == 0 else config.head_hidden
        cells.append(nn.LstmCellParams(
            W=filler((4 * config.head_hidden, config.head_hidden + isz)),
            b=filler((4 * config.head_hidden,))))
    adapter = None
    if config.has_shared:
        adapter = filler((config.shared_hidden, config.head_hidden))
    if config.head_fc_from_hidden:
        proj = None
        fc_in = config.head_hidden
    else:
        proj = filler((config.head_hidden, 1))
        fc_in = 1
    fc = [
        LinearParams(W=filler((fc_in, config.head_fc_hidden)),
                     b=filler((config.head_fc_hidden,))),
        LinearParams(W=filler((config.head_fc_hidden, config.head_fc_out)),
                     b=filler((config.head_fc_out,))),
    ]
    return HeadParams(cells=cells, adapter=adapter, proj=proj, fc=fc)


def _build(config: ArchConfig, filler) -> ModelParams:
    shared = []
    if config.has_shared:
        for l in range(config.shared_layers):
            isz = 1 if l == 0 else config.shared_hidden
            shared.append(nn.LstmCellParams(
                W=filler((4 * config.shared_hidden, config.shared_hidden + isz)),
                b=filler((4 * config.shared_hidden,))))
    heads = []
    if config.has_heads:
        heads = [_head_structure(config, filler) for _ in range(config.num_lanes)]
    width = concat_width(config)
    outputs = [filler((width, 1)) for _ in range(config.num_lanes)]
    return ModelParams(shared=shared, heads=heads, outputs=outputs)


def _probe(shape):
    """Shape-only stand-in array (zero-stride broadcast, no allocation)."""
    return np.broadcast_to(np.float64(0.0), shape)


def params_structure(config: ArchConfig) -> ModelParams:
    """A zeroed ModelParams whose tensors are views into one flat arena."""
    total = param_count(config)
    arena = np.zeros(total)
    cursor = 0

    def carve(shape):
        nonlocal cursor
        n = int(np.prod(shape))
        view = arena[cursor : cursor + n].reshape(shape)
        cursor += n
        return view

    params = _build(config, carve)
    params.flat = arena
    return params


def param_count(config: ArchConfig) -> int:
    """Total scalar parameter count; a pure function of the config."""
    return sum(t.size for _, t in named_tensors(_build(config, _probe)))


def init_params(config: ArchConfig, seed: int) -> ModelParams:
    """Seeded uniform +/- 1/sqrt(fan_in) init; forget-gate biases offset."""
    rng = np.random.default_rng(seed)
    params = params_structure(config)
    for name, arr in named_tensors(params):
        is_lstm = ".cell." in name or name.startswith("shared.")
        if name.endswith(".W") and is_lstm:
            limit = 1.0 / np.sqrt(arr.shape[1])
            arr[...] = rng.uniform(-limit, limit, size=arr.shape)
        elif name.endswith(".b") and is_lstm:
            arr[...] = 0.0
            arr[: arr.shape[0] // 4] = config.forget_bias
        elif name.endswith((".adapter", ".proj")) or name.startswith("output.") \
                or (".fc." in name and name.endswith(".W")):
            limit = 1.0 / np.sqrt(arr.shape[0])
            arr[...] = rng.uniform(-limit, limit, size=arr.shape)
        # fc biases stay zero
    return params


@dataclass
class BatchOutput:
    """Forward-pass outputs: per-lane predictions and the feature blocks."""

    preds: np.ndarray          # (batch, num_lanes)
    head_features: list        # per-lane (batch, V); [] in no_heads
    concat: np.ndarray | None  # (batch, concat_width); None in no_concat


@dataclass
class ModelCache:
    """Intermediates of one forward pass, consumed by backward."""

    batch: int
    fingerprint: tuple
    series_inputs: list
    aux: np.ndarray
    shared_top: list | None
    shared_finals: list | None
    shared_cache: nn.ForwardCache | None
    head_cache: nn.StackCache | None
    head_hh: np.ndarray | None     # (N, batch, head_hidden) final top hidden
    head_fc_in: np.ndarray | None  # (N, batch, 1) or (N, batch, head_hidden)
    head_z1: np.ndarray | None
    head_a1: np.ndarray | None
    head_feats: np.ndarray | None  # (N, batch, V)
    concat: np.ndarray | None


def _fingerprint(config: ArchConfig, batch: int) -> tuple:
    return (config.variant, config.num_lanes, config.series_len,
            config.aux_dim, concat_width(config), batch)


def _stack_heads(params: ModelParams, config: ArchConfig):
    """Transient stacked copies of the per-head tensors for batched math."""
    heads = params.heads
    ws = [np.stack([h.cells[l].W for h in heads])
          for l in range(config.head_layers)]
    bs = [np.stack([h.cells[l].b for h in heads])
          for l in range(config.head_layers)]
    adapters = None
    if config.has_shared:
        adapters = np.stack([h.adapter for h in heads])
    proj = None
    if not config.head_fc_from_hidden:
        proj = np.stack([h.proj for h in heads])
    W1 = np.stack([h.fc[0].W for h in heads])
    b1 = np.stack([h.fc[0].b for h in heads])
    W2 = np.stack([h.fc[1].W for h in heads])
    b2 = np.stack([h.fc[1].b for h in heads])
    return ws, bs, adapters, proj, W1, b1, W2, b2


def forward(series: np.ndarray, aux: np.ndarray, params: ModelParams,
            config: ArchConfig):
    """Run the architecture on a batch.

    series: (batch, series_len) already on training scale.
    aux:    (batch, aux_dim).
    Returns (BatchOutput, ModelCache).
    """
    series = np.asarray(series, dtype=float)
    aux = np.asarray(aux, dtype=float)
    if series.ndim != 2 or series.shape[1] != config.series_len:
        raise DimensionError(
            f"series must be (batch, {config.series_len}), got {series.shape}")
    B = series.shape[0]
    if aux.shape != (B, config.aux_dim):
        raise DimensionError(
            f"aux must be ({B}, {config.aux_dim}), got {aux.shape}")

    N = config.num_lanes
    V = config.head_fc_out
    inputs = [series[:, t : t + 1] for t in range(config.series_len)]

    shared_top = shared_finals = shared_cache = None
    if config.has_shared:
        shared_top, shared_finals, shared_cache = nn.lstm_sequence_forward(
            inputs, params.shared)

    head_cache = hh = fc_in = z1 = a1 = feats = None
    if config.has_heads:
        ws, bs, adapters, proj, W1, b1, W2, b2 = _stack_heads(params, config)
        head_inputs = shared_top if config.has_shared else inputs
        init = None
        if config.has_shared:
            init = []
            for st in shared_finals:
                hb = np.broadcast_to(st.h, (N,) + st.h.shape)
                cb = np.broadcast_to(st.c, (N,) + st.c.shape)
                init.append((np.matmul(hb, adapters), np.matmul(cb, adapters)))
        top, _, head_cache = nn.lstm_stack_sequence_forward(
            head_inputs, ws, bs, init)
        hh = top[-1]                                   # (N, B, head_hidden)
        fc_in = hh if proj is None else np.matmul(hh, proj)
        z1 = np.matmul(fc_in, W1) + b1[:, None, :]
        a1 = nn.leaky_relu(z1, config.leaky_alpha)
        feats = np.matmul(a1, W2) + b2[:, None, :]     # (N, B, V)

    concat = None
    if config.variant == "no_concat":
        out_stack = np.stack(params.outputs)           # (N, V, 1)
        preds = np.matmul(feats, out_stack)[..., 0].T.copy()
    else:
        if config.variant == "no_heads":
            flat = np.concatenate(shared_top, axis=1)
            concat = np.concatenate([flat, aux], axis=1)
        else:
            concat = np.concatenate(
                [feats.transpose(1, 0, 2).reshape(B, N * V), aux], axis=1)
        out_mat = np.concatenate(params.outputs, axis=1)  # (width, N)
        preds = concat @ out_mat

    if not np.isfinite(preds).all():
        raise DivergenceError("non-finite prediction in forward pass")

    head_features = [feats[n] for n in range(N)] if feats is not None else []
    out = BatchOutput(preds=preds, head_features=head_features, concat=concat)
    cache = ModelCache(
        batch=B, fingerprint=_fingerprint(config, B), series_inputs=inputs,
        aux=aux, shared_top=shared_top, shared_finals=shared_finals,
        shared_cache=shared_cache, head_cache=head_cache, head_hh=hh,
        head_fc_in=fc_in, head_z1=z1, head_a1=a1, head_feats=feats,
        concat=concat)
    return out, cache


def backward(d_preds: np.ndarray, cache: ModelCache, params: ModelParams,
             config: ArchConfig, out: ModelParams | None = None) -> ModelParams:
    """Exact gradients of forward w.r.t. every parameter tensor.

    d_preds: (batch, num_lanes) upstream gradient on the predictions.
    Gradients from all lanes sum through the shared layer. Every tensor of
    ``out`` (a params_structure, reusable across steps) is overwritten.
    """
    d_preds = np.asarray(d_preds, dtype=float)
    if cache.fingerprint != _fingerprint(config, cache.batch):
        raise CacheError("cache does not match this config")
    if d_preds.shape != (cache.batch, config.num_lanes):
        raise DimensionError(
            f"d_preds must be ({cache.batch}, {config.num_lanes})")

    grads = params_structure(config) if out is None else out
    N = config.num_lanes
    V = config.head_fc_out
    B = cache.batch

    # output layers and the gradient flowing back into their input
    if config.variant == "no_concat":
        d_pred_stack = d_preds.T[:, :, None]            # (N, B, 1)
        out_stack = np.stack(params.outputs)            # (N, V, 1)
        d_out = np.matmul(np.swapaxes(cache.head_feats, -1, -2), d_pred_stack)
        for n in range(N):
            grads.outputs[n][...] = d_out[n]
        d_feats = np.matmul(d_pred_stack, np.swapaxes(out_stack, -1, -2))
    else:
        d_out = cache.concat.T @ d_preds                # (width, N)
        for n in range(N):
            grads.outputs[n][...] = d_out[:, n : n + 1]
        out_mat = np.concatenate(params.outputs, axis=1)
        d_concat = d_preds @ out_mat.T                  # (B, width)
        if config.variant == "no_heads":
            Hs = config.shared_hidden
            d_flat = d_concat[:, : config.series_len * Hs]
            d_top = [d_flat[:, t * Hs : (t + 1) * Hs]
                     for t in range(config.series_len)]
            _, _, shared_grads = nn.lstm_sequence_backward(
                d_top, None, cache.shared_cache, params.shared)
            for l, cg in enumerate(shared_grads):
                grads.shared[l].W[...] = cg.dW
                grads.shared[l].b[...] = cg.db
            return grads
        d_feats = d_concat[:, : N * V].reshape(B, N, V).transpose(1, 0, 2)

    # task heads, all lanes at once
    ws, _, adapters, proj, W1, _, W2, _ = _stack_heads(params, config)
    dW2 = np.matmul(np.swapaxes(cache.head_a1, -1, -2), d_feats)
    db2 = d_feats.sum(axis=1)
    da1 = np.matmul(d_feats, np.swapaxes(W2, -1, -2))
    dz1 = da1 * nn.leaky_relu_grad(cache.head_z1, config.leaky_alpha)
    dW1 = np.matmul(np.swapaxes(cache.head_fc_in, -1, -2), dz1)
    db1 = dz1.sum(axis=1)
    dfc_in = np.matmul(dz1, np.swapaxes(W1, -1, -2))
    if proj is None:
        dhh = dfc_in
        dproj = None
    else:
        dproj = np.matmul(np.swapaxes(cache.head_hh, -1, -2), dfc_in)
        dhh = np.matmul(dfc_in, np.swapaxes(proj, -1, -2))

    d_finals = [None] * (config.head_layers - 1) + [(dhh, np.zeros_like(dhh))]
    d_series, d_init, cell_grads = nn.lstm_stack_sequence_backward(
        None, d_finals, cache.head_cache, ws, shared_input=True)

    d_adapters = None
    d_finals_shared = None
    if config.has_shared:
        d_adapters = np.zeros_like(adapters)
        d_finals_shared = []
        for l, st in enumerate(cache.shared_finals):
            dh0, dc0 = d_init[l]
            hb = np.broadcast_to(st.h, (N,) + st.h.shape)
            cb = np.broadcast_to(st.c, (N,) + st.c.shape)
            d_adapters += np.matmul(np.swapaxes(hb, -1, -2), dh0)
            d_adapters += np.matmul(np.swapaxes(cb, -1, -2), dc0)
            at = np.swapaxes(adapters, -1, -2)
            d_finals_shared.append(nn.LstmState(
                h=np.matmul(dh0, at).sum(axis=0),
                c=np.matmul(dc0, at).sum(axis=0)))

    for n, head in enumerate(grads.heads):
        for l in range(config.head_layers):
            head.cells[l].W[...] = cell_grads[l][0][n]
            head.cells[l].b[...] = cell_grads[l][1][n]
        if d_adapters is not None:
            head.adapter[...] = d_adapters[n]
        if dproj is not None:
            head.proj[...] = dproj[n]
        head.fc[0].W[...] = dW1[n]
        head.fc[0].b[...] = db1[n]
        head.fc[1].W[...] = dW2[n]
        head.fc[1].b[...] = db2[n]

    # shared trunk: per-timestep gradients from every head plus the
    # final-state gradients routed back through the adapters
    if config.has_shared:
        _, _, shared_grads = nn.lstm_sequence_backward(
            d_series, d_finals_shared, cache.shared_cache, params.shared)
        for l, cg in enumerate(shared_grads):
            grads.shared[l].W[...] = cg.dW
            grads.shared[l].b[...] = cg.db
    return grads


def describe_shapes(config: ArchConfig, m: int):
    """Emitted output shape per architecture stage for a batch of m units."""
    rows = [("input", (m, config.series_len, 1))]
    if config.has_shared:
        rows.append(("shared_lstm", (m, config.series_len, config.shared_hidden)))
    if config.has_heads:
        if config.head_fc_from_hidden:
            rows.append(("head_lstm", (m, config.head_hidden)))
        else:
            rows.append(("head_lstm", (m, 1)))
        rows.append(("head_fc", (m, config.head_fc_out)))
    rows.append(("output", (m, 1)))
    return rows


@dataclass
class Checkpoint:
    params: ModelParams
    config: ArchConfig
    seed: int
    extra_tensors: dict
    meta: dict


def save_checkpoint(path, params: ModelParams, config: ArchConfig, seed: int,
                    extra_tensors: dict | None = None,
                    meta: dict | None = None) -> None:
    """Write a versioned, byte-deterministic container of all tensors."""
    extra_tensors = extra_tensors or {}
    names, arrays = [], []
    for name, arr in named_tensors(params):
        names.append(name)
        arrays.append(arr)
    for name in sorted(extra_tensors):
        names.append("extra:" + name)
        arrays.append(np.asarray(extra_tensors[name], dtype=float))
    header = {
        "magic": _CKPT_MAGIC,
        "config": asdict(config),
        "seed": int(seed),
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(a.shape)}
                    for n, a in zip(names, arrays)],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(f"{_CKPT_MAGIC}\n{len(blob)}\n".encode("ascii"))
        f.write(blob)
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    """Read a container written by save_checkpoint; bit-exact round trip."""
    with open(path, "rb") as f:
        magic = f.readline().decode("ascii").strip()
        if magic != _CKPT_MAGIC:
            raise ConfigError(f"not a checkpoint file: {path}")
        blob_len = int(f.readline().decode("ascii").strip())
        header = json.loads(f.read(blob_len).decode("utf-8"))
        config = ArchConfig(**header["config"])
        loaded = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ConfigError("checkpoint truncated")
            loaded[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    params = params_structure(config)
    for name, arr in named_tensors(params):
        if name not in loaded:
            raise ConfigError(f"checkpoint missing tensor {name}")
        if loaded[name].shape != arr.shape:
            raise ConfigError(f"checkpoint tensor {name} has wrong shape")
        arr[...] = loaded[name]
    extra = {k[len("extra:"):]: v for k, v in loaded.items()
             if k.startswith("extra:")}
    return Checkpoint(params=params, config=config, seed=header["seed"],
                      extra_tensors=extra, meta=header.get("meta", {}))
