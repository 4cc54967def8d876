"""Numeric primitives: activations, linear maps, the LSTM cell and
multi-layer sequence runner, MSE, and a finite-difference gradient checker.

Everything is float64. Forward passes are pure functions; each forward
returns the cache its backward needs. Gradients are derived by hand and
accumulate additively across timesteps. Cells operate on single vectors
``(d,)`` or batches ``(batch, d)`` with the same code path.

Gate weights act on the concatenation ``[h_prev, x]`` (hidden part first),
one matrix per gate. Internally the four gate matrices live stacked in one
``(4*hidden, hidden+input)`` array, in row-block order: forget, input,
output, candidate (the three sigmoid gates first, so they activate in one
call). The per-gate views ``W_g``/``W_i``/``W_c``/``W_o`` (and
``b_g``..``b_o``) alias that storage, so in-place optimizer updates stay
visible through them.

A stacked fast path runs S independent cells of identical shape at once
on ``(S, batch, d)`` arrays; the model uses it to advance all task heads
per timestep in a few batched matmuls.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CacheError, ConfigError, DimensionError, DivergenceError


def sigmoid(x):
    """Logistic function, elementwise; saturates instead of overflowing."""
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    if out.ndim == 0:
        return float(out)
    return out


def tanh_act(x):
    """Hyperbolic tangent, elementwise."""
    out = np.tanh(np.asarray(x, dtype=float))
    if out.ndim == 0:
        return float(out)
    return out


def leaky_relu(x, alpha: float = 0.01):
    """x for x >= 0, alpha*x otherwise. alpha must lie in (0, 1)."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"leaky_relu alpha must be in (0, 1), got {alpha}")
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0.0, x, alpha * x)
    if out.ndim == 0:
        return float(out)
    return out


def leaky_relu_grad(x, alpha: float = 0.01):
    """Slope of leaky_relu at x (1 on the x >= 0 branch)."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"leaky_relu alpha must be in (0, 1), got {alpha}")
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, 1.0, alpha)


@dataclass
class LstmCellParams:
    """Weights of one LSTM cell.

    ``W`` stacks the four gate matrices, each of shape
    ``(hidden, hidden + input)``; ``b`` stacks the four biases.
    """

    W: np.ndarray  # (4*hidden, hidden+input)
    b: np.ndarray  # (4*hidden,)

    def __post_init__(self):
        if self.W.ndim != 2 or self.W.shape[0] % 4 != 0:
            raise DimensionError(f"LSTM weight stack has bad shape {self.W.shape}")
        if self.b.shape != (self.W.shape[0],):
            raise DimensionError("LSTM bias length must equal weight row count")
        if self.W.shape[1] <= self.hidden:
            raise DimensionError("LSTM weight columns must cover hidden+input")

    @property
    def hidden(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[1] - self.hidden

    # Per-gate views into the stacked storage (order: g, i, o, c).
    @property
    def W_g(self):
        return self.W[0 : self.hidden]

    @property
    def W_i(self):
        return self.W[self.hidden : 2 * self.hidden]

    @property
    def W_o(self):
        return self.W[2 * self.hidden : 3 * self.hidden]

    @property
    def W_c(self):
        return self.W[3 * self.hidden :]

    @property
    def b_g(self):
        return self.b[0 : self.hidden]

    @property
    def b_i(self):
        return self.b[self.hidden : 2 * self.hidden]

    @property
    def b_o(self):
        return self.b[2 * self.hidden : 3 * self.hidden]

    @property
    def b_c(self):
        return self.b[3 * self.hidden :]


def init_lstm_params(hidden: int, input_size: int, rng: np.random.Generator,
                     forget_bias: float = 1.0) -> LstmCellParams:
    """Uniform +/- 1/sqrt(fan_in) weights, zero biases except the forget gate."""
    if hidden < 1 or input_size < 1:
        raise ConfigError("hidden and input_size must be positive")
    fan_in = hidden + input_size
    limit = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-limit, limit, size=(4 * hidden, fan_in))
    b = np.zeros(4 * hidden)
    b[:hidden] = forget_bias
    return LstmCellParams(W=W, b=b)


def init_linear(n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
    """Uniform +/- 1/sqrt(n_in) weight of shape (n_in, n_out); zero bias or None."""
    if n_in < 1 or n_out < 1:
        raise ConfigError("linear dimensions must be positive")
    limit = 1.0 / np.sqrt(n_in)
    W = rng.uniform(-limit, limit, size=(n_in, n_out))
    return (W, np.zeros(n_out)) if bias else (W, None)


@dataclass
class LstmState:
    """Hidden and cell state; matching shapes ending in (hidden,)."""

    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise DimensionError("LSTM state h and c must share a shape")


def zero_state(hidden: int, batch=None) -> LstmState:
    shape = (hidden,) if batch is None else (batch, hidden)
    return LstmState(h=np.zeros(shape), c=np.zeros(shape))


@dataclass
class CellCache:
    """Intermediates of one cell_forward call, as its backward needs them."""

    hx: np.ndarray        # concatenated [h_prev, x]
    g: np.ndarray
    i: np.ndarray
    c_tilde: np.ndarray
    o: np.ndarray
    c_prev: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


@dataclass
class CellGrads:
    """Gradients for one cell's stacked parameters."""

    dW: np.ndarray
    db: np.ndarray


def _cell_core_forward(hx, c_prev, W, b):
    """Gate math shared by the plain and stacked paths.

    hx is [...x batch x] (hidden+input); W is [...x] (4H, hidden+input).
    For stacked W the bias broadcasts per stack entry.
    """
    H = W.shape[-2] // 4
    zs = np.matmul(hx, np.swapaxes(W, -1, -2))
    zs += b[..., None, :] if b.ndim > 1 else b
    gates = sigmoid(zs[..., : 3 * H])
    g = gates[..., :H]
    i = gates[..., H : 2 * H]
    o = gates[..., 2 * H :]
    c_tilde = np.tanh(zs[..., 3 * H :])
    c = g * c_prev + i * c_tilde
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = CellCache(hx=hx, g=g, i=i, c_tilde=c_tilde, o=o,
                      c_prev=c_prev, c=c, tanh_c=tanh_c)
    return h, c, cache


def _cell_core_backward(grad_h, grad_c, cache, W):
    """Reverse of _cell_core_forward; returns (dhx, dc_prev, dW, db)."""
    do = grad_h * cache.tanh_c
    dc = grad_c + grad_h * cache.o * (1.0 - cache.tanh_c**2)
    dg = dc * cache.c_prev
    di = dc * cache.c_tilde
    dc_tilde = dc * cache.i
    dc_prev = dc * cache.g

    H = W.shape[-2] // 4
    dz = np.empty(cache.hx.shape[:-1] + (4 * H,))
    dz[..., :H] = dg * cache.g * (1.0 - cache.g)
    dz[..., H : 2 * H] = di * cache.i * (1.0 - cache.i)
    dz[..., 2 * H : 3 * H] = do * cache.o * (1.0 - cache.o)
    dz[..., 3 * H :] = dc_tilde * (1.0 - cache.c_tilde**2)
    if dz.ndim == 1:
        dW = np.outer(dz, cache.hx)
        db = dz.copy()
    else:
        dW = np.matmul(np.swapaxes(dz, -1, -2), cache.hx)
        db = dz.sum(axis=-2)
    dhx = np.matmul(dz, W)
    return dhx, dc_prev, dW, db


def lstm_cell_forward(x: np.ndarray, prev: LstmState, params: LstmCellParams):
    """One LSTM step.

    g, i, o are sigmoids of affine maps of [h_prev, x]; c_tilde is the tanh
    branch; c = g*c_prev + i*c_tilde; h = o*tanh(c). Returns the new state
    and the cache entry for the backward pass.
    """
    x = np.asarray(x, dtype=float)
    H = params.hidden
    if x.shape[-1] != params.input_size:
        raise DimensionError(
            f"cell input size {x.shape[-1]} != params input size {params.input_size}")
    if prev.h.shape[-1] != H or prev.h.ndim != x.ndim:
        raise DimensionError("previous state does not match params/input")
    hx = np.concatenate([prev.h, x], axis=-1)
    h, c, cache = _cell_core_forward(hx, prev.c, params.W, params.b)
    return LstmState(h=h, c=c), cache


def lstm_cell_backward(grad_h: np.ndarray, grad_c: np.ndarray, cache: CellCache,
                       params: LstmCellParams):
    """Exact gradients of one LSTM step.

    grad_h/grad_c are dL/dh and dL/dc for this step's outputs. Returns
    (grad_x, grad_prev_state, CellGrads).
    """
    H = params.hidden
    if cache.g.shape[-1] != H or cache.hx.shape[-1] != params.W.shape[1]:
        raise CacheError("cache entry does not match these cell params")
    if grad_h.shape != cache.g.shape:
        raise DimensionError("grad_h shape does not match the forward pass")
    dhx, dc_prev, dW, db = _cell_core_backward(grad_h, grad_c, cache, params.W)
    grad_x = dhx[..., H:]
    grad_prev = LstmState(h=dhx[..., :H].copy(), c=dc_prev)
    return grad_x, grad_prev, CellGrads(dW=dW, db=db)


@dataclass
class ForwardCache:
    """Per-(layer, timestep) cell caches from one sequence forward pass."""

    steps: list  # steps[layer][t] -> CellCache
    n_steps: int
    hidden_sizes: tuple

    def check(self, layers) -> None:
        if len(self.steps) != len(layers):
            raise CacheError("cache layer count does not match params")
        for lp, hs in zip(layers, self.hidden_sizes):
            if lp.hidden != hs:
                raise CacheError("cache was produced by different params")


def lstm_sequence_forward(series, layers, init=None):
    """Run stacked LSTM layers across a series.

    series: nonempty sequence of inputs, each (input,) or (batch, input).
    layers: LstmCellParams per layer; layer l consumes layer l-1's hidden.
    init:   optional initial LstmState per layer (zeros otherwise).

    Returns (top_hidden, finals, cache): the top layer's hidden state at
    every timestep, the final state of every layer, and the ForwardCache.
    """
    series = [np.asarray(x, dtype=float) for x in series]
    if len(series) == 0:
        raise DimensionError("series must be nonempty")
    if not layers:
        raise DimensionError("at least one LSTM layer is required")
    for l in range(1, len(layers)):
        if layers[l].input_size != layers[l - 1].hidden:
            raise DimensionError(
                f"layer {l} input size {layers[l].input_size} != "
                f"layer {l-1} hidden {layers[l-1].hidden}")

    x0 = series[0]
    batch = None if x0.ndim == 1 else x0.shape[0]
    if init is None:
        states = [zero_state(lp.hidden, batch) for lp in layers]
    else:
        if len(init) != len(layers):
            raise DimensionError("one initial state per layer required")
        states = list(init)

    steps = [[] for _ in layers]
    top_hidden = []
    for x in series:
        inp = x
        for l, lp in enumerate(layers):
            states[l], cache = lstm_cell_forward(inp, states[l], lp)
            steps[l].append(cache)
            inp = states[l].h
        top_hidden.append(inp)
    cache = ForwardCache(steps=steps, n_steps=len(series),
                         hidden_sizes=tuple(lp.hidden for lp in layers))
    return top_hidden, states, cache


def lstm_sequence_backward(d_top_hidden, d_finals, cache: ForwardCache, layers):
    """Backpropagation through time over the stacked layers.

    d_top_hidden: per-timestep dL/dh for the top layer (entries may be None).
    d_finals:     per-layer dL/d(final state) as LstmState or None.

    Returns (d_series, d_init, grads): gradients w.r.t. the input series,
    the initial state of every layer, and per-layer CellGrads.
    """
    cache.check(layers)
    k = cache.n_steps
    n_layers = len(layers)
    if d_top_hidden is not None and len(d_top_hidden) != k:
        raise DimensionError("d_top_hidden must have one entry per timestep")
    if d_finals is not None and len(d_finals) != n_layers:
        raise DimensionError("d_finals must have one entry per layer")

    grads = [None] * n_layers
    d_init = [None] * n_layers
    # dL/dh_t of the layer currently being processed, from the layer above
    d_from_above = list(d_top_hidden) if d_top_hidden is not None else [None] * k

    for l in range(n_layers - 1, -1, -1):
        lp = layers[l]
        ref = cache.steps[l][k - 1].g
        dh_carry = np.zeros_like(ref)
        dc_carry = np.zeros_like(ref)
        if d_finals is not None and d_finals[l] is not None:
            dh_carry = dh_carry + d_finals[l].h
            dc_carry = dc_carry + d_finals[l].c
        acc = CellGrads(dW=np.zeros_like(lp.W), db=np.zeros_like(lp.b))
        d_below = [None] * k
        for t in range(k - 1, -1, -1):
            dh = dh_carry if d_from_above[t] is None else dh_carry + d_from_above[t]
            dx, dprev, cg = lstm_cell_backward(dh, dc_carry, cache.steps[l][t], lp)
            acc.dW += cg.dW
            acc.db += cg.db
            dh_carry, dc_carry = dprev.h, dprev.c
            d_below[t] = dx
        grads[l] = acc
        d_init[l] = LstmState(h=dh_carry, c=dc_carry)
        d_from_above = d_below
    return d_from_above, d_init, grads


# ---------------------------------------------------------------------------
# Stacked fast path: S independent same-shape cells advance together on
# (S, batch, d) arrays. Used by the model to run all task heads at once.
# The gate math is the shared _cell_core_* above; an equivalence test pins
# this path to the per-cell one.

@dataclass
class StackCache:
    """Per-timestep caches of one stacked sequence forward."""

    steps: list          # steps[layer][t] -> CellCache (stacked arrays)
    n_steps: int
    stack: int
    hidden_sizes: tuple


def lstm_stack_sequence_forward(series, layer_ws, layer_bs, init=None):
    """Run S parallel LSTM towers over a shared input series.

    series:   list of (batch, input) arrays, or (S, batch, input) to give
              each tower its own input.
    layer_ws: per layer, (S, 4*hidden, hidden+input) stacked weights.
    layer_bs: per layer, (S, 4*hidden) stacked biases.
    init:     per layer, optional (h, c) pair of (S, batch, hidden).

    Returns (top_hidden, finals, cache) with stacked arrays throughout.
    """
    if not series:
        raise DimensionError("series must be nonempty")
    S = layer_ws[0].shape[0]
    x0 = np.asarray(series[0])
    B = x0.shape[-2] if x0.ndim >= 2 else 1
    states = []
    for l, (W, b) in enumerate(zip(layer_ws, layer_bs)):
        H = W.shape[1] // 4
        if init is not None and init[l] is not None:
            states.append(init[l])
        else:
            states.append((np.zeros((S, B, H)), np.zeros((S, B, H))))
    steps = [[] for _ in layer_ws]
    top_hidden = []
    for x in series:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            inp = np.broadcast_to(x, (S,) + x.shape)
        else:
            inp = x
        for l, (W, b) in enumerate(zip(layer_ws, layer_bs)):
            h_prev, c_prev = states[l]
            hx = np.concatenate([h_prev, inp], axis=-1)
            h, c, cache = _cell_core_forward(hx, c_prev, W, b)
            steps[l].append(cache)
            states[l] = (h, c)
            inp = h
        top_hidden.append(inp)
    cache = StackCache(steps=steps, n_steps=len(series), stack=S,
                       hidden_sizes=tuple(W.shape[1] // 4 for W in layer_ws))
    return top_hidden, states, cache


def lstm_stack_sequence_backward(d_top_hidden, d_finals, cache: StackCache,
                                 layer_ws, shared_input: bool):
    """BPTT over the stacked towers.

    d_top_hidden / d_finals as in lstm_sequence_backward but with stacked
    (S, batch, hidden) arrays. When shared_input, the returned d_series
    entries are summed over the stack axis (all towers read one series).

    Returns (d_series, d_init, grads) with grads[l] = (dW, db) stacked.
    """
    k = cache.n_steps
    n_layers = len(layer_ws)
    grads = [None] * n_layers
    d_init = [None] * n_layers
    d_from_above = list(d_top_hidden) if d_top_hidden is not None else [None] * k
    for l in range(n_layers - 1, -1, -1):
        W = layer_ws[l]
        H = W.shape[1] // 4
        ref = cache.steps[l][k - 1].g
        dh_carry = np.zeros_like(ref)
        dc_carry = np.zeros_like(ref)
        if d_finals is not None and d_finals[l] is not None:
            dh_carry = dh_carry + d_finals[l][0]
            dc_carry = dc_carry + d_finals[l][1]
        dW_acc = np.zeros_like(W)
        db_acc = np.zeros(W.shape[:1] + (4 * H,))
        d_below = [None] * k
        for t in range(k - 1, -1, -1):
            dh = dh_carry if d_from_above[t] is None else dh_carry + d_from_above[t]
            dhx, dc_prev, dW, db = _cell_core_backward(
                dh, dc_carry, cache.steps[l][t], W)
            dW_acc += dW
            db_acc += db
            dh_carry = dhx[..., :H]
            dc_carry = dc_prev
            d_below[t] = dhx[..., H:]
        grads[l] = (dW_acc, db_acc)
        d_init[l] = (dh_carry.copy(), dc_carry)
        d_from_above = d_below
    if shared_input:
        d_series = [d.sum(axis=0) for d in d_from_above]
    else:
        d_series = d_from_above
    return d_series, d_init, grads


def linear_forward(x: np.ndarray, W: np.ndarray, b=None) -> np.ndarray:
    """Affine map x @ W (+ b). b=None gives the bias-free form."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear: inner dims {x.shape[-1]} vs {W.shape[0]}")
    out = x @ W
    if b is not None:
        out = out + b
    return out


def linear_backward(d_out: np.ndarray, x: np.ndarray, W: np.ndarray, has_bias: bool):
    """Gradients of linear_forward: returns (dx, dW, db-or-None)."""
    if d_out.ndim == 2:
        dW = x.T @ d_out
        db = d_out.sum(axis=0) if has_bias else None
    else:
        dW = np.outer(x, d_out)
        db = d_out.copy() if has_bias else None
    dx = d_out @ W.T
    return dx, dW, db


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """(1/M) * sum((target - pred)^2) over all M entries."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise DimensionError("mse over empty input")
    d = pred - target
    return float(np.mean(d * d))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d mse / d pred = 2*(pred - target)/M."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or pred.size == 0:
        raise DimensionError("mse_grad needs matching nonempty inputs")
    return 2.0 * (pred - target) / pred.size


def grad_check(loss_and_grads, tensors, epsilon: float = 1e-5,
               floor: float = 1e-5) -> float:
    """Compare analytic gradients to central finite differences.

    loss_and_grads() must evaluate the loss from the current contents of
    ``tensors`` (which are perturbed in place) and return
    ``(loss, grads)`` with one gradient array per tensor. Returns the
    worst relative error over every scalar parameter.

    The relative-error denominator is bounded below by floor (scaled by
    the loss magnitude): central differences resolve a derivative only to
    about |loss|*eps_machine/epsilon, so gradient entries below that
    would otherwise report pure roundoff noise as disagreement.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ConfigError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    loss0, grads = loss_and_grads()
    if not np.isfinite(loss0):
        raise DivergenceError("loss is non-finite at the evaluation point")
    if len(grads) != len(tensors):
        raise DimensionError("one gradient per tensor required")
    denom_floor = floor * max(1.0, abs(loss0))
    worst = 0.0
    for arr, g in zip(tensors, grads):
        if g.shape != arr.shape:
            raise DimensionError("gradient shape does not match its tensor")
        flat = arr.reshape(-1)
        gflat = np.asarray(g, dtype=float).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            lp = loss_and_grads()[0]
            flat[idx] = orig - epsilon
            lm = loss_and_grads()[0]
            flat[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise DivergenceError("loss is non-finite at a perturbed point")
            numeric = (lp - lm) / (2.0 * epsilon)
            denom = max(abs(gflat[idx]), abs(numeric), denom_floor)
            worst = max(worst, abs(gflat[idx] - numeric) / denom)
    return worst
