"""Correspondence autoencoder RNN in plain numpy.

The encoder is a stack of GRU layers; its top-layer final state goes
through a linear map to the embedding ``z``. The decoder receives ``z``
as input at every step (no feedback of its own outputs), runs its own GRU
stack from a zero state and maps each top-layer state to an output frame.
Training minimizes, per pair (X, X'), the summed squared error between the
decoder outputs and the frames of X'.

GRU cell (reset gate applied before the recurrent matrix)::

    r = sigmoid(x Wr + h Ur + br)
    u = sigmoid(x Wu + h Uu + bu)
    n = tanh(x Wn + (r * h) Un + bn)
    h' = (1 - u) * n + u * h

Gradients are computed by hand-written backpropagation through time.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .optim import AdamState, adam_step, clip_global_norm

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"AWEM"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, stage, epoch, step, loss):
        super().__init__(f"{stage}: non-finite loss {loss} at epoch {epoch}, step {step}")
        self.stage, self.epoch, self.step, self.loss = stage, epoch, step, loss


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 13
    hidden: int = 400
    n_layers: int = 3
    embed_dim: int = 130
    output_dim: int | None = None

    @property
    def out_dim(self) -> int:
        return self.input_dim if self.output_dim is None else self.output_dim


@dataclass
class TrainConfig:
    pretrain_epochs: int = 15
    train_epochs: int = 3
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    gradient_clip_norm: float | None = None

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.train_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict
    optimizer: AdamState = field(default_factory=AdamState)
    history: dict = field(default_factory=lambda: {"pretrain": [], "train": []})

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> "ModelParams":
        opt = AdamState({k: v.copy() for k, v in self.optimizer.m.items()},
                        {k: v.copy() for k, v in self.optimizer.v.items()},
                        self.optimizer.step)
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, opt,
                           {k: list(v) for k, v in self.history.items()})


def _layer_names(prefix, n_layers):
    return [f"{prefix}.{i}" for i in range(n_layers)]


def init_params(config: ModelConfig, seed, dtype=np.float32) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    H = config.hidden
    shapes = {}
    in_dim = config.input_dim
    for name in _layer_names("enc", config.n_layers):
        shapes[f"{name}.W"] = (in_dim, 3 * H)
        shapes[f"{name}.U"] = (H, 3 * H)
        shapes[f"{name}.b"] = (3 * H,)
        in_dim = H
    shapes["embed.W"] = (H, config.embed_dim)
    shapes["embed.b"] = (config.embed_dim,)
    in_dim = config.embed_dim
    for name in _layer_names("dec", config.n_layers):
        shapes[f"{name}.W"] = (in_dim, 3 * H)
        shapes[f"{name}.U"] = (H, 3 * H)
        shapes[f"{name}.b"] = (3 * H,)
        in_dim = H
    shapes["out.W"] = (H, config.out_dim)
    shapes["out.b"] = (config.out_dim,)
    tensors = {}
    for k, shape in shapes.items():
        if len(shape) == 1:
            tensors[k] = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            tensors[k] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelParams(config, tensors, AdamState.zeros_like(tensors))


# -- GRU layer --------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(X, W, U, b, mask=None):
    """Run one GRU layer over ``X`` of shape (T, B, in) from a zero state.

    ``mask`` (T, B) freezes the state at padded steps, so ``H[-1]`` is each
    row's state at its last valid step.
    """
    T, B, _ = X.shape
    Hd = U.shape[0]
    A = X @ W + b
    Uru, Un = U[:, :2 * Hd], U[:, 2 * Hd:]
    H = np.empty((T, B, Hd), dtype=X.dtype)
    R = np.empty_like(H)
    G = np.empty_like(H)
    N = np.empty_like(H)
    h = np.zeros((B, Hd), dtype=X.dtype)
    for t in range(T):
        a = A[t]
        ru = _sigmoid(a[:, :2 * Hd] + h @ Uru)
        r, u = ru[:, :Hd], ru[:, Hd:]
        n = np.tanh(a[:, 2 * Hd:] + (r * h) @ Un)
        h_new = n + u * (h - n)
        if mask is not None:
            m = mask[t][:, None]
            h_new = h + m * (h_new - h)
        R[t], G[t], N[t] = r, u, n
        H[t] = h_new
        h = h_new
    return H, (X, W, U, mask, R, G, N, H)


def gru_backward(dH, cache):
    """Backpropagate ``dH`` (gradient w.r.t. every output state) through a layer."""
    X, W, U, mask, R, G, N, H = cache
    T, B, Hd = H.shape
    Uru, Un = U[:, :2 * Hd], U[:, 2 * Hd:]
    dA = np.empty((T, B, 3 * Hd), dtype=H.dtype)
    H_prev = np.concatenate([np.zeros((1, B, Hd), dtype=H.dtype), H[:-1]])
    dh = np.zeros((B, Hd), dtype=H.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh + dH[t]
        h_prev = H_prev[t]
        r, u, n = R[t], G[t], N[t]
        if mask is not None:
            m = mask[t][:, None]
            dh_new = m * dh
            dh_prev = dh - dh_new
        else:
            dh_new = dh
            dh_prev = np.zeros_like(dh)
        dn = dh_new * (1.0 - u)
        dan = dn * (1.0 - n * n)
        drh = dan @ Un.T
        dh_prev += dh_new * u + drh * r
        dru = dA[t, :, :2 * Hd]
        dru[:, :Hd] = drh * h_prev * r * (1.0 - r)
        dru[:, Hd:] = dh_new * (h_prev - n) * u * (1.0 - u)
        dA[t, :, 2 * Hd:] = dan
        dh = dh_prev + dru @ Uru.T
    flatA = dA.reshape(T * B, 3 * Hd)
    dU = np.empty_like(U)
    dU[:, :2 * Hd] = H_prev.reshape(T * B, Hd).T @ flatA[:, :2 * Hd]
    dU[:, 2 * Hd:] = (R * H_prev).reshape(T * B, Hd).T @ flatA[:, 2 * Hd:]
    dW = X.reshape(T * B, -1).T @ flatA
    db = flatA.sum(axis=0)
    dX = dA @ W.T
    return dX, dW, dU, db


# -- encoder / decoder ------------------------------------------------------

def _check_frames(x, dim, what="input"):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"{what} must be a (T>=1, {dim}) matrix, got shape {x.shape}")
    if x.shape[1] != dim:
        raise ValueError(f"{what} frames have {x.shape[1]} dims, model expects {dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite frames")
    return x


def pad_batch(seqs, dtype):
    """Right-pad sequences into (T, B, D) with a (T, B) validity mask."""
    lengths = np.array([len(s) for s in seqs])
    T, B = int(lengths.max()), len(seqs)
    out = np.zeros((T, B, seqs[0].shape[1]), dtype=dtype)
    mask = np.zeros((T, B), dtype=dtype)
    for i, s in enumerate(seqs):
        out[:len(s), i] = s
        mask[:len(s), i] = 1.0
    return out, mask, lengths


def _encode_batch(p: ModelParams, X, mask):
    t = p.tensors
    caches = []
    inp = X
    for name in _layer_names("enc", p.config.n_layers):
        inp, cache = gru_forward(inp, t[f"{name}.W"], t[f"{name}.U"], t[f"{name}.b"], mask)
        caches.append(cache)
    h_final = inp[-1]
    z = h_final @ t["embed.W"] + t["embed.b"]
    return z, (caches, h_final)


def _decode_batch(p: ModelParams, z, T_out):
    t = p.tensors
    inp = np.broadcast_to(z, (T_out,) + z.shape).copy()
    caches = []
    for name in _layer_names("dec", p.config.n_layers):
        inp, cache = gru_forward(inp, t[f"{name}.W"], t[f"{name}.U"], t[f"{name}.b"])
        caches.append(cache)
    Y = inp @ t["out.W"] + t["out.b"]
    return Y, (caches, inp)


def encode_many(p: ModelParams, xs) -> np.ndarray:
    """Embed several sequences at once; returns (len(xs), embed_dim)."""
    xs = [_check_frames(x, p.config.input_dim).astype(p.dtype, copy=False) for x in xs]
    X, mask, _ = pad_batch(xs, p.dtype)
    z, _ = _encode_batch(p, X, mask)
    return z


def encode(p: ModelParams, x) -> np.ndarray:
    """Fixed-size embedding of a (T, input_dim) sequence, any T >= 1."""
    return encode_many(p, [x])[0]


def decode(p: ModelParams, z, T_out: int) -> np.ndarray:
    """Decoder output frames (T_out, out_dim) conditioned on embedding ``z``."""
    if T_out < 1:
        raise ValueError(f"T_out must be at least 1, got {T_out}")
    z = np.asarray(z, dtype=p.dtype).reshape(1, -1)
    if z.shape[1] != p.config.embed_dim:
        raise ValueError(f"embedding has {z.shape[1]} dims, model expects {p.config.embed_dim}")
    Y, _ = _decode_batch(p, z, T_out)
    return Y[:, 0]


def pair_loss(p: ModelParams, x, x_target) -> float:
    """Summed squared error between decoder outputs and the frames of ``x_target``."""
    x = _check_frames(x, p.config.input_dim)
    x_target = _check_frames(x_target, p.config.out_dim, "target")
    Y = decode(p, encode(p, x), len(x_target))
    return float(np.sum((x_target - Y) ** 2))


def batch_loss_and_grads(p: ModelParams, inputs, targets):
    """Mean per-pair loss over a batch and its gradient w.r.t. every tensor.

    Returns ``(mean_loss, per_item_losses, grads)``. Target padding is
    masked out of the loss.
    """
    dtype = p.dtype
    t = p.tensors
    B = len(inputs)
    X, mask_in, _ = pad_batch([np.asarray(x, dtype=dtype) for x in inputs], dtype)
    Xt, mask_out, _ = pad_batch([np.asarray(x, dtype=dtype) for x in targets], dtype)
    T_out = Xt.shape[0]

    z, (enc_caches, h_final) = _encode_batch(p, X, mask_in)
    Y, (dec_caches, H_top) = _decode_batch(p, z, T_out)
    diff = (Y - Xt) * mask_out[:, :, None]
    per_item = np.sum(diff.astype(np.float64) ** 2, axis=(0, 2))
    loss = float(per_item.mean())

    grads = {}
    dY = (2.0 / B) * diff
    grads["out.W"] = H_top.reshape(-1, H_top.shape[-1]).T @ dY.reshape(-1, dY.shape[-1])
    grads["out.b"] = dY.sum(axis=(0, 1))
    dH = dY @ t["out.W"].T
    for name, cache in reversed(list(zip(_layer_names("dec", p.config.n_layers), dec_caches))):
        dH, grads[f"{name}.W"], grads[f"{name}.U"], grads[f"{name}.b"] = gru_backward(dH, cache)
    dz = dH.sum(axis=0)
    grads["embed.W"] = h_final.T @ dz
    grads["embed.b"] = dz.sum(axis=0)
    dH = np.zeros_like(enc_caches[-1][7])
    dH[-1] = dz @ t["embed.W"].T
    for name, cache in reversed(list(zip(_layer_names("enc", p.config.n_layers), enc_caches))):
        dH, grads[f"{name}.W"], grads[f"{name}.U"], grads[f"{name}.b"] = gru_backward(dH, cache)
    grads = {k: grads[k].astype(dtype, copy=False) for k in t}
    return loss, per_item, grads


# -- training ---------------------------------------------------------------

def _batches(targets_len, batch_size, rng):
    """Shuffle, bucket by target length, then shuffle batch order."""
    order = rng.permutation(len(targets_len))
    order = order[np.argsort(np.asarray(targets_len)[order], kind="stable")]
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def _run_epochs(p: ModelParams, inputs, targets, epochs, cfg: TrainConfig, stage, seed):
    rng = np.random.default_rng(seed)
    tlen = [len(x) for x in targets]
    losses = []
    for epoch in range(epochs):
        total, count = 0.0, 0
        for step, idx in enumerate(_batches(tlen, cfg.batch_size, rng)):
            loss, per_item, grads = batch_loss_and_grads(
                p, [inputs[i] for i in idx], [targets[i] for i in idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(stage, epoch + 1, step + 1, loss)
            if cfg.gradient_clip_norm:
                clip_global_norm(grads, cfg.gradient_clip_norm)
            adam_step(p.tensors, grads, p.optimizer, cfg.learning_rate)
            total += float(per_item.sum())
            count += len(idx)
        mean = total / count
        losses.append(mean)
        p.history[stage].append(mean)
        log.info("%s epoch %d/%d mean loss %.4f", stage, epoch + 1, epochs, mean)
    return losses


def pretrain_autoencoder(training_set, cfg: TrainConfig, model_config: ModelConfig | None = None,
                         params: ModelParams | None = None, dtype=np.float32) -> ModelParams:
    """Autoencoder pretraining: reconstruct each pretraining token from itself."""
    tokens = training_set.pretrain_tokens
    if not tokens:
        raise ValueError("training set has no pretraining tokens")
    if params is None:
        params = init_params(model_config or ModelConfig(), cfg.seed, dtype)
    feats = [tok.features for tok in tokens]
    _run_epochs(params, feats, feats, cfg.pretrain_epochs, cfg, "pretrain", [cfg.seed, 1])
    return params


def train_cae(params: ModelParams, training_set, cfg: TrainConfig) -> ModelParams:
    """Correspondence training on same-type pairs, reshuffled every epoch."""
    pairs = training_set.pairs
    if not pairs:
        raise ValueError("training set has no pairs")
    inputs = [pr.input.features for pr in pairs]
    targets = [pr.target.features for pr in pairs]
    _run_epochs(params, inputs, targets, cfg.train_epochs, cfg, "train", [cfg.seed, 2])
    return params


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(p: ModelParams, path, include_optimizer: bool = True) -> None:
    """Write an AWEM container.

    Layout (little-endian): ``b"AWEM"``, u32 version, u32 input_dim,
    u32 hidden, u32 n_layers, u32 embed_dim, u32 output_dim, u64 step,
    u32 n_tensors, then per tensor: u16 name length, utf-8 name, u8 ndim,
    u32 per dim, float32 data in row-major order. Optimizer moments are
    stored as tensors named ``adam.m/<name>`` and ``adam.v/<name>``.
    """
    c = p.config
    named = list(p.tensors.items())
    if include_optimizer and p.optimizer.m:
        named += [(f"adam.m/{k}", v) for k, v in p.optimizer.m.items()]
        named += [(f"adam.v/{k}", v) for k, v in p.optimizer.v.items()]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<6IQI", CHECKPOINT_VERSION, c.input_dim, c.hidden, c.n_layers,
                             c.embed_dim, c.out_dim, p.optimizer.step, len(named)))
        for name, arr in named:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an AWEM checkpoint")
    head = struct.calcsize("<6IQI")
    version, d_in, hidden, layers, embed, d_out, step, n = struct.unpack("<6IQI", raw[4:4 + head])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    config = ModelConfig(d_in, hidden, layers, embed, None if d_out == d_in else d_out)
    pos = 4 + head
    tensors, m, v = {}, {}, {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * size
        if name.startswith("adam.m/"):
            m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            v[name[7:]] = arr
        else:
            tensors[name] = arr
    opt = AdamState(m, v, step) if m else AdamState.zeros_like(tensors)
    opt.step = step
    return ModelParams(config, tensors, opt)


def write_training_log(p: ModelParams, cfg: TrainConfig, path, extra=None) -> None:
    doc = {
        "config": asdict(cfg),
        "model": asdict(p.config),
        "seed": cfg.seed,
        "steps": p.optimizer.step,
        "pretrain_epoch_loss": p.history["pretrain"],
        "train_epoch_loss": p.history["train"],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- embedding files --------------------------------------------------------

EMBEDDING_MAGIC = b"AWEE"


def write_embeddings(path, ids, vectors) -> Path:
    """Write an AWEE file plus a JSON-lines sidecar of ids.

    Layout (little-endian): ``b"AWEE"``, u32 count, u32 dim, float32 rows.
    The sidecar ``<path>.ids.jsonl`` holds one ``{"index", "token_id"}`` per row.
    Returns the sidecar path.
    """
    path = Path(path)
    vectors = np.asarray(vectors)
    if vectors.ndim != 2 or len(vectors) != len(ids):
        raise ValueError(f"need one row per id: {len(ids)} ids, array shape {vectors.shape}")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", *vectors.shape))
        fh.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
    sidecar = path.with_name(path.name + ".ids.jsonl")
    with open(sidecar, "w", encoding="utf-8") as fh:
        for i, tid in enumerate(ids):
            fh.write(json.dumps({"index": i, "token_id": tid}) + "\n")
    return sidecar


def read_embeddings(path):
    """Return ``(ids, vectors)`` from an AWEE file and its sidecar."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != EMBEDDING_MAGIC:
        raise ValueError(f"{path}: not an AWEE embedding file")
    count, dim = struct.unpack("<II", raw[4:12])
    vecs = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=12).reshape(count, dim)
    sidecar = path.with_name(path.name + ".ids.jsonl")
    ids = [json.loads(line)["token_id"] for line in sidecar.read_text(encoding="utf-8").splitlines()
           if line.strip()]
    return ids, vecs.astype(np.float32)
