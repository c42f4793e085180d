"""Dual-branch 3-D CNN over multi-resolution activation grids.

The fine grid and the coarse grid each pass through their own conv/BN/ReLU/
pool stack and a dense layer that produces a fixed-size encoding. The two
encodings are concatenated and classified into good (1), bad (2) and neutral
(3) contact; the class probabilities map to a 0-100 quality score.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .activation import MultiResInput, build_multires, encode_one_hot, grid_stats
from .errors import WeightsFormatError, WeightsVersionError
from .geometry import SurfacePair
from .neural import functional as F
from .neural.layers import BatchNorm, Conv3D, Dense, Dropout, Flatten, MaxPool3D, ReLU, Sequential
from .neural.optim import AdamState, PlateauScheduler, adam_step

log = logging.getLogger(__name__)

WEIGHTS_VERSION = 1
N_CLASSES = 3
SCORE_ANCHORS = np.array([100.0, 0.0, 50.0])


@dataclass(frozen=True)
class NetConfig:
    coarse_res: int = 8
    fine_res: int = 16
    conv_channels: tuple[int, ...] = (8, 16)
    kernel: int = 3
    eta_fine: int = 64
    eta_coarse: int = 32
    head_hidden: tuple[int, ...] = (64, 32)
    dropout: float = 0.3
    head: str = "softmax"
    cubic_bins: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "head_hidden", tuple(self.head_hidden))
        if self.head not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd for same-size padding")
        shrink = 2 ** len(self.conv_channels)
        for res in (self.coarse_res, self.fine_res):
            if res % shrink:
                raise ValueError(f"resolution {res} not divisible by pooling factor {shrink}")
        if not 2 <= self.coarse_res < self.fine_res:
            raise ValueError("need 2 <= coarse_res < fine_res")

    def flat_size(self, res: int) -> int:
        return self.conv_channels[-1] * (res // 2 ** len(self.conv_channels)) ** 3

    @property
    def concat_size(self) -> int:
        return self.eta_fine + self.eta_coarse


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 200
    patience: int = 20
    seed: int = 0
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    plateau_threshold: float = 1e-4
    min_lr: float = 1e-5


@dataclass
class GridDataset:
    """Network-ready arrays for a set of samples."""

    fine: np.ndarray  # (N, 4, Rf, Rf, Rf)
    coarse: np.ndarray  # (N, 4, Rc, Rc, Rc)
    labels: np.ndarray  # (N,) in 1..3
    bands: np.ndarray  # (N, 2)
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "GridDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return GridDataset(self.fine[idx], self.coarse[idx], self.labels[idx], self.bands[idx],
                           [self.ids[i] for i in idx] if self.ids else [])

    @classmethod
    def from_inputs(cls, inputs: list[MultiResInput], labels, bands, ids=None, dtype=np.float32):
        return cls(
            np.stack([encode_one_hot(m.fine, dtype) for m in inputs]),
            np.stack([encode_one_hot(m.coarse, dtype) for m in inputs]),
            np.asarray(labels, dtype=np.int64),
            np.asarray(bands, dtype=np.float64).reshape(-1, 2),
            list(ids) if ids is not None else [],
        )


# --------------------------------------------------------------------------
# network


def _branch(cfg: NetConfig, res: int, eta: int, rng, dtype) -> Sequential:
    layers = []
    c_in = 4
    for i, c_out in enumerate(cfg.conv_channels):
        layers += [Conv3D(c_in, c_out, cfg.kernel, cfg.kernel // 2, rng, dtype, input_grad=i > 0),
                   BatchNorm(c_out, dtype), ReLU(), MaxPool3D()]
        c_in = c_out
    layers += [Flatten(), Dense(cfg.flat_size(res), eta, rng, dtype), ReLU()]
    return Sequential(*layers)


class ContactNet:
    def __init__(self, config: NetConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(config.seed)
        self.fine = _branch(config, config.fine_res, config.eta_fine, rng, dtype)
        self.coarse = _branch(config, config.coarse_res, config.eta_coarse, rng, dtype)
        drop_rng = np.random.default_rng([config.seed, 1])
        head = []
        width = config.concat_size
        for hidden in config.head_hidden:
            head += [Dense(width, hidden, rng, dtype), ReLU(), Dropout(config.dropout, drop_rng)]
            width = hidden
        head.append(Dense(width, N_CLASSES, rng, dtype))
        self.head = Sequential(*head)

    # ---- parameters

    def _sections(self):
        return (("fine", self.fine), ("coarse", self.coarse), ("head", self.head))

    def named_layers(self):
        for prefix, seq in self._sections():
            yield from seq.named_layers(prefix + ".")

    def named_parameters(self):
        for lname, layer in self.named_layers():
            for pname, p in layer.params.items():
                yield f"{lname}.{pname}", p

    def parameters(self) -> list[np.ndarray]:
        return [p for _, p in self.named_parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads[pname] for _, layer in self.named_layers() for pname in layer.params]

    def named_buffers(self):
        for lname, layer in self.named_layers():
            for bname, b in layer.buffers().items():
                yield f"{lname}.{bname}", b

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def set_training(self, flag: bool):
        for _, seq in self._sections():
            seq.set_training(flag)

    # ---- compute

    def forward(self, fine, coarse):
        """Logits for a batch; caches activations for :meth:`backward`."""
        self._split = self.config.eta_fine
        h = np.concatenate([self.fine.forward(fine), self.coarse.forward(coarse)], axis=1)
        return self.head.forward(h)

    def backward(self, dlogits):
        dh = self.head.backward(dlogits)
        self.fine.backward(np.ascontiguousarray(dh[:, :self._split]))
        self.coarse.backward(np.ascontiguousarray(dh[:, self._split:]))

    def probabilities(self, logits):
        if self.config.head == "sigmoid":
            return F.sigmoid_normalized(logits)
        return F.softmax(logits)

    def loss(self, logits, labels):
        if self.config.head == "sigmoid":
            return F.sigmoid_cross_entropy(logits, labels)
        return F.softmax_cross_entropy(logits, labels)

    def predict_proba(self, fine, coarse, batch: int = 64) -> np.ndarray:
        """Eval-mode class probabilities; leaves all layer state untouched."""
        out = []
        for s in range(0, len(fine), batch):
            xf = np.asarray(fine[s:s + batch], dtype=self.dtype)
            xc = np.asarray(coarse[s:s + batch], dtype=self.dtype)
            h = np.concatenate([_infer(self.fine, xf), _infer(self.coarse, xc)], axis=1)
            out.append(self.probabilities(_infer(self.head, h).astype(np.float64)))
        return np.concatenate(out) if out else np.zeros((0, N_CLASSES))

    # ---- snapshots

    def state(self) -> dict[str, np.ndarray]:
        d = {k: v.copy() for k, v in self.named_parameters()}
        d.update({k: v.copy() for k, v in self.named_buffers()})
        return d

    def load_state(self, state: dict[str, np.ndarray]):
        for k, v in list(self.named_parameters()) + list(self.named_buffers()):
            v[...] = state[k]


def _infer(seq: Sequential, x):
    """Stateless eval-mode pass through a Sequential."""
    for layer in seq.layers:
        if isinstance(layer, Conv3D):
            x = F.conv3d_forward(x, layer.params["weight"], layer.params["bias"], layer.pad)[0]
        elif isinstance(layer, BatchNorm):
            x = F.batchnorm_forward(x, layer.params["gamma"], layer.params["beta"],
                                    layer.running_mean, layer.running_var, False,
                                    layer.momentum, layer.eps)[0]
        elif isinstance(layer, ReLU):
            x = np.maximum(x, 0)
        elif isinstance(layer, MaxPool3D):
            x = F.maxpool3d_forward(x)[0]
        elif isinstance(layer, Flatten):
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, Dense):
            x = F.dense_forward(x, layer.params["weight"], layer.params["bias"])[0]
        elif isinstance(layer, Dropout):
            pass
        else:
            raise TypeError(f"no inference rule for {type(layer).__name__}")
    return x


def build(config: NetConfig = NetConfig(), dtype=np.float32) -> ContactNet:
    return ContactNet(config, dtype)


def expected_parameter_count(cfg: NetConfig) -> int:
    k3 = cfg.kernel ** 3
    total = 0
    for res, eta in ((cfg.fine_res, cfg.eta_fine), (cfg.coarse_res, cfg.eta_coarse)):
        c_in = 4
        for c_out in cfg.conv_channels:
            total += c_out * c_in * k3 + c_out + 2 * c_out  # conv weight, bias, BN gamma/beta
            c_in = c_out
        total += cfg.flat_size(res) * eta + eta
    width = cfg.concat_size
    for hidden in cfg.head_hidden + (N_CLASSES,):
        total += width * hidden + hidden
        width = hidden
    return total


# --------------------------------------------------------------------------
# scoring


def quality_score(p) -> float | np.ndarray:
    """``100 * P(good) + 0 * P(bad) + 50 * P(neutral)``; accepts one row or a batch."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != N_CLASSES:
        raise ValueError(f"expected {N_CLASSES} class probabilities, got shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("probabilities must be non-negative and sum to 1")
    c = p @ SCORE_ANCHORS
    return float(c) if c.ndim == 0 else c


@dataclass(frozen=True)
class ScoreReport:
    pair_id: str
    probabilities: tuple[float, float, float]
    score: float
    grid_stats: dict

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "probabilities": {"P1": self.probabilities[0], "P2": self.probabilities[1],
                              "P3": self.probabilities[2]},
            "score": self.score,
            "grid_stats": self.grid_stats,
        }


def prepare_input(model: ContactNet, pair: SurfacePair) -> MultiResInput:
    cfg = model.config
    return build_multires(pair, cfg.coarse_res, cfg.fine_res, cubic=cfg.cubic_bins)


def score_inputs(model: ContactNet, inputs: list[MultiResInput]) -> np.ndarray:
    fine = np.stack([encode_one_hot(m.fine, model.dtype) for m in inputs])
    coarse = np.stack([encode_one_hot(m.coarse, model.dtype) for m in inputs])
    return model.predict_proba(fine, coarse)


def score_pair(model: ContactNet, pair: SurfacePair, pair_id: str = "pair") -> ScoreReport:
    mri = prepare_input(model, pair)
    p = score_inputs(model, [mri])[0]
    return ScoreReport(
        pair_id=pair_id,
        probabilities=tuple(float(v) for v in p),
        score=quality_score(p),
        grid_stats={"coarse": grid_stats(mri.coarse), "fine": grid_stats(mri.fine)},
    )


# --------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


def _batches(n: int, size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    chunks = [order[i:i + size] for i in range(0, n, size)]
    # batch norm needs >= 2 samples per batch
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def dataset_loss(model: ContactNet, data: GridDataset) -> tuple[float, float]:
    """Eval-mode mean loss and accuracy."""
    p = model.predict_proba(data.fine, data.coarse)
    idx = data.labels - 1
    loss = float(-np.mean(np.log(np.clip(p[np.arange(len(p)), idx], 1e-300, None))))
    acc = float(np.mean(p.argmax(axis=1) == idx))
    return loss, acc


def train(model: ContactNet, train_set: GridDataset, val_set: GridDataset,
          hyper: TrainConfig = TrainConfig(),
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[ContactNet, list[EpochRecord]]:
    """Mini-batch Adam with plateau LR decay and early stopping on validation loss.

    The returned model holds the weights of the best validation epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if len(np.unique(train_set.labels)) < 2:
        raise ValueError("training set holds a single class")
    if hyper.batch < 2:
        raise ValueError("batch size must be >= 2 for batch norm")

    rng = np.random.default_rng(hyper.seed)
    params = model.parameters()
    opt = AdamState.for_params(params, lr=hyper.lr)
    sched = PlateauScheduler(lr=hyper.lr, factor=hyper.plateau_factor,
                             patience=hyper.plateau_patience,
                             threshold=hyper.plateau_threshold, min_lr=hyper.min_lr)
    history: list[EpochRecord] = []
    best_loss, best_state, stale = np.inf, model.state(), 0

    for epoch in range(1, hyper.epochs + 1):
        model.set_training(True)
        tot_loss, tot_correct = 0.0, 0
        for idx in _batches(len(train_set), hyper.batch, rng):
            logits = model.forward(train_set.fine[idx], train_set.coarse[idx])
            loss, dlogits = model.loss(logits.astype(np.float64), train_set.labels[idx])
            model.backward(dlogits.astype(model.dtype))
            adam_step(params, model.gradients(), opt)
            tot_loss += loss * len(idx)
            tot_correct += int(np.sum(logits.argmax(axis=1) == train_set.labels[idx] - 1))
        model.set_training(False)
        val_loss, val_acc = dataset_loss(model, val_set)
        rec = EpochRecord(epoch, tot_loss / len(train_set), tot_correct / len(train_set),
                          val_loss, val_acc, opt.lr)
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        opt.lr = sched.step(val_loss)
        if val_loss < best_loss - hyper.plateau_threshold:
            best_loss, best_state, stale = val_loss, model.state(), 0
        else:
            stale += 1
            if stale >= hyper.patience:
                log.info("early stop at epoch %d (best val loss %.4f)", epoch, best_loss)
                break
    model.load_state(best_state)
    model.set_training(False)
    return model, history


# --------------------------------------------------------------------------
# evaluation


def metrics_from_probabilities(p: np.ndarray, labels: np.ndarray, bands: np.ndarray) -> dict:
    if len(labels) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    labels = np.asarray(labels)
    pred = p.argmax(axis=1) + 1
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(conf, (labels - 1, pred - 1), 1)
    per_class = {}
    for c in range(N_CLASSES):
        tp = conf[c, c]
        col, row = conf[:, c].sum(), conf[c, :].sum()
        per_class[str(c + 1)] = {
            "precision": float(tp / col) if col else 0.0,
            "recall": float(tp / row) if row else 0.0,
            "support": int(row),
        }
    score = quality_score(p) if len(p) else np.zeros(0)
    score = np.atleast_1d(score)
    bands = np.asarray(bands, dtype=np.float64)
    mid = bands.mean(axis=1)
    in_band = (score >= bands[:, 0]) & (score <= bands[:, 1])
    return {
        "n": int(len(labels)),
        "accuracy": float(np.mean(pred == labels)),
        "per_class": per_class,
        "confusion": conf.tolist(),
        "mean_abs_band_mid_error": float(np.mean(np.abs(score - mid))),
        "in_band_rate": float(np.mean(in_band)),
    }


def evaluate(model: ContactNet, data: GridDataset) -> dict:
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    return metrics_from_probabilities(model.predict_proba(data.fine, data.coarse),
                                      data.labels, data.bands)


# --------------------------------------------------------------------------
# persistence


def weights_to_dict(model: ContactNet) -> dict:
    cfg = asdict(model.config)
    cfg["conv_channels"] = list(cfg["conv_channels"])
    cfg["head_hidden"] = list(cfg["head_hidden"])
    layers = [{"name": n, "shape": list(p.shape), "values": p.astype(np.float64).ravel().tolist()}
              for n, p in model.named_parameters()]
    stats = {}
    for n, b in model.named_buffers():
        lname, bname = n.rsplit(".", 1)
        stats.setdefault(lname, {"name": lname})[bname] = b.astype(np.float64).tolist()
    return {"version": WEIGHTS_VERSION, "dtype": model.dtype.name, "config": cfg,
            "layers": layers, "bn_running_stats": list(stats.values())}


def save_weights(model: ContactNet, path) -> str:
    """Write the versioned JSON weights file; returns its sha256 hex digest."""
    data = json.dumps(weights_to_dict(model), separators=(",", ":")).encode()
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_weights(path) -> ContactNet:
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise WeightsFormatError(f"{path}: corrupt weights file ({exc})") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise WeightsVersionError(f"{path}: weights file has no version field")
    if doc["version"] != WEIGHTS_VERSION:
        raise WeightsVersionError(f"{path}: unsupported weights version {doc['version']!r}")
    try:
        cfg = NetConfig(**doc["config"])
        model = ContactNet(cfg, dtype=np.dtype(doc.get("dtype", "float32")))
        layers = {d["name"]: d for d in doc["layers"]}
        stats = {d["name"]: d for d in doc["bn_running_stats"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightsFormatError(f"{path}: malformed weights file ({exc})") from exc

    named = dict(model.named_parameters())
    if set(named) != set(layers):
        raise WeightsFormatError(
            f"{path}: parameter names disagree with config ({len(layers)} stored, {len(named)} expected)")
    for name, p in named.items():
        d = layers[name]
        vals = np.asarray(d["values"], dtype=np.float64)
        if list(p.shape) != list(d["shape"]) or vals.size != p.size:
            raise WeightsFormatError(f"{path}: {name} has shape {d['shape']}, config implies {list(p.shape)}")
        p[...] = vals.reshape(p.shape)
    for lname, layer in model.named_layers():
        bufs = layer.buffers()
        if not bufs:
            continue
        if lname not in stats:
            raise WeightsFormatError(f"{path}: missing batch-norm statistics for {lname}")
        for bname, b in bufs.items():
            vals = np.asarray(stats[lname][bname], dtype=np.float64)
            if vals.shape != b.shape:
                raise WeightsFormatError(f"{path}: {lname}.{bname} has wrong length")
            b[...] = vals
    model.set_training(False)
    return model


def weights_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def with_head(cfg: NetConfig, head: str) -> NetConfig:
    return replace(cfg, head=head)
