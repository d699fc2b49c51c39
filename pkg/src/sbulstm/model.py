"""Stacked bidirectional/unidirectional LSTM model, its parameter store and checkpoints."""

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .cells import GATES, LstmCellParams
from .exceptions import CheckpointError, ConfigurationError, PredictionUndefinedError, ShapeError
from .layers import (
    BdLayerParams,
    DenseParams,
    MergeMode,
    SeqInput,
    bdlstm_layer_backward,
    bdlstm_layer_forward,
    dense_backward,
    dense_forward,
    lstm_layer_backward,
    lstm_layer_forward,
)

BDLSTM = "BDLSTM"
LSTM = "LSTM"
FAMILIES = ("SBU", "LSTM", "BDLSTM")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    hidden: int
    merge: str = MergeMode.CONCAT.value

    def __post_init__(self):
        if self.kind not in (BDLSTM, LSTM):
            raise ConfigurationError(f"layer kind must be BDLSTM or LSTM, got {self.kind!r}")
        if int(self.hidden) < 1:
            raise ConfigurationError(f"layer hidden size must be >= 1, got {self.hidden}")
        object.__setattr__(self, "merge", MergeMode(self.merge).value)

    def output_width(self):
        if self.kind == LSTM:
            return self.hidden
        return MergeMode(self.merge).output_width(self.hidden, self.hidden)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``family="SBU"`` requires a BDLSTM first layer and an LSTM last layer.
    ``"LSTM"`` and ``"BDLSTM"`` are baseline stacks made only of that kind.
    ``dense_head`` forces a dense projection even when widths already agree.
    """

    input_width: int
    time_lags: int
    layers: tuple
    output_width: int
    seed: int = 0
    use_mask: bool = True
    family: str = "SBU"
    dense_head: bool = False

    def __post_init__(self):
        layers = tuple(
            lay if isinstance(lay, LayerSpec) else LayerSpec(**lay) for lay in self.layers
        )
        object.__setattr__(self, "layers", layers)
        for name in ("input_width", "time_lags", "output_width"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not layers:
            raise ConfigurationError("a model needs at least one recurrent layer")
        if self.family == "SBU":
            if len(layers) < 2:
                raise ConfigurationError("SBU stack needs at least a BDLSTM and an LSTM layer")
            if layers[0].kind != BDLSTM:
                raise ConfigurationError("SBU stack: first layer must be BDLSTM")
            if layers[-1].kind != LSTM:
                raise ConfigurationError("SBU stack: last layer must be LSTM")
        elif self.family in (LSTM, BDLSTM):
            bad = [lay.kind for lay in layers if lay.kind != self.family]
            if bad:
                raise ConfigurationError(f"{self.family} baseline stack may only hold {self.family} layers")
        else:
            raise ConfigurationError(f"unknown family {self.family!r}; choose from {FAMILIES}")

    @classmethod
    def sbu(cls, input_width, time_lags, output_width, hidden=None, n_middle=0,
            middle_kind=BDLSTM, last_hidden=None, merge="concat", **kw):
        """Convenience constructor for the standard SBU stack."""
        hidden = output_width if hidden is None else hidden
        last_hidden = hidden if last_hidden is None else last_hidden
        layers = [LayerSpec(BDLSTM, hidden, merge)]
        layers += [LayerSpec(middle_kind, hidden, merge) for _ in range(n_middle)]
        layers.append(LayerSpec(LSTM, last_hidden))
        return cls(input_width, time_lags, tuple(layers), output_width, **kw)

    @property
    def has_projection(self):
        return self.dense_head or self.layers[-1].output_width() != self.output_width

    def to_dict(self):
        d = asdict(self)
        d["layers"] = [asdict(lay) for lay in self.layers]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["layers"] = tuple(LayerSpec(**lay) for lay in d["layers"])
        return cls(**d)


def _param_shapes(spec):
    """Ordered (name, shape, fan_in, fan_out) for every parameter."""
    out = []
    width = spec.input_width
    for k, lay in enumerate(spec.layers):
        dirs = ("fwd", "bwd") if lay.kind == BDLSTM else ("cell",)
        for d in dirs:
            pre = f"layer{k}.{d}."
            for g in GATES:
                out.append((pre + "W_" + g, (lay.hidden, width), width, lay.hidden))
                out.append((pre + "U_" + g, (lay.hidden, lay.hidden), lay.hidden, lay.hidden))
                out.append((pre + "b_" + g, (lay.hidden,), None, None))
        width = lay.output_width()
    if spec.has_projection:
        out.append(("proj.W_hy", (spec.output_width, width), width, spec.output_width))
        out.append(("proj.b_y", (spec.output_width,), None, None))
    return out


@dataclass
class Model:
    spec: ModelSpec
    params: dict
    norm: object = None
    meta: dict = field(default_factory=dict)
    version: int = 0

    def cell(self, prefix):
        return LstmCellParams(**{
            name[len(prefix):]: arr for name, arr in self.params.items() if name.startswith(prefix)
        })

    def layer(self, k):
        lay = self.spec.layers[k]
        if lay.kind == LSTM:
            return self.cell(f"layer{k}.cell.")
        return BdLayerParams(self.cell(f"layer{k}.fwd."), self.cell(f"layer{k}.bwd."), lay.merge)

    @property
    def projection(self):
        if not self.spec.has_projection:
            return None
        return DenseParams(self.params["proj.W_hy"], self.params["proj.b_y"])

    @property
    def n_params(self):
        return sum(a.size for a in self.params.values())

    def copy(self):
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()},
                     self.norm, dict(self.meta), self.version)

    def predict(self, seq):
        pred, _ = model_forward(self, seq)
        return pred


def build_model(spec):
    """Glorot-uniform weights, zero biases except forget-gate biases of 1."""
    rng = np.random.default_rng(spec.seed)
    params = {}
    for name, shape, fan_in, fan_out in _param_shapes(spec):
        if fan_in is None:
            arr = np.ones(shape) if name.endswith(".b_f") else np.zeros(shape)
        else:
            s = math.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-s, s, shape)
        params[name] = arr
    return Model(spec, params)


@dataclass
class ModelCache:
    layers: list
    inputs: list
    last_h: np.ndarray
    version: int
    model_id: int


def model_forward(model, seq):
    """Run the stack over a batch of windows.

    Returns ``(prediction, cache)`` with prediction shape ``(batch, output_width)``:
    the last layer's output at the final step, projected when a projection exists.
    """
    spec = model.spec
    if seq.width != spec.input_width:
        raise ShapeError(f"input width {seq.width} != model input width {spec.input_width}")
    if seq.steps != spec.time_lags:
        raise ShapeError(f"window has {seq.steps} steps, model expects {spec.time_lags}")
    if spec.use_mask:
        if not seq.mask[:, -1].all():
            bad = np.flatnonzero(~seq.mask[:, -1])
            raise PredictionUndefinedError(
                f"last window step is masked for {len(bad)} sample(s) (first: {bad[0]}); "
                "no output exists to predict from"
            )
    else:
        # without the masking layer missing steps are fed as zeros
        seq = SeqInput(np.where(seq.mask[..., None], seq.values, 0.0),
                       np.ones_like(seq.mask))

    caches, inputs = [], []
    cur = seq
    for k, lay in enumerate(spec.layers):
        inputs.append(cur)
        fwd = lstm_layer_forward if lay.kind == LSTM else bdlstm_layer_forward
        cur, cache = fwd(model.layer(k), cur)
        caches.append(cache)
    last_h = cur.values[:, -1]
    proj = model.projection
    pred = dense_forward(proj, last_h) if proj is not None else last_h.copy()
    return pred, ModelCache(caches, inputs, last_h, model.version, id(model))


def model_backward(model, cache, loss_grad):
    """Gradients of the loss w.r.t. every parameter, keyed like ``model.params``."""
    if cache.version != model.version or cache.model_id != id(model):
        raise ValueError("stale cache: parameters changed since the forward pass")
    spec = model.spec
    if loss_grad.shape != (cache.last_h.shape[0], spec.output_width):
        raise ShapeError(f"loss gradient {loss_grad.shape} does not match predictions")
    grads = {}
    proj = model.projection
    if proj is not None:
        g, d_h = dense_backward(proj, cache.last_h, loss_grad)
        grads["proj.W_hy"], grads["proj.b_y"] = g.W_hy, g.b_y
    else:
        d_h = loss_grad
    n = spec.time_lags
    d_out = np.zeros((d_h.shape[0], n, d_h.shape[1]))
    d_out[:, -1] = d_h
    for k in reversed(range(len(spec.layers))):
        lay = spec.layers[k]
        if lay.kind == LSTM:
            g, d_out = lstm_layer_backward(model.layer(k), cache.layers[k], d_out)
            for name, arr in g.items():
                grads[f"layer{k}.cell.{name}"] = arr
        else:
            (gf, gb), d_out = bdlstm_layer_backward(model.layer(k), cache.layers[k], d_out)
            for name, arr in gf.items():
                grads[f"layer{k}.fwd.{name}"] = arr
            for name, arr in gb.items():
                grads[f"layer{k}.bwd.{name}"] = arr
    return {name: grads[name] for name in model.params}


def permute_locations(model, perm, channels=1):
    """Return a copy whose inputs and outputs are indexed by ``perm``.

    If the original maps window ``x`` to ``y``, the copy maps ``x`` with its
    location blocks reordered by ``perm`` to ``y[perm]``.
    """
    perm = np.asarray(perm)
    P = model.spec.output_width
    if sorted(perm.tolist()) != list(range(P)):
        raise ValueError(f"not a permutation of {P} locations")
    cols = (perm[:, None] * channels + np.arange(channels)).ravel()
    if cols.size != model.spec.input_width:
        raise ShapeError(f"{P} locations x {channels} channels != input width {model.spec.input_width}")
    new = model.copy()
    p = new.params
    first = model.spec.layers[0]
    dirs = ("fwd", "bwd") if first.kind == BDLSTM else ("cell",)
    for d in dirs:
        for g in GATES:
            key = f"layer0.{d}.W_{g}"
            p[key] = p[key][:, cols]
    if model.spec.has_projection:
        p["proj.W_hy"] = p["proj.W_hy"][perm]
        p["proj.b_y"] = p["proj.b_y"][perm]
    else:
        last = len(model.spec.layers) - 1
        if model.spec.layers[last].kind != LSTM:
            raise ConfigurationError("unprojected BDLSTM output cannot be permuted per location")
        for g in GATES:
            pre = f"layer{last}.cell."
            p[pre + "W_" + g] = p[pre + "W_" + g][perm]
            p[pre + "U_" + g] = p[pre + "U_" + g][perm][:, perm]
            p[pre + "b_" + g] = p[pre + "b_" + g][perm]
    return new


# --- checkpoints -----------------------------------------------------------

MAGIC = b"SBULSTM\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _norm_arrays(norm):
    if norm is None:
        return {}, None
    return {"norm.offset": norm.offset, "norm.scale": norm.scale}, {
        "scheme": norm.scheme, "channels": norm.channels,
    }


def save_checkpoint(model, path):
    arrays = dict(model.params)
    norm_arrays, norm_header = _norm_arrays(model.norm)
    arrays.update(norm_arrays)
    directory, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "arrays": directory,
        "norm": norm_header,
        "meta": model.meta,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load_checkpoint(path, expected_spec=None):
    """Load a model; raises :class:`CheckpointError` on any inconsistency."""
    from .data import NormStats

    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _PREFIX.size:
        raise CheckpointError("file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"format version {version} unsupported (expected {FORMAT_VERSION})")
    try:
        header = json.loads(blob[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupted header: {exc}") from exc
    payload = blob[_PREFIX.size + hlen:]
    if len(payload) != header.get("payload_bytes") or \
            hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError("payload size or checksum mismatch: file is corrupted")
    if expected_spec is not None and spec != expected_spec:
        raise CheckpointError(
            f"checkpoint spec is incompatible with the requested spec:\n  file: {spec}\n  want: {expected_spec}"
        )

    expected = {name: shape for name, shape, _, _ in _param_shapes(spec)}
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if start < 0 or start + 8 * count > len(payload):
            raise CheckpointError(f"array {entry['name']} lies outside the payload")
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=start).reshape(shape).astype(np.float64)
    params = {}
    for name, shape in expected.items():
        if name not in arrays:
            raise CheckpointError(f"missing parameter {name}")
        if arrays[name].shape != shape:
            raise CheckpointError(f"parameter {name} has shape {arrays[name].shape}, spec requires {shape}")
        params[name] = arrays.pop(name)
    norm = None
    if header.get("norm") is not None:
        try:
            norm = NormStats(header["norm"]["scheme"], arrays.pop("norm.offset"),
                             arrays.pop("norm.scale"), header["norm"]["channels"])
        except KeyError as exc:
            raise CheckpointError(f"normalization arrays missing: {exc}") from exc
    if arrays:
        raise CheckpointError(f"unexpected arrays in checkpoint: {sorted(arrays)}")
    return Model(spec, params, norm, header.get("meta", {}))
