"""Portable inference bundles for the browser front end.

A bundle directory holds the layered web format: ``model.json`` (topology
plus a weights manifest) and binary float32 shards, alongside
``bundle.json`` (labels, preprocessing contract, metadata) and a 32-image
probe set with the native class probabilities. Export always round-trips
the bundle through an independent reader and refuses to ship if the
reloaded model's probabilities drift by 1e-4 or more on the probe set.

The writer targets the conventional layered topology schema directly (the
layer inventory used by every model here is closed), so no converter
toolchain is involved; the reader rebuilds a model from the same file,
which keeps both directions of the format honest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import LabeledImage
from .metrics import CLASS_NAMES
from .preprocess import PreprocessProfile, standardize

SHARD_BYTES = 4 * 1024 * 1024
FIDELITY_TOLERANCE = 1e-4
PROBE_COUNT = 32

# Layer classes the bundle format carries. Everything the two CNNs, the
# three backbones and the head can contain.
SUPPORTED_LAYERS = {
    "InputLayer",
    "Conv2D",
    "SeparableConv2D",
    "ZeroPadding2D",
    "BatchNormalization",
    "Activation",
    "MaxPooling2D",
    "AveragePooling2D",
    "GlobalAveragePooling2D",
    "Concatenate",
    "Add",
    "Dense",
    "Dropout",
    "Flatten",
}

_STRIP_KEYS = ("module", "registered_name", "build_config")


class ExportError(RuntimeError):
    pass


def _clean(obj):
    """Normalize a layer config for the web format: plain dtype strings,
    no serializer bookkeeping keys."""
    if isinstance(obj, dict):
        if obj.get("class_name") == "DTypePolicy":
            return obj["config"]["name"]
        return {k: _clean(v) for k, v in obj.items() if k not in _STRIP_KEYS}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def _keras_histories(args) -> list:
    """Pull (layer, node, tensor) references out of a call-args structure."""
    found = []

    def walk(x):
        if isinstance(x, dict) and x.get("class_name") == "__keras_tensor__":
            found.append(x["config"]["keras_history"])
        elif isinstance(x, (list, tuple)):
            for v in x:
                walk(v)

    walk(args)
    return found


def model_topology(model) -> dict:
    """Functional-graph topology in the layered web schema."""
    cfg = model.get_config()
    layers_out = []
    for entry in cfg["layers"]:
        class_name = entry["class_name"]
        if class_name not in SUPPORTED_LAYERS:
            raise ExportError(
                f"layer {entry['name']!r} has unsupported class {class_name}; "
                f"the bundle format carries only {sorted(SUPPORTED_LAYERS)}"
            )
        lcfg = _clean(entry["config"])
        if class_name == "InputLayer" and "batch_shape" in lcfg:
            lcfg["batch_input_shape"] = lcfg.pop("batch_shape")
        nodes = []
        for node in entry.get("inbound_nodes", []):
            hist = _keras_histories(node.get("args", []))
            nodes.append([[h[0], h[1], h[2], node.get("kwargs") or {}] for h in hist])
        layers_out.append(
            {"class_name": class_name, "config": lcfg, "name": entry["name"], "inbound_nodes": nodes}
        )

    def as_refs(value):
        return value if isinstance(value[0], list) else [value]

    return {
        "keras_version": "2.15.0",
        "backend": "tensorflow",
        "model_config": {
            "class_name": "Model",
            "config": {
                "name": cfg["name"],
                "layers": layers_out,
                "input_layers": as_refs(cfg["input_layers"]),
                "output_layers": as_refs(cfg["output_layers"]),
            },
        },
    }


def _weight_entries(model) -> list[tuple[str, np.ndarray]]:
    entries = []
    for layer in model.layers:
        for w in layer.weights:
            entries.append((w.path, np.asarray(w, dtype=np.float32)))
    return entries


def _write_shards(entries, out_dir: Path) -> list[dict]:
    payload = b"".join(arr.tobytes() for _, arr in entries)
    count = max(1, -(-len(payload) // SHARD_BYTES))
    names = [f"group1-shard{i + 1}of{count}.bin" for i in range(count)]
    for i, name in enumerate(names):
        with open(out_dir / name, "wb") as f:
            f.write(payload[i * SHARD_BYTES : (i + 1) * SHARD_BYTES])
    specs = [{"name": name, "shape": list(arr.shape), "dtype": "float32"} for name, arr in entries]
    return [{"paths": names, "weights": specs}]


@dataclass
class ExportBundle:
    out_dir: Path
    labels: tuple[str, str]
    profile: PreprocessProfile
    metadata: dict
    fidelity_max_abs_diff: float


def export_model(
    model,
    profile: PreprocessProfile,
    out_dir,
    labels: tuple[str, str] = CLASS_NAMES,
    metadata: dict | None = None,
    probe: list[LabeledImage] | None = None,
) -> ExportBundle:
    """Serialize the model and verify the bundle reproduces it.

    Writes model.json + weight shards + bundle.json + the probe set, then
    reloads everything through ``load_bundle`` and compares class
    probabilities on the probe images; a drift of 1e-4 or more aborts the
    export.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    doc = {
        "format": "layers-model",
        "generatedBy": "plasmodium",
        "convertedBy": None,
        "modelTopology": model_topology(model),
        "weightsManifest": _write_shards(_weight_entries(model), out_dir),
    }
    with open(out_dir / "model.json", "w") as f:
        json.dump(doc, f)

    if probe is None:
        from .synthetic import probe_images

        probe = probe_images(PROBE_COUNT, size=96)
    probe = probe[:PROBE_COUNT]
    native = _predict(model, probe, profile)
    _write_probe(out_dir, probe, native)

    reloaded = load_bundle(out_dir)
    again = _predict(reloaded.model, probe, profile)
    drift = float(np.max(np.abs(native - again))) if len(probe) else 0.0
    if drift >= FIDELITY_TOLERANCE:
        raise ExportError(
            f"bundle round-trip drift {drift:.3e} exceeds {FIDELITY_TOLERANCE:.0e} "
            f"on the {len(probe)}-image probe set"
        )

    meta = dict(metadata or {})
    meta["fidelity_max_abs_diff"] = drift
    bundle_doc = {
        "labels": list(labels),
        "preprocess": profile.to_json(),
        "metadata": meta,
    }
    with open(out_dir / "bundle.json", "w") as f:
        json.dump(bundle_doc, f, indent=2)

    return ExportBundle(
        out_dir=out_dir,
        labels=tuple(labels),
        profile=profile,
        metadata=meta,
        fidelity_max_abs_diff=drift,
    )


def _predict(model, images: list[LabeledImage], profile: PreprocessProfile) -> np.ndarray:
    xs = np.stack([standardize(im, profile) for im in images])
    return np.asarray(model.predict(xs, verbose=0), dtype=np.float64)


def _write_probe(out_dir: Path, probe: list[LabeledImage], native: np.ndarray) -> None:
    probe_dir = out_dir / "probe"
    probe_dir.mkdir(exist_ok=True)
    entries = []
    raw = bytearray()
    for i, im in enumerate(probe):
        pixels = np.asarray(im.pixels, dtype=np.uint8)
        name = f"probe_{i:02d}.png"
        Image.fromarray(pixels).save(probe_dir / name)
        entries.append(
            {
                "file": f"probe/{name}",
                "height": int(pixels.shape[0]),
                "width": int(pixels.shape[1]),
                "offset": len(raw),
                "label": int(im.label),
            }
        )
        raw.extend(pixels.tobytes())
    with open(out_dir / "probe.bin", "wb") as f:
        f.write(bytes(raw))
    with open(out_dir / "probe.json", "w") as f:
        json.dump(
            {
                "entries": entries,
                "native_probabilities": native.tolist(),
                "native_argmax": native.argmax(axis=1).tolist(),
            },
            f,
        )


@dataclass
class LoadedBundle:
    model: object
    labels: tuple[str, str]
    profile: PreprocessProfile
    metadata: dict


def _layer_from_config(class_name: str, cfg: dict):
    """Rebuild a layer from its serialized structural fields. Initializers
    are irrelevant here because every weight is overwritten from the
    shards."""
    from keras import layers as kl

    name = cfg["name"]
    if class_name == "Conv2D":
        return kl.Conv2D(
            cfg["filters"],
            cfg["kernel_size"],
            strides=cfg.get("strides", (1, 1)),
            padding=cfg.get("padding", "valid"),
            dilation_rate=cfg.get("dilation_rate", (1, 1)),
            activation=cfg.get("activation", "linear"),
            use_bias=cfg.get("use_bias", True),
            name=name,
        )
    if class_name == "SeparableConv2D":
        return kl.SeparableConv2D(
            cfg["filters"],
            cfg["kernel_size"],
            strides=cfg.get("strides", (1, 1)),
            padding=cfg.get("padding", "valid"),
            activation=cfg.get("activation", "linear"),
            use_bias=cfg.get("use_bias", True),
            name=name,
        )
    if class_name == "ZeroPadding2D":
        return kl.ZeroPadding2D(padding=cfg["padding"], name=name)
    if class_name == "BatchNormalization":
        return kl.BatchNormalization(
            axis=cfg.get("axis", -1),
            momentum=cfg.get("momentum", 0.99),
            epsilon=cfg.get("epsilon", 1e-3),
            center=cfg.get("center", True),
            scale=cfg.get("scale", True),
            name=name,
        )
    if class_name == "Activation":
        return kl.Activation(cfg["activation"], name=name)
    if class_name == "MaxPooling2D":
        return kl.MaxPooling2D(cfg["pool_size"], strides=cfg.get("strides"), padding=cfg.get("padding", "valid"), name=name)
    if class_name == "AveragePooling2D":
        return kl.AveragePooling2D(cfg["pool_size"], strides=cfg.get("strides"), padding=cfg.get("padding", "valid"), name=name)
    if class_name == "GlobalAveragePooling2D":
        return kl.GlobalAveragePooling2D(name=name)
    if class_name == "Concatenate":
        return kl.Concatenate(axis=cfg.get("axis", -1), name=name)
    if class_name == "Add":
        return kl.Add(name=name)
    if class_name == "Dense":
        return kl.Dense(
            cfg["units"], activation=cfg.get("activation", "linear"), use_bias=cfg.get("use_bias", True), name=name
        )
    if class_name == "Dropout":
        return kl.Dropout(cfg.get("rate", 0.0), name=name)
    if class_name == "Flatten":
        return kl.Flatten(name=name)
    raise ExportError(f"cannot rebuild layer class {class_name}")


def load_bundle(bundle_dir) -> LoadedBundle:
    """Independent reader: rebuild the model from model.json + shards.

    Used for the export fidelity gate and by `evaluate` on exported runs;
    deliberately shares no code with the writer's keras-config path.
    """
    import keras

    bundle_dir = Path(bundle_dir)
    with open(bundle_dir / "model.json") as f:
        doc = json.load(f)
    config = doc["modelTopology"]["model_config"]["config"]

    tensors: dict[str, object] = {}
    inputs = []
    for entry in config["layers"]:
        class_name = entry["class_name"]
        cfg = entry["config"]
        name = entry["name"]
        if class_name == "InputLayer":
            shape = cfg["batch_input_shape"][1:]
            tensor = keras.Input(shape=shape, name=cfg.get("name", name))
            tensors[name] = tensor
            inputs.append(tensor)
            continue
        node = entry["inbound_nodes"][0]
        feed = [tensors[ref[0]] for ref in node]
        layer = _layer_from_config(class_name, cfg)
        tensors[name] = layer(feed if len(feed) > 1 else feed[0])

    outputs = [tensors[ref[0]] for ref in config["output_layers"]]
    model = keras.Model(inputs=inputs, outputs=outputs if len(outputs) > 1 else outputs[0], name=config["name"])

    groups = doc["weightsManifest"]
    by_name: dict[str, np.ndarray] = {}
    for group in groups:
        payload = b"".join((bundle_dir / p).read_bytes() for p in group["paths"])
        offset = 0
        for spec in group["weights"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            arr = np.frombuffer(payload, dtype=np.float32, count=count, offset=offset).reshape(spec["shape"])
            by_name[spec["name"]] = arr
            offset += count * 4
    for w in model.weights:
        if w.path not in by_name:
            raise ExportError(f"bundle is missing weights for {w.path}")
        w.assign(by_name[w.path])

    labels: tuple[str, str] = CLASS_NAMES
    profile = None
    metadata: dict = {}
    bundle_json = bundle_dir / "bundle.json"
    if bundle_json.is_file():
        with open(bundle_json) as f:
            extra = json.load(f)
        labels = tuple(extra["labels"])
        profile = PreprocessProfile.from_json(extra["preprocess"])
        metadata = extra.get("metadata", {})
    if profile is None:
        shape = model.input_shape
        profile = PreprocessProfile(target_size=(shape[1], shape[2]))
    return LoadedBundle(model=model, labels=labels, profile=profile, metadata=metadata)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
