"""JSON run configuration with strict key checking.

Sections: ``data``, ``backbone``, ``head``, ``variants`` (optional),
``train`` and ``output_dir``. Unknown keys anywhere are rejected; missing
keys take the dataclass defaults. Relative paths resolve against the
config file's directory.
"""
import dataclasses
import json
import os
from dataclasses import dataclass, field

from .data import MixtureSpec, gen_mixture, load_csv, load_idx
from .head import HeadConfig
from .trainer import TrainConfig
from .variants import VariantConfig


class ConfigError(ValueError):
    pass


_DATA_KEYS = {
    "mixture": {"kind"} | {f.name for f in dataclasses.fields(MixtureSpec)},
    "idx": {"kind", "train_images", "train_labels", "test_images", "test_labels"},
    "csv": {"kind", "train_path", "test_path", "label_column"},
}
_TOP_KEYS = {"data", "backbone", "head", "variants", "train", "output_dir"}
_HEAD_KEYS = {f.name for f in dataclasses.fields(HeadConfig)}


@dataclass
class RunConfig:
    data: dict
    layer_dims: list | None
    head: dict
    variants: VariantConfig | None
    train: TrainConfig
    output_dir: str
    base_dir: str = "."
    _cache: dict = field(default_factory=dict, repr=False)

    def load_data(self):
        """``(train, test)`` datasets for the ``data`` section."""
        if "data" in self._cache:
            return self._cache["data"]
        kind = self.data.get("kind", "mixture")
        p = lambda key: os.path.join(self.base_dir, self.data[key])  # noqa: E731
        if kind == "mixture":
            spec = MixtureSpec(**{k: v for k, v in self.data.items() if k != "kind"})
            out = gen_mixture(spec)
        elif kind == "idx":
            out = (
                load_idx(p("train_images"), p("train_labels"), "train"),
                load_idx(p("test_images"), p("test_labels"), "test"),
            )
        else:
            col = self.data.get("label_column", "label")
            out = (load_csv(p("train_path"), col, "train"), load_csv(p("test_path"), col, "test"))
        self._cache["data"] = out
        return out

    def head_config(self, **overrides):
        """HeadConfig with ``feature_dim``/``num_classes`` inferred when absent."""
        values = dict(self.head)
        values.update(overrides)
        try:
            return self._head_config(values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"head: {exc}") from None

    def _head_config(self, values):
        if "feature_dim" not in values:
            if self.layer_dims and len(self.layer_dims) > 1:
                values["feature_dim"] = self.layer_dims[-1]
            else:
                values["feature_dim"] = self.load_data()[0].dim
        if "num_classes" not in values:
            train, test = self.load_data()
            values["num_classes"] = int(max(train.labels.max(), test.labels.max() if len(test) else 0)) + 1
        return HeadConfig(**values)

    def resolved(self, head_cfg=None):
        head_cfg = head_cfg or self.head_config()
        return {
            "data": dict(self.data),
            "backbone": {"layer_dims": self.layer_dims},
            "head": dataclasses.asdict(head_cfg),
            "variants": dataclasses.asdict(self.variants) if self.variants is not None else None,
            "train": dataclasses.asdict(self.train),
            "output_dir": self.output_dir,
        }


def _check_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object, got {type(section).__name__}")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(repr(k) for k in unknown)}")


def _build(cls, section, where):
    _check_keys(section, {f.name for f in dataclasses.fields(cls)}, where)
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse(doc, base_dir="."):
    _check_keys(doc, _TOP_KEYS, "config")
    data = doc.get("data", {"kind": "mixture"})
    _check_keys(data, set(data) if isinstance(data, dict) else (), "data")
    data = dict(data)
    kind = data.setdefault("kind", "mixture")
    if kind not in _DATA_KEYS:
        raise ConfigError(f"data.kind: must be one of {sorted(_DATA_KEYS)}, got {kind!r}")
    _check_keys(data, _DATA_KEYS[kind], f"data ({kind})")
    if kind == "mixture":
        spec = _build(MixtureSpec, {k: v for k, v in data.items() if k != "kind"}, "data")
        data = {"kind": "mixture", **dataclasses.asdict(spec)}
    else:
        missing = sorted(_DATA_KEYS[kind] - {"kind", "label_column"} - set(data))
        if missing:
            raise ConfigError(f"data ({kind}): missing key(s) {', '.join(missing)}")
        if kind == "csv":
            data.setdefault("label_column", "label")

    backbone = doc.get("backbone") or {}
    _check_keys(backbone, {"layer_dims"}, "backbone")
    layer_dims = backbone.get("layer_dims")
    if layer_dims is not None and (not isinstance(layer_dims, list) or not all(isinstance(v, int) and v > 0 for v in layer_dims)):
        raise ConfigError("backbone.layer_dims: expected a list of positive integers")

    head = doc.get("head") or {}
    _check_keys(head, _HEAD_KEYS, "head")
    variants = None
    if doc.get("variants") is not None:
        variants = _build(VariantConfig, doc["variants"], "variants")
    train = _build(TrainConfig, doc.get("train") or {}, "train")
    output_dir = doc.get("output_dir", "runs/default")
    if not isinstance(output_dir, str):
        raise ConfigError("output_dir: expected a string")
    return RunConfig(data, layer_dims, head, variants, train, os.path.join(base_dir, output_dir), base_dir)


def load(path):
    with open(path, "rb") as f:
        raw = f.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 at byte offset {exc.start}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise ConfigError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno} (byte offset {offset}): {exc.msg}"
        ) from None
    return parse(doc, os.path.dirname(os.path.abspath(path)))
