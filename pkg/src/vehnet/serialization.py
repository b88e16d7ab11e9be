"""Save and restore whole models in the VEHNET01 weight format.

Architecture metadata rides along as ``meta.*`` tensors so a weight file is
self-describing; class names are stored as UTF-8 byte codes.
"""

from __future__ import annotations

import numpy as np

from .classifier import PatchClassifier, VehicleTaxonomy
from .formats import FormatError, load_weights, save_weights, tensor_to_text, text_to_tensor
from .segmodel import EncoderDecoderSpec, SegNet


def _meta(kind: str, class_list, **ints) -> dict[str, np.ndarray]:
    out = {
        "meta.kind": text_to_tensor(kind),
        "meta.classes": text_to_tensor(",".join(class_list)),
    }
    for key, value in ints.items():
        out[f"meta.{key}"] = np.asarray(value, dtype=np.float32).reshape(-1)
    return out


def save_segnet(path, model: SegNet) -> None:
    spec = model.spec
    tensors = _meta("segnet", spec.class_list, input_channels=spec.input_channels,
                    block_channels=spec.block_channels, convs_per_block=spec.convs_per_block,
                    kernel=spec.kernel)
    tensors.update(model.store.tensors())
    save_weights(path, tensors)


def save_classifier(path, model: PatchClassifier) -> None:
    tensors = _meta("classifier", model.taxonomy.names, input_side=model.input_side)
    tensors.update(model.store.tensors())
    save_weights(path, tensors)


def _split(path, kind):
    tensors = load_weights(path)
    if "meta.kind" not in tensors or tensor_to_text(tensors["meta.kind"]) != kind:
        raise FormatError(f"{path}: not a {kind} weight file")
    meta = {k[5:]: v for k, v in tensors.items() if k.startswith("meta.")}
    params = {k: v for k, v in tensors.items() if not k.startswith("meta.")}
    return meta, params


def _restore(store, params, path):
    expected = store.tensors()
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise FormatError(f"{path}: tensor names do not match model (missing {missing[:3]}, "
                          f"unexpected {extra[:3]})")
    for name, value in params.items():
        store.assign(name, value)


def load_segnet(path) -> SegNet:
    meta, params = _split(path, "segnet")
    spec = EncoderDecoderSpec(
        input_channels=int(meta["input_channels"][0]),
        block_channels=tuple(int(v) for v in meta["block_channels"]),
        convs_per_block=int(meta["convs_per_block"][0]),
        class_list=tuple(tensor_to_text(meta["classes"]).split(",")),
        kernel=int(meta["kernel"][0]),
    )
    model = SegNet(spec)
    _restore(model.store, params, path)
    return model


def load_classifier(path) -> PatchClassifier:
    meta, params = _split(path, "classifier")
    taxonomy = VehicleTaxonomy(tuple(tensor_to_text(meta["classes"]).split(",")))
    model = PatchClassifier(taxonomy, int(meta["input_side"][0]))
    _restore(model.store, params, path)
    return model
