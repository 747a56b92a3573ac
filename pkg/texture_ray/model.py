import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch
import torchvision
from packaging.version import Version
from ray import logger
from ray.util.annotations import DeveloperAPI, PublicAPI
from torch import nn

from texture_ray.dataset import NUM_CLASSES, ClassLabel

# torchvision < 0.13 has no multi-weight API
TORCHVISION_VERSION = Version(torchvision.__version__.split("+")[0])
LEGACY_WEIGHTS_API = TORCHVISION_VERSION < Version("0.13")

# Backbone identifier -> (constructor name, weights enum name)
BACKBONES = {
    "resnet18": ("resnet18", "ResNet18_Weights"),
    "resnet34": ("resnet34", "ResNet34_Weights"),
    "resnet50": ("resnet50", "ResNet50_Weights"),
}

CHECKPOINT_WEIGHTS = "model.pt"
CHECKPOINT_SIDECAR = "model.json"


class PretrainedWeightsUnavailable(RuntimeError):
    """Raised when pretrained backbone weights were requested but could not
    be loaded. There is no fallback to random initialization."""

    pass


@PublicAPI(stability="beta")
@dataclass(frozen=True)
class ClassifierSpec:
    """Architecture of the texture classifier.

    Args:
        backbone: Backbone identifier, one of ``BACKBONES``.
        num_classes: Number of output classes. Must equal the number
            of texture classes.
        dropout_p: Dropout probability in front of the linear head.
        pretrained: Load ImageNet pretraining weights into the backbone.
        freeze_backbone: Train the head only. Defaults to full fine-tuning.
    """

    backbone: str = "resnet18"
    num_classes: int = NUM_CLASSES
    dropout_p: float = 0.5
    pretrained: bool = True
    freeze_backbone: bool = False

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(
                f"Unknown backbone `{self.backbone}`. "
                f"Supported backbones: {sorted(BACKBONES)}."
            )
        if self.num_classes != NUM_CLASSES:
            raise ValueError(
                f"`num_classes` must be {NUM_CLASSES} (one per texture class), "
                f"got {self.num_classes}."
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"`dropout_p` must be in [0, 1), got {self.dropout_p}.")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@DeveloperAPI
def state_checksum(module: nn.Module) -> str:
    """SHA-256 over all parameters and buffers, in state dict key order."""
    digest = hashlib.sha256()
    for key, tensor in module.state_dict().items():
        digest.update(key.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


@PublicAPI(stability="beta")
class TextureClassifier(nn.Module):
    """CNN backbone whose final layer is ``Dropout -> Linear(features, 4)``."""

    def __init__(
        self,
        spec: ClassifierSpec,
        backbone: nn.Module,
        weights_source: Optional[str] = None,
        pretrained_checksum: Optional[str] = None,
    ):
        super(TextureClassifier, self).__init__()
        self.spec = spec
        self.backbone = backbone
        self.weights_source = weights_source
        self.pretrained_checksum = pretrained_checksum

    @property
    def head(self) -> nn.Sequential:
        return self.backbone.fc

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(
                f"Expected a normalized image batch of shape (batch, 3, H, W), "
                f"got {tuple(x.shape)}."
                "\nFIX THIS by passing images through "
                "`normalize_for_backbone()` and stacking them."
            )
        return self.backbone(x)

    def provenance(self) -> Dict[str, Optional[str]]:
        return {
            "backbone": self.spec.backbone,
            "weights_source": self.weights_source,
            "pretrained_checksum": self.pretrained_checksum,
        }


def _load_pretrained(backbone: nn.Module, name: str, weights_name: str) -> str:
    if LEGACY_WEIGHTS_API:
        source = f"torchvision.models.{name}(pretrained=True)"
        pretrained = getattr(torchvision.models, name)(pretrained=True)
        backbone.load_state_dict(pretrained.state_dict())
        return source

    weights = getattr(torchvision.models, weights_name).IMAGENET1K_V1
    backbone.load_state_dict(weights.get_state_dict(progress=False))
    return f"torchvision.models.{weights_name}.IMAGENET1K_V1"


@PublicAPI(stability="beta")
def build_classifier(
    spec: Union[None, ClassifierSpec, Dict] = None, seed: int = 0
) -> TextureClassifier:
    """Build a texture classifier from a spec.

    Random initialization (backbone when not pretrained, and always the
    head) is drawn from a torch generator seeded with ``seed`` and does not
    disturb the global torch random state.

    Args:
        spec: Classifier spec, dict of spec fields or None for defaults.
        seed: Initialization seed.

    Returns:
        A ``TextureClassifier`` in training mode.
    """
    if spec is None:
        spec = ClassifierSpec()
    elif isinstance(spec, dict):
        spec = ClassifierSpec(**spec)

    name, weights_name = BACKBONES[spec.backbone]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        backbone = getattr(torchvision.models, name)(num_classes=1000)

        weights_source = None
        pretrained_checksum = None
        if spec.pretrained:
            try:
                weights_source = _load_pretrained(backbone, name, weights_name)
            except Exception as exc:
                raise PretrainedWeightsUnavailable(
                    f"Could not load pretrained weights for `{spec.backbone}`: "
                    f"{exc}"
                    "\nFIX THIS by making the torchvision weights available "
                    "(network access or a populated TORCH_HOME cache), or "
                    "explicitly disable pretraining (`pretrained=False`, "
                    "CLI flag `--no-pretrained`)."
                ) from exc
            pretrained_checksum = state_checksum(backbone)

        in_features = backbone.fc.in_features
        backbone.fc = nn.Sequential(
            nn.Dropout(p=spec.dropout_p),
            nn.Linear(in_features, spec.num_classes),
        )

    if spec.freeze_backbone:
        for param_name, param in backbone.named_parameters():
            param.requires_grad = param_name.startswith("fc.")

    classifier = TextureClassifier(
        spec,
        backbone,
        weights_source=weights_source,
        pretrained_checksum=pretrained_checksum,
    )
    logger.debug(
        f"[TextureRay] Built {spec.backbone} classifier "
        f"(pretrained={spec.pretrained}, dropout={spec.dropout_p}, "
        f"frozen backbone={spec.freeze_backbone})."
    )
    return classifier


@PublicAPI(stability="beta")
def forward(classifier: TextureClassifier, batch: torch.Tensor) -> torch.Tensor:
    """Logits of shape ``(batch, num_classes)``.

    Runs in whatever mode the classifier is in; call ``classifier.eval()``
    for deterministic, dropout-free outputs.
    """
    if not isinstance(batch, torch.Tensor):
        batch = torch.as_tensor(np.asarray(batch), dtype=torch.float32)
    return classifier(batch)


def labels_from_logits(logits: Union[torch.Tensor, np.ndarray]) -> List[ClassLabel]:
    """Row-wise argmax. Ties resolve to the lowest class index."""
    if isinstance(logits, torch.Tensor):
        logits = logits.detach().cpu().numpy()
    logits = np.atleast_2d(logits)
    # np.argmax returns the first maximal index
    return [ClassLabel.from_index(i) for i in np.argmax(logits, axis=1)]


@PublicAPI(stability="beta")
def predict(classifier: TextureClassifier, batch: torch.Tensor) -> List[ClassLabel]:
    with torch.no_grad():
        logits = forward(classifier, batch)
    return labels_from_logits(logits)


@PublicAPI(stability="beta")
def save_classifier(
    classifier: TextureClassifier, directory: str, seed: int = 0
) -> str:
    """Save weights as ``model.pt`` plus a ``model.json`` sidecar."""
    os.makedirs(directory, exist_ok=True)
    torch.save(classifier.state_dict(), os.path.join(directory, CHECKPOINT_WEIGHTS))
    sidecar = {
        "spec": classifier.spec.to_dict(),
        "seed": seed,
        "weights_checksum": state_checksum(classifier),
        **classifier.provenance(),
    }
    with open(os.path.join(directory, CHECKPOINT_SIDECAR), "wt") as fp:
        json.dump(sidecar, fp, indent=2)
    return directory


@PublicAPI(stability="beta")
def load_classifier(directory: str) -> TextureClassifier:
    """Restore a classifier saved by :func:`save_classifier`."""
    with open(os.path.join(directory, CHECKPOINT_SIDECAR), "rt") as fp:
        sidecar = json.load(fp)
    spec_fields = dict(sidecar["spec"])
    spec_fields["pretrained"] = False
    classifier = build_classifier(ClassifierSpec(**spec_fields), seed=sidecar["seed"])
    state = torch.load(
        os.path.join(directory, CHECKPOINT_WEIGHTS), map_location="cpu"
    )
    classifier.load_state_dict(state)
    classifier.spec = ClassifierSpec(**sidecar["spec"])
    classifier.weights_source = sidecar.get("weights_source")
    classifier.pretrained_checksum = sidecar.get("pretrained_checksum")
    return classifier
