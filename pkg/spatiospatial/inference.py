"""
Checkpoint-driven prediction shared by the CLI and the HTTP API.
"""
import logging
from dataclasses import dataclass

import numpy as np

from spatiospatial.data.nifti import read_nifti
from spatiospatial.models.checkpoint import load_checkpoint, load_state
from spatiospatial.models.resnets import build_model, parse_architecture
from spatiospatial.training.loop import predict_probabilities
from spatiospatial.utils.errors import SurgeryError

logger = logging.getLogger(__name__)


@dataclass
class Prediction:
    label: str
    index: int
    probabilities: dict

    def to_dict(self):
        return {"label": self.label, "index": self.index, "probabilities": self.probabilities}


def model_from_checkpoint(checkpoint, architecture=None):
    """
    Rebuild the network recorded in a checkpoint header and load its state.
    Raises:
        SurgeryError: missing metadata or a requested architecture that
            differs from the recorded one.
    """
    recorded = checkpoint.architecture
    if recorded is None or checkpoint.model_config is None:
        raise SurgeryError("checkpoint header carries no architecture metadata")
    recorded = parse_architecture(recorded)
    if architecture is not None and parse_architecture(architecture) != recorded:
        raise SurgeryError(
            f"checkpoint holds a {recorded.value} model, requested {parse_architecture(architecture).value}")
    model = build_model(recorded, checkpoint.model_config, rng=0)
    load_state(model, checkpoint)
    return model.eval()


def predict_volume(checkpoint_path, volume_path, architecture=None, class_names=None):
    """
    Predicted class and softmax probabilities for one volume file.
    Raises:
        SurgeryError: architecture mismatch (exit 1).
        DataError: unreadable volume or checkpoint (exit 2).
        InvalidGeometryError: volume too small for the network (exit 3).
    """
    checkpoint = load_checkpoint(checkpoint_path)
    model = model_from_checkpoint(checkpoint, architecture)
    volume = read_nifti(volume_path)
    probs = predict_probabilities(model, volume.as_batch())[0].astype(np.float64)
    names = class_names or checkpoint.metadata.get("class_names") \
        or [str(c) for c in range(probs.size)]
    index = int(probs.argmax())
    logger.info("predicted %s for %s", names[index], volume_path)
    return Prediction(label=names[index], index=index,
                      probabilities={name: float(p) for name, p in zip(names, probs)})
