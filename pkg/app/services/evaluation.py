"""Accuracy, confusion matrices and logits export"""

from pathlib import Path
from typing import Dict, Tuple
import logging

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from app.schemas.dataset import SampleSet
from app.schemas.metrics import EvaluationReport
from app.schemas.model import ModelParams, ModelSpec
from app.services.models import model_forward, params_from_arrays

logger = logging.getLogger(__name__)

EVAL_CHUNK = 512
FLOAT_FORMAT = "%.17g"


def predict(params: ModelParams, samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(representations, logits) for every sample, forwarded in chunks"""
    representations, logits = [], []
    for start in range(0, len(samples), EVAL_CHUNK):
        rep, out = model_forward(params, samples[start:start + EVAL_CHUNK])
        representations.append(rep.data)
        logits.append(out.data)
    return np.concatenate(representations), np.concatenate(logits)


def _as_params(model, spec: ModelSpec = None) -> ModelParams:
    if isinstance(model, ModelParams):
        return model
    if spec is None:
        raise ValueError("a ModelSpec is required to evaluate raw parameter arrays")
    return params_from_arrays(spec, model)


def evaluate(model, split: SampleSet, spec: ModelSpec = None) -> EvaluationReport:
    """
    Argmax accuracy and the K x K confusion matrix (rows are true classes).

    `model` is a ModelParams or a name -> array mapping (e.g. the EMA shadow).
    """
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    params = _as_params(model, spec)
    _, logits = predict(params, split.samples)
    predicted = np.argmax(logits, axis=1)
    num_classes = params.spec.num_classes
    matrix = confusion_matrix(split.labels, predicted, labels=list(range(num_classes)))
    accuracy = float(np.trace(matrix)) / float(len(split))
    return EvaluationReport(
        accuracy=accuracy,
        error_rate=1.0 - accuracy,
        confusion_matrix=matrix.astype(int).tolist(),
        sample_count=len(split),
    )


def accuracy(model, split: SampleSet, spec: ModelSpec = None) -> float:
    return evaluate(model, split, spec).accuracy


def export_logits(model, split: SampleSet, path: str, spec: ModelSpec = None) -> Path:
    """CSV of sample_index, true_label, predicted_label, logit_*, representation_*"""
    if len(split) == 0:
        raise ValueError("cannot export an empty split")
    params = _as_params(model, spec)
    representations, logits = predict(params, split.samples)

    columns: Dict[str, np.ndarray] = {
        "sample_index": np.arange(len(split)),
        "true_label": np.asarray(split.labels, dtype=np.int64),
        "predicted_label": np.argmax(logits, axis=1),
    }
    for k in range(logits.shape[1]):
        columns[f"logit_{k}"] = logits[:, k]
    for r in range(representations.shape[1]):
        columns[f"representation_{r}"] = representations[:, r]

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(columns).to_csv(target, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Exported %d rows of logits to %s", len(split), target)
    return target
