"""Downstream evaluation of learned representations: MLP classification over
latents or generated weights, PCA projection for cluster export, and linear
latent-space interpolation with reconstruction decoding."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adam import AdamState, adam_step
from .arch import HyperNetParams, MainNetWeights
from .bundle import ModelBundle
from .eigen import eigen_symmetric
from .errors import ConfigError, ShapeError
from .loss import mse_from_loss
from .nets import hyper_forward, main_forward

CLASSIFIER_HIDDEN = (128, 128, 128)
CLASSIFIER_EPOCHS = 150
CLASSIFIER_BATCH = 128
CLASSIFIER_LR = 1e-3


@dataclass
class ClassifierModel:
    """ReLU MLP with softmax output over z-scored input features.

    The hidden stack is identical regardless of the input dimension, so
    latent-space and weight-space classifiers differ only in their first
    layer.
    """

    hidden: tuple[int, ...]
    class_ids: np.ndarray  # original labels, ascending; logits follow this order
    input_dim: int
    layers: list  # [(W(fan_out, fan_in), b), ...]
    mean: np.ndarray
    std: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.class_ids.size

    def logits(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"features have dim {x.shape[1]}, model expects {self.input_dim}")
        h = (x - self.mean) / self.std
        for W, b in self.layers[:-1]:
            h = np.maximum(h @ W.T + b, 0.0)
        W, b = self.layers[-1]
        return h @ W.T + b


@dataclass
class ClassifierLog:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _init_classifier(input_dim, hidden, n_classes, rng):
    layers = []
    dims = [input_dim, *hidden, n_classes]
    for fi, fo in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fi)
        layers.append((rng.uniform(-bound, bound, (fo, fi)), np.zeros(fo)))
    return layers


def train_classifier(features: np.ndarray, labels: np.ndarray, seed: int,
                     hidden=CLASSIFIER_HIDDEN, epochs=CLASSIFIER_EPOCHS,
                     batch_size=CLASSIFIER_BATCH, lr=CLASSIFIER_LR):
    """Softmax cross-entropy MLP trained with Adam on z-scored features.

    Returns (ClassifierModel, ClassifierLog). Class ids are remapped to a
    dense 0..K-1 range internally; predictions use the original ids.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ShapeError(f"features {features.shape} do not match labels {labels.shape}")
    if not np.all(np.isfinite(features)):
        raise ShapeError("features contain non-finite values")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ConfigError(f"need at least 2 classes, got {classes.size}")
    n_classes = classes.size
    dense = np.searchsorted(classes, labels)
    t, dim = features.shape

    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std < 1e-12] = 1.0

    rng = np.random.default_rng(seed)
    layers = _init_classifier(dim, tuple(hidden), n_classes, rng)
    states = [
        (AdamState.zeros(W.size), AdamState.zeros(b.size)) for W, b in layers
    ]
    x_all = (features - mean) / std
    log = ClassifierLog()
    for epoch in range(epochs):
        perm = rng.permutation(t)
        epoch_loss, epoch_hits = 0.0, 0
        for b0 in range(0, t, batch_size):
            idx = perm[b0:b0 + batch_size]
            x = x_all[idx]
            y = dense[idx]
            # forward with cached activations
            acts = [x]
            h = x
            for W, b in layers[:-1]:
                h = np.maximum(h @ W.T + b, 0.0)
                acts.append(h)
            W, b = layers[-1]
            logits = h @ W.T + b
            probs = _softmax(logits)
            p_true = probs[np.arange(len(idx)), y]
            epoch_loss += float(-np.sum(np.log(np.maximum(p_true, 1e-300))))
            epoch_hits += int(np.sum(np.argmax(logits, axis=1) == y))
            # backward
            delta = probs
            delta[np.arange(len(idx)), y] -= 1.0
            delta /= len(idx)
            for li in range(len(layers) - 1, -1, -1):
                W, bias = layers[li]
                gW = delta.T @ acts[li]
                gb = delta.sum(axis=0)
                if li > 0:
                    delta = (delta @ W) * (acts[li] > 0)
                sW, sb = states[li]
                newW = adam_step(W.reshape(-1), gW.reshape(-1), sW, lr,
                                 block=f"classifier-W{li}").reshape(W.shape)
                newb = adam_step(bias, gb, sb, lr, block=f"classifier-b{li}")
                layers[li] = (newW, newb)
        log.epochs.append(epoch)
        log.train_loss.append(epoch_loss / t)
        log.train_accuracy.append(epoch_hits / t)
    model = ClassifierModel(tuple(hidden), classes, dim, layers, mean, std)
    return model, log


def classify(model: ClassifierModel, feature: np.ndarray):
    """Predicted class id and probability vector; ties break to the lowest id."""
    logits = model.logits(feature)[0]
    probs = _softmax(logits)
    return int(model.class_ids[np.argmax(logits)]), probs


def accuracy(model: ClassifierModel, features: np.ndarray, labels: np.ndarray) -> float:
    logits = model.logits(features)
    pred = model.class_ids[np.argmax(logits, axis=1)]
    return float(np.mean(pred == np.asarray(labels)))


@dataclass(frozen=True)
class PcaProjection:
    mean: np.ndarray
    components: np.ndarray               # (k, dim), orthonormal rows
    explained_variance_ratio: np.ndarray  # (k,), non-increasing


def pca_fit(features: np.ndarray, k: int) -> PcaProjection:
    """Top-k principal components via the symmetric eigensolver.

    Uses the feature-space covariance when the feature dimension is small,
    otherwise the sample-space Gram matrix (identical nonzero spectrum).
    Component signs are fixed so each component's largest-magnitude entry is
    positive.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"features must be (t, dim), got {X.shape}")
    t, dim = X.shape
    if t <= k:
        raise ConfigError(f"need more samples than components: t={t}, k={k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    total_var = float(np.sum(Xc * Xc)) / (t - 1)
    if dim <= t:
        cov = (Xc.T @ Xc) / (t - 1)
        vals, vecs = eigen_symmetric(cov)
        comps = vecs[:, ::-1][:, :k].T
        top = vals[::-1][:k]
    else:
        gram = (Xc @ Xc.T) / (t - 1)
        vals, vecs = eigen_symmetric(gram)
        top = vals[::-1][:k]
        if np.any(top <= 0):
            raise ConfigError(f"rank too low for {k} components")
        u = vecs[:, ::-1][:, :k]
        comps = (Xc.T @ u / np.sqrt(top * (t - 1))).T
    comps = comps.copy()
    for i in range(k):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    ratios = np.maximum(top, 0.0) / total_var if total_var > 0 else np.zeros(k)
    return PcaProjection(mean, comps, ratios)


def pca_transform(proj: PcaProjection, features: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != proj.mean.size:
        raise ShapeError(f"features have dim {X.shape[1]}, projection expects {proj.mean.size}")
    return (X - proj.mean) @ proj.components.T


def decode_sample(params: HyperNetParams, z: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Latent -> generated weights -> values over the coordinate grid."""
    w, _ = hyper_forward(params, z)
    y, _ = main_forward(MainNetWeights(params.arch.main, w), grid)
    return y


def decode_weights(params: HyperNetParams, latents: np.ndarray) -> np.ndarray:
    """Generated flat weight vectors for a latent table, shape (t, d)."""
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    out = np.empty((latents.shape[0], params.arch.output_dim))
    for j in range(latents.shape[0]):
        out[j], _ = hyper_forward(params, latents[j])
    return out


def interpolate_latents(bundle: ModelBundle, id_a: int, id_b: int, steps: int,
                        grid: np.ndarray):
    """Reconstructions along the segment between two stored latents.

    steps evenly spaced interpolation weights including both endpoints;
    endpoint reconstructions equal direct decodes bit-for-bit. Returns a list
    of (alpha, reconstruction) pairs.
    """
    if steps < 2:
        raise ConfigError(f"need at least 2 interpolation steps, got {steps}")
    z_a = bundle.latent_for(id_a)
    z_b = bundle.latent_for(id_b)
    out = []
    for alpha in np.linspace(0.0, 1.0, steps):
        if alpha == 0.0:
            z = z_a  # keep the endpoints bit-exact
        elif alpha == 1.0:
            z = z_b
        else:
            z = (1.0 - alpha) * z_a + alpha * z_b
        out.append((float(alpha), decode_sample(bundle.params, z, grid)))
    return out
