"""scikit-learn style front door for the deformation model.

The regressor consumes SequenceDatasets: fit() trains the two-network
model on whole clips, predict() rolls a dataset out open-loop, score()
returns negative pooled RMSE in cm (bigger is better, sklearn-style).
Constructor arguments are stored untouched so get_params/set_params and
clone() behave; everything learned lives in trailing-underscore fields.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .dataio import SequenceDataset
from .errors import DimensionError
from .metrics import rmse_cm
from .model import init_model
from .profiles import PROFILES, Hyper
from .train import TrainConfig, rollout_dataset, train


def _as_dataset_list(X, name="X"):
    if isinstance(X, SequenceDataset):
        return [X]
    if isinstance(X, (list, tuple)) and X and all(
            isinstance(d, SequenceDataset) for d in X):
        return list(X)
    raise TypeError(
        f"{name} must be a SequenceDataset or a non-empty list of them")


def _check_consistent(datasets):
    v = {ds.num_vertices for ds in datasets}
    j = {ds.num_joints for ds in datasets}
    if len(v) != 1 or len(j) != 1:
        raise DimensionError(
            f"datasets disagree on shape: vertices {sorted(v)}, joints {sorted(j)}")
    for ds in datasets:
        ds.validate()
    return v.pop(), j.pop()


class GarmentDeformationRegressor(BaseEstimator):
    """Predicts per-frame garment vertex positions from character motion.

    Parameters largely mirror TrainConfig; `profile` picks the network
    dimensions ("desk" or "paper") and the latent_* / hidden overrides
    replace individual fields when given.
    """

    def __init__(self, profile="desk", epochs=300, lr_max=1e-4,
                 loss_scale=1e4, vertex_budget=10000, rollout_horizon=1,
                 jitter_std=0.002, dropout=0.25, weight_decay=1e-4, seed=0,
                 val_every=25, workers=1, resolve=True, latent_channels=None,
                 latent_categories=None, encoder_hidden=None,
                 field_hidden=None, temperature=1.0, use_codebook=True,
                 root_frame_queries=True, positional_encoding=0):
        self.profile = profile
        self.epochs = epochs
        self.lr_max = lr_max
        self.loss_scale = loss_scale
        self.vertex_budget = vertex_budget
        self.rollout_horizon = rollout_horizon
        self.jitter_std = jitter_std
        self.dropout = dropout
        self.weight_decay = weight_decay
        self.seed = seed
        self.val_every = val_every
        self.workers = workers
        self.resolve = resolve
        self.latent_channels = latent_channels
        self.latent_categories = latent_categories
        self.encoder_hidden = encoder_hidden
        self.field_hidden = field_hidden
        self.temperature = temperature
        self.use_codebook = use_codebook
        self.root_frame_queries = root_frame_queries
        self.positional_encoding = positional_encoding

    # -- configuration ----------------------------------------------------

    def _hyper(self):
        if self.profile not in PROFILES:
            raise ValueError(
                f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        base = PROFILES[self.profile]
        return Hyper(
            latent_channels=self.latent_channels or base.latent_channels,
            latent_categories=self.latent_categories or base.latent_categories,
            encoder_hidden=self.encoder_hidden or base.encoder_hidden,
            field_hidden=self.field_hidden or base.field_hidden,
            temperature=self.temperature,
            use_codebook=self.use_codebook,
            root_frame_queries=self.root_frame_queries,
            positional_encoding=self.positional_encoding,
        )

    def _train_config(self):
        return TrainConfig(
            epochs=self.epochs, lr_max=self.lr_max,
            loss_scale=self.loss_scale, vertex_budget=self.vertex_budget,
            rollout_horizon=self.rollout_horizon, jitter_std=self.jitter_std,
            dropout=self.dropout, weight_decay=self.weight_decay,
            seed=self.seed, val_every=self.val_every)

    # -- estimator API ------------------------------------------------------

    def fit(self, X, y=None, val=(), log_path=None, checkpoint_path=None,
            progress=None):
        """Train on a list of SequenceDatasets (y is ignored)."""
        datasets = _as_dataset_list(X)
        val_datasets = _as_dataset_list(val, "val") if val else []
        V, J = _check_consistent(datasets + val_datasets)
        from .motion import motion_dim

        self.model_ = init_model(self._hyper(), J, motion_dim(J), V,
                                 seed=self.seed)
        self.optimizer_, self.history_ = train(
            self.model_, datasets, self._train_config(),
            val_datasets=val_datasets, log_path=log_path,
            checkpoint_path=checkpoint_path, workers=self.workers,
            progress=progress)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError(
                "this GarmentDeformationRegressor is not fitted yet; "
                "call fit() or load_model()")

    def load_model(self, model):
        """Adopt an existing trained model (e.g. from a checkpoint)."""
        self.model_ = model
        self.history_ = []
        return self

    def predict(self, X):
        """Open-loop rollout; returns one (T, V, 3) array per dataset."""
        self._require_fitted()
        out = [rollout_dataset(self.model_, ds, workers=self.workers,
                               resolve=self.resolve)
               for ds in _as_dataset_list(X)]
        return out[0] if isinstance(X, SequenceDataset) else out

    def score(self, X, y=None):
        """Negative pooled rollout RMSE (cm) over the given datasets."""
        self._require_fitted()
        datasets = _as_dataset_list(X)
        preds = [self.predict(ds) for ds in datasets]
        pooled = np.concatenate([p[1:] for p in preds])
        target = np.concatenate([np.asarray(ds.garment[1:], dtype=np.float64)
                                 for ds in datasets])
        return -rmse_cm(pooled, target)
