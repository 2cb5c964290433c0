"""Scikit-learn style estimators wrapping the source model and the full
three-stage adaptation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adapt import AdaptConfig, adapt
from .classifier import ClassifierConfig, aggregate, init_target_head, train_target_head
from .config import stage_rng, stage_seed
from .metrics import open_set_metrics
from .model import ModelSnapshot, SourceConfig, train_source
from .numeric import softmax
from .synthgen import SynthConfig, build_synthetic_set

__all__ = ["SourceModel", "RRDA"]


class SourceModel(ClassifierMixin, TransformerMixin, BaseEstimator):
    """K-way source classifier: MLP encoder followed by a linear head.

    ``transform`` returns encoder features. Labels must be ``0..K-1``.
    """

    def __init__(self, config: SourceConfig = None, random_state: int = 0):
        self.config = config
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        k = int(y.max()) + 1
        if not np.array_equal(self.classes_, np.arange(k)):
            raise ValueError("source labels must be the integers 0..K-1 with every class present")
        self.snapshot_, self.loss_curve_ = train_source(
            X, y, k, self.config or SourceConfig(), seed=self.random_state
        )
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_snapshot(cls, snapshot: ModelSnapshot) -> "SourceModel":
        est = cls(random_state=snapshot.seed)
        est.snapshot_ = snapshot
        est.classes_ = np.arange(snapshot.n_known)
        est.n_features_in_ = snapshot.encoder.dims[0]
        est.loss_curve_ = []
        return est

    def transform(self, X):
        check_is_fitted(self, "snapshot_")
        return self.snapshot_.encoder(check_array(X, dtype=np.float64))

    def decision_function(self, X):
        check_is_fitted(self, "snapshot_")
        return self.snapshot_.logits(check_array(X, dtype=np.float64))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)


class RRDA(TransformerMixin, BaseEstimator):
    """Source-free open-set adaptation of a fitted :class:`SourceModel`.

    ``fit`` sees only unlabeled target inputs. It synthesizes known and
    unknown feature points against the frozen source head, trains a
    ``K + k_prime`` head on them, and adapts the model to the target data.
    ``predict`` returns labels in ``0..K`` where ``K`` means unknown;
    ``predict_raw`` keeps the individual unknown sub-classes.

    Parameters
    ----------
    source : SourceModel or ModelSnapshot
        The pre-trained source model. It is never modified.
    synth, classifier, adapt : stage configs
        ``None`` selects the defaults.
    random_state : int
        Root seed; every stage draws from its own derived stream.
    """

    def __init__(self, source=None, synth: SynthConfig = None, classifier: ClassifierConfig = None,
                 adapt: AdaptConfig = None, random_state: int = 0):
        self.source = source
        self.synth = synth
        self.classifier = classifier
        self.adapt = adapt
        self.random_state = random_state

    def _source_snapshot(self) -> ModelSnapshot:
        src = self.source
        if isinstance(src, SourceModel):
            check_is_fitted(src, "snapshot_")
            return src.snapshot_
        if isinstance(src, ModelSnapshot):
            return src
        raise NotFittedError("RRDA needs a fitted SourceModel or a ModelSnapshot as `source`")

    def fit(self, X, y=None, eval_labels=None):
        """Run all three stages on unlabeled target inputs ``X``.

        ``y`` is ignored. ``eval_labels`` only feeds the per-epoch metric
        trace and never reaches training.
        """
        X = check_array(X, dtype=np.float64)
        src = self._source_snapshot()
        seed = self.random_state
        synth_cfg = self.synth or SynthConfig()
        clf_cfg = self.classifier or ClassifierConfig()
        adapt_cfg = self.adapt or AdaptConfig()

        z = src.encoder(X)
        self.synthetic_set_ = build_synthetic_set(z, src.head, synth_cfg, seed=stage_seed(seed, "synthgen"))
        k_prime = self.synthetic_set_.k_prime
        head = init_target_head(src.head, k_prime, clf_cfg.init_mode, stage_rng(seed, "classifier-init"))
        self.initial_head_ = head.copy()
        head, self.head_loss_curve_ = train_target_head(
            head, self.synthetic_set_, clf_cfg, stage_rng(seed, "classifier-train")
        )
        self.target_head_ = head.copy()
        model = ModelSnapshot(src.encoder.copy(), head, src.n_known, k_prime, seed, "target-head")
        self.model_, self.trace_ = adapt(model, X, adapt_cfg, stage_rng(seed, "adapt"), eval_labels)
        self.n_known_ = src.n_known
        self.k_prime_ = k_prime
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.encoder(check_array(X, dtype=np.float64))

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.logits(check_array(X, dtype=np.float64))

    def predict_raw(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return aggregate(self.predict_raw(X), self.n_known_)

    def score(self, X, y):
        """HOS of the aggregated predictions against ``y`` (privates ``>= K``)."""
        return open_set_metrics(self.predict(X), y, self.n_known_)["hos"]

