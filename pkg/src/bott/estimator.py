"""Scikit-learn style facade over the train/track pipeline.

BoxLinkTracker composes with the usual sklearn machinery (get_params,
set_params, clone); X is a list of SceneDB objects.  fit() learns the
linking network from labeled scenes, predict() runs the tracker, score()
returns MOTA against the scenes' own GT.
"""
from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .featurizer import AugmentConfig
from .metrics import evaluate_scenes
from .network import LinkScorer, NetworkConfig
from .offline import run_offline
from .online import OnlineConfig, run_online
from .trainer import TrainConfig, train
from .types import Track, TrackStatus
from .validation import check_scenes


class BoxLinkTracker(BaseEstimator):
    """Multi-object tracker driven by learned pairwise linking scores.

    Parameters mirror the training and tracking configs; see TrainConfig,
    NetworkConfig and OnlineConfig for semantics.  mode selects the
    online (streaming) or offline (whole scene) tracker for predict().
    """

    def __init__(self, mlp_dims=(1024, 1024, 1024, 512), n_enc=3, n_heads=8,
                 ffn_dims=(1024, 512), epochs=50, batch_size=4, k=16, stride=1,
                 lr_max=1e-3, augment=True, mode="online", seed=0):
        self.mlp_dims = mlp_dims
        self.n_enc = n_enc
        self.n_heads = n_heads
        self.ffn_dims = ffn_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.k = k
        self.stride = stride
        self.lr_max = lr_max
        self.augment = augment
        self.mode = mode
        self.seed = seed

    def _configs(self, n_classes):
        net = NetworkConfig(n_classes=n_classes, mlp_dims=tuple(self.mlp_dims),
                            n_enc=self.n_enc, n_heads=self.n_heads,
                            ffn_dims=tuple(self.ffn_dims))
        tr = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                         k=self.k, stride=self.stride, lr_max=self.lr_max,
                         seed=self.seed)
        return net, tr

    def fit(self, X, y=None):
        """Learn linking from labeled scenes (y is ignored)."""
        scenes = check_scenes(X, require_labels=True)
        net_cfg, train_cfg = self._configs(len(scenes[0].class_names))
        aug = AugmentConfig() if self.augment else None
        result = train(scenes, net_cfg, train_cfg, aug_cfg=aug, quiet=True)
        self.params_ = result.params
        self.net_cfg_ = net_cfg
        self.class_names_ = scenes[0].class_names
        self.history_ = result.history
        return self

    def transform(self, X):
        """Linking-score matrices for every k-window of every scene."""
        check_is_fitted(self, "params_")
        scenes = check_scenes(X)
        from .trackdb import build_windows
        scorer = LinkScorer(self.params_, self.net_cfg_)
        out = []
        for scene in scenes:
            out.append([scorer(w)[0] for w in build_windows(scene, self.k)
                        if w.n_boxes > 0])
        return out

    def predict(self, X) -> list[list[Track]]:
        """Tracks per scene, using the configured mode."""
        check_is_fitted(self, "params_")
        scenes = check_scenes(X)
        if self.mode not in ("online", "offline"):
            raise ValueError(f"mode must be online or offline, got {self.mode!r}")
        cfg = OnlineConfig(k=self.k)
        out = []
        for scene in scenes:
            scorer = LinkScorer(self.params_, self.net_cfg_)
            if self.mode == "offline":
                out.append(run_offline(scene, scorer, self.k, cfg))
            else:
                rows, tracker = run_online(scene, scorer, cfg)
                out.append([tr for tr in tracker.tracks
                            if tr.status is not TrackStatus.UNCONFIRMED])
        return out

    def score(self, X, y=None) -> float:
        """Overall MOTA of predict(X) against the scenes' own GT tracks."""
        scenes = check_scenes(X)
        preds = self.predict(scenes)
        pairs = [(p, s.gt_tracks) for p, s in zip(preds, scenes)]
        return evaluate_scenes(pairs, scenes[0].class_names, samota=False).overall.mota
