"""End-to-end segmenter estimator, dataset runs and report files."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import filters
from .connectivity import ConnectivityConfig
from .exceptions import DataIOError, DimensionMismatch, VesselSegError, WriteFailure
from .features import build_stack, training_set
from .forest import RandomForest, save_model
from .growseg import SEED_FRANGI, SeedSet, segment, select_seeds
from .metrics import MetricReport, evaluate
from .raster import check_image, check_mask, load_image, load_mask, save_mask

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("image", "tpr", "tnr", "accuracy", "auc", "f1", "mcc")
UNDEFINED = "undefined"


class VesselSegmenter(BaseEstimator):
    """Random-forest pixel classifier driven by region growing.

    ``fit`` trains the forest on annotated images (connectivity taken from the
    ground truth); ``segment`` grows a vessel mask from automatic Frangi
    seeds or user-supplied ones.

    Parameters
    ----------
    n_trees, max_depth, min_samples_leaf, mtry, random_state, n_jobs
        Forwarded to :class:`~vesselseg.forest.RandomForest`.
    sample_cap : int or None
        Upper bound on training pixels, split evenly across images.
    conn_mode, feature_form, t_c, radial_fraction
        Connectivity feature settings.
    polarity : {"dark", "bright"}
        Vessel contrast; dark for fundus green channel, bright for FA/SLO.
    threshold : float
        Vessel iff probability is strictly above it.
    """

    def __init__(self, n_trees=100, max_depth=None, min_samples_leaf=1, mtry=6,
                 random_state=0, n_jobs=1, sample_cap=None, conn_mode="fraction",
                 feature_form="binary", t_c=0.05, radial_fraction=0.007,
                 polarity=filters.DARK_ON_BRIGHT, threshold=0.5):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.mtry = mtry
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.sample_cap = sample_cap
        self.conn_mode = conn_mode
        self.feature_form = feature_form
        self.t_c = t_c
        self.radial_fraction = radial_fraction
        self.polarity = polarity
        self.threshold = threshold

    @property
    def connectivity_config(self):
        return ConnectivityConfig(self.t_c, self.radial_fraction, self.conn_mode, self.feature_form)

    def _forest(self):
        return RandomForest(
            n_trees=self.n_trees, max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf, mtry=self.mtry,
            random_state=self.random_state, n_jobs=self.n_jobs,
        )

    def samples(self, images, ground_truths, fovs=None, stacks=None):
        """Stacked training matrix ``(X, y)`` for a list of annotated images."""
        n = len(images)
        fovs = [None] * n if fovs is None else list(fovs)
        stacks = [None] * n if stacks is None else list(stacks)
        cap = None if self.sample_cap is None else max(1, self.sample_cap // n)
        cfg = self.connectivity_config
        parts = [
            training_set(img, gt, fov, cfg, cap=cap, seed=self.random_state + k,
                         stack=st, polarity=self.polarity)
            for k, (img, gt, fov, st) in enumerate(zip(images, ground_truths, fovs, stacks))
        ]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def fit(self, images, ground_truths, fovs=None, stacks=None):
        if len(images) != len(ground_truths):
            raise DimensionMismatch("need one ground truth per training image")
        X, y = self.samples(images, ground_truths, fovs, stacks)
        self.forest_ = self._forest().fit(X, y)
        return self

    def seeds(self, image, fov=None):
        cfg = filters.FrangiConfig(
            SEED_FRANGI.sigma_start, SEED_FRANGI.sigma_end, SEED_FRANGI.sigma_step,
            SEED_FRANGI.beta1, SEED_FRANGI.beta2, self.polarity,
        )
        return select_seeds(image, cfg, fov)

    def segment(self, image, fov=None, seeds=None, stack=None):
        """Return ``(mask, scores)`` for one image."""
        check_is_fitted(self, "forest_")
        img = check_image(image)
        if stack is None:
            stack = build_stack(img, self.polarity)
        if seeds is None:
            seeds = self.seeds(img, fov)
        return segment(stack, self.forest_, seeds, self.connectivity_config,
                       self.threshold, fov, image=img)

    def predict(self, image, fov=None, seeds=None):
        return self.segment(image, fov, seeds)[0]


# -- reports -------------------------------------------------------------------


def _fmt(value):
    return UNDEFINED if value is None else f"{value:.6f}"


def mean_report(reports):
    """Unweighted per-image mean; undefined values are skipped."""
    def avg(name):
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        return float(np.mean(vals)) if vals else None

    return MetricReport(avg("tpr"), avg("tnr"), avg("accuracy"), avg("f1"), avg("mcc"), avg("auc"))


def format_report(rows, mean=None):
    lines = [",".join(REPORT_COLUMNS)]
    items = list(rows) + ([("mean", mean)] if mean is not None else [])
    for image_id, r in items:
        lines.append(",".join([image_id] + [_fmt(v) for v in (r.tpr, r.tnr, r.accuracy, r.auc, r.f1, r.mcc)]))
    return "\n".join(lines) + "\n"


def _write_text(path, text):
    try:
        with open(os.fspath(path), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc.strerror or exc}") from exc


def write_report(rows, path, mean=None):
    """CSV with one row per image (``rows`` = ``[(id, MetricReport), ...]``)."""
    _write_text(path, format_report(rows, mean))


def write_roc(roc, path):
    _write_text(path, "fpr,tpr\n" + "".join(f"{f:.6f},{t:.6f}\n" for f, t in roc))


def save_scores(scores, path):
    try:
        with open(os.fspath(path), "wb") as fh:
            np.save(fh, np.asarray(scores, dtype=np.float64))
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc.strerror or exc}") from exc


def load_scores(path):
    try:
        with open(os.fspath(path), "rb") as fh:
            return np.load(fh, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataIOError(f"{path}: cannot read score map") from exc


# -- dataset runs --------------------------------------------------------------


def load_entry(manifest, entry_id):
    """``(image, ground truth, fov or None)`` of a manifest entry."""
    image = load_image(manifest.path(entry_id, "image"))
    gt = check_mask(load_mask(manifest.path(entry_id, "gt")), image.shape, "ground truth")
    fov_path = manifest.path(entry_id, "fov")
    fov = None if fov_path is None else check_mask(load_mask(fov_path), image.shape, "fov")
    return image, gt, fov


def _annotated(entry_id, exc):
    try:
        return type(exc)(f"[{entry_id}] {exc}")
    except TypeError:
        return exc


@dataclass
class PipelineResult:
    reports: list = field(default_factory=list)
    mean: MetricReport | None = None
    segmenter: VesselSegmenter | None = None


def run_pipeline(manifest, out_dir, segmenter=None):
    """Train on the manifest's train ids, segment and score every test id.

    Writes ``model.elrf``, ``masks/<id>.pgm``, ``scores/<id>.npy``,
    ``roc/<id>.csv`` and ``summary.csv`` under ``out_dir``.
    """
    if segmenter is None:
        segmenter = VesselSegmenter()
    segmenter.set_params(polarity=manifest.polarity)
    for sub in ("masks", "scores", "roc"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    t0 = time.perf_counter()
    train = []
    for entry_id in manifest.train:
        try:
            train.append(load_entry(manifest, entry_id))
        except VesselSegError as exc:
            raise _annotated(entry_id, exc) from exc
    segmenter.fit([t[0] for t in train], [t[1] for t in train], [t[2] for t in train])
    save_model(segmenter.forest_, os.path.join(out_dir, "model.elrf"))
    log.info("trained on %d image(s) in %.1f s", len(train), time.perf_counter() - t0)

    result = PipelineResult(segmenter=segmenter)
    t0 = time.perf_counter()
    for entry_id in manifest.test:
        try:
            image, gt, fov = load_entry(manifest, entry_id)
            mask, scores = segmenter.segment(image, fov)
            report = evaluate(mask, gt, fov, scores)
        except VesselSegError as exc:
            raise _annotated(entry_id, exc) from exc
        save_mask(mask, os.path.join(out_dir, "masks", f"{entry_id}.pgm"))
        save_scores(scores, os.path.join(out_dir, "scores", f"{entry_id}.npy"))
        write_roc(report.roc, os.path.join(out_dir, "roc", f"{entry_id}.csv"))
        result.reports.append((entry_id, report))
        log.info("%s: acc %.4f auc %.4f", entry_id, report.accuracy, report.auc or float("nan"))
    log.info("tested %d image(s) in %.1f s", len(manifest.test), time.perf_counter() - t0)
    result.mean = mean_report([r for _, r in result.reports])
    write_report(result.reports, os.path.join(out_dir, "summary.csv"), result.mean)
    return result


def held_out_samples(manifest, segmenter, ids=None, cap=None, seed=0):
    """Ground-truth-connectivity samples of the test images, for feature ranking."""
    ids = manifest.test if ids is None else ids
    per = None if cap is None else max(1, cap // len(ids))
    parts = []
    cfg = segmenter.connectivity_config
    for k, entry_id in enumerate(ids):
        image, gt, fov = load_entry(manifest, entry_id)
        parts.append(training_set(image, gt, fov, cfg, cap=per, seed=seed + k,
                                  polarity=manifest.polarity))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def seeds_from_mask(mask):
    return SeedSet.from_mask(mask)
