"""End-to-end experiment stages: generate, fit, encode, train-eval.

Each stage writes into a directory keyed by a hash of the config sections it
depends on and skips work whose outputs already exist, so interrupted runs
resume where they stopped.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import io
from .classifier import metrics_from_predictions, predict_scores, train_ovr
from .codebook import GMM_SAMPLE_BUDGET, KMEANS_SAMPLE_BUDGET, gmm_fit, kmeans_fit, sample_rows
from .config import ExperimentConfig, split_channel
from .datagen import SPLITS, generate, separable_spec, standard_spec
from .encoders import encode_lcc, fit_ltc_projections
from .encoders.supervector import ltc_residual_sets
from .errors import ConfigurationError, InsufficientDataError, ManifestError
from .fusion import ChannelModels, encode_video, fuse_descriptor_level, fuse_representation_level, fuse_score_level
from .preprocess import apply_whiten, fit_whiten

log = logging.getLogger(__name__)

LTC_SAMPLE_BUDGET = 5_000


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    label: str
    split: str
    paths: dict  # base channel -> descriptor file


def videos_from_manifest(rows: list[io.ManifestRow]) -> list[VideoEntry]:
    by_id: dict[str, VideoEntry] = {}
    for r in rows:
        v = by_id.get(r.video_id)
        if v is None:
            v = by_id[r.video_id] = VideoEntry(r.video_id, r.label, r.split, {})
        elif (v.label, v.split) != (r.label, r.split):
            raise ManifestError(f"video {r.video_id!r} has inconsistent label/split across channels")
        v.paths[r.channel] = r.path
    return list(by_id.values())


def load_channel(video: VideoEntry, channel: str) -> np.ndarray:
    """Descriptors for a channel; ``"A+B"`` concatenates aligned A and B descriptors."""
    parts = []
    for base in split_channel(channel):
        if base not in video.paths:
            raise ManifestError(f"video {video.video_id!r} has no {base!r} descriptors")
        data, _ = io.read_descriptors(video.paths[base])
        parts.append((base, data))
    return np.asarray(fuse_descriptor_level(parts), dtype=np.float64)


def _stage_dir(cfg: ExperimentConfig, stage: str) -> Path:
    sub = {"fit": "models", "encode": "reps", "train-eval": "results"}[stage]
    return cfg.output / sub / cfg.stage_hash(stage)


def _safe(name: str) -> str:
    return name.replace("+", "_")


# generate


def dataset_spec(cfg: ExperimentConfig):
    gen = cfg.raw.get("generate")
    if gen is None:
        raise ConfigurationError("config has no 'generate' section")
    seed = gen.get("seed", cfg.seed)
    if gen.get("benchmark", "standard") == "separable":
        spec = separable_spec(seed=seed, videos_per_class=gen.get("videos_per_class"))
    else:
        spec = standard_spec(seed=seed, videos_per_class=gen.get("videos_per_class"))
    if "descriptors_per_video" in gen:
        spec = replace(spec, descriptors_per_video=tuple(gen["descriptors_per_video"]))
    return spec


def cmd_generate(cfg: ExperimentConfig) -> Path:
    """Write one descriptor file per (video, channel) plus the manifest."""
    ds = generate(dataset_spec(cfg))
    manifest = cfg.manifest
    root = manifest.parent
    rows = []
    for v in ds.videos:
        for ch, data in v.descriptors.items():
            rel = Path(v.split) / f"{v.video_id}_{ch}.bvwd"
            io.write_descriptors(root / rel, data, ch)
            rows.append(io.ManifestRow(v.video_id, v.label, v.split, ch, rel.as_posix()))
    io.write_manifest(manifest, rows)
    log.info("generated %d videos, %d descriptor files", len(ds.videos), len(rows))
    return manifest


# fit


def _model_path(model_dir: Path, channel: str, name: str) -> Path:
    return model_dir / _safe(channel) / f"{name}.bvw"


def _fit_channel(cfg: ExperimentConfig, channel: str, index: int, videos: list[VideoEntry], model_dir: Path) -> dict:
    train = [v for v in videos if v.split == "train"]
    X = np.concatenate([load_channel(v, channel) for v in train]) if train else np.zeros((0, 0))
    report = {"descriptors": int(len(X))}
    if len(X) == 0:
        raise InsufficientDataError(f"no training descriptors for channel {channel!r}")
    root = np.random.SeedSequence(cfg.seed, spawn_key=(index,))
    seeds = [int(s.generate_state(1)[0]) for s in root.spawn(len(cfg.raw["codebooks"]) + 1)]

    pre = cfg.raw["preprocess"]
    if pre.get("whiten", True):
        out_dim = pre.get("output_dims", {}).get(channel, X.shape[1])
        sample = sample_rows(X, GMM_SAMPLE_BUDGET, np.random.default_rng(seeds[-1]))
        w = io.parse_model(io.model_bytes(fit_whiten(sample, out_dim)))
        io.write_model(_model_path(model_dir, channel, "whiten"), w)
        X = apply_whiten(w, X)
        report["whiten"] = {"input_dim": w.input_dim, "output_dim": w.output_dim, "sampled": int(len(sample))}

    books = {}
    for i, (name, book) in enumerate(sorted(cfg.raw["codebooks"].items())):
        rng = np.random.default_rng(seeds[i])
        iters = book.get("max_iters", 100)
        if book["type"] == "gmm":
            sample = sample_rows(X, book.get("sample_budget", GMM_SAMPLE_BUDGET), rng)
            model = gmm_fit(sample, book["size"], max_iters=iters, seed=seeds[i])
            entry = {"type": "gmm", "sampled": int(len(sample)), "iterations": len(model.loglik_history),
                     "final_loglik": model.loglik_history[-1] if model.loglik_history else None}
        else:
            sample = sample_rows(X, book.get("sample_budget", KMEANS_SAMPLE_BUDGET), rng)
            model = kmeans_fit(sample, book["size"], max_iters=iters, seed=seeds[i])
            entry = {"type": "kmeans", "sampled": int(len(sample)), "iterations": len(model.objective_history),
                     "final_objective": model.objective_history[-1]}
        model = io.parse_model(io.model_bytes(model))
        io.write_model(_model_path(model_dir, channel, f"codebook_{name}"), model)
        books[name] = model
        report[name] = entry

    for enc in cfg.encoders.values():
        if enc.spec.tag != "ltc":
            continue
        cb = books[enc.codebook]
        C = enc.spec.params.get("ltc_dim") or max(1, cb.dim // 2)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(index, 7)))
        sample = sample_rows(X, LTC_SAMPLE_BUDGET, rng)
        codes = encode_lcc(sample, cb, enc.spec.recon_config())
        proj = fit_ltc_projections(ltc_residual_sets(sample, cb, np.atleast_2d(codes)), C)
        io.write_model(_model_path(model_dir, channel, f"ltc_{enc.name}"), proj)
        report[f"ltc_{enc.name}"] = {"intrinsic_dim": C, "padded": int(proj.padded.sum())}
    return report


def cmd_fit(cfg: ExperimentConfig) -> Path:
    """Fit whitening and every configured codebook per channel; persist models and a fit report."""
    model_dir = _stage_dir(cfg, "fit")
    report_path = model_dir / "fit_report.json"
    if report_path.exists():
        log.info("fit: models already present in %s", model_dir)
        return model_dir
    videos = videos_from_manifest(io.read_manifest(cfg.manifest))
    report = {ch: _fit_channel(cfg, ch, i, videos, model_dir) for i, ch in enumerate(cfg.channels)}
    io.write_json(report_path, report)
    return model_dir


def load_channel_models(cfg: ExperimentConfig, model_dir: Path, channel: str) -> dict[str, ChannelModels]:
    """One ``ChannelModels`` per encoder name, checked against the config."""
    wpath = _model_path(model_dir, channel, "whiten")
    whiten = io.read_model(wpath, "whiten") if cfg.raw["preprocess"].get("whiten", True) else None
    out = {}
    for enc in cfg.encoders.values():
        book = cfg.raw["codebooks"][enc.codebook]
        model = io.read_model(_model_path(model_dir, channel, f"codebook_{enc.codebook}"), book["type"])
        if model.size != book["size"]:
            raise ConfigurationError(f"{enc.codebook} on {channel}: model has {model.size} entries, config {book['size']}")
        if whiten is not None and model.dim != whiten.output_dim:
            raise ConfigurationError(f"{enc.codebook} on {channel}: model dim {model.dim} != whitened dim")
        ltc = None
        if enc.spec.tag == "ltc":
            ltc = io.read_model(_model_path(model_dir, channel, f"ltc_{enc.name}"), "ltc")
        if book["type"] == "gmm":
            out[enc.name] = ChannelModels(whiten=whiten, gmm=model, ltc=ltc)
        else:
            out[enc.name] = ChannelModels(whiten=whiten, kmeans={enc.codebook: model}, ltc=ltc)
    return out


# encode

_WORKER: dict = {}


def _init_worker(cfg_raw: dict, base_dir: str, model_dir: str, rep_dir: str) -> None:
    cfg = ExperimentConfig(cfg_raw, base_dir)
    _WORKER.clear()
    _WORKER.update(
        cfg=cfg,
        rep_dir=Path(rep_dir),
        models={ch: load_channel_models(cfg, Path(model_dir), ch) for ch in cfg.channels},
    )


def rep_path(rep_dir: Path, encoder: str, channel: str, video_id: str) -> Path:
    return rep_dir / _safe(encoder) / _safe(channel) / f"{video_id}.bvwr"


def _encode_task(task: tuple[VideoEntry, str]) -> int:
    video, channel = task
    cfg, rep_dir, models = _WORKER["cfg"], _WORKER["rep_dir"], _WORKER["models"]
    x = load_channel(video, channel)
    written = 0
    for enc in cfg.encoders.values():
        out = rep_path(rep_dir, enc.name, channel, video.video_id)
        if out.exists():
            continue
        rep = encode_video(x, enc.spec, models[channel][enc.name], enc.poolnorm,
                           video_id=video.video_id, channel=channel, codebook_key=enc.codebook)
        io.write_representation(out, rep)
        written += 1
    return written


def cmd_encode(cfg: ExperimentConfig) -> Path:
    """Encode, pool and normalise every (video, encoder, channel); existing outputs are kept."""
    model_dir = _stage_dir(cfg, "fit")
    if not (model_dir / "fit_report.json").exists():
        raise ConfigurationError(f"no fitted models in {model_dir}; run 'fit' first")
    rep_dir = _stage_dir(cfg, "encode")
    videos = videos_from_manifest(io.read_manifest(cfg.manifest))
    tasks = [
        (v, ch) for v in videos for ch in cfg.channels
        if not all(rep_path(rep_dir, e, ch, v.video_id).exists() for e in cfg.encoders)
    ]
    init = (cfg.raw, str(cfg.base_dir), str(model_dir), str(rep_dir))
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=init) as pool:
            written = sum(pool.map(_encode_task, tasks, chunksize=max(1, len(tasks) // (4 * cfg.jobs))))
    else:
        _init_worker(*init)
        written = sum(map(_encode_task, tasks))
    log.info("encode: wrote %d representation files", written)
    return rep_dir


# train-eval


def _split_videos(videos: list[VideoEntry]) -> dict[str, list[VideoEntry]]:
    out = {s: [v for v in videos if v.split == s] for s in SPLITS}
    for s, vs in out.items():
        if not vs:
            raise ManifestError(f"manifest has no '{s}' videos")
    return out


def _load_reps(rep_dir: Path, encoders, channels, videos) -> list:
    reps = []
    for v in videos:
        parts = []
        for ch in channels:
            for enc in encoders:
                p = rep_path(rep_dir, enc, ch, v.video_id)
                if not p.exists():
                    raise ConfigurationError(f"missing representation {p}; run 'encode' first")
                parts.append(io.read_representation(p))
        reps.append(parts)
    return reps


def cmd_train_eval(cfg: ExperimentConfig) -> dict:
    """Train and evaluate every configured experiment; write metrics, confusion matrices and a summary."""
    rep_dir = _stage_dir(cfg, "encode")
    out_dir = _stage_dir(cfg, "train-eval")
    split = _split_videos(videos_from_manifest(io.read_manifest(cfg.manifest)))
    y_train = [v.label for v in split["train"]]
    y_test = [v.label for v in split["test"]]
    labels = tuple(sorted(set(y_train)))
    clf = cfg.raw["classifier"]
    summary = {"config_hash": cfg.stage_hash("train-eval"), "experiments": {}}
    for exp in cfg.experiments:
        train = _load_reps(rep_dir, exp.encoders, exp.channels, split["train"])
        test = _load_reps(rep_dir, exp.encoders, exp.channels, split["test"])
        if exp.level == "score":
            scores = []
            for j in range(len(train[0])):
                m = train_ovr([r[j].vector for r in train], y_train, clf["reg_c"], clf["epochs"], cfg.seed)
                io.write_model(out_dir / f"classifier_{exp.name}_{j}.bvw", m)
                scores.append(predict_scores(m, np.stack([r[j].vector for r in test])))
            fused = fuse_score_level(scores, exp.score_mean)
            predicted = [labels[i] for i in np.argmax(fused, axis=1)]
        else:
            Xtr = np.stack([fuse_representation_level(r).vector for r in train])
            Xte = np.stack([fuse_representation_level(r).vector for r in test])
            m = train_ovr(Xtr, y_train, clf["reg_c"], clf["epochs"], cfg.seed)
            io.write_model(out_dir / f"classifier_{exp.name}.bvw", m)
            predicted = [labels[i] for i in np.argmax(predict_scores(m, Xte), axis=1)]
        metrics = metrics_from_predictions(y_test, predicted, labels)
        io.write_metrics(out_dir, exp.name, metrics)
        summary["experiments"][exp.name] = {
            "accuracy": round(metrics.accuracy, 6),
            "encoders": list(exp.encoders),
            "channels": list(exp.channels),
            "level": exp.level,
            "per_class": {c: round(a, 6) for c, a in metrics.per_class_accuracy.items()},
        }
        log.info("%s: accuracy %.4f", exp.name, metrics.accuracy)
    io.write_json(out_dir / "summary.json", summary)
    return summary


def run_all(cfg: ExperimentConfig) -> dict:
    """Generate (if the manifest is missing and a generator is configured), then fit, encode, train-eval."""
    if not cfg.manifest.exists():
        cmd_generate(cfg)
    cmd_fit(cfg)
    cmd_encode(cfg)
    return cmd_train_eval(cfg)
