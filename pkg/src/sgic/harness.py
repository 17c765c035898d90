"""Orchestration: encode/decode entry points, controller training pipeline,
rate-distortion sweeps, the three-variant ablation, and the timing study.

Modes:
  full        decoder-side similarity masks, controller-predicted plan
  no_clipseg  8x8 grid map written into the bitstream (encoder-side masks,
              billed to bpp), controller-predicted plan
  no_cad      decoder-side masks, fixed plan (40 steps, cfg 4.0)

All commands are deterministic given (inputs, config, seed), except the
wall-clock fields in reports. Per-image seeds derive from the run seed and
the image id, so results do not depend on worker count or input order.
"""

from __future__ import annotations

import json
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import bitstream, corpus, raster
from .controller import (
    LAMBDA_CFG,
    LAMBDA_STEPS,
    Mlp,
    ORACLE_CFGS,
    ORACLE_STEPS,
    TrainConfig,
    gradient_check,
    init_mlp,
    load_mlp,
    oracle_labels,
    save_mlp,
    train,
)
from .diffusion import (
    NoiseSchedule,
    ToyDenoiser,
    ToyTrainConfig,
    decode,
    make_schedule,
    train_toy_denoiser,
    upsample2x,
)
from .embedding import FixtureEmbedder, ToyEmbedder, load_text_overrides
from .errors import ConfigInvalid, DatasetTooSmall
from .features import fit_schema, raw_features
from .initial_codec import InitialCodecConfig, decode_initial, downsample_half, encode_initial
from .metrics import load_range_table, normalize_and_group, reference_metrics
from .segmentation import grid_assign, grid_encode
from .semantics import (
    FixtureDescriber,
    GatewayDescriber,
    SemanticDescription,
    describe,
    serialize,
)

MODES = ("full", "no_clipseg", "no_cad")
BASELINE_STEPS = 40
BASELINE_CFG = 4.0

CSV_COLUMNS = (
    "kind",
    "codec",
    "variant",
    "quality",
    "image",
    "bpp",
    "psnr",
    "ssim",
    "ms_ssim",
    "perceptual_distance",
    "entropy",
    "rms_contrast",
    "colorfulness",
    "noise_sigma",
    "quality_alignment",
    "pixel",
    "perceptual_similarity",
    "perceptual_quality",
    "error",
)


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "toy"  # "toy" or a directory of PNG/PPM images
    corpus_n: int = corpus.CORPUS_SIZE
    corpus_seed: int = corpus.CORPUS_SEED
    corpus_hw: int = corpus.SCENE_HW
    embedder: str = "fixture"  # toy | fixture | gateway
    describer: str = "fixture"  # fixture | gateway
    describer_fixtures: str | None = None
    text_overrides: str | None = None
    gateway_url: str | None = None
    quality: int = 4
    qualities: tuple[int, ...] = (2, 4, 6)
    seed: int = 0
    mode: str = "full"
    workers: int = 1
    out_dir: str = "out"
    steps_model: str | None = None
    cfg_model: str | None = None
    denoiser_weights: str | None = None
    strength_a: float = 0.6
    strength_masked: float = 0.3
    denoiser_epochs: int = 6
    controller_epochs: int = 4000
    controller_lr: float = 0.1
    oracle_steps: tuple[int, ...] = ORACLE_STEPS
    oracle_cfgs: tuple[float, ...] = ORACLE_CFGS
    timing_images: int = 5
    timing_reps: int = 5
    timing_mean: bool = False  # False: median of reps; True: plain mean


_CONFIG_FIELDS = {f.name: f for f in RunConfig.__dataclass_fields__.values()}


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fp:
            data = json.load(fp)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigInvalid("config root must be an object")
    unknown = set(data) - set(_CONFIG_FIELDS)
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    cfg = replace(RunConfig(), **coerced)
    if cfg.mode not in MODES:
        raise ConfigInvalid(f"mode must be one of {MODES}, got {cfg.mode!r}")
    if cfg.embedder not in ("toy", "fixture", "gateway"):
        raise ConfigInvalid(f"embedder must be toy|fixture|gateway, got {cfg.embedder!r}")
    if cfg.describer not in ("fixture", "gateway"):
        raise ConfigInvalid(f"describer must be fixture|gateway, got {cfg.describer!r}")
    if cfg.workers < 1:
        raise ConfigInvalid(f"workers must be >= 1, got {cfg.workers}")
    return cfg


def image_seed(base: int, image_id: str) -> int:
    return (base * 1000003 + zlib.crc32(image_id.encode("utf-8"))) % (1 << 62)


@dataclass
class Dataset:
    items: list[tuple[str, np.ndarray]]  # (image_id, image), deterministic order
    describer: object
    embedder: object
    toy_corpus: list[corpus.CorpusItem] | None = None


def build_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset == "toy":
        toy = corpus.build_corpus(cfg.corpus_n, cfg.corpus_seed, cfg.corpus_hw)
        embedder = _pick_embedder(cfg, corpus.corpus_text_overrides(toy))
        describer = corpus.CorpusDescriber(toy) if cfg.describer == "fixture" else _gateway_describer(cfg)
        return Dataset(
            items=[(e.image_id, e.image) for e in toy],
            describer=describer,
            embedder=embedder,
            toy_corpus=toy,
        )
    root = Path(cfg.dataset)
    if not root.is_dir():
        raise ConfigInvalid(f"dataset directory {root} does not exist")
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in (".png", ".ppm"))
    if not paths:
        raise ConfigInvalid(f"no PNG/PPM images under {root}")
    items = [(p.stem, raster.load_image(p)) for p in paths]
    overrides = load_text_overrides(cfg.text_overrides) if cfg.text_overrides else {}
    embedder = _pick_embedder(cfg, overrides)
    if cfg.describer == "fixture":
        if not cfg.describer_fixtures:
            raise ConfigInvalid("directory datasets need describer_fixtures in fixture mode")
        describer = FixtureDescriber(cfg.describer_fixtures)
    else:
        describer = _gateway_describer(cfg)
    return Dataset(items=items, describer=describer, embedder=embedder)


def _pick_embedder(cfg: RunConfig, overrides: dict):
    if cfg.embedder == "toy":
        return ToyEmbedder()
    if cfg.embedder == "fixture":
        return FixtureEmbedder(ToyEmbedder(), text_overrides=overrides)
    from .gateway_client import GatewayEmbedder

    return GatewayEmbedder(cfg.gateway_url, fallback=ToyEmbedder())


def _gateway_describer(cfg: RunConfig) -> GatewayDescriber:
    if not cfg.gateway_url:
        raise ConfigInvalid("describer 'gateway' needs gateway_url")
    return GatewayDescriber(cfg.gateway_url)


def encode_image(
    img: np.ndarray,
    desc: SemanticDescription,
    embedder,
    quality: int,
    with_grid: bool,
) -> bitstream.CompressedImage:
    h, w = img.shape[:2]
    latent = encode_initial(downsample_half(img), InitialCodecConfig(quality=quality))
    grid_payload = None
    if with_grid:
        g = grid_assign(img, desc, embedder)
        grid_payload = grid_encode(g, len(desc.items))
    packed = bitstream.pack(w, h, serialize(desc), latent, grid_map=grid_payload)
    return bitstream.unpack(packed)


@dataclass
class Pipeline:
    """Everything a decode needs, bundled for reuse across commands."""

    cfg: RunConfig
    dataset: Dataset
    schedule: NoiseSchedule
    denoiser: ToyDenoiser
    models: tuple[Mlp, Mlp] | None

    def encode(self, image_id: str, img: np.ndarray, quality: int | None = None, mode: str | None = None):
        mode = mode or self.cfg.mode
        desc = describe(img, self.dataset.describer)
        return encode_image(
            img,
            desc,
            self.dataset.embedder,
            self.cfg.quality if quality is None else quality,
            with_grid=mode == "no_clipseg",
        )

    def decode(self, c: bitstream.CompressedImage, image_id: str, mode: str | None = None):
        mode = mode or self.cfg.mode
        overrides = (BASELINE_STEPS, BASELINE_CFG) if mode == "no_cad" else None
        return decode(
            c,
            self.dataset.embedder,
            self.denoiser,
            self.schedule,
            models=self.models,
            overrides=overrides,
            seed=image_seed(self.cfg.seed, image_id),
            strength_a=self.cfg.strength_a,
            strength_masked=self.cfg.strength_masked,
        )


def _denoiser_path(cfg: RunConfig) -> Path:
    return Path(cfg.denoiser_weights or Path(cfg.out_dir) / "toy_denoiser.sgtd")


def _model_paths(cfg: RunConfig) -> tuple[Path, Path]:
    return (
        Path(cfg.steps_model or Path(cfg.out_dir) / "steps_mlp.sgmc"),
        Path(cfg.cfg_model or Path(cfg.out_dir) / "cfg_mlp.sgmc"),
    )


DENOISER_MIN_IMAGES = 200


def _denoiser_training_set(cfg: RunConfig, dataset: Dataset) -> tuple[list, list]:
    """(images, text embeddings) for denoiser training. A dataset below the
    trainer's minimum is replaced by a generated corpus from a shifted seed,
    disjoint from the evaluation scenes but from the same distribution."""
    if len(dataset.items) >= DENOISER_MIN_IMAGES:
        pairs = dataset.items
        describer = dataset.describer
    else:
        train_corpus = corpus.build_corpus(
            DENOISER_MIN_IMAGES + 20, cfg.corpus_seed + 1009, cfg.corpus_hw
        )
        pairs = [(e.image_id, e.image) for e in train_corpus]
        describer = corpus.CorpusDescriber(train_corpus)
    images = []
    texts = []
    for _, img in pairs:
        desc = describe(img, describer)
        text = desc.overall.strip() or " ".join(desc.names())
        images.append(img)
        texts.append(
            dataset.embedder.embed_text(text) if text else np.zeros(dataset.embedder.dim)
        )
    return images, texts


def ensure_denoiser(cfg: RunConfig, dataset: Dataset, schedule: NoiseSchedule) -> ToyDenoiser:
    """Load the denoiser weights, training them first when absent.

    Training guides are codec round trips of the training images, matching
    what the sampler sees at decode time.
    """
    path = _denoiser_path(cfg)
    if path.exists():
        return ToyDenoiser.load(path, schedule)
    images, texts = _denoiser_training_set(cfg, dataset)
    guides = [
        upsample2x(decode_initial(encode_initial(downsample_half(img), InitialCodecConfig(quality=cfg.quality))))
        for img in images
    ]
    denoiser, _ = train_toy_denoiser(
        images,
        schedule,
        ToyTrainConfig(epochs=cfg.denoiser_epochs, seed=cfg.seed),
        text_embeddings=texts,
        guides=guides,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    denoiser.save(path)
    return denoiser


def build_pipeline(cfg: RunConfig, need_models: bool = True) -> Pipeline:
    dataset = build_dataset(cfg)
    schedule = make_schedule()
    denoiser = ensure_denoiser(cfg, dataset, schedule)
    models = None
    if need_models and cfg.mode != "no_cad":
        steps_path, cfg_path = _model_paths(cfg)
        if not steps_path.exists() or not cfg_path.exists():
            raise ConfigInvalid(
                f"controller models missing ({steps_path}, {cfg_path}); run the train command first"
            )
        m_steps, _ = load_mlp(steps_path)
        m_cfg, _ = load_mlp(cfg_path)
        models = (m_steps, m_cfg)
    return Pipeline(cfg=cfg, dataset=dataset, schedule=schedule, denoiser=denoiser, models=models)


def _parallel(items, fn, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- training


def _label_cache_key(cfg: RunConfig, dataset: Dataset) -> str:
    ids = ",".join(image_id for image_id, _ in dataset.items)
    blob = json.dumps(
        {
            "ids": ids,
            "quality": cfg.quality,
            "seed": cfg.seed,
            "steps": list(cfg.oracle_steps),
            "cfgs": list(cfg.oracle_cfgs),
            "strength_a": cfg.strength_a,
            "strength_masked": cfg.strength_masked,
            "denoiser_epochs": cfg.denoiser_epochs,
        },
        sort_keys=True,
    )
    return f"{zlib.crc32(blob.encode()):08x}"


def _ensure_labels(cfg: RunConfig, dataset: Dataset, schedule, denoiser, encoded) -> tuple[list[dict], dict, str]:
    """Oracle grid sweep, cached under out_dir keyed by the config hash."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_path = out_dir / "oracle_labels.json"
    cache_key = _label_cache_key(cfg, dataset)
    if cache_path.exists():
        cached = json.loads(cache_path.read_text())
        if cached.get("key") == cache_key:
            return cached["labels"], cached.get("failures", {}), cache_key

    def decode_fn(image_id: str, steps: int, cfg_scale: float):
        img, _ = decode(
            encoded[image_id],
            dataset.embedder,
            denoiser,
            schedule,
            overrides=(steps, cfg_scale),
            seed=image_seed(cfg.seed, image_id),
            strength_a=cfg.strength_a,
            strength_masked=cfg.strength_masked,
        )
        return img

    label_objs, failures = oracle_labels(
        dataset.items,
        decode_fn,
        dataset.embedder,
        steps_grid=tuple(cfg.oracle_steps),
        cfg_grid=tuple(cfg.oracle_cfgs),
    )
    labels = [
        {
            "image_id": l.image_id,
            "best_steps": l.best_steps,
            "best_cfg": l.best_cfg,
            "y_steps": l.y_steps,
            "y_cfg": l.y_cfg,
        }
        for l in label_objs
    ]
    cache_path.write_text(
        json.dumps({"key": cache_key, "labels": labels, "failures": failures}, indent=1)
    )
    return labels, failures, cache_key


def _encode_all(cfg: RunConfig, dataset: Dataset) -> dict[str, bitstream.CompressedImage]:
    out = {}
    for image_id, img in dataset.items:
        desc = describe(img, dataset.describer)
        out[image_id] = encode_image(img, desc, dataset.embedder, cfg.quality, with_grid=False)
    return out


def run_training(cfg: RunConfig) -> dict:
    """Oracle sweep (cached by config hash), then both MLP fits."""
    dataset = build_dataset(cfg)
    schedule = make_schedule()
    denoiser = ensure_denoiser(cfg, dataset, schedule)
    encoded = _encode_all(cfg, dataset)
    labels, failures, cache_key = _ensure_labels(cfg, dataset, schedule, denoiser, encoded)
    if not labels:
        raise DatasetTooSmall(f"oracle labeling failed on every image: {failures}")

    labeled_ids = {l["image_id"] for l in labels}
    feats = []
    for image_id, img in dataset.items:
        if image_id not in labeled_ids:
            continue
        x_initial = decode_initial(encoded[image_id].latent_payload)
        desc = describe(img, dataset.describer)
        feats.append(raw_features(x_initial, desc, dataset.embedder))
    raws = np.stack(feats)
    schema = fit_schema(raws)
    z = schema.normalize(raws)
    y_steps = np.array([l["y_steps"] for l in labels])
    y_cfg = np.array([l["y_cfg"] for l in labels])

    # Held-out pass first for an honest validation number, then a refit on
    # every labeled image for the deployed weights. The corpus the controller
    # serves is the corpus it was labeled on, so nothing is gained by holding
    # a slice back from the final fit, and with this few samples a best-val
    # checkpoint tends to be a barely trained one.
    tc_report = TrainConfig(seed=cfg.seed, epochs=cfg.controller_epochs, lr=cfg.controller_lr)
    _, hist_steps = train(init_mlp(schema, seed=cfg.seed), z, y_steps, LAMBDA_STEPS, tc_report)
    _, hist_cfg = train(init_mlp(schema, seed=cfg.seed + 1), z, y_cfg, LAMBDA_CFG, tc_report)
    tc_fit = TrainConfig(
        seed=cfg.seed, epochs=cfg.controller_epochs, lr=cfg.controller_lr,
        val_frac=0.0, patience=cfg.controller_epochs,
    )
    m_steps, fit_steps = train(init_mlp(schema, seed=cfg.seed), z, y_steps, LAMBDA_STEPS, tc_fit)
    m_cfg, fit_cfg = train(init_mlp(schema, seed=cfg.seed + 1), z, y_cfg, LAMBDA_CFG, tc_fit)
    steps_path, cfg_path = _model_paths(cfg)
    steps_path.parent.mkdir(parents=True, exist_ok=True)
    save_mlp(m_steps, steps_path, LAMBDA_STEPS)
    save_mlp(m_cfg, cfg_path, LAMBDA_CFG)
    gc_steps = float(gradient_check(m_steps, z[0], y=float(y_steps[0]), lam=LAMBDA_STEPS))
    gc_cfg = float(gradient_check(m_cfg, z[0], y=float(y_cfg[0]), lam=LAMBDA_CFG))
    return {
        "labels": len(labels),
        "failures": failures,
        "cache_key": cache_key,
        "steps_model": str(steps_path),
        "cfg_model": str(cfg_path),
        "lambda_steps": LAMBDA_STEPS,
        "lambda_cfg": LAMBDA_CFG,
        "val_loss_steps": hist_steps["best_val"],
        "val_loss_cfg": hist_cfg["best_val"],
        "fit_loss_steps": fit_steps["best_val"],
        "fit_loss_cfg": fit_cfg["best_val"],
        "gradient_check_steps": gc_steps,
        "gradient_check_cfg": gc_cfg,
    }


def run_sweep(cfg: RunConfig) -> dict:
    """Oracle label sweep only; leaves the cache for a later train run."""
    dataset = build_dataset(cfg)
    schedule = make_schedule()
    denoiser = ensure_denoiser(cfg, dataset, schedule)
    encoded = _encode_all(cfg, dataset)
    labels, failures, cache_key = _ensure_labels(cfg, dataset, schedule, denoiser, encoded)
    return {"labels": len(labels), "failures": failures, "cache_key": cache_key}


# ------------------------------------------------------------- evaluation


def _metric_row(kind, variant, quality, image_id, bpp_value, raw, report) -> dict:
    row = {
        "kind": kind,
        "codec": "sgic",
        "variant": variant,
        "quality": quality,
        "image": image_id,
        "bpp": bpp_value,
    }
    for name in (
        "psnr",
        "ssim",
        "ms_ssim",
        "perceptual_distance",
        "entropy",
        "rms_contrast",
        "colorfulness",
        "noise_sigma",
        "quality_alignment",
    ):
        row[name] = raw.get(name, "")
    row["pixel"] = report.group_means.get("pixel", "")
    row["perceptual_similarity"] = report.group_means.get("perceptual-similarity", "")
    row["perceptual_quality"] = report.group_means.get("perceptual-quality", "")
    row["error"] = ""
    return row


def _write_csv(path: Path, rows: list[dict]) -> None:
    import csv

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.DictWriter(fp, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def _evaluate_variant(pipe: Pipeline, variant: str, quality: int, table) -> list[dict]:
    def one(entry):
        image_id, img = entry
        try:
            c = pipe.encode(image_id, img, quality=quality, mode=variant)
            decoded, _ = pipe.decode(c, image_id, mode=variant)
            raw = reference_metrics(img, decoded, pipe.dataset.embedder)
            report = normalize_and_group(raw, table, bpp=bitstream.bpp(c))
        except Exception as exc:  # failure marker row; the sweep keeps going
            row = dict.fromkeys(CSV_COLUMNS, "")
            row.update(kind="failure", codec="sgic", variant=variant, quality=quality, image=image_id)
            row["error"] = f"{type(exc).__name__}: {exc}"
            return row
        return _metric_row("per_image", variant, quality, image_id, report.bpp, raw, report)

    rows = _parallel(pipe.dataset.items, one, pipe.cfg.workers)
    agg = {"kind": "aggregate", "codec": "sgic", "variant": variant, "quality": quality, "image": "", "error": ""}
    numeric = [k for k in CSV_COLUMNS if k not in ("kind", "codec", "variant", "quality", "image", "error")]
    for key in numeric:
        vals = [
            r[key]
            for r in rows
            if r["kind"] == "per_image" and isinstance(r[key], (int, float)) and np.isfinite(r[key])
        ]
        agg[key] = float(np.mean(vals)) if vals else ""
    return rows + [agg]


def run_rd(cfg: RunConfig) -> Path:
    """Rate-distortion table over the quality ladder for full and no_clipseg."""
    pipe = build_pipeline(cfg)
    table = load_range_table()
    rows: list[dict] = []
    for quality in cfg.qualities:
        for variant in ("full", "no_clipseg"):
            rows.extend(_evaluate_variant(pipe, variant, quality, table))
    out = Path(cfg.out_dir) / "rd_sweep.csv"
    _write_csv(out, rows)
    return out


def run_ablate(cfg: RunConfig) -> Path:
    """Three-variant comparison at the configured quality."""
    pipe = build_pipeline(cfg)
    table = load_range_table()
    rows: list[dict] = []
    for variant in MODES:
        rows.extend(_evaluate_variant(pipe, variant, cfg.quality, table))
    out = Path(cfg.out_dir) / "ablation.csv"
    _write_csv(out, rows)
    return out


# ----------------------------------------------------------------- timing


def _clock(fn, reps: int, use_mean: bool) -> float:
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.mean(samples) if use_mean else np.median(samples))


def run_timing(cfg: RunConfig) -> dict:
    """Encode (default vs no_clipseg) and decode (adaptive vs fixed-plan)
    wall-clock, median of reps per image, averaged over the subset."""
    pipe = build_pipeline(cfg)
    subset = pipe.dataset.items[: cfg.timing_images]
    enc_base = []
    enc_ours = []
    dec_base = []
    dec_ours = []
    predicted_steps = []
    for image_id, img in subset:
        enc_ours.append(
            _clock(lambda: pipe.encode(image_id, img, mode="full"), cfg.timing_reps, cfg.timing_mean)
        )
        enc_base.append(
            _clock(
                lambda: pipe.encode(image_id, img, mode="no_clipseg"),
                cfg.timing_reps,
                cfg.timing_mean,
            )
        )
        c_full = pipe.encode(image_id, img, mode="full")
        _, rep = pipe.decode(c_full, image_id, mode="full")
        predicted_steps.append(rep.plan.steps)
        dec_ours.append(
            _clock(lambda: pipe.decode(c_full, image_id, mode="full"), cfg.timing_reps, cfg.timing_mean)
        )
        dec_base.append(
            _clock(
                lambda: pipe.decode(c_full, image_id, mode="no_cad"), cfg.timing_reps, cfg.timing_mean
            )
        )

    def pct(base: float, ours: float) -> float:
        return 100.0 * (base - ours) / base if base > 0 else 0.0

    enc_b, enc_o = float(np.mean(enc_base)), float(np.mean(enc_ours))
    dec_b, dec_o = float(np.mean(dec_base)), float(np.mean(dec_ours))
    result = {
        "rows": {
            "Encoding": {"baseline_s": enc_b, "ours_s": enc_o, "reduction_pct": pct(enc_b, enc_o)},
            "Decoding": {"baseline_s": dec_b, "ours_s": dec_o, "reduction_pct": pct(dec_b, dec_o)},
        },
        "mean_predicted_steps": float(np.mean(predicted_steps)),
        "images": len(subset),
        "reps": cfg.timing_reps,
        "aggregation": "mean" if cfg.timing_mean else "median",
    }
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "timing.json").write_text(json.dumps(result, indent=1))
    return result
