"""Training, inference, and evaluation loops plus the ablation sweeps."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, apply_overrides, config_hash
from .diffusion import (
    degrade_terminal,
    forward_diffuse,
    make_residual,
    reverse_step,
    timestep_plan,
)
from .losses import (
    LossWeights,
    build_extractor,
    diffusion_loss,
    perceptual_loss,
    pixel_loss,
    total_loss,
)
from .metrics import feature_stats, frechet_distance, psnr, ssim
from .model import GuidedDiffusionModel, batch_guidance
from .planes import ImagePlane, ROLE_HR, as_tensor
from .resample import degrade_bicubic, make_ref_pair, upsample_bicubic


@dataclass
class TrainItem:
    name: str
    hr: ImagePlane
    lr_up: ImagePlane
    residual: ImagePlane
    ref: ImagePlane
    ref_downup: ImagePlane


@dataclass
class TrainResult:
    model: GuidedDiffusionModel
    losses: list[float]
    checkpoint_path: str
    log_path: str


@dataclass
class InferResult:
    sr: ImagePlane
    predict_calls: int


@dataclass
class EvalReport:
    records: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _loss_weights(cfg: ExperimentConfig) -> LossWeights:
    L = cfg.loss
    return LossWeights(
        lambda_diffusion=L.lambda_diffusion,
        lambda_pixel=L.lambda_pixel,
        lambda_perceptual=L.lambda_perceptual,
        lambda_res=L.lambda_res,
        lambda_eps=L.lambda_eps,
    )


def _prepare_item(cfg: ExperimentConfig, entry, manifest, ref_seed_salt: int = 0) -> TrainItem:
    factor = cfg.data.sr_factor
    hr = data_mod.load_image(entry.path)
    lr = degrade_bicubic(hr, factor)
    lr_up = upsample_bicubic(lr, factor)
    lr_up.role = "lr_up"
    residual = make_residual(lr_up, hr)
    ref_path = data_mod.pair_reference(entry, manifest, cfg.data.pairing, cfg.seed + ref_seed_salt)
    ref_scale = cfg.texture.ref_scale
    if ref_path == data_mod.NOISE_REF_TOKEN:
        c, h, w = hr.shape[-3:]
        ref = data_mod.noise_reference(
            (c, h * ref_scale, w * ref_scale), seed=cfg.seed ^ hash(entry.path) & 0xFFFF
        )
    else:
        ref = data_mod.load_image(ref_path)
    ref_downup = make_ref_pair(ref, factor)
    return TrainItem(
        name=entry.path, hr=hr, lr_up=lr_up, residual=residual, ref=ref, ref_downup=ref_downup
    )


def load_split_items(cfg: ExperimentConfig, manifest, split: str) -> list[TrainItem]:
    entries = manifest.split_entries(split)
    if not entries:
        raise ValueError(f"split {split!r} is empty")
    return [_prepare_item(cfg, e, manifest) for e in entries]


def _write_log(path, records: list[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(records) + ("\n" if records else ""))


def train(cfg: ExperimentConfig, manifest=None, items=None) -> TrainResult:
    """Optimize the guided dual-diffusion model per the training recipe.

    One iteration: draw a batch, a uniform timestep in [1, T] per item and a
    noise plane; jump to the diffused state; compute guidance; predict both
    components; apply the weighted composite loss; Adam step with global-norm
    gradient clipping.  Fully seeded: identical config + seed replays exactly.
    """
    if cfg.run.single_threaded:
        torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)
    if manifest is None:
        manifest = data_mod.DatasetManifest.load(cfg.data.manifest)
    if items is None:
        items = load_split_items(cfg, manifest, data_mod.SPLIT_TRAIN)

    model = GuidedDiffusionModel(cfg)
    model.train()
    sched = model.schedule
    opt = torch.optim.Adam(
        model.parameters(), lr=cfg.optim.lr, betas=(cfg.optim.beta1, cfg.optim.beta2)
    )
    weights = _loss_weights(cfg)
    extractor = build_extractor(cfg.loss.perceptual, cfg.data.image_channels, seed=cfg.seed)

    gen = torch.Generator().manual_seed(cfg.seed)
    out_dir = Path(cfg.run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_lines: list[str] = []
    losses: list[float] = []
    started = time.time()

    for step in range(1, cfg.optim.iterations + 1):
        idx = torch.randint(len(items), (cfg.optim.batch_size,), generator=gen)
        t_batch = torch.randint(1, sched.T + 1, (cfg.optim.batch_size,), generator=gen)
        noised, eps_true, guid_list = [], [], []
        for b, i in enumerate(idx.tolist()):
            item = items[i]
            eps = item.hr.with_data(
                torch.randn(item.hr.shape, generator=gen), role="noise"
            )
            state = forward_diffuse(
                item.hr, item.residual, int(t_batch[b]), eps, sched
            )
            noised.append(as_tensor(state))
            eps_true.append(as_tensor(eps))
            guid_list.append(
                model.guidance(item.lr_up, item.ref_downup, item.ref, generator=gen)
            )
        batch = {
            "noised": torch.stack(noised),
            "lr_up": torch.stack([as_tensor(items[i].lr_up) for i in idx.tolist()]),
            "hr": torch.stack([as_tensor(items[i].hr) for i in idx.tolist()]),
            "res": torch.stack([as_tensor(items[i].residual) for i in idx.tolist()]),
            "eps": torch.stack(eps_true),
        }
        guid = batch_guidance(guid_list)

        eps_pred, res_pred = model.predict(batch["noised"], batch["lr_up"], guid, t_batch)
        l_diff = diffusion_loss(batch["res"], res_pred, batch["eps"], eps_pred, weights)
        abar = torch.as_tensor(
            sched.alpha_bars[t_batch.numpy()], dtype=eps_pred.dtype
        )[:, None, None, None]
        bbar = torch.as_tensor(
            sched.beta_bars[t_batch.numpy()], dtype=eps_pred.dtype
        )[:, None, None, None]
        x0_est = batch["noised"] - abar * res_pred - bbar * eps_pred
        l_pix = pixel_loss(x0_est, batch["hr"])
        l_per = perceptual_loss(x0_est, batch["hr"], extractor)
        try:
            loss = total_loss(l_diff, l_pix, l_per, weights)
        except FloatingPointError as exc:
            diag = {
                "step": step,
                "diffusion": l_diff.item(),
                "pixel": l_pix.item(),
                "perceptual": l_per.item(),
                "config_hash": config_hash(cfg),
            }
            (out_dir / "diagnostic.json").write_text(json.dumps(diag, indent=2))
            raise RuntimeError(f"training diverged at step {step}: {exc}") from exc

        opt.zero_grad()
        loss.backward()
        grad_norm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.optim.grad_clip)
        opt.step()

        losses.append(loss.item())
        if step == 1 or step % cfg.run.log_every == 0 or step == cfg.optim.iterations:
            line = (
                f"step={step} total={loss.item():.6f} diffusion={l_diff.item():.6f} "
                f"pixel={l_pix.item():.6f} perceptual={l_per.item():.6f} "
                f"grad_norm={float(grad_norm):.4f} elapsed={time.time() - started:.1f}"
            )
            log_lines.append(line)
        if cfg.run.val_every and step % cfg.run.val_every == 0:
            val = _validation_loss(cfg, model, manifest, weights, extractor)
            if val is not None:
                log_lines.append(f"step={step} val_diffusion={val:.6f}")
        if cfg.run.checkpoint_every and step % cfg.run.checkpoint_every == 0:
            save_checkpoint(out_dir / f"step_{step:07d}.pt", model, cfg, sched, step)

    ckpt_path = out_dir / "final.pt"
    save_checkpoint(ckpt_path, model, cfg, sched, cfg.optim.iterations)
    log_path = out_dir / "train.log"
    _write_log(log_path, log_lines)
    model.eval()
    return TrainResult(
        model=model, losses=losses, checkpoint_path=str(ckpt_path), log_path=str(log_path)
    )


def _validation_loss(cfg, model, manifest, weights, extractor):
    entries = manifest.split_entries(data_mod.SPLIT_VALIDATION)
    if not entries:
        return None
    item = _prepare_item(cfg, entries[0], manifest)
    sched = model.schedule
    t = max(1, sched.T // 2)
    gen = torch.Generator().manual_seed(cfg.seed ^ 0x5EED)
    eps = item.hr.with_data(torch.randn(item.hr.shape, generator=gen), role="noise")
    state = forward_diffuse(item.hr, item.residual, t, eps, sched)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        guid = model.guidance(item.lr_up, item.ref_downup, item.ref)
        eps_pred, res_pred = model.predict(
            as_tensor(state)[None], as_tensor(item.lr_up)[None], batch_guidance([guid]), t
        )
        val = diffusion_loss(
            as_tensor(item.residual)[None], res_pred, as_tensor(eps)[None], eps_pred, weights
        )
    if was_training:
        model.train()
    return float(val)


def load_model(cfg: ExperimentConfig, checkpoint_path) -> GuidedDiffusionModel:
    payload = load_checkpoint(checkpoint_path, cfg)
    model = GuidedDiffusionModel(cfg)
    model.load_state_dict(payload["params"])
    model.eval()
    return model


def infer(
    cfg: ExperimentConfig,
    lr_img: ImagePlane,
    ref_img: ImagePlane,
    checkpoint=None,
    model: GuidedDiffusionModel | None = None,
    predict_fn=None,
    seed: int | None = None,
) -> InferResult:
    """Reverse-sample a super-resolved image from an LR input and a reference.

    Starts from the terminal state built off the upsampled input, walks the
    subsampled timestep plan, and clamps the final estimate to the nominal
    range.  `predict_fn(noised, lr_up, guid, t) -> (eps, res)` may replace the
    network (used by oracle tests).
    """
    if model is None and predict_fn is None:
        if checkpoint is None:
            raise ValueError("need a model, predict_fn, or checkpoint")
        model = load_model(cfg, checkpoint)
    if model is not None:
        model.eval()
        sched = model.schedule
    else:
        from .schedule import build_schedule

        sched = build_schedule(cfg.schedule.T, cfg.schedule.beta_bar_T, cfg.schedule.shape)

    factor = cfg.data.sr_factor
    lr_up = upsample_bicubic(lr_img, factor)
    lr_up.role = "lr_up"
    ref_downup = make_ref_pair(ref_img, factor)
    gen = torch.Generator().manual_seed(cfg.seed if seed is None else seed)

    with torch.no_grad():
        guid = None
        if model is not None:
            guid = model.guidance(lr_up, ref_downup, ref_img)
        eps0 = lr_up.with_data(torch.randn(lr_up.shape, generator=gen), role="noise")
        state = degrade_terminal(lr_up, eps0, sched)
        plan = timestep_plan(sched.T, cfg.sampler.steps)
        calls = 0
        for t, prev in zip(plan, plan[1:] + [0]):
            if predict_fn is not None:
                eps_pred, res_pred = predict_fn(state, lr_up, guid, t)
            else:
                eps_pred, res_pred = model.predict(state, lr_up, guid, t)
            calls += 1
            noise = state.with_data(torch.randn(state.shape, generator=gen), role="noise")
            state = reverse_step(
                state, res_pred, eps_pred, t, prev, cfg.sampler.eta, noise, sched
            )
    sr = ImagePlane(as_tensor(state), role="sr", value_range=lr_up.value_range).clamped()
    return InferResult(sr=sr, predict_calls=calls)


def evaluate(
    cfg: ExperimentConfig,
    manifest=None,
    split: str = "validation",
    checkpoint=None,
    model: GuidedDiffusionModel | None = None,
    infer_fn=None,
    max_items: int | None = None,
    out_dir=None,
) -> EvalReport:
    """Metrics over a split, with bicubic-baseline deltas per image."""
    if manifest is None:
        manifest = data_mod.DatasetManifest.load(cfg.data.manifest)
    entries = manifest.split_entries(split)
    if not entries:
        raise ValueError(f"split {split!r} is empty")
    if max_items is not None:
        entries = entries[:max_items]
    if model is None and infer_fn is None:
        model = load_model(cfg, checkpoint)

    report = EvalReport()
    factor = cfg.data.sr_factor
    sr_planes, hr_planes = [], []
    for entry in entries:
        item = _prepare_item(cfg, entry, manifest)
        lr = degrade_bicubic(item.hr, factor)
        if infer_fn is not None:
            sr = infer_fn(cfg, lr, item.ref)
        else:
            sr = infer(cfg, lr, item.ref, model=model).sr
        base = item.lr_up.clamped()
        rec = {
            "path": entry.path,
            "psnr": psnr(sr, item.hr),
            "ssim": ssim(sr, item.hr),
            "psnr_bicubic": psnr(base, item.hr),
            "ssim_bicubic": ssim(base, item.hr),
        }
        rec["psnr_delta"] = rec["psnr"] - rec["psnr_bicubic"]
        rec["ssim_delta"] = rec["ssim"] - rec["ssim_bicubic"]
        report.records.append(rec)
        sr_planes.append(sr)
        hr_planes.append(item.hr)

    summary = {
        "split": split,
        "count": len(report.records),
        "psnr": float(np.mean([r["psnr"] for r in report.records])),
        "ssim": float(np.mean([r["ssim"] for r in report.records])),
        "psnr_bicubic": float(np.mean([r["psnr_bicubic"] for r in report.records])),
        "ssim_bicubic": float(np.mean([r["ssim_bicubic"] for r in report.records])),
    }
    summary["psnr_delta"] = summary["psnr"] - summary["psnr_bicubic"]
    summary["ssim_delta"] = summary["ssim"] - summary["ssim_bicubic"]
    if len(sr_planes) >= 2:
        pooled = build_extractor(
            "seeded-conv-pooled", cfg.data.image_channels, seed=cfg.seed
        )
        summary["frechet"] = frechet_distance(
            feature_stats(sr_planes, pooled), feature_stats(hr_planes, pooled)
        )
    report.summary = summary

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = [
            " ".join(f"{k}={v}" for k, v in rec.items()) for rec in report.records
        ]
        _write_log(out_dir / "eval_records.log", lines)
        (out_dir / "eval_summary.json").write_text(json.dumps(summary, indent=2))
    return report


ABLATION_AXES = {
    "variant": "denoiser.variant",
    "noise": "schedule.beta_bar_T",
    "steps": "sampler.steps",
    "topk": "texture.use_topk",
    "reference": "data.pairing",
}


def ablate(cfg: ExperimentConfig, axis: str, values: list[str], manifest=None) -> list[dict]:
    """Train + evaluate once per axis value; one schema-stable record each."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; have {sorted(ABLATION_AXES)}")
    path = ABLATION_AXES[axis]
    records = []
    for value in values:
        sub = apply_overrides(cfg, [f"{path}={value}"])
        sub.run.out_dir = str(Path(cfg.run.out_dir) / f"{axis}_{value}")
        result = train(sub, manifest=manifest)
        report = evaluate(
            sub, manifest=manifest, split=data_mod.SPLIT_TRAIN, model=result.model,
            out_dir=sub.run.out_dir,
        )
        records.append({"axis": axis, "value": value, **report.summary})
    return records
