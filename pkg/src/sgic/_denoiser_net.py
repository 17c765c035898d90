"""Torch epsilon-predictor behind ToyDenoiser. Import stays local to the
functions in diffusion.py so the schedule/sampler code works without torch.

Two branches, each in the parameterization that conditions well for it:
 - conditional: a three-level UNet (stride-2 downs, transposed-conv ups,
   skips) over the guide image plus broadcast time/text projections,
   predicting a zero-initialized residual on the guide; the clean-image
   form f = guide + r maps to eps through
   eps_hat = (x_t - sqrt(a_bar)*f) / sqrt(1 - a_bar). Direct epsilon
   output would need accuracy ~sqrt(a_bar)/sqrt(1-a_bar) times better at
   high t to give usable clean-image estimates inside the sampler (a
   factor ~6 at the default stage strength); this form makes the worst
   case "return the guide" instead of noise. The branch deliberately
   never reads x_t: at decode time the trajectory starts from the noised
   guide, so x_t carries no information about the original there, and a
   net that leans on x_t during training (where x_t does come from the
   original) falls apart when sampling.
 - unconditional: a small conv stack over x_t, x_t/sqrt(a_bar), and the
   time projection, predicting eps directly. This is the CFG null branch
   (condition dropout routes training rows here), so it must work from
   x_t alone, and direct eps is the parameterization with uniform loss
   scale there.

The training objective is the plain epsilon MSE under uniform t. Through
the clean-image form its per-sample scale is a_bar/(1-a_bar), four orders
of magnitude across t, which starves the conditional branch under Adam's
gradient normalization. Training therefore draws t from a half-uniform,
half-weight-proportional proposal and multiplies each sample's loss by the
inverse proposal ratio: an unbiased estimator of the same uniform-t
objective with roughly level per-sample scale for both branches.

Weight file is a versioned little-endian container of named float32
tensors.
"""

from __future__ import annotations

import struct

import numpy as np
import torch
from torch import nn

from .errors import IoError, MalformedPayload, Truncated

_WEIGHTS_MAGIC = b"SGTD"
_WEIGHTS_VERSION = 1
_TIME_DIM = 16
_PROJ_CH = 4


class _Net(nn.Module):
    def __init__(self, text_dim: int):
        super().__init__()
        c0, c1, c2 = 24, 32, 48
        in_ch = 3 + _PROJ_CH + _PROJ_CH  # guide, time, text
        self.time_proj = nn.Linear(_TIME_DIM, _PROJ_CH)
        self.text_proj = nn.Linear(text_dim, _PROJ_CH)
        self.enc0 = nn.Sequential(
            nn.Conv2d(in_ch, c0, 3, padding=1), nn.SiLU(), nn.Conv2d(c0, c0, 3, padding=1), nn.SiLU()
        )
        self.down1 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.enc1 = nn.Sequential(nn.SiLU(), nn.Conv2d(c1, c1, 3, padding=1), nn.SiLU())
        self.down2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.mid = nn.Sequential(nn.SiLU(), nn.Conv2d(c2, c2, 3, padding=1), nn.SiLU())
        self.up2 = nn.ConvTranspose2d(c2, c1, 2, stride=2)
        self.dec1 = nn.Sequential(nn.SiLU(), nn.Conv2d(2 * c1, c1, 3, padding=1), nn.SiLU())
        self.up1 = nn.ConvTranspose2d(c1, c0, 2, stride=2)
        self.dec0 = nn.Sequential(nn.SiLU(), nn.Conv2d(2 * c0, c0, 3, padding=1), nn.SiLU())
        self.out = nn.Conv2d(c0, 3, 3, padding=1)
        nn.init.zeros_(self.out.weight)  # residual head: start at f = guide
        nn.init.zeros_(self.out.bias)
        cu = 24
        self.unc = nn.Sequential(
            nn.Conv2d(3 + 3 + _PROJ_CH, cu, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(cu, cu, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(cu, 3, 3, padding=1),
        )
        nn.init.zeros_(self.unc[-1].weight)
        nn.init.zeros_(self.unc[-1].bias)

    def forward(self, x, guide, t_emb, text, sqrt_ab, sqrt_1mab, is_cond):
        b, _, h, w = x.shape
        sa = sqrt_ab[:, None, None, None]
        sb = sqrt_1mab[:, None, None, None]
        x_scaled = (x / sa).clamp(-1.0, 2.0)  # noisy but unbiased clean estimate
        tch = self.time_proj(t_emb)[:, :, None, None].expand(b, _PROJ_CH, h, w)
        xch = self.text_proj(text)[:, :, None, None].expand(b, _PROJ_CH, h, w)
        a0 = self.enc0(torch.cat([guide, tch, xch], dim=1))
        a1 = self.enc1(self.down1(a0))
        m = self.mid(self.down2(a1))
        d1 = self.dec1(torch.cat([self.up2(m), a1], dim=1))
        d0 = self.dec0(torch.cat([self.up1(d1), a0], dim=1))
        f_cond = guide + self.out(d0)
        eps_cond = (x - sa * f_cond) / sb
        eps_unc = self.unc(torch.cat([x, x_scaled, tch], dim=1))
        ic = is_cond[:, None, None, None]
        return ic * eps_cond + (1.0 - ic) * eps_unc


def build_net(text_dim: int) -> nn.Module:
    torch.manual_seed(0)  # fresh nets always start from the same weights
    return _Net(text_dim)


def _time_embedding(t: torch.Tensor) -> torch.Tensor:
    half = _TIME_DIM // 2
    freqs = torch.exp(-np.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    ang = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


def _to_chw(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).float()


def predict_batch(net: nn.Module, x_rows, t: int, conds, text_dim: int, alpha_bar: np.ndarray) -> np.ndarray:
    """Rows share one timestep; each cond is None or {text, guide}. A None
    cond zeroes both condition inputs (the CFG unconditional branch)."""
    b = len(x_rows)
    h, w = x_rows[0].shape[:2]
    x = torch.stack([_to_chw(r) for r in x_rows])
    guide = torch.zeros(b, 3, h, w)
    text = torch.zeros(b, text_dim)
    is_cond = torch.zeros(b)
    for i, cond in enumerate(conds):
        if cond is not None:
            guide[i] = _to_chw(cond["guide"])
            text[i] = torch.from_numpy(np.asarray(cond["text"], dtype=np.float32))
            is_cond[i] = 1.0
    t_emb = _time_embedding(torch.full((b,), float(t)))
    ab = torch.full((b,), float(alpha_bar[t]))
    with torch.no_grad():
        eps = net(x, guide, t_emb, text, ab.sqrt(), (1 - ab).sqrt(), is_cond)
    return eps.numpy().astype(np.float64).transpose(0, 2, 3, 1)


def train(
    images,
    guides,
    texts,
    alpha_bar: np.ndarray,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    cond_dropout: float,
    text_dim: int,
) -> tuple[nn.Module, dict]:
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # keep reductions deterministic across runs
    try:
        torch.manual_seed(seed)
        net = _Net(text_dim)
        x0 = torch.stack([_to_chw(im) for im in images])
        gd = torch.stack([_to_chw(g) for g in guides])
        tx = torch.stack(
            [torch.from_numpy(np.asarray(t, dtype=np.float32)) for t in texts]
        )
        ab = torch.from_numpy(alpha_bar).float()
        T = len(alpha_bar) - 1
        # importance sampling of t: proposal half uniform, half proportional
        # to the clean-image-form loss weight a_bar/(1-a_bar); each sample's
        # loss is multiplied by the inverse ratio, keeping the estimator
        # unbiased for the uniform-t objective
        w_t = ab[1:] / (1.0 - ab[1:])
        proposal = 0.5 / T + 0.5 * w_t / w_t.sum()
        inv_ratio = 1.0 / (T * proposal)
        opt = torch.optim.Adam(net.parameters(), lr=lr)
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, epochs), eta_min=lr * 0.1)
        gen = torch.Generator().manual_seed(seed)
        # EMA shadow: the sampler integrates the head's output over dozens of
        # steps, so late-training weight noise compounds; the average is what
        # ships
        ema = {k: v.detach().clone() for k, v in net.state_dict().items()}
        ema_decay = 0.998

        def epoch_loss(update: bool) -> float:
            order = torch.randperm(len(images), generator=gen)
            total = 0.0
            count = 0
            for start in range(0, len(images), batch_size):
                idx = order[start : start + batch_size]
                ti = torch.multinomial(proposal, len(idx), replacement=True, generator=gen)
                t = ti + 1
                eps = torch.randn(x0[idx].shape, generator=gen)
                a = ab[t][:, None, None, None]
                x_t = a.sqrt() * x0[idx] + (1 - a).sqrt() * eps
                drop = torch.rand(len(idx), generator=gen) < cond_dropout
                g = gd[idx].clone()
                txt = tx[idx].clone()
                g[drop] = 0.0
                txt[drop] = 0.0
                is_cond = 1.0 - drop.float()
                pred = net(x_t, g, _time_embedding(t), txt, ab[t].sqrt(), (1 - ab[t]).sqrt(), is_cond)
                per_sample = ((pred - eps) ** 2).mean(dim=(1, 2, 3))
                loss = (inv_ratio[ti] * per_sample).mean()
                if update:
                    opt.zero_grad()
                    loss.backward()
                    # heavy-tail batches still happen; cap them so one batch
                    # cannot wreck the weights
                    nn.utils.clip_grad_norm_(net.parameters(), 5.0)
                    opt.step()
                    with torch.no_grad():
                        for k, v in net.state_dict().items():
                            if v.dtype.is_floating_point:
                                ema[k].mul_(ema_decay).add_(v, alpha=1 - ema_decay)
                            else:
                                ema[k].copy_(v)
                total += loss.item() * len(idx)
                count += len(idx)
            return total / count

        with torch.no_grad():
            initial = epoch_loss(update=False)
        history = {"initial": initial, "epochs": []}
        for _ in range(epochs):
            history["epochs"].append(epoch_loss(update=True))
            sched.step()
        net.load_state_dict(ema)
        net.eval()
        return net, history
    finally:
        torch.set_num_threads(n_threads)


def save_net(net: nn.Module, path) -> None:
    state = net.state_dict()
    parts = [_WEIGHTS_MAGIC, struct.pack("<BH", _WEIGHTS_VERSION, len(state))]
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        arr = tensor.detach().numpy().astype("<f4")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.tobytes())
    try:
        with open(path, "wb") as fp:
            fp.write(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write weights file {path}: {exc}") from exc


def load_net(path, text_dim: int) -> nn.Module:
    try:
        with open(path, "rb") as fp:
            data = fp.read()
    except OSError as exc:
        raise IoError(f"cannot read weights file {path}: {exc}") from exc
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise Truncated(f"weights file ends at byte {len(data)}, needed {pos + n}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4) != _WEIGHTS_MAGIC:
        raise MalformedPayload("bad weights file magic")
    version, count = struct.unpack("<BH", take(3))
    if version != _WEIGHTS_VERSION:
        raise MalformedPayload(f"unsupported weights version {version}")
    state = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", take(2))
        name = take(ln).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        numel = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(4 * numel), dtype="<f4").reshape(shape).copy()
        state[name] = torch.from_numpy(arr)
    if pos != len(data):
        raise MalformedPayload(f"{len(data) - pos} trailing bytes in weights file")
    net = _Net(text_dim)
    try:
        net.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise MalformedPayload(f"weights do not fit the architecture: {exc}") from exc
    net.eval()
    return net
