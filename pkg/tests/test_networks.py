"""Encoder networks: forward contracts, EMA, gradient correctness."""

import numpy as np
import pytest
import torch

from hierlearn.contrastive import MemoryBank, TrainConfig, info_nce, keep_mask
from hierlearn.networks import (
    ConvBackbone,
    Encoder,
    EncoderConfig,
    build_model_pair,
    ema_update,
    embed_images,
    prepare_batch,
)

TINY = EncoderConfig(
    input_size=16,
    channel_widths=(4, 8),
    projection_hidden_dim=8,
    projection_out_dim=8,
)


def test_config_embedding_dim_defaults_to_last_width():
    cfg = EncoderConfig(channel_widths=(4, 8, 12))
    assert cfg.embedding_dim == 12
    with pytest.raises(ValueError):
        EncoderConfig(channel_widths=(4, 8), embedding_dim=16)


def test_zero_params_zero_image_gives_zero_vector():
    pair = build_model_pair(TINY, seed=0)
    with torch.no_grad():
        for p in pair.query.backbone.parameters():
            p.zero_()
    x = torch.zeros((1, 1, 16, 16))
    out = pair.query.backbone(x)
    assert torch.all(out == 0)


def test_forward_deterministic():
    backbone = ConvBackbone(TINY, torch.Generator().manual_seed(3))
    x = torch.rand((2, 1, 16, 16), generator=torch.Generator().manual_seed(4))
    np.testing.assert_array_equal(backbone(x).detach().numpy(), backbone(x).detach().numpy())


def test_gap_matches_bruteforce_mean():
    backbone = ConvBackbone(TINY, torch.Generator().manual_seed(5))
    x = torch.rand((3, 1, 16, 16), generator=torch.Generator().manual_seed(6))
    with torch.no_grad():
        fmap = backbone.feature_map(x).numpy()
        out = backbone(x).numpy()
    brute = fmap.reshape(fmap.shape[0], fmap.shape[1], -1).mean(axis=2)
    np.testing.assert_allclose(out, brute, atol=1e-6)


def test_input_shape_mismatch():
    backbone = ConvBackbone(TINY)
    with pytest.raises(ValueError):
        backbone(torch.zeros((1, 1, 8, 8)))


def test_projection_unit_norm():
    pair = build_model_pair(TINY, seed=1)
    feats = torch.randn((32, 8), generator=torch.Generator().manual_seed(7))
    out = pair.query.head(feats)
    np.testing.assert_allclose(
        out.norm(dim=1).detach().numpy(), 1.0, atol=1e-6
    )


def test_projection_jacobian_matches_finite_differences():
    torch.manual_seed(0)
    pair = build_model_pair(TINY, seed=2)
    head = pair.query.head.double()
    x0 = torch.randn(8, dtype=torch.float64)

    jac = torch.autograd.functional.jacobian(lambda v: head(v), x0).numpy()
    h = 1e-6
    fd = np.zeros_like(jac)
    with torch.no_grad():
        for j in range(8):
            e = torch.zeros(8, dtype=torch.float64)
            e[j] = h
            fd[:, j] = ((head(x0 + e) - head(x0 - e)) / (2 * h)).numpy()
    denom = max(np.abs(fd).max(), 1e-12)
    assert np.abs(jac - fd).max() / denom < 1e-4


class TestEma:
    def test_m1_is_fixed_point(self):
        pair = build_model_pair(TINY, seed=3)
        pair.momentum = 1.0
        with torch.no_grad():
            for p in pair.query.parameters():
                p.add_(1.0)
        before = {n: p.clone() for n, p in pair.key.named_parameters()}
        ema_update(pair)
        for n, p in pair.key.named_parameters():
            assert torch.equal(p, before[n])

    def test_equal_params_fixed_point(self):
        pair = build_model_pair(TINY, seed=4)
        pair.momentum = 0.5
        before = {n: p.clone() for n, p in pair.key.named_parameters()}
        ema_update(pair)
        for n, p in pair.key.named_parameters():
            np.testing.assert_allclose(p.numpy(), before[n].numpy(), atol=1e-7)

    def test_geometric_decay_oracle(self):
        # ||key_t - query|| = m^t * ||key_0 - query||, scalar recursion check
        pair = build_model_pair(TINY, seed=5)
        pair.momentum = 0.9
        with torch.no_grad():
            for p in pair.key.parameters():
                p.add_(0.5)
        diff0 = np.sqrt(
            sum(
                float(((kp - qp) ** 2).sum())
                for _, qp, kp in pair.named_pairs()
            )
        )
        expected = diff0
        for t in range(1, 11):
            ema_update(pair)
            expected *= 0.9
            diff = np.sqrt(
                sum(
                    float(((kp - qp) ** 2).sum())
                    for _, qp, kp in pair.named_pairs()
                )
            )
            assert abs(diff - expected) <= 1e-6 * max(1.0, expected)

    def test_preserves_shapes_and_finiteness(self):
        pair = build_model_pair(TINY, seed=6)
        shapes = {n: p.shape for n, p in pair.key.named_parameters()}
        ema_update(pair)
        for n, p in pair.key.named_parameters():
            assert p.shape == shapes[n]
            assert torch.isfinite(p).all()


def _loss_for(pair, x, k_target, negatives, temperature):
    q = pair.query(x)[0]
    return info_nce(q, k_target, negatives, temperature)


@pytest.mark.parametrize("dtype,tol", [(torch.float64, 1e-5), (torch.float32, 1e-3)])
def test_end_to_end_gradient_matches_finite_differences(dtype, tol):
    # loss gradient w.r.t. a sampled subset of query params vs central
    # differences; vector-level relative error
    pair = build_model_pair(TINY, seed=7, dtype=dtype)
    gen = torch.Generator().manual_seed(8)
    x = torch.rand((1, 1, 16, 16), generator=gen, dtype=dtype)
    k_target = torch.nn.functional.normalize(
        torch.randn(8, generator=gen, dtype=dtype), dim=0
    )
    negatives = torch.nn.functional.normalize(
        torch.randn((16, 8), generator=gen, dtype=dtype), dim=1
    )

    loss = _loss_for(pair, x, k_target, negatives, 0.2)
    params = list(pair.query.parameters())
    grads = torch.autograd.grad(loss, params)

    rng = np.random.default_rng(9)
    h = 1e-5 if dtype == torch.float64 else 3e-3
    ad, fd = [], []
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        for idx in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
            with torch.no_grad():
                orig = flat[idx].item()
                flat[idx] = orig + h
                lp = float(_loss_for(pair, x, k_target, negatives, 0.2))
                flat[idx] = orig - h
                lm = float(_loss_for(pair, x, k_target, negatives, 0.2))
                flat[idx] = orig
            fd.append((lp - lm) / (2 * h))
            ad.append(float(g.reshape(-1)[idx]))
    ad, fd = np.asarray(ad), np.asarray(fd)
    rel = np.linalg.norm(ad - fd) / max(np.linalg.norm(fd), 1e-12)
    assert rel < tol


def test_embed_images_resizes_and_batches(rng):
    pair = build_model_pair(TINY, seed=10)
    images = [rng.random((20, 30)), rng.random((16, 16)), rng.random((7, 9))]
    feats = embed_images(pair.query.backbone, images, batch_size=2)
    assert feats.shape == (3, 8)
    assert np.isfinite(feats).all()


def test_prepare_batch_shapes(rng):
    batch = prepare_batch([rng.random((10, 10)), rng.random((16, 16))], 16)
    assert batch.shape == (2, 1, 16, 16)
