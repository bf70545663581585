import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofbench.models import (
    LAYER_TABLE,
    Architecture,
    CheckpointError,
    Head,
    InputKind,
    MaxFeatureMap,
    ModelSpec,
    PretrainedWeightsUnavailable,
    build_model,
    forward,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)

TINY_W2V = dict(hidden_size=32, num_hidden_layers=2, num_attention_heads=2, intermediate_size=64,
                num_conv_pos_embeddings=16, conv_dim=(32,) * 7)


def spec(arch, **kw):
    return ModelSpec.for_architecture(arch, pretrained=False, **kw)


def mel_batch(b=4, t=157, seed=0):
    return torch.rand(b, 1, 64, t, generator=torch.Generator().manual_seed(seed))


# ---------------------------------------------------------------------------
# specs


def test_input_and_head_mappings():
    want = {
        Architecture.LCNN: (InputKind.MEL_1CH, Head.TWO_LOGIT),
        Architecture.LCNN_ATTENTION: (InputKind.MEL_1CH, Head.TWO_LOGIT),
        Architecture.RESNET18: (InputKind.IMAGE_3CH, Head.ONE_LOGIT),
        Architecture.VIT_B16: (InputKind.IMAGE_3CH, Head.TWO_LOGIT),
        Architecture.CNN_BILSTM: (InputKind.IMAGE_SEQUENCE, Head.ONE_LOGIT),
        Architecture.WAV2VEC2_BASE: (InputKind.RAW_WAVEFORM, Head.TWO_LOGIT),
    }
    for arch, (kind, head) in want.items():
        s = ModelSpec.for_architecture(arch)
        assert (s.input_kind, s.head) == (kind, head)
        assert s.frozen_backbone == (arch is Architecture.WAV2VEC2_BASE)
        assert s.pretrained_backbone == (arch not in (Architecture.LCNN, Architecture.LCNN_ATTENTION))


def test_spec_invariants_enforced():
    with pytest.raises(ValueError):
        ModelSpec(Architecture.LCNN, InputKind.IMAGE_3CH, Head.TWO_LOGIT)
    with pytest.raises(ValueError):
        ModelSpec(Architecture.RESNET18, InputKind.IMAGE_3CH, Head.TWO_LOGIT)
    with pytest.raises(ValueError):
        ModelSpec(Architecture.WAV2VEC2_BASE, InputKind.RAW_WAVEFORM, Head.TWO_LOGIT, frozen_backbone=False)


def test_spec_dict_roundtrip_and_aliases():
    s = spec("cnn_bilstm", lstm_hidden=64)
    assert ModelSpec.from_dict(s.to_dict()) == s
    assert Architecture.parse("ViT-B16") is Architecture.VIT_B16
    assert Architecture.parse("LCNN-Attention") is Architecture.LCNN_ATTENTION
    with pytest.raises(ValueError):
        Architecture.parse("rawnet2")


# ---------------------------------------------------------------------------
# LCNN family


def test_lcnn_parameter_count_matches_layer_table():
    # conv: in*out*k*k + out; bn: 2*c; final fc 96 -> 2
    conv = [(1, 64, 5), (32, 64, 1), (32, 96, 3), (48, 96, 1), (48, 128, 3), (64, 128, 1), (64, 192, 3)]
    bns = [32, 48, 48, 64]
    expected = sum(i * o * k * k + o for i, o, k in conv) + sum(2 * c for c in bns) + 96 * 2 + 2
    assert expected == 1664 + 2112 + 64 + 27744 + 96 + 4704 + 96 + 55424 + 8320 + 128 + 110784 + 194
    m = build_model(spec("lcnn"))
    assert sum(p.numel() for p in m.parameters()) == expected
    assert [l[1:] for l in LAYER_TABLE if l[0] == "conv"] == conv
    assert [l[1] for l in LAYER_TABLE if l[0] == "bn"] == bns


def test_mfm_unit_example():
    x = torch.tensor([[[[1.0]], [[3.0]]]])
    assert MaxFeatureMap()(x).flatten().tolist() == [3.0]


@given(st.integers(1, 6), st.integers(0, 10_000))
def test_mfm_is_elementwise_max_of_halves(k, seed):
    x = torch.randn(2, 2 * k, 3, 5, generator=torch.Generator().manual_seed(seed))
    out = MaxFeatureMap()(x)
    assert out.shape == (2, k, 3, 5)
    assert torch.equal(out, torch.maximum(x[:, :k], x[:, k:]))


def test_lcnn_shapes():
    m = build_model(spec("lcnn")).eval()
    out = forward(m, mel_batch())
    assert out.logits.shape == (4, 2) and out.attention_weights is None
    assert torch.isfinite(out.logits).all()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(40, 200))
def test_attention_rows_on_simplex(seed, frames):
    m = build_model(spec("lcnn_attention"), seed=seed % 7).eval()
    with torch.no_grad():
        out = forward(m, torch.randn(3, 1, 64, frames, generator=torch.Generator().manual_seed(seed)))
    w = out.attention_weights
    assert out.logits.shape == (3, 2)
    assert w.ndim == 2 and w.shape[0] == 3
    assert (w >= 0).all() and torch.allclose(w.sum(1), torch.ones(3), atol=1e-5)


def test_shape_mismatch_message():
    m = build_model(spec("lcnn"))
    with pytest.raises(ValueError, match=r"expected input \[B, 1, 64, T\], got \[4, 3, 64, 157\]"):
        forward(m, torch.zeros(4, 3, 64, 157))
    with pytest.raises(ValueError, match="expected input"):
        forward(build_model(spec("resnet18")), torch.zeros(2, 3, 100, 100))


def test_same_seed_same_init():
    a, b = build_model(spec("lcnn_attention"), 3), build_model(spec("lcnn_attention"), 3)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    c = build_model(spec("lcnn_attention"), 4)
    assert not torch.equal(next(a.parameters()), next(c.parameters()))


def test_build_does_not_disturb_global_rng():
    torch.manual_seed(0)
    ref = torch.rand(3)
    torch.manual_seed(0)
    build_model(spec("lcnn"), 9)
    assert torch.equal(torch.rand(3), ref)


def _final_linear(model):
    last = None
    for m in model.net.modules():
        if isinstance(m, torch.nn.Linear):
            last = m
    return last


@pytest.mark.parametrize("arch", ["lcnn", "lcnn_attention"])
def test_final_layer_gradients_match_finite_differences(arch):
    m = build_model(spec(arch), seed=1).double().eval()
    x = mel_batch(3, 60, seed=2).double()
    y = torch.tensor([0, 1, 1])
    fc = _final_linear(m)
    loss = torch.nn.functional.cross_entropy(m(x), y)
    gw, gb = torch.autograd.grad(loss, [fc.weight, fc.bias])
    eps = 1e-6
    for param, grad in ((fc.weight, gw), (fc.bias, gb)):
        flat, g = param.data.view(-1), grad.reshape(-1)
        idx = torch.randperm(flat.numel(), generator=torch.Generator().manual_seed(0))[:12]
        for i in idx.tolist():
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + eps
                up = torch.nn.functional.cross_entropy(m(x), y).item()
                flat[i] = old - eps
                dn = torch.nn.functional.cross_entropy(m(x), y).item()
                flat[i] = old
            num = (up - dn) / (2 * eps)
            rel = abs(num - g[i].item()) / max(abs(num), abs(g[i].item()), 1e-8)
            assert rel < 1e-3 or abs(num - g[i].item()) < 1e-9


# ---------------------------------------------------------------------------
# image and waveform architectures


def test_resnet18_and_vit_heads():
    x = torch.rand(2, 3, 224, 224)
    r = build_model(spec("resnet18")).eval()
    assert forward(r, x).logits.shape == (2, 1)
    v = build_model(spec("vit_b16")).eval()
    with torch.no_grad():
        assert forward(v, x).logits.shape == (2, 2)


def test_cnn_bilstm_shapes():
    m = build_model(spec("cnn_bilstm")).eval()
    with torch.no_grad():
        out = forward(m, torch.rand(2, 4, 3, 224, 224))
    assert out.logits.shape == (2, 1)


def test_cnn_bilstm_is_order_sensitive(capacity_runs, fixture_corpus, feature_store):
    model = capacity_runs("cnn_bilstm")["model"].eval()
    x = feature_store.batch(fixture_corpus[1][:4], InputKind.IMAGE_SEQUENCE)
    with torch.no_grad():
        a = model(x)
        b = model(torch.flip(x, dims=[1]))
    assert not torch.allclose(a, b)


def test_wav2vec2_head_only_is_trainable():
    m = build_model(spec("wav2vec2_base", backbone_overrides=TINY_W2V))
    bb = {id(p) for p in m.backbone_parameters()}
    assert bb and all(not p.requires_grad for p in m.backbone_parameters())
    trainable = m.trainable_parameters()
    assert trainable and not any(id(p) in bb for p in trainable)
    out = forward(m.eval(), torch.rand(2, 16000) * 2 - 1)
    assert out.logits.shape == (2, 2)


def test_wav2vec2_backbone_bitwise_unchanged_after_training():
    from spoofbench.trainer import Loss, Optimizer, TrainConfig, compute_loss, make_optimizer

    m = build_model(spec("wav2vec2_base", backbone_overrides=TINY_W2V), seed=0)
    before_bb = {k: v.clone() for k, v in m.net.backbone.state_dict().items()}
    before_head = [p.clone() for p in m.trainable_parameters()]
    opt = make_optimizer(m.trainable_parameters(), TrainConfig(Optimizer.ADAMW, 1e-3, 2, 1, Loss.CROSS_ENTROPY))
    m.train()
    assert not m.net.backbone.training
    x = torch.rand(4, 16000) * 2 - 1
    for _ in range(2):
        loss = compute_loss(Loss.CROSS_ENTROPY, m(x), torch.tensor([0, 1, 0, 1]))
        opt.zero_grad()
        loss.backward()
        opt.step()
    for k, v in m.net.backbone.state_dict().items():
        assert torch.equal(v, before_bb[k]), k
    assert any(not torch.equal(a, b) for a, b in zip(before_head, m.trainable_parameters()))
    frozen = {id(p) for p in m.backbone_parameters()}
    assert not any(id(p) in frozen for p in opt.state)


@pytest.mark.parametrize("arch,backbone", [("resnet18", "resnet18"), ("vit_b16", "vit_b_16"),
                                           ("cnn_bilstm", "resnet18"), ("wav2vec2_base", "wav2vec2-base")])
def test_missing_pretrained_weights_raise(arch, backbone, monkeypatch, tmp_path):
    from conftest import weights_present

    monkeypatch.setenv("SPOOFBENCH_WEIGHTS", str(tmp_path))
    monkeypatch.setenv("TORCH_HOME", str(tmp_path))
    monkeypatch.setenv("HF_HUB_CACHE", str(tmp_path))
    if weights_present(backbone):
        pytest.skip("weights present in the hub cache")
    with pytest.raises(PretrainedWeightsUnavailable, match=backbone):
        build_model(ModelSpec.for_architecture(arch, pretrained=True))


# ---------------------------------------------------------------------------
# checkpoints


@pytest.mark.parametrize("arch", ["lcnn", "lcnn_attention", "resnet18"])
def test_checkpoint_roundtrip_bitwise(arch, tmp_path):
    m = build_model(spec(arch), seed=5).eval()
    x = mel_batch(2) if m.spec.input_kind is InputKind.MEL_1CH else torch.rand(2, 3, 224, 224)
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    back = load_checkpoint(p)
    assert back.spec == m.spec and back.seed == 5 and not back.training
    with torch.no_grad():
        assert torch.equal(m(x), back(x))
    hdr = read_checkpoint_header(p)
    assert hdr["architecture"] == arch and hdr["format_version"] == "1"


def test_checkpoint_architecture_mismatch(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(build_model(spec("lcnn")), p)
    with pytest.raises(CheckpointError, match="mismatch"):
        load_checkpoint(p, Architecture.RESNET18)
    assert load_checkpoint(p, "lcnn").spec.architecture is Architecture.LCNN


@pytest.mark.parametrize("keep", [0.5, 0.99, 0.0])
def test_truncated_checkpoint_fails_cleanly(tmp_path, keep):
    p = tmp_path / "m.ckpt"
    save_checkpoint(build_model(spec("lcnn")), p)
    raw = p.read_bytes()
    p.write_bytes(raw[: int(len(raw) * keep)])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_non_checkpoint_file(tmp_path):
    from safetensors.torch import save_file

    p = tmp_path / "other.safetensors"
    save_file({"w": torch.zeros(2)}, str(p))
    with pytest.raises(CheckpointError, match="not a spoofbench checkpoint"):
        load_checkpoint(p)
