import numpy as np
import pytest

from vinehsi.autodiff import Tensor, no_grad
from vinehsi.autodiff.reference import tensor_gradient_errors
from vinehsi.model import (ArchitectureSpec, InceptionNaive, InceptionV2, InceptionWidths, SpatialAttention,
                           Variant, build_model, expected_shapes, load_architecture, load_pretrained,
                           parameter_audit, save_architecture, shape_trace, similarity_matrix)

TABLE_SHAPES = {
    "input": (23, 23, 40), "concatenate": (23, 23, 80), "stem_conv_1x1": (23, 23, 16),
    "stem_conv_3x3": (12, 12, 16), "inception1": (6, 6, 96), "inception2": (3, 3, 288),
    "flatten": (2592,), "softmax": (17,),
}


def n_params(layer):
    return sum(t.data.size for _, t, _ in layer.named_parameters())


def test_proposed_shapes():
    trace = dict(shape_trace(build_model(ArchitectureSpec())))
    for name, shape in TABLE_SHAPES.items():
        assert trace[name] == shape, name
    assert shape_trace(build_model(ArchitectureSpec())) == expected_shapes(ArchitectureSpec())


def test_no_attention_variant_uses_raw_features():
    model = build_model(ArchitectureSpec(variant=Variant.NO_SPATIAL_ATTENTION))
    assert model.layers["stem_1x1"].kernel.shape[2] == 40
    assert "concatenate" not in dict(shape_trace(model))


def test_variant_parameter_ordering():
    counts = {v: parameter_audit(ArchitectureSpec(variant=v))["total"] for v in Variant}
    assert counts[Variant.NO_SPATIAL_ATTENTION] < counts[Variant.PROPOSED]
    assert counts[Variant.NAIVE_INCEPTION_BOTH] > counts[Variant.NAIVE_FIRST_INCEPTION]
    assert counts[Variant.WITH_INITIAL_CONVS] > counts[Variant.PROPOSED]


def test_audit_reports_target_delta():
    audit = parameter_audit(ArchitectureSpec())
    assert audit["flatten"] == 2592
    assert audit["target_total"] == 562_995
    assert audit["delta_total"] == audit["total"] - 562_995
    assert abs(audit["delta_total_pct"]) <= 15.0
    assert audit["total"] == sum(audit["per_layer"].values())


def test_attention_shapes_and_uniform_case():
    rng = np.random.default_rng(0)
    x = rng.random((2, 23, 23, 40)).astype(np.float32)
    assert similarity_matrix(x[0]).shape == (529, 529)
    att = SpatialAttention(23, np.float32)
    att.kernel.data[:] = 0.0
    with no_grad():
        out = att(Tensor(x)).data
    assert out.shape == (2, 23, 23, 40)
    assert np.allclose(out, x / 529, rtol=1e-5)


def test_attention_single_pixel_is_identity():
    x = np.random.default_rng(1).random((3, 1, 1, 5))
    with no_grad():
        out = SpatialAttention(1, np.float64)(Tensor(x)).data
    assert np.allclose(out, x)


def test_attention_weights_are_distribution():
    x = np.random.default_rng(2).normal(size=(4, 7, 7, 6)).astype(np.float32)
    att = SpatialAttention(7, np.float32)
    att.kernel.data[:] = np.random.default_rng(3).normal(size=att.kernel.shape)
    with no_grad():
        att(Tensor(x))
    assert np.max(np.abs(att.last_weights.sum(axis=1) - 1.0)) <= 1e-6


def test_attention_factorized_equals_explicit():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 5, 5, 3))
    att = SpatialAttention(5, np.float64)
    att.kernel.data[:] = rng.normal(size=att.kernel.shape)
    att.bias.data[:] = rng.normal(size=att.bias.shape)
    with no_grad():
        fast = att(Tensor(x)).data
        att.explicit = True
        slow = att(Tensor(x)).data
    assert np.allclose(fast, slow, atol=1e-12)
    s = similarity_matrix(x[0])
    scores = s @ att.kernel.data[:, 0] + att.bias.data[:, 0]
    w = np.exp(scores - scores.max())
    w /= w.sum()
    assert np.allclose(fast[0].reshape(25, 3), w[:, None] * x[0].reshape(25, 3), atol=1e-12)


def test_attention_central_scores():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 3, 3, 4))
    att = SpatialAttention(3, np.float64, compute_central=True)
    with no_grad():
        att(Tensor(x))
    assert np.allclose(att.last_central[0], similarity_matrix(x[0])[4])


def test_inception_stage_shapes():
    rng = np.random.default_rng(0)
    spec = ArchitectureSpec()
    stage1 = InceptionV2(16, spec.stage1, 2, rng, np.float32)
    stage2 = InceptionV2(96, spec.stage2, 2, rng, np.float32)
    with no_grad():
        h = stage1(Tensor(np.zeros((1, 12, 12, 16), np.float32)))
        assert h.shape == (1, 6, 6, 96)
        assert stage2(h).shape == (1, 3, 3, 288)
    assert spec.stage1.out_channels == 96 and spec.stage2.out_channels == 288


def test_naive_inception_channels_and_params():
    rng = np.random.default_rng(0)
    w = InceptionWidths(8, 4, 8, 4, 8, 8)
    naive = InceptionNaive(12, w, 1, rng, np.float32)
    with no_grad():
        out = naive(Tensor(np.zeros((1, 6, 6, 12), np.float32)))
    assert out.shape[-1] == 8 + 8 + 8 + 12 == naive.out_channels
    # equal output widths: pool passthrough (12) vs pool projection of 12
    v2 = InceptionV2(12, InceptionWidths(8, 4, 8, 4, 8, 12), 1, rng, np.float32)
    assert v2.out_channels == naive.out_channels
    assert n_params(naive) > n_params(v2)


@pytest.mark.parametrize("block", [InceptionNaive, InceptionV2])
def test_inception_gradient(block):
    rng = np.random.default_rng(1)
    layer = block(4, InceptionWidths(2, 2, 3, 2, 2, 2), 2, rng, np.float64)
    x = Tensor(rng.normal(size=(2, 6, 6, 4)))
    tensors = {name: t for name, t, _ in layer.named_parameters()}
    tensors["x"] = x
    errors = tensor_gradient_errors(lambda: layer(x), tensors)
    assert max(errors.values()) <= 1e-4


def test_architecture_round_trip(tmp_path):
    spec = ArchitectureSpec(patch_size=9, n_features=6, n_classes=5, variant=Variant.NAIVE_FIRST_INCEPTION,
                            dropout=(0.1, 0.2, 0.3), attention_central=True)
    save_architecture(tmp_path / "arch.txt", spec)
    assert load_architecture(tmp_path / "arch.txt") == spec


def test_state_round_trip_and_pretrained():
    small = dict(patch_size=7, n_features=4)
    src = build_model(ArchitectureSpec(n_classes=9, **small), seed=1)
    same = build_model(ArchitectureSpec(n_classes=9, **small), seed=2)
    load_pretrained(same, src.state_dict())
    assert all(np.array_equal(a, b) for a, b in zip(same.state_dict().values(), src.state_dict().values()))

    fresh = build_model(ArchitectureSpec(n_classes=17, **small), seed=3)
    head_before = fresh.layers["head"].kernel.data.copy()
    load_pretrained(fresh, src.state_dict(), reinit_head=True)
    for name, value in fresh.state_dict().items():
        if name.startswith("head/"):
            continue
        assert np.array_equal(value, src.state_dict()[name])
    assert np.array_equal(fresh.layers["head"].kernel.data, head_before)
    assert fresh.layers["head"].kernel.shape == (src.flat_width, 17)

    with pytest.raises(ValueError, match="shape mismatch"):
        load_pretrained(build_model(ArchitectureSpec(n_classes=17, **small)), src.state_dict())
    other = build_model(ArchitectureSpec(n_classes=9, patch_size=7, n_features=5))
    with pytest.raises(ValueError, match="stem_1x1/kernel"):
        load_pretrained(other, src.state_dict(), reinit_head=True)


def test_embed_width_and_rows():
    model = build_model(ArchitectureSpec())
    x = np.random.default_rng(0).random((1, 23, 23, 40)).astype(np.float32)
    rows = model.embed(np.concatenate([x, x, x]))
    assert rows.shape == (3, 2592)
    assert np.array_equal(rows[0], rows[1])


def test_forward_rejects_wrong_shape():
    with pytest.raises(ValueError, match="expected"):
        build_model(ArchitectureSpec(patch_size=7, n_features=4)).forward(np.zeros((1, 9, 9, 4)))
