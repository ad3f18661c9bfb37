import numpy as np
import pytest


@pytest.fixture
def tiny_config():
    from img2rna.model import ModelConfig
    return ModelConfig(input_slice_size=8, cnn_channels=(4,), token_dim=8, encoder_layers=2,
                       heads=2, mlp_hidden=16, head_dropout=0.5, gene_count=3, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def test_config_geometry(tiny_config):
    from img2rna.model import ModelConfig

    assert tiny_config.grid_size == 4
    assert tiny_config.token_count == 16
    default = ModelConfig()
    assert default.grid_size == 8
    assert default.token_count == 64


def test_config_rejects_bad_hyperparameters():
    from img2rna.model import ModelConfig
    from img2rna.exceptions import ConfigError

    with pytest.raises(ConfigError):
        ModelConfig(token_dim=10, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(head_dropout=1.0)
    with pytest.raises(ConfigError):
        ModelConfig(input_slice_size=20, cnn_channels=(4, 8, 16))


def test_parameter_names_and_init_determinism(tiny_config):
    from img2rna.model import init_params, param_shapes

    names = [name for name, _ in param_shapes(tiny_config)]
    assert len(names) == len(set(names))
    assert "head.weight" in names
    assert "encoder.1.attn.q.weight" in names

    a = init_params(tiny_config)
    b = init_params(tiny_config)
    for name in names:
        assert np.array_equal(a[name].data, b[name].data)
        assert a[name].shape == dict(param_shapes(tiny_config))[name]


def test_encode_slice_shape_and_size_check(tiny_config, rng):
    from img2rna.model import encode_slice, init_params
    from img2rna.exceptions import DimensionError

    params = init_params(tiny_config)
    tokens = encode_slice(rng.normal(size=(1, 8, 8)), params, tiny_config)
    assert tokens.shape == (16, 8)

    with pytest.raises(DimensionError):
        encode_slice(rng.normal(size=(1, 10, 10)), params, tiny_config)


def test_embed_patient_invariant_to_order_and_duplication(tiny_config, rng):
    from img2rna.model import embed_patient, init_params

    params = init_params(tiny_config)
    a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
    ab = embed_patient([a, b], params, tiny_config).tokens.data
    ba = embed_patient([b, a], params, tiny_config).tokens.data
    aabb = embed_patient([a, a, b, b], params, tiny_config).tokens.data
    assert np.allclose(ab, ba, rtol=0, atol=1e-12)
    assert np.allclose(ab, aabb, rtol=0, atol=1e-12)


def test_embed_patient_needs_slices(tiny_config):
    from img2rna.model import embed_patient, init_params
    from img2rna.exceptions import InputError

    with pytest.raises(InputError):
        embed_patient([], init_params(tiny_config), tiny_config)


def test_predict_genes_eval_is_deterministic(tiny_config, rng):
    from img2rna.layers import subset
    from img2rna.model import embed_patient, init_params, predict_genes

    params = init_params(tiny_config)
    emb = embed_patient([rng.normal(size=(8, 8))], params, tiny_config)
    head = subset(params, "head")
    first = predict_genes(emb, head, mode="eval")
    second = predict_genes(emb, head, mode="eval")
    assert first.shape == (3,)
    assert np.array_equal(first.data, second.data)

    trained = predict_genes(emb, head, mode="train", rate=0.5, rng=np.random.default_rng(0))
    assert trained.shape == (3,)


def test_predict_genes_width_mismatch(tiny_config, rng):
    from img2rna.autodiff import Tensor
    from img2rna.model import PatientEmbedding, predict_genes
    from img2rna.exceptions import DimensionError

    head = {"weight": Tensor(np.zeros((3, 8))), "bias": Tensor(np.zeros(3))}
    with pytest.raises(DimensionError):
        predict_genes(PatientEmbedding(tokens=Tensor(np.ones((16, 6)))), head)


def test_mse_loss_examples():
    from img2rna.autodiff import Tensor
    from img2rna.model import mse_loss
    from img2rna.exceptions import DimensionError

    assert mse_loss(Tensor([1.0, 2.0]), [1.0, 2.0]).item() == 0.0
    assert mse_loss(Tensor([0.0, 0.0]), [3.0, 4.0]).item() == 12.5

    pred = Tensor([[0.5, 1.0], [2.0, -1.0]], requires_grad=True)
    target = np.array([[0.0, 1.0], [1.0, 1.0]])
    mse_loss(pred, target).backward()
    assert np.allclose(pred.grad, 2 * (pred.data - target) / 4)

    with pytest.raises(DimensionError):
        mse_loss(Tensor([1.0, 2.0]), [1.0, 2.0, 3.0])


def test_full_model_gradient_check(tiny_config, rng):
    from img2rna.autodiff import numerical_gradient
    from img2rna.model import forward_batch, init_params, mse_loss

    params = init_params(tiny_config)
    # Larger head weights so that every parameter gets a visible gradient
    params["head.weight"].data *= 50.0
    batch = [[rng.normal(size=(8, 8)), rng.normal(size=(8, 8))], [rng.normal(size=(8, 8))]]
    target = rng.normal(size=(2, 3))

    def loss():
        return mse_loss(forward_batch(batch, params, tiny_config, mode="eval"), target)

    loss().backward()
    for name, p in params.items():
        numeric = numerical_gradient(loss, p)
        assert np.allclose(p.grad, numeric, rtol=1e-3, atol=1e-5), name


def test_target_transform_roundtrip_and_zero_variance():
    from img2rna.model import GeneTargetTransform

    expression = np.array([[1.0, 5.0, 2.0], [3.0, 5.0, 0.0], [7.0, 5.0, 4.0]])
    with pytest.warns(UserWarning, match="zero variance"):
        transform = GeneTargetTransform.fit(expression, ["A", "B", "C"])
    assert transform.std[1] == 1.0

    z = transform.transform(expression)
    assert np.allclose(z[:, 0].mean(), 0.0, atol=1e-12)
    assert np.allclose(z[:, 0].std(), 1.0)
    assert np.allclose(transform.inverse(z), expression)


def test_constant_gene_keeps_standardized_targets_bounded():
    from img2rna.model import GeneTargetTransform

    # log1p(5) averaged over three rows is not exact, so its std is a roundoff residue
    expression = np.array([[1.0, 5.0], [6.0, 5.0], [2.0, 5.0]])
    with pytest.warns(UserWarning, match="B"):
        transform = GeneTargetTransform.fit(expression, ["A", "B"])
    assert transform.std[1] == 1.0
    z = transform.transform(np.array([[1.0, 6.0]]))
    assert abs(z[0, 1]) < 1.0


def test_encode_slice_sees_the_lesion(tiny_config):
    from img2rna.model import encode_slice, init_params

    params = init_params(tiny_config)
    lesion = np.zeros((1, 8, 8))
    lesion[0, 3, 4] = 1.0
    empty = encode_slice(np.zeros((1, 8, 8)), params, tiny_config).data
    seen = encode_slice(lesion, params, tiny_config).data
    assert np.linalg.norm(seen - empty) > 0


def test_predict_genes_with_zero_weights_returns_bias(rng):
    from img2rna.autodiff import Tensor
    from img2rna.model import PatientEmbedding, predict_genes

    bias = np.array([0.5, -1.0, 2.0])
    head = {"weight": Tensor(np.zeros((3, 8))), "bias": Tensor(bias)}
    out = predict_genes(PatientEmbedding(tokens=Tensor(rng.normal(size=(16, 8)))), head)
    assert np.allclose(out.data, bias, rtol=0, atol=1e-15)


def test_predict_genes_on_equal_tokens_matches_one_token(rng):
    from img2rna.autodiff import Tensor
    from img2rna.layers import conv1d_k1
    from img2rna.model import PatientEmbedding, predict_genes

    head = {"weight": Tensor(rng.normal(size=(3, 8))), "bias": Tensor(rng.normal(size=3))}
    token = rng.normal(size=(1, 8))
    out = predict_genes(PatientEmbedding(tokens=Tensor(np.tile(token, (16, 1)))), head)
    assert np.allclose(out.data, conv1d_k1(Tensor(token), head).data[0], rtol=0, atol=1e-12)
