import numpy as np
import pytest

from sketchdiff import autodiff as ad
from sketchdiff.dataset import gen_dataset
from sketchdiff.sketchconv import _BLUR, EDGE_GAIN, to_sketch

from helpers import assert_grad_close, finite_diff_grad


def test_constant_image_maps_to_exact_zeros():
    for value in (-1.0, 0.0, 0.6):
        sk = to_sketch(np.full((32, 32), value))
        assert np.array_equal(sk, np.zeros((32, 32)))


def test_output_range_half_open():
    img = gen_dataset(4, seed=0)
    for im in img:
        sk = to_sketch(im.pixels)
        assert sk.min() >= 0.0 and sk.max() < 1.0


def test_vertical_step_edge_hand_convolution():
    """A height-2 step at column c: blur the step with the 5x5 kernel by
    hand, central-difference it, and compare the tanh response column-wise."""
    img = np.full((32, 32), -1.0)
    img[:, 16:] = 1.0
    sk = to_sketch(img)

    # hand computation on the 1-D cross-section (rows are constant)
    row = np.full(36, -1.0)  # edge-padded by 2
    row[18:] = 1.0
    k1 = _BLUR[0, 0].sum(axis=0)  # separable blur collapses to 1-D here
    blurred = np.convolve(row, k1, mode="valid")  # length 32
    padded = np.concatenate([[blurred[0]], blurred, [blurred[-1]]])
    grad = (padded[2:] - padded[:-2]) / 2.0
    expected = np.tanh(EDGE_GAIN * np.abs(grad))
    assert np.allclose(sk[10], expected, atol=1e-12)
    # ridge of near-1 response at the edge, near-0 far away
    assert sk[:, 15:17].min() > 0.95
    assert sk[:, :12].max() < 1e-6 and sk[:, 20:].max() < 1e-6


def test_jacobian_vector_products_match_finite_differences():
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((1, 1, 32, 32)) * 0.4
    w = rng.standard_normal((1, 1, 32, 32))

    node = ad.GradNode(x0, requires_grad=True)
    out = to_sketch(node)
    ad.backward(ad.sum_(ad.mul(out, ad.constant(w))))

    def f(vals):
        return float((to_sketch(ad.constant(vals)).value * w).sum())

    fd = finite_diff_grad(f, x0.copy())
    assert_grad_close(node.grad, fd)


def test_translation_equivariance_in_interior():
    im = gen_dataset(3, seed=7)[1].pixels
    shifted = np.roll(im, 3, axis=1)
    sk_then_shift = np.roll(to_sketch(im), 3, axis=1)
    shift_then_sk = to_sketch(shifted)
    interior = (slice(8, 24), slice(8, 24))
    assert np.abs(sk_then_shift[interior] - shift_then_sk[interior]).mean() <= 1e-6


def test_batch_and_node_paths_agree():
    imgs = np.stack([im.pixels for im in gen_dataset(3, seed=1)])[:, None]
    batch_out = to_sketch(imgs)
    assert batch_out.shape == (3, 1, 32, 32)
    for i in range(3):
        assert np.array_equal(batch_out[i, 0], to_sketch(imgs[i, 0]))
    node_out = to_sketch(ad.constant(imgs))
    assert np.array_equal(node_out.value, batch_out)


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        to_sketch(np.zeros((2, 3, 32, 32)))
