"""Convolution and DFT layer, verified against quadruple-loop oracles."""

import numpy as np
import pytest

from pnprestore.convolve import (
    conv2d_circular,
    conv2d_circular_adjoint,
    conv2d_valid,
    conv2d_valid_adjoint,
    dft2,
    embed_kernel,
    idft2,
    kernel_autocorrelation,
    kernel_center,
)


def valid_oracle(img: np.ndarray, k: np.ndarray, flip: bool) -> np.ndarray:
    """Nested-loop valid convolution/correlation."""
    if flip:
        k = k[::-1, ::-1]
    h, w = img.shape
    kh, kw = k.shape
    out = np.zeros((h - kh + 1, w - kw + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    acc += img[i + a, j + b] * k[a, b]
            out[i, j] = acc
    return out


def circular_oracle(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Modular-index circular convolution, center-anchored."""
    h, w = img.shape
    kh, kw = k.shape
    cy, cx = kh // 2, kw // 2
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    acc += k[a, b] * img[(i - (a - cy)) % h, (j - (b - cx)) % w]
            out[i, j] = acc
    return out


def dft_oracle(img: np.ndarray) -> np.ndarray:
    """Naive O(N^2) double sum over complex exponentials."""
    h, w = img.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    acc += img[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
            out[u, v] = acc
    return out


class TestValid:
    def test_flip_example(self):
        img = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]])
        k = np.array([[0.0, 0.5], [0.5, 0.0]])
        out = conv2d_valid(img, k, flip=True)
        # flipped kernel is [[0,.5],[.5,0]] again only if symmetric; here
        # flip gives [[0,0.5],[0.5,0]] -> same. Check against the loop oracle.
        assert np.allclose(out, valid_oracle(img, k, flip=True))
        assert out.shape == (2, 2)
        # hand value: window [[1,2],[4,5]] dot flipped k = 0*1+.5*2+.5*4+0*5 = 3
        assert out[0, 0] == pytest.approx(3.0)

    def test_correlation_vs_convolution_differ_for_asymmetric(self):
        rng = np.random.Generator(np.random.PCG64(1))
        img = rng.uniform(0, 1, (6, 6))
        k = np.array([[1.0, 0.0], [0.0, 0.0]])
        corr = conv2d_valid(img, k, flip=False)
        conv = conv2d_valid(img, k, flip=True)
        assert not np.allclose(corr, conv)
        assert np.allclose(corr, valid_oracle(img, k, flip=False))
        assert np.allclose(conv, valid_oracle(img, k, flip=True))

    def test_box_filter_mean(self):
        img = np.arange(16, dtype=float).reshape(4, 4)
        k = np.ones((3, 3))
        out = conv2d_valid(img, k, flip=True)
        assert out[0, 0] == pytest.approx(np.sum(img[:3, :3]))

    def test_quarter_kernel(self):
        img = np.arange(9, dtype=float).reshape(3, 3)
        k = np.full((2, 2), 0.25)
        out = conv2d_valid(img, k, flip=True)
        assert np.allclose(out, [[2.0, 3.0], [5.0, 6.0]])

    def test_identity_kernel(self):
        rng = np.random.Generator(np.random.PCG64(2))
        img = rng.uniform(0, 255, (5, 7))
        out = conv2d_valid(img, np.array([[1.0]]), flip=True)
        assert np.array_equal(out, img)

    def test_random_against_oracle(self):
        rng = np.random.Generator(np.random.PCG64(3))
        for _ in range(10):
            h, w = rng.integers(4, 9, size=2)
            kh, kw = rng.integers(1, 4, size=2)
            img = rng.normal(size=(h, w))
            k = rng.normal(size=(kh, kw))
            flip = bool(rng.integers(0, 2))
            assert np.allclose(conv2d_valid(img, k, flip=flip),
                               valid_oracle(img, k, flip), atol=1e-12)

    def test_kernel_larger_than_image_rejected(self):
        with pytest.raises(ValueError):
            conv2d_valid(np.ones((2, 2)), np.ones((3, 3)))


class TestCircular:
    def test_identity_1x1(self):
        rng = np.random.Generator(np.random.PCG64(4))
        img = rng.uniform(0, 255, (6, 5))
        assert np.allclose(conv2d_circular(img, np.array([[1.0]])), img)

    def test_impulse_wraps(self):
        img = np.zeros((4, 4))
        img[0, 0] = 1.0
        k = np.zeros((3, 3))
        k[0, 0] = 1.0  # offset (-1,-1) from center
        out = conv2d_circular(img, k)
        oracle = circular_oracle(img, k)
        assert np.allclose(out, oracle)
        # mass moved to (-1,-1) mod 4 = (3,3)
        assert out[3, 3] == pytest.approx(1.0)
        assert out.sum() == pytest.approx(1.0)

    def test_random_against_modular_oracle(self):
        rng = np.random.Generator(np.random.PCG64(5))
        for _ in range(8):
            h, w = rng.integers(3, 8, size=2)
            kh, kw = rng.integers(1, 4, size=2)
            img = rng.normal(size=(h, w))
            k = rng.normal(size=(kh, kw))
            assert np.allclose(conv2d_circular(img, k),
                               circular_oracle(img, k), atol=1e-12)

    def test_matches_fft_product_path(self):
        rng = np.random.Generator(np.random.PCG64(6))
        img = rng.uniform(0, 255, (16, 12))
        k = rng.uniform(0, 1, (5, 3))
        k /= k.sum()
        via_fft = idft2(dft2(img) * dft2(embed_kernel(k, img.shape)))
        assert np.allclose(conv2d_circular(img, k), via_fft, atol=1e-8)

    def test_interior_matches_valid_on_prepadded(self):
        """Wrap-free region of circular conv equals valid convolution."""
        rng = np.random.Generator(np.random.PCG64(7))
        img = rng.uniform(0, 255, (12, 14))
        k = rng.uniform(0, 1, (5, 5))
        k /= k.sum()
        cy, cx = kernel_center(k)
        circ = conv2d_circular(img, k)
        val = conv2d_valid(img, k, flip=True)
        kh, kw = k.shape
        interior = circ[cy : cy + img.shape[0] - kh + 1, cx : cx + img.shape[1] - kw + 1]
        assert np.allclose(interior, val, atol=1e-10)


class TestDft:
    def test_matches_naive_dft(self):
        rng = np.random.Generator(np.random.PCG64(8))
        img = rng.normal(size=(5, 4))
        assert np.allclose(dft2(img), dft_oracle(img), atol=1e-9)

    def test_roundtrip(self):
        rng = np.random.Generator(np.random.PCG64(9))
        img = rng.uniform(0, 255, (9, 11))
        assert np.allclose(idft2(dft2(img)), img, atol=1e-9)

    def test_hermitian_symmetry_for_real_input(self):
        rng = np.random.Generator(np.random.PCG64(10))
        img = rng.normal(size=(6, 8))
        f = dft2(img)
        h, w = img.shape
        for u in range(h):
            for v in range(w):
                assert f[u, v] == pytest.approx(np.conj(f[(-u) % h, (-v) % w]), abs=1e-9)

    def test_parseval(self):
        rng = np.random.Generator(np.random.PCG64(11))
        img = rng.normal(size=(7, 5))
        lhs = np.sum(img**2)
        rhs = np.sum(np.abs(dft2(img)) ** 2) / img.size
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_dc_bin_is_sum(self):
        img = np.arange(12, dtype=float).reshape(3, 4)
        assert dft2(img)[0, 0] == pytest.approx(img.sum())


class TestEmbedKernel:
    def test_identity_embeds_to_delta_at_origin(self):
        frame = embed_kernel(np.array([[1.0]]), (4, 4))
        expect = np.zeros((4, 4))
        expect[0, 0] = 1.0
        assert np.array_equal(frame, expect)

    def test_frequency_response_matches_circular(self):
        rng = np.random.Generator(np.random.PCG64(12))
        img = rng.normal(size=(8, 8))
        k = rng.uniform(0, 1, (3, 3))
        direct = conv2d_circular(img, k)
        via = idft2(dft2(img) * dft2(embed_kernel(k, img.shape)))
        assert np.allclose(direct, via, atol=1e-10)

    def test_too_large_rejected(self):
        with pytest.raises(ValueError):
            embed_kernel(np.ones((5, 5)), (4, 4))


class TestAutocorrelation:
    def autocorr_oracle(self, k):
        kh, kw = k.shape
        out = np.zeros((2 * kh - 1, 2 * kw - 1))
        for di in range(-kh + 1, kh):
            for dj in range(-kw + 1, kw):
                acc = 0.0
                for a in range(kh):
                    for b in range(kw):
                        ai, bj = a + di, b + dj
                        if 0 <= ai < kh and 0 <= bj < kw:
                            acc += k[a, b] * k[ai, bj]
                out[di + kh - 1, dj + kw - 1] = acc
        return out

    def test_against_nested_loop_oracle(self):
        rng = np.random.Generator(np.random.PCG64(13))
        for _ in range(6):
            kh, kw = rng.integers(1, 5, size=2)
            k = rng.uniform(0, 1, (kh, kw))
            assert np.allclose(kernel_autocorrelation(k), self.autocorr_oracle(k), atol=1e-13)

    def test_zero_lag_is_energy(self):
        k = np.array([[0.2, 0.3], [0.1, 0.4]])
        a = kernel_autocorrelation(k)
        assert a[1, 1] == pytest.approx(np.sum(k**2))

    def test_symmetric(self):
        rng = np.random.Generator(np.random.PCG64(14))
        k = rng.uniform(0, 1, (3, 4))
        a = kernel_autocorrelation(k)
        assert np.allclose(a, a[::-1, ::-1])

    def test_normal_operator_equivalence(self):
        """Circular conv with the autocorrelation == adjoint-then-forward blur."""
        rng = np.random.Generator(np.random.PCG64(15))
        img = rng.normal(size=(10, 10))
        k = rng.uniform(0, 1, (3, 3))
        k /= k.sum()
        fk = dft2(embed_kernel(k, img.shape))
        normal = idft2(np.conj(fk) * fk * dft2(img))
        kh, kw = k.shape
        via_auto = idft2(
            dft2(embed_kernel(kernel_autocorrelation(k), img.shape, center=(kh - 1, kw - 1)))
            * dft2(img)
        )
        assert np.allclose(normal, via_auto, atol=1e-10)

    def test_dc_of_normalized_kernel_autocorr_is_one(self):
        rng = np.random.Generator(np.random.PCG64(16))
        k = rng.uniform(0, 1, (5, 5))
        k /= k.sum()
        a = kernel_autocorrelation(k)
        assert a.sum() == pytest.approx(1.0, abs=1e-12)


class TestAdjoint:
    def test_inner_product_property(self):
        """<A x, r> == <x, A^T r> for A = valid true convolution."""
        rng = np.random.Generator(np.random.PCG64(17))
        for _ in range(8):
            h, w = rng.integers(5, 10, size=2)
            kh, kw = rng.integers(1, 4, size=2)
            x = rng.normal(size=(h, w))
            k = rng.normal(size=(kh, kw))
            r = rng.normal(size=(h - kh + 1, w - kw + 1))
            lhs = np.sum(conv2d_valid(x, k, flip=True) * r)
            rhs = np.sum(x * conv2d_valid_adjoint(r, k))
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_output_shape_restores_frame(self):
        r = np.ones((4, 6))
        k = np.ones((3, 2))
        assert conv2d_valid_adjoint(r, k).shape == (6, 7)

    def test_circular_inner_product_property(self):
        """<A x, r> == <x, A^T r> for A = circular convolution, odd and
        even kernel sizes alike (even sizes shift the anchor, which plain
        kernel-flipping misses)."""
        rng = np.random.Generator(np.random.PCG64(18))
        for kh, kw in ((1, 1), (3, 3), (2, 2), (2, 3), (4, 1), (5, 4)):
            x = rng.normal(size=(9, 11))
            r = rng.normal(size=(9, 11))
            k = rng.normal(size=(kh, kw))
            lhs = np.sum(conv2d_circular(x, k) * r)
            rhs = np.sum(x * conv2d_circular_adjoint(r, k))
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_circular_adjoint_equals_flip_for_odd_kernels(self):
        rng = np.random.Generator(np.random.PCG64(19))
        x = rng.normal(size=(8, 8))
        k = rng.normal(size=(3, 5))
        assert np.allclose(conv2d_circular_adjoint(x, k),
                           conv2d_circular(x, k[::-1, ::-1]), atol=1e-12)
