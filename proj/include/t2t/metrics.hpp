#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "t2t/image.hpp"
#include "t2t/masking.hpp"

namespace t2t {

/// PSNR in dB; identical images give +infinity.
double psnr(const Image& a, const Image& b, double peak = 1.0);

/// Mean SSIM over non-overlapping window x window tiles of the channel-mean
/// grayscale images, uniform weights, C1 = (K1 * L)^2, C2 = (K2 * L)^2 with L = 1.
/// Partial tiles at the right and bottom edges are ignored.
double ssim(const Image& a, const Image& b, int window = 8, double k1 = 0.01, double k2 = 0.03);

/// PSNR over the pixels the mask marks for restoration (mask value 0).
double masked_psnr(const Image& a, const Image& b, const MaskSpec& mask, double peak = 1.0);

struct GaussianStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
};

/// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)). The square root uses the
/// symmetric form S1^(1/2) S2 S1^(1/2), whose eigenvalues equal those of S1 S2.
double frechet_distance(const GaussianStats& s1, const GaussianStats& s2);

using Embedder = std::function<Eigen::VectorXd(const Image&)>;

/// Fixed seeded random projection of a 16 x 16 area-averaged RGB thumbnail to
/// `dims` features. A proxy embedding, not comparable with Inception features.
Embedder random_projection_embedder(std::uint64_t seed = 0x7e57, int dims = 64);

/// Mean and unbiased covariance of the embedded images (at least two).
GaussianStats feature_stats(const std::vector<Image>& images, const Embedder& embedder);

}  // namespace t2t
