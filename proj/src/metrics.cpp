#include "t2t/metrics.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "t2t/rng.hpp"

namespace t2t {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": image shapes differ");
}

double psnr_from_mse(double mse, double peak) {
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

std::vector<double> grayscale(const Image& img) {
    std::vector<double> g(img.pixels());
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int c = 0; c < img.channels; ++c) s += img.at(y, x, c);
            g[std::size_t(y) * img.width + x] = s / img.channels;
        }
    return g;
}

constexpr int kGrid = 16;
constexpr int kIn = kGrid * kGrid * 3;

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw std::runtime_error(std::string(what) + ": eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < -tol) throw std::invalid_argument(std::string(what) + ": covariance is not positive semidefinite");
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double psnr(const Image& a, const Image& b, double peak) {
    require_same(a, b, "psnr");
    if (a.data.empty()) throw std::invalid_argument("psnr: empty image");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        sq += d * d;
    }
    return psnr_from_mse(sq / double(a.data.size()), peak);
}

double masked_psnr(const Image& a, const Image& b, const MaskSpec& mask, double peak) {
    require_same(a, b, "masked_psnr");
    if (mask.height != a.height || mask.width != a.width) throw std::invalid_argument("masked_psnr: mask shape differs");
    double sq = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (mask.at(y, x)) continue;
            for (int c = 0; c < a.channels; ++c) {
                const double d = double(a.at(y, x, c)) - double(b.at(y, x, c));
                sq += d * d;
            }
            n += std::size_t(a.channels);
        }
    if (n == 0) throw std::invalid_argument("masked_psnr: the mask has no region to restore");
    return psnr_from_mse(sq / double(n), peak);
}

double ssim(const Image& a, const Image& b, int window, double k1, double k2) {
    require_same(a, b, "ssim");
    if (window < 1) throw std::invalid_argument("ssim: window must be positive");
    if (a.height < window || a.width < window) throw std::invalid_argument("ssim: image smaller than the window");
    const double c1 = (k1 * 1.0) * (k1 * 1.0), c2 = (k2 * 1.0) * (k2 * 1.0);
    const auto ga = grayscale(a), gb = grayscale(b);
    const double n = double(window) * window;
    double total = 0.0;
    int tiles = 0;
    for (int ty = 0; ty + window <= a.height; ty += window)
        for (int tx = 0; tx + window <= a.width; tx += window) {
            double sa = 0.0, sb = 0.0;
            for (int y = ty; y < ty + window; ++y)
                for (int x = tx; x < tx + window; ++x) {
                    sa += ga[std::size_t(y) * a.width + x];
                    sb += gb[std::size_t(y) * a.width + x];
                }
            const double ma = sa / n, mb = sb / n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int y = ty; y < ty + window; ++y)
                for (int x = tx; x < tx + window; ++x) {
                    const double da = ga[std::size_t(y) * a.width + x] - ma;
                    const double db = gb[std::size_t(y) * a.width + x] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= n;
            vb /= n;
            cov /= n;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++tiles;
        }
    return total / tiles;
}

double frechet_distance(const GaussianStats& s1, const GaussianStats& s2) {
    const Eigen::Index d = s1.mu.size();
    if (s2.mu.size() != d || s1.sigma.rows() != d || s1.sigma.cols() != d || s2.sigma.rows() != d ||
        s2.sigma.cols() != d)
        throw std::invalid_argument("frechet_distance: dimension mismatch");
    if (d == 0) throw std::invalid_argument("frechet_distance: empty statistics");
    const Eigen::MatrixXd a = 0.5 * (s1.sigma + s1.sigma.transpose());
    const Eigen::MatrixXd b = 0.5 * (s2.sigma + s2.sigma.transpose());
    const Eigen::MatrixXd ra = symmetric_sqrt(a, "frechet_distance");
    symmetric_sqrt(b, "frechet_distance");  // PSD check
    Eigen::MatrixXd m = ra * b * ra;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw std::runtime_error("frechet_distance: eigendecomposition failed");
    const Eigen::VectorXd ev = es.eigenvalues();
    const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < -tol) throw std::invalid_argument("frechet_distance: covariance product is indefinite");
        tr_sqrt += std::sqrt(std::max(ev[i], 0.0));
    }
    const double dist = (s1.mu - s2.mu).squaredNorm() + a.trace() + b.trace() - 2.0 * tr_sqrt;
    return std::max(dist, 0.0);
}

Embedder random_projection_embedder(std::uint64_t seed, int dims) {
    if (dims < 1) throw std::invalid_argument("random_projection_embedder: dims must be positive");
    auto proj = std::make_shared<Eigen::MatrixXd>(dims, kIn);
    Rng rng(seed);
    const double s = 1.0 / std::sqrt(double(kIn));
    for (int r = 0; r < dims; ++r)
        for (int c = 0; c < kIn; ++c) (*proj)(r, c) = rng.normal() * s;
    return [proj](const Image& img) {
        if (img.channels != 3 || img.height < kGrid || img.width < kGrid)
            throw std::invalid_argument("embedder: expects RGB images of at least 16x16");
        Eigen::VectorXd thumb(kIn);
        for (int gy = 0; gy < kGrid; ++gy) {
            const int y0 = gy * img.height / kGrid, y1 = (gy + 1) * img.height / kGrid;
            for (int gx = 0; gx < kGrid; ++gx) {
                const int x0 = gx * img.width / kGrid, x1 = (gx + 1) * img.width / kGrid;
                for (int c = 0; c < 3; ++c) {
                    double sum = 0.0;
                    for (int y = y0; y < y1; ++y)
                        for (int x = x0; x < x1; ++x) sum += img.at(y, x, c);
                    thumb[(gy * kGrid + gx) * 3 + c] = sum / double((y1 - y0) * (x1 - x0));
                }
            }
        }
        return Eigen::VectorXd(*proj * thumb);
    };
}

GaussianStats feature_stats(const std::vector<Image>& images, const Embedder& embedder) {
    if (images.size() < 2) throw std::invalid_argument("feature_stats: need at least two images");
    std::vector<Eigen::VectorXd> feats;
    feats.reserve(images.size());
    for (const auto& img : images) feats.push_back(embedder(img));
    const Eigen::Index d = feats[0].size();
    GaussianStats s;
    s.mu = Eigen::VectorXd::Zero(d);
    for (const auto& f : feats) {
        if (f.size() != d) throw std::invalid_argument("feature_stats: embedder returned varying sizes");
        s.mu += f;
    }
    s.mu /= double(feats.size());
    s.sigma = Eigen::MatrixXd::Zero(d, d);
    for (const auto& f : feats) {
        const Eigen::VectorXd c = f - s.mu;
        s.sigma.noalias() += c * c.transpose();
    }
    s.sigma /= double(feats.size() - 1);
    return s;
}

}  // namespace t2t
