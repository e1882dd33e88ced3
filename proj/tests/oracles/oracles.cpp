#include "oracles.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>
#include <sstream>

#include "t2t/flow.hpp"
#include "t2t/metrics.hpp"
#include "t2t/rng.hpp"

namespace t2t::oracle {

namespace {

// Threshold as the exact decimal it was written as ("0.3" is 3/10, not the
// nearest binary fraction), so boundary cases are decided by exact arithmetic.
struct Ratio {
    __int128 num = 0, den = 1;
};

Ratio decimal_ratio(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    if (res.ec != std::errc()) throw std::invalid_argument("threshold not representable");
    Ratio r;
    bool frac = false;
    int digits = 0;
    for (const char* c = buf; c != res.ptr; ++c) {
        if (*c == '.') {
            frac = true;
            continue;
        }
        if (*c < '0' || *c > '9') throw std::invalid_argument("threshold must be non-negative");
        r.num = r.num * 10 + (*c - '0');
        if (frac) {
            r.den *= 10;
            if (++digits > 30) throw std::invalid_argument("threshold has too many digits");
        }
    }
    return r;
}

// IoU(a, b) > t, with pixel-counted areas.
bool iou_exceeds(const Rect& a, const Rect& b, const Ratio& t) {
    long inter = 0;
    for (int y = std::max(a.y0, b.y0); y < std::min(a.y1, b.y1); ++y)
        for (int x = std::max(a.x0, b.x0); x < std::min(a.x1, b.x1); ++x) ++inter;
    if (a.area() == 0 || b.area() == 0) return t.num < 0;
    const long uni = a.area() + b.area() - inter;
    return __int128(inter) * t.den > t.num * __int128(uni);
}

LMat matmul(const LMat& a, const LMat& b) {
    const std::size_t n = a.size();
    LMat c(n, std::vector<long double>(n, 0.0L));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

LMat sqrt_psd(const LMat& s) {
    std::vector<long double> ev;
    LMat v;
    jacobi_eigen(s, ev, v);
    const std::size_t n = s.size();
    LMat out(n, std::vector<long double>(n, 0.0L));
    for (std::size_t k = 0; k < n; ++k) {
        const long double r = std::sqrt(std::max(ev[k], 0.0L));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i][j] += v[i][k] * r * v[j][k];
    }
    return out;
}

}  // namespace

std::vector<DetectionBox> brute_force_nms(const std::vector<DetectionBox>& boxes, double iou_threshold,
                                          bool class_aware) {
    std::vector<std::size_t> remaining(boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) remaining[i] = i;
    const Ratio t = decimal_ratio(iou_threshold);
    std::vector<DetectionBox> kept;
    while (!remaining.empty()) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < remaining.size(); ++j)
            if (boxes[remaining[j]].score > boxes[remaining[best]].score) best = j;
        const DetectionBox winner = boxes[remaining[best]];
        kept.push_back(winner);
        std::vector<std::size_t> next;
        for (std::size_t j = 0; j < remaining.size(); ++j) {
            if (j == best) continue;
            const DetectionBox& o = boxes[remaining[j]];
            const bool same = !class_aware || o.class_name == winner.class_name;
            if (same && iou_exceeds(winner.bbox, o.bbox, t)) continue;
            next.push_back(remaining[j]);
        }
        remaining = std::move(next);
    }
    return kept;
}

void jacobi_eigen(LMat a, std::vector<long double>& values, LMat& vectors) {
    const std::size_t n = a.size();
    vectors.assign(n, std::vector<long double>(n, 0.0L));
    for (std::size_t i = 0; i < n; ++i) vectors[i][i] = 1.0L;
    for (int sweep = 0; sweep < 100; ++sweep) {
        long double off = 0.0L, total = 0.0L;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                total += a[i][j] * a[i][j];
                if (i != j) off += a[i][j] * a[i][j];
            }
        if (off <= 1e-40L * std::max(total, 1e-300L)) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0L) continue;
                const long double theta = (a[q][q] - a[p][p]) / (2.0L * a[p][q]);
                const long double t = (theta >= 0 ? 1.0L : -1.0L) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0L));
                const long double c = 1.0L / std::sqrt(t * t + 1.0L), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const long double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const long double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const long double vkp = vectors[k][p], vkq = vectors[k][q];
                    vectors[k][p] = c * vkp - s * vkq;
                    vectors[k][q] = s * vkp + c * vkq;
                }
            }
    }
    values.resize(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = a[i][i];
}

long double frechet(const std::vector<long double>& mu1, const LMat& s1, const std::vector<long double>& mu2,
                    const LMat& s2) {
    const std::size_t n = mu1.size();
    long double d = 0.0L;
    for (std::size_t i = 0; i < n; ++i) d += (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
    const LMat r = sqrt_psd(s1);
    const LMat m = matmul(matmul(r, s2), r);
    const LMat root = sqrt_psd(m);
    for (std::size_t i = 0; i < n; ++i) d += s1[i][i] + s2[i][i] - 2.0L * root[i][i];
    return d;
}

long double weighted_loss(std::span<const float> pred, std::span<const float> target, std::span<const float> w) {
    const std::size_t per = pred.size() / w.size();
    long double s = 0.0L;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const long double d = (long double)pred[i] - (long double)target[i];
        s += (long double)w[i / per] * d * d;
    }
    return s / (long double)pred.size();
}

std::vector<SuiteResult> run_oracle_suites(std::uint64_t seed, int nms_sets, int frechet_pairs) {
    std::vector<SuiteResult> out;
    Rng rng(seed);

    {
        SuiteResult r{"nms_vs_brute_force", true, ""};
        const char* classes[] = {"car", "truck", "dog"};
        const double thresholds[] = {0.3, 0.5, 0.7};
        int mismatches = 0;
        for (int s = 0; s < nms_sets; ++s) {
            std::vector<DetectionBox> boxes(std::size_t(rng.uniform_int(0, 30)));
            for (auto& b : boxes) {
                const int x0 = rng.uniform_int(0, 56), y0 = rng.uniform_int(0, 56);
                b.bbox = {x0, y0, x0 + rng.uniform_int(1, 64 - x0), y0 + rng.uniform_int(1, 64 - y0)};
                b.class_name = classes[rng.uniform_int(0, 2)];
                b.score = rng.uniform_int(1, 8) / 8.0;  // coarse scores force ties
            }
            const double thr = thresholds[rng.uniform_int(0, 2)];
            const bool aware = rng.bernoulli(0.5);
            if (nms(boxes, thr, aware) != brute_force_nms(boxes, thr, aware)) ++mismatches;
        }
        r.passed = mismatches == 0;
        r.detail = std::to_string(nms_sets) + " sets, " + std::to_string(mismatches) + " mismatches";
        out.push_back(r);
    }

    {
        SuiteResult r{"frechet_vs_extended_precision", true, ""};
        double worst = 0.0;
        for (int p = 0; p < frechet_pairs; ++p) {
            constexpr int n = 4;
            GaussianStats g[2];
            std::vector<long double> mu[2];
            LMat sl[2];
            for (int k = 0; k < 2; ++k) {
                Eigen::MatrixXd a(n, n);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
                g[k].sigma = a * a.transpose();
                g[k].mu = Eigen::VectorXd(n);
                for (int i = 0; i < n; ++i) g[k].mu[i] = rng.normal();
                mu[k].resize(n);
                sl[k].assign(n, std::vector<long double>(n));
                for (int i = 0; i < n; ++i) {
                    mu[k][std::size_t(i)] = g[k].mu[i];
                    for (int j = 0; j < n; ++j) sl[k][std::size_t(i)][std::size_t(j)] = g[k].sigma(i, j);
                }
            }
            const double got = frechet_distance(g[0], g[1]);
            const long double want = frechet(mu[0], sl[0], mu[1], sl[1]);
            const double rel = double(std::fabs((long double)got - want) / std::max(std::fabs(want), 1e-300L));
            worst = std::max(worst, rel);
        }
        r.passed = worst < 1e-8;
        std::ostringstream d;
        d << frechet_pairs << " pairs, max rel err " << worst;
        r.detail = d.str();
        out.push_back(r);
    }

    {
        SuiteResult r{"weighted_loss", true, ""};
        int bad = 0;
        double worst = 0.0;
        for (int s = 0; s < 50; ++s) {
            const std::size_t positions = std::size_t(rng.uniform_int(1, 40)), per = std::size_t(rng.uniform_int(1, 12));
            std::vector<float> a(positions * per), b(a.size()), w(positions, 1.0f), wr(positions);
            for (auto& v : a) v = float(rng.normal());
            for (auto& v : b) v = float(rng.normal());
            for (auto& v : wr) v = float(rng.uniform(0.0, 5.0));
            if (weighted_flow_loss(a, b, w) != flow_loss(a, b)) ++bad;
            const long double want = weighted_loss(a, b, wr);
            worst = std::max(worst, double(std::fabs((long double)weighted_flow_loss(a, b, wr) - want) / want));
        }
        r.passed = bad == 0 && worst < 1e-12;
        std::ostringstream d;
        d << "unit weights bitwise mismatches " << bad << ", random weights max rel err " << worst;
        r.detail = d.str();
        out.push_back(r);
    }

    {
        SuiteResult r{"interpolation_boundaries", true, ""};
        int bad = 0;
        for (int s = 0; s < 50; ++s) {
            std::vector<float> x(std::size_t(rng.uniform_int(1, 300))), eps(x.size());
            for (auto& v : x) v = float(rng.uniform(-1.0, 1.0));
            for (auto& v : eps) v = float(rng.normal());
            const auto i0 = interpolate(x, eps, 0.0);
            const auto i1 = interpolate(x, eps, 1.0);
            const auto ih = interpolate(x, eps, 0.5);
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (i0.x_t[i] != eps[i] || i1.x_t[i] != x[i] || i0.v_target[i] != x[i] - eps[i]) ++bad;
                if (ih.x_t[i] != 0.5f * x[i] + 0.5f * eps[i]) ++bad;
            }
        }
        r.passed = bad == 0;
        r.detail = std::to_string(bad) + " mismatching elements";
        out.push_back(r);
    }
    return out;
}

}  // namespace t2t::oracle
