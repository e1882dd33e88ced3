#include <doctest.h>

#include <cmath>

#include "oracles.hpp"

using namespace t2t;

TEST_CASE("brute-force nms agrees with hand examples") {
    const std::vector<DetectionBox> boxes = {
        {{0, 0, 10, 10}, "car", 0.9},
        {{1, 1, 11, 11}, "car", 0.8},
        {{1, 1, 11, 11}, "dog", 0.7},
        {{30, 30, 40, 40}, "car", 0.6},
    };
    const auto aware = oracle::brute_force_nms(boxes, 0.5, true);
    REQUIRE(aware.size() == 3);
    CHECK(aware[0] == boxes[0]);
    CHECK(aware[1] == boxes[2]);
    CHECK(aware[2] == boxes[3]);
    CHECK(oracle::brute_force_nms(boxes, 0.5, false).size() == 2);
}

TEST_CASE("jacobi eigendecomposition reconstructs the matrix") {
    const oracle::LMat a = {{4, 1, 0.5L}, {1, 3, 0.25L}, {0.5L, 0.25L, 2}};
    std::vector<long double> ev;
    oracle::LMat v;
    oracle::jacobi_eigen(a, ev, v);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            long double s = 0;
            for (std::size_t k = 0; k < 3; ++k) s += v[i][k] * ev[k] * v[j][k];
            CHECK(double(std::fabs(s - a[i][j])) < 1e-15);
        }
}

TEST_CASE("oracle suites pass on reduced sizes") {
    for (const auto& r : oracle::run_oracle_suites(3, 200, 20)) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
}

TEST_CASE("iou exactly at the threshold is not suppressed") {
    const std::vector<DetectionBox> boxes = {{{0, 0, 10, 10}, "car", 0.9}, {{0, 0, 10, 3}, "car", 0.8}};
    CHECK(iou(boxes[0].bbox, boxes[1].bbox) == 0.3);
    CHECK(nms(boxes, 0.3, true).size() == 2);
    CHECK(oracle::brute_force_nms(boxes, 0.3, true).size() == 2);
    CHECK(oracle::brute_force_nms(boxes, 0.29, true).size() == 1);
}
