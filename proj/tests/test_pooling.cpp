#include "doctest.h"
#include "helpers.hpp"

#include "spool/pooling.hpp"

using namespace spool;
using testing::planted_matrix;

TEST_CASE("flat pooling definitions") {
    Tape t;
    auto h = t.constant(Matrix::from_rows({{1, 2}, {3, 4}}));
    CHECK(pool_flat(h, PoolingVariant::sum).value() == Matrix::from_rows({{4, 6}}));
    CHECK(pool_flat(h, PoolingVariant::average).value() == Matrix::from_rows({{2, 3}}));
    CHECK(pool_flat(h, PoolingVariant::max).value() == Matrix::from_rows({{3, 4}}));
    auto one = t.constant(Matrix::from_rows({{5, -1}}));
    for (auto k : {PoolingVariant::sum, PoolingVariant::average, PoolingVariant::max})
        CHECK(pool_flat(one, k).value() == Matrix::from_rows({{5, -1}}));
}

TEST_CASE("svd oracle closed forms") {
    auto a = svd_oracle(Matrix::from_rows({{3, 0}, {0, 1}}));
    CHECK(a.sigma1 == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(a.sigma2 == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(a.v1 == Matrix::from_rows({{1}, {0}}));
    auto b = svd_oracle(Matrix::from_rows({{1, 1}, {1, 1}}));
    CHECK(b.sigma1 == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(b.sigma2 == doctest::Approx(0.0));
    CHECK(b.v1[0] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-14));
    CHECK(b.v1[1] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("svd oracle self-consistency on random matrices") {
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
        const Matrix h = random_normal(8, 5, rng);
        const auto info = svd_oracle(h);
        CHECK(info.sigma1 >= info.sigma2);
        CHECK(std::abs(matmul(h, info.v1).frobenius_norm() - info.sigma1) <= 1e-8);
        CHECK(std::abs(info.v1.frobenius_norm() - 1.0) <= 1e-10);
    }
}

TEST_CASE("svd oracle recovers planted spectra") {
    Rng rng(12);
    for (int i = 0; i < 30; ++i) {
        auto p = planted_matrix(7, 4, {5.0, 2.0, 1.0}, rng);
        const auto info = svd_oracle(p.h);
        CHECK(info.sigma1 == doctest::Approx(5.0).epsilon(1e-10));
        CHECK(info.sigma2 == doctest::Approx(2.0).epsilon(1e-10));
        Matrix v(4, 1);
        for (std::size_t j = 0; j < 4; ++j) v[j] = p.v(j, 0);
        CHECK(testing::sin_angle(info.v1, v) < 1e-8);
    }
}

TEST_CASE("power iteration on rank-1 and diagonal inputs") {
    Matrix u = Matrix::from_rows({{1}, {2}, {2}});
    Matrix h = matmul(u, Matrix::from_rows({{0.6, 0.8}}));
    const auto r = power_iteration(h, 1, 5);
    const Matrix v = sign_normalize(r.v);
    CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(r.rayleigh == doctest::Approx(9.0).epsilon(1e-12));

    // tan of the angle to e₁ contracts by exactly (σ₂/σ₁)² = 1/4 per step.
    const Matrix d = Matrix::from_rows({{2, 0}, {0, 1}});
    const Matrix e1 = Matrix::from_rows({{1}, {0}});
    double prev = testing::tan_angle(start_vector(2, 5), e1);
    for (int k = 1; k <= 6; ++k) {
        const double now = testing::tan_angle(power_iteration(d, k, 5).v, e1);
        CHECK(now == doctest::Approx(prev / 4.0).epsilon(1e-9));
        prev = now;
    }
}

TEST_CASE("power iteration converges at the planted rate") {
    Rng rng(21);
    for (int i = 0; i < 100; ++i) {
        const double ratio = 0.2 + 0.5 * (i % 10) / 10.0;
        auto p = planted_matrix(6, 4, {1.0, ratio, ratio * 0.5}, rng);
        Matrix v1(4, 1);
        for (std::size_t j = 0; j < 4; ++j) v1[j] = p.v(j, 0);
        const double t0 = testing::tan_angle(start_vector(4, i), v1);
        for (int k : {1, 5}) {
            const auto r = power_iteration(p.h, k, i);
            CHECK(testing::tan_angle(r.v, v1) <= std::pow(ratio, 2 * k) * t0 * (1 + 1e-9) + 1e-12);
        }
    }
}

TEST_CASE("underflow triggers one restart") {
    const Matrix v0 = start_vector(2, 3);
    const Matrix h = Matrix::from_rows({{-v0[1], v0[0]}});
    const auto r = power_iteration(h, 2, 3);
    CHECK(r.restarted);
    CHECK(std::abs(r.v.frobenius_norm() - 1.0) < 1e-12);
    CHECK_THROWS_AS(power_iteration(Matrix(3, 2), 2, 0), DegenerateError);
}

TEST_CASE("sign normalization") {
    CHECK(sign_normalize(Matrix::from_rows({{-0.6, 0.8}})) == Matrix::from_rows({{0.6, -0.8}}));
    CHECK(sign_normalize(Matrix::from_rows({{0, -1}})) == Matrix::from_rows({{0, 1}}));
    const Matrix v = Matrix::from_rows({{1e-12, -0.3, 0.4}});
    CHECK(sign_normalize(sign_normalize(v)) == sign_normalize(v));
    CHECK(sign_normalize(v)[1] > 0.0);
    CHECK_THROWS_AS(sign_normalize(Matrix::from_rows({{1e-10, -1e-12}})), DegenerateError);
}

TEST_CASE("rs_pool examples") {
    auto d = rs_pool(Matrix::from_rows({{2, 0}, {0, 1}}), PoolingKind::rs_fixed(60, 1.0));
    CHECK(d.output[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(d.output[1]) < 1e-14);
    CHECK_FALSE(d.zero_gap);

    const Matrix h = matmul(Matrix::from_rows({{1}, {2}, {2}}), Matrix::from_rows({{0.6, 0.8}}));
    auto r = rs_pool(h, PoolingKind::rs_fixed(1, 3.0));
    CHECK(r.output[0] == doctest::Approx(1.8).epsilon(1e-13));
    CHECK(r.output[1] == doctest::Approx(2.4).epsilon(1e-13));

    auto kind = PoolingKind::rs_fixed(3, 1.0);
    auto eye = rs_pool(Matrix::identity(2), kind);
    CHECK(eye.zero_gap);
    CHECK(eye.output == sign_normalize(start_vector(2, kind.start_seed)).transposed());

    // scaled mode: τ = σ₁/α
    auto s = rs_pool(h, PoolingKind::rs_scaled(1, 2.0));
    CHECK(s.tau == doctest::Approx(1.5).epsilon(1e-13));

    auto proj = kind;
    proj.output = RsOutput::projected;
    auto pr = rs_pool(h, proj);
    CHECK(pr.output.rows() == 3);
    CHECK(pr.output.cols() == 1);
}

TEST_CASE("rs_pool properties on random inputs") {
    Rng rng(77);
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 2 + rng() % 8, d = 1 + rng() % 6;
        const Matrix h = random_normal(n, d, rng);
        const auto kind = PoolingKind::rs_fixed(1 + i % 5, 0.7);
        const Matrix out = pool(h, kind);
        CHECK(std::abs(out.frobenius_norm() - 0.7) <= 1e-10);

        const auto perm = random_permutation(n, rng);
        Matrix ph(n, d);
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t c = 0; c < d; ++c) ph(perm[u], c) = h(u, c);
        CHECK(max_abs_diff(pool(ph, kind), out) <= 1e-12);

        const Matrix other = random_normal(1 + rng() % 9, d, rng) * 10.0;
        CHECK((pool(other, kind) - out).frobenius_norm() <= 2 * 0.7 + 1e-10);
    }
}

TEST_CASE("rs_pool gradient through unrolled iterations") {
    Rng rng(30);
    int tested = 0;
    while (tested < 10) {
        const Matrix h = random_normal(5, 3, rng);
        if (svd_oracle(h).gap <= 0.5) continue;
        ++tested;
        ScalarFn f = [](Tape& t, const Var& x) {
            Var out = rs_pool(x, PoolingKind::rs_fixed(3, 1.0));
            return sum_all(mul(out, t.constant(Matrix::from_rows({{1, 0, 0}}))));
        };
        CHECK(grad_check(f, h, 1e-5) <= 1e-3);
        ScalarFn g = [](Tape& t, const Var& x) {
            Var out = rs_pool(x, PoolingKind::rs_scaled(3, 1.0));
            return sum_all(mul(out, t.constant(Matrix::from_rows({{0.3, -1, 2}}))));
        };
        CHECK(grad_check(g, h, 1e-5) <= 1e-3);
    }
}

TEST_CASE("Wedin-form stability of the top singular vector") {
    Rng rng(99);
    int trials = 0;
    while (trials < 200) {
        const Matrix h = random_normal(6, 4, rng);
        const auto info = svd_oracle(h);
        if (info.gap <= 0.5) continue;
        ++trials;
        const double radius = 0.01 * info.gap * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const Matrix delta = random_sphere(6, 4, radius, rng);
        Matrix v2 = svd_oracle(h + delta).v1;
        if (dot(v2, info.v1) < 0.0) v2 *= -1.0;
        CHECK((v2 - info.v1).frobenius_norm() <= std::sqrt(2.0) * radius / info.gap);
    }
}

TEST_CASE("pooling kind JSON round trip") {
    auto k = PoolingKind::rs_scaled(5, 2.0);
    k.start_seed = 11;
    nlohmann::json j = k;
    const auto back = j.get<PoolingKind>();
    CHECK(back.iterations == 5);
    CHECK(back.alpha == 2.0);
    CHECK(back.start_seed == 11);
    CHECK(nlohmann::json("max").get<PoolingKind>().variant == PoolingVariant::max);
    CHECK_THROWS_AS(nlohmann::json({{"kind", "sum"}, {"bogus", 1}}).get<PoolingKind>(), ValidationError);
    CHECK_THROWS_AS(nlohmann::json({{"kind", "rs_pool"}, {"K", 0}}).get<PoolingKind>(), ValidationError);
}
