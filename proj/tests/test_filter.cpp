#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "insgd/adaptive_filter.hpp"
#include "insgd/tensor.hpp"

using namespace insgd::filter;

TEST_CASE("lms") {
    FilterState fs(2, 0.1, NormKind::none, 0.0);
    fs.w = {0.5, -1.0};
    const double zero[] = {0.0, 0.0};
    auto r = lms_step(fs, zero, 2.0);
    CHECK(r.w == fs.w);
    CHECK(r.error == 2.0);

    const double u[] = {1.0, 2.0};
    auto exact = lms_step(fs, u, 0.5 * 1.0 - 1.0 * 2.0);
    CHECK(exact.error == 0.0);
    CHECK(exact.w == fs.w);

    // e = 1 - (0.5 - 2) = 2.5; w += 0.1 * 2.5 * u
    auto s = lms_step(fs, u, 1.0);
    CHECK(s.error == 2.5);
    CHECK(s.w[0] == doctest::Approx(0.75));
    CHECK(s.w[1] == doctest::Approx(-0.5));
}

TEST_CASE("nlms projection") {
    FilterState fs(2, 1.0, NormKind::l2, 0.0);
    const double u[] = {1.0, 1.0};
    auto r = nlms_step(fs, u, 1.0);
    CHECK(r.w[0] == 0.5);
    CHECK(r.w[1] == 0.5);

    FilterState g(3, 0.7, NormKind::l2, 1e-6);
    g.w = {0.1, 0.2, 0.3};
    const double z[] = {0.0, 0.0, 0.0};
    CHECK(nlms_step(g, z, 4.0).w == g.w);
}

TEST_CASE("nlms with unit step lands on the constraint hyperplane") {
    insgd::Rng rng(1);
    for (int k = 0; k < 50; ++k) {
        FilterState fs(5, 1.0, NormKind::l2, 0.0);
        for (auto& v : fs.w) v = rng.normal();
        std::vector<double> u(5);
        for (auto& v : u) v = rng.normal();
        const double d = rng.normal();
        auto r = nlms_step(fs, u, d);
        CHECK(dot(u, r.w) == doctest::Approx(d).epsilon(1e-12));
    }
}

TEST_CASE("nlms is the minimum-norm correction (KKT oracle)") {
    insgd::Rng rng(2);
    for (int k = 0; k < 20; ++k) {
        const int n = 6;
        Eigen::VectorXd w0(n), u(n);
        for (int i = 0; i < n; ++i) {
            w0(i) = rng.normal();
            u(i) = rng.normal();
        }
        const double d = rng.normal();
        // minimize |w - w0|^2 subject to u.w = d
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + 1, n + 1);
        kkt.topLeftCorner(n, n) = 2.0 * Eigen::MatrixXd::Identity(n, n);
        kkt.block(0, n, n, 1) = u;
        kkt.block(n, 0, 1, n) = u.transpose();
        Eigen::VectorXd rhs(n + 1);
        rhs.head(n) = 2.0 * w0;
        rhs(n) = d;
        const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);

        FilterState fs(n, 1.0, NormKind::l2, 0.0);
        fs.w.assign(w0.data(), w0.data() + n);
        auto r = nlms_step(fs, std::span<const double>(u.data(), n), d);
        for (int i = 0; i < n; ++i) CHECK(r.w[i] == doctest::Approx(sol(i)).epsilon(1e-10));
    }
}

TEST_CASE("l1-normalized step") {
    FilterState fs(2, 1.0, NormKind::l1, 0.0);
    const double u[] = {3.0, 4.0};
    auto r = nlms_l1_step(fs, u, 1.0);
    CHECK(r.w[0] == doctest::Approx(3.0 / 7.0).epsilon(1e-15));
    CHECK(r.w[1] == doctest::Approx(4.0 / 7.0).epsilon(1e-15));

    const double neg[] = {-3.0, -4.0};
    auto f = nlms_l1_step(fs, neg, 1.0);
    CHECK(f.w[0] == -r.w[0]);
    CHECK(f.w[1] == -r.w[1]);

    // a 100x outlier: the LMS step grows by 100, the l1 step stays bounded
    FilterState lms(2, 0.01, NormKind::none, 0.0);
    FilterState l1(2, 0.01, NormKind::l1, 0.0);
    const double big[] = {300.0, 400.0};
    auto a = lms_step(lms, big, 1.0), b = nlms_l1_step(l1, big, 1.0);
    auto a1 = lms_step(lms, u, 1.0), b1 = nlms_l1_step(l1, u, 1.0);
    CHECK(a.w[0] / a1.w[0] == doctest::Approx(100.0));
    CHECK(b.w[0] / b1.w[0] == doctest::Approx(1.0));
    CHECK(std::abs(b.w[0]) < std::abs(a.w[0]));
}

TEST_CASE("activation-inverse variant") {
    CHECK(inverse_activation(Activation::tanh, 0.0) == 0.0);
    CHECK(inverse_activation(Activation::sigmoid, 0.5) == 0.0);
    CHECK_THROWS_AS(inverse_activation(Activation::tanh, 1.0), std::domain_error);
    CHECK_THROWS_AS(inverse_activation(Activation::sigmoid, 0.0), std::domain_error);
    insgd::Rng rng(3);
    for (Activation act : {Activation::tanh, Activation::sigmoid})
        for (int k = 0; k < 20; ++k) {
            FilterState fs(4, 1.0, NormKind::l2, 0.0);
            for (auto& v : fs.w) v = rng.normal(0, 0.3);
            std::vector<double> u(4);
            for (auto& v : u) v = rng.normal();
            const double d = act == Activation::tanh ? rng.uniform(-0.9, 0.9) : rng.uniform(0.1, 0.9);
            auto r = nlms_activation_step(fs, u, d, act);
            CHECK(apply_activation(act, dot(u, r.w)) == doctest::Approx(d).epsilon(1e-10));
        }
}

TEST_CASE("wiener solve") {
    Matrix eye{2, {1, 0, 0, 1}};
    const double r[] = {0.3, -0.7};
    auto w = wiener_solve(eye, r);
    CHECK(w[0] == 0.3);
    CHECK(w[1] == -0.7);

    // [[2,1],[1,3]]^-1 = [[3,-1],[-1,2]] / 5
    Matrix m{2, {2, 1, 1, 3}};
    const double b[] = {1.0, 2.0};
    auto x = wiener_solve(m, b);
    CHECK(x[0] == doctest::Approx(1.0 / 5.0).epsilon(1e-15));
    CHECK(x[1] == doctest::Approx(3.0 / 5.0).epsilon(1e-15));

    CHECK_THROWS_AS(wiener_solve(Matrix{2, {1, 2, 0, 1}}, b), SingularMatrixError);
    CHECK_THROWS_AS(wiener_solve(Matrix{2, {1, 1, 1, 1}}, b), SingularMatrixError);
    CHECK_THROWS_AS(wiener_solve(Matrix{2, {-1, 0, 0, 1}}, b), SingularMatrixError);
}

TEST_CASE("wiener solve matches Eigen on AR(1) autocorrelations") {
    insgd::Rng rng(4);
    for (double rho : {0.0, 0.5, 0.9, -0.7}) {
        const std::size_t n = 8;
        Matrix r = ar1_autocorrelation(n, rho);
        CHECK(r(0, 3) == doctest::Approx(std::pow(rho, 3)));
        std::vector<double> rdu(n);
        for (auto& v : rdu) v = rng.normal();
        auto w = wiener_solve(r, rdu);
        Eigen::MatrixXd em(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) em(i, j) = r(i, j);
        Eigen::VectorXd eb = Eigen::Map<Eigen::VectorXd>(rdu.data(), n);
        Eigen::VectorXd ew = em.llt().solve(eb);
        double resid = 0;
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(w[i] == doctest::Approx(ew(i)).epsilon(1e-10));
            double s = -rdu[i];
            for (std::size_t j = 0; j < n; ++j) s += r(i, j) * w[j];
            resid += s * s;
        }
        CHECK(std::sqrt(resid) < 1e-10);
    }
}

TEST_CASE("system identification runs") {
    auto sc = make_scenario(8, 0.5, 1e-4, 20000, 1);
    auto a = run_sysid(sc, Algo::nlms, 1.0, 1, 100);
    auto b = run_sysid(sc, Algo::nlms, 1.0, 1, 100);
    CHECK(a.final_weights == b.final_weights);
    CHECK(a.final_err_norm < 1e-2);
    CHECK_FALSE(a.diverged);
    CHECK(a.trace.front().step == 1);
    CHECK(a.trace.back().step == 20000);

    auto bad = run_sysid(sc, Algo::nlms, 2.5, 1, 100);
    CHECK(bad.diverged);
    CHECK(bad.final_mse > bad.initial_mse);

    // noiseless unit step: the running error power keeps falling
    auto clean = make_scenario(4, 0.0, 0.0, 400, 2);
    auto c = run_sysid(clean, Algo::nlms, 1.0, 2, 1);
    for (std::size_t i = 50; i < c.trace.size(); ++i) CHECK(c.trace[i].mse <= c.trace[i - 1].mse);
    CHECK(c.final_err_norm < 1e-8);
}

TEST_CASE("filter argument checks") {
    CHECK_THROWS(FilterState(0, 1.0));
    CHECK_THROWS(FilterState(2, -1.0));
    FilterState fs(2, 1.0);
    const double u[] = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(nlms_step(fs, u, 0.0), std::invalid_argument);
    CHECK(parse_algo("nlms-l1") == Algo::nlms_l1);
    CHECK(to_string(Algo::lms) == "lms");
    CHECK_THROWS(parse_algo("rls"));
}
