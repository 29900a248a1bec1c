#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "cotpred/baselines.hpp"
#include "cotpred/error.hpp"
#include "test_support.hpp"

using namespace cotpred;

namespace {

/// Textbook local-level recursion written out separately from the library:
/// a_{t|t} = a_{t|t-1} + K_t (y_t - a_{t|t-1}), P_{t+1|t} = P_{t|t} + q.
double local_level_oracle(const std::vector<double> &y, double q, double r) {
    double a = y[0];
    double p_pred = 1e6;
    for (std::size_t t = 0; t < y.size(); ++t) {
        const double k = p_pred / (p_pred + r);
        a = a + k * (y[t] - a);
        const double p_filt = (1 - k) * p_pred;
        p_pred = p_filt + q;
    }
    return a;
}

std::vector<double> ar1(std::size_t n, double phi, double sigma, std::uint64_t seed, double mean = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> e(0.0, sigma);
    std::vector<double> x(n);
    double v = 0.0;
    for (std::size_t i = 0; i < 200 + n; ++i) {
        v = phi * v + e(rng);
        if (i >= 200) x[i - 200] = mean + v;
    }
    return x;
}

} // namespace

TEST_CASE("moving averages on the reference window") {
    const std::vector<double> w = {1, 2, 3, 4, 5};
    CHECK(sma_forecast(w) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(wma_forecast(w) == doctest::Approx(55.0 / 15.0).epsilon(1e-15));
    CHECK(persistence_forecast(w) == 5.0);
    const std::vector<double> empty;
    CHECK_THROWS_AS(sma_forecast(empty), ArgumentError);
    CHECK_THROWS_AS(wma_forecast(empty), ArgumentError);
    CHECK_THROWS_AS(persistence_forecast(empty), ArgumentError);
}

TEST_CASE("moving average properties") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 500; ++rep) {
        const std::size_t W = 1 + rng() % 12;
        auto w = testing::uniform_vector(rng, W, -50, 300);
        const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
        const double s = sma_forecast(w), m = wma_forecast(w);
        CHECK(s >= *lo - 1e-9);
        CHECK(s <= *hi + 1e-9);
        CHECK(m >= *lo - 1e-9);
        CHECK(m <= *hi + 1e-9);
        // WMA oracle by explicit weights.
        double num = 0, den = 0;
        for (std::size_t i = 0; i < W; ++i) {
            num += static_cast<double>(i + 1) * w[i];
            den += static_cast<double>(i + 1);
        }
        CHECK(m == doctest::Approx(num / den).epsilon(1e-12));
        if (W > 1) {
            std::sort(w.begin(), w.end());
            if (w.front() < w.back()) CHECK(wma_forecast(w) > sma_forecast(w));
        }
    }
}

TEST_CASE("local-level Kalman filter") {
    SUBCASE("short reference series") {
        const std::vector<double> y = {1, 2, 3};
        const double v = kalman_forecast(y, {1.0, 1.0}).value;
        CHECK(v == doctest::Approx(2.4999999375031563).epsilon(1e-12));
        CHECK(v == doctest::Approx(local_level_oracle(y, 1, 1)).epsilon(1e-14));
    }
    SUBCASE("matches the oracle on random inputs") {
        std::mt19937_64 rng(8);
        for (int rep = 0; rep < 200; ++rep) {
            const auto y = testing::uniform_vector(rng, 1 + rng() % 60, 0, 100);
            const double q = std::pow(10.0, std::uniform_real_distribution<double>(-3, 3)(rng));
            const double r = std::pow(10.0, std::uniform_real_distribution<double>(-3, 3)(rng));
            const auto s = kalman_filter(y, {q, r});
            CHECK(s.level == doctest::Approx(local_level_oracle(y, q, r)).epsilon(1e-10));
            CHECK(s.last_gain > 0.0);
            CHECK(s.last_gain < 1.0);
            CHECK(s.variance > 0.0);
        }
    }
    SUBCASE("tiny observation noise tracks the last value") {
        const std::vector<double> y = {4, 9, 2, 7.5};
        CHECK(std::abs(kalman_forecast(y, {1.0, 1e-9}).value - 7.5) < 1e-6);
    }
    SUBCASE("no state noise gives the sample mean") {
        const std::vector<double> y = {4, 9, 2, 7.5, 3};
        CHECK(kalman_forecast(y, {0.0, 1.0}).value == doctest::Approx(5.1).epsilon(1e-5));
    }
    SUBCASE("argument checks") {
        const std::vector<double> y = {1, 2};
        CHECK_THROWS_AS(kalman_filter({}, {1, 1}), ArgumentError);
        CHECK_THROWS_AS(kalman_filter(y, {1, 0}), ArgumentError);
        CHECK_THROWS_AS(kalman_filter(y, {-1, 1}), ArgumentError);
        const std::vector<double> bad = {1, NAN};
        CHECK_THROWS_AS(kalman_filter(bad, {1, 1}), ArgumentError);
    }
}

TEST_CASE("Kalman noise ratio selection") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n01(0, 1);
    // Random walk: state noise dominates.
    std::vector<double> walk(2000);
    double v = 0;
    for (auto &w : walk) w = (v += n01(rng));
    const auto pw = fit_kalman(walk);
    CHECK(pw.q_var / pw.r_var >= 100.0);
    // White noise around a level: observation noise dominates.
    std::vector<double> flat(2000);
    for (auto &f : flat) f = 10 + n01(rng);
    const auto pf = fit_kalman(flat);
    CHECK(pf.q_var / pf.r_var <= 1e-2);
    // Chosen ratio is on the grid and maximises the likelihood over it.
    const double ratio = pw.q_var / pw.r_var;
    const double k = (std::log10(ratio) + 3.0) / 0.5;
    CHECK(std::abs(k - std::round(k)) < 1e-9);
    const double best = kalman_concentrated_loglik(walk, ratio);
    for (int j = 0; j < 13; ++j) CHECK(kalman_concentrated_loglik(walk, std::pow(10.0, -3.0 + 0.5 * j)) <= best + 1e-9);
}

TEST_CASE("ARIMA") {
    SUBCASE("(0,1,0) is persistence") {
        std::mt19937_64 rng(3);
        const auto h = testing::uniform_vector(rng, 50, 0, 100);
        const auto f = arima_forecast(h, {0, 1, 0});
        CHECK(f.value == doctest::Approx(h.back()).epsilon(1e-12));
    }
    SUBCASE("recovers an AR(1) coefficient") {
        const auto x = ar1(2000, 0.8, 1.0, 99, 20.0);
        const auto fit = fit_arima(x, {1, 0, 0});
        CHECK(fit.converged);
        REQUIRE(fit.ar.size() == 1);
        CHECK(std::abs(fit.ar[0] - 0.8) <= 0.05);
        CHECK(std::abs(fit.intercept / (1 - fit.ar[0]) - 20.0) < 1.0);
        CHECK(fit.sigma2 == doctest::Approx(1.0).epsilon(0.1));
    }
    SUBCASE("recovers an MA(1) coefficient") {
        std::mt19937_64 rng(4);
        std::normal_distribution<double> e(0, 1);
        std::vector<double> x(2000);
        double prev = e(rng);
        for (auto &v : x) {
            const double cur = e(rng);
            v = cur + 0.5 * prev;
            prev = cur;
        }
        const auto fit = fit_arima(x, {0, 0, 1});
        REQUIRE(fit.ma.size() == 1);
        CHECK(std::abs(fit.ma[0] - 0.5) <= 0.07);
    }
    SUBCASE("forecast of a differenced AR(1)") {
        // y_t = y_{t-1} + x_t with AR(1) increments; forecast = y_n + phi_hat * x_n.
        const auto inc = ar1(1500, 0.6, 1.0, 5);
        std::vector<double> y(inc.size());
        std::partial_sum(inc.begin(), inc.end(), y.begin());
        const auto fit = fit_arima(y, {1, 1, 0});
        const auto f = arima_forecast(y, {1, 1, 0});
        CHECK(f.value == doctest::Approx(y.back() + fit.ar[0] * (y.back() - y[y.size() - 2])).epsilon(1e-12));
        CHECK(std::abs(fit.ar[0] - 0.6) <= 0.06);
    }
    SUBCASE("constant series is a fixed point") {
        const std::vector<double> c(40, 12.5);
        const auto f = arima_forecast(c, {1, 1, 1});
        CHECK(std::abs(f.value - 12.5) < 1e-6);
    }
    SUBCASE("default order on throughput-like data is finite") {
        const auto x = ar1(400, 0.85, 6.0, 11, 40.0);
        const auto f = arima_forecast(x, {});
        CHECK(std::isfinite(f.value));
        CHECK_FALSE(f.state_snapshot.empty());
    }
    SUBCASE("too short or invalid") {
        const std::vector<double> h(11, 1.0);
        CHECK_THROWS_AS(fit_arima(h, {1, 1, 1}), ArgumentError);
        CHECK_NOTHROW(fit_arima(std::vector<double>(12, 1.0), {1, 1, 1}));
        CHECK_THROWS_AS(fit_arima(std::vector<double>(50, 1.0), {0, 0, 0}), ArgumentError);
        CHECK_THROWS_AS(fit_arima(std::vector<double>(50, 1.0), {1, 2, 0}), ArgumentError);
    }
}

TEST_CASE("baselines are deterministic") {
    const auto x = ar1(300, 0.7, 3.0, 17, 30.0);
    for (auto o : {ArimaOrder{1, 1, 1}, ArimaOrder{2, 0, 1}}) {
        const auto a = arima_forecast(x, o);
        const auto b = arima_forecast(x, o);
        CHECK(a.value == b.value);
        CHECK(a.state_snapshot == b.state_snapshot);
    }
    CHECK(fit_kalman(x).q_var == fit_kalman(x).q_var);
}

TEST_CASE("method names") {
    for (auto m : {BaselineMethod::sma, BaselineMethod::wma, BaselineMethod::arima, BaselineMethod::kalman,
                   BaselineMethod::persistence}) {
        CHECK(baseline_method_from_string(to_string(m)) == m);
    }
    CHECK_THROWS_AS(baseline_method_from_string("lstm"), ArgumentError);
}
