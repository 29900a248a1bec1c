#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cotpred {

enum class BaselineMethod { sma, wma, arima, kalman, persistence };

std::string to_string(BaselineMethod method);
BaselineMethod baseline_method_from_string(const std::string &name);

struct BaselineForecast {
    BaselineMethod method = BaselineMethod::persistence;
    double value = 0.0;
    std::string state_snapshot; // method-specific, for audit
    bool fallback = false;      // ARIMA fell back to persistence
};

double sma_forecast(std::span<const double> window);
/// Weights 1..W, oldest to newest.
double wma_forecast(std::span<const double> window);
double persistence_forecast(std::span<const double> history);

struct ArimaOrder {
    int p = 1;
    int d = 1;
    int q = 1;
};

struct ArimaFit {
    ArimaOrder order;
    double intercept = 0.0; // only estimated when d == 0
    std::vector<double> ar;
    std::vector<double> ma;
    double sigma2 = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Conditional least squares on the d-times differenced series (pre-sample
/// innovations set to zero), Gauss-Newton with step halving from a
/// Hannan-Rissanen start. Non-convergence is reported through `converged`.
ArimaFit fit_arima(std::span<const double> series, ArimaOrder order);

/// One-step forecast from a fit over the whole history. Requires
/// len >= max(p + d, q) + 10. A failed fit yields the persistence forecast with
/// fallback set.
BaselineForecast arima_forecast(std::span<const double> history, ArimaOrder order);

struct KalmanParams {
    double q_var = 1.0; // level (state) noise
    double r_var = 1.0; // observation noise
};

struct KalmanState {
    double level = 0.0;
    double variance = 0.0;
    double last_gain = 0.0;
};

/// Local-level filter over the history; the state starts at the first
/// observation with prior variance 1e6.
KalmanState kalman_filter(std::span<const double> history, KalmanParams params);
BaselineForecast kalman_forecast(std::span<const double> history, KalmanParams params);

/// Gaussian log-likelihood of the one-step prediction errors, with the
/// observation variance concentrated out for the given q/r ratio.
double kalman_concentrated_loglik(std::span<const double> series, double ratio, double *sigma2 = nullptr);

/// Picks q/r from 13 log-spaced ratios in [1e-3, 1e3] by maximum likelihood and
/// returns the matching variances.
KalmanParams fit_kalman(std::span<const double> series);

} // namespace cotpred
