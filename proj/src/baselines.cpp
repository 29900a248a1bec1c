#include "cotpred/baselines.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cotpred/error.hpp"
#include "cotpred/format.hpp"

namespace cotpred {

std::string to_string(BaselineMethod method) {
    switch (method) {
    case BaselineMethod::sma: return "sma";
    case BaselineMethod::wma: return "wma";
    case BaselineMethod::arima: return "arima";
    case BaselineMethod::kalman: return "kalman";
    case BaselineMethod::persistence: return "persistence";
    }
    return "unknown";
}

BaselineMethod baseline_method_from_string(const std::string &name) {
    for (auto m : {BaselineMethod::sma, BaselineMethod::wma, BaselineMethod::arima, BaselineMethod::kalman,
                   BaselineMethod::persistence}) {
        if (to_string(m) == name) return m;
    }
    throw ArgumentError("unknown baseline method '" + name + "'");
}

double sma_forecast(std::span<const double> window) {
    if (window.empty()) throw ArgumentError("SMA of an empty window");
    return std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
}

double wma_forecast(std::span<const double> window) {
    if (window.empty()) throw ArgumentError("WMA of an empty window");
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < window.size(); ++i) {
        const double w = static_cast<double>(i + 1);
        num += w * window[i];
        den += w;
    }
    return num / den;
}

double persistence_forecast(std::span<const double> history) {
    if (history.empty()) throw ArgumentError("persistence forecast of an empty history");
    return history.back();
}

// ---------------------------------------------------------------------------
// ARIMA

namespace {

std::vector<double> difference(std::span<const double> x, int d) {
    std::vector<double> out(x.begin(), x.end());
    for (int k = 0; k < d; ++k) {
        for (std::size_t i = out.size() - 1; i > 0; --i) out[i] -= out[i - 1];
        out.erase(out.begin());
    }
    return out;
}

struct ArmaModel {
    int p = 0;
    int q = 0;
    bool intercept = false;
    // theta layout: [c?][ar 1..p][ma 1..q]
    std::size_t size() const { return static_cast<std::size_t>(p + q + (intercept ? 1 : 0)); }
};

/// CLS residuals for t >= p with pre-sample innovations zero; optionally the Jacobian.
double arma_residuals(const ArmaModel &m, std::span<const double> x, const Eigen::VectorXd &theta,
                      std::vector<double> &e, Eigen::MatrixXd *jac) {
    const std::size_t n = x.size();
    const std::size_t start = static_cast<std::size_t>(m.p);
    const std::size_t k = m.size();
    const std::size_t off = m.intercept ? 1 : 0;
    e.assign(n, 0.0);
    if (jac) jac->setZero(static_cast<Eigen::Index>(n - start), static_cast<Eigen::Index>(k));
    double sse = 0.0;
    for (std::size_t t = start; t < n; ++t) {
        double pred = m.intercept ? theta[0] : 0.0;
        for (int i = 1; i <= m.p; ++i) pred += theta[static_cast<Eigen::Index>(off + i - 1)] * x[t - i];
        for (int j = 1; j <= m.q; ++j) {
            if (t >= start + j) pred += theta[static_cast<Eigen::Index>(off + m.p + j - 1)] * e[t - j];
        }
        e[t] = x[t] - pred;
        sse += e[t] * e[t];
        if (jac) {
            // de_t/dtheta = -(regressor) - sum_j ma_j * de_{t-j}/dtheta
            const auto row = static_cast<Eigen::Index>(t - start);
            if (m.intercept) (*jac)(row, 0) = -1.0;
            for (int i = 1; i <= m.p; ++i) (*jac)(row, static_cast<Eigen::Index>(off + i - 1)) = -x[t - i];
            for (int j = 1; j <= m.q; ++j) {
                if (t >= start + j) (*jac)(row, static_cast<Eigen::Index>(off + m.p + j - 1)) = -e[t - j];
            }
            for (int j = 1; j <= m.q; ++j) {
                if (t >= start + j) {
                    const double th = theta[static_cast<Eigen::Index>(off + m.p + j - 1)];
                    jac->row(row) -= th * jac->row(static_cast<Eigen::Index>(t - j - start));
                }
            }
        }
    }
    return sse;
}

/// Long-AR residuals then OLS on lagged values and residuals.
Eigen::VectorXd hannan_rissanen(const ArmaModel &m, std::span<const double> x) {
    const std::size_t n = x.size();
    const std::size_t off = m.intercept ? 1 : 0;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.size()));
    std::vector<double> resid(n, 0.0);
    std::size_t long_order = 0;
    if (m.q > 0) {
        long_order = std::min<std::size_t>(std::max<std::size_t>(static_cast<std::size_t>(m.p + m.q) + 2, 8), n / 4);
        if (long_order >= 1) {
            const std::size_t rows = n - long_order;
            Eigen::MatrixXd X(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(long_order + 1));
            Eigen::VectorXd y(static_cast<Eigen::Index>(rows));
            for (std::size_t t = long_order; t < n; ++t) {
                const auto r = static_cast<Eigen::Index>(t - long_order);
                X(r, 0) = 1.0;
                for (std::size_t i = 1; i <= long_order; ++i) X(r, static_cast<Eigen::Index>(i)) = x[t - i];
                y(r) = x[t];
            }
            const Eigen::VectorXd b = X.completeOrthogonalDecomposition().solve(y);
            const Eigen::VectorXd fitted = X * b;
            for (std::size_t t = long_order; t < n; ++t) resid[t] = x[t] - fitted(static_cast<Eigen::Index>(t - long_order));
        }
    }
    const std::size_t start = std::max<std::size_t>(static_cast<std::size_t>(m.p), long_order + static_cast<std::size_t>(m.q));
    if (start >= n) return theta;
    const std::size_t rows = n - start;
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m.size()));
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows));
    for (std::size_t t = start; t < n; ++t) {
        const auto r = static_cast<Eigen::Index>(t - start);
        if (m.intercept) X(r, 0) = 1.0;
        for (int i = 1; i <= m.p; ++i) X(r, static_cast<Eigen::Index>(off + i - 1)) = x[t - i];
        for (int j = 1; j <= m.q; ++j) X(r, static_cast<Eigen::Index>(off + m.p + j - 1)) = resid[t - j];
        y(r) = x[t];
    }
    theta = X.completeOrthogonalDecomposition().solve(y);
    // Keep the MA start strictly invertible.
    for (int j = 0; j < m.q; ++j) {
        auto &v = theta[static_cast<Eigen::Index>(off + m.p + j)];
        v = std::clamp(v, -0.9, 0.9);
    }
    return theta;
}

bool ma_invertible(const ArmaModel &m, const Eigen::VectorXd &theta) {
    if (m.q == 0) return true;
    const std::size_t off = (m.intercept ? 1 : 0) + static_cast<std::size_t>(m.p);
    double sum_abs = 0.0;
    for (int j = 0; j < m.q; ++j) sum_abs += std::abs(theta[static_cast<Eigen::Index>(off + j)]);
    if (m.q == 1) return sum_abs < 1.0;
    // Companion-matrix roots for higher orders.
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(m.q, m.q);
    for (int j = 0; j < m.q; ++j) C(0, j) = -theta[static_cast<Eigen::Index>(off + j)];
    for (int j = 1; j < m.q; ++j) C(j, j - 1) = 1.0;
    const auto eig = C.eigenvalues();
    for (Eigen::Index i = 0; i < eig.size(); ++i) {
        if (std::abs(eig[i]) >= 1.0) return false;
    }
    return true;
}

bool is_constant(std::span<const double> x) {
    return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

} // namespace

ArimaFit fit_arima(std::span<const double> series, ArimaOrder order) {
    if (order.p < 0 || order.q < 0 || order.d < 0 || order.d > 1) throw ArgumentError("ARIMA order needs p,q >= 0, d in {0,1}");
    if (order.d == 0 && order.p + order.q < 1) throw ArgumentError("ARIMA(0,0,0) is not a model");
    const std::size_t min_len = static_cast<std::size_t>(std::max(order.p + order.d, order.q) + 10);
    if (series.size() < min_len) {
        throw ArgumentError("ARIMA needs at least " + std::to_string(min_len) + " observations, got " +
                            std::to_string(series.size()));
    }
    for (double v : series) {
        if (!std::isfinite(v)) throw ArgumentError("ARIMA input contains a non-finite value");
    }

    ArimaFit fit;
    fit.order = order;
    fit.ar.assign(static_cast<std::size_t>(order.p), 0.0);
    fit.ma.assign(static_cast<std::size_t>(order.q), 0.0);
    const auto x = difference(series, order.d);
    const ArmaModel m{order.p, order.q, order.d == 0};
    if (m.size() == 0 || is_constant(x)) {
        // Degenerate designs: reproduce the constant (or constant increment) exactly.
        if (m.intercept) fit.intercept = x.front();
        else if (order.p > 0 && x.front() != 0.0) fit.ar[0] = 1.0;
        fit.converged = true;
        return fit;
    }

    Eigen::VectorXd theta = hannan_rissanen(m, x);
    std::vector<double> e;
    Eigen::MatrixXd J;
    double sse = arma_residuals(m, x, theta, e, &J);
    constexpr int kMaxIter = 100;
    for (fit.iterations = 0; fit.iterations < kMaxIter; ++fit.iterations) {
        if (m.q == 0 && fit.iterations == 1) {
            fit.converged = true; // linear least squares: one step is exact
            break;
        }
        Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(e.data() + m.p, static_cast<Eigen::Index>(e.size() - m.p));
        const Eigen::VectorXd step = J.completeOrthogonalDecomposition().solve(-r);
        double scale = 1.0;
        bool improved = false;
        Eigen::VectorXd candidate;
        std::vector<double> e_new;
        double sse_new = sse;
        for (int halvings = 0; halvings < 30; ++halvings, scale *= 0.5) {
            candidate = theta + scale * step;
            if (!ma_invertible(m, candidate)) continue;
            sse_new = arma_residuals(m, x, candidate, e_new, nullptr);
            if (std::isfinite(sse_new) && sse_new <= sse) {
                improved = true;
                break;
            }
        }
        if (!improved) {
            fit.converged = std::isfinite(sse);
            break;
        }
        const double rel = (sse - sse_new) / std::max(sse, 1e-300);
        const double step_norm = (scale * step).norm();
        theta = candidate;
        sse = arma_residuals(m, x, theta, e, &J);
        if (rel < 1e-10 || step_norm < 1e-9 * (1.0 + theta.norm())) {
            fit.converged = true;
            ++fit.iterations;
            break;
        }
    }
    if (!std::isfinite(sse) || !theta.allFinite() || !ma_invertible(m, theta)) fit.converged = false;

    std::size_t idx = 0;
    if (m.intercept) fit.intercept = theta[static_cast<Eigen::Index>(idx++)];
    for (int i = 0; i < m.p; ++i) fit.ar[static_cast<std::size_t>(i)] = theta[static_cast<Eigen::Index>(idx++)];
    for (int j = 0; j < m.q; ++j) fit.ma[static_cast<std::size_t>(j)] = theta[static_cast<Eigen::Index>(idx++)];
    fit.sigma2 = sse / static_cast<double>(x.size() - static_cast<std::size_t>(m.p));
    return fit;
}

BaselineForecast arima_forecast(std::span<const double> history, ArimaOrder order) {
    BaselineForecast out;
    out.method = BaselineMethod::arima;
    const ArimaFit fit = fit_arima(history, order);

    std::ostringstream snap;
    snap << "order=(" << order.p << ',' << order.d << ',' << order.q << ") c=" << format_roundtrip(fit.intercept);
    for (double a : fit.ar) snap << " ar=" << format_roundtrip(a);
    for (double b : fit.ma) snap << " ma=" << format_roundtrip(b);

    if (!fit.converged) {
        out.value = history.back();
        out.fallback = true;
        out.state_snapshot = snap.str() + " fallback=persistence";
        return out;
    }
    if (is_constant(history)) {
        out.value = history.back();
        out.state_snapshot = snap.str() + " constant";
        return out;
    }

    const auto x = difference(history, order.d);
    const ArmaModel m{order.p, order.q, order.d == 0};
    Eigen::VectorXd theta(static_cast<Eigen::Index>(m.size()));
    std::size_t idx = 0;
    if (m.intercept) theta[static_cast<Eigen::Index>(idx++)] = fit.intercept;
    for (double a : fit.ar) theta[static_cast<Eigen::Index>(idx++)] = a;
    for (double b : fit.ma) theta[static_cast<Eigen::Index>(idx++)] = b;
    std::vector<double> e;
    arma_residuals(m, x, theta, e, nullptr);

    const std::size_t n = x.size();
    double next = fit.intercept;
    for (int i = 1; i <= order.p; ++i) next += fit.ar[static_cast<std::size_t>(i - 1)] * x[n - static_cast<std::size_t>(i)];
    for (int j = 1; j <= order.q; ++j) {
        if (n >= static_cast<std::size_t>(j)) next += fit.ma[static_cast<std::size_t>(j - 1)] * e[n - static_cast<std::size_t>(j)];
    }
    out.value = order.d == 1 ? history.back() + next : next;
    if (!std::isfinite(out.value)) {
        out.value = history.back();
        out.fallback = true;
        out.state_snapshot = snap.str() + " fallback=persistence";
        return out;
    }
    out.state_snapshot = snap.str();
    return out;
}

// ---------------------------------------------------------------------------
// Kalman local level

namespace {

constexpr double kPriorVariance = 1e6;

void check_kalman_inputs(std::span<const double> history, KalmanParams params) {
    if (history.empty()) throw ArgumentError("Kalman filter needs a non-empty history");
    if (!(params.q_var >= 0.0) || !(params.r_var > 0.0) || !std::isfinite(params.q_var) || !std::isfinite(params.r_var)) {
        throw ArgumentError("Kalman filter needs q_var >= 0 and r_var > 0");
    }
    for (double v : history) {
        if (!std::isfinite(v)) throw ArgumentError("Kalman input contains a non-finite value");
    }
}

} // namespace

KalmanState kalman_filter(std::span<const double> history, KalmanParams params) {
    check_kalman_inputs(history, params);
    KalmanState s{history.front(), kPriorVariance, 0.0};
    for (std::size_t t = 0; t < history.size(); ++t) {
        if (t > 0) s.variance += params.q_var; // predict
        const double gain = s.variance / (s.variance + params.r_var);
        s.level += gain * (history[t] - s.level);
        s.variance *= (1.0 - gain);
        s.last_gain = gain;
    }
    return s;
}

BaselineForecast kalman_forecast(std::span<const double> history, KalmanParams params) {
    const auto s = kalman_filter(history, params);
    BaselineForecast out;
    out.method = BaselineMethod::kalman;
    out.value = s.level;
    out.state_snapshot = "level=" + format_roundtrip(s.level) + " P=" + format_roundtrip(s.variance) +
                         " K=" + format_roundtrip(s.last_gain) + " q=" + format_roundtrip(params.q_var) +
                         " r=" + format_roundtrip(params.r_var);
    return out;
}

double kalman_concentrated_loglik(std::span<const double> series, double ratio, double *sigma2) {
    if (series.size() < 3) throw ArgumentError("likelihood needs at least 3 observations");
    // Filter with r = 1, q = ratio; the first observation only initialises.
    double level = series.front();
    double P = 1.0 + ratio; // variance of level_2 given y_1 under a diffuse start
    double sum_v2_over_f = 0.0;
    double sum_log_f = 0.0;
    const auto n = series.size() - 1;
    for (std::size_t t = 1; t < series.size(); ++t) {
        const double F = P + 1.0;
        const double v = series[t] - level;
        sum_v2_over_f += v * v / F;
        sum_log_f += std::log(F);
        const double K = P / F;
        level += K * v;
        P = P * (1.0 - K) + ratio;
    }
    const double s2 = std::max(sum_v2_over_f / static_cast<double>(n), 1e-300);
    if (sigma2) *sigma2 = s2;
    const double dn = static_cast<double>(n);
    return -0.5 * (dn * std::log(2.0 * std::numbers::pi) + dn * std::log(s2) + sum_log_f + dn);
}

KalmanParams fit_kalman(std::span<const double> series) {
    double best_ll = -std::numeric_limits<double>::infinity();
    KalmanParams best{1.0, 1.0};
    for (int k = 0; k < 13; ++k) {
        const double ratio = std::pow(10.0, -3.0 + 0.5 * k);
        double s2 = 0.0;
        const double ll = kalman_concentrated_loglik(series, ratio, &s2);
        if (ll > best_ll) {
            best_ll = ll;
            best = {ratio * s2, s2};
        }
    }
    return best;
}

} // namespace cotpred
