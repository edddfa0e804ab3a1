#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "sclab/rng.hpp"

namespace sclab {

/// A minibatch abstracted to its composition and margins: n_ba bias-aligned
/// samples correctly predicted with logit margin alpha, n_bc bias-conflicting
/// samples mispredicted with margin beta (the spurious-rule regime).
struct MarginBatch {
    std::size_t n_bc = 1;
    std::size_t n_ba = 1;
    double alpha = 1.0;
    double beta = 1.0;

    void validate() const {
        if (n_bc < 1 || n_ba < 1) throw std::invalid_argument("MarginBatch: counts must be >= 1");
        if (alpha <= 0.0 || beta <= 0.0) throw std::invalid_argument("MarginBatch: margins must be > 0");
    }
};

struct Prop1Result {
    double exact_ratio = 0.0; // [n_bc log(1+e^{k beta})] / [n_ba log(1+e^{-k alpha})]
    double asymptote = 0.0;   // n_bc k beta / (n_ba e^{-k alpha})
};

/// BC/BA cross-entropy loss ratio under logit scaling k, evaluated with
/// log1p so neither side overflows or truncates to zero for any k where the
/// ratio is representable.
inline Prop1Result prop1_ratio(const MarginBatch& batch, double k) {
    batch.validate();
    if (k < 0.0) throw std::invalid_argument("prop1_ratio: k must be >= 0");
    const double kb = k * batch.beta;
    const double ka = k * batch.alpha;
    // log(1 + e^{kb}) = kb + log1p(e^{-kb}) for kb > 0.
    const double loss_bc = kb > 0.0 ? kb + std::log1p(std::exp(-kb)) : std::log1p(std::exp(kb));
    const double loss_ba = std::log1p(std::exp(-ka));
    Prop1Result res;
    const double nbc = static_cast<double>(batch.n_bc);
    const double nba = static_cast<double>(batch.n_ba);
    res.exact_ratio = loss_ba > 0.0 ? (nbc * loss_bc) / (nba * loss_ba)
                                    : std::numeric_limits<double>::infinity();
    res.asymptote = nbc * kb * std::exp(ka) / nba;
    return res;
}

/// Two-class toy satisfying the bias-decomposable conditions: logits are
/// gamma_c * onehot(y) + gamma_s * onehot(b) (core favors the true class,
/// spurious favors the bias class), the remainder part is zero, and the core
/// trainable direction is gated by the bias-aligned indicator so its
/// gradient vanishes exactly on bias-conflicting samples ("converged core").
/// Constructed from the induced margins: alpha = gamma_c + gamma_s is the
/// bias-aligned margin, beta = gamma_s - gamma_c the bias-conflicting one;
/// beta > 0 makes the network predict by the spurious rule.
class BiasDecomposableToy {
public:
    BiasDecomposableToy(double alpha, double beta)
        : gamma_core_((alpha - beta) / 2.0), gamma_spur_((alpha + beta) / 2.0) {
        if (alpha <= 0.0 || beta <= 0.0 || beta >= alpha) {
            throw std::invalid_argument("BiasDecomposableToy: need alpha > beta > 0");
        }
        verify_conditions(1000);
    }

    double gamma_core() const { return gamma_core_; }
    double gamma_spur() const { return gamma_spur_; }
    double alpha() const { return gamma_core_ + gamma_spur_; }
    double beta() const { return gamma_spur_ - gamma_core_; }

    /// f_c(x)[j] for a sample with labels (y, b).
    double core_logit(int y, int /*b*/, int j) const { return j == y ? gamma_core_ : 0.0; }
    /// f_s(x)[j].
    double spurious_logit(int /*y*/, int b, int j) const { return j == b ? gamma_spur_ : 0.0; }

    /// Checks the decomposability inequalities on sampled label pairs:
    /// f_c[y]-f_c[b] >= 0 and f_s[y]-f_s[b] <= 0, equality exactly when y=b,
    /// plus the converged-core gradient condition on BC samples.
    void verify_conditions(std::size_t n_samples) const {
        Rng rng(0x746f79636865636bULL);
        for (std::size_t i = 0; i < n_samples; ++i) {
            const int y = rng.bernoulli(0.5) ? 1 : 0;
            const int b = rng.bernoulli(0.5) ? 1 : 0;
            const double dc = core_logit(y, b, y) - core_logit(y, b, b);
            const double ds = spurious_logit(y, b, y) - spurious_logit(y, b, b);
            if (y == b) {
                if (dc != 0.0 || ds != 0.0) throw std::logic_error("toy: equality condition violated");
            } else {
                if (!(dc > 0.0)) throw std::logic_error("toy: core condition violated");
                if (!(ds < 0.0)) throw std::logic_error("toy: spurious condition violated");
                // Core gradient direction is gated by the BA indicator, which
                // is 0 here, so the converged-core condition holds exactly.
                if (core_grad_gate(y, b) != 0.0) throw std::logic_error("toy: core gradient not converged");
            }
        }
    }

    /// Gate multiplying the core subnetwork's trainable direction: the
    /// bias-aligned indicator.
    static double core_grad_gate(int y, int b) { return y == b ? 1.0 : 0.0; }

private:
    double gamma_core_;
    double gamma_spur_;
};

namespace detail {

// ||softmax(z) - onehot(y)||_2 for the 2-class toy logits scaled by k.
inline double softmax_error_norm(const BiasDecomposableToy& toy, int y, int b, double k) {
    const double zy = k * (toy.core_logit(y, b, y) + toy.spurious_logit(y, b, y));
    const double zo = k * (toy.core_logit(y, b, 1 - y) + toy.spurious_logit(y, b, 1 - y));
    // pi_y = sigmoid(zy - zo); 1 - pi_y computed stably.
    const double diff = zy - zo;
    const double one_minus_pi = 1.0 / (1.0 + std::exp(diff));
    return std::sqrt(2.0) * one_minus_pi;
}

} // namespace detail

/// Ratio of summed spurious / core gradient Frobenius norms over a batch of
/// n_bc bias-conflicting and n_ba bias-aligned samples at logit scale k.
/// At k = 0 all gradients carry a common factor k = 0; the ratio is returned
/// as its k -> 0 limit (the common factor cancels). Returns +infinity if the
/// core sum underflows to zero at finite k.
inline double prop2_gradient_ratio(const BiasDecomposableToy& toy, std::size_t n_bc, std::size_t n_ba,
                                   double k) {
    if (n_ba < 1) throw std::invalid_argument("prop2_gradient_ratio: need n_ba >= 1");
    if (k < 0.0) throw std::invalid_argument("prop2_gradient_ratio: k must be >= 0");
    const double scale = k > 0.0 ? k : 1.0; // k = 0: common factor cancels in the limit
    double num = 0.0, den = 0.0;
    // BC samples: (y, b) = (0, 1); BA: (0, 0). Classes are symmetric.
    const double e_bc = detail::softmax_error_norm(toy, 0, 1, k);
    const double e_ba = detail::softmax_error_norm(toy, 0, 0, k);
    num += static_cast<double>(n_bc) * scale * e_bc * 1.0; // spurious gate = 1
    num += static_cast<double>(n_ba) * scale * e_ba * 1.0;
    den += static_cast<double>(n_bc) * scale * e_bc * BiasDecomposableToy::core_grad_gate(0, 1);
    den += static_cast<double>(n_ba) * scale * e_ba * BiasDecomposableToy::core_grad_gate(0, 0);
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return num / den;
}

/// Least-squares slope of log(ratio) against k over the given grid; by the
/// proposition this approaches the bias-aligned margin alpha.
inline double prop2_fitted_exponent(const BiasDecomposableToy& toy, std::size_t n_bc, std::size_t n_ba,
                                    std::span<const double> k_grid) {
    if (k_grid.size() < 2) throw std::invalid_argument("prop2_fitted_exponent: need >= 2 grid points");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = static_cast<double>(k_grid.size());
    for (double k : k_grid) {
        const double r = prop2_gradient_ratio(toy, n_bc, n_ba, k);
        if (!std::isfinite(r)) throw std::runtime_error("prop2_fitted_exponent: ratio not finite on grid");
        const double y = std::log(r);
        sx += k;
        sy += y;
        sxx += k * k;
        sxy += k * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace sclab
