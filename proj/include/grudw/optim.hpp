#pragma once

// Adam with the max-second-moment correction (amsgrad), same update as the
// common deep-learning frameworks, plus global-norm gradient clipping.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace grudw {

struct AmsGradOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AmsGrad {
public:
    AmsGrad(Eigen::Index n, AmsGradOptions options = {})
        : opt_(options),
          m_(Eigen::VectorXd::Zero(n)),
          v_(Eigen::VectorXd::Zero(n)),
          v_max_(Eigen::VectorXd::Zero(n)) {
        if (!(options.learning_rate > 0.0)) throw std::invalid_argument("AmsGrad: learning rate must be > 0");
    }

    /// One descent step: params -= lr * m_hat / (sqrt(v_max_hat) + eps).
    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
        if (grad.size() != m_.size() || params.size() != m_.size()) {
            throw std::invalid_argument("AmsGrad: size mismatch");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
        const double step_size = opt_.learning_rate / bc1;
        const double sqrt_bc2 = std::sqrt(bc2);
        for (Eigen::Index i = 0; i < m_.size(); ++i) {
            const double g = grad(i);
            m_(i) = opt_.beta1 * m_(i) + (1.0 - opt_.beta1) * g;
            v_(i) = opt_.beta2 * v_(i) + (1.0 - opt_.beta2) * g * g;
            v_max_(i) = std::max(v_max_(i), v_(i));
            params(i) -= step_size * m_(i) / (std::sqrt(v_max_(i)) / sqrt_bc2 + opt_.eps);
        }
    }

    long steps() const noexcept { return t_; }
    const AmsGradOptions& options() const noexcept { return opt_; }

private:
    AmsGradOptions opt_;
    Eigen::VectorXd m_, v_, v_max_;
    long t_ = 0;
};

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the norm
/// before clipping. Gradients already inside the ball are left untouched.
inline double clip_global_norm(Eigen::VectorXd& grad, double max_norm) {
    const double norm = grad.norm();
    if (norm > max_norm && norm > 0.0) grad *= max_norm / norm;
    return norm;
}

}  // namespace grudw
