#pragma once

// GRU-D recurrent cell with a Weibull output head.
//
// Per step t, with delta in years:
//   gamma_x = exp(-max(0, w_x * delta_t + b_x))            (per feature)
//   x_hat   = m x + (1 - m)(gamma_x x_last + (1 - gamma_x) x_mean)
//   gamma_h = exp(-max(0, w_h * gap_t + b_h))              (per hidden unit)
//   h_dec   = gamma_h * h_{t-1}
//   z = sigmoid(W_z [x_hat; h_dec; m] + b_z)
//   r = sigmoid(W_r [x_hat; h_dec; m] + b_r)
//   c = tanh(W_c [x_hat; r * h_dec; m] + b_c)
//   h_t = (1 - z) h_dec + z c
//   kappa  = softplus(a_0) + 1e-3,  lambda = softplus(a_1) + 1e-3,  a = W_o h_t + b_o
//
// Parameters live in one flat vector so the optimiser, gradient clipping and
// checkpointing can treat them uniformly.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "encode.hpp"
#include "error.hpp"
#include "grid.hpp"
#include "random.hpp"
#include "weibull.hpp"

namespace grudw {

inline constexpr double kOutputFloor = 1e-3;

/// Restricts kappa to center +- halfwidth through a tanh map.
struct FixedKappa {
    double center = 3.25;
    double halfwidth = 0.1;

    friend bool operator==(const FixedKappa&, const FixedKappa&) = default;
};

struct TensorInfo {
    std::string name;
    Eigen::Index offset;
    Eigen::Index rows;
    Eigen::Index cols;
};

class GrudParameters {
public:
    using Vec = Eigen::VectorXd;
    using Mat = Eigen::MatrixXd;
    using VecMap = Eigen::Map<Vec>;
    using MatMap = Eigen::Map<Mat>;
    using CVecMap = Eigen::Map<const Vec>;
    using CMatMap = Eigen::Map<const Mat>;

    GrudParameters() = default;
    GrudParameters(Eigen::Index n_features, Eigen::Index hidden)
        : n_features_(n_features), hidden_(hidden), layout_(make_layout(n_features, hidden)) {
        flat_ = Vec::Zero(layout_.back().offset + layout_.back().rows * layout_.back().cols);
    }

    Eigen::Index n_features() const noexcept { return n_features_; }
    Eigen::Index hidden() const noexcept { return hidden_; }
    Eigen::Index input_width() const noexcept { return 2 * n_features_ + hidden_; }
    Eigen::Index size() const noexcept { return flat_.size(); }

    Vec& flat() noexcept { return flat_; }
    const Vec& flat() const noexcept { return flat_; }
    const std::vector<TensorInfo>& layout() const noexcept { return layout_; }

    GrudParameters zeros_like() const {
        GrudParameters g = *this;
        g.flat_.setZero();
        return g;
    }

    VecMap input_decay_w() { return vec(0); }
    VecMap input_decay_b() { return vec(1); }
    VecMap hidden_decay_w() { return vec(2); }
    VecMap hidden_decay_b() { return vec(3); }
    MatMap update_w() { return mat(4); }
    VecMap update_b() { return vec(5); }
    MatMap reset_w() { return mat(6); }
    VecMap reset_b() { return vec(7); }
    MatMap candidate_w() { return mat(8); }
    VecMap candidate_b() { return vec(9); }
    MatMap head_w() { return mat(10); }
    VecMap head_b() { return vec(11); }

    CVecMap input_decay_w() const { return vec(0); }
    CVecMap input_decay_b() const { return vec(1); }
    CVecMap hidden_decay_w() const { return vec(2); }
    CVecMap hidden_decay_b() const { return vec(3); }
    CMatMap update_w() const { return mat(4); }
    CVecMap update_b() const { return vec(5); }
    CMatMap reset_w() const { return mat(6); }
    CVecMap reset_b() const { return vec(7); }
    CMatMap candidate_w() const { return mat(8); }
    CVecMap candidate_b() const { return vec(9); }
    CMatMap head_w() const { return mat(10); }
    CVecMap head_b() const { return vec(11); }

    std::optional<FixedKappa> fixed_kappa;

    static std::vector<TensorInfo> make_layout(Eigen::Index F, Eigen::Index H) {
        const Eigen::Index G = 2 * F + H;
        std::vector<TensorInfo> out;
        Eigen::Index off = 0;
        auto add = [&](const char* name, Eigen::Index rows, Eigen::Index cols) {
            out.push_back({name, off, rows, cols});
            off += rows * cols;
        };
        add("input_decay_w", F, 1);
        add("input_decay_b", F, 1);
        add("hidden_decay_w", H, 1);
        add("hidden_decay_b", H, 1);
        add("update_w", H, G);
        add("update_b", H, 1);
        add("reset_w", H, G);
        add("reset_b", H, 1);
        add("candidate_w", H, G);
        add("candidate_b", H, 1);
        add("head_w", 2, H);
        add("head_b", 2, 1);
        return out;
    }

private:
    VecMap vec(std::size_t i) { return VecMap(flat_.data() + layout_[i].offset, layout_[i].rows); }
    CVecMap vec(std::size_t i) const { return CVecMap(flat_.data() + layout_[i].offset, layout_[i].rows); }
    MatMap mat(std::size_t i) {
        return MatMap(flat_.data() + layout_[i].offset, layout_[i].rows, layout_[i].cols);
    }
    CMatMap mat(std::size_t i) const {
        return CMatMap(flat_.data() + layout_[i].offset, layout_[i].rows, layout_[i].cols);
    }

    Eigen::Index n_features_ = 0;
    Eigen::Index hidden_ = 0;
    std::vector<TensorInfo> layout_;
    Vec flat_;
};

inline double softplus(double a) { return a > 30.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)); }
inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

inline double softplus_inverse(double y) {
    if (!(y > 0.0)) throw std::domain_error("softplus_inverse: argument must be > 0");
    return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

/// Glorot-uniform gate weights, zero decay weights (gamma = 1 at start), zero
/// head weights, and head biases targeting kappa = 1 and lambda = mean_target.
inline GrudParameters init_parameters(Eigen::Index n_features, Eigen::Index hidden, std::uint64_t seed,
                                      double mean_target = 1.0, std::optional<FixedKappa> fixed_kappa = {}) {
    if (n_features < 1 || hidden < 1) throw std::invalid_argument("init_parameters: sizes must be >= 1");
    GrudParameters p(n_features, hidden);
    p.fixed_kappa = fixed_kappa;
    Rng rng(derive_seed(seed, 0x9a7e));
    const double limit = std::sqrt(6.0 / double(p.input_width() + hidden));
    for (auto w : {p.update_w(), p.reset_w(), p.candidate_w()}) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
        }
    }
    p.head_b()(0) = fixed_kappa ? 0.0 : softplus_inverse(1.0 - kOutputFloor);
    p.head_b()(1) = softplus_inverse(std::max(mean_target - kOutputFloor, 1e-2));
    return p;
}

// ---------------------------------------------------------------------------
// Single-step building blocks.

struct DecayFactors {
    Eigen::VectorXd gamma_x;
    Eigen::VectorXd gamma_h;
};

/// Input decay per feature from its own gap, hidden decay from the scalar
/// elapsed time since the previous step. Both gaps are given in days.
inline DecayFactors decay(const Eigen::VectorXd& delta_days, double elapsed_days, const GrudParameters& p) {
    DecayFactors out;
    const Eigen::VectorXd pre_x = p.input_decay_w().cwiseProduct(delta_days / kDaysPerYear) + p.input_decay_b();
    out.gamma_x = (-pre_x.cwiseMax(0.0)).array().exp();
    const Eigen::VectorXd pre_h = p.hidden_decay_w() * (elapsed_days / kDaysPerYear) + p.hidden_decay_b();
    out.gamma_h = (-pre_h.cwiseMax(0.0)).array().exp();
    return out;
}

/// Decay-to-mean imputation; `last_observed` is updated where m = 1.
inline Eigen::VectorXd impute(const Eigen::VectorXd& x, const Eigen::VectorXd& m, const Eigen::VectorXd& gamma_x,
                              Eigen::VectorXd& last_observed, const Eigen::VectorXd& empirical_means) {
    Eigen::VectorXd x_hat = m.cwiseProduct(x) +
                            (Eigen::VectorXd::Ones(m.size()) - m)
                                .cwiseProduct(gamma_x.cwiseProduct(last_observed) +
                                              (Eigen::VectorXd::Ones(m.size()) - gamma_x).cwiseProduct(empirical_means));
    for (Eigen::Index d = 0; d < m.size(); ++d) {
        if (m(d) > 0.5) last_observed(d) = x(d);
    }
    return x_hat;
}

namespace detail {

// Gated update shared by cell_step and forward. Outputs are written into the
// supplied columns.
template <typename Out>
void cell_forward(const GrudParameters& p, const Eigen::Ref<const Eigen::VectorXd>& x_hat,
                  const Eigen::Ref<const Eigen::VectorXd>& m, const Eigen::Ref<const Eigen::VectorXd>& h_prev,
                  const Eigen::Ref<const Eigen::VectorXd>& gamma_h, Eigen::VectorXd& u, Out&& h_dec, Out&& z, Out&& r,
                  Out&& c, Out&& h) {
    const Eigen::Index F = p.n_features();
    const Eigen::Index H = p.hidden();
    h_dec = gamma_h.cwiseProduct(h_prev);
    u.resize(2 * F + H);
    u.head(F) = x_hat;
    u.segment(F, H) = h_dec;
    u.tail(F) = m;
    z.noalias() = p.update_w() * u;
    z += p.update_b();
    r.noalias() = p.reset_w() * u;
    r += p.reset_b();
    for (Eigen::Index i = 0; i < H; ++i) {
        z(i) = sigmoid(z(i));
        r(i) = sigmoid(r(i));
    }
    u.segment(F, H) = r.cwiseProduct(h_dec);
    c.noalias() = p.candidate_w() * u;
    c += p.candidate_b();
    c = c.array().tanh();
    h = h_dec + z.cwiseProduct(c - h_dec);
}

inline double kappa_from_pre(const GrudParameters& p, double a) {
    if (p.fixed_kappa) return p.fixed_kappa->center + p.fixed_kappa->halfwidth * std::tanh(a);
    return softplus(a) + kOutputFloor;
}

inline double kappa_slope(const GrudParameters& p, double a) {
    if (p.fixed_kappa) {
        const double t = std::tanh(a);
        return p.fixed_kappa->halfwidth * (1.0 - t * t);
    }
    return sigmoid(a);
}

}  // namespace detail

struct CellState {
    Eigen::VectorXd h_decayed;
    Eigen::VectorXd update_gate;
    Eigen::VectorXd reset_gate;
    Eigen::VectorXd candidate;
    Eigen::VectorXd h;
};

inline CellState cell_step(const GrudParameters& p, const Eigen::VectorXd& x_hat, const Eigen::VectorXd& m,
                           const Eigen::VectorXd& h_prev, const Eigen::VectorXd& gamma_h) {
    CellState s;
    const Eigen::Index H = p.hidden();
    s.h_decayed.resize(H);
    s.update_gate.resize(H);
    s.reset_gate.resize(H);
    s.candidate.resize(H);
    s.h.resize(H);
    Eigen::VectorXd u;
    detail::cell_forward(p, x_hat, m, h_prev, gamma_h, u, s.h_decayed, s.update_gate, s.reset_gate, s.candidate,
                         s.h);
    return s;
}

/// Head pre-activations are W_o h + b_o.
inline WeibullParams output_head(const Eigen::VectorXd& h, const GrudParameters& p) {
    const Eigen::Vector2d a = p.head_w() * h + p.head_b();
    return {detail::kappa_from_pre(p, a(0)), softplus(a(1)) + kOutputFloor};
}

// ---------------------------------------------------------------------------
// Sequence forward / backward.

/// Activations kept for backpropagation, one column per step.
struct ForwardCache {
    Eigen::MatrixXd x_hat, x_last, gamma_x, pre_x;
    Eigen::MatrixXd gamma_h, pre_h, h_dec, z, r, c, h;
    Eigen::MatrixXd head_pre;
};

struct PredictionTrace {
    std::vector<WeibullParams> outputs;
    std::optional<ForwardCache> cache;
};

/// Runs the first `steps` grid steps (default: seq.valid_steps).
inline PredictionTrace forward(const GrudParameters& p, const EncodedSequence& seq, bool keep_cache = false,
                               std::optional<std::size_t> steps = std::nullopt) {
    const Eigen::Index F = p.n_features();
    const Eigen::Index H = p.hidden();
    if (Eigen::Index(seq.n_features()) != F) {
        throw DataError(fmt::format("forward: sequence has {} features, model expects {}", seq.n_features(), F));
    }
    const auto T = Eigen::Index(steps.value_or(seq.valid_steps));
    if (T > Eigen::Index(seq.n_steps())) throw DataError("forward: more steps requested than the sequence holds");

    ForwardCache cc;
    cc.x_hat.resize(F, T);
    cc.x_last.resize(F, T);
    cc.gamma_x.resize(F, T);
    cc.pre_x.resize(F, T);
    for (auto* mat : {&cc.gamma_h, &cc.pre_h, &cc.h_dec, &cc.z, &cc.r, &cc.c, &cc.h}) mat->resize(H, T);
    cc.head_pre.resize(2, T);

    PredictionTrace trace;
    trace.outputs.reserve(std::size_t(T));
    Eigen::VectorXd last = seq.empirical_means;
    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd u(2 * F + H);
    const auto wx = p.input_decay_w();
    const auto bx = p.input_decay_b();
    const auto wh = p.hidden_decay_w();
    const auto bh = p.hidden_decay_b();

    for (Eigen::Index t = 0; t < T; ++t) {
        cc.x_last.col(t) = last;
        for (Eigen::Index d = 0; d < F; ++d) {
            const double pre = wx(d) * (seq.delta(d, t) / kDaysPerYear) + bx(d);
            const double g = std::exp(-std::max(0.0, pre));
            cc.pre_x(d, t) = pre;
            cc.gamma_x(d, t) = g;
            if (seq.m(d, t) > 0.5) {
                cc.x_hat(d, t) = seq.x(d, t);
                last(d) = seq.x(d, t);
            } else {
                cc.x_hat(d, t) = g * cc.x_last(d, t) + (1.0 - g) * seq.empirical_means(d);
            }
        }
        const double gap_years = seq.gap_days(t) / kDaysPerYear;
        for (Eigen::Index i = 0; i < H; ++i) {
            const double pre = wh(i) * gap_years + bh(i);
            cc.pre_h(i, t) = pre;
            cc.gamma_h(i, t) = std::exp(-std::max(0.0, pre));
        }
        detail::cell_forward(p, cc.x_hat.col(t), seq.m.col(t), h_prev, cc.gamma_h.col(t), u, cc.h_dec.col(t),
                             cc.z.col(t), cc.r.col(t), cc.c.col(t), cc.h.col(t));
        cc.head_pre.col(t).noalias() = p.head_w() * cc.h.col(t);
        cc.head_pre.col(t) += p.head_b();
        const double kappa = detail::kappa_from_pre(p, cc.head_pre(0, t));
        const double lambda = softplus(cc.head_pre(1, t)) + kOutputFloor;
        if (!std::isfinite(kappa) || !std::isfinite(lambda) || !cc.h.col(t).allFinite()) {
            throw NumericalError(fmt::format("forward: non-finite activation at timestep {} (patient {})", t, seq.id));
        }
        trace.outputs.emplace_back(kappa, lambda);
        h_prev = cc.h.col(t);
    }
    if (keep_cache) trace.cache = std::move(cc);
    return trace;
}

/// Backpropagation through time. `d_kappa` / `d_lambda` hold dLoss/dkappa_t
/// and dLoss/dlambda_t for every step in the cache; gradients are added to
/// `grad`, which must share the parameter layout.
inline void backward(const GrudParameters& p, const EncodedSequence& seq, const ForwardCache& cc,
                     const Eigen::VectorXd& d_kappa, const Eigen::VectorXd& d_lambda, GrudParameters& grad) {
    const Eigen::Index F = p.n_features();
    const Eigen::Index H = p.hidden();
    const Eigen::Index T = cc.h.cols();

    auto g_wx = grad.input_decay_w();
    auto g_bx = grad.input_decay_b();
    auto g_wh = grad.hidden_decay_w();
    auto g_bh = grad.hidden_decay_b();
    auto g_wz = grad.update_w();
    auto g_bz = grad.update_b();
    auto g_wr = grad.reset_w();
    auto g_br = grad.reset_b();
    auto g_wc = grad.candidate_w();
    auto g_bc = grad.candidate_b();
    auto g_wo = grad.head_w();
    auto g_bo = grad.head_b();

    Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd dh(H), dc(H), dz(H), dr(H), dh_dec(H), da_c(H), da_r(H), da_z(H), da_h(H);
    Eigen::VectorXd u(2 * F + H), uc(2 * F + H), du(2 * F + H), duc(2 * F + H);
    Eigen::VectorXd dx_hat(F);
    Eigen::VectorXd h_prev(H);

    for (Eigen::Index t = T - 1; t >= 0; --t) {
        if (t > 0) {
            h_prev = cc.h.col(t - 1);
        } else {
            h_prev.setZero();
        }
        const auto h = cc.h.col(t);
        const auto z = cc.z.col(t);
        const auto r = cc.r.col(t);
        const auto c = cc.c.col(t);
        const auto h_dec = cc.h_dec.col(t);

        const Eigen::Vector2d da_o(d_kappa(t) * detail::kappa_slope(p, cc.head_pre(0, t)),
                                   d_lambda(t) * sigmoid(cc.head_pre(1, t)));
        g_wo.noalias() += da_o * h.transpose();
        g_bo += da_o;
        dh = dh_next;
        dh.noalias() += p.head_w().transpose() * da_o;

        dc = dh.cwiseProduct(z);
        dz = dh.cwiseProduct(c - h_dec);
        dh_dec = dh - dh.cwiseProduct(z);

        u.head(F) = cc.x_hat.col(t);
        u.segment(F, H) = h_dec;
        u.tail(F) = seq.m.col(t);
        uc = u;
        uc.segment(F, H) = r.cwiseProduct(h_dec);

        da_c = dc.cwiseProduct((1.0 - c.array().square()).matrix());
        g_wc.noalias() += da_c * uc.transpose();
        g_bc += da_c;
        duc.noalias() = p.candidate_w().transpose() * da_c;
        dx_hat = duc.head(F);
        dr = duc.segment(F, H).cwiseProduct(h_dec);
        dh_dec += duc.segment(F, H).cwiseProduct(r);

        da_r = dr.cwiseProduct(r.cwiseProduct((1.0 - r.array()).matrix()));
        da_z = dz.cwiseProduct(z.cwiseProduct((1.0 - z.array()).matrix()));
        g_wr.noalias() += da_r * u.transpose();
        g_br += da_r;
        g_wz.noalias() += da_z * u.transpose();
        g_bz += da_z;
        du.noalias() = p.reset_w().transpose() * da_r;
        du.noalias() += p.update_w().transpose() * da_z;
        dx_hat += du.head(F);
        dh_dec += du.segment(F, H);

        // Hidden decay; the kink of max(0, .) takes the right derivative.
        const double gap_years = seq.gap_days(t) / kDaysPerYear;
        for (Eigen::Index i = 0; i < H; ++i) {
            const double d_gamma = dh_dec(i) * h_prev(i);
            da_h(i) = cc.pre_h(i, t) >= 0.0 ? -d_gamma * cc.gamma_h(i, t) : 0.0;
            dh_next(i) = dh_dec(i) * cc.gamma_h(i, t);
        }
        g_wh += da_h * gap_years;
        g_bh += da_h;

        for (Eigen::Index d = 0; d < F; ++d) {
            if (seq.m(d, t) > 0.5 || cc.pre_x(d, t) < 0.0) continue;
            const double d_gamma = dx_hat(d) * (cc.x_last(d, t) - seq.empirical_means(d));
            const double da = -d_gamma * cc.gamma_x(d, t);
            g_wx(d) += da * (seq.delta(d, t) / kDaysPerYear);
            g_bx(d) += da;
        }
    }
}

}  // namespace grudw
