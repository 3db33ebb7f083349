#pragma once

// Recurrent trajectory decoder: latent projection, GRU unroll with a
// distance-based halting rule, MSE/combined losses, analytic BPTT and a
// central-difference gradient oracle, plus a plain gradient-descent fit.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string_view>
#include <vector>

#include "rsvl/error.hpp"

namespace rsvl {

inline constexpr int kPoseDim = 6;

using TrajState = Eigen::Matrix<double, kPoseDim, 1>;

struct DecoderWeights {
  Eigen::MatrixXd w_latent;  // d_h x d_e
  Eigen::VectorXd b_latent;
  Eigen::MatrixXd w_state;  // d_h x d_h
  Eigen::VectorXd b_state;
  Eigen::MatrixXd w_z, u_z;
  Eigen::VectorXd b_z;
  Eigen::MatrixXd w_r, u_r;
  Eigen::VectorXd b_r;
  Eigen::MatrixXd w_c, u_c;
  Eigen::VectorXd b_c;
  Eigen::MatrixXd w_out;  // 6 x d_h
  Eigen::VectorXd b_out;

  Eigen::Index d_e() const { return w_latent.cols(); }
  Eigen::Index d_h() const { return w_latent.rows(); }

  // Visits every parameter block with its file key.
  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  // this += a * other, blockwise.
  void add_scaled(const DecoderWeights& other, double a) {
    w_latent += a * other.w_latent;
    b_latent += a * other.b_latent;
    w_state += a * other.w_state;
    b_state += a * other.b_state;
    w_z += a * other.w_z;
    u_z += a * other.u_z;
    b_z += a * other.b_z;
    w_r += a * other.w_r;
    u_r += a * other.u_r;
    b_r += a * other.b_r;
    w_c += a * other.w_c;
    u_c += a * other.u_c;
    b_c += a * other.b_c;
    w_out += a * other.w_out;
    b_out += a * other.b_out;
  }

  static DecoderWeights zeros(Eigen::Index d_e, Eigen::Index d_h) {
    if (d_e < 1 || d_h < 1) throw Error(ErrorKind::DimensionMismatch, "d_e and d_h must be >= 1");
    DecoderWeights w;
    w.w_latent = Eigen::MatrixXd::Zero(d_h, d_e);
    w.b_latent = Eigen::VectorXd::Zero(d_h);
    w.w_state = Eigen::MatrixXd::Zero(d_h, d_h);
    w.b_state = Eigen::VectorXd::Zero(d_h);
    for (auto* m : {&w.w_z, &w.u_z, &w.w_r, &w.u_r, &w.w_c, &w.u_c}) {
      *m = Eigen::MatrixXd::Zero(d_h, d_h);
    }
    for (auto* b : {&w.b_z, &w.b_r, &w.b_c}) *b = Eigen::VectorXd::Zero(d_h);
    w.w_out = Eigen::MatrixXd::Zero(kPoseDim, d_h);
    w.b_out = Eigen::VectorXd::Zero(kPoseDim);
    return w;
  }

  // Uniform in [-scale, scale], drawn block by block in file-key order.
  static DecoderWeights random(Eigen::Index d_e, Eigen::Index d_h, std::uint64_t seed,
                               double scale = 0.1) {
    auto w = zeros(d_e, d_h);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-scale, scale);
    w.for_each([&](std::string_view, auto& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    });
    return w;
  }

  // Throws DimensionMismatch or InvariantViolation.
  void validate() const {
    const auto de = d_e(), dh = d_h();
    if (de < 1 || dh < 1) throw Error(ErrorKind::DimensionMismatch, "empty latent projection");
    auto need = [](std::string_view name, Eigen::Index rows, Eigen::Index cols, Eigen::Index er,
                   Eigen::Index ec) {
      if (rows != er || cols != ec) {
        throw Error(ErrorKind::DimensionMismatch,
                    std::string(name) + " is " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", expected " + std::to_string(er) + "x" +
                        std::to_string(ec));
      }
    };
    for_each([&](std::string_view name, const auto& m) {
      Eigen::Index er = dh, ec = dh;
      if (name == "W_latent") ec = de;
      if (name == "W_out" || name == "b_out") er = kPoseDim;
      if (name.front() == 'b') ec = 1;
      need(name, m.rows(), m.cols(), er, ec);
      if (!m.allFinite()) throw Error(ErrorKind::InvariantViolation, std::string(name) + " not finite");
    });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](std::string_view, const auto& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f("W_latent", self.w_latent);
    f("b_latent", self.b_latent);
    f("W_state", self.w_state);
    f("b_state", self.b_state);
    f("W_z", self.w_z);
    f("U_z", self.u_z);
    f("b_z", self.b_z);
    f("W_r", self.w_r);
    f("U_r", self.u_r);
    f("b_r", self.b_r);
    f("W_c", self.w_c);
    f("U_c", self.u_c);
    f("b_c", self.b_c);
    f("W_out", self.w_out);
    f("b_out", self.b_out);
  }
};

struct DecoderConfig {
  int max_steps = 1;
  double threshold = 1e-3;

  void validate() const {
    if (max_steps < 1) throw Error(ErrorKind::InvalidArgument, "max_steps must be >= 1");
    if (!(threshold > 0.0) || !std::isfinite(threshold)) {
      throw Error(ErrorKind::InvalidArgument, "termination threshold must be > 0");
    }
  }
};

enum class Termination { threshold, max_steps };

inline std::string_view to_string(Termination t) noexcept {
  return t == Termination::threshold ? "threshold" : "max_steps";
}

struct Trajectory {
  std::vector<TrajState> states;
  Termination terminated_by = Termination::max_steps;
};

struct LossWeights {
  double lambda_txt = 1.0;
  double lambda_mse = 1.0;
};

namespace detail {

inline Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

inline void require_dim(std::string_view what, Eigen::Index got, Eigen::Index want) {
  if (got != want) {
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + " has dimension " +
                                                  std::to_string(got) + ", expected " +
                                                  std::to_string(want));
  }
}

struct GruTrace {
  Eigen::VectorXd z, r, c, h;
};

inline GruTrace gru_trace(const Eigen::VectorXd& f, const Eigen::VectorXd& h_prev,
                          const DecoderWeights& w) {
  GruTrace t;
  t.z = sigmoid(w.w_z * f + w.u_z * h_prev + w.b_z);
  t.r = sigmoid(w.w_r * f + w.u_r * h_prev + w.b_r);
  t.c = (w.w_c * f + w.u_c * t.r.cwiseProduct(h_prev) + w.b_c).array().tanh().matrix();
  t.h = (Eigen::VectorXd::Ones(h_prev.size()) - t.z).cwiseProduct(h_prev) + t.z.cwiseProduct(t.c);
  return t;
}

struct StepTrace {
  Eigen::VectorXd h_prev, f;
  GruTrace gru;
  TrajState s;
};

struct DecodeTrace {
  Eigen::VectorXd h0;
  std::vector<StepTrace> steps;
  Termination terminated_by = Termination::max_steps;
};

inline DecodeTrace decode_trace(const Eigen::VectorXd& h_tra, const DecoderWeights& w,
                                const DecoderConfig& cfg) {
  cfg.validate();
  w.validate();
  require_dim("latent", h_tra.size(), w.d_e());
  DecodeTrace tr;
  tr.h0 = w.w_latent * h_tra + w.b_latent;
  Eigen::VectorXd h = tr.h0;
  for (int t = 1; t <= cfg.max_steps; ++t) {
    StepTrace st;
    st.h_prev = h;
    st.f = w.w_state * h + w.b_state;
    st.gru = gru_trace(st.f, h, w);
    h = st.gru.h;
    st.s = sigmoid(w.w_out * h + w.b_out);
    tr.steps.push_back(std::move(st));
    const auto n = tr.steps.size();
    if (n >= 2 && (tr.steps[n - 1].s - tr.steps[n - 2].s).norm() < cfg.threshold) {
      tr.terminated_by = Termination::threshold;
      return tr;
    }
  }
  tr.terminated_by = Termination::max_steps;
  return tr;
}

}  // namespace detail

inline Eigen::VectorXd latent_projection(const Eigen::VectorXd& h_tra, const DecoderWeights& w) {
  detail::require_dim("latent", h_tra.size(), w.d_e());
  detail::require_dim("b_latent", w.b_latent.size(), w.d_h());
  return w.w_latent * h_tra + w.b_latent;
}

// z = σ(W_z f + U_z h + b_z), r = σ(W_r f + U_r h + b_r),
// c = tanh(W_c f + U_c (r ⊙ h) + b_c), h' = (1 - z) ⊙ h + z ⊙ c.
inline Eigen::VectorXd gru_step(const Eigen::VectorXd& f, const Eigen::VectorXd& h_prev,
                                const DecoderWeights& w) {
  const auto dh = w.d_h();
  detail::require_dim("gru input", f.size(), dh);
  detail::require_dim("gru state", h_prev.size(), dh);
  for (const auto* m : {&w.w_z, &w.u_z, &w.w_r, &w.u_r, &w.w_c, &w.u_c}) {
    detail::require_dim("gru weight rows", m->rows(), dh);
    detail::require_dim("gru weight cols", m->cols(), dh);
  }
  for (const auto* b : {&w.b_z, &w.b_r, &w.b_c}) detail::require_dim("gru bias", b->size(), dh);
  return detail::gru_trace(f, h_prev, w).h;
}

// Unrolls until two consecutive states are closer than cfg.threshold
// (Euclidean, first checked at step 2) or cfg.max_steps states exist.
inline Trajectory decode(const Eigen::VectorXd& h_tra, const DecoderWeights& w,
                         const DecoderConfig& cfg) {
  auto tr = detail::decode_trace(h_tra, w, cfg);
  Trajectory out;
  out.terminated_by = tr.terminated_by;
  out.states.reserve(tr.steps.size());
  for (const auto& st : tr.steps) out.states.push_back(st.s);
  return out;
}

// Mean squared error over the aligned prefix, plus, for each ground-truth
// step the prediction did not reach, the squared error of an all-0.5 state
// against that step (averaged over its 6 components).
inline double mse_loss(const std::vector<TrajState>& pred, const std::vector<TrajState>& gt) {
  if (gt.empty()) throw Error(ErrorKind::EmptyGroundTruth, "");
  const std::size_t k = std::min(pred.size(), gt.size());
  double loss = 0.0;
  if (k > 0) {
    double sum = 0.0;
    for (std::size_t t = 0; t < k; ++t) sum += (pred[t] - gt[t]).squaredNorm();
    loss = sum / (kPoseDim * static_cast<double>(k));
  }
  const TrajState half = TrajState::Constant(0.5);
  for (std::size_t t = k; t < gt.size(); ++t) loss += (half - gt[t]).squaredNorm() / kPoseDim;
  return loss;
}

inline double mse_loss(const Trajectory& pred, const std::vector<TrajState>& gt) {
  return mse_loss(pred.states, gt);
}

inline double combined_loss(double l_txt, double l_mse, const LossWeights& lw) {
  if (lw.lambda_txt < 0 || lw.lambda_mse < 0 || (lw.lambda_txt == 0 && lw.lambda_mse == 0)) {
    throw Error(ErrorKind::InvalidArgument, "loss weights must be >= 0 and not both zero");
  }
  return lw.lambda_txt * l_txt + lw.lambda_mse * l_mse;
}

struct Gradient {
  DecoderWeights grad;
  double loss = 0.0;
  std::size_t steps = 0;
};

// Analytic gradient of mse_loss(decode(h_tra)) by backpropagation through
// the unrolled steps. The halting step of the forward pass is held fixed.
inline Gradient backward(const Eigen::VectorXd& h_tra, const DecoderWeights& w,
                         const DecoderConfig& cfg, const std::vector<TrajState>& gt) {
  if (gt.empty()) throw Error(ErrorKind::EmptyGroundTruth, "");
  const auto tr = detail::decode_trace(h_tra, w, cfg);
  const auto dh = w.d_h();
  Gradient g;
  g.grad = DecoderWeights::zeros(w.d_e(), dh);
  g.steps = tr.steps.size();
  {
    std::vector<TrajState> states;
    for (const auto& st : tr.steps) states.push_back(st.s);
    g.loss = mse_loss(states, gt);
  }
  auto& d = g.grad;
  const std::size_t k = std::min(tr.steps.size(), gt.size());
  const double scale = 2.0 / (kPoseDim * static_cast<double>(k));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(dh);

  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(dh);
  for (std::size_t idx = tr.steps.size(); idx-- > 0;) {
    const auto& st = tr.steps[idx];
    const auto& gr = st.gru;
    Eigen::VectorXd dh_t = dh_next;
    if (idx < k) {
      const Eigen::VectorXd ds = scale * (st.s - gt[idx]);
      const Eigen::VectorXd da_out =
          ds.cwiseProduct(st.s.cwiseProduct(TrajState::Ones() - st.s));
      d.w_out += da_out * gr.h.transpose();
      d.b_out += da_out;
      dh_t += w.w_out.transpose() * da_out;
    }
    // h = (1 - z) h_prev + z c
    const Eigen::VectorXd dz = dh_t.cwiseProduct(gr.c - st.h_prev);
    const Eigen::VectorXd dc = dh_t.cwiseProduct(gr.z);
    Eigen::VectorXd dh_prev = dh_t.cwiseProduct(ones - gr.z);

    const Eigen::VectorXd da_c = dc.cwiseProduct(ones - gr.c.cwiseProduct(gr.c));
    const Eigen::VectorXd rh = gr.r.cwiseProduct(st.h_prev);
    d.w_c += da_c * st.f.transpose();
    d.u_c += da_c * rh.transpose();
    d.b_c += da_c;
    Eigen::VectorXd df = w.w_c.transpose() * da_c;
    const Eigen::VectorXd drh = w.u_c.transpose() * da_c;
    const Eigen::VectorXd dr = drh.cwiseProduct(st.h_prev);
    dh_prev += drh.cwiseProduct(gr.r);

    const Eigen::VectorXd da_z = dz.cwiseProduct(gr.z.cwiseProduct(ones - gr.z));
    d.w_z += da_z * st.f.transpose();
    d.u_z += da_z * st.h_prev.transpose();
    d.b_z += da_z;
    df += w.w_z.transpose() * da_z;
    dh_prev += w.u_z.transpose() * da_z;

    const Eigen::VectorXd da_r = dr.cwiseProduct(gr.r.cwiseProduct(ones - gr.r));
    d.w_r += da_r * st.f.transpose();
    d.u_r += da_r * st.h_prev.transpose();
    d.b_r += da_r;
    df += w.w_r.transpose() * da_r;
    dh_prev += w.u_r.transpose() * da_r;

    // f = W_state h_prev + b_state
    d.w_state += df * st.h_prev.transpose();
    d.b_state += df;
    dh_prev += w.w_state.transpose() * df;

    dh_next = std::move(dh_prev);
  }
  d.w_latent = dh_next * h_tra.transpose();
  d.b_latent = dh_next;
  return g;
}

// Central differences (f(w + eps) - f(w - eps)) / 2 eps for every entry.
inline DecoderWeights grad_fd(const std::function<double(const DecoderWeights&)>& loss_fn,
                              const DecoderWeights& w, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorKind::InvalidArgument, "eps must be > 0");
  DecoderWeights probe = w;
  DecoderWeights grad = DecoderWeights::zeros(w.d_e(), w.d_h());
  std::vector<double*> probe_ptrs, grad_ptrs;
  probe.for_each([&](std::string_view, auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) probe_ptrs.push_back(m.data() + i);
  });
  grad.for_each([&](std::string_view, auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) grad_ptrs.push_back(m.data() + i);
  });
  for (std::size_t i = 0; i < probe_ptrs.size(); ++i) {
    const double saved = *probe_ptrs[i];
    *probe_ptrs[i] = saved + eps;
    const double up = loss_fn(probe);
    *probe_ptrs[i] = saved - eps;
    const double down = loss_fn(probe);
    *probe_ptrs[i] = saved;
    *grad_ptrs[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

// Largest entrywise |a - b| / max(|a|, |b|, floor). The floor keeps entries
// whose true gradient is ~0 from dominating through round-off.
inline double max_relative_error(const DecoderWeights& a, const DecoderWeights& b,
                                 double floor = 1e-6) {
  std::vector<double> va, vb;
  a.for_each([&](std::string_view, const auto& m) {
    va.insert(va.end(), m.data(), m.data() + m.size());
  });
  b.for_each([&](std::string_view, const auto& m) {
    vb.insert(vb.end(), m.data(), m.data() + m.size());
  });
  if (va.size() != vb.size()) throw Error(ErrorKind::DimensionMismatch, "gradient shapes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double denom = std::max({std::abs(va[i]), std::abs(vb[i]), floor});
    worst = std::max(worst, std::abs(va[i] - vb[i]) / denom);
  }
  return worst;
}

struct FitResult {
  DecoderWeights weights;
  std::vector<double> loss_curve;  // iters + 1 entries; [0] is the initial loss
};

// Plain gradient descent from the given initial weights.
inline FitResult fit(const Eigen::VectorXd& h_tra, const std::vector<TrajState>& gt,
                     const DecoderConfig& cfg, double lr, int iters, DecoderWeights init) {
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be > 0");
  if (iters < 0) throw Error(ErrorKind::InvalidArgument, "iterations must be >= 0");
  FitResult res{std::move(init), {}};
  res.loss_curve.reserve(static_cast<std::size_t>(iters) + 1);
  for (int it = 0; it <= iters; ++it) {
    auto g = backward(h_tra, res.weights, cfg, gt);
    if (!std::isfinite(g.loss)) {
      throw Error(ErrorKind::DivergenceDetected, "loss is not finite at iteration " +
                                                     std::to_string(it));
    }
    res.loss_curve.push_back(g.loss);
    if (it == iters) break;
    res.weights.add_scaled(g.grad, -lr);
    bool finite = true;
    res.weights.for_each([&](std::string_view, const auto& m) { finite = finite && m.allFinite(); });
    if (!finite) {
      throw Error(ErrorKind::DivergenceDetected, "weights not finite after iteration " +
                                                     std::to_string(it));
    }
  }
  return res;
}

// Seeded uniform [-0.1, 0.1] initialization.
inline FitResult fit(const Eigen::VectorXd& h_tra, const std::vector<TrajState>& gt,
                     const DecoderConfig& cfg, double lr, int iters, Eigen::Index d_h,
                     std::uint64_t seed) {
  return fit(h_tra, gt, cfg, lr, iters,
             DecoderWeights::random(h_tra.size(), d_h, seed, 0.1));
}

// Maps decoder states in (0, 1) back to scene units: offset + scale ⊙ s.
struct AffineDescale {
  std::array<double, kPoseDim> scale{1, 1, 1, 1, 1, 1};
  std::array<double, kPoseDim> offset{};

  std::array<double, kPoseDim> apply(const TrajState& s) const {
    std::array<double, kPoseDim> out{};
    for (int i = 0; i < kPoseDim; ++i) out[i] = offset[i] + scale[i] * s[i];
    return out;
  }
};

}  // namespace rsvl
