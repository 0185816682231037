#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vqarank/errors.hpp"
#include "vqarank/matrix.hpp"
#include "vqarank/rng.hpp"

namespace vqarank {

// Affine map with accumulated gradients and an RMSProp cache. Parameters are
// addressable by a flat index (W row-major, then b) for the gradient checker.
struct LinearLayer {
  Matrix W;
  Matrix b;
  Matrix grad_W;
  Matrix grad_b;
  Matrix rms_W;
  Matrix rms_b;
  bool has_bias = true;

  LinearLayer() = default;
  LinearLayer(std::size_t out_dim, std::size_t in_dim, bool with_bias = true)
      : W(out_dim, in_dim),
        b(out_dim, 1),
        grad_W(out_dim, in_dim),
        grad_b(out_dim, 1),
        rms_W(out_dim, in_dim),
        rms_b(out_dim, 1),
        has_bias(with_bias) {}

  std::size_t out_dim() const { return W.rows; }
  std::size_t in_dim() const { return W.cols; }

  // W entries uniform in +-1/sqrt(fan_in); biases start at zero.
  void init_uniform(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(W.cols ? W.cols : 1));
    for (double& w : W.data) w = rng.uniform(-bound, bound);
    b.fill(0.0);
  }

  Matrix forward(const Matrix& x) const {
    if (x.rows != W.cols)
      throw ShapeError("LinearLayer::forward: weight is " + shape_str(W) + " but input is " +
                       shape_str(x));
    Matrix out = matmul(W, x);
    if (has_bias) out = add_col_broadcast(out, b);
    return out;
  }

  // Accumulates grad_W += grad_out * x^T and grad_b += row sums of grad_out,
  // then returns the gradient with respect to x.
  Matrix backward(const Matrix& x, const Matrix& grad_out) {
    if (x.rows != W.cols || grad_out.rows != W.rows || grad_out.cols != x.cols)
      throw ShapeError("LinearLayer::backward: weight " + shape_str(W) + ", input " + shape_str(x) +
                       ", upstream " + shape_str(grad_out));
    const Matrix gw = matmul(grad_out, transpose(x));
    for (std::size_t i = 0; i < grad_W.data.size(); ++i) grad_W.data[i] += gw.data[i];
    if (has_bias) {
      const Matrix gb = row_sums(grad_out);
      for (std::size_t i = 0; i < grad_b.data.size(); ++i) grad_b.data[i] += gb.data[i];
    }
    return matmul(transpose(W), grad_out);
  }

  void zero_grads() {
    grad_W.fill(0.0);
    grad_b.fill(0.0);
  }

  std::size_t param_count() const { return W.size() + (has_bias ? b.size() : 0); }

  double& param_at(std::size_t i) {
    return i < W.size() ? W.data[i] : b.data[i - W.size()];
  }
  double grad_at(std::size_t i) const {
    return i < W.size() ? grad_W.data[i] : grad_b.data[i - W.size()];
  }
};

// layer with a stable name, for gradient checks and per-layer reporting
struct NamedLayer {
  std::string name;
  LinearLayer* layer = nullptr;
};

inline Matrix linear_forward(const LinearLayer& layer, const Matrix& x) { return layer.forward(x); }
inline Matrix linear_backward(LinearLayer& layer, const Matrix& x, const Matrix& grad_out) {
  return layer.backward(x, grad_out);
}

inline Matrix tanh_forward(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data) v = std::tanh(v);
  return out;
}

// Backward takes the pre-activation input, not the cached output.
inline Matrix tanh_backward(const Matrix& x, const Matrix& grad_out) {
  require_same_shape(x, grad_out, "tanh_backward");
  Matrix out = grad_out;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double t = std::tanh(x.data[i]);
    out.data[i] *= 1.0 - t * t;
  }
  return out;
}

inline Matrix relu_forward(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

// Gradient is 0 at exactly 0 (subgradient choice).
inline Matrix relu_backward(const Matrix& x, const Matrix& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Matrix out = grad_out;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    if (!(x.data[i] > 0.0)) out.data[i] = 0.0;
  return out;
}

enum class DropoutMode { Train, Infer };

struct DropoutMask {
  double keep_prob = 1.0;
  std::vector<std::uint8_t> mask;  // one entry per matrix element, row-major
  std::uint64_t seed = 0;
};

inline void require_keep_prob(double keep_prob) {
  if (!(keep_prob > 0.0) || keep_prob > 1.0)
    throw ParamError("keep_prob must be in (0, 1], got " + std::to_string(keep_prob));
}

// Inverted dropout: surviving entries are scaled by 1/keep_prob at train time
// so inference is the identity. Same (seed, shape) always yields the same mask.
inline std::pair<Matrix, DropoutMask> dropout_apply(const Matrix& x, double keep_prob,
                                                    DropoutMode mode, std::uint64_t seed) {
  require_keep_prob(keep_prob);
  DropoutMask m;
  m.keep_prob = keep_prob;
  m.seed = seed;
  m.mask.assign(x.size(), 1);
  Matrix out = x;
  if (mode == DropoutMode::Train && keep_prob < 1.0) {
    Rng rng(seed);
    const double scale = 1.0 / keep_prob;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      if (rng.bernoulli(keep_prob)) {
        out.data[i] *= scale;
      } else {
        out.data[i] = 0.0;
        m.mask[i] = 0;
      }
    }
  }
  return {std::move(out), std::move(m)};
}

// Gradient of inverted dropout: surviving entries rescaled, dropped entries 0.
inline Matrix dropout_backward(const Matrix& grad_out, const DropoutMask& m) {
  if (m.mask.size() != grad_out.size())
    throw ShapeError("dropout_backward: mask has " + std::to_string(m.mask.size()) +
                     " entries, gradient is " + shape_str(grad_out));
  Matrix out = grad_out;
  const double scale = 1.0 / m.keep_prob;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = m.mask[i] ? out.data[i] * scale : 0.0;
  return out;
}

struct DropoutSite {
  std::string name;
  std::size_t units = 0;
  double keep_prob = 1.0;
};

// One sampled dropout configuration (a subnetwork), reused across every
// forward pass evaluated under it. Masks are per unit, broadcast over batch
// columns, and keyed by site name so repeat visits see the same subnetwork.
// Forced mode replays externally supplied masks (used by the exact-enumeration
// oracle); Probe mode applies the identity and records which sites exist.
class DropoutDraw {
 public:
  enum class Kind { Sample, Forced, Probe };

  explicit DropoutDraw(std::uint64_t seed) : kind_(Kind::Sample), rng_(seed) {}

  static DropoutDraw forced(std::map<std::string, std::vector<std::uint8_t>> masks) {
    DropoutDraw d;
    d.kind_ = Kind::Forced;
    d.masks_ = std::move(masks);
    return d;
  }

  static DropoutDraw probe() {
    DropoutDraw d;
    d.kind_ = Kind::Probe;
    return d;
  }

  Kind kind() const { return kind_; }

  // Sites with keep_prob = 1 are deterministic and are skipped entirely.
  Matrix apply(const Matrix& x, double keep_prob, const std::string& site) {
    require_keep_prob(keep_prob);
    if (keep_prob >= 1.0) return x;
    if (kind_ == Kind::Probe) {
      record_site(site, x.rows, keep_prob);
      return x;
    }
    const std::vector<std::uint8_t>& mask = site_mask(site, x.rows, keep_prob);
    Matrix out = x;
    const double scale = 1.0 / keep_prob;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double s = mask[i] ? scale : 0.0;
      for (std::size_t j = 0; j < x.cols; ++j) out(i, j) *= s;
    }
    return out;
  }

  const std::vector<DropoutSite>& sites() const { return sites_; }

 private:
  DropoutDraw() = default;

  void record_site(const std::string& site, std::size_t units, double keep_prob) {
    for (const DropoutSite& s : sites_)
      if (s.name == site) {
        if (s.units != units)
          throw ParamError("dropout site '" + site + "' visited with " + std::to_string(units) +
                           " units, previously " + std::to_string(s.units));
        return;
      }
    sites_.push_back({site, units, keep_prob});
  }

  const std::vector<std::uint8_t>& site_mask(const std::string& site, std::size_t units,
                                             double keep_prob) {
    auto it = masks_.find(site);
    if (it == masks_.end()) {
      if (kind_ == Kind::Forced)
        throw ParamError("no forced dropout mask for site '" + site + "'");
      std::vector<std::uint8_t> mask(units);
      for (std::size_t i = 0; i < units; ++i) mask[i] = rng_.bernoulli(keep_prob) ? 1 : 0;
      it = masks_.emplace(site, std::move(mask)).first;
    }
    if (it->second.size() != units)
      throw ParamError("dropout mask for site '" + site + "' has " +
                       std::to_string(it->second.size()) + " units, expected " +
                       std::to_string(units));
    return it->second;
  }

  Kind kind_ = Kind::Sample;
  Rng rng_{0};
  std::map<std::string, std::vector<std::uint8_t>> masks_;
  std::vector<DropoutSite> sites_;
};

// Dropout policy threaded through model forward passes. Infer is the
// identity; Train draws fresh per-entry masks from a per-pass seed; Theta
// routes every site through a shared DropoutDraw.
class ForwardMode {
 public:
  static ForwardMode infer() { return ForwardMode(Kind::Infer); }
  static ForwardMode train(std::uint64_t seed) {
    ForwardMode m(Kind::Train);
    m.seed_ = seed;
    return m;
  }
  static ForwardMode theta(DropoutDraw& draw) {
    ForwardMode m(Kind::Theta);
    m.draw_ = &draw;
    return m;
  }

  bool stochastic() const { return kind_ != Kind::Infer; }

  Matrix dropout(const Matrix& x, double keep_prob, const std::string& site) {
    require_keep_prob(keep_prob);
    if (keep_prob >= 1.0 || kind_ == Kind::Infer) return x;
    if (kind_ == Kind::Theta) return draw_->apply(x, keep_prob, site);
    return dropout_apply(x, keep_prob, DropoutMode::Train, mix_seed(seed_, site_counter_++)).first;
  }

  // Train-mode variant that also hands back the mask for backpropagation.
  std::pair<Matrix, DropoutMask> dropout_with_mask(const Matrix& x, double keep_prob,
                                                   const std::string& site) {
    require_keep_prob(keep_prob);
    if (keep_prob >= 1.0 || kind_ == Kind::Infer) {
      DropoutMask m;
      m.keep_prob = 1.0;  // identity in both directions
      m.mask.assign(x.size(), 1);
      return {x, std::move(m)};
    }
    if (kind_ == Kind::Theta)
      throw ParamError("dropout_with_mask: theta draws are forward-only");
    return dropout_apply(x, keep_prob, DropoutMode::Train, mix_seed(seed_, site_counter_++));
  }

 private:
  enum class Kind { Infer, Train, Theta };
  explicit ForwardMode(Kind k) : kind_(k) {}

  Kind kind_;
  std::uint64_t seed_ = 0;
  std::uint64_t site_counter_ = 0;
  DropoutDraw* draw_ = nullptr;
};

inline Matrix softmax_rows(const Matrix& x) {
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double e = std::exp(x(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) /= sum;
  }
  return out;
}

inline Matrix log_softmax_rows(const Matrix& x) {
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) sum += std::exp(x(i, j) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = x(i, j) - lse;
  }
  return out;
}

inline Matrix softmax_cols(const Matrix& x) { return transpose(softmax_rows(transpose(x))); }
inline Matrix log_softmax_cols(const Matrix& x) {
  return transpose(log_softmax_rows(transpose(x)));
}

}  // namespace vqarank
