#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vqarank/errors.hpp"
#include "vqarank/grounding.hpp"
#include "vqarank/layers.hpp"
#include "vqarank/matrix.hpp"
#include "vqarank/rng.hpp"

namespace vqarank {

// Which side is being retrieved. ImageGivenCaption ranks the images for a
// fixed caption (image retrieval); CaptionGivenImage ranks the captions for a
// fixed image (caption retrieval).
enum class Direction { ImageGivenCaption, CaptionGivenImage };

inline const char* direction_name(Direction d) {
  return d == Direction::ImageGivenCaption ? "image" : "caption";
}

// Softmax over the candidate axis of an images x captions score matrix:
// per-column over images, or per-row over captions.
inline Matrix retrieval_probabilities(const Matrix& scores, Direction direction) {
  require_finite(scores, "retrieval_probabilities");
  return direction == Direction::ImageGivenCaption ? softmax_cols(scores) : softmax_rows(scores);
}

// Candidate-set likelihood loss. scores is K x K over a batch of ground-truth
// pairs with pair j on the diagonal; every other row/column entry acts as a
// negative. Mean over pairs of the two retrieval NLLs.
inline double ranking_loss(const Matrix& scores) {
  if (scores.rows != scores.cols)
    throw ShapeError("ranking_loss: expected square scores, got " + shape_str(scores));
  if (scores.rows == 0) throw ShapeError("ranking_loss: empty scores");
  require_finite(scores, "ranking_loss");
  const Matrix log_rows = log_softmax_rows(scores);
  const Matrix log_cols = log_softmax_cols(scores);
  // compensated sum keeps the uniform-score case at 2 ln K to the last ulp
  double total = 0.0, carry = 0.0;
  for (std::size_t j = 0; j < scores.rows; ++j) {
    const double term = -(log_rows(j, j) + log_cols(j, j)) - carry;
    const double next = total + term;
    carry = (next - total) - term;
    total = next;
  }
  return total / static_cast<double>(scores.rows);
}

// d loss / d scores for ranking_loss: (P_rows + P_cols) / K off the diagonal,
// minus 2/K on it.
inline Matrix ranking_loss_grad(const Matrix& scores) {
  if (scores.rows != scores.cols)
    throw ShapeError("ranking_loss_grad: expected square scores, got " + shape_str(scores));
  const double inv_k = 1.0 / static_cast<double>(scores.rows);
  Matrix grad = softmax_rows(scores) + softmax_cols(scores);
  for (double& g : grad.data) g *= inv_k;
  for (std::size_t j = 0; j < scores.rows; ++j) grad(j, j) -= 2.0 * inv_k;
  return grad;
}

// Scale every column of y to unit length. norms receives the original column
// lengths (needed by the backward pass). A zero column has no direction.
inline Matrix normalize_columns(const Matrix& y, std::vector<double>& norms) {
  norms.assign(y.cols, 0.0);
  Matrix t = y;
  for (std::size_t j = 0; j < y.cols; ++j) {
    double sq = 0.0;
    for (std::size_t i = 0; i < y.rows; ++i) sq += y(i, j) * y(i, j);
    const double n = std::sqrt(sq);
    if (!(n > 0.0)) throw DataError("normalize_columns: column " + std::to_string(j) + " has zero norm");
    norms[j] = n;
    for (std::size_t i = 0; i < y.rows; ++i) t(i, j) /= n;
  }
  return t;
}

inline Matrix normalize_columns(const Matrix& y) {
  std::vector<double> norms;
  return normalize_columns(y, norms);
}

// Jacobian of column normalization: d y = (d t - t <t, d t>) / |y| per column.
inline Matrix normalize_columns_backward(const Matrix& grad_t, const Matrix& t,
                                         const std::vector<double>& norms) {
  require_same_shape(grad_t, t, "normalize_columns_backward");
  if (norms.size() != t.cols) throw ShapeError("normalize_columns_backward: norms length mismatch");
  Matrix grad_y(t.rows, t.cols);
  for (std::size_t j = 0; j < t.cols; ++j) {
    double proj = 0.0;
    for (std::size_t i = 0; i < t.rows; ++i) proj += t(i, j) * grad_t(i, j);
    for (std::size_t i = 0; i < t.rows; ++i)
      grad_y(i, j) = (grad_t(i, j) - t(i, j) * proj) / norms[j];
  }
  return grad_y;
}

// Baseline two-tower scorer: images are mapped into the caption feature space
// by a bias-free linear layer, captions pass through unchanged, both sides are
// unit-normalized and compared by dot product.
struct AgnosticEmbedder {
  LinearLayer proj_image;  // caption_dim x image_dim, no bias

  AgnosticEmbedder() : proj_image(1, 1, false) {}
  AgnosticEmbedder(std::size_t caption_dim, std::size_t image_dim, Rng& rng)
      : proj_image(caption_dim, image_dim, false) {
    proj_image.init_uniform(rng);
  }

  // columns of x are images; returns unit columns in caption space
  Matrix embed_images(const Matrix& x) const { return normalize_columns(proj_image.forward(x)); }
  Matrix embed_captions(const Matrix& x) const { return normalize_columns(x); }
};

inline double agnostic_score(const AgnosticEmbedder& emb, const Matrix& x_img,
                             const Matrix& x_cap) {
  const Matrix t_i = emb.embed_images(x_img);
  const Matrix t_c = emb.embed_captions(x_cap);
  return dot(t_i, t_c);
}

// Two grounded-vector projections plus the mixing weights for combining the
// baseline score with the grounded score.
struct ScoreFusionModel {
  GroundingProjection proj_v_image;
  GroundingProjection proj_v_caption;
  double alpha = 1.0;
  double beta = 0.0;
};

inline double grounded_score(const ScoreFusionModel& model, const Matrix& u_img,
                             const Matrix& u_cap, ForwardMode& mode) {
  const Matrix v_i = project_v(model.proj_v_image, u_img, mode);
  const Matrix v_c = project_v(model.proj_v_caption, u_cap, mode);
  return dot(v_i, v_c);
}

inline double fused_score(const ScoreFusionModel& model, double s_t, double s_v) {
  if (!std::isfinite(model.alpha) || !std::isfinite(model.beta))
    throw ParamError("fused_score: alpha/beta not set");
  return model.alpha * s_t + model.beta * s_v;
}

// Which inputs the joint representation may use. Dropped grounded paths are
// zeroed, frozen, and skipped entirely in the forward pass, so the score is
// bit-exactly independent of them.
enum class FusionMode { Full, CaptionOnly, ImageOnly, AgnosticDeeper };

inline const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::Full: return "full";
    case FusionMode::CaptionOnly: return "caption_only";
    case FusionMode::ImageOnly: return "image_only";
    default: return "agnostic_deeper";
  }
}

inline FusionMode fusion_mode_from_name(const std::string& s) {
  if (s == "full") return FusionMode::Full;
  if (s == "caption_only") return FusionMode::CaptionOnly;
  if (s == "image_only") return FusionMode::ImageOnly;
  if (s == "agnostic_deeper") return FusionMode::AgnosticDeeper;
  throw ParamError("unknown fusion mode: " + s);
}

// Joint representation r = relu(W_t t + W_v v + b) per side, scored by dot
// product. The bias lives on the t layer; the v layer is bias-free so a
// dropped path contributes exactly nothing.
struct RepFusionModel {
  FusionMode mode = FusionMode::Full;
  LinearLayer t_image;    // rep_dim x t_dim, with bias
  LinearLayer v_image;    // rep_dim x v_dim, no bias
  LinearLayer t_caption;  // rep_dim x t_dim, with bias
  LinearLayer v_caption;  // rep_dim x v_dim, no bias
  double rep_keep_prob = 0.5;

  RepFusionModel()
      : t_image(1, 1), v_image(1, 1, false), t_caption(1, 1), v_caption(1, 1, false) {}

  RepFusionModel(std::size_t rep_dim, std::size_t t_dim, std::size_t v_dim, FusionMode m,
                 Rng& rng, double keep = 0.5)
      : mode(m),
        t_image(rep_dim, t_dim),
        v_image(rep_dim, v_dim, false),
        t_caption(rep_dim, t_dim),
        v_caption(rep_dim, v_dim, false),
        rep_keep_prob(keep) {
    require_keep_prob(keep);
    t_image.init_uniform(rng);
    t_caption.init_uniform(rng);
    if (uses_v_image()) v_image.init_uniform(rng);
    if (uses_v_caption()) v_caption.init_uniform(rng);
  }

  bool uses_v_image() const { return mode == FusionMode::Full || mode == FusionMode::ImageOnly; }
  bool uses_v_caption() const {
    return mode == FusionMode::Full || mode == FusionMode::CaptionOnly;
  }

  // pre-activation of the image-side representation; v ignored when dropped
  Matrix image_preact(const Matrix& t, const Matrix& v) const {
    Matrix a = t_image.forward(t);
    if (uses_v_image()) a = a + v_image.forward(v);
    return a;
  }
  Matrix caption_preact(const Matrix& t, const Matrix& v) const {
    Matrix a = t_caption.forward(t);
    if (uses_v_caption()) a = a + v_caption.forward(v);
    return a;
  }

  Matrix image_rep(const Matrix& t, const Matrix& v, ForwardMode& mode_) const {
    return mode_.dropout(relu_forward(image_preact(t, v)), rep_keep_prob, "rep.r_image");
  }
  Matrix caption_rep(const Matrix& t, const Matrix& v, ForwardMode& mode_) const {
    return mode_.dropout(relu_forward(caption_preact(t, v)), rep_keep_prob, "rep.r_caption");
  }
};

inline double rep_fusion_score(const RepFusionModel& model, const Matrix& t_img,
                               const Matrix& v_img, const Matrix& t_cap, const Matrix& v_cap,
                               ForwardMode& mode) {
  const Matrix r_i = model.image_rep(t_img, v_img, mode);
  const Matrix r_c = model.caption_rep(t_cap, v_cap, mode);
  return dot(r_i, r_c);
}

// Full grounded stack: the fusion layers plus the projections that turn
// grounded vectors u into v. Trained jointly; bundled so a checkpoint holds
// everything the scorer needs.
struct RepFusionSystem {
  RepFusionModel fusion;
  GroundingProjection proj_v_image;
  GroundingProjection proj_v_caption;

  RepFusionSystem() = default;
  RepFusionSystem(std::size_t rep_dim, std::size_t t_dim, std::size_t v_dim, std::size_t u_dim,
                  FusionMode mode, Rng& rng, double keep = 0.5)
      : fusion(rep_dim, t_dim, v_dim, mode, rng, keep) {
    // dropped paths keep placeholder projections (zeroed, never evaluated)
    const std::size_t in_dim = std::max<std::size_t>(u_dim, 1);
    proj_v_image = GroundingProjection(v_dim, in_dim, "ground.v_image", rng, keep);
    proj_v_caption = GroundingProjection(v_dim, in_dim, "ground.v_caption", rng, keep);
    if (!fusion.uses_v_image()) proj_v_image.layer.W.fill(0.0);
    if (!fusion.uses_v_caption()) proj_v_caption.layer.W.fill(0.0);
  }

  // t columns + grounded-vector columns -> representation columns
  Matrix image_rep(const Matrix& t, const Matrix& u, ForwardMode& mode) const {
    Matrix v(proj_v_image.layer.out_dim(), t.cols);
    if (fusion.uses_v_image()) v = project_v(proj_v_image, u, mode);
    return fusion.image_rep(t, v, mode);
  }
  Matrix caption_rep(const Matrix& t, const Matrix& u, ForwardMode& mode) const {
    Matrix v(proj_v_caption.layer.out_dim(), t.cols);
    if (fusion.uses_v_caption()) v = project_v(proj_v_caption, u, mode);
    return fusion.caption_rep(t, v, mode);
  }
};

}  // namespace vqarank
