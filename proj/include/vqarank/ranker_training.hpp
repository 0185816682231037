#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "vqarank/dataset.hpp"
#include "vqarank/errors.hpp"
#include "vqarank/eval.hpp"
#include "vqarank/grounding.hpp"
#include "vqarank/layers.hpp"
#include "vqarank/matrix.hpp"
#include "vqarank/optimizer.hpp"
#include "vqarank/ranking.hpp"
#include "vqarank/rng.hpp"

namespace vqarank {

struct RankTracePoint {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  double val_caption_r1 = 0.0;  // only meaningful when has_val
  double val_image_r1 = 0.0;
  bool has_val = false;
};

struct RankTrace {
  std::vector<RankTracePoint> points;
};

inline std::string trace_csv(const RankTrace& trace) {
  std::string out = "iteration,loss,val_caption_r1,val_image_r1\n";
  char buf[128];
  for (const auto& p : trace.points) {
    if (p.has_val)
      std::snprintf(buf, sizeof(buf), "%llu,%.6f,%.4f,%.4f\n",
                    static_cast<unsigned long long>(p.iteration), p.loss, p.val_caption_r1,
                    p.val_image_r1);
    else
      std::snprintf(buf, sizeof(buf), "%llu,%.6f,,\n",
                    static_cast<unsigned long long>(p.iteration), p.loss);
    out += buf;
  }
  return out;
}

struct RankTrainConfig {
  RmsPropConfig opt;
  std::size_t batch_k = 100;    // candidate-set size per step
  std::size_t iterations = 2000;
  std::size_t log_every = 100;
  std::size_t eval_every = 1000;  // validation cadence for best-model tracking
  std::uint64_t seed = 1;

  void validate() const {
    opt.validate();
    if (batch_k < 2) throw ParamError("batch_k must be >= 2");
    if (iterations == 0) throw ParamError("iterations must be >= 1");
    if (log_every == 0 || eval_every == 0) throw ParamError("cadences must be >= 1");
  }
};

// A candidate set of ground-truth pairs: one caption for each of batch_k
// distinct images, so every pair is a negative for every other.
struct RankingBatch {
  std::vector<std::size_t> image_rows;    // into Dataset::images
  std::vector<std::size_t> caption_rows;  // into Dataset::captions, aligned
};

inline RankingBatch sample_ranking_batch(const Dataset& d,
                                         const std::vector<std::size_t>& pool_images,
                                         std::size_t k, Rng& rng) {
  if (pool_images.size() < k)
    throw DataError("sample_ranking_batch: need " + std::to_string(k) + " images, pool has " +
                    std::to_string(pool_images.size()));
  RankingBatch batch;
  for (std::size_t p : rng.sample_without_replacement(pool_images.size(), k)) {
    const std::size_t image = pool_images[p];
    const auto& caps = d.image_captions[image];
    if (caps.empty())
      throw DataError("sample_ranking_batch: image " + d.image_ids[image] + " has no captions");
    batch.image_rows.push_back(image);
    batch.caption_rows.push_back(caps[rng.uniform_index(caps.size())]);
  }
  return batch;
}

inline std::vector<std::size_t> split_image_rows(const Dataset& d, Split s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < d.n_images(); ++i)
    if (d.image_split[i] == s) out.push_back(i);
  return out;
}

// ---- baseline two-tower trainer ----

// In-batch ranking loss of the candidate set (columns of x_i paired with
// columns of x_c); accumulates the projection gradient as a side effect.
inline double agnostic_loss_step(AgnosticEmbedder& emb, const Matrix& x_i, const Matrix& x_c) {
  std::vector<double> norms;
  const Matrix y = emb.proj_image.forward(x_i);
  const Matrix t_i = normalize_columns(y, norms);
  const Matrix t_c = normalize_columns(x_c);
  const Matrix scores = matmul(transpose(t_i), t_c);
  const double loss = ranking_loss(scores);

  const Matrix d_scores = ranking_loss_grad(scores);
  const Matrix d_t_i = matmul(t_c, transpose(d_scores));
  emb.proj_image.backward(x_i, normalize_columns_backward(d_t_i, t_i, norms));
  return loss;
}

struct AgnosticTrainResult {
  AgnosticEmbedder model;
  RankTrace trace;
};

inline AgnosticTrainResult train_agnostic(const Dataset& d, const RankTrainConfig& cfg) {
  cfg.validate();
  const auto train_images = split_image_rows(d, Split::Train);
  Rng init_rng(mix_seed(cfg.seed, 0xa61));
  Rng batch_rng(mix_seed(cfg.seed, 0xa62));
  AgnosticTrainResult result{AgnosticEmbedder(d.captions.cols, d.images.cols, init_rng), {}};
  LinearLayer& layer = result.model.proj_image;

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const RankingBatch batch = sample_ranking_batch(d, train_images, cfg.batch_k, batch_rng);
    const Matrix x_i = rows_as_columns(d.images, batch.image_rows);
    const Matrix x_c = rows_as_columns(d.captions, batch.caption_rows);

    const double loss = agnostic_loss_step(result.model, x_i, x_c);
    if (it % cfg.log_every == 0 || it + 1 == cfg.iterations)
      result.trace.points.push_back({it, loss, 0.0, 0.0, false});
    rmsprop_step(layer, cfg.opt, it);
  }
  return result;
}

// ---- score-level fusion ----

struct ScoreFusionTrainResult {
  ScoreFusionModel model;
  RankTrace trace;
  double val_mean_r1 = 0.0;  // of the fitted (alpha, beta)
};

// In-batch ranking loss of the grounded score alone over a candidate set
// (columns of u_i paired with columns of u_c); accumulates both projection
// gradients as a side effect.
inline double grounded_loss_step(ScoreFusionModel& model, const Matrix& u_i, const Matrix& u_c,
                                 ForwardMode& mode) {
  const Matrix a_i = model.proj_v_image.layer.forward(u_i);
  const Matrix h_i = relu_forward(a_i);
  const auto [v_i, mask_i] =
      mode.dropout_with_mask(h_i, model.proj_v_image.keep_prob, model.proj_v_image.site);
  const Matrix a_c = model.proj_v_caption.layer.forward(u_c);
  const Matrix h_c = relu_forward(a_c);
  const auto [v_c, mask_c] =
      mode.dropout_with_mask(h_c, model.proj_v_caption.keep_prob, model.proj_v_caption.site);
  const Matrix scores = matmul(transpose(v_i), v_c);
  const double loss = ranking_loss(scores);

  const Matrix d_scores = ranking_loss_grad(scores);
  const Matrix d_v_i = matmul(v_c, transpose(d_scores));
  const Matrix d_v_c = matmul(v_i, d_scores);
  model.proj_v_image.layer.backward(u_i, relu_backward(a_i, dropout_backward(d_v_i, mask_i)));
  model.proj_v_caption.layer.backward(u_c, relu_backward(a_c, dropout_backward(d_v_c, mask_c)));
  return loss;
}

// Stage 1: learn the two grounded projections by ranking with the grounded
// score alone. u tables hold one row per dataset item.
inline RankTrace train_score_fusion_projections(ScoreFusionModel& model, const Dataset& d,
                                                const Matrix& u_images, const Matrix& u_captions,
                                                const RankTrainConfig& cfg) {
  cfg.validate();
  if (u_images.rows != d.n_images() || u_captions.rows != d.n_captions())
    throw ShapeError("train_score_fusion_projections: grounded tables do not cover the dataset");
  const auto train_images = split_image_rows(d, Split::Train);
  Rng batch_rng(mix_seed(cfg.seed, 0x5f2));
  RankTrace trace;

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const RankingBatch batch = sample_ranking_batch(d, train_images, cfg.batch_k, batch_rng);
    const Matrix u_i = rows_as_columns(u_images, batch.image_rows);
    const Matrix u_c = rows_as_columns(u_captions, batch.caption_rows);
    ForwardMode mode = ForwardMode::train(mix_seed(cfg.seed, 0x5f3 + it));

    const double loss = grounded_loss_step(model, u_i, u_c, mode);
    if (it % cfg.log_every == 0 || it + 1 == cfg.iterations)
      trace.points.push_back({it, loss, 0.0, 0.0, false});
    rmsprop_step(model.proj_v_image.layer, cfg.opt, it);
    rmsprop_step(model.proj_v_caption.layer, cfg.opt, it);
  }
  return trace;
}

struct AlphaBetaFit {
  double alpha = 1.0;
  double beta = 0.0;
  double mean_r1 = 0.0;
};

namespace detail {

// mean of the two recall@1 values for scores a*s_t + b*s_v, ties to lower index
inline double mean_recall1_mix(const Matrix& s_t, const Matrix& s_v, double a, double b,
                               const std::vector<std::size_t>& caption_to_image,
                               const std::vector<std::vector<std::size_t>>& image_to_captions) {
  const std::size_t n_img = s_t.rows, n_cap = s_t.cols;
  std::size_t caption_hits = 0;
  for (std::size_t i = 0; i < n_img; ++i) {
    std::size_t best = 0;
    double best_score = a * s_t(i, 0) + b * s_v(i, 0);
    for (std::size_t c = 1; c < n_cap; ++c) {
      const double s = a * s_t(i, c) + b * s_v(i, c);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    for (std::size_t c : image_to_captions[i]) caption_hits += c == best ? 1 : 0;
  }
  std::size_t image_hits = 0;
  for (std::size_t c = 0; c < n_cap; ++c) {
    std::size_t best = 0;
    double best_score = a * s_t(0, c) + b * s_v(0, c);
    for (std::size_t i = 1; i < n_img; ++i) {
      const double s = a * s_t(i, c) + b * s_v(i, c);
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    image_hits += best == caption_to_image[c] ? 1 : 0;
  }
  return 0.5 * (static_cast<double>(caption_hits) / static_cast<double>(n_img) +
                static_cast<double>(image_hits) / static_cast<double>(n_cap));
}

}  // namespace detail

// Grid search over mixing weights on held-out scores, maximizing mean
// recall@1. Ties prefer the larger alpha, then the smaller beta, so a
// do-nothing grounded model yields (1, 0).
inline AlphaBetaFit fit_alpha_beta(const ScoreMatrix& s_t, const ScoreMatrix& s_v,
                                   std::size_t grid_steps = 21) {
  s_t.validate();
  s_v.validate();
  require_same_shape(s_t.scores, s_v.scores, "fit_alpha_beta");
  if (s_t.n_images() == 0 || s_t.n_captions() == 0)
    throw DataError("fit_alpha_beta: empty validation scores");
  if (grid_steps < 2) throw ParamError("fit_alpha_beta: grid_steps must be >= 2");

  AlphaBetaFit best;
  best.mean_r1 = -1.0;
  const double step = 1.0 / static_cast<double>(grid_steps - 1);
  for (std::size_t ia = 0; ia < grid_steps; ++ia) {
    for (std::size_t ib = 0; ib < grid_steps; ++ib) {
      if (ia == 0 && ib == 0) continue;
      const double a = static_cast<double>(ia) * step;
      const double b = static_cast<double>(ib) * step;
      const double mean = detail::mean_recall1_mix(s_t.scores, s_v.scores, a, b,
                                                   s_t.caption_to_image, s_t.image_to_captions);
      const bool better = mean > best.mean_r1 ||
                          (mean == best.mean_r1 &&
                           (a > best.alpha || (a == best.alpha && b < best.beta)));
      if (better) best = {a, b, mean};
    }
  }
  return best;
}

// Two stages: ranking-train the grounded projections, then fit the mixing
// weights on the validation split against the frozen baseline.
inline ScoreFusionTrainResult train_score_fusion(const Dataset& d, const AgnosticEmbedder& emb,
                                                 const Matrix& u_images, const Matrix& u_captions,
                                                 std::size_t v_dim, const RankTrainConfig& cfg,
                                                 double keep = 0.5) {
  cfg.validate();
  const EvalSplit val = make_split(d, Split::Val);
  if (val.n_images() == 0) throw DataError("train_score_fusion: empty validation split");

  Rng init_rng(mix_seed(cfg.seed, 0x5f1));
  ScoreFusionTrainResult result;
  result.model.proj_v_image =
      GroundingProjection(v_dim, u_images.cols, "ground.v_image", init_rng, keep);
  result.model.proj_v_caption =
      GroundingProjection(v_dim, u_captions.cols, "ground.v_caption", init_rng, keep);
  result.trace = train_score_fusion_projections(result.model, d, u_images, u_captions, cfg);

  const ScoreMatrix s_t = score_matrix_agnostic(emb, d, val);
  ScoreFusionModel grounded_only = result.model;
  grounded_only.alpha = 0.0;
  grounded_only.beta = 1.0;
  const ScoreMatrix s_v = score_matrix_score_fusion(
      emb, grounded_only, d, val, transpose(rows_as_columns(u_images, val.image_rows)),
      transpose(rows_as_columns(u_captions, val.caption_rows)));

  const AlphaBetaFit fit = fit_alpha_beta(s_t, s_v);
  result.model.alpha = fit.alpha;
  result.model.beta = fit.beta;
  result.val_mean_r1 = fit.mean_r1;
  return result;
}

// ---- representation-level fusion ----

struct RepFusionTrainResult {
  RepFusionSystem system;
  RankTrace trace;
  double best_val_r1_sum = 0.0;
  std::uint64_t best_iteration = 0;
};

struct RepFusionDims {
  std::size_t rep_dim = 4096;
  std::size_t v_dim = 4096;
  double keep = 0.5;  // dropout keep for the grounded and fused layers
};

// In-batch ranking loss of the fused representations over a candidate set;
// accumulates gradients into every live layer. u columns are consulted only
// on the sides the fusion mode keeps, so dropped paths may pass empties.
inline double rep_fusion_loss_step(RepFusionSystem& sys, const Matrix& t_i, const Matrix& t_c,
                                   const Matrix& u_i, const Matrix& u_c, ForwardMode& mode) {
  const bool use_vi = sys.fusion.uses_v_image();
  const bool use_vc = sys.fusion.uses_v_caption();

  // image tower
  Matrix a_vi, h_vi, v_i;
  DropoutMask mask_vi;
  Matrix a_ri = sys.fusion.t_image.forward(t_i);
  if (use_vi) {
    a_vi = sys.proj_v_image.layer.forward(u_i);
    h_vi = relu_forward(a_vi);
    std::tie(v_i, mask_vi) =
        mode.dropout_with_mask(h_vi, sys.proj_v_image.keep_prob, sys.proj_v_image.site);
    a_ri = a_ri + sys.fusion.v_image.forward(v_i);
  }
  const Matrix h_ri = relu_forward(a_ri);
  const auto [r_i, mask_ri] =
      mode.dropout_with_mask(h_ri, sys.fusion.rep_keep_prob, "rep.r_image");

  // caption tower
  Matrix a_vc, h_vc, v_c;
  DropoutMask mask_vc;
  Matrix a_rc = sys.fusion.t_caption.forward(t_c);
  if (use_vc) {
    a_vc = sys.proj_v_caption.layer.forward(u_c);
    h_vc = relu_forward(a_vc);
    std::tie(v_c, mask_vc) =
        mode.dropout_with_mask(h_vc, sys.proj_v_caption.keep_prob, sys.proj_v_caption.site);
    a_rc = a_rc + sys.fusion.v_caption.forward(v_c);
  }
  const Matrix h_rc = relu_forward(a_rc);
  const auto [r_c, mask_rc] =
      mode.dropout_with_mask(h_rc, sys.fusion.rep_keep_prob, "rep.r_caption");

  const Matrix scores = matmul(transpose(r_i), r_c);
  const double loss = ranking_loss(scores);

  const Matrix d_scores = ranking_loss_grad(scores);
  const Matrix d_ri = matmul(r_c, transpose(d_scores));
  const Matrix d_rc = matmul(r_i, d_scores);

  const Matrix d_ari = relu_backward(a_ri, dropout_backward(d_ri, mask_ri));
  sys.fusion.t_image.backward(t_i, d_ari);
  if (use_vi) {
    const Matrix d_vi = sys.fusion.v_image.backward(v_i, d_ari);
    sys.proj_v_image.layer.backward(u_i, relu_backward(a_vi, dropout_backward(d_vi, mask_vi)));
  }
  const Matrix d_arc = relu_backward(a_rc, dropout_backward(d_rc, mask_rc));
  sys.fusion.t_caption.backward(t_c, d_arc);
  if (use_vc) {
    const Matrix d_vc = sys.fusion.v_caption.backward(v_c, d_arc);
    sys.proj_v_caption.layer.backward(u_c,
                                      relu_backward(a_vc, dropout_backward(d_vc, mask_vc)));
  }
  return loss;
}

// Joint ranking training of the fusion layers and grounded projections; the
// baseline embedder stays frozen and supplies t. Returns the snapshot with the
// best validation recall@1 sum, checked every eval_every iterations.
inline RepFusionTrainResult train_rep_fusion(const Dataset& d, const AgnosticEmbedder& emb,
                                             const Matrix& u_images, const Matrix& u_captions,
                                             RepFusionDims dims, FusionMode fusion_mode,
                                             const RankTrainConfig& cfg) {
  cfg.validate();
  const auto train_images = split_image_rows(d, Split::Train);
  if (train_images.empty()) throw DataError("train_rep_fusion: empty train split");
  const EvalSplit val = make_split(d, Split::Val);

  const bool use_vi = fusion_mode == FusionMode::Full || fusion_mode == FusionMode::ImageOnly;
  const bool use_vc = fusion_mode == FusionMode::Full || fusion_mode == FusionMode::CaptionOnly;
  if (use_vi && u_images.rows != d.n_images())
    throw ShapeError("train_rep_fusion: image grounded table does not cover the dataset");
  if (use_vc && u_captions.rows != d.n_captions())
    throw ShapeError("train_rep_fusion: caption grounded table does not cover the dataset");
  const std::size_t u_dim = use_vi ? u_images.cols : (use_vc ? u_captions.cols : 0);

  Rng init_rng(mix_seed(cfg.seed, 0x2e1));
  Rng batch_rng(mix_seed(cfg.seed, 0x2e2));
  RepFusionTrainResult result;
  result.system = RepFusionSystem(dims.rep_dim, d.captions.cols, dims.v_dim, u_dim, fusion_mode,
                                  init_rng, dims.keep);
  RepFusionSystem& sys = result.system;

  RepFusionSystem best = sys;
  double best_val = -1.0;
  std::uint64_t best_it = 0;

  const auto val_r1_sum = [&](const RepFusionSystem& candidate) {
    const Matrix u_val_i =
        use_vi ? transpose(rows_as_columns(u_images, val.image_rows)) : Matrix(0, 0);
    const Matrix u_val_c =
        use_vc ? transpose(rows_as_columns(u_captions, val.caption_rows)) : Matrix(0, 0);
    const ScoreMatrix sm = score_matrix_rep_fusion(emb, candidate, d, val, u_val_i, u_val_c);
    return std::pair<double, double>(recall_at_k(sm, 1, Direction::CaptionGivenImage),
                                     recall_at_k(sm, 1, Direction::ImageGivenCaption));
  };

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const RankingBatch batch = sample_ranking_batch(d, train_images, cfg.batch_k, batch_rng);
    const Matrix t_i = emb.embed_images(rows_as_columns(d.images, batch.image_rows));
    const Matrix t_c = emb.embed_captions(rows_as_columns(d.captions, batch.caption_rows));
    const Matrix u_i = use_vi ? rows_as_columns(u_images, batch.image_rows) : Matrix(0, 0);
    const Matrix u_c = use_vc ? rows_as_columns(u_captions, batch.caption_rows) : Matrix(0, 0);
    ForwardMode mode = ForwardMode::train(mix_seed(cfg.seed, 0x2e3 + it));

    const double loss = rep_fusion_loss_step(sys, t_i, t_c, u_i, u_c, mode);
    if (it % cfg.log_every == 0 || it + 1 == cfg.iterations)
      result.trace.points.push_back({it, loss, 0.0, 0.0, false});

    rmsprop_step(sys.fusion.t_image, cfg.opt, it);
    rmsprop_step(sys.fusion.t_caption, cfg.opt, it);
    if (use_vi) {
      rmsprop_step(sys.fusion.v_image, cfg.opt, it);
      rmsprop_step(sys.proj_v_image.layer, cfg.opt, it);
    }
    if (use_vc) {
      rmsprop_step(sys.fusion.v_caption, cfg.opt, it);
      rmsprop_step(sys.proj_v_caption.layer, cfg.opt, it);
    }

    const bool last = it + 1 == cfg.iterations;
    if (val.n_images() > 0 && ((it + 1) % cfg.eval_every == 0 || last)) {
      const auto [cap_r1, img_r1] = val_r1_sum(sys);
      result.trace.points.push_back({it, loss, cap_r1, img_r1, true});
      if (cap_r1 + img_r1 > best_val) {
        best_val = cap_r1 + img_r1;
        best = sys;
        best_it = it + 1;
      }
    }
  }

  if (best_val >= 0.0) {
    result.system = best;
    result.best_val_r1_sum = best_val;
    result.best_iteration = best_it;
  }
  return result;
}

}  // namespace vqarank
