#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "vqarank/dataset.hpp"
#include "vqarank/errors.hpp"
#include "vqarank/matrix.hpp"
#include "vqarank/ranking.hpp"

namespace vqarank {

// Scores for a full retrieval split plus the ground-truth pairing needed to
// judge them. scores(i, c) is the model's affinity of image i for caption c.
struct ScoreMatrix {
  Matrix scores;  // n_images x n_captions
  std::vector<std::string> image_ids;
  std::vector<std::string> caption_ids;
  std::vector<std::size_t> caption_to_image;
  std::vector<std::vector<std::size_t>> image_to_captions;

  std::size_t n_images() const { return scores.rows; }
  std::size_t n_captions() const { return scores.cols; }

  void validate() const {
    if (image_ids.size() != scores.rows || caption_ids.size() != scores.cols)
      throw DataError("score matrix: id lists disagree with " + shape_str(scores));
    if (caption_to_image.size() != scores.cols || image_to_captions.size() != scores.rows)
      throw DataError("score matrix: ground-truth maps disagree with " + shape_str(scores));
    for (std::size_t c = 0; c < scores.cols; ++c)
      if (caption_to_image[c] >= scores.rows)
        throw DataError("score matrix: caption " + caption_ids[c] + " maps outside images");
    require_finite(scores, "score matrix");
  }
};

namespace detail {

// 1-based rank of candidate `target` among `n` candidates scored by `get`.
// Ties go to the lower index, so ranks are deterministic.
template <typename GetScore>
std::size_t rank_of(std::size_t target, std::size_t n, GetScore get) {
  const double s = get(target);
  std::size_t rank = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == target) continue;
    const double o = get(i);
    if (o > s || (o == s && i < target)) ++rank;
  }
  return rank;
}

}  // namespace detail

// Best (smallest) rank any ground-truth item attains, per query. For caption
// retrieval the query is an image and any of its captions counts; for image
// retrieval the query is a caption and only its source image counts.
inline std::vector<std::size_t> best_gt_ranks(const ScoreMatrix& sm, Direction direction) {
  sm.validate();
  std::vector<std::size_t> ranks;
  if (direction == Direction::CaptionGivenImage) {
    ranks.reserve(sm.n_images());
    for (std::size_t i = 0; i < sm.n_images(); ++i) {
      if (sm.image_to_captions[i].empty())
        throw DataError("score matrix: image " + sm.image_ids[i] + " has no captions");
      std::size_t best = sm.n_captions() + 1;
      for (std::size_t c : sm.image_to_captions[i])
        best = std::min(best, detail::rank_of(c, sm.n_captions(),
                                              [&](std::size_t j) { return sm.scores(i, j); }));
      ranks.push_back(best);
    }
  } else {
    ranks.reserve(sm.n_captions());
    for (std::size_t c = 0; c < sm.n_captions(); ++c)
      ranks.push_back(detail::rank_of(sm.caption_to_image[c], sm.n_images(),
                                      [&](std::size_t i) { return sm.scores(i, c); }));
  }
  return ranks;
}

inline double recall_at_k(const ScoreMatrix& sm, std::size_t k, Direction direction) {
  const std::size_t candidates =
      direction == Direction::CaptionGivenImage ? sm.n_captions() : sm.n_images();
  if (k == 0 || k > candidates)
    throw ParamError("recall_at_k: k=" + std::to_string(k) + " outside 1.." +
                     std::to_string(candidates));
  const auto ranks = best_gt_ranks(sm, direction);
  std::size_t hits = 0;
  for (std::size_t r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

// median of the best ground-truth ranks; even count averages the middle two
inline double median_rank(const ScoreMatrix& sm, Direction direction) {
  auto ranks = best_gt_ranks(sm, direction);
  std::sort(ranks.begin(), ranks.end());
  const std::size_t n = ranks.size();
  if (n == 0) throw DataError("median_rank: no queries");
  if (n % 2 == 1) return static_cast<double>(ranks[n / 2]);
  return 0.5 * static_cast<double>(ranks[n / 2 - 1] + ranks[n / 2]);
}

struct RetrievalReport {
  double caption_r1 = 0.0, caption_r5 = 0.0, caption_r10 = 0.0;
  double image_r1 = 0.0, image_r5 = 0.0, image_r10 = 0.0;
  double caption_median_rank = 0.0;  // auxiliary metric
  double image_median_rank = 0.0;

  double mean_r1() const { return 0.5 * (caption_r1 + image_r1); }
};

inline RetrievalReport evaluate(const ScoreMatrix& sm) {
  sm.validate();
  if (sm.n_images() == 0 || sm.n_captions() == 0) throw DataError("evaluate: empty split");
  RetrievalReport r;
  const auto cap_k = [&](std::size_t k) {
    return k <= sm.n_captions() ? recall_at_k(sm, k, Direction::CaptionGivenImage) : 1.0;
  };
  const auto img_k = [&](std::size_t k) {
    return k <= sm.n_images() ? recall_at_k(sm, k, Direction::ImageGivenCaption) : 1.0;
  };
  r.caption_r1 = cap_k(1);
  r.caption_r5 = cap_k(5);
  r.caption_r10 = cap_k(10);
  r.image_r1 = img_k(1);
  r.image_r5 = img_k(5);
  r.image_r10 = img_k(10);
  r.caption_median_rank = median_rank(sm, Direction::CaptionGivenImage);
  r.image_median_rank = median_rank(sm, Direction::ImageGivenCaption);
  return r;
}

inline std::string format_report(const RetrievalReport& r) {
  char buf[256];
  std::string out;
  out += "direction   r@1     r@5     r@10    medr\n";
  std::snprintf(buf, sizeof(buf), "caption     %.4f  %.4f  %.4f  %.1f\n", r.caption_r1,
                r.caption_r5, r.caption_r10, r.caption_median_rank);
  out += buf;
  std::snprintf(buf, sizeof(buf), "image       %.4f  %.4f  %.4f  %.1f\n", r.image_r1, r.image_r5,
                r.image_r10, r.image_median_rank);
  out += buf;
  return out;
}

// machine-readable key=value lines, one metric per line, fixed order
inline std::string report_kv(const RetrievalReport& r) {
  char buf[64];
  std::string out;
  const auto kv = [&](const char* key, double value) {
    std::snprintf(buf, sizeof(buf), "%s=%.6f\n", key, value);
    out += buf;
  };
  kv("caption_recall_at_1", r.caption_r1);
  kv("caption_recall_at_5", r.caption_r5);
  kv("caption_recall_at_10", r.caption_r10);
  kv("caption_median_rank", r.caption_median_rank);
  kv("image_recall_at_1", r.image_r1);
  kv("image_recall_at_5", r.image_r5);
  kv("image_recall_at_10", r.image_r10);
  kv("image_median_rank", r.image_median_rank);
  return out;
}

// ---- score-matrix builders over an evaluation split ----

namespace detail {

inline ScoreMatrix make_score_matrix(const EvalSplit& split, Matrix scores) {
  ScoreMatrix sm;
  sm.scores = std::move(scores);
  sm.image_ids = split.image_ids;
  sm.caption_ids = split.caption_ids;
  sm.caption_to_image = split.caption_to_image;
  sm.image_to_captions = split.image_to_captions;
  sm.validate();
  return sm;
}

}  // namespace detail

// images x captions dot products of the normalized embeddings
inline ScoreMatrix score_matrix_agnostic(const AgnosticEmbedder& emb, const Dataset& d,
                                         const EvalSplit& split) {
  const Matrix t_i = emb.embed_images(rows_as_columns(d.images, split.image_rows));
  const Matrix t_c = emb.embed_captions(rows_as_columns(d.captions, split.caption_rows));
  return detail::make_score_matrix(split, matmul(transpose(t_i), t_c));
}

// alpha * baseline + beta * grounded; u tables hold one row per split item in
// split order
inline ScoreMatrix score_matrix_score_fusion(const AgnosticEmbedder& emb,
                                             const ScoreFusionModel& model, const Dataset& d,
                                             const EvalSplit& split, const Matrix& u_images,
                                             const Matrix& u_captions) {
  if (u_images.rows != split.n_images() || u_captions.rows != split.n_captions())
    throw ShapeError("score_matrix_score_fusion: grounded tables do not match split");
  ForwardMode infer = ForwardMode::infer();
  const Matrix t_i = emb.embed_images(rows_as_columns(d.images, split.image_rows));
  const Matrix t_c = emb.embed_captions(rows_as_columns(d.captions, split.caption_rows));
  const Matrix s_t = matmul(transpose(t_i), t_c);
  const Matrix v_i = project_v(model.proj_v_image, transpose(u_images), infer);
  const Matrix v_c = project_v(model.proj_v_caption, transpose(u_captions), infer);
  const Matrix s_v = matmul(transpose(v_i), v_c);
  Matrix s(s_t.rows, s_t.cols);
  for (std::size_t i = 0; i < s.data.size(); ++i)
    s.data[i] = model.alpha * s_t.data[i] + model.beta * s_v.data[i];
  return detail::make_score_matrix(split, s);
}

// dot products of the joint representations; u tables ignored where the mode
// drops them (pass empty matrices in agnostic_deeper)
inline ScoreMatrix score_matrix_rep_fusion(const AgnosticEmbedder& emb,
                                           const RepFusionSystem& system, const Dataset& d,
                                           const EvalSplit& split, const Matrix& u_images,
                                           const Matrix& u_captions) {
  ForwardMode infer = ForwardMode::infer();
  const Matrix t_i = emb.embed_images(rows_as_columns(d.images, split.image_rows));
  const Matrix t_c = emb.embed_captions(rows_as_columns(d.captions, split.caption_rows));
  Matrix u_i(1, t_i.cols);
  if (system.fusion.uses_v_image()) {
    if (u_images.rows != split.n_images())
      throw ShapeError("score_matrix_rep_fusion: image grounded table does not match split");
    u_i = transpose(u_images);
  }
  Matrix u_c(1, t_c.cols);
  if (system.fusion.uses_v_caption()) {
    if (u_captions.rows != split.n_captions())
      throw ShapeError("score_matrix_rep_fusion: caption grounded table does not match split");
    u_c = transpose(u_captions);
  }
  const Matrix r_i = system.image_rep(t_i, u_i, infer);
  const Matrix r_c = system.caption_rep(t_c, u_c, infer);
  return detail::make_score_matrix(split, matmul(transpose(r_i), r_c));
}

}  // namespace vqarank
