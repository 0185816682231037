#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vqarank/errors.hpp"
#include "vqarank/grounding.hpp"
#include "vqarank/layers.hpp"
#include "vqarank/matrix.hpp"
#include "vqarank/ranking.hpp"
#include "vqarank/rng.hpp"
#include "vqarank/vqa_head.hpp"

namespace vqarank {

// Joint distribution estimate over (pair holds, retrieved caption) for one
// question-answer pair against K candidate captions. Row 0 is "holds", row 1
// is "does not hold". Every sample contributes p*q + (1-p)*q summed over
// captions = 1, so the table sums to 1 regardless of sample count.
struct JointTable {
  Matrix joint;  // 2 x K
  std::size_t n_samples = 0;  // 0 for exact enumeration
  std::uint64_t seed = 0;

  std::size_t candidates() const { return joint.cols; }

  double total() const {
    double t = 0.0;
    for (double v : joint.data) t += v;
    return t;
  }

  void validate(double tolerance = 1e-9) const {
    if (joint.rows != 2 || joint.cols == 0)
      throw DataError("joint table: expected 2 x K, got " + shape_str(joint));
    for (double v : joint.data)
      if (!(v >= 0.0) || v > 1.0 + tolerance)
        throw DataError("joint table: entry " + std::to_string(v) + " outside [0, 1]");
    if (std::abs(total() - 1.0) > tolerance)
      throw DataError("joint table: sums to " + std::to_string(total()) + ", expected 1");
  }
};

// Evaluates one dropout draw: returns (p, q) where p has one row per bank
// pair holding P(pair holds | image, theta) and q has one row per candidate
// caption holding P(caption | image, theta). Both must come from the same
// draw, which the shared ForwardMode enforces.
using ThetaSnapshotFn = std::function<std::pair<Matrix, Matrix>(ForwardMode&)>;

namespace detail {

inline void check_snapshot(const Matrix& p, const Matrix& q, std::size_t n_pairs,
                           std::size_t n_candidates) {
  if (p.rows != n_pairs || p.cols != 1)
    throw ShapeError("theta snapshot: pair probabilities are " + shape_str(p) + ", expected " +
                     std::to_string(n_pairs) + "x1");
  if (q.rows != n_candidates || q.cols != 1)
    throw ShapeError("theta snapshot: caption probabilities are " + shape_str(q) + ", expected " +
                     std::to_string(n_candidates) + "x1");
  for (double v : p.data)
    if (!(v >= 0.0) || v > 1.0 + 1e-9)
      throw DataError("theta snapshot: pair probability " + std::to_string(v) +
                      " outside [0, 1]");
}

inline std::vector<JointTable> joints_from_sums(const Matrix& acc_true, const Matrix& acc_q,
                                                double denom, std::size_t n_samples,
                                                std::uint64_t seed) {
  std::vector<JointTable> out(acc_true.rows);
  for (std::size_t i = 0; i < acc_true.rows; ++i) {
    JointTable jt;
    jt.joint = Matrix(2, acc_true.cols);
    jt.n_samples = n_samples;
    jt.seed = seed;
    for (std::size_t k = 0; k < acc_true.cols; ++k) {
      const double both = acc_true(i, k) / denom;
      jt.joint(0, k) = both;
      // p <= 1 makes this nonnegative; guard rounding residue
      jt.joint(1, k) = std::max(0.0, acc_q(k, 0) / denom - both);
    }
    out[i] = std::move(jt);
  }
  return out;
}

}  // namespace detail

// Monte-Carlo joint over dropout draws, one table per bank pair. All pairs
// and the caption distribution share each draw (common random numbers), which
// is what makes per-pair MI values comparable.
inline std::vector<JointTable> mc_joint_many(const ThetaSnapshotFn& snapshot,
                                             std::size_t n_pairs, std::size_t n_candidates,
                                             std::size_t n_samples, std::uint64_t seed) {
  if (n_pairs == 0) throw ParamError("mc_joint: no bank pairs");
  if (n_candidates == 0) throw ParamError("mc_joint: no candidate captions");
  if (n_samples == 0) throw ParamError("mc_joint: n_samples must be >= 1");

  Matrix acc_true(n_pairs, n_candidates);
  Matrix acc_q(n_candidates, 1);
  for (std::size_t s = 0; s < n_samples; ++s) {
    DropoutDraw draw(mix_seed(seed, s));
    ForwardMode mode = ForwardMode::theta(draw);
    const auto [p, q] = snapshot(mode);
    detail::check_snapshot(p, q, n_pairs, n_candidates);
    for (std::size_t i = 0; i < n_pairs; ++i) {
      const double pi = p(i, 0);
      for (std::size_t k = 0; k < n_candidates; ++k) acc_true(i, k) += pi * q(k, 0);
    }
    for (std::size_t k = 0; k < n_candidates; ++k) acc_q(k, 0) += q(k, 0);
  }
  return detail::joints_from_sums(acc_true, acc_q, static_cast<double>(n_samples), n_samples,
                                  seed);
}

inline JointTable mc_joint(const ThetaSnapshotFn& snapshot, std::size_t n_candidates,
                           std::size_t n_samples, std::uint64_t seed) {
  return mc_joint_many(snapshot, 1, n_candidates, n_samples, seed)[0];
}

constexpr std::size_t kExactEnumerationUnitLimit = 12;  // 4096 masks

// Exact expectation over every dropout mask, weighted by its Bernoulli
// probability. Only viable for tiny models; refuses beyond the unit limit.
inline std::vector<JointTable> exact_joint_oracle(const ThetaSnapshotFn& snapshot,
                                                  std::size_t n_pairs,
                                                  std::size_t n_candidates) {
  if (n_pairs == 0) throw ParamError("exact_joint_oracle: no bank pairs");
  if (n_candidates == 0) throw ParamError("exact_joint_oracle: no candidate captions");

  DropoutDraw probe = DropoutDraw::probe();
  {
    ForwardMode mode = ForwardMode::theta(probe);
    snapshot(mode);
  }
  const std::vector<DropoutSite> sites = probe.sites();
  std::size_t total_units = 0;
  for (const DropoutSite& s : sites) total_units += s.units;
  if (total_units > kExactEnumerationUnitLimit)
    throw ParamError("exact_joint_oracle: model has " + std::to_string(total_units) +
                     " dropout units, enumeration supports at most " +
                     std::to_string(kExactEnumerationUnitLimit));

  Matrix acc_true(n_pairs, n_candidates);
  Matrix acc_q(n_candidates, 1);
  const std::size_t n_masks = static_cast<std::size_t>(1) << total_units;
  for (std::size_t assignment = 0; assignment < n_masks; ++assignment) {
    double weight = 1.0;
    std::map<std::string, std::vector<std::uint8_t>> masks;
    std::size_t bit = 0;
    for (const DropoutSite& s : sites) {
      std::vector<std::uint8_t> mask(s.units);
      for (std::size_t u = 0; u < s.units; ++u, ++bit) {
        mask[u] = (assignment >> bit) & 1;
        weight *= mask[u] ? s.keep_prob : 1.0 - s.keep_prob;
      }
      masks.emplace(s.name, std::move(mask));
    }
    DropoutDraw draw = DropoutDraw::forced(std::move(masks));
    ForwardMode mode = ForwardMode::theta(draw);
    const auto [p, q] = snapshot(mode);
    detail::check_snapshot(p, q, n_pairs, n_candidates);
    for (std::size_t i = 0; i < n_pairs; ++i) {
      const double pi = p(i, 0);
      for (std::size_t k = 0; k < n_candidates; ++k) acc_true(i, k) += weight * pi * q(k, 0);
    }
    for (std::size_t k = 0; k < n_candidates; ++k) acc_q(k, 0) += weight * q(k, 0);
  }
  return detail::joints_from_sums(acc_true, acc_q, 1.0, 0, 0);
}

// FromJoint derives marginals by summation, which keeps MI nonnegative.
// PaperLiteral takes caller-supplied marginals (deterministic point
// predictions); the estimate can then go slightly negative.
enum class MarginalMode { FromJoint, PaperLiteral };

struct MiResult {
  std::size_t qa_index = 0;
  double mi_nats = 0.0;
  std::vector<double> marginals_v;  // 2 entries
  std::vector<double> marginals_c;  // K entries
};

inline MiResult mutual_information(const JointTable& jt, MarginalMode mode,
                                   const std::vector<double>& p_v = {},
                                   const std::vector<double>& p_c = {}) {
  jt.validate();
  const std::size_t k_count = jt.candidates();
  MiResult result;
  if (mode == MarginalMode::FromJoint) {
    result.marginals_v.assign(2, 0.0);
    result.marginals_c.assign(k_count, 0.0);
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t k = 0; k < k_count; ++k) {
        result.marginals_v[v] += jt.joint(v, k);
        result.marginals_c[k] += jt.joint(v, k);
      }
  } else {
    if (p_v.size() != 2 || p_c.size() != k_count)
      throw ParamError("mutual_information: literal marginals need 2 and " +
                       std::to_string(k_count) + " entries");
    result.marginals_v = p_v;
    result.marginals_c = p_c;
  }

  double mi = 0.0;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t k = 0; k < k_count; ++k) {
      const double j = jt.joint(v, k);
      if (j <= 0.0) continue;
      const double denom = result.marginals_v[v] * result.marginals_c[k];
      if (denom <= 0.0)
        throw DataError("mutual_information: joint mass at (" + std::to_string(v) + ", " +
                        std::to_string(k) + ") but marginal product is zero");
      mi += j * std::log(j / denom);
    }
  result.mi_nats = mi;
  return result;
}

struct RankedQa {
  std::size_t qa_index = 0;
  double mi_nats = 0.0;
};

// descending MI, ties toward the lower bank index
inline std::vector<RankedQa> rank_qa_by_mi(const std::vector<JointTable>& joints,
                                           MarginalMode mode) {
  std::vector<RankedQa> ranked(joints.size());
  for (std::size_t i = 0; i < joints.size(); ++i) {
    MiResult r = mutual_information(joints[i], mode);
    ranked[i] = {i, r.mi_nats};
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedQa& a, const RankedQa& b) {
    if (a.mi_nats != b.mi_nats) return a.mi_nats > b.mi_nats;
    return a.qa_index < b.qa_index;
  });
  return ranked;
}

struct SelectQaConfig {
  std::size_t n_samples = 5000;
  std::uint64_t seed = 1;
  MarginalMode marginal_mode = MarginalMode::FromJoint;
};

inline std::vector<RankedQa> select_informative_qa(const ThetaSnapshotFn& snapshot,
                                                   std::size_t n_pairs,
                                                   std::size_t n_candidates,
                                                   const SelectQaConfig& cfg) {
  return rank_qa_by_mi(mc_joint_many(snapshot, n_pairs, n_candidates, cfg.n_samples, cfg.seed),
                       cfg.marginal_mode);
}

// ---- model bindings ----
//
// Both bindings answer every bank pair and rank the caption candidates under
// one shared draw per sample. The grounded vector u is computed once per draw
// and serves double duty: exp(u) is the pair probability and u feeds the
// image-side grounded path of the ranker. Caption-side inputs are precomputed
// deterministically by the caller; the draw varies the image side.

// caption_reps: joint representations, one column per candidate
inline ThetaSnapshotFn make_rep_fusion_snapshot_fn(const VqaHead& head, const QABank& bank,
                                                   const RepFusionSystem& system, Matrix x_image,
                                                   Matrix t_image, Matrix caption_reps) {
  if (caption_reps.cols == 0) throw ParamError("snapshot: no candidate captions");
  return [&head, &bank, &system, x = std::move(x_image), t = std::move(t_image),
          reps = std::move(caption_reps)](ForwardMode& mode) {
    const Matrix u = compute_u(head, bank, x, mode);
    Matrix p(u.rows, 1);
    for (std::size_t i = 0; i < u.rows; ++i) p(i, 0) = std::exp(u(i, 0));
    const Matrix r_i = system.image_rep(t, u, mode);
    const Matrix q = softmax_cols(matmul(transpose(reps), r_i));
    return std::make_pair(p, q);
  };
}

// s_t_captions: 1 x K baseline scores of this image against each candidate;
// v_captions: projected grounded caption vectors, one column per candidate
inline ThetaSnapshotFn make_score_fusion_snapshot_fn(const VqaHead& head, const QABank& bank,
                                                     const ScoreFusionModel& model,
                                                     Matrix x_image, Matrix s_t_captions,
                                                     Matrix v_captions) {
  if (s_t_captions.rows != 1 || s_t_captions.cols != v_captions.cols)
    throw ShapeError("snapshot: baseline scores are " + shape_str(s_t_captions) +
                     ", grounded captions are " + shape_str(v_captions));
  return [&head, &bank, &model, x = std::move(x_image), s_t = std::move(s_t_captions),
          v_c = std::move(v_captions)](ForwardMode& mode) {
    const Matrix u = compute_u(head, bank, x, mode);
    Matrix p(u.rows, 1);
    for (std::size_t i = 0; i < u.rows; ++i) p(i, 0) = std::exp(u(i, 0));
    const Matrix v_i = project_v(model.proj_v_image, u, mode);
    const Matrix s_v = matmul(transpose(v_c), v_i);  // K x 1
    Matrix s(s_v.rows, 1);
    for (std::size_t k = 0; k < s.rows; ++k)
      s(k, 0) = model.alpha * s_t(0, k) + model.beta * s_v(k, 0);
    return std::make_pair(p, softmax_cols(s));
  };
}

}  // namespace vqarank
