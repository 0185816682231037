#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vqarank/dataset.hpp"
#include "vqarank/errors.hpp"
#include "vqarank/feature_file.hpp"
#include "vqarank/layers.hpp"
#include "vqarank/matrix.hpp"
#include "vqarank/rng.hpp"
#include "vqarank/vqa_head.hpp"

namespace vqarank {

constexpr double kGroundingProbFloor = 1e-12;

// Ordered set of N question-answer pairs. Grounded vectors have one entry per
// pair: the log probability a head assigns to the pair's ground-truth answer.
struct QABank {
  Matrix questions;  // N x d_q
  std::vector<std::size_t> answers;
  std::vector<std::string> qa_ids;
  std::vector<std::string> image_ids;  // source image of each pair

  std::size_t size() const { return answers.size(); }

  void validate(std::size_t answer_vocab) const {
    if (questions.rows != answers.size() || qa_ids.size() != answers.size() ||
        image_ids.size() != answers.size())
      throw DataError("bank: field lengths disagree");
    for (std::size_t a : answers)
      if (a >= answer_vocab)
        throw DataError("bank: answer " + std::to_string(a) + " outside vocabulary of " +
                        std::to_string(answer_vocab));
  }

  // Canonical content hash (32-bit feature precision) so cached grounded
  // vectors can be checked against the bank that produced them.
  std::uint64_t content_hash() const {
    std::string bytes;
    detail::put_u64(bytes, questions.rows);
    detail::put_u64(bytes, questions.cols);
    for (double v : questions.data) detail::put_f32(bytes, static_cast<float>(v));
    for (std::size_t a : answers) detail::put_u64(bytes, a);
    return fnv1a64(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  }
};

// Seeded sample of per_image QA pairs from each of num_images train images,
// ordered by (image sample order, question sample order).
inline QABank build_qa_bank(const Dataset& d, std::size_t per_image, std::size_t num_images,
                            std::uint64_t seed) {
  if (per_image == 0 || num_images == 0)
    throw ParamError("build_qa_bank: per_image and num_images must be >= 1");
  std::vector<std::size_t> train_images;
  for (std::size_t i = 0; i < d.n_images(); ++i)
    if (d.image_split[i] == Split::Train) train_images.push_back(i);
  if (train_images.size() < num_images)
    throw DataError("build_qa_bank: need " + std::to_string(num_images) +
                    " train images, manifest has " + std::to_string(train_images.size()));

  Rng rng(mix_seed(seed, 0xba2c));
  QABank bank;
  bank.questions = Matrix(per_image * num_images, d.questions.cols);
  const auto picked = rng.sample_without_replacement(train_images.size(), num_images);
  std::size_t row = 0;
  for (std::size_t p : picked) {
    const std::size_t image = train_images[p];
    const auto& pool = d.image_qa[image];
    if (pool.size() < per_image)
      throw DataError("build_qa_bank: image " + d.image_ids[image] + " has " +
                      std::to_string(pool.size()) + " QA pairs, need " +
                      std::to_string(per_image));
    for (std::size_t k : rng.sample_without_replacement(pool.size(), per_image)) {
      const QaRecord& r = d.qa[pool[k]];
      for (std::size_t j = 0; j < d.questions.cols; ++j)
        bank.questions(row, j) = d.questions(r.question_row, j);
      bank.answers.push_back(r.answer);
      bank.qa_ids.push_back(r.id);
      bank.image_ids.push_back(d.image_ids[r.image]);
      ++row;
    }
  }
  return bank;
}

// Grounded vector u for one input: u(i) = log max(P(A_i | Q_i, input), floor),
// evaluated over the whole bank in one batch so a theta draw applies one
// sampled subnetwork to every pair.
inline Matrix compute_u(const VqaHead& head, const QABank& bank, const Matrix& x,
                        ForwardMode& mode, double prob_floor = kGroundingProbFloor) {
  if (bank.size() == 0) throw DataError("compute_u: empty bank");
  if (x.cols != 1) throw ShapeError("compute_u: expected a single column, got " + shape_str(x));
  if (!(prob_floor > 0.0) || prob_floor > 1.0)
    throw ParamError("prob_floor must be in (0, 1]");
  bank.validate(head.cfg.answer_vocab);

  const Matrix z_in = head.project_input(x);                          // hidden x 1
  const Matrix z_q = head.project_question(transpose(bank.questions));  // hidden x N
  const Matrix hidden = hadamard_col_broadcast(z_q, z_in);
  const Matrix dropped = mode.dropout(hidden, head.cfg.hidden_keep_prob, head.hidden_site());
  const Matrix log_probs = log_softmax_cols(head.answer_layer.forward(dropped));

  const double floor = std::log(prob_floor);
  Matrix u(bank.size(), 1);
  for (std::size_t i = 0; i < bank.size(); ++i)
    u(i, 0) = std::max(log_probs(bank.answers[i], i), floor);
  return u;
}

// Grounded vectors for every row of an input table, inference mode. Returns
// n_items x N; the question-side projection is shared across items.
inline Matrix compute_u_table(const VqaHead& head, const QABank& bank, const Matrix& inputs,
                              double prob_floor = kGroundingProbFloor) {
  if (bank.size() == 0) throw DataError("compute_u_table: empty bank");
  bank.validate(head.cfg.answer_vocab);
  const Matrix z_q = head.project_question(transpose(bank.questions));  // hidden x N
  const double floor = std::log(prob_floor);
  Matrix out(inputs.rows, bank.size());
  for (std::size_t r = 0; r < inputs.rows; ++r) {
    const Matrix z_in = head.project_input(row_as_column(inputs, r));
    const Matrix hidden = hadamard_col_broadcast(z_q, z_in);
    const Matrix log_probs = log_softmax_cols(head.answer_layer.forward(hidden));
    for (std::size_t i = 0; i < bank.size(); ++i)
      out(r, i) = std::max(log_probs(bank.answers[i], i), floor);
  }
  return out;
}

// Hidden-activation feature source: rows of z = tanh(W x + b) per input row.
inline Matrix extract_hidden_features(const VqaHead& head, const Matrix& inputs) {
  return transpose(head.project_input(transpose(inputs)));
}

// Learned embedding of grounded vectors: v = relu(W u + b) with dropout after
// the relu.
struct GroundingProjection {
  LinearLayer layer;  // out_dim x in_dim
  double keep_prob = 0.5;
  std::string site = "ground.v";

  GroundingProjection() = default;
  GroundingProjection(std::size_t out_dim, std::size_t in_dim, std::string site_name, Rng& rng,
                      double keep = 0.5)
      : layer(out_dim, in_dim), keep_prob(keep), site(std::move(site_name)) {
    require_keep_prob(keep_prob);
    layer.init_uniform(rng);
  }
};

inline Matrix project_v(const GroundingProjection& proj, const Matrix& u, ForwardMode& mode) {
  return mode.dropout(relu_forward(proj.layer.forward(u)), proj.keep_prob, proj.site);
}

}  // namespace vqarank
