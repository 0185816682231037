#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vqarank/dataset.hpp"
#include "vqarank/errors.hpp"
#include "vqarank/layers.hpp"
#include "vqarank/matrix.hpp"
#include "vqarank/optimizer.hpp"
#include "vqarank/rng.hpp"

namespace vqarank {

struct VqaHeadConfig {
  std::size_t input_dim = 4096;     // image features, or bag-of-words captions
  std::size_t question_dim = 2048;
  std::size_t hidden_dim = 1024;
  std::size_t answer_vocab = 1000;
  // Dropout on the fused hidden vector. Off by default; parameter-posterior
  // sampling needs at least one stochastic site, so MC callers turn it on.
  double hidden_keep_prob = 1.0;

  void validate() const {
    if (input_dim == 0 || question_dim == 0 || hidden_dim == 0)
      throw ParamError("head dims must be >= 1");
    if (answer_vocab < 2) throw ParamError("answer_vocab must be >= 2");
    require_keep_prob(hidden_keep_prob);
  }
};

struct VqaForwardResult {
  Matrix log_probs;  // answer_vocab x batch
  Matrix hidden;     // hidden_dim x batch, the pre-dropout fused activation
};

// Answer classifier over (input, question): both sides project into a shared
// space through tanh, fuse by element-wise product, and feed an answer softmax.
// The same architecture serves image inputs and bag-of-words caption inputs.
struct VqaHead {
  VqaHeadConfig cfg;
  LinearLayer proj_input;     // hidden_dim x input_dim
  LinearLayer proj_question;  // hidden_dim x question_dim
  LinearLayer answer_layer;   // answer_vocab x hidden_dim
  std::string site_prefix = "vqa";

  VqaHead() = default;

  VqaHead(const VqaHeadConfig& c, std::string prefix, Rng& rng)
      : cfg(c),
        proj_input(c.hidden_dim, c.input_dim),
        proj_question(c.hidden_dim, c.question_dim),
        answer_layer(c.answer_vocab, c.hidden_dim),
        site_prefix(std::move(prefix)) {
    cfg.validate();
    proj_input.init_uniform(rng);
    proj_question.init_uniform(rng);
    answer_layer.init_uniform(rng);
  }

  std::string hidden_site() const { return site_prefix + ".hidden"; }

  // The input-side multimodal projection z = tanh(W x + b), exposed as an
  // alternative feature source.
  Matrix project_input(const Matrix& x) const { return tanh_forward(proj_input.forward(x)); }
  Matrix project_question(const Matrix& xq) const {
    return tanh_forward(proj_question.forward(xq));
  }

  VqaForwardResult forward(const Matrix& x, const Matrix& xq, ForwardMode& mode) const {
    if (x.cols != xq.cols)
      throw ShapeError("VqaHead::forward: " + std::to_string(x.cols) + " inputs vs " +
                       std::to_string(xq.cols) + " questions");
    const Matrix hidden = hadamard(project_input(x), project_question(xq));
    const Matrix dropped = mode.dropout(hidden, cfg.hidden_keep_prob, hidden_site());
    return {log_softmax_cols(answer_layer.forward(dropped)), hidden};
  }

  std::vector<NamedLayer> layers() {
    return {{site_prefix + ".proj_input", &proj_input},
            {site_prefix + ".proj_question", &proj_question},
            {site_prefix + ".answer", &answer_layer}};
  }
};

// Probability of one answer for a single (input, question) pair, inference mode.
inline double answer_prob(const VqaHead& head, const Matrix& x, const Matrix& xq,
                          std::size_t answer) {
  if (answer >= head.cfg.answer_vocab)
    throw ParamError("answer index " + std::to_string(answer) + " outside vocabulary of " +
                     std::to_string(head.cfg.answer_vocab));
  ForwardMode mode = ForwardMode::infer();
  const VqaForwardResult out = head.forward(x, xq, mode);
  return std::exp(out.log_probs(answer, 0));
}

// Mean NLL of the ground-truth answers over a batch (columns); accumulates
// parameter gradients as a side effect.
inline double vqa_nll_step(VqaHead& head, const Matrix& x, const Matrix& xq,
                           const std::vector<std::size_t>& answers, ForwardMode& mode) {
  const std::size_t batch = x.cols;
  if (batch == 0) throw DataError("vqa_nll_step: empty batch");
  if (xq.cols != batch || answers.size() != batch)
    throw ShapeError("vqa_nll_step: batch sizes disagree");
  for (std::size_t a : answers)
    if (a >= head.cfg.answer_vocab)
      throw ParamError("answer index " + std::to_string(a) + " outside vocabulary");

  const Matrix a_in = head.proj_input.forward(x);
  const Matrix z_in = tanh_forward(a_in);
  const Matrix a_q = head.proj_question.forward(xq);
  const Matrix z_q = tanh_forward(a_q);
  const Matrix hidden = hadamard(z_in, z_q);
  const auto [dropped, mask] =
      mode.dropout_with_mask(hidden, head.cfg.hidden_keep_prob, head.hidden_site());
  const Matrix logits = head.answer_layer.forward(dropped);
  const Matrix log_probs = log_softmax_cols(logits);

  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) loss -= log_probs(answers[b], b);
  loss /= static_cast<double>(batch);

  Matrix d_logits = softmax_cols(logits);
  const double inv = 1.0 / static_cast<double>(batch);
  for (double& v : d_logits.data) v *= inv;
  for (std::size_t b = 0; b < batch; ++b) d_logits(answers[b], b) -= inv;

  const Matrix d_dropped = head.answer_layer.backward(dropped, d_logits);
  const Matrix d_hidden = dropout_backward(d_dropped, mask);
  head.proj_input.backward(x, tanh_backward(a_in, hadamard(d_hidden, z_q)));
  head.proj_question.backward(xq, tanh_backward(a_q, hadamard(d_hidden, z_in)));
  return loss;
}

struct VqaExample {
  std::size_t input_row = 0;
  std::size_t question_row = 0;
  std::size_t answer = 0;
};

// Training triples for the image-answering head: every (image, its QA pair).
inline std::vector<VqaExample> image_qa_examples(const Dataset& d, Split s) {
  std::vector<VqaExample> out;
  for (const QaRecord& r : d.qa)
    if (d.image_split[r.image] == s) out.push_back({r.image, r.question_row, r.answer});
  return out;
}

// Triples for the caption-answering head: every caption of an image paired
// with every QA pair of the same image; inputs are bag-of-words rows.
inline std::vector<VqaExample> caption_qa_examples(const Dataset& d, Split s) {
  std::vector<VqaExample> out;
  for (const QaRecord& r : d.qa) {
    if (d.image_split[r.image] != s) continue;
    for (std::size_t c : d.image_captions[r.image])
      out.push_back({c, r.question_row, r.answer});
  }
  return out;
}

struct HeadTrainConfig {
  RmsPropConfig opt{1e-4, 0.9, 1e-8, 0.1, 50000};
  std::size_t batch_size = 100;
  std::uint64_t iterations = 1000;
  std::uint64_t log_every = 100;
  std::uint64_t seed = 1;
};

struct TrainTrace {
  std::vector<std::pair<std::uint64_t, double>> losses;  // (iteration, batch loss)
};

inline TrainTrace train_vqa_head(VqaHead& head, const Matrix& input_table,
                                 const Matrix& question_table,
                                 const std::vector<VqaExample>& examples,
                                 const HeadTrainConfig& cfg) {
  if (examples.empty()) throw DataError("train_vqa_head: empty dataset");
  cfg.opt.validate();
  if (cfg.batch_size == 0) throw ParamError("batch_size must be >= 1");
  for (const VqaExample& e : examples)
    if (e.answer >= head.cfg.answer_vocab)
      throw DataError("train_vqa_head: answer " + std::to_string(e.answer) +
                      " outside vocabulary");

  Rng rng(mix_seed(cfg.seed, 0x7ead));
  TrainTrace trace;
  std::vector<std::size_t> input_rows(cfg.batch_size), question_rows(cfg.batch_size);
  std::vector<std::size_t> answers(cfg.batch_size);
  for (std::uint64_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const VqaExample& e = examples[rng.uniform_index(examples.size())];
      input_rows[b] = e.input_row;
      question_rows[b] = e.question_row;
      answers[b] = e.answer;
    }
    const Matrix x = rows_as_columns(input_table, input_rows);
    const Matrix xq = rows_as_columns(question_table, question_rows);
    ForwardMode mode = ForwardMode::train(mix_seed(cfg.seed, it));
    const double loss = vqa_nll_step(head, x, xq, answers, mode);
    if (it % cfg.log_every == 0 || it + 1 == cfg.iterations) trace.losses.emplace_back(it, loss);
    for (const NamedLayer& nl : head.layers()) rmsprop_step(*nl.layer, cfg.opt, it);
  }
  return trace;
}

}  // namespace vqarank
