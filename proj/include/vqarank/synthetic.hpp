#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "vqarank/dataset.hpp"
#include "vqarank/errors.hpp"
#include "vqarank/matrix.hpp"
#include "vqarank/rng.hpp"

namespace vqarank {

// Latent-fact world: each scene is a binary fact vector f. Image features are
// a noisy random linear encoding of all of f. Each caption mentions a random
// subset of the true facts (each true fact omitted independently), so captions
// systematically under-specify their image; caption features additionally pass
// through a lossy low-dimensional map while the bag-of-words row keeps the full
// mention mask. Question j asks about fact j; the ground-truth answer index is
// 2j + f_j, so answers are decidable from the image but only sometimes from a
// caption.
struct SyntheticWorldConfig {
  std::size_t n_facts = 16;
  std::size_t train_scenes = 2000;
  std::size_t val_scenes = 500;
  std::size_t test_scenes = 500;
  std::size_t captions_per_image = 5;
  double caption_omission_rate = 0.4;
  double noise_sigma = 0.05;
  std::size_t image_dim = 32;
  std::size_t caption_dim = 8;  // below n_facts: caption features are lossy
  std::size_t question_dim = 12;
  std::size_t answer_vocab = 0;  // 0 = derived as 2 * n_facts
  std::uint64_t seed = 1;

  std::size_t resolved_vocab() const { return answer_vocab ? answer_vocab : 2 * n_facts; }

  void validate() const {
    if (n_facts == 0) throw ParamError("n_facts must be >= 1");
    if (train_scenes == 0) throw ParamError("train_scenes must be >= 1");
    if (captions_per_image == 0) throw ParamError("captions_per_image must be >= 1");
    if (!(caption_omission_rate >= 0.0 && caption_omission_rate < 1.0))
      throw ParamError("caption_omission_rate must be in [0, 1)");
    if (!(noise_sigma >= 0.0)) throw ParamError("noise_sigma must be >= 0");
    if (image_dim == 0 || caption_dim == 0 || question_dim == 0)
      throw ParamError("feature dims must be >= 1");
    if (answer_vocab != 0 && answer_vocab < 2 * n_facts)
      throw ParamError("answer_vocab must be 0 (derived) or >= 2 * n_facts");
  }
};

struct SyntheticWorld {
  Dataset data;
  Matrix facts;  // n_scenes x n_facts ground truth, not part of the dataset files
};

namespace detail {

inline std::string padded_id(const char* prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%06zu", prefix, n);
  return buf;
}

}  // namespace detail

inline SyntheticWorld generate_synthetic_world(const SyntheticWorldConfig& cfg) {
  cfg.validate();
  const std::size_t n_scenes = cfg.train_scenes + cfg.val_scenes + cfg.test_scenes;
  const std::size_t n_captions = n_scenes * cfg.captions_per_image;
  const double fact_scale = 1.0 / std::sqrt(static_cast<double>(cfg.n_facts));

  Rng map_rng(mix_seed(cfg.seed, 1));
  Matrix a_img(cfg.image_dim, cfg.n_facts);
  for (double& v : a_img.data) v = map_rng.normal() * fact_scale;
  Matrix a_cap(cfg.caption_dim, cfg.n_facts);
  for (double& v : a_cap.data) v = map_rng.normal() * fact_scale;
  Matrix a_q(cfg.question_dim, cfg.n_facts);
  for (double& v : a_q.data) v = map_rng.normal();

  SyntheticWorld world;
  Dataset& d = world.data;
  d.answer_vocab = cfg.resolved_vocab();
  d.questions = transpose(a_q);  // row j encodes "which value does fact j have?"
  d.images = Matrix(n_scenes, cfg.image_dim);
  d.captions = Matrix(n_captions, cfg.caption_dim);
  d.caption_bow = Matrix(n_captions, cfg.n_facts);
  world.facts = Matrix(n_scenes, cfg.n_facts);

  Rng scene_rng(mix_seed(cfg.seed, 2));
  Rng caption_rng(mix_seed(cfg.seed, 3));
  std::size_t caption_row = 0;
  for (std::size_t s = 0; s < n_scenes; ++s) {
    const Split split = s < cfg.train_scenes                    ? Split::Train
                        : s < cfg.train_scenes + cfg.val_scenes ? Split::Val
                                                                : Split::Test;
    d.image_ids.push_back(detail::padded_id("img_", s));
    d.image_split.push_back(split);
    d.image_captions.emplace_back();
    d.image_qa.emplace_back();

    for (std::size_t j = 0; j < cfg.n_facts; ++j)
      world.facts(s, j) = scene_rng.bernoulli(0.5) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < cfg.image_dim; ++i) {
      double v = scene_rng.normal() * cfg.noise_sigma;
      for (std::size_t j = 0; j < cfg.n_facts; ++j) v += a_img(i, j) * world.facts(s, j);
      d.images(s, i) = v;
    }

    for (std::size_t c = 0; c < cfg.captions_per_image; ++c, ++caption_row) {
      d.caption_ids.push_back(detail::padded_id("cap_", caption_row));
      d.caption_image.push_back(s);
      d.image_captions[s].push_back(caption_row);
      for (std::size_t j = 0; j < cfg.n_facts; ++j) {
        const bool mentioned =
            world.facts(s, j) > 0.0 && !caption_rng.bernoulli(cfg.caption_omission_rate);
        d.caption_bow(caption_row, j) = mentioned ? 1.0 : 0.0;
      }
      for (std::size_t i = 0; i < cfg.caption_dim; ++i) {
        double v = caption_rng.normal() * cfg.noise_sigma;
        for (std::size_t j = 0; j < cfg.n_facts; ++j)
          v += a_cap(i, j) * d.caption_bow(caption_row, j);
        d.captions(caption_row, i) = v;
      }
    }

    for (std::size_t j = 0; j < cfg.n_facts; ++j) {
      const std::size_t answer = 2 * j + (world.facts(s, j) > 0.0 ? 1 : 0);
      d.image_qa[s].push_back(d.qa.size());
      d.qa.push_back({detail::padded_id("qa_", d.qa.size()), j, answer, s});
    }
  }

  d.validate();
  return world;
}

}  // namespace vqarank
