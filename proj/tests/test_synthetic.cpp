#include "vqarank/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "vqarank/dataset.hpp"
#include "vqarank/feature_file.hpp"

namespace vqarank {
namespace {

SyntheticWorldConfig desk_config() {
  SyntheticWorldConfig cfg;
  cfg.n_facts = 8;
  cfg.train_scenes = 60;
  cfg.val_scenes = 20;
  cfg.test_scenes = 20;
  cfg.captions_per_image = 3;
  cfg.image_dim = 16;
  cfg.caption_dim = 5;
  cfg.question_dim = 6;
  cfg.seed = 42;
  return cfg;
}

// test-local ridge regression: solve (X^T X + eps I) W = X^T Y by Gaussian
// elimination with partial pivoting; eps keeps rank-deficient systems solvable
// (noiseless features live in the fact subspace) without moving the solution
Matrix least_squares(const Matrix& x, const Matrix& y) {
  const Matrix xtx = matmul(transpose(x), x);
  const Matrix xty = matmul(transpose(x), y);
  const std::size_t n = xtx.rows;
  Matrix a = xtx;
  for (std::size_t i = 0; i < n; ++i) a(i, i) += 1e-8;
  Matrix b = xty;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    if (std::abs(a(pivot, col)) < 1e-12) throw std::runtime_error("singular probe system");
    if (pivot != col)
      for (std::size_t j = 0; j < n; ++j) std::swap(a(col, j), a(pivot, j));
    if (pivot != col)
      for (std::size_t j = 0; j < b.cols; ++j) std::swap(b(col, j), b(pivot, j));
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double factor = a(r, col) / a(col, col);
      for (std::size_t j = 0; j < n; ++j) a(r, j) -= factor * a(col, j);
      for (std::size_t j = 0; j < b.cols; ++j) b(r, j) -= factor * b(col, j);
    }
  }
  Matrix w(n, b.cols);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < b.cols; ++j) w(r, j) = b(r, j) / a(r, r);
  return w;
}

double probe_error_rate(const Matrix& features, const Matrix& facts) {
  const Matrix w = least_squares(features, facts);
  const Matrix pred = matmul(features, w);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    wrong += ((pred.data[i] > 0.5 ? 1.0 : 0.0) != facts.data[i]) ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(pred.data.size());
}

TEST(Synthetic, SameSeedIsByteIdentical) {
  const SyntheticWorld a = generate_synthetic_world(desk_config());
  const SyntheticWorld b = generate_synthetic_world(desk_config());
  EXPECT_EQ(feature_bytes(a.data.images), feature_bytes(b.data.images));
  EXPECT_EQ(feature_bytes(a.data.captions), feature_bytes(b.data.captions));
  EXPECT_EQ(feature_bytes(a.data.caption_bow), feature_bytes(b.data.caption_bow));
  EXPECT_EQ(feature_bytes(a.data.questions), feature_bytes(b.data.questions));
  EXPECT_EQ(a.facts.data, b.facts.data);
  EXPECT_EQ(a.data.image_ids, b.data.image_ids);
}

TEST(Synthetic, DifferentSeedDiffers) {
  SyntheticWorldConfig cfg = desk_config();
  const SyntheticWorld a = generate_synthetic_world(cfg);
  cfg.seed = 43;
  const SyntheticWorld b = generate_synthetic_world(cfg);
  EXPECT_NE(a.data.images.data, b.data.images.data);
}

TEST(Synthetic, ShapesAndSplitsMatchConfig) {
  const SyntheticWorldConfig cfg = desk_config();
  const SyntheticWorld w = generate_synthetic_world(cfg);
  const Dataset& d = w.data;
  const std::size_t scenes = cfg.train_scenes + cfg.val_scenes + cfg.test_scenes;
  EXPECT_EQ(d.n_images(), scenes);
  EXPECT_EQ(d.n_captions(), scenes * cfg.captions_per_image);
  EXPECT_EQ(d.qa.size(), scenes * cfg.n_facts);
  EXPECT_EQ(d.questions.rows, cfg.n_facts);
  EXPECT_EQ(d.questions.cols, cfg.question_dim);
  EXPECT_EQ(d.answer_vocab, 2 * cfg.n_facts);

  EXPECT_EQ(make_split(d, Split::Train).n_images(), cfg.train_scenes);
  EXPECT_EQ(make_split(d, Split::Val).n_images(), cfg.val_scenes);
  const EvalSplit test = make_split(d, Split::Test);
  EXPECT_EQ(test.n_images(), cfg.test_scenes);
  EXPECT_EQ(test.n_captions(), cfg.test_scenes * cfg.captions_per_image);
}

TEST(Synthetic, AnswersEncodeFacts) {
  const SyntheticWorld w = generate_synthetic_world(desk_config());
  for (const QaRecord& r : w.data.qa) {
    const std::size_t j = r.question_row;
    const std::size_t expected = 2 * j + (w.facts(r.image, j) > 0.0 ? 1 : 0);
    EXPECT_EQ(r.answer, expected);
  }
}

TEST(Synthetic, CaptionsOnlyMentionTrueFacts) {
  const SyntheticWorld w = generate_synthetic_world(desk_config());
  const Dataset& d = w.data;
  std::size_t mentioned = 0, true_facts = 0;
  for (std::size_t c = 0; c < d.n_captions(); ++c) {
    const std::size_t s = d.caption_image[c];
    for (std::size_t j = 0; j < d.caption_bow.cols; ++j) {
      if (d.caption_bow(c, j) > 0.0) {
        EXPECT_GT(w.facts(s, j), 0.0) << "caption mentions a false fact";
        ++mentioned;
      }
      true_facts += w.facts(s, j) > 0.0 ? 1 : 0;
    }
  }
  // omission strictly drops information
  EXPECT_LT(mentioned, true_facts);
}

TEST(Synthetic, ZeroOmissionMentionsEverything) {
  SyntheticWorldConfig cfg = desk_config();
  cfg.caption_omission_rate = 0.0;
  const SyntheticWorld w = generate_synthetic_world(cfg);
  for (std::size_t c = 0; c < w.data.n_captions(); ++c)
    for (std::size_t j = 0; j < cfg.n_facts; ++j)
      EXPECT_EQ(w.data.caption_bow(c, j), w.facts(w.data.caption_image[c], j));
}

TEST(Synthetic, OmissionRateNearConfigured) {
  SyntheticWorldConfig cfg = desk_config();
  cfg.train_scenes = 600;
  const SyntheticWorld w = generate_synthetic_world(cfg);
  std::size_t kept = 0, true_facts = 0;
  for (std::size_t c = 0; c < w.data.n_captions(); ++c)
    for (std::size_t j = 0; j < cfg.n_facts; ++j) {
      if (w.facts(w.data.caption_image[c], j) > 0.0) {
        ++true_facts;
        kept += w.data.caption_bow(c, j) > 0.0 ? 1 : 0;
      }
    }
  const double omitted = 1.0 - static_cast<double>(kept) / static_cast<double>(true_facts);
  EXPECT_NEAR(omitted, cfg.caption_omission_rate, 0.02);
}

TEST(Synthetic, LinearProbeRecoversFactsFromImages) {
  SyntheticWorldConfig cfg;  // default dims, smaller scene count for speed
  cfg.train_scenes = 300;
  cfg.val_scenes = 10;
  cfg.test_scenes = 10;
  cfg.seed = 7;
  cfg.noise_sigma = 0.0;
  const SyntheticWorld noiseless = generate_synthetic_world(cfg);
  EXPECT_EQ(probe_error_rate(noiseless.data.images, noiseless.facts), 0.0);

  cfg.noise_sigma = 0.05;
  const SyntheticWorld noisy = generate_synthetic_world(cfg);
  EXPECT_LT(probe_error_rate(noisy.data.images, noisy.facts), 0.01);
}

TEST(Synthetic, CaptionFeaturesAreLossy) {
  // caption_dim < n_facts: even a noiseless probe cannot recover the mention
  // mask from caption features, while the bag-of-words row carries it exactly
  SyntheticWorldConfig cfg = desk_config();
  cfg.noise_sigma = 0.0;
  cfg.train_scenes = 300;
  const SyntheticWorld w = generate_synthetic_world(cfg);
  EXPECT_GT(probe_error_rate(w.data.captions, w.data.caption_bow), 0.05);
}

TEST(Synthetic, ConfigValidation) {
  SyntheticWorldConfig cfg = desk_config();
  cfg.n_facts = 0;
  EXPECT_THROW(generate_synthetic_world(cfg), ParamError);
  cfg = desk_config();
  cfg.caption_omission_rate = 1.0;
  EXPECT_THROW(generate_synthetic_world(cfg), ParamError);
  cfg = desk_config();
  cfg.answer_vocab = cfg.n_facts;  // below 2 * n_facts
  EXPECT_THROW(generate_synthetic_world(cfg), ParamError);
  cfg = desk_config();
  cfg.answer_vocab = 2 * cfg.n_facts + 3;
  const SyntheticWorld w = generate_synthetic_world(cfg);
  EXPECT_EQ(w.data.answer_vocab, 2 * cfg.n_facts + 3);
}

}  // namespace
}  // namespace vqarank
