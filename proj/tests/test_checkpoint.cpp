#include "vqarank/checkpoint.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "vqarank/feature_file.hpp"

namespace vqarank {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() /
          ("vqarank_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
           "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

VqaHead sample_head(std::uint64_t seed, double keep = 1.0) {
  VqaHeadConfig cfg;
  cfg.input_dim = 5;
  cfg.question_dim = 4;
  cfg.hidden_dim = 6;
  cfg.answer_vocab = 7;
  cfg.hidden_keep_prob = keep;
  Rng rng(seed);
  return VqaHead(cfg, "vqa", rng);
}

CheckpointMeta sample_meta() {
  CheckpointMeta meta;
  meta.iteration = 12345;
  meta.seed = 99;
  meta.config_echo = "iterations=12345 lr=0.0001";
  return meta;
}

TEST(Checkpoint, VqaHeadRoundTripsByteIdentically) {
  const TempDir tmp;
  const VqaHead head = sample_head(3, 0.5);
  const std::string p1 = tmp.path("head.mmck");
  const std::string p2 = tmp.path("head2.mmck");
  save_vqa_head(p1, head, ModelKind::VqaHead, sample_meta());

  const auto [loaded, meta] = load_vqa_head(p1, ModelKind::VqaHead);
  EXPECT_EQ(meta.iteration, 12345u);
  EXPECT_EQ(meta.seed, 99u);
  EXPECT_EQ(meta.config_echo, "iterations=12345 lr=0.0001");
  EXPECT_EQ(loaded.cfg.input_dim, head.cfg.input_dim);
  EXPECT_EQ(loaded.cfg.hidden_keep_prob, head.cfg.hidden_keep_prob);
  EXPECT_EQ(loaded.site_prefix, head.site_prefix);
  EXPECT_EQ(loaded.proj_input.W.data, head.proj_input.W.data);
  EXPECT_EQ(loaded.proj_input.b.data, head.proj_input.b.data);
  EXPECT_EQ(loaded.proj_question.W.data, head.proj_question.W.data);
  EXPECT_EQ(loaded.answer_layer.W.data, head.answer_layer.W.data);

  save_vqa_head(p2, loaded, ModelKind::VqaHead, meta);
  EXPECT_EQ(detail::read_file_bytes(p1), detail::read_file_bytes(p2));
}

TEST(Checkpoint, LoadedHeadEvaluatesBitIdentically) {
  const TempDir tmp;
  const VqaHead head = sample_head(5);
  save_vqa_head(tmp.path("h.mmck"), head, ModelKind::VqaCaptionHead, sample_meta());
  const auto [loaded, meta] = load_vqa_head(tmp.path("h.mmck"), ModelKind::VqaCaptionHead);

  Matrix x(5, 3), xq(4, 3);
  Rng rng(7);
  for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
  for (double& v : xq.data) v = rng.uniform(-1.0, 1.0);
  ForwardMode m1 = ForwardMode::infer();
  ForwardMode m2 = ForwardMode::infer();
  EXPECT_EQ(head.forward(x, xq, m1).log_probs.data, loaded.forward(x, xq, m2).log_probs.data);
}

TEST(Checkpoint, KindMismatchNamesBothKinds) {
  const TempDir tmp;
  save_vqa_head(tmp.path("h.mmck"), sample_head(9), ModelKind::VqaHead, sample_meta());
  try {
    load_vqa_head(tmp.path("h.mmck"), ModelKind::VqaCaptionHead);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("vqa_head"), std::string::npos);
    EXPECT_NE(msg.find("vqa_caption_head"), std::string::npos);
  }
  EXPECT_THROW(load_agnostic(tmp.path("h.mmck")), DataError);
  EXPECT_THROW(save_vqa_head(tmp.path("x.mmck"), sample_head(9), ModelKind::Agnostic,
                             sample_meta()),
               ParamError);
}

TEST(Checkpoint, AgnosticRoundTrip) {
  const TempDir tmp;
  Rng rng(11);
  const AgnosticEmbedder emb(4, 9, rng);
  save_agnostic(tmp.path("a.mmck"), emb, sample_meta());
  const auto [loaded, meta] = load_agnostic(tmp.path("a.mmck"));
  EXPECT_EQ(loaded.proj_image.W.data, emb.proj_image.W.data);
  EXPECT_FALSE(loaded.proj_image.has_bias);
  EXPECT_EQ(meta.iteration, 12345u);

  const Matrix x_i = Matrix(9, 1);
  Matrix probe = x_i;
  for (std::size_t i = 0; i < 9; ++i) probe(i, 0) = 0.1 * static_cast<double>(i + 1);
  Matrix cap(4, 1);
  for (std::size_t i = 0; i < 4; ++i) cap(i, 0) = 0.3 - 0.1 * static_cast<double>(i);
  EXPECT_EQ(agnostic_score(emb, probe, cap), agnostic_score(loaded, probe, cap));

  save_agnostic(tmp.path("b.mmck"), loaded, meta);
  EXPECT_EQ(detail::read_file_bytes(tmp.path("a.mmck")),
            detail::read_file_bytes(tmp.path("b.mmck")));
}

TEST(Checkpoint, ScoreFusionRoundTrip) {
  const TempDir tmp;
  Rng rng(13);
  ScoreFusionModel model;
  model.proj_v_image = GroundingProjection(3, 6, "ground.v_image", rng, 0.5);
  model.proj_v_caption = GroundingProjection(3, 6, "ground.v_caption", rng, 0.5);
  model.alpha = 0.85;
  model.beta = 0.15;
  save_score_fusion(tmp.path("sf.mmck"), model, sample_meta());

  const auto [loaded, meta] = load_score_fusion(tmp.path("sf.mmck"));
  EXPECT_EQ(loaded.alpha, 0.85);
  EXPECT_EQ(loaded.beta, 0.15);
  EXPECT_EQ(loaded.proj_v_image.layer.W.data, model.proj_v_image.layer.W.data);
  EXPECT_EQ(loaded.proj_v_image.keep_prob, 0.5);
  EXPECT_EQ(loaded.proj_v_image.site, "ground.v_image");
  EXPECT_EQ(loaded.proj_v_caption.layer.b.data, model.proj_v_caption.layer.b.data);

  Matrix u(6, 1);
  u.fill(-0.5);
  ForwardMode m1 = ForwardMode::infer();
  ForwardMode m2 = ForwardMode::infer();
  EXPECT_EQ(grounded_score(model, u, u, m1), grounded_score(loaded, u, u, m2));

  save_score_fusion(tmp.path("sf2.mmck"), loaded, meta);
  EXPECT_EQ(detail::read_file_bytes(tmp.path("sf.mmck")),
            detail::read_file_bytes(tmp.path("sf2.mmck")));
}

TEST(Checkpoint, RepFusionRoundTripAllModes) {
  const TempDir tmp;
  for (FusionMode mode : {FusionMode::Full, FusionMode::CaptionOnly, FusionMode::ImageOnly,
                          FusionMode::AgnosticDeeper}) {
    Rng rng(17 + static_cast<std::uint64_t>(mode));
    const RepFusionSystem sys(5, 4, 3, 6, mode, rng, 0.75);
    const std::string path = tmp.path("rf_" + std::string(fusion_mode_name(mode)) + ".mmck");
    save_rep_fusion(path, sys, sample_meta());

    const auto [loaded, meta] = load_rep_fusion(path);
    EXPECT_EQ(loaded.fusion.mode, mode);
    EXPECT_EQ(loaded.fusion.rep_keep_prob, 0.75);
    EXPECT_EQ(loaded.fusion.t_image.W.data, sys.fusion.t_image.W.data);
    EXPECT_EQ(loaded.fusion.t_image.b.data, sys.fusion.t_image.b.data);
    EXPECT_EQ(loaded.fusion.v_caption.W.data, sys.fusion.v_caption.W.data);
    EXPECT_EQ(loaded.proj_v_image.layer.W.data, sys.proj_v_image.layer.W.data);
    EXPECT_EQ(loaded.proj_v_caption.layer.W.data, sys.proj_v_caption.layer.W.data);

    const Matrix t = Matrix(4, 2);
    Matrix tt = t;
    for (std::size_t i = 0; i < tt.data.size(); ++i) tt.data[i] = 0.05 * double(i) - 0.2;
    Matrix u(6, 2);
    u.fill(-0.3);
    ForwardMode m1 = ForwardMode::infer();
    ForwardMode m2 = ForwardMode::infer();
    EXPECT_EQ(sys.image_rep(tt, u, m1).data, loaded.image_rep(tt, u, m2).data);

    const std::string second = tmp.path("rf2.mmck");
    save_rep_fusion(second, loaded, meta);
    EXPECT_EQ(detail::read_file_bytes(path), detail::read_file_bytes(second));
  }
}

TEST(Checkpoint, CorruptionIsRejected) {
  const TempDir tmp;
  const std::string path = tmp.path("h.mmck");
  save_vqa_head(path, sample_head(21), ModelKind::VqaHead, sample_meta());
  const std::string good = detail::read_file_bytes(path);

  // truncation at several byte offsets
  for (std::size_t cut : {std::size_t(3), std::size_t(7), std::size_t(40), good.size() - 5}) {
    detail::write_file_bytes(path, good.substr(0, cut));
    EXPECT_THROW(load_vqa_head(path, ModelKind::VqaHead), DataError) << "cut at " << cut;
  }

  // trailing garbage
  detail::write_file_bytes(path, good + "zz");
  EXPECT_THROW(load_vqa_head(path, ModelKind::VqaHead), DataError);

  // wrong magic
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  detail::write_file_bytes(path, bad_magic);
  EXPECT_THROW(load_vqa_head(path, ModelKind::VqaHead), DataError);

  // unsupported version
  std::string bad_version = good;
  bad_version[4] = 9;
  detail::write_file_bytes(path, bad_version);
  try {
    load_vqa_head(path, ModelKind::VqaHead);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  EXPECT_THROW(load_vqa_head(tmp.path("missing.mmck"), ModelKind::VqaHead), IoError);
}

TEST(Checkpoint, RejectsInternallyInconsistentPayload) {
  const TempDir tmp;
  const std::string path = tmp.path("h.mmck");
  save_vqa_head(path, sample_head(23), ModelKind::VqaHead, sample_meta());
  std::string bytes = detail::read_file_bytes(path);

  // the config echo sits right after two u32s and two u64s; flip the stored
  // input_dim that follows it and the layer dims no longer match
  const std::size_t echo_len_off = 4 + 4 + 4 + 8 + 8;
  const std::size_t echo_len = static_cast<std::size_t>(
      static_cast<unsigned char>(bytes[echo_len_off]));
  const std::size_t input_dim_off = echo_len_off + 8 + echo_len;
  bytes[input_dim_off] = 77;
  detail::write_file_bytes(path, bytes);
  EXPECT_THROW(load_vqa_head(path, ModelKind::VqaHead), DataError);
}

}  // namespace
}  // namespace vqarank
