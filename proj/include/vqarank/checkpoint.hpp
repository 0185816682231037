#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "vqarank/errors.hpp"
#include "vqarank/feature_file.hpp"
#include "vqarank/grounding.hpp"
#include "vqarank/layers.hpp"
#include "vqarank/ranking.hpp"
#include "vqarank/vqa_head.hpp"

namespace vqarank {

// Model snapshot container:
//   "MMCK" | u32 version=1 | u32 kind | u64 iteration | u64 seed
//   | config echo (length-prefixed string) | kind-specific parameter blocks
// Parameters are stored as 64-bit floats, so save -> load -> save is
// byte-identical and loaded models score bit-identically.
enum class ModelKind : std::uint32_t {
  VqaHead = 1,
  VqaCaptionHead = 2,
  Agnostic = 3,
  ScoreFusion = 4,
  RepFusion = 5,
};

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::VqaHead: return "vqa_head";
    case ModelKind::VqaCaptionHead: return "vqa_caption_head";
    case ModelKind::Agnostic: return "agnostic";
    case ModelKind::ScoreFusion: return "score_fusion";
    case ModelKind::RepFusion: return "rep_fusion";
    default: return "unknown";
  }
}

struct CheckpointMeta {
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  std::string config_echo;  // free-form provenance, not parsed on load
};

namespace detail {

struct ByteReader {
  const std::string& bytes;
  std::string ctx;
  std::size_t off = 0;

  void need(std::size_t n) const {
    if (off + n > bytes.size()) throw DataError(ctx + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    const std::uint32_t v = get_u32(bytes, off);
    off += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    const std::uint64_t v = get_u64(bytes, off);
    off += 8;
    return v;
  }
  double f64() {
    need(8);
    const double v = get_f64(bytes, off);
    off += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(static_cast<unsigned char>(bytes[off++]));
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(static_cast<std::size_t>(n));
    std::string s = bytes.substr(off, static_cast<std::size_t>(n));
    off += static_cast<std::size_t>(n);
    return s;
  }
  void finish() const {
    if (off != bytes.size()) throw DataError(ctx + ": trailing bytes after checkpoint payload");
  }
};

inline void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

inline void put_layer(std::string& out, const LinearLayer& l) {
  out.push_back(l.has_bias ? 1 : 0);
  put_u64(out, l.out_dim());
  put_u64(out, l.in_dim());
  for (double v : l.W.data) put_f64(out, v);
  if (l.has_bias)
    for (double v : l.b.data) put_f64(out, v);
}

inline LinearLayer read_layer(ByteReader& r, const char* name) {
  const bool has_bias = r.u8() != 0;
  const std::uint64_t out_dim = r.u64();
  const std::uint64_t in_dim = r.u64();
  if (out_dim == 0 || in_dim == 0)
    throw DataError(r.ctx + ": layer " + name + " has zero dimension");
  LinearLayer l(static_cast<std::size_t>(out_dim), static_cast<std::size_t>(in_dim), has_bias);
  for (double& v : l.W.data) v = r.f64();
  if (has_bias)
    for (double& v : l.b.data) v = r.f64();
  return l;
}

inline void require_layer_dims(const LinearLayer& l, std::size_t out_dim, std::size_t in_dim,
                               const std::string& ctx, const char* name) {
  if (l.out_dim() != out_dim || l.in_dim() != in_dim)
    throw DataError(ctx + ": layer " + name + " is " + shape_str(l.W) + ", config implies " +
                    std::to_string(out_dim) + "x" + std::to_string(in_dim));
}

inline void put_projection(std::string& out, const GroundingProjection& p) {
  put_f64(out, p.keep_prob);
  put_str(out, p.site);
  put_layer(out, p.layer);
}

inline GroundingProjection read_projection(ByteReader& r, const char* name) {
  GroundingProjection p;
  p.keep_prob = r.f64();
  require_keep_prob(p.keep_prob);
  p.site = r.str();
  p.layer = read_layer(r, name);
  return p;
}

inline std::string checkpoint_header(ModelKind kind, const CheckpointMeta& meta) {
  std::string out = "MMCK";
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(kind));
  put_u64(out, meta.iteration);
  put_u64(out, meta.seed);
  put_str(out, meta.config_echo);
  return out;
}

// validates magic/version, checks the kind tag, returns meta with the reader
// positioned at the payload
inline CheckpointMeta open_checkpoint(ByteReader& r, ModelKind expected) {
  r.need(4);
  if (r.bytes.compare(0, 4, "MMCK") != 0) throw DataError(r.ctx + ": bad checkpoint magic");
  r.off = 4;
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw DataError(r.ctx + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t kind = r.u32();
  if (kind != static_cast<std::uint32_t>(expected))
    throw DataError(r.ctx + ": holds a " + model_kind_name(static_cast<ModelKind>(kind)) +
                    " model, expected " + model_kind_name(expected));
  CheckpointMeta meta;
  meta.iteration = r.u64();
  meta.seed = r.u64();
  meta.config_echo = r.str();
  return meta;
}

}  // namespace detail

// ---- answer heads (image-input and caption-input share the layout) ----

inline void save_vqa_head(const std::string& path, const VqaHead& head, ModelKind kind,
                          const CheckpointMeta& meta) {
  if (kind != ModelKind::VqaHead && kind != ModelKind::VqaCaptionHead)
    throw ParamError("save_vqa_head: kind must be an answer head");
  std::string out = detail::checkpoint_header(kind, meta);
  detail::put_u64(out, head.cfg.input_dim);
  detail::put_u64(out, head.cfg.question_dim);
  detail::put_u64(out, head.cfg.hidden_dim);
  detail::put_u64(out, head.cfg.answer_vocab);
  detail::put_f64(out, head.cfg.hidden_keep_prob);
  detail::put_str(out, head.site_prefix);
  detail::put_layer(out, head.proj_input);
  detail::put_layer(out, head.proj_question);
  detail::put_layer(out, head.answer_layer);
  detail::write_file_bytes(path, out);
}

inline std::pair<VqaHead, CheckpointMeta> load_vqa_head(const std::string& path, ModelKind kind) {
  if (kind != ModelKind::VqaHead && kind != ModelKind::VqaCaptionHead)
    throw ParamError("load_vqa_head: kind must be an answer head");
  const std::string bytes = detail::read_file_bytes(path);
  detail::ByteReader r{bytes, path};
  const CheckpointMeta meta = detail::open_checkpoint(r, kind);
  VqaHead head;
  head.cfg.input_dim = static_cast<std::size_t>(r.u64());
  head.cfg.question_dim = static_cast<std::size_t>(r.u64());
  head.cfg.hidden_dim = static_cast<std::size_t>(r.u64());
  head.cfg.answer_vocab = static_cast<std::size_t>(r.u64());
  head.cfg.hidden_keep_prob = r.f64();
  head.cfg.validate();
  head.site_prefix = r.str();
  head.proj_input = detail::read_layer(r, "proj_input");
  head.proj_question = detail::read_layer(r, "proj_question");
  head.answer_layer = detail::read_layer(r, "answer_layer");
  r.finish();
  detail::require_layer_dims(head.proj_input, head.cfg.hidden_dim, head.cfg.input_dim, path,
                             "proj_input");
  detail::require_layer_dims(head.proj_question, head.cfg.hidden_dim, head.cfg.question_dim, path,
                             "proj_question");
  detail::require_layer_dims(head.answer_layer, head.cfg.answer_vocab, head.cfg.hidden_dim, path,
                             "answer_layer");
  return {std::move(head), meta};
}

// ---- baseline embedder ----

inline void save_agnostic(const std::string& path, const AgnosticEmbedder& emb,
                          const CheckpointMeta& meta) {
  std::string out = detail::checkpoint_header(ModelKind::Agnostic, meta);
  detail::put_layer(out, emb.proj_image);
  detail::write_file_bytes(path, out);
}

inline std::pair<AgnosticEmbedder, CheckpointMeta> load_agnostic(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::ByteReader r{bytes, path};
  const CheckpointMeta meta = detail::open_checkpoint(r, ModelKind::Agnostic);
  AgnosticEmbedder emb;
  emb.proj_image = detail::read_layer(r, "proj_image");
  r.finish();
  if (emb.proj_image.has_bias)
    throw DataError(path + ": baseline image projection must be bias-free");
  return {std::move(emb), meta};
}

// ---- score-level fusion ----

inline void save_score_fusion(const std::string& path, const ScoreFusionModel& model,
                              const CheckpointMeta& meta) {
  std::string out = detail::checkpoint_header(ModelKind::ScoreFusion, meta);
  detail::put_f64(out, model.alpha);
  detail::put_f64(out, model.beta);
  detail::put_projection(out, model.proj_v_image);
  detail::put_projection(out, model.proj_v_caption);
  detail::write_file_bytes(path, out);
}

inline std::pair<ScoreFusionModel, CheckpointMeta> load_score_fusion(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::ByteReader r{bytes, path};
  const CheckpointMeta meta = detail::open_checkpoint(r, ModelKind::ScoreFusion);
  ScoreFusionModel model;
  model.alpha = r.f64();
  model.beta = r.f64();
  model.proj_v_image = detail::read_projection(r, "proj_v_image");
  model.proj_v_caption = detail::read_projection(r, "proj_v_caption");
  r.finish();
  return {std::move(model), meta};
}

// ---- representation-level fusion ----

inline void save_rep_fusion(const std::string& path, const RepFusionSystem& system,
                            const CheckpointMeta& meta) {
  std::string out = detail::checkpoint_header(ModelKind::RepFusion, meta);
  detail::put_u32(out, static_cast<std::uint32_t>(system.fusion.mode));
  detail::put_f64(out, system.fusion.rep_keep_prob);
  detail::put_layer(out, system.fusion.t_image);
  detail::put_layer(out, system.fusion.v_image);
  detail::put_layer(out, system.fusion.t_caption);
  detail::put_layer(out, system.fusion.v_caption);
  detail::put_projection(out, system.proj_v_image);
  detail::put_projection(out, system.proj_v_caption);
  detail::write_file_bytes(path, out);
}

inline std::pair<RepFusionSystem, CheckpointMeta> load_rep_fusion(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::ByteReader r{bytes, path};
  const CheckpointMeta meta = detail::open_checkpoint(r, ModelKind::RepFusion);
  RepFusionSystem system;
  const std::uint32_t mode = r.u32();
  if (mode > static_cast<std::uint32_t>(FusionMode::AgnosticDeeper))
    throw DataError(path + ": unknown fusion mode tag " + std::to_string(mode));
  system.fusion.mode = static_cast<FusionMode>(mode);
  system.fusion.rep_keep_prob = r.f64();
  require_keep_prob(system.fusion.rep_keep_prob);
  system.fusion.t_image = detail::read_layer(r, "t_image");
  system.fusion.v_image = detail::read_layer(r, "v_image");
  system.fusion.t_caption = detail::read_layer(r, "t_caption");
  system.fusion.v_caption = detail::read_layer(r, "v_caption");
  system.proj_v_image = detail::read_projection(r, "proj_v_image");
  system.proj_v_caption = detail::read_projection(r, "proj_v_caption");
  r.finish();
  return {std::move(system), meta};
}

}  // namespace vqarank
