// Command-line pipeline driver: synthetic data generation, answer-head and
// ranker training, grounded-vector extraction, evaluation, and informative
// question selection. Every command is seeded and writes a reproducibility
// record next to its primary output, so reruns with the same flags produce
// byte-identical artifacts.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vqarank/vqarank.hpp"

namespace vq = vqarank;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw vq::IoError("cannot open for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw vq::IoError("short write: " + path);
}

std::string parent_dir(const std::string& path) {
  const std::filesystem::path p(path);
  const std::string dir = p.parent_path().string();
  return dir.empty() ? std::string(".") : dir;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw vq::IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string hex_u64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Reproducibility record: resolved options + library version, no clocks.
void write_run_record(const std::string& primary_output, const std::string& command,
                      json options) {
  json record;
  record["command"] = command;
  record["library_version"] = vq::kVersion;
  record["options"] = std::move(options);
  write_text(primary_output + ".run.json", record.dump(2) + "\n");
}

vq::Dataset load_data(const std::string& data_dir) {
  return vq::load_dataset(data_dir + "/manifest.tsv");
}

std::size_t find_image_row(const vq::Dataset& d, const std::string& id) {
  for (std::size_t i = 0; i < d.n_images(); ++i)
    if (d.image_ids[i] == id) return i;
  throw vq::DataError("no image with id '" + id + "'");
}

std::string head_trace_csv(const vq::TrainTrace& trace) {
  std::string out = "iteration,loss\n";
  char buf[64];
  for (const auto& [it, loss] : trace.losses) {
    std::snprintf(buf, sizeof(buf), "%llu,%.6f\n", static_cast<unsigned long long>(it), loss);
    out += buf;
  }
  return out;
}

// ---- grounding artifacts ----
//
// extract-grounding writes four files into its output directory:
//   bank_questions.mmft  question feature rows, bank order
//   bank.tsv             qa ids, answer indices, source image ids
//   u_images.mmft        grounded log-prob table, one row per dataset image
//   u_captions.mmft      same for captions (answered from bag-of-words)
//   grounding.json       bank content hash + extraction parameters
// Consumers rebuild the bank, recompute its content hash, and refuse stale
// caches whose hash no longer matches the u tables they sit next to.

struct GroundingArtifacts {
  vq::QABank bank;
  vq::Matrix u_images;
  vq::Matrix u_captions;
  double prob_floor = 1e-12;
};

void save_grounding(const std::string& dir, const GroundingArtifacts& g, json extra) {
  ensure_dir(dir);
  vq::write_features(dir + "/bank_questions.mmft", g.bank.questions);
  std::string tsv = "vqarank-bank\t1\n";
  for (std::size_t i = 0; i < g.bank.size(); ++i)
    tsv += g.bank.qa_ids[i] + "\t" + std::to_string(g.bank.answers[i]) + "\t" +
           g.bank.image_ids[i] + "\n";
  write_text(dir + "/bank.tsv", tsv);
  vq::write_features(dir + "/u_images.mmft", g.u_images);
  vq::write_features(dir + "/u_captions.mmft", g.u_captions);

  extra["bank_hash"] = hex_u64(g.bank.content_hash());
  extra["prob_floor"] = g.prob_floor;
  extra["n_pairs"] = g.bank.size();
  write_text(dir + "/grounding.json", extra.dump(2) + "\n");
}

GroundingArtifacts load_grounding(const std::string& dir) {
  GroundingArtifacts g;
  g.bank.questions = vq::read_features(dir + "/bank_questions.mmft");

  std::ifstream in(dir + "/bank.tsv");
  if (!in) throw vq::IoError("cannot open for reading: " + dir + "/bank.tsv");
  std::string line;
  if (!std::getline(in, line) || line != "vqarank-bank\t1")
    throw vq::DataError(dir + "/bank.tsv: bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id, answer, image;
    if (!std::getline(fields, id, '\t') || !std::getline(fields, answer, '\t') ||
        !std::getline(fields, image, '\t'))
      throw vq::DataError(dir + "/bank.tsv: malformed line '" + line + "'");
    g.bank.qa_ids.push_back(id);
    g.bank.answers.push_back(std::stoul(answer));
    g.bank.image_ids.push_back(image);
  }
  if (g.bank.questions.rows != g.bank.size())
    throw vq::DataError(dir + ": bank.tsv has " + std::to_string(g.bank.size()) +
                        " pairs but bank_questions.mmft has " +
                        std::to_string(g.bank.questions.rows) + " rows");

  const json meta = json::parse(std::ifstream(dir + "/grounding.json"), nullptr, true);
  const std::string recorded = meta.at("bank_hash").get<std::string>();
  const std::string actual = hex_u64(g.bank.content_hash());
  if (recorded != actual)
    throw vq::DataError(dir + ": stale grounded-vector cache, bank hash " + actual +
                        " does not match recorded " + recorded);
  g.prob_floor = meta.at("prob_floor").get<double>();
  g.u_images = vq::read_features(dir + "/u_images.mmft");
  g.u_captions = vq::read_features(dir + "/u_captions.mmft");
  return g;
}

// ---- gen-synth ----

struct GenSynthOpts {
  std::string out;
  vq::SyntheticWorldConfig world;
};

void run_gen_synth(const GenSynthOpts& o) {
  o.world.validate();
  const vq::SyntheticWorld w = vq::generate_synthetic_world(o.world);
  ensure_dir(o.out);
  const std::string manifest = vq::write_dataset(o.out, w.data);
  std::cout << "wrote " << manifest << "\n"
            << "images=" << w.data.n_images() << " captions=" << w.data.n_captions()
            << " qa=" << w.data.qa.size() << " answer_vocab=" << w.data.answer_vocab << "\n";

  json opts;
  opts["out"] = o.out;
  opts["n_facts"] = o.world.n_facts;
  opts["train_scenes"] = o.world.train_scenes;
  opts["val_scenes"] = o.world.val_scenes;
  opts["test_scenes"] = o.world.test_scenes;
  opts["captions_per_image"] = o.world.captions_per_image;
  opts["caption_omission_rate"] = o.world.caption_omission_rate;
  opts["noise_sigma"] = o.world.noise_sigma;
  opts["image_dim"] = o.world.image_dim;
  opts["caption_dim"] = o.world.caption_dim;
  opts["question_dim"] = o.world.question_dim;
  opts["answer_vocab"] = o.world.resolved_vocab();
  opts["seed"] = o.world.seed;
  write_run_record(o.out + "/gen-synth", "gen-synth", opts);
}

// ---- train-vqa / train-vqacap ----

struct TrainHeadOpts {
  std::string data;
  std::string out;
  std::size_t hidden = 64;
  double keep = 1.0;
  std::size_t iterations = 2000;
  std::size_t batch = 100;
  double lr = 1e-4;
  std::size_t log_every = 100;
  std::uint64_t seed = 1;
  bool caption_side = false;
};

double head_accuracy(const vq::VqaHead& head, const vq::Matrix& inputs,
                     const vq::Matrix& questions, const std::vector<vq::VqaExample>& examples) {
  if (examples.empty()) return 0.0;
  std::vector<std::size_t> input_rows, question_rows;
  for (const vq::VqaExample& e : examples) {
    input_rows.push_back(e.input_row);
    question_rows.push_back(e.question_row);
  }
  vq::ForwardMode infer = vq::ForwardMode::infer();
  const vq::VqaForwardResult out = head.forward(vq::rows_as_columns(inputs, input_rows),
                                                vq::rows_as_columns(questions, question_rows),
                                                infer);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < examples.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < out.log_probs.rows; ++a)
      if (out.log_probs(a, b) > out.log_probs(best, b)) best = a;
    if (best == examples[b].answer) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

void run_train_head(const TrainHeadOpts& o) {
  const vq::Dataset d = load_data(o.data);
  const vq::Matrix& inputs = o.caption_side ? d.caption_bow : d.images;
  const auto examples = o.caption_side ? vq::caption_qa_examples(d, vq::Split::Train)
                                       : vq::image_qa_examples(d, vq::Split::Train);
  const auto val_examples = o.caption_side ? vq::caption_qa_examples(d, vq::Split::Val)
                                           : vq::image_qa_examples(d, vq::Split::Val);

  vq::VqaHeadConfig cfg;
  cfg.input_dim = inputs.cols;
  cfg.question_dim = d.questions.cols;
  cfg.hidden_dim = o.hidden;
  cfg.answer_vocab = d.answer_vocab;
  cfg.hidden_keep_prob = o.keep;
  vq::Rng rng(o.seed);
  vq::VqaHead head(cfg, o.caption_side ? "vqacap" : "vqa", rng);

  vq::HeadTrainConfig tc;
  tc.opt.learning_rate = o.lr;
  tc.batch_size = o.batch;
  tc.iterations = o.iterations;
  tc.log_every = o.log_every;
  tc.seed = o.seed;
  const vq::TrainTrace trace = vq::train_vqa_head(head, inputs, d.questions, examples, tc);

  const char* command = o.caption_side ? "train-vqacap" : "train-vqa";
  const vq::ModelKind kind =
      o.caption_side ? vq::ModelKind::VqaCaptionHead : vq::ModelKind::VqaHead;
  vq::CheckpointMeta meta;
  meta.iteration = o.iterations;
  meta.seed = o.seed;
  meta.config_echo = std::string(command) + " hidden=" + std::to_string(o.hidden) +
                     " iterations=" + std::to_string(o.iterations) +
                     " batch=" + std::to_string(o.batch) + " lr=" + std::to_string(o.lr);
  ensure_dir(parent_dir(o.out));
  vq::save_vqa_head(o.out, head, kind, meta);
  write_text(o.out + ".trace.csv", head_trace_csv(trace));

  const double final_loss = trace.losses.empty() ? 0.0 : trace.losses.back().second;
  std::cout << "wrote " << o.out << "\n";
  std::printf("final_train_loss=%.6f val_accuracy=%.4f\n", final_loss,
              head_accuracy(head, inputs, d.questions, val_examples));

  json opts;
  opts["data"] = o.data;
  opts["out"] = o.out;
  opts["hidden"] = o.hidden;
  opts["keep"] = o.keep;
  opts["iterations"] = o.iterations;
  opts["batch"] = o.batch;
  opts["lr"] = o.lr;
  opts["log_every"] = o.log_every;
  opts["seed"] = o.seed;
  write_run_record(o.out, command, opts);
}

// ---- extract-grounding ----

struct ExtractOpts {
  std::string data;
  std::string image_head;
  std::string caption_head;
  std::string out;
  std::size_t per_image = 3;
  std::size_t num_images = 0;  // 0: every train image
  double prob_floor = 1e-12;
  std::uint64_t seed = 1;
};

void run_extract(const ExtractOpts& o) {
  const vq::Dataset d = load_data(o.data);
  const auto [img_head, img_meta] = vq::load_vqa_head(o.image_head, vq::ModelKind::VqaHead);
  const auto [cap_head, cap_meta] =
      vq::load_vqa_head(o.caption_head, vq::ModelKind::VqaCaptionHead);
  (void)img_meta;
  (void)cap_meta;

  std::size_t num_images = o.num_images;
  if (num_images == 0)
    for (vq::Split s : d.image_split)
      if (s == vq::Split::Train) ++num_images;

  GroundingArtifacts g;
  g.bank = vq::build_qa_bank(d, o.per_image, num_images, o.seed);
  g.prob_floor = o.prob_floor;
  g.u_images = vq::compute_u_table(img_head, g.bank, d.images, o.prob_floor);
  g.u_captions = vq::compute_u_table(cap_head, g.bank, d.caption_bow, o.prob_floor);

  json extra;
  extra["data"] = o.data;
  extra["image_head"] = o.image_head;
  extra["caption_head"] = o.caption_head;
  extra["per_image"] = o.per_image;
  extra["num_images"] = num_images;
  extra["seed"] = o.seed;
  save_grounding(o.out, g, extra);

  std::cout << "wrote " << o.out << "/grounding.json\n"
            << "bank_pairs=" << g.bank.size() << " bank_hash=" << hex_u64(g.bank.content_hash())
            << "\n";

  json opts = extra;
  opts["out"] = o.out;
  opts["prob_floor"] = o.prob_floor;
  write_run_record(o.out + "/extract-grounding", "extract-grounding", opts);
}

// ---- train-ranker ----

struct TrainRankerOpts {
  std::string data;
  std::string mode;  // agnostic | score | rep
  std::string agnostic;
  std::string grounding;
  std::string fusion_mode = "full";
  std::string out;
  std::size_t v_dim = 64;
  std::size_t rep_dim = 64;
  double keep = 0.5;
  std::size_t iterations = 2000;
  std::size_t batch_k = 100;
  double lr = 0.0;  // 0: per-mode default
  std::size_t log_every = 100;
  std::size_t eval_every = 500;
  std::uint64_t seed = 1;
};

json ranker_record(const TrainRankerOpts& o, double lr) {
  json opts;
  opts["data"] = o.data;
  opts["mode"] = o.mode;
  opts["agnostic"] = o.agnostic;
  opts["grounding"] = o.grounding;
  opts["fusion_mode"] = o.fusion_mode;
  opts["out"] = o.out;
  opts["v_dim"] = o.v_dim;
  opts["rep_dim"] = o.rep_dim;
  opts["keep"] = o.keep;
  opts["iterations"] = o.iterations;
  opts["batch_k"] = o.batch_k;
  opts["lr"] = lr;
  opts["log_every"] = o.log_every;
  opts["eval_every"] = o.eval_every;
  opts["seed"] = o.seed;
  return opts;
}

void run_train_ranker(const TrainRankerOpts& o) {
  const vq::Dataset d = load_data(o.data);
  vq::RankTrainConfig cfg;
  // reference recipe: 1e-5 for score-level ranking, 1e-4 elsewhere
  cfg.opt.learning_rate = o.lr > 0.0 ? o.lr : (o.mode == "score" ? 1e-5 : 1e-4);
  cfg.batch_k = o.batch_k;
  cfg.iterations = o.iterations;
  cfg.log_every = o.log_every;
  cfg.eval_every = o.eval_every;
  cfg.seed = o.seed;

  vq::CheckpointMeta meta;
  meta.iteration = o.iterations;
  meta.seed = o.seed;
  meta.config_echo = "train-ranker mode=" + o.mode + " iterations=" +
                     std::to_string(o.iterations) + " batch_k=" + std::to_string(o.batch_k) +
                     " lr=" + std::to_string(cfg.opt.learning_rate);
  ensure_dir(parent_dir(o.out));

  if (o.mode == "agnostic") {
    const vq::AgnosticTrainResult r = vq::train_agnostic(d, cfg);
    vq::save_agnostic(o.out, r.model, meta);
    write_text(o.out + ".trace.csv", vq::trace_csv(r.trace));
    const double final_loss = r.trace.points.empty() ? 0.0 : r.trace.points.back().loss;
    std::cout << "wrote " << o.out << "\n";
    std::printf("final_train_loss=%.6f\n", final_loss);
  } else if (o.mode == "score") {
    const auto [emb, emb_meta] = vq::load_agnostic(o.agnostic);
    (void)emb_meta;
    const GroundingArtifacts g = load_grounding(o.grounding);
    const vq::ScoreFusionTrainResult r =
        vq::train_score_fusion(d, emb, g.u_images, g.u_captions, o.v_dim, cfg, o.keep);
    vq::save_score_fusion(o.out, r.model, meta);
    write_text(o.out + ".trace.csv", vq::trace_csv(r.trace));
    std::cout << "wrote " << o.out << "\n";
    std::printf("alpha=%.2f beta=%.2f val_mean_r1=%.4f\n", r.model.alpha, r.model.beta,
                r.val_mean_r1);
  } else if (o.mode == "rep") {
    const auto [emb, emb_meta] = vq::load_agnostic(o.agnostic);
    (void)emb_meta;
    const vq::FusionMode fm = vq::fusion_mode_from_name(o.fusion_mode);
    vq::Matrix u_images(0, 0), u_captions(0, 0);
    if (fm != vq::FusionMode::AgnosticDeeper) {
      const GroundingArtifacts g = load_grounding(o.grounding);
      u_images = g.u_images;
      u_captions = g.u_captions;
    }
    const vq::RepFusionTrainResult r = vq::train_rep_fusion(
        d, emb, u_images, u_captions, {o.rep_dim, o.v_dim, o.keep}, fm, cfg);
    vq::save_rep_fusion(o.out, r.system, meta);
    write_text(o.out + ".trace.csv", vq::trace_csv(r.trace));
    std::cout << "wrote " << o.out << "\n";
    std::printf("best_iteration=%llu best_val_r1_sum=%.4f\n",
                static_cast<unsigned long long>(r.best_iteration), r.best_val_r1_sum);
  } else {
    throw vq::ParamError("unknown ranker mode '" + o.mode +
                         "', expected agnostic, score, or rep");
  }
  write_run_record(o.out, "train-ranker", ranker_record(o, cfg.opt.learning_rate));
}

// ---- fit-alphabeta ----

struct FitAlphaBetaOpts {
  std::string data;
  std::string agnostic;
  std::string model;
  std::string grounding;
  std::string out;
  std::uint64_t seed = 1;
};

void run_fit_alphabeta(const FitAlphaBetaOpts& o) {
  const vq::Dataset d = load_data(o.data);
  const auto [emb, emb_meta] = vq::load_agnostic(o.agnostic);
  auto [model, model_meta] = vq::load_score_fusion(o.model);
  (void)emb_meta;
  const GroundingArtifacts g = load_grounding(o.grounding);

  const vq::EvalSplit val = vq::make_split(d, vq::Split::Val);
  if (val.n_images() == 0) throw vq::DataError("fit-alphabeta: empty validation split");
  const vq::ScoreMatrix s_t = vq::score_matrix_agnostic(emb, d, val);
  vq::ScoreFusionModel grounded_only = model;
  grounded_only.alpha = 0.0;
  grounded_only.beta = 1.0;
  const vq::ScoreMatrix s_v = vq::score_matrix_score_fusion(
      emb, grounded_only, d, val,
      vq::transpose(vq::rows_as_columns(g.u_images, val.image_rows)),
      vq::transpose(vq::rows_as_columns(g.u_captions, val.caption_rows)));
  const vq::AlphaBetaFit fit = vq::fit_alpha_beta(s_t, s_v);
  model.alpha = fit.alpha;
  model.beta = fit.beta;

  model_meta.config_echo = "fit-alphabeta on " + o.model;
  ensure_dir(parent_dir(o.out));
  vq::save_score_fusion(o.out, model, model_meta);
  std::cout << "wrote " << o.out << "\n";
  std::printf("alpha=%.2f beta=%.2f val_mean_r1=%.4f\n", fit.alpha, fit.beta, fit.mean_r1);

  json opts;
  opts["data"] = o.data;
  opts["agnostic"] = o.agnostic;
  opts["model"] = o.model;
  opts["grounding"] = o.grounding;
  opts["out"] = o.out;
  opts["seed"] = o.seed;
  write_run_record(o.out, "fit-alphabeta", opts);
}

// ---- evaluate ----

struct EvaluateOpts {
  std::string data;
  std::string split = "test";
  std::string model_kind;  // agnostic | score | rep
  std::string model;
  std::string agnostic;
  std::string grounding;
  std::string out;
  std::uint64_t seed = 1;
};

vq::ScoreMatrix build_score_matrix(const EvaluateOpts& o, const vq::Dataset& d,
                                   const vq::EvalSplit& split) {
  if (o.model_kind == "agnostic") {
    const auto [emb, meta] = vq::load_agnostic(o.model);
    (void)meta;
    return vq::score_matrix_agnostic(emb, d, split);
  }
  const auto [emb, emb_meta] = vq::load_agnostic(o.agnostic);
  (void)emb_meta;
  if (o.model_kind == "score") {
    const auto [model, meta] = vq::load_score_fusion(o.model);
    (void)meta;
    const GroundingArtifacts g = load_grounding(o.grounding);
    return vq::score_matrix_score_fusion(
        emb, model, d, split, vq::transpose(vq::rows_as_columns(g.u_images, split.image_rows)),
        vq::transpose(vq::rows_as_columns(g.u_captions, split.caption_rows)));
  }
  if (o.model_kind == "rep") {
    const auto [system, meta] = vq::load_rep_fusion(o.model);
    (void)meta;
    vq::Matrix u_i(0, 0), u_c(0, 0);
    if (system.fusion.uses_v_image() || system.fusion.uses_v_caption()) {
      const GroundingArtifacts g = load_grounding(o.grounding);
      if (system.fusion.uses_v_image())
        u_i = vq::transpose(vq::rows_as_columns(g.u_images, split.image_rows));
      if (system.fusion.uses_v_caption())
        u_c = vq::transpose(vq::rows_as_columns(g.u_captions, split.caption_rows));
    }
    return vq::score_matrix_rep_fusion(emb, system, d, split, u_i, u_c);
  }
  throw vq::ParamError("unknown model kind '" + o.model_kind +
                       "', expected agnostic, score, or rep");
}

void run_evaluate(const EvaluateOpts& o) {
  const vq::Dataset d = load_data(o.data);
  const vq::EvalSplit split = vq::make_split(d, vq::split_from_name(o.split));
  if (split.n_images() == 0) throw vq::DataError("evaluate: split '" + o.split + "' is empty");
  const vq::ScoreMatrix sm = build_score_matrix(o, d, split);
  const vq::RetrievalReport report = vq::evaluate(sm);

  const std::string table = vq::format_report(report);
  std::cout << table;
  ensure_dir(parent_dir(o.out));
  write_text(o.out, table);
  write_text(o.out + ".kv", vq::report_kv(report));
  std::cout << "wrote " << o.out << "\n";

  json opts;
  opts["data"] = o.data;
  opts["split"] = o.split;
  opts["model_kind"] = o.model_kind;
  opts["model"] = o.model;
  opts["agnostic"] = o.agnostic;
  opts["grounding"] = o.grounding;
  opts["out"] = o.out;
  opts["seed"] = o.seed;
  write_run_record(o.out, "evaluate", opts);
}

// ---- select-qa ----

struct SelectQaOpts {
  std::string data;
  std::string grounding;
  std::string model_kind;  // score | rep
  std::string model;
  std::string agnostic;
  std::string image_head;
  std::string image_id;  // default: first image of the split
  std::string split = "test";
  std::string out;
  double head_keep = 0.5;
  std::size_t n_samples = 5000;
  std::uint64_t seed = 1;
};

void run_select_qa(const SelectQaOpts& o) {
  if (!(o.head_keep > 0.0 && o.head_keep < 1.0))
    throw vq::ParamError("--head-keep must be in (0, 1): parameter sampling needs a "
                         "stochastic dropout site");

  const vq::Dataset d = load_data(o.data);
  const GroundingArtifacts g = load_grounding(o.grounding);
  auto [head, head_meta] = vq::load_vqa_head(o.image_head, vq::ModelKind::VqaHead);
  (void)head_meta;
  head.cfg.hidden_keep_prob = o.head_keep;  // sampling switch, weights untouched

  const vq::EvalSplit split = vq::make_split(d, vq::split_from_name(o.split));
  if (split.n_captions() < 2)
    throw vq::DataError("select-qa: split '" + o.split + "' has fewer than 2 captions");
  const std::size_t image_row =
      o.image_id.empty() ? split.image_rows.front() : find_image_row(d, o.image_id);

  const vq::Matrix x_image = vq::row_as_column(d.images, image_row);
  const vq::Matrix u_c_cols = vq::rows_as_columns(g.u_captions, split.caption_rows);
  const std::size_t k_count = split.n_captions();
  vq::ForwardMode infer = vq::ForwardMode::infer();

  // caption-side inputs are deterministic point predictions; only the image
  // side resamples per dropout draw
  vq::ThetaSnapshotFn snapshot;
  const auto [emb, emb_meta] = vq::load_agnostic(o.agnostic);
  (void)emb_meta;
  const vq::Matrix t_image = emb.embed_images(x_image);
  const vq::Matrix t_captions =
      emb.embed_captions(vq::rows_as_columns(d.captions, split.caption_rows));
  if (o.model_kind == "score") {
    const auto [model, meta] = vq::load_score_fusion(o.model);
    (void)meta;
    const vq::Matrix s_t = vq::matmul(vq::transpose(t_image), t_captions);
    const vq::Matrix v_captions = vq::project_v(model.proj_v_caption, u_c_cols, infer);
    snapshot = vq::make_score_fusion_snapshot_fn(head, g.bank, model, x_image, s_t, v_captions);
  } else if (o.model_kind == "rep") {
    const auto [system, meta] = vq::load_rep_fusion(o.model);
    (void)meta;
    const vq::Matrix caption_reps = system.caption_rep(t_captions, u_c_cols, infer);
    snapshot =
        vq::make_rep_fusion_snapshot_fn(head, g.bank, system, x_image, t_image, caption_reps);
  } else {
    throw vq::ParamError("unknown model kind '" + o.model_kind + "', expected score or rep");
  }

  vq::SelectQaConfig cfg;
  cfg.n_samples = o.n_samples;
  cfg.seed = o.seed;
  const std::vector<vq::RankedQa> ranked =
      vq::select_informative_qa(snapshot, g.bank.size(), k_count, cfg);

  std::string csv = "qa_id,answer,mi_nats\n";
  char buf[128];
  for (const vq::RankedQa& r : ranked) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.9f\n", g.bank.qa_ids[r.qa_index].c_str(),
                  g.bank.answers[r.qa_index], r.mi_nats);
    csv += buf;
  }
  ensure_dir(parent_dir(o.out));
  write_text(o.out, csv);

  std::cout << "image=" << d.image_ids[image_row] << " candidates=" << k_count
            << " bank_pairs=" << g.bank.size() << "\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(5, ranked.size()); ++i)
    std::printf("%zu. %s answer=%zu mi=%.6f\n", i + 1,
                g.bank.qa_ids[ranked[i].qa_index].c_str(), g.bank.answers[ranked[i].qa_index],
                ranked[i].mi_nats);
  std::cout << "wrote " << o.out << "\n";

  json opts;
  opts["data"] = o.data;
  opts["grounding"] = o.grounding;
  opts["model_kind"] = o.model_kind;
  opts["model"] = o.model;
  opts["agnostic"] = o.agnostic;
  opts["image_head"] = o.image_head;
  opts["image"] = d.image_ids[image_row];
  opts["split"] = o.split;
  opts["out"] = o.out;
  opts["head_keep"] = o.head_keep;
  opts["n_samples"] = o.n_samples;
  opts["seed"] = o.seed;
  write_run_record(o.out, "select-qa", opts);
}

// ---- gradcheck ----

struct GradCheckOpts {
  std::string out = "gradcheck_report.txt";
  std::size_t samples = 200;
  double tolerance = 1e-4;
  double h = 1e-5;
  std::uint64_t seed = 17;
};

// Finite-difference validation of every trainable architecture on a tiny
// self-generated world; dropout stays in inference mode so the objective is
// deterministic around the evaluation point.
int run_gradcheck(const GradCheckOpts& o) {
  vq::SyntheticWorldConfig wc;
  wc.n_facts = 6;
  wc.train_scenes = 30;
  wc.val_scenes = 8;
  wc.test_scenes = 8;
  wc.captions_per_image = 3;
  wc.image_dim = 12;
  wc.caption_dim = 6;
  wc.question_dim = 8;
  wc.seed = o.seed;
  const vq::SyntheticWorld w = vq::generate_synthetic_world(wc);
  const vq::Dataset& d = w.data;
  vq::Rng rng(vq::mix_seed(o.seed, 0x9c));

  vq::GradCheckConfig gc;
  gc.h = o.h;
  gc.samples_per_layer = o.samples;
  gc.tolerance = o.tolerance;
  gc.seed = o.seed;

  std::string report_text;
  bool all_passed = true;
  const auto record = [&](const std::string& name, const vq::GradCheckReport& r) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%-18s max_rel_error=%.3e worst=%s params=%zu %s\n",
                  name.c_str(), r.max_rel_error, r.worst_site.c_str(), r.params_checked,
                  r.passed ? "ok" : "FAIL");
    report_text += buf;
    std::cout << buf;
    all_passed = all_passed && r.passed;
  };

  const auto check_head = [&](const char* name, const vq::Matrix& inputs,
                              const std::vector<vq::VqaExample>& examples) {
    vq::VqaHeadConfig hc;
    hc.input_dim = inputs.cols;
    hc.question_dim = d.questions.cols;
    hc.hidden_dim = 10;
    hc.answer_vocab = d.answer_vocab;
    vq::VqaHead head(hc, "vqa", rng);
    std::vector<std::size_t> input_rows, question_rows, answers;
    for (std::size_t i = 0; i < std::min<std::size_t>(12, examples.size()); ++i) {
      input_rows.push_back(examples[i].input_row);
      question_rows.push_back(examples[i].question_row);
      answers.push_back(examples[i].answer);
    }
    const vq::Matrix x = vq::rows_as_columns(inputs, input_rows);
    const vq::Matrix xq = vq::rows_as_columns(d.questions, question_rows);
    const auto loss = [&] {
      vq::ForwardMode infer = vq::ForwardMode::infer();
      return vq::vqa_nll_step(head, x, xq, answers, infer);
    };
    record(name, vq::gradient_check(loss, head.layers(), gc));
  };
  check_head("vqa-head", d.images, vq::image_qa_examples(d, vq::Split::Train));
  check_head("vqa-caption-head", d.caption_bow, vq::caption_qa_examples(d, vq::Split::Train));

  // candidate set shared by the ranking objectives
  const auto train_images = vq::split_image_rows(d, vq::Split::Train);
  vq::Rng batch_rng(vq::mix_seed(o.seed, 0xba));
  const vq::RankingBatch batch = vq::sample_ranking_batch(d, train_images, 8, batch_rng);
  const vq::Matrix x_i = vq::rows_as_columns(d.images, batch.image_rows);
  const vq::Matrix x_c = vq::rows_as_columns(d.captions, batch.caption_rows);

  {
    vq::AgnosticEmbedder emb(d.captions.cols, d.images.cols, rng);
    const auto loss = [&] { return vq::agnostic_loss_step(emb, x_i, x_c); };
    record("agnostic", vq::gradient_check(loss, {{"proj_image", &emb.proj_image}}, gc));
  }

  // grounded tables from freshly initialized heads are fine here: the check
  // is about gradients, not about trained answer quality
  vq::VqaHeadConfig hc;
  hc.input_dim = d.images.cols;
  hc.question_dim = d.questions.cols;
  hc.hidden_dim = 10;
  hc.answer_vocab = d.answer_vocab;
  const vq::VqaHead img_head(hc, "vqa", rng);
  hc.input_dim = d.caption_bow.cols;
  const vq::VqaHead cap_head(hc, "vqacap", rng);
  const vq::QABank bank = vq::build_qa_bank(d, 2, 8, o.seed);
  const vq::Matrix u_images = vq::compute_u_table(img_head, bank, d.images);
  const vq::Matrix u_captions = vq::compute_u_table(cap_head, bank, d.caption_bow);
  const vq::Matrix u_i = vq::rows_as_columns(u_images, batch.image_rows);
  const vq::Matrix u_c = vq::rows_as_columns(u_captions, batch.caption_rows);

  {
    vq::ScoreFusionModel model;
    model.proj_v_image = vq::GroundingProjection(7, bank.size(), "ground.v_image", rng);
    model.proj_v_caption = vq::GroundingProjection(7, bank.size(), "ground.v_caption", rng);
    const auto loss = [&] {
      vq::ForwardMode infer = vq::ForwardMode::infer();
      return vq::grounded_loss_step(model, u_i, u_c, infer);
    };
    record("score-fusion",
           vq::gradient_check(loss,
                              {{"proj_v_image", &model.proj_v_image.layer},
                               {"proj_v_caption", &model.proj_v_caption.layer}},
                              gc));
  }

  {
    vq::RepFusionSystem sys(9, d.captions.cols, 7, bank.size(), vq::FusionMode::Full, rng);
    vq::AgnosticEmbedder emb(d.captions.cols, d.images.cols, rng);
    const vq::Matrix t_i = emb.embed_images(x_i);
    const vq::Matrix t_c = emb.embed_captions(x_c);
    const auto loss = [&] {
      vq::ForwardMode infer = vq::ForwardMode::infer();
      return vq::rep_fusion_loss_step(sys, t_i, t_c, u_i, u_c, infer);
    };
    record("rep-fusion",
           vq::gradient_check(loss,
                              {{"t_image", &sys.fusion.t_image},
                               {"t_caption", &sys.fusion.t_caption},
                               {"v_image", &sys.fusion.v_image},
                               {"v_caption", &sys.fusion.v_caption},
                               {"proj_v_image", &sys.proj_v_image.layer},
                               {"proj_v_caption", &sys.proj_v_caption.layer}},
                              gc));
  }

  report_text += all_passed ? "all checks passed\n" : "FAILURES above\n";
  ensure_dir(parent_dir(o.out));
  write_text(o.out, report_text);
  std::cout << (all_passed ? "all checks passed\n" : "FAILURES above\n");

  json opts;
  opts["out"] = o.out;
  opts["samples"] = o.samples;
  opts["tolerance"] = o.tolerance;
  opts["h"] = o.h;
  opts["seed"] = o.seed;
  write_run_record(o.out, "gradcheck", opts);
  return all_passed ? 0 : 1;
}

void add_data_option(CLI::App* cmd, std::string& target) {
  cmd->add_option("--data", target, "dataset directory containing manifest.tsv")
      ->envname("VQARANK_DATA_DIR")
      ->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"image-caption ranking with answer-grounded features"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "read option defaults from a TOML file ([subcommand] sections); "
                 "command-line flags take precedence");
  int exit_code = 0;

  {
    auto o = std::make_shared<GenSynthOpts>();
    CLI::App* cmd = app.add_subcommand(
        "gen-synth", "generate a synthetic retrieval world (features + manifest)");
    cmd->add_option("--out", o->out, "output directory")->required();
    cmd->add_option("--n-facts", o->world.n_facts, "latent binary facts per scene");
    cmd->add_option("--train-scenes", o->world.train_scenes, "training scenes");
    cmd->add_option("--val-scenes", o->world.val_scenes, "validation scenes");
    cmd->add_option("--test-scenes", o->world.test_scenes, "test scenes");
    cmd->add_option("--captions-per-image", o->world.captions_per_image, "captions per scene");
    cmd->add_option("--omission-rate", o->world.caption_omission_rate,
                    "fraction of true facts each caption omits");
    cmd->add_option("--noise-sigma", o->world.noise_sigma, "feature noise");
    cmd->add_option("--image-dim", o->world.image_dim, "image feature width");
    cmd->add_option("--caption-dim", o->world.caption_dim, "caption feature width");
    cmd->add_option("--question-dim", o->world.question_dim, "question feature width");
    cmd->add_option("--answer-vocab", o->world.answer_vocab,
                    "answer vocabulary size (0: derived from facts)");
    cmd->add_option("--seed", o->world.seed, "world seed");
    cmd->callback([o] { run_gen_synth(*o); });
  }

  const auto add_head_cmd = [&](const char* name, const char* description, bool caption_side,
                                const char* default_out) {
    auto o = std::make_shared<TrainHeadOpts>();
    o->caption_side = caption_side;
    o->out = default_out;
    CLI::App* cmd = app.add_subcommand(name, description);
    add_data_option(cmd, o->data);
    cmd->add_option("--out", o->out, "checkpoint path");
    cmd->add_option("--hidden", o->hidden, "fused hidden width");
    cmd->add_option("--keep", o->keep, "hidden dropout keep probability");
    cmd->add_option("--iterations", o->iterations, "training iterations");
    cmd->add_option("--batch", o->batch, "examples per iteration");
    cmd->add_option("--lr", o->lr, "RMSProp learning rate");
    cmd->add_option("--log-every", o->log_every, "loss logging cadence");
    cmd->add_option("--seed", o->seed, "training seed");
    cmd->callback([o] { run_train_head(*o); });
  };
  add_head_cmd("train-vqa", "train the image answer head", false, "head_image.ckpt");
  add_head_cmd("train-vqacap", "train the caption (bag-of-words) answer head", true,
               "head_caption.ckpt");

  {
    auto o = std::make_shared<ExtractOpts>();
    CLI::App* cmd = app.add_subcommand(
        "extract-grounding",
        "build a question bank and cache grounded log-probability vectors");
    add_data_option(cmd, o->data);
    cmd->add_option("--image-head", o->image_head, "image answer head checkpoint")->required();
    cmd->add_option("--caption-head", o->caption_head, "caption answer head checkpoint")
        ->required();
    cmd->add_option("--out", o->out, "output directory")->required();
    cmd->add_option("--per-image", o->per_image, "bank pairs sampled per image");
    cmd->add_option("--num-images", o->num_images,
                    "train images contributing pairs (0: all)");
    cmd->add_option("--prob-floor", o->prob_floor, "probability clamp before the log");
    cmd->add_option("--seed", o->seed, "bank sampling seed");
    cmd->callback([o] { run_extract(*o); });
  }

  {
    auto o = std::make_shared<TrainRankerOpts>();
    CLI::App* cmd = app.add_subcommand("train-ranker", "train a caption ranking model");
    add_data_option(cmd, o->data);
    cmd->add_option("--mode", o->mode, "agnostic | score | rep")->required();
    cmd->add_option("--agnostic", o->agnostic,
                    "frozen baseline checkpoint (score and rep modes)");
    cmd->add_option("--grounding", o->grounding, "grounded-vector cache directory");
    cmd->add_option("--fusion-mode", o->fusion_mode,
                    "rep mode: full | caption_only | image_only | agnostic_deeper");
    cmd->add_option("--out", o->out, "checkpoint path")->required();
    cmd->add_option("--v-dim", o->v_dim, "grounded projection width");
    cmd->add_option("--rep-dim", o->rep_dim, "fused representation width (rep mode)");
    cmd->add_option("--keep", o->keep,
                    "dropout keep for grounded and fused layers (score and rep modes)");
    cmd->add_option("--iterations", o->iterations, "training iterations");
    cmd->add_option("--batch-k", o->batch_k, "candidate-set size per iteration");
    cmd->add_option("--lr", o->lr, "RMSProp learning rate (0: per-mode default)");
    cmd->add_option("--log-every", o->log_every, "loss logging cadence");
    cmd->add_option("--eval-every", o->eval_every, "validation cadence (rep mode)");
    cmd->add_option("--seed", o->seed, "training seed");
    cmd->callback([o] { run_train_ranker(*o); });
  }

  {
    auto o = std::make_shared<FitAlphaBetaOpts>();
    CLI::App* cmd = app.add_subcommand(
        "fit-alphabeta", "refit score-fusion mixing weights on the validation split");
    add_data_option(cmd, o->data);
    cmd->add_option("--agnostic", o->agnostic, "baseline checkpoint")->required();
    cmd->add_option("--model", o->model, "score-fusion checkpoint")->required();
    cmd->add_option("--grounding", o->grounding, "grounded-vector cache directory")->required();
    cmd->add_option("--out", o->out, "output checkpoint path")->required();
    cmd->add_option("--seed", o->seed, "unused, recorded for provenance");
    cmd->callback([o] { run_fit_alphabeta(*o); });
  }

  {
    auto o = std::make_shared<EvaluateOpts>();
    CLI::App* cmd = app.add_subcommand("evaluate", "retrieval recall report on a split");
    add_data_option(cmd, o->data);
    cmd->add_option("--split", o->split, "train | val | test");
    cmd->add_option("--model-kind", o->model_kind, "agnostic | score | rep")->required();
    cmd->add_option("--model", o->model, "model checkpoint")->required();
    cmd->add_option("--agnostic", o->agnostic, "baseline checkpoint (score and rep kinds)");
    cmd->add_option("--grounding", o->grounding, "grounded-vector cache directory");
    cmd->add_option("--out", o->out, "report path (key-value twin gets .kv)")->required();
    cmd->add_option("--seed", o->seed, "unused, recorded for provenance");
    cmd->callback([o] { run_evaluate(*o); });
  }

  {
    auto o = std::make_shared<SelectQaOpts>();
    CLI::App* cmd = app.add_subcommand(
        "select-qa", "rank bank questions by informativeness for one image");
    add_data_option(cmd, o->data);
    cmd->add_option("--grounding", o->grounding, "grounded-vector cache directory")->required();
    cmd->add_option("--model-kind", o->model_kind, "score | rep")->required();
    cmd->add_option("--model", o->model, "fusion model checkpoint")->required();
    cmd->add_option("--agnostic", o->agnostic, "baseline checkpoint")->required();
    cmd->add_option("--image-head", o->image_head, "image answer head checkpoint")->required();
    cmd->add_option("--image", o->image_id, "image id (default: first image of the split)");
    cmd->add_option("--split", o->split, "candidate caption split");
    cmd->add_option("--out", o->out, "ranked CSV path")->required();
    cmd->add_option("--head-keep", o->head_keep,
                    "answer-head dropout keep probability during sampling, in (0, 1)");
    cmd->add_option("--n-samples", o->n_samples, "dropout samples");
    cmd->add_option("--seed", o->seed, "sampling seed");
    cmd->callback([o] { run_select_qa(*o); });
  }

  {
    auto o = std::make_shared<GradCheckOpts>();
    CLI::App* cmd = app.add_subcommand(
        "gradcheck", "finite-difference gradient audit of every trainable architecture");
    cmd->add_option("--out", o->out, "report path");
    cmd->add_option("--samples", o->samples, "sampled parameters per layer");
    cmd->add_option("--tolerance", o->tolerance, "max relative error allowed");
    cmd->add_option("--fd-step", o->h, "finite-difference step");
    cmd->add_option("--seed", o->seed, "world and sampling seed");
    cmd->callback([o, &exit_code] { exit_code = run_gradcheck(*o); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
