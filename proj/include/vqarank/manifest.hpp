#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vqarank/dataset.hpp"
#include "vqarank/errors.hpp"
#include "vqarank/feature_file.hpp"

namespace vqarank {

// Text manifest binding ids to feature-file rows. Tab-separated, one record
// per line, first line is the header "vqarank-manifest<TAB>1". Record kinds:
//   file    <role> <relative path>        roles: images captions caption_bow questions
//   meta    answer_vocab <M>
//   image   <id> <row> <split>
//   caption <id> <feature row> <bow row> <image id>
//   qa      <id> <question row> <answer index> <image id>

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t at = line.find('\t', start);
    if (at == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, at - start));
    start = at + 1;
  }
}

inline std::size_t parse_index(const std::string& s, const std::string& ctx) {
  if (s.empty()) throw DataError(ctx + ": empty index field");
  std::size_t v = 0;
  for (char ch : s) {
    if (ch < '0' || ch > '9') throw DataError(ctx + ": bad index '" + s + "'");
    v = v * 10 + static_cast<std::size_t>(ch - '0');
  }
  return v;
}

inline std::string dir_of(const std::string& path) {
  const std::size_t at = path.find_last_of('/');
  return at == std::string::npos ? std::string(".") : path.substr(0, at);
}

}  // namespace detail

struct ManifestFiles {
  std::string images = "images.mmft";
  std::string captions = "captions.mmft";
  std::string caption_bow = "caption_bow.mmft";
  std::string questions = "questions.mmft";
};

// Writes the feature files plus manifest.tsv into dir; returns manifest path.
inline std::string write_dataset(const std::string& dir, const Dataset& d,
                                 const ManifestFiles& files = {}) {
  d.validate();
  write_features(dir + "/" + files.images, d.images);
  write_features(dir + "/" + files.captions, d.captions);
  write_features(dir + "/" + files.caption_bow, d.caption_bow);
  write_features(dir + "/" + files.questions, d.questions);

  std::ostringstream out;
  out << "vqarank-manifest\t1\n";
  out << "file\timages\t" << files.images << "\n";
  out << "file\tcaptions\t" << files.captions << "\n";
  out << "file\tcaption_bow\t" << files.caption_bow << "\n";
  out << "file\tquestions\t" << files.questions << "\n";
  out << "meta\tanswer_vocab\t" << d.answer_vocab << "\n";
  for (std::size_t i = 0; i < d.n_images(); ++i)
    out << "image\t" << d.image_ids[i] << "\t" << i << "\t" << split_name(d.image_split[i])
        << "\n";
  for (std::size_t c = 0; c < d.n_captions(); ++c)
    out << "caption\t" << d.caption_ids[c] << "\t" << c << "\t" << c << "\t"
        << d.image_ids[d.caption_image[c]] << "\n";
  for (const QaRecord& r : d.qa)
    out << "qa\t" << r.id << "\t" << r.question_row << "\t" << r.answer << "\t"
        << d.image_ids[r.image] << "\n";

  const std::string path = dir + "/manifest.tsv";
  detail::write_file_bytes(path, out.str());
  return path;
}

inline Dataset load_dataset(const std::string& manifest_path) {
  const std::string text = detail::read_file_bytes(manifest_path);
  const std::string base = detail::dir_of(manifest_path);

  Dataset d;
  std::map<std::string, std::string> file_roles;
  std::map<std::string, std::size_t> image_index;
  struct CaptionLine {
    std::string id;
    std::size_t feature_row, bow_row;
    std::string image_id;
  };
  struct QaLine {
    std::string id;
    std::size_t question_row, answer;
    std::string image_id;
  };
  std::vector<CaptionLine> caption_lines;
  std::vector<QaLine> qa_lines;
  bool have_vocab = false;

  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::size_t> image_feature_rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string ctx = manifest_path + ":" + std::to_string(line_no);
    const auto f = detail::split_tabs(line);
    if (line_no == 1) {
      if (f.size() != 2 || f[0] != "vqarank-manifest" || f[1] != "1")
        throw DataError(ctx + ": missing manifest header");
      continue;
    }
    if (f[0] == "file") {
      if (f.size() != 3) throw DataError(ctx + ": file record needs 3 fields");
      file_roles[f[1]] = f[2];
    } else if (f[0] == "meta") {
      if (f.size() != 3) throw DataError(ctx + ": meta record needs 3 fields");
      if (f[1] == "answer_vocab") {
        d.answer_vocab = detail::parse_index(f[2], ctx);
        have_vocab = true;
      } else {
        throw DataError(ctx + ": unknown meta key '" + f[1] + "'");
      }
    } else if (f[0] == "image") {
      if (f.size() != 4) throw DataError(ctx + ": image record needs 4 fields");
      if (image_index.count(f[1])) throw DataError(ctx + ": duplicate image id " + f[1]);
      image_index[f[1]] = d.image_ids.size();
      d.image_ids.push_back(f[1]);
      image_feature_rows.push_back(detail::parse_index(f[2], ctx));
      d.image_split.push_back(split_from_name(f[3]));
    } else if (f[0] == "caption") {
      if (f.size() != 5) throw DataError(ctx + ": caption record needs 5 fields");
      caption_lines.push_back({f[1], detail::parse_index(f[2], ctx),
                               detail::parse_index(f[3], ctx), f[4]});
    } else if (f[0] == "qa") {
      if (f.size() != 5) throw DataError(ctx + ": qa record needs 5 fields");
      qa_lines.push_back({f[1], detail::parse_index(f[2], ctx), detail::parse_index(f[3], ctx),
                          f[4]});
    } else {
      throw DataError(ctx + ": unknown record kind '" + f[0] + "'");
    }
  }

  for (const char* role : {"images", "captions", "caption_bow", "questions"})
    if (!file_roles.count(role))
      throw DataError(manifest_path + ": no file record for role '" + std::string(role) + "'");
  if (!have_vocab) throw DataError(manifest_path + ": missing meta answer_vocab");

  const Matrix image_table = read_features(base + "/" + file_roles["images"]);
  const Matrix caption_table = read_features(base + "/" + file_roles["captions"]);
  const Matrix bow_table = read_features(base + "/" + file_roles["caption_bow"]);
  d.questions = read_features(base + "/" + file_roles["questions"]);

  // Gather rows in manifest order so ids and rows stay aligned.
  d.images = Matrix(d.image_ids.size(), image_table.cols);
  for (std::size_t i = 0; i < d.image_ids.size(); ++i) {
    if (image_feature_rows[i] >= image_table.rows)
      throw DataError("image " + d.image_ids[i] + " references row " +
                      std::to_string(image_feature_rows[i]) + " beyond feature count " +
                      std::to_string(image_table.rows));
    for (std::size_t j = 0; j < image_table.cols; ++j)
      d.images(i, j) = image_table(image_feature_rows[i], j);
  }

  d.captions = Matrix(caption_lines.size(), caption_table.cols);
  d.caption_bow = Matrix(caption_lines.size(), bow_table.cols);
  d.image_captions.assign(d.image_ids.size(), {});
  for (std::size_t c = 0; c < caption_lines.size(); ++c) {
    const CaptionLine& cl = caption_lines[c];
    if (cl.feature_row >= caption_table.rows || cl.bow_row >= bow_table.rows)
      throw DataError("caption " + cl.id + " references a row beyond its feature file");
    const auto it = image_index.find(cl.image_id);
    if (it == image_index.end())
      throw DataError("caption " + cl.id + " references missing image " + cl.image_id);
    for (std::size_t j = 0; j < caption_table.cols; ++j)
      d.captions(c, j) = caption_table(cl.feature_row, j);
    for (std::size_t j = 0; j < bow_table.cols; ++j)
      d.caption_bow(c, j) = bow_table(cl.bow_row, j);
    d.caption_ids.push_back(cl.id);
    d.caption_image.push_back(it->second);
    d.image_captions[it->second].push_back(c);
  }

  d.image_qa.assign(d.image_ids.size(), {});
  for (const QaLine& ql : qa_lines) {
    const auto it = image_index.find(ql.image_id);
    if (it == image_index.end())
      throw DataError("qa " + ql.id + " references missing image " + ql.image_id);
    if (ql.question_row >= d.questions.rows)
      throw DataError("qa " + ql.id + " references question row " +
                      std::to_string(ql.question_row) + " beyond feature count " +
                      std::to_string(d.questions.rows));
    if (ql.answer >= d.answer_vocab)
      throw DataError("qa " + ql.id + " answer " + std::to_string(ql.answer) +
                      " outside vocabulary of " + std::to_string(d.answer_vocab));
    d.image_qa[it->second].push_back(d.qa.size());
    d.qa.push_back({ql.id, ql.question_row, ql.answer, it->second});
  }

  d.validate();
  return d;
}

}  // namespace vqarank
