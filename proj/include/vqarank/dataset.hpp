#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqarank/errors.hpp"
#include "vqarank/matrix.hpp"

namespace vqarank {

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + s + "'");
}

struct QaRecord {
  std::string id;
  std::size_t question_row = 0;  // row in Dataset::questions
  std::size_t answer = 0;        // index in [0, answer_vocab)
  std::size_t image = 0;         // index into images
};

// In-memory dataset: feature tables keyed by row plus the id graph binding
// them. Captions and QA pairs always belong to exactly one image.
struct Dataset {
  Matrix images;       // n_images x d_img
  Matrix captions;     // n_captions x d_cap
  Matrix caption_bow;  // n_captions x bow_dim
  Matrix questions;    // question rows x d_q (shared across QA records)

  std::vector<std::string> image_ids;
  std::vector<Split> image_split;
  std::vector<std::string> caption_ids;
  std::vector<std::size_t> caption_image;                // caption -> image
  std::vector<std::vector<std::size_t>> image_captions;  // image -> captions
  std::vector<QaRecord> qa;
  std::vector<std::vector<std::size_t>> image_qa;  // image -> qa indices
  std::size_t answer_vocab = 0;

  std::size_t n_images() const { return image_ids.size(); }
  std::size_t n_captions() const { return caption_ids.size(); }

  void validate() const {
    if (image_ids.size() != images.rows || image_split.size() != images.rows)
      throw DataError("dataset: image id/split count does not match feature rows");
    if (caption_ids.size() != captions.rows || caption_image.size() != captions.rows)
      throw DataError("dataset: caption id count does not match feature rows");
    if (caption_bow.rows != captions.rows)
      throw DataError("dataset: bag-of-words rows do not match caption rows");
    if (image_captions.size() != images.rows || image_qa.size() != images.rows)
      throw DataError("dataset: per-image index size mismatch");
    for (std::size_t c = 0; c < caption_image.size(); ++c)
      if (caption_image[c] >= images.rows)
        throw DataError("dataset: caption " + caption_ids[c] + " references missing image row " +
                        std::to_string(caption_image[c]));
    for (const QaRecord& r : qa) {
      if (r.question_row >= questions.rows)
        throw DataError("dataset: qa " + r.id + " references missing question row " +
                        std::to_string(r.question_row));
      if (r.image >= images.rows)
        throw DataError("dataset: qa " + r.id + " references missing image row " +
                        std::to_string(r.image));
      if (r.answer >= answer_vocab)
        throw DataError("dataset: qa " + r.id + " answer " + std::to_string(r.answer) +
                        " outside vocabulary of " + std::to_string(answer_vocab));
    }
  }
};

// One retrieval split as local index space: images, their captions, and the
// ground-truth maps used by score matrices and recall.
struct EvalSplit {
  std::vector<std::size_t> image_rows;    // rows into Dataset::images
  std::vector<std::size_t> caption_rows;  // rows into Dataset::captions
  std::vector<std::string> image_ids;
  std::vector<std::string> caption_ids;
  std::vector<std::size_t> caption_to_image;             // local caption -> local image
  std::vector<std::vector<std::size_t>> image_to_captions;  // local image -> local captions

  std::size_t n_images() const { return image_rows.size(); }
  std::size_t n_captions() const { return caption_rows.size(); }
};

inline EvalSplit make_split(const Dataset& d, Split s) {
  EvalSplit out;
  for (std::size_t i = 0; i < d.n_images(); ++i) {
    if (d.image_split[i] != s) continue;
    const std::size_t local_image = out.image_rows.size();
    out.image_rows.push_back(i);
    out.image_ids.push_back(d.image_ids[i]);
    out.image_to_captions.emplace_back();
    for (std::size_t c : d.image_captions[i]) {
      out.image_to_captions[local_image].push_back(out.caption_rows.size());
      out.caption_to_image.push_back(local_image);
      out.caption_rows.push_back(c);
      out.caption_ids.push_back(d.caption_ids[c]);
    }
  }
  return out;
}

}  // namespace vqarank
