#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace hmpa {

struct MemeRecord {
  std::string id;
  int label = -1;  // -1 = unlabeled (test split)
  std::string text;     // OCR meme text
  std::string caption;  // inferred image caption
  std::size_t num_regions = 0;
  std::size_t feat_dim = 0;
  std::vector<double> features;  // num_regions x feat_dim, row-major
  std::vector<double> boxes;     // num_regions x 4, [x1,y1,x2,y2] in [0,1]
};

// Throws input_error naming the offending field. context is prepended to the
// message (loaders pass "line N").
void validate_record(const MemeRecord& rec, const std::string& context);

struct Vocab {
  static constexpr std::size_t pad_id = 0;
  static constexpr std::size_t cls_id = 1;
  static constexpr std::size_t sep_id = 2;
  static constexpr std::size_t unk_id = 3;

  std::vector<std::string> tokens;  // index == id
  std::map<std::string, std::size_t> ids;

  Vocab();  // starts with the four reserved tokens
  std::size_t size() const { return tokens.size(); }
  std::size_t lookup(const std::string& tok) const;  // unk_id when absent
  void add(const std::string& tok);
};

// Lowercased maximal alphanumeric runs, in order.
std::vector<std::string> split_words(const std::string& s);

// [CLS] word-ids... [SEP]; words truncated to max_len-2; never empty.
std::vector<std::size_t> tokenize(const Vocab& vocab, const std::string& s, std::size_t max_len);

Vocab build_vocab(const std::vector<MemeRecord>& records, std::size_t min_count);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

struct Dataset {
  nlohmann::ordered_json meta;  // null when the file has no header line
  std::vector<MemeRecord> records;
};

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);
std::string serialize_dataset(const Dataset& ds);

struct SyntheticSpec {
  std::size_t num_concepts = 8;
  std::size_t samples = 1000;
  std::size_t regions = 4;
  std::size_t feat_dim = 16;
  double noise_sigma = 0.1;
  double confounder_fraction = 0.5;
  std::uint64_t seed = 1;
  // Caption length in concept words (one filler word is added on top); the
  // upstream captioner's length distribution is unknowable, so it is a knob.
  std::size_t caption_words_min = 2;
  std::size_t caption_words_max = 4;
};

void to_json(nlohmann::ordered_json& j, const SyntheticSpec& s);
void from_json(const nlohmann::ordered_json& j, SyntheticSpec& s);

struct GeneratedData {
  Dataset dataset;
  Vocab vocab;
};

// Balanced benign-confounder task: label = 1 iff the image concept equals the
// text concept. Region features encode the image concept (noisy one-hot), OCR
// text encodes the text concept, the caption re-encodes the image concept
// through the text channel. A confounder_fraction of hateful records emits an
// "-imgconf" and a "-txtconf" sibling with one concept resampled and label 0.
GeneratedData generate_synthetic(const SyntheticSpec& spec);

enum class Channel { regions, text };

// Replaces the channel's content with signal-free noise for ~rate of records:
// regions become N(0,1) features, text becomes words drawn uniformly from the
// pool of words used across all records.
void corrupt_channel(std::vector<MemeRecord>& records, Channel channel, double rate,
                     std::uint64_t seed);

struct SplitResult {
  std::vector<MemeRecord> train;
  std::vector<MemeRecord> val;
  std::vector<MemeRecord> test;
};

// fractions has 2 entries (train, val) or 3 (train, val, test), each positive,
// summing to 1. Confounder siblings always land in their source's split.
SplitResult split_dataset(const std::vector<MemeRecord>& records,
                          const std::vector<double>& fractions, std::uint64_t seed);

}  // namespace hmpa
