#include "hmpa/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "hmpa/error.hpp"
#include "hmpa/io.hpp"
#include "hmpa/rng.hpp"

namespace hmpa {

using nlohmann::ordered_json;

void validate_record(const MemeRecord& rec, const std::string& context) {
  auto fail = [&](const std::string& field, const std::string& why) {
    throw input_error(context + ", field " + field + ": " + why);
  };
  if (rec.id.empty()) fail("id", "must be a non-empty string");
  if (rec.label != -1 && rec.label != 0 && rec.label != 1) {
    fail("label", "must be 0 or 1 when present");
  }
  if (rec.num_regions < 1) fail("features", "at least one region required");
  if (rec.feat_dim < 1) fail("features", "feature dimension must be positive");
  if (rec.features.size() != rec.num_regions * rec.feat_dim) {
    fail("features", "ragged region rows");
  }
  if (rec.boxes.size() != rec.num_regions * 4) {
    fail("boxes", "need one [x1,y1,x2,y2] row per region");
  }
  for (std::size_t k = 0; k < rec.num_regions; ++k) {
    const double* b = &rec.boxes[k * 4];
    for (int i = 0; i < 4; ++i) {
      if (!(b[i] >= 0.0 && b[i] <= 1.0)) fail("boxes", "coordinates must lie in [0,1]");
    }
    if (b[0] > b[2]) fail("boxes", "x1<=x2 violated");
    if (b[1] > b[3]) fail("boxes", "y1<=y2 violated");
  }
}

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<cls>", "<sep>", "<unk>"}) add(t);
}

std::size_t Vocab::lookup(const std::string& tok) const {
  auto it = ids.find(tok);
  return it == ids.end() ? unk_id : it->second;
}

void Vocab::add(const std::string& tok) {
  if (ids.count(tok)) return;
  ids[tok] = tokens.size();
  tokens.push_back(tok);
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

std::vector<std::size_t> tokenize(const Vocab& vocab, const std::string& s, std::size_t max_len) {
  if (max_len < 3) throw input_error("tokenize max_len must be at least 3");
  std::vector<std::size_t> out;
  out.push_back(Vocab::cls_id);
  for (const std::string& w : split_words(s)) {
    if (out.size() == max_len - 1) break;
    out.push_back(vocab.lookup(w));
  }
  out.push_back(Vocab::sep_id);
  return out;
}

Vocab build_vocab(const std::vector<MemeRecord>& records, std::size_t min_count) {
  if (min_count < 1) throw input_error("build_vocab min_count must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const MemeRecord& rec : records) {
    for (const std::string& w : split_words(rec.text)) ++counts[w];
    for (const std::string& w : split_words(rec.caption)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, cnt] : counts) {
    if (cnt >= min_count) kept.emplace_back(tok, cnt);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab vocab;
  for (const auto& [tok, cnt] : kept) vocab.add(tok);
  return vocab;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::string out;
  for (const std::string& t : vocab.tokens) {
    out += t;
    out += '\n';
  }
  atomic_write_file(path, out);
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open vocab file: " + path);
  Vocab vocab;
  vocab.tokens.clear();
  vocab.ids.clear();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (vocab.ids.count(line)) {
      throw input_error("vocab file line " + std::to_string(lineno) + ": duplicate token '" +
                        line + "'");
    }
    vocab.add(line);
  }
  static const char* reserved[] = {"<pad>", "<cls>", "<sep>", "<unk>"};
  for (std::size_t i = 0; i < 4; ++i) {
    if (vocab.tokens.size() <= i || vocab.tokens[i] != reserved[i]) {
      throw input_error("vocab file " + path + ": reserved token " + reserved[i] +
                        " missing at id " + std::to_string(i));
    }
  }
  return vocab;
}

namespace {

double require_number(const ordered_json& v, const std::string& context, const char* field) {
  if (!v.is_number()) {
    throw input_error(context + ", field " + field + ": expected a number");
  }
  return v.get<double>();
}

MemeRecord parse_record(const ordered_json& j, const std::string& context) {
  if (!j.is_object()) throw input_error(context + ": expected an object");
  static const std::set<std::string> known = {"id", "label", "text", "caption", "features",
                                             "boxes"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw input_error(context + ": unknown field '" + key + "'");
  }
  for (const char* req : {"id", "text", "caption", "features", "boxes"}) {
    if (!j.contains(req)) {
      throw input_error(context + ", field " + std::string(req) + ": missing");
    }
  }
  MemeRecord rec;
  if (!j["id"].is_string()) throw input_error(context + ", field id: expected a string");
  rec.id = j["id"].get<std::string>();
  if (j.contains("label")) {
    if (!j["label"].is_number_integer()) {
      throw input_error(context + ", field label: expected integer 0 or 1");
    }
    rec.label = j["label"].get<int>();
  }
  if (!j["text"].is_string()) throw input_error(context + ", field text: expected a string");
  rec.text = j["text"].get<std::string>();
  if (!j["caption"].is_string()) {
    throw input_error(context + ", field caption: expected a string");
  }
  rec.caption = j["caption"].get<std::string>();

  const ordered_json& feats = j["features"];
  if (!feats.is_array() || feats.empty()) {
    throw input_error(context + ", field features: expected a non-empty array of rows");
  }
  rec.num_regions = feats.size();
  for (const auto& row : feats) {
    if (!row.is_array() || row.empty()) {
      throw input_error(context + ", field features: each row must be a non-empty array");
    }
    if (rec.feat_dim == 0) rec.feat_dim = row.size();
    if (row.size() != rec.feat_dim) {
      throw input_error(context + ", field features: ragged region rows");
    }
    for (const auto& v : row) rec.features.push_back(require_number(v, context, "features"));
  }
  const ordered_json& boxes = j["boxes"];
  if (!boxes.is_array() || boxes.size() != rec.num_regions) {
    throw input_error(context + ", field boxes: need one row per region");
  }
  for (const auto& row : boxes) {
    if (!row.is_array() || row.size() != 4) {
      throw input_error(context + ", field boxes: each row must be [x1,y1,x2,y2]");
    }
    for (const auto& v : row) rec.boxes.push_back(require_number(v, context, "boxes"));
  }
  validate_record(rec, context);
  return rec;
}

ordered_json record_to_json(const MemeRecord& rec) {
  ordered_json j;
  j["id"] = rec.id;
  if (rec.label != -1) j["label"] = rec.label;
  j["text"] = rec.text;
  j["caption"] = rec.caption;
  ordered_json feats = ordered_json::array();
  for (std::size_t k = 0; k < rec.num_regions; ++k) {
    ordered_json row = ordered_json::array();
    for (std::size_t i = 0; i < rec.feat_dim; ++i) row.push_back(rec.features[k * rec.feat_dim + i]);
    feats.push_back(std::move(row));
  }
  j["features"] = std::move(feats);
  ordered_json boxes = ordered_json::array();
  for (std::size_t k = 0; k < rec.num_regions; ++k) {
    ordered_json row = ordered_json::array();
    for (std::size_t i = 0; i < 4; ++i) row.push_back(rec.boxes[k * 4 + i]);
    boxes.push_back(std::move(row));
  }
  j["boxes"] = std::move(boxes);
  return j;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open dataset file: " + path);
  Dataset ds;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string context = "line " + std::to_string(lineno);
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw input_error(context + ": not valid JSON (" + std::string(e.what()) + ")");
    }
    if (lineno == 1 && j.is_object() && j.size() == 1 && j.contains("meta")) {
      ds.meta = j["meta"];
      continue;
    }
    MemeRecord rec = parse_record(j, context);
    if (!seen_ids.insert(rec.id).second) {
      throw input_error(context + ": duplicate id '" + rec.id + "'");
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::string serialize_dataset(const Dataset& ds) {
  std::string out;
  if (!ds.meta.is_null()) {
    ordered_json header;
    header["meta"] = ds.meta;
    out += header.dump();
    out += '\n';
  }
  for (const MemeRecord& rec : ds.records) {
    out += record_to_json(rec).dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  atomic_write_file(path, serialize_dataset(ds));
}

void to_json(ordered_json& j, const SyntheticSpec& s) {
  j = ordered_json{{"num_concepts", s.num_concepts},
                   {"samples", s.samples},
                   {"regions", s.regions},
                   {"feat_dim", s.feat_dim},
                   {"noise_sigma", s.noise_sigma},
                   {"confounder_fraction", s.confounder_fraction},
                   {"seed", s.seed},
                   {"caption_words_min", s.caption_words_min},
                   {"caption_words_max", s.caption_words_max}};
}

void from_json(const ordered_json& j, SyntheticSpec& s) {
  s.num_concepts = j.at("num_concepts").get<std::size_t>();
  s.samples = j.at("samples").get<std::size_t>();
  s.regions = j.at("regions").get<std::size_t>();
  s.feat_dim = j.at("feat_dim").get<std::size_t>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.confounder_fraction = j.at("confounder_fraction").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.caption_words_min = j.at("caption_words_min").get<std::size_t>();
  s.caption_words_max = j.at("caption_words_max").get<std::size_t>();
}

namespace {

std::string nonsense_word(Rng& rng, std::set<std::string>& used) {
  static const char* consonants = "bdfgklmnprstvz";
  static const char* vowels = "aeiou";
  for (;;) {
    std::string w;
    for (int syll = 0; syll < 3; ++syll) {
      w.push_back(consonants[rand_index(rng, 14)]);
      w.push_back(vowels[rand_index(rng, 5)]);
    }
    if (used.insert(w).second) return w;
  }
}

struct WordLists {
  std::vector<std::vector<std::string>> text;     // per concept
  std::vector<std::vector<std::string>> caption;  // per concept
  std::vector<std::string> filler;
};

WordLists make_word_lists(std::size_t num_concepts, Rng& rng) {
  WordLists lists;
  std::set<std::string> used;
  lists.text.resize(num_concepts);
  lists.caption.resize(num_concepts);
  for (std::size_t c = 0; c < num_concepts; ++c) {
    for (int i = 0; i < 5; ++i) lists.text[c].push_back(nonsense_word(rng, used));
  }
  for (std::size_t c = 0; c < num_concepts; ++c) {
    for (int i = 0; i < 5; ++i) lists.caption[c].push_back(nonsense_word(rng, used));
  }
  for (int i = 0; i < 8; ++i) lists.filler.push_back(nonsense_word(rng, used));
  return lists;
}

std::string draw_text(Rng& rng, const std::vector<std::string>& words) {
  const std::size_t n = 3 + rand_index(rng, 4);  // 3..6 words
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += words[rand_index(rng, words.size())];
  }
  return out;
}

std::string draw_caption(Rng& rng, const SyntheticSpec& spec,
                         const std::vector<std::string>& concept_words,
                         const std::vector<std::string>& filler) {
  const std::size_t span = spec.caption_words_max - spec.caption_words_min + 1;
  const std::size_t n = spec.caption_words_min + rand_index(rng, span);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < n; ++i) words.push_back(concept_words[rand_index(rng, concept_words.size())]);
  const std::string& fill = filler[rand_index(rng, filler.size())];
  words.insert(words.begin() + static_cast<std::ptrdiff_t>(rand_index(rng, n + 1)), fill);
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

void draw_image(Rng& rng, const SyntheticSpec& spec, std::size_t c_img, MemeRecord& rec) {
  rec.num_regions = spec.regions;
  rec.feat_dim = spec.feat_dim;
  rec.features.assign(spec.regions * spec.feat_dim, 0.0);
  rec.boxes.assign(spec.regions * 4, 0.0);
  for (std::size_t k = 0; k < spec.regions; ++k) {
    for (std::size_t j = 0; j < spec.feat_dim; ++j) {
      rec.features[k * spec.feat_dim + j] =
          (j == c_img ? 1.0 : 0.0) + spec.noise_sigma * rand_normal(rng);
    }
    const double x1 = rand_uniform(rng), y1 = rand_uniform(rng);
    const double x2 = x1 + rand_uniform(rng) * (1.0 - x1);
    const double y2 = y1 + rand_uniform(rng) * (1.0 - y1);
    double* b = &rec.boxes[k * 4];
    b[0] = x1;
    b[1] = y1;
    b[2] = x2;
    b[3] = y2;
  }
}

std::size_t other_concept(Rng& rng, std::size_t c, std::size_t num_concepts) {
  return (c + 1 + rand_index(rng, num_concepts - 1)) % num_concepts;
}

}  // namespace

GeneratedData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_concepts < 2) throw input_error("num_concepts must be at least 2");
  if (spec.samples < 4) throw input_error("samples must be at least 4");
  if (spec.noise_sigma < 0.0) throw input_error("noise_sigma must be non-negative");
  if (spec.regions < 1) throw input_error("regions must be at least 1");
  if (spec.feat_dim < spec.num_concepts) {
    throw input_error("feat_dim must be at least num_concepts (one-hot concept coding)");
  }
  if (spec.confounder_fraction < 0.0) throw input_error("confounder_fraction must be >= 0");
  if (spec.caption_words_min < 1 || spec.caption_words_max < spec.caption_words_min) {
    throw input_error("caption word range invalid");
  }

  const std::size_t positives = spec.samples / 2;
  const std::size_t sib_pairs =
      static_cast<std::size_t>(std::llround(spec.confounder_fraction * static_cast<double>(positives)));
  const std::size_t siblings = 2 * sib_pairs;
  if (positives + siblings > spec.samples) {
    throw input_error("confounder_fraction too large to keep a balanced class ratio "
                      "(needs confounder_fraction <= 0.5)");
  }
  const std::size_t benign = spec.samples - positives - siblings;

  Rng rng_words(derive_seed(spec.seed, 1));
  const WordLists lists = make_word_lists(spec.num_concepts, rng_words);

  // Base-record order: positives and benigns interleaved by a seeded shuffle.
  std::vector<int> kinds(positives, 1);
  kinds.insert(kinds.end(), benign, 0);
  Rng rng_order(derive_seed(spec.seed, 2));
  shuffle_in_place(kinds, rng_order);

  // Which positives (by positive ordinal) carry the two confounder siblings.
  std::vector<std::size_t> pos_ord(positives);
  for (std::size_t i = 0; i < positives; ++i) pos_ord[i] = i;
  Rng rng_select(derive_seed(spec.seed, 3));
  shuffle_in_place(pos_ord, rng_select);
  std::vector<char> carries(positives, 0);
  for (std::size_t i = 0; i < sib_pairs; ++i) carries[pos_ord[i]] = 1;

  Rng rng_draw(derive_seed(spec.seed, 4));
  GeneratedData out;
  out.dataset.records.reserve(spec.samples);
  const std::size_t C = spec.num_concepts;
  std::size_t pos_seen = 0;
  std::size_t serial = 0;
  char idbuf[32];

  for (int kind : kinds) {
    MemeRecord rec;
    std::snprintf(idbuf, sizeof(idbuf), "m%06zu", ++serial);
    rec.id = idbuf;
    std::size_t c_img, c_txt;
    if (kind == 1) {
      c_img = c_txt = rand_index(rng_draw, C);
      rec.label = 1;
    } else {
      c_img = rand_index(rng_draw, C);
      c_txt = other_concept(rng_draw, c_img, C);
      rec.label = 0;
    }
    draw_image(rng_draw, spec, c_img, rec);
    rec.text = draw_text(rng_draw, lists.text[c_txt]);
    rec.caption = draw_caption(rng_draw, spec, lists.caption[c_img], lists.filler);
    out.dataset.records.push_back(rec);

    if (kind == 1 && carries[pos_seen++]) {
      // Image confounder: new image (features and its caption), same text.
      MemeRecord ic = rec;
      ic.id = rec.id + "-imgconf";
      ic.label = 0;
      const std::size_t c_img2 = other_concept(rng_draw, c_txt, C);
      draw_image(rng_draw, spec, c_img2, ic);
      ic.caption = draw_caption(rng_draw, spec, lists.caption[c_img2], lists.filler);
      out.dataset.records.push_back(std::move(ic));

      // Text confounder: new OCR text, identical image and caption.
      MemeRecord tc = rec;
      tc.id = rec.id + "-txtconf";
      tc.label = 0;
      const std::size_t c_txt2 = other_concept(rng_draw, c_img, C);
      tc.text = draw_text(rng_draw, lists.text[c_txt2]);
      out.dataset.records.push_back(std::move(tc));
    }
  }

  ordered_json meta;
  to_json(meta["generator"], spec);
  ordered_json wl;
  wl["text"] = lists.text;
  wl["caption"] = lists.caption;
  wl["filler"] = lists.filler;
  meta["word_lists"] = std::move(wl);
  out.dataset.meta = std::move(meta);
  out.vocab = build_vocab(out.dataset.records, 1);
  return out;
}

void corrupt_channel(std::vector<MemeRecord>& records, Channel channel, double rate,
                     std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw input_error("corruption rate must lie in [0,1]");
  std::set<std::string> pool_set;
  for (const MemeRecord& rec : records) {
    for (const std::string& w : split_words(rec.text)) pool_set.insert(w);
  }
  const std::vector<std::string> pool(pool_set.begin(), pool_set.end());
  Rng rng(derive_seed(seed, 5));
  for (MemeRecord& rec : records) {
    if (rand_uniform(rng) >= rate) continue;
    if (channel == Channel::regions) {
      for (double& v : rec.features) v = rand_normal(rng);
    } else {
      if (pool.empty()) continue;
      rec.text = draw_text(rng, pool);
    }
  }
}

namespace {

std::string group_key(const std::string& id) {
  for (const char* suffix : {"-imgconf", "-txtconf"}) {
    const std::size_t n = std::string(suffix).size();
    if (id.size() > n && id.compare(id.size() - n, n, suffix) == 0) {
      return id.substr(0, id.size() - n);
    }
  }
  return id;
}

}  // namespace

SplitResult split_dataset(const std::vector<MemeRecord>& records,
                          const std::vector<double>& fractions, std::uint64_t seed) {
  if (fractions.size() != 2 && fractions.size() != 3) {
    throw input_error("split needs 2 (train,val) or 3 (train,val,test) fractions");
  }
  double sum = 0.0;
  for (double f : fractions) {
    if (f <= 0.0) throw input_error("split fractions must be positive");
    sum += f;
  }
  if (std::fabs(sum - 1.0) > 1e-9) {
    throw input_error("split fractions must sum to 1 (got " + std::to_string(sum) + ")");
  }

  // Sibling groups, in first-appearance order.
  std::vector<std::vector<std::size_t>> groups;
  std::map<std::string, std::size_t> group_of;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string key = group_key(records[i].id);
    auto it = group_of.find(key);
    if (it == group_of.end()) {
      group_of[key] = groups.size();
      groups.push_back({i});
    } else {
      groups[it->second].push_back(i);
    }
  }

  std::vector<std::size_t> order(groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 6));
  shuffle_in_place(order, rng);
  // Large groups first so the final singletons can settle quotas exactly;
  // shuffled order is kept within each size class.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return groups[a].size() > groups[b].size();
  });

  // Integer quotas by largest remainder.
  const std::size_t n = records.size();
  const std::size_t nsplits = fractions.size();
  std::vector<std::size_t> quota(nsplits, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < nsplits; ++s) {
    const double exact = fractions[s] * static_cast<double>(n);
    quota[s] = static_cast<std::size_t>(exact);
    assigned += quota[s];
    remainders.emplace_back(quota[s] - exact, s);  // more negative = larger remainder
  }
  std::stable_sort(remainders.begin(), remainders.end());
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++quota[remainders[i % nsplits].second];

  std::vector<long long> deficit(nsplits);
  for (std::size_t s = 0; s < nsplits; ++s) deficit[s] = static_cast<long long>(quota[s]);
  std::vector<std::vector<std::size_t>> members(nsplits);
  for (std::size_t gi : order) {
    const long long size = static_cast<long long>(groups[gi].size());
    std::size_t best = 0;
    bool found = false;
    for (std::size_t s = 0; s < nsplits; ++s) {
      if (deficit[s] >= size && (!found || deficit[s] > deficit[best])) {
        best = s;
        found = true;
      }
    }
    if (!found) {
      for (std::size_t s = 1; s < nsplits; ++s) {
        if (deficit[s] > deficit[best]) best = s;
      }
    }
    deficit[best] -= size;
    for (std::size_t ri : groups[gi]) members[best].push_back(ri);
  }

  SplitResult out;
  std::vector<MemeRecord>* dests[3] = {&out.train, &out.val, &out.test};
  for (std::size_t s = 0; s < nsplits; ++s) {
    std::sort(members[s].begin(), members[s].end());  // original record order within a split
    for (std::size_t ri : members[s]) dests[s]->push_back(records[ri]);
  }
  return out;
}

}  // namespace hmpa
