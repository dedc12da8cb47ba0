#pragma once

// Sliding-window feature construction for extractive QA.
//
// Layout of one feature (max_length positions):
//   [CLS] question... [SEP] context-window... [SEP] [PAD]...
// segment 0 covers [CLS], question and the first [SEP]; segment 1 covers
// the context window and the second [SEP]; padding is segment 0.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mucot/corpus.hpp"
#include "mucot/error.hpp"
#include "mucot/rng.hpp"
#include "mucot/tokenizer.hpp"

namespace mucot {

struct FeatureConfig {
  std::size_t max_length = 384;
  std::size_t doc_stride = 128;  // context tokens shared by consecutive windows
  bool keep_unanswerable = true;  // keep windows that do not contain the answer

  // A one-token question leaves max_length - 4 context slots.
  void validate() const {
    if (max_length < 16) fail(ErrorCode::invalid_config, "max_length must be >= 16, got ", max_length);
    if (doc_stride >= max_length - 4) {
      fail(ErrorCode::stride_geq_capacity, "doc_stride ", doc_stride, " must be below max_length - 4 = ", max_length - 4);
    }
  }
};

inline constexpr std::int64_t kNoOffset = -1;

struct Feature {
  std::string record_id;
  std::vector<int> ids;
  std::vector<std::uint8_t> attention_mask;
  std::vector<std::uint8_t> segment_ids;
  // Code-point interval into the context for context tokens; {-1, -1}
  // elsewhere.
  std::vector<std::pair<std::int64_t, std::int64_t>> offsets;
  std::size_t start_label = 0;
  std::size_t end_label = 0;
  std::size_t window_start = 0;
  std::size_t context_offset = 0;  // position of the first context token

  bool is_context(std::size_t pos) const { return offsets[pos].first != kNoOffset; }
  bool has_answer() const { return start_label > 0; }

  bool operator==(const Feature&) const = default;
};

struct Window {
  std::size_t start;
  std::size_t end;  // exclusive
};

// Windows of `capacity` tokens advancing by capacity - stride until one
// reaches the last token. An empty context yields a single empty window.
inline std::vector<Window> plan_windows(std::size_t n_tokens, std::size_t capacity, std::size_t stride) {
  if (stride >= capacity) fail(ErrorCode::stride_geq_capacity, "doc_stride ", stride, " >= window capacity ", capacity);
  const std::size_t step = capacity - stride;
  std::vector<Window> windows;
  for (std::size_t start = 0;; start += step) {
    const std::size_t end = std::min(start + capacity, n_tokens);
    windows.push_back({start, end});
    if (end >= n_tokens) break;
  }
  return windows;
}

// Token indices (into the full context encoding) whose offsets contain the
// first and last code point of the answer. Surrounding whitespace in the
// answer is ignored because no token covers whitespace.
inline std::optional<std::pair<std::size_t, std::size_t>> answer_token_span(const Encoding& context,
                                                                            const QaRecord& record) {
  const auto answer = text::decode(record.answer_text);
  std::size_t lo = 0;
  std::size_t hi = answer.size();
  while (lo < hi && text::is_space(answer[lo])) ++lo;
  while (hi > lo && text::is_space(answer[hi - 1])) --hi;
  if (lo == hi) return std::nullopt;
  const std::size_t first = record.answer_start + lo;
  const std::size_t last = record.answer_start + hi - 1;
  std::optional<std::size_t> start_tok;
  std::optional<std::size_t> end_tok;
  for (std::size_t k = 0; k < context.size(); ++k) {
    const auto& o = context.offsets[k];
    if (!start_tok && o.start <= first && first < o.end) start_tok = k;
    if (o.start <= last && last < o.end) end_tok = k;
  }
  if (!start_tok || !end_tok || *end_tok < *start_tok) return std::nullopt;
  return std::make_pair(*start_tok, *end_tok);
}

inline std::vector<Feature> build_features(const QaRecord& record, const Vocab& vocab, const FeatureConfig& cfg) {
  cfg.validate();
  const Encoding question = tokenize(vocab, record.question);
  const Encoding context = tokenize(vocab, record.context);
  if (question.size() + 3 >= cfg.max_length) {
    fail(ErrorCode::question_too_long, "record ", record.id, ": question has ", question.size(),
         " tokens, max_length is ", cfg.max_length);
  }
  const std::size_t capacity = cfg.max_length - question.size() - 3;
  const auto windows = plan_windows(context.size(), capacity, cfg.doc_stride);
  const auto answer = answer_token_span(context, record);

  std::vector<Feature> features;
  for (const auto& w : windows) {
    Feature f;
    f.record_id = record.id;
    f.window_start = w.start;
    f.ids.reserve(cfg.max_length);
    auto push = [&](int id, std::uint8_t segment, std::pair<std::int64_t, std::int64_t> offset) {
      f.ids.push_back(id);
      f.attention_mask.push_back(1);
      f.segment_ids.push_back(segment);
      f.offsets.push_back(offset);
    };
    push(Vocab::cls_id, 0, {kNoOffset, kNoOffset});
    for (int id : question.ids) push(id, 0, {kNoOffset, kNoOffset});
    push(Vocab::sep_id, 0, {kNoOffset, kNoOffset});
    f.context_offset = f.ids.size();
    for (std::size_t k = w.start; k < w.end; ++k) {
      push(context.ids[k], 1, {static_cast<std::int64_t>(context.offsets[k].start),
                               static_cast<std::int64_t>(context.offsets[k].end)});
    }
    push(Vocab::sep_id, 1, {kNoOffset, kNoOffset});
    while (f.ids.size() < cfg.max_length) {
      f.ids.push_back(Vocab::pad_id);
      f.attention_mask.push_back(0);
      f.segment_ids.push_back(0);
      f.offsets.push_back({kNoOffset, kNoOffset});
    }
    if (answer && answer->first >= w.start && answer->second < w.end) {
      f.start_label = f.context_offset + (answer->first - w.start);
      f.end_label = f.context_offset + (answer->second - w.start);
    }
    if (f.has_answer() || cfg.keep_unanswerable) features.push_back(std::move(f));
  }
  return features;
}

inline std::vector<Feature> build_all_features(const std::vector<QaRecord>& records, const Vocab& vocab,
                                               const FeatureConfig& cfg) {
  std::vector<Feature> out;
  for (const auto& r : records) {
    auto fs = build_features(r, vocab, cfg);
    out.insert(out.end(), std::make_move_iterator(fs.begin()), std::make_move_iterator(fs.end()));
  }
  return out;
}

// Seeded shuffle of feature indices, then contiguous chunks; the final short
// chunk is kept.
inline std::vector<std::vector<std::size_t>> batch_features(std::size_t n_features, std::size_t batch_size,
                                                            std::uint64_t seed) {
  if (batch_size == 0) fail(ErrorCode::invalid_config, "batch_size must be >= 1");
  std::vector<std::size_t> order(n_features);
  for (std::size_t i = 0; i < n_features; ++i) order[i] = i;
  Xoshiro256 rng(seed);
  shuffle(std::span(order), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n_features; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, n_features)));
  }
  return batches;
}

inline std::vector<std::vector<Feature>> batch_features(const std::vector<Feature>& features, std::size_t batch_size,
                                                        std::uint64_t seed) {
  std::vector<std::vector<Feature>> out;
  for (const auto& idx : batch_features(features.size(), batch_size, seed)) {
    auto& batch = out.emplace_back();
    for (auto i : idx) batch.push_back(features[i]);
  }
  return out;
}

// Feature cache file, little-endian:
//   "MCFT" | u32 version=1 | u32 header_len | header JSON
//   then per feature: u32 record_len | record bytes
// A record is: u32 id_len | id bytes | u32 start_label | u32 end_label |
//   u32 window_start | u32 context_offset | u32 n |
//   n x i32 ids | n x u8 mask | n x u8 segment | n x (i64 start, i64 end)
// The header names the vocabulary hash, the feature config and the count.
namespace feature_cache {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::uint64_t get(int bytes) {
    if (pos_ + static_cast<std::size_t>(bytes) > data_.size()) fail(ErrorCode::parse_failure, "feature cache truncated at byte ", pos_);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  std::string_view take(std::size_t n) {
    if (pos_ + n > data_.size()) fail(ErrorCode::parse_failure, "feature cache truncated at byte ", pos_);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string encode(const Feature& f) {
  std::string out;
  put_u32(out, static_cast<std::uint32_t>(f.record_id.size()));
  out += f.record_id;
  put_u32(out, static_cast<std::uint32_t>(f.start_label));
  put_u32(out, static_cast<std::uint32_t>(f.end_label));
  put_u32(out, static_cast<std::uint32_t>(f.window_start));
  put_u32(out, static_cast<std::uint32_t>(f.context_offset));
  put_u32(out, static_cast<std::uint32_t>(f.ids.size()));
  for (int id : f.ids) put_u32(out, static_cast<std::uint32_t>(id));
  for (auto m : f.attention_mask) out.push_back(static_cast<char>(m));
  for (auto s : f.segment_ids) out.push_back(static_cast<char>(s));
  for (const auto& [a, b] : f.offsets) {
    put_u64(out, static_cast<std::uint64_t>(a));
    put_u64(out, static_cast<std::uint64_t>(b));
  }
  return out;
}

inline Feature decode(std::string_view bytes) {
  Reader r(bytes);
  Feature f;
  f.record_id = std::string(r.take(r.get(4)));
  f.start_label = r.get(4);
  f.end_label = r.get(4);
  f.window_start = r.get(4);
  f.context_offset = r.get(4);
  const std::size_t n = r.get(4);
  for (std::size_t i = 0; i < n; ++i) f.ids.push_back(static_cast<int>(static_cast<std::int32_t>(r.get(4))));
  for (std::size_t i = 0; i < n; ++i) f.attention_mask.push_back(static_cast<std::uint8_t>(r.get(1)));
  for (std::size_t i = 0; i < n; ++i) f.segment_ids.push_back(static_cast<std::uint8_t>(r.get(1)));
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = static_cast<std::int64_t>(r.get(8));
    const auto b = static_cast<std::int64_t>(r.get(8));
    f.offsets.emplace_back(a, b);
  }
  if (!r.done()) fail(ErrorCode::parse_failure, "feature record has trailing bytes");
  return f;
}

}  // namespace feature_cache

inline void save_feature_cache(const std::filesystem::path& path, const std::vector<Feature>& features,
                               const Vocab& vocab, const FeatureConfig& cfg) {
  nlohmann::ordered_json header;
  header["vocab_hash"] = vocab.hash();
  header["max_length"] = cfg.max_length;
  header["doc_stride"] = cfg.doc_stride;
  header["keep_unanswerable"] = cfg.keep_unanswerable;
  header["count"] = features.size();
  const std::string h = header.dump();
  std::string out = "MCFT";
  feature_cache::put_u32(out, 1);
  feature_cache::put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  for (const auto& f : features) {
    const auto rec = feature_cache::encode(f);
    feature_cache::put_u32(out, static_cast<std::uint32_t>(rec.size()));
    out += rec;
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) fail(ErrorCode::io_failure, "cannot write ", path.string());
  file << out;
}

// Rejects a cache built with a different vocabulary or config.
inline std::vector<Feature> load_feature_cache(const std::filesystem::path& path, const Vocab& vocab,
                                               const FeatureConfig& cfg) {
  const std::string data = corpus_detail::read_file(path);
  feature_cache::Reader r(data);
  if (r.take(4) != "MCFT") fail(ErrorCode::parse_failure, path.string(), ": not a feature cache");
  if (r.get(4) != 1) fail(ErrorCode::parse_failure, path.string(), ": unsupported feature cache version");
  const auto header = nlohmann::json::parse(r.take(r.get(4)));
  if (header.at("vocab_hash").get<std::uint64_t>() != vocab.hash() ||
      header.at("max_length").get<std::size_t>() != cfg.max_length ||
      header.at("doc_stride").get<std::size_t>() != cfg.doc_stride ||
      header.at("keep_unanswerable").get<bool>() != cfg.keep_unanswerable) {
    fail(ErrorCode::invalid_config, path.string(), ": cache was built with a different vocabulary or config");
  }
  std::vector<Feature> out;
  const auto count = header.at("count").get<std::size_t>();
  for (std::size_t i = 0; i < count; ++i) out.push_back(feature_cache::decode(r.take(r.get(4))));
  if (!r.done()) fail(ErrorCode::parse_failure, path.string(), ": trailing bytes after ", count, " features");
  return out;
}

}  // namespace mucot
