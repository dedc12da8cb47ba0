#pragma once

// Span decoding from start/end logits and word-set Jaccard evaluation.

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "mucot/corpus.hpp"
#include "mucot/encoder.hpp"
#include "mucot/error.hpp"
#include "mucot/features.hpp"
#include "mucot/text.hpp"

namespace mucot {

struct DecodeConfig {
  std::size_t n_best = 20;
  std::size_t max_answer_tokens = 30;

  void validate() const {
    if (n_best < 1 || max_answer_tokens < 1) fail(ErrorCode::invalid_config, "n_best and max_answer_tokens must be >= 1");
  }
};

// Logits of one feature, aligned with its positions.
struct FeatureScores {
  const Feature* feature = nullptr;
  std::vector<double> start;
  std::vector<double> end;
};

namespace eval_detail {

inline std::vector<std::size_t> top_context_positions(const Feature& f, const std::vector<double>& logits, std::size_t k) {
  std::vector<std::size_t> positions;
  for (std::size_t p = 0; p < f.ids.size(); ++p) {
    if (f.is_context(p)) positions.push_back(p);
  }
  std::stable_sort(positions.begin(), positions.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  if (positions.size() > k) positions.resize(k);
  return positions;
}

}  // namespace eval_detail

// Best (start, end) over all features of one record: both among the top
// n_best context positions of their feature, start <= end, span shorter than
// max_answer_tokens. Ties prefer the earlier start, then the shorter span.
// Returns "" when no pair qualifies.
inline std::string decode_answer(std::span<const FeatureScores> features, const DecodeConfig& cfg,
                                 std::string_view context) {
  cfg.validate();
  bool found = false;
  double best_score = 0;
  std::int64_t best_start = 0;
  std::int64_t best_end = 0;
  for (const auto& fs : features) {
    const Feature& f = *fs.feature;
    if (fs.start.size() != f.ids.size() || fs.end.size() != f.ids.size()) {
      fail(ErrorCode::shape_mismatch, "logits for ", f.record_id, " do not match the feature length");
    }
    const auto starts = eval_detail::top_context_positions(f, fs.start, cfg.n_best);
    const auto ends = eval_detail::top_context_positions(f, fs.end, cfg.n_best);
    for (auto s : starts) {
      for (auto e : ends) {
        if (e < s || e - s >= cfg.max_answer_tokens) continue;
        const double score = fs.start[s] + fs.end[e];
        const std::int64_t cs = f.offsets[s].first;
        const std::int64_t ce = f.offsets[e].second;
        const bool better = !found || score > best_score ||
                            (score == best_score && (cs < best_start || (cs == best_start && ce < best_end)));
        if (better) {
          found = true;
          best_score = score;
          best_start = cs;
          best_end = ce;
        }
      }
    }
  }
  if (!found) return {};
  return text::slice(context, static_cast<std::size_t>(best_start), static_cast<std::size_t>(best_end));
}

struct Fraction {
  std::size_t numerator = 0;
  std::size_t denominator = 1;

  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
};

// |A ∩ B| / |A ∪ B| over the sets of whitespace-separated words. Two empty
// texts score 1, exactly one empty text scores 0.
inline Fraction jaccard_fraction(std::string_view pred, std::string_view gold) {
  const auto a_words = text::split_words(pred);
  const auto b_words = text::split_words(gold);
  const std::set<std::string> a(a_words.begin(), a_words.end());
  const std::set<std::string> b(b_words.begin(), b_words.end());
  if (a.empty() && b.empty()) return {1, 1};
  std::size_t common = 0;
  for (const auto& w : a) common += b.contains(w) ? 1 : 0;
  return {common, a.size() + b.size() - common};
}

inline double jaccard(std::string_view pred, std::string_view gold) { return jaccard_fraction(pred, gold).value(); }

struct RecordResult {
  std::string id;
  std::string language;
  std::string gold;
  std::string prediction;
  Fraction score;
};

using Rational = boost::multiprecision::cpp_rational;

// Aggregates are accumulated as exact rationals and rounded once, so
// overall == sum_l (n_l / N) * mean_l holds exactly in the stored rationals.
struct JaccardReport {
  double overall = 0;
  std::map<std::string, double> per_language;
  std::map<std::string, std::size_t> language_counts;
  std::map<std::string, double> per_record;
  std::vector<RecordResult> records;
  Rational overall_exact;
  std::map<std::string, Rational> per_language_exact;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["metric"] = "word-set jaccard; both texts empty scores 1";
    j["overall"] = overall;
    j["count"] = records.size();
    nlohmann::ordered_json langs = nlohmann::ordered_json::object();
    for (const auto& [lang, score] : per_language) langs[lang] = {{"score", score}, {"count", language_counts.at(lang)}};
    j["per_language"] = langs;
    nlohmann::ordered_json recs = nlohmann::ordered_json::object();
    for (const auto& r : records) recs[r.id] = r.score.value();
    j["per_record"] = recs;
    return j;
  }

  std::string per_record_csv() const {
    auto quote = [](const std::string& s) {
      std::string out = "\"";
      for (char c : s) {
        if (c == '"') out += '"';
        out += c;
      }
      return out + "\"";
    };
    std::string out = "id,language,gold,pred,jaccard\n";
    for (const auto& r : records) {
      out += quote(r.id) + "," + quote(r.language) + "," + quote(r.gold) + "," + quote(r.prediction) + "," +
             nlohmann::json(r.score.value()).dump() + "\n";
    }
    return out;
  }
};

inline JaccardReport aggregate(std::vector<RecordResult> results) {
  if (results.empty()) fail(ErrorCode::empty_evaluation_set, "no records to evaluate");
  JaccardReport report;
  std::map<std::string, Rational> sums;
  Rational total = 0;
  for (const auto& r : results) {
    const Rational s(static_cast<long long>(r.score.numerator), static_cast<long long>(r.score.denominator));
    sums[r.language] += s;
    ++report.language_counts[r.language];
    total += s;
    report.per_record[r.id] = r.score.value();
  }
  report.overall_exact = total / static_cast<long long>(results.size());
  report.overall = static_cast<double>(report.overall_exact);
  for (const auto& [lang, sum] : sums) {
    report.per_language_exact[lang] = sum / static_cast<long long>(report.language_counts[lang]);
    report.per_language[lang] = static_cast<double>(report.per_language_exact[lang]);
  }
  report.records = std::move(results);
  return report;
}

// Runs the encoder over every feature of every record, decodes one answer
// per record and scores it against the gold answer.
template <typename T>
JaccardReport evaluate(const EncoderParams<T>& params, const EncoderConfig& enc_cfg, const std::vector<QaRecord>& records,
                       const Vocab& vocab, const FeatureConfig& feat_cfg, const DecodeConfig& dec_cfg,
                       std::size_t batch_size = 32) {
  if (records.empty()) fail(ErrorCode::empty_evaluation_set, "no records to evaluate");
  FeatureConfig cfg = feat_cfg;
  cfg.keep_unanswerable = true;
  std::vector<std::vector<Feature>> features;
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (record, feature)
  for (std::size_t r = 0; r < records.size(); ++r) {
    features.push_back(build_features(records[r], vocab, cfg));
    for (std::size_t k = 0; k < features[r].size(); ++k) order.emplace_back(r, k);
  }
  std::vector<std::vector<FeatureScores>> scores(records.size());
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<const Feature*> chunk;
    for (std::size_t k = i; k < std::min(i + batch_size, order.size()); ++k) {
      chunk.push_back(&features[order[k].first][order[k].second]);
    }
    const auto pass = forward(params, enc_cfg, Batch::from(std::span<const Feature* const>(chunk)));
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      FeatureScores fs;
      fs.feature = chunk[k];
      const auto row = static_cast<Eigen::Index>(k);
      for (std::size_t p = 0; p < pass.t; ++p) {
        fs.start.push_back(static_cast<double>(pass.start_logits(row, static_cast<Eigen::Index>(p))));
        fs.end.push_back(static_cast<double>(pass.end_logits(row, static_cast<Eigen::Index>(p))));
      }
      scores[order[i + k].first].push_back(std::move(fs));
    }
  }
  std::vector<RecordResult> results;
  for (std::size_t r = 0; r < records.size(); ++r) {
    RecordResult result;
    result.id = records[r].id;
    result.language = records[r].language;
    result.gold = records[r].answer_text;
    result.prediction = decode_answer(scores[r], dec_cfg, records[r].context);
    result.score = jaccard_fraction(result.prediction, result.gold);
    results.push_back(std::move(result));
  }
  return aggregate(std::move(results));
}

}  // namespace mucot
