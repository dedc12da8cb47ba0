#pragma once

// Translation / transliteration augmentation with answer relocation.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mucot/corpus.hpp"
#include "mucot/error.hpp"
#include "mucot/text.hpp"

namespace mucot {

enum class TransformKind { translation, transliteration };

inline std::string_view to_string(TransformKind kind) {
  return kind == TransformKind::translation ? "translation" : "transliteration";
}

inline TransformKind parse_kind(std::string_view s) {
  if (s == "translation") return TransformKind::translation;
  if (s == "transliteration") return TransformKind::transliteration;
  fail(ErrorCode::parse_failure, "unknown transform kind '", s, "'");
}

enum class Field { context, question, answer };

inline std::string_view to_string(Field f) {
  switch (f) {
    case Field::context: return "context";
    case Field::question: return "question";
    case Field::answer: return "answer";
  }
  return "";
}

// Identifies the text being transformed. File-backed adapters look texts up
// by (record id, field); pure adapters ignore it.
struct TextKey {
  std::string record_id;
  Field field = Field::context;
};

// Port to an external translation or transliteration system. Implementations
// must be deterministic and map "" to "". An empty source language accepts
// records of any language.
class TextTransformer {
 public:
  TextTransformer(TransformKind kind, std::string source, std::string target)
      : kind_(kind), source_(std::move(source)), target_(std::move(target)) {}
  virtual ~TextTransformer() = default;

  TransformKind kind() const { return kind_; }
  const std::string& source_language() const { return source_; }
  const std::string& target_language() const { return target_; }

  std::string transform(std::string_view input, const TextKey& key) const {
    if (input.empty()) return {};
    return apply(input, key);
  }

 protected:
  virtual std::string apply(std::string_view input, const TextKey& key) const = 0;

 private:
  TransformKind kind_;
  std::string source_;
  std::string target_;
};

class IdentityTransformer final : public TextTransformer {
 public:
  IdentityTransformer(std::string source = {}, std::string target = {},
                      TransformKind kind = TransformKind::translation)
      : TextTransformer(kind, std::move(source), std::move(target)) {}

 protected:
  std::string apply(std::string_view input, const TextKey&) const override { return std::string(input); }
};

// Whole-word substitution from a dictionary; words missing from the
// dictionary pass through. Whitespace is preserved verbatim.
class DictionaryTranslator final : public TextTransformer {
 public:
  DictionaryTranslator(std::string source, std::string target, std::map<std::string, std::string> words)
      : TextTransformer(TransformKind::translation, std::move(source), std::move(target)), words_(std::move(words)) {}

  // Swaps the direction. Only a faithful inverse when the mapping is a
  // bijection whose image is disjoint from unmapped words.
  DictionaryTranslator inverse() const {
    std::map<std::string, std::string> inv;
    for (const auto& [from, to] : words_) inv[to] = from;
    return DictionaryTranslator(target_language(), source_language(), std::move(inv));
  }

  bool is_bijective() const {
    std::map<std::string, int> images;
    for (const auto& [from, to] : words_) {
      if (++images[to] > 1) return false;
    }
    return true;
  }

  static DictionaryTranslator load(const std::filesystem::path& path, std::string source, std::string target) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::transformer_failure, "cannot open dictionary ", path.string());
    std::map<std::string, std::string> words;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) fail(ErrorCode::transformer_failure, path.string(), ":", line_no, ": expected 'from<TAB>to'");
      words[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return DictionaryTranslator(std::move(source), std::move(target), std::move(words));
  }

 protected:
  std::string apply(std::string_view input, const TextKey&) const override {
    const auto cps = text::decode(input);
    std::string out;
    std::size_t cursor = 0;
    for (const auto& span : text::word_spans(cps)) {
      out += text::encode(std::u32string_view(cps).substr(cursor, span.start - cursor));
      const auto word = text::encode(std::u32string_view(cps).substr(span.start, span.end - span.start));
      const auto it = words_.find(word);
      out += it == words_.end() ? word : it->second;
      cursor = span.end;
    }
    out += text::encode(std::u32string_view(cps).substr(cursor));
    return out;
  }

 private:
  std::map<std::string, std::string> words_;
};

// Per-code-point script mapping: every non-space code point inside
// [first, last] is shifted by `offset`. Word boundaries are untouched, so the
// word count is preserved.
class CodePointShiftTransliterator final : public TextTransformer {
 public:
  CodePointShiftTransliterator(std::string source, std::string target, char32_t first, char32_t last, long offset)
      : TextTransformer(TransformKind::transliteration, std::move(source), std::move(target)),
        first_(first), last_(last), offset_(offset) {}

  CodePointShiftTransliterator inverse() const {
    return CodePointShiftTransliterator(target_language(), source_language(),
                                        static_cast<char32_t>(static_cast<long>(first_) + offset_),
                                        static_cast<char32_t>(static_cast<long>(last_) + offset_), -offset_);
  }

 protected:
  std::string apply(std::string_view input, const TextKey&) const override {
    auto cps = text::decode(input);
    for (auto& c : cps) {
      if (!text::is_space(c) && c >= first_ && c <= last_) c = static_cast<char32_t>(static_cast<long>(c) + offset_);
    }
    return text::encode(cps);
  }

 private:
  char32_t first_;
  char32_t last_;
  long offset_;
};

// Pre-translated parallel corpus: JSONL lines of
// {"id": str, "field": "context"|"question"|"answer", "lang": str, "text": str}.
// Lines whose lang differs from the target language are ignored.
class ParallelCorpusTranslator final : public TextTransformer {
 public:
  ParallelCorpusTranslator(std::string source, std::string target, const std::filesystem::path& path,
                           TransformKind kind = TransformKind::translation)
      : TextTransformer(kind, std::move(source), std::move(target)), path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::transformer_failure, "cannot open parallel corpus ", path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        if (j.at("lang").get<std::string>() != target_language()) continue;
        const auto field = j.at("field").get<std::string>();
        if (field != "context" && field != "question" && field != "answer") throw std::invalid_argument("bad field '" + field + "'");
        texts_[{j.at("id").get<std::string>(), field}] = j.at("text").get<std::string>();
      } catch (const std::exception& e) {
        fail(ErrorCode::transformer_failure, path_, ":", line_no, ": ", e.what());
      }
    }
  }

  std::size_t size() const { return texts_.size(); }

 protected:
  std::string apply(std::string_view, const TextKey& key) const override {
    const auto it = texts_.find({key.record_id, std::string(to_string(key.field))});
    if (it == texts_.end()) {
      fail(ErrorCode::transformer_failure, path_, ": no '", to_string(key.field), "' line for id '", key.record_id,
           "' in language '", target_language(), "'");
    }
    return it->second;
  }

 private:
  std::string path_;
  std::map<std::pair<std::string, std::string>, std::string> texts_;
};

inline std::size_t count_occurrences(std::u32string_view haystack, std::u32string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::u32string_view::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

// First exact occurrence of the answer in the context, in code points.
inline std::optional<std::size_t> relocate_answer(std::string_view context, std::string_view answer) {
  if (context.empty() || answer.empty()) return std::nullopt;
  const auto c = text::decode(context);
  const auto a = text::decode(answer);
  const auto pos = c.find(a);
  if (pos == std::u32string::npos) return std::nullopt;
  return pos;
}

struct Dropped {
  std::string reason;
};

using AugmentOutcome = std::variant<QaRecord, Dropped>;

inline bool succeeded(const AugmentOutcome& o) { return std::holds_alternative<QaRecord>(o); }

// Transforms context, question and answer independently, then relocates the
// answer. The output keeps the input id; the language becomes the
// transformer's target.
inline AugmentOutcome augment_record(const QaRecord& record, const TextTransformer& transformer) {
  if (!transformer.source_language().empty() && transformer.source_language() != record.language) {
    fail(ErrorCode::transformer_failure, "transformer expects source '", transformer.source_language(),
         "' but record ", record.id, " is '", record.language, "'");
  }
  QaRecord out = record;
  out.context = transformer.transform(record.context, {record.id, Field::context});
  out.question = transformer.transform(record.question, {record.id, Field::question});
  out.answer_text = transformer.transform(record.answer_text, {record.id, Field::answer});
  if (!transformer.target_language().empty()) out.language = transformer.target_language();

  if (transformer.kind() == TransformKind::transliteration) {
    const std::pair<const std::string*, const std::string*> fields[] = {
        {&record.context, &out.context}, {&record.question, &out.question}, {&record.answer_text, &out.answer_text}};
    for (const auto& [before, after] : fields) {
      if (text::split_words(*before).size() != text::split_words(*after).size()) {
        fail(ErrorCode::transformer_failure, "transliteration changed the word count of record ", record.id);
      }
    }
  }

  const auto start = relocate_answer(out.context, out.answer_text);
  if (!start) return Dropped{"answer-not-in-context"};
  const auto occurrences = count_occurrences(text::decode(out.context), text::decode(out.answer_text));
  if (occurrences > 1) {
    log::warn("record ", record.id, " -> ", out.language, ": answer occurs ", occurrences, " times, using the first");
  }
  out.answer_start = *start;
  return out;
}

// Applies each hop in order; a drop at hop k (1-based) drops the chain.
inline AugmentOutcome pivot_chain(const QaRecord& record, std::span<const TextTransformer* const> hops) {
  QaRecord current = record;
  for (std::size_t k = 0; k < hops.size(); ++k) {
    if (k > 0 && !hops[k]->source_language().empty() && !hops[k - 1]->target_language().empty() &&
        hops[k]->source_language() != hops[k - 1]->target_language()) {
      fail(ErrorCode::transformer_failure, "hop ", k + 1, " expects '", hops[k]->source_language(),
           "' but hop ", k, " produces '", hops[k - 1]->target_language(), "'");
    }
    auto outcome = augment_record(current, *hops[k]);
    if (auto* d = std::get_if<Dropped>(&outcome)) return Dropped{"hop=" + std::to_string(k + 1) + ": " + d->reason};
    current = std::get<QaRecord>(std::move(outcome));
  }
  return current;
}

inline std::string variant_id(const std::string& original_id, const std::string& language) {
  return original_id + "::" + language;
}

// Group id of a record: the id up to the first "::".
inline std::string group_id(std::string_view record_id) {
  const auto pos = record_id.find("::");
  return std::string(record_id.substr(0, pos));
}

struct TranslationGroup {
  QaRecord original;
  std::map<std::string, QaRecord> variants;
  std::map<std::string, TransformKind> provenance;

  // Original first, then variants in language order.
  std::vector<const QaRecord*> members() const {
    std::vector<const QaRecord*> out{&original};
    for (const auto& [lang, r] : variants) out.push_back(&r);
    return out;
  }
};

struct AugmentPlan {
  std::string target;
  TransformKind kind = TransformKind::translation;
  std::vector<std::shared_ptr<const TextTransformer>> chain;
};

struct ReportCell {
  std::size_t attempted = 0;
  std::size_t succeeded = 0;
  std::size_t dropped = 0;

  ReportCell& operator+=(const ReportCell& o) {
    attempted += o.attempted;
    succeeded += o.succeeded;
    dropped += o.dropped;
    return *this;
  }
};

struct AugmentReport {
  std::map<std::pair<std::string, TransformKind>, ReportCell> cells;
  std::map<std::string, std::string> drop_reasons;  // variant id -> reason

  ReportCell total() const {
    ReportCell t;
    for (const auto& [key, cell] : cells) t += cell;
    return t;
  }

  void merge(const AugmentReport& o) {
    for (const auto& [key, cell] : o.cells) cells[key] += cell;
    drop_reasons.insert(o.drop_reasons.begin(), o.drop_reasons.end());
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& [key, cell] : cells) {
      rows.push_back({{"target", key.first}, {"kind", to_string(key.second)}, {"attempted", cell.attempted},
                      {"succeeded", cell.succeeded}, {"dropped", cell.dropped}});
    }
    const auto t = total();
    j["cells"] = rows;
    j["total"] = {{"attempted", t.attempted}, {"succeeded", t.succeeded}, {"dropped", t.dropped}};
    j["drop_reasons"] = drop_reasons;
    return j;
  }
};

struct AugmentResult {
  std::vector<TranslationGroup> groups;
  AugmentReport report;

  // Originals followed by their variants, group by group.
  std::vector<QaRecord> flatten() const {
    std::vector<QaRecord> out;
    for (const auto& g : groups) {
      for (const auto* r : g.members()) out.push_back(*r);
    }
    return out;
  }

  std::map<std::string, TranslationGroup> group_map() const {
    std::map<std::string, TranslationGroup> out;
    for (const auto& g : groups) out.emplace(g.original.id, g);
    return out;
  }
};

// One group per input record. Adapter failures are collected across all
// records and raised together as a single transformer-failure.
inline AugmentResult build_groups(const std::vector<QaRecord>& records, const std::vector<AugmentPlan>& plans) {
  if (plans.empty()) fail(ErrorCode::invalid_config, "augmentation needs at least one plan");
  AugmentResult result;
  std::vector<std::string> failures;
  for (const auto& record : records) {
    TranslationGroup group{record, {}, {}};
    for (const auto& plan : plans) {
      auto& cell = result.report.cells[{plan.target, plan.kind}];
      ++cell.attempted;
      const auto vid = variant_id(record.id, plan.target);
      std::vector<const TextTransformer*> hops;
      for (const auto& t : plan.chain) hops.push_back(t.get());
      try {
        auto outcome = pivot_chain(record, hops);
        if (auto* d = std::get_if<Dropped>(&outcome)) {
          ++cell.dropped;
          result.report.drop_reasons[vid] = d->reason;
          continue;
        }
        auto variant = std::get<QaRecord>(std::move(outcome));
        variant.id = vid;
        variant.language = plan.target;
        group.variants[plan.target] = std::move(variant);
        group.provenance[plan.target] = plan.kind;
        ++cell.succeeded;
      } catch (const Error& e) {
        ++cell.dropped;
        result.report.drop_reasons[vid] = e.what();
        failures.push_back(e.what());
      }
    }
    result.groups.push_back(std::move(group));
  }
  if (!failures.empty()) {
    std::ostringstream msg;
    msg << failures.size() << " adapter failure(s)";
    for (std::size_t i = 0; i < failures.size() && i < 5; ++i) msg << (i == 0 ? ": " : "; ") << failures[i];
    throw Error(ErrorCode::transformer_failure, msg.str());
  }
  return result;
}

// Rebuilds groups from a flat record list using the "id::lang" convention.
inline std::map<std::string, TranslationGroup> groups_from_records(const std::vector<QaRecord>& records) {
  std::map<std::string, TranslationGroup> groups;
  for (const auto& r : records) {
    if (r.id.find("::") == std::string::npos) groups[r.id].original = r;
  }
  for (const auto& r : records) {
    if (r.id.find("::") == std::string::npos) continue;
    const auto gid = group_id(r.id);
    auto it = groups.find(gid);
    if (it == groups.end()) fail(ErrorCode::unresolvable_group, "variant ", r.id, " has no original '", gid, "'");
    it->second.variants[r.language] = r;
  }
  return groups;
}

}  // namespace mucot
