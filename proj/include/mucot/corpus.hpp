#pragma once

// QA record ingestion, validation and language-stratified splitting.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mucot/error.hpp"
#include "mucot/rng.hpp"
#include "mucot/text.hpp"

namespace mucot {

struct QaRecord {
  std::string id;
  std::string context;
  std::string question;
  std::string answer_text;
  std::size_t answer_start = 0;  // code points into context
  std::string language;

  bool operator==(const QaRecord&) const = default;
};

enum class DatasetFormat { jsonl, csv };

enum class LoadPolicy { strict, lenient };

struct LoadResult {
  std::vector<QaRecord> records;
  std::vector<RecordIssue> rejected;
};

// Returns the reason a record is invalid, or an empty string.
inline std::string check_record(const QaRecord& r) {
  if (r.id.empty()) return "empty id";
  if (r.language.empty()) return "empty language";
  std::u32string context;
  std::u32string answer;
  try {
    context = text::decode(r.context);
    answer = text::decode(r.answer_text);
    text::decode(r.question);
  } catch (const Error& e) {
    return e.what();
  }
  if (r.answer_start + answer.size() > context.size()) return "answer span exceeds context";
  if (context.compare(r.answer_start, answer.size(), answer) != 0) return "context slice at answer_start differs from answer_text";
  return {};
}

namespace corpus_detail {

inline nlohmann::ordered_json to_json(const QaRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["context"] = r.context;
  j["question"] = r.question;
  j["answer_text"] = r.answer_text;
  j["answer_start"] = r.answer_start;
  j["language"] = r.language;
  return j;
}

inline QaRecord from_json(const nlohmann::json& j) {
  QaRecord r;
  r.id = j.at("id").get<std::string>();
  r.context = j.at("context").get<std::string>();
  r.question = j.at("question").get<std::string>();
  r.answer_text = j.at("answer_text").get<std::string>();
  const auto start = j.at("answer_start").get<std::int64_t>();
  if (start < 0) throw std::out_of_range("answer_start is negative");
  r.answer_start = static_cast<std::size_t>(start);
  r.language = j.at("language").get<std::string>();
  return r;
}

// RFC 4180 reader: quoted fields, doubled quotes, embedded newlines.
// Tracks the physical line a row started on for error messages.
class CsvReader {
 public:
  explicit CsvReader(std::string data) : data_(std::move(data)) {}

  bool next(std::vector<std::string>& row, std::size_t& line) {
    row.clear();
    if (pos_ >= data_.size()) return false;
    line = line_;
    std::string field;
    bool quoted = false;
    while (pos_ < data_.size()) {
      const char c = data_[pos_++];
      if (quoted) {
        if (c == '"') {
          if (pos_ < data_.size() && data_[pos_] == '"') {
            field.push_back('"');
            ++pos_;
          } else {
            quoted = false;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
      } else if (c == '"' && field.empty()) {
        quoted = true;
      } else if (c == ',') {
        row.push_back(std::move(field));
        field.clear();
      } else if (c == '\n' || c == '\r') {
        if (c == '\r' && pos_ < data_.size() && data_[pos_] == '\n') ++pos_;
        ++line_;
        row.push_back(std::move(field));
        return true;
      } else {
        field.push_back(c);
      }
    }
    if (quoted) fail(ErrorCode::parse_failure, "unterminated quoted field starting on line ", line);
    row.push_back(std::move(field));
    return true;
  }

 private:
  std::string data_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_failure, "cannot open ", path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline std::vector<QaRecord> parse_jsonl(const std::string& data) {
  std::vector<QaRecord> out;
  std::istringstream in(data);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      fail(ErrorCode::parse_failure, "line ", line_no, ": ", e.what());
    }
  }
  return out;
}

inline std::vector<QaRecord> parse_csv(std::string data) {
  if (data.rfind("\xEF\xBB\xBF", 0) == 0) data.erase(0, 3);
  CsvReader reader(std::move(data));
  std::vector<std::string> row;
  std::size_t line = 0;
  if (!reader.next(row, line)) return {};
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < row.size(); ++i) column[row[i]] = i;
  for (const char* name : {"id", "context", "question", "answer_text", "answer_start", "language"}) {
    if (!column.contains(name)) fail(ErrorCode::parse_failure, "line 1: missing column '", name, "'");
  }
  std::vector<QaRecord> out;
  while (reader.next(row, line)) {
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != column.size()) {
      fail(ErrorCode::parse_failure, "row starting on line ", line, ": expected ", column.size(), " fields, found ", row.size());
    }
    QaRecord r;
    r.id = row[column["id"]];
    r.context = row[column["context"]];
    r.question = row[column["question"]];
    r.answer_text = row[column["answer_text"]];
    r.language = row[column["language"]];
    const std::string& start = row[column["answer_start"]];
    std::size_t consumed = 0;
    long long value = -1;
    try {
      value = std::stoll(start, &consumed, 10);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != start.size() || start.empty() || value < 0) {
      fail(ErrorCode::parse_failure, "row starting on line ", line, ": answer_start '", start, "' is not a non-negative integer");
    }
    r.answer_start = static_cast<std::size_t>(value);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace corpus_detail

// Validates every record; invalid or duplicate-id records are rejected.
// Under LoadPolicy::strict any rejection raises ValidationError.
inline LoadResult validate_records(std::vector<QaRecord> records, LoadPolicy policy = LoadPolicy::strict) {
  LoadResult result;
  std::set<std::string> seen;
  for (auto& r : records) {
    std::string reason = check_record(r);
    if (reason.empty() && !seen.insert(r.id).second) reason = "duplicate id";
    if (reason.empty()) {
      result.records.push_back(std::move(r));
    } else {
      result.rejected.push_back({r.id, std::move(reason)});
    }
  }
  if (policy == LoadPolicy::strict && !result.rejected.empty()) throw ValidationError(result.rejected);
  return result;
}

inline LoadResult load_dataset(const std::filesystem::path& path, DatasetFormat format,
                               LoadPolicy policy = LoadPolicy::strict) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::io_failure, "no such file: ", path.string());
  std::string data = corpus_detail::read_file(path);
  auto records = format == DatasetFormat::jsonl ? corpus_detail::parse_jsonl(data)
                                                : corpus_detail::parse_csv(std::move(data));
  return validate_records(std::move(records), policy);
}

inline DatasetFormat format_for(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? DatasetFormat::csv : DatasetFormat::jsonl;
}

inline std::string to_jsonl(const std::vector<QaRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += corpus_detail::to_json(r).dump(-1, ' ', false);
    out += '\n';
  }
  return out;
}

inline void save_jsonl(const std::filesystem::path& path, const std::vector<QaRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_failure, "cannot write ", path.string());
  out << to_jsonl(records);
}

struct StratumCounts {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;

  bool operator==(const StratumCounts&) const = default;
};

struct DatasetSplit {
  std::vector<QaRecord> train;
  std::vector<QaRecord> validation;
  std::vector<QaRecord> test;
  std::uint64_t seed = 0;
  std::map<std::string, StratumCounts> strata;
};

// Proportional allocation of `total` items across strata with the
// largest-remainder method. Ties on the remainder go to the larger stratum,
// then to the lexicographically smaller key.
inline std::map<std::string, std::size_t> largest_remainder(const std::map<std::string, std::size_t>& sizes,
                                                            std::size_t total) {
  std::size_t population = 0;
  for (const auto& [key, n] : sizes) population += n;
  std::map<std::string, std::size_t> alloc;
  if (population == 0) return alloc;
  struct Candidate {
    std::string key;
    std::size_t remainder;  // numerator over `population`
    std::size_t size;
  };
  std::vector<Candidate> candidates;
  std::size_t assigned = 0;
  for (const auto& [key, n] : sizes) {
    const std::size_t product = total * n;
    alloc[key] = product / population;
    assigned += product / population;
    candidates.push_back({key, product % population, n});
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.remainder != b.remainder) return a.remainder > b.remainder;
    if (a.size != b.size) return a.size > b.size;
    return a.key < b.key;
  });
  for (std::size_t i = 0; assigned < total && i < candidates.size(); ++i) {
    if (alloc[candidates[i].key] < sizes.at(candidates[i].key)) {
      ++alloc[candidates[i].key];
      ++assigned;
    }
  }
  return alloc;
}

inline std::uint64_t stratum_seed(std::uint64_t seed, std::string_view language) {
  return seed ^ text::fnv1a64(language);
}

// Test is drawn first from the full set, validation second from what
// remains. Within each language the records are shuffled by xoshiro256**
// seeded with seed ^ fnv1a64(language) and allocations are taken from the
// front. Output splits keep the input order.
inline DatasetSplit stratified_split(const std::vector<QaRecord>& records, std::size_t test_size,
                                     std::size_t val_size, std::uint64_t seed) {
  if (test_size + val_size >= records.size()) {
    fail(ErrorCode::insufficient_records, "test_size + val_size = ", test_size + val_size,
         " must be below the record count ", records.size());
  }
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].language.empty()) fail(ErrorCode::empty_stratum, "record ", records[i].id, " has no language");
    strata[records[i].language].push_back(i);
  }

  std::map<std::string, std::size_t> sizes;
  for (auto& [language, members] : strata) {
    Xoshiro256 rng(stratum_seed(seed, language));
    shuffle(std::span(members), rng);
    sizes[language] = members.size();
  }

  const auto test_alloc = largest_remainder(sizes, test_size);
  std::map<std::string, std::size_t> remaining;
  for (const auto& [language, n] : sizes) remaining[language] = n - test_alloc.at(language);
  const auto val_alloc = largest_remainder(remaining, val_size);

  enum class Part : std::uint8_t { train, validation, test };
  std::vector<Part> part(records.size(), Part::train);
  DatasetSplit split;
  split.seed = seed;
  for (const auto& [language, members] : strata) {
    const std::size_t t = test_alloc.at(language);
    const std::size_t v = val_alloc.at(language);
    for (std::size_t k = 0; k < t; ++k) part[members[k]] = Part::test;
    for (std::size_t k = t; k < t + v; ++k) part[members[k]] = Part::validation;
    split.strata[language] = {members.size() - t - v, v, t};
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (part[i]) {
      case Part::train: split.train.push_back(records[i]); break;
      case Part::validation: split.validation.push_back(records[i]); break;
      case Part::test: split.test.push_back(records[i]); break;
    }
  }
  return split;
}

inline nlohmann::ordered_json split_manifest(const DatasetSplit& split, std::size_t test_size, std::size_t val_size) {
  nlohmann::ordered_json m;
  m["seed"] = split.seed;
  m["test_size"] = test_size;
  m["val_size"] = val_size;
  m["counts"] = {{"train", split.train.size()}, {"validation", split.validation.size()}, {"test", split.test.size()}};
  nlohmann::ordered_json per_language = nlohmann::ordered_json::object();
  for (const auto& [language, c] : split.strata) {
    per_language[language] = {{"train", c.train}, {"validation", c.validation}, {"test", c.test}};
  }
  m["per_language"] = per_language;
  return m;
}

inline void write_split(const std::filesystem::path& dir, const DatasetSplit& split, std::size_t test_size,
                        std::size_t val_size) {
  std::filesystem::create_directories(dir);
  save_jsonl(dir / "train.jsonl", split.train);
  save_jsonl(dir / "validation.jsonl", split.validation);
  save_jsonl(dir / "test.jsonl", split.test);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) fail(ErrorCode::io_failure, "cannot write ", (dir / "manifest.json").string());
  out << split_manifest(split, test_size, val_size).dump(2) << '\n';
}

inline std::map<std::string, std::size_t> language_histogram(const std::vector<QaRecord>& records) {
  std::map<std::string, std::size_t> h;
  for (const auto& r : records) ++h[r.language];
  return h;
}

}  // namespace mucot
