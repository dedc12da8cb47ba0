#pragma once

// Word-piece vocabulary induction and tokenization with code-point offsets.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mucot/error.hpp"
#include "mucot/text.hpp"

namespace mucot {

inline constexpr std::string_view kContinuation = "##";
inline constexpr std::size_t kMaxWordLength = 100;

class Vocab {
 public:
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;
  static constexpr int cls_id = 2;
  static constexpr int sep_id = 3;

  Vocab() : Vocab(std::vector<std::string>{}) {}

  // `pieces` excludes the four reserved entries, which are prepended.
  explicit Vocab(const std::vector<std::string>& pieces) {
    for (const char* special : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(special);
    for (const auto& p : pieces) add(p);
  }

  static Vocab from_lines(const std::vector<std::string>& lines) {
    static const char* expected[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    if (lines.size() < 4) fail(ErrorCode::parse_failure, "vocabulary needs at least the 4 reserved lines");
    for (int i = 0; i < 4; ++i) {
      if (lines[i] != expected[i]) fail(ErrorCode::parse_failure, "vocabulary line ", i, " must be ", expected[i], ", found '", lines[i], "'");
    }
    Vocab v;
    for (std::size_t i = 4; i < lines.size(); ++i) {
      if (lines[i].empty()) fail(ErrorCode::parse_failure, "vocabulary line ", i, " is empty");
      if (v.contains(lines[i])) fail(ErrorCode::parse_failure, "vocabulary line ", i, " duplicates '", lines[i], "'");
      v.add(lines[i]);
    }
    return v;
  }

  static Vocab load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io_failure, "cannot open vocabulary ", path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return from_lines(lines);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io_failure, "cannot write vocabulary ", path.string());
    out << serialize();
  }

  std::string serialize() const {
    std::string out;
    for (const auto& p : pieces_) {
      out += p;
      out += '\n';
    }
    return out;
  }

  std::uint64_t hash() const { return text::fnv1a64(serialize()); }

  std::size_t size() const { return pieces_.size(); }
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& pieces() const { return pieces_; }
  bool contains(const std::string& piece) const { return index_.contains(piece); }

  int id(const std::string& piece) const {
    const auto it = index_.find(piece);
    return it == index_.end() ? unk_id : it->second;
  }

  // -1 when absent; avoids conflating with [UNK].
  int find(const std::string& piece) const {
    const auto it = index_.find(piece);
    return it == index_.end() ? -1 : it->second;
  }

  int add(const std::string& piece) {
    if (const auto it = index_.find(piece); it != index_.end()) return it->second;
    const int id = static_cast<int>(pieces_.size());
    pieces_.push_back(piece);
    index_.emplace(piece, id);
    return id;
  }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
};

struct Offset {
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const Offset&) const = default;
};

struct Encoding {
  std::vector<int> ids;
  std::vector<Offset> offsets;
  std::vector<bool> word_boundaries;

  std::size_t size() const { return ids.size(); }
};

// Frequency-driven merge induction. Words are split on whitespace; each word
// starts as its code points ("c", "##c", ...). The most frequent adjacent
// pair inside a word is merged until the vocabulary reaches `size` or no
// pair remains. Ties go to the lexicographically smallest (left, right).
inline Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t size) {
  std::vector<std::u32string> words;
  std::vector<std::size_t> counts;
  {
    std::map<std::u32string, std::size_t> index;
    for (const auto& line : corpus) {
      const auto cps = text::decode(line);
      for (const auto& span : text::word_spans(cps)) {
        auto word = cps.substr(span.start, span.end - span.start);
        if (word.size() > kMaxWordLength) continue;
        auto [it, inserted] = index.emplace(word, words.size());
        if (inserted) {
          words.push_back(std::move(word));
          counts.push_back(0);
        }
        ++counts[it->second];
      }
    }
  }

  std::vector<char32_t> alphabet;
  std::map<char32_t, std::size_t> continuation_freq;
  {
    std::map<char32_t, bool> seen;
    for (std::size_t w = 0; w < words.size(); ++w) {
      for (std::size_t i = 0; i < words[w].size(); ++i) {
        if (!seen[words[w][i]]) {
          seen[words[w][i]] = true;
          alphabet.push_back(words[w][i]);
        }
        if (i > 0) continuation_freq[words[w][i]] += counts[w];
      }
    }
    // Code points inside over-long words still count toward the alphabet.
    for (const auto& line : corpus) {
      for (char32_t c : text::decode(line)) {
        if (!text::is_space(c) && !seen[c]) {
          seen[c] = true;
          alphabet.push_back(c);
        }
      }
    }
  }
  if (size < 4 + alphabet.size()) {
    fail(ErrorCode::size_too_small, "vocabulary size ", size, " is below 4 + ", alphabet.size(), " distinct code points");
  }

  Vocab vocab;
  auto single = [](char32_t c, bool continuation) {
    std::string s = continuation ? std::string(kContinuation) : std::string();
    text::append(s, c);
    return s;
  };
  for (char32_t c : alphabet) vocab.add(single(c, false));

  std::vector<std::pair<char32_t, std::size_t>> cont(continuation_freq.begin(), continuation_freq.end());
  std::stable_sort(cont.begin(), cont.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return single(a.first, true) < single(b.first, true);
  });
  for (const auto& [c, freq] : cont) {
    if (vocab.size() >= size) break;
    vocab.add(single(c, true));
  }

  // Words as sequences of piece ids; -1 marks a code point with no piece.
  std::vector<std::vector<int>> symbols(words.size());
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (std::size_t i = 0; i < words[w].size(); ++i) symbols[w].push_back(vocab.find(single(words[w][i], i > 0)));
  }

  while (vocab.size() < size) {
    std::map<std::pair<int, int>, std::size_t> pair_counts;
    for (std::size_t w = 0; w < symbols.size(); ++w) {
      const auto& s = symbols[w];
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if (s[i] >= 0 && s[i + 1] >= 0) pair_counts[{s[i], s[i + 1]}] += counts[w];
      }
    }
    if (pair_counts.empty()) break;
    const std::pair<int, int>* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
        continue;
      }
      if (count == best_count) {
        const auto key = std::make_pair(vocab.piece(pair.first), vocab.piece(pair.second));
        const auto best_key = std::make_pair(vocab.piece(best->first), vocab.piece(best->second));
        if (key < best_key) best = &pair;
      }
    }
    const auto [left, right] = *best;
    const int merged = vocab.add(vocab.piece(left) + vocab.piece(right).substr(kContinuation.size()));
    for (auto& s : symbols) {
      std::vector<int> next;
      next.reserve(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(s[i]);
        }
      }
      s = std::move(next);
    }
  }
  return vocab;
}

// Whitespace pre-split, then greedy longest-match-first per word. A word
// that cannot be fully segmented, or is longer than kMaxWordLength code
// points, becomes a single [UNK] covering the whole word.
inline Encoding tokenize(const Vocab& vocab, std::string_view source) {
  Encoding enc;
  const auto cps = text::decode(source);
  for (const auto& span : text::word_spans(cps)) {
    const std::size_t len = span.end - span.start;
    std::vector<int> ids;
    std::vector<Offset> offsets;
    bool ok = len <= kMaxWordLength;
    std::size_t start = 0;
    while (ok && start < len) {
      int found = -1;
      std::size_t found_end = start;
      for (std::size_t end = len; end > start; --end) {
        std::string candidate = start > 0 ? std::string(kContinuation) : std::string();
        candidate += text::encode(std::u32string_view(cps).substr(span.start + start, end - start));
        found = vocab.find(candidate);
        if (found >= 0) {
          found_end = end;
          break;
        }
      }
      if (found < 0) {
        ok = false;
        break;
      }
      ids.push_back(found);
      offsets.push_back({span.start + start, span.start + found_end});
      start = found_end;
    }
    if (!ok) {
      ids.assign(1, Vocab::unk_id);
      offsets.assign(1, {span.start, span.end});
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      enc.ids.push_back(ids[i]);
      enc.offsets.push_back(offsets[i]);
      enc.word_boundaries.push_back(i == 0);
    }
  }
  return enc;
}

}  // namespace mucot
