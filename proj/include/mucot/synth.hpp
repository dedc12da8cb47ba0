#pragma once

// Seeded synthetic QA world. An English-like lexicon is mapped into
// pseudo-languages grouped in two script families; languages in one family
// share stems and script, families differ in both. Digits are shared by all.
//
// A context is a few filler sentences; some of them carry "<cue> <number>".
// The question names one cue, the answer is the number following it.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mucot/augment.hpp"
#include "mucot/corpus.hpp"
#include "mucot/error.hpp"
#include "mucot/rng.hpp"
#include "mucot/text.hpp"

namespace mucot::synth {

struct WorldConfig {
  std::size_t filler_words = 40;
  std::size_t cues = 4;
  std::size_t numbers_per_context = 2;
  std::size_t min_sentences = 3;
  std::size_t max_sentences = 5;
};

struct Language {
  std::string code;
  std::string family;
  char32_t script_base = U'a';
  std::string suffix;  // appended to family stems
};

// en is the pivot; family "a" = {ml, te}, family "b" = {bn, mr}.
inline std::vector<Language> default_languages() {
  return {{"en", "en", U'a', ""},
          {"ml", "a", U'α', ""},
          {"te", "a", U'α', "e"},
          {"bn", "b", U'а', ""},
          {"mr", "b", U'а', "i"}};
}

class World {
 public:
  explicit World(std::uint64_t seed, WorldConfig cfg = {}, std::vector<Language> languages = default_languages())
      : cfg_(cfg), languages_(std::move(languages)) {
    if (cfg_.cues < cfg_.numbers_per_context || cfg_.numbers_per_context < 1 || cfg_.min_sentences < cfg_.numbers_per_context ||
        cfg_.max_sentences < cfg_.min_sentences) {
      fail(ErrorCode::invalid_config, "inconsistent synthetic world configuration");
    }
    Xoshiro256 rng(derive_seed(seed, "synth-lexicon"));
    std::set<std::string> used;
    auto fresh = [&](std::size_t syllables) {
      for (;;) {
        std::string w = make_word(rng, syllables);
        if (used.insert(w).second) return w;
      }
    };
    question_word_ = fresh(2);
    for (std::size_t i = 0; i < cfg_.cues; ++i) cues_.push_back(fresh(3));
    for (std::size_t i = 0; i < cfg_.filler_words; ++i) fillers_.push_back(fresh(1 + rng.below(3)));

    std::map<std::string, std::map<std::string, std::string>> stems;  // family -> english -> stem
    for (const auto& lang : languages_) {
      if (lang.family == "en" || stems.contains(lang.family)) continue;
      std::set<std::string> seen;
      auto& table = stems[lang.family];
      for (const auto& e : english_words()) {
        std::string s;
        do s = make_word(rng, 1 + rng.below(3)); while (!seen.insert(s).second);
        table[e] = s;
      }
    }
    for (const auto& lang : languages_) {
      auto& lex = lexicon_[lang.code];
      for (const auto& e : english_words()) {
        if (lang.family == "en") {
          lex[e] = e;
          continue;
        }
        const std::string latin = stems.at(lang.family).at(e) + lang.suffix;
        std::u32string shifted;
        for (char32_t c : text::decode(latin)) shifted.push_back(static_cast<char32_t>(lang.script_base + (c - U'a')));
        lex[e] = text::encode(shifted);
      }
    }
  }

  const WorldConfig& config() const { return cfg_; }
  const std::vector<Language>& languages() const { return languages_; }

  const Language& language(const std::string& code) const {
    for (const auto& l : languages_) {
      if (l.code == code) return l;
    }
    fail(ErrorCode::invalid_config, "unknown synthetic language ", code);
  }

  std::vector<std::string> english_words() const {
    std::vector<std::string> out{question_word_};
    out.insert(out.end(), cues_.begin(), cues_.end());
    out.insert(out.end(), fillers_.begin(), fillers_.end());
    return out;
  }

  std::string word(const std::string& lang, const std::string& english) const { return lexicon_.at(lang).at(english); }

  // Word-for-word translator between two languages of this world.
  DictionaryTranslator translator(const std::string& from, const std::string& to) const {
    std::map<std::string, std::string> words;
    for (const auto& e : english_words()) words[word(from, e)] = word(to, e);
    return DictionaryTranslator(from, to, std::move(words));
  }

  // One record written directly in `lang`.
  QaRecord record(const std::string& id, const std::string& lang, Xoshiro256& rng) const {
    const std::size_t sentences = cfg_.min_sentences + rng.below(cfg_.max_sentences - cfg_.min_sentences + 1);
    std::vector<std::size_t> cue_ids(cues_.size());
    for (std::size_t i = 0; i < cue_ids.size(); ++i) cue_ids[i] = i;
    shuffle(std::span(cue_ids), rng);
    cue_ids.resize(cfg_.numbers_per_context);
    std::vector<std::size_t> slots(sentences);
    for (std::size_t i = 0; i < sentences; ++i) slots[i] = i;
    shuffle(std::span(slots), rng);

    const std::size_t digits = 2 + rng.below(3);
    std::set<std::string> numbers;
    std::vector<std::string> values;
    while (values.size() < cue_ids.size()) {
      std::string n = std::to_string(1 + rng.below(9));
      while (n.size() < digits) n += std::to_string(rng.below(10));
      if (numbers.insert(n).second) values.push_back(n);
    }
    const std::size_t asked = rng.below(cue_ids.size());

    std::string context;
    std::size_t answer_start = 0;
    for (std::size_t s = 0; s < sentences; ++s) {
      std::vector<std::string> words;
      const std::size_t length = 3 + rng.below(4);
      for (std::size_t k = 0; k < length; ++k) words.push_back(word(lang, fillers_[rng.below(fillers_.size())]));
      for (std::size_t c = 0; c < cue_ids.size(); ++c) {
        if (slots[c] != s) continue;
        const std::size_t at = rng.below(words.size() + 1);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), {word(lang, cues_[cue_ids[c]]), values[c]});
      }
      for (std::size_t k = 0; k < words.size(); ++k) {
        if (!context.empty()) context += ' ';
        if (k > 0 && words[k] == values[asked] && words[k - 1] == word(lang, cues_[cue_ids[asked]])) {
          answer_start = text::length(context);
        }
        context += words[k];
      }
      context += " .";
    }
    QaRecord r;
    r.id = id;
    r.language = lang;
    r.context = context;
    r.question = word(lang, question_word_) + " " + word(lang, cues_[cue_ids[asked]]) + " " +
                 word(lang, fillers_[rng.below(fillers_.size())]);
    r.answer_text = values[asked];
    r.answer_start = answer_start;
    return r;
  }

  std::vector<QaRecord> records(const std::string& lang, std::size_t count, const std::string& prefix,
                                std::uint64_t seed) const {
    Xoshiro256 rng(derive_seed(seed, "synth-records:" + lang + ":" + prefix));
    std::vector<QaRecord> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(record(prefix + std::to_string(i), lang, rng));
    return out;
  }

  // Every word form of every language plus digit strings, for vocabulary
  // building.
  std::vector<std::string> vocabulary_corpus() const {
    std::vector<std::string> out;
    for (const auto& [lang, lex] : lexicon_) {
      for (const auto& [e, w] : lex) out.push_back(w);
    }
    for (int d = 0; d < 100; ++d) out.push_back(std::to_string(d));
    out.push_back(".");
    return out;
  }

 private:
  static std::string make_word(Xoshiro256& rng, std::size_t syllables) {
    static constexpr std::string_view consonants = "bdfgklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
      w += consonants[rng.below(consonants.size())];
      w += vowels[rng.below(vowels.size())];
    }
    return w;
  }

  WorldConfig cfg_;
  std::vector<Language> languages_;
  std::string question_word_;
  std::vector<std::string> cues_;
  std::vector<std::string> fillers_;
  std::map<std::string, std::map<std::string, std::string>> lexicon_;
};

}  // namespace mucot::synth
