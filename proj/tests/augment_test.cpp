#include <gtest/gtest.h>

#include <cctype>
#include <filesystem>
#include <fstream>

#include "mucot/augment.hpp"
#include "mucot/synth.hpp"

namespace mucot {
namespace {

namespace fs = std::filesystem;

class UppercaseTranslator final : public TextTransformer {
 public:
  UppercaseTranslator() : TextTransformer(TransformKind::translation, "xx", "XX") {}

 protected:
  std::string apply(std::string_view input, const TextKey&) const override {
    std::string out(input);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
  }
};

// Renders "beta" differently depending on the field being transformed.
class FieldSensitiveStub final : public TextTransformer {
 public:
  FieldSensitiveStub(std::string source = "xx", std::string target = "yy")
      : TextTransformer(TransformKind::translation, std::move(source), std::move(target)) {}

 protected:
  std::string apply(std::string_view input, const TextKey& key) const override {
    const std::string replacement = key.field == Field::context ? "bb" : "bbb";
    std::string out(input);
    for (auto pos = out.find("beta"); pos != std::string::npos; pos = out.find("beta", pos + replacement.size())) {
      out.replace(pos, 4, replacement);
    }
    return out;
  }
};

QaRecord sample(const std::string& id = "r1", const std::string& lang = "xx") {
  return {id, "alpha beta", "which one?", "beta", 6, lang};
}

TEST(Relocate, FirstExactOccurrence) {
  EXPECT_EQ(relocate_answer("alpha beta gamma", "beta"), 6u);
  EXPECT_EQ(relocate_answer("beta beta", "beta"), 0u);
  EXPECT_EQ(relocate_answer("नमस्ते दुनिया", "दुनिया"), 7u);
  EXPECT_FALSE(relocate_answer("alpha", "beta").has_value());
  EXPECT_FALSE(relocate_answer("", "beta").has_value());
}

TEST(AugmentRecord, UppercaseTranslator) {
  const auto out = augment_record(sample(), UppercaseTranslator());
  ASSERT_TRUE(succeeded(out));
  const auto& r = std::get<QaRecord>(out);
  EXPECT_EQ(r.context, "ALPHA BETA");
  EXPECT_EQ(r.question, "WHICH ONE?");
  EXPECT_EQ(r.answer_text, "BETA");
  EXPECT_EQ(r.answer_start, 6u);
  EXPECT_EQ(r.language, "XX");
}

TEST(AugmentRecord, FieldSensitiveTranslationIsDropped) {
  const auto out = augment_record(sample(), FieldSensitiveStub());
  ASSERT_FALSE(succeeded(out));
  EXPECT_EQ(std::get<Dropped>(out).reason, "answer-not-in-context");
}

TEST(AugmentRecord, IdentityPreservesStartOnSyntheticRecords) {
  synth::World world(4);
  const IdentityTransformer identity;
  for (const auto& r : world.records("en", 50, "e", 1)) {
    // Only meaningful when the answer's first occurrence is the labelled one.
    if (relocate_answer(r.context, r.answer_text) != r.answer_start) continue;
    const auto out = augment_record(r, identity);
    ASSERT_TRUE(succeeded(out));
    EXPECT_EQ(std::get<QaRecord>(out), r);
  }
}

TEST(AugmentRecord, TransliterationKeepsWordsInOrder) {
  const CodePointShiftTransliterator latin_to_greek("xx", "el", U'a', U'z', 0x03B1 - 'a');
  const auto out = augment_record(sample(), latin_to_greek);
  ASSERT_TRUE(succeeded(out));
  const auto& r = std::get<QaRecord>(out);
  const auto before = text::split_words(sample().context);
  const auto after = text::split_words(r.context);
  ASSERT_EQ(before.size(), after.size());
  const auto back = latin_to_greek.inverse();
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(text::length(before[i]), text::length(after[i]));
    EXPECT_EQ(back.transform(after[i], {}), before[i]);
  }
  EXPECT_EQ(r.answer_start, 6u);
}

TEST(AugmentRecord, WrongSourceLanguageIsAdapterFailure) {
  try {
    augment_record(sample("r", "hi"), UppercaseTranslator());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transformer_failure);
  }
}

TEST(Pivot, IdentityChainIsUnchanged) {
  const IdentityTransformer a, b;
  const TextTransformer* hops[] = {&a, &b};
  const auto out = pivot_chain(sample(), hops);
  ASSERT_TRUE(succeeded(out));
  EXPECT_EQ(std::get<QaRecord>(out), sample());
}

TEST(Pivot, SecondHopDropNamesTheHop) {
  const IdentityTransformer first("xx", "xx");
  const FieldSensitiveStub second("xx", "yy");
  const TextTransformer* hops[] = {&first, &second};
  const auto out = pivot_chain(sample(), hops);
  ASSERT_FALSE(succeeded(out));
  EXPECT_EQ(std::get<Dropped>(out).reason.rfind("hop=2", 0), 0u);
}

TEST(Pivot, ReversibleRoundTripRecoversContext) {
  synth::World world(9);
  const auto there = world.translator("en", "ml");
  const auto back = there.inverse();
  ASSERT_TRUE(there.is_bijective());
  const TextTransformer* hops[] = {&there, &back};
  for (const auto& r : world.records("en", 30, "p", 2)) {
    const auto out = pivot_chain(r, hops);
    ASSERT_TRUE(succeeded(out)) << r.id;
    EXPECT_EQ(std::get<QaRecord>(out).context, r.context);
    EXPECT_EQ(std::get<QaRecord>(out).question, r.question);
    EXPECT_EQ(std::get<QaRecord>(out).language, "en");
  }
}

std::vector<AugmentPlan> two_plans() {
  return {{"XX", TransformKind::translation, {std::make_shared<UppercaseTranslator>()}},
          {"el", TransformKind::transliteration,
           {std::make_shared<CodePointShiftTransliterator>("xx", "el", U'a', U'z', 0x03B1 - 'a')}}};
}

TEST(BuildGroups, AllSucceed) {
  std::vector<QaRecord> records;
  for (int i = 0; i < 4; ++i) records.push_back(sample("r" + std::to_string(i)));
  const auto result = build_groups(records, two_plans());
  ASSERT_EQ(result.groups.size(), 4u);
  for (const auto& g : result.groups) {
    EXPECT_EQ(g.variants.size(), 2u);
    EXPECT_EQ(g.variants.at("XX").id, g.original.id + "::XX");
    EXPECT_EQ(g.provenance.at("el"), TransformKind::transliteration);
    for (const auto& [lang, v] : g.variants) EXPECT_NO_THROW(validate_records({v}));
  }
  const auto t = result.report.total();
  EXPECT_EQ(t.attempted, 8u);
  EXPECT_EQ(t.succeeded, 8u);
  EXPECT_EQ(t.dropped, 0u);
  EXPECT_EQ(result.flatten().size(), 12u);
}

TEST(BuildGroups, OneDropIsReported) {
  std::vector<QaRecord> records = {sample("a"), sample("b"), {"c", "alpha beta", "q", "alpha", 0, "xx"}};
  std::vector<AugmentPlan> plans = two_plans();
  plans.push_back({"yy", TransformKind::translation, {std::make_shared<FieldSensitiveStub>()}});
  const auto result = build_groups(records, plans);
  // Only records whose answer mentions "beta" are broken by the stub.
  EXPECT_EQ(result.groups[2].variants.size(), 3u);
  EXPECT_EQ(result.groups[0].variants.size(), 2u);
  const auto& cell = result.report.cells.at({"yy", TransformKind::translation});
  EXPECT_EQ(cell.attempted, 3u);
  EXPECT_EQ(cell.dropped, 2u);
  EXPECT_EQ(result.report.drop_reasons.at("a::yy"), "hop=1: answer-not-in-context");
  const auto t = result.report.total();
  EXPECT_EQ(t.attempted, t.succeeded + t.dropped);
  const auto j = result.report.to_json();
  EXPECT_EQ(j["total"]["dropped"], 2);
}

TEST(BuildGroups, MissingParallelLineIsAdapterFailure) {
  const auto path = fs::temp_directory_path() / ("mucot-parallel-" + std::to_string(::getpid()) + ".jsonl");
  std::ofstream(path) << R"({"id":"a","field":"context","lang":"ml","text":"x y"})" "\n"
                      << R"({"id":"a","field":"question","lang":"ml","text":"q"})" "\n";
  const std::vector<AugmentPlan> plans = {
      {"ml", TransformKind::translation, {std::make_shared<ParallelCorpusTranslator>("xx", "ml", path)}}};
  try {
    build_groups({sample("a")}, plans);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transformer_failure);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'answer'"), std::string::npos);
    EXPECT_NE(msg.find("'a'"), std::string::npos);
  }
  std::ofstream(path) << "{broken\n";
  try {
    ParallelCorpusTranslator("xx", "ml", path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos);
  }
  fs::remove(path);
}

TEST(BuildGroups, ConservationOverRandomDrops) {
  synth::World world(5);
  auto records = world.records("en", 40, "c", 3);
  const auto result = build_groups(records, {{"ml", TransformKind::translation,
                                              {std::make_shared<DictionaryTranslator>(world.translator("en", "ml"))}},
                                             {"yy", TransformKind::translation,
                                              {std::make_shared<FieldSensitiveStub>("en", "yy")}}});
  const auto t = result.report.total();
  EXPECT_EQ(t.attempted, 80u);
  EXPECT_EQ(t.attempted, t.succeeded + t.dropped);
  std::size_t variants = 0;
  for (const auto& g : result.groups) variants += g.variants.size();
  EXPECT_EQ(variants, t.succeeded);
  EXPECT_EQ(result.report.drop_reasons.size(), t.dropped);
}

TEST(Groups, RebuiltFromFlatRecords) {
  std::vector<QaRecord> records;
  for (int i = 0; i < 3; ++i) records.push_back(sample("r" + std::to_string(i)));
  const auto result = build_groups(records, two_plans());
  const auto rebuilt = groups_from_records(result.flatten());
  ASSERT_EQ(rebuilt.size(), 3u);
  EXPECT_EQ(rebuilt.at("r1").variants.size(), 2u);
  EXPECT_EQ(group_id("r1::el"), "r1");
}

}  // namespace
}  // namespace mucot
