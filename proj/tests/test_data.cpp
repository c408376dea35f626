#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "mtlta/data.hpp"
#include "mtlta/errors.hpp"

using namespace mtlta;
namespace fs = std::filesystem;

namespace {

using Tokens = std::vector<std::string>;

TaskSpec exist_task() {
  return {"exist", "Sexism detection", {"non-sexist", "sexist"}, std::nullopt, Metric::accuracy};
}

TaskSpec detoxis_task() {
  return {"detoxis", "Toxic Language detection", {"Not-Toxic", "Toxic"}, "Toxic", Metric::f1_positive};
}

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "mtlta_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

}  // namespace

TEST_CASE("tokenize splits punctuation and lowercases") {
  CHECK(tokenize("Hola, mundo") == Tokens{"hola", ",", "mundo"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("   \t ").empty());
  CHECK(tokenize("@ana http://x.co ok") == Tokens{"<user>", "<url>", "ok"});
  CHECK(tokenize("¿Qué PASA?") == Tokens{"¿", "qué", "pasa", "?"});
  CHECK(tokenize("ÁRBOL Ñandú") == Tokens{"árbol", "ñandú"});
  CHECK(tokenize("mira www.ejemplo.es!") == Tokens{"mira", "<url>"});
  CHECK(tokenize("hola @user_1: vale") == Tokens{"hola", "<user>", ":", "vale"});
  CHECK(tokenize("a@") == Tokens{"a", "@"});
}

TEST_CASE("vocabulary numbers tokens in first-seen order after reserved ids") {
  auto v = Vocabulary::build({{"a", "b", "a"}});
  CHECK(v.size() == 4);
  CHECK(v.id("<pad>") == 0);
  CHECK(v.id("<unk>") == 1);
  CHECK(v.id("a") == 2);
  CHECK(v.id("b") == 3);
  CHECK(v.id("zzz") == Vocabulary::kUnk);
  CHECK(v.encode({"b", "q"}) == std::vector<std::size_t>{3, 1});
  CHECK_THROWS_AS(Vocabulary::build({}), DataError);

  auto filtered = Vocabulary::build({{"x", "y", "x"}}, 2);
  CHECK(filtered.contains("x"));
  CHECK_FALSE(filtered.contains("y"));
}

TEST_CASE("vocabulary save and load round-trip") {
  auto v = Vocabulary::build({{"hola", "<sep>", "qué"}, {"tal"}});
  auto p = temp_file("vocab.txt");
  v.save(p);
  auto w = Vocabulary::load(p);
  CHECK(w.tokens() == v.tokens());
}

TEST_CASE("vocabulary built on training folds never contains test-only tokens") {
  Rng rng(3);
  std::vector<Tokens> corpus;
  for (int i = 0; i < 60; ++i) {
    Tokens t;
    for (int j = 0; j < 5; ++j) t.push_back("w" + std::to_string(rng.below(40)));
    corpus.push_back(t);
  }
  auto folds = kfold(corpus.size(), 5, 11);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::set<std::size_t> test(folds[f].begin(), folds[f].end());
    std::vector<Tokens> train;
    std::set<std::string> train_tokens, test_tokens;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      auto& dst = test.count(i) ? test_tokens : train_tokens;
      dst.insert(corpus[i].begin(), corpus[i].end());
      if (!test.count(i)) train.push_back(corpus[i]);
    }
    auto vocab = Vocabulary::build(train);
    for (const auto& tok : test_tokens) {
      if (!train_tokens.count(tok)) CHECK_FALSE(vocab.contains(tok));
    }
  }
}

TEST_CASE("make_tai_input prefixes the task description") {
  auto task = exist_task();
  CHECK(make_tai_input({"hola"}, task, 64) == Tokens{"sexism", "detection", "<sep>", "hola"});
  CHECK(make_tai_input({}, task, 64) == Tokens{"sexism", "detection", "<sep>"});

  Tokens long_ts;
  for (int i = 0; i < 200; ++i) long_ts.push_back("t" + std::to_string(i));
  auto out = make_tai_input(long_ts, task, 64);
  REQUIRE(out.size() == 64);
  CHECK(Tokens(out.begin(), out.begin() + 3) == Tokens{"sexism", "detection", "<sep>"});
  CHECK(Tokens(out.begin() + 3, out.end()) == Tokens(long_ts.begin(), long_ts.begin() + 61));

  CHECK(make_tai_input({"a", "b"}, task, 3) == Tokens{"sexism", "detection", "<sep>"});
  CHECK_THROWS_AS(make_tai_input({"a"}, task, 2), DataError);
}

TEST_CASE("plain input holds only the text snippet") {
  auto task = detoxis_task();
  Tokens ts = tokenize("Eres un idiota");
  auto plain = make_plain_input(ts, 64);
  CHECK(plain == ts);
  for (const auto& tok : tokenize(task.description)) CHECK(std::count(plain.begin(), plain.end(), tok) == 0);
  CHECK(std::count(plain.begin(), plain.end(), std::string(kSepToken)) == 0);
  CHECK(make_plain_input(ts, 2).size() == 2);
}

TEST_CASE("load_tsv reads well-formed files") {
  auto p = temp_file("three.tsv");
  write_text(p, "id\ttext\tlabel\n1\tHola amiga\tNot-Toxic\n2\tEres tonta\tToxic\n3\tBuen día\tNot-Toxic\n");
  auto ex = load_tsv(p, detoxis_task(), 1);
  REQUIRE(ex.size() == 3);
  CHECK(ex[0].id == "1");
  CHECK(ex[1].label == 1);
  CHECK(ex[2].label == 0);
  CHECK(ex[1].tokens == Tokens{"eres", "tonta"});
  CHECK(ex[0].task_index == 1);
}

TEST_CASE("load_tsv rejects unknown labels naming the row") {
  auto p = temp_file("bad_label.tsv");
  write_text(p, "id\ttext\tlabel\n1\tok\tToxic\n2\tmeh\tMaybe\n");
  try {
    load_tsv(p, detoxis_task(), 0);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("Maybe") != std::string::npos);
  }
}

TEST_CASE("load_tsv structural errors") {
  auto missing = temp_file("missing_col.tsv");
  write_text(missing, "id\ttext\n1\thola\n");
  CHECK_THROWS_WITH_AS(load_tsv(missing, detoxis_task(), 0), doctest::Contains("label"), DataError);

  auto empty = temp_file("empty.tsv");
  write_text(empty, "");
  CHECK_THROWS_AS(load_tsv(empty, detoxis_task(), 0), DataError);

  auto tabs = temp_file("tabs.tsv");
  write_text(tabs, "id\ttext\tlabel\n1\thola\tmundo\tToxic\n");
  CHECK_THROWS_AS(load_tsv(tabs, detoxis_task(), 0), DataError);

  CHECK_THROWS_AS(load_tsv(temp_file("does_not_exist.tsv"), detoxis_task(), 0), DataError);
}

TEST_CASE("load_tsv keeps only Spanish rows and reproduces the EXIST test class counts") {
  auto p = temp_file("exist_test.tsv");
  {
    std::ofstream out(p, std::ios::binary);
    out << "id\ttext\tlabel\tlanguage\n";
    int id = 0;
    for (int i = 0; i < 858; ++i) out << id++ << "\ttexto sexista " << i << "\tsexist\tes\n";
    for (int i = 0; i < 812; ++i) out << id++ << "\ttexto neutro " << i << "\tnon-sexist\tes\n";
    for (int i = 0; i < 300; ++i) out << id++ << "\tsome english text\t" << (i % 2 ? "sexist" : "non-sexist") << "\ten\n";
  }
  auto ex = load_tsv(p, exist_task(), 0);
  std::map<std::size_t, int> counts;
  for (const auto& e : ex) counts[e.label]++;
  CHECK(ex.size() == 1670);
  CHECK(counts[1] == 858);
  CHECK(counts[0] == 812);
}

TEST_CASE("write_tsv round-trips through load_tsv") {
  auto task = detoxis_task();
  std::vector<Example> ex = {{"a", "uno dos", {}, 0, 0}, {"b", "¡tres!", {}, 1, 0}};
  auto p = temp_file("roundtrip.tsv");
  write_tsv(p, ex, task);
  auto back = load_tsv(p, task, 0);
  REQUIRE(back.size() == 2);
  CHECK(back[1].text == "¡tres!");
  CHECK(back[1].label == 1);
  ex[0].text = "con\ttab";
  CHECK_THROWS_AS(write_tsv(p, ex, task), DataError);
}

TEST_CASE("kfold sizes and partition") {
  auto f10 = kfold(10, 5, 1);
  for (const auto& f : f10) CHECK(f.size() == 2);

  auto f11 = kfold(11, 5, 1);
  std::vector<std::size_t> sizes;
  for (const auto& f : f11) sizes.push_back(f.size());
  CHECK(sizes == std::vector<std::size_t>{3, 2, 2, 2, 2});

  CHECK_THROWS_AS(kfold(3, 5, 0), DataError);
  CHECK_THROWS_AS(kfold(10, 1, 0), ConfigError);
}

TEST_CASE("kfold is a reproducible partition for many sizes") {
  for (std::size_t n = 5; n < 60; n += 7) {
    for (std::size_t k = 2; k <= 5; ++k) {
      auto folds = kfold(n, k, 42 + n);
      CHECK(folds == kfold(n, k, 42 + n));
      std::multiset<std::size_t> all;
      std::size_t lo = n, hi = 0;
      for (const auto& f : folds) {
        all.insert(f.begin(), f.end());
        lo = std::min(lo, f.size());
        hi = std::max(hi, f.size());
      }
      CHECK(hi - lo <= 1);
      std::multiset<std::size_t> expected;
      for (std::size_t i = 0; i < n; ++i) expected.insert(i);
      CHECK(all == expected);
    }
  }
  CHECK(kfold(30, 5, 1) != kfold(30, 5, 2));
}

namespace {

// Recomputes a synthetic label from the tokens: the lexicon word's polarity, inverted
// by any "not*" marker when the task reads markers.
std::size_t oracle_label(const Tokens& tokens, bool reads_markers, bool& marked) {
  std::size_t polarity = 2, lexicon_words = 0;
  marked = false;
  for (const auto& t : tokens) {
    if (t.starts_with("pos") || t.starts_with("neg")) {
      polarity = t.starts_with("pos") ? 1 : 0;
      ++lexicon_words;
    }
    marked = marked || t.starts_with("not");
  }
  REQUIRE(lexicon_words == 1);
  return reads_markers && marked ? 1 - polarity : polarity;
}

}  // namespace

TEST_CASE("synthetic labels follow their triggers and conflict sets the marked share") {
  for (double conflict : {0.0, 0.3, 0.6, 1.0}) {
    SynthConfig sc;
    sc.conflict = conflict;
    sc.seed = 9;
    const auto corpus = synthesize_tasks(sc);
    REQUIRE(corpus.tasks.size() == 2);
    std::set<std::string> words;
    for (std::size_t t = 0; t < 2; ++t) {
      std::size_t marked_count = 0, positives = 0;
      for (const auto& ex : corpus.examples[t]) {
        bool marked = false;
        CHECK(ex.label == oracle_label(ex.tokens, t == 1, marked));
        CHECK(ex.task_index == t);
        CHECK(tokenize(ex.text) == ex.tokens);
        marked_count += marked;
        positives += ex.label;
        words.insert(ex.tokens.begin(), ex.tokens.end());
      }
      CHECK(positives == 250);
      const double share = static_cast<double>(marked_count) / 500.0;
      CHECK(std::abs(share - conflict) <= 0.07);
      if (conflict == 0.0) CHECK(marked_count == 0);
    }
    CHECK(words.size() <= sc.vocab_size);
  }
}

TEST_CASE("synthetic corpus is a pure function of its config") {
  SynthConfig sc;
  sc.conflict = 1.0;
  sc.seed = 4;
  const auto a = synthesize_tasks(sc), b = synthesize_tasks(sc);
  for (std::size_t t = 0; t < 2; ++t) {
    REQUIRE(a.examples[t].size() == b.examples[t].size());
    for (std::size_t i = 0; i < a.examples[t].size(); ++i) {
      CHECK(a.examples[t][i].text == b.examples[t][i].text);
      CHECK(a.examples[t][i].label == b.examples[t][i].label);
    }
  }
  sc.seed = 5;
  CHECK(synthesize_tasks(sc).examples[0][0].text != a.examples[0][0].text);
}

TEST_CASE("synthetic generator rejects degenerate configs") {
  SynthConfig sc;
  sc.n_per_task = 15;
  CHECK_THROWS_AS(synthesize_tasks(sc), ConfigError);
  sc.n_per_task = 16;
  sc.vocab_size = 7;
  CHECK_THROWS_AS(synthesize_tasks(sc), ConfigError);
  sc.vocab_size = 8;
  CHECK_NOTHROW(synthesize_tasks(sc));
  sc.conflict = 1.5;
  CHECK_THROWS_AS(synthesize_tasks(sc), ConfigError);
}
