#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <string>
#include <vector>

#include "porter_reference.hpp"
#include "zsvqa/synthetic.hpp"
#include "zsvqa/textproc.hpp"

using namespace zsvqa;

TEST_CASE("tokenize lowercases and strips sentence punctuation", "[textproc]") {
  CHECK(tokenize("What color are the barricades ?") ==
        std::vector<std::string>{"what", "color", "are", "the", "barricades"});
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("12:09") == std::vector<std::string>{"12:09"});
}

TEST_CASE("tokenize keeps interior symbols and splits on whitespace",
          "[textproc]") {
  CHECK(tokenize("  spaced   out  ") ==
        std::vector<std::string>{"spaced", "out"});
  CHECK(tokenize("Stop, now!") == std::vector<std::string>{"stop", "now"});
  CHECK(tokenize("A.") == std::vector<std::string>{"a"});
}

TEST_CASE("porter_stem collapses morphological variants", "[textproc]") {
  CHECK(porter_stem("flowers") == "flower");
  CHECK(porter_stem("flower") == "flower");
  CHECK(porter_stem("flowering") == "flower");
  CHECK(porter_stem("running") == "run");
  CHECK(porter_stem("ponies") == "poni");
}

TEST_CASE("porter_stem matches the reference list exactly", "[textproc]") {
  const auto pairs = porter_reference_pairs();
  REQUIRE(pairs.size() >= 100);
  std::size_t agree = 0;
  for (const auto& [word, stem] : pairs) {
    if (porter_stem(word) == stem)
      ++agree;
    else
      UNSCOPED_INFO(word << " -> " << porter_stem(word) << " expected "
                         << stem);
  }
  CHECK(agree == pairs.size());
}

TEST_CASE("stem map merges variants and identity keeps vocab size",
          "[textproc]") {
  StemMap porter = build_stem_map({"flower", "flowers"}, StemAlgorithm::porter);
  CHECK(porter.apply("flower") == "flower");
  CHECK(porter.apply("flowers") == "flower");
  CHECK(porter.distinct_stems() == 1);

  std::vector<std::string> vocab{"alpha", "beta", "gamma", "gammas"};
  StemMap ident = build_stem_map(vocab, StemAlgorithm::identity);
  CHECK(ident.distinct_stems() == vocab.size());
  for (const auto& w : vocab) CHECK(ident.apply(w) == w);
}

TEST_CASE("stem map distinct-stem count equals brute force on corpus vocab",
          "[textproc]") {
  auto data = make_corpus({.n_instances = 300, .seed = 17});
  std::set<std::string> vocab;
  for (const auto& inst : data.instances) {
    for (const auto& w : inst.question) vocab.insert(w);
    for (const auto& choice : inst.choices)
      for (const auto& w : choice) vocab.insert(w);
  }
  std::vector<std::string> words(vocab.begin(), vocab.end());
  StemMap map = build_stem_map(words, StemAlgorithm::porter);

  std::set<std::string> brute;
  for (const auto& w : words) brute.insert(porter_stem(w));
  CHECK(map.distinct_stems() == brute.size());

  auto keys = map.stem_keys();
  CHECK(std::set<std::string>(keys.begin(), keys.end()) == brute);
}

TEST_CASE("stem map falls back to on-the-fly stemming for unseen words",
          "[textproc]") {
  StemMap map = build_stem_map({"car"}, StemAlgorithm::porter);
  CHECK(map.apply("connections") == porter_stem("connections"));
  CHECK(map.apply("happiness") == porter_stem("happiness"));

  StemMap ident = build_stem_map({"car"}, StemAlgorithm::identity);
  CHECK(ident.apply("connections") == "connections");
}

TEST_CASE("stem algorithm tags parse and reject unknowns", "[textproc]") {
  CHECK(parse_stem_algorithm("porter") == StemAlgorithm::porter);
  CHECK(parse_stem_algorithm("identity") == StemAlgorithm::identity);
  CHECK(parse_stem_algorithm("none") == StemAlgorithm::identity);
  CHECK_THROWS_AS(parse_stem_algorithm("snowball"), ConfigError);
}
