#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "test_util.hpp"
#include "zsvqa/dataset.hpp"
#include "zsvqa/synthetic.hpp"

using namespace zsvqa;

namespace {

bool touches(const Instance& inst, const std::set<std::string>& words) {
  for (const auto& w : inst.question)
    if (words.count(w)) return true;
  for (const auto& choice : inst.choices)
    for (const auto& w : choice)
      if (words.count(w)) return true;
  return false;
}

Instance make_instance(const std::string& id, const std::string& image,
                       const std::string& question,
                       std::array<std::string, 4> choices, int correct = 0) {
  nlohmann::json rec{{"id", id},
                     {"image_id", image},
                     {"type", "what"},
                     {"question", question},
                     {"choices", choices},
                     {"answer_index", correct}};
  return parse_instance(rec);
}

}  // namespace

TEST_CASE("load_dataset reads one record with tokenized choices", "[dataset]") {
  auto dir = testutil::fresh_dir("ds_one");
  testutil::spit(dir / "d.jsonl",
                 R"({"id":"q1","image_id":"img9","type":"where",)"
                 R"("question":"Where is the red Car ?",)"
                 R"("choices":["On the street","In a box","Nowhere","Behind you"],)"
                 R"("answer_index":2})"
                 "\n");
  auto instances = load_dataset((dir / "d.jsonl").string());
  REQUIRE(instances.size() == 1);
  const Instance& inst = instances[0];
  CHECK(inst.id == "q1");
  CHECK(inst.image_id == "img9");
  CHECK(inst.type == QuestionType::where);
  CHECK(inst.question ==
        std::vector<std::string>{"where", "is", "the", "red", "car"});
  CHECK(inst.choices[0] == std::vector<std::string>{"on", "the", "street"});
  CHECK(inst.choices[2] == std::vector<std::string>{"nowhere"});
  CHECK(inst.correct_index == 2);
}

TEST_CASE("load_dataset rejects malformed records with line numbers",
          "[dataset]") {
  auto dir = testutil::fresh_dir("ds_bad");
  const std::string good =
      R"({"id":"a","image_id":"i","type":"what","question":"what is it",)"
      R"("choices":["w","x","y","z"],"answer_index":0})";

  testutil::spit(dir / "three.jsonl",
                 R"({"id":"a","image_id":"i","type":"what",)"
                 R"("question":"what is it","choices":["w","x","y"],)"
                 R"("answer_index":0})"
                 "\n");
  CHECK_THROWS_AS(load_dataset((dir / "three.jsonl").string()), FormatError);

  testutil::spit(dir / "index.jsonl",
                 R"({"id":"a","image_id":"i","type":"what",)"
                 R"("question":"what is it","choices":["w","x","y","z"],)"
                 R"("answer_index":4})"
                 "\n");
  CHECK_THROWS_AS(load_dataset((dir / "index.jsonl").string()), FormatError);

  testutil::spit(dir / "dup.jsonl", good + "\n" + good + "\n");
  CHECK_THROWS_WITH(load_dataset((dir / "dup.jsonl").string()),
                    Catch::Matchers::ContainsSubstring(":2") &&
                        Catch::Matchers::ContainsSubstring("duplicate"));

  testutil::spit(dir / "empty_q.jsonl",
                 R"({"id":"a","image_id":"i","type":"what","question":" ?",)"
                 R"("choices":["w","x","y","z"],"answer_index":0})"
                 "\n");
  CHECK_THROWS_AS(load_dataset((dir / "empty_q.jsonl").string()), FormatError);
}

TEST_CASE("load_dataset matches an independent recount on synthetic data",
          "[dataset]") {
  auto dir = testutil::fresh_dir("ds_recount");
  auto data = make_corpus({.n_instances = 100, .seed = 3});
  save_dataset(data.instances, (dir / "d.jsonl").string());

  auto loaded = load_dataset((dir / "d.jsonl").string());
  REQUIRE(loaded.size() == 100);

  std::map<std::string, int> histogram, reference;
  for (const auto& inst : loaded) ++histogram[std::string(to_string(inst.type))];
  std::ifstream in(dir / "d.jsonl");
  std::string line;
  while (std::getline(in, line))
    ++reference[nlohmann::json::parse(line).at("type").get<std::string>()];
  CHECK(histogram == reference);
}

TEST_CASE("count_word_frequencies counts every occurrence", "[dataset]") {
  Instance inst = make_instance("q", "i", "a a", {"a", "b", "c", "d"});
  auto counts = count_word_frequencies({inst});
  CHECK(counts.at("a") == 3);
  CHECK(counts.at("b") == 1);
  CHECK(counts.at("c") == 1);
  CHECK(counts.at("d") == 1);
  CHECK(counts.size() == 4);

  CHECK(count_word_frequencies({}).empty());
}

TEST_CASE("count_word_frequencies equals brute-force concatenation",
          "[dataset]") {
  auto data = make_corpus({.n_instances = 250, .seed = 9});
  auto counts = count_word_frequencies(data.instances);

  std::unordered_map<std::string, std::size_t> brute;
  for (const auto& inst : data.instances) {
    std::vector<std::string> all = inst.question;
    for (const auto& choice : inst.choices)
      all.insert(all.end(), choice.begin(), choice.end());
    for (const auto& w : all) ++brute[w];
  }
  CHECK(counts == brute);
}

TEST_CASE("select_heldout_words returns disjoint sets of requested sizes",
          "[dataset]") {
  std::unordered_map<std::string, std::size_t> counts{{"a", 1}, {"b", 2}};
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    Rng rng(seed);
    auto [val, test] = select_heldout_words(counts, 20, {{1, 1}}, rng);
    REQUIRE(val.size() == 1);
    REQUIRE(test.size() == 1);
    CHECK(*val.begin() != *test.begin());
  }
}

TEST_CASE("select_heldout_words treats the threshold strictly", "[dataset]") {
  std::unordered_map<std::string, std::size_t> counts{
      {"rare", 19}, {"boundary", 20}, {"common", 100}};
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    Rng rng(seed);
    auto [val, test] = select_heldout_words(counts, 20, std::nullopt, rng);
    std::set<std::string> all = val;
    all.insert(test.begin(), test.end());
    CHECK(all == std::set<std::string>{"rare"});
  }
}

TEST_CASE("select_heldout_words is disjoint over many seeds", "[dataset]") {
  std::unordered_map<std::string, std::size_t> counts;
  for (int i = 0; i < 1000; ++i) counts.emplace("w" + std::to_string(i), 1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    auto [val, test] = select_heldout_words(counts, 20, {{100, 100}}, rng);
    REQUIRE(val.size() == 100);
    REQUIRE(test.size() == 100);
    std::vector<std::string> overlap;
    std::set_intersection(val.begin(), val.end(), test.begin(), test.end(),
                          std::back_inserter(overlap));
    CHECK(overlap.empty());
  }
}

TEST_CASE("select_heldout_words names the pool size when too small",
          "[dataset]") {
  std::unordered_map<std::string, std::size_t> counts{{"a", 1}, {"b", 1}};
  Rng rng(1);
  CHECK_THROWS_WITH(select_heldout_words(counts, 20, {{2, 2}}, rng),
                    Catch::Matchers::ContainsSubstring("2"));
}

TEST_CASE("build_splits routes dual-membership instances to test",
          "[dataset]") {
  std::vector<Instance> dataset{
      make_instance("both", "i1", "what has valword and testword",
                    {"a", "b", "c", "d"}),
      make_instance("valonly", "i2", "what has valword", {"a", "b", "c", "d"}),
      make_instance("testonly", "i3", "what has testword",
                    {"a", "b", "c", "d"}),
      make_instance("plain", "i4", "what has nothing", {"a", "b", "c", "d"}),
  };
  auto splits =
      build_splits(dataset, {"valword"}, {"testword"});
  auto ids = [](const std::vector<Instance>& v) {
    std::set<std::string> out;
    for (const auto& i : v) out.insert(i.id);
    return out;
  };
  CHECK(ids(splits.test) == std::set<std::string>{"both", "testonly"});
  CHECK(ids(splits.val) == std::set<std::string>{"valonly"});
  CHECK(ids(splits.train) == std::set<std::string>{"plain"});
  CHECK(splits.dual_membership == 1);
  CHECK(splits.dropped_image_rule == 0);
}

TEST_CASE("build_splits drops train instances sharing eval images",
          "[dataset]") {
  std::vector<Instance> dataset{
      make_instance("v", "shared", "what has valword", {"a", "b", "c", "d"}),
      make_instance("t", "i2", "what has testword", {"a", "b", "c", "d"}),
      make_instance("gone", "shared", "what has nothing", {"a", "b", "c", "d"}),
      make_instance("kept", "i3", "what has nothing", {"a", "b", "c", "d"}),
  };
  auto splits = build_splits(dataset, {"valword"}, {"testword"});
  REQUIRE(splits.train.size() == 1);
  CHECK(splits.train[0].id == "kept");
  CHECK(splits.dropped_image_rule == 1);
}

TEST_CASE("build_splits fails loudly on empty splits", "[dataset]") {
  std::vector<Instance> dataset{
      make_instance("p1", "i1", "what has nothing", {"a", "b", "c", "d"}),
      make_instance("p2", "i2", "what else", {"a", "b", "c", "d"}),
  };
  CHECK_THROWS_WITH(build_splits(dataset, {}, {}),
                    Catch::Matchers::ContainsSubstring("empty split"));
}

TEST_CASE("build_splits invariants hold on a synthetic corpus by brute force",
          "[dataset]") {
  auto data = make_corpus({.n_instances = 1500, .seed = 21});
  auto counts = count_word_frequencies(data.instances);
  Rng rng(4);
  auto [hv, ht] = select_heldout_words(counts, 20, std::nullopt, rng);
  auto splits = build_splits(data.instances, hv, ht);

  // 1. Held-out sets disjoint.
  std::vector<std::string> overlap;
  std::set_intersection(hv.begin(), hv.end(), ht.begin(), ht.end(),
                        std::back_inserter(overlap));
  CHECK(overlap.empty());

  // 2. Every val/test instance touches its own reserved set.
  for (const auto& inst : splits.val) CHECK(touches(inst, hv));
  for (const auto& inst : splits.test) CHECK(touches(inst, ht));

  // 3. No held-out word of either set occurs anywhere in train.
  std::set<std::string> all_heldout = hv;
  all_heldout.insert(ht.begin(), ht.end());
  for (const auto& inst : splits.train) CHECK_FALSE(touches(inst, all_heldout));

  // 4. Image disjointness between train and val/test.
  std::set<std::string> eval_images;
  for (const auto& inst : splits.val) eval_images.insert(inst.image_id);
  for (const auto& inst : splits.test) eval_images.insert(inst.image_id);
  for (const auto& inst : splits.train)
    CHECK_FALSE(eval_images.count(inst.image_id));

  // Partition: every instance lands in exactly one bucket or is dropped.
  CHECK(splits.train.size() + splits.val.size() + splits.test.size() +
            splits.dropped_image_rule ==
        data.instances.size());
  std::set<std::string> seen;
  for (const auto* part : {&splits.train, &splits.val, &splits.test})
    for (const auto& inst : *part) CHECK(seen.insert(inst.id).second);

  // Coverage: every val/test instance carries >= 1 annotation flag.
  for (const auto* part : {&splits.val, &splits.test})
    for (const auto& inst : *part)
      CHECK(splits.annotations.at(inst.id).any());
}

TEST_CASE("annotate reports where held-out words appear", "[dataset]") {
  Instance in_question =
      make_instance("q", "i", "what is x", {"a", "b", "c", "d"});
  ZsFlags f1 = annotate(in_question, {"x"});
  CHECK(f1 == ZsFlags{true, false, false});

  Instance in_answers =
      make_instance("q", "i", "what is it", {"x here", "b", "x there", "d"}, 0);
  ZsFlags f2 = annotate(in_answers, {"x"});
  CHECK(f2 == ZsFlags{false, true, true});

  ZsFlags f3 = annotate(in_question, {"zebra"});
  CHECK(f3 == ZsFlags{false, false, false});
  CHECK_FALSE(f3.any());
}

TEST_CASE("split statistics equal an independent recount", "[dataset]") {
  auto data = make_corpus({.n_instances = 900, .seed = 31});
  auto counts = count_word_frequencies(data.instances);
  Rng rng(6);
  auto [hv, ht] = select_heldout_words(counts, 20, std::nullopt, rng);
  auto splits = build_splits(data.instances, hv, ht);
  auto stats = split_statistics(splits);

  const std::set<std::string>* heldout[3] = {nullptr, &hv, &ht};
  const std::vector<Instance>* parts[3] = {&splits.train, &splits.val,
                                           &splits.test};
  for (int s = 0; s < 3; ++s) {
    const SplitStats& st = stats.splits[s];
    const auto& part = *parts[s];
    CHECK(st.n_questions == part.size());

    std::set<std::string> images;
    for (const auto& inst : part) images.insert(inst.image_id);
    CHECK(st.n_images == images.size());

    std::array<std::size_t, 6> types{};
    for (const auto& inst : part) ++types[static_cast<std::size_t>(inst.type)];
    CHECK(st.type_counts == types);

    if (heldout[s]) {
      std::size_t with_unseen = 0, in_q = 0, in_correct = 0, in_other = 0;
      for (const auto& inst : part) {
        ZsFlags f = annotate(inst, *heldout[s]);
        with_unseen += f.any();
        in_q += f.zs_in_question;
        in_correct += f.zs_in_correct;
        in_other += f.zs_in_other;
      }
      CHECK(st.n_zs_any == with_unseen);
      CHECK(st.n_zs_question == in_q);
      CHECK(st.n_zs_correct == in_correct);
      CHECK(st.n_zs_other == in_other);
      CHECK(st.n_heldout_words == heldout[s]->size());
      CHECK(with_unseen == part.size());  // Table 1's 100% rows
    }
  }
}

TEST_CASE("percentages print at one decimal", "[dataset]") {
  CHECK(format_pct(1, 3) == "33.3");
  CHECK(format_pct(2, 3) == "66.7");
  CHECK(format_pct(0, 0) == "0.0");
  CHECK(format_pct(1, 1) == "100.0");
}

TEST_CASE("splits survive a save/load round trip", "[dataset]") {
  auto dir = testutil::fresh_dir("ds_roundtrip");
  auto data = make_corpus({.n_instances = 600, .seed = 13});
  auto counts = count_word_frequencies(data.instances);
  Rng rng(2);
  auto [hv, ht] = select_heldout_words(counts, 20, std::nullopt, rng);
  auto splits = build_splits(data.instances, hv, ht);
  save_splits(splits, dir.string());

  auto loaded = load_splits(data.instances, dir.string());
  auto ids = [](const std::vector<Instance>& v) {
    std::vector<std::string> out;
    for (const auto& i : v) out.push_back(i.id);
    return out;
  };
  CHECK(ids(loaded.train) == ids(splits.train));
  CHECK(ids(loaded.val) == ids(splits.val));
  CHECK(ids(loaded.test) == ids(splits.test));
  CHECK(loaded.heldout_val == splits.heldout_val);
  CHECK(loaded.heldout_test == splits.heldout_test);
  CHECK(loaded.dropped_image_rule == splits.dropped_image_rule);
  CHECK(loaded.dual_membership == splits.dual_membership);
  for (const auto& [id, flags] : splits.annotations)
    CHECK(loaded.annotations.at(id) == flags);
}

TEST_CASE("question types parse and reject unknowns", "[dataset]") {
  for (QuestionType t : kQuestionTypes)
    CHECK(parse_question_type(std::string(to_string(t))) == t);
  CHECK_THROWS_AS(parse_question_type("whither"), FormatError);
}
