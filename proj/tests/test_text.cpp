#include "eqdiff/text.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace eqdiff;
namespace fs = std::filesystem;

TEST_CASE("golden caption edits") {
  auto rules = builtin_rules();
  CHECK(normalize_caption("a ped crossing the road", rules) == "a pedestrians crossing the road");
  CHECK(normalize_caption("cars with hidden ped ahead", rules) == "cars with ahead");
  CHECK(normalize_caption("two cars waiting at the intersection", rules) ==
        "two cars at the intersection");
  // contradictory directions: first mention wins
  CHECK(normalize_caption("turn left then turn right", rules) == "turn left then");
  CHECK(normalize_caption("turn right then turn left", rules) == "turn right then");
  // a caption touched by several rules at once
  CHECK(normalize_caption("Ped waiting at the intersection.", rules) ==
        "pedestrians at the intersection");
}

TEST_CASE("normalization is idempotent") {
  auto rules = builtin_rules();
  for (const char* raw : {"a ped crossing the road", "cars with hidden ped ahead",
                          "two cars waiting at the intersection", "turn left then turn right",
                          "Heavy TRAFFIC, many peds; turn left... or turn right?", ""}) {
    std::string once = normalize_caption(raw, rules);
    CHECK(normalize_caption(once, rules) == once);
  }
}

TEST_CASE("tokenization lowercases and strips punctuation") {
  auto rules = builtin_rules();
  CHECK(normalize_caption("  A    Car,   a TRUCK!! ", rules) == "a car a truck");
  CHECK(normalize_caption("...", rules) == "");
}

TEST_CASE("rule files parse, order by priority, and reject garbage") {
  fs::path dir = fs::temp_directory_path() / "eqdiff_rules_test";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "rules.tsv");
    f << "# comment line\n";
    f << "20\treplace_word\tcar\tvehicle\n";
    f << "10\treplace_phrase\tred car\tfire truck\n";
  }
  auto rules = load_rules(dir / "rules.tsv");
  REQUIRE(rules.size() == 2);
  // the phrase rule runs first (priority 10), so "red car" never becomes "red vehicle"
  CHECK(normalize_caption("a red car and a car", rules) == "a fire truck and a vehicle");
  {
    std::ofstream f(dir / "bad.tsv");
    f << "5\tno_such_kind\tx\ty\n";
  }
  CHECK_THROWS_AS(load_rules(dir / "bad.tsv"), DataError);
  {
    std::ofstream f(dir / "short.tsv");
    f << "5\treplace_word\n";
  }
  CHECK_THROWS_AS(load_rules(dir / "short.tsv"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("caption manifest loading with duplicate frames") {
  fs::path dir = fs::temp_directory_path() / "eqdiff_manifest_test";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "caps.tsv");
    f << "# fixture\n";
    f << "frame_000\ta ped near a car\n";
    f << "frame_001\tturn left then turn right\n";
    f << "frame_000\ttwo peds\n";  // duplicate: last wins
  }
  auto res = load_pairs(dir / "caps.tsv", builtin_rules());
  CHECK(res.duplicate_warnings == 1);
  REQUIRE(res.records.size() == 2);
  CHECK(res.records[0].frame_id == "frame_000");
  CHECK(res.records[0].normalized == "two pedestrians");
  CHECK(res.records[1].normalized == "turn left then");
  {
    std::ofstream f(dir / "bad.tsv");
    f << "no-tab-here\n";
  }
  CHECK_THROWS_AS(load_pairs(dir / "bad.tsv", builtin_rules()), DataError);
  fs::remove_all(dir);
}

TEST_CASE("hashed bag-of-words embedding properties") {
  auto e = embed_hashed_bow("a car on the road", 64);
  CHECK(e.provider == "hashed_bow");
  CHECK(e.vector.size() == 64);
  double norm = 0;
  for (double v : e.vector) norm += v * v;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  // deterministic, word-order insensitive, content sensitive
  CHECK(embed_hashed_bow("a car on the road", 64).vector == e.vector);
  CHECK(embed_hashed_bow("the road on a car", 64).vector == e.vector);
  CHECK(embed_hashed_bow("a truck on the road", 64).vector != e.vector);
  // empty caption: zero vector, tagged provider
  auto empty = embed_hashed_bow("", 64);
  CHECK(empty.provider == "empty");
  for (double v : empty.vector) CHECK(v == 0.0);
}

TEST_CASE("embedding bank write, open, lookup") {
  fs::path dir = fs::temp_directory_path() / "eqdiff_bank_test";
  fs::create_directories(dir);
  std::vector<std::pair<std::string, std::vector<double>>> entries = {
      {"a car", {1.0, 2.0, 3.0}},
      {"a truck", {-1.0, 0.5, 0.25}},
  };
  EmbeddingBank::write(dir / "bank", entries, 3);
  EmbeddingBank bank = EmbeddingBank::open(dir / "bank");
  CHECK(bank.dim() == 3);
  auto e = bank.lookup("a truck");
  CHECK(e.provider == "file_lookup");
  CHECK(e.vector == std::vector<double>{-1.0, 0.5, 0.25});
  CHECK_THROWS_WITH_AS(bank.lookup("a boat"), doctest::Contains("a boat"), DataError);
  CHECK(embed_text("a car", "file_lookup", 3, &bank).vector == std::vector<double>{1.0, 2.0, 3.0});
  CHECK_THROWS_AS(embed_text("a car", "file_lookup", 3, nullptr), DataError);
  CHECK_THROWS_AS(embed_text("a car", "clip", 3, nullptr), DataError);
  fs::remove_all(dir);
}

TEST_CASE("token frequencies from normalized records") {
  std::vector<CaptionRecord> recs = {{"f0", "", "a car and a bus"}, {"f1", "", "a car"}};
  auto freq = token_frequencies(recs);
  CHECK(freq["a"] == 3);
  CHECK(freq["car"] == 2);
  CHECK(freq["bus"] == 1);
}
