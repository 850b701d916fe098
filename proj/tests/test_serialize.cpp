#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "dtts/serialize.hpp"

using namespace dtts;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / ("dtts_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(out);
  out << text;
}

// nudge every parameter so the checkpoint isn't a fresh init
void jitter(Model<float>& m, std::uint64_t seed) {
  std::mt19937 rng(static_cast<unsigned>(seed));
  std::uniform_real_distribution<float> d(-0.05f, 0.05f);
  for (const auto& [name, var] : m.params()) {
    for (auto& v : m.tape().mutable_val(var).data) v += d(rng);
  }
}

}  // namespace

TEST_CASE("model checkpoint round-trips bitwise and preserves synthesis") {
  TempDir td;
  Model<float> m(ModelConfig::tiny(), 21);
  jitter(m, 5);
  PhonemeSequence ph{{1, 4, 2}, {3, 3, 4}};
  auto before = m.synthesize(ph);

  const auto p1 = td.path("a.dtts");
  save_model(m, p1);
  auto loaded = load_model(p1);

  nlohmann::json cfg_a = m.config(), cfg_b = loaded.config();
  CHECK(cfg_a.dump() == cfg_b.dump());

  const auto& pa = m.params();
  const auto& pb = loaded.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    const auto& ta = m.tape().val(pa[i].second);
    const auto& tb = loaded.tape().val(pb[i].second);
    REQUIRE(ta.shape == tb.shape);
    CHECK(std::memcmp(ta.data.data(), tb.data.data(), ta.data.size() * sizeof(float)) == 0);
  }

  auto after = loaded.synthesize(ph);
  REQUIRE(after.shape == before.shape);
  CHECK(std::memcmp(after.data.data(), before.data.data(), after.data.size() * sizeof(float)) == 0);

  // save -> load -> save produces identical bytes
  const auto p2 = td.path("b.dtts");
  save_model(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("non-ar checkpoints carry their variant") {
  TempDir td;
  auto cfg = ModelConfig::tiny();
  cfg.variant = DecoderVariant::nonar;
  Model<float> m(cfg, 22);
  const auto p = td.path("n.dtts");
  save_model(m, p);
  auto loaded = load_model(p);
  CHECK(loaded.config().variant == DecoderVariant::nonar);
  CHECK(loaded.params().size() == m.params().size());
}

TEST_CASE("checkpoint reader rejects damage with located errors") {
  TempDir td;
  Model<float> m(ModelConfig::tiny(), 23);
  const auto p = td.path("m.dtts");
  save_model(m, p);
  auto bytes = slurp(p);

  CHECK_THROWS_WITH_AS(load_model(td.path("absent.dtts")), doctest::Contains("cannot open"),
                       std::runtime_error);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  spit(td.path("magic.dtts"), bad_magic);
  CHECK_THROWS_WITH_AS(load_model(td.path("magic.dtts")),
                       doctest::Contains("bad magic at byte 0"), std::runtime_error);

  auto bad_version = bytes;
  bad_version[4] = 9;
  spit(td.path("ver.dtts"), bad_version);
  CHECK_THROWS_WITH_AS(load_model(td.path("ver.dtts")),
                       doctest::Contains("unsupported model format version"), std::runtime_error);

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  spit(td.path("trunc.dtts"), truncated);
  CHECK_THROWS_WITH_AS(load_model(td.path("trunc.dtts")), doctest::Contains("truncated at byte"),
                       std::runtime_error);

  // flip one name to a same-length stranger
  const std::string needle = "embedding.table";
  auto it = std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end());
  REQUIRE(it != bytes.end());
  auto renamed = bytes;
  renamed[static_cast<std::size_t>(it - bytes.begin())] = 'x';
  spit(td.path("name.dtts"), renamed);
  CHECK_THROWS_WITH_AS(load_model(td.path("name.dtts")), doctest::Contains("unknown tensor"),
                       std::runtime_error);
}

TEST_CASE("feature files round-trip bitwise with their profile tag") {
  TempDir td;
  std::mt19937 rng(31);
  FeatureMatrix fm{uniform<float>({7, 23}, -1, 1, rng), FeatureProfile::lpcnet23};
  const auto p = td.path("f.dttf");
  write_features(fm, p);
  auto back = read_features(p);
  CHECK(back.profile == FeatureProfile::lpcnet23);
  REQUIRE(back.frames.shape == fm.frames.shape);
  CHECK(std::memcmp(back.frames.data.data(), fm.frames.data.data(),
                    fm.frames.data.size() * sizeof(float)) == 0);

  // zero frames is a legal, loadable file
  FeatureMatrix empty{Tensor<float>({0, 4}), FeatureProfile::custom};
  const auto pe = td.path("empty.dttf");
  write_features(empty, pe);
  auto eb = read_features(pe);
  CHECK(eb.frames.rows() == 0);
  CHECK(eb.frames.cols() == 4);
}

TEST_CASE("feature reader enforces the profile's dimension") {
  TempDir td;
  std::mt19937 rng(32);
  FeatureMatrix good{uniform<float>({3, 67}, -1, 1, rng), FeatureProfile::world67};
  const auto p = td.path("w.dttf");
  write_features(good, p);
  auto bytes = slurp(p);

  // profile tag says world67 but the dim field says 5
  FeatureMatrix custom{uniform<float>({3, 5}, -1, 1, rng), FeatureProfile::custom};
  const auto pc = td.path("c.dttf");
  write_features(custom, pc);
  auto cbytes = slurp(pc);
  cbytes[8] = 0;  // profile byte: world67
  spit(td.path("lie.dttf"), cbytes);
  CHECK_THROWS_WITH_AS(read_features(td.path("lie.dttf")),
                       doctest::Contains("declares world67 but dim is 5"), std::runtime_error);

  auto bad_tag = bytes;
  bad_tag[8] = 7;
  spit(td.path("tag.dttf"), bad_tag);
  CHECK_THROWS_WITH_AS(read_features(td.path("tag.dttf")),
                       doctest::Contains("unknown feature profile tag"), std::runtime_error);

  auto trunc = bytes;
  trunc.resize(trunc.size() - 10);
  spit(td.path("ft.dttf"), trunc);
  CHECK_THROWS_WITH_AS(read_features(td.path("ft.dttf")), doctest::Contains("truncated"),
                       std::runtime_error);
}

TEST_CASE("utterance text: symbol table mode") {
  TempDir td;
  SymbolTable table;
  table.to_id = {{"ni3", 0}, {"hao3", 1}, {"shi4", 2}};
  const auto p = td.path("u.txt");
  write_text(p, "ni3 hao3\n\nshi4 ni3 hao3\nni3:5 hao3:3\n");

  auto lines = read_phoneme_lines(p, table);
  REQUIRE(lines.size() == 3);  // blank line skipped
  CHECK(lines[0].ids == std::vector<std::int64_t>{0, 1});
  CHECK_FALSE(lines[0].has_durations());
  CHECK(lines[1].ids == std::vector<std::int64_t>{2, 0, 1});
  CHECK(lines[2].ids == std::vector<std::int64_t>{0, 1});
  CHECK(lines[2].gold_durations == std::vector<std::int64_t>{5, 3});

  // mixing annotated and bare tokens within a line is rejected
  write_text(p, "ni3 hao3\nshi4\nshi4 ni3:4 hao3\n");
  CHECK_THROWS_WITH_AS(read_phoneme_lines(p, table),
                       doctest::Contains("line 3: mixes tokens with and without durations"),
                       std::runtime_error);

  write_text(p, "ni3 hao3\n");
  auto first = read_phonemes(p, table);
  CHECK(first.ids == std::vector<std::int64_t>{0, 1});

  write_text(p, "ni3 zao3\n");
  CHECK_THROWS_WITH_AS(read_phonemes(p, table), doctest::Contains("unknown symbol"),
                       std::runtime_error);
}

TEST_CASE("utterance text: numeric-id mode and malformed input") {
  TempDir td;
  SymbolTable empty;
  const auto p = td.path("n.txt");

  write_text(p, "1 4 2\n7:3 5:2\n");
  auto lines = read_phoneme_lines(p, empty);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0].ids == std::vector<std::int64_t>{1, 4, 2});
  CHECK(lines[1].ids == std::vector<std::int64_t>{7, 5});
  CHECK(lines[1].gold_durations == std::vector<std::int64_t>{3, 2});

  write_text(p, "1 -4\n");
  CHECK_THROWS_WITH_AS(read_phonemes(p, empty), doctest::Contains("negative symbol id"),
                       std::runtime_error);

  write_text(p, "1 4x\n");
  CHECK_THROWS_WITH_AS(read_phonemes(p, empty), doctest::Contains("line 1"), std::runtime_error);

  write_text(p, "1:0 4:2\n");
  CHECK_THROWS_WITH_AS(read_phonemes(p, empty), doctest::Contains("duration must be >= 1"),
                       std::runtime_error);

  write_text(p, "1:2 4:x\n");
  CHECK_THROWS_AS(read_phonemes(p, empty), std::runtime_error);

  write_text(p, "\n\n");
  CHECK_THROWS_WITH_AS(read_phonemes(p, empty), doctest::Contains("contains no utterances"),
                       std::runtime_error);

  CHECK_THROWS_WITH_AS(read_phonemes(td.path("missing.txt"), empty),
                       doctest::Contains("cannot open"), std::runtime_error);
}
