#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fiml/data.hpp"

using namespace fiml;
namespace fs = std::filesystem;

namespace {

data::FamilyConfig small_family() {
  data::FamilyConfig c;
  c.classes = 12;
  c.dim = 8;
  c.split = {6, 3, 3};
  return c;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("fiml_test_data_" + name);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

}  // namespace

TEST_CASE("class partitions are disjoint and cover every class") {
  const auto fam = data::TaskFamily::generate(small_family(), 1);
  std::set<std::size_t> all;
  std::size_t total = 0;
  for (auto s : {data::Split::Train, data::Split::Validation, data::Split::Test}) {
    const auto cls = fam.split_classes(s);
    total += cls.size();
    all.insert(cls.begin(), cls.end());
  }
  CHECK(total == 12);
  CHECK(all.size() == 12);
}

TEST_CASE("episodes are class-major, use split classes and keep support and query disjoint") {
  const auto fam = data::TaskFamily::generate(small_family(), 2);
  const auto ep = data::sample_episode(fam, data::Split::Test, 3, 2, 4, 77);
  CHECK(ep.support.shape() == Shape{6, 8});
  CHECK(ep.query.shape() == Shape{12, 8});
  const auto test_classes = fam.split_classes(data::Split::Test);
  for (auto c : ep.classes) CHECK(std::count(test_classes.begin(), test_classes.end(), c) == 1);
  for (std::size_t i = 0; i < ep.support_size(); ++i) CHECK(ep.support_labels[i] == i / 2);
  for (std::size_t i = 0; i < ep.query_size(); ++i) CHECK(ep.query_labels[i] == i / 4);
  std::set<std::pair<std::size_t, std::uint64_t>> seen(ep.support_ids.begin(), ep.support_ids.end());
  for (const auto& id : ep.query_ids) CHECK(seen.count(id) == 0);
}

TEST_CASE("episodes are a pure function of their seed") {
  const auto fam = data::TaskFamily::generate(small_family(), 3);
  const auto a = data::sample_episode(fam, data::Split::Train, 5, 1, 3, 9);
  const auto b = data::sample_episode(fam, data::Split::Train, 5, 1, 3, 9);
  const auto c = data::sample_episode(fam, data::Split::Train, 5, 1, 3, 10);
  CHECK(a.support == b.support);
  CHECK(a.query == b.query);
  CHECK_FALSE(a.support == c.support);
}

TEST_CASE("permuting classes relabels samples consistently") {
  const auto fam = data::TaskFamily::generate(small_family(), 4);
  const auto ep = data::sample_episode(fam, data::Split::Train, 3, 2, 2, 5);
  const std::vector<std::size_t> perm{2, 0, 1};
  const auto pe = data::permute_classes(ep, perm);
  for (std::size_t i = 0; i < 3; ++i) CHECK(pe.classes[i] == ep.classes[perm[i]]);
  // every (class, example) keeps its dataset class after relabeling
  for (std::size_t j = 0; j < pe.support_size(); ++j) CHECK(pe.classes[pe.support_labels[j]] == pe.support_ids[j].first);
  for (std::size_t j = 0; j < pe.query_size(); ++j) CHECK(pe.classes[pe.query_labels[j]] == pe.query_ids[j].first);
}

TEST_CASE("asking for more classes than a split holds is a config error") {
  const auto fam = data::TaskFamily::generate(small_family(), 5);
  CHECK_THROWS_AS(data::sample_episode(fam, data::Split::Test, 5, 1, 1, 0), ConfigError);
}

TEST_CASE("FSDT round trip is exact") {
  const auto fam = data::TaskFamily::generate(small_family(), 6);
  const auto path = temp_file("roundtrip.fsdt");
  data::save_dataset(fam, path, 7);
  const auto loaded = data::load_dataset(path);
  const auto mat = fam.materialize(7);
  CHECK(loaded.inputs() == mat.inputs());
  CHECK(loaded.labels() == mat.labels());
  CHECK(loaded.split_classes(data::Split::Test) == mat.split_classes(data::Split::Test));
  const auto a = data::sample_episode(loaded, data::Split::Train, 3, 2, 3, 1);
  const auto b = data::sample_episode(mat, data::Split::Train, 3, 2, 3, 1);
  CHECK(a.support == b.support);
  fs::remove(path);
}

TEST_CASE("FSDT corruption, truncation and unknown versions are detected") {
  const auto fam = data::TaskFamily::generate(small_family(), 7);
  const auto path = temp_file("corrupt.fsdt");
  data::save_dataset(fam, path, 3);
  const std::string good = read_bytes(path);

  std::string flipped = good;
  flipped[good.size() / 2] ^= 0x10;
  write_bytes(path, flipped);
  CHECK_THROWS_AS(data::load_dataset(path), FormatError);

  write_bytes(path, good.substr(0, good.size() - 9));
  CHECK_THROWS_AS(data::load_dataset(path), FormatError);

  std::string version = good;
  version[4] = 9;
  write_bytes(path, version);
  CHECK_THROWS_AS(data::load_dataset(path), UnsupportedVersionError);

  std::string magic = good;
  magic[0] = 'X';
  write_bytes(path, magic);
  CHECK_THROWS_AS(data::load_dataset(path), FormatError);

  fs::remove(path);
  CHECK_THROWS_AS(data::load_dataset(path), IoError);
}

TEST_CASE("shared cells repeat one scaled template per class") {
  auto cfg = small_family();
  cfg.shared_cells = true;
  cfg.cell_scales = {1.0, 2.0};
  cfg.within_std = 0;
  const auto fam = data::TaskFamily::generate(cfg, 8);
  const Tensor x = fam.example(0, 0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(x[4 + i] == doctest::Approx(2 * x[i]));
}
