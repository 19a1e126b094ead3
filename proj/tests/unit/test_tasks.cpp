#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "mrp/error.hpp"
#include "mrp/tasks.hpp"
#include "mrp/util.hpp"

using namespace mrp;
using namespace mrp::tasks;

namespace {

TaskSpec small_spec(std::uint64_t seed = 1) {
  TaskSpec s;
  s.num_classes = 8;
  s.feature_dim = 6;
  s.shots = 16;
  s.test_per_class = 5;
  s.base_fraction = 0.5;
  s.seed = seed;
  return s;
}

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

ErrorCode load_error(const std::filesystem::path& dir) {
  try {
    load(dir);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::invalid_argument;
}

}  // namespace

TEST_SUITE("tasks") {

TEST_CASE("split sizes follow the spec") {
  const Dataset d = generate(small_spec());
  CHECK(d.base_classes == std::vector<ClassId>{0, 1, 2, 3});
  CHECK(d.new_classes == std::vector<ClassId>{4, 5, 6, 7});
  CHECK(d.indices(Split::base_train).size() == 64);
  CHECK(d.indices(Split::base_test).size() == 20);
  CHECK(d.indices(Split::new_test).size() == 20);
  for (const Sample& s : d.samples) {
    const bool base = s.label < 4;
    CHECK(base == (s.split != Split::new_test));
  }
  TaskSpec odd = small_spec();
  odd.num_classes = 7;
  CHECK(odd.num_base() == 4);
}

TEST_CASE("generation is deterministic per seed") {
  CHECK(generate(small_spec(5)) == generate(small_spec(5)));
  CHECK(digest(generate(small_spec(5))) == digest(generate(small_spec(5))));
  CHECK(digest(generate(small_spec(5))) != digest(generate(small_spec(6))));
  std::set<std::uint64_t> ids;
  for (const Sample& s : generate(small_spec(5)).samples) CHECK(ids.insert(s.id).second);
}

TEST_CASE("domain shifts") {
  const Dataset d = generate(small_spec(2));
  SUBCASE("identity shifts return the dataset") {
    CHECK(domain_shift(d, DomainShift{}) == d);
    CHECK(domain_shift(d, DomainShift::parse("noise:0")) == d);
    CHECK(domain_shift(d, DomainShift::parse("rotation:0")) == d);
    CHECK(DomainShift::parse("noise:0").kind == DomainShift::Kind::none);
  }
  SUBCASE("shifts touch test features only") {
    const Dataset s = domain_shift(d, DomainShift::parse("noise:0.3"));
    REQUIRE(s.samples.size() == d.samples.size());
    for (std::size_t i = 0; i < s.samples.size(); ++i) {
      CHECK(s.samples[i].id == d.samples[i].id);
      CHECK(s.samples[i].label == d.samples[i].label);
      CHECK(s.samples[i].split == d.samples[i].split);
      const bool same = s.samples[i].features == d.samples[i].features;
      CHECK(same == (d.samples[i].split == Split::base_train));
    }
    CHECK(domain_shift(d, DomainShift::parse("noise:0.3")) == s);
  }
  SUBCASE("noise shifts reuse directions across strengths") {
    const Dataset a = domain_shift(d, DomainShift::parse("noise:0.2"));
    const Dataset b = domain_shift(d, DomainShift::parse("noise:0.4"));
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      for (std::size_t r = 0; r < d.feature_dim(); ++r) {
        const double da = a.samples[i].features[r] - d.samples[i].features[r];
        const double db = b.samples[i].features[r] - d.samples[i].features[r];
        CHECK(db == doctest::Approx(2 * da).epsilon(1e-9));
      }
    }
  }
  SUBCASE("rotations preserve norms") {
    const Dataset s = domain_shift(d, DomainShift::parse("rotation:0.7"));
    bool moved = false;
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      CHECK(std::abs(norm(s.samples[i].features) - norm(d.samples[i].features)) <= 1e-10);
      moved = moved || s.samples[i].features != d.samples[i].features;
    }
    CHECK(moved);
  }
  SUBCASE("descriptor parsing") {
    CHECK(DomainShift::parse("rotation:0.5").to_string() == "rotation:0.5");
    CHECK(DomainShift::parse("none").to_string() == "none");
    CHECK_THROWS_AS(DomainShift::parse("blur:1"), Error);
    CHECK_THROWS_AS(DomainShift::parse("noise:-1"), Error);
    CHECK_THROWS_AS(DomainShift::parse("noise:x"), Error);
  }
}

TEST_CASE("datasets round-trip through disk") {
  const auto dir = testing::temp_dir("tasks");
  TaskSpec spec = small_spec(3);
  spec.shift = DomainShift::parse("rotation:0.25");
  const Dataset d = generate(spec);
  save(d, dir);
  const Dataset back = load(dir);
  CHECK(back == d);
  CHECK(digest(back) == digest(d));
  CHECK(sha256_hex(read_file(dir / "manifest.json") + read_file(dir / "samples.csv")) == digest(d));
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed files are parse errors") {
  const Dataset d = generate(small_spec(4));
  const auto dir = testing::temp_dir("tasks-bad");
  save(d, dir);
  const std::string samples = read_file(dir / "samples.csv");

  SUBCASE("duplicate id") {
    const auto first = samples.find('\n') + 1;
    const auto second = samples.find('\n', first) + 1;
    write_file(dir / "samples.csv", samples + samples.substr(first, second - first));
    try {
      load(dir);
      FAIL("expected parse error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::parse_error);
      CHECK(std::string(e.what()).find("duplicate sample id") != std::string::npos);
    }
  }
  SUBCASE("truncated row") {
    write_file(dir / "samples.csv", samples.substr(0, samples.rfind(',')) + "\n");
    CHECK(load_error(dir) == ErrorCode::parse_error);
  }
  SUBCASE("counts disagree") {
    const auto last = samples.rfind('\n', samples.size() - 2);
    write_file(dir / "samples.csv", samples.substr(0, last + 1));
    CHECK(load_error(dir) == ErrorCode::parse_error);
  }
  SUBCASE("broken manifest") {
    write_file(dir / "manifest.json", "{\"version\": ");
    CHECK(load_error(dir) == ErrorCode::parse_error);
  }
  SUBCASE("missing files") {
    std::filesystem::remove(dir / "samples.csv");
    CHECK(load_error(dir) == ErrorCode::io_error);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid specs are config errors") {
  TaskSpec s = small_spec();
  s.num_classes = 3;
  CHECK_THROWS_AS(s.validate(), Error);
  s = small_spec();
  s.base_fraction = 0.95;
  CHECK_THROWS_AS(s.validate(), Error);
  s = small_spec();
  s.noise_scale = -0.1;
  CHECK_THROWS_AS(generate(s), Error);
}

TEST_CASE("noise scale controls nearest-prototype difficulty") {
  double clean = 0, noisy = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TaskSpec s = small_spec(seed);
    s.feature_dim = 16;
    s.test_per_class = 40;
    s.noise_scale = 0.1;
    clean += nearest_prototype_accuracy(generate(s), Split::base_test);
    s.noise_scale = 1.5;
    noisy += nearest_prototype_accuracy(generate(s), Split::base_test);
  }
  CHECK(clean / 5 >= 99.0);
  CHECK(noisy < clean);
}

}  // TEST_SUITE
