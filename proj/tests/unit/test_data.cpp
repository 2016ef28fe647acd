#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "kinadapt/data.hpp"

using namespace kinadapt;
using testutil::random_array;

namespace {

Trial make_trial(const std::string& id, std::size_t channels, std::size_t time, Rng& rng,
                 std::optional<std::size_t> label = std::nullopt) {
  Trial t;
  t.id = id;
  t.subject = "S1";
  t.session = 1;
  t.repetition = 1;
  t.label = label;
  t.data = random_array({channels, time}, rng, -5, 5);
  return t;
}

Dataset make_dataset(const ChannelSchema& schema, std::size_t n, std::size_t time, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.schema = schema;
  for (std::size_t i = 0; i < n; ++i)
    ds.trials.push_back(make_trial("t" + std::to_string(i), schema.size(), time, rng, i % 2));
  return ds;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("channel descriptors round trip") {
  for (const auto& d : ChannelSchema::source76().channels)
    CHECK(ChannelDescriptor::parse(d.to_string()) == d);
  CHECK(ChannelDescriptor::parse("PSM-L.cartesian-position.0").manipulator == Manipulator::psm_left);
  CHECK_THROWS_AS(ChannelDescriptor::parse("PSM-L.cartesian-position"), DataError);
  CHECK_THROWS_AS(ChannelDescriptor::parse("XYZ.cartesian-position.0"), DataError);
  CHECK_THROWS_AS(ChannelDescriptor::parse("PSM-L.cartesian-position.3"), DataError);
}

TEST_CASE("built-in schemas") {
  const auto src = ChannelSchema::source76();
  const auto common = ChannelSchema::common48();
  CHECK(src.size() == 76);
  CHECK(common.size() == 48);
  std::set<std::string> names;
  for (const auto& d : src.channels) names.insert(d.to_string());
  CHECK(names.size() == 76);
  for (const auto& d : common.channels) {
    CHECK(src.index_of(d).has_value());
    CHECK(d.quantity != Quantity::linear_velocity);
  }
  CHECK(ChannelSchema::resolve("common48") == common);
  CHECK(ChannelSchema::prefix(3).size() == 3);
}

TEST_CASE("schema files") {
  testutil::TempDir dir("schema");
  ChannelSchema::common48().save(dir / "s.txt");
  CHECK(ChannelSchema::load(dir / "s.txt") == ChannelSchema::common48());
  testutil::write_text(dir / "dup.txt", "# comment\nPSM-L.cartesian-position.0\nPSM-L.cartesian-position.0\n");
  CHECK_THROWS_AS(ChannelSchema::load(dir / "dup.txt"), DataError);
}

TEST_CASE("alignment selects the shared channels by descriptor") {
  const auto src = make_dataset(ChannelSchema::source76(), 2, 5, 1);
  const auto out = align_channels(src, ChannelSchema::common48());
  REQUIRE(out.schema == ChannelSchema::common48());
  for (std::size_t c = 0; c < 48; ++c) {
    const auto from = *src.schema.index_of(out.schema.channels[c]);
    for (std::size_t t = 0; t < 5; ++t)
      CHECK(out.trials[0].data.at(c, t) == src.trials[0].data.at(from, t));
  }
  const auto small = make_dataset(ChannelSchema::prefix(3), 1, 5, 2);
  CHECK_THROWS_AS(align_channels(small, ChannelSchema::common48()), DataError);
}

TEST_CASE("downsampling") {
  Rng rng(3);
  auto t = make_trial("a", 2, 900, rng);
  t.sample_rate_hz = 30.0;
  const auto d = downsample(t, 30);
  CHECK(d.length() == 30);
  CHECK(d.sample_rate_hz == 1.0);
  for (std::size_t k = 0; k < 30; ++k) CHECK(d.data.at(1, k) == t.data.at(1, 30 * k));
  const auto avg = downsample(t, 30, DownsampleMode::average);
  double acc = 0.0;
  for (std::size_t k = 0; k < 30; ++k) acc += t.data.at(0, k);
  CHECK(avg.data.at(0, 0) == doctest::Approx(acc / 30.0).epsilon(1e-12));
  auto odd = make_trial("b", 1, 31, rng);
  CHECK(downsample(odd, 30).length() == 2);
  auto short_trial = make_trial("c", 1, 10, rng);
  CHECK_THROWS_AS(downsample(short_trial, 30), DataError);
  CHECK_THROWS_AS(downsample(t, 0), ConfigError);
}

TEST_CASE("pooled normalization") {
  auto ds = make_dataset(ChannelSchema::prefix(4), 5, 37, 4);
  const auto [norm, stats] = normalize(ds);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0, ss = 0.0, n = 0.0;
    for (const auto& t : norm.trials)
      for (std::size_t k = 0; k < t.length(); ++k) {
        s += t.data.at(c, k);
        n += 1.0;
      }
    const double mu = s / n;
    for (const auto& t : norm.trials)
      for (std::size_t k = 0; k < t.length(); ++k) ss += (t.data.at(c, k) - mu) * (t.data.at(c, k) - mu);
    CHECK(std::abs(mu) <= 1e-9);
    CHECK(std::abs(std::sqrt(ss / n) - 1.0) <= 1e-9);
  }
  // Reusing stats reproduces the same transform; constant channels get std 1.
  CHECK(normalize(ds, stats).first.trials[2].data == norm.trials[2].data);
  Dataset flat;
  flat.schema = ChannelSchema::prefix(1);
  Trial t;
  t.id = "f";
  t.data = NdArray::filled({1, 4}, 3.0);
  flat.trials.push_back(t);
  CHECK(normalize(flat).first.trials[0].data == NdArray::filled({1, 4}, 0.0));
}

TEST_CASE("stratified split is deterministic and keeps every class") {
  const auto ds = make_dataset(ChannelSchema::prefix(2), 20, 4, 5);
  const auto [tr, va] = split_validation(ds, 0.2, 1);
  const auto [tr2, va2] = split_validation(ds, 0.2, 1);
  CHECK(tr.size() + va.size() == 20);
  CHECK(va.size() == 4);
  std::size_t ones = 0;
  for (const auto& t : va.trials) ones += *t.label;
  CHECK(ones == 2);
  for (std::size_t i = 0; i < va.size(); ++i) CHECK(va.trials[i].id == va2.trials[i].id);
  CHECK_THROWS_AS(split_validation(ds, 1.0, 1), ConfigError);
}

TEST_CASE("trial files round trip through the manifest") {
  testutil::TempDir dir("io");
  auto ds = make_dataset(ChannelSchema::prefix(3), 4, 6, 6);
  ds.trials[1].group = Group::non_assisted;
  save_trials(ds, dir / "trials", dir / "manifest.csv");
  const auto back = load_trials(dir / "trials", dir / "manifest.csv", ChannelSchema::prefix(3));
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.trials[i].id == ds.trials[i].id);
    CHECK(back.trials[i].data == ds.trials[i].data);
    CHECK(back.trials[i].label == ds.trials[i].label);
  }
  CHECK(back.trials[1].group == Group::non_assisted);
  const auto meta = load_manifest(dir / "manifest.csv");
  CHECK(meta.size() == 4);

  save_trials(ds, dir / "u", dir / "unlabeled.csv", false);
  for (const auto& t : load_trials(dir / "u", dir / "unlabeled.csv", ChannelSchema::prefix(3)).trials)
    CHECK_FALSE(t.label.has_value());
}

TEST_CASE("loader errors carry context") {
  testutil::TempDir dir("bad");
  const auto schema = ChannelSchema::prefix(2);
  CHECK_THROWS_WITH_AS(load_trials(dir.path(), dir / "nope.csv", schema),
                       doctest::Contains("nope.csv"), DataError);
  const std::string header = "trial_id,file,subject,session,repetition,group,label\n";
  testutil::write_text(dir / "h.csv", "id,file\n");
  CHECK_THROWS_AS(load_trials(dir.path(), dir / "h.csv", schema), DataError);
  testutil::write_text(dir / "m1.csv", header + "a,missing.csv,S1,1,1,Assisted,expert\n");
  CHECK_THROWS_WITH_AS(load_trials(dir.path(), dir / "m1.csv", schema), doctest::Contains("missing.csv"),
                       DataError);
  testutil::write_text(dir / "a.csv", "1,2\n3\n");
  testutil::write_text(dir / "m2.csv", header + "a,a.csv,S1,1,1,Assisted,expert\n");
  CHECK_THROWS_WITH_AS(load_trials(dir.path(), dir / "m2.csv", schema), doctest::Contains("a.csv:2"),
                       DataError);
  testutil::write_text(dir / "b.csv", "1,2\n3,abc\n");
  testutil::write_text(dir / "m3.csv", header + "b,b.csv,S1,1,1,Assisted,novice\n");
  CHECK_THROWS_WITH_AS(load_trials(dir.path(), dir / "m3.csv", schema), doctest::Contains("b.csv:2"),
                       DataError);
  testutil::write_text(dir / "c.csv", "1,2\n3,nan\n");
  testutil::write_text(dir / "m4.csv", header + "c,c.csv,S1,1,1,Assisted,novice\n");
  CHECK_THROWS_AS(load_trials(dir.path(), dir / "m4.csv", schema), DataError);
  testutil::write_text(dir / "m5.csv", header + "b,a.csv,S1,1,1,,\nb,a.csv,S1,1,2,,\n");
  CHECK_THROWS_WITH_AS(load_trials(dir.path(), dir / "m5.csv", schema), doctest::Contains("duplicate"),
                       DataError);
}

TEST_CASE("rotation orthonormality count") {
  const auto schema = ChannelSchema::source76();
  Trial t;
  t.id = "r";
  std::vector<double> v(76 * 2, 0.0);
  // Identity rotation for every manipulator at both timesteps.
  for (std::size_t c = 0; c < 76; ++c) {
    const auto& d = schema.channels[c];
    if (d.quantity == Quantity::rotation_matrix && d.index % 4 == 0) v[c * 2] = v[c * 2 + 1] = 1.0;
  }
  t.data = NdArray({76, 2}, v);
  CHECK(count_non_orthonormal(t, schema) == 0);
  v[*schema.index_of({Manipulator::psm_left, Quantity::rotation_matrix, 0}) * 2] = 2.0;
  t.data = NdArray({76, 2}, v);
  CHECK(count_non_orthonormal(t, schema) == 1);
}

}  // TEST_SUITE
