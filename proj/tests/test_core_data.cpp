#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "dsovt/ingest.hpp"
#include "dsovt/manifest.hpp"
#include "dsovt/normalize.hpp"
#include "dsovt/tensor_io.hpp"
#include "support.hpp"

using namespace dsovt;
using dsovt::test::TempDir;

TEST_CASE("field rejects non-finite values and tiny grids") {
  std::vector<float> v(64, 0.0f);
  v[5] = std::numeric_limits<float>::quiet_NaN();
  CHECK(test::error_kind_of([&] { Field(8, 8, 1, v); }) == ErrorKind::Validation);
  CHECK_THROWS_AS(Field(4, 8, 1), Error);
  CHECK_THROWS_AS(Field(8, 8, 0), Error);
}

TEST_CASE("field index is x-major then y then channel") {
  Field f(8, 9, 2);
  CHECK(f.index(1, 2, 1) == (1u * 9 + 2) * 2 + 1);
}

TEST_CASE("tensor file of a 1x8x8x1 zero sequence is 280 bytes with the fixed header") {
  TempDir dir("tensor");
  const auto path = dir / "zero.dsvt";
  write_tensor(path, FieldSequence({Field(8, 8, 1)}));
  CHECK(std::filesystem::file_size(path) == 8 + 16 + 256);
  std::ifstream in(path, std::ios::binary);
  unsigned char h[24];
  in.read(reinterpret_cast<char*>(h), 24);
  CHECK(std::memcmp(h, "DSVT", 4) == 0);
  CHECK(h[4] == 1);
  CHECK(h[5] == 1);
  CHECK(h[6] == 4);
  CHECK(h[7] == 0);
  const std::uint32_t dims[4] = {1, 8, 8, 1};
  for (int i = 0; i < 4; ++i) {
    const std::uint32_t d = h[8 + 4 * i] | (h[9 + 4 * i] << 8) | (h[10 + 4 * i] << 16) |
                            (static_cast<std::uint32_t>(h[11 + 4 * i]) << 24);
    CHECK(d == dims[i]);
  }
}

TEST_CASE("tensor round trip is bitwise exact") {
  Rng rng(7);
  TempDir dir("tensor");
  const FieldSequence seq = test::random_sequence(rng, 3, 8, 12, 3, -1e6, 1e6);
  write_tensor(dir / "a.dsvt", seq);
  const FieldSequence back = read_tensor(dir / "a.dsvt");
  REQUIRE(back.t() == 3);
  for (int t = 0; t < 3; ++t) {
    const auto a = seq[t].values();
    const auto b = back[t].values();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("tensor reader rejects bad magic and truncated payloads") {
  TempDir dir("tensor");
  write_tensor(dir / "ok.dsvt", FieldSequence({Field(8, 8, 1)}));
  {
    std::fstream f(dir / "ok.dsvt", std::ios::binary | std::ios::in | std::ios::out);
    f.write("XXXX", 4);
  }
  CHECK(test::error_kind_of([&] { read_tensor(dir / "ok.dsvt"); }) == ErrorKind::Format);

  write_tensor(dir / "short.dsvt", FieldSequence({Field(8, 8, 1)}));
  std::filesystem::resize_file(dir / "short.dsvt", 24 + 100);
  try {
    read_tensor(dir / "short.dsvt");
    FAIL("expected a length error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Length);
    const std::string msg = e.what();
    CHECK(msg.find("280") != std::string::npos);
    CHECK(msg.find("124") != std::string::npos);
  }
}

TEST_CASE("normalize maps the channel midpoint to 0.5 and constant channels to 0.5") {
  std::vector<float> v(8 * 8 * 2);
  for (std::size_t i = 0; i < v.size(); i += 2) {
    v[i] = (i / 2) % 3 == 0 ? 0.0f : ((i / 2) % 3 == 1 ? 2.0f : 1.0f);
    v[i + 1] = 3.0f;
  }
  const auto [norm, stats] = normalize(FieldSequence({Field(8, 8, 2, v)}), std::nullopt);
  CHECK(stats.min[0] == 0.0);
  CHECK(stats.max[0] == 2.0);
  CHECK(stats.constant(1));
  CHECK(norm[0].at(0, 2, 0) == 0.5f);
  for (float x : norm[0].values().subspan(0)) CHECK((x >= 0.0f && x <= 1.0f));
  for (int x = 0; x < 8; ++x) {
    for (int y = 0; y < 8; ++y) CHECK(norm[0].at(x, y, 1) == 0.5f);
  }
}

TEST_CASE("normalize round trip stays within 1e-6") {
  Rng rng(11);
  const FieldSequence seq = test::random_sequence(rng, 4, 8, 8, 2, -3.0, 5.0);
  const auto [norm, stats] = normalize(seq, std::nullopt);
  const FieldSequence back = denormalize(norm, stats);
  double worst = 0.0;
  for (int t = 0; t < seq.t(); ++t) {
    for (std::size_t i = 0; i < seq[t].size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(seq[t].values()[i]) - back[t].values()[i]));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("normalize rejects a channel-count mismatch") {
  Rng rng(1);
  const FieldSequence seq = test::random_sequence(rng, 1, 8, 8, 2);
  const NormStats three{{0, 0, 0}, {1, 1, 1}};
  CHECK(test::error_kind_of([&] { normalize(seq, three); }) == ErrorKind::Shape);
}

TEST_CASE("ingest marks sentinel cells invalid and zeroes them") {
  TempDir dir("ingest");
  Rng rng(3);
  FieldSequence seq = test::random_sequence(rng, 2, 8, 8, 1);
  seq[1].at(2, 3, 0) = -999.0f;
  write_tensor(dir / "s.dsvt", seq);

  const IngestResult plain = ingest_grid_series(dir / "s.dsvt", {});
  CHECK(plain.mask.valid_count() == 64);

  const IngestResult masked = ingest_grid_series(dir / "s.dsvt", {-999.0f});
  CHECK(masked.mask.valid_count() == 63);
  CHECK_FALSE(masked.mask.at(2, 3));
  CHECK(masked.seq[0].at(2, 3, 0) == 0.0f);
  CHECK(masked.seq[1].at(2, 3, 0) == 0.0f);
}

TEST_CASE("CSV frames and the tensor file ingest to the same sequence") {
  TempDir dir("ingest");
  Rng rng(5);
  const FieldSequence seq = test::random_sequence(rng, 3, 8, 10, 2);
  write_tensor(dir / "s.dsvt", seq);
  write_csv_frames(dir / "csv", seq);
  const IngestResult a = ingest_grid_series(dir / "s.dsvt", {});
  const IngestResult b = ingest_grid_series(dir / "csv", {}, 2);
  CHECK(a.seq == b.seq);
  CHECK(a.mask == b.mask);
}

TEST_CASE("manifest round trips through its text form and validates invariants") {
  TempDir dir("manifest");
  write_tensor(dir / "a.dsvt", FieldSequence({Field(8, 8, 3)}));
  ExperimentManifest m;
  m.seed = 42;
  m.train_count = 1;
  m.sims.push_back({"a.dsvt", "train", 0.3, 5.0, 20.0, 21.0, 9});
  m.training.lambda_energy = 5e-10;
  m.norm = NormStats{{-1.0, -1.0, 0.5}, {1.0, 1.0, 1.5}};
  m.save(dir / "m.toml");
  const ExperimentManifest back = ExperimentManifest::load(dir / "m.toml");
  CHECK(back.to_doc().dump() == m.to_doc().dump());
  CHECK(back.training.lambda_energy == 5e-10);

  KeyValueDoc bad = m.to_doc();
  bad.set("training.s_in", 0);
  CHECK(test::error_kind_of([&] { ExperimentManifest::from_doc(bad, dir.path()).validate(true); }) ==
        ErrorKind::Validation);
  bad = m.to_doc();
  bad.set("sim.000.path", "missing.dsvt");
  bad.set("dataset.paths", std::vector<std::string>{"missing.dsvt"});
  CHECK(test::error_kind_of([&] { ExperimentManifest::from_doc(bad, dir.path()).validate(true); }) ==
        ErrorKind::Validation);
}

TEST_CASE("manifest overrides replace values") {
  KeyValueDoc d = KeyValueDoc::parse("[training]\nepochs = 3\n");
  d.apply_override("training.epochs=7");
  d.apply_override("sensors.kind=random");
  CHECK(d.get_int("training.epochs") == 7);
  CHECK(d.get_string("sensors.kind") == "random");
}

TEST_CASE("writing a non-finite value is a validation error and leaves no file") {
  TempDir dir("tensor");
  Field f(8, 8, 1);
  f.values()[10] = std::numeric_limits<float>::infinity();
  CHECK(test::error_kind_of([&] { write_tensor(dir / "bad.dsvt", FieldSequence({f})); }) ==
        ErrorKind::Validation);
  CHECK_FALSE(std::filesystem::exists(dir / "bad.dsvt"));
}
