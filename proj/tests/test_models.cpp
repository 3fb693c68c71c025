#include <cmath>
#include <cstring>
#include <fstream>

#include "dsovt/models.hpp"
#include "support.hpp"

using namespace dsovt;
using dsovt::test::TempDir;

namespace {

CedSpec tiny_ced() {
  CedSpec s;
  s.nx = 16;
  s.ny = 16;
  s.nc = 3;
  s.latent = 8;
  s.filters = {2, 3, 4};
  s.activation = ActivationSpec::parse("bounded,nonneg,clamp01");
  return s;
}

ConvLstmSpec tiny_convlstm() {
  ConvLstmSpec s;
  s.nx = 8;
  s.ny = 8;
  s.nc = 3;
  s.s_in = 3;
  s.s_out = 2;
  s.filters = 4;
  s.activation = ActivationSpec::parse("bounded,nonneg,clamp01");
  return s;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void check_ranges(const nn::Mat<float>& y) {
  for (Eigen::Index p = 0; p < y.cols(); ++p) {
    CHECK(std::abs(y(0, p)) <= 1.0f);
    CHECK(y(1, p) >= 0.0f);
    CHECK((y(2, p) >= 0.0f && y(2, p) <= 1.0f));
  }
}

}  // namespace

TEST_CASE("encoder-decoder parameter count for a 64x64x3 grid with Z = 128") {
  CedSpec s;
  s.activation = ActivationSpec::parse("bounded,bounded,nonneg");
  // Conv layers: out * (9 * in + 1); dense layers: out * (in + 1); flat = 128 * 8 * 8.
  const std::size_t flat = 128 * 8 * 8;
  const std::size_t expected = 32 * (9 * 3 + 1) + 64 * (9 * 32 + 1) + 128 * (9 * 64 + 1) +
                               128 * (flat + 1) + flat * (128 + 1) + 128 * (9 * 128 + 1) +
                               64 * (9 * 128 + 1) + 32 * (9 * 64 + 1) + 3 * (9 * 32 + 1);
  CHECK(expected == 2439427);
  CHECK(s.param_count() == expected);
  CHECK(Ced<float>(s).params().size() == expected);
  CHECK(Ced<float>(tiny_ced()).params().size() == tiny_ced().param_count());
}

TEST_CASE("zero parameters give a zero latent and act(0) outputs") {
  const Ced<float> model(tiny_ced());
  Rng rng(1);
  const Field x = test::random_field(rng, 16, 16, 3);
  const auto h = model.encode_field(x);
  REQUIRE(h.size() == 8);
  for (float v : h) CHECK(v == 0.0f);
  const Field y = model.decode_latent(h);
  for (float v : y.values()) CHECK(v == 0.0f);
}

TEST_CASE("a zero input with zero biases gives a zero latent") {
  const Ced<float> model(tiny_ced(), 3);
  const auto h = model.encode_field(Field(16, 16, 3));
  for (float v : h) CHECK(v == 0.0f);
}

TEST_CASE("random parameters respect the per-channel output ranges") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Ced<float> model(tiny_ced(), seed);
    Rng rng(seed);
    for (float& p : model.params().values()) p *= 20.0f;
    std::vector<Field> frames;
    for (int i = 0; i < 3; ++i) frames.push_back(test::random_field(rng, 16, 16, 3, -5, 5));
    const auto x = stack_fields<float>(std::span<const Field>(frames));
    const auto z = model.encode(x, 3);
    CHECK(z.rows() == 8);
    CHECK(z.cols() == 3);
    CHECK(z.minCoeff() >= 0.0f);
    const auto y = model.decode(z);
    CHECK(y.rows() == 3);
    CHECK(y.cols() == 3 * 16 * 16);
    check_ranges(y);
  }
}

TEST_CASE("stacking and unstacking fields round trips") {
  Rng rng(2);
  std::vector<Field> frames;
  for (int i = 0; i < 4; ++i) frames.push_back(test::random_field(rng, 8, 16, 2));
  const auto m = stack_fields<double>(std::span<const Field>(frames));
  for (int i = 0; i < 4; ++i) CHECK(unstack_field(m, i, 8, 16) == frames[static_cast<std::size_t>(i)]);
}

TEST_CASE("model files round trip bitwise and reject mismatches") {
  TempDir dir("models");
  const Ced<float> ced(tiny_ced(), 7);
  const NormStats norm{{-1, -2, 0.5}, {1, 2, 1.5}};
  save_model(dir / "ced.dsvm", ced, norm);
  std::optional<NormStats> back_norm;
  const Ced<float> back = load_ced(dir / "ced.dsvm", tiny_ced(), &back_norm);
  CHECK(same_bits(back.params().values(), ced.params().values()));
  REQUIRE(back_norm.has_value());
  CHECK(back_norm->min == norm.min);
  CHECK(back_norm->max == norm.max);

  CedSpec other = tiny_ced();
  other.latent = 16;
  CHECK(test::error_kind_of([&] { load_ced(dir / "ced.dsvm", other); }) == ErrorKind::Compatibility);
  CHECK(test::error_kind_of([&] { load_convlstm(dir / "ced.dsvm"); }) == ErrorKind::Compatibility);

  {
    std::fstream f(dir / "ced.dsvm", std::ios::binary | std::ios::in | std::ios::out);
    f.write("XSVM", 4);
  }
  CHECK(test::error_kind_of([&] { load_ced(dir / "ced.dsvm"); }) == ErrorKind::Format);

  LatentSeqSpec ls;
  ls.latent = 8;
  ls.hidden = 6;
  const LatentLstm<float> lstm(ls, 9);
  save_model(dir / "lstm.dsvm", lstm);
  CHECK(same_bits(load_latent_lstm(dir / "lstm.dsvm", ls).params().values(), lstm.params().values()));

  const ConvLstm<float> conv(tiny_convlstm(), 11);
  save_model(dir / "conv.dsvm", conv);
  CHECK(same_bits(load_convlstm(dir / "conv.dsvm", tiny_convlstm()).params().values(),
                  conv.params().values()));
}

TEST_CASE("latent LSTM maps S_in latents to S_out latents") {
  LatentSeqSpec ls;
  ls.latent = 8;
  ls.hidden = 6;
  ls.s_in = 4;
  ls.s_out = 3;
  const LatentLstm<double> model(ls, 5);
  Rng rng(3);
  std::vector<nn::Mat<double>> in;
  for (int t = 0; t < 4; ++t) {
    nn::Mat<double> m(8, 2);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
    in.push_back(m);
  }
  const auto out = model.forward(in);
  REQUIRE(out.size() == 3);
  for (const auto& m : out) {
    CHECK(m.rows() == 8);
    CHECK(m.cols() == 2);
    CHECK(m.allFinite());
  }
  // Columns are independent samples.
  std::vector<nn::Mat<double>> first;
  for (const auto& m : in) first.push_back(m.leftCols(1));
  const auto single = model.forward(first);
  for (std::size_t s = 0; s < out.size(); ++s) CHECK((single[s] - out[s].leftCols(1)).norm() < 1e-12);
}

TEST_CASE("ConvLSTM with zero input and zero biases outputs act(0)") {
  const ConvLstm<float> model(tiny_convlstm(), 13);
  std::vector<nn::Mat<float>> in(3, nn::Mat<float>::Zero(3, 2 * 64));
  const auto out = model.forward(in, 2);
  REQUIRE(out.size() == 2);
  for (const auto& m : out) {
    CHECK(m.rows() == 3);
    CHECK(m.cols() == 128);
    CHECK(m.cwiseAbs().maxCoeff() == 0.0f);
  }
  std::vector<nn::Mat<float>> noisy;
  for (int t = 0; t < 3; ++t) noisy.push_back(nn::Mat<float>::Random(3, 128) * 4.0f);
  for (const auto& m : model.forward(noisy, 2)) check_ranges(m);
}

TEST_CASE("activation specs parse, print and reject unknown names") {
  const ActivationSpec s = ActivationSpec::parse("bounded, nonneg,clamp01");
  CHECK(s.size() == 3);
  CHECK(ActivationSpec::parse(s.str()) == s);
  CHECK_THROWS_AS(ActivationSpec::parse("sigmoid"), Error);
  CedSpec bad = tiny_ced();
  bad.activation = ActivationSpec::parse("bounded");
  CHECK_THROWS_AS(bad.validate(), Error);
}
