#include "dsovt/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dsovt/error.hpp"
#include "dsovt/tensor_io.hpp"

namespace dsovt {

using nn::Geometry;
using nn::Mat;

// ---------------------------------------------------------------------------
// Activations

ActivationSpec ActivationSpec::parse(const std::string& text) {
  ActivationSpec spec;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item == "bounded") {
      spec.channels.push_back(OutAct::Bounded);
    } else if (item == "nonneg") {
      spec.channels.push_back(OutAct::Nonneg);
    } else if (item == "clamp01") {
      spec.channels.push_back(OutAct::Clamp01);
    } else {
      fail(ErrorKind::Validation, "unknown output activation '" + item + "'");
    }
  }
  require(!spec.channels.empty(), ErrorKind::Validation, "empty activation spec");
  return spec;
}

std::string ActivationSpec::str() const {
  std::string out;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (i) out += ',';
    switch (channels[i]) {
      case OutAct::Bounded: out += "bounded"; break;
      case OutAct::Nonneg: out += "nonneg"; break;
      case OutAct::Clamp01: out += "clamp01"; break;
    }
  }
  return out;
}

template <typename T>
void apply_activation(const ActivationSpec& spec, Mat<T>& x) {
  require(spec.size() == x.rows(), ErrorKind::Shape, "activation spec channel count mismatch");
  for (int c = 0; c < spec.size(); ++c) {
    auto row = x.row(c).array();
    switch (spec.channels[c]) {
      case OutAct::Bounded: row = row.tanh(); break;
      case OutAct::Nonneg: row = row.max(T(0)); break;
      case OutAct::Clamp01: row = row.max(T(0)).min(T(1)); break;
    }
  }
}

template <typename T>
void activation_backward(const ActivationSpec& spec, const Mat<T>& y, Mat<T>& d) {
  for (int c = 0; c < spec.size(); ++c) {
    auto dr = d.row(c).array();
    const auto yr = y.row(c).array();
    switch (spec.channels[c]) {
      case OutAct::Bounded: dr *= T(1) - yr * yr; break;
      case OutAct::Nonneg: dr = (yr > T(0)).select(dr, T(0)); break;
      case OutAct::Clamp01: dr = (yr > T(0) && yr < T(1)).select(dr, T(0)); break;
    }
  }
}

// ---------------------------------------------------------------------------
// Specs

namespace {

void check_activation(const ActivationSpec& a, int nc) {
  require(a.size() == nc, ErrorKind::Shape,
          "activation spec has " + std::to_string(a.size()) + " channels, field has " +
              std::to_string(nc));
}

int doc_int(const KeyValueDoc& d, const std::string& key) {
  require(d.has(key), ErrorKind::Format, "model spec lacks '" + key + "'");
  return static_cast<int>(d.get_int(key));
}

}  // namespace

void CedSpec::validate() const {
  require(nx >= 8 && ny >= 8 && nx % 8 == 0 && ny % 8 == 0, ErrorKind::Shape,
          "encoder-decoder grid " + std::to_string(nx) + "x" + std::to_string(ny) +
              " must be divisible by 8");
  require(nc >= 1 && latent >= 1, ErrorKind::Shape, "nc and latent size must be positive");
  for (int f : filters) require(f >= 1, ErrorKind::Shape, "filter counts must be positive");
  check_activation(activation, nc);
}

std::size_t CedSpec::param_count() const {
  const std::size_t f0 = filters[0], f1 = filters[1], f2 = filters[2];
  const std::size_t flat = f2 * (nx / 8) * (ny / 8);
  const std::size_t c = nc, z = latent;
  auto conv = [](std::size_t in, std::size_t out) { return out * 9 * in + out; };
  return conv(c, f0) + conv(f0, f1) + conv(f1, f2) + (z * flat + z) + (flat * z + flat) +
         conv(f2, f2) + conv(f2, f1) + conv(f1, f0) + conv(f0, c);
}

KeyValueDoc CedSpec::to_doc() const {
  KeyValueDoc d;
  d.set("nx", nx);
  d.set("ny", ny);
  d.set("nc", nc);
  d.set("latent", latent);
  d.set("filters", std::vector<int>(filters.begin(), filters.end()));
  d.set("activation", activation.str());
  return d;
}

CedSpec CedSpec::from_doc(const KeyValueDoc& d) {
  CedSpec s;
  s.nx = doc_int(d, "nx");
  s.ny = doc_int(d, "ny");
  s.nc = doc_int(d, "nc");
  s.latent = doc_int(d, "latent");
  const auto f = d.get_double_list("filters");
  require(f.size() == 3, ErrorKind::Format, "encoder-decoder needs three filter counts");
  for (int i = 0; i < 3; ++i) s.filters[i] = static_cast<int>(f[i]);
  s.activation = ActivationSpec::parse(d.get_string("activation"));
  s.validate();
  return s;
}

void LatentSeqSpec::validate() const {
  require(latent >= 1, ErrorKind::Shape, "latent size must be positive");
  require(s_in >= 1 && s_out >= 1, ErrorKind::Shape, "S_in and S_out must be >= 1");
  require(layers >= 1 && hidden >= 1, ErrorKind::Shape, "LSTM layers and width must be positive");
}

KeyValueDoc LatentSeqSpec::to_doc() const {
  KeyValueDoc d;
  d.set("latent", latent);
  d.set("s_in", s_in);
  d.set("s_out", s_out);
  d.set("layers", layers);
  d.set("hidden", hidden);
  return d;
}

LatentSeqSpec LatentSeqSpec::from_doc(const KeyValueDoc& d) {
  LatentSeqSpec s;
  s.latent = doc_int(d, "latent");
  s.s_in = doc_int(d, "s_in");
  s.s_out = doc_int(d, "s_out");
  s.layers = doc_int(d, "layers");
  s.hidden = doc_int(d, "hidden");
  s.validate();
  return s;
}

void ConvLstmSpec::validate() const {
  require(nx >= 1 && ny >= 1 && nc >= 1, ErrorKind::Shape, "ConvLSTM input shape must be positive");
  require(s_in >= 1 && s_out >= 1, ErrorKind::Shape, "S_in and S_out must be >= 1");
  require(layers >= 1 && filters >= 1, ErrorKind::Shape, "ConvLSTM layers and filters must be positive");
  require(kernel >= 1 && kernel % 2 == 1, ErrorKind::Shape, "ConvLSTM kernel must be odd");
  check_activation(activation, nc);
}

KeyValueDoc ConvLstmSpec::to_doc() const {
  KeyValueDoc d;
  d.set("nx", nx);
  d.set("ny", ny);
  d.set("nc", nc);
  d.set("s_in", s_in);
  d.set("s_out", s_out);
  d.set("layers", layers);
  d.set("filters", filters);
  d.set("kernel", kernel);
  d.set("activation", activation.str());
  return d;
}

ConvLstmSpec ConvLstmSpec::from_doc(const KeyValueDoc& d) {
  ConvLstmSpec s;
  s.nx = doc_int(d, "nx");
  s.ny = doc_int(d, "ny");
  s.nc = doc_int(d, "nc");
  s.s_in = doc_int(d, "s_in");
  s.s_out = doc_int(d, "s_out");
  s.layers = doc_int(d, "layers");
  s.filters = doc_int(d, "filters");
  s.kernel = doc_int(d, "kernel");
  s.activation = ActivationSpec::parse(d.get_string("activation"));
  s.validate();
  return s;
}

CedSpec ced_spec_from(const ModelSpecParams& m, int nx, int ny, int nc) {
  require(m.ced_filters.size() == 3, ErrorKind::Validation, "model.ced_filters needs three entries");
  CedSpec s;
  s.nx = nx;
  s.ny = ny;
  s.nc = nc;
  s.latent = m.latent;
  for (int i = 0; i < 3; ++i) s.filters[i] = m.ced_filters[i];
  s.activation = ActivationSpec::parse(m.activation);
  s.validate();
  return s;
}

LatentSeqSpec lstm_spec_from(const ModelSpecParams& m, const TrainingSpec& t) {
  LatentSeqSpec s;
  s.latent = m.latent;
  s.s_in = t.s_in;
  s.s_out = t.s_out;
  s.layers = m.lstm_layers;
  s.hidden = m.lstm_hidden;
  s.validate();
  return s;
}

ConvLstmSpec convlstm_spec_from(const ModelSpecParams& m, const TrainingSpec& t, int nx, int ny,
                                int nc) {
  ConvLstmSpec s;
  s.nx = nx;
  s.ny = ny;
  s.nc = nc;
  s.s_in = t.s_in;
  s.s_out = t.s_out;
  s.layers = m.convlstm_layers;
  s.filters = m.convlstm_filters;
  s.kernel = m.convlstm_kernel;
  s.activation = ActivationSpec::parse(m.activation);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Ced

namespace {

// Grad-map pointer or null, so conv_backward can skip parameter gradients.
template <typename M>
M* maybe(M& m, bool on) {
  return on ? &m : nullptr;
}

}  // namespace

template <typename T>
Ced<T>::Ced(CedSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  init_layout();
}

template <typename T>
Ced<T>::Ced(CedSpec spec, std::uint64_t seed) : Ced(std::move(spec)) {
  Rng rng(seed);
  const auto [f0, f1, f2] = spec_.filters;
  const int c = spec_.nc;
  const int flat = flat_size();
  params_.glorot(E1, 9 * c, 9 * f0, rng);
  params_.glorot(E2, 9 * f0, 9 * f1, rng);
  params_.glorot(E3, 9 * f1, 9 * f2, rng);
  params_.glorot(ED, flat, spec_.latent, rng);
  params_.glorot(DD, spec_.latent, flat, rng);
  params_.glorot(D1, 9 * f2, 9 * f2, rng);
  params_.glorot(D2, 9 * f2, 9 * f1, rng);
  params_.glorot(D3, 9 * f1, 9 * f0, rng);
  params_.glorot(DO, 9 * f0, 9 * c, rng);
}

template <typename T>
void Ced<T>::init_layout() {
  const auto [f0, f1, f2] = spec_.filters;
  const int c = spec_.nc;
  const int z = spec_.latent;
  const int flat = flat_size();
  auto conv = [&](const std::string& name, int in, int out) {
    params_.add(name + ".w", out, 9 * in);
    params_.add(name + ".b", out, 1);
  };
  conv("enc.conv1", c, f0);
  conv("enc.conv2", f0, f1);
  conv("enc.conv3", f1, f2);
  params_.add("enc.dense.w", z, flat);
  params_.add("enc.dense.b", z, 1);
  params_.add("dec.dense.w", flat, z);
  params_.add("dec.dense.b", flat, 1);
  conv("dec.conv1", f2, f2);
  conv("dec.conv2", f2, f1);
  conv("dec.conv3", f1, f0);
  conv("dec.out", f0, c);
}

template <typename T>
Mat<T> Ced<T>::encode(const Mat<T>& x, int n, EncoderCache* cache) const {
  const Geometry g0 = geometry(n, 0), g1 = geometry(n, 1), g2 = geometry(n, 2);
  require(x.rows() == spec_.nc && x.cols() == g0.pixels(), ErrorKind::Shape,
          "encoder input shape mismatch");
  EncoderCache local;
  EncoderCache& k = cache ? *cache : local;
  k.n = n;
  k.x = x;
  Mat<T> cols;
  nn::conv_forward(x, g0, 3, params_.mat(E1), params_.vec(E1b), k.a1, cols);
  nn::relu_inplace(k.a1);
  nn::maxpool2_forward(k.a1, g0, k.p1, k.i1);
  nn::conv_forward(k.p1, g1, 3, params_.mat(E2), params_.vec(E2b), k.a2, cols);
  nn::relu_inplace(k.a2);
  nn::maxpool2_forward(k.a2, g1, k.p2, k.i2);
  nn::conv_forward(k.p2, g2, 3, params_.mat(E3), params_.vec(E3b), k.a3, cols);
  nn::relu_inplace(k.a3);
  nn::maxpool2_forward(k.a3, g2, k.p3, k.i3);
  Eigen::Map<const Mat<T>> flat(k.p3.data(), flat_size(), n);
  k.z.noalias() = params_.mat(ED) * flat;
  k.z.colwise() += params_.vec(EDb);
  nn::relu_inplace(k.z);
  return k.z;
}

template <typename T>
Mat<T> Ced<T>::decode(const Mat<T>& z, DecoderCache* cache) const {
  require(z.rows() == spec_.latent, ErrorKind::Shape,
          "latent length " + std::to_string(z.rows()) + " != " + std::to_string(spec_.latent));
  const int n = static_cast<int>(z.cols());
  const Geometry g0 = geometry(n, 0), g1 = geometry(n, 1), g2 = geometry(n, 2), g3 = geometry(n, 3);
  DecoderCache local;
  DecoderCache& k = cache ? *cache : local;
  k.n = n;
  k.z = z;
  Mat<T> flat = params_.mat(DD) * z;
  flat.colwise() += params_.vec(DDb);
  nn::relu_inplace(flat);
  k.d0 = Eigen::Map<const Mat<T>>(flat.data(), spec_.filters[2], g3.pixels());
  Mat<T> cols;
  nn::conv_forward(k.d0, g3, 3, params_.mat(D1), params_.vec(D1b), k.c1, cols);
  nn::relu_inplace(k.c1);
  nn::upsample2_forward(k.c1, g3, k.u1);
  nn::conv_forward(k.u1, g2, 3, params_.mat(D2), params_.vec(D2b), k.c2, cols);
  nn::relu_inplace(k.c2);
  nn::upsample2_forward(k.c2, g2, k.u2);
  nn::conv_forward(k.u2, g1, 3, params_.mat(D3), params_.vec(D3b), k.c3, cols);
  nn::relu_inplace(k.c3);
  nn::upsample2_forward(k.c3, g1, k.u3);
  nn::conv_forward(k.u3, g0, 3, params_.mat(DO), params_.vec(DOb), k.y, cols);
  apply_activation(spec_.activation, k.y);
  return k.y;
}

template <typename T>
Mat<T> Ced<T>::backward_decode(const DecoderCache& k, Mat<T> dy, bool pg) {
  const int n = k.n;
  const Geometry g0 = geometry(n, 0), g1 = geometry(n, 1), g2 = geometry(n, 2), g3 = geometry(n, 3);
  Mat<T> cols, du, dc;
  activation_backward(spec_.activation, k.y, dy);

  auto gw = params_.grad(DO);
  auto gb = params_.grad_vec(DOb);
  nn::conv_backward(k.u3, g0, 3, params_.mat(DO), dy, maybe(gw, pg), maybe(gb, pg), &du, cols);
  nn::upsample2_backward(du, g1, dc);
  nn::relu_backward_inplace(dc, k.c3);

  auto gw3 = params_.grad(D3);
  auto gb3 = params_.grad_vec(D3b);
  nn::conv_backward(k.u2, g1, 3, params_.mat(D3), dc, maybe(gw3, pg), maybe(gb3, pg), &du, cols);
  nn::upsample2_backward(du, g2, dc);
  nn::relu_backward_inplace(dc, k.c2);

  auto gw2 = params_.grad(D2);
  auto gb2 = params_.grad_vec(D2b);
  nn::conv_backward(k.u1, g2, 3, params_.mat(D2), dc, maybe(gw2, pg), maybe(gb2, pg), &du, cols);
  nn::upsample2_backward(du, g3, dc);
  nn::relu_backward_inplace(dc, k.c1);

  auto gw1 = params_.grad(D1);
  auto gb1 = params_.grad_vec(D1b);
  Mat<T> dd0;
  nn::conv_backward(k.d0, g3, 3, params_.mat(D1), dc, maybe(gw1, pg), maybe(gb1, pg), &dd0, cols);
  nn::relu_backward_inplace(dd0, k.d0);

  Eigen::Map<const Mat<T>> dflat(dd0.data(), flat_size(), n);
  if (pg) {
    params_.grad(DD).noalias() += dflat * k.z.transpose();
    params_.grad_vec(DDb) += dflat.rowwise().sum();
  }
  return params_.mat(DD).transpose() * dflat;
}

template <typename T>
void Ced<T>::backward_encode(const EncoderCache& k, Mat<T> dz) {
  const int n = k.n;
  const Geometry g0 = geometry(n, 0), g1 = geometry(n, 1), g2 = geometry(n, 2), g3 = geometry(n, 3);
  nn::relu_backward_inplace(dz, k.z);
  Eigen::Map<const Mat<T>> flat(k.p3.data(), flat_size(), n);
  params_.grad(ED).noalias() += dz * flat.transpose();
  params_.grad_vec(EDb) += dz.rowwise().sum();
  Mat<T> dflat = params_.mat(ED).transpose() * dz;
  Mat<T> dp = Eigen::Map<const Mat<T>>(dflat.data(), spec_.filters[2], g3.pixels());
  Mat<T> da, cols;

  nn::maxpool2_backward(dp, k.i3, g2, da);
  nn::relu_backward_inplace(da, k.a3);
  auto gw3 = params_.grad(E3);
  auto gb3 = params_.grad_vec(E3b);
  nn::conv_backward(k.p2, g2, 3, params_.mat(E3), da, &gw3, &gb3, &dp, cols);

  nn::maxpool2_backward(dp, k.i2, g1, da);
  nn::relu_backward_inplace(da, k.a2);
  auto gw2 = params_.grad(E2);
  auto gb2 = params_.grad_vec(E2b);
  nn::conv_backward(k.p1, g1, 3, params_.mat(E2), da, &gw2, &gb2, &dp, cols);

  nn::maxpool2_backward(dp, k.i1, g0, da);
  nn::relu_backward_inplace(da, k.a1);
  auto gw1 = params_.grad(E1);
  auto gb1 = params_.grad_vec(E1b);
  nn::conv_backward(k.x, g0, 3, params_.mat(E1), da, &gw1, &gb1, static_cast<Mat<T>*>(nullptr), cols);
}

template <typename T>
void Ced<T>::zero_output_layer() {
  params_.mat(DO).setZero();
  params_.mat(DOb).setZero();
}

template <typename T>
std::vector<float> Ced<T>::encode_field(const Field& x) const {
  require(x.nx() == spec_.nx && x.ny() == spec_.ny && x.nc() == spec_.nc, ErrorKind::Shape,
          "field shape does not match the encoder");
  const Field* p = &x;
  const Mat<T> z = encode(stack_fields<T>(std::span<const Field* const>(&p, 1)), 1);
  std::vector<float> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) out[i] = static_cast<float>(z(i, 0));
  return out;
}

template <typename T>
Field Ced<T>::decode_latent(std::span<const float> h) const {
  require(static_cast<int>(h.size()) == spec_.latent, ErrorKind::Shape,
          "latent length " + std::to_string(h.size()) + " != " + std::to_string(spec_.latent));
  Mat<T> z(spec_.latent, 1);
  for (int i = 0; i < spec_.latent; ++i) z(i, 0) = static_cast<T>(h[i]);
  return unstack_field<T>(decode(z), 0, spec_.nx, spec_.ny);
}

// ---------------------------------------------------------------------------
// LatentLstm

template <typename T>
LatentLstm<T>::LatentLstm(LatentSeqSpec spec) : spec_(spec) {
  spec_.validate();
  init_layout();
}

template <typename T>
LatentLstm<T>::LatentLstm(LatentSeqSpec spec, std::uint64_t seed) : LatentLstm(spec) {
  Rng rng(seed);
  const int h = spec_.hidden;
  for (const auto* ids : {&enc_ids_, &dec_ids_}) {
    for (std::size_t l = 0; l < ids->size(); ++l) {
      const int in = l == 0 ? spec_.latent : h;
      params_.glorot((*ids)[l].wx, in, 4 * h, rng);
      params_.glorot((*ids)[l].wh, h, 4 * h, rng);
      // Forget-gate bias starts at 1.
      params_.mat((*ids)[l].b).middleRows(h, h).setOnes();
    }
  }
  params_.glorot(head_w_, h, spec_.latent, rng);
}

template <typename T>
void LatentLstm<T>::init_layout() {
  const int h = spec_.hidden;
  for (const char* part : {"enc", "dec"}) {
    auto& ids = std::string(part) == "enc" ? enc_ids_ : dec_ids_;
    for (int l = 0; l < spec_.layers; ++l) {
      const int in = l == 0 ? spec_.latent : h;
      const std::string p = std::string(part) + ".lstm" + std::to_string(l);
      LayerIds li;
      li.wx = params_.add(p + ".wx", 4 * h, in);
      li.wh = params_.add(p + ".wh", 4 * h, h);
      li.b = params_.add(p + ".b", 4 * h, 1);
      ids.push_back(li);
    }
  }
  head_w_ = params_.add("head.w", spec_.latent, h);
  head_b_ = params_.add("head.b", spec_.latent, 1);
}

template <typename T>
void LatentLstm<T>::cell(const LayerIds& ids, const Mat<T>& x, const Mat<T>& h, const Mat<T>& c,
                         nn::LstmStepCache<T>& out) const {
  Mat<T> pre = params_.mat(ids.wx) * x;
  pre.noalias() += params_.mat(ids.wh) * h;
  pre.colwise() += params_.vec(ids.b);
  nn::lstm_pointwise_forward(pre, c, spec_.hidden, out);
}

template <typename T>
Mat<T> LatentLstm<T>::cell_backward(const LayerIds& ids, const Mat<T>& x, const Mat<T>& h_prev,
                                    const nn::LstmStepCache<T>& s, const Mat<T>& dh, Mat<T>& dc,
                                    Mat<T>& dh_prev) {
  const Mat<T> dpre = nn::lstm_pointwise_backward(s, dh, dc, spec_.hidden);
  params_.grad(ids.wx).noalias() += dpre * x.transpose();
  params_.grad(ids.wh).noalias() += dpre * h_prev.transpose();
  params_.grad_vec(ids.b) += dpre.rowwise().sum();
  dh_prev.noalias() = params_.mat(ids.wh).transpose() * dpre;
  return params_.mat(ids.wx).transpose() * dpre;
}

template <typename T>
std::vector<Mat<T>> LatentLstm<T>::forward(const std::vector<Mat<T>>& inputs, Cache* cache) const {
  require(static_cast<int>(inputs.size()) == spec_.s_in, ErrorKind::Shape,
          "LSTM expects " + std::to_string(spec_.s_in) + " input steps, got " +
              std::to_string(inputs.size()));
  const Eigen::Index b = inputs.front().cols();
  for (const auto& x : inputs) {
    require(x.rows() == spec_.latent && x.cols() == b, ErrorKind::Shape, "LSTM input shape mismatch");
  }
  const int layers = spec_.layers;
  const int hd = spec_.hidden;
  std::vector<Mat<T>> h(layers, Mat<T>::Zero(hd, b)), c(layers, Mat<T>::Zero(hd, b));
  Cache local;
  Cache& k = cache ? *cache : local;
  k.enc_in = inputs;
  k.enc.assign(inputs.size(), std::vector<nn::LstmStepCache<T>>(layers));
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (int l = 0; l < layers; ++l) {
      const Mat<T>& x = l == 0 ? inputs[t] : k.enc[t][l - 1].h;
      cell(enc_ids_[l], x, h[l], c[l], k.enc[t][l]);
      h[l] = k.enc[t][l].h;
      c[l] = k.enc[t][l].c;
    }
  }
  std::vector<Mat<T>> outputs;
  k.dec_in.clear();
  k.dec.assign(spec_.s_out, std::vector<nn::LstmStepCache<T>>(layers));
  Mat<T> in = inputs.back();
  for (int s = 0; s < spec_.s_out; ++s) {
    k.dec_in.push_back(in);
    for (int l = 0; l < layers; ++l) {
      const Mat<T>& x = l == 0 ? k.dec_in[s] : k.dec[s][l - 1].h;
      cell(dec_ids_[l], x, h[l], c[l], k.dec[s][l]);
      h[l] = k.dec[s][l].h;
      c[l] = k.dec[s][l].c;
    }
    Mat<T> y = params_.mat(head_w_) * h[layers - 1];
    y.colwise() += params_.vec(head_b_);
    outputs.push_back(y);
    in = std::move(y);
  }
  return outputs;
}

template <typename T>
void LatentLstm<T>::backward(const Cache& k, const std::vector<Mat<T>>& d_outputs) {
  const int layers = spec_.layers;
  const int s_in = spec_.s_in;
  const int s_out = spec_.s_out;
  const Eigen::Index b = k.enc_in.front().cols();
  std::vector<Mat<T>> dh(layers, Mat<T>::Zero(spec_.hidden, b));
  std::vector<Mat<T>> dc(layers, Mat<T>::Zero(spec_.hidden, b));
  std::vector<Mat<T>> d_pred = d_outputs;
  Mat<T> dprev;

  for (int s = s_out - 1; s >= 0; --s) {
    const Mat<T>& dy = d_pred[s];
    params_.grad(head_w_).noalias() += dy * k.dec[s][layers - 1].h.transpose();
    params_.grad_vec(head_b_) += dy.rowwise().sum();
    Mat<T> from_above = params_.mat(head_w_).transpose() * dy;
    for (int l = layers - 1; l >= 0; --l) {
      const Mat<T> dht = dh[l] + from_above;
      const Mat<T>& x = l == 0 ? k.dec_in[s] : k.dec[s][l - 1].h;
      const Mat<T>& h_prev = s > 0 ? k.dec[s - 1][l].h : k.enc[s_in - 1][l].h;
      from_above = cell_backward(dec_ids_[l], x, h_prev, k.dec[s][l], dht, dc[l], dprev);
      dh[l] = dprev;
    }
    if (s > 0) d_pred[s - 1] += from_above;
  }

  const Mat<T> zero = Mat<T>::Zero(spec_.hidden, b);
  for (int t = s_in - 1; t >= 0; --t) {
    Mat<T> from_above;
    for (int l = layers - 1; l >= 0; --l) {
      const Mat<T> dht = l == layers - 1 ? dh[l] : Mat<T>(dh[l] + from_above);
      const Mat<T>& x = l == 0 ? k.enc_in[t] : k.enc[t][l - 1].h;
      const Mat<T>& h_prev = t > 0 ? k.enc[t - 1][l].h : zero;
      from_above = cell_backward(enc_ids_[l], x, h_prev, k.enc[t][l], dht, dc[l], dprev);
      dh[l] = dprev;
    }
  }
}

// ---------------------------------------------------------------------------
// ConvLstm

template <typename T>
ConvLstm<T>::ConvLstm(ConvLstmSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  init_layout();
}

template <typename T>
ConvLstm<T>::ConvLstm(ConvLstmSpec spec, std::uint64_t seed) : ConvLstm(std::move(spec)) {
  Rng rng(seed);
  const int f = spec_.filters;
  const int k2 = spec_.kernel * spec_.kernel;
  for (int l = 0; l < spec_.layers; ++l) {
    params_.glorot(w_ids_[l], k2 * (in_channels(l) + f), k2 * 4 * f, rng);
    params_.mat(b_ids_[l]).middleRows(f, f).setOnes();
  }
  for (int s = 0; s < spec_.s_out; ++s) params_.glorot(head_w_[s], f, spec_.nc, rng);
}

template <typename T>
void ConvLstm<T>::init_layout() {
  const int f = spec_.filters;
  const int k2 = spec_.kernel * spec_.kernel;
  for (int l = 0; l < spec_.layers; ++l) {
    const std::string p = "convlstm" + std::to_string(l);
    w_ids_.push_back(params_.add(p + ".w", 4 * f, k2 * (in_channels(l) + f)));
    b_ids_.push_back(params_.add(p + ".b", 4 * f, 1));
  }
  for (int s = 0; s < spec_.s_out; ++s) {
    const std::string p = "head" + std::to_string(s);
    head_w_.push_back(params_.add(p + ".w", spec_.nc, f));
    head_b_.push_back(params_.add(p + ".b", spec_.nc, 1));
  }
}

template <typename T>
std::vector<Mat<T>> ConvLstm<T>::forward(const std::vector<Mat<T>>& inputs, int n, Cache* cache) const {
  require(static_cast<int>(inputs.size()) == spec_.s_in, ErrorKind::Shape,
          "ConvLSTM expects " + std::to_string(spec_.s_in) + " input frames, got " +
              std::to_string(inputs.size()));
  const Geometry g{n, spec_.nx, spec_.ny};
  for (const auto& x : inputs) {
    require(x.rows() == spec_.nc && x.cols() == g.pixels(), ErrorKind::Shape,
            "ConvLSTM input frame shape mismatch");
  }
  const int layers = spec_.layers;
  const int f = spec_.filters;
  Cache local;
  Cache& k = cache ? *cache : local;
  k.n = n;
  k.z.assign(inputs.size(), std::vector<Mat<T>>(layers));
  k.steps.assign(inputs.size(), std::vector<nn::LstmStepCache<T>>(layers));
  std::vector<Mat<T>> h(layers, Mat<T>::Zero(f, g.pixels())), c(layers, Mat<T>::Zero(f, g.pixels()));
  Mat<T> cols, pre;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (int l = 0; l < layers; ++l) {
      const Mat<T>& x = l == 0 ? inputs[t] : h[l - 1];
      Mat<T>& z = k.z[t][l];
      z.resize(x.rows() + f, g.pixels());
      z.topRows(x.rows()) = x;
      z.bottomRows(f) = h[l];
      nn::conv_forward(z, g, spec_.kernel, params_.mat(w_ids_[l]), params_.vec(b_ids_[l]), pre, cols);
      nn::lstm_pointwise_forward(pre, c[l], f, k.steps[t][l]);
      h[l] = k.steps[t][l].h;
      c[l] = k.steps[t][l].c;
    }
  }
  k.y.clear();
  for (int s = 0; s < spec_.s_out; ++s) {
    Mat<T> y = params_.mat(head_w_[s]) * h[layers - 1];
    y.colwise() += params_.vec(head_b_[s]);
    apply_activation(spec_.activation, y);
    k.y.push_back(std::move(y));
  }
  return k.y;
}

template <typename T>
void ConvLstm<T>::backward(const Cache& k, const std::vector<Mat<T>>& d_outputs) {
  const int layers = spec_.layers;
  const int f = spec_.filters;
  const Geometry g{k.n, spec_.nx, spec_.ny};
  const Mat<T>& top = k.steps.back()[layers - 1].h;
  Mat<T> dtop = Mat<T>::Zero(f, g.pixels());
  for (int s = 0; s < spec_.s_out; ++s) {
    Mat<T> d = d_outputs[s];
    activation_backward(spec_.activation, k.y[s], d);
    params_.grad(head_w_[s]).noalias() += d * top.transpose();
    params_.grad_vec(head_b_[s]) += d.rowwise().sum();
    dtop.noalias() += params_.mat(head_w_[s]).transpose() * d;
  }
  std::vector<Mat<T>> dh(layers, Mat<T>::Zero(f, g.pixels()));
  std::vector<Mat<T>> dc(layers, Mat<T>::Zero(f, g.pixels()));
  dh[layers - 1] = std::move(dtop);
  Mat<T> cols, dz;
  for (int t = static_cast<int>(k.steps.size()) - 1; t >= 0; --t) {
    Mat<T> from_above;
    for (int l = layers - 1; l >= 0; --l) {
      if (l < layers - 1) dh[l] += from_above;
      const Mat<T> dpre = nn::lstm_pointwise_backward(k.steps[t][l], dh[l], dc[l], f);
      auto gw = params_.grad(w_ids_[l]);
      auto gb = params_.grad_vec(b_ids_[l]);
      nn::conv_backward(k.z[t][l], g, spec_.kernel, params_.mat(w_ids_[l]), dpre, &gw, &gb, &dz, cols);
      const int cin = in_channels(l);
      from_above = dz.topRows(cin);
      dh[l] = dz.bottomRows(f);
    }
  }
}

// ---------------------------------------------------------------------------
// Batching

template <typename T>
Mat<T> stack_fields(std::span<const Field* const> fields) {
  require(!fields.empty(), ErrorKind::Shape, "cannot stack zero fields");
  const Field& f0 = *fields.front();
  const Eigen::Index cells = static_cast<Eigen::Index>(f0.cells());
  Mat<T> m(f0.nc(), cells * static_cast<Eigen::Index>(fields.size()));
  T* dst = m.data();
  for (const Field* f : fields) {
    require(f->same_shape(f0), ErrorKind::Shape, "stacked fields differ in shape");
    for (float v : f->values()) *dst++ = static_cast<T>(v);
  }
  return m;
}

template <typename T>
Mat<T> stack_fields(std::span<const Field> fields) {
  std::vector<const Field*> ptrs;
  for (const auto& f : fields) ptrs.push_back(&f);
  return stack_fields<T>(std::span<const Field* const>(ptrs));
}

template <typename T>
Field unstack_field(const Mat<T>& m, int i, int nx, int ny) {
  const int nc = static_cast<int>(m.rows());
  const std::size_t n = static_cast<std::size_t>(nx) * ny * nc;
  std::vector<float> v(n);
  const T* src = m.data() + n * i;
  for (std::size_t k = 0; k < n; ++k) v[k] = static_cast<float>(src[k]);
  return Field(nx, ny, nc, std::move(v));
}

// ---------------------------------------------------------------------------
// Model files

namespace {

constexpr unsigned char kModelMagic[4] = {0x44, 0x53, 0x56, 0x4D};

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open model file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename M>
ModelFile to_file(ModelKind kind, const M& model, const std::optional<NormStats>& norm) {
  ModelFile f;
  f.kind = kind;
  f.spec = model.spec().to_doc();
  f.norm = norm;
  f.params.resize(model.params().size());
  std::copy(model.params().values().begin(), model.params().values().end(), f.params.begin());
  return f;
}

template <typename M, typename S>
M from_file(const std::filesystem::path& path, ModelKind kind, const std::optional<S>& expected,
            std::optional<NormStats>* norm) {
  ModelFile f = read_model_file(path);
  require(f.kind == kind, ErrorKind::Compatibility,
          path.string() + " holds a " + model_kind_name(f.kind) + " model, expected " +
              model_kind_name(kind));
  const S spec = S::from_doc(f.spec);
  if (expected) {
    const KeyValueDoc want = expected->to_doc();
    for (const auto& [key, value] : want.entries()) {
      require(f.spec.has(key) && f.spec.raw(key) == value, ErrorKind::Compatibility,
              "model " + key + " is " + (f.spec.has(key) ? f.spec.raw(key) : std::string("absent")) +
                  ", expected " + value);
    }
  }
  M model(spec);
  require(model.params().size() == f.params.size(), ErrorKind::Format,
          "model file has " + std::to_string(f.params.size()) + " parameters, architecture needs " +
              std::to_string(model.params().size()));
  std::copy(f.params.begin(), f.params.end(), model.params().values().begin());
  if (norm) *norm = f.norm;
  return model;
}

}  // namespace

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Ced: return "ced";
    case ModelKind::LatentLstm: return "latent-lstm";
    case ModelKind::ConvLstm: return "convlstm";
  }
  return "unknown";
}

void write_model_file(const std::filesystem::path& path, const ModelFile& file) {
  for (float v : file.params) {
    require(std::isfinite(v), ErrorKind::Validation, "refusing to write non-finite parameters");
  }
  KeyValueDoc header;
  header.set("kind", model_kind_name(file.kind));
  for (const auto& [key, value] : file.spec.entries()) header.set_raw("spec." + key, value);
  if (file.norm) {
    header.set("norm.min", file.norm->min);
    header.set("norm.max", file.norm->max);
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write model file " + path.string());
  out.write(reinterpret_cast<const char*>(kModelMagic), 4);
  const unsigned char meta[4] = {1, kDtypeFloat32, 0, 0};
  out.write(reinterpret_cast<const char*>(meta), 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32(out, static_cast<std::uint32_t>(file.params.size()));
  for (float v : file.params) put_f32(out, v);
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

ModelFile read_model_file(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const std::string name = path.string();
  require(bytes.size() >= 12 && std::equal(kModelMagic, kModelMagic + 4, bytes.begin()),
          ErrorKind::Format, name + " is not a model file (bad magic)");
  require(bytes[4] == 1 && bytes[5] == kDtypeFloat32, ErrorKind::Format,
          name + " has unsupported model version or dtype");
  const std::size_t hlen = get_u32(bytes.data() + 8);
  require(bytes.size() >= 12 + hlen + 4, ErrorKind::Format, name + " has a truncated header");
  const std::string text(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(hlen));
  KeyValueDoc header;
  try {
    header = KeyValueDoc::parse(text, name);
  } catch (const Error& e) {
    fail(ErrorKind::Format, name + " has a corrupted header: " + e.what());
  }
  ModelFile f;
  require(header.has("kind"), ErrorKind::Format, name + " header lacks 'kind'");
  const std::string kind = header.get_string("kind");
  if (kind == "ced") {
    f.kind = ModelKind::Ced;
  } else if (kind == "latent-lstm") {
    f.kind = ModelKind::LatentLstm;
  } else if (kind == "convlstm") {
    f.kind = ModelKind::ConvLstm;
  } else {
    fail(ErrorKind::Format, name + " has unknown model kind '" + kind + "'");
  }
  for (const auto& [key, value] : header.entries()) {
    if (key.rfind("spec.", 0) == 0) f.spec.set_raw(key.substr(5), value);
  }
  if (header.has("norm.min")) {
    NormStats s{header.get_double_list("norm.min"), header.get_double_list("norm.max")};
    s.validate();
    f.norm = s;
  }
  const std::size_t off = 12 + hlen;
  const std::size_t count = get_u32(bytes.data() + off);
  const std::size_t expect = off + 4 + count * 4;
  require(bytes.size() == expect, ErrorKind::Length,
          name + ": expected " + std::to_string(expect) + " bytes, found " + std::to_string(bytes.size()));
  f.params.resize(count);
  for (std::size_t i = 0; i < count; ++i) f.params[i] = get_f32(bytes.data() + off + 4 + 4 * i);
  return f;
}

void save_model(const std::filesystem::path& path, const Ced<float>& m, const std::optional<NormStats>& norm) {
  write_model_file(path, to_file(ModelKind::Ced, m, norm));
}
void save_model(const std::filesystem::path& path, const LatentLstm<float>& m,
                const std::optional<NormStats>& norm) {
  write_model_file(path, to_file(ModelKind::LatentLstm, m, norm));
}
void save_model(const std::filesystem::path& path, const ConvLstm<float>& m,
                const std::optional<NormStats>& norm) {
  write_model_file(path, to_file(ModelKind::ConvLstm, m, norm));
}

Ced<float> load_ced(const std::filesystem::path& path, const std::optional<CedSpec>& expected,
                    std::optional<NormStats>* norm) {
  return from_file<Ced<float>>(path, ModelKind::Ced, expected, norm);
}
LatentLstm<float> load_latent_lstm(const std::filesystem::path& path,
                                   const std::optional<LatentSeqSpec>& expected,
                                   std::optional<NormStats>* norm) {
  return from_file<LatentLstm<float>>(path, ModelKind::LatentLstm, expected, norm);
}
ConvLstm<float> load_convlstm(const std::filesystem::path& path, const std::optional<ConvLstmSpec>& expected,
                              std::optional<NormStats>* norm) {
  return from_file<ConvLstm<float>>(path, ModelKind::ConvLstm, expected, norm);
}

#define DSOVT_INSTANTIATE(T)                                                          \
  template void apply_activation<T>(const ActivationSpec&, Mat<T>&);                 \
  template void activation_backward<T>(const ActivationSpec&, const Mat<T>&, Mat<T>&); \
  template class Ced<T>;                                                              \
  template class LatentLstm<T>;                                                       \
  template class ConvLstm<T>;                                                         \
  template Mat<T> stack_fields<T>(std::span<const Field* const>);                     \
  template Mat<T> stack_fields<T>(std::span<const Field>);                            \
  template Field unstack_field<T>(const Mat<T>&, int, int, int);

DSOVT_INSTANTIATE(float)
DSOVT_INSTANTIATE(double)

}  // namespace dsovt
