#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsovt/field.hpp"
#include "dsovt/manifest.hpp"
#include "dsovt/nn.hpp"
#include "dsovt/normalize.hpp"

namespace dsovt {

// ---------------------------------------------------------------------------
// Output activations

enum class OutAct {
  Bounded,  // tanh, range [-1, 1]
  Nonneg,   // ReLU, range [0, inf)
  Clamp01,  // identity clamped to [0, 1]
};

struct ActivationSpec {
  std::vector<OutAct> channels;

  /// Comma-separated names: bounded, nonneg, clamp01.
  static ActivationSpec parse(const std::string& text);
  std::string str() const;
  int size() const { return static_cast<int>(channels.size()); }
  friend bool operator==(const ActivationSpec&, const ActivationSpec&) = default;
};

/// In place: pre-activation -> output, one row per channel.
template <typename T>
void apply_activation(const ActivationSpec& spec, nn::Mat<T>& x);

/// d <- d * act'(pre), evaluated from the stored output `y`.
template <typename T>
void activation_backward(const ActivationSpec& spec, const nn::Mat<T>& y, nn::Mat<T>& d);

// ---------------------------------------------------------------------------
// Specs

struct CedSpec {
  int nx = 64;
  int ny = 64;
  int nc = 3;
  int latent = 128;
  std::array<int, 3> filters{32, 64, 128};
  ActivationSpec activation;

  void validate() const;
  std::size_t param_count() const;
  KeyValueDoc to_doc() const;
  static CedSpec from_doc(const KeyValueDoc& doc);
  friend bool operator==(const CedSpec&, const CedSpec&) = default;
};

struct LatentSeqSpec {
  int latent = 128;
  int s_in = 5;
  int s_out = 5;
  int layers = 2;
  int hidden = 256;

  void validate() const;
  KeyValueDoc to_doc() const;
  static LatentSeqSpec from_doc(const KeyValueDoc& doc);
  friend bool operator==(const LatentSeqSpec&, const LatentSeqSpec&) = default;
};

struct ConvLstmSpec {
  int nx = 64;
  int ny = 64;
  int nc = 3;
  int s_in = 5;
  int s_out = 5;
  int layers = 2;
  int filters = 64;
  int kernel = 3;
  ActivationSpec activation;

  void validate() const;
  KeyValueDoc to_doc() const;
  static ConvLstmSpec from_doc(const KeyValueDoc& doc);
  friend bool operator==(const ConvLstmSpec&, const ConvLstmSpec&) = default;
};

CedSpec ced_spec_from(const ModelSpecParams& model, int nx, int ny, int nc);
LatentSeqSpec lstm_spec_from(const ModelSpecParams& model, const TrainingSpec& training);
ConvLstmSpec convlstm_spec_from(const ModelSpecParams& model, const TrainingSpec& training, int nx,
                                int ny, int nc);

// ---------------------------------------------------------------------------
// Convolutional encoder-decoder

/// Encoder: three (3x3 conv, ReLU, 2x2 max-pool) stages, flatten, dense to Z
/// with ReLU. Decoder: dense back with ReLU, reshape, then (conv, upsample)
/// three times and a final conv to nc channels with the output activation.
/// Inputs and outputs are nc x (n * nx * ny) matrices of stacked fields.
template <typename T>
class Ced {
 public:
  struct EncoderCache {
    int n = 0;
    nn::Mat<T> x, a1, p1, a2, p2, a3, p3, z;
    std::vector<int> i1, i2, i3;
  };
  struct DecoderCache {
    int n = 0;
    nn::Mat<T> z, d0, c1, u1, c2, u2, c3, u3, y;
  };

  /// All parameters zero.
  explicit Ced(CedSpec spec);
  /// Glorot-uniform weights, zero biases.
  Ced(CedSpec spec, std::uint64_t seed);

  const CedSpec& spec() const { return spec_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// Returns Z x n latents.
  nn::Mat<T> encode(const nn::Mat<T>& x, int n, EncoderCache* cache = nullptr) const;
  /// Returns nc x (n * nx * ny) activated outputs.
  nn::Mat<T> decode(const nn::Mat<T>& z, DecoderCache* cache = nullptr) const;

  /// Back-propagates dL/dy through the decoder, accumulating decoder
  /// gradients when `param_grads` is set; returns dL/dz.
  nn::Mat<T> backward_decode(const DecoderCache& cache, nn::Mat<T> dy, bool param_grads);
  void backward_encode(const EncoderCache& cache, nn::Mat<T> dz);

  /// Zeroes the final convolution so every output is act(0).
  void zero_output_layer();

  std::vector<float> encode_field(const Field& x) const;
  Field decode_latent(std::span<const float> h) const;

 private:
  void init_layout();
  nn::Geometry geometry(int n, int level) const {
    return {n, spec_.nx >> level, spec_.ny >> level};
  }
  int flat_size() const { return spec_.filters[2] * (spec_.nx / 8) * (spec_.ny / 8); }

  CedSpec spec_;
  nn::ParamStore<T> params_;
  // Parameter block indices: weights at even positions, biases after them.
  enum Block { E1, E1b, E2, E2b, E3, E3b, ED, EDb, DD, DDb, D1, D1b, D2, D2b, D3, D3b, DO, DOb };
};

// ---------------------------------------------------------------------------
// Latent sequence-to-sequence LSTM

/// Encoder stack consumes S_in latents; its final (h, c) per layer seeds the
/// decoder stack, which is fed the last observed latent first and then its
/// own previous prediction. A linear head maps the top hidden state to Z.
template <typename T>
class LatentLstm {
 public:
  struct Cache {
    std::vector<nn::Mat<T>> enc_in;                         // [t]
    std::vector<std::vector<nn::LstmStepCache<T>>> enc;     // [t][layer]
    std::vector<nn::Mat<T>> dec_in;                         // [s]
    std::vector<std::vector<nn::LstmStepCache<T>>> dec;     // [s][layer]
  };

  explicit LatentLstm(LatentSeqSpec spec);
  LatentLstm(LatentSeqSpec spec, std::uint64_t seed);

  const LatentSeqSpec& spec() const { return spec_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// inputs: S_in matrices of Z x batch. Returns S_out matrices.
  std::vector<nn::Mat<T>> forward(const std::vector<nn::Mat<T>>& inputs, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients for dL/d(outputs).
  void backward(const Cache& cache, const std::vector<nn::Mat<T>>& d_outputs);

 private:
  struct LayerIds {
    int wx, wh, b;
  };
  void init_layout();
  void cell(const LayerIds& ids, const nn::Mat<T>& x, const nn::Mat<T>& h, const nn::Mat<T>& c,
            nn::LstmStepCache<T>& out) const;
  /// Returns dx; updates carry dh/dc to the previous step.
  nn::Mat<T> cell_backward(const LayerIds& ids, const nn::Mat<T>& x, const nn::Mat<T>& h_prev,
                           const nn::LstmStepCache<T>& s, const nn::Mat<T>& dh, nn::Mat<T>& dc,
                           nn::Mat<T>& dh_prev);

  LatentSeqSpec spec_;
  nn::ParamStore<T> params_;
  std::vector<LayerIds> enc_ids_, dec_ids_;
  int head_w_ = 0, head_b_ = 0;
};

// ---------------------------------------------------------------------------
// ConvLSTM

/// Stacked convolutional LSTM over the S_in input frames; each of the S_out
/// output frames is a separate 1x1 convolution head on the final top-layer
/// hidden state followed by the output activation.
template <typename T>
class ConvLstm {
 public:
  struct Cache {
    int n = 0;
    std::vector<std::vector<nn::Mat<T>>> z;                 // [t][layer] concat(input, h_prev)
    std::vector<std::vector<nn::LstmStepCache<T>>> steps;   // [t][layer]
    std::vector<nn::Mat<T>> y;                              // [s] activated outputs
  };

  explicit ConvLstm(ConvLstmSpec spec);
  ConvLstm(ConvLstmSpec spec, std::uint64_t seed);

  const ConvLstmSpec& spec() const { return spec_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// inputs: S_in matrices of nc x (n * nx * ny). Returns S_out of the same shape.
  std::vector<nn::Mat<T>> forward(const std::vector<nn::Mat<T>>& inputs, int n,
                                  Cache* cache = nullptr) const;
  void backward(const Cache& cache, const std::vector<nn::Mat<T>>& d_outputs);

 private:
  void init_layout();
  int in_channels(int layer) const { return layer == 0 ? spec_.nc : spec_.filters; }

  ConvLstmSpec spec_;
  nn::ParamStore<T> params_;
  std::vector<int> w_ids_, b_ids_, head_w_, head_b_;
};

// ---------------------------------------------------------------------------
// Model files
//
// Layout: "DSVM", version u8 = 1, dtype u8 = 1 (f32 LE), two zero bytes,
// u32 header length, header text (key = value lines), u32 parameter count,
// then the float32 parameters in block order (weights then bias per layer).

enum class ModelKind { Ced, LatentLstm, ConvLstm };

std::string model_kind_name(ModelKind kind);

struct ModelFile {
  ModelKind kind = ModelKind::Ced;
  KeyValueDoc spec;
  std::optional<NormStats> norm;
  std::vector<float> params;
};

void write_model_file(const std::filesystem::path& path, const ModelFile& file);
ModelFile read_model_file(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const Ced<float>& model,
                const std::optional<NormStats>& norm = std::nullopt);
void save_model(const std::filesystem::path& path, const LatentLstm<float>& model,
                const std::optional<NormStats>& norm = std::nullopt);
void save_model(const std::filesystem::path& path, const ConvLstm<float>& model,
                const std::optional<NormStats>& norm = std::nullopt);

/// With `expected`, any architecture difference is a compatibility error.
Ced<float> load_ced(const std::filesystem::path& path, const std::optional<CedSpec>& expected = std::nullopt,
                    std::optional<NormStats>* norm = nullptr);
LatentLstm<float> load_latent_lstm(const std::filesystem::path& path,
                                   const std::optional<LatentSeqSpec>& expected = std::nullopt,
                                   std::optional<NormStats>* norm = nullptr);
ConvLstm<float> load_convlstm(const std::filesystem::path& path,
                              const std::optional<ConvLstmSpec>& expected = std::nullopt,
                              std::optional<NormStats>* norm = nullptr);

// ---------------------------------------------------------------------------
// Batching helpers

/// Stacks fields (same shape) into an nc x (n * nx * ny) matrix.
template <typename T>
nn::Mat<T> stack_fields(std::span<const Field* const> fields);
template <typename T>
nn::Mat<T> stack_fields(std::span<const Field> fields);

/// Sample `i` of a stacked batch as a Field.
template <typename T>
Field unstack_field(const nn::Mat<T>& m, int i, int nx, int ny);

}  // namespace dsovt
